//! The bounded agentic loop: show the memory to the reasoner, run the API
//! calls it asks for, and hold its final answer to the dual-evidence rule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::api::{apply_patch, execute, ApiCall, ApiKind, Patch, PatchReport};
use crate::backend::{BackendClient, BackendRequest, BackendResponse, FinalAnswer, NoteRef, ReasonDecision, ReasonPayload};
use crate::canonical::Canon;
use crate::config::EngineConfig;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::ids::FrameId;
use crate::memory::Ssm;

pub const ABSTAIN_ANSWER: &str = "unknown";

/// Which edits API calls may make.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum ApiMode {
    /// All three APIs.
    #[default]
    Frame,
    /// Object-level APIs only: `find_objects` and `analyze_objects`.
    Node,
    /// Calls only retrieve their frame into frame memory.
    Image,
}

impl ApiMode {
    pub fn name(&self) -> &'static str {
        match self {
            ApiMode::Frame => "frame",
            ApiMode::Node => "node",
            ApiMode::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Option<ApiMode> {
        [ApiMode::Frame, ApiMode::Node, ApiMode::Image]
            .into_iter()
            .find(|m| m.name() == s)
    }

    pub fn allows(&self, kind: ApiKind) -> bool {
        !matches!((self, kind), (ApiMode::Node, ApiKind::AnalyzeFrame))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeQuery {
    pub question: String,
    /// Search depth: the most API calls the loop will execute.
    pub max_calls: usize,
    pub scene_id: String,
}

impl EpisodeQuery {
    pub fn new(question: impl Into<String>, max_calls: usize, scene_id: impl Into<String>) -> Self {
        EpisodeQuery {
            question: question.into(),
            max_calls,
            scene_id: scene_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerStatus {
    /// Evidence resolved against the final memory.
    Compliant,
    /// Evidence still broken after one reprompt; kept, but flagged.
    NonCompliant(Vec<String>),
    /// No usable decision after one reprompt.
    Abstained,
}

/// One executed API call.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub call: ApiCall,
    pub patch: Patch,
    pub report: Result<PatchReport, String>,
}

/// One loop iteration, for the JSON-lines transcript.
#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    Executed { call: ApiCall, report: Result<PatchReport, String> },
    Invalid { reason: String },
    EvidenceViolation { violations: Vec<String> },
    Final { answer: FinalAnswer, status: AnswerStatus },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopStep {
    pub turn: usize,
    pub calls_used: usize,
    pub force_answer: bool,
    pub event: StepEvent,
}

impl LoopStep {
    pub fn to_canon(&self, question: &str) -> Canon {
        let (kind, body) = match &self.event {
            StepEvent::Executed { call, report } => (
                "executed",
                Canon::object()
                    .field("call", call.to_canon())
                    .field(
                        "report",
                        match report {
                            Ok(r) => r.to_canon(),
                            Err(e) => Canon::object().field("error", Canon::str(e)).build(),
                        },
                    )
                    .build(),
            ),
            StepEvent::Invalid { reason } => ("invalid", Canon::object().field("reason", Canon::str(reason)).build()),
            StepEvent::EvidenceViolation { violations } => (
                "evidence_violation",
                Canon::object()
                    .field("violations", Canon::Array(violations.iter().map(Canon::str).collect()))
                    .build(),
            ),
            StepEvent::Final { answer, status } => (
                "final",
                Canon::object()
                    .field("answer", Canon::str(&answer.answer))
                    .field(
                        "evidence_frames",
                        Canon::Array(answer.evidence_frames.iter().map(|f| Canon::Int(f.0 as i64)).collect()),
                    )
                    .field(
                        "evidence_notes",
                        Canon::Array(
                            answer
                                .evidence_notes
                                .iter()
                                .map(|n| {
                                    Canon::object()
                                        .field("node_id", Canon::Int(n.node_id.0 as i64))
                                        .field("note_index", Canon::Int(n.note_index as i64))
                                        .build()
                                })
                                .collect(),
                        ),
                    )
                    .field(
                        "status",
                        Canon::str(match status {
                            AnswerStatus::Compliant => "compliant",
                            AnswerStatus::NonCompliant(_) => "non_compliant",
                            AnswerStatus::Abstained => "abstained",
                        }),
                    )
                    .build(),
            ),
        };
        Canon::object()
            .field("question", Canon::str(question))
            .field("turn", Canon::Int(self.turn as i64))
            .field("calls_used", Canon::Int(self.calls_used as i64))
            .field("force_answer", Canon::Bool(self.force_answer))
            .field("event", Canon::str(kind))
            .field("detail", body)
            .build()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub text: String,
    pub evidence_frames: Vec<FrameId>,
    pub evidence_notes: Vec<NoteRef>,
    pub calls_used: usize,
    /// Executed calls only; its length equals `calls_used`.
    pub transcript: Vec<TranscriptEntry>,
    /// Every loop iteration, including reprompts.
    pub steps: Vec<LoopStep>,
    pub status: AnswerStatus,
}

impl Answer {
    pub fn is_compliant(&self) -> bool {
        self.status == AnswerStatus::Compliant
    }

    /// One canonical JSON object per loop step.
    pub fn transcript_jsonl(&self, question: &str) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&s.to_canon(question).to_text()?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Every citation problem in `answer`; empty means valid.
pub fn validate_evidence(answer: &FinalAnswer, ssm: &Ssm) -> Vec<String> {
    let mut v = Vec::new();
    if answer.evidence_frames.is_empty() {
        v.push("no frame evidence cited".to_string());
    }
    if answer.evidence_notes.is_empty() {
        v.push("no scratch-pad note cited".to_string());
    }
    for f in &answer.evidence_frames {
        if !ssm.frame_memory().contains(*f) {
            v.push(format!("frame {f} is not in frame memory"));
        }
    }
    for n in &answer.evidence_notes {
        if ssm.scratchpad().note(n.node_id, n.note_index).is_none() {
            v.push(format!("note {} of node {} does not exist", n.note_index, n.node_id));
        }
    }
    v
}

/// Runs one question to completion against `ssm`, mutating it only through
/// patches of executed calls.
pub fn answer(
    query: &EpisodeQuery,
    ssm: &mut Ssm,
    episode: &Episode,
    client: &mut BackendClient,
    cfg: &EngineConfig,
    mode: ApiMode,
) -> Result<Answer> {
    let m = query.max_calls;
    let mut calls_used = 0usize;
    let mut turn = 0usize;
    let mut history: Vec<ApiCall> = Vec::new();
    let mut transcript = Vec::new();
    let mut steps = Vec::new();
    let mut violations: Vec<String> = Vec::new();
    let mut invalid_reprompted = false;
    let mut evidence_reprompted = false;

    loop {
        let force_answer = calls_used >= m;
        let (text, frames) = ssm.serialize()?;
        let payload = ReasonPayload {
            question: query.question.clone(),
            ssm: text,
            frames,
            history: history.clone(),
            calls_used,
            calls_remaining: m.saturating_sub(calls_used),
            force_answer,
            turn,
            api_mode: mode.name().to_string(),
            violations: core::mem::take(&mut violations),
        };
        let response = client.call(&BackendRequest::reason(&payload));
        let (step_turn, step_calls) = (turn, calls_used);
        let step = move |event| LoopStep {
            turn: step_turn,
            calls_used: step_calls,
            force_answer,
            event,
        };
        turn += 1;

        let invalid = match response {
            Ok(BackendResponse::Reason(ReasonDecision::Final(ans))) => {
                let v = validate_evidence(&ans, ssm);
                if v.is_empty() || evidence_reprompted {
                    let status = if v.is_empty() {
                        AnswerStatus::Compliant
                    } else {
                        AnswerStatus::NonCompliant(v)
                    };
                    steps.push(step(StepEvent::Final {
                        answer: ans.clone(),
                        status: status.clone(),
                    }));
                    return Ok(Answer {
                        text: ans.answer,
                        evidence_frames: ans.evidence_frames,
                        evidence_notes: ans.evidence_notes,
                        calls_used,
                        transcript,
                        steps,
                        status,
                    });
                }
                evidence_reprompted = true;
                steps.push(step(StepEvent::EvidenceViolation { violations: v.clone() }));
                violations = v;
                continue;
            }
            Ok(BackendResponse::Reason(ReasonDecision::Action(call))) => {
                if force_answer {
                    Some("action requested after the call budget was spent".to_string())
                } else if !mode.allows(call.kind) {
                    Some(format!("{} is not available in {} mode", call.kind.name(), mode.name()))
                } else if let Err(e) = call.validate(ssm.episode()) {
                    Some(e.to_string())
                } else {
                    let patch = if mode == ApiMode::Image {
                        Patch::empty(call.clone())
                    } else {
                        execute(&call, ssm, episode, client, cfg)?
                    };
                    let report = apply_patch(ssm, &patch, cfg).map_err(|e| e.to_string());
                    if let Err(e) = &report {
                        log::warn!("patch for {} on frame {} not applied: {e}", call.kind.name(), call.frame_id);
                    }
                    calls_used += 1;
                    history.push(call.clone());
                    steps.push(step(StepEvent::Executed {
                        call: call.clone(),
                        report: report.clone(),
                    }));
                    transcript.push(TranscriptEntry { call, patch, report });
                    invalid_reprompted = false;
                    None
                }
            }
            Ok(_) => Some("unexpected response kind".to_string()),
            Err(e) => Some(e.to_string()),
        };

        if let Some(reason) = invalid {
            steps.push(step(StepEvent::Invalid { reason }));
            if invalid_reprompted {
                let ans = FinalAnswer {
                    answer: ABSTAIN_ANSWER.to_string(),
                    evidence_frames: Vec::new(),
                    evidence_notes: Vec::new(),
                };
                steps.push(LoopStep {
                    turn,
                    calls_used,
                    force_answer: calls_used >= m,
                    event: StepEvent::Final {
                        answer: ans,
                        status: AnswerStatus::Abstained,
                    },
                });
                return Ok(Answer {
                    text: ABSTAIN_ANSWER.to_string(),
                    evidence_frames: Vec::new(),
                    evidence_notes: Vec::new(),
                    calls_used,
                    transcript,
                    steps,
                    status: AnswerStatus::Abstained,
                });
            }
            invalid_reprompted = true;
        }
    }
}

/// Calls-per-question distribution of a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchStats {
    pub answered: usize,
    pub failures: usize,
    /// calls used → number of questions.
    pub histogram: BTreeMap<usize, usize>,
    pub mean_calls: Option<f64>,
    /// Nearest-rank 95th percentile.
    pub p95_calls: Option<usize>,
}

impl BatchStats {
    pub fn from_calls(calls: &[usize], failures: usize) -> Self {
        let mut histogram = BTreeMap::new();
        for c in calls {
            *histogram.entry(*c).or_insert(0) += 1;
        }
        let mut sorted = calls.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        BatchStats {
            answered: n,
            failures,
            histogram,
            mean_calls: (n > 0).then(|| sorted.iter().sum::<usize>() as f64 / n as f64),
            p95_calls: (n > 0).then(|| sorted[(95 * n).div_ceil(100) - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub answers: Vec<Result<Answer, String>>,
    pub stats: BatchStats,
}

/// Answers every query on its own fresh memory from `fresh`.
pub fn run_episode_batch(
    queries: &[EpisodeQuery],
    fresh: &mut dyn FnMut() -> Result<Ssm>,
    episode: &Episode,
    client: &mut BackendClient,
    cfg: &EngineConfig,
    mode: ApiMode,
) -> BatchResult {
    let mut answers = Vec::with_capacity(queries.len());
    for q in queries {
        let res = fresh().and_then(|mut ssm| {
            if ssm.episode().scene_id != q.scene_id {
                return Err(Error::contract(format!(
                    "query is about scene {:?}, memory holds {:?}",
                    q.scene_id,
                    ssm.episode().scene_id
                )));
            }
            answer(q, &mut ssm, episode, client, cfg, mode)
        });
        if let Err(e) = &res {
            log::warn!("question {:?} failed: {e}", q.question);
        }
        answers.push(res.map_err(|e| e.to_string()));
    }
    let calls: Vec<usize> = answers.iter().filter_map(|a| a.as_ref().ok()).map(|a| a.calls_used).collect();
    let failures = answers.iter().filter(|a| a.is_err()).count();
    BatchResult {
        stats: BatchStats::from_calls(&calls, failures),
        answers,
    }
}
