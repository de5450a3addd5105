//! Scoring memories and answers against synthetic ground truth.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::api::{apply_patch, execute, ApiCall, ApiKind};
use crate::backend::{BackendClient, SceneTruth};
use crate::canonical::Canon;
use crate::config::EngineConfig;
use crate::episode::Episode;
use crate::error::Result;
use crate::ids::TrackId;
use crate::memory::Ssm;
use crate::pipeline::build_ssm;
use crate::reasoning::{run_episode_batch, ApiMode, BatchStats, EpisodeQuery};
use crate::scene_graph::Track;
use crate::synth::SyntheticQuestion;

/// Slack added to ground-truth boxes when testing point membership.
pub const BOX_INFLATION: f64 = 0.02;
/// Fraction of a track's points that must fall in a box to match it.
pub const MIN_INSIDE_FRACTION: f64 = 0.5;

fn inside(o: &crate::backend::ObjectTruth, p: [f64; 3]) -> bool {
    (0..3).all(|i| p[i] >= o.min[i] - BOX_INFLATION && p[i] <= o.max[i] + BOX_INFLATION)
}

fn volume(o: &crate::backend::ObjectTruth) -> f64 {
    (0..3).map(|i| o.max[i] - o.min[i]).product()
}

/// Ground-truth object a track stands for: the box holding the largest
/// share of its points (at least half), smaller box on ties.
pub fn match_track(track: &Track, truth: &SceneTruth) -> Option<u32> {
    let points: Vec<[f64; 3]> = if track.cloud.is_empty() {
        alloc::vec![track.summary.centroid.to_array()]
    } else {
        track.cloud.points.iter().map(|p| p.to_array()).collect()
    };
    let n = points.len() as f64;
    truth
        .objects
        .iter()
        .map(|o| (points.iter().filter(|p| inside(o, **p)).count() as f64 / n, o))
        .filter(|(f, _)| *f >= MIN_INSIDE_FRACTION)
        .max_by(|(fa, a), (fb, b)| {
            fa.total_cmp(fb)
                .then(volume(b).total_cmp(&volume(a)))
                .then(b.id.cmp(&a.id))
        })
        .map(|(_, o)| o.id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphScores {
    pub tracks: usize,
    pub objects: usize,
    pub track_precision: f64,
    pub track_recall: f64,
    pub edges: usize,
    pub true_edges: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub mapping: BTreeMap<TrackId, Option<u32>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall of tracks and edges. A second track on an already
/// matched object counts as a false positive; so does a repeated edge.
pub fn graph_scores(ssm: &Ssm, truth: &SceneTruth) -> GraphScores {
    let mapping: BTreeMap<TrackId, Option<u32>> =
        ssm.graph().tracks().map(|t| (t.id, match_track(t, truth))).collect();
    let mut claimed = BTreeSet::new();
    let mut track_tp = 0;
    for obj in mapping.values().flatten() {
        if claimed.insert(*obj) {
            track_tp += 1;
        }
    }
    let true_edges: BTreeSet<(u32, u32, &str)> = truth
        .relations
        .iter()
        .map(|r| (r.subject, r.object, r.relation.as_str()))
        .collect();
    let mut found = BTreeSet::new();
    let mut edge_tp = 0;
    let edges = ssm.graph().edges();
    for e in edges {
        let s = mapping.get(&e.subject_id).copied().flatten();
        let o = mapping.get(&e.object_id).copied().flatten();
        if let (Some(s), Some(o)) = (s, o) {
            let key = (s, o, e.relation.label());
            if true_edges.contains(&key) && found.insert(key) {
                edge_tp += 1;
            }
        }
    }
    GraphScores {
        tracks: mapping.len(),
        objects: truth.objects.len(),
        track_precision: ratio(track_tp, mapping.len()),
        track_recall: ratio(claimed.len(), truth.objects.len()),
        edges: edges.len(),
        true_edges: true_edges.len(),
        edge_precision: ratio(edge_tp, edges.len()),
        edge_recall: ratio(found.len(), true_edges.len()),
        mapping,
    }
}

/// `analyze_frame` calls, sweeping frames in episode order, until track
/// recall reaches 1.0; `None` when the sweep ends short of it.
pub fn calls_to_full_recall(
    ssm: &mut Ssm,
    episode: &Episode,
    truth: &SceneTruth,
    client: &mut BackendClient,
    cfg: &EngineConfig,
) -> Result<Option<usize>> {
    if graph_scores(ssm, truth).track_recall >= 1.0 {
        return Ok(Some(0));
    }
    for (i, frame) in episode.frames.iter().enumerate() {
        let call = ApiCall::new(ApiKind::AnalyzeFrame, frame.id, "list every object");
        let patch = execute(&call, ssm, episode, client, cfg)?;
        if let Err(e) = apply_patch(ssm, &patch, cfg) {
            log::warn!("sweep patch on frame {} rejected: {e}", frame.id);
        }
        if graph_scores(ssm, truth).track_recall >= 1.0 {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

/// Lower case, punctuation dropped, leading article removed, spaces
/// collapsed.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let start = usize::from(matches!(words.first(), Some(&("a" | "an" | "the"))) && words.len() > 1);
    words[start..].join(" ")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
}

impl CategoryScore {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scene_id: String,
    pub graph: GraphScores,
    pub calls: BatchStats,
    pub categories: BTreeMap<String, CategoryScore>,
    pub overall: CategoryScore,
    pub non_compliant: usize,
}

impl MetricsReport {
    pub fn to_canon(&self) -> Canon {
        let g = &self.graph;
        let score = |s: &CategoryScore| {
            Canon::object()
                .field("correct", Canon::Int(s.correct as i64))
                .field("total", Canon::Int(s.total as i64))
                .field("accuracy", Canon::Real(s.accuracy()))
                .build()
        };
        Canon::object()
            .field("scene_id", Canon::str(&self.scene_id))
            .field(
                "graph",
                Canon::object()
                    .field("tracks", Canon::Int(g.tracks as i64))
                    .field("objects", Canon::Int(g.objects as i64))
                    .field("track_precision", Canon::Real(g.track_precision))
                    .field("track_recall", Canon::Real(g.track_recall))
                    .field("edges", Canon::Int(g.edges as i64))
                    .field("true_edges", Canon::Int(g.true_edges as i64))
                    .field("edge_precision", Canon::Real(g.edge_precision))
                    .field("edge_recall", Canon::Real(g.edge_recall))
                    .build(),
            )
            .field(
                "calls",
                Canon::object()
                    .field("answered", Canon::Int(self.calls.answered as i64))
                    .field("failures", Canon::Int(self.calls.failures as i64))
                    .field(
                        "histogram",
                        Canon::Array(
                            self.calls
                                .histogram
                                .iter()
                                .map(|(c, n)| Canon::Array(alloc::vec![Canon::Int(*c as i64), Canon::Int(*n as i64)]))
                                .collect(),
                        ),
                    )
                    .field("mean", Canon::opt(self.calls.mean_calls, Canon::Real))
                    .field("p95", Canon::opt(self.calls.p95_calls, |p| Canon::Int(p as i64)))
                    .build(),
            )
            .field(
                "categories",
                Canon::Object(self.categories.iter().map(|(k, v)| (k.clone(), score(v))).collect()),
            )
            .field("overall", score(&self.overall))
            .field("non_compliant", Canon::Int(self.non_compliant as i64))
            .build()
    }
}

/// Builds the memory, answers every question on a fresh copy of it with
/// budget `m`, and scores graph and answers.
pub fn evaluate(
    episode: &Episode,
    truth: &SceneTruth,
    questions: &[SyntheticQuestion],
    client: &mut BackendClient,
    cfg: &EngineConfig,
    mode: ApiMode,
    m: usize,
) -> Result<MetricsReport> {
    let ssm = build_ssm(episode, client, cfg)?;
    let graph = graph_scores(&ssm, truth);
    let queries: Vec<EpisodeQuery> = questions
        .iter()
        .map(|q| EpisodeQuery::new(q.question.clone(), m, truth.scene_id.clone()))
        .collect();
    let mut fresh = || Ok(ssm.clone());
    let batch = run_episode_batch(&queries, &mut fresh, episode, client, cfg, mode);

    let mut categories: BTreeMap<String, CategoryScore> = BTreeMap::new();
    let mut overall = CategoryScore::default();
    let mut non_compliant = 0;
    for (q, a) in questions.iter().zip(&batch.answers) {
        let correct = a
            .as_ref()
            .is_ok_and(|a| normalize_answer(&a.text) == normalize_answer(&q.answer));
        if a.as_ref().is_ok_and(|a| !a.is_compliant()) {
            non_compliant += 1;
        }
        let c = categories.entry(q.category.clone()).or_default();
        c.total += 1;
        overall.total += 1;
        if correct {
            c.correct += 1;
            overall.correct += 1;
        }
    }
    Ok(MetricsReport {
        scene_id: truth.scene_id.clone(),
        graph,
        calls: batch.stats,
        categories,
        overall,
        non_compliant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DetectorNoise, ScriptedBackend};
    use crate::synth::{generate_scene, SceneSpec};

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  The Table! "), "table");
        assert_eq!(normalize_answer("dark  blue"), "dark blue");
        assert_eq!(normalize_answer("the"), "the");
    }

    #[test]
    fn oracle_scene_scores_perfectly() {
        let scene = generate_scene(&SceneSpec::new(2, 3, 11)).unwrap();
        let mut client = BackendClient::new(ScriptedBackend::from_truth(scene.truth.clone(), DetectorNoise::default()));
        let cfg = EngineConfig::default();
        let ssm = build_ssm(&scene.episode, &mut client, &cfg).unwrap();
        let g = graph_scores(&ssm, &scene.truth);
        assert_eq!((g.track_precision, g.track_recall), (1.0, 1.0), "{g:?}");
        assert_eq!((g.edge_precision, g.edge_recall), (1.0, 1.0), "{g:?}");
    }

    #[test]
    fn zero_budget_is_a_point_mass() {
        let scene = generate_scene(&SceneSpec::new(1, 3, 2)).unwrap();
        let mut client = BackendClient::new(ScriptedBackend::from_truth(scene.truth.clone(), DetectorNoise::default()));
        let r = evaluate(
            &scene.episode,
            &scene.truth,
            &scene.questions,
            &mut client,
            &EngineConfig::default(),
            ApiMode::Frame,
            0,
        )
        .unwrap();
        assert_eq!(r.calls.histogram.len(), 1);
        assert_eq!(r.calls.histogram.get(&0), Some(&scene.questions.len()));
    }
}
