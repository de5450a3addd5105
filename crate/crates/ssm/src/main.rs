use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ssm::persist::{self, Source};
use ssm::{config_file, dataset, http::HttpTransport, serve, synthetic};
use ssm_core::backend::{BackendClient, DetectorNoise, ScriptedBackend, ScriptedFile};
use ssm_core::canonical::Canon;
use ssm_core::metrics::evaluate;
use ssm_core::pipeline::build_ssm_with_report;
use ssm_core::reasoning::{answer, AnswerStatus, ApiMode, EpisodeQuery};
use ssm_core::synth::{generate_scene, SceneSpec};
use ssm_core::EngineConfig;

#[derive(Parser)]
#[command(name = "ssm", version, about = "Build, query and inspect structured scene memories")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Opts {
    /// Keyframe stride over the dataset manifest.
    #[arg(long, global = true)]
    k: Option<u32>,
    /// Initial frame-memory size.
    #[arg(long = "n-img", global = true)]
    n_img: Option<usize>,
    /// Search depth: API calls allowed per question.
    #[arg(long, global = true, default_value_t = 20)]
    m: usize,
    /// Which APIs the reasoner may call: frame, node or image.
    #[arg(long, global = true, default_value = "frame", value_parser = parse_mode)]
    api: ApiMode,
    /// Base URL of a model server speaking the wire protocol.
    #[arg(long = "backend-url", global = true, conflicts_with = "scripted")]
    backend_url: Option<String>,
    /// Scripted backend file (ground truth, fixtures, reasoning scripts).
    #[arg(long, global = true)]
    scripted: Option<PathBuf>,
    /// Seed for scene generation and scripted detector noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` engine configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// HTTP backend timeout in seconds.
    #[arg(long, global = true, default_value_t = 60)]
    timeout: u64,
}

fn parse_mode(s: &str) -> Result<ApiMode, String> {
    ApiMode::parse(s).ok_or_else(|| format!("unknown API mode {s:?} (expected frame, node or image)"))
}

#[derive(Subcommand)]
enum Command {
    /// Build a memory from a dataset and persist it.
    Build {
        /// Dataset directory or manifest file.
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a question against a persisted memory.
    Ask {
        memory: PathBuf,
        question: String,
        /// Dataset the memory was built from, if not recorded in the memory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write the loop transcript as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Save the patched memory back.
        #[arg(long)]
        commit: bool,
    },
    /// Generate a synthetic scene: dataset, scripted backend file and questions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        rooms: usize,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        /// Probability that the scripted detector misses an object in a frame.
        #[arg(long = "miss-probability", default_value_t = 0.0)]
        miss_probability: f64,
    },
    /// Build, answer every question and print the metrics report.
    Eval {
        dataset: PathBuf,
        /// Questions file; defaults to questions.jsonl beside the manifest.
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Scripted file holding the ground truth; defaults to --scripted.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also persist the memory and the report to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the canonical memory text.
    Inspect {
        memory: PathBuf,
        /// Print the frame-memory references instead.
        #[arg(long)]
        frames: bool,
    },
    /// Serve a persisted memory read-only over HTTP.
    Serve {
        memory: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

fn engine_config(opts: &Opts) -> Result<EngineConfig> {
    let mut cfg = match &opts.config {
        Some(p) => config_file::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(n) = opts.n_img {
        cfg.n_img = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scripted_file(path: &Path, seed: Option<u64>) -> Result<ScriptedFile> {
    let mut file = synthetic::read_scripted(path)?;
    if let Some(s) = seed {
        file.noise.seed = s;
    }
    Ok(file)
}

fn client(opts: &Opts) -> Result<BackendClient> {
    match (&opts.backend_url, &opts.scripted) {
        (Some(url), _) => Ok(BackendClient::new(HttpTransport::new(url, Duration::from_secs(opts.timeout)))),
        (None, Some(path)) => Ok(BackendClient::new(ScriptedBackend::new(scripted_file(path, opts.seed)?))),
        (None, None) => bail!("no backend: pass --backend-url or --scripted"),
    }
}

fn print(text: &str) {
    println!("{}", text.trim_end());
}

fn run(cli: Cli) -> Result<()> {
    let opts = &cli.opts;
    match cli.command {
        Command::Build { dataset: path, out } => {
            let cfg = engine_config(opts)?;
            let k = opts.k.unwrap_or(1);
            let episode = dataset::load_dataset(&path, k)?;
            let mut client = client(opts)?;
            let (ssm, report) = build_ssm_with_report(&episode, &mut client, &cfg)?;
            let source = Source {
                dataset: std::fs::canonicalize(&path).unwrap_or(path),
                k,
            };
            persist::save(&out, &ssm, Some(&source))?;
            log::info!("{report:?}");
            eprintln!(
                "built {} tracks, {} edges over {} keyframes into {}",
                ssm.graph().len(),
                ssm.graph().edges().len(),
                episode.frames.len(),
                out.display()
            );
        }
        Command::Ask {
            memory,
            question,
            dataset: dataset_override,
            transcript,
            commit,
        } => {
            let cfg = engine_config(opts)?;
            let mut ssm = persist::load(&memory)?;
            let source = persist::load_source(&memory)?;
            let (path, k) = match (dataset_override, &source) {
                (Some(p), s) => (p, opts.k.or(s.as_ref().map(|s| s.k)).unwrap_or(1)),
                (None, Some(s)) => (s.dataset.clone(), opts.k.unwrap_or(s.k)),
                (None, None) => bail!("{} records no dataset; pass --dataset", memory.display()),
            };
            let episode = dataset::load_dataset(&path, k)?;
            let mut client = client(opts)?;
            let query = EpisodeQuery::new(question.clone(), opts.m, ssm.episode().scene_id.clone());
            let a = answer(&query, &mut ssm, &episode, &mut client, &cfg, opts.api)?;
            if let Some(t) = transcript {
                std::fs::write(&t, a.transcript_jsonl(&question)?).with_context(|| t.display().to_string())?;
            }
            if commit {
                persist::save(&memory, &ssm, source.as_ref())?;
            }
            let (status, problems) = match &a.status {
                AnswerStatus::Compliant => ("compliant", vec![]),
                AnswerStatus::NonCompliant(v) => ("non_compliant", v.clone()),
                AnswerStatus::Abstained => ("abstained", vec![]),
            };
            let out = Canon::object()
                .field("question", Canon::str(&question))
                .field("answer", Canon::str(&a.text))
                .field("status", Canon::str(status))
                .field("problems", Canon::Array(problems.iter().map(Canon::str).collect()))
                .field("calls_used", Canon::Int(a.calls_used as i64))
                .field(
                    "evidence_frames",
                    Canon::Array(a.evidence_frames.iter().map(|f| Canon::Int(f.0 as i64)).collect()),
                )
                .field(
                    "evidence_notes",
                    Canon::Array(
                        a.evidence_notes
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
                .build();
            print(&out.to_text()?);
        }
        Command::Synth {
            out,
            rooms,
            objects,
            miss_probability,
        } => {
            if !(0.0..=1.0).contains(&miss_probability) {
                bail!("--miss-probability must lie in [0, 1]");
            }
            let seed = opts.seed.unwrap_or(0);
            let scene = generate_scene(&SceneSpec::new(rooms, objects, seed))?;
            let noise = DetectorNoise {
                miss_probability,
                seed,
            };
            synthetic::write_scene(&out, &scene, noise)?;
            eprintln!(
                "wrote {} ({} objects, {} keyframes, {} questions) to {}",
                scene.truth.scene_id,
                scene.truth.objects.len(),
                scene.episode.frames.len(),
                scene.questions.len(),
                out.display()
            );
        }
        Command::Eval {
            dataset: path,
            questions,
            truth,
            out,
        } => {
            let cfg = engine_config(opts)?;
            let k = opts.k.unwrap_or(1);
            let episode = dataset::load_dataset(&path, k)?;
            let manifest = dataset::manifest_path(&path);
            let base = manifest.parent().unwrap_or(Path::new("."));
            let questions = synthetic::read_questions(&questions.unwrap_or_else(|| base.join(synthetic::QUESTIONS_FILE)))?;
            let truth_path = truth.or_else(|| opts.scripted.clone()).context("eval needs ground truth: pass --truth or --scripted")?;
            let truth = synthetic::read_scripted(&truth_path)?
                .truth
                .with_context(|| format!("{} holds no ground truth", truth_path.display()))?;
            let mut client = client(opts)?;
            let report = evaluate(&episode, &truth, &questions, &mut client, &cfg, opts.api, opts.m)?;
            let text = report.to_canon().to_text()?;
            if let Some(dir) = out {
                let ssm = ssm_core::pipeline::build_ssm(&episode, &mut client, &cfg)?;
                let source = Source {
                    dataset: std::fs::canonicalize(&path).unwrap_or(path),
                    k,
                };
                persist::save(&dir, &ssm, Some(&source))?;
                std::fs::write(dir.join(persist::METRICS_FILE), format!("{text}\n"))?;
            }
            print(&text);
        }
        Command::Inspect { memory, frames } => {
            let ssm = persist::load(&memory)?;
            if frames {
                let (_, refs) = ssm.serialize()?;
                for (id, image) in refs {
                    println!("{id}\t{image}");
                }
            } else {
                print(&ssm.to_json()?);
            }
        }
        Command::Serve { memory, addr, workers } => {
            let ssm = persist::load(&memory)?;
            let metrics_path = memory.join(persist::METRICS_FILE);
            let metrics = metrics_path
                .is_file()
                .then(|| std::fs::read_to_string(&metrics_path))
                .transpose()?;
            let snapshot = Arc::new(serve::Snapshot::new(&ssm, metrics)?);
            let server = serve::Server::bind(&addr)?;
            eprintln!("serving {} on http://{}", memory.display(), server.addr);
            for h in server.spawn(snapshot, workers) {
                let _ = h.join();
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
