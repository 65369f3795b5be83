//! Command-line front end: world generation, data collection, training,
//! evaluation and rendering, all rooted in a run directory whose manifest
//! pins the configuration.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sscnav::completion::{
    build_completion_dataset, eval_constant_iou, eval_net_iou, complete, completion_net_spec,
    confidence_net_spec, estimate_confidence, load_dataset, majority_label, save_dataset,
    train_completion, train_confidence, CompletionSample,
};
use sscnav::config::RunConfig;
use sscnav::episodes::{compute_metrics, run_episode, EpisodeSampler, StopReason};
use sscnav::nav::{
    q_net_spec, train_nav, ActionMode, NavContext, QPolicy, RandomPolicy, Variant,
};
use sscnav::render::{render_error_map, render_semantic, render_trajectory};
use sscnav::world::{generate_world, World, UNKNOWN};
use sscnav::{Result, SscError};
use tensor_nn::{checkpoint, Network, NetworkSpec};

#[derive(Parser)]
#[command(name = "sscnav", version, about = "semantic scene completion for object-goal navigation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a run directory and generate its worlds
    Worldgen {
        #[arg(long)]
        run: PathBuf,
        /// configuration file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// number of worlds
        #[arg(long, default_value_t = 3)]
        count: usize,
    },
    /// Collect a scene-completion dataset from the run's worlds
    Collect {
        #[arg(long)]
        run: PathBuf,
        /// random-walk anchors per world (4 samples each)
        #[arg(long, default_value_t = 10)]
        anchors: usize,
    },
    /// Train the scene-completion network
    TrainCompletion {
        #[arg(long)]
        run: PathBuf,
    },
    /// Train the confidence network against the frozen completion network
    TrainConfidence {
        #[arg(long)]
        run: PathBuf,
    },
    /// Train the navigation policy for the configured variant
    TrainNav {
        #[arg(long)]
        run: PathBuf,
    },
    /// Report held-out completion IoU against the constant baselines
    EvalCompletion {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run the evaluation episode suite and report SR / SPL
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// "q" for the trained policy, "random" for the baseline
        #[arg(long, default_value = "q")]
        policy: String,
        /// override the configured episode count
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Render a world file as a PPM image
    Render {
        /// world file to render
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    worlds: usize,
    config: RunConfig,
}

struct RunDir {
    root: PathBuf,
    cfg: RunConfig,
    worlds: usize,
}

impl RunDir {
    fn create(root: &Path, cfg: RunConfig, worlds: usize) -> Result<RunDir> {
        for sub in ["worlds", "data", "ckpt", "logs", "renders"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            worlds,
            config: cfg.clone(),
        };
        let text = toml::to_string_pretty(&manifest)
            .map_err(|e| SscError::Data(format!("manifest: {e}")))?;
        std::fs::write(root.join("manifest.toml"), text)?;
        Ok(RunDir { root: root.to_path_buf(), cfg, worlds })
    }

    fn open(root: &Path) -> Result<RunDir> {
        let path = root.join("manifest.toml");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SscError::Config(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| SscError::Config(format!("{}: {e}", path.display())))?;
        manifest.config.validate()?;
        Ok(RunDir { root: root.to_path_buf(), cfg: manifest.config, worlds: manifest.worlds })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn load_worlds(&self) -> Result<Vec<World>> {
        (0..self.worlds)
            .map(|i| World::load(&self.path(&format!("worlds/world_{i:03}.wld"))))
            .collect()
    }

    fn load_net(&self, spec: NetworkSpec, rel: &str, what: &str) -> Result<Network> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(SscError::Config(format!(
                "{what} checkpoint missing: {} (train it first)",
                path.display()
            )));
        }
        let mut net = Network::new(spec, 0)?;
        checkpoint::load_into(&mut net.params, &path).map_err(|e| {
            SscError::Config(format!(
                "{what} checkpoint {} does not fit the configured variant/widths: {e}",
                path.display()
            ))
        })?;
        Ok(net)
    }
}

fn cmd_worldgen(run: &Path, config: Option<&Path>, count: usize) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    if count == 0 {
        return Err(SscError::Config("count: need at least one world".into()));
    }
    let dir = RunDir::create(run, cfg, count)?;
    let params = dir.cfg.world_params();
    for i in 0..count {
        let w = generate_world(dir.cfg.seed + i as u64, &params)?;
        w.save(&dir.path(&format!("worlds/world_{i:03}.wld")))?;
    }
    println!("generated {count} worlds in {}", dir.path("worlds").display());
    Ok(())
}

fn cmd_collect(run: &Path, anchors: usize) -> Result<()> {
    let dir = RunDir::open(run)?;
    let worlds = dir.load_worlds()?;
    let mut rng = ChaCha8Rng::seed_from_u64(dir.cfg.seed.wrapping_add(1000));
    let samples = build_completion_dataset(
        &worlds,
        anchors,
        &dir.cfg.sensor_params(),
        &dir.cfg.map_params(),
        &mut rng,
    )?;
    save_dataset(&samples, dir.cfg.map.cells, &dir.path("data/completion.ds"))?;
    println!("collected {} samples", samples.len());
    Ok(())
}

fn cmd_train_completion(run: &Path) -> Result<()> {
    let dir = RunDir::open(run)?;
    let (samples, _) = load_dataset(&dir.path("data/completion.ds"))?;
    let (net, stats) = train_completion(&samples, &dir.cfg.completion_cfg())?;
    checkpoint::save(&net.params, &dir.path("ckpt/completion.ckpt"))?;
    write_epoch_log(&dir.path("logs/completion.csv"), &stats)?;
    let last = stats.last().unwrap();
    println!("trained completion: train {:.4} val {:.4}", last.train_loss, last.val_loss);
    Ok(())
}

fn cmd_train_confidence(run: &Path) -> Result<()> {
    let dir = RunDir::open(run)?;
    let (samples, _) = load_dataset(&dir.path("data/completion.ds"))?;
    let cfg = dir.cfg.completion_cfg();
    let frozen = dir.load_net(
        completion_net_spec(&cfg.widths),
        "ckpt/completion.ckpt",
        "completion",
    )?;
    let (net, stats) = train_confidence(&frozen, &samples, &cfg)?;
    checkpoint::save(&net.params, &dir.path("ckpt/confidence.ckpt"))?;
    write_epoch_log(&dir.path("logs/confidence.csv"), &stats)?;
    let last = stats.last().unwrap();
    println!("trained confidence: train {:.4} val {:.4}", last.train_loss, last.val_loss);
    Ok(())
}

fn write_epoch_log(path: &Path, stats: &[sscnav::completion::EpochStats]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for (i, s) in stats.iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", i + 1, s.train_loss, s.val_loss));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads whatever frozen networks the variant needs, erroring before any
/// episode work if a checkpoint is missing or shaped for another variant.
fn load_frozen(dir: &RunDir, variant: Variant) -> Result<(Option<Network>, Option<Network>)> {
    let vc = variant.config();
    let widths = &dir.cfg.completion.widths;
    let completion = if vc.use_completion {
        Some(dir.load_net(completion_net_spec(widths), "ckpt/completion.ckpt", "completion")?)
    } else {
        None
    };
    let confidence = if vc.confidence_mode == sscnav::nav::ConfidenceMode::Learned {
        Some(dir.load_net(confidence_net_spec(widths), "ckpt/confidence.ckpt", "confidence")?)
    } else {
        None
    };
    Ok((completion, confidence))
}

fn cmd_train_nav(run: &Path) -> Result<()> {
    let dir = RunDir::open(run)?;
    let variant = dir.cfg.variant();
    let (completion, confidence) = load_frozen(&dir, variant)?;
    let ctx = NavContext {
        variant: variant.config(),
        completion: completion.as_ref(),
        confidence: confidence.as_ref(),
    };
    let worlds = dir.load_worlds()?;
    let (qnet, logs) = train_nav(
        &worlds,
        &ctx,
        &dir.cfg.sensor_params(),
        &dir.cfg.map_params(),
        &dir.cfg.nav_cfg(),
    )?;
    checkpoint::save(&qnet.params, &dir.path("ckpt/qnet.ckpt"))?;
    let mut text = String::from("step,episode,reward,epsilon,loss,done,success\n");
    for l in &logs {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            l.step,
            l.episode,
            l.reward,
            l.epsilon,
            l.loss.map(|v| v.to_string()).unwrap_or_default(),
            l.done as u8,
            l.success as u8
        ));
    }
    std::fs::write(dir.path("logs/nav.csv"), text)?;
    let successes = logs.iter().filter(|l| l.success).count();
    println!(
        "trained {} policy: {} env steps, {} episodes, {} successes",
        variant.name(),
        logs.len(),
        logs.last().map(|l| l.episode).unwrap_or(0),
        successes
    );
    Ok(())
}

/// Deterministic held-out tail of the dataset, at least one sample.
fn held_out(samples: &[CompletionSample], seed: u64, fraction: f64) -> Vec<&CompletionSample> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(3000)));
    let n = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len());
    idx[..n].iter().map(|&i| &samples[i]).collect()
}

fn cmd_eval_completion(run: &Path) -> Result<()> {
    let dir = RunDir::open(run)?;
    let (samples, _) = load_dataset(&dir.path("data/completion.ds"))?;
    let cfg = dir.cfg.completion_cfg();
    let net = dir.load_net(
        completion_net_spec(&cfg.widths),
        "ckpt/completion.ckpt",
        "completion",
    )?;
    let held: Vec<CompletionSample> =
        held_out(&samples, dir.cfg.seed, cfg.val_fraction.max(0.1) as f64).into_iter().cloned().collect();
    let trained = eval_net_iou(&net, &held)?;
    let majority = eval_constant_iou(majority_label(&held), &held);
    let unknown = eval_constant_iou(UNKNOWN, &held);
    let report = serde_json::json!({
        "held_out_samples": held.len(),
        "trained_mean_iou": trained.mean,
        "majority_mean_iou": majority.mean,
        "unknown_mean_iou": unknown.mean,
        "per_category": trained.per_category,
    });
    std::fs::write(
        dir.path("logs/eval_completion.json"),
        serde_json::to_string_pretty(&report).map_err(|e| SscError::Data(e.to_string()))?,
    )?;
    if let Some(s) = held.first() {
        let completed = complete(&net, &s.input)?;
        render_error_map(&completed.labels, &s.target, s.input.observed())?
            .write_ppm(&dir.path("renders/error_map.ppm"))?;
        if let Some(cnet) = dir
            .path("ckpt/confidence.ckpt")
            .exists()
            .then(|| dir.load_net(confidence_net_spec(&cfg.widths), "ckpt/confidence.ckpt", "confidence"))
            .transpose()?
        {
            let conf = estimate_confidence(&cnet, &s.input, &completed)?;
            sscnav::render::render_confidence(&conf.values, s.input.cells())?
                .write_ppm(&dir.path("renders/confidence.ppm"))?;
        }
    }
    println!(
        "held-out mean IoU: trained {:.4}, majority {:.4}, unknown {:.4}",
        trained.mean, majority.mean, unknown.mean
    );
    Ok(())
}

#[derive(Serialize)]
struct EpisodeRecord {
    world: usize,
    goal: u8,
    shortest_path: f32,
    success: bool,
    path_length: f32,
    steps: usize,
    stop_reason: String,
}

fn cmd_eval(run: &Path, policy: &str, episodes_override: Option<usize>) -> Result<()> {
    let dir = RunDir::open(run)?;
    let variant = dir.cfg.variant();
    let vc = variant.config();
    let use_q = match policy {
        "q" => true,
        "random" => false,
        other => {
            return Err(SscError::Config(format!(
                "policy: unknown value {other:?}; expected q or random"
            )))
        }
    };
    // resolve every artifact before running a single episode
    let (completion, confidence) = if use_q { load_frozen(&dir, variant)? } else { (None, None) };
    let qnet = if use_q {
        Some(dir.load_net(
            q_net_spec(&dir.cfg.nav.widths, vc.action_mode),
            "ckpt/qnet.ckpt",
            "policy",
        )?)
    } else {
        None
    };
    let worlds = dir.load_worlds()?;
    let samplers: Vec<EpisodeSampler> = worlds.iter().map(EpisodeSampler::new).collect();
    let sensor = dir.cfg.sensor_params();
    let map = dir.cfg.map_params();
    let ep_cfg = dir.cfg.episode_cfg();
    let episodes = episodes_override.unwrap_or(dir.cfg.eval.episodes);
    let actions = match vc.action_mode {
        ActionMode::Spatial => map.cells * map.cells,
        ActionMode::Sparse8 => 8,
    };

    let mut suite_rng = ChaCha8Rng::seed_from_u64(dir.cfg.seed.wrapping_add(2000));
    let mut results = Vec::with_capacity(episodes);
    let mut records = Vec::with_capacity(episodes);
    let mut first_trace = None;
    for e in 0..episodes {
        let widx = e % worlds.len();
        let spec = samplers[widx].sample(&mut suite_rng)?;
        let (res, trace) = if let Some(qnet) = &qnet {
            let mut p = QPolicy {
                qnet,
                ctx: NavContext {
                    variant: vc,
                    completion: completion.as_ref(),
                    confidence: confidence.as_ref(),
                },
                epsilon: 0.0,
                rng: ChaCha8Rng::seed_from_u64(dir.cfg.seed.wrapping_add(4000 + e as u64)),
            };
            run_episode(&worlds[widx], &spec, &mut p, vc.action_mode, &sensor, &map, &ep_cfg)?
        } else {
            let mut p = RandomPolicy {
                actions,
                rng: ChaCha8Rng::seed_from_u64(dir.cfg.seed.wrapping_add(4000 + e as u64)),
            };
            run_episode(&worlds[widx], &spec, &mut p, vc.action_mode, &sensor, &map, &ep_cfg)?
        };
        records.push(EpisodeRecord {
            world: widx,
            goal: spec.goal,
            shortest_path: spec.shortest_path,
            success: res.success,
            path_length: res.path_length,
            steps: res.steps,
            stop_reason: match res.stop_reason {
                StopReason::StopChecker => "stop_checker".into(),
                StopReason::StepLimit => "step_limit".into(),
            },
        });
        if first_trace.is_none() {
            first_trace = Some((widx, trace));
        }
        results.push((res, spec));
    }
    let metrics = compute_metrics(&results, worlds[0].resolution());
    let report = serde_json::json!({
        "policy": if use_q { variant.name() } else { "random" },
        "episodes": episodes,
        "success_rate": metrics.success_rate,
        "spl": metrics.spl,
        "per_category": metrics.per_category,
        "records": records,
    });
    std::fs::write(
        dir.path("logs/eval.json"),
        serde_json::to_string_pretty(&report).map_err(|e| SscError::Data(e.to_string()))?,
    )?;
    if let Some((widx, trace)) = first_trace {
        render_trajectory(&worlds[widx], &trace)?
            .write_ppm(&dir.path("renders/trajectory_000.ppm"))?;
    }
    println!(
        "{} episodes: success rate {:.3}, SPL {:.3}",
        episodes, metrics.success_rate, metrics.spl
    );
    Ok(())
}

fn cmd_render(map: &Path, out: &Path) -> Result<()> {
    let w = World::load(map)?;
    let labels: Vec<u8> = (0..w.width() * w.height()).map(|i| w.label(i)).collect();
    render_semantic(&labels, w.width())?.write_ppm(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Worldgen { run, config, count } => cmd_worldgen(&run, config.as_deref(), count),
        Cmd::Collect { run, anchors } => cmd_collect(&run, anchors),
        Cmd::TrainCompletion { run } => cmd_train_completion(&run),
        Cmd::TrainConfidence { run } => cmd_train_confidence(&run),
        Cmd::TrainNav { run } => cmd_train_nav(&run),
        Cmd::EvalCompletion { run } => cmd_eval_completion(&run),
        Cmd::Eval { run, policy, episodes } => cmd_eval(&run, &policy, episodes),
        Cmd::Render { map, out } => cmd_render(&map, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            SscError::Config(_) => 2,
            _ => 3,
        };
        std::process::exit(code);
    }
}
