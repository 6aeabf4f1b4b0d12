use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;

use mtcil::bench::{evaluate, render_report, BenchmarkReport, Condition, ExpertDriver};
use mtcil::expert::{collect, summarize, CollectConfig, Dataset};
use mtcil::nn::Coverage;
use mtcil::policy::check::{check_policy, full_model, probe_batch, randomized, GRADCHECK_TOLERANCE};
use mtcil::policy::{train, ModelConfig, Policy, PolicyDriver};
use mtcil::service::{ServeConfig, Server, StartSpec, DEFAULT_TICK};
use mtcil::sim::Weather;
use mtcil::{Error, Result};

#[derive(Parser)]
#[command(name = "mtcil", version, about = "Intersection imitation-learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstrations with steering noise.
    Collect(CollectArgs),
    /// Train a policy from a dataset.
    Train(TrainArgs),
    /// Run the closed-loop benchmark for one condition.
    Evaluate(EvaluateArgs),
    /// Render benchmark report files as a table.
    Report(ReportArgs),
    /// Serve a teleop session over WebSocket and record demonstrations.
    Serve(ServeArgs),
    /// Check the policy's analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print per-scene, per-mission and per-command frame counts.
    Summary(SummaryArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// Comma-separated scene ids.
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,4")]
    scenes: Vec<u32>,
    #[arg(long, default_value_t = 11)]
    episodes_per_route: u32,
    #[arg(long, default_value_t = 0.1)]
    noise_prob: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Model TOML; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path; the configuration sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-epoch losses as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Policy checkpoint. Without it the scripted expert drives.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// TT, tT or tt.
    #[arg(long)]
    condition: Condition,
    #[arg(long, default_value_t = 4)]
    episodes_per_route: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    scene: u32,
    #[arg(long, default_value_t = 0)]
    route: u32,
    #[arg(long, default_value = "ClearNoon")]
    weather: Weather,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    noise_prob: f64,
    /// Demo file to append kept trajectories to.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step once per control message instead of at a fixed 10 Hz.
    #[arg(long)]
    lockstep: bool,
    /// Exit after this many sessions.
    #[arg(long)]
    max_sessions: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model TOML; the full multi-task model with the speed head when unset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates probed per tensor; every coordinate when unset.
    #[arg(long)]
    per_tensor: Option<usize>,
}

#[derive(Args)]
struct SummaryArgs {
    dataset: PathBuf,
}

fn run_collect(a: CollectArgs) -> Result<String> {
    let cfg = CollectConfig {
        scenes: a.scenes,
        episodes_per_route: a.episodes_per_route,
        noise_p: a.noise_prob,
        seed: a.seed,
    };
    let (ds, tallies) = collect(&cfg)?;
    for t in &tallies {
        info!("scene {}: {} episodes, {} successes, {} kept", t.scene_id, t.episodes, t.successes, t.kept);
    }
    ds.write(&a.out)?;
    let frames = ds.num_frames();
    let perturbed = ds.trajectories.iter().flat_map(|t| &t.samples).filter(|s| s.perturbed()).count();
    Ok(format!(
        "collect trajectories={} frames={frames} perturbed_frac={:.4} out={}",
        ds.trajectories.len(),
        perturbed as f64 / frames.max(1) as f64,
        a.out.display()
    ))
}

fn load_config(path: Option<&Path>) -> Result<Option<ModelConfig>> {
    path.map(ModelConfig::load).transpose()
}

fn run_train(a: TrainArgs) -> Result<String> {
    let config = load_config(a.config.as_deref())?.unwrap_or_default();
    let ds = Dataset::read(&a.dataset)?;
    let out = train(&ds, &config, a.seed)?;
    out.policy.save(&a.out)?;
    if let Some(h) = &a.history {
        std::fs::write(h, serde_json::to_string_pretty(&out.history)?).map_err(|e| Error::file(h, e))?;
    }
    let best = &out.history[out.best_epoch];
    let (s_lat, s_lon) = out.policy.s_values();
    Ok(format!(
        "train model={} epochs={} best_epoch={} val_loss={:.6} s_lat={s_lat:.4} s_lon={s_lon:.4} out={}",
        config.name,
        out.history.len(),
        out.best_epoch,
        best.val_loss,
        a.out.display()
    ))
}

fn run_evaluate(a: EvaluateArgs) -> Result<String> {
    let (report, _) = match &a.checkpoint {
        Some(path) => {
            let policy = Arc::new(Policy::load(path)?);
            let tag = policy.config.name.clone();
            evaluate(|| Ok(PolicyDriver::new(policy.clone())), &tag, a.condition, a.episodes_per_route, a.seed)?
        }
        None => evaluate(|| Ok(ExpertDriver), "expert", a.condition, a.episodes_per_route, a.seed)?,
    };
    if let Some(p) = &a.report {
        std::fs::write(p, report.to_json()?).map_err(|e| Error::file(p, e))?;
    }
    println!("{}", render_report(std::slice::from_ref(&report))?);
    let r = report.rates;
    Ok(format!(
        "evaluate model={} condition={} episodes={} sr={:.4} pr={:.4} tr={:.4} lr={:.4} cr={:.4}",
        report.model, report.condition, report.episodes, r.sr, r.pr, r.tr, r.lr, r.cr
    ))
}

fn run_report(a: ReportArgs) -> Result<String> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            BenchmarkReport::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    println!("{}", render_report(&reports)?);
    Ok(format!("report rows={}", reports.len()))
}

fn run_serve(a: ServeArgs) -> Result<String> {
    let config = ServeConfig {
        default_start: StartSpec {
            scene: a.scene,
            route: a.route,
            weather: a.weather,
            seed: a.seed,
        },
        out: a.out.clone(),
        noise_p: a.noise_prob,
        tick: DEFAULT_TICK,
        lockstep: a.lockstep,
    };
    let server = Server::bind(("127.0.0.1", a.port), config)?;
    eprintln!("listening on ws://{}", server.local_addr()?);
    server.run(a.max_sessions)?;
    Ok(format!("serve trajectories={}", server.demos().trajectories.len()))
}

/// Returns the trailer and whether the check passed.
fn run_gradcheck(a: GradcheckArgs) -> Result<(String, bool)> {
    let coverage = match a.per_tensor {
        Some(n) => Coverage::Sampled {
            per_tensor: n,
            seed: a.seed,
        },
        None => Coverage::All,
    };
    let configs = match load_config(a.config.as_deref())? {
        Some(c) => vec![c],
        None => vec![
            full_model(mtcil::policy::EncoderKind::Small),
            full_model(mtcil::policy::EncoderKind::Deep),
        ],
    };
    let (batch, targets) = probe_batch(a.seed);
    let mut max_err: f64 = 0.0;
    let (mut checked, mut refined) = (0, 0);
    for cfg in configs {
        let policy = randomized(cfg, a.seed)?;
        let r = check_policy(&policy, &batch, &targets, coverage)?;
        info!("{}: {:.3e} over {} coordinates (worst {:?})", policy.config.name, r.max_rel_error, r.checked, r.worst);
        max_err = max_err.max(r.max_rel_error);
        checked += r.checked;
        refined += r.refined;
    }
    let ok = max_err < GRADCHECK_TOLERANCE;
    Ok((format!("gradcheck max_rel_error={max_err:.3e} checked={checked} refined={refined} pass={ok}"), ok))
}

fn run_summary(a: SummaryArgs) -> Result<String> {
    let ds = Dataset::read(&a.dataset)?;
    let s = summarize(&ds);
    print!("{}", s.render());
    Ok(format!("summary trajectories={} frames={}", s.trajectories, s.frames))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Collect(a) => run_collect(a).map(|s| (s, true)),
        Command::Train(a) => run_train(a).map(|s| (s, true)),
        Command::Evaluate(a) => run_evaluate(a).map(|s| (s, true)),
        Command::Report(a) => run_report(a).map(|s| (s, true)),
        Command::Serve(a) => run_serve(a).map(|s| (s, true)),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Summary(a) => run_summary(a).map(|s| (s, true)),
    };
    match outcome {
        Ok((trailer, ok)) => {
            println!("RESULT {trailer}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("RESULT error={}", serde_json::to_string(&e.to_string()).unwrap_or_default());
            ExitCode::FAILURE
        }
    }
}
