//! `evl`: run experiments, build reports, pretrain the fixed baseline and
//! serve live sessions.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use evl_core::board::{EnvKind, Preset};
use evl_core::harness::{load_records, make_report, run_experiment, BootstrapConfig, ExperimentOutcome, ExperimentSpec};
use evl_core::ppo::Checkpoint;
use evl_core::train::{pretrain_keeper, Method};
use evl_core::Error;
use evl_live::ServeConfig;

const EXIT_PARTIAL: u8 = 1;
const EXIT_INVALID_SPEC: u8 = 2;

#[derive(Parser)]
#[command(name = "evl", version, about = "Evolutionary value learning on a ball-on-board testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and validate every (env, method, seed, partner) run of a spec.
    Run(RunArgs),
    /// Aggregate experiment directories into report tables.
    Report(ReportArgs),
    /// Pretrain the centre-keeper policy used by the fixed baseline.
    PretrainFixed(PretrainArgs),
    /// Serve live sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; defaults to the spec's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds replacing the spec's.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directories.
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "env1")]
    env: EnvKind,
    #[arg(long, default_value = "sim")]
    preset: Preset,
    /// Training budget in full episodes' worth of steps.
    #[arg(long, default_value_t = 150)]
    iterations: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "env1")]
    env: EnvKind,
    #[arg(long, default_value = "sim")]
    preset: Preset,
    #[arg(long, default_value = "evl")]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    max_iterations: usize,
    /// Keeper checkpoint for `--method fixed`.
    #[arg(long)]
    keeper: Option<PathBuf>,
    /// Run ticks as fast as possible instead of at the sample time.
    #[arg(long)]
    unthrottled: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report(args) => report(args).map(|_| ExitCode::SUCCESS),
        Command::PretrainFixed(args) => pretrain(args).map(|_| ExitCode::SUCCESS),
        Command::Serve(args) => serve(args).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_PARTIAL)
    })
}

fn invalid(e: impl std::fmt::Display) -> anyhow::Result<ExitCode> {
    eprintln!("invalid spec: {e}");
    Ok(ExitCode::from(EXIT_INVALID_SPEC))
}

fn exit_code(outcome: &ExperimentOutcome) -> ExitCode {
    if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PARTIAL)
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut spec = match ExperimentSpec::from_json_file(&args.spec) {
        Ok(s) => s,
        Err(e) => return invalid(format!("{}: {e}", args.spec.display())),
    };
    if let Some(seeds) = args.seeds {
        spec.seeds = seeds;
    }
    if let Some(m) = args.method {
        spec.methods = vec![m];
    }
    if let Some(env) = args.env {
        spec.envs = vec![env];
    }
    if let Some(p) = args.preset {
        spec.preset = p;
    }
    if let Err(e) = spec.validate() {
        return invalid(e);
    }
    let Some(out) = args.out.or_else(|| spec.output_dir.clone()) else {
        return invalid("no output directory: pass --out or set `output_dir`");
    };
    let outcome = match run_experiment(&spec, &out) {
        Ok(o) => o,
        Err(e @ Error::InvalidConfig(_)) => return invalid(e),
        Err(e) => return Err(e).context("experiment failed"),
    };
    for s in &outcome.summaries {
        log::info!(
            "{} {}: {} runs, final U {:.2} ± {:.2}, L {:.3}, δ {:.3}, σ {:.1}, φ {:.3}",
            s.env,
            s.method,
            s.runs,
            s.final_specificity.mean,
            s.final_specificity.std,
            s.path_length.mean,
            s.density_ratio.mean,
            s.human_effort.mean,
            s.agreement_ratio.mean
        );
    }
    for f in &outcome.failures {
        log::error!("{}: {}", f.run, f.error);
    }
    log::info!("wrote {}", out.display());
    Ok(exit_code(&outcome))
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let mut records = Vec::new();
    for dir in &args.inputs {
        records.extend(load_records(dir).with_context(|| format!("reading {}", dir.display()))?);
    }
    let cfg = BootstrapConfig {
        resamples: args.resamples,
        ..Default::default()
    };
    for path in make_report(&records, &args.out, &cfg)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn pretrain(args: PretrainArgs) -> anyhow::Result<()> {
    if args.iterations == 0 {
        bail!("--iterations must be at least 1");
    }
    let ckpt = pretrain_keeper(args.env, args.preset, args.iterations, args.seed)?;
    ckpt.save(&args.out)?;
    let check = Checkpoint::load(&args.out)?;
    log::info!("wrote {} (policy {})", args.out.display(), check.policy.checksum());
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad --host/--port")?;
    let mut cfg = ServeConfig::new(args.env, args.preset);
    cfg.method = args.method;
    cfg.seed = args.seed;
    cfg.max_iterations = args.max_iterations;
    cfg.realtime = !args.unthrottled;
    if let Some(path) = args.keeper {
        cfg.keeper = Some(Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(evl_live::serve(addr, cfg))?;
    Ok(())
}
