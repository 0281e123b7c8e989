//! Command-line entry points: train, audit, sched, replay.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hintduel_core::config::{load_config, RunConfig};
use hintduel_core::diagnostics::{self, DEFAULT_THRESHOLDS};
use hintduel_core::mastery::{audit, savings_estimate, MasteryTracker};
use hintduel_core::orchestrator::Trainer;
use hintduel_core::policy::PolicyParams;
use hintduel_core::sched::{self, SchedScenario, SweepSpec};
use hintduel_core::tasks::TaskPool;
use hintduel_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hintduel", version, about = "Self-play adversarial hint training on synthetic verifiable tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, checkpoint, mastery state and audit.
    Train(TrainArgs),
    /// Re-audit the retired questions of a finished run.
    Audit(AuditArgs),
    /// Simulate the rollout schedule for a scenario file or a length-ratio sweep.
    Sched(SchedArgs),
    /// Recompute the attack-strength summary from a metrics file.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunOverrides {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Collect on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunOverrides,
    /// Also write every rollout bundle to bundles.jsonl.
    #[arg(long)]
    dump_bundles: bool,
}

#[derive(Args)]
struct AuditArgs {
    /// Output directory of a previous `train`.
    run_dir: PathBuf,
    /// Rollouts per retired question (default: the run's audit_n).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SchedArgs {
    /// JSON scenario with r1_lengths, r2_lengths, r3_lengths, capacity and optional verify_cost.
    scenario: Option<PathBuf>,
    /// Comma-separated hint/clean mean-length ratios to sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "scenario")]
    sweep: Option<Vec<f64>>,
    /// JSON sweep specification (ratios plus optional counts, capacity, trials, seed).
    #[arg(long, conflicts_with_all = ["scenario", "sweep"])]
    sweep_spec: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    /// metrics.jsonl written by `train`.
    metrics: PathBuf,
    /// Also write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Only use steps at or after this one.
    #[arg(long)]
    from_step: Option<u64>,
}

fn resolve(o: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = o.steps {
        cfg.steps = s;
    }
    if let Some(out) = &o.out {
        cfg.out.clone_from(out);
    }
    if o.serial {
        cfg.serial = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve(&args.run)?;
    let out = cfg.out.clone();
    fs::create_dir_all(&out)?;
    let header = cfg.to_toml();
    fs::write(out.join("config.toml"), &header)?;
    eprintln!("# resolved configuration\n{header}");

    let mut trainer = Trainer::new(cfg.clone())?;
    fs::write(out.join("pool.txt"), trainer.pool.to_text())?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let mut bundles = if args.dump_bundles {
        Some(BufWriter::new(File::create(out.join("bundles.jsonl"))?))
    } else {
        None
    };

    let result = trainer.run(cfg.steps, |m, b| {
        serde_json::to_writer(&mut metrics, m)?;
        metrics.write_all(b"\n")?;
        if let Some(w) = bundles.as_mut() {
            for bundle in b {
                serde_json::to_writer(&mut *w, bundle)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    });
    metrics.flush()?;
    if let Some(w) = bundles.as_mut() {
        w.flush()?;
    }
    // params only change on successful updates, so this is the last good state
    fs::write(out.join("checkpoint.txt"), trainer.params.to_text())?;
    write_json(&out.join("mastery.json"), &trainer.tracker)?;
    let trace = result?;

    let report = audit(&trainer.tracker, &trainer.params, &trainer.pool, cfg.mastery.audit_n, cfg.seed);
    write_json(&out.join("audit.json"), &report)?;
    if let Some(threshold) = cfg.mastery.readmit_below {
        let back = trainer.tracker.readmit(&report, threshold);
        eprintln!("re-admitted {} questions", back.len());
        write_json(&out.join("mastery.json"), &trainer.tracker)?;
    }

    let steps = trace.len() as u64;
    let savings = savings_estimate(&trainer.tracker, trainer.pool.len(), 1.0, 1.0, cfg.rollout.g2, steps);
    if let Some(last) = trace.last() {
        println!(
            "steps {}  optimizer steps {}  clean success {:.4}  flip rate {:.5}  mastered {}/{}  audit mean@{} {:.4}  saved fraction <= {:.4}",
            trace.len(),
            trainer.step,
            last.pool_clean_success,
            last.pool_flip_rate,
            last.mastered_count,
            trainer.pool.len(),
            report.summary.n,
            report.summary.mean_at_n,
            savings.cumulative_fraction
        );
    }
    if trace.len() >= 2 {
        print!("{}", diagnostics::summarize(&diagnostics::attack_trace(&trace), &DEFAULT_THRESHOLDS).to_text());
    }
    Ok(())
}

fn run_audit(args: &AuditArgs) -> Result<()> {
    let dir = &args.run_dir;
    let cfg = load_config(&dir.join("config.toml"))?;
    let pool = TaskPool::from_text(&fs::read_to_string(dir.join("pool.txt"))?, cfg.pool_seed())?;
    let params = PolicyParams::from_text(&fs::read_to_string(dir.join("checkpoint.txt"))?)?;
    let tracker: MasteryTracker = serde_json::from_reader(BufReader::new(File::open(dir.join("mastery.json"))?))?;
    let n = args.n.unwrap_or(cfg.mastery.audit_n);
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    let report = audit(&tracker, &params, &pool, n, args.seed.unwrap_or(cfg.seed));
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_sched(args: &SchedArgs) -> Result<()> {
    let spec = if let Some(path) = &args.sweep_spec {
        Some(serde_json::from_reader::<_, SweepSpec>(BufReader::new(File::open(path)?))?)
    } else {
        args.sweep.clone().map(SweepSpec::with_ratios)
    };
    if let Some(mut spec) = spec {
        if let Some(t) = args.trials {
            spec.trials = t;
        }
        if let Some(s) = args.seed {
            spec.seed = s;
        }
        print!("{}", sched::sweep_csv(&sched::sweep(&spec)?));
        return Ok(());
    }
    let path = args
        .scenario
        .as_ref()
        .ok_or_else(|| Error::config("scenario", "give a scenario file, --sweep or --sweep-spec"))?;
    let sc: SchedScenario = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let r = sched::simulate(&sc)?;
    println!("{:>12} {:>10} {:>8} {:>8} {:>12}", "t_sequential", "t_merged", "t12", "t_r1", "bubble_fill");
    println!("{:>12} {:>10} {:>8} {:>8} {:>12.4}", r.t_sequential, r.t_merged, r.t12, r.t_r1, r.bubble_fill);
    Ok(())
}

fn run_replay(args: &ReplayArgs) -> Result<()> {
    let mut trace = diagnostics::read_metrics(BufReader::new(File::open(&args.metrics)?))?;
    if let Some(from) = args.from_step {
        trace.retain(|m| m.step >= from);
    }
    if trace.len() < 2 {
        return Err(Error::config("metrics", "replay needs at least two step records"));
    }
    let thresholds = args.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    let summary = diagnostics::summarize(&diagnostics::attack_trace(&trace), &thresholds);
    print!("{}", summary.to_text());
    println!();
    print!("{}", summary.to_csv());
    if let Some(path) = &args.csv {
        fs::write(path, summary.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Audit(a) => run_audit(a),
        Command::Sched(a) => run_sched(a),
        Command::Replay(a) => run_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
