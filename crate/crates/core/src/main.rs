use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gradkit::bench::{bench_run, BenchProblem, ProblemKind};
use gradkit::ensemble::FusionRule;
use gradkit::experiment::{self, ExperimentConfig, ExperimentReport, FuseGroup};
use gradkit::formats::{self, MetricRow};
use gradkit::{Error, OptimConfig, Result, Variant};

#[derive(Parser)]
#[command(
    name = "gradkit",
    version,
    about = "Adam-family optimizer benchmarks and sum-rule ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// bench: random start point from this seed. train: added to every run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one optimizer variant
    #[arg(long)]
    optimizer: Option<Variant>,
    /// Write per-step (bench) or per-epoch (train) traces
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizers on closed-form objectives
    Bench {
        #[command(flatten)]
        common: Common,
        /// quadratic, rosenbrock, or all
        #[arg(long, default_value = "all")]
        problem: String,
        /// Quadratic dimension
        #[arg(long, default_value_t = 10)]
        dim: usize,
        /// Learning rate for every variant (default: per-problem table)
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        max_steps: usize,
        /// Stop once f - f* < tol (default: 1e-6 quadratic, 1e-2 rosenbrock)
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Train every configured (optimizer, seed, fold) job and report
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Fuse saved prediction files with the sum rule
    Fuse {
        #[command(flatten)]
        common: Common,
        /// `name=run_id,run_id`; repeatable. Default: one group per run.
        #[arg(long = "group")]
        groups: Vec<FuseGroup>,
        #[arg(long, default_value = "probabilities", value_parser = parse_rule)]
        rule: FusionRule,
        /// Prediction files
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Rebuild the report of a finished `train` from its prediction files
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_rule(s: &str) -> std::result::Result<FusionRule, String> {
    match s {
        "probabilities" => Ok(FusionRule::Probabilities),
        "logits" => Ok(FusionRule::Logits),
        _ => Err(format!("unknown fusion rule `{s}` (probabilities, logits)")),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Bench {
            common,
            problem,
            dim,
            lr,
            max_steps,
            tol,
        } => bench(common, &problem, dim, lr, max_steps, tol),
        Command::Train { common } => train(common),
        Command::Fuse {
            common,
            groups,
            rule,
            files,
        } => fuse(common, &groups, rule, &files),
        Command::Report { common } => report(common),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn bench(
    common: Common,
    problem: &str,
    dim: usize,
    lr: Option<f64>,
    max_steps: usize,
    tol: Option<f64>,
) -> Result<()> {
    if common.config.is_some() {
        return Err(Error::Config("bench takes no --config".into()));
    }
    if dim == 0 {
        return Err(Error::Config("--dim must be >= 1".into()));
    }
    let kinds = match problem {
        "all" => vec![ProblemKind::Quadratic, ProblemKind::Rosenbrock],
        p => vec![p.parse()?],
    };
    let variants: Vec<Variant> = match common.optimizer {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    if let Some(out) = &common.out {
        create_dir(out)?;
    }
    let mut csv = String::from("problem,optimizer,lr,steps,converged,final_value\n");
    println!(
        "{:<10}  {:<13}  {:>6}  {:>7}  {:>9}  {:>12}",
        "problem", "optimizer", "lr", "steps", "converged", "f - f*"
    );
    for kind in kinds {
        let mut p = match kind {
            ProblemKind::Quadratic => BenchProblem::quadratic(dim),
            ProblemKind::Rosenbrock => BenchProblem::rosenbrock(),
        };
        if let Some(seed) = common.seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            p.start
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-2.0..2.0));
        }
        let tol = tol.unwrap_or_else(|| p.default_tol());
        for &variant in &variants {
            let lr = lr.unwrap_or_else(|| p.default_lr(variant));
            let traj = bench_run(&p, &OptimConfig::new(variant, lr), max_steps, tol)?;
            let gap = traj.final_value() - p.min_value;
            println!(
                "{:<10}  {:<13}  {:>6}  {:>7}  {:>9}  {:>12.4e}",
                kind.to_string(),
                variant.to_string(),
                lr,
                traj.steps(),
                traj.converged,
                gap
            );
            writeln!(
                csv,
                "{kind},{variant},{lr},{},{},{gap:e}",
                traj.steps(),
                traj.converged
            )
            .unwrap();
            if common.trace {
                let mut lines = String::new();
                for rec in &traj.records {
                    lines.push_str(&serde_json::to_string(rec).expect("plain numbers"));
                    lines.push('\n');
                }
                match &common.out {
                    Some(out) => {
                        write_file(&out.join(format!("trace-{kind}-{variant}.jsonl")), &lines)?
                    }
                    None => {
                        let mut stdout = std::io::stdout().lock();
                        let _ = writeln!(stdout, "# trace {kind} {variant}");
                        let _ = stdout.write_all(lines.as_bytes());
                    }
                }
            }
        }
    }
    if let Some(out) = &common.out {
        write_file(&out.join("bench.csv"), &csv)?;
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("gradkit-out"));
    Ok((cfg, out))
}

fn restrict(cfg: &mut ExperimentConfig, common: &Common) -> Result<()> {
    if let Some(v) = common.optimizer {
        for name in cfg.retain_variant(v)? {
            eprintln!("skipping ensemble `{name}`: it needs other optimizers");
        }
    }
    Ok(())
}

fn print_report(report: &ExperimentReport, out: &Path) {
    print!("{}", report.text());
    println!("\nwrote {}", out.display());
}

fn train(common: Common) -> Result<()> {
    let (mut cfg, out) = load_config(&common)?;
    if let Some(offset) = common.seed {
        cfg.offset_seeds(offset);
    }
    restrict(&mut cfg, &common)?;
    cfg.trace |= common.trace;
    let report = experiment::experiment_run(&cfg, &out)?;
    print_report(&report, &out);
    Ok(())
}

fn report(common: Common) -> Result<()> {
    let (mut cfg, out) = load_config(&common)?;
    if let Some(offset) = common.seed {
        cfg.offset_seeds(offset);
    }
    restrict(&mut cfg, &common)?;
    let report = experiment::report_from_dir(&cfg, &out)?;
    print_report(&report, &out);
    Ok(())
}

fn fuse(common: Common, groups: &[FuseGroup], rule: FusionRule, files: &[PathBuf]) -> Result<()> {
    if common.config.is_some() || common.seed.is_some() || common.optimizer.is_some() {
        return Err(Error::Config(
            "fuse takes only --out, --group and --rule".into(),
        ));
    }
    let reports = experiment::fuse_files(files, groups, rule)?;
    let rows: Vec<MetricRow> = reports
        .iter()
        .flat_map(|(name, rep)| MetricRow::from_report(name, rep))
        .collect();
    print!("{}", formats::metrics_table(&rows));
    if let Some(out) = &common.out {
        create_dir(out)?;
        write_file(&out.join("fused.csv"), &formats::metrics_csv(&rows))?;
    }
    Ok(())
}
