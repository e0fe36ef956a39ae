//! `famm`: generate sensor datasets, run the fusion filter, compare motion
//! model strategies and check rule files.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags, config, rule
//! file, mismatched comparison), 2 runtime error (I/O, filter failure).

use clap::{Args, Parser, Subcommand, ValueEnum};
use famm_core::bundle::{comment_block, read_bundle, write_bundle, write_run};
use famm_core::config::{ConfigError, DatasetSource, RunConfig};
use famm_core::famm::RuleBase;
use famm_core::metrics::compare_summaries;
use famm_core::pipeline::{run_concurrent, run_reference, ModelMode, RunOutcome};
use famm_core::sim::{Dataset, Regime, SiteConfig, TrajectorySpec};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "famm", version, about = "Camera/GPS/IMU fusion with fuzzy motion-model selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key=value config file; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset bundle.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Shortcut for dataset.regime.
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Run the filter over a dataset and write per-step results.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run two configs over the same dataset and tabulate the difference.
    /// Without --against the baseline is the same config under CMM.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Config for the second run.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Check a rule file for totality and the published rows.
    ValidateRules { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cmm,
    Famm,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = common.mode {
        cfg.mode = match m {
            Mode::Cmm => ModelMode::Cmm,
            Mode::Famm => ModelMode::Famm,
        };
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    match &cfg.dataset {
        DatasetSource::Regime(r) => Dataset::regime(*r, cfg.seed, &cfg.sim_noise).map_err(runtime),
        DatasetSource::Segments(s) => {
            let spec = TrajectorySpec::new(s.clone(), cfg.seed);
            Dataset::generate("custom", &spec, &cfg.sim_noise, &SiteConfig::default()).map_err(runtime)
        }
        DatasetSource::Bundle(p) => read_bundle(p).map_err(runtime),
    }
}

fn execute(cfg: &RunConfig, ds: &Dataset) -> Result<RunOutcome, Failure> {
    let filter = cfg.filter_config();
    let famm = cfg.famm_config()?;
    let outcome = if cfg.concurrent {
        run_concurrent(ds, &cfg.pipeline, &filter, &famm)
    } else {
        run_reference(ds, &cfg.pipeline, &filter, &famm)
    };
    outcome.map_err(runtime)
}

fn generate(common: Common, regime: Option<Regime>) -> Result<(), Failure> {
    let mut cfg = resolve(&common)?;
    if let Some(r) = regime {
        cfg.dataset = DatasetSource::Regime(r);
    }
    if let DatasetSource::Bundle(_) = cfg.dataset {
        return Err(Failure::Invalid("generate needs dataset.regime or dataset.segments, not dataset.path".into()));
    }
    let ds = load_dataset(&cfg)?;
    write_bundle(&ds, &cfg.out_dir, &cfg.to_text()).map_err(runtime)?;
    println!(
        "wrote {} ({:.2} s, {} events, seed {}) to {}",
        ds.name,
        ds.truth.duration(),
        ds.event_count(),
        cfg.seed,
        cfg.out_dir.display()
    );
    Ok(())
}

fn run(common: Common) -> Result<(), Failure> {
    let mut cfg = resolve(&common)?;
    let ds = load_dataset(&cfg)?;
    // A recorded bundle carries its own seed.
    cfg.seed = ds.seed;
    let outcome = execute(&cfg, &ds)?;
    write_run(&cfg.out_dir, &cfg.to_text(), &outcome.report, outcome.wall_clock).map_err(runtime)?;
    let s = &outcome.report.summary;
    println!("dataset {} seed {}: {} steps", ds.name, cfg.seed, s.steps);
    println!("filter error mean {:.4} std {:.4}, final trace {:.4}", s.mean_error, s.std_error, s.final_trace);
    println!("models {}", s.histogram);
    if ds.skipped_sentences > 0 {
        println!("skipped {} unparseable GPS sentences", ds.skipped_sentences);
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}

fn same_dataset(a: &RunConfig, b: &RunConfig) -> bool {
    a.dataset == b.dataset && a.seed == b.seed && a.sim_noise == b.sim_noise
}

fn compare(common: Common, against: Option<PathBuf>) -> Result<(), Failure> {
    let a = resolve(&common)?;
    let b = match &against {
        Some(p) => {
            let other = Common {
                config: Some(p.clone()),
                ..common.clone()
            };
            resolve(&other)?
        }
        None => {
            // Baseline first: CMM against the configured (normally FAMM) run.
            let mut base = a.clone();
            base.mode = ModelMode::Cmm;
            let mut cand = a.clone();
            if cand.mode == ModelMode::Cmm {
                cand.mode = ModelMode::Famm;
            }
            return compare_pair(&base, &cand);
        }
    };
    compare_pair(&a, &b)
}

fn compare_pair(a: &RunConfig, b: &RunConfig) -> Result<(), Failure> {
    if !same_dataset(a, b) {
        return Err(Failure::Invalid("compared configs must share dataset, seed and noise settings".into()));
    }
    let ds = load_dataset(a)?;
    let (mut a, mut b) = (a.clone(), b.clone());
    a.seed = ds.seed;
    b.seed = ds.seed;
    let (a, b) = (&a, &b);
    let ra = execute(a, &ds)?;
    let rb = execute(b, &ds)?;
    let out = &a.out_dir;
    let header_a = a.to_text();
    let header_b = b.to_text();
    write_run(&out.join("a"), &header_a, &ra.report, ra.wall_clock).map_err(runtime)?;
    write_run(&out.join("b"), &header_b, &rb.report, rb.wall_clock).map_err(runtime)?;

    let rows = compare_summaries(&ra.report.summary, &rb.report.summary);
    let mut table = String::new();
    table.push_str(&comment_block(&format!("[a]\n{header_a}[b]\n{header_b}")));
    table.push_str("metric,a,b,delta,trend\n");
    println!("{:<12} {:>20} {:>20} {:>10}", "metric", label(a), label(b), "delta");
    for r in &rows {
        let _ = writeln!(table, "{},{},{},{},{}", r.metric, r.a, r.b, r.b - r.a, r.trend.arrow());
        println!("{:<12} {:>20.4} {:>20.4} {:>+10.4} {}", r.metric, r.a, r.b, r.b - r.a, r.trend.arrow());
    }
    fs::create_dir_all(out).map_err(runtime)?;
    fs::write(out.join("compare.csv"), table).map_err(runtime)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn label(cfg: &RunConfig) -> String {
    let mode = if cfg.mode == ModelMode::Cmm { "cmm" } else { "famm" };
    format!("{mode}/{}", cfg.sensors.name())
}

fn validate_rules(file: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(file).map_err(|e| Failure::Invalid(format!("{}: {e}", file.display())))?;
    let report = RuleBase::validate_text(&text);
    println!("{}: {} rules", file.display(), report.rule_count);
    for v in &report.violations {
        println!("  {v}");
    }
    if !report.unreachable.is_empty() {
        let names: Vec<String> = report.unreachable.iter().map(|m| m.to_string()).collect();
        println!("  never selected: {}", names.join(" "));
    }
    if report.passed() {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{} violations", report.violations.len())))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate { common, regime } => generate(common, regime),
        Command::Run { common } => run(common),
        Command::Compare { common, against } => compare(common, against),
        Command::ValidateRules { file } => validate_rules(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("famm: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("famm: {m}");
            ExitCode::from(2)
        }
    }
}
