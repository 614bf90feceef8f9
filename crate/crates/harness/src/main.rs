// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use bvmlab_core::el::{kkt_residuals, profile_q, EtaDomain, MomentModel, MomentSpec};
use bvmlab_harness::{emit_plotdata, emit_table, run, ElSolveConfig, ExperimentConfig, Format, HarnessError, Metric, RunOptions, RunRecord};

#[derive(Parser)]
#[command(name = "bvmlab", version, about = "Posterior normal approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// λ-curve, aₙ and moment bounds per cell.
    Diagnose(Common),
    /// TV and α-moment distances over a sweep.
    TvSweep(Common),
    /// Curved-family distances, MLE errors and tail masses.
    CurvedSweep(Common),
    /// One empirical likelihood solve with KKT residuals.
    ElSolve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Lemma audits and tail-mass audits.
    Audit(Common),
    /// Dimension-growth ratios only.
    Growth(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Record per-task wall time (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn allowed(cmd: &str, metric: &Metric) -> bool {
    match cmd {
        "diagnose" => matches!(metric, Metric::LambdaCurve | Metric::AN),
        "tv-sweep" => matches!(metric, Metric::Tv | Metric::AlphaMoment { .. }),
        "curved-sweep" => matches!(metric, Metric::Tv | Metric::AlphaMoment { .. } | Metric::MleRate | Metric::TailMass),
        "audit" => matches!(metric, Metric::LemmaAudits | Metric::TailMass),
        "growth" => matches!(metric, Metric::Growth),
        _ => false,
    }
}

fn sweep(cmd: &str, args: &Common) -> Result<Vec<RunRecord>, HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut problems: Vec<String> =
        cfg.metrics.iter().filter(|m| !allowed(cmd, m)).map(|m| format!("metrics: {} is not part of `{cmd}`", m.name())).collect();
    if cmd == "curved-sweep" && !cfg.family.is_curved() {
        problems.push(format!("family: `curved-sweep` needs a curved family, got {}", cfg.family.label()));
    }
    if !problems.is_empty() {
        return Err(HarnessError::ConfigInvalid(problems));
    }
    let records = run(&cfg, &RunOptions { workers: args.workers, timing: args.timing })?;
    let format = match args.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let table = args.out.join(format!("{}.{}", cfg.experiment, format.extension()));
    emit_table(&records, format, &table)?;
    eprintln!("{} records -> {}", records.len(), table.display());
    if matches!(cmd, "tv-sweep" | "curved-sweep") {
        write_plots(&cfg, &records, &args.out)?;
    }
    if cmd == "growth" {
        print_growth(&records);
    }
    Ok(records)
}

fn write_plots(cfg: &ExperimentConfig, records: &[RunRecord], out: &Path) -> Result<(), HarnessError> {
    let mut metrics: Vec<&str> = records.iter().filter(|r| !r.is_error()).map(|r| r.metric.as_str()).collect();
    metrics.sort_unstable();
    metrics.dedup();
    for metric in metrics {
        let safe: String = metric.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        let path = out.join(format!("{}.{safe}.dat", cfg.experiment));
        emit_plotdata(records, "n", metric, &["d"], &path)?;
    }
    Ok(())
}

fn print_growth(records: &[RunRecord]) {
    for r in records {
        println!("d={:<4} n={:<8} {:<40} {:.6e}", r.d, r.n, r.metric, r.value);
    }
}

fn el_solve(config: &Path) -> Result<(), HarnessError> {
    let cfg = ElSolveConfig::load(config)?;
    let invalid = |e: bvmlab_core::Error| HarnessError::ConfigInvalid(vec![e.to_string()]);
    let spec = MomentSpec::from_name(&cfg.moment, &cfg.moment_params).map_err(invalid)?;
    let support: Vec<DVector<f64>> = cfg.support.iter().map(|p| DVector::from_column_slice(p)).collect();
    let eta = DVector::from_column_slice(&cfg.eta);
    // a generous box around η; the solve itself does not use the domain
    let domain = EtaDomain::Box { lo: eta.add_scalar(-1e6), hi: eta.add_scalar(1e6) };
    let model = MomentModel::builtin(spec, support, domain, cfg.weights.clone()).map_err(invalid)?;
    let sol = profile_q(&model, &eta, None).map_err(|e| HarnessError::Runtime(format!("{} ({})", e, e.class())))?;
    let kkt = kkt_residuals(&model, &eta, None, &sol);
    println!("status        {}", sol.status.label());
    println!("iterations    {}", sol.iterations);
    println!("objective     {:.17e}", sol.objective);
    println!("q             {}", fmt_vec(&sol.q));
    println!("multiplier    {}", fmt_vec(&sol.multiplier));
    println!("kkt");
    println!("  stationarity {:.3e}", kkt.stationarity);
    println!("  feasibility  {:.3e}", kkt.feasibility);
    println!("  simplex      {:.3e}", kkt.simplex);
    println!("  min q        {:.3e}", kkt.min_q);
    Ok(())
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Diagnose(a) => sweep("diagnose", a),
        Command::TvSweep(a) => sweep("tv-sweep", a),
        Command::CurvedSweep(a) => sweep("curved-sweep", a),
        Command::Audit(a) => sweep("audit", a),
        Command::Growth(a) => sweep("growth", a),
        Command::ElSolve { config } => el_solve(config).map(|_| Vec::new()),
    };
    match result {
        Ok(records) if records.iter().any(RunRecord::is_error) => {
            eprintln!("{} error rows", records.iter().filter(|r| r.is_error()).count());
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
