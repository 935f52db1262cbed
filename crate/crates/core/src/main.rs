use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::Serialize;
use sha2::{Digest, Sha256};

use funnel::config::RunConfig;
use funnel::pipeline::{self, Timings};
use funnel::plot;
use funnel::sdp::{FunnelSolution, InfeasibilityReport, SynthesisOutcome};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;

/// Synthesizes and validates ellipsoidal invariant funnels.
#[derive(Parser)]
#[command(name = "funnel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solves the funnel program and writes funnel.json and manifest.json.
    Synthesize(SynthesizeArgs),
    /// Checks a funnel and writes validation.json, validation.txt and traces.csv.
    Validate(ValidateArgs),
    /// Writes ellipse, input-funnel and support-value series as CSV.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    common: Common,
    /// Seed of the Lipschitz sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Solver feasibility and gap tolerance.
    #[arg(long)]
    solver_tol: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// Funnel file; defaults to funnel.json in the output directory.
    #[arg(long)]
    funnel: Option<PathBuf>,
    /// Seed of the Monte-Carlo disturbances and initial samples.
    #[arg(long)]
    seed: Option<u64>,
    /// Dense-grid points per interval (at least 10).
    #[arg(long)]
    dense_grid: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    common: Common,
    /// Funnel file; defaults to funnel.json in the output directory.
    #[arg(long)]
    funnel: Option<PathBuf>,
    /// State coordinates of the projected ellipses.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1])]
    coords: Vec<usize>,
    /// Dense-grid points per interval of the support-value trace.
    #[arg(long)]
    dense_grid: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    solver: &'static str,
    config: String,
    config_sha256: String,
    lipschitz_seed: u64,
    solver_tol: f64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    infeasibility: Option<&'a InfeasibilityReport>,
    timings: Timings,
}

struct Loaded {
    cfg: RunConfig,
    text: String,
    base: PathBuf,
    out: PathBuf,
}

fn load(common: &Common) -> anyhow::Result<Loaded> {
    let text = fs::read_to_string(&common.config).with_context(|| format!("cannot read config {}", common.config.display()))?;
    let cfg = RunConfig::from_toml(&text)?;
    let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok(Loaded { cfg, text, base, out })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn read_funnel(path: &Path) -> anyhow::Result<FunnelSolution> {
    let file = fs::File::open(path).with_context(|| format!("cannot read funnel file {}", path.display()))?;
    Ok(FunnelSolution::read_json(std::io::BufReader::new(file))?)
}

fn synthesize(args: &SynthesizeArgs) -> anyhow::Result<u8> {
    let Loaded { mut cfg, text, base, out } = load(&args.common)?;
    if let Some(seed) = args.seed {
        cfg.lipschitz.seed = seed;
    }
    if let Some(tol) = args.solver_tol {
        cfg.solver.tol = tol;
    }
    cfg.validate()?;
    let (_, outcome, timings) = pipeline::run_synthesis(&cfg, &base)?;
    let mut manifest = Manifest {
        tool: "funnel",
        version: env!("CARGO_PKG_VERSION"),
        solver: "clarabel 0.11",
        config: args.common.config.display().to_string(),
        config_sha256: format!("{:x}", Sha256::digest(text.as_bytes())),
        lipschitz_seed: cfg.lipschitz.seed,
        solver_tol: cfg.solver.tol,
        status: "",
        objective: None,
        infeasibility: None,
        timings,
    };
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let code = match &outcome {
        SynthesisOutcome::Solved(sol) => {
            manifest.status = if sol.status == funnel::sdp::SolveStatus::Optimal {
                "optimal"
            } else {
                "optimal_inaccurate"
            };
            manifest.objective = Some(sol.objective);
            write_file(&out.join("funnel.json"), |w| Ok(sol.write_json(w)?))?;
            info!("wrote {}", out.join("funnel.json").display());
            EXIT_OK
        }
        SynthesisOutcome::Infeasible(report) => {
            manifest.status = "infeasible";
            manifest.infeasibility = Some(report);
            let families: Vec<&str> = report.families.iter().map(|(f, _)| f.as_str()).collect();
            error!("synthesis program is infeasible; binding constraint families: {}", families.join(", "));
            EXIT_INFEASIBLE
        }
    };
    write_file(&out.join("manifest.json"), |w| Ok(serde_json::to_writer_pretty(w, &manifest)?))?;
    Ok(code)
}

fn validate(args: &ValidateArgs) -> anyhow::Result<u8> {
    let Loaded { mut cfg, out, .. } = load(&args.common)?;
    if let Some(seed) = args.seed {
        cfg.validation.seed = seed;
    }
    if let Some(m) = args.dense_grid {
        cfg.validation.dense_grid = m;
    }
    cfg.validate()?;
    let funnel_path = args.funnel.clone().unwrap_or_else(|| out.join("funnel.json"));
    let sol = read_funnel(&funnel_path)?;
    let report = pipeline::run_validation(&cfg, &sol, &cfg.validation)?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_file(&out.join("validation.json"), |w| Ok(report.write_json(w)?))?;
    write_file(&out.join("validation.txt"), |w| Ok(std::io::Write::write_all(w, report.summary().as_bytes())?))?;
    write_file(&out.join("traces.csv"), |w| Ok(report.write_traces_csv(w)?))?;
    print!("{}", report.summary());
    Ok(if report.passed { EXIT_OK } else { EXIT_ERROR })
}

fn plotdata(args: &PlotArgs) -> anyhow::Result<u8> {
    let Loaded { cfg, out, .. } = load(&args.common)?;
    cfg.validate()?;
    let funnel_path = args.funnel.clone().unwrap_or_else(|| out.join("funnel.json"));
    let sol = read_funnel(&funnel_path)?;
    let [i, j] = args.coords[..] else {
        bail!("--coords: expected two comma-separated state indices");
    };
    let ellipses = plot::ellipse_series(&sol, i, j)?;
    let inputs = plot::input_funnel_series(&sol, &cfg.constraints.input_halfspaces);
    let support = plot::support_series(&sol, args.dense_grid.unwrap_or(cfg.validation.dense_grid));
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_file(&out.join("ellipses.csv"), |w| Ok(plot::write_csv(&ellipses, w)?))?;
    write_file(&out.join("input_funnel.csv"), |w| Ok(plot::write_csv(&inputs, w)?))?;
    write_file(&out.join("support.csv"), |w| Ok(plot::write_csv(&support, w)?))?;
    info!("wrote plot data to {}", out.display());
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUNNEL_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let help = matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if help { EXIT_OK } else { EXIT_ERROR });
        }
    };
    let result = match &cli.command {
        Command::Synthesize(a) => synthesize(a),
        Command::Validate(a) => validate(a),
        Command::Plotdata(a) => plotdata(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
