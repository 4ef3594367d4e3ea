//! `hoif`: covariate-adjusted estimation and randomization-moment tools for
//! completely randomized experiments.
//!
//! Exit codes: 0 success, 1 numerical check failed, 2 usage, input or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hoif_cre::adversarial::{adversarial_search, optimal_center};
use hoif_cre::check::enum_check;
use hoif_cre::config::{self, AdversarialConfig};
use hoif_cre::design::{CovariateMatrix, HatMatrix};
use hoif_cre::dgp::{master_block, oracle_sim, realistic_sim, McConfig, OracleGrid};
use hoif_cre::estimators::{estimate_all, EstimatorKind, ObservedDataset};
use hoif_cre::io::{read_dataset, read_population, write_csv, EstimateRow};
use hoif_cre::moments::{
    bias_adj2, bias_db, efficiency_criterion, exact_var_adj2, moments_adj3, nu_f, nu_f_dagger,
    var_unadj, FixedPopulation,
};
use hoif_cre::randomization::{Assignment, Design};
use hoif_cre::varest::{wald_ci, VarEstKind, VarEstWorkspace};
use hoif_cre::Error;
use serde::Serialize;
use serde_json::{json, Value};

/// Tolerance of `enum-check`.
const ENUM_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "hoif", version, about = "Covariate-adjusted estimators for completely randomized experiments")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DesignArg {
    Cre,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum VarestArg {
    Unbiased,
    Conservative,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimates, standard errors and Wald intervals for one dataset.
    Estimate {
        /// CSV with header y,t,x1,...,xp.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "cre")]
        design: DesignArg,
        /// Treatment probability; required for bernoulli, checked against n1/n for cre.
        #[arg(long)]
        pi1: Option<f64>,
        /// Number of treated units under cre (default: the count in the data).
        #[arg(long)]
        n1: Option<usize>,
        /// Comma-separated estimator names.
        #[arg(long, value_delimiter = ',', default_value = "unadj,adj,adj2,adj2dagger,db,adj3")]
        estimators: Vec<String>,
        #[arg(long, value_enum, default_value = "both")]
        varest: VarestArg,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form bias and variance at a fixed population.
    Moments {
        /// CSV with header y1,x1,...,xp.
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Formula-only grid of relative efficiencies.
    OracleSim {
        /// JSON grid configuration (missing fields take defaults).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo over assignments for one population.
    McSim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed forms against exhaustive enumeration on random populations.
    EnumCheck {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
    /// Search for outcomes on which the adjusted estimator wins.
    Adversarial {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Check(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Estimate {
            data,
            design,
            pi1,
            n1,
            estimators,
            varest,
            level,
            out,
        } => cmd_estimate(&data, design, pi1, n1, &estimators, varest, level, &out),
        Command::Moments { population, n1, out } => cmd_moments(&population, n1, &out),
        Command::OracleSim { config, out } => cmd_oracle_sim(config.as_deref(), &out),
        Command::McSim { config, out } => cmd_mc_sim(config.as_deref(), &out),
        Command::EnumCheck { n, n1, p, seed, reps } => cmd_enum_check(n, n1, p, seed, reps),
        Command::Adversarial { config, out } => cmd_adversarial(config.as_deref(), &out),
    }
}

fn with_path(path: &Path, e: Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn load_or_default<T>(path: Option<&Path>) -> CliResult<T>
where
    T: serde::de::DeserializeOwned + config::Validate + Default,
{
    match path {
        Some(p) => config::load(p).map_err(|e| with_path(p, e)),
        None => {
            let cfg = T::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

/// `<out stem>.manifest.json` next to the output file.
fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn write_manifest<T: Serialize>(
    out: &Path,
    command: &str,
    cfg: &T,
    seed: u64,
    extra: Value,
) -> CliResult<()> {
    let mut m = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "seed": seed,
        "config_digest": config::digest(cfg)?,
        "config": serde_json::to_value(cfg).map_err(Error::from)?,
        "output": out.display().to_string(),
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut m, extra) {
        dst.extend(src);
    }
    let path = manifest_path(out);
    let text = serde_json::to_string_pretty(&m).map_err(Error::from)?;
    std::fs::write(&path, text + "\n").map_err(|e| with_path(&path, e.into()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    data: &Path,
    design: DesignArg,
    pi1: Option<f64>,
    n1: Option<usize>,
    names: &[String],
    varest: VarestArg,
    level: f64,
    out: &Path,
) -> CliResult<()> {
    let table = read_dataset(data).map_err(|e| with_path(data, e))?;
    let n = table.y.len();
    let treated = table.t.iter().map(|&v| v as usize).sum::<usize>();
    let d = match design {
        DesignArg::Cre => {
            let n1 = n1.unwrap_or(treated);
            let d = Design::cre(n, n1)?;
            if let Some(p) = pi1 {
                if (p - d.pi1()).abs() > 1e-9 {
                    return Err(Failure::Usage(format!(
                        "--pi1 {p} disagrees with n1/n = {n1}/{n}"
                    )));
                }
            }
            d
        }
        DesignArg::Bernoulli => {
            let p = pi1.ok_or_else(|| Failure::Usage("--pi1 is required for bernoulli".into()))?;
            if n1.is_some() {
                return Err(Failure::Usage("--n1 applies only to cre".into()));
            }
            Design::bernoulli(n, p)?
        }
    };
    let kinds: Vec<EstimatorKind> = names
        .iter()
        .map(|s| s.parse::<EstimatorKind>())
        .collect::<Result<_, _>>()?;
    let obs = ObservedDataset::new(table.x, Assignment::new(table.t)?, table.y, d)?;
    let hat = HatMatrix::from_covariates(&obs.x)?;
    let cd = hoif_cre::design::center_design(&obs.x)?;
    let t = obs.t.as_slice();
    let est = estimate_all(t, &obs.y, &d, &hat, &cd);
    let ws = VarEstWorkspace::new(&hat);

    let mut rows = Vec::with_capacity(kinds.len());
    for k in kinds {
        let point = est.get(k);
        let interval = |kind: VarEstKind| -> CliResult<Option<(f64, f64, f64)>> {
            match ws.for_estimator(k, kind, t, &obs.y, &d) {
                Some(nu) if nu.is_finite() => {
                    let ci = wald_ci(point, nu, level)?;
                    if ci.clamped {
                        eprintln!(
                            "warning: {} variance estimate for {k} is negative ({nu:.3e}); clamped to 0",
                            kind.name()
                        );
                    }
                    Ok(Some((ci.se, ci.ci_lower, ci.ci_upper)))
                }
                _ => Ok(None),
            }
        };
        let main = if varest != VarestArg::Conservative {
            interval(VarEstKind::Unbiased)?
        } else {
            None
        };
        let cons = if varest != VarestArg::Unbiased {
            interval(VarEstKind::Conservative)?
        } else {
            None
        };
        rows.push(EstimateRow {
            estimator: k.name().into(),
            estimate: point,
            se: main.map(|v| v.0),
            ci_lower: main.map(|v| v.1),
            ci_upper: main.map(|v| v.2),
            se_conservative: cons.map(|v| v.0),
            ci_lower_conservative: cons.map(|v| v.1),
            ci_upper_conservative: cons.map(|v| v.2),
        });
    }
    write_csv(out, &rows).map_err(|e| with_path(out, e))
}

#[derive(Debug, Serialize)]
struct MomentRow {
    estimator: &'static str,
    kind: &'static str,
    metric: String,
    value: f64,
}

fn cmd_moments(path: &Path, n1: usize, out: &Path) -> CliResult<()> {
    let table = read_population(path).map_err(|e| with_path(path, e))?;
    let d = Design::cre(table.y1.len(), n1)?;
    let pop = FixedPopulation::new(table.x, table.y1)?;
    let mut rows = Vec::new();
    let mut push = |estimator, kind, metric: &str, value| {
        rows.push(MomentRow {
            estimator,
            kind,
            metric: metric.into(),
            value,
        })
    };
    push("population", "exact", "taubar", pop.taubar);
    push("unadj", "exact", "bias", 0.0);
    push("unadj", "exact", "variance", var_unadj(&pop, &d)?);
    push("adj2", "exact", "bias", bias_adj2(&pop, &d)?);
    let main = nu_f(&pop, &d)?;
    for (k, v) in &main.components {
        push("adj2", "main-term", k, *v);
    }
    push("adj2", "main-term", "variance", main.variance);
    let dag = nu_f_dagger(&pop, &d)?;
    push("adj2dagger", "main-term", "variance", dag.variance);
    push("db", "exact", "bias", bias_db(&pop, &d)?);
    push("db", "main-term", "variance", dag.variance);
    if d.n() >= 5 {
        push("adj2", "exact", "variance", exact_var_adj2(&pop, &d)?.variance);
        let a3 = moments_adj3(&pop, &d)?;
        push("adj3", "exact", "bias", a3.bias);
        push("adj3", "exact", "variance", a3.variance);
    }
    let ec = efficiency_criterion(&pop, &d)?;
    push("adj2", "main-term", "criterion_lhs", ec.lhs);
    push("adj2", "main-term", "criterion_rhs", ec.rhs);
    push("adj2", "main-term", "improves", ec.improves as u8 as f64);
    if let Ok(c) = optimal_center(&pop, &d) {
        push("population", "main-term", "optimal_center", c);
    }
    write_csv(out, &rows).map_err(|e| with_path(out, e))
}

fn cmd_oracle_sim(cfg_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let grid: OracleGrid = load_or_default(cfg_path)?;
    let rows = oracle_sim(&grid)?;
    write_csv(out, &rows).map_err(|e| with_path(out, e))?;
    write_manifest(out, "oracle-sim", &grid, grid.seed, json!({ "rows": rows.len() }))
}

fn cmd_mc_sim(cfg_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg: McConfig = load_or_default(cfg_path)?;
    let res = realistic_sim(&cfg)?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    let rows = res.rows();
    write_csv(out, &rows).map_err(|e| with_path(out, e))?;
    write_manifest(
        out,
        "mc-sim",
        &cfg,
        cfg.seed,
        json!({ "rows": rows.len(), "taubar": res.taubar, "p": res.p, "warnings": res.warnings }),
    )
}

fn cmd_enum_check(n: usize, n1: usize, p: usize, seed: u64, reps: usize) -> CliResult<()> {
    let report = enum_check(n, n1, p, seed, reps)?;
    let mut failed = Vec::new();
    for c in &report {
        match c.max_rel_err {
            Some(e) => {
                let ok = e <= ENUM_CHECK_TOL;
                println!("{:<10} {e:.3e} {}", c.formula, if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(c.formula.clone());
                }
            }
            None => println!("{:<10} skipped (n too small)", c.formula),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "discrepancy above {ENUM_CHECK_TOL:e} for {}",
            failed.join(", ")
        )))
    }
}

fn cmd_adversarial(cfg_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg: AdversarialConfig = load_or_default(cfg_path)?;
    let g = cfg.dgp();
    let x = CovariateMatrix::from_rows(&master_block(g.seed, g.n, g.p(), g.cov_decay))?;
    let hat = HatMatrix::from_covariates(&x)?;
    let d = g.design()?;
    let res = adversarial_search(&hat, &d, &cfg.search)?;
    write_csv(out, &res.witness_rows()).map_err(|e| with_path(out, e))?;
    let pop = FixedPopulation::new(x, res.v.clone())?;
    write_manifest(
        out,
        "adversarial",
        &cfg,
        cfg.search.seed,
        json!({
            "feasible": res.converged,
            "objective": res.objective,
            "constraint_slacks": res.constraint_slacks,
            "iterations": res.iterations,
            "feasible_starts": res.feasible_starts,
            "total_starts": res.total_starts,
            "nu_f": nu_f(&pop, &d)?.variance,
            "nu_f_dagger": nu_f_dagger(&pop, &d)?.variance,
            "var_unadj": var_unadj(&pop, &d)?,
        }),
    )?;
    if !res.converged {
        eprintln!("warning: no feasible point found across {} starts", res.total_starts);
    }
    Ok(())
}
