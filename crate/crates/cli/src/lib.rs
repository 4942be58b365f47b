//! Command-line front end: argument and config handling, dispatch, output.

pub mod config;
pub mod grid;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use kerrwell::analysis::{
    detect_steps, plateau_midpoints, regime_map, staircase_sweep, temperature_scaling, turnover_sweep, validate, Regime,
    SweepOptions, CLASSIFIER_ORDER, STEP_DROP_LOG10,
};
use kerrwell::fock::{Cutoff, ManifoldCount};
use kerrwell::lindblad::LindbladOptions;
use kerrwell::rates::{RateVariant, SemiAnalyticOptions};
use kerrwell::spectrum::{resolve_cutoff, resolve_manifolds, spectrum_rows};
use kerrwell::wkb::{exact_min_gap, min_energy_gap, splitting_deep, splitting_near_barrier, Parity, RescaledParams};
use kerrwell::{solve_spectrum, SystemParams};

pub use grid::Grid;
use output::{fmt_f64, fmt_opt, open_sink, write_json, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "KERRWELL_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<kerrwell::Error> for CliError {
    fn from(e: kerrwell::Error) -> Self {
        match e {
            kerrwell::Error::InvalidParams(_) | kerrwell::Error::InvalidVariant(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "kerrwell", version, about = "Switching rates of the two-photon-driven Kerr oscillator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Manifold energies and tunnel splittings.
    #[command(args_override_self = true)]
    Spectrum(SpectrumArgs),
    /// Numerical and semianalytic switching rate against the drive.
    #[command(args_override_self = true)]
    Staircase(StaircaseArgs),
    /// Switching rate against damping, with per-manifold maxima.
    #[command(args_override_self = true)]
    Turnover(TurnoverArgs),
    /// Numerical rate and its log-log slope against nth/(1+nth).
    #[command(args_override_self = true)]
    Tempscan(TempscanArgs),
    /// Activation-mechanism labels over a drive x temperature grid.
    #[command(args_override_self = true)]
    Regimes(RegimesArgs),
    /// Semiclassical splittings against exact ones.
    #[command(args_override_self = true)]
    Wkb(WkbArgs),
    /// Structural invariant checks; exit 0 when every required check passes.
    #[command(args_override_self = true)]
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Output plumbing; not part of the physics config.
#[derive(Args, Debug, Clone)]
struct Io {
    /// Output file [default: standard output]
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Output format [default: csv, json for `regimes`]
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Flat `key = value` file of flag values; flags on the command line override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads [default: $KERRWELL_THREADS, else all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// No progress messages on stderr
    #[arg(long, short)]
    quiet: bool,
    /// Print the effective config in config-file form and exit
    #[arg(long)]
    dump_config: bool,
}

/// Model knobs shared by every command. Energies and rates share the units of `--kerr`.
#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct Model {
    /// Kerr nonlinearity
    #[arg(long, default_value_t = 1.0)]
    kerr: f64,
    /// Fixed Fock dimension [default: auto, doubled until the retained levels converge]
    #[arg(long)]
    dim: Option<usize>,
    /// Manifolds retained [default: floor(alpha^2/pi) + 4, capped by the Fock space]
    #[arg(long)]
    manifolds: Option<usize>,
    /// Level drift tolerated by the auto cutoff, in units of kerr
    #[arg(long, default_value_t = 1e-9)]
    cutoff_tol: f64,
}

impl Model {
    fn params(&self, eps2: f64, kappa: f64, nth: f64) -> SystemParams {
        let mut p = SystemParams::new(self.kerr, eps2, kappa, nth);
        p.cutoff = self.dim.map_or(Cutoff::Auto, Cutoff::Fixed);
        p.manifolds = self.manifolds.map_or(ManifoldCount::Auto, ManifoldCount::Fixed);
        p.cutoff_tol = self.cutoff_tol;
        p
    }
}

/// Solver knobs.
#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct Numerics {
    /// Largest Lindbladian sector that will be assembled
    #[arg(long, default_value_t = LindbladOptions::default().max_basis)]
    max_basis: usize,
    /// Sectors up to this size are diagonalized densely, larger ones by shift-invert Arnoldi
    #[arg(long, default_value_t = LindbladOptions::default().dense_limit)]
    dense_limit: usize,
    /// Krylov space dimension of the Arnoldi path
    #[arg(long, default_value_t = LindbladOptions::default().krylov_dim)]
    krylov_dim: usize,
    /// Warn when the next slow eigenvalue is closer than this multiple of the rate
    #[arg(long, default_value_t = LindbladOptions::default().separation_threshold)]
    separation_threshold: f64,
    /// Tunnel with delta^2/lambda instead of delta^2/mu
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    merge_lambda: bool,
    /// Keep the single-downward-step correction of the manifold populations
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    downward_correction: bool,
}

impl Numerics {
    fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            semi: SemiAnalyticOptions { merge_lambda: self.merge_lambda, downward_correction: self.downward_correction },
            lindblad: LindbladOptions {
                max_basis: self.max_basis,
                dense_limit: self.dense_limit,
                krylov_dim: self.krylov_dim,
                separation_threshold: self.separation_threshold,
            },
            ..SweepOptions::default()
        }
    }
}

/// Rate variant given by its label: all, dir, g, nh, casc(d), casc(inf).
#[derive(Clone, Copy, Debug, PartialEq)]
struct VariantName(RateVariant);

impl FromStr for VariantName {
    type Err = kerrwell::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(VariantName)
    }
}

impl Serialize for VariantName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.label())
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    /// Two-photon drive grid
    #[arg(long, default_value = "10")]
    eps2: Grid,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct StaircaseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    #[command(flatten)]
    #[serde(flatten)]
    numerics: Numerics,
    /// Two-photon drive grid
    #[arg(long, default_value = "1:10:0.1")]
    eps2: Grid,
    /// Single-photon loss rate
    #[arg(long, default_value_t = 0.025)]
    kappa: f64,
    /// Thermal occupation of the bath
    #[arg(long, default_value_t = 0.05)]
    nth: f64,
    /// Compute the Lindbladian rate
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    numerical: bool,
    /// Compute the semianalytic rate
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    semianalytic: bool,
    /// Also report per-manifold rates
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    per_manifold: bool,
    /// Extra rate variants, comma separated, e.g. `dir,casc(2),nh`
    #[arg(long, value_delimiter = ',')]
    variants: Vec<VariantName>,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct TurnoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    #[command(flatten)]
    #[serde(flatten)]
    numerics: Numerics,
    /// Two-photon drive
    #[arg(long, default_value_t = 3.0 * std::f64::consts::PI)]
    eps2: f64,
    /// Thermal occupation of the bath
    #[arg(long, default_value_t = 0.01)]
    nth: f64,
    /// Damping grid
    #[arg(long, conflicts_with = "kappa_log")]
    kappa: Option<Grid>,
    /// Damping grid in log10 [default: -5:0:0.125 when --kappa is absent]
    #[arg(long, allow_hyphen_values = true)]
    kappa_log: Option<Grid>,
    /// Compute the Lindbladian rate at every damping
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    numerical: bool,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct TempscanArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    #[command(flatten)]
    #[serde(flatten)]
    numerics: Numerics,
    /// Two-photon drive grid; each value gets its own temperature scan
    #[arg(long, default_value = "6.45")]
    eps2: Grid,
    /// Single-photon loss rate
    #[arg(long, default_value_t = 0.025)]
    kappa: f64,
    /// Grid of nth/(1+nth)
    #[arg(long, conflicts_with = "ratio_log")]
    ratio: Option<Grid>,
    /// Grid of log10 nth/(1+nth) [default: -4:-1:0.5 when --ratio is absent]
    #[arg(long, allow_hyphen_values = true)]
    ratio_log: Option<Grid>,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct RegimesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    #[command(flatten)]
    #[serde(flatten)]
    numerics: Numerics,
    /// Two-photon drive grid
    #[arg(long, default_value = "2:20")]
    eps2: Grid,
    /// Single-photon loss rate
    #[arg(long, default_value_t = 0.1)]
    kappa: f64,
    /// Thermal occupation grid
    #[arg(long, conflicts_with = "nth_log")]
    nth: Option<Grid>,
    /// Thermal occupation grid in log10 [default: -9:-1 when --nth is absent]
    #[arg(long, allow_hyphen_values = true)]
    nth_log: Option<Grid>,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct WkbArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    /// Two-photon drive grid; must exceed kerr
    #[arg(long, default_value = "4:12:1")]
    eps2: Grid,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

#[derive(Args, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ValidateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: Model,
    /// Two-photon drive
    #[arg(long, default_value_t = 8.0)]
    eps2: f64,
    /// Single-photon loss rate
    #[arg(long, default_value_t = 0.025)]
    kappa: f64,
    /// Thermal occupation of the bath
    #[arg(long, default_value_t = 0.05)]
    nth: f64,
    #[command(flatten)]
    #[serde(skip)]
    io: Io,
}

/// What a command produced.
struct Outcome {
    table: Table,
    result: Value,
    /// Auto cutoff and manifold count at each drive that was evaluated.
    resolved: Value,
    exit: i32,
}

fn to_value<T: Serialize>(x: &T) -> CliResult<Value> {
    serde_json::to_value(x).map_err(|e| CliError::Numerical(format!("serialization: {e}")))
}

fn resolved_at(model: &Model, eps2: &[f64]) -> Value {
    let rows: Vec<Value> = eps2
        .par_iter()
        .map(|&e| {
            let p = model.params(e, 0.0, 0.0);
            let dim = resolve_cutoff(&p);
            let m = dim.as_ref().ok().map(|&d| resolve_manifolds(&p, d));
            json!({
                "eps2": e,
                "fock_dim": dim.as_ref().ok(),
                "manifolds": m.and_then(|r| r.ok()),
                "error": dim.err().map(|e| e.to_string()),
            })
        })
        .collect();
    Value::Array(rows)
}

fn join(items: &[String]) -> String {
    items.join("; ")
}

fn run_spectrum(a: &SpectrumArgs) -> CliResult<Outcome> {
    let specs: Vec<_> = a
        .eps2
        .values()
        .par_iter()
        .map(|&e| solve_spectrum(&a.model.params(e, 0.0, 0.0)))
        .collect::<Result<_, _>>()?;
    let mut table =
        Table::new(&["eps2_over_k", "n", "energy_even_over_k", "energy_odd_over_k", "splitting_over_k", "gap_over_k", "fock_dim"]);
    let mut rows = Vec::new();
    for s in &specs {
        for r in spectrum_rows(s) {
            table.push(vec![
                fmt_f64(r.eps2_over_k),
                r.n.to_string(),
                fmt_f64(r.energy_even_over_k),
                fmt_f64(r.energy_odd_over_k),
                fmt_f64(r.splitting_over_k),
                fmt_opt(r.gap_over_k),
                s.fock_dim.to_string(),
            ]);
            rows.push(r);
        }
    }
    let resolved = Value::Array(
        specs.iter().map(|s| json!({"eps2": s.params.eps2, "fock_dim": s.fock_dim, "manifolds": s.len()})).collect(),
    );
    Ok(Outcome { table, result: json!({ "rows": to_value(&rows)? }), resolved, exit: EXIT_OK })
}

fn run_staircase(a: &StaircaseArgs) -> CliResult<Outcome> {
    let mut opts = a.numerics.sweep_options();
    opts.numerical = a.numerical;
    opts.semianalytic = a.semianalytic;
    opts.per_manifold = a.per_manifold;
    opts.variants = a.variants.iter().map(|v| v.0).collect();
    if !(opts.numerical || opts.semianalytic || !opts.variants.is_empty()) {
        return Err(CliError::Usage("nothing to compute: enable --numerical, --semianalytic or --variants".into()));
    }
    let base = a.model.params(a.eps2.values()[0], a.kappa, a.nth);
    let sweep = staircase_sweep(a.eps2.values(), &base, &opts)?;
    let gamma = if a.numerical { sweep.gamma_num() } else { sweep.gamma_semi() };
    let steps = detect_steps(a.eps2.values(), &gamma, STEP_DROP_LOG10);
    let plateaus: Vec<f64> = plateau_midpoints(gamma.len(), &steps).into_iter().map(|i| a.eps2.values()[i]).collect();

    let m = sweep.points.iter().map(|p| p.gamma_n_num.len().max(p.gamma_n_semi.len())).max().unwrap_or(0);
    let mut header: Vec<String> =
        ["eps2", "gamma_num", "gamma_semi", "fock_dim", "manifolds", "separation"].iter().map(|s| s.to_string()).collect();
    header.extend(a.variants.iter().map(|v| format!("gamma_{}", v.0.label())));
    if a.per_manifold {
        for n in 0..m {
            header.push(format!("gamma_num_{n}"));
            header.push(format!("gamma_semi_{n}"));
        }
    }
    header.push("warnings".into());
    header.push("errors".into());
    let mut table = Table { header, rows: Vec::new() };
    for p in &sweep.points {
        let mut row = vec![
            fmt_f64(p.value),
            fmt_opt(p.gamma_num),
            fmt_opt(p.gamma_semi),
            p.fock_dim.map(|d| d.to_string()).unwrap_or_default(),
            p.manifolds.map(|d| d.to_string()).unwrap_or_default(),
            fmt_opt(p.separation),
        ];
        row.extend(p.variants.iter().map(|v| fmt_opt(v.gamma)));
        if a.per_manifold {
            for n in 0..m {
                row.push(fmt_opt(p.gamma_n_num.get(n).copied()));
                row.push(fmt_opt(p.gamma_n_semi.get(n).copied()));
            }
        }
        row.push(join(&p.warnings));
        row.push(join(&p.errors));
        table.push(row);
    }
    let resolved = Value::Array(
        sweep.points.iter().map(|p| json!({"eps2": p.value, "fock_dim": p.fock_dim, "manifolds": p.manifolds})).collect(),
    );
    let exit = if sweep.points.iter().all(|p| !p.errors.is_empty()) { EXIT_NUMERICAL } else { EXIT_OK };
    let result = json!({
        "steps": to_value(&steps)?,
        "plateau_midpoints": plateaus,
        "sweep": to_value(&sweep)?,
    });
    Ok(Outcome { table, result, resolved, exit })
}

fn run_turnover(a: &TurnoverArgs) -> CliResult<Outcome> {
    let grid = match (&a.kappa, &a.kappa_log) {
        (Some(g), None) => g.values().to_vec(),
        (None, Some(g)) => g.pow10(),
        (None, None) => Grid::from_str("-5:0:0.125").map_err(CliError::Usage)?.pow10(),
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --kappa or --kappa-log".into())),
    };
    let mut opts = a.numerics.sweep_options();
    opts.numerical = a.numerical;
    let base = a.model.params(a.eps2, grid[0], a.nth);
    let r = turnover_sweep(&grid, &base, &opts)?;
    let m = r.maxima.len();
    let mut header: Vec<String> = ["kappa", "gamma_num", "gamma_semi"].iter().map(|s| s.to_string()).collect();
    header.extend((0..m).map(|n| format!("gamma_semi_{n}")));
    header.push("errors".into());
    let mut table = Table { header, rows: Vec::new() };
    for p in &r.sweep.points {
        let mut row = vec![fmt_f64(p.value), fmt_opt(p.gamma_num), fmt_opt(p.gamma_semi)];
        row.extend((0..m).map(|n| fmt_opt(p.gamma_n_semi.get(n).copied())));
        row.push(join(&p.errors));
        table.push(row);
    }
    let resolved = resolved_at(&a.model, &[a.eps2]);
    Ok(Outcome { table, result: to_value(&r)?, resolved, exit: EXIT_OK })
}

fn run_tempscan(a: &TempscanArgs) -> CliResult<Outcome> {
    let ratios = match (&a.ratio, &a.ratio_log) {
        (Some(g), None) => g.values().to_vec(),
        (None, Some(g)) => g.pow10(),
        (None, None) => Grid::from_str("-4:-1:0.5").map_err(CliError::Usage)?.pow10(),
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --ratio or --ratio-log".into())),
    };
    let opts = a.numerics.sweep_options().lindblad;
    let mut table = Table::new(&["eps2", "ratio", "nth", "gamma", "slope"]);
    let mut scans = Vec::new();
    for &e in a.eps2.values() {
        let pts = temperature_scaling(&a.model.params(e, a.kappa, 0.0), &ratios, &opts)?;
        for p in &pts {
            table.push(vec![fmt_f64(e), fmt_f64(p.ratio), fmt_f64(p.nth), fmt_opt(p.gamma), fmt_opt(p.slope)]);
        }
        scans.push(json!({ "eps2": e, "points": to_value(&pts)? }));
    }
    let resolved = resolved_at(&a.model, a.eps2.values());
    Ok(Outcome { table, result: Value::Array(scans), resolved, exit: EXIT_OK })
}

fn run_regimes(a: &RegimesArgs) -> CliResult<Outcome> {
    let nth = match (&a.nth, &a.nth_log) {
        (Some(g), None) => g.values().to_vec(),
        (None, Some(g)) => g.pow10(),
        (None, None) => Grid::from_str("-9:-1").map_err(CliError::Usage)?.pow10(),
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --nth or --nth-log".into())),
    };
    let opts = a.numerics.sweep_options();
    let base = a.model.params(a.eps2.values()[0], a.kappa, nth[0]);
    let labels = regime_map(a.eps2.values(), &nth, &base, &opts)?;
    let mut header = vec!["eps2".to_string(), "nth".into(), "label".into(), "gamma_num".into()];
    header.extend(CLASSIFIER_ORDER.iter().map(|r| format!("fraction_{}", r.name())));
    header.push("cause".into());
    let mut table = Table { header, rows: Vec::new() };
    for l in &labels {
        let mut row = vec![fmt_f64(l.params.eps2), fmt_f64(l.params.nth), l.label.name().to_string(), fmt_opt(l.gamma_num)];
        row.extend(CLASSIFIER_ORDER.iter().map(|r: &Regime| fmt_opt(l.fractions.iter().find(|(x, _)| x == r).map(|f| f.1))));
        row.push(l.cause.clone().unwrap_or_default());
        table.push(row);
    }
    let names: Vec<&str> = labels.iter().map(|l| l.label.name()).collect();
    let result = json!({
        "eps2": a.eps2.values(),
        "nth": nth,
        "layout": "row-major in nth: labels[i_nth * len(eps2) + i_eps2]",
        "labels": names,
        "points": to_value(&labels)?,
    });
    let resolved = resolved_at(&a.model, a.eps2.values());
    Ok(Outcome { table, result, resolved, exit: EXIT_OK })
}

fn run_wkb(a: &WkbArgs) -> CliResult<Outcome> {
    let kerr = a.model.kerr;
    let mut table = Table::new(&[
        "eps2",
        "alpha_sq",
        "n",
        "exact",
        "deep",
        "near_barrier",
        "a1",
        "above_barrier",
        "nearest_barrier",
    ]);
    let mut gaps = Vec::new();
    let mut resolved = Vec::new();
    for &e in a.eps2.values() {
        let spec = solve_spectrum(&a.model.params(e, 0.0, 0.0))?;
        let rp = RescaledParams::from_drive(kerr, e).map_err(|err| CliError::Usage(err.to_string()))?;
        let alpha_sq = e / kerr;
        let near: Vec<_> = (0..spec.len()).map(|n| splitting_near_barrier(n, &rp).ok()).collect();
        let nearest = near
            .iter()
            .enumerate()
            .filter_map(|(n, b)| b.map(|b| (n, b.a1.abs())))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .map(|x| x.0);
        for (n, m) in spec.manifolds.iter().enumerate() {
            let deep = if n >= 1 { splitting_deep(n, kerr, alpha_sq).ok() } else { None };
            table.push(vec![
                fmt_f64(e),
                fmt_f64(alpha_sq),
                n.to_string(),
                fmt_f64(m.splitting),
                fmt_opt(deep),
                fmt_opt(near[n].map(|b| b.delta)),
                fmt_opt(near[n].map(|b| b.a1)),
                near[n].map(|b| b.above_barrier.to_string()).unwrap_or_default(),
                (Some(n) == nearest).to_string(),
            ]);
        }
        gaps.push(json!({
            "eps2": e,
            "min_gap_odd_formula": min_energy_gap(kerr, alpha_sq, Parity::Odd),
            "min_gap_odd_exact": exact_min_gap(&spec.odd_energies),
            "min_gap_even_formula": min_energy_gap(kerr, alpha_sq, Parity::Even),
            "min_gap_even_exact": exact_min_gap(&spec.even_energies),
        }));
        resolved.push(json!({"eps2": e, "fock_dim": spec.fock_dim, "manifolds": spec.len()}));
    }
    let result = json!({ "min_gaps": gaps });
    Ok(Outcome { table, result, resolved: Value::Array(resolved), exit: EXIT_OK })
}

fn run_validate(a: &ValidateArgs) -> CliResult<Outcome> {
    let checks = validate(&a.model.params(a.eps2, a.kappa, a.nth))?;
    let mut table = Table::new(&["check", "value", "tolerance", "pass", "advisory"]);
    for c in &checks {
        table.push(vec![c.name.clone(), fmt_f64(c.value), fmt_f64(c.tolerance), c.pass.to_string(), c.advisory.to_string()]);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass && !c.advisory).map(|c| c.name.as_str()).collect();
    let exit = if failed.is_empty() {
        EXIT_OK
    } else {
        eprintln!("kerrwell validate: failed: {}", failed.join(", "));
        EXIT_NUMERICAL
    };
    Ok(Outcome {
        table,
        result: json!({ "checks": to_value(&checks)?, "failed": failed }),
        resolved: resolved_at(&a.model, &[a.eps2]),
        exit,
    })
}

#[derive(Serialize)]
struct Report<'a> {
    program: &'static str,
    version: &'static str,
    command: &'a str,
    config: Value,
    resolved: Value,
    result: Value,
}

fn setup_threads(requested: Option<usize>) -> CliResult<()> {
    let n = match requested {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        // A pool already exists when run() is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(command: &Command) -> CliResult<i32> {
    let (name, io, config, default_format, eps2_len) = match command {
        Command::Spectrum(a) => ("spectrum", &a.io, to_value(a)?, Format::Csv, a.eps2.values().len()),
        Command::Staircase(a) => ("staircase", &a.io, to_value(a)?, Format::Csv, a.eps2.values().len()),
        Command::Turnover(a) => ("turnover", &a.io, to_value(a)?, Format::Csv, 1),
        Command::Tempscan(a) => ("tempscan", &a.io, to_value(a)?, Format::Csv, a.eps2.values().len()),
        Command::Regimes(a) => ("regimes", &a.io, to_value(a)?, Format::Json, a.eps2.values().len()),
        Command::Wkb(a) => ("wkb", &a.io, to_value(a)?, Format::Csv, a.eps2.values().len()),
        Command::Validate(a) => ("validate", &a.io, to_value(a)?, Format::Csv, 1),
    };
    if io.dump_config {
        let text = config::dump(&config).map_err(CliError::Usage)?;
        print!("{text}");
        return Ok(EXIT_OK);
    }
    setup_threads(io.threads)?;
    let mut sink = open_sink(io.output.as_deref())
        .map_err(|e| CliError::Usage(format!("cannot open output: {e}")))?;
    let start = Instant::now();
    if !io.quiet {
        eprintln!("kerrwell {name}: {eps2_len} drive value(s), {} worker thread(s)", rayon::current_num_threads());
    }
    let outcome = match command {
        Command::Spectrum(a) => run_spectrum(a),
        Command::Staircase(a) => run_staircase(a),
        Command::Turnover(a) => run_turnover(a),
        Command::Tempscan(a) => run_tempscan(a),
        Command::Regimes(a) => run_regimes(a),
        Command::Wkb(a) => run_wkb(a),
        Command::Validate(a) => run_validate(a),
    }?;
    let written = match io.format.unwrap_or(default_format) {
        Format::Csv => outcome.table.write_csv(&mut sink),
        Format::Json => write_json(
            &mut sink,
            &Report {
                program: "kerrwell",
                version: env!("CARGO_PKG_VERSION"),
                command: name,
                config,
                resolved: outcome.resolved,
                result: outcome.result,
            },
        ),
    };
    written.and_then(|_| sink.flush()).map_err(|e| CliError::Numerical(format!("writing output: {e}")))?;
    if !io.quiet {
        eprintln!("kerrwell {name}: done in {:.1} s", start.elapsed().as_secs_f64());
    }
    Ok(outcome.exit)
}

fn config_path(command: &Command) -> Option<&PathBuf> {
    match command {
        Command::Spectrum(a) => a.io.config.as_ref(),
        Command::Staircase(a) => a.io.config.as_ref(),
        Command::Turnover(a) => a.io.config.as_ref(),
        Command::Tempscan(a) => a.io.config.as_ref(),
        Command::Regimes(a) => a.io.config.as_ref(),
        Command::Wkb(a) => a.io.config.as_ref(),
        Command::Validate(a) => a.io.config.as_ref(),
    }
}

fn parse(argv: &[String]) -> std::result::Result<Cli, clap::Error> {
    Cli::try_parse_from(argv)
}

/// Parses, merges the config file and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match config_path(&cli.command) {
        None => cli,
        Some(path) => {
            // argv[1] is the subcommand: the root command takes no options of its own.
            let rest = &argv[2..];
            let from_file = match config::expand_file(path, rest) {
                Ok(f) => f,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return EXIT_USAGE;
                }
            };
            let merged: Vec<String> = argv[..2].iter().cloned().chain(from_file).chain(rest.iter().cloned()).collect();
            match parse(&merged) {
                Ok(c) => c,
                Err(e) => {
                    let _ = e.print();
                    eprintln!("(while applying config file {})", path.display());
                    return EXIT_USAGE;
                }
            }
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            e.code()
        }
    }
}
