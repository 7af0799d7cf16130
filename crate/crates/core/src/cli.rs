//! Command-line front end: `distance`, `simulate`, `verify`, `sweep`.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::{Table, Value};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fields::{
    helmholtz_project, lp_norm_field, loglip_modulus, random_smooth_density, sample_pairs, solve_force_free_space_1d,
    solve_poisson_torus, verify_field_estimate,
};
use crate::grid::{FieldGrid, Grid, GridDensity};
use crate::kinetic::{kinetic_distance_with, KineticDistance, KineticReport};
use crate::measure::EmpiricalMeasure;
use crate::numeric::fmt17;
use crate::params::{Domain, Params, Sign};
use crate::stability::{
    cumulative_trapezoid, fit_common_constant, gronwall_oracle, horizon_compare, kinetic_bound, kinetic_inner,
    loeper_bound, BoundConstants, BoundTrace, Flavor,
};
use crate::transport::oracle::{brute_force_assignment, brute_force_kinetic};
use crate::transport::{cost_matrix, position_wp_1d, solve_auto, solve_exact, solve_sinkhorn, CostKind};
use crate::vlasov::{uniform_times, Diagnostics, RunSummary, Simulator, WHOLE_SPACE_LENGTH, WHOLE_SPACE_ORIGIN};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_BLOWUP: i32 = 4;

/// Exit code for an error: bad input is 2, numerical failure is 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::NegativeWeight { .. }
        | Error::NotNormalized(_)
        | Error::EmptyMeasure
        | Error::IndexOutOfRange(_)
        | Error::Parse(_)
        | Error::Config(_)
        | Error::Io(_)
        | Error::Csv(_) => EXIT_USAGE,
        _ => EXIT_SOLVER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "kinwass", version, about = "Wasserstein and kinetic Wasserstein distances for Vlasov-Poisson")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a configuration key, e.g. `--set sim.p=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = split_assignment(item)?;
            config = config.with_override(key, value)?;
        }
        if let Some(seed) = self.seed {
            config = config.with_override("seed", &seed.to_string())?;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        Ok(config)
    }
}

fn split_assignment(item: &str) -> Result<(&str, &str)> {
    item.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{item}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Fields,
    Stability,
    Transport,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Fields => "fields",
            Suite::Stability => "stability",
            Suite::Transport => "transport",
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// W_p and kinetic W_{lambda,p} between two measure files.
    Distance {
        a: PathBuf,
        b: PathBuf,
        /// Exponent; defaults to `sim.p` of the configuration.
        #[arg(long)]
        p: Option<f64>,
        /// `torus` or `whole`; defaults to `sim.domain`.
        #[arg(long)]
        domain: Option<String>,
        /// Cross-check against permutation enumeration (uniform weights, at most 8 atoms).
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Paired particle run with diagnostics and bound traces.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Pass/fail checks for one module.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Cartesian product of simulations over listed configuration values.
    Sweep {
        /// `KEY=V1,V2,...`; repeat for more keys.
        #[arg(long, value_name = "KEY=V1,V2", required = true)]
        vary: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses arguments and runs, printing to standard output. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Distance { a, b, p, domain, oracle, common } => {
            let config = common.load()?;
            let p = p.unwrap_or(config.sim.params.p());
            let domain = match domain {
                Some(s) => s.parse()?,
                None => config.sim.params.domain(),
            };
            let opts = DistanceOptions { p, domain, oracle, kinetic: config.kinetic.clone() };
            let report = cmd_distance(&a, &b, &opts, out)?;
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                report.write_csv(File::create(dir.join("distance.csv"))?)?;
            }
            Ok(EXIT_OK)
        }
        Command::Simulate { common } => {
            let config = common.load()?;
            let result = cmd_simulate(&config, &config.output_dir)?;
            writeln!(out, "{}", result.status_line())?;
            Ok(if result.blowup.is_some() { EXIT_BLOWUP } else { EXIT_OK })
        }
        Command::Verify { suite, common } => {
            let config = common.load()?;
            let report = cmd_verify(&config, suite)?;
            for check in &report.checks {
                writeln!(out, "{}", check.line())?;
            }
            fs::create_dir_all(&config.output_dir)?;
            report.write_csv(File::create(config.output_dir.join("verify.csv"))?)?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Sweep { vary, common } => {
            let config = common.load()?;
            let axes = vary.iter().map(|v| parse_vary(v)).collect::<Result<Vec<_>>>()?;
            let rows = cmd_sweep(&config, &axes, &config.output_dir)?;
            for row in &rows {
                writeln!(out, "{}: {}", row.run, row.status)?;
            }
            Ok(if rows.iter().any(|r| r.status == "blowup") { EXIT_BLOWUP } else { EXIT_OK })
        }
    }
}

// ---------------------------------------------------------------------------
// distance

#[derive(Debug, Clone)]
pub struct DistanceOptions {
    pub p: f64,
    pub domain: Domain,
    pub oracle: bool,
    pub kinetic: crate::kinetic::KineticConfig,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { p: 2.0, domain: Domain::Torus, oracle: false, kinetic: Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct DistanceReport {
    pub p: f64,
    pub wp: f64,
    pub kinetic: KineticDistance,
    /// Enumeration values `(W_p, W_{lambda,p})` when requested.
    pub oracle: Option<(f64, f64)>,
}

impl DistanceReport {
    pub const CSV_HEADER: &'static str = "p,Wp,Wkin,Cx,Cv,lambda,residual,regime_flag,Wp_oracle,Wkin_oracle";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let r = &self.kinetic.report;
        let (wo, ko) = match self.oracle {
            Some((w, k)) => (fmt17(w), fmt17(k)),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt17(self.p),
            fmt17(self.wp),
            fmt17(self.kinetic.value),
            fmt17(r.cx),
            fmt17(r.cv),
            fmt17(r.lambda),
            fmt17(r.residual),
            r.regime_flag,
            wo,
            ko
        )?;
        Ok(())
    }
}

pub fn cmd_distance(a: &Path, b: &Path, opts: &DistanceOptions, out: &mut dyn Write) -> Result<DistanceReport> {
    let mu = EmpiricalMeasure::read_path(a)?;
    let nu = EmpiricalMeasure::read_path(b)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let params = Params::new(opts.p, mu.dim(), Sign::Repulsive, opts.domain)?;
    let report = distance_report(&mu, &nu, &params, opts)?;
    let r = &report.kinetic.report;
    writeln!(out, "W_p        {}", fmt17(report.wp))?;
    writeln!(out, "W_lambda_p {}", fmt17(report.kinetic.value))?;
    writeln!(out, "Cx         {}", fmt17(r.cx))?;
    writeln!(out, "Cv         {}", fmt17(r.cv))?;
    writeln!(out, "lambda     {}", fmt17(r.lambda))?;
    writeln!(out, "residual   {}", fmt17(r.residual))?;
    if let Some((w, k)) = report.oracle {
        writeln!(out, "oracle W_p        {}  (diff {:e})", fmt17(w), (w - report.wp).abs())?;
        writeln!(out, "oracle W_lambda_p {}  (diff {:e})", fmt17(k), (k - report.kinetic.value).abs())?;
    }
    Ok(report)
}

/// Distances between two measures, with optional enumeration cross-check.
pub fn distance_report(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    params: &Params,
    opts: &DistanceOptions,
) -> Result<DistanceReport> {
    let p = params.p();
    let cost = cost_matrix(mu, nu, CostKind::Phase, params)?;
    let wp = solve_auto(&cost, mu, nu, &opts.kinetic.ot)?.objective.max(0.0).powf(1.0 / p);
    let kinetic = kinetic_distance_with(mu, nu, params, &opts.kinetic)?;
    let oracle = if opts.oracle {
        let (_, w) = brute_force_assignment(&cost)?;
        let (_, k) = brute_force_kinetic(mu, nu, params)?;
        Some((w.max(0.0).powf(1.0 / p), k.dp.powf(1.0 / p)))
    } else {
        None
    };
    Ok(DistanceReport { p, wp, kinetic, oracle })
}

// ---------------------------------------------------------------------------
// simulate

/// Everything a simulation run produced.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub diagnostics: Vec<Diagnostics>,
    pub summary: RunSummary,
    pub blowup: Option<(f64, f64)>,
    pub bounds: Option<BoundTrace>,
    /// Common constant chosen when fitting was requested.
    pub fitted: Option<f64>,
    /// `int A` over the run on the snapshot grid and on the step grid.
    pub int_a_snapshot: f64,
    pub int_a_steps: f64,
}

impl SimulationResult {
    pub fn status(&self) -> &'static str {
        if self.blowup.is_some() {
            "blowup"
        } else {
            "completed"
        }
    }

    pub fn status_line(&self) -> String {
        match self.blowup {
            Some((t, sup)) => format!("blowup at t={} (sup rho {})", fmt17(t), fmt17(sup)),
            None => format!("completed {} snapshots", self.diagnostics.len()),
        }
    }

    /// Pairing cost standard errors of the subsample, one per snapshot.
    pub fn subsample_se(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.qp_sub_se).collect()
    }
}

/// Runs the configured pair and returns the diagnostics without writing files.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulationResult> {
    run_simulation(config, None)
}

/// Runs the configured pair and writes its artifacts into `out_dir`.
///
/// On blow-up the files hold the snapshots reached and the manifest status is
/// `blowup`; the result carries the time and density level.
pub fn cmd_simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<SimulationResult> {
    fs::create_dir_all(out_dir)?;
    let result = run_simulation(config, Some(out_dir))?;
    write_outputs(config, &result, out_dir)?;
    Ok(result)
}

fn run_simulation(config: &ExperimentConfig, snapshot_dir: Option<&Path>) -> Result<SimulationResult> {
    let sim = Simulator::new(config.sim.clone())?;
    let times = uniform_times(config.sim.t_end, config.snapshots);
    let mut diagnostics = Vec::with_capacity(times.len());
    let write_snapshots = config.snapshot_files && snapshot_dir.is_some();
    let summary = sim.run_with(&times, |snap| {
        if write_snapshots {
            let dir = snapshot_dir.expect("checked");
            let path = dir.join(format!("snapshot_{:03}.csv", diagnostics.len()));
            let mut w = BufWriter::new(File::create(path)?);
            snap.state.ensemble.write_snapshot(&mut w)?;
            w.flush()?;
        }
        diagnostics.push(snap.diagnostics);
        Ok(())
    })?;
    let blowup = summary.blowup.as_ref().map(|b| (b.time, b.sup));

    let ts: Vec<f64> = diagnostics.iter().map(|d| d.t).collect();
    let a_snap: Vec<f64> = diagnostics.iter().map(|d| d.a).collect();
    let int_a = cumulative_trapezoid(&ts, &a_snap);
    let int_a_snapshot = int_a.last().copied().unwrap_or(0.0);
    let last_step = ts.last().map_or(0, |t| (t / summary.dt).round() as usize).min(summary.a_trace.len().saturating_sub(1));
    let step_times: Vec<f64> = (0..=last_step).map(|k| k as f64 * summary.dt).collect();
    let int_a_steps = if summary.a_trace.is_empty() {
        0.0
    } else {
        cumulative_trapezoid(&step_times, &summary.a_trace[..=last_step]).last().copied().unwrap_or(0.0)
    };

    let params = &config.sim.params;
    let mut consts = config.bounds;
    let mut fitted = None;
    let bounds = if diagnostics.is_empty() {
        None
    } else {
        let wp: Vec<f64> = diagnostics.iter().map(|d| d.wp_sub).collect();
        let dp: Vec<f64> = diagnostics.iter().map(|d| d.dp).collect();
        let w0p = wp[0];
        if config.fit_constants {
            fitted = fit_common_constant(w0p, int_a_snapshot, params.p(), params.d(), consts.c0);
            if let Some(c) = fitted.filter(|c| c.is_finite()) {
                consts.c_l = c;
                consts.c_kw = c;
            }
        }
        Some(BoundTrace::new(&ts, &wp, &int_a, &dp, w0p, consts, params.p(), params.d())?)
    };
    Ok(SimulationResult { diagnostics, summary, blowup, bounds, fitted, int_a_snapshot, int_a_steps })
}

fn write_outputs(config: &ExperimentConfig, result: &SimulationResult, dir: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
    writeln!(w, "{}", Diagnostics::CSV_HEADER)?;
    for d in &result.diagnostics {
        writeln!(w, "{}", d.csv_row())?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("subsample.csv"))?);
    writeln!(w, "t,Wp_sub,Qp_sub,Qp_sub_se")?;
    for d in &result.diagnostics {
        writeln!(w, "{},{},{},{}", fmt17(d.t), fmt17(d.wp_sub), fmt17(d.qp_sub), fmt17(d.qp_sub_se))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("kinetic.csv"))?);
    writeln!(w, "{}", KineticReport::CSV_HEADER)?;
    for d in &result.diagnostics {
        writeln!(w, "{}", d.kinetic.csv_row(d.t))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("a_trace.csv"))?);
    writeln!(w, "step,t,A")?;
    for (k, a) in result.summary.a_trace.iter().enumerate() {
        writeln!(w, "{},{},{}", k, fmt17(k as f64 * result.summary.dt), fmt17(*a))?;
    }
    w.flush()?;

    if let Some(bounds) = &result.bounds {
        let mut w = BufWriter::new(File::create(dir.join("bounds.csv"))?);
        bounds.write_csv(&mut w)?;
        w.flush()?;
    }

    fs::write(dir.join("manifest.toml"), manifest(config, result).to_string())?;
    Ok(())
}

fn manifest(config: &ExperimentConfig, result: &SimulationResult) -> Table {
    let mut run = Table::new();
    run.insert("status".into(), Value::String(result.status().into()));
    run.insert("snapshots_written".into(), Value::Integer(result.diagnostics.len() as i64));
    run.insert("steps_completed".into(), Value::Integer(result.summary.a_trace.len().saturating_sub(1) as i64));
    if let Some((t, sup)) = result.blowup {
        run.insert("blowup_time".into(), Value::Float(t));
        run.insert("blowup_sup_rho".into(), Value::Float(sup));
    }
    run.insert("int_a_snapshot_grid".into(), Value::Float(result.int_a_snapshot));
    run.insert("int_a_step_grid".into(), Value::Float(result.int_a_steps));
    if let Some(b) = &result.bounds {
        run.insert("w0p".into(), Value::Float(b.w0p));
    }

    let mut constants = Table::new();
    let used = result.bounds.as_ref().map_or(config.bounds, |b| b.constants);
    for (name, v) in used.named() {
        constants.insert(name.into(), Value::Float(v));
    }
    constants.insert("fitted".into(), Value::Boolean(result.fitted.is_some_and(f64::is_finite)));

    let mut versions = Table::new();
    versions.insert("kinwass".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    versions.insert("manifest".into(), Value::Integer(1));

    let mut root = Table::new();
    root.insert("run".into(), Value::Table(run));
    root.insert("config".into(), Value::Table(config.to_table()));
    root.insert("constants".into(), Value::Table(constants));
    root.insert("versions".into(), Value::Table(versions));
    root
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Reported only; does not affect the exit status.
    pub informational: bool,
}

impl Check {
    fn at_most(suite: Suite, name: &str, measured: f64, threshold: f64) -> Self {
        Self { suite, name: name.into(), measured, threshold, pass: measured <= threshold, informational: false }
    }

    fn info(suite: Suite, name: &str, measured: f64) -> Self {
        Self { suite, name: name.into(), measured, threshold: f64::NAN, pass: true, informational: true }
    }

    pub fn line(&self) -> String {
        let tag = match (self.informational, self.pass) {
            (true, _) => "INFO",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        if self.informational {
            format!("{tag} {}/{} value={}", self.suite, self.name, fmt17(self.measured))
        } else {
            format!("{tag} {}/{} measured={} threshold={}", self.suite, self.name, fmt17(self.measured), fmt17(self.threshold))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub const CSV_HEADER: &'static str = "suite,check,measured,threshold,pass,informational";

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.checks {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                c.suite,
                c.name,
                fmt17(c.measured),
                fmt17(c.threshold),
                c.pass as u8,
                c.informational as u8
            )?;
        }
        Ok(())
    }
}

pub fn cmd_verify(config: &ExperimentConfig, suite: Suite) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::Fields => verify_fields(config)?,
        Suite::Stability => verify_stability(config)?,
        Suite::Transport => verify_transport(config)?,
    };
    Ok(VerifyReport { checks })
}

fn relative_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn verify_fields(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let s = Suite::Fields;
    let seed = config.seed;
    let p = config.sim.params.p();
    let sigma = config.sim.params.sigma();
    let mut checks = Vec::new();

    let g = Grid::torus(1, 256)?;
    let mut err: f64 = 0.0;
    for k in [1.0, 2.0, 4.0] {
        let tau = 2.0 * std::f64::consts::PI * k;
        let rho = GridDensity::new(g.clone(), (0..g.len()).map(|i| 1.0 + (tau * g.center_1d(i, 0)).cos()).collect())?;
        let sol = solve_poisson_torus(&rho, sigma)?;
        for i in 0..g.len() {
            let x = g.center_1d(i, 0);
            let exact = -(tau * x).cos() / (sigma.value() * tau * tau);
            err = err.max((sol.potential.values()[i] - exact).abs());
        }
    }
    checks.push(Check::at_most(s, "poisson_manufactured_max_error", err, 1e-10));

    let g2 = Grid::torus(2, 64)?;
    let c0 = random_smooth_density(&g2, seed ^ 0xa5, 3)?;
    let c1 = random_smooth_density(&g2, seed ^ 0x5a, 3)?;
    let u = FieldGrid::new(g2, vec![c0.values().to_vec(), c1.values().iter().map(|v| 2.0 * v - 1.0).collect()])?;
    let (grad, div_free) = helmholtz_project(&u)?;
    let (grad2, _) = helmholtz_project(&grad)?;
    let idem = grad2.sub(&grad)?.max_abs();
    let recompose = grad.add(&div_free)?.sub(&u)?.max_abs();
    let (nu, ng, nd) = (lp_norm_field(&u, 2.0)?, lp_norm_field(&grad, 2.0)?, lp_norm_field(&div_free, 2.0)?);
    let pyth = (nu * nu - ng * ng - nd * nd).abs();
    checks.push(Check::at_most(s, "helmholtz_max_identity_error", idem.max(recompose).max(pyth), 1e-10));

    let torus_params = |p: f64| Params::new(p, 1, sigma, Domain::Torus);
    if p == 2.0 {
        let params = torus_params(2.0)?;
        let grid = Grid::torus(1, config.sim.cells)?;
        let mut worst: f64 = 0.0;
        for i in 0..50u64 {
            let r1 = random_smooth_density(&grid, seed.wrapping_mul(1000).wrapping_add(2 * i), 4)?;
            let r2 = random_smooth_density(&grid, seed.wrapping_mul(1000).wrapping_add(2 * i + 1), 4)?;
            worst = worst.max(verify_field_estimate(&r1, &r2, &params, seed)?.ratio);
        }
        checks.push(Check::at_most(s, "field_estimate_max_ratio", worst, 1.05));
    } else {
        let params = torus_params(p)?;
        let mut worst: f64 = 0.0;
        for i in 0..10u64 {
            let ratio_at = |n: usize| -> Result<f64> {
                let grid = Grid::torus(1, n)?;
                let r1 = random_smooth_density(&grid, seed.wrapping_mul(1000).wrapping_add(2 * i), 4)?;
                let r2 = random_smooth_density(&grid, seed.wrapping_mul(1000).wrapping_add(2 * i + 1), 4)?;
                Ok(verify_field_estimate(&r1, &r2, &params, seed)?.ratio)
            };
            worst = worst.max(relative_change(ratio_at(256)?, ratio_at(1024)?));
        }
        checks.push(Check::at_most(s, "field_estimate_refinement_change", worst, 0.10));
    }

    let domain = config.sim.params.domain();
    let loglip_at = |n: usize| -> Result<f64> {
        let grid = match domain {
            Domain::Torus => Grid::torus(1, n)?,
            Domain::WholeSpace => Grid::whole_space(1, n, WHOLE_SPACE_LENGTH / n as f64, vec![WHOLE_SPACE_ORIGIN])?,
        };
        let rho = random_smooth_density(&grid, seed ^ 0x10, 3)?;
        let force = match domain {
            Domain::Torus => solve_poisson_torus(&rho, sigma)?.force,
            Domain::WholeSpace => solve_force_free_space_1d(&rho, sigma)?,
        };
        let pairs = sample_pairs(&grid, 2000, seed);
        Ok(loglip_modulus(&force, &rho, &pairs)?.c())
    };
    let (c_coarse, c_fine) = (loglip_at(256)?, loglip_at(1024)?);
    let change = if c_coarse.is_finite() && c_fine.is_finite() { relative_change(c_coarse, c_fine) } else { f64::INFINITY };
    checks.push(Check::at_most(s, "loglip_refinement_change", change, 0.15));
    Ok(checks)
}

fn verify_stability(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let s = Suite::Stability;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let consts = config.bounds;
    let (p, d) = (config.sim.params.p(), config.sim.params.d());
    let mut checks = Vec::new();

    let mut loeper_err: f64 = 0.0;
    let mut kinetic_err: f64 = 0.0;
    for _ in 0..100 {
        let w0p = 10f64.powf(-12.0 + 11.0 * rng.random::<f64>()) * p.min(1.0);
        loeper_err = loeper_err.max((loeper_bound(w0p, 0.0, &consts, p, d) - w0p).abs());
        let collapsed = p * w0p * (w0p / p).ln().abs();
        if kinetic_inner(w0p, p) < 1.0 {
            kinetic_err = kinetic_err.max(relative_change(kinetic_bound(w0p, 0.0, &consts, p), collapsed));
        }
    }
    checks.push(Check::at_most(s, "loeper_bound_at_zero_error", loeper_err, 0.0));
    checks.push(Check::at_most(s, "kinetic_bound_at_zero_rel_error", kinetic_err, 1e-12));

    let (h_loeper, h_kinetic) = horizon_compare(1e-8)?;
    let horizon_err = (h_loeper - 2.914).abs().max((h_kinetic - 4.292).abs());
    checks.push(Check::at_most(s, "horizon_1e-8_error", horizon_err, 1e-3));
    let mut min_gap = f64::INFINITY;
    for k in 4..=16 {
        let (a, b) = horizon_compare(10f64.powi(-k))?;
        min_gap = min_gap.min(b - a);
    }
    checks.push(Check { pass: min_gap > 0.0, ..Check::info(s, "horizon_min_gap", min_gap) }.hard(0.0));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (times, a, int_a) = random_a_series(&mut rng, 41);
        let w0p = 10f64.powf(-10.0 + 7.0 * rng.random::<f64>());
        let c = BoundConstants { c_l: 0.2 + rng.random::<f64>(), c_kw: 0.2 + rng.random::<f64>(), ..consts };
        for flavor in [Flavor::Loeper, Flavor::Kinetic] {
            let trace = gronwall_oracle(&times, &a, w0p, &c, p, d, flavor, 64)?;
            for (i, &v) in trace.values.iter().enumerate() {
                let closed = match flavor {
                    Flavor::Loeper => loeper_bound(w0p, int_a[i], &c, p, d),
                    Flavor::Kinetic => kinetic_bound(w0p, int_a[i], &c, p),
                };
                worst = worst.max(relative_change(v, closed));
            }
        }
    }
    checks.push(Check::at_most(s, "oracle_max_rel_deviation", worst, 0.01));

    let run = simulate(config)?;
    if let Some(bounds) = &run.bounds {
        let slack: Vec<f64> = run.subsample_se().iter().map(|se| 3.0 * se).collect();
        let violations = bounds.violations(&slack);
        let unflagged = violations.iter().filter(|v| !v.flagged).count();
        checks.push(Check::info(s, "run_violations", violations.len() as f64));
        checks.push(Check::at_most(s, "run_unflagged_violations", unflagged as f64, 0.0));
        let measured_max = bounds.wp_measured.iter().copied().fold(0.0, f64::max);
        checks.push(Check::info(s, "run_max_measured", measured_max));
    }
    Ok(checks)
}

impl Check {
    fn hard(mut self, threshold: f64) -> Self {
        self.informational = false;
        self.threshold = threshold;
        self
    }
}

/// Uniform times on `[0, 1]`, a positive piecewise linear `A` and its exact integral.
fn random_a_series(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let (base, amp, freq) = (0.2 + rng.random::<f64>(), 0.5 * rng.random::<f64>(), 1.0 + 3.0 * rng.random::<f64>());
    let a: Vec<f64> = times.iter().map(|t| base * (1.0 + amp * (freq * t).sin())).collect();
    let int_a = cumulative_trapezoid(&times, &a);
    (times, a, int_a)
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize, domain: Domain, uniform: bool) -> Result<EmpiricalMeasure> {
    let x: Vec<f64> = (0..n * d)
        .map(|_| match domain {
            Domain::Torus => rng.random::<f64>(),
            Domain::WholeSpace => 2.0 * rng.random::<f64>() - 0.5,
        })
        .collect();
    let v: Vec<f64> = (0..n * d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    if uniform {
        EmpiricalMeasure::uniform(d, x, v)
    } else {
        let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        EmpiricalMeasure::new(d, x, v, raw.iter().map(|w| w / total).collect())
    }
}

fn verify_transport(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let s = Suite::Transport;
    let params = config.sim.params;
    let (d, domain) = (params.d(), params.domain());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let mu = random_measure(&mut rng, n, d, domain, true)?;
        let nu = random_measure(&mut rng, n, d, domain, true)?;
        let cost = cost_matrix(&mu, &nu, CostKind::Phase, &params)?;
        let exact = solve_exact(&cost, &mu, &nu)?.objective;
        worst = worst.max((exact - brute_force_assignment(&cost)?.1).abs());
    }
    checks.push(Check::at_most(s, "exact_vs_enumeration_max_error", worst, 1e-9));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let mu = random_measure(&mut rng, n, d, domain, true)?;
        let nu = random_measure(&mut rng, n, d, domain, true)?;
        let kd = kinetic_distance_with(&mu, &nu, &params, &config.kinetic)?;
        worst = worst.max((kd.report.dp - brute_force_kinetic(&mu, &nu, &params)?.1.dp).abs());
    }
    checks.push(Check::at_most(s, "kinetic_vs_enumeration_max_error", worst, 1e-9));

    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mu = random_measure(&mut rng, 20, d, domain, false)?;
        let nu = random_measure(&mut rng, 25, d, domain, false)?;
        let cost = cost_matrix(&mu, &nu, CostKind::Phase, &params)?;
        let exact = solve_exact(&cost, &mu, &nu)?.objective;
        let entropic = solve_sinkhorn(&cost, &mu, &nu, 0.05, 1e-9, config.kinetic.ot.max_iter)?.objective;
        worst = worst.max(exact - entropic);
    }
    checks.push(Check::at_most(s, "exact_minus_sinkhorn_max", worst, 1e-12));

    if d == 1 {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let mu = random_measure(&mut rng, 40, 1, domain, false)?;
            let nu = random_measure(&mut rng, 30, 1, domain, false)?;
            let cost = cost_matrix(&mu, &nu, CostKind::PositionOnly, &params)?;
            let simplex = solve_exact(&cost, &mu, &nu)?.objective;
            worst = worst.max((position_wp_1d(&mu, &nu, params.p(), domain)? - simplex).abs());
        }
        checks.push(Check::at_most(s, "quantile_vs_simplex_max_error", worst, 1e-10));
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// sweep

/// Parses `KEY=V1,V2,...`.
pub fn parse_vary(item: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = split_assignment(item)?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("no values given for '{key}'")));
    }
    Ok((key.to_string(), values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub run: String,
    pub values: Vec<String>,
    pub status: String,
    pub last: Option<Diagnostics>,
}

/// Runs every combination (first key varies slowest) into `run_XXX` directories
/// and writes `sweep.csv`.
pub fn cmd_sweep(config: &ExperimentConfig, axes: &[(String, Vec<String>)], out_dir: &Path) -> Result<Vec<SweepRow>> {
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for (_, values) in axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    let configs = combos
        .iter()
        .map(|combo| {
            axes.iter().zip(combo).try_fold(config.clone(), |c, ((key, _), value)| c.with_override(key, value))
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (i, (combo, cfg)) in combos.into_iter().zip(&configs).enumerate() {
        let run = format!("run_{i:03}");
        let result = cmd_simulate(cfg, &out_dir.join(&run))?;
        rows.push(SweepRow { run, values: combo, status: result.status().into(), last: result.diagnostics.last().cloned() });
    }

    let mut w = BufWriter::new(File::create(out_dir.join("sweep.csv"))?);
    let keys: Vec<&str> = axes.iter().map(|a| a.0.as_str()).collect();
    writeln!(w, "run,{},status,t,Qp,Dp,Wp_sub", keys.join(","))?;
    for row in &rows {
        let tail = match &row.last {
            Some(d) => format!("{},{},{},{}", fmt17(d.t), fmt17(d.qp), fmt17(d.dp), fmt17(d.wp_sub)),
            None => ",,,".into(),
        };
        writeln!(w, "{},{},{},{}", row.run, row.values.join(","), row.status, tail)?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(extra: &str) -> ExperimentConfig {
        let base = "[sim]\nparticles = 2048\ncells = 64\ndt = 0.01\nt_end = 0.1\nsnapshots = 5\nsubsample = 64\n";
        ExperimentConfig::from_toml_str(&format!("{base}{extra}")).unwrap()
    }

    fn write_measure(dir: &Path, name: &str, m: &EmpiricalMeasure) -> PathBuf {
        let path = dir.join(name);
        m.write_csv(File::create(&path).unwrap()).unwrap();
        path
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Solver("x".into())), EXIT_SOLVER);
        assert_eq!(run(["kinwass", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["kinwass", "distance", "/nonexistent/a.csv", "/nonexistent/b.csv"]), EXIT_USAGE);
    }

    #[test]
    fn distance_same_file_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmpiricalMeasure::uniform(1, vec![0.1, 0.7, 0.4], vec![0.0, 1.0, -0.5]).unwrap();
        let a = write_measure(dir.path(), "a.csv", &m);
        let mut sink = Vec::new();
        let r = cmd_distance(&a, &a, &DistanceOptions::default(), &mut sink).unwrap();
        assert_eq!(r.wp, 0.0);
        assert_eq!(r.kinetic.value, 0.0);
        assert!(String::from_utf8(sink).unwrap().contains("W_lambda_p"));
    }

    #[test]
    fn distance_two_diracs() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_measure(dir.path(), "a.csv", &EmpiricalMeasure::dirac(&[0.1], &[0.0]).unwrap());
        let b = write_measure(dir.path(), "b.csv", &EmpiricalMeasure::dirac(&[0.9], &[0.5]).unwrap());
        let opts = DistanceOptions { p: 2.0, oracle: true, ..Default::default() };
        let r = cmd_distance(&a, &b, &opts, &mut Vec::new()).unwrap();
        // torus separation 0.2, velocity gap 0.5
        assert!((r.wp - (0.04f64 + 0.25).sqrt()).abs() < 1e-12);
        let (w, k) = r.oracle.unwrap();
        assert!((w - r.wp).abs() < 1e-12 && (k - r.kinetic.value).abs() < 1e-12);
    }

    #[test]
    fn identical_pair_has_zero_pairing_cost() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("family = \"identical\"\n");
        let result = cmd_simulate(&config, dir.path()).unwrap();
        assert!(result.diagnostics.iter().all(|d| d.qp <= 1e-20));
        let text = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), Diagnostics::CSV_HEADER);
        // header plus snapshots at t = 0, 0.02, ..., 0.1
        assert_eq!(text.lines().count(), 7);
        for f in ["bounds.csv", "a_trace.csv", "manifest.toml", "subsample.csv", "kinetic.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn blowup_exits_with_partial_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config("blowup_cap = 1.01\n");
        let out = dir.path().to_str().unwrap();
        let code = run(["kinwass", "simulate", "--out", out, "--set", "sim.particles=2048", "--set", "sim.cells=64",
            "--set", "sim.dt=0.01", "--set", "sim.t_end=0.1", "--set", "sim.subsample=64", "--set", "sim.blowup_cap=1.01"]);
        assert_eq!(code, EXIT_BLOWUP);
        let manifest: Table = fs::read_to_string(dir.path().join("manifest.toml")).unwrap().parse().unwrap();
        assert_eq!(manifest["run"]["status"].as_str(), Some("blowup"));
        assert!(cmd_simulate(&config, dir.path()).unwrap().blowup.is_some());
    }

    #[test]
    fn transport_suite_passes() {
        let report = cmd_verify(&small_config(""), Suite::Transport).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checks.len(), 4);
    }

    #[test]
    fn sweep_product() {
        let dir = tempfile::tempdir().unwrap();
        let axes = vec![parse_vary("seed=1,2").unwrap(), parse_vary("sim.family=identical,perturbed").unwrap()];
        let rows = cmd_sweep(&small_config(""), &axes, dir.path()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].values, vec!["1".to_string(), "perturbed".to_string()]);
        assert!(dir.path().join("run_003/diagnostics.csv").exists());
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert!(text.starts_with("run,seed,sim.family,status"));
        assert!(parse_vary("seed=").is_err());
    }
}
