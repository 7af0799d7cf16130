//! Implicit kinetic distance `D_p`, the kinetic Wasserstein distance and flow
//! quantities along a transported pairing.

use std::io::Write;

use crate::error::{Error, Result};
use crate::measure::{euclidean_distance, position_distance, EmpiricalMeasure, NORMALIZATION_TOL};
use crate::numeric::{compensated_sum, deterministic_sum, fmt17};
use crate::params::Params;
use crate::transport::{cost_matrix, solve_auto, CostKind, OtConfig, TransportPlan};

/// Weight `lambda(s) = |ln s|^{p/2}` on `(0,1)`, zero on `[1, inf)`, infinite at 0.
pub fn lambda_of(s: f64, p: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else if s <= 0.0 {
        f64::INFINITY
    } else {
        (-s.ln()).powf(0.5 * p)
    }
}

/// Normalization of the implicit equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// `s = lambda(s) Cx + Cv`
    Metric,
    /// `s = (lambda(s) Cx + Cv) / p`
    Flow,
}

impl Form {
    pub fn scale(self, p: f64) -> f64 {
        match self {
            Form::Metric => 1.0,
            Form::Flow => 1.0 / p,
        }
    }
}

/// Regime of a root: `0` for `dp <= 1/e`, `1` for `1/e < dp < 1`, `2` for the
/// `lambda = 0` extension `dp >= 1`.
pub fn regime_flag(dp: f64) -> u8 {
    if dp <= (-1.0f64).exp() {
        0
    } else if dp < 1.0 {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticReport {
    pub cx: f64,
    pub cv: f64,
    pub lambda: f64,
    pub dp: f64,
    pub residual: f64,
    pub regime_flag: u8,
    pub form: Form,
}

impl KineticReport {
    pub const CSV_HEADER: &'static str = "t,Cx,Cv,lambda,dp,residual,regime_flag";

    pub fn csv_row(&self, t: f64) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            fmt17(t),
            fmt17(self.cx),
            fmt17(self.cv),
            fmt17(self.lambda),
            fmt17(self.dp),
            fmt17(self.residual),
            self.regime_flag
        )
    }
}

/// Root of `g(s) = s - lambda(s) Cx' - Cv'` where primed costs carry the form's scale.
pub fn solve_dp_implicit(cx: f64, cv: f64, p: f64, form: Form) -> Result<KineticReport> {
    if cx.is_nan() || cv.is_nan() || p.is_nan() {
        return Err(Error::NonFinite("kinetic root input is NaN".into()));
    }
    if cx < 0.0 || cv < 0.0 || !cx.is_finite() || !cv.is_finite() {
        return Err(Error::InvalidParameter(format!("costs must be finite and nonnegative, got Cx={cx}, Cv={cv}")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent must lie in (1, inf), got {p}")));
    }
    let scale = form.scale(p);
    let (a, b) = (cx * scale, cv * scale);
    let g = |s: f64| {
        let lam = lambda_of(s, p);
        if a == 0.0 {
            s - b
        } else {
            s - lam * a - b
        }
    };
    let report = |dp: f64| {
        let lambda = lambda_of(dp, p);
        let residual = if dp == 0.0 { 0.0 } else { g(dp).abs() };
        KineticReport { cx, cv, lambda, dp, residual, regime_flag: regime_flag(dp), form }
    };

    if a == 0.0 && b == 0.0 {
        return Ok(report(0.0));
    }
    if b >= 1.0 || a == 0.0 {
        return Ok(report(b));
    }

    // g is strictly increasing on (0,1), g(0+) = -inf, g(1-) = 1 - b > 0
    let mut lo = f64::MIN_POSITIVE;
    let mut hi = 1.0f64;
    if g(lo) >= 0.0 {
        return Ok(report(lo));
    }
    loop {
        let mid = if hi / lo > 2.0 { (lo * hi).sqrt() } else { lo + 0.5 * (hi - lo) };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dp = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    Ok(report(dp))
}

/// Weighted pairs `((X1, V1), (X2, V2))` carrying a coupling between two solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEnsemble {
    dim: usize,
    pub x1: Vec<f64>,
    pub v1: Vec<f64>,
    pub x2: Vec<f64>,
    pub v2: Vec<f64>,
    weights: Vec<f64>,
    pub time: f64,
}

impl PairedEnsemble {
    pub fn new(
        dim: usize,
        x1: Vec<f64>,
        v1: Vec<f64>,
        x2: Vec<f64>,
        v2: Vec<f64>,
        weights: Vec<f64>,
        time: f64,
    ) -> Result<Self> {
        let n = weights.len();
        for (name, v) in [("x1", &x1), ("v1", &v1), ("x2", &x2), ("v2", &v2)] {
            if v.len() != n * dim {
                return Err(Error::InvalidParameter(format!(
                    "{name} has {} coordinates, expected {}",
                    v.len(),
                    n * dim
                )));
            }
        }
        crate::measure::check_probability_weights(&weights)?;
        Ok(Self { dim, x1, v1, x2, v2, weights, time })
    }

    /// Pairs each sample of `mu` with the same-index sample of `nu`, which must
    /// carry identical weights.
    pub fn from_measures(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, time: f64) -> Result<Self> {
        if mu.len() != nu.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), got: nu.len() });
        }
        if mu.dim() != nu.dim() {
            return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
        }
        if mu.weights().iter().zip(nu.weights()).any(|(a, b)| (a - b).abs() > NORMALIZATION_TOL) {
            return Err(Error::InvalidParameter("paired samples must carry equal weights".into()));
        }
        Self::new(
            mu.dim(),
            mu.positions().to_vec(),
            mu.velocities().to_vec(),
            nu.positions().to_vec(),
            nu.velocities().to_vec(),
            mu.weights().to_vec(),
            time,
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn slice(v: &[f64], i: usize, d: usize) -> &[f64] {
        &v[i * d..(i + 1) * d]
    }

    /// Left and right marginals.
    pub fn marginals(&self) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
        let left = EmpiricalMeasure::new(self.dim, self.x1.clone(), self.v1.clone(), self.weights.clone())?;
        let right = EmpiricalMeasure::new(self.dim, self.x2.clone(), self.v2.clone(), self.weights.clone())?;
        Ok((left, right))
    }

    /// Sub-ensemble on `indices` with renormalized weights.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim;
        let mut out = Self {
            dim: d,
            x1: Vec::with_capacity(indices.len() * d),
            v1: Vec::with_capacity(indices.len() * d),
            x2: Vec::with_capacity(indices.len() * d),
            v2: Vec::with_capacity(indices.len() * d),
            weights: Vec::with_capacity(indices.len()),
            time: self.time,
        };
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange(format!("pair {i} of {}", self.len())));
            }
            out.x1.extend_from_slice(Self::slice(&self.x1, i, d));
            out.v1.extend_from_slice(Self::slice(&self.v1, i, d));
            out.x2.extend_from_slice(Self::slice(&self.x2, i, d));
            out.v2.extend_from_slice(Self::slice(&self.v2, i, d));
            out.weights.push(self.weights[i]);
        }
        let total = compensated_sum(out.weights.iter().copied());
        if !(total > 0.0) {
            return Err(Error::EmptyMeasure);
        }
        out.weights.iter_mut().for_each(|w| *w /= total);
        Ok(out)
    }

    /// Per-pair `(|X1-X2|^p, |V1-V2|^p)`.
    pub fn pair_costs(&self, i: usize, params: &Params) -> (f64, f64) {
        let d = self.dim;
        let dx = position_distance(Self::slice(&self.x1, i, d), Self::slice(&self.x2, i, d), params.domain());
        let dv = euclidean_distance(Self::slice(&self.v1, i, d), Self::slice(&self.v2, i, d));
        (dx.powf(params.p()), dv.powf(params.p()))
    }

    /// Weighted position and velocity costs `(Cx, Cv)` with a fixed reduction order.
    pub fn costs(&self, params: &Params) -> (f64, f64) {
        let cx = deterministic_sum(self.len(), |i| self.weights[i] * self.pair_costs(i, params).0);
        let cv = deterministic_sum(self.len(), |i| self.weights[i] * self.pair_costs(i, params).1);
        (cx, cv)
    }

    pub const SNAPSHOT_HEADER_1D: &'static str = "i,X1,V1,X2,V2,w";

    /// Pairing file `i,X1,V1,X2,V2,w`; for `d > 1` each block expands to `X1_1..X1_d` etc.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.dim;
        let cols = |name: &str| -> Vec<String> {
            if d == 1 {
                vec![name.to_string()]
            } else {
                (1..=d).map(|k| format!("{name}_{k}")).collect()
            }
        };
        let mut header = vec!["i".to_string()];
        for name in ["X1", "V1", "X2", "V2"] {
            header.extend(cols(name));
        }
        header.push("w".into());
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            line.push_str(&i.to_string());
            for block in [&self.x1, &self.v1, &self.x2, &self.v2] {
                for &c in Self::slice(block, i, d) {
                    line.push(',');
                    line.push_str(&fmt17(c));
                }
            }
            line.push(',');
            line.push_str(&fmt17(self.weights[i]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// `Q_p = sum_i w_i (|X1_i - X2_i|^p + |V1_i - V2_i|^p)`.
pub fn qp_of_pairing(ensemble: &PairedEnsemble, params: &Params) -> f64 {
    let (cx, cv) = ensemble.costs(params);
    cx + cv
}

/// `D_p` along the pairing, in flow form.
pub fn dp_flow_quantity(ensemble: &PairedEnsemble, params: &Params) -> Result<KineticReport> {
    let (cx, cv) = ensemble.costs(params);
    solve_dp_implicit(cx, cv, params.p(), Form::Flow)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticConfig {
    pub max_iter: usize,
    /// Stop once `lambda` moves by less than this.
    pub lambda_tol: f64,
    pub ot: OtConfig,
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self { max_iter: 100, lambda_tol: 1e-10, ot: OtConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticDistance {
    /// `W_{lambda,p} = dp^{1/p}`.
    pub value: f64,
    pub report: KineticReport,
    pub plan: TransportPlan,
    pub iterations: usize,
    /// Root after each OT solve.
    pub trace: Vec<f64>,
}

/// `W_{lambda,p}(mu, nu)` with default settings.
pub fn kinetic_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, params: &Params) -> Result<f64> {
    Ok(kinetic_distance_with(mu, nu, params, &KineticConfig::default())?.value)
}

/// Alternates an OT solve under the cost `lambda |x-y|^p + |v-w|^p` (lambda frozen)
/// with a root update `lambda = lambda(D_p(plan))`.
///
/// Each round cannot increase the root, and a fixed point is a global minimizer of
/// `D_p(pi, lambda)` over couplings.
pub fn kinetic_distance_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    params: &Params,
    config: &KineticConfig,
) -> Result<KineticDistance> {
    let p = params.p();
    let mut lambda = 1.0;
    let mut trace = Vec::new();
    let mut best: Option<(KineticReport, TransportPlan)> = None;
    for iter in 1..=config.max_iter {
        let cost = cost_matrix(mu, nu, CostKind::KineticWeighted { lambda }, params)?;
        let plan = solve_auto(&cost, mu, nu, &config.ot)?;
        let (mut cx, mut cv) = (Vec::with_capacity(plan.coupling.len()), Vec::with_capacity(plan.coupling.len()));
        for (&(i, j), &m) in plan.coupling.pairs.iter().zip(&plan.coupling.mass) {
            let (a, b) = crate::transport::pair_terms(mu, i, nu, j, params);
            cx.push(m * a);
            cv.push(m * b);
        }
        let report = solve_dp_implicit(compensated_sum(cx), compensated_sum(cv), p, Form::Metric)?;
        trace.push(report.dp);
        let improved = best.as_ref().is_none_or(|(b, _)| report.dp < b.dp);
        if improved {
            best = Some((report, plan));
        }
        let (b, _) = best.as_ref().expect("set above");
        let next = b.lambda;
        if b.dp == 0.0 || (next - lambda).abs() < config.lambda_tol || (!improved && iter > 1) {
            let (report, plan) = best.expect("set above");
            return Ok(KineticDistance { value: report.dp.powf(1.0 / p), report, plan, iterations: iter, trace });
        }
        lambda = next;
    }
    Err(Error::AlternationNotConverged { iterations: config.max_iter, trace })
}
