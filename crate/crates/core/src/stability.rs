//! Closed-form stability envelopes, their side conditions, and an ODE oracle.
//!
//! Both envelopes solve a Gronwall-type equality `y' = C A(t) y m(y)`: a log
//! modulus for the double-exponential bound, a square-root-log modulus for the
//! kinetic one. `gronwall_oracle` integrates those equalities directly.

use std::f64::consts::E;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::fmt17;
use crate::params::Domain;

/// Constants the estimates leave unquantified. Every emitted bound records them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_l: f64,
    pub c_kw: f64,
    pub c_hw: f64,
    pub c_loglip: f64,
    /// Whole-space log-Lipschitz constant.
    pub c_d: f64,
    pub c0: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c_l: 1.0, c_kw: 1.0, c_hw: 1.0, c_loglip: 1.0, c_d: 1.0, c0: 1.0 }
    }
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("constant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("C_L", self.c_l),
            ("C_KW", self.c_kw),
            ("C_HW", self.c_hw),
            ("C_loglip", self.c_loglip),
            ("C_d", self.c_d),
            ("c0", self.c0),
        ]
    }
}

/// `(4 sqrt d)^p`
pub fn torus_scale(p: f64, d: usize) -> f64 {
    (4.0 * (d as f64).sqrt()).powf(p)
}

/// `s log^p((4 sqrt d)^p / s)` below `(4 sqrt d / e)^p`, the constant `(4 p sqrt d / e)^p` above.
pub fn phi_p(s: f64, p: f64, d: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let root = 4.0 * (d as f64).sqrt();
    if s <= (root / E).powf(p) {
        s * (torus_scale(p, d) / s).ln().powf(p)
    } else {
        (root * p / E).powf(p)
    }
}

/// `C_p = 2 (1 + log p + p/2)`
pub fn cp_const(p: f64) -> f64 {
    2.0 * (1.0 + p.ln() + 0.5 * p)
}

/// Outcome of a side-condition check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    /// Initial-smallness clause.
    pub smallness: bool,
    /// Clause involving `int A`.
    pub integral: bool,
    /// Inner quantity in the regime where the formula is meaningful.
    pub in_regime: bool,
    /// Zero initial distance: the envelope is identically zero.
    pub vacuous: bool,
}

impl Condition {
    pub fn holds(&self) -> bool {
        self.vacuous || (self.smallness && self.integral && self.in_regime)
    }

    fn vacuous() -> Self {
        Self { smallness: true, integral: true, in_regime: true, vacuous: true }
    }
}

/// `W_p^p(0) <= (4 sqrt d / e)^p` and `|log(W_p^p(0) / (4 sqrt d)^p)| >= p exp(C_L int A)`.
///
/// The second clause keeps the envelope inside the branch of `phi_p` where the
/// log modulus applies, up to the end of the horizon.
pub fn loeper_condition(w0p: f64, int_a: f64, consts: &BoundConstants, p: f64, d: usize) -> Condition {
    if w0p == 0.0 {
        return Condition::vacuous();
    }
    let smallness = w0p <= (4.0 * (d as f64).sqrt() / E).powf(p);
    let lhs = (w0p / torus_scale(p, d)).ln().abs();
    let integral = lhs >= p * (consts.c_l * int_a).exp();
    Condition { smallness, integral, in_regime: w0p < torus_scale(p, d), vacuous: false }
}

/// `(4 sqrt d)^p exp(log(W_p^p(0) / (4 sqrt d)^p) exp(-C_L int A))`, written as
/// `W_p^p(0) exp(L expm1(-C_L int A))` so that `int A = 0` returns `w0p` exactly.
pub fn loeper_bound(w0p: f64, int_a: f64, consts: &BoundConstants, p: f64, d: usize) -> f64 {
    if w0p == 0.0 {
        return 0.0;
    }
    let l = (w0p / torus_scale(p, d)).ln();
    w0p * (l * (-consts.c_l * int_a).exp_m1()).exp()
}

/// `X = W_p^p(0) |log(W_p^p(0) / p)|`
pub fn kinetic_inner(w0p: f64, p: f64) -> f64 {
    if w0p == 0.0 {
        0.0
    } else {
        w0p * (w0p / p).ln().abs()
    }
}

/// `W_p^p(0) <= p c0` and `sqrt|log X| >= C_KW int A + 1`, with `X < 1` flagged.
pub fn kinetic_condition(w0p: f64, int_a: f64, consts: &BoundConstants, p: f64) -> Condition {
    if w0p == 0.0 {
        return Condition::vacuous();
    }
    let x = kinetic_inner(w0p, p);
    Condition {
        smallness: w0p <= p * consts.c0,
        integral: x.ln().abs().sqrt() >= consts.c_kw * int_a + 1.0,
        in_regime: x < 1.0,
        vacuous: false,
    }
}

/// `p exp(-(sqrt|log X| - C_KW int A)^2)`.
pub fn kinetic_bound(w0p: f64, int_a: f64, consts: &BoundConstants, p: f64) -> f64 {
    let x = kinetic_inner(w0p, p);
    if x == 0.0 {
        return 0.0;
    }
    let r = x.ln().abs().sqrt() - consts.c_kw * int_a;
    p * (-r * r).exp()
}

/// Kinetic constant `C_KW = C~/2` with
/// `C~ = p [1 + K (C_p + p log(4 sqrt d)) + C_HW]`, where `K = C` on the torus
/// and `K = 2^{1/p} C` on the whole space (there `c` is the whole-space constant).
pub fn ckw_formula(p: f64, d: usize, c: f64, c_hw: f64, domain: Domain) -> f64 {
    let k = match domain {
        Domain::Torus => c,
        Domain::WholeSpace => 2f64.powf(1.0 / p) * c,
    };
    let tilde = p * (1.0 + k * (cp_const(p) + p * (4.0 * (d as f64).sqrt()).ln()) + c_hw);
    0.5 * tilde
}

/// `(log|log delta|, sqrt|log delta|)`.
pub fn horizon_compare(delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < (-1.0f64).exp()) {
        return Err(Error::InvalidParameter(format!("horizons need 0 < delta < 1/e, got {delta}")));
    }
    let l = delta.ln().abs();
    Ok((l.ln(), l.sqrt()))
}

/// Largest `c0` on a log grid for which `s / |log s| <= tau <= c0` implies
/// `s <= p tau |log tau|` at every grid point below it.
pub fn c0_estimate(p: f64, points: usize) -> f64 {
    // s / |log s| is increasing on (0, 1); invert it by bisection in log s
    let inverse = |tau: f64| -> f64 {
        let (mut lo, mut hi) = (-745.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s = mid.exp();
            if s / mid.abs() <= tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    };
    let (lmin, lmax) = ((1e-15f64).ln(), (1.0 - 1e-9f64).ln());
    let mut best = 0.0;
    for k in 0..points {
        let tau = (lmin + (lmax - lmin) * k as f64 / (points - 1).max(1) as f64).exp();
        if inverse(tau) <= p * tau * tau.ln().abs() {
            best = tau;
        } else {
            break;
        }
    }
    best
}

/// Cumulative trapezoid integral, starting at zero.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        }
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Loeper,
    Kinetic,
}

impl FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loeper" => Ok(Flavor::Loeper),
            "kinetic" => Ok(Flavor::Kinetic),
            _ => Err(Error::InvalidParameter(format!("unknown oracle flavor '{s}'"))),
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Loeper => "loeper",
            Flavor::Kinetic => "kinetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrace {
    pub times: Vec<f64>,
    /// Envelope for `W_p^p` at each time.
    pub values: Vec<f64>,
    /// Index of the first sample where the state left its regime; the series is cut there.
    pub exited_at: Option<usize>,
}

/// RK4 integration of the equality case of the differential inequality.
///
/// Loeper flavor: `W' = C_L A W |log(W / (4 sqrt d)^p)|` from `W(0) = w0p`, valid
/// while `W <= (4 sqrt d / e)^p`. Kinetic flavor: `D' = 2 C_KW A D sqrt|log D|`
/// from `D(0) = X`, valid while `D <= 1/e`, reported as `p D`. `A` is linear
/// between samples; each interval takes `substeps` RK4 steps.
#[allow(clippy::too_many_arguments)]
pub fn gronwall_oracle(
    times: &[f64],
    a: &[f64],
    w0p: f64,
    consts: &BoundConstants,
    p: f64,
    d: usize,
    flavor: Flavor,
    substeps: usize,
) -> Result<OracleTrace> {
    if times.len() != a.len() || times.is_empty() {
        return Err(Error::InvalidParameter("time and A series must be nonempty and of equal length".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("times must be strictly increasing".into()));
    }
    if !(w0p >= 0.0) {
        return Err(Error::InvalidParameter(format!("initial distance must be nonnegative, got {w0p}")));
    }
    let scale = torus_scale(p, d);
    let (y0, limit, out_scale): (f64, f64, f64) = match flavor {
        Flavor::Loeper => (w0p, (4.0 * (d as f64).sqrt() / E).powf(p), 1.0),
        Flavor::Kinetic => (kinetic_inner(w0p, p), (-1.0f64).exp(), p),
    };
    let rhs = |a: f64, y: f64| -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match flavor {
            Flavor::Loeper => consts.c_l * a * y * (y / scale).ln().abs(),
            Flavor::Kinetic => 2.0 * consts.c_kw * a * y * y.ln().abs().sqrt(),
        }
    };
    let substeps = substeps.max(1);
    let mut values = vec![out_scale * y0];
    let mut y = y0;
    let mut exited_at = (y0 > limit).then_some(0);
    if exited_at.is_none() {
        for i in 1..times.len() {
            let (t0, t1) = (times[i - 1], times[i]);
            let h = (t1 - t0) / substeps as f64;
            let a_at = |t: f64| a[i - 1] + (a[i] - a[i - 1]) * (t - t0) / (t1 - t0);
            for k in 0..substeps {
                let t = t0 + k as f64 * h;
                let k1 = rhs(a_at(t), y);
                let k2 = rhs(a_at(t + 0.5 * h), y + 0.5 * h * k1);
                let k3 = rhs(a_at(t + 0.5 * h), y + 0.5 * h * k2);
                let k4 = rhs(a_at(t + h), y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            if !(y <= limit) {
                exited_at = Some(i);
                break;
            }
            values.push(out_scale * y);
        }
    }
    Ok(OracleTrace { times: times[..values.len()].to_vec(), values, exited_at })
}

/// Measured distance against both envelopes along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrace {
    pub times: Vec<f64>,
    pub wp_measured: Vec<f64>,
    pub loeper: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub int_a: Vec<f64>,
    /// Side conditions on `[0, t]`.
    pub cond_loeper: Vec<bool>,
    pub cond_kinetic: Vec<bool>,
    /// `D_p > 1/e` at the sample.
    pub dp_out_of_regime: Vec<bool>,
    pub constants: BoundConstants,
    pub w0p: f64,
}

/// One sample where the measured distance exceeds an envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub flavor: Flavor,
    /// Some regime or side-condition flag is raised at the sample.
    pub flagged: bool,
}

impl BoundTrace {
    pub const CSV_HEADER: &'static str = "t,Wp_measured,loeper_bound,kinetic_bound,intA,cond_loeper,cond_kinetic";

    /// Assembles the trace; `int_a[i]` is `int_0^{t_i} A`, `dp` the flow distance.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        times: &[f64],
        wp_measured: &[f64],
        int_a: &[f64],
        dp: &[f64],
        w0p: f64,
        consts: BoundConstants,
        p: f64,
        d: usize,
    ) -> Result<Self> {
        let n = times.len();
        if wp_measured.len() != n || int_a.len() != n || dp.len() != n {
            return Err(Error::InvalidParameter("bound trace columns differ in length".into()));
        }
        consts.validate()?;
        let loeper = int_a.iter().map(|&ia| loeper_bound(w0p, ia, &consts, p, d)).collect();
        let kinetic = int_a.iter().map(|&ia| kinetic_bound(w0p, ia, &consts, p)).collect();
        let cond_loeper = int_a.iter().map(|&ia| loeper_condition(w0p, ia, &consts, p, d).holds()).collect();
        let cond_kinetic = int_a.iter().map(|&ia| kinetic_condition(w0p, ia, &consts, p).holds()).collect();
        let dp_out_of_regime = dp.iter().map(|&v| v > (-1.0f64).exp()).collect();
        Ok(Self {
            times: times.to_vec(),
            wp_measured: wp_measured.to_vec(),
            loeper,
            kinetic,
            int_a: int_a.to_vec(),
            cond_loeper,
            cond_kinetic,
            dp_out_of_regime,
            constants: consts,
            w0p,
        })
    }

    /// Samples where the measurement exceeds an envelope by more than `slack`.
    pub fn violations(&self, slack: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        for i in 0..self.times.len() {
            let m = self.wp_measured[i] - slack.get(i).copied().unwrap_or(0.0);
            let any_flag = self.dp_out_of_regime[i];
            if m > self.loeper[i] {
                out.push(Violation { index: i, flavor: Flavor::Loeper, flagged: any_flag || !self.cond_loeper[i] });
            }
            if m > self.kinetic[i] {
                out.push(Violation { index: i, flavor: Flavor::Kinetic, flagged: any_flag || !self.cond_kinetic[i] });
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt17(self.times[i]),
                fmt17(self.wp_measured[i]),
                fmt17(self.loeper[i]),
                fmt17(self.kinetic[i]),
                fmt17(self.int_a[i]),
                self.cond_loeper[i] as u8,
                self.cond_kinetic[i] as u8
            )?;
        }
        Ok(())
    }
}

/// Largest common `C = C_L = C_KW` for which both side conditions hold at the
/// start of a run whose total `int A` is `int_a_total`. `None` when no positive
/// value works; `+inf` when `int_a_total = 0` and both hold.
pub fn fit_common_constant(w0p: f64, int_a_total: f64, p: f64, d: usize, c0: f64) -> Option<f64> {
    if !(w0p > 0.0) {
        return Some(f64::INFINITY);
    }
    if w0p > (4.0 * (d as f64).sqrt() / E).powf(p) || w0p > p * c0 {
        return None;
    }
    let x = kinetic_inner(w0p, p);
    if x >= 1.0 {
        return None;
    }
    let room_l = ((w0p / torus_scale(p, d)).ln().abs() / p).ln();
    let room_kw = x.ln().abs().sqrt() - 1.0;
    let room = room_l.min(room_kw);
    if room < 0.0 {
        return None;
    }
    if int_a_total == 0.0 {
        return Some(f64::INFINITY);
    }
    let c = room / int_a_total;
    (c > 0.0).then_some(c)
}
