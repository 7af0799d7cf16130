//! One-dimensional transport between grid densities via quantile functions.
//!
//! Densities are piecewise constant on their cells, so CDFs and quantile functions
//! are piecewise linear and every transport cost below is integrated exactly.
//! On the torus quantiles are lifted to the real line (`Q(u+1) = Q(u) + 1`) and the
//! optimal coupling is the quantile coupling shifted by the best cut `s`.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::measure::EmpiricalMeasure;
use crate::numeric::{compensated_sum, golden_section_min};
use crate::params::Domain;

const MASS_MISMATCH_TOL: f64 = 1e-8;
const CUT_CANDIDATES: usize = 64;

/// Quantile function of a 1D density (piecewise linear) or of atoms (step).
enum Pieces {
    /// Cells of width `h` starting at `x0`.
    Linear { x0: f64, h: f64 },
    /// Sorted atom positions.
    Step { points: Vec<f64> },
}

struct Quantile {
    pieces: Pieces,
    /// Normalized cumulative mass at piece boundaries, `cum[0] = 0`, `cum[n] = 1`.
    cum: Vec<f64>,
    lifted: bool,
}

fn normalized_cumsum(masses: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut cum = vec![0.0];
    let mut acc = 0.0;
    let mut comp = 0.0;
    for m in masses {
        // Kahan running sum keeps cum[n] at 1 to rounding
        let y = m - comp;
        let t = acc + y;
        comp = (t - acc) - y;
        acc = t;
        cum.push(acc);
    }
    let total = acc;
    for c in &mut cum {
        *c /= total;
    }
    let last = cum.len() - 1;
    cum[last] = 1.0;
    cum
}

impl Quantile {
    fn new(rho: &GridDensity) -> Self {
        let grid = rho.grid();
        let h = grid.cell_size();
        let cum = normalized_cumsum(rho.values().iter().map(|v| v * h));
        Self { pieces: Pieces::Linear { x0: grid.origin()[0], h }, cum, lifted: grid.domain() == Domain::Torus }
    }

    fn atoms(positions: &[f64], weights: &[f64], lifted: bool) -> Self {
        let mut order: Vec<(f64, f64)> = positions
            .iter()
            .zip(weights)
            .map(|(&x, &w)| (if lifted { x.rem_euclid(1.0) } else { x }, w))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cum = normalized_cumsum(order.iter().map(|a| a.1));
        Self { pieces: Pieces::Step { points: order.into_iter().map(|a| a.0).collect() }, cum, lifted }
    }

    /// Affine form `(intercept, slope)` of `u -> Q(u - shift)` on the piece containing `u`.
    fn affine_at(&self, u: f64, shift: f64) -> (f64, f64) {
        let v = u - shift;
        let (m, r) = if self.lifted {
            let m = v.floor();
            (m, v - m)
        } else {
            (0.0, v.clamp(0.0, 1.0))
        };
        let n = self.cum.len() - 1;
        let k = self.cum.partition_point(|&c| c <= r).clamp(1, n) - 1;
        match &self.pieces {
            Pieces::Step { points } => (points[k] + m, 0.0),
            Pieces::Linear { x0, h } => {
                let w = self.cum[k + 1] - self.cum[k];
                let base = x0 + k as f64 * h + m;
                if w <= 0.0 {
                    return (base, 0.0);
                }
                let slope = h / w;
                (base - (shift + m + self.cum[k]) * slope, slope)
            }
        }
    }

    /// CDF at `x` (lifted on the torus); linear pieces only.
    fn cdf(&self, x: f64) -> f64 {
        let Pieces::Linear { x0, h } = self.pieces else {
            unreachable!("cdf of atoms is not needed")
        };
        let n = self.cum.len() - 1;
        let t = (x - x0) / h;
        let (m, t) = if self.lifted {
            let m = (t / n as f64).floor();
            (m, t - m * n as f64)
        } else {
            (0.0, t.clamp(0.0, n as f64))
        };
        let k = (t.floor() as usize).min(n - 1);
        let frac = t - k as f64;
        m + self.cum[k] + frac * (self.cum[k + 1] - self.cum[k])
    }
}

/// Breakpoints on `[0,1]` where both `Q1(u)` and `Q2(u - shift)` are affine in between.
fn breakpoints(q1: &Quantile, q2: &Quantile, shift: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(q1.cum.len() + q2.cum.len() + 2);
    pts.extend_from_slice(&q1.cum);
    for &c in &q2.cum {
        let u = c + shift;
        let u = if q2.lifted { u.rem_euclid(1.0) } else { u };
        if (0.0..=1.0).contains(&u) {
            pts.push(u);
        }
    }
    pts.push(0.0);
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `int_a^b |alpha + beta u|^p du`.
fn abs_affine_pow_integral(alpha: f64, beta: f64, a: f64, b: f64, p: f64) -> f64 {
    let len = b - a;
    let mid = alpha + beta * 0.5 * (a + b);
    if beta == 0.0 {
        return len * alpha.abs().powf(p);
    }
    if beta.abs() * len <= 1e-6 * mid.abs() {
        // near-constant piece; the antiderivative difference would cancel
        let curv = p * (p - 1.0) * mid.abs().powf(p - 2.0) * (beta * len).powi(2) / 24.0;
        return len * (mid.abs().powf(p) + curv);
    }
    let anti = |y: f64| y * y.abs().powf(p) / (p + 1.0);
    (anti(alpha + beta * b) - anti(alpha + beta * a)) / beta
}

/// `int_0^1 |Q2(u - shift) - Q1(u)|^p du`.
fn quantile_cost(q1: &Quantile, q2: &Quantile, shift: f64, p: f64) -> f64 {
    let pts = breakpoints(q1, q2, shift);
    compensated_sum(pts.windows(2).filter(|w| w[1] > w[0]).map(|w| {
        let mid = 0.5 * (w[0] + w[1]);
        let (a1, b1) = q1.affine_at(mid, 0.0);
        let (a2, b2) = q2.affine_at(mid, shift);
        abs_affine_pow_integral(a2 - a1, b2 - b1, w[0], w[1], p)
    }))
}

fn check_pair(rho1: &GridDensity, rho2: &GridDensity) -> Result<()> {
    if rho1.grid().dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: rho1.grid().dim() });
    }
    rho1.grid().check_same(rho2.grid())?;
    if (rho1.mass() - rho2.mass()).abs() > MASS_MISMATCH_TOL {
        return Err(Error::MassMismatch(rho1.mass(), rho2.mass()));
    }
    if !(rho1.mass() > 0.0) {
        return Err(Error::InvalidParameter("densities carry no mass".into()));
    }
    Ok(())
}

/// Best cut for the lifted quantile coupling; zero on the whole line.
fn optimal_shift(q1: &Quantile, q2: &Quantile, p: f64) -> f64 {
    if !q1.lifted {
        return 0.0;
    }
    // the cost is convex in the shift and the optimum lies in the range of F1 - F2
    let (lo, hi) = match (&q1.pieces, &q2.pieces) {
        (Pieces::Linear { .. }, Pieces::Linear { .. }) if q1.cum.len() == q2.cum.len() => {
            let diffs = q1.cum.iter().zip(&q2.cum).map(|(a, b)| a - b);
            diffs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), d| (l.min(d), h.max(d)))
        }
        _ => (-1.0, 1.0),
    };
    if hi - lo <= 1e-15 {
        return lo;
    }
    let cands: Vec<f64> = (0..=CUT_CANDIDATES).map(|k| lo + (hi - lo) * k as f64 / CUT_CANDIDATES as f64).collect();
    let costs: Vec<f64> = cands.iter().map(|&s| quantile_cost(q1, q2, s, p)).collect();
    let best = (0..costs.len()).fold(0, |b, k| if costs[k] < costs[b] { k } else { b });
    let a = cands[best.saturating_sub(1)];
    let b = cands[(best + 1).min(CUT_CANDIDATES)];
    let (s, fs) = golden_section_min(|s| quantile_cost(q1, q2, s, p), a, b, 1e-13);
    if fs <= costs[best] {
        s
    } else {
        cands[best]
    }
}

/// Optimal 1D map between two densities on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    /// `T` at each cell centre. On the torus values are lifted (not reduced mod 1),
    /// so the sequence is non-decreasing with total increase 1.
    pub map: Vec<f64>,
    /// Cut of the periodic quantile coupling; zero on the whole line.
    pub shift: f64,
    /// Transport cost `W_p^p` of the map per unit mass.
    pub cost: f64,
}

/// Monotone (quantile) rearrangement pushing `rho1` to `rho2`.
pub fn monotone_rearrangement_1d(rho1: &GridDensity, rho2: &GridDensity, p: f64) -> Result<MonotoneMap> {
    check_pair(rho1, rho2)?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent must lie in (1, inf), got {p}")));
    }
    let q1 = Quantile::new(rho1);
    let q2 = Quantile::new(rho2);
    let shift = optimal_shift(&q1, &q2, p);
    let grid = rho1.grid();
    let map = (0..grid.n())
        .map(|i| {
            let u = q1.cdf(grid.center_1d(i, 0));
            let (a, b) = q2.affine_at(u, shift);
            a + b * u
        })
        .collect();
    let cost = quantile_cost(&q1, &q2, shift, p);
    Ok(MonotoneMap { map, shift, cost })
}

/// `W_p` between two 1D grid densities of equal mass (per unit mass).
pub fn wp_1d(rho1: &GridDensity, rho2: &GridDensity, p: f64) -> Result<f64> {
    Ok(monotone_rearrangement_1d(rho1, rho2, p)?.cost.max(0.0).powf(1.0 / p))
}

/// `W_p^p` between the position marginals of two 1D empirical measures.
///
/// Exact for the discrete problem: on the line the quantile coupling is optimal,
/// on the circle the lifted quantile coupling with the best cut is.
pub fn position_wp_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64, domain: Domain) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu.dim().max(nu.dim()) });
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent must lie in (1, inf), got {p}")));
    }
    let lifted = domain == Domain::Torus;
    let q1 = Quantile::atoms(mu.positions(), mu.weights(), lifted);
    let q2 = Quantile::atoms(nu.positions(), nu.weights(), lifted);
    let shift = optimal_shift(&q1, &q2, p);
    Ok(quantile_cost(&q1, &q2, shift, p))
}

/// Displacement interpolant `[(theta-1) T + (2-theta) Id]_# rho1` for `theta` in `[1, 2]`.
pub fn displacement_interpolant_1d(rho1: &GridDensity, rho2: &GridDensity, theta: f64, p: f64) -> Result<GridDensity> {
    if !(1.0..=2.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta must lie in [1, 2], got {theta}")));
    }
    let plan = monotone_rearrangement_1d(rho1, rho2, p)?;
    let q1 = Quantile::new(rho1);
    let q2 = Quantile::new(rho2);
    let (w1, w2) = (2.0 - theta, theta - 1.0);

    // pieces of Q_theta(u) = w1 Q1(u) + w2 Q2(u - s) on [0,1]
    let pts = breakpoints(&q1, &q2, plan.shift);
    let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(pts.len());
    for w in pts.windows(2).filter(|w| w[1] > w[0]) {
        let mid = 0.5 * (w[0] + w[1]);
        let (a1, b1) = q1.affine_at(mid, 0.0);
        let (a2, b2) = q2.affine_at(mid, plan.shift);
        let (a, b) = (w1 * a1 + w2 * a2, w1 * b1 + w2 * b2);
        pieces.push((w[0], w[1], a + b * w[0], a + b * w[1]));
    }
    let lifted = q1.lifted;
    let q_lo = pieces.first().map(|p| p.2).unwrap_or(0.0);
    let q_hi = pieces.last().map(|p| p.3).unwrap_or(0.0);

    // generalized inverse of Q_theta, i.e. the CDF of the interpolant
    let inverse = |y: f64| -> f64 {
        let (m, y) = if lifted {
            let m = (y - q_lo).floor();
            (m, y - m)
        } else {
            if y <= q_lo {
                return 0.0;
            }
            if y >= q_hi {
                return 1.0;
            }
            (0.0, y)
        };
        let k = pieces.partition_point(|pc| pc.3 < y);
        if k >= pieces.len() {
            return m + 1.0;
        }
        let (ua, ub, ya, yb) = pieces[k];
        let u = if y <= ya {
            ua
        } else if yb > ya {
            ua + (y - ya) / (yb - ya) * (ub - ua)
        } else {
            ub
        };
        m + u
    };

    let grid: &Grid = rho1.grid();
    let h = grid.cell_size();
    let x0 = grid.origin()[0];
    let edges: Vec<f64> = (0..=grid.n()).map(|k| inverse(x0 + k as f64 * h)).collect();
    let mass = rho1.mass();
    let values = edges.windows(2).map(|e| ((e[1] - e[0]).max(0.0)) * mass / h).collect();
    GridDensity::new(grid.clone(), values)
}
