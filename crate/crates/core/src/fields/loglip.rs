use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{FieldGrid, Grid, GridDensity};
use crate::measure::{euclidean_distance, periodic_distance_unchecked};
use crate::params::Domain;

use super::Spectral;

const NEAR: f64 = 0.367_879_441_171_442_3; // 1/e

/// Largest observed `|grad U(x) - grad U(y)| / modulus(|x-y|)`, split by `|x-y| < 1/e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLipReport {
    pub c_near: f64,
    pub c_far: f64,
    pub pairs_near: usize,
    pub pairs_far: usize,
    /// Coincident pairs, excluded.
    pub skipped: usize,
}

impl LogLipReport {
    pub fn c(&self) -> f64 {
        self.c_near.max(self.c_far)
    }
}

/// Off-grid evaluation of a sampled force field.
enum Interpolant<'a> {
    /// Trigonometric interpolant of each component (torus).
    Spectral { spectral: Spectral, hats: Vec<Vec<Complex64>>, h: f64 },
    /// Piecewise-linear between cell centres, clamped outside (whole space, d = 1).
    Linear { field: &'a FieldGrid },
}

impl Interpolant<'_> {
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Interpolant::Spectral { spectral, hats, h } => {
                let n = spectral.n();
                let dim = spectral.dim();
                // per-axis phases e^{2 pi i k (x - h/2)}
                let phases: Vec<Vec<Complex64>> = x
                    .iter()
                    .map(|&xa| (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * spectral.wavenumber(i) * (xa - 0.5 * h))).collect())
                    .collect();
                let total = spectral.len() as f64;
                hats.iter()
                    .map(|hat| {
                        let mut acc = 0.0;
                        for (f, &z) in hat.iter().enumerate() {
                            let mut ph = Complex64::new(1.0, 0.0);
                            let mut rest = f;
                            for a in (0..dim).rev() {
                                ph *= phases[a][rest % n];
                                rest /= n;
                            }
                            acc += (z * ph).re;
                        }
                        acc / total
                    })
                    .collect()
            }
            Interpolant::Linear { field } => {
                let grid = field.grid();
                let h = grid.cell_size();
                let t = (x[0] - grid.origin()[0]) / h - 0.5;
                let n = grid.n();
                let c = field.component(0);
                let v = if t <= 0.0 {
                    c[0]
                } else if t >= (n - 1) as f64 {
                    c[n - 1]
                } else {
                    let k = t.floor() as usize;
                    let w = t - k as f64;
                    c[k] * (1.0 - w) + c[k + 1] * w
                };
                vec![v]
            }
        }
    }
}

/// Pairs `(x, y)` with log-uniform separations spanning both sides of `1/e`,
/// inside the grid's domain.
pub fn sample_pairs(grid: &Grid, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let lo: Vec<f64> = grid.origin().to_vec();
    let extent = grid.cell_size() * grid.n() as f64;
    let r_max = match grid.domain() {
        Domain::Torus => 0.5 * (dim as f64).sqrt(),
        Domain::WholeSpace => extent,
    };
    let r_min = 1e-4 * r_max;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: Vec<f64> = lo.iter().map(|&o| o + rng.random::<f64>() * extent).collect();
        let r = r_min * (r_max / r_min).powf(rng.random::<f64>());
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        dir.iter_mut().for_each(|d| *d *= r / norm);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
        match grid.domain() {
            Domain::Torus => out.push((x, y.into_iter().map(|c| c.rem_euclid(1.0)).collect())),
            Domain::WholeSpace => {
                if y.iter().zip(&lo).all(|(c, o)| *c >= *o && *c <= o + extent) {
                    out.push((x, y));
                }
            }
        }
    }
    out
}

/// Empirical log-Lipschitz constant of `force` over `pairs`.
///
/// Torus modulus: `r log(4 sqrt(d) / r) ||rho - 1||_inf`. Whole space (d = 1):
/// `r log(1/r) (||rho||_1 + ||rho||_inf)` for `r < 1/e` and
/// `r (1 + log^-(r)) (||rho||_1 + ||rho||_inf)` otherwise.
pub fn loglip_modulus(force: &FieldGrid, rho: &GridDensity, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<LogLipReport> {
    let grid = force.grid();
    grid.check_same(rho.grid())?;
    let dim = grid.dim();
    let (interp, norm) = match grid.domain() {
        Domain::Torus => {
            let spectral = Spectral::new(grid.n(), dim);
            let hats = force.components().iter().map(|c| spectral.forward_real(c)).collect();
            let norm = rho.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            (Interpolant::Spectral { spectral, hats, h: grid.cell_size() }, norm)
        }
        Domain::WholeSpace => {
            if dim != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: dim });
            }
            (Interpolant::Linear { field: force }, rho.mass() + rho.sup())
        }
    };
    let sqrt_d = (dim as f64).sqrt();
    let mut report = LogLipReport { c_near: 0.0, c_far: 0.0, pairs_near: 0, pairs_far: 0, skipped: 0 };
    for (x, y) in pairs {
        if x.len() != dim || y.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len().min(y.len()) });
        }
        let r = match grid.domain() {
            Domain::Torus => periodic_distance_unchecked(x, y),
            Domain::WholeSpace => euclidean_distance(x, y),
        };
        if r == 0.0 {
            report.skipped += 1;
            continue;
        }
        let fx = interp.eval(x);
        let fy = interp.eval(y);
        let num = euclidean_distance(&fx, &fy);
        let shape = match grid.domain() {
            Domain::Torus => r * (4.0 * sqrt_d / r).ln(),
            Domain::WholeSpace if r < NEAR => r * (1.0 / r).ln(),
            Domain::WholeSpace => r * (1.0 + (-r.ln()).max(0.0)),
        };
        let modulus = shape * norm;
        let ratio = if modulus > 0.0 {
            num / modulus
        } else if num <= 1e-14 {
            0.0
        } else {
            f64::INFINITY
        };
        if r < NEAR {
            report.pairs_near += 1;
            report.c_near = report.c_near.max(ratio);
        } else {
            report.pairs_far += 1;
            report.c_far = report.c_far.max(ratio);
        }
    }
    Ok(report)
}
