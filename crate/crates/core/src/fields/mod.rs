//! Poisson solvers, Helmholtz projection, field norms and field-estimate checks.

mod estimate;
mod loglip;
mod spectral;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{FieldGrid, Grid, GridDensity, ScalarGrid};
use crate::numeric::deterministic_sum;
use crate::params::{Domain, Sign};

pub use estimate::{verify_field_estimate, EstimateReport};
pub use loglip::{loglip_modulus, sample_pairs, LogLipReport};
pub use spectral::Spectral;

/// Tolerance on `mean(rho) = 1` for torus solvability.
pub const NEUTRALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    /// Zero-mean potential.
    pub potential: ScalarGrid,
    pub force: FieldGrid,
    /// `max |sigma Lap U - rhs|`, Laplacian applied spectrally.
    pub residual: f64,
}

fn require_torus(grid: &Grid) -> Result<()> {
    if grid.domain() != Domain::Torus {
        return Err(Error::InvalidParameter("operation needs a torus grid".into()));
    }
    Ok(())
}

/// Spectral Poisson solver bound to one grid shape.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    grid: Grid,
    spectral: Spectral,
}

impl PoissonSolver {
    pub fn new(grid: &Grid) -> Result<Self> {
        require_torus(grid)?;
        Ok(Self { grid: grid.clone(), spectral: Spectral::new(grid.n(), grid.dim()) })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `|2 pi k|^2` and the derivative frequencies of flat mode `f`.
    fn mode_info(&self, f: usize) -> (f64, Vec<f64>) {
        let idx = self.spectral.mode(f);
        let k2 = idx.iter().map(|&i| (2.0 * PI * self.spectral.wavenumber(i)).powi(2)).sum();
        let kd = idx.iter().map(|&i| 2.0 * PI * self.spectral.derivative_wavenumber(i)).collect();
        (k2, kd)
    }

    /// Gradient of the solution of `sigma Lap U = rhs` only.
    pub fn force(&self, rhs: &[f64], sigma: Sign) -> Vec<Vec<f64>> {
        let u_hat = self.potential_hat(rhs, sigma);
        self.gradient(&u_hat)
    }

    fn potential_hat(&self, rhs: &[f64], sigma: Sign) -> Vec<Complex64> {
        let mut hat = self.spectral.forward_real(rhs);
        let s = sigma.value();
        for (f, z) in hat.iter_mut().enumerate() {
            if f == 0 {
                *z = Complex64::new(0.0, 0.0);
                continue;
            }
            let (k2, _) = self.mode_info(f);
            *z = -*z / (s * k2);
        }
        hat
    }

    fn gradient(&self, u_hat: &[Complex64]) -> Vec<Vec<f64>> {
        (0..self.grid.dim())
            .map(|axis| {
                let comp: Vec<Complex64> = u_hat
                    .iter()
                    .enumerate()
                    .map(|(f, &z)| {
                        let (_, kd) = self.mode_info(f);
                        z * Complex64::new(0.0, kd[axis])
                    })
                    .collect();
                self.spectral.inverse_real(comp)
            })
            .collect()
    }

    /// Solves `sigma Lap U = rhs` for a zero-mean right-hand side.
    pub fn solve_rhs(&self, rhs: &ScalarGrid, sigma: Sign) -> Result<PoissonSolution> {
        self.grid.check_same(rhs.grid())?;
        let mean = rhs.mean();
        if mean.abs() > NEUTRALITY_TOL {
            return Err(Error::NonZeroMean(mean));
        }
        let values = rhs.values();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("poisson right-hand side".into()));
        }
        let u_hat = self.potential_hat(values, sigma);
        let force = FieldGrid::new(self.grid.clone(), self.gradient(&u_hat))?;
        let lap: Vec<Complex64> = u_hat
            .iter()
            .enumerate()
            .map(|(f, &z)| -z * self.mode_info(f).0 * sigma.value())
            .collect();
        let lap = self.spectral.inverse_real(lap);
        let residual = lap.iter().zip(values).map(|(l, r)| (l - (r - mean)).abs()).fold(0.0, f64::max);
        let potential = ScalarGrid::new(self.grid.clone(), self.spectral.inverse_real(u_hat))?;
        Ok(PoissonSolution { potential, force, residual })
    }

    /// Solves `sigma Lap U = rho - 1`.
    pub fn solve_density(&self, rho: &GridDensity, sigma: Sign) -> Result<PoissonSolution> {
        let mean = rho.as_scalar().mean();
        if (mean - 1.0).abs() > NEUTRALITY_TOL {
            return Err(Error::NonNeutral(mean));
        }
        let rhs: Vec<f64> = rho.values().iter().map(|v| v - 1.0).collect();
        let rhs = ScalarGrid::new(rho.grid().clone(), rhs)?;
        // the residual mean is at most the neutrality tolerance and is dropped with k = 0
        let rhs = if rhs.mean() == 0.0 {
            rhs
        } else {
            let m = rhs.mean();
            ScalarGrid::new(rhs.grid().clone(), rhs.values().iter().map(|v| v - m).collect())?
        };
        self.solve_rhs(&rhs, sigma)
    }
}

/// `sigma Lap U = rho - 1` on the torus, solved spectrally.
pub fn solve_poisson_torus(rho: &GridDensity, sigma: Sign) -> Result<PoissonSolution> {
    PoissonSolver::new(rho.grid())?.solve_density(rho, sigma)
}

/// `d/dx U` for `sigma U'' = rho` on the line: `sigma U'(x) = M(x) - M_total / 2`
/// where `M(x)` is the mass left of `x`; evaluated at cell centres.
pub fn solve_force_free_space_1d(rho: &GridDensity, sigma: Sign) -> Result<FieldGrid> {
    let grid = rho.grid();
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: grid.dim() });
    }
    if grid.domain() != Domain::WholeSpace {
        return Err(Error::InvalidParameter("free-space solver needs a whole-space grid".into()));
    }
    let total = rho.mass();
    if !total.is_finite() {
        return Err(Error::NonFinite("density mass".into()));
    }
    FieldGrid::new(grid.clone(), vec![free_space_force_values(rho.values(), grid.cell_size(), total, sigma)])
}

pub(crate) fn free_space_force_values(values: &[f64], h: f64, total: f64, sigma: Sign) -> Vec<f64> {
    let s = sigma.value();
    let mut left = 0.0;
    let mut comp = 0.0;
    values
        .iter()
        .map(|&v| {
            let m = v * h;
            let out = (left + comp + 0.5 * m - 0.5 * total) / s;
            // Neumaier running sum of the mass to the left
            let t = left + m;
            if left.abs() >= m.abs() {
                comp += (left - t) + m;
            } else {
                comp += (m - t) + left;
            }
            left = t;
            out
        })
        .collect()
}

/// Random positive trigonometric density `1 + sum_k a_k cos(2 pi k x_axis + phi_k)`
/// with `sum |a_k| <= 0.9`, modes `1..=modes` on every axis, normalized on the grid.
pub fn random_smooth_density(grid: &Grid, seed: u64, modes: usize) -> Result<GridDensity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(usize, usize, f64, f64)> = (0..grid.dim())
        .flat_map(|axis| (1..=modes).map(move |k| (axis, k)))
        .map(|(axis, k)| (axis, k, rng.random::<f64>(), 2.0 * PI * rng.random::<f64>()))
        .collect();
    let total: f64 = terms.iter().map(|t| t.2).sum();
    let scale = if total > 0.0 { 0.9 * rng.random::<f64>().max(0.1) / total } else { 0.0 };
    let extent = grid.n() as f64 * grid.cell_size();
    GridDensity::probability_from_fn(grid.clone(), |x| {
        1.0 + terms
            .iter()
            .map(|&(axis, k, a, phi)| {
                let y = (x[axis] - grid.origin()[axis]) / extent;
                scale * a * (2.0 * PI * k as f64 * y + phi).cos()
            })
            .sum::<f64>()
    })
}

/// Spectral split `u = grad part + divergence-free part` on the torus.
///
/// The zero mode goes to the divergence-free part; Nyquist frequencies are
/// dropped from the projection direction, as in spectral differentiation.
pub fn helmholtz_project(u: &FieldGrid) -> Result<(FieldGrid, FieldGrid)> {
    let grid = u.grid();
    require_torus(grid)?;
    let dim = grid.dim();
    let spectral = Spectral::new(grid.n(), dim);
    let hats: Vec<Vec<Complex64>> = u.components().iter().map(|c| spectral.forward_real(c)).collect();
    let mut grad_hat = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; dim];
    for f in 0..grid.len() {
        let k: Vec<f64> = spectral.mode(f).iter().map(|&i| spectral.derivative_wavenumber(i)).collect();
        let k2: f64 = k.iter().map(|x| x * x).sum();
        if k2 == 0.0 {
            continue;
        }
        let dot = (0..dim).fold(Complex64::new(0.0, 0.0), |acc, a| acc + hats[a][f] * k[a]);
        for a in 0..dim {
            grad_hat[a][f] = dot * (k[a] / k2);
        }
    }
    let grad: Vec<Vec<f64>> = grad_hat.into_iter().map(|h| spectral.inverse_real(h)).collect();
    let div_free: Vec<Vec<f64>> = u
        .components()
        .iter()
        .zip(&grad)
        .map(|(c, g)| c.iter().zip(g).map(|(a, b)| a - b).collect())
        .collect();
    Ok((FieldGrid::new(grid.clone(), grad)?, FieldGrid::new(grid.clone(), div_free)?))
}

/// `(sum_cells |u|^p h^d)^{1/p}` with `|.|` the Euclidean norm of the vector.
pub fn lp_norm_field(u: &FieldGrid, p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent must lie in (1, inf), got {p}")));
    }
    let vol = u.grid().cell_volume();
    let s = deterministic_sum(u.grid().len(), |c| u.magnitude(c).powf(p));
    Ok((s * vol).powf(1.0 / p))
}

/// `|| grad Lap^{-1} h ||_{L^2}` on the torus by Parseval, with the same Nyquist
/// convention as the spectral gradient.
pub fn dual_sobolev_norm_p2(h: &ScalarGrid) -> Result<f64> {
    let grid = h.grid();
    require_torus(grid)?;
    let mean = h.mean();
    if mean.abs() > 1e-10 {
        return Err(Error::NonZeroMean(mean));
    }
    let spectral = Spectral::new(grid.n(), grid.dim());
    let hat = spectral.forward_real(h.values());
    let total = grid.len() as f64;
    let sum = deterministic_sum(grid.len(), |f| {
        if f == 0 {
            return 0.0;
        }
        let idx = spectral.mode(f);
        let k2: f64 = idx.iter().map(|&i| (2.0 * PI * spectral.wavenumber(i)).powi(2)).sum();
        let kd2: f64 = idx.iter().map(|&i| (2.0 * PI * spectral.derivative_wavenumber(i)).powi(2)).sum();
        let c = hat[f] / total;
        c.norm_sqr() * kd2 / (k2 * k2)
    });
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_density_is_positive_and_seeded() {
        let g = Grid::torus(2, 16).unwrap();
        let a = random_smooth_density(&g, 7, 3).unwrap();
        assert!(a.values().iter().all(|&v| v > 0.0));
        assert!((a.mass() - 1.0).abs() < 1e-12);
        assert_eq!(a, random_smooth_density(&g, 7, 3).unwrap());
        assert_ne!(a, random_smooth_density(&g, 8, 3).unwrap());
    }

    fn torus1(n: usize) -> Grid {
        Grid::torus(1, n).unwrap()
    }

    #[test]
    fn manufactured_cosine() {
        let g = torus1(256);
        let rho = GridDensity::new(g.clone(), (0..256).map(|i| 1.0 + (2.0 * PI * g.center_1d(i, 0)).cos()).collect()).unwrap();
        let sol = solve_poisson_torus(&rho, Sign::Attractive).unwrap();
        for i in 0..256 {
            let x = g.center_1d(i, 0);
            assert!((sol.potential.values()[i] + (2.0 * PI * x).cos() / (4.0 * PI * PI)).abs() < 1e-12);
            assert!((sol.force.component(0)[i] - (2.0 * PI * x).sin() / (2.0 * PI)).abs() < 1e-12);
        }
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn uniform_density_has_no_force() {
        let rho = GridDensity::new(torus1(64), vec![1.0; 64]).unwrap();
        let sol = solve_poisson_torus(&rho, Sign::Repulsive).unwrap();
        assert!(sol.force.max_abs() == 0.0);
        assert!(sol.potential.sup_abs() == 0.0);
    }

    #[test]
    fn rejects_non_neutral() {
        let rho = GridDensity::new(torus1(16), vec![1.5; 16]).unwrap();
        assert!(matches!(solve_poisson_torus(&rho, Sign::Attractive), Err(Error::NonNeutral(_))));
    }

    #[test]
    fn residual_against_direct_trigonometric_laplacian() {
        // independent check: evaluate the Laplacian of the returned potential through
        // its trigonometric interpolant with a naive DFT
        let n = 64;
        let g = torus1(n);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coef: Vec<(f64, f64)> = (0..6).map(|_| (rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1)).collect();
        let rho: Vec<f64> = (0..n)
            .map(|i| {
                let x = g.center_1d(i, 0);
                1.0 + coef
                    .iter()
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let w = 2.0 * PI * (k + 1) as f64 * x;
                        a * w.cos() + b * w.sin()
                    })
                    .sum::<f64>()
            })
            .collect();
        let rho = GridDensity::new(g.clone(), rho).unwrap();
        let sol = solve_poisson_torus(&rho, Sign::Repulsive).unwrap();
        let u = sol.potential.values();
        for i in 0..n {
            let mut lap = 0.0;
            for k in 1..n / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &uj) in u.iter().enumerate() {
                    let ang = 2.0 * PI * (k * j) as f64 / n as f64;
                    re += uj * ang.cos();
                    im -= uj * ang.sin();
                }
                let ang = 2.0 * PI * (k * i) as f64 / n as f64;
                lap += -2.0 * (2.0 * PI * k as f64).powi(2) * (re * ang.cos() - im * ang.sin()) / n as f64;
            }
            assert!((-lap - (rho.values()[i] - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn free_space_single_cell() {
        let g = Grid::whole_space(1, 11, 0.1, vec![0.0]).unwrap();
        let mut v = vec![0.0; 11];
        v[5] = 10.0;
        let rho = GridDensity::new(g, v).unwrap();
        let f = solve_force_free_space_1d(&rho, Sign::Attractive).unwrap();
        let c = f.component(0);
        assert!((c[6] - c[4] - 1.0).abs() < 1e-15);
        assert_eq!(c[5], 0.0);
        for k in 0..5 {
            assert_eq!(c[k], -c[10 - k]);
        }
    }

    #[test]
    fn free_space_superposition() {
        let g = Grid::whole_space(1, 200, 0.02, vec![-2.0]).unwrap();
        let bump = |c: f64| move |x: &[f64]| (-(x[0] - c).powi(2) / 0.02).exp();
        let a = GridDensity::probability_from_fn(g.clone(), bump(-0.7)).unwrap();
        let b = GridDensity::probability_from_fn(g.clone(), bump(0.4)).unwrap();
        let sum = GridDensity::new(g.clone(), a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect()).unwrap();
        let fa = solve_force_free_space_1d(&a, Sign::Repulsive).unwrap();
        let fb = solve_force_free_space_1d(&b, Sign::Repulsive).unwrap();
        let fs = solve_force_free_space_1d(&sum, Sign::Repulsive).unwrap();
        for i in 0..200 {
            assert!((fs.component(0)[i] - fa.component(0)[i] - fb.component(0)[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_norms() {
        let g = torus1(128);
        let zero = FieldGrid::zeros(g.clone());
        assert_eq!(lp_norm_field(&zero, 2.0).unwrap(), 0.0);
        let c = FieldGrid::new(g.clone(), vec![vec![-0.7; 128]]).unwrap();
        assert!((lp_norm_field(&c, 3.0).unwrap() - 0.7).abs() < 1e-14);
        let s = FieldGrid::from_fn(g, |x| vec![(2.0 * PI * x[0]).sin()]).unwrap();
        assert!((lp_norm_field(&s, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn dual_norm_of_cosine() {
        let g = torus1(128);
        let h = ScalarGrid::from_fn(g, |x| (2.0 * PI * x[0]).cos()).unwrap();
        let n = dual_sobolev_norm_p2(&h).unwrap();
        assert!((n - 1.0 / (2.0 * PI * 2f64.sqrt())).abs() < 1e-12);
        let n2 = dual_sobolev_norm_p2(&h.scaled(2.0)).unwrap();
        assert!((n2 - 2.0 * n).abs() < 1e-15);
        assert!(dual_sobolev_norm_p2(&ScalarGrid::from_fn(torus1(8), |_| 1.0).unwrap()).is_err());
    }

    #[test]
    fn helmholtz_gradient_and_rotational() {
        let n = 32;
        let g = Grid::torus(2, n).unwrap();
        let tau = 2.0 * PI;
        let grad_phi = FieldGrid::from_fn(g.clone(), |x| {
            vec![tau * (tau * x[0]).cos() * (tau * 2.0 * x[1]).sin(), 2.0 * tau * (tau * x[0]).sin() * (tau * 2.0 * x[1]).cos()]
        })
        .unwrap();
        let (gp, dfp) = helmholtz_project(&grad_phi).unwrap();
        assert!(dfp.max_abs() < 1e-11);
        assert!(gp.sub(&grad_phi).unwrap().max_abs() < 1e-11);
        // (-d_y psi, d_x psi) with psi = cos(2 pi x) cos(4 pi y)
        let rot = FieldGrid::from_fn(g, |x| {
            vec![2.0 * tau * (tau * x[0]).cos() * (2.0 * tau * x[1]).sin(), -tau * (tau * x[0]).sin() * (2.0 * tau * x[1]).cos()]
        })
        .unwrap();
        let (gp, _) = helmholtz_project(&rot).unwrap();
        assert!(gp.max_abs() < 1e-11);
    }
}
