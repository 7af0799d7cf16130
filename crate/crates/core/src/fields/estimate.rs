use crate::error::{Error, Result};
use crate::grid::{FieldGrid, GridDensity};
use crate::measure::EmpiricalMeasure;
use crate::numeric::fmt17;
use crate::params::{Domain, Params};
use crate::transport::{cost_matrix, position_wp_1d, solve_exact, CostKind, DEFAULT_EXACT_CAP};

use super::{lp_norm_field, solve_force_free_space_1d, PoissonSolver};

/// One evaluation of the force-difference estimate with unit constant.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub p: f64,
    pub d: usize,
    pub domain: Domain,
    /// `|| grad U1 - grad U2 ||_{L^p}`
    pub lhs: f64,
    /// `max(sup rho1, sup rho2)^{1/p'} W_p(rho1, rho2)`
    pub rhs: f64,
    /// `lhs / rhs`, zero when both vanish.
    pub ratio: f64,
    pub cells: usize,
    pub seed: u64,
}

impl EstimateReport {
    pub const CSV_HEADER: &'static str = "p,d,domain,lhs,rhs,ratio,cells,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            fmt17(self.p),
            self.d,
            self.domain,
            fmt17(self.lhs),
            fmt17(self.rhs),
            fmt17(self.ratio),
            self.cells,
            self.seed
        )
    }
}

/// Cell-centre empirical measure of a grid density, zero velocities.
pub(crate) fn cell_centre_measure(rho: &GridDensity) -> Result<EmpiricalMeasure> {
    let grid = rho.grid();
    let dim = grid.dim();
    let total: f64 = rho.values().iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("density carries no mass".into()));
    }
    let positions: Vec<f64> = (0..grid.len()).flat_map(|c| grid.center(c)).collect();
    let weights: Vec<f64> = rho.values().iter().map(|v| v / total).collect();
    EmpiricalMeasure::new(dim, positions, vec![0.0; grid.len() * dim], weights)
}

fn forces(rho: &GridDensity, params: &Params, solver: Option<&PoissonSolver>) -> Result<FieldGrid> {
    match rho.grid().domain() {
        Domain::Torus => Ok(solver.expect("torus solver").solve_density(rho, params.sigma())?.force),
        Domain::WholeSpace => solve_force_free_space_1d(rho, params.sigma()),
    }
}

/// Evaluates both sides of `||grad U1 - grad U2||_p <= max(||rho1||_inf, ||rho2||_inf)^{1/p'} W_p(rho1, rho2)`.
///
/// `W_p` is the exact discrete distance between cell-centre empirical measures. In
/// one dimension it comes from the quantile coupling; otherwise the grid may have at
/// most 2000 cells. `seed` is recorded, not used.
pub fn verify_field_estimate(rho1: &GridDensity, rho2: &GridDensity, params: &Params, seed: u64) -> Result<EstimateReport> {
    let grid = rho1.grid();
    grid.check_same(rho2.grid())?;
    if grid.dim() != params.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), got: grid.dim() });
    }
    if grid.domain() != params.domain() {
        return Err(Error::InvalidParameter("grid domain differs from parameters".into()));
    }
    if grid.dim() > 1 && grid.len() > DEFAULT_EXACT_CAP {
        return Err(Error::SizeCapExceeded { rows: grid.len(), cols: grid.len(), cap: DEFAULT_EXACT_CAP });
    }
    let solver = match grid.domain() {
        Domain::Torus => Some(PoissonSolver::new(grid)?),
        Domain::WholeSpace => None,
    };
    let p = params.p();
    let diff = forces(rho1, params, solver.as_ref())?.sub(&forces(rho2, params, solver.as_ref())?)?;
    let lhs = lp_norm_field(&diff, p)?;

    let mu = cell_centre_measure(rho1)?;
    let nu = cell_centre_measure(rho2)?;
    let cost = if grid.dim() == 1 {
        position_wp_1d(&mu, &nu, p, grid.domain())?
    } else {
        solve_exact(&cost_matrix(&mu, &nu, CostKind::PositionOnly, params)?, &mu, &nu)?.objective
    };
    let wp = cost.max(0.0).powf(1.0 / p);
    let sup = rho1.sup().max(rho2.sup());
    let rhs = sup.powf(1.0 / params.p_conj()) * wp;
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(EstimateReport { p, d: grid.dim(), domain: grid.domain(), lhs, rhs, ratio, cells: grid.len(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::params::Sign;
    use std::f64::consts::PI;

    #[test]
    fn identical_densities() {
        let g = Grid::torus(1, 64).unwrap();
        let rho = GridDensity::probability_from_fn(g, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).sin()).unwrap();
        let params = Params::torus_1d(2.0).unwrap();
        let r = verify_field_estimate(&rho, &rho, &params, 0).unwrap();
        assert_eq!((r.lhs, r.rhs, r.ratio), (0.0, 0.0, 0.0));
    }

    #[test]
    fn orthogonal_case_below_one_plus_discretization() {
        let g = Grid::torus(1, 512).unwrap();
        let r1 = GridDensity::probability_from_fn(g.clone(), |x| 1.0 + 0.1 * (2.0 * PI * x[0]).cos()).unwrap();
        let r2 = GridDensity::probability_from_fn(g, |_| 1.0).unwrap();
        let params = Params::torus_1d(2.0).unwrap();
        let r = verify_field_estimate(&r1, &r2, &params, 0).unwrap();
        assert!(r.ratio <= 1.05, "{}", r.ratio);
        assert!(r.ratio > 0.5);
        let flipped = verify_field_estimate(&r1, &r2, &params.with_sigma(Sign::Attractive), 0).unwrap();
        assert_eq!(flipped.ratio, r.ratio);
    }
}
