//! Optimal transport: cost assembly, exact and entropic solvers, 1D rearrangement.

mod network_simplex;
pub mod oned;
pub mod oracle;
mod sinkhorn;

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::{euclidean_distance, position_distance, Coupling, EmpiricalMeasure};
use crate::numeric::{compensated_sum, fmt17};
use crate::params::Params;

pub use oned::{displacement_interpolant_1d, monotone_rearrangement_1d, position_wp_1d, wp_1d, MonotoneMap};
pub use sinkhorn::solve_sinkhorn;

/// Default cap on either side of the exact solver.
pub const DEFAULT_EXACT_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    /// `|x-y|^p + |v-w|^p`
    Phase,
    /// `|x-y|^p`
    PositionOnly,
    /// `lambda |x-y|^p + |v-w|^p`
    KineticWeighted { lambda: f64 },
}

/// Dense row-major `|mu| x |nu|` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    kind: CostKind,
}

impl CostMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>, kind: CostKind) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: entries.len() });
        }
        if let Some(k) = entries.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParameter(format!("cost entry {k} is {}", entries[k])));
        }
        Ok(Self { rows, cols, entries, kind })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

/// Position and velocity terms of the pair cost, `(|x-y|^p, |v-w|^p)`.
#[inline]
pub(crate) fn pair_terms(mu: &EmpiricalMeasure, i: usize, nu: &EmpiricalMeasure, j: usize, params: &Params) -> (f64, f64) {
    let p = params.p();
    let dx = position_distance(mu.position(i), nu.position(j), params.domain());
    let dv = euclidean_distance(mu.velocity(i), nu.velocity(j));
    (dx.powf(p), dv.powf(p))
}

pub fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, kind: CostKind, params: &Params) -> Result<CostMatrix> {
    if mu.dim() != params.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), got: mu.dim() });
    }
    if nu.dim() != params.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), got: nu.dim() });
    }
    use CostKind::*;
    let lambda = match kind {
        KineticWeighted { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
            return Err(Error::InvalidParameter(format!("lambda must be finite and nonnegative, got {lambda}")))
        }
        KineticWeighted { lambda } => lambda,
        _ => 1.0,
    };
    let cols = nu.len();
    let mut entries = vec![0.0; mu.len() * cols];
    entries.par_chunks_mut(cols.max(1)).enumerate().for_each(|(i, row)| {
        for (j, c) in row.iter_mut().enumerate() {
            let (cx, cv) = pair_terms(mu, i, nu, j, params);
            *c = match kind {
                Phase => cx + cv,
                PositionOnly => cx,
                KineticWeighted { .. } => {
                    // keep 0 * inf out of the entries
                    if lambda == 0.0 {
                        cv
                    } else {
                        lambda * cx + cv
                    }
                }
            };
        }
    });
    Ok(CostMatrix { rows: mu.len(), cols, entries, kind })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Sinkhorn,
}

/// A coupling with its objective and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Coupling,
    pub objective: f64,
    pub method: Method,
    /// Pivots (exact) or sweeps (entropic).
    pub iterations: usize,
    /// Largest violation of `f_i + g_j <= c_ij` or of complementary slackness; exact solver only.
    pub dual_residual: Option<f64>,
}

impl TransportPlan {
    /// `sum mass * cost`, recomputed.
    pub fn recompute_objective(&self, cost: &CostMatrix) -> f64 {
        compensated_sum(self.coupling.pairs.iter().zip(&self.coupling.mass).map(|(&(i, j), &m)| m * cost.get(i, j)))
    }

    /// Writes `i,j,mass` rows followed by `objective=<value>`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,mass")?;
        for (&(i, j), &m) in self.coupling.pairs.iter().zip(&self.coupling.mass) {
            writeln!(out, "{i},{j},{}", fmt17(m))?;
        }
        writeln!(out, "objective={}", fmt17(self.objective))?;
        Ok(())
    }
}

/// Reads a plan dump; returns the coupling and the recorded objective.
pub fn read_plan_dump<R: Read>(input: R) -> Result<(Coupling, f64)> {
    let mut coupling = Coupling::default();
    let mut objective = None;
    for (lineno, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if lineno == 0 {
            if line != "i,j,mass" {
                return Err(Error::Parse(format!("bad plan header '{line}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if let Some(v) = line.strip_prefix("objective=") {
            objective = Some(v.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 fields", lineno + 1)));
        }
        let bad = |e: String| Error::Parse(format!("line {}: {e}", lineno + 1));
        let i = fields[0].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let j = fields[1].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let m = fields[2].parse::<f64>().map_err(|e| bad(e.to_string()))?;
        coupling.pairs.push((i, j));
        coupling.mass.push(m);
    }
    let objective = objective.ok_or_else(|| Error::Parse("missing objective line".into()))?;
    Ok((coupling, objective))
}

/// Solver selection and tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct OtConfig {
    /// Largest `max(|mu|, |nu|)` handed to the exact solver.
    pub exact_cap: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self { exact_cap: DEFAULT_EXACT_CAP, epsilon: 1e-3, tol: 1e-9, max_iter: 20_000 }
    }
}

fn check_shape(cost: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<()> {
    if cost.rows() != mu.len() {
        return Err(Error::DimensionMismatch { expected: cost.rows(), got: mu.len() });
    }
    if cost.cols() != nu.len() {
        return Err(Error::DimensionMismatch { expected: cost.cols(), got: nu.len() });
    }
    Ok(())
}

/// Exact discrete OT by network simplex, with the default size cap.
pub fn solve_exact(cost: &CostMatrix, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<TransportPlan> {
    solve_exact_weights(cost, mu.weights(), nu.weights(), DEFAULT_EXACT_CAP)
}

/// Exact discrete OT between raw weight vectors.
pub fn solve_exact_weights(cost: &CostMatrix, a: &[f64], b: &[f64], cap: usize) -> Result<TransportPlan> {
    check_shape(cost, a, b)?;
    if a.len() > cap || b.len() > cap {
        return Err(Error::SizeCapExceeded { rows: a.len(), cols: b.len(), cap });
    }
    let sa = compensated_sum(a.iter().copied());
    let sb = compensated_sum(b.iter().copied());
    if (sa - sb).abs() > 1e-10 * sa.max(1.0) {
        return Err(Error::MassMismatch(sa, sb));
    }
    let sol = network_simplex::solve(cost.entries(), a, b)?;
    let mut coupling = Coupling::default();
    let mut slack = 0.0f64;
    for &(i, j, f) in &sol.flows {
        coupling.pairs.push((i, j));
        coupling.mass.push(f);
        slack = slack.max((cost.get(i, j) - sol.row_dual[i] - sol.col_dual[j]).abs());
    }
    let infeasible = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let fi = sol.row_dual[i];
            (0..b.len()).map(|j| fi + sol.col_dual[j] - cost.get(i, j)).fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let objective = compensated_sum(sol.flows.iter().map(|&(i, j, f)| f * cost.get(i, j)));
    Ok(TransportPlan {
        coupling,
        objective,
        method: Method::Exact,
        iterations: sol.pivots,
        dual_residual: Some(slack.max(infeasible)),
    })
}

/// Exact when both sides fit under `config.exact_cap`, entropic otherwise.
pub fn solve_auto(cost: &CostMatrix, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, config: &OtConfig) -> Result<TransportPlan> {
    if mu.len().max(nu.len()) <= config.exact_cap {
        solve_exact_weights(cost, mu.weights(), nu.weights(), config.exact_cap)
    } else {
        solve_sinkhorn(cost, mu, nu, config.epsilon, config.tol, config.max_iter)
    }
}

/// `W_p(mu, nu)` under the phase cost.
pub fn wp_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, params: &Params) -> Result<f64> {
    wp_distance_with(mu, nu, params, &OtConfig::default())
}

pub fn wp_distance_with(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, params: &Params, config: &OtConfig) -> Result<f64> {
    let cost = cost_matrix(mu, nu, CostKind::Phase, params)?;
    let plan = solve_auto(&cost, mu, nu, config)?;
    Ok(plan.objective.max(0.0).powf(1.0 / params.p()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::validate_coupling;
    use crate::params::{Domain, Sign};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> EmpiricalMeasure {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        EmpiricalMeasure::uniform(1, x, v).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for perm in permutations(n - 1) {
            for k in 0..=perm.len() {
                let mut q = perm.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn single_entry_cost() {
        let params = Params::new(2.0, 1, Sign::Repulsive, Domain::Torus).unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.1], &[0.0]).unwrap();
        let nu = EmpiricalMeasure::dirac(&[0.3], &[1.0]).unwrap();
        let c = cost_matrix(&mu, &nu, CostKind::Phase, &params).unwrap();
        assert!((c.get(0, 0) - 1.04).abs() < 1e-15);
        let k = cost_matrix(&mu, &nu, CostKind::KineticWeighted { lambda: 0.0 }, &params).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        let same = cost_matrix(&mu, &mu, CostKind::Phase, &params).unwrap();
        assert_eq!(same.entries(), &[0.0]);
        assert!(cost_matrix(&mu, &nu, CostKind::KineticWeighted { lambda: -1.0 }, &params).is_err());
        assert!((wp_distance(&mu, &nu, &params).unwrap() - 1.04f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = Params::new(1.5, 1, Sign::Repulsive, Domain::Torus).unwrap();
        for n in 2..=6 {
            for _ in 0..10 {
                let mu = random_measure(&mut rng, n);
                let nu = random_measure(&mut rng, n);
                let c = cost_matrix(&mu, &nu, CostKind::Phase, &params).unwrap();
                let brute = permutations(n)
                    .iter()
                    .map(|perm| perm.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>() / n as f64)
                    .fold(f64::INFINITY, f64::min);
                let plan = solve_exact(&c, &mu, &nu).unwrap();
                assert!((plan.objective - brute).abs() < 1e-12, "n={n}: {} vs {brute}", plan.objective);
                assert!(plan.dual_residual.unwrap() < 1e-9);
                let (r, cdev) = validate_coupling(&plan.coupling, &mu, &nu).unwrap();
                assert!(r < 1e-12 && cdev < 1e-12);
                assert!((plan.recompute_objective(&c) - plan.objective).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_size_cap() {
        let c = CostMatrix::from_entries(3, 1, vec![0.0; 3], CostKind::Phase).unwrap();
        let err = solve_exact_weights(&c, &[1.0 / 3.0; 3], &[1.0], 2).unwrap_err();
        assert!(matches!(err, Error::SizeCapExceeded { .. }));
    }

    #[test]
    fn medium_instance_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = Params::new(2.0, 1, Sign::Repulsive, Domain::Torus).unwrap();
        let mu = random_measure(&mut rng, 300);
        let nu = random_measure(&mut rng, 250);
        let c = cost_matrix(&mu, &nu, CostKind::Phase, &params).unwrap();
        let plan = solve_exact(&c, &mu, &nu).unwrap();
        assert!(plan.dual_residual.unwrap() < 1e-9);
        let (r, cdev) = validate_coupling(&plan.coupling, &mu, &nu).unwrap();
        assert!(r < 1e-12 && cdev < 1e-12);
    }

    #[test]
    fn plan_dump_roundtrip() {
        let params = Params::torus_1d(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = random_measure(&mut rng, 5);
        let nu = random_measure(&mut rng, 4);
        let c = cost_matrix(&mu, &nu, CostKind::Phase, &params).unwrap();
        let plan = solve_exact(&c, &mu, &nu).unwrap();
        let mut buf = Vec::new();
        plan.write_dump(&mut buf).unwrap();
        let (coupling, obj) = read_plan_dump(buf.as_slice()).unwrap();
        assert_eq!(coupling, plan.coupling);
        assert_eq!(obj, plan.objective);
    }
}
