//! Brute-force assignment for tiny uniform instances, used as a cross-check.

use crate::error::{Error, Result};
use crate::kinetic::{solve_dp_implicit, Form, KineticReport};
use crate::measure::EmpiricalMeasure;
use crate::params::Params;

use super::{pair_terms, CostMatrix};

/// Largest side accepted by [`brute_force_assignment`].
pub const ORACLE_MAX: usize = 8;

/// Minimum of `(1/n) sum_i c[i, perm(i)]` over all permutations.
///
/// For uniform weights on both sides an optimal plan is a permutation, so this is
/// the exact OT value. Returns the minimizing permutation (lexicographically first
/// among ties) and the value.
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<(Vec<usize>, f64)> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cost.cols() });
    }
    if n == 0 || n > ORACLE_MAX {
        return Err(Error::InvalidParameter(format!("oracle needs 1 <= n <= {ORACLE_MAX}, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_val = f64::INFINITY;
    loop {
        let val = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>() / n as f64;
        if val < best_val {
            best_val = val;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best, best_val))
}

/// Minimum of the kinetic root `D_p` over all permutation couplings of two uniform
/// measures of equal size, with the minimizing permutation.
pub fn brute_force_kinetic(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, params: &Params) -> Result<(Vec<usize>, KineticReport)> {
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: nu.len() });
    }
    if n == 0 || n > ORACLE_MAX {
        return Err(Error::InvalidParameter(format!("oracle needs 1 <= n <= {ORACLE_MAX}, got {n}")));
    }
    let uniform = 1.0 / n as f64;
    if mu.weights().iter().chain(nu.weights()).any(|&w| (w - uniform).abs() > 1e-12) {
        return Err(Error::InvalidParameter("oracle needs uniform weights".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(Vec<usize>, KineticReport)> = None;
    loop {
        let (mut cx, mut cv) = (0.0, 0.0);
        for (i, &j) in perm.iter().enumerate() {
            let (a, b) = pair_terms(mu, i, nu, j, params);
            cx += a;
            cv += b;
        }
        let report = solve_dp_implicit(cx * uniform, cv * uniform, params.p(), Form::Metric)?;
        if best.as_ref().is_none_or(|b| report.dp < b.1.dp) {
            best = Some((perm.clone(), report));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best.expect("at least one permutation"))
}

fn next_permutation(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}
