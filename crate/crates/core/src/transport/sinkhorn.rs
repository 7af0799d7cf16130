//! Log-domain Sinkhorn iterations followed by a feasibility-restoring rounding.

use rayon::prelude::*;

use super::{check_shape, CostMatrix, Method, TransportPlan};
use crate::error::{Error, Result};
use crate::measure::{Coupling, EmpiricalMeasure};
use crate::numeric::compensated_sum;

const PAR_THRESHOLD: usize = 256;

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect()
}

/// `-eps * log sum_j exp(log_b[j] + (g[j] - c[j]) / eps)` for one row of costs.
#[inline]
fn soft_min(row: &[f64], g: &[f64], log_b: &[f64], eps: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for ((&c, &gj), &lb) in row.iter().zip(g).zip(log_b) {
        let z = lb + (gj - c) / eps;
        if z > mx {
            mx = z;
        }
    }
    if mx == f64::NEG_INFINITY {
        return 0.0;
    }
    let s: f64 = row.iter().zip(g).zip(log_b).map(|((&c, &gj), &lb)| (lb + (gj - c) / eps - mx).exp()).sum();
    -eps * (mx + s.ln())
}

fn update(pot: &mut [f64], costs: &[f64], width: usize, other: &[f64], log_w: &[f64], eps: f64) {
    let body = |(k, out): (usize, &mut f64)| {
        *out = soft_min(&costs[k * width..(k + 1) * width], other, log_w, eps);
    };
    if pot.len() >= PAR_THRESHOLD {
        pot.par_iter_mut().enumerate().for_each(body);
    } else {
        pot.iter_mut().enumerate().for_each(body);
    }
}

/// Entropic OT with regularization `epsilon`.
///
/// Iterates until the row-marginal L1 error is at most `tol`, then rounds the
/// scaled plan onto the transport polytope so the returned coupling has exact
/// marginals. The objective is `sum P * C` of the rounded plan.
pub fn solve_sinkhorn(
    cost: &CostMatrix,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    sinkhorn_weights(cost, mu.weights(), nu.weights(), epsilon, tol, max_iter)
}

pub(crate) fn sinkhorn_weights(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    check_shape(cost, a, b)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let (m, n) = (a.len(), b.len());
    let c = cost.entries();
    let mut ct = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            ct[j * m + i] = c[i * n + j];
        }
    }
    let log_a = log_weights(a);
    let log_b = log_weights(b);
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];

    let plan_entry = |f: &[f64], g: &[f64], i: usize, j: usize| {
        if a[i] > 0.0 && b[j] > 0.0 {
            (log_a[i] + log_b[j] + (f[i] + g[j] - c[i * n + j]) / epsilon).exp()
        } else {
            0.0
        }
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        update(&mut f, c, n, &g, &log_b, epsilon);
        update(&mut g, &ct, m, &f, &log_a, epsilon);
        iterations += 1;
        if iterations % 10 == 0 || iterations == max_iter {
            // columns are exact after the g-update, so only rows carry error
            residual = (0..m)
                .map(|i| (compensated_sum((0..n).map(|j| plan_entry(&f, &g, i, j))) - a[i]).abs())
                .sum();
            if residual <= tol {
                break;
            }
        }
    }
    if residual > tol {
        return Err(Error::SinkhornNotConverged { iterations, residual });
    }

    let mut p: Vec<f64> = (0..m * n).map(|k| plan_entry(&f, &g, k / n, k % n)).collect();
    round_to_polytope(&mut p, a, b);

    let mut coupling = Coupling::default();
    for (k, &mass) in p.iter().enumerate() {
        if mass > 0.0 {
            coupling.pairs.push((k / n, k % n));
            coupling.mass.push(mass);
        }
    }
    let objective = compensated_sum(coupling.pairs.iter().zip(&coupling.mass).map(|(&(i, j), &w)| w * c[i * n + j]));
    Ok(TransportPlan { coupling, objective, method: Method::Sinkhorn, iterations, dual_residual: None })
}

/// Projects a nonnegative near-feasible plan onto `Pi(a, b)`: scale rows and
/// columns down where they overshoot, then spread the deficits as a rank-one term.
fn round_to_polytope(p: &mut [f64], a: &[f64], b: &[f64]) {
    let (m, n) = (a.len(), b.len());
    for i in 0..m {
        let r = compensated_sum(p[i * n..(i + 1) * n].iter().copied());
        if r > a[i] {
            let s = a[i] / r;
            p[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= s);
        }
    }
    for j in 0..n {
        let col = compensated_sum((0..m).map(|i| p[i * n + j]));
        if col > b[j] {
            let s = b[j] / col;
            (0..m).for_each(|i| p[i * n + j] *= s);
        }
    }
    let err_r: Vec<f64> = (0..m).map(|i| (a[i] - compensated_sum(p[i * n..(i + 1) * n].iter().copied())).max(0.0)).collect();
    let err_c: Vec<f64> = (0..n).map(|j| (b[j] - compensated_sum((0..m).map(|i| p[i * n + j]))).max(0.0)).collect();
    let total = compensated_sum(err_r.iter().copied());
    if total > 0.0 {
        for i in 0..m {
            if err_r[i] == 0.0 {
                continue;
            }
            let ri = err_r[i] / total;
            for j in 0..n {
                p[i * n + j] += ri * err_c[j];
            }
        }
    }
}
