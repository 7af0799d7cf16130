//! Small numerical helpers: compensated and deterministic summation, 1D minimization.

use rayon::prelude::*;

/// Chunk length for parallel reductions. Chunk boundaries depend only on the input
/// length, so the reduction tree (and the rounded result) is independent of the
/// number of worker threads.
pub const REDUCTION_CHUNK: usize = 4096;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum of `f(i)` for `i in 0..n`, computed in parallel over fixed chunks and then
/// combined by a pairwise tree in chunk order. Bit-reproducible for a given `n`.
pub fn deterministic_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(REDUCTION_CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCTION_CHUNK;
            let hi = (lo + REDUCTION_CHUNK).min(n);
            compensated_sum((lo..hi).map(&f))
        })
        .collect();
    pairwise_sum(&partials)
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Golden-section search for the minimum of a unimodal function on `[lo, hi]`.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while (hi - lo) > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    
    [(x, fx), (a, fa), (b, fb)]
        .into_iter()
        .fold((x, fx), |acc, c| if c.1 < acc.1 { c } else { acc })
}

/// Formats a float with 17 significant digits, the CSV convention of every artifact.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        // avoid "-0" noise in artifacts
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = vec![1.0, 1e-16, 1e-16, -1.0];
        assert_eq!(compensated_sum(v), 2e-16);
    }

    #[test]
    fn deterministic_sum_matches_serial() {
        let n = 3 * REDUCTION_CHUNK + 17;
        let s = deterministic_sum(n, |i| 1.0 / (i as f64 + 1.0));
        let serial = compensated_sum((0..n).map(|i| 1.0 / (i as f64 + 1.0)));
        assert!((s - serial).abs() < 1e-12);
        assert_eq!(s.to_bits(), deterministic_sum(n, |i| 1.0 / (i as f64 + 1.0)).to_bits());
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section_min(|x| (x - 0.3) * (x - 0.3) + 1.0, -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fmt17_roundtrips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
