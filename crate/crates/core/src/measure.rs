//! Empirical phase-space measures, couplings and the periodic metric.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, fmt17};
use crate::params::Domain;

/// Tolerance on the total weight of a probability measure.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Euclidean length of the minimal per-coordinate displacement on the unit torus.
///
/// Coordinates outside `[0,1)` are accepted and reduced modulo 1.
pub fn periodic_distance(a: &[f64], b: &[f64], d: usize) -> Result<f64> {
    if a.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a.len() });
    }
    if b.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: b.len() });
    }
    Ok(periodic_distance_unchecked(a, b))
}

#[inline]
pub(crate) fn wrap_delta(delta: f64) -> f64 {
    let r = delta.abs().rem_euclid(1.0);
    r.min(1.0 - r)
}

#[inline]
pub(crate) fn periodic_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let m = wrap_delta(x - y);
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Position distance under the domain's metric.
#[inline]
pub fn position_distance(a: &[f64], b: &[f64], domain: Domain) -> f64 {
    match domain {
        Domain::Torus => periodic_distance_unchecked(a, b),
        Domain::WholeSpace => euclidean_distance(a, b),
    }
}

pub(crate) fn check_probability_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("weight {index}")));
        }
        if value < 0.0 {
            return Err(Error::NegativeWeight { index, value });
        }
    }
    let total = compensated_sum(weights.iter().copied());
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// Weighted samples `(x_i, v_i, w_i)` of a probability measure on `X x R^d`.
///
/// Positions and velocities are stored flat, `dim` coordinates per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, positions: Vec<f64>, velocities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        let n = weights.len();
        if positions.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, got: positions.len() });
        }
        if velocities.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, got: velocities.len() });
        }
        if positions.iter().chain(&velocities).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sample coordinates".into()));
        }
        check_probability_weights(&weights)?;
        Ok(Self { dim, positions, velocities, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(dim: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        let n = positions.len() / dim.max(1);
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        Self::new(dim, positions, velocities, vec![1.0 / n as f64; n])
    }

    /// A single unit mass at `(x, v)`.
    pub fn dirac(x: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), v.to_vec(), vec![1.0])
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

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    /// Checks that every position lies in `[0,1)^d`.
    pub fn check_torus(&self) -> Result<()> {
        match self.positions.iter().position(|x| !(0.0..1.0).contains(x)) {
            None => Ok(()),
            Some(k) => Err(Error::InvalidParameter(format!(
                "torus position {} of sample {} outside [0,1)",
                self.positions[k],
                k / self.dim
            ))),
        }
    }

    /// Writes the columnar snapshot format: header `x1..xd,v1..vd,w`, one sample per row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(snapshot_header(self.dim))?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .position(i)
                .iter()
                .chain(self.velocity(i))
                .chain(std::iter::once(&self.weights[i]))
                .map(|&x| fmt17(x))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 3 || cols % 2 == 0 {
            return Err(Error::Parse(format!("expected header x1..xd,v1..vd,w, got {} columns", cols)));
        }
        let dim = (cols - 1) / 2;
        let expected = snapshot_header(dim);
        if header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(Error::Parse(format!(
                "bad header '{}', expected '{}'",
                header.iter().collect::<Vec<_>>().join(","),
                expected.join(",")
            )));
        }
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        let mut weights = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != cols {
                return Err(Error::Parse(format!("row {} has {} fields", line + 1, record.len())));
            }
            let vals: Vec<f64> = record
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: '{s}': {e}", line + 1))))
                .collect::<Result<_>>()?;
            positions.extend_from_slice(&vals[..dim]);
            velocities.extend_from_slice(&vals[dim..2 * dim]);
            weights.push(vals[2 * dim]);
        }
        Self::new(dim, positions, velocities, weights)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn snapshot_header(dim: usize) -> Vec<String> {
    (1..=dim)
        .map(|k| format!("x{k}"))
        .chain((1..=dim).map(|k| format!("v{k}")))
        .chain(std::iter::once("w".to_string()))
        .collect()
}

/// Sparse transport plan: index pairs `(i into mu, j into nu)` with their mass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coupling {
    pub pairs: Vec<(usize, usize)>,
    pub mass: Vec<f64>,
}

impl Coupling {
    /// `mu` coupled with itself along the diagonal.
    pub fn diagonal(mu: &EmpiricalMeasure) -> Self {
        Self { pairs: (0..mu.len()).map(|i| (i, i)).collect(), mass: mu.weights().to_vec() }
    }

    /// Independent coupling `w_i * w_j`.
    pub fn product(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Self {
        let mut pairs = Vec::with_capacity(mu.len() * nu.len());
        let mut mass = Vec::with_capacity(mu.len() * nu.len());
        for i in 0..mu.len() {
            for j in 0..nu.len() {
                pairs.push((i, j));
                mass.push(mu.weight(i) * nu.weight(j));
            }
        }
        Self { pairs, mass }
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.mass.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Maximum row-sum and column-sum deviations of `plan` from the marginals `mu`, `nu`.
pub fn validate_coupling(plan: &Coupling, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(f64, f64)> {
    if plan.pairs.len() != plan.mass.len() {
        return Err(Error::DimensionMismatch { expected: plan.pairs.len(), got: plan.mass.len() });
    }
    let mut rows = vec![Vec::new(); mu.len()];
    let mut cols = vec![Vec::new(); nu.len()];
    for (&(i, j), &m) in plan.pairs.iter().zip(&plan.mass) {
        if i >= mu.len() || j >= nu.len() {
            return Err(Error::IndexOutOfRange(format!("pair ({i}, {j}) for sizes {}x{}", mu.len(), nu.len())));
        }
        rows[i].push(m);
        cols[j].push(m);
    }
    let dev = |sums: Vec<Vec<f64>>, target: &[f64]| {
        sums.into_iter()
            .zip(target)
            .map(|(entries, &t)| (compensated_sum(entries) - t).abs())
            .fold(0.0, f64::max)
    };
    Ok((dev(rows, mu.weights()), dev(cols, nu.weights())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn wrap_around_is_shorter() {
        let d = periodic_distance(&[0.1], &[0.9], 1).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identity_is_zero() {
        assert_eq!(periodic_distance(&[0.3, 0.7], &[0.3, 0.7], 2).unwrap(), 0.0);
    }

    #[test]
    fn antipodal_corner() {
        let d = periodic_distance(&[0.0, 0.0], &[0.5, 0.5], 2).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(d <= 2f64.sqrt());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            periodic_distance(&[0.1, 0.2], &[0.1], 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let d = rng.random_range(1..=3);
            let pt = |rng: &mut rand_chacha::ChaCha8Rng| (0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
            let (a, b, c) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
            let ab = periodic_distance(&a, &b, d).unwrap();
            let ba = periodic_distance(&b, &a, d).unwrap();
            let bc = periodic_distance(&b, &c, d).unwrap();
            let ac = periodic_distance(&a, &c, d).unwrap();
            assert_eq!(ab, ba);
            assert!(ac <= ab + bc + 1e-12);
            assert!(ab <= (d as f64).sqrt() / 2.0 + 1e-15);
        }
    }

    #[test]
    fn constructor_rejects_bad_weights() {
        assert!(matches!(
            EmpiricalMeasure::new(1, vec![0.1, 0.2], vec![0.0, 0.0], vec![1.5, -0.5]),
            Err(Error::NegativeWeight { .. })
        ));
        assert!(matches!(
            EmpiricalMeasure::new(1, vec![0.1, 0.2], vec![0.0, 0.0], vec![0.5, 0.6]),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(EmpiricalMeasure::new(1, vec![], vec![], vec![]), Err(Error::EmptyMeasure)));
        assert!(EmpiricalMeasure::new(1, vec![0.1], vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn single_point_measure_is_allowed() {
        let m = EmpiricalMeasure::dirac(&[0.25], &[1.0]).unwrap();
        assert_eq!(m.len(), 1);
    }

    fn three_points() -> EmpiricalMeasure {
        EmpiricalMeasure::new(1, vec![0.1, 0.4, 0.8], vec![0.0, 1.0, -1.0], vec![0.2, 0.3, 0.5]).unwrap()
    }

    #[test]
    fn diagonal_and_product_couplings_have_exact_marginals() {
        let mu = three_points();
        assert_eq!(validate_coupling(&Coupling::diagonal(&mu), &mu, &mu).unwrap(), (0.0, 0.0));
        let (r, c) = validate_coupling(&Coupling::product(&mu, &mu), &mu, &mu).unwrap();
        assert!(r <= 1e-16 && c <= 1e-16);
    }

    #[test]
    fn perturbed_plan_reports_defect() {
        let mu = three_points();
        let mut plan = Coupling::diagonal(&mu);
        plan.mass[1] += 1e-6;
        let (r, c) = validate_coupling(&plan, &mu, &mu).unwrap();
        assert!((r - 1e-6).abs() < 1e-15);
        assert!((c - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_index() {
        let mu = three_points();
        let plan = Coupling { pairs: vec![(0, 5)], mass: vec![1.0] };
        assert!(matches!(validate_coupling(&plan, &mu, &mu), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn csv_header_and_rejection() {
        let m = EmpiricalMeasure::new(2, vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,v1,v2,w\n"));
        assert!(EmpiricalMeasure::read_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(EmpiricalMeasure::read_csv("x1,v1,w\n0.1,0.0,oops\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(
            xs in proptest::collection::vec((0.0f64..1.0, -5.0f64..5.0, 0.01f64..1.0), 1..20)
        ) {
            let total: f64 = xs.iter().map(|t| t.2).sum();
            let positions = xs.iter().map(|t| t.0).collect();
            let velocities = xs.iter().map(|t| t.1).collect();
            let mut weights: Vec<f64> = xs.iter().map(|t| t.2 / total).collect();
            let s = compensated_sum(weights.iter().copied());
            weights[0] += 1.0 - s;
            prop_assume!(weights[0] >= 0.0);
            let m = EmpiricalMeasure::new(1, positions, velocities, weights).unwrap();
            let mut buf = Vec::new();
            m.write_csv(&mut buf).unwrap();
            let back = EmpiricalMeasure::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
