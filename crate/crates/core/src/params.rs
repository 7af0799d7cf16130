//! Global configuration shared by every estimate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sign of the interaction in `sigma * Laplacian(U) = rho (- 1)`.
///
/// With characteristics `dV/dt = -grad U`, `Attractive` (+1) is the gravitational
/// case and `Repulsive` (-1) the electrostatic one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Attractive,
    Repulsive,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Attractive => 1.0,
            Sign::Repulsive => -1.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 1.0 {
            Ok(Sign::Attractive)
        } else if v == -1.0 {
            Ok(Sign::Repulsive)
        } else {
            Err(Error::InvalidParameter(format!("sigma must be +1 or -1, got {v}")))
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Attractive => Sign::Repulsive,
            Sign::Repulsive => Sign::Attractive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Unit torus `[0,1)^d` with the per-coordinate wrap metric.
    Torus,
    WholeSpace,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Torus => write!(f, "torus"),
            Domain::WholeSpace => write!(f, "whole"),
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "torus" | "t" => Ok(Domain::Torus),
            "whole" | "wholespace" | "whole_space" | "r" => Ok(Domain::WholeSpace),
            other => Err(Error::InvalidParameter(format!("unknown domain '{other}'"))),
        }
    }
}

/// Exponent, dimension, interaction sign and domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    p: f64,
    p_conj: f64,
    d: usize,
    sigma: Sign,
    domain: Domain,
}

impl Params {
    pub fn new(p: f64, d: usize, sigma: Sign, domain: Domain) -> Result<Self> {
        if !p.is_finite() || p <= 1.0 {
            return Err(Error::InvalidParameter(format!("exponent p must lie in (1, inf), got {p}")));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        let p_conj = p / (p - 1.0);
        debug_assert!((1.0 / p + 1.0 / p_conj - 1.0).abs() <= 1e-14);
        Ok(Self { p, p_conj, d, sigma, domain })
    }

    /// `d = 1` torus, repulsive interaction.
    pub fn torus_1d(p: f64) -> Result<Self> {
        Self::new(p, 1, Sign::Repulsive, Domain::Torus)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p_conj(&self) -> f64 {
        self.p_conj
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> Sign {
        self.sigma
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn with_sigma(mut self, sigma: Sign) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_p(self, p: f64) -> Result<Self> {
        Self::new(p, self.d, self.sigma, self.domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_exponent() {
        for p in [1.1, 1.5, 2.0, 3.0, 7.5] {
            let params = Params::torus_1d(p).unwrap();
            assert!((1.0 / params.p() + 1.0 / params.p_conj() - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn rejects_out_of_range_exponent() {
        assert!(Params::torus_1d(1.0).is_err());
        assert!(Params::torus_1d(0.5).is_err());
        assert!(Params::torus_1d(f64::INFINITY).is_err());
        assert!(Params::new(2.0, 0, Sign::Attractive, Domain::Torus).is_err());
    }

    #[test]
    fn sign_roundtrip() {
        assert_eq!(Sign::from_value(1.0).unwrap(), Sign::Attractive);
        assert_eq!(Sign::from_value(-1.0).unwrap(), Sign::Repulsive);
        assert!(Sign::from_value(0.5).is_err());
    }
}
