//! Paired particle-in-cell Vlasov-Poisson runs.
//!
//! Two populations start from a shared coupling and are evolved independently,
//! each under its own self-consistent field, with cloud-in-cell deposition and
//! kick-drift-kick leapfrog. The pairing is carried along and never re-solved.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{solve_force_free_space_1d, PoissonSolver, NEUTRALITY_TOL};
use crate::grid::{FieldGrid, Grid, GridDensity};
use crate::kinetic::{solve_dp_implicit, Form, KineticReport, PairedEnsemble};
use crate::numeric::{compensated_sum, deterministic_sum, fmt17, REDUCTION_CHUNK};
use crate::params::{Domain, Params, Sign};
use crate::transport::{cost_matrix, solve_exact, CostKind};

pub const DEFAULT_BLOWUP_CAP: f64 = 1e3;
pub const DEFAULT_SUBSAMPLE: usize = 500;

/// Whole-space runs use the box `[-0.5, 1.5)`.
pub const WHOLE_SPACE_ORIGIN: f64 = -0.5;
pub const WHOLE_SPACE_LENGTH: f64 = 2.0;

/// Largest dimension the particle stencils handle.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `(1 + eps_i cos(2 pi k x)) G(v)` with `eps1 != eps2`.
    PerturbedAmplitude,
    /// Same spatial profile, second population shifted in velocity.
    VelocityShift,
    /// Control: both populations identical.
    Identical,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::PerturbedAmplitude => "perturbed",
            Family::VelocityShift => "shifted",
            Family::Identical => "identical",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "perturbed" => Ok(Family::PerturbedAmplitude),
            "b" | "shifted" => Ok(Family::VelocityShift),
            "c" | "identical" => Ok(Family::Identical),
            _ => Err(Error::InvalidParameter(format!("unknown initial-condition family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub family: Family,
    pub eps1: f64,
    /// Used by the perturbed family only.
    pub eps2: f64,
    /// Spatial mode `k`.
    pub mode: u32,
    /// Thermal speed of the Gaussian.
    pub vth: f64,
    /// Velocity shift along axis 0, shifted family only.
    pub shift: f64,
    pub seed: u64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self { family: Family::PerturbedAmplitude, eps1: 0.01, eps2: 0.02, mode: 1, vth: 0.08, shift: 0.05, seed: 0 }
    }
}

impl InitialCondition {
    /// Spatial amplitudes of the two populations.
    pub fn amplitudes(&self) -> (f64, f64) {
        match self.family {
            Family::PerturbedAmplitude => (self.eps1, self.eps2),
            _ => (self.eps1, self.eps1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (e1, e2) = self.amplitudes();
        for e in [e1, e2] {
            if !(e.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!("amplitude {e} breaks positivity (need |eps| < 1)")));
            }
        }
        if self.family == Family::PerturbedAmplitude && e1 == e2 {
            return Err(Error::InvalidParameter("perturbed family needs eps1 != eps2".into()));
        }
        if self.mode == 0 {
            return Err(Error::InvalidParameter("mode must be at least 1".into()));
        }
        if !(self.vth > 0.0 && self.vth.is_finite()) {
            return Err(Error::InvalidParameter(format!("thermal speed must be positive, got {}", self.vth)));
        }
        if !self.shift.is_finite() {
            return Err(Error::NonFinite("velocity shift".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub particles: usize,
    /// Cells per axis.
    pub cells: usize,
    pub dt: f64,
    /// Horizon `T`.
    pub t_end: f64,
    pub ic: InitialCondition,
    pub params: Params,
    /// Abort once a deposited density reaches this value.
    pub blowup_cap: f64,
    /// Initial guard `dt * max|v| <= cfl_safety * cell_size`.
    pub cfl_safety: f64,
    /// Pairs used for the exact-OT check at each snapshot.
    pub subsample: usize,
}

impl SimConfig {
    pub fn new(params: Params, ic: InitialCondition) -> Self {
        Self {
            particles: 1 << 16,
            cells: 512,
            dt: 1e-3,
            t_end: 2.0,
            ic,
            params,
            blowup_cap: DEFAULT_BLOWUP_CAP,
            cfl_safety: 1.0,
            subsample: DEFAULT_SUBSAMPLE,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn grid(&self) -> Result<Grid> {
        let d = self.params.d();
        match self.params.domain() {
            Domain::Torus => Grid::torus(d, self.cells),
            Domain::WholeSpace => {
                Grid::whole_space(d, self.cells, WHOLE_SPACE_LENGTH / self.cells as f64, vec![WHOLE_SPACE_ORIGIN; d])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ic.validate()?;
        if self.particles == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        if self.cells < 2 {
            return Err(Error::InvalidParameter("need at least two cells per axis".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {}", self.t_end)));
        }
        if !(self.blowup_cap > 0.0) {
            return Err(Error::InvalidParameter("blow-up cap must be positive".into()));
        }
        if !(self.cfl_safety > 0.0) {
            return Err(Error::InvalidParameter("CFL safety factor must be positive".into()));
        }
        if self.subsample == 0 {
            return Err(Error::InvalidParameter("subsample must be at least 1".into()));
        }
        let d = self.params.d();
        match self.params.domain() {
            Domain::Torus if d > MAX_DIM => {
                Err(Error::InvalidParameter(format!("particle runs support d <= {MAX_DIM}, got {d}")))
            }
            Domain::WholeSpace if d != 1 => Err(Error::InvalidParameter("whole-space runs are one-dimensional".into())),
            _ => Ok(()),
        }
    }
}

/// `||rho2||_inf + ||rho1||_inf^{1/p} max(||rho1||_inf, ||rho2||_inf)^{1/p'}` from grid maxima.
pub fn compute_a(rho1: &GridDensity, rho2: &GridDensity, params: &Params) -> f64 {
    let (s1, s2) = (rho1.sup(), rho2.sup());
    s2 + s1.powf(1.0 / params.p()) * s1.max(s2).powf(1.0 / params.p_conj())
}

/// Cloud-in-cell deposition and interpolation plus the field solve on one grid.
#[derive(Debug, Clone)]
pub struct Pic {
    grid: Grid,
    sigma: Sign,
    solver: Option<PoissonSolver>,
}

type Stencil = ([usize; 1 << MAX_DIM], [f64; 1 << MAX_DIM]);

impl Pic {
    pub fn new(grid: Grid, sigma: Sign) -> Result<Self> {
        if grid.dim() > MAX_DIM {
            return Err(Error::InvalidParameter(format!("particle grids support d <= {MAX_DIM}")));
        }
        let solver = match grid.domain() {
            Domain::Torus => Some(PoissonSolver::new(&grid)?),
            Domain::WholeSpace if grid.dim() == 1 => None,
            Domain::WholeSpace => return Err(Error::InvalidParameter("whole-space field solve is 1D only".into())),
        };
        Ok(Self { grid, sigma, solver })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn stencil(&self, x: &[f64]) -> Result<Stencil> {
        let g = &self.grid;
        let (n, h, d) = (g.n(), g.cell_size(), g.dim());
        let mut cells = [0usize; 1 << MAX_DIM];
        let mut weights = [0.0f64; 1 << MAX_DIM];
        cells[0] = 0;
        weights[0] = 1.0;
        let mut filled = 1;
        for (axis, &xa) in x.iter().enumerate() {
            let s = (xa - g.origin()[axis]) / h - 0.5;
            let (i0, i1, frac) = match g.domain() {
                Domain::Torus => {
                    let fl = s.floor();
                    let i0 = (fl as i64).rem_euclid(n as i64) as usize;
                    (i0, (i0 + 1) % n, s - fl)
                }
                Domain::WholeSpace => {
                    if !(s >= -0.5 && s < n as f64 - 0.5) {
                        return Err(Error::Simulation(format!("particle at {xa} left the computational box")));
                    }
                    if s < 0.0 {
                        (0, 0, 0.0)
                    } else if s >= (n - 1) as f64 {
                        (n - 1, n - 1, 0.0)
                    } else {
                        let fl = s.floor();
                        (fl as usize, fl as usize + 1, s - fl)
                    }
                }
            };
            let stride = n.pow((d - 1 - axis) as u32);
            for k in 0..filled {
                cells[k + filled] = cells[k] + i1 * stride;
                weights[k + filled] = weights[k] * frac;
                cells[k] += i0 * stride;
                weights[k] *= 1.0 - frac;
            }
            filled *= 2;
        }
        Ok((cells, weights))
    }

    /// Density of the weighted particles. Chunks are fixed by the particle count
    /// and summed pairwise in order, so the result is independent of threading.
    pub fn deposit(&self, x: &[f64], w: &[f64]) -> Result<GridDensity> {
        let d = self.grid.dim();
        let len = self.grid.len();
        let corners = 1 << d;
        if x.len() != w.len() * d {
            return Err(Error::DimensionMismatch { expected: w.len() * d, got: x.len() });
        }
        let parts: Vec<Vec<f64>> = x
            .par_chunks(REDUCTION_CHUNK * d)
            .zip(w.par_chunks(REDUCTION_CHUNK))
            .map(|(xc, wc)| {
                let mut local = vec![0.0; len];
                for (xi, &wi) in xc.chunks_exact(d).zip(wc) {
                    let (cells, weights) = self.stencil(xi)?;
                    for k in 0..corners {
                        local[cells[k]] += wi * weights[k];
                    }
                }
                Ok(local)
            })
            .collect::<Result<_>>()?;
        let mut mass = tree_add(parts).unwrap_or_else(|| vec![0.0; len]);
        let inv = 1.0 / self.grid.cell_volume();
        mass.iter_mut().for_each(|m| *m *= inv);
        GridDensity::new(self.grid.clone(), mass)
    }

    /// Field values at particle positions, `d` per particle.
    pub fn interpolate(&self, field: &FieldGrid, x: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_same(field.grid())?;
        let d = self.grid.dim();
        let corners = 1 << d;
        let comps = field.components();
        let mut out = vec![0.0; x.len()];
        out.par_chunks_mut(d).zip(x.par_chunks(d)).try_for_each(|(o, xi)| {
            let (cells, weights) = self.stencil(xi)?;
            for (axis, slot) in o.iter_mut().enumerate() {
                *slot = (0..corners).map(|k| weights[k] * comps[axis][cells[k]]).sum();
            }
            Ok::<_, Error>(())
        })?;
        Ok(out)
    }

    /// `grad U` for the deposited density.
    pub fn grad_potential(&self, rho: &GridDensity) -> Result<FieldGrid> {
        match &self.solver {
            Some(solver) => {
                let mean = rho.as_scalar().mean();
                if (mean - 1.0).abs() > NEUTRALITY_TOL {
                    return Err(Error::NonNeutral(mean));
                }
                let rhs: Vec<f64> = rho.values().iter().map(|v| v - mean).collect();
                if rhs.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("deposited density".into()));
                }
                FieldGrid::new(self.grid.clone(), solver.force(&rhs, self.sigma))
            }
            None => solve_force_free_space_1d(rho, self.sigma),
        }
    }

    /// Kinetic plus field energy of one population.
    pub fn energy(&self, x: &[f64], v: &[f64], w: &[f64], grad_u: &FieldGrid) -> f64 {
        let d = self.grid.dim();
        let kinetic =
            deterministic_sum(w.len(), |i| 0.5 * w[i] * v[i * d..(i + 1) * d].iter().map(|c| c * c).sum::<f64>());
        let s = self.sigma.value();
        let potential = match self.grid.domain() {
            Domain::Torus => {
                let sq = deterministic_sum(self.grid.len(), |c| grad_u.magnitude(c).powi(2));
                -0.5 * s * sq * self.grid.cell_volume()
            }
            // U = |x| / (2 sigma) * rho, so the energy is a pairwise sum
            Domain::WholeSpace => {
                let mut order: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (mut wl, mut wxl) = (0.0, 0.0);
                let terms: Vec<f64> = order
                    .iter()
                    .map(|&(xi, wi)| {
                        let t = wi * (xi * wl - wxl);
                        wl += wi;
                        wxl += wi * xi;
                        t
                    })
                    .collect();
                compensated_sum(terms) / (2.0 * s)
            }
        };
        kinetic + potential
    }
}

fn tree_add(mut parts: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub ensemble: PairedEnsemble,
    pub rho1: GridDensity,
    pub rho2: GridDensity,
    /// `grad U` of each population.
    pub grad_u1: FieldGrid,
    pub grad_u2: FieldGrid,
    acc1: Vec<f64>,
    acc2: Vec<f64>,
    pub time: f64,
}

impl SimState {
    pub fn sup_norms(&self) -> (f64, f64) {
        (self.rho1.sup(), self.rho2.sup())
    }

    /// Total momentum of each population.
    pub fn momenta(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.ensemble.dim();
        let w = self.ensemble.weights();
        let mom = |v: &[f64]| -> Vec<f64> { (0..d).map(|a| deterministic_sum(w.len(), |i| w[i] * v[i * d + a])).collect() };
        (mom(&self.ensemble.v1), mom(&self.ensemble.v2))
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub qp: f64,
    pub dp: f64,
    pub lambda: f64,
    pub a: f64,
    pub sup_rho1: f64,
    pub sup_rho2: f64,
    pub energy1: f64,
    pub energy2: f64,
    /// Exact `W_p^p` between the marginals of the pair subsample.
    pub wp_sub: f64,
    /// Pairing cost on the subsample and its standard error as an estimate of `qp`.
    pub qp_sub: f64,
    pub qp_sub_se: f64,
    pub kinetic: KineticReport,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str = "t,Qp,Dp,lambda,A,sup_rho1,sup_rho2,energy1,energy2,Wp_sub";

    pub fn csv_row(&self) -> String {
        [
            self.t,
            self.qp,
            self.dp,
            self.lambda,
            self.a,
            self.sup_rho1,
            self.sup_rho2,
            self.energy1,
            self.energy2,
            self.wp_sub,
        ]
        .iter()
        .map(|&v| fmt17(v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: SimState,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUp {
    pub time: f64,
    pub sup: f64,
}

/// What a run reports besides its snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Set when the run stopped at the density cap; snapshots are partial.
    pub blowup: Option<BlowUp>,
    /// `A` after every step, starting at `t = 0`.
    pub a_trace: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub snapshots: Vec<Snapshot>,
    pub summary: RunSummary,
}

/// `F(x) = x + eps sin(2 pi k x) / (2 pi k)` inverted on `[0, 1]`.
fn inverse_cdf(u: f64, eps: f64, k: f64) -> f64 {
    let w = 2.0 * PI * k;
    let f = |x: f64| x + eps * (w * x).sin() / w - u;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = u;
    for _ in 0..100 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - fx / (1.0 + eps * (w * x).cos());
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 {
            return next;
        }
        x = next;
    }
    x
}

/// Owns a validated configuration and the particle machinery.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    pic: Pic,
    sub_indices: Vec<usize>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let pic = Pic::new(config.grid()?, config.params.sigma())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.ic.seed);
        rng.set_stream(2);
        let m = config.subsample.min(config.particles);
        let mut sub_indices = sample(&mut rng, config.particles, m).into_vec();
        sub_indices.sort_unstable();
        Ok(Self { config, pic, sub_indices })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn pic(&self) -> &Pic {
        &self.pic
    }

    /// Samples population 1 by stratified jittered inversion in `x` and Gaussian
    /// velocities, and pairs each sample with its image under the optimal map.
    pub fn init_paired(&self) -> Result<SimState> {
        let cfg = &self.config;
        let (n, d) = (cfg.particles, cfg.params.d());
        let ic = &cfg.ic;
        let (e1, e2) = ic.amplitudes();
        let k = ic.mode as f64;

        let mut pos_rng = ChaCha8Rng::seed_from_u64(ic.seed);
        pos_rng.set_stream(0);
        let mut vel_rng = ChaCha8Rng::seed_from_u64(ic.seed);
        vel_rng.set_stream(1);

        let mut x1 = Vec::with_capacity(n * d);
        let mut x2 = Vec::with_capacity(n * d);
        let mut v1 = Vec::with_capacity(n * d);
        for i in 0..n {
            let u = (i as f64 + pos_rng.random::<f64>()) / n as f64;
            // both profiles are even in x, so the optimal cut of the circle is zero
            // and the monotone map is F2^{-1}(F1(x)) = F2^{-1}(u)
            let a = inverse_cdf(u, e1, k);
            let b = if e2 == e1 { a } else { inverse_cdf(u, e2, k) };
            x1.push(a);
            x2.push(b);
            for _ in 1..d {
                let y: f64 = pos_rng.random();
                x1.push(y);
                x2.push(y);
            }
            for _ in 0..d {
                let g: f64 = vel_rng.sample(StandardNormal);
                v1.push(ic.vth * g);
            }
        }
        let mut v2 = v1.clone();
        if ic.family == Family::VelocityShift {
            v2.iter_mut().step_by(d).for_each(|v| *v += ic.shift);
        }

        let vmax = v1.iter().chain(&v2).fold(0.0f64, |m, v| m.max(v.abs()));
        let h = self.pic.grid.cell_size();
        if cfg.dt * vmax > cfg.cfl_safety * h {
            return Err(Error::Simulation(format!(
                "CFL guard: dt * max|v| = {} exceeds {} * cell size {h}",
                cfg.dt * vmax,
                cfg.cfl_safety
            )));
        }
        let ensemble = PairedEnsemble::new(d, x1, v1, x2, v2, vec![1.0 / n as f64; n], 0.0)?;
        self.state_from_ensemble(ensemble)
    }

    /// Deposits both marginals and solves both fields.
    pub fn state_from_ensemble(&self, ensemble: PairedEnsemble) -> Result<SimState> {
        let time = ensemble.time;
        let (rho1, grad_u1, acc1) = self.field_of(&ensemble.x1, ensemble.weights())?;
        let (rho2, grad_u2, acc2) = self.field_of(&ensemble.x2, ensemble.weights())?;
        Ok(SimState { ensemble, rho1, rho2, grad_u1, grad_u2, acc1, acc2, time })
    }

    fn field_of(&self, x: &[f64], w: &[f64]) -> Result<(GridDensity, FieldGrid, Vec<f64>)> {
        let rho = self.pic.deposit(x, w)?;
        let grad = self.pic.grad_potential(&rho)?;
        let mut acc = self.pic.interpolate(&grad, x)?;
        acc.par_iter_mut().for_each(|a| *a = -*a);
        Ok((rho, grad, acc))
    }

    fn kick(v: &mut [f64], acc: &[f64], dt: f64) -> Result<()> {
        v.par_iter_mut().zip(acc).for_each(|(v, a)| *v += dt * a);
        if v.par_iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation("velocity overflow".into()));
        }
        Ok(())
    }

    fn drift(&self, x: &mut [f64], v: &[f64], dt: f64) {
        let torus = self.pic.grid.domain() == Domain::Torus;
        x.par_iter_mut().zip(v).for_each(|(x, v)| {
            let y = *x + dt * v;
            *x = if torus {
                let r = y.rem_euclid(1.0);
                if r >= 1.0 {
                    0.0
                } else {
                    r
                }
            } else {
                y
            };
        });
    }

    /// One kick-drift-kick step of the configured length.
    pub fn step(&self, state: &mut SimState) -> Result<()> {
        self.step_dt(state, self.config.dt)
    }

    /// One kick-drift-kick step of length `dt`; negative `dt` runs backwards.
    pub fn step_dt(&self, state: &mut SimState, dt: f64) -> Result<()> {
        let e = &mut state.ensemble;
        Self::kick(&mut e.v1, &state.acc1, 0.5 * dt)?;
        Self::kick(&mut e.v2, &state.acc2, 0.5 * dt)?;
        self.drift(&mut e.x1, &e.v1, dt);
        self.drift(&mut e.x2, &e.v2, dt);
        let (rho1, g1, a1) = self.field_of(&e.x1, e.weights())?;
        let (rho2, g2, a2) = self.field_of(&e.x2, e.weights())?;
        Self::kick(&mut e.v1, &a1, 0.5 * dt)?;
        Self::kick(&mut e.v2, &a2, 0.5 * dt)?;
        state.time += dt;
        e.time = state.time;
        (state.rho1, state.grad_u1, state.acc1) = (rho1, g1, a1);
        (state.rho2, state.grad_u2, state.acc2) = (rho2, g2, a2);
        Ok(())
    }

    /// Kick-drift-kick under prescribed `grad U` fields; densities and fields in the
    /// state are left as they were.
    pub fn step_frozen(&self, state: &mut SimState, dt: f64, grad_u1: &FieldGrid, grad_u2: &FieldGrid) -> Result<()> {
        let accel = |x: &[f64], g: &FieldGrid| -> Result<Vec<f64>> {
            Ok(self.pic.interpolate(g, x)?.into_iter().map(|a| -a).collect())
        };
        let e = &mut state.ensemble;
        for (x, v, g) in [(&mut e.x1, &mut e.v1, grad_u1), (&mut e.x2, &mut e.v2, grad_u2)] {
            Self::kick(v, &accel(x, g)?, 0.5 * dt)?;
            self.drift(x, v, dt);
            Self::kick(v, &accel(x, g)?, 0.5 * dt)?;
        }
        state.time += dt;
        e.time = state.time;
        Ok(())
    }

    pub fn energies(&self, state: &SimState) -> (f64, f64) {
        let e = &state.ensemble;
        (
            self.pic.energy(&e.x1, &e.v1, e.weights(), &state.grad_u1),
            self.pic.energy(&e.x2, &e.v2, e.weights(), &state.grad_u2),
        )
    }

    pub fn subsample_indices(&self) -> &[usize] {
        &self.sub_indices
    }

    pub fn diagnostics(&self, state: &SimState) -> Result<Diagnostics> {
        let params = &self.config.params;
        let ens = &state.ensemble;
        let (cx, cv) = ens.costs(params);
        let kinetic = solve_dp_implicit(cx, cv, params.p(), Form::Flow)?;
        let (energy1, energy2) = self.energies(state);

        let sub = ens.subset(&self.sub_indices)?;
        let (left, right) = sub.marginals()?;
        let cost = cost_matrix(&left, &right, CostKind::Phase, params)?;
        let wp_sub = solve_exact(&cost, &left, &right)?.objective;
        let pair: Vec<f64> = (0..sub.len())
            .map(|i| {
                let (a, b) = sub.pair_costs(i, params);
                a + b
            })
            .collect();
        let w = sub.weights();
        let qp_sub = compensated_sum(pair.iter().zip(w).map(|(c, w)| c * w));
        let var = compensated_sum(pair.iter().zip(w).map(|(c, w)| w * (c - qp_sub).powi(2)));
        let qp_sub_se = if sub.len() > 1 { (var / (sub.len() - 1) as f64).sqrt() } else { 0.0 };

        let (sup_rho1, sup_rho2) = state.sup_norms();
        Ok(Diagnostics {
            t: state.time,
            qp: cx + cv,
            dp: kinetic.dp,
            lambda: kinetic.lambda,
            a: compute_a(&state.rho1, &state.rho2, params),
            sup_rho1,
            sup_rho2,
            energy1,
            energy2,
            wp_sub,
            qp_sub,
            qp_sub_se,
            kinetic,
        })
    }

    /// Runs to the last requested time, handing each snapshot to `sink`.
    pub fn run_with<F>(&self, snapshot_times: &[f64], mut sink: F) -> Result<RunSummary>
    where
        F: FnMut(Snapshot) -> Result<()>,
    {
        let dt = self.config.dt;
        let total = self.config.steps();
        let mut marks = Vec::with_capacity(snapshot_times.len());
        for &t in snapshot_times {
            let k = (t / dt).round();
            if !(k >= 0.0 && k <= total as f64) {
                return Err(Error::InvalidParameter(format!("snapshot time {t} outside [0, {}]", self.config.t_end)));
            }
            marks.push(k as usize);
        }
        marks.sort_unstable();
        marks.dedup();
        let mut summary = RunSummary { blowup: None, a_trace: Vec::new(), dt };
        let Some(&last) = marks.last() else {
            return Ok(summary);
        };

        let mut state = self.init_paired()?;
        let mut next = 0;
        for step in 0..=last {
            if step > 0 {
                self.step(&mut state)?;
                state.time = step as f64 * dt;
                state.ensemble.time = state.time;
            }
            let sup = state.rho1.sup().max(state.rho2.sup());
            if sup >= self.config.blowup_cap {
                summary.blowup = Some(BlowUp { time: state.time, sup });
                return Ok(summary);
            }
            summary.a_trace.push(compute_a(&state.rho1, &state.rho2, &self.config.params));
            if marks[next] == step {
                let diagnostics = self.diagnostics(&state)?;
                sink(Snapshot { state: state.clone(), diagnostics })?;
                next += 1;
            }
        }
        Ok(summary)
    }
}

pub fn init_paired(config: &SimConfig) -> Result<SimState> {
    Simulator::new(config.clone())?.init_paired()
}

/// One leapfrog step. Builds the field solver each call; hold a [`Simulator`] to
/// step repeatedly.
pub fn step_leapfrog(state: &mut SimState, config: &SimConfig) -> Result<()> {
    Simulator::new(config.clone())?.step(state)
}

pub fn run_paired(config: &SimConfig, snapshot_times: &[f64]) -> Result<RunOutput> {
    let sim = Simulator::new(config.clone())?;
    let mut snapshots = Vec::new();
    let summary = sim.run_with(snapshot_times, |s| {
        snapshots.push(s);
        Ok(())
    })?;
    Ok(RunOutput { snapshots, summary })
}

/// Evenly spaced snapshot times `0, T/count, ..., T`.
pub fn uniform_times(t_end: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| t_end * i as f64 / count.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(family: Family, n: usize, cells: usize) -> SimConfig {
        let ic = InitialCondition { family, ..Default::default() };
        let mut c = SimConfig::new(Params::torus_1d(2.0).unwrap(), ic);
        c.particles = n;
        c.cells = cells;
        c
    }

    #[test]
    fn a_examples() {
        let g = Grid::torus(1, 8).unwrap();
        let one = GridDensity::new(g.clone(), vec![1.0; 8]).unwrap();
        let params = Params::torus_1d(2.0).unwrap();
        assert_eq!(compute_a(&one, &one, &params), 2.0);
        let mut v = vec![1.0; 8];
        v[0] = 2.0;
        v[1] = 0.0;
        let two = GridDensity::new(g, v).unwrap();
        let a = compute_a(&one, &two, &params);
        assert!((a - (2.0 + 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn inverse_cdf_roundtrip() {
        for &eps in &[0.0, 0.3, -0.9, 0.99] {
            for i in 0..=50 {
                let u = i as f64 / 50.0;
                let x = inverse_cdf(u, eps, 2.0);
                let f = x + eps * (4.0 * PI * x).sin() / (4.0 * PI);
                assert!((f - u).abs() < 1e-14, "eps={eps} u={u}");
            }
        }
    }

    #[test]
    fn lattice_deposit_is_uniform() {
        let pic = Pic::new(Grid::torus(1, 64).unwrap(), Sign::Repulsive).unwrap();
        let x: Vec<f64> = (0..256).map(|i| (i as f64 + 0.37) / 256.0).collect();
        let rho = pic.deposit(&x, &vec![1.0 / 256.0; 256]).unwrap();
        assert!(rho.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((rho.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deposit_2d_conserves_mass() {
        let pic = Pic::new(Grid::torus(2, 16).unwrap(), Sign::Repulsive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2 * 5000).map(|_| rng.random()).collect();
        let rho = pic.deposit(&x, &vec![1.0 / 5000.0; 5000]).unwrap();
        assert!((rho.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("a".parse::<Family>().unwrap(), Family::PerturbedAmplitude);
        assert_eq!("identical".parse::<Family>().unwrap(), Family::Identical);
        assert!("d".parse::<Family>().is_err());
    }

    #[test]
    fn rejects_non_positive_profiles() {
        let mut c = config(Family::PerturbedAmplitude, 64, 16);
        c.ic.eps2 = 1.0;
        assert!(Simulator::new(c).is_err());
        let mut c = config(Family::PerturbedAmplitude, 64, 16);
        c.ic.eps2 = c.ic.eps1;
        assert!(Simulator::new(c).is_err());
    }

    #[test]
    fn identical_pair_has_zero_cost() {
        let sim = Simulator::new(config(Family::Identical, 1024, 64)).unwrap();
        let s = sim.init_paired().unwrap();
        let d = sim.diagnostics(&s).unwrap();
        assert_eq!(d.qp, 0.0);
        assert_eq!(d.wp_sub, 0.0);
    }

    #[test]
    fn perturbed_pair_moves_positions_only() {
        let sim = Simulator::new(config(Family::PerturbedAmplitude, 4096, 64)).unwrap();
        let s = sim.init_paired().unwrap();
        let (cx, cv) = s.ensemble.costs(&sim.config().params);
        assert_eq!(cv, 0.0);
        assert!(cx > 0.0);
    }

    #[test]
    fn shifted_pair_costs_the_shift() {
        let sim = Simulator::new(config(Family::VelocityShift, 1000, 64)).unwrap();
        let s = sim.init_paired().unwrap();
        let (cx, cv) = s.ensemble.costs(&sim.config().params);
        assert_eq!(cx, 0.0);
        assert!((cv - 0.05f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn free_streaming_in_uniform_density() {
        let c = config(Family::Identical, 256, 64);
        let sim = Simulator::new(c).unwrap();
        let x: Vec<f64> = (0..256).map(|i| (i as f64 + 0.5) / 256.0).collect();
        let ens = PairedEnsemble::new(1, x.clone(), vec![0.3; 256], x.clone(), vec![-0.2; 256], vec![1.0 / 256.0; 256], 0.0)
            .unwrap();
        let mut s = sim.state_from_ensemble(ens).unwrap();
        for _ in 0..5 {
            sim.step(&mut s).unwrap();
        }
        for (i, &x0) in x.iter().enumerate() {
            assert!((s.ensemble.v1[i] - 0.3).abs() < 1e-14);
            assert!((s.ensemble.v2[i] + 0.2).abs() < 1e-14);
            let want = (x0 + 5.0 * 1e-3 * 0.3).rem_euclid(1.0);
            assert!((s.ensemble.x1[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn frozen_manufactured_force() {
        let c = config(Family::PerturbedAmplitude, 2000, 512);
        let sim = Simulator::new(c).unwrap();
        let mut s = sim.init_paired().unwrap();
        let force = |x: f64| (2.0 * PI * x).sin() / (2.0 * PI);
        let grad = FieldGrid::from_fn(sim.pic().grid().clone(), |x| vec![-force(x[0])]).unwrap();
        let (x0, v0) = (s.ensemble.x1.clone(), s.ensemble.v1.clone());
        let dt = 1e-3;
        sim.step_frozen(&mut s, dt, &grad, &grad).unwrap();
        for i in 0..x0.len() {
            let dv = s.ensemble.v1[i] - v0[i];
            assert!((dv - dt * force(x0[i])).abs() <= 1e-6);
        }
    }

    #[test]
    fn reverse_step_recovers_state() {
        let sim = Simulator::new(config(Family::PerturbedAmplitude, 1 << 12, 128)).unwrap();
        let s0 = sim.init_paired().unwrap();
        let mut s = s0.clone();
        sim.step_dt(&mut s, 1e-3).unwrap();
        sim.step_dt(&mut s, -1e-3).unwrap();
        for (a, b) in s.ensemble.x1.iter().zip(&s0.ensemble.x1) {
            let d = (a - b).abs();
            assert!(d.min(1.0 - d) < 1e-10);
        }
        for (a, b) in s.ensemble.v2.iter().zip(&s0.ensemble.v2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn marginals_deposit_bit_exactly() {
        let sim = Simulator::new(config(Family::PerturbedAmplitude, 5000, 64)).unwrap();
        let mut s = sim.init_paired().unwrap();
        sim.step(&mut s).unwrap();
        let (left, right) = s.ensemble.marginals().unwrap();
        assert_eq!(sim.pic().deposit(left.positions(), left.weights()).unwrap(), s.rho1);
        assert_eq!(sim.pic().deposit(right.positions(), right.weights()).unwrap(), s.rho2);
    }

    #[test]
    fn blowup_cap_stops_the_run() {
        let mut c = config(Family::PerturbedAmplitude, 1000, 32);
        c.blowup_cap = 1.0;
        let out = run_paired(&c, &[0.0, 0.01]).unwrap();
        assert!(out.summary.blowup.is_some());
        assert!(out.snapshots.is_empty());
    }

    #[test]
    fn whole_space_run_conserves_mass() {
        let ic = InitialCondition { family: Family::PerturbedAmplitude, ..Default::default() };
        let params = Params::new(2.0, 1, Sign::Repulsive, Domain::WholeSpace).unwrap();
        let mut c = SimConfig::new(params, ic);
        c.particles = 4096;
        c.cells = 256;
        c.t_end = 0.05;
        let out = run_paired(&c, &[0.0, 0.05]).unwrap();
        assert_eq!(out.snapshots.len(), 2);
        assert_eq!(out.summary.a_trace.len(), 51);
        for s in &out.snapshots {
            assert!((s.state.rho1.mass() - 1.0).abs() < 1e-10);
        }
        let e0 = out.snapshots[0].diagnostics.energy1;
        let e1 = out.snapshots[1].diagnostics.energy1;
        assert!(((e1 - e0) / e0).abs() < 1e-3, "{e0} {e1}");
    }

    #[test]
    fn tree_add_matches_sequential_layout() {
        let parts = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(tree_add(parts), Some(vec![6.0]));
    }
}
