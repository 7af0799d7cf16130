use std::f64::consts::E;

use kinwass::fields::{dual_sobolev_norm_p2, helmholtz_project, lp_norm_field, random_smooth_density, verify_field_estimate};
use kinwass::kinetic::{dp_flow_quantity, qp_of_pairing, solve_dp_implicit, Form, PairedEnsemble};
use kinwass::stability::{cp_const, kinetic_bound, kinetic_condition, kinetic_inner, loeper_bound, phi_p, BoundConstants};
use kinwass::transport::{
    cost_matrix, displacement_interpolant_1d, solve_exact, solve_sinkhorn, wp_distance, CostKind,
};
use kinwass::vlasov::{Family, InitialCondition, SimConfig, Simulator};
use kinwass::{periodic_distance, Domain, EmpiricalMeasure, Error, FieldGrid, Grid, Params, Sign};
use proptest::prelude::*;

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n)
}

/// Uniform 1D torus measure with `n` atoms.
fn measure(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = EmpiricalMeasure> {
    n.prop_flat_map(|n| (coords(n), prop::collection::vec(-1.0..1.0f64, n)))
        .prop_map(|(x, v)| EmpiricalMeasure::uniform(1, x, v).unwrap())
}

fn weighted_measure(n: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (coords(n), prop::collection::vec(-1.0..1.0f64, n), prop::collection::vec(0.05..1.0f64, n)).prop_map(|(x, v, w)| {
        let total: f64 = w.iter().sum();
        EmpiricalMeasure::new(1, x, v, w.iter().map(|w| w / total).collect()).unwrap()
    })
}

fn params(p: f64) -> Params {
    Params::new(p, 1, Sign::Repulsive, Domain::Torus).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn periodic_distance_is_a_metric(a in coords(3), b in coords(3), c in coords(3)) {
        let ab = periodic_distance(&a, &b, 3).unwrap();
        prop_assert_eq!(ab, periodic_distance(&b, &a, 3).unwrap());
        let ac = periodic_distance(&a, &c, 3).unwrap();
        let cb = periodic_distance(&c, &b, 3).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(periodic_distance(&a, &a, 3).unwrap(), 0.0);
    }

    #[test]
    fn constructors_reject_bad_weights(x in coords(4), bad in 0usize..4, scale in 1.1..3.0f64) {
        let v = vec![0.0; 4];
        let mut w = vec![0.25; 4];
        w[bad] = -0.25;
        let neg = matches!(EmpiricalMeasure::new(1, x.clone(), v.clone(), w), Err(Error::NegativeWeight { .. }));
        prop_assert!(neg);
        let w = vec![0.25 * scale; 4];
        let unnormalized = matches!(EmpiricalMeasure::new(1, x, v, w), Err(Error::NotNormalized(_)));
        prop_assert!(unnormalized);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wp_distance_metric_axioms(
        a in measure(4..=4), b in measure(4..=4), c in measure(4..=4), p in prop::sample::select(vec![1.5, 2.0, 3.0])
    ) {
        let pr = params(p);
        prop_assert_eq!(wp_distance(&a, &a, &pr).unwrap(), 0.0);
        let ab = wp_distance(&a, &b, &pr).unwrap();
        prop_assert!((ab - wp_distance(&b, &a, &pr).unwrap()).abs() <= 1e-10);
        let ac = wp_distance(&a, &c, &pr).unwrap();
        let cb = wp_distance(&c, &b, &pr).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
    }

    #[test]
    fn exact_never_exceeds_sinkhorn(a in weighted_measure(12), b in weighted_measure(9), eps in 0.01..1.0f64) {
        let pr = params(2.0);
        let cost = cost_matrix(&a, &b, CostKind::Phase, &pr).unwrap();
        let exact = solve_exact(&cost, &a, &b).unwrap().objective;
        let entropic = solve_sinkhorn(&cost, &a, &b, eps, 1e-10, 50_000).unwrap().objective;
        prop_assert!(exact <= entropic + 1e-12, "{} > {}", exact, entropic);
    }

    #[test]
    fn kinetic_weighted_objective_grows_with_lambda(a in weighted_measure(8), b in weighted_measure(8), l1 in 0.0..5.0f64, dl in 0.0..5.0f64) {
        let pr = params(2.0);
        let at = |lambda: f64| {
            let cost = cost_matrix(&a, &b, CostKind::KineticWeighted { lambda }, &pr).unwrap();
            solve_exact(&cost, &a, &b).unwrap().objective
        };
        prop_assert!(at(l1) <= at(l1 + dl) + 1e-12);
    }

    #[test]
    fn sandwich_on_paired_ensembles(
        x1 in coords(8), v1 in prop::collection::vec(-1.0..1.0f64, 8),
        dx in prop::collection::vec(-0.05..0.05f64, 8), dv in prop::collection::vec(-0.05..0.05f64, 8),
        p in prop::sample::select(vec![1.5, 2.0, 3.0]),
    ) {
        let x2: Vec<f64> = x1.iter().zip(&dx).map(|(x, d)| (x + d).rem_euclid(1.0)).collect();
        let v2: Vec<f64> = v1.iter().zip(&dv).map(|(v, d)| v + d).collect();
        let ens = PairedEnsemble::new(1, x1, v1, x2, v2, vec![0.125; 8], 0.0).unwrap();
        let pr = params(p);
        let (f1, f2) = ens.marginals().unwrap();
        let wpp = wp_distance(&f1, &f2, &pr).unwrap().powf(p);
        prop_assert!(wpp <= qp_of_pairing(&ens, &pr) + 1e-12);
        let dp = dp_flow_quantity(&ens, &pr).unwrap().dp;
        prop_assert!(wpp <= p * dp + 1e-12, "{} > p * {}", wpp, dp);
    }

    #[test]
    fn dp_monotone_in_both_costs(cx in 0.0..1.0f64, cv in 0.0..1.0f64, d in 0.0..0.5f64, p in 1.2..4.0f64) {
        for form in [Form::Metric, Form::Flow] {
            let base = solve_dp_implicit(cx, cv, p, form).unwrap().dp;
            prop_assert!(solve_dp_implicit(cx + d, cv, p, form).unwrap().dp >= base);
            prop_assert!(solve_dp_implicit(cx, cv + d, p, form).unwrap().dp >= base);
        }
    }

    #[test]
    fn bounds_monotone_and_anchored(
        lw in -12.0..-2.0f64, dw in 0.0..0.5f64, ia in 0.0..2.0f64, dia in 0.0..1.0f64,
        p in prop::sample::select(vec![1.5, 2.0, 3.0]),
    ) {
        let c = BoundConstants::default();
        let w = 10f64.powf(lw);
        prop_assert_eq!(loeper_bound(w, 0.0, &c, p, 1), w);
        prop_assert!(loeper_bound(w, ia + dia, &c, p, 1) >= loeper_bound(w, ia, &c, p, 1));
        prop_assert!(loeper_bound(w * (1.0 + dw), ia, &c, p, 1) >= loeper_bound(w, ia, &c, p, 1));
        if kinetic_condition(w, ia + dia, &c, p).holds() {
            prop_assert!(kinetic_bound(w, ia + dia, &c, p) >= kinetic_bound(w, ia, &c, p));
        }
        if kinetic_inner(w, p) < (-1.0f64).exp() && kinetic_inner(w * (1.0 + dw), p) < (-1.0f64).exp() {
            prop_assert!(kinetic_bound(w * (1.0 + dw), ia, &c, p) >= kinetic_bound(w, ia, &c, p) * (1.0 - 1e-12));
        }
        if (w / p).ln().abs() >= 1.0 / p {
            prop_assert!(kinetic_bound(w, 0.0, &c, p) >= w);
        }
    }

    #[test]
    fn field_estimate_sign_invariant_and_below_dual_norm(s1 in 0u64..1000, s2 in 1000u64..2000) {
        let g = Grid::torus(1, 256).unwrap();
        let r1 = random_smooth_density(&g, s1, 3).unwrap();
        let r2 = random_smooth_density(&g, s2, 3).unwrap();
        let pr = params(2.0);
        let a = verify_field_estimate(&r1, &r2, &pr, 0).unwrap();
        let b = verify_field_estimate(&r1, &r2, &pr.with_sigma(Sign::Attractive), 0).unwrap();
        prop_assert_eq!(a.ratio, b.ratio);
        let diff = r1.as_scalar().sub(r2.as_scalar()).unwrap();
        prop_assert!(a.lhs <= dual_sobolev_norm_p2(&diff).unwrap() + 1e-6);
    }

    #[test]
    fn helmholtz_orthogonal_at_p2(s1 in 0u64..1000, s2 in 1000u64..2000) {
        let g = Grid::torus(2, 32).unwrap();
        let a = random_smooth_density(&g, s1, 3).unwrap();
        let b = random_smooth_density(&g, s2, 3).unwrap();
        let u = FieldGrid::new(g, vec![a.values().to_vec(), b.values().iter().map(|v| 1.0 - v).collect()]).unwrap();
        let (grad, rest) = helmholtz_project(&u).unwrap();
        let (n, ng, nr) = (lp_norm_field(&u, 2.0).unwrap(), lp_norm_field(&grad, 2.0).unwrap(), lp_norm_field(&rest, 2.0).unwrap());
        prop_assert!((n * n - ng * ng - nr * nr).abs() <= 1e-10);
        let (again, _) = helmholtz_project(&grad).unwrap();
        prop_assert!(again.sub(&grad).unwrap().max_abs() <= 1e-10);
        prop_assert!(ng <= n * (1.0 + 1e-12));
    }

    #[test]
    fn interpolant_sup_controlled(s1 in 0u64..1000, s2 in 1000u64..2000, theta in 1.0..2.0f64) {
        let g = Grid::torus(1, 256).unwrap();
        let r1 = random_smooth_density(&g, s1, 2).unwrap();
        let r2 = random_smooth_density(&g, s2, 2).unwrap();
        let h = g.cell_size();
        let lip = |r: &kinwass::GridDensity| {
            let v = r.values();
            (0..v.len()).map(|i| (v[(i + 1) % v.len()] - v[i]).abs() / h).fold(0.0, f64::max)
        };
        let l = lip(&r1).max(lip(&r2));
        let mid = displacement_interpolant_1d(&r1, &r2, theta, 2.0).unwrap();
        prop_assert!(mid.sup() <= r1.sup().max(r2.sup()) * (1.0 + 5.0 * h * l));
    }
}

#[test]
fn phi_p_concave_and_nondecreasing() {
    for &p in &[1.5, 2.0, 3.0] {
        for d in 1..=2 {
            let top = 1.5 * (4.0 * (d as f64).sqrt() / E).powf(p);
            let n = 10_000;
            let h = top / n as f64;
            let vals: Vec<f64> = (0..=n).map(|i| phi_p(i as f64 * h, p, d)).collect();
            for i in 1..n {
                assert!(vals[i] >= vals[i - 1], "p={p} d={d} i={i}");
                assert!(vals[i + 1] - 2.0 * vals[i] + vals[i - 1] <= 1e-10, "p={p} d={d} i={i}");
            }
        }
    }
}

#[test]
fn cp_inequality_sweep() {
    // |log(p D / |log D|^{p/2})| <= C_p |log D| for D in (1e-12, 1/e)
    let (lo, hi) = ((1e-12f64).ln(), -1.0f64);
    for i in 0..100 {
        let p = 1.0 + 4.0 * (i as f64 + 0.5) / 100.0;
        for j in 0..100 {
            let dp = (lo + (hi - lo) * j as f64 / 99.0).exp();
            let lhs = (p * dp / dp.ln().abs().powf(0.5 * p)).ln().abs();
            assert!(lhs <= cp_const(p) * dp.ln().abs() + 1e-12, "p={p} D={dp}");
        }
    }
}

fn control_run(family: Family, seed: u64) -> SimConfig {
    let ic = InitialCondition { family, seed, ..Default::default() };
    let mut c = SimConfig::new(params(2.0), ic);
    c.particles = 16_384;
    c.cells = 128;
    c.dt = 2e-3;
    c.t_end = 1.0;
    c.subsample = 100;
    c
}

#[test]
fn pic_conserves_mass_and_energy_and_keeps_marginals() {
    let sim = Simulator::new(control_run(Family::PerturbedAmplitude, 3)).unwrap();
    let mut energies = Vec::new();
    sim.run_with(&[0.0, 0.25, 0.5, 0.75, 1.0], |snap| {
        let s = &snap.state;
        let w = s.ensemble.weights();
        assert_eq!(w.iter().sum::<f64>(), sim.config().particles as f64 * w[0]);
        let rho1 = sim.pic().deposit(&s.ensemble.x1, w).unwrap();
        let rho2 = sim.pic().deposit(&s.ensemble.x2, w).unwrap();
        assert_eq!(rho1.values(), s.rho1.values());
        assert_eq!(rho2.values(), s.rho2.values());
        assert!((s.rho1.mass() - 1.0).abs() < 1e-12);
        energies.push(snap.diagnostics.energy1);
        Ok(())
    })
    .unwrap();
    let e0 = energies[0];
    let drift = energies.iter().map(|e| ((e - e0) / e0).abs()).fold(0.0, f64::max);
    assert!(drift <= 0.01, "energy drift {drift}");
}

#[test]
fn pic_replay_is_bit_identical() {
    let run = |seed| {
        let sim = Simulator::new(control_run(Family::VelocityShift, seed)).unwrap();
        let mut rows = Vec::new();
        sim.run_with(&[0.0, 0.5, 1.0], |snap| {
            rows.push((snap.diagnostics.csv_row(), snap.state.ensemble.x1.clone()));
            Ok(())
        })
        .unwrap();
        rows
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}
