//! Property tests for the structural invariants of flows, cocycles,
//! splittings, entropy counts and certificates.

use lorenzlab_core::entropy::{
    ball_membership, greedy_cover, greedy_cover_brute_force, seeded_order, DiskMesh, DoublingMap, DynamicalBallSpec,
    TimeOneMap, Trajectories,
};
use lorenzlab_core::flow::{flow, tangent_flow, FlowSystem, OrbitSegment, TangentCocycleState, TangentPropagator};
use lorenzlab_core::poincare::{cocycle_sample, linear_poincare, NormalFrame};
use lorenzlab_core::shadowing::certify_quasi_hyperbolic;
use lorenzlab_core::splitting::{check_dominated_splitting, lyapunov_spectrum, SampledSplitting};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const TOL: f64 = 1e-10;

fn lorenz() -> FlowSystem {
    FlowSystem::classic_lorenz()
}

fn attractor_point() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..20.0).prop_map(|t| flow(&lorenz(), &[1.0, 1.0, 20.0], 20.0 + t, TOL).unwrap())
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn ext(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jacobian_matches_central_differences(x in -30.0f64..30.0, y in -30.0f64..30.0, z in 0.0f64..50.0) {
        let sys = lorenz();
        let p = [x, y, z];
        let j = sys.jacobian(&p).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut a = p;
            let mut b = p;
            a[c] += h;
            b[c] -= h;
            let fa = sys.evaluate(&a).unwrap();
            let fb = sys.evaluate(&b).unwrap();
            for r in 0..3 {
                let fd = (fa[r] - fb[r]) / (2.0 * h);
                prop_assert!((fd - j[(r, c)]).abs() <= 1e-5 * j[(r, c)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn flow_is_a_semigroup(x in attractor_point(), s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let sys = lorenz();
        let a = flow(&sys, &flow(&sys, &x, s, TOL).unwrap(), t, TOL).unwrap();
        let b = flow(&sys, &x, s + t, TOL).unwrap();
        let d: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        // Absolute error scaled by the attractor size.
        prop_assert!(d < 100.0 * TOL * 50.0, "{d}");
    }

    #[test]
    fn orbit_samples_are_uniform_and_reproducible(x in attractor_point(), dur in 0.5f64..3.0, h in 0.05f64..0.3) {
        let sys = lorenz();
        let orbit = OrbitSegment::integrate(&sys, &x, dur, h, TOL).unwrap();
        let n = orbit.times.len();
        for w in orbit.times[..n - 1].windows(2) {
            prop_assert!((w[1] - w[0] - h).abs() < 1e-12);
        }
        prop_assert!(orbit.times[n - 1] - orbit.times[n - 2] <= h + 1e-12);
        for k in 0..n - 1 {
            let dt = orbit.times[k + 1] - orbit.times[k];
            let y = flow(&sys, orbit.point(k), dt, TOL).unwrap();
            let d: f64 = y.iter().zip(orbit.point(k + 1)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(d <= 10.0 * TOL * orbit.point(k + 1).iter().map(|v| v.abs()).fold(1.0, f64::max), "{d}");
        }
    }

    #[test]
    fn tangent_cocycle_law(x in attractor_point(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let sys = lorenz();
        let id = DMatrix::identity(3, 3);
        let (xs, phi_s) = tangent_flow(&sys, &x, &id, s, TOL).unwrap();
        let (_, phi_t) = tangent_flow(&sys, &xs, &id, t, TOL).unwrap();
        let (_, phi_st) = tangent_flow(&sys, &x, &id, s + t, TOL).unwrap();
        prop_assert!(rel(&(phi_t * phi_s), &phi_st) < 1e-6);
    }

    #[test]
    fn liouville_trace(x in attractor_point(), t in 0.5f64..5.0) {
        // Sum log-determinants over short steps; the full-time Jacobian is too ill-conditioned.
        let sys = lorenz();
        let n = (t / 0.1).ceil() as usize;
        let mut y = x.clone();
        let mut log_det = 0.0;
        for _ in 0..n {
            let (z, phi) = tangent_flow(&sys, &y, &DMatrix::identity(3, 3), t / n as f64, TOL).unwrap();
            log_det += phi.determinant().abs().ln();
            y = z;
        }
        let rate = log_det / t;
        prop_assert!((rate + 41.0 / 3.0).abs() < 1e-6 * 41.0 / 3.0, "{rate}");
    }

    #[test]
    fn flow_direction_is_transported(x in attractor_point(), t in 0.0f64..2.0) {
        let sys = lorenz();
        let fx = sys.evaluate(&x).unwrap();
        let (y, w) = tangent_flow(&sys, &x, &ext(&fx), t, TOL).unwrap();
        let fy = ext(&sys.evaluate(&y).unwrap());
        prop_assert!(rel(&w, &fy) < 1e-6);
    }

    #[test]
    fn reorthonormalized_frames_are_orthonormal(x in attractor_point(), t in 0.1f64..3.0) {
        let sys = lorenz();
        let mut prop = TangentPropagator::new(&sys, 3, TOL);
        let mut st = TangentCocycleState::new(&x, 3);
        st.advance(&mut prop, t).unwrap();
        prop_assert!(st.frame.iter().all(|a| a.is_finite()));
        st.reorthonormalize().unwrap();
        let g = st.frame.transpose() * &st.frame;
        prop_assert!((g - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn normal_frames_are_orthonormal_and_normal(x in attractor_point()) {
        let f = NormalFrame::at(&lorenz(), &x).unwrap();
        let g = f.basis.transpose() * &f.basis;
        prop_assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
        prop_assert!((f.basis.transpose() * &f.flow_dir).amax() < 1e-12);
    }

    #[test]
    fn scaled_cocycle_is_speed_ratio_times_unscaled(x in attractor_point(), t in 0.1f64..1.5) {
        let c = cocycle_sample(&lorenz(), &x, t, TOL).unwrap();
        prop_assert!(rel(&c.matrix_psi_star, &(&c.matrix_psi * c.speed_ratio)) < 1e-15);
    }

    #[test]
    fn linear_poincare_is_linear_and_normal(x in attractor_point(), t in 0.1f64..1.5, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let sys = lorenz();
        let f = NormalFrame::at(&sys, &x).unwrap();
        let u: Vec<f64> = f.basis.column(0).iter().copied().collect();
        let v: Vec<f64> = f.basis.column(1).iter().copied().collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let pu = DVector::from_vec(linear_poincare(&sys, &x, &u, t, TOL).unwrap());
        let pv = DVector::from_vec(linear_poincare(&sys, &x, &v, t, TOL).unwrap());
        let pw = DVector::from_vec(linear_poincare(&sys, &x, &w, t, TOL).unwrap());
        let combo = &pu * a + &pv * b;
        prop_assert!((&pw - &combo).norm() <= 1e-9 * combo.norm().max(pu.norm()));
        let (y, _) = tangent_flow(&sys, &x, &DMatrix::from_column_slice(3, 1, &w), t, TOL).unwrap();
        let fy = DVector::from_vec(sys.evaluate(&y).unwrap());
        prop_assert!(pw.dot(&fy).abs() / (pw.norm() * fy.norm()).max(1e-300) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diagonal_exponents_are_the_sorted_rates(rates in proptest::collection::vec(-3.0f64..3.0, 2..5)) {
        let sys = FlowSystem::linear_diagonal(&rates).unwrap();
        let r = lyapunov_spectrum(&sys, &vec![0.0; rates.len()], 10.0, 0.1, 1e-12).unwrap();
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (e, s) in r.exponents.iter().zip(&sorted) {
            prop_assert!((e - s).abs() < 1e-8, "{e} vs {s}");
        }
        prop_assert!(r.exponents.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((r.sum() - rates.iter().sum::<f64>()).abs() < 1e-8);
    }

    #[test]
    fn spanning_sandwich_and_hash_agree_with_brute_force(
        start in 0.0f64..1.0,
        count in 20usize..300,
        n in 1usize..8,
        eps in 0.01f64..0.3,
        seed in any::<u64>(),
    ) {
        let k: Vec<Vec<f64>> = (0..count).map(|i| vec![(start + 0.618_033_988_75 * i as f64).fract()]).collect();
        let traj = Trajectories::compute(&DoublingMap, &k, n).unwrap();
        let order = seeded_order(k.len(), seed);
        let upper = greedy_cover(&traj, n, eps, &order);
        let lower = greedy_cover(&traj, n, 2.0 * eps, &order);
        prop_assert!(lower <= upper);
        prop_assert_eq!(upper, greedy_cover_brute_force(&traj, n, eps, &order));
    }

    #[test]
    fn dynamical_balls_are_nested(c in 0.0f64..1.0, y in 0.0f64..1.0, n in 1usize..10, eps in 0.01f64..0.4) {
        let outer = DynamicalBallSpec { center: vec![c], n, eps };
        let inner = DynamicalBallSpec { center: vec![c], n: n + 1, eps };
        if ball_membership(&DoublingMap, &inner, &[y]).unwrap().member {
            prop_assert!(ball_membership(&DoublingMap, &outer, &[y]).unwrap().member);
        }
    }

    #[test]
    fn halving_the_aperture_keeps_a_passing_certificate(
        contract in 0.05f64..0.45,
        expand in 1.0f64..3.0,
        aperture in 0.05f64..1.0,
        l in 1usize..4,
    ) {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![contract, expand]));
        let split = saddle_split(20, m);
        let samples: Vec<usize> = split.coverable(l);
        let full = check_dominated_splitting(&split, &samples, l, aperture).unwrap();
        prop_assert_eq!(full.passes, full.violation_count == 0 && full.worst_ratio <= 0.5);
        if full.passes {
            prop_assert!(check_dominated_splitting(&split, &samples, l, aperture / 2.0).unwrap().passes);
        }
    }

    #[test]
    fn certificate_partitions_and_inequalities(
        rate_e in -3.0f64..0.5,
        rate_f in -0.5f64..3.0,
        len in 10usize..200,
        t0 in 0.3f64..1.0,
        lambda in 0.2f64..0.95,
    ) {
        let h = 0.1;
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![(rate_e * h).exp(), (rate_f * h).exp()]));
        let split = saddle_split(len + 1, m);
        let Ok(cert) = certify_quasi_hyperbolic(&split, h, 0, len, t0, lambda) else {
            // Only arcs shorter than one partition step may be rejected.
            prop_assert!((len as f64) * h < t0 + h);
            return Ok(());
        };
        for w in cert.times.windows(2) {
            let d = w[1] - w[0];
            prop_assert!(d >= t0 - h - 1e-9 && d <= 2.0 * t0 + h + 1e-9, "step {d}");
        }
        let ll = lambda.ln();
        let l = cert.per_step.len();
        if cert.passes {
            let mut prefix = 0.0;
            for (k, v) in cert.per_step.iter().enumerate() {
                prefix += v.log_e_norm;
                prop_assert!(prefix <= (k + 1) as f64 * ll + 1e-9);
                prop_assert!(v.log_ratio <= 2.0 * ll + 1e-9);
                let suffix: f64 = cert.per_step[k..].iter().map(|s| s.log_f_conorm).sum();
                prop_assert!(suffix >= (k as f64 - l as f64) * ll - 1e-9);
            }
        } else {
            prop_assert!(cert.violation.is_some());
        }
    }

    #[test]
    fn tangent_disks_respect_quality_and_the_cone(hu in 1e-4f64..1e-1, hv in 1e-4f64..1e-1, cells in 1usize..6) {
        let f = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mesh = DiskMesh::tangent_disk(&[0.0, 0.0, 0.0], [&[0.0, hu, 0.0], &[0.0, 0.0, hv]], [cells, cells], &f, 0.2).unwrap();
        prop_assert!(mesh.is_tangent());
        let ratio = hu.max(hv) / hu.min(hv);
        if ratio < 5.0 {
            prop_assert!(mesh.worst_aspect() < 20.0);
        }
    }
}

fn saddle_split(len: usize, m: DMatrix<f64>) -> SampledSplitting {
    SampledSplitting {
        points: (0..len).map(|k| vec![k as f64, 0.0]).collect(),
        steps: vec![m; len - 1],
        e: vec![Some(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])); len],
        f: vec![Some(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])); len],
    }
}

#[test]
fn time_one_map_balls_are_nested_on_lorenz() {
    let map = TimeOneMap::new(lorenz(), 1e-9);
    let c = flow(&lorenz(), &[1.0, 1.0, 20.0], 30.0, TOL).unwrap();
    let mut prev = true;
    for n in 1..8 {
        let spec = DynamicalBallSpec { center: c.clone(), n, eps: 0.5 };
        let y = [c[0] + 1e-3, c[1], c[2]];
        let m = ball_membership(&map, &spec, &y).unwrap().member;
        assert!(prev || !m);
        prev = m;
    }
}
