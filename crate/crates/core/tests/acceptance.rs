//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits nonzero if any fail.

use std::time::Instant;

use lorenzlab_core::entropy::{
    arc_sample, disk_volume_expansion, entropy_estimate, fit_linear_regime, flow_expansiveness_probe,
    greedy_cover, greedy_cover_brute_force, seeded_order, DiskConfig, DiskMesh, DoublingMap, EntropyConfig,
    EntropyEstimate, ExpansivenessConfig, TimeOneMap, Trajectories,
};
use lorenzlab_core::flow::{flow, FlowSystem, OrbitSegment, Tolerance};
use lorenzlab_core::poincare::CocycleChain;
use lorenzlab_core::shadowing::{
    certify_quasi_hyperbolic, find_recurrences, gap_scaling, horseshoe_census, pesin_block, recheck_certificate,
    scaled_step_matrix, shadow_periodic, verify_shadowing, PeriodicOrbitRecord, RecurrenceConfig, ShadowConfig,
};
use lorenzlab_core::splitting::{
    check_dominated_splitting, check_sectional_expansion, lyapunov_spectrum, oseledets_directions,
    search_domination_step, singularity_analysis, DominationVerdict, SampledSplitting, SplittingField,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;

const SIGMA: f64 = 10.0;
const RHO: f64 = 28.0;
const BETA: f64 = 8.0 / 3.0;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

// Fixed-step RK4 on the Lorenz equations plus their variational equations,
// with classical Gram-Schmidt every `renorm` steps. Shares no code with the
// library.
fn benettin_oracle(x0: [f64; 3], h: f64, renorm: usize, steps: usize) -> [f64; 3] {
    fn rhs(x: &Vector3<f64>, q: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let f = Vector3::new(
            SIGMA * (x[1] - x[0]),
            x[0] * (RHO - x[2]) - x[1],
            x[0] * x[1] - BETA * x[2],
        );
        let j = Matrix3::new(-SIGMA, SIGMA, 0.0, RHO - x[2], -1.0, -x[0], x[1], x[0], -BETA);
        (f, j * q)
    }
    let mut x = Vector3::from(x0);
    let mut q = Matrix3::identity();
    let mut sums = [0.0; 3];
    for s in 1..=steps {
        let (k1, l1) = rhs(&x, &q);
        let (k2, l2) = rhs(&(x + k1 * (h / 2.0)), &(q + l1 * (h / 2.0)));
        let (k3, l3) = rhs(&(x + k2 * (h / 2.0)), &(q + l2 * (h / 2.0)));
        let (k4, l4) = rhs(&(x + k3 * h), &(q + l3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        q += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
        if s % renorm == 0 {
            for i in 0..3 {
                let mut v: Vector3<f64> = q.column(i).into();
                for j in 0..i {
                    let u: Vector3<f64> = q.column(j).into();
                    v -= u * u.dot(&v);
                }
                let n = v.norm();
                sums[i] += n.ln();
                q.set_column(i, &(v / n));
            }
        }
    }
    let t = steps as f64 * h;
    sums.map(|s| s / t)
}

fn oracle_transient() -> [f64; 3] {
    let mut x = Vector3::new(1.0, 1.0, 20.0);
    let h = 0.001;
    for _ in 0..50_000 {
        let f = |x: &Vector3<f64>| {
            Vector3::new(SIGMA * (x[1] - x[0]), x[0] * (RHO - x[2]) - x[1], x[0] * x[1] - BETA * x[2])
        };
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    [x[0], x[1], x[2]]
}

// Unit vector of F orthogonal to the flow at field sample i.
fn unstable_direction(sys: &FlowSystem, field: &SplittingField, i: usize) -> DVector<f64> {
    let x = field.point(i);
    let flow_dir = DVector::from_vec(sys.evaluate(x).unwrap()).normalize();
    let f = &field.f[i];
    let mut best = DVector::zeros(x.len());
    for c in f.column_iter() {
        let mut v: DVector<f64> = c.into();
        v -= &flow_dir * flow_dir.dot(&v);
        if v.norm() > best.norm() {
            best = v;
        }
    }
    best.normalize()
}

fn rotation_control() -> (bool, String) {
    let sys = FlowSystem::rotation(1.0);
    let chain = CocycleChain::along_orbit(&sys, &[1.0, 0.0], 51, 0.1, 1e-12).unwrap();
    let radial = |x: &[f64]| DMatrix::from_column_slice(2, 1, &[x[0], x[1]]).normalize();
    let along = |x: &[f64]| DMatrix::from_column_slice(2, 1, &[-x[1], x[0]]).normalize();
    let split = SampledSplitting {
        points: chain.points.clone(),
        steps: chain.phi.clone(),
        e: chain.points.iter().map(|x| Some(radial(x))).collect(),
        f: chain.points.iter().map(|x| Some(along(x))).collect(),
    };
    let cert = certify_quasi_hyperbolic(&split, 0.1, 0, 50, 1.0, 0.999999).unwrap();
    match cert.violation {
        Some(v) => (!cert.passes && v.k == 1, format!("fails at k={} ({:?})", v.k, v.condition)),
        None => (false, "control certified".into()),
    }
}

fn main() {
    let total = Instant::now();
    let mut rep = Report { failures: 0 };
    let sys = FlowSystem::classic_lorenz();
    let warm = flow(&sys, &[1.0, 1.0, 20.0], 50.0, 1e-10).unwrap();

    // 1: exponent sum against the constant divergence.
    let t = Instant::now();
    let lyap = lyapunov_spectrum(&sys, &warm, 2000.0, 0.1, 1e-10).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let target = -41.0 / 3.0;
    let rel = (lyap.sum() - target).abs() / target.abs();
    rep.line(
        1,
        "Lyapunov sum at T=2000",
        rel <= 1e-3 && secs < 60.0,
        format!("sum {:.6}, rel err {rel:.2e}, {secs:.1}s", lyap.sum()),
    );

    // 2: spectrum against an independent fixed-step Benettin oracle.
    let oracle = benettin_oracle(oracle_transient(), 0.002, 5, 1_000_000);
    let diffs: Vec<f64> = lyap.exponents.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).collect();
    let ok2 = diffs.iter().all(|&d| d <= 0.02) && lyap.exponents[1].abs() < 0.01;
    rep.line(
        2,
        "Lyapunov spectrum vs oracle",
        ok2,
        format!(
            "library {:.4?}, oracle {:.4?}, max diff {:.4}",
            lyap.exponents,
            oracle,
            diffs.iter().fold(0.0f64, |a, &b| a.max(b))
        ),
    );

    // 3: origin eigenvalues and sectional rate.
    let sing = singularity_analysis(&sys, &[0.0, 0.0, 0.0]).unwrap();
    let disc = 1201f64.sqrt();
    let expected = [(-11.0 - disc) / 2.0, -8.0 / 3.0, (-11.0 + disc) / 2.0];
    let eig_err = sing
        .eigenvalues
        .iter()
        .zip(&expected)
        .map(|(e, x)| (e.re - x).abs().max(e.im.abs()))
        .fold(0.0f64, f64::max);
    let rate = sing.min_sectional_rate.unwrap_or(f64::NAN);
    rep.line(
        3,
        "origin eigenvalues and sectional rate",
        sing.eigenvalues.len() == 3 && eig_err <= 1e-10 && (rate - 9.1610).abs() <= 1e-3,
        format!("eigen err {eig_err:.1e}, sectional rate {rate:.6}"),
    );

    // Shared Lorenz splitting data.
    let t = Instant::now();
    let chain = CocycleChain::along_orbit(&sys, &warm, 21_000, 0.1, 1e-10).unwrap();
    let field = oseledets_directions(chain, 20.0, 2).unwrap();
    println!("       (splitting field: {} samples, {:.1}s)", field.len(), t.elapsed().as_secs_f64());

    // 4: domination on 10^4 samples, and the swapped control.
    let tangent = field.tangent();
    let cover = tangent.coverable(20);
    let stride = (cover.len() / 10_000).max(1);
    let samples: Vec<usize> = cover.iter().step_by(stride).take(10_000).copied().collect();
    let search = search_domination_step(&tangent, &samples, 20, 0.2).unwrap();
    let (ok4, detail4) = match search.verdict {
        DominationVerdict::Passed { l } => {
            let swapped = check_dominated_splitting(&tangent.swapped(), &samples, l, 0.2).unwrap();
            let frac = swapped.violation_count as f64 / swapped.sample_count as f64;
            (
                search.certificate.violation_count == 0 && samples.len() == 10_000 && frac >= 0.99,
                format!(
                    "L={l}, {} samples, {} violations; swapped fails at {:.2}%",
                    samples.len(),
                    search.certificate.violation_count,
                    100.0 * frac
                ),
            )
        }
        DominationVerdict::Inconclusive => (
            false,
            format!("no L <= 20 passed ({} violations at L=20)", search.certificate.violation_count),
        ),
    };
    rep.line(4, "dominated splitting", ok4, detail4);

    // 5: sectional expansion on F.
    let idx: Vec<usize> = (0..field.len()).step_by(20).collect();
    let pts: Vec<Vec<f64>> = idx.iter().map(|&i| field.point(i).to_vec()).collect();
    let fs: Vec<DMatrix<f64>> = idx.iter().map(|&i| field.f[i].clone()).collect();
    let grid: Vec<f64> = (1..=20).map(|k| k as f64).collect();
    let sect = check_sectional_expansion(&sys, &pts, &fs, &grid, 1e-3, 1e-9).unwrap();
    let l12 = oracle[0] + oracle[1];
    rep.line(
        5,
        "sectional expansion",
        sect.worst_plane_rate > 0.0 && (sect.mean_rate - l12).abs() <= 0.05,
        format!(
            "{} points, min rate {:.4}, mean {:.4} vs l1+l2 {l12:.4}",
            pts.len(),
            sect.worst_plane_rate,
            sect.mean_rate
        ),
    );

    // 6: spanning brackets on an unstable arc, and disk volume growth at
    // the same point.
    let t = Instant::now();
    let i0 = 500;
    let p = field.point(i0).to_vec();
    let u = unstable_direction(&sys, &field, i0);
    let map = TimeOneMap::new(sys.clone(), 1e-8);
    let k = arc_sample(&p, u.as_slice(), 0.5, 100_000);
    let ns: Vec<usize> = (1..=30).collect();
    let est = entropy_estimate(&map, &k, &[0.5, 0.25, 0.125], &ns, &EntropyConfig::default()).unwrap();
    let lower_at = |e: f64| {
        est.curves
            .iter()
            .find(|c| c.eps == e)
            .and_then(|c| c.lower.as_ref())
            .map_or(0.0, |f| f.slope)
    };
    let (hl5, hl25) = (lower_at(0.5), lower_at(0.25));
    let flow_dir = DVector::from_vec(sys.evaluate(&p).unwrap()).normalize();
    let half_u: Vec<f64> = (&u * 1e-3).as_slice().to_vec();
    let half_v: Vec<f64> = (&flow_dir * 1e-3).as_slice().to_vec();
    let mut mesh = DiskMesh::tangent_disk(&p, [&half_u, &half_v], [4, 4], &field.f[i0], 0.2).unwrap();
    let disk_cfg = DiskConfig {
        target_edge: 0.01,
        ..Default::default()
    };
    let vol = disk_volume_expansion(&map, &mut mesh, 12, &disk_cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    rep.line(
        6,
        "spanning entropy and volume growth",
        hl5 > 0.0 && hl25 > 0.0 && vol.v_f > 0.0 && est.h_upper >= vol.v_f - 0.1 && secs < 600.0,
        format!(
            "h_lower(0.5) {hl5:.3}, h_lower(0.25) {hl25:.3}, h_upper {:.3}, v_F {:.3}, {secs:.1}s",
            est.h_upper, vol.v_f
        ),
    );

    // 7: doubling map.
    rep_doubling(&mut rep);

    // 8: expansiveness probe on 100 attractor points.
    let t = Instant::now();
    let orbit = OrbitSegment::integrate(&sys, &warm, 550.0, 5.0, 1e-10).unwrap();
    let centers = &orbit.points[10..110];
    let base = ExpansivenessConfig {
        survivors: 8,
        max_attempts: 60,
        eps_inner: 0.01,
        ..Default::default()
    };
    let probes: Vec<_> = centers
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let c = ExpansivenessConfig {
                seed: i as u64,
                ..base.clone()
            };
            flow_expansiveness_probe(&sys, x, 0.1, 40, &c, 1e-9).unwrap()
        })
        .collect();
    let collapsed = probes
        .iter()
        .filter(|r| r.survivors > 0 && r.collapse_distance.is_some_and(|d| d <= 0.02))
        .count();
    let max_slope = probes.iter().map(|r| r.slope).fold(f64::NEG_INFINITY, f64::max);
    rep.line(
        8,
        "flow expansiveness at delta=0.1, n=40",
        collapsed >= 95 && max_slope < 0.05,
        format!(
            "{collapsed}/100 collapsed within 0.02, max inner slope {max_slope:.4}, {:.1}s",
            t.elapsed().as_secs_f64()
        ),
    );

    // Shadowing pipeline.
    let t = Instant::now();
    let split = field.scaled_poincare(&sys);
    let block = pesin_block(&split, 0.1, 50, -0.1).unwrap();
    let fine = OrbitSegment::integrate(&sys, &warm, 2100.0, 0.01, 1e-10).unwrap();
    let seeds = find_recurrences(&sys, &fine, &block, &RecurrenceConfig::default(), 1e-10).unwrap();
    let cfg = ShadowConfig::default();
    let records: Vec<PeriodicOrbitRecord> = seeds
        .par_iter()
        .filter(|s| s.t <= 6.5)
        .filter_map(|s| shadow_periodic(&sys, s, &cfg).ok())
        .collect();
    println!(
        "       (Pesin block measure {:.3}, {} seeds, {} orbits, {:.1}s)",
        block.measure,
        seeds.len(),
        records.len(),
        t.elapsed().as_secs_f64()
    );

    // 9: the LR orbit.
    let lr = records
        .iter()
        .filter(|r| r.symbol_sequence.as_deref() == Some("LR"))
        .min_by(|a, b| a.residual.total_cmp(&b.residual));
    match lr {
        Some(r) => {
            let v = verify_shadowing(r, 0.1, 1e-9, 1e-4);
            rep.line(
                9,
                "LR periodic orbit",
                (r.period - 1.5587).abs() <= 1e-3 && r.residual < 1e-9 && v.unit_distance < 1e-4 && v.e_hyperbolic,
                format!(
                    "period {:.7}, residual {:.1e}, |mu-1| {:.1e}, hyperbolic {}",
                    r.period, r.residual, v.unit_distance, v.e_hyperbolic
                ),
            );
        }
        None => rep.line(9, "LR periodic orbit", false, "no LR orbit found".into()),
    }

    // 10: shadowing bounds and gap proportionality.
    let close = records.iter().filter(|r| r.c_bound <= 0.1).count();
    let gs = lr.map(|r| gap_scaling(&sys, r, &[1e-3, 1e-4, 1e-5], &cfg));
    let (spread, ratios) = match &gs {
        Some(Ok(g)) => (g.spread, format!("{:.3?}", g.ratios)),
        Some(Err(e)) => (f64::INFINITY, e.to_string()),
        None => (f64::INFINITY, "no orbit".into()),
    };
    rep.line(
        10,
        "shadowing bounds",
        close >= 10 && spread <= 3.0,
        format!("{close} orbits with c <= 0.1, gap ratios {ratios}, spread {spread:.3}"),
    );

    // 11: horseshoe census.
    match horseshoe_census(&records, 6.0, 0.5) {
        Ok(c) => {
            let n6 = c.orbits.iter().filter(|o| o.period <= 6.0).count();
            rep.line(
                11,
                "horseshoe census",
                n6 >= 10 && c.rate > 0.3 && c.rate <= est.h_upper + 0.1,
                format!("{n6} orbits with period <= 6, rate {:.3}, h_upper {:.3}", c.rate, est.h_upper),
            );
        }
        Err(e) => rep.line(11, "horseshoe census", false, e.to_string()),
    }

    // 12: quasi-hyperbolic certificates and the neutral control.
    let starts: Vec<usize> = block
        .indices
        .iter()
        .copied()
        .step_by(97)
        .filter(|&k| k + 100 < split.steps.len())
        .take(20)
        .collect();
    let certs: Vec<_> = starts
        .iter()
        .filter_map(|&k| certify_quasi_hyperbolic(&split, 0.1, k, k + 100, 5.0, 0.8).ok())
        .filter(|c| c.passes)
        .collect();
    let tol = Tolerance::new(0.5e-10);
    let drift = certs
        .iter()
        .take(5)
        .map(|c| {
            recheck_certificate(c, &split, |j| {
                scaled_step_matrix(&sys, &split.points[j], &split.points[j + 1], 0.1, tol)
            })
            .map(|r| if r.passes { r.max_relative_drift } else { f64::INFINITY })
            .unwrap_or(f64::INFINITY)
        })
        .fold(0.0f64, f64::max);
    let (control_ok, control) = rotation_control();
    rep.line(
        12,
        "certificate re-verification",
        !certs.is_empty() && drift < 1e-4 && control_ok,
        format!("{} certificates, max drift {drift:.1e}; control {control}", certs.len()),
    );

    println!(
        "{} of 12 criteria passed in {:.1}s",
        12 - rep.failures,
        total.elapsed().as_secs_f64()
    );
    if rep.failures > 0 {
        std::process::exit(1);
    }
}

fn rep_doubling(rep: &mut Report) {
    let k: Vec<Vec<f64>> = (0..4096).map(|i| vec![(i as f64 + 0.37) / 4096.0]).collect();
    let ns: Vec<usize> = (1..=12).collect();
    let est: EntropyEstimate =
        entropy_estimate(&DoublingMap, &k, &[0.2, 0.1, 0.05], &ns, &EntropyConfig::default()).unwrap();
    let traj = Trajectories::compute(&DoublingMap, &k, 12).unwrap();
    let order = seeded_order(k.len(), 0);
    let mut exact = true;
    let mut logs = Vec::new();
    for &n in &ns {
        let brute = greedy_cover_brute_force(&traj, n, 0.2, &order);
        if n <= 8 && brute != greedy_cover(&traj, n, 0.2, &order) {
            exact = false;
        }
        logs.push((n, brute));
    }
    let cap = 0.1 * k.len() as f64;
    let (xs, ys): (Vec<usize>, Vec<f64>) = logs
        .iter()
        .filter(|&&(_, c)| (c as f64) <= cap)
        .map(|&(n, c)| (n, (c as f64).ln()))
        .unzip();
    let brute_slope = fit_linear_regime(&xs, &ys, 0.15).map_or(f64::NAN, |f| f.slope);
    let ln2 = 2f64.ln();
    rep.line(
        7,
        "doubling map entropy",
        (est.h_upper - ln2).abs() <= 0.05 && (brute_slope - ln2).abs() <= 0.05 && exact,
        format!(
            "estimate {:.4}, brute-force slope {brute_slope:.4}, exact counts n<=8: {exact}",
            est.h_upper
        ),
    );
}
