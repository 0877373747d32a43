use mflab::dynamics::{self, FlowSpec, IntegratorConfig};
use mflab::meanfield::{GridGeometry, MeasureGrid, PotentialSolver, RadialMeasure};
use mflab::modenergy::{self, monokinetic_energy, truncated_energy, truncated_energy_at_r, weak_strong_gap};
use mflab::particles::{interaction_energy, minimal_distances, pairwise_force, ParticleSystem};
use mflab::KernelSpec;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.1f64..0.95).prop_map(|s| KernelSpec::riesz(1, s).unwrap()),
        Just(KernelSpec::log(1).unwrap()),
        (0.1f64..1.95).prop_map(|s| KernelSpec::riesz(2, s).unwrap()),
        Just(KernelSpec::log(2).unwrap()),
        (1.0f64..2.95).prop_map(|s| KernelSpec::riesz(3, s).unwrap()),
    ]
}

fn min_sep(d: usize, x: &[f64]) -> f64 {
    let n = x.len() / d;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..i {
            let r2: f64 = (0..d).map(|a| (x[i * d + a] - x[j * d + a]).powi(2)).sum();
            best = best.min(r2.sqrt());
        }
    }
    best
}

/// A kernel together with `n` well-separated points in `[-1, 1]^d`.
fn config(max_n: usize) -> impl Strategy<Value = (KernelSpec, ParticleSystem)> {
    spec_strategy().prop_flat_map(move |spec| {
        let d = spec.d();
        (Just(spec), (2..=max_n).prop_flat_map(move |n| prop::collection::vec(-1.0f64..1.0, n * d)))
            .prop_filter("separated", move |(_, x)| min_sep(d, x) > 0.05)
            .prop_map(move |(spec, x)| (spec, ParticleSystem::new(d, x).unwrap()))
    })
}

fn shift(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_and_force_are_translation_invariant((spec, sys) in config(12), a in shift(3)) {
        let a = &a[..sys.d()];
        let moved = sys.translated(a);
        let (e0, e1) = (interaction_energy(&sys, &spec).unwrap(), interaction_energy(&moved, &spec).unwrap());
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0.abs().max(1.0));
        let (f0, f1) = (pairwise_force(&sys, &spec).unwrap(), pairwise_force(&moved, &spec).unwrap());
        let scale = f0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in f0.iter().zip(&f1) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn permutation_relabels_forces((spec, sys) in config(10), seed in any::<u64>()) {
        let n = sys.n();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = sys.permuted(&perm);
        let e0 = interaction_energy(&sys, &spec).unwrap();
        prop_assert!((e0 - interaction_energy(&p, &spec).unwrap()).abs() <= 1e-12 * e0.abs().max(1.0));
        let (f, fp) = (pairwise_force(&sys, &spec).unwrap(), pairwise_force(&p, &spec).unwrap());
        let d = sys.d();
        for (k, &i) in perm.iter().enumerate() {
            for a in 0..d {
                prop_assert!((fp[k * d + a] - f[i * d + a]).abs() <= 1e-12 * f[i * d + a].abs().max(1.0));
            }
        }
    }

    #[test]
    fn force_is_minus_gradient_of_energy_over_n((spec, sys) in config(16)) {
        let d = sys.d();
        let n = sys.n() as f64;
        let f = pairwise_force(&sys, &spec).unwrap();
        let total: Vec<f64> = (0..d).map(|a| (0..sys.n()).map(|i| f[i * d + a]).sum()).collect();
        let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(total.iter().all(|t| t.abs() <= 1e-12 * scale * n));
        let h = 1e-6;
        for i in 0..sys.n() {
            let mut fd = vec![0.0; d];
            for a in 0..d {
                let mut p = sys.clone();
                p.positions_mut()[i * d + a] += h;
                let mut m = sys.clone();
                m.positions_mut()[i * d + a] -= h;
                fd[a] = -(interaction_energy(&p, &spec).unwrap() - interaction_energy(&m, &spec).unwrap()) / (2.0 * h * n);
            }
            let err: f64 = (0..d).map(|a| (fd[a] - f[i * d + a]).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = (0..d).map(|a| f[i * d + a].powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-5 * norm.max(1e-3 * scale), "particle {i}: {err} vs |F| {norm}");
        }
    }

    #[test]
    fn minimal_distance_balls_are_disjoint_and_scale((_, sys) in config(12)) {
        let md = minimal_distances(&sys);
        let d = sys.d();
        let n = sys.n();
        let cap = (n as f64).powf(-1.0 / d as f64);
        for i in 0..n {
            prop_assert!(md.r[i] > 0.0 && md.r[i] <= cap);
            for j in 0..i {
                let r: f64 = (0..d).map(|a| (sys.point(i)[a] - sys.point(j)[a]).powi(2)).sum::<f64>().sqrt();
                prop_assert!(md.r[i] + md.r[j] < r);
            }
        }
        let doubled = ParticleSystem::new(d, sys.positions().iter().map(|x| 2.0 * x).collect()).unwrap();
        let md2 = minimal_distances(&doubled);
        for i in 0..n {
            prop_assert!((md2.r[i] - (2.0 * md.r[i]).min(cap)).abs() <= 1e-14);
        }
    }

}

// each case integrates a fresh radial profile, which is the slow part
proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn modulated_energy_is_translation_invariant((spec, sys) in config(8), a in shift(3)) {
        let d = sys.d();
        let a = &a[..d];
        let mu = RadialMeasure::new(spec, vec![0.0; d], 0.9, 0.5).unwrap();
        let mu_a = RadialMeasure::new(spec, a.to_vec(), 0.9, 0.5).unwrap();
        let f0 = modenergy::modulated_energy(&sys, &mu).unwrap();
        let f1 = modenergy::modulated_energy(&sys.translated(a), &mu_a).unwrap();
        prop_assert!((f0 - f1).abs() <= 1e-9 * f0.abs().max(1.0), "{f0} {f1}");
    }

    #[test]
    fn truncated_energy_at_minimal_distances_is_nonnegative((spec, sys) in config(10), p in prop_oneof![Just(0.0), Just(0.5), Just(1.5)]) {
        let mu = RadialMeasure::new(spec, vec![0.0; sys.d()], 0.8, p).unwrap();
        let tr = truncated_energy_at_r(&sys, &mu).unwrap();
        prop_assert!(tr.te_r >= 0.0, "TE = {}", tr.te_r);
        // the lower bound it implies
        prop_assert!(tr.f_n >= -(tr.te_r - tr.f_n) - 1e-9 * tr.f_n.abs().max(1.0));
    }

    #[test]
    fn monokinetic_energy_dominates_modulated_energy((spec, sys) in config(8), w in shift(3), k in -2.0f64..2.0) {
        let d = sys.d();
        let w = w[..d].to_vec();
        let mu = RadialMeasure::uniform_ball(spec, vec![0.0; d], 1.0).unwrap();
        let u = |x: &[f64]| -> mflab::Result<Vec<f64>> { Ok(x.iter().map(|c| k * c).collect()) };
        let mut s = sys.clone();
        let vel: Vec<f64> = sys.positions().iter().enumerate().map(|(i, x)| 0.3 * x + 0.1 * (i % 3) as f64).collect();
        s.set_velocities(Some(vel.clone())).unwrap();
        let h = monokinetic_energy(&s, &mu, u).unwrap();
        let f = modenergy::modulated_energy(&sys, &mu).unwrap();
        prop_assert!(h >= f - 1e-12 * f.abs().max(1.0));
        // a common boost of u and v changes nothing
        let boosted: Vec<f64> = vel.iter().enumerate().map(|(i, v)| v + w[i % d]).collect();
        s.set_velocities(Some(boosted)).unwrap();
        let ub = |x: &[f64]| -> mflab::Result<Vec<f64>> { Ok(x.iter().enumerate().map(|(a, c)| k * c + w[a]).collect()) };
        let hb = monokinetic_energy(&s, &mu, ub).unwrap();
        prop_assert!((h - hb).abs() <= 1e-9 * h.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dynamics_commute_with_relabelling(x in prop::collection::vec(-1.0f64..1.0, 16), flip in any::<bool>()) {
        prop_assume!(min_sep(2, &x) > 0.05);
        let spec = KernelSpec::log(2).unwrap();
        let sys = ParticleSystem::new(2, x).unwrap();
        let flow = if flip { FlowSpec::conservative(2) } else { FlowSpec::gradient(2) };
        let perm = [3, 1, 7, 0, 6, 2, 5, 4];
        let cfg = IntegratorConfig::fixed(1e-4);
        let a = dynamics::run(&sys, &flow, &spec, &cfg, 0.01, 100, &mut []).unwrap();
        let b = dynamics::run(&sys.permuted(&perm), &flow, &spec, &cfg, 0.01, 100, &mut []).unwrap();
        let (ea, eb) = (a.snapshots.last().unwrap().permuted(&perm), b.snapshots.last().unwrap());
        for (p, q) in ea.positions().iter().zip(eb.positions()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn mixed_flow_without_rotation_is_a_rescaled_gradient_flow(x in prop::collection::vec(-1.0f64..1.0, 16), alpha in 0.3f64..3.0) {
        prop_assume!(min_sep(2, &x) > 0.05);
        let spec = KernelSpec::log(2).unwrap();
        let sys = ParticleSystem::new(2, x).unwrap();
        let t = 0.02;
        let dt = 1e-4;
        let mixed = dynamics::run(&sys, &FlowSpec::mixed(2, alpha, 0.0).unwrap(), &spec, &IntegratorConfig::fixed(dt), t, 1000, &mut []).unwrap();
        let grad = dynamics::run(&sys, &FlowSpec::gradient(2), &spec, &IntegratorConfig::fixed(alpha * dt), alpha * t, 1000, &mut []).unwrap();
        for (p, q) in mixed.snapshots.last().unwrap().positions().iter().zip(grad.snapshots.last().unwrap().positions()) {
            prop_assert!((p - q).abs() <= 1e-9, "{p} {q}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sign_of_rotation_is_a_reflection(x in prop::collection::vec(-1.0f64..1.0, 16), alpha in 0.3f64..2.0, beta in 0.2f64..2.0) {
        prop_assume!(min_sep(2, &x) > 0.05);
        let spec = KernelSpec::log(2).unwrap();
        let sys = ParticleSystem::new(2, x).unwrap();
        let mirror = |s: &ParticleSystem| {
            ParticleSystem::new(2, s.positions().chunks(2).flat_map(|p| [p[0], -p[1]]).collect()).unwrap()
        };
        let cfg = IntegratorConfig::fixed(1e-4);
        let plus = dynamics::run(&sys, &FlowSpec::mixed(2, alpha, beta).unwrap(), &spec, &cfg, 0.02, 1000, &mut []).unwrap();
        let minus = dynamics::run(&mirror(&sys), &FlowSpec::mixed(2, alpha, -beta).unwrap(), &spec, &cfg, 0.02, 1000, &mut []).unwrap();
        let (a, b) = (plus.snapshots.last().unwrap(), mirror(minus.snapshots.last().unwrap()));
        for (p, q) in a.positions().iter().zip(b.positions()) {
            prop_assert!((p - q).abs() <= 1e-11, "{p} {q}");
        }
        // the rotation does no work: both signs dissipate alike
        let (ha, hb) = (interaction_energy(a, &spec).unwrap(), interaction_energy(&b, &spec).unwrap());
        prop_assert!((ha - hb).abs() <= 1e-10 * ha.abs().max(1.0));
    }
}

fn bump(geom: GridGeometry, c: [f64; 2], w: f64) -> MeasureGrid {
    let mut mu = MeasureGrid::rasterize(geom, 2, |x| {
        let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        (1.0 - r2 / (w * w)).max(0.0).powi(2)
    });
    mu.normalize().unwrap();
    mu
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gap_is_symmetric_and_vanishes_on_the_diagonal(cx in -0.3f64..0.3, cy in -0.3f64..0.3, w in 0.3f64..0.6) {
        let geom = GridGeometry::new(2, 32, 1.0).unwrap();
        let solver = PotentialSolver::new(geom, KernelSpec::log(2).unwrap()).unwrap();
        let a = bump(geom, [0.0, 0.0], 0.5);
        let b = bump(geom, [cx, cy], w);
        let ab = weak_strong_gap(&a, &b, &solver).unwrap();
        let ba = weak_strong_gap(&b, &a, &solver).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1e-12));
        prop_assert!(ab >= 0.0);
        prop_assert!(weak_strong_gap(&b, &b.clone(), &solver).unwrap().abs() <= 1e-14);
    }
}

#[test]
fn truncation_correction_vanishes_as_eta_shrinks() {
    let spec = KernelSpec::riesz(3, 1.0).unwrap();
    let mu = RadialMeasure::new(spec, vec![0.0; 3], 1.0, 0.5).unwrap();
    let sys = ParticleSystem::new(3, vec![0.1, 0.2, 0.0, -0.3, 0.1, 0.4, 0.2, -0.5, 0.1]).unwrap();
    let f = modenergy::modulated_energy(&sys, &mu).unwrap();
    let mut prev = f64::INFINITY;
    for eta in [0.08, 0.04, 0.02, 0.01, 0.005] {
        let te = truncated_energy(&sys, &mu, &[eta; 3]).unwrap();
        let gap = (te - 3.0 * spec.g_r(eta) - f).abs();
        // shrinks like eta^(d - s)
        assert!(gap < prev * 0.3, "eta {eta}: {gap}");
        prev = gap;
    }
    assert!(prev < 1e-3);
}

#[test]
fn regridded_density_has_no_gap_with_itself() {
    let geom = GridGeometry::new(2, 48, 1.0).unwrap();
    let solver = PotentialSolver::new(geom, KernelSpec::log(2).unwrap()).unwrap();
    let a = bump(geom, [0.1, 0.0], 0.5);
    let b = bump(geom, [0.1, 0.0], 0.5);
    assert!(weak_strong_gap(&a, &b, &solver).unwrap().abs() < 1e-12);
}
