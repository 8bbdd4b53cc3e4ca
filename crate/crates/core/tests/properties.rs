//! Property tests of the invariants each module promises.

use std::sync::Arc;

use proptest::prelude::*;

use kausal::causal::{causal_measure, identifiability_test, normalize_max_abs, permutation_p_value, CausalConfig};
use kausal::cli_io::read_trajectory;
use kausal::dynamics::{
    integrate_dopri5, simulate, ComponentPartition, EnsoParams, ReactionDiffusionParams, RosslerParams, SystemSpec,
    Trajectory,
};
use kausal::eval::{auroc, EventLabels, LabelMethod};
use kausal::koopman::{build_matrices, fit, residual, KoopmanModel, Mode};
use kausal::numerics::{eig2x2, pinv, svd, Matrix, SeededRng, DEFAULT_PINV_RTOL};
use kausal::observables::FeatureMap;
use kausal::stability::{classify, find_critical_mu};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn labels(bits: &[u8]) -> EventLabels {
    EventLabels {
        labels: bits.to_vec(),
        positive_count: bits.iter().filter(|&&b| b == 1).count(),
        method: LabelMethod::GammaSigma,
        phase: None,
    }
}

// numerics

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn pinv_twice_returns_full_rank_square(n in 1usize..8, seed in any::<u64>()) {
        // Diagonal shift keeps the condition number modest.
        let mut a = random_matrix(n, n, seed);
        for i in 0..n {
            a[(i, i)] += 4.0 * (n as f64).sqrt();
        }
        let back = pinv(&pinv(&a, DEFAULT_PINV_RTOL).unwrap(), DEFAULT_PINV_RTOL).unwrap();
        prop_assert!(back.sub(&a).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn svd_of_transpose_has_same_singular_values(r in 1usize..9, c in 1usize..9, seed in any::<u64>()) {
        let a = random_matrix(r, c, seed);
        let s = svd(&a).unwrap().singular_values;
        let st = svd(&a.transpose()).unwrap().singular_values;
        prop_assert_eq!(s.len(), st.len());
        for (x, y) in s.iter().zip(&st) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn eig2x2_roots_solve_characteristic_polynomial(v in prop::array::uniform4(-10.0f64..10.0)) {
        let a = Matrix::from_rows(&[[v[0], v[1]], [v[2], v[3]]]).unwrap();
        let tr = v[0] + v[3];
        let det = v[0] * v[3] - v[1] * v[2];
        for l in eig2x2(&a).unwrap() {
            let p = l * l - l * tr + det;
            prop_assert!(p.norm() < 1e-12 * (1.0 + tr.abs().powi(2) + det.abs()), "{p}");
        }
    }

    #[test]
    fn svd_is_bit_reproducible(seed in any::<u64>()) {
        let a = random_matrix(7, 4, seed);
        let (x, y) = (svd(&a).unwrap(), svd(&a).unwrap());
        prop_assert_eq!(x.u, y.u);
        prop_assert_eq!(x.singular_values, y.singular_values);
        prop_assert_eq!(x.vt, y.vt);
    }
}

// dynamics

#[test]
fn uncoupled_rossler_ignores_second_oscillator() {
    let spec = SystemSpec::CoupledRossler(RosslerParams {
        c1: 0.0,
        c2: 0.0,
        ..RosslerParams::default()
    });
    let base = spec.default_initial(0);
    let mut moved = base.clone();
    moved[3] += 1.5;
    moved[4] -= 0.7;
    moved[5] += 0.2;
    let a = simulate(&spec, &base, 0.0, 20.0, 1e-2, 1).unwrap();
    let b = simulate(&spec, &moved, 0.0, 20.0, 1e-2, 1).unwrap();
    assert_eq!(a.select_dims(&[0, 1, 2]), b.select_dims(&[0, 1, 2]));
    assert_ne!(a.select_dims(&[3]), b.select_dims(&[3]));
}

#[test]
fn reaction_diffusion_v_ignores_u_without_feedback() {
    let p = ReactionDiffusionParams {
        nx: 8,
        ny: 8,
        gamma: 0.0,
        ..ReactionDiffusionParams::default()
    };
    let spec = SystemSpec::ReactionDiffusion(p);
    let n = 64;
    let base = spec.default_initial(0);
    let mut moved = base.clone();
    moved[..n].copy_from_slice(&spec.default_initial(9)[..n]);
    let v: Vec<usize> = (n..2 * n).collect();
    let a = simulate(&spec, &base, 0.0, 1.0, 1e-3, 10).unwrap();
    let b = simulate(&spec, &moved, 0.0, 1.0, 1e-3, 10).unwrap();
    assert_eq!(a.select_dims(&v), b.select_dims(&v));
    assert_ne!(a.select_dims(&[0]), b.select_dims(&[0]));
}

// Peak |T| in each complete oscillation period.
fn period_peaks(mu: f64) -> Vec<f64> {
    let p = EnsoParams { mu, ..EnsoParams::default() };
    let period = classify(&p, mu).period.unwrap();
    let dt = 0.01;
    let tr = integrate_dopri5(&SystemSpec::Enso(p), &[1.0, 0.0], 0.0, 6.0 * period, dt, vec![]).unwrap();
    let per = (period / dt) as usize;
    (0..tr.len() / per)
        .map(|k| (k * per..(k + 1) * per).map(|i| tr.state(i)[0].abs()).fold(0.0, f64::max))
        .collect()
}

#[test]
fn enso_envelope_follows_regime() {
    for mu in [0.3, 0.5, 0.6] {
        let peaks = period_peaks(mu);
        assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "mu {mu}: {peaks:?}");
    }
    for mu in [0.7, 0.8] {
        let peaks = period_peaks(mu);
        assert!(peaks.windows(2).all(|w| w[1] >= w[0]), "mu {mu}: {peaks:?}");
    }
}

// observables

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn learned_features_lie_in_unit_interval(seed in any::<u64>(), x in prop::collection::vec(-10.0f64..10.0, 64)) {
        let mlp = FeatureMap::mlp(3, &[16, 32], seed).unwrap();
        for y in mlp.apply(&x[..3]).unwrap() {
            prop_assert!(y > 0.0 && y < 1.0);
        }
        let cnn = FeatureMap::cnn(1, 8, 8, &[2, 4], 6, seed).unwrap();
        for y in cnn.apply(&x).unwrap() {
            prop_assert!(y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn rff_kernel_is_symmetric(seed in any::<u64>(), x in prop::array::uniform3(-5.0f64..5.0), y in prop::array::uniform3(-5.0f64..5.0)) {
        let m = FeatureMap::rff(3, 64, 1.3, seed).unwrap();
        prop_assert_eq!(m.kernel_eval(&x, &y).unwrap(), m.kernel_eval(&y, &x).unwrap());
    }

    #[test]
    fn linear_polynomial_is_identity_plus_constant(x in prop::collection::vec(-1e3f64..1e3, 1..6)) {
        let p = FeatureMap::polynomial(x.len(), 1).unwrap();
        let id = FeatureMap::identity(x.len()).unwrap();
        let mut expect = vec![1.0];
        expect.extend(id.apply(&x).unwrap());
        prop_assert_eq!(p.apply(&x).unwrap(), expect);
    }
}

// koopman

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn fitted_operator_is_least_squares_optimal(seed in any::<u64>(), m in 1usize..6, n in 8usize..30) {
        let x = random_matrix(m, n, seed);
        let y = random_matrix(2, n, seed ^ 1);
        let (k, _) = fit(&x, &y, None, DEFAULT_PINV_RTOL).unwrap();
        let r = y.sub(&k.matmul(&x).unwrap()).unwrap();
        let base: f64 = r.data().iter().map(|v| v * v).sum();
        // The residual is orthogonal to every feature row.
        let ortho = r.matmul(&x.transpose()).unwrap();
        prop_assert!(ortho.max_abs() < 1e-8 * (1.0 + y.max_abs() * x.max_abs() * n as f64));
        let mut rng = SeededRng::new(seed ^ 2);
        for _ in 0..20 {
            let d = Matrix::from_fn(2, m, |_, _| rng.normal());
            let d = d.scale(1e-3 / d.frobenius_norm());
            let kp = k.add(&d).unwrap();
            let rp = y.sub(&kp.matmul(&x).unwrap()).unwrap();
            let perturbed: f64 = rp.data().iter().map(|v| v * v).sum();
            prop_assert!(perturbed >= base * (1.0 - 1e-12));
        }
    }

    #[test]
    fn snapshot_shapes(n in 5usize..40, t in 1usize..4, m in 1usize..5) {
        let s = random_matrix(n, 3, n as u64);
        let p = ComponentPartition::new(vec![0, 1], vec![2], 3).unwrap();
        let dict = FeatureMap::rff(2, m, 1.0, 0).unwrap();
        let pairs = build_matrices(&s, &p, &dict, t, Mode::Marginal).unwrap();
        prop_assert_eq!(pairs.features.shape(), (2 + m, n - t));
        prop_assert_eq!(pairs.targets.shape(), (2, n - t));
    }
}

#[test]
fn iterated_forecast_matches_direct_shift_on_linear_system() {
    // Damped rotation in (e0, e1) with an unrelated sine as the cause.
    let n = 300;
    let (c, s) = (0.3f64.cos() * 0.98, 0.3f64.sin() * 0.98);
    let mut states = Matrix::zeros(n, 3);
    states[(0, 0)] = 1.0;
    for k in 1..n {
        let (a, b) = (states[(k - 1, 0)], states[(k - 1, 1)]);
        states[(k, 0)] = c * a - s * b;
        states[(k, 1)] = s * a + c * b;
        states[(k, 2)] = (0.7 * k as f64).sin();
    }
    let p = ComponentPartition::new(vec![0, 1], vec![2], 3).unwrap();
    let dict = Arc::new(FeatureMap::identity(2).unwrap());
    let one = KoopmanModel::fit_default(&states, &p, dict.clone(), 1, Mode::Marginal).unwrap();
    for h in [2, 5, 10] {
        let direct = KoopmanModel::fit_default(&states, &p, dict.clone(), h, Mode::Marginal).unwrap();
        let origin = 20;
        let iterated = one.conditional_forecast(&states, origin, h).unwrap();
        let once = direct.predict(&states.row(origin)[..2], None).unwrap();
        for (a, b) in iterated.row(h - 1).iter().zip(&once) {
            assert!((a - b).abs() < 1e-6, "h {h}: {a} vs {b}");
        }
        let pairs = build_matrices(&states, &p, &dict, h, Mode::Marginal).unwrap();
        assert!(residual(&direct.operator, &pairs).unwrap() < 1e-20);
    }
}

// causal

#[test]
fn p_value_floor_is_one_over_n_plus_one() {
    assert_eq!(permutation_p_value(1.0, &[0.0; 100]), 1.0 / 101.0);
}

fn ks_distance_to_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn null_p_values_are_roughly_uniform() {
    let p = ComponentPartition::new(vec![0], vec![1], 2).unwrap();
    let m = Arc::new(FeatureMap::identity(1).unwrap());
    let j = Arc::new(FeatureMap::identity(2).unwrap());
    let cfg = CausalConfig::default();
    let rho: Vec<f64> = (0..50u64)
        .map(|trial| {
            let s = random_matrix(200, 2, 1000 + trial);
            identifiability_test(&s, &p, &m, &j, 1, 49, trial, &cfg).unwrap().p_value
        })
        .collect();
    let d = ks_distance_to_uniform(rho);
    assert!(d < 0.2, "KS distance {d}");
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn normalization_bounds_and_endpoint(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let mut w = v.clone();
        normalize_max_abs(&mut w);
        prop_assert!(w.iter().all(|x| x.abs() <= 1.0));
        if v.iter().any(|&x| x != 0.0) {
            prop_assert!(w.iter().any(|x| x.abs() == 1.0));
        }
    }
}

#[test]
fn normalized_measure_hits_unit_endpoint() {
    let s = random_matrix(120, 2, 4);
    let p = ComponentPartition::new(vec![0], vec![1], 2).unwrap();
    let m = Arc::new(FeatureMap::identity(1).unwrap());
    let j = Arc::new(FeatureMap::identity(2).unwrap());
    let cfg = CausalConfig {
        normalize: true,
        ..CausalConfig::default()
    };
    let a = causal_measure(&s, &p, &m, &j, &[1, 2, 3, 4], &cfg).unwrap();
    assert!(a.delta.iter().all(|d| d.abs() <= 1.0));
    assert!(a.delta.iter().any(|d| d.abs() == 1.0));
}

// stability

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn critical_mu_is_analytic(r in 0.05f64..2.0, c in 0.05f64..2.0, gamma in 0.1f64..3.0, b0 in 0.1f64..3.0) {
        let p = EnsoParams { r, c, gamma, b0, ..EnsoParams::default() };
        let exact = (r + c) / (gamma * b0);
        let mu = find_critical_mu(&p, 0.0, 3.0 * exact).unwrap();
        prop_assert!((mu - exact).abs() < 1e-6);
    }
}

// eval

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn auroc_of_negated_scores_is_complement(
        pairs in prop::collection::vec((-5i32..5, any::<bool>()), 2..60)
    ) {
        let bits: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        prop_assume!(bits.contains(&0) && bits.contains(&1));
        let l = labels(&bits);
        let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap().auroc + auroc(&neg, &l).unwrap().auroc, 1.0);
    }

    #[test]
    fn auroc_ignores_monotone_transforms(
        pairs in prop::collection::vec((-50i32..50, any::<bool>()), 2..60)
    ) {
        let bits: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        prop_assume!(bits.contains(&0) && bits.contains(&1));
        let l = labels(&bits);
        let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let t: Vec<f64> = s.iter().map(|x| (x / 10.0).exp() * 3.0 - 7.0).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap().auroc, auroc(&t, &l).unwrap().auroc);
    }
}

// cli_io

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn csv_round_trip_is_exact(
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6..30)
    ) {
        let n = values.len() / 3;
        let states = Matrix::from_vec(n, 3, values[..3 * n].to_vec()).unwrap();
        let times: Vec<f64> = (0..n).map(|i| 0.25 * i as f64).collect();
        let tr = Trajectory::new(times, states, vec![]).unwrap();
        let back = read_trajectory(tr.to_csv_string().as_bytes(), "t", None).unwrap();
        prop_assert_eq!(back, tr);
    }
}

#[test]
fn cli_exit_code_reflects_success() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        "name = \"b\"\n[system]\nkind = \"enso\"\n[stability]\nmu_values = [0.5, 0.8]\n",
    )
    .unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[system]\nkind = \"coupled_rossler\"\n").unwrap();
    let run = |cfg: &std::path::Path, stage: &str| {
        std::process::Command::new(env!("CARGO_BIN_EXE_kausal"))
            .args([stage, "--config"])
            .arg(cfg)
            .env("KAUSAL_OUT", dir.path().join("out"))
            .output()
            .unwrap()
    };
    let ok = run(&good, "stability");
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("out/b/bifurcation.csv").exists());
    assert_eq!(run(&bad, "stability").status.code(), Some(2));
    assert!(!run(&dir.path().join("missing.toml"), "causal").status.success());
}
