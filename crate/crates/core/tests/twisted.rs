use kicklab_core::models::ToyMap;
use kicklab_core::noise::KickLaw;
use kicklab_core::seed::rng_from_seed;
use kicklab_core::twisted::*;
use nalgebra::{DMatrix, DVector};
use rand::RngExt;

/// Perron root and normalized eigenvectors from a dense solver.
fn dense_triple(k: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>, f64) {
    let n = k.nrows();
    let mut eig: Vec<_> = k.complex_eigenvalues().iter().cloned().collect();
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let lambda = eig[0].re;
    let second = eig[1].norm();
    let null = |m: DMatrix<f64>| {
        let svd = m.svd(false, true);
        let vt = svd.v_t.unwrap();
        let (idx, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        DVector::from_iterator(n, vt.row(idx).iter().cloned())
    };
    let eye = DMatrix::<f64>::identity(n, n);
    let mut mu = null(k.transpose() - &eye * lambda);
    mu /= mu.sum();
    let mut h = null(k - &eye * lambda);
    h /= h.dot(&mu);
    (lambda, h, mu, second)
}

fn three_state(v1: f64) -> TwistedKernel {
    TwistedKernel::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.25, 0.5, 0.25], vec![0.0, 0.5, 0.5]], vec![0.0, v1, 0.0])
        .unwrap()
}

fn random_chain(seed: u64) -> TwistedKernel {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(3..=10usize);
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        rows[i][i] = rng.random_range(0.1..1.0);
        rows[i][(i + 1) % n] = rng.random_range(0.1..1.0);
        for j in 0..n {
            if rng.random::<f64>() < 0.3 {
                rows[i][j] += rng.random_range(0.0..1.0);
            }
        }
        let s: f64 = rows[i].iter().sum();
        rows[i].iter_mut().for_each(|x| *x /= s);
    }
    let v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    TwistedKernel::from_rows(&rows, v).unwrap()
}

fn sup_diff(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn three_state_chain_matches_dense_solver() {
    let k = three_state(2f64.ln());
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let (lambda, h, mu, _) = dense_triple(&k.to_dense());
    assert!((t.lambda - lambda).abs() < 1e-10, "{} vs {lambda}", t.lambda);
    assert!(sup_diff(&t.h, &h) < 1e-8);
    assert!(sup_diff(&t.mu, &mu) < 1e-8);
}

#[test]
fn random_chains_match_dense_solver() {
    for seed in 0..5 {
        let k = random_chain(seed);
        let t = power_iterate(&k, PowerOptions::default()).unwrap();
        let (lambda, h, mu, _) = dense_triple(&k.to_dense());
        assert!((t.lambda - lambda).abs() < 1e-10, "seed {seed}");
        assert!(sup_diff(&t.h, &h) < 1e-8, "seed {seed}");
        assert!(sup_diff(&t.mu, &mu) < 1e-8, "seed {seed}");
        assert!(t.residual_h < 1e-8 && t.residual_mu < 1e-8);
    }
}

#[test]
fn convergence_rate_is_the_spectral_ratio() {
    let k = three_state(2f64.ln());
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let (lambda, _, _, second) = dense_triple(&k.to_dense());
    let p = convergence_profile(&k, &t, &[1.0, -0.3, 2.0], 200);
    let ratio = p.ratio.unwrap();
    let oracle = second / lambda;
    assert!((ratio - oracle).abs() <= 0.05 * oracle, "{ratio} vs {oracle}");
}

#[test]
fn eigenvector_and_null_profiles() {
    let k = three_state(0.4);
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let p = convergence_profile(&k, &t, &t.h, 50);
    assert!(p.errors.iter().all(|e| *e < 1e-10));
    // f orthogonal to mu
    let f = vec![t.mu[1], -t.mu[0], 0.0];
    let p = convergence_profile(&k, &t, &f, 200);
    assert!(*p.errors.last().unwrap() < 1e-12);
}

#[test]
fn normalized_semigroup() {
    let k = random_chain(11);
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let n = k.n();
    let one = normalized_step(&k, &t, &vec![1.0; n]);
    assert!(one.iter().all(|x| (x - 1.0).abs() < 1e-8));
    // g = e_j / h recovers the j-th column of K up to lambda h
    let j = 1;
    let g: Vec<f64> = (0..n).map(|i| if i == j { 1.0 / t.h[j] } else { 0.0 }).collect();
    let s = normalized_step(&k, &t, &g);
    for i in 0..n {
        assert!((s[i] - k.entry(i, j) / (t.lambda * t.h[i])).abs() < 1e-14);
    }
    let nu = t.nu();
    let mut rng = rng_from_seed(3);
    for _ in 0..10 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sg = normalized_step(&k, &t, &g);
        let lhs: f64 = sg.iter().zip(&nu).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.iter().zip(&nu).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8);
    }
}

#[test]
fn duality_with_random_tests() {
    let k = random_chain(7);
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let mut rng = rng_from_seed(4);
    for _ in 0..20 {
        let f: Vec<f64> = (0..k.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kf = k.apply(&f);
        let lhs: f64 = kf.iter().zip(&t.mu).map(|(a, b)| a * b).sum();
        let rhs: f64 = t.lambda * f.iter().zip(&t.mu).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-8);
    }
}

fn toy_setup() -> (ToyMap, KickLaw, CellPartition) {
    (
        ToyMap::linear(vec![0.5]).unwrap(),
        KickLaw::uniform(vec![0.25]).unwrap(),
        CellPartition::uniform(vec![0], 0.5, 200).unwrap(),
    )
}

#[test]
fn twist_covariance() {
    let (sys, law, part) = toy_setup();
    let v = part.sample(|x| (3.0 * x[0]).sin());
    let c = 0.8;
    let vc: Vec<f64> = v.iter().map(|x| x + c).collect();
    let k = build_kernel(&sys, &law, &v, &part, KernelOptions::default()).unwrap();
    let kc = k.with_potential(vc).unwrap();
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let tc = power_iterate(&kc, PowerOptions::default()).unwrap();
    assert!((tc.lambda - c.exp() * t.lambda).abs() < 1e-10 * tc.lambda);
    for i in 0..k.n() {
        assert!((t.h[i] - tc.h[i]).abs() < 1e-8);
        assert!((t.mu[i] - tc.mu[i]).abs() < 1e-8);
    }
}

#[test]
fn norm_sandwich_is_bounded() {
    let (sys, law, part) = toy_setup();
    let v = part.sample(|x| x[0]);
    let k = build_kernel(&sys, &law, &v, &part, KernelOptions::default()).unwrap();
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let f = part.sample(|x| 1.0 + x[0] * x[0]);
    let c50 = sandwich_constant(&k, t.lambda, &f, 50);
    let c400 = sandwich_constant(&k, t.lambda, &f, 400);
    assert!(c50.is_finite() && (c400 - c50).abs() < 1e-6 * c50);
}

#[test]
fn mu_charges_every_attained_cell() {
    let (sys, law, part) = toy_setup();
    let k = build_kernel(&sys, &law, &vec![0.0; 200], &part, KernelOptions::default()).unwrap();
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let cloud = kicklab_core::attainability::attainable_cloud(&sys, &law, 2000, 30, 1).unwrap();
    for u in &cloud {
        let i = part.locate_state(u.coeffs()).unwrap();
        assert!(t.mu[i] > 0.0, "cell {i}");
    }
}

#[test]
fn irreducibility_power_follows_support_growth() {
    let (sys, law, part) = toy_setup();
    let k = build_kernel(&sys, &law, &vec![0.0; 200], &part, KernelOptions::default()).unwrap();
    let span = 1.0;
    let h = span / 200.0;
    for r_cells in [10usize, 20, 50, 100] {
        let r = r_cells as f64 * h;
        let bound = ((span / r).ln() / 2f64.ln()).ceil() as usize + 1;
        let irr = check_irreducibility(&k, r_cells, 20).unwrap();
        assert!(irr.m <= bound && irr.p > 0.0, "r_cells {r_cells}: m = {} > {bound}", irr.m);
    }
}

#[test]
fn triple_csv_has_header_and_rows() {
    let (sys, law, part) = toy_setup();
    let k = build_kernel(&sys, &law, &vec![0.0; 200], &part, KernelOptions::default()).unwrap();
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_triple_csv(&mut buf, &t, Some(&part)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cell,center_0,h,mu,nu"));
    assert_eq!(lines.count(), 200);
}
