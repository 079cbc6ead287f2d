use kicklab_core::dynamics::simulate;
use kicklab_core::ldp::dv_rate;
use kicklab_core::models::ToyMap;
use kicklab_core::noise::{Density, KickLaw};
use kicklab_core::occupation::*;
use kicklab_core::seed::rng_from_seed;
use kicklab_core::state::StateVector;
use kicklab_core::twisted::*;
use rand::RngExt;

fn toy() -> (ToyMap, KickLaw) {
    (ToyMap::linear(vec![0.5]).unwrap(), KickLaw::uniform(vec![0.25]).unwrap())
}

fn line(xs: &[f64]) -> OccupationMeasure {
    OccupationMeasure::from_atoms(xs.iter().map(|x| vec![*x]).collect(), 1, 1).unwrap()
}

/// Random admissible test functions: values with sup `s` and slope at most
/// `1 - s` between neighbours, each giving a lower bound on the metric.
fn random_search(a: &[f64], b: &[f64], tries: usize, seed: u64) -> f64 {
    let mut pts: Vec<f64> = a.iter().chain(b).cloned().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut rng = rng_from_seed(seed);
    let mut best: f64 = 0.0;
    for _ in 0..tries {
        let s: f64 = rng.random_range(0.0..1.0);
        let l = 1.0 - s;
        let start = match rng.random_range(0..3) {
            0 => -s,
            1 => s,
            _ => rng.random_range(-s..=s),
        };
        let mut f = vec![start];
        for w in pts.windows(2) {
            let step = l * (w[1] - w[0]);
            let prev = *f.last().unwrap();
            let lo = (prev - step).max(-s);
            let hi = (prev + step).min(s);
            // push towards an extreme to explore the corners of the polytope
            let x = if rng.random::<f64>() < 0.5 { lo } else { hi };
            f.push(x);
        }
        let eval = |x: f64| f[pts.iter().position(|p| *p == x).unwrap()];
        let v = a.iter().map(|x| eval(*x)).sum::<f64>() / a.len() as f64
            - b.iter().map(|x| eval(*x)).sum::<f64>() / b.len() as f64;
        best = best.max(v.abs());
    }
    best
}

#[test]
fn lp_dominates_and_nearly_meets_random_search() {
    let mut rng = rng_from_seed(21);
    for case in 0..5 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lp = dual_lipschitz(&line(&a), &line(&b), DualMethod::Exact1d { axis: 0 }).unwrap().value;
        let rs = random_search(&a, &b, 200_000, case);
        assert!(rs <= lp + 1e-12, "case {case}: search {rs} beats LP {lp}");
        assert!(rs >= 0.97 * lp, "case {case}: search {rs} far below LP {lp}");
    }
}

#[test]
fn dirac_pair_matches_random_search() {
    for d in [0.2, 0.7, 1.0] {
        let lp = dual_lipschitz(&line(&[0.0]), &line(&[d]), DualMethod::Exact1d { axis: 0 }).unwrap().value;
        let rs = random_search(&[0.0], &[d], 50_000, 3);
        assert!((lp - rs).abs() < 1e-3 && (lp - 2.0 * d / (2.0 + d)).abs() < 1e-9);
    }
}

#[test]
fn dictionary_is_a_lower_bound() {
    let a = [0.0, 0.3, 0.35];
    let b = [0.6, -0.2, 0.1];
    let exact = dual_lipschitz(&line(&a), &line(&b), DualMethod::Exact1d { axis: 0 }).unwrap().value;
    let dict = dual_lipschitz(&line(&a), &line(&b), DualMethod::Dictionary { centers: 30, seed: 1 }).unwrap();
    assert!(dict.lower_bound && dict.value <= exact + 1e-12 && dict.value > 0.0);
}

#[test]
fn exponential_equivalence_matrix() {
    let (sys, law) = toy();
    let mut cases = 0;
    for seed in 0..5u64 {
        let traj = simulate(&sys, &law, &StateVector::canonical(vec![0.0]).unwrap(), 1000, seed).unwrap();
        for (m, l, k) in [(0, 2, 100), (0, 1, 50), (3, 7, 200), (1, 0, 400)] {
            let (d, bound) = exp_equivalence(&traj, m, l, k, DualMethod::Exact1d { axis: 0 }).unwrap();
            assert!(d <= bound + 1e-12, "seed {seed} ({m},{l},{k}): {d} > {bound}");
            cases += 1;
        }
        let (d, bound) = exp_equivalence(&traj, 0, 2, 100, DualMethod::Exact1d { axis: 0 }).unwrap();
        assert!(d <= 0.04 && bound == 0.04);
        let (d, bound) = exp_equivalence(&traj, 4, 4, 100, DualMethod::Exact1d { axis: 0 }).unwrap();
        assert_eq!((d, bound), (0.0, 0.0));
    }
    assert_eq!(cases, 20);
}

#[test]
fn coupling_contracts_at_rate_a() {
    let (sys, law) = toy();
    let d = coupled_distances(&sys, &law, &[0.4], &[-0.3], 30, 2).unwrap();
    for (k, dk) in d.iter().enumerate() {
        assert!((dk - 0.7 * 0.5f64.powi(k as i32)).abs() < 1e-15);
    }
}

#[test]
fn mixing_rate_from_a_dirac() {
    let (sys, law) = toy();
    let fit = mixing_decay(&sys, &law, &|_| vec![0.5], 30, 10_000, 8, MixingOptions::default()).unwrap();
    let oracle = 2f64.ln();
    assert!((fit.alpha - oracle).abs() <= 0.3 * oracle, "alpha {}", fit.alpha);
    // monotone up to twice the statistical floor
    for w in fit.distances.windows(2) {
        assert!(w[1] <= w[0] + 2.0 * fit.noise_floor);
    }
}

#[test]
fn stationary_start_stays_at_the_floor() {
    let (sys, law) = toy();
    let init = |rng: &mut kicklab_core::seed::Rng| {
        let mut u = 0.0;
        for _ in 0..60 {
            u = 0.5 * u + 0.25 * rng.random_range(-1.0..=1.0);
        }
        vec![u]
    };
    let fit = mixing_decay(&sys, &law, &init, 10, 10_000, 9, MixingOptions::default());
    match fit {
        Err(kicklab_core::Error::NoDecay) => {}
        Ok(f) => assert!(f.distances.iter().all(|d| *d <= 4.0 * f.noise_floor), "{:?}", f.distances),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn ergodic_averages_converge() {
    let (sys, law) = toy();
    let traj = simulate(&sys, &law, &StateVector::canonical(vec![0.0]).unwrap(), 40_000, 4).unwrap();
    let f = |u: &[f64]| u[0].abs();
    // E|u| under the stationary law, from a long independent run
    let long = simulate(&sys, &law, &StateVector::canonical(vec![0.0]).unwrap(), 400_000, 5).unwrap();
    let target = occupation(&long, 100, 400_000 - 100).unwrap().mean(f);
    for k in [1_000, 10_000, 40_000] {
        let m = occupation(&traj, 0, k).unwrap().mean(f);
        // stationary sd of |u| is below 0.1 and the correlation time is short
        assert!((m - target).abs() <= 5.0 * 0.1 * (3.0 / k as f64).sqrt(), "k={k}");
    }
}

#[test]
fn rare_events_and_nesting() {
    let (sys, law) = toy();
    let f = |u: &[f64]| u[0];
    let k_list = [20, 40, 80];
    let avgs = time_averages(&sys, &law, &f, &[0.0], &k_list, 20_000, 3).unwrap();
    let whole = rare_event_fit(&avgs, &k_list, LevelSet::everything());
    assert_eq!(whole.slope, 0.0);
    assert!(whole.counts.iter().all(|c| *c == 20_000));
    let g1 = rare_event_fit(&avgs, &k_list, LevelSet::at_least(0.03));
    let g2 = rare_event_fit(&avgs, &k_list, LevelSet::at_least(0.06));
    assert!(g1.slope < 0.0 && g2.slope < 0.0);
    assert!(g2.slope <= g1.slope + (g1.ci.1 - g1.slope) + (g2.ci.1 - g2.slope));
    let never = rare_event_fit(&avgs, &k_list, LevelSet::at_least(10.0));
    assert!(never.all_censored);
}

// triangular kicks, so that transition probabilities vary inside the support
fn coarse_chain(cells: usize) -> (CellPartition, TwistedKernel) {
    let sys = ToyMap::linear(vec![0.5]).unwrap();
    let law = KickLaw::with_density(vec![0.25], Density::Triangular).unwrap();
    let part = CellPartition::uniform(vec![0], 0.5, cells).unwrap();
    let k = build_kernel(&sys, &law, &vec![0.0; cells], &part, KernelOptions::default()).unwrap();
    (part, k)
}

#[test]
fn product_measure_pays_at_the_pair_level() {
    let (part, k0) = coarse_chain(20);
    let mut sigma: Vec<f64> = part.sample(|c| if c[0].abs() <= 0.1 { 1.0 + c[0] } else { 0.0 });
    let s: f64 = sigma.iter().sum();
    sigma.iter_mut().for_each(|x| *x /= s);
    let i1 = dv_rate(&k0, &sigma).unwrap();
    let sigma2 = product_measure(&sigma);
    let i2 = pair_relative_entropy(&k0, &sigma2).unwrap();
    assert!(i2 > i1 + 1e-3, "I2 {i2} vs I1 {i1}");
    // the same number from the Donsker–Varadhan sup on the pair chain
    let pc = pair_chain(&k0).unwrap();
    let i2_dv = dv_rate(&pc, &sigma2).unwrap();
    assert!((i2 - i2_dv).abs() < 1e-6 * i2.max(1.0), "{i2} vs {i2_dv}");
    let levels = [Level { m: 1, measure: sigma.clone(), rate: i1 }, Level { m: 2, measure: sigma2, rate: i2 }];
    assert_eq!(dg_aggregate(&levels, 1e-9).unwrap(), i2);
}

#[test]
fn stationary_pair_measure_costs_nothing() {
    let (_, k0) = coarse_chain(20);
    let t = power_iterate(&k0, PowerOptions::default()).unwrap();
    let n = k0.n();
    let sigma2: Vec<f64> = (0..n * n).map(|ij| t.mu[ij / n] * k0.transition(ij / n, ij % n)).collect();
    assert!(pair_relative_entropy(&k0, &sigma2).unwrap().abs() < 1e-12);
}

#[test]
fn equilibrium_pair_matches_the_first_level() {
    let (part, k0) = coarse_chain(20);
    let v = part.sample(|c| 2.0 * c[0]);
    let k = k0.with_potential(v.clone()).unwrap();
    let t = power_iterate(&k, PowerOptions::default()).unwrap();
    let nu = t.nu();
    let sigma2 = equilibrium_pair(&k, &t.h, &nu).unwrap();
    let n = k.n();
    let first = drop_last(&sigma2, n);
    let second: Vec<f64> = (0..n).map(|j| (0..n).map(|i| sigma2[i * n + j]).sum()).collect();
    for j in 0..n {
        assert!((first[j] - nu[j]).abs() < 1e-12 && (second[j] - nu[j]).abs() < 1e-9, "cell {j}");
    }
    let i2 = pair_relative_entropy(&k0, &sigma2).unwrap();
    let closed = v.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>() - t.lambda.ln();
    let i1 = dv_rate(&k0, &nu).unwrap();
    assert!((i2 - closed).abs() < 1e-8, "{i2} vs {closed}");
    assert!((i1 - closed).abs() < 1e-6, "{i1} vs {closed}");
    let levels = [Level { m: 1, measure: nu, rate: i1 }, Level { m: 2, measure: sigma2, rate: i2 }];
    assert!(dg_aggregate(&levels, 1e-8).is_ok());
}
