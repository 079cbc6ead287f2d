use kicklab_core::dynamics::{sample_ball, simulate, squeezing_ratio, KickedSystem};
use kicklab_core::models::cgl::{Cgl, CglSpec, CGL_DEFAULT_DT};
use kicklab_core::models::ns::{GalerkinNs, GalerkinNsSpec, NS_DEFAULT_DT};
use kicklab_core::models::{dt_refinement, reference_state, ToyMap};
use kicklab_core::noise::KickLaw;
use kicklab_core::seed::child_rng;
use kicklab_core::state::{norm, Basis, StateVector};

fn ns() -> GalerkinNs {
    GalerkinNs::new(GalerkinNsSpec::new(0.1, 2)).unwrap()
}

fn cgl() -> Cgl {
    Cgl::new(CglSpec::new(0.1, 1.0, 6)).unwrap()
}

#[test]
fn kicked_cgl_respects_the_gronwall_bound() {
    let sys = cgl();
    let law = KickLaw::uniform(vec![0.3; sys.dim()]).unwrap();
    let b0 = law.support_radius();
    let q = (-sys.spec().nu * sys.alpha1()).exp();
    let mut worst = f64::NEG_INFINITY;
    for run in 0..100u64 {
        let mut rng = child_rng(17, "cgl-start", run);
        let u0 = StateVector::new(sample_ball(sys.dim(), 2.0, &mut rng), Basis::DirichletSine).unwrap();
        let traj = simulate(&sys, &law, &u0, 4, run).unwrap();
        for (k, u) in traj.iter().enumerate() {
            let bound = q.powi(k as i32) * u0.norm() + b0 / (1.0 - q);
            worst = worst.max(u.norm() - bound);
        }
    }
    assert!(worst <= 1e-12, "excess {worst}");
}

#[test]
fn unforced_ns_energy_does_not_grow() {
    let sys = ns();
    for i in 0..100u64 {
        let mut rng = child_rng(5, "ns-energy", i);
        let u = sample_ball(sys.dim(), 3.0, &mut rng);
        let out = sys.flow(&u).unwrap();
        assert!(sys.kinetic_energy(&out) <= sys.kinetic_energy(&u) * (1.0 + 1e-12), "state {i}");
    }
}

#[test]
fn ns_contracts_on_a_ball() {
    let sys = ns();
    let mut q: f64 = 0.0;
    for i in 0..200u64 {
        let mut rng = child_rng(6, "ns-ball", i);
        let u = sample_ball(sys.dim(), 1.0, &mut rng);
        q = q.max(norm(&sys.flow(&u).unwrap()) / norm(&u));
    }
    assert!(q < 1.0, "q {q}");
}

#[test]
fn splitting_is_first_order() {
    let ns = ns();
    let r = dt_refinement(|dt| ns.with_dt(dt), NS_DEFAULT_DT, &reference_state(ns.dim())).unwrap();
    assert!((1.5..=2.5).contains(&r.ratio()), "NS ratio {}", r.ratio());
    assert!(r.coarse <= 1e-6, "NS step {}", r.coarse);
    let cgl = cgl();
    let r = dt_refinement(|dt| cgl.with_dt(dt), CGL_DEFAULT_DT, &reference_state(cgl.dim())).unwrap();
    assert!((1.5..=2.5).contains(&r.ratio()), "CGL ratio {}", r.ratio());
    assert!(r.coarse <= 1e-6, "CGL step {}", r.coarse);
}

#[test]
fn toy_map_examples() {
    let sys = ToyMap::linear(vec![0.5, 0.25]).unwrap();
    assert_eq!(sys.flow(&[1.0, 1.0]).unwrap(), vec![0.5, 0.25]);
    let sat = ToyMap::saturated(vec![0.5]).unwrap();
    assert!((sat.flow(&[3.0]).unwrap()[0] - 0.15).abs() < 1e-15);
    let wide = ToyMap::linear(vec![0.5, 0.3, 0.2]).unwrap();
    assert!(squeezing_ratio(&wide, 1, 1.0, 400, 2).unwrap() <= wide.squeezing_factor(1, 1.0).unwrap() + 1e-12);
}
