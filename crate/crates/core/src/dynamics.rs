//! The kicked system `u_k = S(u_{k-1}) + eta_k` and its trajectories.

use std::io::Write;

use rand::RngExt;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::KickLaw;
use crate::par;
use crate::seed::{child_rng, rng_from_seed, Rng};
use crate::state::{check_blow_up, norm, Basis, StateVector};

/// Constants of the stability estimate `|S^n(u)| <= max(a |u|, r)` for `n >= n0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stability {
    pub a: f64,
    pub r: f64,
    pub n0: usize,
}

/// A deterministic time-one map `S` together with the metadata the
/// large-deviation machinery needs.
pub trait KickedSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn basis(&self) -> Basis;

    /// Applies `S` to raw coefficients.
    fn flow(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// An upper bound on the Lipschitz constant of `S` on the ball `B(r)`.
    fn lipschitz_bound(&self, r: f64) -> Option<f64>;

    /// An upper bound for `|Q_N (S(u1) - S(u2))| / |u1 - u2|` on `B(r)`.
    /// `None` means the caller should estimate it by sampling.
    fn squeezing_factor(&self, n: usize, r: f64) -> Option<f64>;

    /// Exact value of `sup_{|u| <= r} |S(u)|`, when known in closed form.
    fn image_radius(&self, _r: f64) -> Option<f64> {
        None
    }

    fn stability(&self, _r: f64) -> Option<Stability> {
        None
    }

    /// Radius of a ball that absorbs the unkicked flow.
    fn dissipation_radius(&self) -> f64 {
        0.0
    }

    fn apply(&self, u: &StateVector) -> Result<StateVector> {
        u.check_dim(self.dim())?;
        let out = StateVector::from_raw(self.flow(u.coeffs())?, self.basis());
        out.check_blow_up(None)?;
        Ok(out)
    }
}

/// One step of the chain: `S(u) + kick`.
pub fn step<S: KickedSystem + ?Sized>(sys: &S, u: &StateVector, kick: &StateVector) -> Result<StateVector> {
    u.check_dim(sys.dim())?;
    kick.check_dim(sys.dim())?;
    let mut out = sys.flow(u.coeffs())?;
    for (o, k) in out.iter_mut().zip(kick.coeffs()) {
        *o += k;
    }
    let out = StateVector::from_raw(out, sys.basis());
    out.check_blow_up(None)?;
    Ok(out)
}

fn check_law<S: KickedSystem + ?Sized>(sys: &S, law: &KickLaw) -> Result<()> {
    if law.dim() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), got: law.dim() });
    }
    Ok(())
}

/// Runs `k` steps from `u0`, drawing kicks from `rng`.
pub fn simulate_with<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    u0: &StateVector,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<StateVector>> {
    check_law(sys, law)?;
    u0.check_dim(sys.dim())?;
    let mut traj = Vec::with_capacity(k + 1);
    traj.push(u0.clone());
    for n in 1..=k {
        let kick = law.sample(sys.basis(), rng);
        let next = step(sys, &traj[n - 1], &kick).map_err(|e| with_step(e, n))?;
        traj.push(next);
    }
    Ok(traj)
}

/// Runs `k` steps from `u0`; the whole trajectory is a function of `seed`.
pub fn simulate<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    u0: &StateVector,
    k: usize,
    seed: u64,
) -> Result<Vec<StateVector>> {
    simulate_with(sys, law, u0, k, &mut rng_from_seed(seed))
}

/// Runs `k` steps and folds an observable along the way without storing
/// the states. `f` sees `u_1, ..., u_k`.
pub fn fold_path<S, F, A>(sys: &S, law: &KickLaw, u0: &[f64], k: usize, rng: &mut Rng, init: A, mut f: F) -> Result<A>
where
    S: KickedSystem + ?Sized,
    F: FnMut(A, usize, &[f64]) -> A,
{
    let basis = sys.basis();
    let mut u = u0.to_vec();
    let mut acc = init;
    for n in 1..=k {
        let kick = law.sample(basis, rng);
        let mut next = sys.flow(&u).map_err(|e| with_step(e, n))?;
        for (o, x) in next.iter_mut().zip(kick.coeffs()) {
            *o += x;
        }
        check_blow_up(&next, Some(n))?;
        acc = f(acc, n, &next);
        u = next;
    }
    Ok(acc)
}

/// `n_traj` independent trajectories, trajectory `i` seeded by
/// `derive_seed(root, component, i)`.
pub fn ensemble<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    u0: &StateVector,
    k: usize,
    n_traj: usize,
    root: u64,
    component: &str,
) -> Result<Vec<Vec<StateVector>>> {
    par::try_map_indexed(n_traj, |i| simulate_with(sys, law, u0, k, &mut child_rng(root, component, i as u64)))
}

fn with_step(e: Error, n: usize) -> Error {
    match e {
        Error::BlowUp { value, .. } => Error::BlowUp { step: Some(n), value },
        other => other,
    }
}

/// Writes `step,coeff_0,...` rows.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &[StateVector]) -> Result<()> {
    let dim = traj.first().map_or(0, StateVector::dim);
    let header: Vec<String> =
        std::iter::once("step".to_string()).chain((0..dim).map(|j| format!("coeff_{j}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for (n, u) in traj.iter().enumerate() {
        write!(out, "{n}")?;
        for c in u.coeffs() {
            write!(out, ",{c:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Uniform sample from the ball `B(r)` in `R^dim`.
pub fn sample_ball(dim: usize, r: f64, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            let radius = r * rng.random::<f64>().powf(1.0 / dim as f64);
            return v.into_iter().map(|x| x * radius / n).collect();
        }
    }
}

/// Uniform sample from the sphere `|u| = r`.
pub fn sample_sphere(dim: usize, r: f64, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x * r / n).collect();
        }
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Outcome of a sampled inequality check: the worst observed ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleCheck {
    pub samples: usize,
    pub worst: f64,
    pub bound: f64,
}

impl SampleCheck {
    pub fn holds(&self) -> bool {
        self.worst <= self.bound
    }
}

/// Checks `|S^n(u)| <= max(a|u|, r)` for `n0 <= n <= n0 + extra` on sampled `u`.
/// `worst` is the largest observed `|S^n(u)| - max(a|u|, r)`.
pub fn stability_check<S: KickedSystem + ?Sized>(
    sys: &S,
    radius: f64,
    constants: Stability,
    extra: usize,
    samples: usize,
    seed: u64,
) -> Result<SampleCheck> {
    let dim = sys.dim();
    let per_sample = par::try_map_indexed(samples, |i| {
        let mut rng = child_rng(seed, "stability", i as u64);
        let u = sample_ball(dim, radius, &mut rng);
        let limit = (constants.a * norm(&u)).max(constants.r);
        let mut x = u;
        let mut worst = f64::NEG_INFINITY;
        for n in 1..=constants.n0 + extra {
            x = sys.flow(&x)?;
            if n >= constants.n0 {
                worst = worst.max(norm(&x) - limit);
            }
        }
        Ok(worst)
    })?;
    Ok(SampleCheck { samples, worst: per_sample.into_iter().fold(f64::NEG_INFINITY, f64::max), bound: 1e-12 })
}

/// Largest ratio `|Q_N(S(u1) - S(u2))| / |u1 - u2|` over sampled pairs in `B(r)`.
pub fn squeezing_ratio<S: KickedSystem + ?Sized>(
    sys: &S,
    n: usize,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let dim = sys.dim();
    let ratios = par::try_map_indexed(samples, |i| {
        let mut rng = child_rng(seed, "squeezing", i as u64);
        let u1 = sample_ball(dim, radius, &mut rng);
        let u2 = nearby(&u1, radius, i, &mut rng);
        let d = dist(&u1, &u2);
        if d == 0.0 {
            return Ok(0.0);
        }
        let (s1, s2) = (sys.flow(&u1)?, sys.flow(&u2)?);
        Ok(dist(&s1[n.min(dim)..], &s2[n.min(dim)..]) / d)
    })?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Largest ratio `|S(u1) - S(u2)| / |u1 - u2|` over sampled pairs in `B(r)`.
pub fn empirical_lipschitz<S: KickedSystem + ?Sized>(sys: &S, radius: f64, samples: usize, seed: u64) -> Result<f64> {
    let dim = sys.dim();
    let ratios = par::try_map_indexed(samples, |i| {
        let mut rng = child_rng(seed, "lipschitz", i as u64);
        let u1 = sample_ball(dim, radius, &mut rng);
        let u2 = nearby(&u1, radius, i, &mut rng);
        let d = dist(&u1, &u2);
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok(dist(&sys.flow(&u1)?, &sys.flow(&u2)?) / d)
    })?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

// Half the pairs are independent points of the ball, half are close
// neighbours, so both global and local slopes get probed.
fn nearby(u: &[f64], radius: f64, i: usize, rng: &mut Rng) -> Vec<f64> {
    if i.is_multiple_of(2) {
        return sample_ball(u.len(), radius, rng);
    }
    let eps = 1e-4 * radius.max(1e-3);
    let d = sample_sphere(u.len(), eps, rng);
    let mut v: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
    let n = norm(&v);
    if n > radius {
        v.iter_mut().for_each(|x| *x *= radius / n);
    }
    v
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
