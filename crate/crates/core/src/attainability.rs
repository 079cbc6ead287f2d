//! Radius bounds and sampled coverings of the domain of attainability
//! `A_k = S(A_{k-1}) + K`, `A_0 = B(R0)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{dist, sample_ball, sample_sphere, KickedSystem};
use crate::error::{Error, Result};
use crate::noise::KickLaw;
use crate::par;
use crate::seed::child_rng;
use crate::state::{norm, StateVector};

/// Multiplier applied to sampled suprema of `|S(u)|`.
pub const SAFETY_FACTOR: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiiOptions {
    pub tol: f64,
    /// Sample count for the sup of `|S|` when no closed form is available.
    pub samples: usize,
    pub seed: u64,
}

impl Default for RadiiOptions {
    fn default() -> Self {
        Self { tol: 1e-6, samples: 400, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttainableRadii {
    /// `r_0 = R0, r_1, ..., r_kmax`
    pub radii: Vec<f64>,
    /// First `k` with `|r_k - r_{k-1}| <= tol` holding from then on.
    pub stabilized_at: Option<usize>,
    /// Whether the sup of `|S|` came from a closed form rather than sampling.
    pub exact: bool,
    pub tol: f64,
}

impl AttainableRadii {
    pub fn last(&self) -> f64 {
        *self.radii.last().expect("radii always holds r_0")
    }

    pub fn is_stable(&self) -> bool {
        self.stabilized_at.is_some()
    }
}

/// Sup of `|S(u)|` over `B(r)`: closed form when the system knows it,
/// otherwise the largest sampled value times [`SAFETY_FACTOR`].
pub fn image_radius<S: KickedSystem + ?Sized>(sys: &S, r: f64, samples: usize, seed: u64) -> Result<(f64, bool)> {
    if let Some(exact) = sys.image_radius(r) {
        return Ok((exact, true));
    }
    if r == 0.0 {
        return Ok((norm(&sys.flow(&vec![0.0; sys.dim()])?), false));
    }
    let dim = sys.dim();
    let values = par::try_map_indexed(samples, |i| {
        let mut rng = child_rng(seed, "image-radius", i as u64);
        // half on the sphere, where linear-dominated maps peak; half inside
        let u = if i % 2 == 0 { sample_sphere(dim, r, &mut rng) } else { sample_ball(dim, r, &mut rng) };
        Ok(norm(&sys.flow(&u)?))
    })?;
    Ok((SAFETY_FACTOR * values.into_iter().fold(0.0, f64::max), false))
}

pub fn attainable_radii<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    r0: f64,
    k_max: usize,
    opts: RadiiOptions,
) -> Result<AttainableRadii> {
    if !(r0 >= 0.0 && r0.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial radius {r0}")));
    }
    let kick = law.support_radius();
    let mut radii = vec![r0];
    let mut exact = true;
    for k in 1..=k_max {
        let (img, ex) = image_radius(sys, radii[k - 1], opts.samples, opts.seed ^ k as u64)?;
        exact &= ex;
        radii.push(img + kick);
    }
    let stabilized_at = (1..=k_max).find(|&k| (k..=k_max).all(|m| (radii[m] - radii[m - 1]).abs() <= opts.tol));
    Ok(AttainableRadii { radii, stabilized_at, exact, tol: opts.tol })
}

/// Endpoints of `n_points` independent kicked paths of length `depth` from 0.
pub fn attainable_cloud<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    n_points: usize,
    depth: usize,
    seed: u64,
) -> Result<Vec<StateVector>> {
    let dim = sys.dim();
    let basis = sys.basis();
    par::try_map_indexed(n_points, |i| {
        let mut rng = child_rng(seed, "cloud", i as u64);
        let mut u = vec![0.0; dim];
        for _ in 0..depth {
            let kick = law.sample(basis, &mut rng);
            u = sys.flow(&u)?;
            for (x, k) in u.iter_mut().zip(kick.coeffs()) {
                *x += k;
            }
        }
        StateVector::new(u, basis)
    })
}

/// Radius bounds together with a sampled covering.
#[derive(Clone, Debug)]
pub struct AttainableHull {
    pub radii: AttainableRadii,
    pub cloud: Vec<StateVector>,
}

impl AttainableHull {
    pub fn build<S: KickedSystem + ?Sized>(
        sys: &S,
        law: &KickLaw,
        k_max: usize,
        n_points: usize,
        opts: RadiiOptions,
    ) -> Result<Self> {
        let radii = attainable_radii(sys, law, 0.0, k_max, opts)?;
        let cloud = attainable_cloud(sys, law, n_points, k_max, opts.seed)?;
        Ok(Self { radii, cloud })
    }

    pub fn empirical_radius(&self) -> f64 {
        cloud_radius(&self.cloud)
    }

    /// Every cloud point lies within `r_k + tol`.
    pub fn is_consistent(&self) -> bool {
        self.empirical_radius() <= self.radii.last() + self.radii.tol
    }
}

pub fn cloud_radius(cloud: &[StateVector]) -> f64 {
    cloud.iter().map(StateVector::norm).fold(0.0, f64::max)
}

/// Largest norm after applying one random step to each cloud point.
pub fn one_step_image_radius<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    cloud: &[StateVector],
    seed: u64,
) -> Result<f64> {
    let basis = sys.basis();
    let norms = par::try_map_indexed(cloud.len(), |i| {
        let mut rng = child_rng(seed, "invariance", i as u64);
        let kick = law.sample(basis, &mut rng);
        let mut u = sys.flow(cloud[i].coeffs())?;
        for (x, k) in u.iter_mut().zip(kick.coeffs()) {
            *x += k;
        }
        Ok(norm(&u))
    })?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Fraction of states with norm at most `radius`.
pub fn mass_inside(states: &[StateVector], radius: f64) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    states.iter().filter(|u| u.norm() <= radius).count() as f64 / states.len() as f64
}

/// Distance from `u` to the nearest cloud point.
pub fn distance_to_cloud(u: &[f64], cloud: &[StateVector]) -> f64 {
    cloud.iter().map(|c| dist(u, c.coeffs())).fold(f64::INFINITY, f64::min)
}

pub fn write_cloud_csv<W: Write>(out: &mut W, cloud: &[StateVector]) -> Result<()> {
    let dim = cloud.first().map_or(0, StateVector::dim);
    let header: Vec<String> =
        std::iter::once("point".to_string()).chain((0..dim).map(|j| format!("coeff_{j}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for (i, u) in cloud.iter().enumerate() {
        write!(out, "{i}")?;
        for c in u.coeffs() {
            write!(out, ",{c:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_radii_json<W: Write>(out: &mut W, radii: &AttainableRadii) -> Result<()> {
    serde_json::to_writer(&mut *out, &radii.radii)?;
    writeln!(out)?;
    Ok(())
}
