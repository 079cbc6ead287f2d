//! Galerkin truncation of the 2D Navier–Stokes equations on the periodic
//! torus `[0, 2pi]^2`, in vorticity form with zero mean.
//!
//! A retained wavevector `k` (taken from the half plane `k1 > 0` or
//! `k1 = 0, k2 > 0`) carries two real coordinates `(c, s)` for the
//! orthonormal pair `cos(k.x) / (sqrt 2 pi)`, `sin(k.x) / (sqrt 2 pi)`.
//! Coordinates are ordered by `|k|^2`, so a prefix is a low-mode projection.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{KickedSystem, Stability};
use crate::error::{Error, Result};
use crate::state::{check_blow_up, Basis};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NsIntegrator {
    /// Euler step on the advection term, exact integrating factor for diffusion.
    #[default]
    IntegratingFactor,
    /// Euler step on the advection term, backward Euler for diffusion.
    SemiImplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalerkinNsSpec {
    pub nu: f64,
    /// Keep every wavevector with `0 < |k|^2 <= k2_max`.
    #[serde(default = "default_k2_max")]
    pub k2_max: i32,
    /// Explicit half-plane wavevectors; overrides `k2_max` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavevectors: Option<Vec<[i32; 2]>>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub integrator: NsIntegrator,
}

fn default_k2_max() -> i32 {
    2
}

pub const NS_DEFAULT_DT: f64 = 1.0 / 4096.0;

fn default_dt() -> f64 {
    NS_DEFAULT_DT
}

impl GalerkinNsSpec {
    pub fn new(nu: f64, k2_max: i32) -> Self {
        Self { nu, k2_max, wavevectors: None, dt: NS_DEFAULT_DT, integrator: NsIntegrator::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidSpec(format!("viscosity {} must be positive", self.nu)));
        }
        steps_per_unit(self.dt)?;
        let reps = self.representatives();
        if reps.is_empty() {
            return Err(Error::InvalidSpec("no retained wavevectors".into()));
        }
        for k in &reps {
            if !in_half_plane(*k) {
                return Err(Error::InvalidSpec(format!("wavevector {k:?} is not a half-plane representative")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if !reps.iter().all(|k| seen.insert(*k)) {
            return Err(Error::InvalidSpec("duplicate wavevector".into()));
        }
        Ok(())
    }

    /// Half-plane representatives sorted by `|k|^2`, then lexicographically.
    pub fn representatives(&self) -> Vec<[i32; 2]> {
        let mut reps = match &self.wavevectors {
            Some(list) => list.clone(),
            None => {
                let m = (self.k2_max.max(0) as f64).sqrt().floor() as i32;
                let mut v = Vec::new();
                for k1 in 0..=m {
                    for k2 in -m..=m {
                        let k = [k1, k2];
                        let q = k1 * k1 + k2 * k2;
                        if q > 0 && q <= self.k2_max && in_half_plane(k) {
                            v.push(k);
                        }
                    }
                }
                v
            }
        };
        reps.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
        reps
    }
}

fn in_half_plane(k: [i32; 2]) -> bool {
    k[0] > 0 || (k[0] == 0 && k[1] > 0)
}

/// Number of inner steps making up one time unit; `dt` must divide 1.
pub fn steps_per_unit(dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(Error::InvalidSpec(format!("dt = {dt} must lie in (0, 1]")));
    }
    let n = (1.0 / dt).round();
    if ((n * dt) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!("dt = {dt} does not divide 1")));
    }
    Ok(n as usize)
}

#[derive(Clone, Copy, Debug)]
struct Triad {
    k: usize,
    p: usize,
    q: usize,
    coef: f64,
}

#[derive(Clone, Debug)]
pub struct GalerkinNs {
    spec: GalerkinNsSpec,
    reps: Vec<[i32; 2]>,
    k2: Vec<f64>,
    triads: Vec<Triad>,
    steps: usize,
}

const SCALE: f64 = 2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI;

impl GalerkinNs {
    pub fn new(spec: GalerkinNsSpec) -> Result<Self> {
        spec.validate()?;
        let reps = spec.representatives();
        let m = reps.len();
        // full index: i < m is k = reps[i], i >= m is -reps[i - m]
        let mut index = HashMap::new();
        for (i, k) in reps.iter().enumerate() {
            index.insert(*k, i);
            index.insert([-k[0], -k[1]], i + m);
        }
        let vec_of = |i: usize| if i < m { reps[i] } else { [-reps[i - m][0], -reps[i - m][1]] };
        let mut triads = Vec::new();
        for (ki, k) in reps.iter().enumerate() {
            for pi in 0..2 * m {
                let p = vec_of(pi);
                let q = [k[0] - p[0], k[1] - p[1]];
                if let Some(&qi) = index.get(&q) {
                    let cross = (p[0] * q[1] - p[1] * q[0]) as f64;
                    if cross != 0.0 {
                        let p2 = (p[0] * p[0] + p[1] * p[1]) as f64;
                        triads.push(Triad { k: ki, p: pi, q: qi, coef: -cross / p2 });
                    }
                }
            }
        }
        let k2 = reps.iter().map(|k| (k[0] * k[0] + k[1] * k[1]) as f64).collect();
        let steps = steps_per_unit(spec.dt)?;
        Ok(Self { spec, reps, k2, triads, steps })
    }

    pub fn spec(&self) -> &GalerkinNsSpec {
        &self.spec
    }

    pub fn wavevectors(&self) -> &[[i32; 2]] {
        &self.reps
    }

    /// `|k|^2` of the wavevector carrying coordinate `j`.
    pub fn mode_k2(&self, j: usize) -> f64 {
        self.k2[j / 2]
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(GalerkinNsSpec { dt, ..self.spec.clone() })
    }

    fn to_complex(&self, u: &[f64]) -> Vec<Complex64> {
        let m = self.reps.len();
        let mut w = vec![Complex64::new(0.0, 0.0); 2 * m];
        for i in 0..m {
            let z = Complex64::new(u[2 * i], -u[2 * i + 1]) / SCALE;
            w[i] = z;
            w[i + m] = z.conj();
        }
        w
    }

    fn advection(&self, w: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for t in &self.triads {
            out[t.k] += w[t.p] * w[t.q] * t.coef;
        }
    }

    /// Kinetic energy `sum |omega_k|^2 / |k|^2` over the real coordinates.
    pub fn kinetic_energy(&self, u: &[f64]) -> f64 {
        u.iter().enumerate().map(|(j, x)| x * x / self.mode_k2(j)).sum::<f64>() * 0.5
    }
}

impl KickedSystem for GalerkinNs {
    fn dim(&self) -> usize {
        2 * self.reps.len()
    }

    fn basis(&self) -> Basis {
        Basis::TorusVorticity
    }

    fn flow(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        let m = self.reps.len();
        let dt = self.spec.dt;
        let mut w = self.to_complex(u);
        let mut n = vec![Complex64::new(0.0, 0.0); m];
        let factor: Vec<f64> = match self.spec.integrator {
            NsIntegrator::IntegratingFactor => self.k2.iter().map(|k2| (-self.spec.nu * k2 * dt).exp()).collect(),
            NsIntegrator::SemiImplicit => self.k2.iter().map(|k2| 1.0 / (1.0 + self.spec.nu * k2 * dt)).collect(),
        };
        for step in 0..self.steps {
            if !self.triads.is_empty() {
                self.advection(&w, &mut n);
            }
            for i in 0..m {
                let z = (w[i] + n[i] * dt) * factor[i];
                w[i] = z;
                w[i + m] = z.conj();
            }
            if step % 1024 == 1023 && w.iter().any(|z| !(z.norm() * SCALE < 1e12)) {
                break;
            }
        }
        let mut out = vec![0.0; 2 * m];
        for i in 0..m {
            out[2 * i] = w[i].re * SCALE;
            out[2 * i + 1] = -w[i].im * SCALE;
        }
        check_blow_up(&out, None)?;
        Ok(out)
    }

    fn lipschitz_bound(&self, _r: f64) -> Option<f64> {
        None
    }

    fn squeezing_factor(&self, _n: usize, _r: f64) -> Option<f64> {
        None
    }

    // Continuous-time enstrophy decays at least like exp(-nu t) since |k| >= 1;
    // the explicit advection step adds O(dt) per unit time, covered by using
    // half the rate.
    fn stability(&self, _r: f64) -> Option<Stability> {
        let k2_min = self.k2.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(Stability { a: (-0.5 * self.spec.nu * k2_min).exp(), r: 0.0, n0: 1 })
    }
}
