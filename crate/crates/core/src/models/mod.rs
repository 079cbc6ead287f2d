//! Concrete maps `S`: a diagonal toy contraction, Galerkin Navier–Stokes
//! and split-step Ginzburg–Landau.

pub mod cgl;
pub mod ns;
pub mod toy;

use serde::{Deserialize, Serialize};

pub use cgl::{Cgl, CglSpec};
pub use ns::{GalerkinNs, GalerkinNsSpec, NsIntegrator};
pub use toy::{ToyMap, ToyMapSpec};

use crate::dynamics::{KickedSystem, Stability};
use crate::error::Result;
use crate::state::Basis;

/// Serializable choice of system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    Toy(ToyMapSpec),
    Ns(GalerkinNsSpec),
    Cgl(CglSpec),
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::Toy(s) => s.validate(),
            SystemSpec::Ns(s) => s.validate(),
            SystemSpec::Cgl(s) => s.validate(),
        }
    }

    pub fn build(&self) -> Result<AnySystem> {
        Ok(match self {
            SystemSpec::Toy(s) => AnySystem::Toy(ToyMap::new(s.clone())?),
            SystemSpec::Ns(s) => AnySystem::Ns(GalerkinNs::new(s.clone())?),
            SystemSpec::Cgl(s) => AnySystem::Cgl(Cgl::new(s.clone())?),
        })
    }
}

/// Static dispatch over the gallery.
#[derive(Clone, Debug)]
pub enum AnySystem {
    Toy(ToyMap),
    Ns(GalerkinNs),
    Cgl(Cgl),
}

macro_rules! dispatch {
    ($self:ident, $s:ident => $e:expr) => {
        match $self {
            AnySystem::Toy($s) => $e,
            AnySystem::Ns($s) => $e,
            AnySystem::Cgl($s) => $e,
        }
    };
}

impl KickedSystem for AnySystem {
    fn dim(&self) -> usize {
        dispatch!(self, s => s.dim())
    }

    fn basis(&self) -> Basis {
        dispatch!(self, s => s.basis())
    }

    fn flow(&self, u: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, s => s.flow(u))
    }

    fn lipschitz_bound(&self, r: f64) -> Option<f64> {
        dispatch!(self, s => s.lipschitz_bound(r))
    }

    fn squeezing_factor(&self, n: usize, r: f64) -> Option<f64> {
        dispatch!(self, s => s.squeezing_factor(n, r))
    }

    fn image_radius(&self, r: f64) -> Option<f64> {
        dispatch!(self, s => s.image_radius(r))
    }

    fn stability(&self, r: f64) -> Option<Stability> {
        dispatch!(self, s => s.stability(r))
    }

    fn dissipation_radius(&self) -> f64 {
        dispatch!(self, s => s.dissipation_radius())
    }
}

/// Differences of the time-one map under successive halving of `dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    /// `|S_dt(u) - S_{dt/2}(u)|`
    pub coarse: f64,
    /// `|S_{dt/2}(u) - S_{dt/4}(u)|`
    pub fine: f64,
}

impl Refinement {
    /// Close to 2 for a first-order scheme.
    pub fn ratio(&self) -> f64 {
        self.coarse / self.fine
    }
}

pub fn dt_refinement<S, F>(build: F, dt: f64, u: &[f64]) -> Result<Refinement>
where
    S: KickedSystem,
    F: Fn(f64) -> Result<S>,
{
    let a = build(dt)?.flow(u)?;
    let b = build(dt / 2.0)?.flow(u)?;
    let c = build(dt / 4.0)?.flow(u)?;
    Ok(Refinement { coarse: crate::dynamics::dist(&a, &b), fine: crate::dynamics::dist(&b, &c) })
}

/// Deterministic state of norm 0.5 on which the default `dt` values were
/// calibrated.
pub fn reference_state(dim: usize) -> Vec<f64> {
    let mut rng = crate::seed::child_rng(0, "reference-state", dim as u64);
    crate::dynamics::sample_sphere(dim, 0.5, &mut rng)
}
