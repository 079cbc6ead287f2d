use serde::{Deserialize, Serialize};

use crate::dynamics::{KickedSystem, Stability};
use crate::error::{Error, Result};
use crate::state::Basis;

/// Diagonal contraction `S(u) = a * u`, optionally saturated to
/// `S(u) = a * u / (1 + |u|^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMapSpec {
    pub a: Vec<f64>,
    #[serde(default)]
    pub saturated: bool,
}

impl ToyMapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() {
            return Err(Error::InvalidSpec("toy map needs at least one mode".into()));
        }
        if let Some(j) = self.a.iter().position(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidSpec(format!("a[{j}] = {} must lie in (0, 1)", self.a[j])));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyMap {
    spec: ToyMapSpec,
    a_max: f64,
}

impl ToyMap {
    pub fn new(spec: ToyMapSpec) -> Result<Self> {
        spec.validate()?;
        let a_max = spec.a.iter().cloned().fold(0.0, f64::max);
        Ok(Self { spec, a_max })
    }

    pub fn linear(a: Vec<f64>) -> Result<Self> {
        Self::new(ToyMapSpec { a, saturated: false })
    }

    pub fn saturated(a: Vec<f64>) -> Result<Self> {
        Self::new(ToyMapSpec { a, saturated: true })
    }

    pub fn spec(&self) -> &ToyMapSpec {
        &self.spec
    }

    pub fn factors(&self) -> &[f64] {
        &self.spec.a
    }

    pub fn is_saturated(&self) -> bool {
        self.spec.saturated
    }

    fn tail_max(&self, n: usize) -> f64 {
        self.spec.a.iter().skip(n).cloned().fold(0.0, f64::max)
    }
}

impl KickedSystem for ToyMap {
    fn dim(&self) -> usize {
        self.spec.a.len()
    }

    fn basis(&self) -> Basis {
        Basis::Canonical
    }

    fn flow(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        let scale = if self.spec.saturated { 1.0 / (1.0 + u.iter().map(|x| x * x).sum::<f64>()) } else { 1.0 };
        Ok(u.iter().zip(&self.spec.a).map(|(x, a)| a * x * scale).collect())
    }

    // The map u -> u / (1 + |u|^2) has symmetric Jacobian with eigenvalues
    // 1/(1+s^2) and (1-s^2)/(1+s^2)^2, both of modulus <= 1.
    fn lipschitz_bound(&self, _r: f64) -> Option<f64> {
        Some(self.a_max)
    }

    fn squeezing_factor(&self, n: usize, _r: f64) -> Option<f64> {
        Some(self.tail_max(n))
    }

    fn image_radius(&self, r: f64) -> Option<f64> {
        if self.spec.saturated {
            let s = r.min(1.0);
            Some(self.a_max * s / (1.0 + s * s))
        } else {
            Some(self.a_max * r)
        }
    }

    fn stability(&self, _r: f64) -> Option<Stability> {
        Some(Stability { a: self.a_max, r: 0.0, n0: 1 })
    }
}
