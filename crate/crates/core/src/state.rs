//! Finite coefficient vectors in an orthonormal Galerkin basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any coefficient larger than this in magnitude is treated as solver blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// Identifies the orthonormal basis a coefficient vector is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// Standard basis of R^n (toy maps).
    Canonical,
    /// Real Fourier modes of zero-mean vorticity on the 2D torus.
    TorusVorticity,
    /// Dirichlet sine modes on (0, pi), complex amplitudes as (re, im) pairs.
    DirichletSine,
}

/// A state of the kicked system. Because the basis is orthonormal, the
/// Euclidean norm of the coefficients is the norm of the represented element.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    coeffs: Vec<f64>,
    basis: Basis,
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.coeffs
    }
}

impl StateVector {
    pub fn new(coeffs: Vec<f64>, basis: Basis) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("coefficient {i} is {}", coeffs[i])));
        }
        Ok(Self { coeffs, basis })
    }

    pub fn zeros(dim: usize, basis: Basis) -> Self {
        Self { coeffs: vec![0.0; dim], basis }
    }

    pub fn canonical(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(coeffs, Basis::Canonical)
    }

    pub(crate) fn from_raw(coeffs: Vec<f64>, basis: Basis) -> Self {
        Self { coeffs, basis }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coeffs)
    }

    /// Coordinates of the low-mode projection P_N u.
    pub fn head(&self, n: usize) -> &[f64] {
        &self.coeffs[..n.min(self.coeffs.len())]
    }

    /// Coordinates of the high-mode projection Q_N u.
    pub fn tail(&self, n: usize) -> &[f64] {
        &self.coeffs[n.min(self.coeffs.len())..]
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        self.check_dim(other.dim())?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self { coeffs, basis: self.basis })
    }

    pub fn scaled(&self, factor: f64) -> StateVector {
        Self { coeffs: self.coeffs.iter().map(|c| c * factor).collect(), basis: self.basis }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, got: self.dim() });
        }
        Ok(())
    }

    /// Rejects non-finite or exploded coefficients.
    pub fn check_blow_up(&self, step: Option<usize>) -> Result<()> {
        check_blow_up(&self.coeffs, step)
    }
}

pub fn check_blow_up(coeffs: &[f64], step: Option<usize>) -> Result<()> {
    let worst = coeffs.iter().fold(0.0f64, |m, c| if c.is_nan() { f64::INFINITY } else { m.max(c.abs()) });
    if worst > BLOW_UP_THRESHOLD || !worst.is_finite() {
        return Err(Error::BlowUp { step, value: worst });
    }
    Ok(())
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}
