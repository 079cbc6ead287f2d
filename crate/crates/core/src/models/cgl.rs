//! Complex Ginzburg–Landau equation `u_t - (nu + i) u_xx + i a |u|^2 u = 0`
//! on `(0, pi)` with Dirichlet conditions, in the sine basis
//! `e_j = sqrt(2/pi) sin(j x)`, `alpha_j = j^2`.
//!
//! Coordinates come in pairs `(Re u_j, Im u_j)`, `j = 1..J`. The nonlinear
//! substep runs on the grid `x_m = m pi / (J + 1)`, `m = 1..J`, where the sine
//! transform is orthogonal up to a fixed scale, so the L2 norm passes through
//! the pointwise phase rotation unchanged.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{KickedSystem, Stability};
use crate::error::{Error, Result};
use crate::models::ns::steps_per_unit;
use crate::state::{check_blow_up, Basis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CglSpec {
    pub nu: f64,
    pub a: f64,
    pub modes: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

pub const CGL_DEFAULT_DT: f64 = 1.0 / 16384.0;

fn default_dt() -> f64 {
    CGL_DEFAULT_DT
}

impl CglSpec {
    pub fn new(nu: f64, a: f64, modes: usize) -> Self {
        Self { nu, a, modes, dt: CGL_DEFAULT_DT }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidSpec(format!("nu = {} must be positive", self.nu)));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidSpec(format!("a = {} must be nonnegative", self.a)));
        }
        if self.modes == 0 {
            return Err(Error::InvalidSpec("need at least one sine mode".into()));
        }
        steps_per_unit(self.dt)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Cgl {
    spec: CglSpec,
    steps: usize,
    /// `sin(j m pi / (J+1))`, row `m`, column `j`, both zero-based.
    sines: Vec<f64>,
    linear: Vec<Complex64>,
}

impl Cgl {
    pub fn new(spec: CglSpec) -> Result<Self> {
        spec.validate()?;
        let j = spec.modes;
        let h = std::f64::consts::PI / (j + 1) as f64;
        let mut sines = vec![0.0; j * j];
        for m in 0..j {
            for i in 0..j {
                sines[m * j + i] = (((i + 1) * (m + 1)) as f64 * h).sin();
            }
        }
        let linear = (1..=j)
            .map(|i| {
                let alpha = (i * i) as f64;
                (Complex64::new(-spec.nu, -1.0) * alpha * spec.dt).exp()
            })
            .collect();
        let steps = steps_per_unit(spec.dt)?;
        Ok(Self { spec, steps, sines, linear })
    }

    pub fn spec(&self) -> &CglSpec {
        &self.spec
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(CglSpec { dt, ..self.spec.clone() })
    }

    /// First Dirichlet eigenvalue.
    pub fn alpha1(&self) -> f64 {
        1.0
    }

    // grid values u(x_m) = sqrt(2/pi) sum_j c_j sin(j x_m)
    fn synthesize(&self, c: &[Complex64], grid: &mut [Complex64]) {
        let j = self.spec.modes;
        let s = (2.0 / std::f64::consts::PI).sqrt();
        for (m, g) in grid.iter_mut().enumerate() {
            let row = &self.sines[m * j..(m + 1) * j];
            *g = row.iter().zip(c).map(|(sn, z)| z * *sn).sum::<Complex64>() * s;
        }
    }

    // c_j = (pi/(J+1)) sum_m u(x_m) e_j(x_m)
    fn analyze(&self, grid: &[Complex64], c: &mut [Complex64]) {
        let j = self.spec.modes;
        let s = (2.0 / std::f64::consts::PI).sqrt() * std::f64::consts::PI / (j + 1) as f64;
        for (i, z) in c.iter_mut().enumerate() {
            *z = (0..j).map(|m| grid[m] * self.sines[m * j + i]).sum::<Complex64>() * s;
        }
    }
}

impl KickedSystem for Cgl {
    fn dim(&self) -> usize {
        2 * self.spec.modes
    }

    fn basis(&self) -> Basis {
        Basis::DirichletSine
    }

    fn flow(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        let j = self.spec.modes;
        let mut c: Vec<Complex64> = (0..j).map(|i| Complex64::new(u[2 * i], u[2 * i + 1])).collect();
        let mut grid = vec![Complex64::new(0.0, 0.0); j];
        let phase = self.spec.a * self.spec.dt;
        for _ in 0..self.steps {
            for (z, l) in c.iter_mut().zip(&self.linear) {
                *z *= l;
            }
            if phase != 0.0 {
                self.synthesize(&c, &mut grid);
                for g in grid.iter_mut() {
                    *g *= Complex64::new(0.0, -phase * g.norm_sqr()).exp();
                }
                self.analyze(&grid, &mut c);
            }
        }
        let out: Vec<f64> = c.iter().flat_map(|z| [z.re, z.im]).collect();
        check_blow_up(&out, None)?;
        Ok(out)
    }

    fn lipschitz_bound(&self, _r: f64) -> Option<f64> {
        None
    }

    fn squeezing_factor(&self, _n: usize, _r: f64) -> Option<f64> {
        None
    }

    // each substep is nonexpansive in L2 and the linear one damps by
    // exp(-nu alpha_1 dt) at least
    fn stability(&self, _r: f64) -> Option<Stability> {
        Some(Stability { a: (-self.spec.nu * self.alpha1()).exp(), r: 0.0, n0: 1 })
    }
}
