//! Kick laws: independent scalar amplitudes along each basis vector,
//! `eta = sum_j b_j xi_j e_j` with `xi_j` drawn from a density on [-1, 1].

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::state::{Basis, StateVector};

/// Piecewise-linear density tabulated on a uniform grid over [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TabulatedDensity {
    values: Vec<f64>,
    /// Cumulative mass at each node.
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TabulatedDensity {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<TabulatedDensity> for Vec<f64> {
    fn from(d: TabulatedDensity) -> Self {
        d.values
    }
}

impl TabulatedDensity {
    /// Normalises the node values so the interpolant integrates to one.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidLaw("tabulated density needs at least 2 nodes".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidLaw("tabulated density must be finite and nonnegative".into()));
        }
        let h = 2.0 / (values.len() - 1) as f64;
        let mass: f64 = values.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        if mass <= 0.0 {
            return Err(Error::InvalidLaw("tabulated density has zero mass".into()));
        }
        let values: Vec<f64> = values.iter().map(|v| v / mass).collect();
        let mut density = Self { values, cumulative: Vec::new() };
        density.rebuild();
        if density.pdf(0.0) <= 0.0 {
            return Err(Error::InvalidLaw("density must be positive at 0".into()));
        }
        Ok(density)
    }

    fn rebuild(&mut self) {
        let h = self.step();
        let mut acc = 0.0;
        self.cumulative = std::iter::once(0.0)
            .chain(self.values.windows(2).map(|w| {
                acc += 0.5 * h * (w[0] + w[1]);
                acc
            }))
            .collect();
    }

    fn step(&self) -> f64 {
        2.0 / (self.values.len() - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.step();
        let s = (x + 1.0) / h;
        let i = (s.floor() as usize).min(self.values.len() - 2);
        (i, x - (-1.0 + i as f64 * h))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        let (i, t) = self.locate(x);
        let slope = (self.values[i + 1] - self.values[i]) / self.step();
        self.values[i] + slope * t
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let (i, t) = self.locate(x);
        let slope = (self.values[i + 1] - self.values[i]) / self.step();
        self.cumulative[i] + self.values[i] * t + 0.5 * slope * t * t
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let i = match self.cumulative.iter().position(|&c| c >= p) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => self.values.len() - 2,
        };
        let h = self.step();
        let rem = p - self.cumulative[i];
        let slope = (self.values[i + 1] - self.values[i]) / h;
        let t = if slope.abs() < 1e-14 {
            if self.values[i] > 0.0 {
                rem / self.values[i]
            } else {
                0.0
            }
        } else {
            // 0.5 slope t^2 + v t - rem = 0, positive root
            let v = self.values[i];
            let disc = (v * v + 2.0 * slope * rem).max(0.0);
            2.0 * rem / (v + disc.sqrt()).max(f64::MIN_POSITIVE)
        };
        (-1.0 + i as f64 * h + t.clamp(0.0, h)).clamp(-1.0, 1.0)
    }
}

/// Scalar density of `xi_j`, supported in [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Density {
    Uniform,
    /// p(x) = 1 - |x|
    Triangular,
    Tabulated {
        table: TabulatedDensity,
    },
}

impl Density {
    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        Ok(Density::Tabulated { table: TabulatedDensity::new(values)? })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Density::Uniform => {
                if (-1.0..=1.0).contains(&x) {
                    0.5
                } else {
                    0.0
                }
            }
            Density::Triangular => (1.0 - x.abs()).max(0.0),
            Density::Tabulated { table } => table.pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Density::Uniform => (0.5 * (x + 1.0)).clamp(0.0, 1.0),
            Density::Triangular => {
                if x <= -1.0 {
                    0.0
                } else if x <= 0.0 {
                    0.5 * (1.0 + x) * (1.0 + x)
                } else if x < 1.0 {
                    1.0 - 0.5 * (1.0 - x) * (1.0 - x)
                } else {
                    1.0
                }
            }
            Density::Tabulated { table } => table.cdf(x),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Density::Uniform => 2.0 * p - 1.0,
            Density::Triangular => {
                if p <= 0.5 {
                    (2.0 * p).sqrt() - 1.0
                } else {
                    1.0 - (2.0 * (1.0 - p)).sqrt()
                }
            }
            Density::Tabulated { table } => table.quantile(p),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Density::Uniform => rng.random_range(-1.0..=1.0),
            _ => self.quantile(rng.random::<f64>()),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Density::Uniform => 1.0 / 3.0,
            Density::Triangular => 1.0 / 6.0,
            Density::Tabulated { table } => {
                // exact for the piecewise-linear interpolant via Simpson per panel
                let h = table.step();
                let mut mean = 0.0;
                let mut second = 0.0;
                for i in 0..table.values.len() - 1 {
                    let x0 = -1.0 + i as f64 * h;
                    let xm = x0 + 0.5 * h;
                    let x1 = x0 + h;
                    let (p0, pm, p1) = (table.values[i], table.pdf(xm), table.values[i + 1]);
                    mean += h / 6.0 * (x0 * p0 + 4.0 * xm * pm + x1 * p1);
                    second += h / 6.0 * (x0 * x0 * p0 + 4.0 * xm * xm * pm + x1 * x1 * p1);
                }
                second - mean * mean
            }
        }
    }

    /// Interior points where the density fails to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Density::Uniform => Vec::new(),
            Density::Triangular => vec![0.0],
            Density::Tabulated { table } => {
                let h = table.step();
                (1..table.values.len() - 1).map(|i| -1.0 + i as f64 * h).collect()
            }
        }
    }

    /// Mass the density assigns to [lo, hi].
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        (self.cdf(hi) - self.cdf(lo)).max(0.0)
    }
}

/// The law of one kick: `b_j` scales and densities `p_j`, one per mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickLaw {
    b: Vec<f64>,
    densities: Vec<Density>,
}

impl KickLaw {
    pub fn new(b: Vec<f64>, densities: Vec<Density>) -> Result<Self> {
        if b.len() != densities.len() {
            return Err(Error::InvalidLaw(format!("{} scales but {} densities", b.len(), densities.len())));
        }
        if let Some(j) = b.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidLaw(format!("b[{j}] = {} must be finite and >= 0", b[j])));
        }
        Ok(Self { b, densities })
    }

    pub fn with_density(b: Vec<f64>, density: Density) -> Result<Self> {
        let densities = vec![density; b.len()];
        Self::new(b, densities)
    }

    pub fn uniform(b: Vec<f64>) -> Result<Self> {
        Self::with_density(b, Density::Uniform)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.b
    }

    pub fn densities(&self) -> &[Density] {
        &self.densities
    }

    /// `sum_j b_j^2`.
    pub fn total_variance_bound(&self) -> f64 {
        self.b.iter().map(|b| b * b).sum()
    }

    /// Largest kick norm: the corner of the support box.
    pub fn support_radius(&self) -> f64 {
        self.total_variance_bound().sqrt()
    }

    pub fn all_modes_active(&self) -> bool {
        self.b.iter().all(|b| *b > 0.0)
    }

    /// Whether `v` lies in the support box prod_j [-b_j, b_j].
    pub fn in_support(&self, v: &[f64]) -> bool {
        v.iter().zip(&self.b).all(|(x, b)| x.abs() <= *b)
    }

    pub fn sample(&self, basis: Basis, rng: &mut Rng) -> StateVector {
        let coeffs =
            self.b.iter().zip(&self.densities).map(|(b, p)| if *b == 0.0 { 0.0 } else { b * p.sample(rng) }).collect();
        StateVector::from_raw(coeffs, basis)
    }

    /// Lebesgue density of the projection of the kick onto the first
    /// `v.len()` coordinates: `prod_j b_j^-1 p_j(v_j / b_j)`.
    pub fn density(&self, v: &[f64]) -> Result<f64> {
        if v.len() > self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let mut d = 1.0;
        for (j, x) in v.iter().enumerate() {
            let b = self.b[j];
            if b == 0.0 {
                return Err(Error::DensityUndefined(j));
            }
            d *= self.densities[j].pdf(x / b) / b;
        }
        Ok(d)
    }

    /// Probability that coordinate `j` of `shift + kick` lands in [lo, hi].
    pub fn axis_mass(&self, j: usize, shift: f64, lo: f64, hi: f64) -> f64 {
        let b = self.b[j];
        if b == 0.0 {
            return if lo <= shift && shift < hi { 1.0 } else { 0.0 };
        }
        self.densities[j].mass((lo - shift) / b, (hi - shift) / b)
    }

    /// Restriction to the first `n` coordinates.
    pub fn truncated(&self, n: usize) -> KickLaw {
        let n = n.min(self.dim());
        Self { b: self.b[..n].to_vec(), densities: self.densities[..n].to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn integrate(d: &Density) -> f64 {
        let n = 20_000;
        let h = 2.0 / n as f64;
        (0..n).map(|i| d.pdf(-1.0 + (i as f64 + 0.5) * h) * h).sum()
    }

    #[test]
    fn densities_integrate_to_one_and_match_cdfs() {
        let tab = Density::tabulated(vec![0.0, 1.0, 3.0, 1.0, 0.0]).unwrap();
        for d in [Density::Uniform, Density::Triangular, tab] {
            assert!((integrate(&d) - 1.0).abs() < 1e-6, "{d:?}");
            assert!(d.pdf(0.0) > 0.0);
            assert_eq!(d.pdf(1.5), 0.0);
            assert_eq!(d.pdf(-1.01), 0.0);
            assert!(d.cdf(-1.0).abs() < 1e-15 && (d.cdf(1.0) - 1.0).abs() < 1e-15);
            for &p in &[0.01, 0.3, 0.5, 0.77, 0.99] {
                assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-12, "{d:?} p={p}");
            }
        }
    }

    #[test]
    fn tabulated_rejects_zero_at_origin() {
        assert!(Density::tabulated(vec![1.0, 0.0, 1.0]).is_err());
        assert!(Density::tabulated(vec![1.0, -0.5, 1.0]).is_err());
    }

    #[test]
    fn zero_law_samples_zero() {
        let law = KickLaw::uniform(vec![0.0, 0.0, 0.0]).unwrap();
        let mut rng = rng_from_seed(1);
        let k = law.sample(Basis::Canonical, &mut rng);
        assert!(k.coeffs().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn kicks_stay_in_support() {
        let law = KickLaw::uniform(vec![0.25]).unwrap();
        let mut rng = rng_from_seed(2);
        for _ in 0..10_000 {
            let k = law.sample(Basis::Canonical, &mut rng);
            assert!(k.coeffs()[0].abs() <= 0.25);
        }
    }

    #[test]
    fn uniform_sample_mean_is_within_clt_band() {
        let law = KickLaw::uniform(vec![0.25]).unwrap();
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| law.sample(Basis::Canonical, &mut rng).coeffs()[0]).sum::<f64>() / n as f64;
        let band = 4.0 * (0.25 / 3f64.sqrt()) / (n as f64).sqrt();
        assert!(mean.abs() < band, "mean {mean} band {band}");
    }

    #[test]
    fn product_density_values() {
        let law = KickLaw::uniform(vec![0.5, 0.5]).unwrap();
        assert!((law.density(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(law.density(&[0.6, 0.0]).unwrap(), 0.0);
        let tri = KickLaw::with_density(vec![0.25], Density::Triangular).unwrap();
        assert!((tri.density(&[0.125]).unwrap() - 2.0).abs() < 1e-15);
        let degenerate = KickLaw::uniform(vec![0.0, 0.25]).unwrap();
        assert!(matches!(degenerate.density(&[0.0]), Err(Error::DensityUndefined(0))));
    }

    #[test]
    fn triangular_density_normalisation_oracle() {
        // hand value 4 * (1 - 0.5) = 2 must agree with the numerically
        // normalised density b^-1 p(v/b)
        let d = Density::Triangular;
        let b = 0.25;
        let norm = integrate(&d);
        let value = d.pdf(0.125 / b) / b / norm;
        assert!((value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn tabulated_round_trips_through_json() {
        let d = Density::tabulated(vec![0.0, 1.0, 3.0, 1.0, 0.0]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: Density = serde_json::from_str(&json).unwrap();
        assert!((back.cdf(0.3) - d.cdf(0.3)).abs() < 1e-15);
    }

    #[test]
    fn variances() {
        assert!((Density::Uniform.variance() - 1.0 / 3.0).abs() < 1e-15);
        let tab = Density::tabulated(vec![0.0, 1.0, 0.0]).unwrap();
        assert!((tab.variance() - 1.0 / 6.0).abs() < 1e-12);
    }
}
