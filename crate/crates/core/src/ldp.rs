//! Scaled cumulant generating function `Q(V)` by the spectral and the Monte
//! Carlo route, Legendre rate curves, the Donsker–Varadhan functional and
//! equilibrium states.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::KickedSystem;
use crate::error::{Error, Result};
use crate::noise::KickLaw;
use crate::par;
use crate::seed::child_rng;
use crate::twisted::{
    build_kernel, power_iterate, CellPartition, KernelOptions, PowerOptions, SpectralTriple, TwistedKernel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    /// `powers[j]` is the exponent of coordinate `j`; missing entries are 0.
    #[serde(default)]
    pub powers: Vec<u32>,
}

/// Cylindrical potential: depends on finitely many coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Potential {
    Polynomial {
        terms: Vec<Monomial>,
    },
    /// Piecewise-linear in one coordinate on a uniform grid over `[lo, hi]`,
    /// constant beyond it.
    Tabulated {
        axis: usize,
        lo: f64,
        hi: f64,
        values: Vec<f64>,
    },
}

impl Potential {
    pub fn constant(c: f64) -> Self {
        Potential::Polynomial { terms: vec![Monomial { coeff: c, powers: vec![] }] }
    }

    /// `theta * u[axis]`
    pub fn linear(axis: usize, theta: f64) -> Self {
        let mut powers = vec![0; axis + 1];
        powers[axis] = 1;
        Potential::Polynomial { terms: vec![Monomial { coeff: theta, powers }] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::Polynomial { terms } => {
                if terms.iter().any(|t| !t.coeff.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite potential coefficient".into()));
                }
            }
            Potential::Tabulated { lo, hi, values, .. } => {
                if !(hi > lo) || values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "tabulated potential needs lo < hi and at least two finite values".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        let x = |j: usize| u.get(j).copied().unwrap_or(0.0);
        match self {
            Potential::Polynomial { terms } => terms
                .iter()
                .map(|t| t.coeff * t.powers.iter().enumerate().map(|(j, p)| x(j).powi(*p as i32)).product::<f64>())
                .sum(),
            Potential::Tabulated { axis, lo, hi, values } => {
                let n = values.len() - 1;
                let s = ((x(*axis) - lo) / (hi - lo)).clamp(0.0, 1.0) * n as f64;
                let i = (s.floor() as usize).min(n - 1);
                let t = s - i as f64;
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    /// Coordinates the potential actually reads.
    pub fn axes(&self) -> Vec<usize> {
        match self {
            Potential::Polynomial { terms } => {
                let mut axes: Vec<usize> = terms
                    .iter()
                    .filter(|t| t.coeff != 0.0)
                    .flat_map(|t| t.powers.iter().enumerate().filter(|(_, p)| **p > 0).map(|(j, _)| j))
                    .collect();
                axes.sort_unstable();
                axes.dedup();
                axes
            }
            Potential::Tabulated { axis, .. } => vec![*axis],
        }
    }

    pub fn scaled(&self, theta: f64) -> Self {
        match self {
            Potential::Polynomial { terms } => Potential::Polynomial {
                terms: terms.iter().map(|t| Monomial { coeff: theta * t.coeff, powers: t.powers.clone() }).collect(),
            },
            Potential::Tabulated { axis, lo, hi, values } => Potential::Tabulated {
                axis: *axis,
                lo: *lo,
                hi: *hi,
                values: values.iter().map(|v| theta * v).collect(),
            },
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        match self {
            Potential::Polynomial { terms } => {
                let mut terms = terms.clone();
                terms.push(Monomial { coeff: c, powers: vec![] });
                Potential::Polynomial { terms }
            }
            Potential::Tabulated { axis, lo, hi, values } => {
                Potential::Tabulated { axis: *axis, lo: *lo, hi: *hi, values: values.iter().map(|v| v + c).collect() }
            }
        }
    }

    /// Values at cell centers. Fails if the potential reads an unresolved
    /// coordinate.
    pub fn on_cells(&self, partition: &CellPartition) -> Result<Vec<f64>> {
        if let Some(a) = self.axes().into_iter().find(|a| !partition.axes().contains(a)) {
            return Err(Error::InvalidArgument(format!("potential reads unresolved coordinate {a}")));
        }
        let width = partition.axes().iter().max().map_or(0, |m| m + 1);
        Ok((0..partition.n_cells())
            .map(|i| {
                let mut u = vec![0.0; width];
                for (a, c) in partition.axes().iter().zip(partition.center(i)) {
                    u[*a] = c;
                }
                self.eval(&u)
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Spectral,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScgfEstimate {
    pub value: f64,
    pub route: Route,
    /// Monte Carlo batch standard error; zero on the spectral route.
    pub stderr: f64,
    pub k: Option<usize>,
    pub n_traj: Option<usize>,
    /// Effective sample size of the exponential weights.
    pub ess: Option<f64>,
    /// All batch estimates coincide, so the standard error carries no information.
    pub degenerate: bool,
    /// Eigen residual relative to lambda.
    pub residual: Option<f64>,
    /// Mass leaked through the partition boundary.
    pub leak: Option<f64>,
}

impl ScgfEstimate {
    /// Error allowance: `stderr` for Monte Carlo, residual plus leakage for
    /// the spectral route.
    pub fn slack(&self) -> f64 {
        match self.route {
            Route::MonteCarlo => self.stderr,
            Route::Spectral => self.residual.unwrap_or(0.0) + -(1.0 - self.leak.unwrap_or(0.0)).ln(),
        }
    }
}

/// `Q = log lambda` for an assembled kernel.
pub fn scgf_of_kernel(kernel: &TwistedKernel, opts: PowerOptions) -> Result<(ScgfEstimate, SpectralTriple)> {
    let triple = power_iterate(kernel, opts)?;
    let est = ScgfEstimate {
        value: triple.lambda.ln(),
        route: Route::Spectral,
        stderr: 0.0,
        k: None,
        n_traj: None,
        ess: None,
        degenerate: false,
        residual: Some(triple.residual_h.max(triple.residual_mu) / triple.lambda),
        leak: Some(kernel.leak()),
    };
    Ok((est, triple))
}

pub fn scgf_spectral<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    v: &Potential,
    partition: &CellPartition,
    kernel_opts: KernelOptions,
    power: PowerOptions,
) -> Result<ScgfEstimate> {
    let cells = v.on_cells(partition)?;
    let kernel = build_kernel(sys, law, &cells, partition, kernel_opts)?;
    Ok(scgf_of_kernel(&kernel, power)?.0)
}

/// Spectral `Q(theta f)` for every theta, re-twisting one assembled kernel.
pub fn spectral_sweep(
    base: &TwistedKernel,
    f_cells: &[f64],
    thetas: &[f64],
    power: PowerOptions,
) -> Result<Vec<ScgfEstimate>> {
    thetas
        .iter()
        .map(|th| {
            let kernel = base.with_potential(f_cells.iter().map(|f| th * f).collect())?;
            Ok(scgf_of_kernel(&kernel, power)?.0)
        })
        .collect()
}

/// Default number of batches for the Monte Carlo standard error.
pub const MC_BATCHES: usize = 10;

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// Turns per-trajectory exponents `theta * sum f(u_n)` into an estimate.
pub fn estimate_from_sums(exponents: &[f64], k: usize, batches: usize) -> Result<ScgfEstimate> {
    let n = exponents.len();
    if n < 2 || k == 0 {
        return Err(Error::InvalidArgument("need k >= 1 and at least two trajectories".into()));
    }
    let value = log_mean_exp(exponents) / k as f64;
    let b = batches.clamp(2, n);
    let batch_values: Vec<f64> =
        (0..b).map(|i| log_mean_exp(&exponents[i * n / b..(i + 1) * n / b]) / k as f64).collect();
    let mean = batch_values.iter().sum::<f64>() / b as f64;
    let var = batch_values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = exponents.iter().map(|x| (x - m).exp()).collect();
    let ess = w.iter().sum::<f64>().powi(2) / w.iter().map(|x| x * x).sum::<f64>();
    Ok(ScgfEstimate {
        value,
        route: Route::MonteCarlo,
        stderr: (var / b as f64).sqrt(),
        k: Some(k),
        n_traj: Some(n),
        ess: Some(ess),
        degenerate: batch_values.iter().all(|x| *x == batch_values[0]),
        residual: None,
        leak: None,
    })
}

/// `sum_{n=1}^k f(u_n)` along `n_traj` independent trajectories from `u0`.
pub fn path_sums<S, F>(
    sys: &S,
    law: &KickLaw,
    f: &F,
    u0: &[f64],
    k: usize,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    S: KickedSystem + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    par::try_map_indexed(n_traj, |i| {
        let mut rng = child_rng(seed, "scgf-mc", i as u64);
        crate::dynamics::fold_path(sys, law, u0, k, &mut rng, 0.0, |acc, _, u| acc + f(u))
    })
}

pub fn scgf_monte_carlo<S, F>(
    sys: &S,
    law: &KickLaw,
    v: &F,
    u0: &[f64],
    k: usize,
    n_traj: usize,
    seed: u64,
) -> Result<ScgfEstimate>
where
    S: KickedSystem + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let sums = path_sums(sys, law, v, u0, k, n_traj, seed)?;
    estimate_from_sums(&sums, k, MC_BATCHES)
}

/// Monte Carlo `Q(theta f)` for every theta from one set of trajectories.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_sweep<S, F>(
    sys: &S,
    law: &KickLaw,
    f: &F,
    u0: &[f64],
    k: usize,
    n_traj: usize,
    seed: u64,
    thetas: &[f64],
) -> Result<Vec<ScgfEstimate>>
where
    S: KickedSystem + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let sums = path_sums(sys, law, f, u0, k, n_traj, seed)?;
    thetas
        .iter()
        .map(|th| estimate_from_sums(&sums.iter().map(|s| th * s).collect::<Vec<_>>(), k, MC_BATCHES))
        .collect()
}

/// `max_{i<j} |Q_i - Q_j| - |V_i - V_j|_inf` over potentials sampled on a
/// common set of points.
pub fn scgf_lipschitz_check(entries: &[(Vec<f64>, f64)]) -> Result<f64> {
    if entries.len() < 2 {
        return Err(Error::InvalidArgument("need at least two potentials".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let (vi, qi) = &entries[i];
            let (vj, qj) = &entries[j];
            if vi.len() != vj.len() {
                return Err(Error::DimensionMismatch { expected: vi.len(), got: vj.len() });
            }
            let dist = vi.iter().zip(vj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max((qi - qj).abs() - dist);
        }
    }
    Ok(worst)
}

/// Symmetric grid of `points` values on `[-half_width, half_width]`.
pub fn symmetric_grid(half_width: f64, points: usize) -> Vec<f64> {
    let n = points.max(2) - 1;
    (0..=n).map(|i| half_width * (2.0 * i as f64 / n as f64 - 1.0)).collect()
}

/// Default theta grid: `[-4, 4]` with 81 points.
pub fn default_theta_grid() -> Vec<f64> {
    symmetric_grid(4.0, 81)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub observable: String,
    pub x: Vec<f64>,
    /// `+inf` where the supremum runs off every widened grid.
    pub rate: Vec<f64>,
    pub theta_star: Vec<f64>,
    /// The maximiser sits on the edge of the final theta grid.
    pub boundary: Vec<bool>,
    /// `(theta, Q(theta f))` pairs used.
    pub scgf: Vec<(f64, f64)>,
}

impl RateCurve {
    /// Smallest finite rate and the level where it sits.
    pub fn minimum(&self) -> (f64, f64) {
        self.x
            .iter()
            .zip(&self.rate)
            .fold((f64::NAN, f64::INFINITY), |(bx, br), (x, r)| if *r < br { (*x, *r) } else { (bx, br) })
    }

    /// Smallest discrete second difference over consecutive finite values.
    pub fn min_second_difference(&self) -> f64 {
        self.rate
            .windows(3)
            .filter(|w| w.iter().all(|r| r.is_finite()))
            .map(|w| w[0] - 2.0 * w[1] + w[2])
            .fold(f64::INFINITY, f64::min)
    }

    /// Infimum of the rate over grid levels accepted by `keep`.
    pub fn inf_over<P: Fn(f64) -> bool>(&self, keep: P) -> f64 {
        self.x.iter().zip(&self.rate).filter(|(x, _)| keep(**x)).map(|(_, r)| *r).fold(f64::INFINITY, f64::min)
    }

    /// `x,rate,theta_star` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "x,rate,theta_star")?;
        for i in 0..self.x.len() {
            writeln!(out, "{:e},{:e},{:e}", self.x[i], self.rate[i], self.theta_star[i])?;
        }
        Ok(())
    }
}

/// `sup_theta (theta x - Q(theta))` over tabulated `(theta, Q)` pairs; ties
/// go to the smallest `|theta|`. Returns `(value, theta*, index)`.
pub fn legendre_at(table: &[(f64, f64)], x: f64) -> (f64, f64, usize) {
    let vals: Vec<f64> = table.iter().map(|(t, q)| t * x - q).collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * best.abs().max(1.0);
    let idx = (0..table.len())
        .filter(|&i| vals[i] >= best - tie)
        .min_by(|&a, &b| table[a].0.abs().total_cmp(&table[b].0.abs()))
        .expect("table is nonempty");
    (vals[idx], table[idx].0, idx)
}

const MAX_WIDENINGS: usize = 3;

/// Legendre transform of `q` at each level of `x_grid`. The theta grid must
/// be uniform and symmetric; it is doubled in extent (same spacing) while
/// some maximiser sits on its edge.
pub fn legendre_rate<F>(mut q: F, observable: &str, x_grid: &[f64], theta_grid: &[f64]) -> Result<RateCurve>
where
    F: FnMut(f64) -> Result<f64>,
{
    let n = theta_grid.len();
    if n < 3 {
        return Err(Error::InvalidArgument("theta grid needs at least 3 points".into()));
    }
    let half = theta_grid[n - 1];
    let step = theta_grid[1] - theta_grid[0];
    let symmetric = (0..n).all(|i| (theta_grid[i] + theta_grid[n - 1 - i]).abs() <= 1e-12 * half.abs().max(1.0));
    let uniform = theta_grid.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs());
    if !(symmetric && uniform && step > 0.0) {
        return Err(Error::InvalidArgument("theta grid must be increasing, uniform and symmetric about 0".into()));
    }
    let mut cache: HashMap<i64, f64> = HashMap::new();
    let mut m = ((n - 1) / 2) as i64;
    let odd = (n - 1) % 2 == 1;
    // grid index k in [-m, m] (or half-integers for even point counts)
    let theta_of = |k: i64| if odd { (k as f64 + 0.5) * step } else { k as f64 * step };
    let mut widenings = 0;
    loop {
        let lo = if odd { -m - 1 } else { -m };
        let mut table = Vec::with_capacity((2 * m + 2) as usize);
        for k in lo..=m {
            let th = theta_of(k);
            let v = match cache.get(&k) {
                Some(v) => *v,
                None => {
                    let v = q(th)?;
                    cache.insert(k, v);
                    v
                }
            };
            table.push((th, v));
        }
        let res: Vec<(f64, f64, usize)> = x_grid.iter().map(|&x| legendre_at(&table, x)).collect();
        let last = table.len() - 1;
        let boundary: Vec<bool> = res.iter().map(|r| r.2 == 0 || r.2 == last).collect();
        if boundary.iter().any(|b| *b) && widenings < MAX_WIDENINGS {
            widenings += 1;
            m = 2 * m + i64::from(odd);
            continue;
        }
        if !boundary.is_empty() && boundary.iter().all(|b| *b) {
            return Err(Error::ThetaRange);
        }
        let rate = res.iter().zip(&boundary).map(|(r, b)| if *b { f64::INFINITY } else { r.0 }).collect();
        return Ok(RateCurve {
            observable: observable.to_string(),
            x: x_grid.to_vec(),
            rate,
            theta_star: res.iter().map(|r| r.1).collect(),
            boundary,
            scgf: table,
        });
    }
}

/// `theta,q,stderr` rows.
pub fn write_sweep_csv<W: Write>(out: &mut W, thetas: &[f64], estimates: &[ScgfEstimate]) -> Result<()> {
    writeln!(out, "theta,q,stderr")?;
    for (t, e) in thetas.iter().zip(estimates) {
        writeln!(out, "{t:e},{:e},{:e}", e.value, e.stderr)?;
    }
    Ok(())
}

/// `-<log(P g / g), sigma>` with `P` the untwisted transition matrix.
pub fn dv_value(kernel0: &TwistedKernel, sigma: &[f64], g: &[f64]) -> Result<f64> {
    if let Some(i) = g.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::NonPositive(i));
    }
    let pg = kernel0.apply_untwisted(g);
    let mut total = 0.0;
    for i in 0..sigma.len() {
        if sigma[i] == 0.0 {
            continue;
        }
        if !(pg[i] > 0.0) {
            return Err(Error::NonPositive(i));
        }
        total -= sigma[i] * (pg[i] / g[i]).ln();
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvBound {
    pub value: f64,
    pub best: usize,
    pub values: Vec<f64>,
}

/// Largest Donsker–Varadhan value over a family of positive test functions.
pub fn donsker_varadhan(kernel0: &TwistedKernel, sigma: &[f64], family: &[Vec<f64>]) -> Result<DvBound> {
    check_probability(sigma)?;
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty test-function family".into()));
    }
    let values = family.iter().map(|g| dv_value(kernel0, sigma, g)).collect::<Result<Vec<_>>>()?;
    let best = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Ok(DvBound { value: values[best], best, values })
}

fn check_probability(sigma: &[f64]) -> Result<()> {
    let s: f64 = sigma.iter().sum();
    if sigma.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("sigma is not a probability vector (mass {s})")));
    }
    Ok(())
}

/// `g* = h e^V`, the maximiser of the functional at `sigma = nu_V`.
pub fn optimal_test_function(kernel: &TwistedKernel, triple: &SpectralTriple) -> Vec<f64> {
    triple.h.iter().zip(kernel.potential()).map(|(h, v)| h * v.exp()).collect()
}

/// Supremum of the functional over all positive `g`, by damped Newton on
/// `phi = log g`. Independent of any eigen-triple.
pub fn dv_rate(kernel0: &TwistedKernel, sigma: &[f64]) -> Result<f64> {
    check_probability(sigma)?;
    let n = kernel0.n();
    let p = kernel0.untwisted_dense();
    let value = |phi: &[f64]| -> f64 {
        let g: Vec<f64> = phi.iter().map(|x| x.exp()).collect();
        dv_value(kernel0, sigma, &g).unwrap_or(f64::NEG_INFINITY)
    };
    let mut phi = vec![0.0; n];
    let mut current = value(&phi);
    for _ in 0..500 {
        let g: Vec<f64> = phi.iter().map(|x| x.exp()).collect();
        let pg = kernel0.apply_untwisted(&g);
        // a[i][j] = P_ij g_j / (P g)_i
        let mut grad = DVector::from_iterator(n, sigma.iter().cloned());
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            if sigma[i] == 0.0 {
                continue;
            }
            let a: Vec<f64> = (0..n).map(|j| p[(i, j)] * g[j] / pg[i]).collect();
            for j in 0..n {
                if a[j] == 0.0 {
                    continue;
                }
                grad[j] -= sigma[i] * a[j];
                hess[(j, j)] -= sigma[i] * a[j];
                for l in 0..n {
                    hess[(j, l)] += sigma[i] * a[j] * a[l];
                }
            }
        }
        if grad.amax() < 1e-13 {
            break;
        }
        // maximise: solve (-H + ridge) d = grad
        let mut neg = -hess;
        for j in 0..n {
            neg[(j, j)] += 1e-10;
        }
        let dir = match neg.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = phi.iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
            let v = value(&trial);
            if v > current {
                phi = trial;
                improved = v - current > 1e-16 * current.abs().max(1e-300);
                current = v;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(current)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    /// `h * mu`, normalized.
    pub nu: Vec<f64>,
    pub q: f64,
    /// `<V, nu>`
    pub mean_potential: f64,
    /// Functional value at `g* = h e^V`.
    pub rate: f64,
    /// `|Q - (<V, nu> - I)|`
    pub gap: f64,
}

/// `nu_V` with the certificate `Q(V) = <V, nu_V> - I(nu_V)`.
pub fn equilibrium_state(kernel: &TwistedKernel, triple: &SpectralTriple, tol: f64) -> Result<EquilibriumState> {
    let nu = triple.nu();
    let q = triple.lambda.ln();
    let mean_potential: f64 = nu.iter().zip(kernel.potential()).map(|(a, b)| a * b).sum();
    let rate = dv_value(kernel, &nu, &optimal_test_function(kernel, triple))?;
    let gap = (q - (mean_potential - rate)).abs();
    if gap > tol {
        return Err(Error::Certificate { lhs: q, rhs: mean_potential - rate });
    }
    Ok(EquilibriumState { nu, q, mean_potential, rate, gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_tabulated_potentials() {
        let p = Potential::Polynomial {
            terms: vec![
                Monomial { coeff: 2.0, powers: vec![1] },
                Monomial { coeff: -1.0, powers: vec![0, 2] },
                Monomial { coeff: 0.5, powers: vec![] },
            ],
        };
        assert_eq!(p.eval(&[3.0, 2.0]), 6.0 - 4.0 + 0.5);
        assert_eq!(p.axes(), vec![0, 1]);
        assert_eq!(p.scaled(2.0).eval(&[3.0, 2.0]), 5.0);
        assert_eq!(p.shifted(1.0).eval(&[3.0, 2.0]), 3.5);
        let t = Potential::Tabulated { axis: 0, lo: -1.0, hi: 1.0, values: vec![0.0, 1.0, 0.0] };
        assert_eq!(t.eval(&[0.5]), 0.5);
        assert_eq!(t.eval(&[-3.0]), 0.0);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Potential>(&json).unwrap(), p);
    }

    #[test]
    fn unresolved_potential_is_rejected() {
        let part = CellPartition::uniform(vec![0], 1.0, 4).unwrap();
        assert!(Potential::linear(1, 1.0).on_cells(&part).is_err());
        assert_eq!(Potential::linear(0, 1.0).on_cells(&part).unwrap(), vec![-0.75, -0.25, 0.25, 0.75]);
    }

    #[test]
    fn deterministic_exponents() {
        let e = estimate_from_sums(&vec![0.0; 100], 10, 10).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.degenerate);
        let e = estimate_from_sums(&vec![3.0; 100], 10, 10).unwrap();
        assert!((e.value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn log_mean_exp_survives_overflow() {
        assert!((log_mean_exp(&[1000.0, 1000.0]) - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn legendre_of_a_quadratic() {
        // Q = theta^2 / 2 gives I = x^2 / 2 with theta* = x
        let c = legendre_rate(|t| Ok(t * t / 2.0), "x", &[-1.0, 0.0, 0.5, 2.0], &default_theta_grid()).unwrap();
        for (x, (r, t)) in c.x.iter().zip(c.rate.iter().zip(&c.theta_star)) {
            assert!((r - x * x / 2.0).abs() < 1e-12 && (t - x).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_widens_for_distant_levels() {
        let c = legendre_rate(|t| Ok(t * t / 2.0), "x", &[6.0], &default_theta_grid()).unwrap();
        assert!((c.rate[0] - 18.0).abs() < 1e-12 && !c.boundary[0]);
    }

    #[test]
    fn legendre_of_a_constant_observable() {
        let c = legendre_rate(Ok, "one", &[0.5, 1.0, 1.5], &default_theta_grid()).unwrap();
        assert_eq!(c.rate[1], 0.0);
        assert!(c.rate[0].is_infinite() && c.rate[2].is_infinite());
    }

    #[test]
    fn legendre_rejects_lopsided_grid() {
        assert!(legendre_rate(Ok, "one", &[1.0], &[-1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn lipschitz_check_of_shifted_pair() {
        let v = vec![0.1, -0.2, 0.3];
        let vc: Vec<f64> = v.iter().map(|x| x + 0.7).collect();
        assert!(scgf_lipschitz_check(&[(v, 0.05), (vc, 0.75)]).unwrap().abs() < 1e-15);
    }
}
