//! Occupation measures of trajectories, the dual-Lipschitz metric, mixing
//! and rare-event statistics, and aggregation of multi-step rates.

use std::io::Write;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{dist, KickedSystem};
use crate::error::{Error, Result};
use crate::noise::KickLaw;
use crate::par;
use crate::seed::{child_rng, Rng};
use crate::twisted::TwistedKernel;

/// Uniform measure `(1/k) sum delta_{atom}` where each atom is a window of
/// `tuple` consecutive states, flattened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    atoms: Vec<Vec<f64>>,
    state_dim: usize,
    tuple: usize,
    start: usize,
}

impl OccupationMeasure {
    pub fn from_atoms(atoms: Vec<Vec<f64>>, state_dim: usize, tuple: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("occupation measure needs at least one atom".into()));
        }
        if let Some(a) = atoms.iter().find(|a| a.len() != state_dim * tuple) {
            return Err(Error::DimensionMismatch { expected: state_dim * tuple, got: a.len() });
        }
        Ok(Self { atoms, state_dim, tuple, start: 0 })
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn tuple(&self) -> usize {
        self.tuple
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// `<f, zeta>`
    pub fn mean<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| f(a)).sum::<f64>() / self.k() as f64
    }

    /// Image under the map to the `j`-th state of each window.
    pub fn marginal(&self, j: usize) -> Result<Self> {
        if j >= self.tuple {
            return Err(Error::InvalidArgument(format!("window has {} states, asked for {j}", self.tuple)));
        }
        let d = self.state_dim;
        let atoms = self.atoms.iter().map(|a| a[j * d..(j + 1) * d].to_vec()).collect();
        Ok(Self { atoms, state_dim: d, tuple: 1, start: self.start + j })
    }

    /// Image under the projection on coordinate `axis` of the flattened atom.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.atoms.iter().map(|a| a[axis]).collect()
    }
}

/// `zeta = (1/k) sum_{n=start}^{start+k-1} delta_{u_n}`
pub fn occupation<T: AsRef<[f64]>>(traj: &[T], start: usize, k: usize) -> Result<OccupationMeasure> {
    window_occupation(traj, start, 1, k)
}

/// Windows `(u_n, ..., u_{n+m-1})` for `n = 0..k`.
pub fn pair_occupation<T: AsRef<[f64]>>(traj: &[T], m: usize, k: usize) -> Result<OccupationMeasure> {
    window_occupation(traj, 0, m, k)
}

pub fn window_occupation<T: AsRef<[f64]>>(traj: &[T], start: usize, m: usize, k: usize) -> Result<OccupationMeasure> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidArgument("window and tuple length must be positive".into()));
    }
    let needed = start + k + m - 1;
    if traj.len() < needed {
        return Err(Error::WindowOverflow { needed, len: traj.len() });
    }
    let d = traj[0].as_ref().len();
    let atoms =
        (start..start + k).map(|n| (n..n + m).flat_map(|i| traj[i].as_ref().iter().cloned()).collect()).collect();
    Ok(OccupationMeasure { atoms, state_dim: d, tuple: m, start })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DualMethod {
    /// Linear program over functions of one coordinate. Exact for measures on
    /// the line.
    Exact1d { axis: usize },
    /// Mass moved to the centers of `bins` equal bins before the LP.
    Binned1d { axis: usize, bins: usize },
    /// Maximum over tent functions centred at atoms; a lower bound.
    Dictionary { centers: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualDistance {
    pub value: f64,
    pub method: DualMethod,
    /// True when `value` is only a lower bound of the metric on the full space.
    pub lower_bound: bool,
    /// Additive error from binning, zero otherwise.
    pub binning_error: f64,
}

/// `sup { |<f, mu1> - <f, mu2>| : |f|_inf + Lip(f) <= 1 }`
pub fn dual_lipschitz(mu1: &OccupationMeasure, mu2: &OccupationMeasure, method: DualMethod) -> Result<DualDistance> {
    if mu1.state_dim * mu1.tuple != mu2.state_dim * mu2.tuple {
        return Err(Error::SpaceMismatch(format!(
            "{}x{} vs {}x{}",
            mu1.tuple, mu1.state_dim, mu2.tuple, mu2.state_dim
        )));
    }
    let width = mu1.state_dim * mu1.tuple;
    match method {
        DualMethod::Exact1d { axis } | DualMethod::Binned1d { axis, .. } if axis >= width => {
            Err(Error::SpaceMismatch(format!("axis {axis} beyond atom width {width}")))
        }
        DualMethod::Exact1d { axis } => {
            let points = signed_points(&mu1.coordinate(axis), &mu2.coordinate(axis));
            Ok(DualDistance { value: lp_1d(&points)?, method, lower_bound: width > 1, binning_error: 0.0 })
        }
        DualMethod::Binned1d { axis, bins } => {
            let (value, err) = binned_1d(&mu1.coordinate(axis), &mu2.coordinate(axis), bins)?;
            Ok(DualDistance { value, method, lower_bound: width > 1, binning_error: err })
        }
        DualMethod::Dictionary { centers, seed } => Ok(DualDistance {
            value: dictionary(mu1, mu2, centers, seed),
            method,
            lower_bound: true,
            binning_error: 0.0,
        }),
    }
}

/// Distinct sorted points with weight `mu1 - mu2`.
fn signed_points(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let mut all: Vec<(f64, f64)> = a.iter().map(|x| (*x, wa)).chain(b.iter().map(|x| (*x, -wb))).collect();
    all.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(all.len());
    for (x, w) in all {
        match merged.last_mut() {
            Some(last) if last.0 == x => last.1 += w,
            _ => merged.push((x, w)),
        }
    }
    merged
}

/// Maximises `sum w_i f_i` over `|f_i| <= s`, `|f_{i+1} - f_i| <= L d_i`,
/// `s + L <= 1`. Piecewise-linear interpolation extends any feasible point
/// to the real line without raising `s` or `L`.
pub fn lp_1d(points: &[(f64, f64)]) -> Result<f64> {
    if points.iter().all(|p| p.1.abs() < 1e-15) {
        return Ok(0.0);
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let s = lp.add_var(0.0, (0.0, 1.0));
    let l = lp.add_var(0.0, (0.0, 1.0));
    let f: Vec<_> = points.iter().map(|(_, w)| lp.add_var(*w, (-1.0, 1.0))).collect();
    lp.add_constraint([(s, 1.0), (l, 1.0)], ComparisonOp::Le, 1.0);
    for &fi in &f {
        lp.add_constraint([(fi, 1.0), (s, -1.0)], ComparisonOp::Le, 0.0);
        lp.add_constraint([(fi, -1.0), (s, -1.0)], ComparisonOp::Le, 0.0);
    }
    for i in 0..f.len().saturating_sub(1) {
        let d = points[i + 1].0 - points[i].0;
        lp.add_constraint([(f[i + 1], 1.0), (f[i], -1.0), (l, -d)], ComparisonOp::Le, 0.0);
        lp.add_constraint([(f[i], 1.0), (f[i + 1], -1.0), (l, -d)], ComparisonOp::Le, 0.0);
    }
    let sol = lp.solve().map_err(|e| Error::Lp(e.to_string()))?;
    Ok(sol.objective().max(0.0))
}

fn binned_1d(a: &[f64], b: &[f64], bins: usize) -> Result<(f64, f64)> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut w = vec![0.0; bins];
    let idx = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    for x in a {
        w[idx(*x)] += 1.0 / a.len() as f64;
    }
    for x in b {
        w[idx(*x)] -= 1.0 / b.len() as f64;
    }
    let points: Vec<(f64, f64)> = w.iter().enumerate().map(|(i, w)| (lo + (i as f64 + 0.5) * width, *w)).collect();
    // each unit of mass moves at most width/2, on both sides
    let err = if hi > lo { width } else { 0.0 };
    Ok((lp_1d(&points)?, err))
}

fn dictionary(mu1: &OccupationMeasure, mu2: &OccupationMeasure, centers: usize, seed: u64) -> f64 {
    use rand::RngExt;
    let mut rng = child_rng(seed, "dual-dictionary", 0);
    let pool: Vec<&Vec<f64>> = mu1.atoms.iter().chain(&mu2.atoms).collect();
    let picks: Vec<&Vec<f64>> = (0..centers.max(1)).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    let radii = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
    let mut best: f64 = 0.0;
    for c in picks {
        for &rho in &radii {
            // height rho/(1+rho), slope 1/(1+rho): sup + Lip = 1
            let tent = |x: &[f64]| (rho - dist(x, c)).max(0.0) / (1.0 + rho);
            let v = mu1.mean(tent) - mu2.mean(tent);
            best = best.max(v.abs());
        }
    }
    best
}

/// Distance between `zeta_k` started at `m` and at `l`, and `2|m-l|/k`.
pub fn exp_equivalence<T: AsRef<[f64]>>(
    traj: &[T],
    m: usize,
    l: usize,
    k: usize,
    method: DualMethod,
) -> Result<(f64, f64)> {
    let bound = 2.0 * m.abs_diff(l) as f64 / k as f64;
    if m == l {
        occupation(traj, m, k)?;
        return Ok((0.0, bound));
    }
    let a = occupation(traj, m, k)?;
    let b = occupation(traj, l, k)?;
    Ok((dual_lipschitz(&a, &b, method)?.value, bound))
}

/// `|u_n - u'_n|` for two chains driven by the same kicks.
pub fn coupled_distances<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    u: &[f64],
    v: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = child_rng(seed, "coupling", 0);
    let (mut x, mut y) = (u.to_vec(), v.to_vec());
    let mut out = vec![dist(&x, &y)];
    for _ in 0..k {
        let kick = law.sample(sys.basis(), &mut rng);
        x = sys.flow(&x)?;
        y = sys.flow(&y)?;
        for ((a, b), e) in x.iter_mut().zip(y.iter_mut()).zip(kick.coeffs()) {
            *a += e;
            *b += e;
        }
        out.push(dist(&x, &y));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingFit {
    /// `d_k` for `k = 0..=k_max`
    pub distances: Vec<f64>,
    /// Distance between two independent stationary samples of the same size.
    pub noise_floor: f64,
    /// Steps used by the fit.
    pub fit_range: (usize, usize),
    pub c: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingOptions {
    pub burn_in: usize,
    /// Length of the stationary reference run.
    pub reference_len: usize,
    pub method: DualMethod,
}

impl Default for MixingOptions {
    fn default() -> Self {
        Self { burn_in: 200, reference_len: 200_000, method: DualMethod::Binned1d { axis: 0, bins: 400 } }
    }
}

/// Initial-state sampler.
pub type InitialLaw = dyn Fn(&mut Rng) -> Vec<f64> + Sync;

/// Fits `log d_k = log C - alpha k` where `d_k` is the distance from the
/// time-`k` ensemble to a long stationary run, over the steps before the
/// distance first drops below twice the noise floor.
#[allow(clippy::too_many_arguments)]
pub fn mixing_decay<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    init: &InitialLaw,
    k_max: usize,
    n_traj: usize,
    seed: u64,
    opts: MixingOptions,
) -> Result<MixingFit> {
    let dim = sys.dim();
    let basis = sys.basis();
    let advance = |u: &mut Vec<f64>, rng: &mut Rng| -> Result<()> {
        let kick = law.sample(basis, rng);
        *u = sys.flow(u)?;
        for (a, e) in u.iter_mut().zip(kick.coeffs()) {
            *a += e;
        }
        Ok(())
    };
    let mut rng = child_rng(seed, "mixing-reference", 0);
    let mut u = vec![0.0; dim];
    for _ in 0..opts.burn_in {
        advance(&mut u, &mut rng)?;
    }
    let mut reference = Vec::with_capacity(opts.reference_len);
    for _ in 0..opts.reference_len {
        advance(&mut u, &mut rng)?;
        reference.push(u.clone());
    }
    let reference = OccupationMeasure::from_atoms(reference, dim, 1)?;
    // ensemble[t][i] = state of trajectory i at time t
    let paths = par::try_map_indexed(n_traj, |i| {
        let mut rng = child_rng(seed, "mixing-ensemble", i as u64);
        let mut u = init(&mut rng);
        let mut path = vec![u.clone()];
        for _ in 0..k_max {
            advance(&mut u, &mut rng)?;
            path.push(u.clone());
        }
        Ok(path)
    })?;
    let distances = par::try_map_indexed(k_max + 1, |t| {
        let atoms = paths.iter().map(|p| p[t].clone()).collect();
        let m = OccupationMeasure::from_atoms(atoms, dim, 1)?;
        Ok(dual_lipschitz(&m, &reference, opts.method)?.value)
    })?;
    let stationary = par::try_map_indexed(2, |j| {
        let mut rng = child_rng(seed, "mixing-floor", j as u64);
        let atoms = (0..n_traj)
            .map(|_| {
                let mut u = vec![0.0; dim];
                for _ in 0..opts.burn_in {
                    advance(&mut u, &mut rng)?;
                }
                Ok(u)
            })
            .collect::<Result<Vec<_>>>()?;
        OccupationMeasure::from_atoms(atoms, dim, 1)
    })?;
    let noise_floor = dual_lipschitz(&stationary[0], &stationary[1], opts.method)?.value;
    let end = distances.iter().position(|d| *d <= 2.0 * noise_floor).unwrap_or(distances.len());
    if end < 2 {
        return Err(Error::NoDecay);
    }
    let pts: Vec<(f64, f64)> = (0..end).map(|k| (k as f64, distances[k].ln())).collect();
    let (slope, intercept, _) = ols(&pts);
    if !(slope < 0.0) {
        return Err(Error::NoDecay);
    }
    Ok(MixingFit { distances, noise_floor, fit_range: (0, end - 1), c: intercept.exp(), alpha: -slope })
}

/// Least squares line through `(x, y)`: `(slope, intercept, slope stderr)`.
pub fn ols(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if pts.len() > 2 {
        let rss: f64 = pts.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    (slope, intercept, se)
}

/// Event `{ lo <= <f, zeta_k> <= hi }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub lo: f64,
    pub hi: f64,
}

impl LevelSet {
    pub fn at_least(lo: f64) -> Self {
        Self { lo, hi: f64::INFINITY }
    }

    pub fn everything() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareEventEstimate {
    pub event: LevelSet,
    pub k_list: Vec<usize>,
    pub n_traj: usize,
    pub counts: Vec<usize>,
    /// No hit at this `k`: the frequency is only known to be below `1/n_traj`.
    pub censored: Vec<bool>,
    pub log_frequency: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// 95% interval for the slope from the t distribution.
    pub ci: (f64, f64),
    pub all_censored: bool,
}

impl RareEventEstimate {
    pub fn write_json<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

/// Time averages `<f, zeta_k>` for every `k` in `k_list` (increasing) along
/// `n_traj` trajectories from `u0`; `result[i][j]` is trajectory `i` at
/// `k_list[j]`.
#[allow(clippy::too_many_arguments)]
pub fn time_averages<S, F>(
    sys: &S,
    law: &KickLaw,
    f: &F,
    u0: &[f64],
    k_list: &[usize],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>>
where
    S: KickedSystem + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    if k_list.is_empty() || k_list.windows(2).any(|w| w[1] <= w[0]) || k_list[0] == 0 {
        return Err(Error::InvalidArgument("k_list must be positive and increasing".into()));
    }
    let k_max = *k_list.last().unwrap();
    par::try_map_indexed(n_traj, |i| {
        let mut rng = child_rng(seed, "rare-event", i as u64);
        let mut out = Vec::with_capacity(k_list.len());
        let mut next = 0;
        crate::dynamics::fold_path(sys, law, u0, k_max, &mut rng, 0.0, |acc, n, u| {
            let acc = acc + f(u);
            if next < k_list.len() && n == k_list[next] {
                out.push(acc / n as f64);
                next += 1;
            }
            acc
        })?;
        Ok(out)
    })
}

/// Frequencies of `<f, zeta_k> in event` and the fitted slope of their
/// logarithm against `k`. Censored windows are left out of the fit.
pub fn rare_event_fit(averages: &[Vec<f64>], k_list: &[usize], event: LevelSet) -> RareEventEstimate {
    let n_traj = averages.len();
    let counts: Vec<usize> =
        (0..k_list.len()).map(|j| averages.iter().filter(|a| event.contains(a[j])).count()).collect();
    let censored: Vec<bool> = counts.iter().map(|c| *c == 0).collect();
    let log_frequency: Vec<f64> = counts.iter().map(|c| (*c as f64 / n_traj as f64).ln()).collect();
    let pts: Vec<(f64, f64)> =
        (0..k_list.len()).filter(|&j| !censored[j]).map(|j| (k_list[j] as f64, log_frequency[j])).collect();
    let all_censored = pts.is_empty();
    let (slope, intercept, ci) = if pts.len() >= 2 {
        let (slope, intercept, se) = ols(&pts);
        let half = if pts.len() > 2 {
            let t = StudentsT::new(0.0, 1.0, (pts.len() - 2) as f64).expect("positive dof");
            t.inverse_cdf(0.975) * se
        } else {
            f64::INFINITY
        };
        (slope, intercept, (slope - half, slope + half))
    } else {
        (f64::NAN, f64::NAN, (f64::NEG_INFINITY, f64::INFINITY))
    };
    RareEventEstimate {
        event,
        k_list: k_list.to_vec(),
        n_traj,
        counts,
        censored,
        log_frequency,
        slope,
        intercept,
        ci,
        all_censored,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn empirical_ld_rate<S, F>(
    sys: &S,
    law: &KickLaw,
    f: &F,
    event: LevelSet,
    u0: &[f64],
    k_list: &[usize],
    n_traj: usize,
    seed: u64,
) -> Result<RareEventEstimate>
where
    S: KickedSystem + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let averages = time_averages(sys, law, f, u0, k_list, n_traj, seed)?;
    Ok(rare_event_fit(&averages, k_list, event))
}

/// A rate value at window length `m`, with the measure it was computed for:
/// a probability vector on `n^m` cell tuples, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub m: usize,
    pub measure: Vec<f64>,
    pub rate: f64,
}

/// Sums out the last coordinate of a measure on `n^m` tuples.
pub fn drop_last(measure: &[f64], n: usize) -> Vec<f64> {
    measure.chunks(n).map(|c| c.iter().sum()).collect()
}

/// `sup_m I_m`, after checking that consecutive levels project onto each
/// other and that the rates do not decrease.
pub fn dg_aggregate(levels: &[Level], tol: f64) -> Result<f64> {
    let first = levels.first().ok_or_else(|| Error::InvalidArgument("no levels".into()))?;
    let n = (first.measure.len() as f64).powf(1.0 / first.m.max(1) as f64).round() as usize;
    if n.checked_pow(first.m as u32) != Some(first.measure.len()) {
        return Err(Error::InvalidArgument(format!("level {} measure size is not n^m", first.m)));
    }
    for w in levels.windows(2) {
        let (lower, upper) = (&w[0], &w[1]);
        if upper.m != lower.m + 1 || upper.measure.len() != lower.measure.len() * n {
            return Err(Error::InvalidArgument(format!("levels {} and {} are not consecutive", lower.m, upper.m)));
        }
        let proj = drop_last(&upper.measure, n);
        let gap = proj.iter().zip(&lower.measure).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if gap > tol {
            return Err(Error::MarginalInconsistency { lower: lower.m, upper: upper.m, gap });
        }
        if upper.rate < lower.rate - tol {
            return Err(Error::NotMonotone { level: upper.m });
        }
    }
    Ok(levels.iter().map(|l| l.rate).fold(f64::NEG_INFINITY, f64::max))
}

/// Relative entropy `H(sigma2 | sigma1 x P)` of a pair measure, `sigma1` its
/// first marginal.
pub fn pair_relative_entropy(kernel0: &TwistedKernel, sigma2: &[f64]) -> Result<f64> {
    let n = kernel0.n();
    if sigma2.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: sigma2.len() });
    }
    let sigma1 = drop_last(sigma2, n);
    let mut h = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = sigma2[i * n + j];
            if s == 0.0 {
                continue;
            }
            let r = sigma1[i] * kernel0.transition(i, j);
            if r == 0.0 {
                return Ok(f64::INFINITY);
            }
            h += s * (s / r).ln();
        }
    }
    Ok(h)
}

/// Chain of consecutive pairs: `(i, j) -> (j, l)` with probability `P_jl`.
pub fn pair_chain(kernel0: &TwistedKernel) -> Result<TwistedKernel> {
    let n = kernel0.n();
    let mut p = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            let row = (i * n + j) * n * n;
            for l in 0..n {
                p[row + j * n + l] = kernel0.transition(j, l);
            }
        }
    }
    TwistedKernel::from_matrix(n * n, p, vec![0.0; n * n])
}

/// Stationary pair law of the Doob transform of `kernel` by its Perron vector:
/// `sigma2(i, j) = nu_i K(i, j) h_j / (K h)_i`.
pub fn equilibrium_pair(kernel: &TwistedKernel, h: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    let n = kernel.n();
    if h.len() != n || nu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.len().min(nu.len()) });
    }
    let kh = kernel.apply(h);
    let mut sigma2 = vec![0.0; n * n];
    for i in 0..n {
        if !(kh[i] > 0.0) {
            return Err(Error::NonPositive(i));
        }
        for j in 0..n {
            sigma2[i * n + j] = nu[i] * kernel.entry(i, j) * h[j] / kh[i];
        }
    }
    Ok(sigma2)
}

/// `sigma x sigma`, row-major.
pub fn product_measure(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().flat_map(|a| sigma.iter().map(move |b| a * b)).collect()
}
