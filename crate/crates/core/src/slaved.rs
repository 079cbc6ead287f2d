//! Slaved high modes as a function of the low-mode history.
//!
//! With `P_N` the projection on the first `N` coordinates and `Q_N = I - P_N`,
//! the high part of a trajectory solves
//! `w_k = Q_N S(v_{k-1} + w_{k-1}) + psi_k`, and `W0` is its value at `k = 0`.
//! Histories are truncated at depth `J` with the closure `w_{-J} = psi_{-J}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{squeezing_ratio, KickedSystem};
use crate::error::{Error, Result};
use crate::noise::KickLaw;
use crate::par;
use crate::seed::{child_rng, Rng};
use crate::state::{check_blow_up, norm};

/// Low-mode states `v_j` and high-mode kicks `psi_j` for `j = -J..=0`,
/// stored oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    v: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
    radius: f64,
    kick_bound: f64,
}

impl HistoryWindow {
    /// Checks that every `|v_j| <= radius` and `|psi_j| <= kick_bound`.
    pub fn new(v: Vec<Vec<f64>>, psi: Vec<Vec<f64>>, radius: f64, kick_bound: f64) -> Result<Self> {
        if v.is_empty() || v.len() != psi.len() {
            return Err(Error::InvalidArgument(format!(
                "history needs matching nonempty sequences, got {} and {}",
                v.len(),
                psi.len()
            )));
        }
        let (n, m) = (v[0].len(), psi[0].len());
        if let Some(bad) = v.iter().find(|x| x.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        if let Some(bad) = psi.iter().find(|x| x.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: bad.len() });
        }
        let w = Self { v, psi, radius, kick_bound };
        w.check_box()?;
        Ok(w)
    }

    /// `v_j = center`, `psi_j = 0`.
    pub fn frozen(center: &[f64], tail_dim: usize, depth: usize) -> Self {
        Self {
            v: vec![center.to_vec(); depth + 1],
            psi: vec![vec![0.0; tail_dim]; depth + 1],
            radius: f64::INFINITY,
            kick_bound: f64::INFINITY,
        }
    }

    fn check_box(&self) -> Result<()> {
        // small slack so that states built by rounding stay admissible
        let tol = 1e-12;
        if let Some((j, x)) = self.v.iter().enumerate().find(|(_, x)| norm(x) > self.radius * (1.0 + tol)) {
            return Err(Error::OutOfBox(format!(
                "|v_{}| = {} > R = {}",
                j as isize - self.depth() as isize,
                norm(x),
                self.radius
            )));
        }
        if let Some((j, x)) = self.psi.iter().enumerate().find(|(_, x)| norm(x) > self.kick_bound * (1.0 + tol)) {
            return Err(Error::OutOfBox(format!(
                "|psi_{}| = {} > b = {}",
                j as isize - self.depth() as isize,
                norm(x),
                self.kick_bound
            )));
        }
        Ok(())
    }

    /// `J`
    pub fn depth(&self) -> usize {
        self.v.len() - 1
    }

    pub fn n_resolved(&self) -> usize {
        self.v[0].len()
    }

    pub fn tail_dim(&self) -> usize {
        self.psi[0].len()
    }

    pub fn v(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn psi(&self) -> &[Vec<f64>] {
        &self.psi
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn kick_bound(&self) -> f64 {
        self.kick_bound
    }

    /// Drops the oldest entry and appends `(v, psi)` as the new `j = 0`.
    pub fn shifted(&self, v: Vec<f64>, psi: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.v.remove(0);
        out.psi.remove(0);
        out.v.push(v);
        out.psi.push(psi);
        out
    }

    /// Adds `delta` to the first coordinate of `v_{-depth}` or `psi_{-depth}`.
    pub fn perturbed(&self, target: Target, depth: usize, delta: f64) -> Result<Self> {
        if depth > self.depth() {
            return Err(Error::WindowOverflow { needed: depth + 1, len: self.v.len() });
        }
        let mut out = self.clone();
        let idx = self.depth() - depth;
        match target {
            Target::V => out.v[idx][0] += delta,
            Target::Psi => out.psi[idx][0] += delta,
        }
        out.check_box()?;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    V,
    Psi,
}

fn join(v: &[f64], w: &[f64]) -> Vec<f64> {
    let mut u = Vec::with_capacity(v.len() + w.len());
    u.extend_from_slice(v);
    u.extend_from_slice(w);
    u
}

/// Forward sweep of the slaved recursion; returns `w_{-J}, ..., w_0`.
fn sweep<S: KickedSystem + ?Sized>(sys: &S, window: &HistoryWindow) -> Result<Vec<Vec<f64>>> {
    let n = window.n_resolved();
    let mut tail = Vec::with_capacity(window.v.len());
    tail.push(window.psi[0].clone());
    for idx in 1..window.v.len() {
        let s = sys.flow(&join(&window.v[idx - 1], &tail[idx - 1]))?;
        let w: Vec<f64> = s[n..].iter().zip(&window.psi[idx]).map(|(a, b)| a + b).collect();
        check_blow_up(&w, None)?;
        tail.push(w);
    }
    Ok(tail)
}

/// `W0` for the frozen history `v_j = center`, `psi_j = 0`.
pub fn frozen_tail<S: KickedSystem + ?Sized>(sys: &S, n: usize, center: &[f64], depth: usize) -> Result<Vec<f64>> {
    if center.len() != n || n > sys.dim() {
        return Err(Error::DimensionMismatch { expected: n, got: center.len() });
    }
    let window = HistoryWindow::frozen(center, sys.dim() - n, depth);
    Ok(sweep(sys, &window)?.pop().expect("window is nonempty"))
}

/// `gamma_N(R)`: the system's bound if it has one, else a sampled estimate.
pub fn squeezing_gamma<S: KickedSystem + ?Sized>(sys: &S, n: usize, radius: f64) -> Result<f64> {
    match sys.squeezing_factor(n, radius) {
        Some(g) => Ok(g),
        None => Ok(crate::attainability::SAFETY_FACTOR * squeezing_ratio(sys, n, radius, 400, 0)?),
    }
}

/// Smallest `J` with `gamma^J <= target`.
pub fn window_for(gamma: f64, target: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    (target.ln() / gamma.ln()).ceil().max(1.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlavedOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SlavedOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlavedModeMap {
    pub n: usize,
    pub depth: usize,
    pub tol: f64,
    pub gamma: f64,
    /// Fitted decay rate of the history sensitivity, if measured.
    pub kappa_fit: Option<f64>,
    /// `w_{-J}, ..., w_0`
    pub tail: Vec<Vec<f64>>,
    /// `sup_j |w_j - Q_N S(v_{j-1} + w_{j-1}) - psi_j|`
    pub residual: f64,
    /// `2 gamma^J b / (1 - gamma)`
    pub truncation_bound: f64,
    pub sweeps: usize,
}

impl SlavedModeMap {
    /// `W0 = w_0`
    pub fn w0(&self) -> &[f64] {
        self.tail.last().expect("tail is nonempty")
    }

    pub fn write_summary<W: Write>(&self, out: &mut W) -> Result<()> {
        #[derive(Serialize)]
        struct Summary {
            n: usize,
            depth: usize,
            gamma: f64,
            kappa_fit: Option<f64>,
            residual: f64,
        }
        let s = Summary {
            n: self.n,
            depth: self.depth,
            gamma: self.gamma,
            kappa_fit: self.kappa_fit,
            residual: self.residual,
        };
        serde_json::to_writer_pretty(&mut *out, &s)?;
        writeln!(out)?;
        Ok(())
    }
}

fn residual<S: KickedSystem + ?Sized>(sys: &S, window: &HistoryWindow, tail: &[Vec<f64>]) -> Result<f64> {
    let n = window.n_resolved();
    let mut worst = norm(&tail[0].iter().zip(&window.psi[0]).map(|(a, b)| a - b).collect::<Vec<_>>());
    for idx in 1..tail.len() {
        let s = sys.flow(&join(&window.v[idx - 1], &tail[idx - 1]))?;
        let r: Vec<f64> = (0..tail[idx].len()).map(|c| tail[idx][c] - s[n + c] - window.psi[idx][c]).collect();
        worst = worst.max(norm(&r));
    }
    Ok(worst)
}

fn check_gamma(n: usize, gamma: f64) -> Result<()> {
    if gamma > 0.5 {
        return Err(Error::NeedsLargerN { n, gamma });
    }
    Ok(())
}

/// Solves the slaved recursion over `window`. Requires `gamma_N(R) <= 1/2`.
pub fn solve_slaved<S: KickedSystem + ?Sized>(
    sys: &S,
    n: usize,
    window: &HistoryWindow,
    opts: SlavedOptions,
) -> Result<SlavedModeMap> {
    if window.n_resolved() != n || n + window.tail_dim() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), got: n + window.tail_dim() });
    }
    let gamma = squeezing_gamma(sys, n, window.radius() + window.kick_bound())?;
    check_gamma(n, gamma)?;
    // the recursion is explicit, so the second sweep only confirms the first
    let mut tail = sweep(sys, window)?;
    let mut sweeps = 1;
    while sweeps < opts.max_iter.max(1) {
        let again = sweep(sys, window)?;
        sweeps += 1;
        let change =
            norm(&again.last().unwrap().iter().zip(tail.last().unwrap()).map(|(a, b)| a - b).collect::<Vec<_>>());
        tail = again;
        if change <= opts.tol {
            break;
        }
    }
    let residual = residual(sys, window, &tail)?;
    if !residual.is_finite() {
        return Err(Error::NonFinite("slaved residual".into()));
    }
    let truncation_bound = if gamma < 1.0 {
        2.0 * gamma.powi(window.depth() as i32) * window.kick_bound() / (1.0 - gamma)
    } else {
        f64::INFINITY
    };
    Ok(SlavedModeMap {
        n,
        depth: window.depth(),
        tol: opts.tol,
        gamma,
        kappa_fit: None,
        tail,
        residual,
        truncation_bound,
        sweeps,
    })
}

/// `|W0(base + delta at depth) - W0(base)| / delta`.
pub fn lipschitz_profile<S: KickedSystem + ?Sized>(
    sys: &S,
    base: &HistoryWindow,
    target: Target,
    depth: usize,
    delta: f64,
) -> Result<f64> {
    let perturbed = base.perturbed(target, depth, delta)?;
    let w_base = sweep(sys, base)?.pop().unwrap();
    let w_pert = sweep(sys, &perturbed)?.pop().unwrap();
    let d: Vec<f64> = w_pert.iter().zip(&w_base).map(|(a, b)| a - b).collect();
    Ok(norm(&d) / delta.abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub depths: Vec<usize>,
    pub sensitivity: Vec<f64>,
    /// Minus the slope of `log sensitivity` against depth.
    pub kappa_fit: f64,
}

/// Sensitivities for depths `1..=max_depth`, and the fitted decay rate over
/// the depths whose sensitivity clears `floor`.
pub fn sensitivity_profile<S: KickedSystem + ?Sized>(
    sys: &S,
    base: &HistoryWindow,
    target: Target,
    max_depth: usize,
    delta: f64,
) -> Result<SensitivityProfile> {
    let floor = 1e-9;
    let depths: Vec<usize> = (1..=max_depth.min(base.depth())).collect();
    let sensitivity =
        depths.iter().map(|&j| lipschitz_profile(sys, base, target, j, delta)).collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> =
        depths.iter().zip(&sensitivity).filter(|(_, s)| **s > floor).map(|(&j, s)| (j as f64, s.ln())).collect();
    let kappa_fit = if pts.len() < 2 {
        f64::INFINITY
    } else {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        -sxy / sxx
    };
    Ok(SensitivityProfile { depths, sensitivity, kappa_fit })
}

/// Runs the full system from 0 for `depth + 1` kicked steps and records the
/// low modes and high-mode kicks. Also returns the final full state `u_0`.
pub fn driven_window<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    n: usize,
    depth: usize,
    radius: f64,
    seed: u64,
) -> Result<(HistoryWindow, Vec<f64>)> {
    let mut rng = child_rng(seed, "driven-window", 0);
    let mut u = vec![0.0; sys.dim()];
    let mut v = Vec::with_capacity(depth + 1);
    let mut psi = Vec::with_capacity(depth + 1);
    for _ in 0..=depth {
        let kick = law.sample(sys.basis(), &mut rng);
        u = sys.flow(&u)?;
        for (x, k) in u.iter_mut().zip(kick.coeffs()) {
            *x += k;
        }
        v.push(u[..n].to_vec());
        psi.push(kick.coeffs()[n..].to_vec());
    }
    let kick_bound = norm(&law.scales()[n..]);
    Ok((HistoryWindow::new(v, psi, radius, kick_bound)?, u))
}

/// Observable of the low-mode path `v_1, ..., v_k`.
pub type PathObservable = dyn Fn(&[Vec<f64>]) -> f64 + Sync;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReductionOptions {
    /// Replace the kick at this step (1-based) by a uniform kick on the same
    /// support, on both sides.
    pub uniformized_step: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    pub z: f64,
}

fn draw_kick(
    law: &KickLaw,
    sys_basis: crate::state::Basis,
    step: usize,
    opts: ReductionOptions,
    rng: &mut Rng,
) -> Vec<f64> {
    if opts.uniformized_step == Some(step) {
        let uniform = KickLaw::uniform(law.scales().to_vec()).expect("scales already validated");
        uniform.sample(sys_basis, rng).into_coeffs()
    } else {
        law.sample(sys_basis, rng).into_coeffs()
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Compares `E_u f(v_1..v_k)` on the full chain against the same mean on the
/// reduced chain driven from `window`. The two sides use independent seeds.
#[allow(clippy::too_many_arguments)]
pub fn verify_reduction<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    n: usize,
    u: &[f64],
    window: &HistoryWindow,
    f: &PathObservable,
    k: usize,
    n_traj: usize,
    seed: u64,
    opts: ReductionOptions,
) -> Result<ReductionCheck> {
    if n_traj < 2 || k == 0 {
        return Err(Error::InvalidArgument("need k >= 1 and at least two trajectories".into()));
    }
    let map = solve_slaved(sys, n, window, SlavedOptions::default())?;
    let head_gap = norm(&u[..n].iter().zip(window.v().last().unwrap()).map(|(a, b)| a - b).collect::<Vec<_>>());
    let tail_gap = norm(&u[n..].iter().zip(map.w0()).map(|(a, b)| a - b).collect::<Vec<_>>());
    if head_gap > 1e-12 || tail_gap > map.truncation_bound + 1e-10 {
        return Err(Error::Inconsistent(format!(
            "u differs from v_0 + W0 by {head_gap:e} (low) and {tail_gap:e} (high)"
        )));
    }
    let basis = sys.basis();
    let full = par::try_map_indexed(n_traj, |i| {
        let mut rng = child_rng(seed, "reduction-full", i as u64);
        let mut x = u.to_vec();
        let mut path = Vec::with_capacity(k);
        for step in 1..=k {
            let kick = draw_kick(law, basis, step, opts, &mut rng);
            x = sys.flow(&x)?;
            for (a, b) in x.iter_mut().zip(&kick) {
                *a += b;
            }
            path.push(x[..n].to_vec());
        }
        Ok(f(&path))
    })?;
    let reduced = par::try_map_indexed(n_traj, |i| {
        let mut rng = child_rng(seed, "reduction-reduced", i as u64);
        let mut w = window.clone();
        w.radius = f64::INFINITY;
        w.kick_bound = f64::INFINITY;
        let mut w0 = map.w0().to_vec();
        let mut path = Vec::with_capacity(k);
        for step in 1..=k {
            let kick = draw_kick(law, basis, step, opts, &mut rng);
            let s = sys.flow(&join(w.v().last().unwrap(), &w0))?;
            let v_next: Vec<f64> = s[..n].iter().zip(&kick[..n]).map(|(a, b)| a + b).collect();
            path.push(v_next.clone());
            w = w.shifted(v_next, kick[n..].to_vec());
            w0 = sweep(sys, &w)?.pop().unwrap();
        }
        Ok(f(&path))
    })?;
    let (lhs, se_lhs) = mean_se(&full);
    let (rhs, se_rhs) = mean_se(&reduced);
    let se = (se_lhs * se_lhs + se_rhs * se_rhs).sqrt();
    let z = if se > 0.0 {
        (lhs - rhs).abs() / se
    } else if lhs == rhs {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ReductionCheck { lhs, rhs, se_lhs, se_rhs, z })
}
