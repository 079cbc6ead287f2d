//! Ulam discretization of the twisted kernel `P^V(u, dv) = P(u, dv) e^{V(v)}`
//! on a cell partition, and its Perron triple `(lambda, h, mu)`.
//!
//! Entries are `K[i][j] = e^{V(c_j)} P(c_i, cell_j)` where `P(c_i, cell_j)` is
//! the probability that `S(c_i) + eta` lands in cell `j` along the resolved
//! coordinates. The matrix is stored untwisted together with the weights
//! `e^{V(c_j)}`, so `K = P diag(w)`.

use std::io::Write;
use std::num::NonZeroUsize;
use std::path::Path;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::KickedSystem;
use crate::error::{Error, Result};
use crate::noise::KickLaw;
use crate::par;

/// Tensor grid of cells over one or two resolved coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    axes: Vec<usize>,
    edges: Vec<Vec<f64>>,
}

impl CellPartition {
    pub fn from_edges(axes: Vec<usize>, edges: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 || axes.len() != edges.len() {
            return Err(Error::InvalidArgument(format!(
                "partition needs 1 or 2 axes with matching edges, got {} axes and {} edge lists",
                axes.len(),
                edges.len()
            )));
        }
        if axes.len() == 2 && axes[0] == axes[1] {
            return Err(Error::InvalidArgument("partition axes must differ".into()));
        }
        for e in &edges {
            if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) || e.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("cell edges must be finite and increasing".into()));
            }
        }
        Ok(Self { axes, edges })
    }

    /// `cells` equal cells per axis on `[-half_width, half_width]`.
    pub fn uniform(axes: Vec<usize>, half_width: f64, cells: usize) -> Result<Self> {
        if !(half_width > 0.0) || cells == 0 {
            return Err(Error::InvalidArgument(format!(
                "uniform partition needs positive width and cell count, got {half_width}, {cells}"
            )));
        }
        let edges = (0..=cells).map(|k| -half_width + 2.0 * half_width * k as f64 / cells as f64).collect::<Vec<_>>();
        let n = axes.len();
        Self::from_edges(axes, vec![edges; n])
    }

    pub fn d_eff(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    pub fn shape(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.shape().iter().product()
    }

    /// Row-major multi-index of cell `i`.
    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut rest = i;
        let mut idx = vec![0; shape.len()];
        for a in (0..shape.len()).rev() {
            idx[a] = rest % shape[a];
            rest /= shape[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let shape = self.shape();
        idx.iter().zip(&shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        self.multi_index(i).iter().zip(&self.edges).map(|(&k, e)| 0.5 * (e[k] + e[k + 1])).collect()
    }

    pub fn bounds(&self, i: usize) -> Vec<(f64, f64)> {
        self.multi_index(i).iter().zip(&self.edges).map(|(&k, e)| (e[k], e[k + 1])).collect()
    }

    /// Cell containing the resolved coordinates `x`, if any.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.axes.len());
        for (xa, e) in x.iter().zip(&self.edges) {
            if *xa < e[0] || *xa > *e.last().unwrap() {
                return None;
            }
            let k = e.partition_point(|edge| edge <= xa).saturating_sub(1).min(e.len() - 2);
            idx.push(k);
        }
        Some(self.flat_index(&idx))
    }

    /// Cell containing the state `u`, reading the resolved coordinates.
    pub fn locate_state(&self, u: &[f64]) -> Option<usize> {
        let x: Vec<f64> = self.axes.iter().map(|&a| u[a]).collect();
        self.locate(&x)
    }

    /// Evaluates `f` at every cell center.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_cells()).map(|i| f(&self.center(i))).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Quadrature {
    /// Differences of the kick CDF, exact for every supported density.
    #[default]
    ExactCdf,
    /// Gauss–Legendre of the given order on each smooth piece of the density.
    GaussLegendre { order: usize },
}

/// How unresolved coordinates are fixed when `S` is evaluated at a cell center.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Pinning {
    #[default]
    Zero,
    /// Slaved tail for the frozen history `v_j = center`, `psi_j = 0`.
    Slaved { window: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelOptions {
    #[serde(default)]
    pub quadrature: Quadrature,
    #[serde(default)]
    pub pinning: Pinning,
}

/// Nonnegative square matrix `K = P diag(e^V)`.
#[derive(Clone, Debug)]
pub struct TwistedKernel {
    n: usize,
    p: Vec<f64>,
    pt: Vec<f64>,
    weights: Vec<f64>,
    v: Vec<f64>,
    row_mass: Vec<f64>,
    partition: Option<CellPartition>,
}

impl TwistedKernel {
    /// Wraps a row-major matrix; rows must not vanish.
    pub fn from_matrix(n: usize, p: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if p.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: p.len() });
        }
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument("kernel entries must be finite and >= 0".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("potential".into()));
        }
        let row_mass: Vec<f64> = p.chunks(n).map(|r| r.iter().sum()).collect();
        if let Some(i) = row_mass.iter().position(|m| *m <= 0.0) {
            return Err(Error::EmptyRow(i));
        }
        let mut pt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                pt[j * n + i] = p[i * n + j];
            }
        }
        let weights = v.iter().map(|x| x.exp()).collect();
        Ok(Self { n, p, pt, weights, v, row_mass, partition: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], v: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("kernel must be square".into()));
        }
        Self::from_matrix(n, rows.concat(), v)
    }

    /// Same transition matrix, different potential.
    pub fn with_potential(&self, v: Vec<f64>) -> Result<Self> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("potential".into()));
        }
        let weights = v.iter().map(|x| x.exp()).collect();
        Ok(Self { weights, v, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn potential(&self) -> &[f64] {
        &self.v
    }

    pub fn partition(&self) -> Option<&CellPartition> {
        self.partition.as_ref()
    }

    /// Untwisted transition probability from cell `i` to cell `j`.
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j] * self.weights[j]
    }

    /// Largest mass lost through the partition boundary by a single row.
    pub fn leak(&self) -> f64 {
        self.row_mass.iter().map(|m| (1.0 - m).max(0.0)).fold(0.0, f64::max)
    }

    pub fn row_mass(&self) -> &[f64] {
        &self.row_mass
    }

    /// `K f`
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let wf: Vec<f64> = f.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        let mut out = vec![0.0; n];
        par::fill_rows(&mut out, |i| dot(&self.p[i * n..(i + 1) * n], &wf));
        out
    }

    /// `K^T mu`
    pub fn apply_transpose(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        par::fill_rows(&mut out, |j| self.weights[j] * dot(&self.pt[j * n..(j + 1) * n], mu));
        out
    }

    /// Untwisted `P f`.
    pub fn apply_untwisted(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        par::fill_rows(&mut out, |i| dot(&self.p[i * n..(i + 1) * n], f));
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j))
    }

    pub fn untwisted_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.transition(i, j))
    }

    /// SHA-256 of the potential as little-endian bytes.
    pub fn potential_hash(&self) -> String {
        hash_f64s(&self.v)
    }
}

pub fn hash_f64s(x: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Resolved coordinates of `S(c)` with unresolved ones pinned per `pinning`.
pub fn pinned_image<S: KickedSystem + ?Sized>(
    sys: &S,
    partition: &CellPartition,
    center: &[f64],
    pinning: Pinning,
) -> Result<Vec<f64>> {
    let mut u = vec![0.0; sys.dim()];
    for (a, x) in partition.axes().iter().zip(center) {
        u[*a] = *x;
    }
    if let Pinning::Slaved { window } = pinning {
        let d = partition.d_eff();
        if partition.axes().iter().enumerate().any(|(k, a)| *a != k) {
            return Err(Error::InvalidArgument(
                "slaved pinning needs the partition to resolve the leading coordinates".into(),
            ));
        }
        let tail = crate::slaved::frozen_tail(sys, d, center, window)?;
        u[d..].copy_from_slice(&tail);
    }
    let s = sys.flow(&u)?;
    Ok(partition.axes().iter().map(|&a| s[a]).collect())
}

fn axis_masses(
    law: &KickLaw,
    axis: usize,
    shift: f64,
    edges: &[f64],
    quadrature: Quadrature,
    rule: Option<&GaussLegendre>,
) -> Vec<f64> {
    match quadrature {
        Quadrature::ExactCdf => edges.windows(2).map(|w| law.axis_mass(axis, shift, w[0], w[1])).collect(),
        Quadrature::GaussLegendre { .. } => {
            let b = law.scales()[axis];
            let density = &law.densities()[axis];
            let rule = rule.expect("rule built for quadrature");
            let mut cuts: Vec<f64> = vec![-1.0, 1.0];
            cuts.extend(density.breakpoints());
            let mut cuts: Vec<f64> = cuts.into_iter().map(|t| shift + b * t).collect();
            cuts.sort_by(f64::total_cmp);
            edges
                .windows(2)
                .map(|w| {
                    let mut total = 0.0;
                    for piece in cuts.windows(2) {
                        let lo = piece[0].max(w[0]);
                        let hi = piece[1].min(w[1]);
                        if hi > lo {
                            total += rule.integrate(lo, hi, |x| density.pdf((x - shift) / b) / b);
                        }
                    }
                    total
                })
                .collect()
        }
    }
}

/// Assembles the twisted kernel for `S + eta` on `partition`.
pub fn build_kernel<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    v: &[f64],
    partition: &CellPartition,
    opts: KernelOptions,
) -> Result<TwistedKernel> {
    if law.dim() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), got: law.dim() });
    }
    if let Some(&a) = partition.axes().iter().find(|&&a| a >= sys.dim()) {
        return Err(Error::InvalidArgument(format!("resolved axis {a} beyond dimension {}", sys.dim())));
    }
    if let Some(&a) = partition.axes().iter().find(|&&a| law.scales()[a] == 0.0) {
        return Err(Error::DensityUndefined(a));
    }
    let n = partition.n_cells();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    let rule = match opts.quadrature {
        Quadrature::GaussLegendre { order } => Some(GaussLegendre::new(
            NonZeroUsize::new(order).ok_or_else(|| Error::InvalidArgument("quadrature order 0".into()))?,
        )),
        Quadrature::ExactCdf => None,
    };
    let rows = par::try_map_indexed(n, |i| {
        let shift = pinned_image(sys, partition, &partition.center(i), opts.pinning)?;
        let masses: Vec<Vec<f64>> = partition
            .axes()
            .iter()
            .zip(partition.edges())
            .zip(&shift)
            .map(|((&a, e), &s)| axis_masses(law, a, s, e, opts.quadrature, rule.as_ref()))
            .collect();
        let row: Vec<f64> = match masses.len() {
            1 => masses[0].clone(),
            _ => masses[0].iter().flat_map(|m0| masses[1].iter().map(move |m1| m0 * m1)).collect(),
        };
        if row.iter().all(|x| *x <= 0.0) {
            return Err(Error::EmptyRow(i));
        }
        Ok(row)
    })?;
    let mut kernel = TwistedKernel::from_matrix(n, rows.concat(), v.to_vec())?;
    kernel.partition = Some(partition.clone());
    Ok(kernel)
}

/// Uniform partition of `[-(r + margin), r + margin]^d` whose margin is
/// doubled until the worst row leaks less than `max_leak`.
pub fn partition_with_margin<S: KickedSystem + ?Sized>(
    sys: &S,
    law: &KickLaw,
    axes: Vec<usize>,
    radius: f64,
    cells: usize,
    max_leak: f64,
) -> Result<(CellPartition, f64)> {
    let mut margin = 0.0;
    for _ in 0..20 {
        let partition = CellPartition::uniform(axes.clone(), radius + margin, cells)?;
        let zero = vec![0.0; partition.n_cells()];
        let kernel = build_kernel(sys, law, &zero, &partition, KernelOptions::default())?;
        if kernel.leak() < max_leak {
            return Ok((partition, kernel.leak()));
        }
        margin = if margin == 0.0 { 0.05 * radius.max(1e-3) } else { 2.0 * margin };
    }
    Err(Error::InvalidArgument(format!("could not bring leakage below {max_leak}")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerOptions {
    /// Bound on both eigen residuals, relative to `max(1, lambda)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200_000 }
    }
}

/// Perron eigenvalue, right eigenvector and left probability eigenvector,
/// normalized by `<h, mu> = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTriple {
    pub lambda: f64,
    pub h: Vec<f64>,
    pub mu: Vec<f64>,
    /// `|K h - lambda h|_inf / |h|_inf`
    pub residual_h: f64,
    /// `|K^T mu - lambda mu|_1`
    pub residual_mu: f64,
    pub iterations: usize,
    /// Set when the mass ratios kept alternating and were averaged.
    pub oscillating: bool,
}

impl SpectralTriple {
    /// `nu = h * mu`, a probability vector.
    pub fn nu(&self) -> Vec<f64> {
        let nu: Vec<f64> = self.h.iter().zip(&self.mu).map(|(a, b)| a * b).collect();
        let s: f64 = nu.iter().sum();
        nu.into_iter().map(|x| x / s).collect()
    }
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Normalized adjoint iteration `mu <- K^T mu / |K^T mu|_1`.
fn left_vector(kernel: &TwistedKernel, max_iter: usize) -> Result<(f64, Vec<f64>, usize, bool)> {
    let n = kernel.n();
    let mut mu = vec![1.0 / n as f64; n];
    let mut prev = mu.clone();
    let mut lambda = 0.0;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=max_iter {
        let y = kernel.apply_transpose(&mu);
        let mass: f64 = y.iter().sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NonFinite(format!("adjoint mass {mass} at iteration {it}")));
        }
        let next: Vec<f64> = y.iter().map(|x| x / mass).collect();
        let step = l1_diff(&next, &mu);
        let two_step = l1_diff(&next, &prev);
        lambda = mass;
        prev = std::mem::replace(&mut mu, next);
        if step <= 1e-15 {
            return Ok((lambda, mu, it, false));
        }
        // alternating between two states: average them with the matching weights
        if it > 50 && two_step <= 1e-14 && step > 1e-6 {
            let y2 = kernel.apply_transpose(&mu);
            let mass2: f64 = y2.iter().sum();
            let c = (mass / mass2).sqrt();
            let avg: Vec<f64> = prev.iter().zip(&mu).map(|(a, b)| a + c * b).collect();
            let s: f64 = avg.iter().sum();
            return Ok(((mass * mass2).sqrt(), avg.into_iter().map(|x| x / s).collect(), it, true));
        }
        // rounding floor: no halving of the step for a while
        if step < 0.5 * best {
            best = step;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 100 && step < 1e-12 {
                return Ok((lambda, mu, it, false));
            }
        }
    }
    Ok((lambda, mu, max_iter, false))
}

/// Cesàro means of `lambda^{-l} K^l 1` over the windows `[2^b, 2^{b+1})`.
fn right_vector(kernel: &TwistedKernel, lambda: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = kernel.n();
    let mut g = vec![1.0; n];
    let mut l = 0usize;
    let mut previous: Option<Vec<f64>> = None;
    let mut last_change = f64::INFINITY;
    let mut block = 1usize;
    loop {
        while l < block {
            g = kernel.apply(&g).into_iter().map(|x| x / lambda).collect();
            l += 1;
        }
        let mut sum = vec![0.0; n];
        for _ in 0..block {
            for (s, x) in sum.iter_mut().zip(&g) {
                *s += x;
            }
            g = kernel.apply(&g).into_iter().map(|x| x / lambda).collect();
            l += 1;
        }
        let mean: Vec<f64> = sum.into_iter().map(|s| s / block as f64).collect();
        if let Some(prev) = &previous {
            let scale = sup(&mean).max(f64::MIN_POSITIVE);
            let change = mean.iter().zip(prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            // stop at the rounding floor, where doubling no longer helps
            if change <= 1e-14 || (change < 1e-10 && change > 0.5 * last_change) || l >= max_iter {
                return (mean, l);
            }
            last_change = change;
        }
        previous = Some(mean);
        block *= 2;
    }
}

/// Eigen-triple of a twisted kernel: `mu` by adjoint power iteration,
/// `h` by Cesàro averaging, then `<h, mu> = 1`.
pub fn power_iterate(kernel: &TwistedKernel, opts: PowerOptions) -> Result<SpectralTriple> {
    let (lambda, mu, it_mu, oscillating) = left_vector(kernel, opts.max_iter)?;
    let (mut h, it_h) = right_vector(kernel, lambda, opts.max_iter);
    if let Some(i) = h.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::NonPositive(i));
    }
    let pairing = dot(&h, &mu);
    h.iter_mut().for_each(|x| *x /= pairing);
    let kh = kernel.apply(&h);
    let residual_h = kh.iter().zip(&h).map(|(a, b)| (a - lambda * b).abs()).fold(0.0, f64::max) / sup(&h);
    let ktmu = kernel.apply_transpose(&mu);
    let residual_mu = ktmu.iter().zip(&mu).map(|(a, b)| (a - lambda * b).abs()).sum();
    let triple = SpectralTriple { lambda, h, mu, residual_h, residual_mu, iterations: it_mu + it_h, oscillating };
    // both relations are homogeneous in lambda, so rounding scales with it
    let bound = opts.tol * lambda.max(1.0);
    if !(residual_h <= bound && residual_mu <= bound) {
        return Err(Error::NoConvergence { iterations: triple.iterations, residual: residual_h.max(residual_mu) });
    }
    Ok(triple)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Irreducibility {
    pub m: usize,
    pub p: f64,
}

/// Smallest `m <= m_max` with `P_m(i, N_r(j)) >= p > 0` for all cells `i, j`,
/// where `N_r(j)` is the block of cells within `r_cells` index steps of `j`
/// on every axis. Uses the untwisted transition probabilities.
pub fn check_irreducibility(kernel: &TwistedKernel, r_cells: usize, m_max: usize) -> Result<Irreducibility> {
    let n = kernel.n();
    let shape = kernel.partition().map_or(vec![n], CellPartition::shape);
    let p = kernel.untwisted_dense();
    let mut pm = p.clone();
    for m in 1..=m_max {
        if m > 1 {
            pm = &pm * &p;
        }
        let worst = (0..n)
            .map(|i| {
                let row: Vec<f64> = (0..n).map(|j| pm[(i, j)]).collect();
                min_block_sum(&row, &shape, r_cells)
            })
            .fold(f64::INFINITY, f64::min);
        if worst > 0.0 {
            return Ok(Irreducibility { m, p: worst });
        }
    }
    Err(Error::NotIrreducible(m_max))
}

// Minimum over centers of the sum over the (2r+1)^d block, via prefix sums.
fn min_block_sum(row: &[f64], shape: &[usize], r: usize) -> f64 {
    match shape.len() {
        1 => {
            let n = shape[0];
            let mut pre = vec![0.0; n + 1];
            for k in 0..n {
                pre[k + 1] = pre[k] + row[k];
            }
            (0..n).map(|c| pre[(c + r + 1).min(n)] - pre[c.saturating_sub(r)]).fold(f64::INFINITY, f64::min)
        }
        _ => {
            let (n0, n1) = (shape[0], shape[1]);
            let mut sat = vec![0.0; (n0 + 1) * (n1 + 1)];
            for a in 0..n0 {
                for b in 0..n1 {
                    sat[(a + 1) * (n1 + 1) + b + 1] =
                        row[a * n1 + b] + sat[a * (n1 + 1) + b + 1] + sat[(a + 1) * (n1 + 1) + b]
                            - sat[a * (n1 + 1) + b];
                }
            }
            let mut worst = f64::INFINITY;
            for a in 0..n0 {
                for b in 0..n1 {
                    let (a0, a1) = (a.saturating_sub(r), (a + r + 1).min(n0));
                    let (b0, b1) = (b.saturating_sub(r), (b + r + 1).min(n1));
                    let s = sat[a1 * (n1 + 1) + b1] - sat[a0 * (n1 + 1) + b1] - sat[a1 * (n1 + 1) + b0]
                        + sat[a0 * (n1 + 1) + b0];
                    worst = worst.min(s);
                }
            }
            worst
        }
    }
}

/// `S^V g = lambda^{-1} h^{-1} K(g h)`.
pub fn normalized_step(kernel: &TwistedKernel, triple: &SpectralTriple, g: &[f64]) -> Vec<f64> {
    let gh: Vec<f64> = g.iter().zip(&triple.h).map(|(a, b)| a * b).collect();
    kernel.apply(&gh).into_iter().zip(&triple.h).map(|(x, h)| x / (triple.lambda * h)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProfile {
    /// `e_k = |lambda^{-k} K^k f - <f, mu> h|_inf`, `k = 1..=k_max`
    pub errors: Vec<f64>,
    /// Geometric rate fitted on the tail above the rounding floor.
    pub ratio: Option<f64>,
}

pub fn convergence_profile(
    kernel: &TwistedKernel,
    triple: &SpectralTriple,
    f: &[f64],
    k_max: usize,
) -> ConvergenceProfile {
    let coef = dot(f, &triple.mu);
    let mut g = f.to_vec();
    let mut errors = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        g = kernel.apply(&g).into_iter().map(|x| x / triple.lambda).collect();
        errors.push(g.iter().zip(&triple.h).map(|(a, b)| (a - coef * b).abs()).fold(0.0, f64::max));
    }
    let ratio = geometric_ratio(&errors, 1e-11 * sup(&triple.h).max(sup(f)));
    ConvergenceProfile { errors, ratio }
}

/// Fits `log e_k` against `k` over the second half of the run of values
/// above `floor`.
pub fn geometric_ratio(errors: &[f64], floor: f64) -> Option<f64> {
    let end = errors.iter().position(|e| !(*e > floor)).unwrap_or(errors.len());
    let start = end / 2;
    if end - start < 3 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (start..end).map(|k| (k as f64, errors[k].ln())).collect();
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some((sxy / sxx).exp())
}

/// Smallest `C` with `C^{-1} <= |lambda^{-k} K^k f|_inf <= C` for `k = 0..=k_max`.
pub fn sandwich_constant(kernel: &TwistedKernel, lambda: f64, f: &[f64], k_max: usize) -> f64 {
    let mut g = f.to_vec();
    let mut c = sup(&g).max(1.0 / sup(&g));
    for _ in 0..k_max {
        g = kernel.apply(&g).into_iter().map(|x| x / lambda).collect();
        let s = sup(&g);
        c = c.max(s).max(1.0 / s);
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
    pub axes: Option<Vec<usize>>,
    pub edges: Option<Vec<Vec<f64>>>,
    pub potential_sha256: String,
    pub leak: f64,
}

/// Writes `K` as little-endian f64 row-major to `path` and a JSON sidecar
/// next to it (`path` with extension `json`).
pub fn write_kernel(kernel: &TwistedKernel, path: &Path) -> Result<()> {
    let n = kernel.n();
    let mut bytes = Vec::with_capacity(n * n * 8);
    for i in 0..n {
        for j in 0..n {
            bytes.extend_from_slice(&kernel.entry(i, j).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    let sidecar = KernelSidecar {
        rows: n,
        cols: n,
        dtype: "f64-le".into(),
        layout: "row-major".into(),
        axes: kernel.partition().map(|p| p.axes().to_vec()),
        edges: kernel.partition().map(|p| p.edges().to_vec()),
        potential_sha256: kernel.potential_hash(),
        leak: kernel.leak(),
    };
    let mut f = std::fs::File::create(path.with_extension("json"))?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_kernel_entries(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Serialize)]
struct TripleSummary {
    lambda: f64,
    log_lambda: f64,
    residual_h: f64,
    residual_mu: f64,
    iterations: usize,
    oscillating: bool,
}

pub fn write_triple_json<W: Write>(out: &mut W, triple: &SpectralTriple) -> Result<()> {
    let s = TripleSummary {
        lambda: triple.lambda,
        log_lambda: triple.lambda.ln(),
        residual_h: triple.residual_h,
        residual_mu: triple.residual_mu,
        iterations: triple.iterations,
        oscillating: triple.oscillating,
    };
    serde_json::to_writer_pretty(&mut *out, &s)?;
    writeln!(out)?;
    Ok(())
}

/// `cell,center_0[,center_1],h,mu,nu` rows.
pub fn write_triple_csv<W: Write>(
    out: &mut W,
    triple: &SpectralTriple,
    partition: Option<&CellPartition>,
) -> Result<()> {
    let d = partition.map_or(0, CellPartition::d_eff);
    let mut header = vec!["cell".to_string()];
    header.extend((0..d).map(|a| format!("center_{a}")));
    header.extend(["h", "mu", "nu"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    let nu = triple.nu();
    for i in 0..triple.h.len() {
        write!(out, "{i}")?;
        if let Some(p) = partition {
            for c in p.center(i) {
                write!(out, ",{c:e}")?;
            }
        }
        writeln!(out, ",{:e},{:e},{:e}", triple.h[i], triple.mu[i], nu[i])?;
    }
    Ok(())
}
