//! Experiment configuration: one TOML file per run.

use std::fmt;
use std::path::{Path, PathBuf};

use kicklab_core::dynamics::KickedSystem;
use kicklab_core::ldp::Potential;
use kicklab_core::models::ns::steps_per_unit;
use kicklab_core::models::SystemSpec;
use kicklab_core::noise::{Density, KickLaw};
use kicklab_core::slaved::squeezing_gamma;
use kicklab_core::twisted::{KernelOptions, PowerOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub system: SystemSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    /// `V` for the eigen-triple and DG recipes, the observable `f` elsewhere.
    #[serde(default = "default_potential")]
    pub potential: Potential,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub recipe: Recipe,
}

fn default_potential() -> Potential {
    Potential::linear(0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub b: Vec<f64>,
    #[serde(default = "default_density")]
    pub density: Density,
}

fn default_density() -> Density {
    Density::Uniform
}

impl NoiseSpec {
    pub fn law(&self) -> kicklab_core::Result<KickLaw> {
        KickLaw::with_density(self.b.clone(), self.density.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(default = "default_axes")]
    pub axes: Vec<usize>,
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// Taken from the attainable radius when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub kernel: KernelOptions,
}

fn default_axes() -> Vec<usize> {
    vec![0]
}

fn default_cells() -> usize {
    400
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { axes: default_axes(), cells: default_cells(), half_width: None, kernel: KernelOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_power_tol")]
    pub power_tol: f64,
    #[serde(default = "default_power_max_iter")]
    pub power_max_iter: usize,
    /// Largest row leak accepted when the partition is sized automatically.
    #[serde(default = "default_max_leak")]
    pub max_leak: f64,
    #[serde(default = "default_certificate")]
    pub certificate: f64,
    #[serde(default = "default_marginal")]
    pub marginal: f64,
}

fn default_power_tol() -> f64 {
    PowerOptions::default().tol
}

fn default_power_max_iter() -> usize {
    PowerOptions::default().max_iter
}

fn default_max_leak() -> f64 {
    1e-6
}

fn default_certificate() -> f64 {
    5e-3
}

fn default_marginal() -> f64 {
    1e-9
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            power_tol: default_power_tol(),
            power_max_iter: default_power_max_iter(),
            max_leak: default_max_leak(),
            certificate: default_certificate(),
            marginal: default_marginal(),
        }
    }
}

impl Tolerances {
    pub fn power(&self) -> PowerOptions {
        PowerOptions { tol: self.power_tol, max_iter: self.power_max_iter }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Recipe {
    ScgfSweep(SweepParams),
    RateCurve(RateParams),
    Mixing(MixingParams),
    RareEvent(RareEventParams),
    LsVerify(LsParams),
    EigenTriple,
    DgLevels,
}

pub const RECIPES: [(&str, &str); 7] = [
    ("scgf-sweep", "Q(theta f) on a theta grid, spectral and optionally Monte Carlo"),
    ("rate-curve", "Legendre rate curve of the observable from a spectral sweep"),
    ("mixing", "distance to the stationary law against time, with an exponential fit"),
    ("rare-event", "empirical tail probabilities of time averages and their decay slope"),
    ("ls-verify", "slaved-mode map, its history sensitivity and the reduction identity"),
    ("eigen-triple", "Perron triple of the twisted kernel and a kernel dump"),
    ("dg-levels", "rates of one- and two-step marginals and their aggregate"),
];

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::ScgfSweep(_) => "scgf-sweep",
            Recipe::RateCurve(_) => "rate-curve",
            Recipe::Mixing(_) => "mixing",
            Recipe::RareEvent(_) => "rare-event",
            Recipe::LsVerify(_) => "ls-verify",
            Recipe::EigenTriple => "eigen-triple",
            Recipe::DgLevels => "dg-levels",
        }
    }

    fn spectral(&self) -> bool {
        matches!(self, Recipe::ScgfSweep(_) | Recipe::RateCurve(_) | Recipe::EigenTriple | Recipe::DgLevels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGrid {
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_half_width() -> f64 {
    4.0
}

fn default_points() -> usize {
    81
}

impl Default for ThetaGrid {
    fn default() -> Self {
        Self { half_width: default_half_width(), points: default_points() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloParams {
    pub k: usize,
    pub n_traj: usize,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    #[serde(default)]
    pub theta: ThetaGrid,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    #[serde(default)]
    pub theta: ThetaGrid,
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default = "default_x_points")]
    pub x_points: usize,
}

fn default_x_points() -> usize {
    41
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingParams {
    pub start: Vec<f64>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_mixing_traj")]
    pub n_traj: usize,
    #[serde(default = "default_reference_len")]
    pub reference_len: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_k_max() -> usize {
    30
}

fn default_mixing_traj() -> usize {
    10_000
}

fn default_reference_len() -> usize {
    200_000
}

fn default_bins() -> usize {
    400
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RareEventParams {
    pub k_list: Vec<usize>,
    pub n_traj: usize,
    /// Event `{lo <= <f, zeta_k> <= hi}`; a missing end is unbounded.
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsParams {
    /// Number of resolved coordinates.
    pub n: usize,
    /// Bound on the resolved history; also the ball on which `gamma_N` is taken.
    pub radius: f64,
    /// History depth; chosen from `gamma^J <= 1e-8` when absent.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default = "default_ls_k")]
    pub k: Vec<usize>,
    #[serde(default = "default_ls_traj")]
    pub n_traj: usize,
}

fn default_ls_k() -> Vec<usize> {
    vec![1, 5]
}

fn default_ls_traj() -> usize {
    10_000
}

/// One failed invariant, located by its field path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_owned(), source: e })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize")
    }

    /// Every violated module invariant; runs no experiment.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: &str, message: String| out.push(Violation { path: path.into(), message });

        if self.experiment.trim().is_empty() {
            push("experiment", "experiment id is empty".into());
        }
        let dt = match &self.system {
            SystemSpec::Ns(s) => Some(s.dt),
            SystemSpec::Cgl(s) => Some(s.dt),
            SystemSpec::Toy(_) => None,
        };
        let dt_ok = match dt {
            Some(dt) => match steps_per_unit(dt) {
                Ok(_) => true,
                Err(e) => {
                    push("system.dt", e.to_string());
                    false
                }
            },
            None => true,
        };
        let sys = if dt_ok {
            match self.system.validate().and_then(|_| self.system.build()) {
                Ok(s) => Some(s),
                Err(e) => {
                    push("system", e.to_string());
                    None
                }
            }
        } else {
            None
        };

        for (j, b) in self.noise.b.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                push(&format!("noise.b[{j}]"), format!("{b} must be finite and >= 0"));
            }
        }
        if let Err(e) = self.noise.law() {
            push("noise", e.to_string());
        }
        if let Some(sys) = &sys {
            if self.noise.b.len() != sys.dim() {
                push("noise.b", format!("{} scales for a system of dimension {}", self.noise.b.len(), sys.dim()));
            }
        }

        let p = &self.partition;
        if p.axes.is_empty() || p.axes.len() > 2 {
            push("partition.axes", format!("{} resolved axes; 1 or 2 are supported", p.axes.len()));
        }
        let mut seen = p.axes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != p.axes.len() {
            push("partition.axes", "repeated axis".into());
        }
        if p.cells < 2 {
            push("partition.cells", format!("{} cells per axis; need at least 2", p.cells));
        }
        if let Some(h) = p.half_width {
            if !(h > 0.0 && h.is_finite()) {
                push("partition.half_width", format!("{h} must be positive"));
            }
        }
        if let Some(sys) = &sys {
            for (i, &a) in p.axes.iter().enumerate() {
                if a >= sys.dim() {
                    push(&format!("partition.axes[{i}]"), format!("axis {a} beyond dimension {}", sys.dim()));
                } else if self.noise.b.get(a) == Some(&0.0) && self.recipe.spectral() {
                    push(&format!("noise.b[{a}]"), format!("kick density undefined: b[{a}] = 0 on resolved axis {a}"));
                }
            }
        }

        if let Err(e) = self.potential.validate() {
            push("potential", e.to_string());
        }
        if self.recipe.spectral() {
            if let Some(a) = self.potential.axes().into_iter().find(|a| !p.axes.contains(a)) {
                push("potential", format!("reads coordinate {a}, which the partition does not resolve"));
            }
        }

        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.power_tol", t.power_tol),
            ("tolerances.max_leak", t.max_leak),
            ("tolerances.certificate", t.certificate),
            ("tolerances.marginal", t.marginal),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                push(name, format!("{v} must be positive"));
            }
        }

        let dim = sys.as_ref().map(|s| s.dim());
        match &self.recipe {
            Recipe::ScgfSweep(s) => {
                check_grid(&mut push, "recipe.theta", &s.theta);
                if let Some(mc) = &s.monte_carlo {
                    if mc.k == 0 {
                        push("recipe.monte_carlo.k", "k must be positive".into());
                    }
                    if mc.n_traj < kicklab_core::ldp::MC_BATCHES {
                        push(
                            "recipe.monte_carlo.n_traj",
                            format!("need at least {} trajectories", kicklab_core::ldp::MC_BATCHES),
                        );
                    }
                    check_start(&mut push, "recipe.monte_carlo.u0", mc.u0.as_deref(), dim);
                }
            }
            Recipe::RateCurve(r) => {
                check_grid(&mut push, "recipe.theta", &r.theta);
                if !(r.x_max > r.x_min) {
                    push("recipe.x_max", format!("x_max {} must exceed x_min {}", r.x_max, r.x_min));
                }
                if r.x_points < 2 {
                    push("recipe.x_points", "need at least 2 levels".into());
                }
            }
            Recipe::Mixing(m) => {
                check_start(&mut push, "recipe.start", Some(&m.start), dim);
                if m.k_max < 2 {
                    push("recipe.k_max", "need at least 2 steps".into());
                }
                if m.n_traj < 2 {
                    push("recipe.n_traj", "need at least 2 trajectories".into());
                }
                if m.bins < 2 {
                    push("recipe.bins", "need at least 2 bins".into());
                }
            }
            Recipe::RareEvent(r) => {
                if r.k_list.len() < 2 || r.k_list.windows(2).any(|w| w[1] <= w[0]) || r.k_list[0] == 0 {
                    push("recipe.k_list", "need at least two increasing positive lengths".into());
                }
                if r.n_traj == 0 {
                    push("recipe.n_traj", "need at least one trajectory".into());
                }
                if let (Some(lo), Some(hi)) = (r.lo, r.hi) {
                    if lo > hi {
                        push("recipe.hi", format!("event is empty: lo {lo} > hi {hi}"));
                    }
                }
                check_start(&mut push, "recipe.u0", r.u0.as_deref(), dim);
            }
            Recipe::LsVerify(ls) => {
                if let Some(sys) = &sys {
                    if ls.n == 0 || ls.n >= sys.dim() {
                        push("recipe.n", format!("need 0 < N < {}", sys.dim()));
                    } else if !(ls.radius > 0.0 && ls.radius.is_finite()) {
                        push("recipe.radius", format!("{} must be positive", ls.radius));
                    } else {
                        let kick = if self.noise.b.len() == sys.dim() {
                            kicklab_core::state::norm(&self.noise.b[ls.n..])
                        } else {
                            0.0
                        };
                        match squeezing_gamma(sys, ls.n, ls.radius + kick) {
                            Ok(g) if g > 0.5 => push(
                                "recipe.n",
                                format!("squeezing factor {g:.4} exceeds 1/2 for N = {}: needs larger N", ls.n),
                            ),
                            Ok(_) => {}
                            Err(e) => push("recipe.n", e.to_string()),
                        }
                    }
                }
                if let Some(a) = self.potential.axes().into_iter().find(|a| *a >= ls.n) {
                    push("potential", format!("reads coordinate {a}, which is not among the {} resolved ones", ls.n));
                }
                if ls.k.is_empty() || ls.k.contains(&0) {
                    push("recipe.k", "need positive horizons".into());
                }
                if ls.n_traj < 2 {
                    push("recipe.n_traj", "need at least 2 trajectories".into());
                }
                if ls.depth == Some(0) {
                    push("recipe.depth", "depth must be positive".into());
                }
            }
            Recipe::EigenTriple | Recipe::DgLevels => {}
        }
        out
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.experiment))
    }
}

fn check_grid(push: &mut impl FnMut(&str, String), path: &str, g: &ThetaGrid) {
    if !(g.half_width > 0.0 && g.half_width.is_finite()) {
        push(&format!("{path}.half_width"), format!("{} must be positive", g.half_width));
    }
    if g.points < 3 {
        push(&format!("{path}.points"), "need at least 3 points".into());
    }
}

fn check_start(push: &mut impl FnMut(&str, String), path: &str, u0: Option<&[f64]>, dim: Option<usize>) {
    if let (Some(u), Some(d)) = (u0, dim) {
        if u.len() != d {
            push(path, format!("{} coordinates for a system of dimension {d}", u.len()));
        }
        if u.iter().any(|x| !x.is_finite()) {
            push(path, "non-finite coordinate".into());
        }
    }
}
