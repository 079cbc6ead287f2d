//! The named experiments. Each writes plot-ready CSV tables and JSON
//! summaries into an [`OutputSet`] and returns a few headline numbers.

use std::io::Write;

use kicklab_core::attainability::{attainable_radii, RadiiOptions};
use kicklab_core::dynamics::KickedSystem;
use kicklab_core::ldp::{
    dv_rate, equilibrium_state, legendre_rate, monte_carlo_sweep, scgf_of_kernel, spectral_sweep, symmetric_grid,
    write_sweep_csv,
};
use kicklab_core::models::AnySystem;
use kicklab_core::noise::KickLaw;
use kicklab_core::occupation::{
    dg_aggregate, empirical_ld_rate, equilibrium_pair, mixing_decay, pair_relative_entropy, product_measure,
    DualMethod, Level, LevelSet, MixingOptions,
};
use kicklab_core::seed::derive_seed;
use kicklab_core::slaved::{
    driven_window, sensitivity_profile, solve_slaved, squeezing_gamma, verify_reduction, window_for, ReductionOptions,
    SlavedOptions, Target,
};
use kicklab_core::state::norm;
use kicklab_core::twisted::{
    build_kernel, partition_with_margin, power_iterate, write_kernel, write_triple_csv, write_triple_json,
    CellPartition, TwistedKernel,
};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, LsParams, MixingParams, RareEventParams, RateParams, Recipe, SweepParams};
use crate::error::CliError;
use crate::manifest::OutputSet;

type Outcome<T> = std::result::Result<T, kicklab_core::Error>;

/// Attainable radius after this many steps sizes the default partition.
const RADIUS_STEPS: usize = 40;

/// Samples per step when `sup |S|` has no closed form.
const RADIUS_SAMPLES: usize = 100;

/// Truncation target for the slaved-mode history.
const WINDOW_TARGET: f64 = 1e-8;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub sys: AnySystem,
    pub law: KickLaw,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Outcome<Self> {
        Ok(Self { cfg, sys: cfg.system.build()?, law: cfg.noise.law()? })
    }

    fn seed(&self, component: &str) -> u64 {
        derive_seed(self.cfg.seed, component, 0)
    }

    fn observable(&self) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |u: &[f64]| self.cfg.potential.eval(u)
    }

    fn partition(&self) -> Outcome<CellPartition> {
        let p = &self.cfg.partition;
        match p.half_width {
            Some(h) => CellPartition::uniform(p.axes.clone(), h, p.cells),
            None => {
                let opts =
                    RadiiOptions { seed: self.seed("radii"), samples: RADIUS_SAMPLES, ..RadiiOptions::default() };
                let radius = attainable_radii(&self.sys, &self.law, 0.0, RADIUS_STEPS, opts)?.last();
                let (part, _) = partition_with_margin(
                    &self.sys,
                    &self.law,
                    p.axes.clone(),
                    radius,
                    p.cells,
                    self.cfg.tolerances.max_leak,
                )?;
                Ok(part)
            }
        }
    }

    fn kernel(&self, part: &CellPartition, v: &[f64]) -> Outcome<TwistedKernel> {
        build_kernel(&self.sys, &self.law, v, part, self.cfg.partition.kernel)
    }

    fn start(&self, u0: Option<&[f64]>) -> Vec<f64> {
        u0.map_or_else(|| vec![0.0; self.sys.dim()], <[f64]>::to_vec)
    }
}

/// Turns a core error into a run failure tagged with the experiment.
fn numerical(cfg: &ExperimentConfig) -> impl Fn(kicklab_core::Error) -> CliError + '_ {
    move |source| CliError::Numerical { experiment: cfg.experiment.clone(), recipe: cfg.recipe.name(), source }
}

fn core<T>(cfg: &ExperimentConfig, r: Outcome<T>) -> Result<T, CliError> {
    r.map_err(numerical(cfg))
}

/// Adapts a core writer to the `OutputSet` closure signature.
fn emit<F>(cfg: &ExperimentConfig, f: F) -> impl FnOnce(&mut Vec<u8>) -> Result<(), CliError> + '_
where
    F: FnOnce(&mut Vec<u8>) -> Outcome<()> + 'static,
{
    move |buf| core(cfg, f(buf))
}

fn io_write(buf: &mut Vec<u8>, text: std::fmt::Arguments<'_>) -> Outcome<()> {
    buf.write_fmt(text)?;
    Ok(())
}

pub fn run_recipe(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Value, CliError> {
    let ctx = core(cfg, Context::new(cfg))?;
    match &cfg.recipe {
        Recipe::ScgfSweep(p) => scgf_sweep(&ctx, p, out),
        Recipe::RateCurve(p) => rate_curve(&ctx, p, out),
        Recipe::Mixing(p) => mixing(&ctx, p, out),
        Recipe::RareEvent(p) => rare_event(&ctx, p, out),
        Recipe::LsVerify(p) => ls_verify(&ctx, p, out),
        Recipe::EigenTriple => eigen_triple(&ctx, out),
        Recipe::DgLevels => dg_levels(&ctx, out),
    }
}

fn eigen_triple(ctx: &Context<'_>, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let part = core(cfg, ctx.partition())?;
    let v = core(cfg, cfg.potential.on_cells(&part))?;
    let kernel = core(cfg, ctx.kernel(&part, &v))?;
    let triple = core(cfg, power_iterate(&kernel, cfg.tolerances.power()))?;
    let t = triple.clone();
    out.write("triple.json", emit(cfg, move |b| write_triple_json(b, &t)))?;
    let t = triple.clone();
    out.write("triple.csv", emit(cfg, move |b| write_triple_csv(b, &t, Some(&part))))?;
    core(cfg, write_kernel(&kernel, &out.path("kernel.bin")))?;
    out.record("kernel.bin");
    out.record("kernel.json");
    Ok(json!({
        "lambda": triple.lambda,
        "residual_h": triple.residual_h,
        "residual_mu": triple.residual_mu,
        "leak": kernel.leak(),
        "cells": kernel.n(),
    }))
}

fn scgf_sweep(ctx: &Context<'_>, p: &SweepParams, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let part = core(cfg, ctx.partition())?;
    let f_cells = core(cfg, cfg.potential.on_cells(&part))?;
    let base = core(cfg, ctx.kernel(&part, &vec![0.0; part.n_cells()]))?;
    let thetas = symmetric_grid(p.theta.half_width, p.theta.points);
    let spectral = core(cfg, spectral_sweep(&base, &f_cells, &thetas, cfg.tolerances.power()))?;
    let (th, est) = (thetas.clone(), spectral.clone());
    out.write("scgf.csv", emit(cfg, move |b| write_sweep_csv(b, &th, &est)))?;
    let mut summary = json!({
        "points": thetas.len(),
        "q_min": spectral.iter().map(|e| e.value).fold(f64::INFINITY, f64::min),
        "leak": base.leak(),
    });
    if let Some(mc) = &p.monte_carlo {
        let u0 = ctx.start(mc.u0.as_deref());
        let f = ctx.observable();
        let estimates =
            core(cfg, monte_carlo_sweep(&ctx.sys, &ctx.law, &f, &u0, mc.k, mc.n_traj, ctx.seed("scgf-mc"), &thetas))?;
        let worst_z = spectral
            .iter()
            .zip(&estimates)
            .map(|(s, m)| (s.value - m.value).abs() / (s.slack().powi(2) + m.stderr.powi(2)).sqrt())
            .fold(0.0, f64::max);
        let th = thetas.clone();
        out.write("scgf_mc.csv", emit(cfg, move |b| write_sweep_csv(b, &th, &estimates)))?;
        summary["worst_z"] = json!(worst_z);
    }
    Ok(summary)
}

fn rate_curve(ctx: &Context<'_>, p: &RateParams, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let part = core(cfg, ctx.partition())?;
    let f_cells = core(cfg, cfg.potential.on_cells(&part))?;
    let base = core(cfg, ctx.kernel(&part, &vec![0.0; part.n_cells()]))?;
    let power = cfg.tolerances.power();
    let q = |th: f64| {
        let k = base.with_potential(f_cells.iter().map(|f| th * f).collect())?;
        Ok(scgf_of_kernel(&k, power)?.0.value)
    };
    let n = p.x_points - 1;
    let x: Vec<f64> = (0..=n).map(|i| p.x_min + (p.x_max - p.x_min) * i as f64 / n as f64).collect();
    let thetas = symmetric_grid(p.theta.half_width, p.theta.points);
    let curve = core(cfg, legendre_rate(q, "f", &x, &thetas))?;
    let c = curve.clone();
    out.write("rate.csv", emit(cfg, move |b| c.write_csv(b)))?;
    let table = curve.scgf.clone();
    out.write(
        "scgf.csv",
        emit(cfg, move |b| {
            io_write(b, format_args!("theta,q\n"))?;
            for (t, q) in &table {
                io_write(b, format_args!("{t:e},{q:e}\n"))?;
            }
            Ok(())
        }),
    )?;
    let (x_min, r_min) = curve.minimum();
    Ok(json!({
        "argmin": x_min,
        "min_rate": r_min,
        "boundary_levels": curve.boundary.iter().filter(|b| **b).count(),
        "min_second_difference": curve.min_second_difference(),
    }))
}

fn mixing(ctx: &Context<'_>, p: &MixingParams, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let start = p.start.clone();
    let init = move |_: &mut kicklab_core::seed::Rng| start.clone();
    let opts = MixingOptions {
        reference_len: p.reference_len,
        method: DualMethod::Binned1d { axis: cfg.partition.axes[0], bins: p.bins },
        ..MixingOptions::default()
    };
    let fit = core(cfg, mixing_decay(&ctx.sys, &ctx.law, &init, p.k_max, p.n_traj, ctx.seed("mixing"), opts))?;
    let d = fit.distances.clone();
    out.write(
        "mixing.csv",
        emit(cfg, move |b| {
            io_write(b, format_args!("k,distance\n"))?;
            for (k, dk) in d.iter().enumerate() {
                io_write(b, format_args!("{k},{dk:e}\n"))?;
            }
            Ok(())
        }),
    )?;
    let f = fit.clone();
    out.write(
        "mixing.json",
        emit(cfg, move |b| {
            serde_json::to_writer_pretty(&mut *b, &f)?;
            io_write(b, format_args!("\n"))
        }),
    )?;
    Ok(json!({ "alpha": fit.alpha, "c": fit.c, "noise_floor": fit.noise_floor }))
}

fn rare_event(ctx: &Context<'_>, p: &RareEventParams, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let event = LevelSet { lo: p.lo.unwrap_or(f64::NEG_INFINITY), hi: p.hi.unwrap_or(f64::INFINITY) };
    let u0 = ctx.start(p.u0.as_deref());
    let f = ctx.observable();
    let est =
        core(cfg, empirical_ld_rate(&ctx.sys, &ctx.law, &f, event, &u0, &p.k_list, p.n_traj, ctx.seed("rare-event")))?;
    let e = est.clone();
    out.write(
        "rare_event.csv",
        emit(cfg, move |b| {
            io_write(b, format_args!("k,count,censored,log_frequency\n"))?;
            for j in 0..e.k_list.len() {
                io_write(
                    b,
                    format_args!("{},{},{},{:e}\n", e.k_list[j], e.counts[j], e.censored[j], e.log_frequency[j]),
                )?;
            }
            Ok(())
        }),
    )?;
    let e = est.clone();
    out.write("rare_event.json", emit(cfg, move |b| e.write_json(b)))?;
    Ok(json!({ "slope": est.slope, "ci": [est.ci.0, est.ci.1], "all_censored": est.all_censored }))
}

fn ls_verify(ctx: &Context<'_>, p: &LsParams, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let kick = norm(&ctx.law.scales()[p.n..]);
    let gamma = core(cfg, squeezing_gamma(&ctx.sys, p.n, p.radius + kick))?;
    let depth = p.depth.unwrap_or_else(|| window_for(gamma, WINDOW_TARGET));
    let (window, u) = core(cfg, driven_window(&ctx.sys, &ctx.law, p.n, depth, p.radius, ctx.seed("ls-window")))?;
    let mut map = core(cfg, solve_slaved(&ctx.sys, p.n, &window, SlavedOptions::default()))?;
    let profile = core(cfg, sensitivity_profile(&ctx.sys, &window, Target::Psi, depth.min(12), 1e-6))?;
    map.kappa_fit = Some(profile.kappa_fit);
    let m = map.clone();
    out.write("slaved.json", emit(cfg, move |b| m.write_summary(b)))?;
    let pr = profile.clone();
    out.write(
        "sensitivity.csv",
        emit(cfg, move |b| {
            io_write(b, format_args!("depth,sensitivity\n"))?;
            for (j, s) in pr.depths.iter().zip(&pr.sensitivity) {
                io_write(b, format_args!("{j},{s:e}\n"))?;
            }
            Ok(())
        }),
    )?;
    let potential = cfg.potential.clone();
    let f = move |path: &[Vec<f64>]| potential.eval(path.last().expect("k >= 1"));
    let mut rows = Vec::with_capacity(p.k.len());
    for (i, &k) in p.k.iter().enumerate() {
        let seed = derive_seed(cfg.seed, "ls-reduction", i as u64);
        let check = core(
            cfg,
            verify_reduction(&ctx.sys, &ctx.law, p.n, &u, &window, &f, k, p.n_traj, seed, ReductionOptions::default()),
        )?;
        rows.push((k, check));
    }
    let worst_z = rows.iter().map(|(_, c)| c.z).fold(0.0, f64::max);
    out.write(
        "reduction.csv",
        emit(cfg, move |b| {
            io_write(b, format_args!("k,lhs,rhs,se_lhs,se_rhs,z\n"))?;
            for (k, c) in &rows {
                io_write(b, format_args!("{k},{:e},{:e},{:e},{:e},{:e}\n", c.lhs, c.rhs, c.se_lhs, c.se_rhs, c.z))?;
            }
            Ok(())
        }),
    )?;
    Ok(json!({
        "gamma": map.gamma,
        "depth": map.depth,
        "kappa_fit": profile.kappa_fit,
        "residual": map.residual,
        "worst_z": worst_z,
    }))
}

fn dg_levels(ctx: &Context<'_>, out: &mut OutputSet) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let part = core(cfg, ctx.partition())?;
    let v = core(cfg, cfg.potential.on_cells(&part))?;
    let kernel0 = core(cfg, ctx.kernel(&part, &vec![0.0; part.n_cells()]))?;
    let kernel = core(cfg, kernel0.with_potential(v))?;
    let triple = core(cfg, power_iterate(&kernel, cfg.tolerances.power()))?;
    let eq = core(cfg, equilibrium_state(&kernel, &triple, cfg.tolerances.certificate))?;
    let i1 = core(cfg, dv_rate(&kernel0, &eq.nu))?;
    let sigma2 = core(cfg, equilibrium_pair(&kernel, &triple.h, &eq.nu))?;
    let i2 = core(cfg, pair_relative_entropy(&kernel0, &sigma2))?;
    let i2_product = core(cfg, pair_relative_entropy(&kernel0, &product_measure(&eq.nu)))?;
    let levels = [Level { m: 1, measure: eq.nu.clone(), rate: i1 }, Level { m: 2, measure: sigma2, rate: i2 }];
    let aggregate = core(cfg, dg_aggregate(&levels, cfg.tolerances.marginal))?;
    out.write(
        "dg.csv",
        emit(cfg, move |b| {
            io_write(b, format_args!("m,measure,rate\n"))?;
            io_write(b, format_args!("1,equilibrium,{i1:e}\n2,equilibrium,{i2:e}\n2,product,{i2_product:e}\n"))
        }),
    )?;
    Ok(
        json!({ "i1": i1, "i2": i2, "i2_product": rate_value(i2_product), "aggregate": aggregate, "q": eq.q, "certificate_gap": eq.gap }),
    )
}

/// JSON has no infinity; an unreachable measure is reported as the string "inf".
fn rate_value(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!("inf")
    }
}
