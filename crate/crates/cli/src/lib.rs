//! Experiment runner: a TOML config names a system, a kick law and a recipe;
//! `run` executes it and writes tables plus a hashed manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod recipes;

use std::path::Path;

pub use config::{ExperimentConfig, Recipe, Violation, RECIPES};
pub use error::CliError;
pub use manifest::Manifest;

use manifest::{sha256_hex, DirLock, OutputSet, MANIFEST_FILE};

pub const CONFIG_COPY: &str = "config.toml";

/// Validates `cfg`, runs its recipe into `out_dir` and writes the manifest.
/// The manifest lists every output except itself.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let violations = cfg.validate();
    if !violations.is_empty() {
        return Err(CliError::Invalid(violations));
    }
    let _lock = DirLock::acquire(out_dir)?;
    let mut out = OutputSet::new(out_dir);
    let text = cfg.to_toml();
    out.write(CONFIG_COPY, |b| {
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    let summary = recipes::run_recipe(cfg, &mut out)?;
    let manifest = Manifest {
        experiment: cfg.experiment.clone(),
        recipe: cfg.recipe.name().to_string(),
        seed: cfg.seed,
        config_sha256: sha256_hex(text.as_bytes()),
        files: out.entries()?,
        summary,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| CliError::Io { path, source: e })?;
    Ok(manifest)
}

/// Sets the global rayon pool size. A no-op without the `parallel` feature.
pub fn set_threads(n: usize) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Threads(e.to_string()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}
