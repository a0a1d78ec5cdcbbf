//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use drain_core::{render_boundary, BoundaryRaster, TrainedModel};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::run::{run_seed, SeedResult};
use crate::suite::{run_suite, Summary};

pub fn domain_file_name(domain: usize) -> String {
    format!("domain_{domain:02}.csv")
}

/// Writes every domain of the dataset as `domain_NN.csv` with columns
/// `x0..x{d-1},label,domain`. Existing files are only replaced with `force`.
pub fn gen_data(loaded: &LoadedConfig, seed: u64, out_dir: &Path, force: bool) -> CliResult<Vec<PathBuf>> {
    let domains = loaded.config.dataset.materialize(seed)?;
    let paths: Vec<PathBuf> = domains.iter().map(|d| out_dir.join(domain_file_name(d.domain_index))).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Exists(p.clone()));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    for (ds, path) in domains.iter().zip(&paths) {
        let d = ds.dim();
        let mut text = String::new();
        for k in 0..d {
            let _ = write!(text, "x{k},");
        }
        text.push_str("label,domain\n");
        for i in 0..ds.len() {
            for v in ds.row(i) {
                let _ = write!(text, "{v},");
            }
            let _ = writeln!(text, "{},{}", ds.labels[i], ds.domain_index);
        }
        std::fs::write(path, text).map_err(CliError::io(path))?;
    }
    Ok(paths)
}

pub fn train(loaded: &LoadedConfig, seed: u64) -> CliResult<SeedResult> {
    run_seed(loaded, seed, &loaded.config.seed_dir(seed), "train")
}

pub fn suite(loaded: &LoadedConfig) -> CliResult<Summary> {
    run_suite(loaded)
}

/// Renders the decision boundary of a trained checkpoint on one domain of
/// the configured dataset. Training domains use the parameters generated
/// for them; the test domain uses the extrapolated parameters.
pub fn boundary(
    loaded: &LoadedConfig,
    checkpoint: &Path,
    seed: u64,
    domain: usize,
    resolution: usize,
    out: &Path,
) -> CliResult<BoundaryRaster> {
    let cfg = &loaded.config;
    let model = TrainedModel::load(checkpoint)?;
    if model.schema != cfg.schema {
        return Err(CliError::Config(format!(
            "{} was trained with a different schema than the config",
            checkpoint.display()
        )));
    }
    let omega = if let Some(phase) = cfg.dataset.train_domains.iter().position(|&d| d == domain) {
        model.omega_for_phase(phase)?
    } else if domain == cfg.dataset.test_domain {
        model.predict_future()?
    } else {
        return Err(CliError::Config(format!(
            "domain {domain} is neither a training domain nor the test domain"
        )));
    };
    let split = cfg.dataset.load(seed)?;
    let ds = match split.train.iter().find(|d| d.domain_index == domain) {
        Some(d) => d,
        None => split.test.reveal("boundary render"),
    };
    Ok(render_boundary(&model.schema, &model.prefix, &omega, ds, resolution, out)?)
}
