//! One seed of an experiment: train every configured method, evaluate on
//! the held-out domain, write artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use drain_core::baselines::train_baseline;
use drain_core::trainer::train_sequence;
use drain_core::{evaluate, ParamVector, Task, TrainEvent};
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, Method};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RESULTS_FILE: &str = "results.json";
pub const CHECKPOINT_FILE: &str = "drain.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub data_seed: u64,
    pub methods: Vec<Method>,
    pub versions: Versions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub drain_core: String,
    pub drain_cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            drain_core: drain_core::VERSION.to_string(),
            drain_cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Metric on the held-out domain.
    pub test: f64,
    /// Metric on each training domain, in `train_domains` order. DRAIN uses
    /// the parameters it generated for that domain; baselines use their
    /// final parameters.
    pub train: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub name: String,
    pub seed: u64,
    pub task: Task,
    /// `error_pct` or `mae`.
    pub metric: String,
    pub train_domains: Vec<usize>,
    pub test_domain: usize,
    pub methods: Vec<MethodResult>,
}

impl SeedResult {
    pub fn get(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "error_pct",
        Task::Regression => "mae",
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// Writes one JSON line per training iteration.
struct MetricsLog {
    out: BufWriter<File>,
    path: PathBuf,
    failed: Option<std::io::Error>,
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    method: &'a str,
    phase: usize,
    iter: usize,
    loss: f64,
}

impl MetricsLog {
    fn create(path: PathBuf) -> CliResult<Self> {
        let file = File::create(&path).map_err(CliError::io(&path))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
            failed: None,
        })
    }

    fn observer(&mut self, method: Method) -> impl FnMut(&TrainEvent) + '_ {
        move |e| {
            if let TrainEvent::Iteration { phase, iter, loss } = *e {
                if self.failed.is_some() {
                    return;
                }
                let line = MetricsLine {
                    method: method.name(),
                    phase,
                    iter,
                    loss,
                };
                let mut text = serde_json::to_string(&line).expect("serializable");
                text.push('\n');
                if let Err(err) = self.out.write_all(text.as_bytes()) {
                    self.failed = Some(err);
                }
            }
        }
    }

    fn finish(mut self) -> CliResult<()> {
        if let Some(err) = self.failed.take() {
            return Err(CliError::Io {
                path: self.path,
                source: err,
            });
        }
        self.out.flush().map_err(CliError::io(&self.path))
    }
}

/// Runs every configured method for `seed` and writes the artifacts into
/// `out_dir` (created if missing, files overwritten).
pub fn run_seed(loaded: &LoadedConfig, seed: u64, out_dir: &Path, command: &str) -> CliResult<SeedResult> {
    let cfg = &loaded.config;
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let data_seed = cfg.dataset.seed.unwrap_or(seed);
    let manifest = Manifest {
        name: cfg.name.clone(),
        command: command.to_string(),
        config_sha256: loaded.sha256.clone(),
        seed,
        data_seed,
        methods: cfg.methods.clone(),
        versions: Versions::current(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;

    let split = cfg.dataset.load(seed)?;
    let task = cfg.dataset.task();
    let schema = &cfg.schema;
    let train_cfg = cfg.train_config(seed);
    let mut log = MetricsLog::create(out_dir.join(METRICS_FILE))?;
    let mut fitted = Vec::new();

    for &method in &cfg.methods {
        let started = Instant::now();
        let (prefix, omegas, future) = match method.baseline() {
            None => {
                let model = train_sequence(&split.train, schema, &cfg.generator_config(), &train_cfg, &mut log.observer(method))?;
                model.save(&out_dir.join(CHECKPOINT_FILE))?;
                let future = model.predict_future()?;
                future.save(&out_dir.join("drain_future.pv"))?;
                (model.prefix.clone(), model.omegas.clone(), future)
            }
            Some(kind) => {
                let fit = train_baseline(kind, &split.train, schema, &train_cfg, &cfg.baselines, &mut log.observer(method))?;
                fit.omega.save(&out_dir.join(format!("{}.pv", method.name())))?;
                if !fit.prefix.is_empty() {
                    ParamVector::new(schema.hash32(), fit.prefix.clone())
                        .save(&out_dir.join(format!("{}_prefix.pv", method.name())))?;
                }
                let n = split.train.len();
                (fit.prefix, vec![fit.omega.clone(); n], fit.omega)
            }
        };
        log::info!("seed {seed}: {method} trained in {:.1}s", started.elapsed().as_secs_f64());
        let train = split
            .train
            .iter()
            .zip(&omegas)
            .map(|(ds, w)| evaluate(schema, &prefix, w, ds, task))
            .collect::<drain_core::Result<Vec<_>>>()?;
        fitted.push((method, prefix, future, train));
    }
    log.finish()?;

    let test = split.test.reveal("evaluation");
    let mut methods = Vec::new();
    for (method, prefix, future, train) in fitted {
        methods.push(MethodResult {
            method,
            test: evaluate(schema, &prefix, &future, test, task)?,
            train,
        });
    }
    let result = SeedResult {
        name: cfg.name.clone(),
        seed,
        task,
        metric: metric_name(task).to_string(),
        train_domains: cfg.dataset.train_domains.clone(),
        test_domain: cfg.dataset.test_domain,
        methods,
    };
    write_json(&out_dir.join(RESULTS_FILE), &result)?;
    Ok(result)
}
