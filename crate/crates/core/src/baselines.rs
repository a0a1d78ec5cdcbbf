//! Time-oblivious reference methods trained directly on the target network.
//!
//! * `Offline`: ERM on all training domains pooled.
//! * `LastDomain`: ERM on the most recent training domain.
//! * `IncFinetune`: ERM on the first domain, then sequential fine-tuning on
//!   each later domain at a reduced learning rate.
//!
//! All three share the schema, optimizer and seed with the generator run.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::netgraph::{NetSchema, ParamVector};
use crate::optim::Adam;
use crate::rng;
use crate::trainer::{check_input, non_finite_as_loss, task_loss, TrainConfig, TrainEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Offline,
    LastDomain,
    IncFinetune,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::Offline, Self::LastDomain, Self::IncFinetune];

    pub fn name(self) -> &'static str {
        match self {
            Self::Offline => "offline",
            Self::LastDomain => "last_domain",
            Self::IncFinetune => "inc_finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Full-batch Adam steps for `Offline` and `LastDomain`.
    pub full_iters: usize,
    /// Steps on the first domain for `IncFinetune`, at the full rate.
    pub first_iters: usize,
    /// Steps per later domain for `IncFinetune`.
    pub finetune_iters: usize,
    /// Learning-rate multiplier for fine-tuning, in `(0, 1]`.
    pub finetune_lr_factor: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            full_iters: 2700,
            first_iters: 300,
            finetune_iters: 300,
            finetune_lr_factor: 0.1,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.finetune_lr_factor > 0.0 && self.finetune_lr_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "finetune_lr_factor {} outside (0, 1]",
                self.finetune_lr_factor
            )));
        }
        Ok(())
    }
}

/// Directly trained target-network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedNet {
    pub prefix: Vec<f64>,
    pub omega: ParamVector,
}

struct DirectFit<'a> {
    schema: &'a NetSchema,
    cfg: &'a TrainConfig,
    prefix: Tensor,
    omega: Tensor,
    adam: Adam,
}

impl<'a> DirectFit<'a> {
    fn new(schema: &'a NetSchema, cfg: &'a TrainConfig) -> Self {
        let (prefix, omega) = schema.init_params(&mut rng::stream(cfg.seed, rng::STREAM_BASELINE_INIT));
        Self {
            schema,
            cfg,
            prefix: Tensor::vector(prefix),
            omega: Tensor::vector(omega.values),
            adam: Adam::new(cfg.learning_rate, cfg.adam),
        }
    }

    fn fit(
        &mut self,
        ds: &DomainDataset,
        iters: usize,
        lr: f64,
        phase: usize,
        observer: &mut dyn FnMut(&TrainEvent),
    ) -> Result<()> {
        check_input(self.schema, ds)?;
        self.adam.lr = lr;
        let labels = ds.label_tensor();
        let has_prefix = !self.prefix.is_empty();
        for iter in 0..iters {
            let mut tape = Tape::new();
            let record = |tape: &mut Tape| {
                let w = tape.leaf(self.omega.clone())?;
                let p = if has_prefix {
                    Some(tape.leaf(self.prefix.clone())?)
                } else {
                    None
                };
                let pred = self.schema.forward(tape, w, p, &ds.features)?;
                let loss = task_loss(tape, pred, &labels, self.cfg.task)?;
                Ok::<_, Error>((w, p, loss))
            };
            let (w, p, loss) = record(&mut tape).map_err(non_finite_as_loss(phase, iter))?;
            let value = tape.value(loss).item();
            observer(&TrainEvent::Iteration { phase, iter, loss: value });
            let grads = tape.backward(loss)?;
            let mut gs = vec![grads.get_ref(w)];
            let mut params = vec![&mut self.omega];
            if let Some(p) = p {
                gs.push(grads.get_ref(p));
                params.push(&mut self.prefix);
            }
            self.adam.step(&mut params, &gs);
        }
        Ok(())
    }

    fn finish(self) -> FittedNet {
        FittedNet {
            prefix: self.prefix.into_data(),
            omega: ParamVector::new(self.schema.hash32(), self.omega.into_data()),
        }
    }
}

fn require_domains(datasets: &[DomainDataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::InvalidDataset("at least one training domain is required".into()));
    }
    Ok(())
}

/// ERM on the pooled training domains. Rows are shuffled once with the run
/// seed.
pub fn train_offline(
    datasets: &[DomainDataset],
    schema: &NetSchema,
    cfg: &TrainConfig,
    base: &BaselineConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<FittedNet> {
    require_domains(datasets)?;
    for ds in datasets {
        observer(&TrainEvent::DomainAccess {
            phase: 0,
            domain: ds.domain_index,
        });
    }
    let refs: Vec<&DomainDataset> = datasets.iter().collect();
    let pooled = DomainDataset::concat(&refs, datasets[datasets.len() - 1].domain_index)?;
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, rng::STREAM_OFFLINE_SHUFFLE));
    let d = pooled.dim();
    let feats: Vec<f64> = order.iter().flat_map(|&i| pooled.row(i).to_vec()).collect();
    let labels: Vec<f64> = order.iter().map(|&i| pooled.labels[i]).collect();
    let shuffled = DomainDataset {
        features: Tensor::matrix(labels.len(), d, feats)?,
        labels,
        domain_index: pooled.domain_index,
        timestamp: None,
    };
    let mut fit = DirectFit::new(schema, cfg);
    fit.fit(&shuffled, base.full_iters, cfg.learning_rate, 0, observer)?;
    Ok(fit.finish())
}

/// ERM on the last training domain only.
pub fn train_last_domain(
    datasets: &[DomainDataset],
    schema: &NetSchema,
    cfg: &TrainConfig,
    base: &BaselineConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<FittedNet> {
    require_domains(datasets)?;
    let last = &datasets[datasets.len() - 1];
    observer(&TrainEvent::DomainAccess {
        phase: 0,
        domain: last.domain_index,
    });
    let mut fit = DirectFit::new(schema, cfg);
    fit.fit(last, base.full_iters, cfg.learning_rate, 0, observer)?;
    Ok(fit.finish())
}

/// `first_iters` steps on the first domain, then `finetune_iters` steps on
/// each later domain at `learning_rate * finetune_lr_factor`. Adam moments
/// carry over.
pub fn train_inc_finetune(
    datasets: &[DomainDataset],
    schema: &NetSchema,
    cfg: &TrainConfig,
    base: &BaselineConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<FittedNet> {
    require_domains(datasets)?;
    base.validate()?;
    let mut fit = DirectFit::new(schema, cfg);
    for (phase, ds) in datasets.iter().enumerate() {
        observer(&TrainEvent::DomainAccess {
            phase,
            domain: ds.domain_index,
        });
        if phase == 0 {
            fit.fit(ds, base.first_iters, cfg.learning_rate, phase, observer)?;
        } else {
            let lr = cfg.learning_rate * base.finetune_lr_factor;
            fit.fit(ds, base.finetune_iters, lr, phase, observer)?;
        }
    }
    Ok(fit.finish())
}

pub fn train_baseline(
    kind: BaselineKind,
    datasets: &[DomainDataset],
    schema: &NetSchema,
    cfg: &TrainConfig,
    base: &BaselineConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<FittedNet> {
    match kind {
        BaselineKind::Offline => train_offline(datasets, schema, cfg, base, observer),
        BaselineKind::LastDomain => train_last_domain(datasets, schema, cfg, base, observer),
        BaselineKind::IncFinetune => train_inc_finetune(datasets, schema, cfg, base, observer),
    }
}
