//! Sequential end-to-end training over the domain sequence and the
//! inference step for the next, unseen domain.
//!
//! Phase `s` trains on domain `s` only. Every iteration rebuilds the
//! generation chain on a fresh tape, evaluates the target network with the
//! generated parameters and takes one Adam step on all generator and prefix
//! parameters. At the end of the phase the generated parameters and LSTM
//! memory are recomputed with the final weights and committed as constants
//! for the next phase.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{DomainDataset, Task};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorState};
use crate::io::{expect_magic, read_json, read_tensor, read_u32, write_json, write_tensor};
use crate::netgraph::{NetSchema, ParamVector};
use crate::optim::{Adam, AdamConfig};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iters_per_domain: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            iters_per_domain: 300,
            adam: AdamConfig::default(),
            task,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.iters_per_domain == 0 {
            return Err(Error::InvalidConfig("iters_per_domain must be at least 1".into()));
        }
        Ok(())
    }
}

/// Progress notifications emitted while training.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    /// Phase `phase` read the dataset of `domain`.
    DomainAccess { phase: usize, domain: usize },
    /// Loss before the update of iteration `iter`.
    Iteration { phase: usize, iter: usize, loss: f64 },
}

/// Mean cross-entropy (classification) or squared error (regression).
pub fn task_loss(tape: &mut Tape, pred: Var, labels: &Tensor, task: Task) -> Result<Var> {
    match task {
        Task::Classification => tape.loss_bce(pred, labels),
        Task::Regression => tape.loss_mse(pred, labels),
    }
}

pub(crate) fn check_input(schema: &NetSchema, ds: &DomainDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset(format!("domain {} is empty", ds.domain_index)));
    }
    if ds.dim() != schema.input_dim {
        return Err(Error::ShapeMismatch {
            op: "dataset",
            lhs: vec![schema.input_dim],
            rhs: vec![ds.dim()],
        });
    }
    if schema.output_width() != 1 {
        return Err(Error::InvalidSchema("only single-output networks are supported".into()));
    }
    Ok(())
}

pub(crate) fn non_finite_as_loss(phase: usize, iter: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss {
            phase,
            iter,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Training state for one run of the recurrent generator.
#[derive(Debug)]
pub struct DrainTrainer {
    schema: NetSchema,
    cfg: TrainConfig,
    state: GeneratorState,
    prefix: Tensor,
    adam: Adam,
    omegas: Vec<ParamVector>,
    loss_curves: Vec<Vec<f64>>,
}

impl DrainTrainer {
    pub fn new(schema: NetSchema, gen_cfg: GeneratorConfig, cfg: TrainConfig) -> Result<Self> {
        schema.validate()?;
        cfg.validate()?;
        if gen_cfg.target_param_count != schema.param_count() {
            return Err(Error::InvalidConfig(format!(
                "generator emits {} parameters but the schema needs {}",
                gen_cfg.target_param_count,
                schema.param_count()
            )));
        }
        let state = GeneratorState::init(gen_cfg, cfg.seed)?;
        let (prefix, _) = schema.init_params(&mut rng::stream(cfg.seed, rng::STREAM_PREFIX_INIT));
        let adam = Adam::new(cfg.learning_rate, cfg.adam);
        Ok(Self {
            schema,
            cfg,
            state,
            prefix: Tensor::vector(prefix),
            adam,
            omegas: Vec::new(),
            loss_curves: Vec::new(),
        })
    }

    pub fn state(&self) -> &GeneratorState {
        &self.state
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Runs one training phase on `dataset`, commits the resulting parameters
    /// and memory, and returns the parameters with the loss curve.
    pub fn train_on_domain(
        &mut self,
        dataset: &DomainDataset,
        observer: &mut dyn FnMut(&TrainEvent),
    ) -> Result<(ParamVector, Vec<f64>)> {
        check_input(&self.schema, dataset)?;
        let phase = self.state.step_index;
        observer(&TrainEvent::DomainAccess {
            phase,
            domain: dataset.domain_index,
        });
        let labels = dataset.label_tensor();
        let has_prefix = !self.prefix.is_empty();
        let mut curve = Vec::with_capacity(self.cfg.iters_per_domain);

        for iter in 0..self.cfg.iters_per_domain {
            let mut tape = Tape::new();
            let step = |tape: &mut Tape| -> Result<(Vec<Var>, Var)> {
                let bound = self.state.params.bind(tape)?;
                let prefix = if has_prefix {
                    Some(tape.leaf(self.prefix.clone())?)
                } else {
                    None
                };
                let generated = self.state.generate_next(tape, &bound)?;
                let pred = self.schema.forward(tape, generated.omega, prefix, &dataset.features)?;
                let loss = task_loss(tape, pred, &labels, self.cfg.task)?;
                let mut vars = bound.vars();
                vars.extend(prefix);
                Ok((vars, loss))
            };
            let (vars, loss) = step(&mut tape).map_err(non_finite_as_loss(phase, iter))?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { phase, iter, loss: value });
            }
            curve.push(value);
            observer(&TrainEvent::Iteration { phase, iter, loss: value });

            let grads = tape.backward(loss)?;
            let gs: Vec<Option<&Tensor>> = vars.iter().map(|v| grads.get_ref(*v)).collect();
            let mut params = self.state.params.tensors_mut();
            if has_prefix {
                params.push(&mut self.prefix);
            }
            self.adam.step(&mut params, &gs);
        }

        let (omega, memory) = self
            .state
            .generate(self.schema.hash32())
            .map_err(non_finite_as_loss(phase, self.cfg.iters_per_domain))?;
        self.state.advance(omega.clone(), memory);
        self.omegas.push(omega.clone());
        self.loss_curves.push(curve.clone());
        Ok((omega, curve))
    }

    pub fn finish(self) -> TrainedModel {
        TrainedModel {
            adam_steps: self.adam.steps(),
            schema: self.schema,
            train_config: self.cfg,
            state: self.state,
            prefix: self.prefix.into_data(),
            omegas: self.omegas,
            loss_curves: self.loss_curves,
        }
    }
}

/// Trains on `datasets` in order (one phase per domain).
pub fn train_sequence(
    datasets: &[DomainDataset],
    schema: &NetSchema,
    gen_cfg: &GeneratorConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainedModel> {
    if datasets.is_empty() {
        return Err(Error::InvalidDataset("at least one training domain is required".into()));
    }
    let mut trainer = DrainTrainer::new(schema.clone(), gen_cfg.clone(), cfg.clone())?;
    for ds in datasets {
        trainer.train_on_domain(ds, observer)?;
    }
    Ok(trainer.finish())
}

/// Result of [`train_sequence`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub schema: NetSchema,
    pub train_config: TrainConfig,
    pub state: GeneratorState,
    pub prefix: Vec<f64>,
    /// Parameters committed after each phase, in phase order.
    pub omegas: Vec<ParamVector>,
    pub loss_curves: Vec<Vec<f64>>,
    pub adam_steps: u64,
}

const MODEL_MAGIC: &[u8; 4] = b"DRTM";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    schema: NetSchema,
    train_config: TrainConfig,
    adam_steps: u64,
    phases: usize,
}

impl TrainedModel {
    /// Parameters for the domain after the last training phase: one more
    /// generation step from the final memory and parameters, no updates.
    pub fn predict_future(&self) -> Result<ParamVector> {
        Ok(self.state.generate(self.schema.hash32())?.0)
    }

    /// Parameters for phase `phase`, or the extrapolated ones when `phase`
    /// equals the number of phases.
    pub fn omega_for_phase(&self, phase: usize) -> Result<ParamVector> {
        match phase.cmp(&self.omegas.len()) {
            std::cmp::Ordering::Less => Ok(self.omegas[phase].clone()),
            std::cmp::Ordering::Equal => self.predict_future(),
            std::cmp::Ordering::Greater => Err(Error::InvalidConfig(format!(
                "phase {phase} is beyond the next domain ({} phases trained)",
                self.omegas.len()
            ))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        write_json(
            w,
            &ModelMeta {
                schema: self.schema.clone(),
                train_config: self.train_config.clone(),
                adam_steps: self.adam_steps,
                phases: self.omegas.len(),
            },
        )?;
        self.state.write_to(w)?;
        write_tensor(w, &Tensor::vector(self.prefix.clone()))?;
        for o in &self.omegas {
            write_tensor(w, &Tensor::vector(o.values.clone()))?;
        }
        for c in &self.loss_curves {
            write_tensor(w, &Tensor::vector(c.clone()))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, MODEL_MAGIC)?;
        let version = read_u32(r)?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let meta: ModelMeta = read_json(r)?;
        meta.schema.validate()?;
        let state = GeneratorState::read_from(r)?;
        if state.config.target_param_count != meta.schema.param_count() {
            return Err(Error::Format("generator width does not match schema".into()));
        }
        let prefix = read_tensor(r)?.into_data();
        if prefix.len() != meta.schema.prefix_param_count() {
            return Err(Error::Format("prefix length does not match schema".into()));
        }
        let hash = meta.schema.hash32();
        let mut omegas = Vec::with_capacity(meta.phases);
        for _ in 0..meta.phases {
            let pv = ParamVector::new(hash, read_tensor(r)?.into_data());
            pv.check(&meta.schema)?;
            omegas.push(pv);
        }
        let mut loss_curves = Vec::with_capacity(meta.phases);
        for _ in 0..meta.phases {
            loss_curves.push(read_tensor(r)?.into_data());
        }
        Ok(Self {
            schema: meta.schema,
            train_config: meta.train_config,
            state,
            prefix,
            omegas,
            loss_curves,
            adam_steps: meta.adam_steps,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_file_with(path, |r| Self::read_from(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_rotated_moons;
    use crate::netgraph::{Activation, LayerSpec};

    fn small_setup() -> (NetSchema, GeneratorConfig, TrainConfig) {
        let schema = NetSchema::mlp(2, &[6], Activation::Relu, 1, Activation::Sigmoid, true).unwrap();
        let mut gen = GeneratorConfig::new(schema.param_count());
        gen.latent_dim = 4;
        gen.lstm_depth = 2;
        gen.init_hidden = 5;
        gen.encoder_hidden = 5;
        gen.decoder_hidden = 5;
        let mut cfg = TrainConfig::new(Task::Classification, 3);
        cfg.learning_rate = 1e-2;
        cfg.iters_per_domain = 5;
        (schema, gen, cfg)
    }

    #[test]
    fn single_iteration_is_one_adam_step() {
        let (schema, gen, mut cfg) = small_setup();
        cfg.iters_per_domain = 1;
        let data = make_rotated_moons(1, 20, 18.0, 0.1, 0).unwrap();
        let mut t = DrainTrainer::new(schema, gen, cfg).unwrap();
        let (omega, curve) = t.train_on_domain(&data[0], &mut |_| {}).unwrap();
        assert_eq!(t.adam_steps(), 1);
        assert_eq!(curve.len(), 1);
        assert_eq!(t.state().history.back(), Some(&omega));
        assert_eq!(t.state().prev_omega.as_ref(), Some(&omega));
    }

    #[test]
    fn one_domain_sequence() {
        let (schema, gen, cfg) = small_setup();
        let data = make_rotated_moons(1, 20, 18.0, 0.1, 0).unwrap();
        let m = train_sequence(&data, &schema, &gen, &cfg, &mut |_| {}).unwrap();
        assert_eq!(m.omegas.len(), 1);
        assert_eq!(m.adam_steps, 5);
        assert_eq!(m.predict_future().unwrap().len(), schema.param_count());
    }

    #[test]
    fn rejects_mismatched_generator_width() {
        let (schema, mut gen, cfg) = small_setup();
        gen.target_param_count += 1;
        assert!(DrainTrainer::new(schema, gen, cfg).is_err());
    }

    #[test]
    fn rejects_wrong_feature_dim() {
        let schema = NetSchema::new(3, vec![LayerSpec::new(1, Activation::Sigmoid, true)], 1).unwrap();
        let mut gen = GeneratorConfig::new(schema.param_count());
        gen.lstm_depth = 1;
        gen.latent_dim = 2;
        let cfg = TrainConfig::new(Task::Classification, 0);
        let data = make_rotated_moons(1, 10, 18.0, 0.1, 0).unwrap();
        assert!(train_sequence(&data, &schema, &gen, &cfg, &mut |_| {}).is_err());
    }

    #[test]
    fn diverging_training_reports_phase_and_iteration() {
        let schema = NetSchema::new(1, vec![LayerSpec::new(1, Activation::Identity, true)], 1).unwrap();
        let mut gen = GeneratorConfig::new(schema.param_count());
        gen.lstm_depth = 1;
        gen.latent_dim = 2;
        let mut cfg = TrainConfig::new(Task::Regression, 0);
        cfg.iters_per_domain = 3;
        let x = Tensor::matrix(2, 1, vec![1e200, -1e200]).unwrap();
        let ds = DomainDataset::new(x, vec![1e200, 1e200], 0, Task::Regression).unwrap();
        let err = train_sequence(&[ds], &schema, &gen, &cfg, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { phase: 0, iter: 0, .. }), "{err}");
    }

    #[test]
    fn model_checkpoint_roundtrip() {
        let (schema, gen, cfg) = small_setup();
        let data = make_rotated_moons(2, 20, 18.0, 0.1, 0).unwrap();
        let m = train_sequence(&data, &schema, &gen, &cfg, &mut |_| {}).unwrap();
        let bytes = m.to_bytes();
        let back = TrainedModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.predict_future().unwrap(), m.predict_future().unwrap());
    }
}
