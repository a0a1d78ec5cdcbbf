//! Recurrent parameter generator.
//!
//! One generation step maps the previous domain's parameters to the next:
//!
//! ```text
//! a      = encode(omega_prev)            (zeros on the first step)
//! m', h  = lstm(m, a)                    (m = init_encoder(z) on the first step)
//! raw    = decode(h)
//! omega  = raw + lambda * sum(window of the last tau omegas)
//! ```
//!
//! The initial encoder, parameter encoder and decoder are two-layer MLPs
//! with a tanh hidden layer and a linear output. The LSTM is a stack of
//! `lstm_depth` cells of width `latent_dim`; gate order inside each cell's
//! fused weight is input, forget, candidate, output.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{expect_magic, read_json, read_tensor, read_u32, write_json, write_tensor};
use crate::netgraph::ParamVector;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub lstm_depth: usize,
    /// Skip-connection coefficient.
    pub lambda: f64,
    /// Skip-connection window; 0 disables the skip connection.
    pub tau: usize,
    /// Length of the generated parameter vector.
    pub target_param_count: usize,
    pub init_hidden: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
}

impl GeneratorConfig {
    pub fn new(target_param_count: usize) -> Self {
        Self {
            latent_dim: 32,
            lstm_depth: 10,
            lambda: 0.1,
            tau: 3,
            target_param_count,
            init_hidden: 64,
            encoder_hidden: 64,
            decoder_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("generator: {m}")));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.lstm_depth == 0 {
            return bad("lstm_depth must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.target_param_count == 0 {
            return bad("target_param_count must be at least 1");
        }
        if self.init_hidden == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return bad("hidden widths must be at least 1");
        }
        Ok(())
    }

    pub fn skip_enabled(&self) -> bool {
        self.tau > 0
    }
}

/// Two-layer MLP: `tanh(x·w1 + b1)·w2 + b2`. Biases are `1 × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    fn init(rng: &mut impl rand::Rng, input: usize, hidden: usize, output: usize) -> Self {
        let m = |rows: usize, cols: usize, fan_in: usize, rng: &mut _| {
            Tensor::matrix(rows, cols, rng::fan_in_uniform(rng, fan_in, rows * cols)).expect("shape")
        };
        Self {
            w1: m(input, hidden, input, rng),
            b1: m(1, hidden, input, rng),
            w2: m(hidden, output, hidden, rng),
            b2: m(1, output, hidden, rng),
        }
    }

    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[input, hidden]),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::zeros(&[hidden, output]),
            b2: Tensor::zeros(&[1, output]),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// One LSTM cell: fused gate weight `(input + latent) × 4·latent` and bias
/// `1 × 4·latent`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    /// Initial encoder: `z` to the first memory state.
    pub g0: Mlp,
    /// Parameter encoder: `omega` to the LSTM input.
    pub eta: Mlp,
    /// Stacked LSTM cells.
    pub theta: Vec<LstmCell>,
    /// Decoder: top hidden state to `omega`.
    pub xi: Mlp,
}

impl GeneratorParams {
    pub fn init(cfg: &GeneratorConfig, rng: &mut impl rand::Rng) -> Self {
        let l = cfg.latent_dim;
        let n = cfg.target_param_count;
        let g0 = Mlp::init(rng, l, cfg.init_hidden, 2 * cfg.lstm_depth * l);
        let eta = Mlp::init(rng, n, cfg.encoder_hidden, l);
        let theta = (0..cfg.lstm_depth)
            .map(|_| LstmCell {
                w: Tensor::matrix(2 * l, 4 * l, rng::fan_in_uniform(rng, 2 * l, 8 * l * l)).expect("shape"),
                b: Tensor::matrix(1, 4 * l, rng::fan_in_uniform(rng, 2 * l, 4 * l)).expect("shape"),
            })
            .collect();
        let xi = Mlp::init(rng, l, cfg.decoder_hidden, n);
        Self { g0, eta, theta, xi }
    }

    pub fn zeros(cfg: &GeneratorConfig) -> Self {
        let l = cfg.latent_dim;
        let n = cfg.target_param_count;
        Self {
            g0: Mlp::zeros(l, cfg.init_hidden, 2 * cfg.lstm_depth * l),
            eta: Mlp::zeros(n, cfg.encoder_hidden, l),
            theta: (0..cfg.lstm_depth)
                .map(|_| LstmCell {
                    w: Tensor::zeros(&[2 * l, 4 * l]),
                    b: Tensor::zeros(&[1, 4 * l]),
                })
                .collect(),
            xi: Mlp::zeros(l, cfg.decoder_hidden, n),
        }
    }

    /// All tensors in a fixed order: g0, eta, theta (w, b per cell), xi.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        v.extend(self.g0.tensors());
        v.extend(self.eta.tensors());
        for c in &self.theta {
            v.push(&c.w);
            v.push(&c.b);
        }
        v.extend(self.xi.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        v.extend(self.g0.tensors_mut());
        v.extend(self.eta.tensors_mut());
        for c in &mut self.theta {
            v.push(&mut c.w);
            v.push(&mut c.b);
        }
        v.extend(self.xi.tensors_mut());
        v
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone());
        let mlp = |m: &Mlp, leaf: &mut dyn FnMut(&Tensor) -> Result<Var>| -> Result<BoundMlp> {
            Ok(BoundMlp {
                w1: leaf(&m.w1)?,
                b1: leaf(&m.b1)?,
                w2: leaf(&m.w2)?,
                b2: leaf(&m.b2)?,
            })
        };
        let g0 = mlp(&self.g0, &mut leaf)?;
        let eta = mlp(&self.eta, &mut leaf)?;
        let mut theta = Vec::with_capacity(self.theta.len());
        for c in &self.theta {
            theta.push((leaf(&c.w)?, leaf(&c.b)?));
        }
        let xi = mlp(&self.xi, &mut leaf)?;
        Ok(BoundParams { g0, eta, theta, xi })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundMlp {
    fn vars(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// `x` is `1 × input`; returns `1 × output`.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.w1)?;
        let z = tape.add(z, self.b1)?;
        let h = tape.tanh(z)?;
        let o = tape.matmul(h, self.w2)?;
        tape.add(o, self.b2)
    }
}

/// [`GeneratorParams`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub g0: BoundMlp,
    pub eta: BoundMlp,
    pub theta: Vec<(Var, Var)>,
    pub xi: BoundMlp,
}

impl BoundParams {
    /// Same order as [`GeneratorParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        v.extend(self.g0.vars());
        v.extend(self.eta.vars());
        for (w, b) in &self.theta {
            v.push(*w);
            v.push(*b);
        }
        v.extend(self.xi.vars());
        v
    }
}

/// LSTM memory: hidden and cell state, each `lstm_depth × latent_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl Memory {
    pub fn zeros(depth: usize, latent: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[depth, latent]),
            cell: Tensor::zeros(&[depth, latent]),
        }
    }

    pub fn depth(&self) -> usize {
        self.hidden.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundMemory> {
        let (depth, latent) = (self.hidden.rows(), self.hidden.cols());
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let row = |t: &Tensor| Tensor::matrix(1, latent, t.data()[l * latent..(l + 1) * latent].to_vec());
            let h = tape.leaf(row(&self.hidden)?)?;
            let c = tape.leaf(row(&self.cell)?)?;
            layers.push((h, c));
        }
        Ok(BoundMemory { layers })
    }
}

/// Memory recorded on a tape: `(hidden, cell)` per layer, each `1 × latent`.
#[derive(Clone, Debug)]
pub struct BoundMemory {
    pub layers: Vec<(Var, Var)>,
}

impl BoundMemory {
    pub fn value(&self, tape: &Tape) -> Memory {
        let depth = self.layers.len();
        let latent = tape.value(self.layers[0].0).len();
        let mut hidden = Vec::with_capacity(depth * latent);
        let mut cell = Vec::with_capacity(depth * latent);
        for (h, c) in &self.layers {
            hidden.extend_from_slice(tape.value(*h).data());
            cell.extend_from_slice(tape.value(*c).data());
        }
        Memory {
            hidden: Tensor::matrix(depth, latent, hidden).expect("shape"),
            cell: Tensor::matrix(depth, latent, cell).expect("shape"),
        }
    }
}

/// `G_0(z)` split into per-layer hidden and cell states.
pub fn initial_memory(tape: &mut Tape, params: &BoundParams, z: Var, cfg: &GeneratorConfig) -> Result<BoundMemory> {
    let l = cfg.latent_dim;
    let out = params.g0.apply(tape, z)?;
    let mut layers = Vec::with_capacity(cfg.lstm_depth);
    for k in 0..cfg.lstm_depth {
        let h = tape.slice(out, k * l..(k + 1) * l)?;
        let h = tape.reshape(h, &[1, l])?;
        let c0 = (cfg.lstm_depth + k) * l;
        let c = tape.slice(out, c0..c0 + l)?;
        let c = tape.reshape(c, &[1, l])?;
        layers.push((h, c));
    }
    Ok(BoundMemory { layers })
}

/// Parameter encoder: `omega` (length N) to a `1 × latent` LSTM input.
pub fn encode(tape: &mut Tape, params: &BoundParams, omega: Var) -> Result<Var> {
    let n = tape.value(omega).len();
    let expected = tape.shape(params.eta.w1)[0];
    if n != expected {
        return Err(Error::LengthMismatch {
            what: "encoder input",
            expected,
            actual: n,
        });
    }
    let row = tape.reshape(omega, &[1, n])?;
    params.eta.apply(tape, row)
}

/// One stacked-LSTM update. Returns the new memory and the top hidden state.
pub fn step(tape: &mut Tape, params: &BoundParams, memory: &BoundMemory, a: Var) -> Result<(BoundMemory, Var)> {
    if memory.layers.len() != params.theta.len() {
        return Err(Error::LengthMismatch {
            what: "memory depth",
            expected: params.theta.len(),
            actual: memory.layers.len(),
        });
    }
    let l = tape.shape(params.theta[0].0)[1] / 4;
    if tape.value(a).len() != l {
        return Err(Error::ShapeMismatch {
            op: "lstm step",
            lhs: vec![1, l],
            rhs: tape.shape(a).to_vec(),
        });
    }
    let mut x = tape.reshape(a, &[1, l])?;
    let mut layers = Vec::with_capacity(memory.layers.len());
    for (&(w, b), &(h_prev, c_prev)) in params.theta.iter().zip(&memory.layers) {
        let xh = tape.concat(&[x, h_prev])?;
        let z = tape.matmul(xh, w)?;
        let z = tape.add(z, b)?;
        let gate = |tape: &mut Tape, k: usize| -> Result<Var> {
            let s = tape.slice(z, k * l..(k + 1) * l)?;
            tape.reshape(s, &[1, l])
        };
        let i = gate(tape, 0)?;
        let i = tape.sigmoid(i)?;
        let f = gate(tape, 1)?;
        let f = tape.sigmoid(f)?;
        let g = gate(tape, 2)?;
        let g = tape.tanh(g)?;
        let o = gate(tape, 3)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        layers.push((h, c));
        x = h;
    }
    Ok((BoundMemory { layers }, x))
}

/// Decoder: `1 × latent` to a flat parameter vector of length N.
pub fn decode(tape: &mut Tape, params: &BoundParams, h: Var) -> Result<Var> {
    let out = params.xi.apply(tape, h)?;
    let n = tape.value(out).len();
    tape.reshape(out, &[n])
}

/// `raw + lambda * sum(history)`; empty history returns `raw` unchanged.
pub fn skip_combine<'a>(
    raw: &[f64],
    history: impl IntoIterator<Item = &'a [f64]>,
    lambda: f64,
    tau: usize,
) -> Result<Vec<f64>> {
    match window_sum(raw.len(), history, tau)? {
        None => Ok(raw.to_vec()),
        Some(sum) => Ok(raw.iter().zip(&sum).map(|(r, s)| r + lambda * s).collect()),
    }
}

fn window_sum<'a>(n: usize, history: impl IntoIterator<Item = &'a [f64]>, tau: usize) -> Result<Option<Vec<f64>>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0;
    for h in history {
        count += 1;
        if h.len() != n {
            return Err(Error::LengthMismatch {
                what: "skip-connection history entry",
                expected: n,
                actual: h.len(),
            });
        }
        match &mut sum {
            None => sum = Some(h.to_vec()),
            Some(s) => s.iter_mut().zip(h).for_each(|(s, v)| *s += v),
        }
    }
    if count > tau {
        return Err(Error::LengthMismatch {
            what: "skip-connection window",
            expected: tau,
            actual: count,
        });
    }
    Ok(sum)
}

/// Nodes produced by one [`generate_next`] call.
#[derive(Clone, Debug)]
pub struct Generated {
    /// Combined parameters (after the skip connection).
    pub omega: Var,
    /// Decoder output before the skip connection.
    pub raw: Var,
    pub latent: Var,
    pub memory: BoundMemory,
}

/// Trainable generator plus its recurrent position in the domain sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState {
    pub config: GeneratorConfig,
    pub params: GeneratorParams,
    /// Noise fed to the initial encoder.
    pub z: Tensor,
    /// Memory after the last completed domain, or `G_0(z)` before the first.
    pub memory: Memory,
    /// Most recent parameters last; never longer than `tau`.
    pub history: VecDeque<ParamVector>,
    pub prev_omega: Option<ParamVector>,
    /// Number of completed domains.
    pub step_index: usize,
}

impl GeneratorState {
    /// Fresh parameters, `z ~ N(0, 1)`, memory `G_0(z)` and an empty window.
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = GeneratorParams::init(&config, &mut rng::stream(seed, rng::STREAM_GENERATOR_INIT));
        let mut zr = rng::stream(seed, rng::STREAM_LATENT_NOISE);
        let z: Vec<f64> = (0..config.latent_dim).map(|_| StandardNormal.sample(&mut zr)).collect();
        let z = Tensor::matrix(1, config.latent_dim, z)?;
        Self::with_params(config, params, z)
    }

    pub fn with_params(config: GeneratorConfig, params: GeneratorParams, z: Tensor) -> Result<Self> {
        config.validate()?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let zv = tape.leaf(z.clone())?;
        let memory = initial_memory(&mut tape, &bound, zv, &config)?.value(&tape);
        Ok(Self {
            config,
            params,
            z,
            memory,
            history: VecDeque::new(),
            prev_omega: None,
            step_index: 0,
        })
    }

    /// Records the next generation step on `tape` using `bound` (which must
    /// come from `self.params.bind`). On the first step the memory comes from
    /// `G_0(z)` and the LSTM input is zero; afterwards both come from the
    /// previous domain as constants.
    pub fn generate_next(&self, tape: &mut Tape, bound: &BoundParams) -> Result<Generated> {
        let l = self.config.latent_dim;
        let (memory, a) = match &self.prev_omega {
            None => {
                let z = tape.leaf(self.z.clone())?;
                let m = initial_memory(tape, bound, z, &self.config)?;
                let a = tape.leaf(Tensor::zeros(&[1, l]))?;
                (m, a)
            }
            Some(prev) => {
                let m = self.memory.bind(tape)?;
                let w = tape.leaf(Tensor::vector(prev.values.clone()))?;
                let a = encode(tape, bound, w)?;
                (m, a)
            }
        };
        let (memory, latent) = step(tape, bound, &memory, a)?;
        let raw = decode(tape, bound, latent)?;
        let history = self.history.iter().map(|p| p.values.as_slice());
        let omega = match window_sum(self.config.target_param_count, history, self.config.tau)? {
            Some(sum) if self.config.skip_enabled() => {
                let lambda = self.config.lambda;
                let c = tape.leaf(Tensor::vector(sum.into_iter().map(|s| lambda * s).collect()))?;
                tape.add(raw, c)?
            }
            _ => raw,
        };
        Ok(Generated {
            omega,
            raw,
            latent,
            memory,
        })
    }

    /// Runs [`generate_next`](Self::generate_next) on a scratch tape and
    /// returns the values.
    pub fn generate(&self, schema_hash: u32) -> Result<(ParamVector, Memory)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let g = self.generate_next(&mut tape, &bound)?;
        let omega = ParamVector::new(schema_hash, tape.value(g.omega).data().to_vec());
        Ok((omega, g.memory.value(&tape)))
    }

    /// Commits a finished domain: `omega` becomes the newest window entry and
    /// the encoder input of the next step, `memory` the next starting memory.
    pub fn advance(&mut self, omega: ParamVector, memory: Memory) {
        if self.config.tau > 0 {
            if self.history.len() == self.config.tau {
                self.history.pop_front();
            }
            self.history.push_back(omega.clone());
        }
        self.prev_omega = Some(omega);
        self.memory = memory;
        self.step_index += 1;
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        w.write_all(&STATE_VERSION.to_le_bytes())?;
        let meta = StateMeta {
            config: self.config.clone(),
            step_index: self.step_index,
            history_hashes: self.history.iter().map(|p| p.schema_hash).collect(),
            prev_hash: self.prev_omega.as_ref().map(|p| p.schema_hash),
        };
        write_json(w, &meta)?;
        for t in self.params.tensors() {
            write_tensor(w, t)?;
        }
        write_tensor(w, &self.z)?;
        write_tensor(w, &self.memory.hidden)?;
        write_tensor(w, &self.memory.cell)?;
        for p in &self.history {
            write_tensor(w, &Tensor::vector(p.values.clone()))?;
        }
        if let Some(p) = &self.prev_omega {
            write_tensor(w, &Tensor::vector(p.values.clone()))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, STATE_MAGIC)?;
        let version = read_u32(r)?;
        if version != STATE_VERSION {
            return Err(Error::Format(format!("unsupported generator-state version {version}")));
        }
        let meta: StateMeta = read_json(r)?;
        meta.config.validate()?;
        if meta.history_hashes.len() > meta.config.tau {
            return Err(Error::Format("history longer than tau".into()));
        }
        let mut params = GeneratorParams::zeros(&meta.config);
        for t in params.tensors_mut() {
            let read = read_tensor(r)?;
            if read.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "generator tensor shape {:?}, expected {:?}",
                    read.shape(),
                    t.shape()
                )));
            }
            *t = read;
        }
        let l = meta.config.latent_dim;
        let depth = meta.config.lstm_depth;
        let z = expect_shape(read_tensor(r)?, &[1, l])?;
        let hidden = expect_shape(read_tensor(r)?, &[depth, l])?;
        let cell = expect_shape(read_tensor(r)?, &[depth, l])?;
        let n = meta.config.target_param_count;
        let mut history = VecDeque::new();
        for &h in &meta.history_hashes {
            let t = expect_shape(read_tensor(r)?, &[n])?;
            history.push_back(ParamVector::new(h, t.into_data()));
        }
        let prev_omega = match meta.prev_hash {
            Some(h) => Some(ParamVector::new(h, expect_shape(read_tensor(r)?, &[n])?.into_data())),
            None => None,
        };
        Ok(Self {
            config: meta.config,
            params,
            z,
            memory: Memory { hidden, cell },
            history,
            prev_omega,
            step_index: meta.step_index,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io::write_file(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_file_with(path, |r| Self::read_from(r))
    }
}

const STATE_MAGIC: &[u8; 4] = b"DRGS";
const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: GeneratorConfig,
    step_index: usize,
    history_hashes: Vec<u32>,
    prev_hash: Option<u32>,
}

fn expect_shape(t: Tensor, shape: &[usize]) -> Result<Tensor> {
    if t.shape() != shape {
        return Err(Error::Format(format!("tensor shape {:?}, expected {:?}", t.shape(), shape)));
    }
    Ok(t)
}
