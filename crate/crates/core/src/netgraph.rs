//! The target network: a fixed dense topology whose parameters arrive as a
//! flat vector.
//!
//! Parameter layout is layer-major. Each layer stores its weight matrix of
//! shape `fan_in × width` in row-major order, followed by its bias (when the
//! layer has one). The first `layers.len() - generated_suffix_len` layers form
//! the *prefix*, held as ordinary trainable parameters; the remaining layers
//! form the generated suffix whose parameters live in a [`ParamVector`].

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{read_f64s, read_u32, read_u64, write_f64s};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation, bias: bool) -> Self {
        Self {
            width,
            activation,
            bias,
        }
    }
}

/// Topology of the target network. The last entry of `layers` is the output
/// layer; its activation must be `sigmoid` or `identity`, hidden layers use
/// `relu`, `tanh` or `identity`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSchema {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub generated_suffix_len: usize,
}

/// Weight (`fan_in × width`) and optional bias of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl NetSchema {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>, generated_suffix_len: usize) -> Result<Self> {
        let schema = Self {
            input_dim,
            layers,
            generated_suffix_len,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Hidden layers of equal activation followed by a single output layer,
    /// every layer generated.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output_width: usize,
        output_activation: Activation,
        bias: bool,
    ) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec::new(w, hidden_activation, bias))
            .collect();
        layers.push(LayerSpec::new(output_width, output_activation, bias));
        let n = layers.len();
        Self::new(input_dim, layers, n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchema(m));
        if self.input_dim == 0 {
            return bad("input_dim must be at least 1".into());
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        if !(1..=self.layers.len()).contains(&self.generated_suffix_len) {
            return bad(format!(
                "generated_suffix_len {} outside [1, {}]",
                self.generated_suffix_len,
                self.layers.len()
            ));
        }
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return bad(format!("layer {i} has zero width"));
            }
            let ok = if i == last {
                matches!(l.activation, Activation::Sigmoid | Activation::Identity)
            } else {
                l.activation != Activation::Sigmoid
            };
            if !ok {
                return bad(format!("layer {i}: activation {:?} not allowed here", l.activation));
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().map_or(Activation::Identity, |l| l.activation)
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layers[layer - 1].width
        }
    }

    fn layer_size(&self, layer: usize) -> usize {
        let l = &self.layers[layer];
        self.fan_in(layer) * l.width + if l.bias { l.width } else { 0 }
    }

    pub fn prefix_len(&self) -> usize {
        self.layers.len() - self.generated_suffix_len
    }

    /// Number of generated (suffix) parameters.
    pub fn param_count(&self) -> usize {
        (self.prefix_len()..self.layers.len()).map(|i| self.layer_size(i)).sum()
    }

    /// Number of ordinary trainable (prefix) parameters.
    pub fn prefix_param_count(&self) -> usize {
        (0..self.prefix_len()).map(|i| self.layer_size(i)).sum()
    }

    /// Layer indices covered by the prefix or the suffix.
    fn span(&self, generated: bool) -> Range<usize> {
        if generated {
            self.prefix_len()..self.layers.len()
        } else {
            0..self.prefix_len()
        }
    }

    /// Stable 32-bit FNV-1a hash of the topology.
    pub fn hash32(&self) -> u32 {
        let mut desc = format!("in={};suffix={};", self.input_dim, self.generated_suffix_len);
        for l in &self.layers {
            desc.push_str(&format!("{}:{:?}:{};", l.width, l.activation, l.bias));
        }
        let mut h: u32 = 0x811c_9dc5;
        for b in desc.bytes() {
            h ^= u32::from(b);
            h = h.wrapping_mul(0x0100_0193);
        }
        h
    }

    fn flatten_span(&self, generated: bool, layers: &[LayerParams]) -> Result<Vec<f64>> {
        let span = self.span(generated);
        if layers.len() != span.len() {
            return Err(Error::LengthMismatch {
                what: "layer list",
                expected: span.len(),
                actual: layers.len(),
            });
        }
        let mut out = Vec::with_capacity(span.clone().map(|i| self.layer_size(i)).sum());
        for (i, p) in span.zip(layers) {
            let spec = &self.layers[i];
            let wshape = [self.fan_in(i), spec.width];
            if p.weight.shape() != wshape {
                return Err(Error::ShapeMismatch {
                    op: "flatten",
                    lhs: wshape.to_vec(),
                    rhs: p.weight.shape().to_vec(),
                });
            }
            out.extend_from_slice(p.weight.data());
            match (&p.bias, spec.bias) {
                (Some(b), true) if b.len() == spec.width => out.extend_from_slice(b.data()),
                (None, false) => {}
                (b, _) => {
                    return Err(Error::ShapeMismatch {
                        op: "flatten",
                        lhs: vec![if spec.bias { spec.width } else { 0 }],
                        rhs: vec![b.as_ref().map_or(0, |b| b.len())],
                    })
                }
            }
        }
        Ok(out)
    }

    fn unflatten_span(&self, generated: bool, values: &[f64]) -> Result<Vec<LayerParams>> {
        let span = self.span(generated);
        let expected: usize = span.clone().map(|i| self.layer_size(i)).sum();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: if generated { "parameter vector" } else { "prefix parameters" },
                expected,
                actual: values.len(),
            });
        }
        let mut offset = 0;
        let mut out = Vec::with_capacity(span.len());
        for i in span {
            let spec = &self.layers[i];
            let fan_in = self.fan_in(i);
            let wlen = fan_in * spec.width;
            let weight = Tensor::matrix(fan_in, spec.width, values[offset..offset + wlen].to_vec())?;
            offset += wlen;
            let bias = if spec.bias {
                let b = Tensor::vector(values[offset..offset + spec.width].to_vec());
                offset += spec.width;
                Some(b)
            } else {
                None
            };
            out.push(LayerParams { weight, bias });
        }
        Ok(out)
    }

    /// Flattens the generated-suffix layers into a [`ParamVector`].
    pub fn flatten(&self, layers: &[LayerParams]) -> Result<ParamVector> {
        let values = self.flatten_span(true, layers)?;
        Ok(ParamVector::new(self.hash32(), values))
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<LayerParams>> {
        self.unflatten_span(true, &params.values)
    }

    pub fn flatten_prefix(&self, layers: &[LayerParams]) -> Result<Vec<f64>> {
        self.flatten_span(false, layers)
    }

    pub fn unflatten_prefix(&self, values: &[f64]) -> Result<Vec<LayerParams>> {
        self.unflatten_span(false, values)
    }

    /// Fresh parameters drawn uniformly in `±1/sqrt(fan_in)`, prefix first
    /// then suffix.
    pub fn init_params(&self, rng: &mut impl rand::Rng) -> (Vec<f64>, ParamVector) {
        let mut draw = |span: Range<usize>| {
            let mut v = Vec::new();
            for i in span {
                let fan_in = self.fan_in(i);
                v.extend(crate::rng::fan_in_uniform(rng, fan_in, self.layer_size(i)));
            }
            v
        };
        let prefix = draw(self.span(false));
        let suffix = draw(self.span(true));
        (prefix, ParamVector::new(self.hash32(), suffix))
    }

    /// Differentiable forward pass.
    ///
    /// `omega` is a flat vector of length [`param_count`](Self::param_count)
    /// recorded on `tape`; `prefix` holds the prefix parameters (it may be
    /// `None` only when the prefix is empty). Returns an `n × output_width`
    /// prediction node.
    pub fn forward(&self, tape: &mut Tape, omega: Var, prefix: Option<Var>, x: &Tensor) -> Result<Var> {
        if tape.value(omega).len() != self.param_count() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: self.param_count(),
                actual: tape.value(omega).len(),
            });
        }
        let prefix_count = self.prefix_param_count();
        match prefix {
            Some(p) if tape.value(p).len() != prefix_count => {
                return Err(Error::LengthMismatch {
                    what: "prefix parameters",
                    expected: prefix_count,
                    actual: tape.value(p).len(),
                })
            }
            None if prefix_count > 0 => {
                return Err(Error::LengthMismatch {
                    what: "prefix parameters",
                    expected: prefix_count,
                    actual: 0,
                })
            }
            _ => {}
        }
        if x.shape().len() != 2 || x.shape()[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: vec![x.rows(), self.input_dim],
                rhs: x.shape().to_vec(),
            });
        }

        let n = x.rows();
        let mut h = tape.leaf(x.clone())?;
        let ones = tape.leaf(Tensor::full(&[n, 1], 1.0))?;
        let mut offset = 0;
        for (i, spec) in self.layers.iter().enumerate() {
            if i == self.prefix_len() {
                offset = 0;
            }
            let source = if i < self.prefix_len() {
                prefix.expect("checked above")
            } else {
                omega
            };
            let fan_in = self.fan_in(i);
            let wlen = fan_in * spec.width;
            let w = tape.slice(source, offset..offset + wlen)?;
            let w = tape.reshape(w, &[fan_in, spec.width])?;
            offset += wlen;
            let mut z = tape.matmul(h, w)?;
            if spec.bias {
                let b = tape.slice(source, offset..offset + spec.width)?;
                let b = tape.reshape(b, &[1, spec.width])?;
                offset += spec.width;
                let bb = tape.matmul(ones, b)?;
                z = tape.add(z, bb)?;
            }
            h = match spec.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::Tanh => tape.tanh(z)?,
                Activation::Sigmoid => tape.sigmoid(z)?,
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Non-differentiable convenience wrapper around [`forward`](Self::forward).
    pub fn predict(&self, prefix: &[f64], omega: &ParamVector, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(omega.values.clone()))?;
        let p = if prefix.is_empty() {
            None
        } else {
            Some(tape.leaf(Tensor::vector(prefix.to_vec()))?)
        };
        let out = self.forward(&mut tape, w, p, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Generated parameters of the target network at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub schema_hash: u32,
}

const PARAM_MAGIC: &[u8; 4] = b"DRPV";

impl ParamVector {
    pub fn new(schema_hash: u32, values: Vec<f64>) -> Self {
        Self { values, schema_hash }
    }

    pub fn zeros(schema: &NetSchema) -> Self {
        Self::new(schema.hash32(), vec![0.0; schema.param_count()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, schema: &NetSchema) -> Result<()> {
        if self.values.len() != schema.param_count() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: schema.param_count(),
                actual: self.values.len(),
            });
        }
        if self.schema_hash != schema.hash32() {
            return Err(Error::Format(format!(
                "parameter vector bound to schema {:08x}, expected {:08x}",
                self.schema_hash,
                schema.hash32()
            )));
        }
        Ok(())
    }

    /// 16-byte header (`DRPV`, schema hash as u32, length as u64) followed
    /// by the values, all little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&self.schema_hash.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        write_f64s(w, &self.values)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAM_MAGIC {
            return Err(Error::Format(format!("bad parameter-vector magic {magic:?}")));
        }
        let schema_hash = read_u32(r)?;
        let len = read_u64(r)? as usize;
        let values = read_f64s(r, len)?;
        Ok(Self { values, schema_hash })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.values.len());
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
