//! Finite-difference sweeps shared by the gradient tests and the acceptance
//! run.

use super::{pick_coords, reference_forward, uniform_vec, worst_error};
use drain_core::generator::{self, GeneratorState};
use drain_core::{Activation, GeneratorConfig, GeneratorParams, LayerSpec, Memory, NetSchema, ParamVector, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOL: f64 = 1e-5;
pub const CHAIN_TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 100;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> drain_core::Result<Var>>;

struct OpCase {
    shapes: Vec<Vec<usize>>,
    inputs: Vec<f64>,
    build: Build,
}

fn size(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn op_case(name: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let r = rng.random_range(1..4);
    let c = rng.random_range(1..5);
    let rc = vec![r, c];
    let mut shapes = vec![rc.clone()];
    let build: Build = match name {
        "add" => {
            shapes.push(rc.clone());
            Box::new(|t, v| t.add(v[0], v[1]))
        }
        "sub" => {
            shapes.push(rc.clone());
            Box::new(|t, v| t.sub(v[0], v[1]))
        }
        "mul" => {
            shapes.push(rc.clone());
            Box::new(|t, v| t.mul(v[0], v[1]))
        }
        "matmul" => {
            shapes.push(vec![c, rng.random_range(1..4)]);
            Box::new(|t, v| t.matmul(v[0], v[1]))
        }
        "scale" => {
            let k = rng.random_range(-2.0..2.0);
            Box::new(move |t, v| t.scale(v[0], k))
        }
        "sum" => Box::new(|t, v| t.sum(v[0])),
        "mean" => Box::new(|t, v| t.mean(v[0])),
        "relu" => Box::new(|t, v| t.relu(v[0])),
        "tanh" => Box::new(|t, v| t.tanh(v[0])),
        "sigmoid" => Box::new(|t, v| t.sigmoid(v[0])),
        "concat" => {
            shapes.push(vec![r, rng.random_range(1..4)]);
            shapes.push(vec![r, rng.random_range(1..4)]);
            Box::new(|t, v| t.concat(v))
        }
        "slice" => {
            let n = r * c;
            let lo = rng.random_range(0..n);
            let hi = rng.random_range(lo + 1..=n);
            Box::new(move |t, v| t.slice(v[0], lo..hi))
        }
        "reshape" => Box::new(move |t, v| t.reshape(v[0], &[c, r])),
        "bce" => {
            let labels: Vec<f64> = (0..r * c).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let labels = Tensor::new(rc.clone(), labels).unwrap();
            Box::new(move |t, v| t.loss_bce(v[0], &labels))
        }
        "mse" => {
            let target = Tensor::new(rc.clone(), uniform_vec(rng, r * c, 2.0)).unwrap();
            Box::new(move |t, v| t.loss_mse(v[0], &target))
        }
        other => panic!("unknown op {other}"),
    };
    let total: usize = shapes.iter().map(|s| size(s)).sum();
    let inputs: Vec<f64> = match name {
        "bce" => (0..total).map(|_| rng.random_range(0.05..0.95)).collect(),
        // keep away from the kink
        "relu" => (0..total)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..1.5);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
        _ => uniform_vec(rng, total, 1.5),
    };
    OpCase { shapes, inputs, build }
}

/// Records the case with a random linear read-out so every output element
/// contributes. Returns the loss and, when asked, the input gradients.
fn run_op(case: &OpCase, x: &[f64], readout: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let mut off = 0;
    let mut leaves = Vec::new();
    for s in &case.shapes {
        let n = size(s);
        leaves.push(tape.leaf(Tensor::new(s.clone(), x[off..off + n].to_vec()).unwrap()).unwrap());
        off += n;
    }
    let out = (case.build)(&mut tape, &leaves).unwrap();
    let root = if tape.value(out).len() == 1 && readout.is_empty() {
        out
    } else {
        let shape = tape.shape(out).to_vec();
        let r = tape.leaf(Tensor::new(shape, readout.to_vec()).unwrap()).unwrap();
        let m = tape.mul(out, r).unwrap();
        tape.sum(m).unwrap()
    };
    let value = tape.value(root).item();
    if !want_grad {
        return (value, Vec::new());
    }
    let grads = tape.backward(root).unwrap();
    let g = leaves.iter().flat_map(|&v| grads.get(v).into_data()).collect();
    (value, g)
}

pub const OPS: [&str; 15] = [
        "add", "sub", "mul", "matmul", "scale", "sum", "mean", "relu", "tanh", "sigmoid", "concat", "slice", "reshape",
    "bce", "mse",
];

/// Worst relative error per primitive op over `INSTANCES` random cases.
pub fn op_sweep() -> Vec<(&'static str, f64)> {
    let mut report = Vec::new();
    for name in OPS {
        let mut worst: f64 = 0.0;
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let case = op_case(name, &mut rng);
            let scalar_out = matches!(name, "sum" | "mean" | "bce" | "mse");
            let readout = if scalar_out {
                Vec::new()
            } else {
                let mut tape = Tape::new();
                let mut off = 0;
                let mut leaves = Vec::new();
                for s in &case.shapes {
                    let n = size(s);
                    leaves.push(tape.leaf(Tensor::new(s.clone(), case.inputs[off..off + n].to_vec()).unwrap()).unwrap());
                    off += n;
                }
                let out = (case.build)(&mut tape, &leaves).unwrap();
                uniform_vec(&mut rng, tape.value(out).len(), 1.0)
            };
            let (_, analytic) = run_op(&case, &case.inputs, &readout, true);
            let coords: Vec<usize> = (0..case.inputs.len()).collect();
            let err = worst_error(&case.inputs, &analytic, &coords, |x| run_op(&case, x, &readout, false).0);
            worst = worst.max(err);
        }
        report.push((name, worst));
    }
    report
}

fn random_schema(rng: &mut ChaCha8Rng) -> NetSchema {
    let hidden = [Activation::Relu, Activation::Tanh, Activation::Identity];
    let depth = rng.random_range(1..4);
    let mut layers = Vec::new();
    for _ in 0..depth - 1 {
        let a = hidden[rng.random_range(0..3)];
        layers.push(LayerSpec::new(rng.random_range(1..5), a, rng.random_bool(0.8)));
    }
    let out = if rng.random_bool(0.5) {
        Activation::Sigmoid
    } else {
        Activation::Identity
    };
    layers.push(LayerSpec::new(1, out, rng.random_bool(0.8)));
    let suffix = rng.random_range(1..=depth);
    NetSchema::new(rng.random_range(1..4), layers, suffix).unwrap()
}

fn net_loss(schema: &NetSchema, flat: &[f64], x: &Tensor, y: &Tensor, want_grad: bool) -> (f64, Vec<f64>) {
    let np = schema.prefix_param_count();
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::vector(flat[np..].to_vec())).unwrap();
    let p = (np > 0).then(|| tape.leaf(Tensor::vector(flat[..np].to_vec())).unwrap());
    let pred = schema.forward(&mut tape, w, p, x).unwrap();
    let loss = match schema.output_activation() {
        Activation::Sigmoid => tape.loss_bce(pred, y).unwrap(),
        _ => tape.loss_mse(pred, y).unwrap(),
    };
    let value = tape.value(loss).item();
    if !want_grad {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    let mut out = p.map(|p| g.get(p).into_data()).unwrap_or_default();
    out.extend(g.get(w).into_data());
    (value, out)
}

pub struct NetSweep {
    pub worst_grad: f64,
    /// Largest forward-value disagreement with the reference pass.
    pub worst_value: f64,
}

/// `INSTANCES` random target networks; instances within 1e-3 of a relu kink
/// are redrawn.
pub fn target_net_sweep() -> NetSweep {
    let mut sweep = NetSweep { worst_grad: 0.0, worst_value: 0.0 };
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < INSTANCES {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let schema = random_schema(&mut rng);
        let n = rng.random_range(1..6);
        let xs = uniform_vec(&mut rng, n * schema.input_dim, 2.0);
        let flat = uniform_vec(&mut rng, schema.prefix_param_count() + schema.param_count(), 1.0);
        let np = schema.prefix_param_count();
        let (reference, margin) = reference_forward(&schema, &flat[..np], &flat[np..], &xs, n);
        if margin < 1e-3 {
            // too close to a relu kink for a finite-difference comparison
            continue;
        }
        let x = Tensor::matrix(n, schema.input_dim, xs).unwrap();
        let predicted = schema
            .predict(&flat[..np], &ParamVector::new(schema.hash32(), flat[np..].to_vec()), &x)
            .unwrap();
        for (a, b) in predicted.data().iter().zip(&reference) {
            sweep.worst_value = sweep.worst_value.max((a - b).abs() / (1.0 + b.abs()));
        }
        let y = match schema.output_activation() {
            Activation::Sigmoid => (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
            _ => uniform_vec(&mut rng, n, 2.0),
        };
        let y = Tensor::matrix(n, 1, y).unwrap();
        let (_, analytic) = net_loss(&schema, &flat, &x, &y, true);
        let coords: Vec<usize> = (0..flat.len()).collect();
        let err = worst_error(&flat, &analytic, &coords, |v| net_loss(&schema, v, &x, &y, false).0);
        sweep.worst_grad = sweep.worst_grad.max(err);
        checked += 1;
    }
    sweep
}

pub fn small_generator(rng: &mut ChaCha8Rng, target: usize) -> GeneratorConfig {
    let mut cfg = GeneratorConfig::new(target);
    cfg.latent_dim = rng.random_range(1..5);
    cfg.lstm_depth = rng.random_range(1..4);
    cfg.init_hidden = rng.random_range(1..5);
    cfg.encoder_hidden = rng.random_range(1..5);
    cfg.decoder_hidden = rng.random_range(1..5);
    cfg.tau = rng.random_range(0..3);
    cfg.lambda = rng.random_range(0.0..1.0);
    cfg
}

fn flatten_tensors(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn load_tensors(ts: Vec<&mut Tensor>, flat: &[f64]) -> usize {
    let mut off = 0;
    for t in ts {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    off
}

/// Loss of one LSTM step: `r_h · h_top + Σ_k r_k · c_k`. The flat input is
/// the LSTM weights, then hidden and cell memory, then the input row.
fn lstm_loss(params: &GeneratorParams, depth: usize, latent: usize, flat: &[f64], readout: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
    let mut params = params.clone();
    let mut off = 0;
    for cell in &mut params.theta {
        off += load_tensors(vec![&mut cell.w, &mut cell.b], &flat[off..]);
    }
    let dl = depth * latent;
    let memory = Memory {
        hidden: Tensor::matrix(depth, latent, flat[off..off + dl].to_vec()).unwrap(),
        cell: Tensor::matrix(depth, latent, flat[off + dl..off + 2 * dl].to_vec()).unwrap(),
    };
    off += 2 * dl;
    let a_val = Tensor::matrix(1, latent, flat[off..off + latent].to_vec()).unwrap();

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let mem = memory.bind(&mut tape).unwrap();
    let a = tape.leaf(a_val).unwrap();
    let (next, h) = generator::step(&mut tape, &bound, &mem, a).unwrap();
    let mut terms = vec![h];
    terms.extend(next.layers.iter().map(|&(_, c)| c));
    let mut root: Option<Var> = None;
    for (k, v) in terms.into_iter().enumerate() {
        let r = tape
            .leaf(Tensor::matrix(1, latent, readout[k * latent..(k + 1) * latent].to_vec()).unwrap())
            .unwrap();
        let m = tape.mul(v, r).unwrap();
        let s = tape.sum(m).unwrap();
        root = Some(match root {
            Some(acc) => tape.add(acc, s).unwrap(),
            None => s,
        });
    }
    let root = root.unwrap();
    let value = tape.value(root).item();
    if !want_grad {
        return (value, Vec::new());
    }
    let g = tape.backward(root).unwrap();
    let mut out = Vec::new();
    for &(w, b) in &bound.theta {
        out.extend(g.get(w).into_data());
        out.extend(g.get(b).into_data());
    }
    for part in 0..2 {
        for &(h, c) in &mem.layers {
            out.extend(g.get(if part == 0 { h } else { c }).into_data());
        }
    }
    out.extend(g.get(a).into_data());
    (value, out)
}

pub fn lstm_sweep() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let cfg = small_generator(&mut rng, 3);
        let (depth, latent) = (cfg.lstm_depth, cfg.latent_dim);
        let mut params = GeneratorParams::init(&cfg, &mut rng);
        // larger weights than the default init so the gates leave their linear range
        for cell in &mut params.theta {
            for v in cell.w.data_mut().iter_mut().chain(cell.b.data_mut()) {
                *v = rng.random_range(-1.5..1.5);
            }
        }
        let mut flat = Vec::new();
        for cell in &params.theta {
            flat.extend(flatten_tensors(&[&cell.w, &cell.b]));
        }
        flat.extend(uniform_vec(&mut rng, 2 * depth * latent + latent, 1.5));
        let readout = uniform_vec(&mut rng, (depth + 1) * latent, 1.0);
        let (_, analytic) = lstm_loss(&params, depth, latent, &flat, &readout, true);
        let coords: Vec<usize> = (0..flat.len()).collect();
        let err = worst_error(&flat, &analytic, &coords, |v| lstm_loss(&params, depth, latent, v, &readout, false).0);
        worst = worst.max(err);
    }
    worst
}

fn chain_loss(
    state: &GeneratorState,
    schema: &NetSchema,
    flat: &[f64],
    x: &Tensor,
    y: &Tensor,
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let mut state = state.clone();
    let used = load_tensors(state.params.tensors_mut(), flat);
    let prefix = &flat[used..];
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape).unwrap();
    let p = (!prefix.is_empty()).then(|| tape.leaf(Tensor::vector(prefix.to_vec())).unwrap());
    let generated = state.generate_next(&mut tape, &bound).unwrap();
    let pred = schema.forward(&mut tape, generated.omega, p, x).unwrap();
    let loss = tape.loss_bce(pred, y).unwrap();
    let value = tape.value(loss).item();
    if !want_grad {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    let mut out: Vec<f64> = bound.vars().iter().flat_map(|&v| g.get(v).into_data()).collect();
    if let Some(p) = p {
        out.extend(g.get(p).into_data());
    }
    (value, out)
}

/// Generator parameters and trainable prefix through generate, forward and
/// BCE, after 0 to 2 advance steps.
pub fn chain_sweep() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let layers = vec![
            LayerSpec::new(rng.random_range(1..4), Activation::Tanh, true),
            LayerSpec::new(1, Activation::Sigmoid, true),
        ];
        let schema = NetSchema::new(2, layers, rng.random_range(1..3)).unwrap();
        let cfg = small_generator(&mut rng, schema.param_count());
        let mut state = GeneratorState::init(cfg.clone(), seed).unwrap();
        // later steps go through the encoder and the skip window
        let steps = rng.random_range(0..3);
        for _ in 0..steps {
            let omega = ParamVector::new(schema.hash32(), uniform_vec(&mut rng, schema.param_count(), 1.0));
            let memory = Memory {
                hidden: Tensor::matrix(cfg.lstm_depth, cfg.latent_dim, uniform_vec(&mut rng, cfg.lstm_depth * cfg.latent_dim, 0.9)).unwrap(),
                cell: Tensor::matrix(cfg.lstm_depth, cfg.latent_dim, uniform_vec(&mut rng, cfg.lstm_depth * cfg.latent_dim, 1.5)).unwrap(),
            };
            state.advance(omega, memory);
        }
        let n = rng.random_range(1..6);
        let x = Tensor::matrix(n, 2, uniform_vec(&mut rng, 2 * n, 2.0)).unwrap();
        let y = Tensor::matrix(n, 1, (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect()).unwrap();
        let mut flat = flatten_tensors(&state.params.tensors());
        flat.extend(uniform_vec(&mut rng, schema.prefix_param_count(), 1.0));
        let (_, analytic) = chain_loss(&state, &schema, &flat, &x, &y, true);
        let coords = pick_coords(&mut rng, flat.len(), 60);
        let err = worst_error(&flat, &analytic, &coords, |v| chain_loss(&state, &schema, v, &x, &y, false).0);
        worst = worst.max(err);
    }
    worst
}

