#![allow(dead_code)]

use drain_core::{Activation, NetSchema};
use rand::Rng;

pub mod gradcheck;

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Central difference of `f` along coordinate `k` of `x`.
pub fn central_diff(x: &[f64], k: usize, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += FD_STEP;
    let up = f(&xp);
    xp[k] = x[k] - FD_STEP;
    let down = f(&xp);
    (up - down) / (2.0 * FD_STEP)
}

/// Compares `analytic` against central differences on `coords`; returns the
/// worst relative error.
pub fn worst_error(x: &[f64], analytic: &[f64], coords: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    coords
        .iter()
        .map(|&k| rel_err(analytic[k], central_diff(x, k, &mut f)))
        .fold(0.0, f64::max)
}

/// Up to `max` distinct coordinates out of `n`, all of them when `n <= max`.
pub fn pick_coords(rng: &mut impl Rng, n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, max).into_vec()
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
        Activation::Identity => z,
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

/// Plain-loop forward pass that reads the layer-major layout directly.
/// Returns the outputs and the smallest |pre-activation| seen by a relu.
pub fn reference_forward(schema: &NetSchema, prefix: &[f64], omega: &[f64], x: &[f64], n: usize) -> (Vec<f64>, f64) {
    let split = schema.layers.len() - schema.generated_suffix_len;
    let mut cur: Vec<f64> = x.to_vec();
    let mut fan_in = schema.input_dim;
    let mut relu_margin = f64::INFINITY;
    let (mut po, mut oo) = (0usize, 0usize);
    for (li, spec) in schema.layers.iter().enumerate() {
        let (src, off) = if li < split { (prefix, &mut po) } else { (omega, &mut oo) };
        let w = &src[*off..*off + fan_in * spec.width];
        *off += fan_in * spec.width;
        let b = if spec.bias {
            let b = &src[*off..*off + spec.width];
            *off += spec.width;
            Some(b)
        } else {
            None
        };
        let mut next = vec![0.0; n * spec.width];
        for r in 0..n {
            for c in 0..spec.width {
                let mut z = b.map_or(0.0, |b| b[c]);
                for p in 0..fan_in {
                    z += cur[r * fan_in + p] * w[p * spec.width + c];
                }
                if spec.activation == Activation::Relu {
                    relu_margin = relu_margin.min(z.abs());
                }
                next[r * spec.width + c] = act(spec.activation, z);
            }
        }
        cur = next;
        fan_in = spec.width;
    }
    assert_eq!(po, prefix.len());
    assert_eq!(oo, omega.len());
    (cur, relu_margin)
}
