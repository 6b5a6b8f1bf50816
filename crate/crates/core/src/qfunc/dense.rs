//! Tanh MLP. Per layer the flat parameter vector holds the weight matrix
//! (row-major, `out × in`) followed by the bias.

use crate::rng;
use crate::types::State;

pub(super) fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(super) fn init_params(layers: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    let mut params = Vec::with_capacity(param_count(layers));
    for w in layers.windows(2) {
        let s = 1.0 / (w[0] as f64).sqrt();
        for _ in 0..(w[0] * w[1] + w[1]) {
            params.push(super::uniform(&mut rng, s));
        }
    }
    params
}

/// Positions scaled into `[-1, 1]`, grasp flag mapped to ±1.
pub(super) fn encode(s: &State, input_scale: f64) -> [f64; 3] {
    [
        s.x() / input_scale,
        s.y() / input_scale,
        if s.grasped() { 1.0 } else { -1.0 },
    ]
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Activations of every layer, input first; hidden layers are post-tanh.
fn activations(layers: &[usize], params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(input.to_vec());
    let mut offset = 0;
    let last = layers.len() - 2;
    for (l, w) in layers.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut z = vec![0.0; n_out];
        affine(weights, bias, &acts[l], &mut z);
        if l < last {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    acts
}

pub(super) fn forward(layers: &[usize], params: &[f64], input: &[f64], out: &mut [f64]) {
    let acts = activations(layers, params, input);
    out.copy_from_slice(acts.last().expect("output layer"));
}

pub(super) fn backward(layers: &[usize], params: &[f64], input: &[f64], dq: &[f64], grad: &mut [f64]) {
    let acts = activations(layers, params, input);
    let mut offsets = Vec::with_capacity(layers.len() - 1);
    let mut offset = 0;
    for w in layers.windows(2) {
        offsets.push(offset);
        offset += w[0] * w[1] + w[1];
    }
    let mut delta = dq.to_vec();
    for l in (0..layers.len() - 1).rev() {
        let (n_in, n_out) = (layers[l], layers[l + 1]);
        let off = offsets[l];
        let a_prev = &acts[l];
        {
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a_prev) {
                    *g += d * a;
                }
            }
        }
        if l == 0 {
            break;
        }
        let weights = &params[off..off + n_in * n_out];
        let mut next = vec![0.0; n_in];
        for (o, d) in delta.iter().enumerate() {
            for (n, w) in next.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                *n += d * w;
            }
        }
        for (n, a) in next.iter_mut().zip(a_prev) {
            *n *= 1.0 - a * a;
        }
        delta = next;
    }
}
