use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian tanh-MLP policy with a separate value network of the same hidden
/// shape and a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    /// Layers as `[W (in x out, row-major), b]` from input to mean output.
    pub policy: Vec<f64>,
    /// Same layout with a single output.
    pub value: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Layer sizes from input to output.
fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(input);
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn init_layers<R: Rng + ?Sized>(sizes: &[usize], last_scale: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(sizes));
    let layers = sizes.len() - 1;
    for (l, w) in sizes.windows(2).enumerate() {
        let scale = if l + 1 == layers { last_scale } else { 1.0 } / (w[0] as f64).sqrt();
        for _ in 0..w[0] * w[1] {
            let z: f64 = StandardNormal.sample(rng);
            out.push(scale * z);
        }
        out.extend(std::iter::repeat_n(0.0, w[1]));
    }
    out
}

impl PolicyParams {
    /// All weights zero: mean action 0, value 0.
    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: &[usize], log_std: f64) -> Self {
        PolicyParams {
            obs_dim,
            act_dim,
            hidden: hidden.to_vec(),
            policy: vec![0.0; param_count(&sizes(obs_dim, hidden, act_dim))],
            value: vec![0.0; param_count(&sizes(obs_dim, hidden, 1))],
            log_std: vec![log_std; act_dim],
        }
    }

    /// Scaled Gaussian initialization; the mean head starts near zero.
    pub fn init<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], log_std: f64, rng: &mut R) -> Self {
        PolicyParams {
            obs_dim,
            act_dim,
            hidden: hidden.to_vec(),
            policy: init_layers(&sizes(obs_dim, hidden, act_dim), 0.01, rng),
            value: init_layers(&sizes(obs_dim, hidden, 1), 1.0, rng),
            log_std: vec![log_std; act_dim],
        }
    }

    pub fn policy_sizes(&self) -> Vec<usize> {
        sizes(self.obs_dim, &self.hidden, self.act_dim)
    }

    pub fn value_sizes(&self) -> Vec<usize> {
        sizes(self.obs_dim, &self.hidden, 1)
    }

    pub fn num_params(&self) -> usize {
        self.policy.len() + self.value.len() + self.log_std.len()
    }

    /// Concatenation of policy, value and log-std parameters.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.policy);
        v.extend_from_slice(&self.value);
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (p, rest) = flat.split_at(self.policy.len());
        let (v, s) = rest.split_at(self.value.len());
        self.policy.copy_from_slice(p);
        self.value.copy_from_slice(v);
        self.log_std.copy_from_slice(s);
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.policy.len() == param_count(&self.policy_sizes())
            && self.value.len() == param_count(&self.value_sizes())
            && self.log_std.len() == self.act_dim;
        if !ok {
            return Err(Error::config("policy parameter layout does not match its dimensions"));
        }
        if !self.flat().iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("policy parameters contain non-finite values"));
        }
        Ok(())
    }

    /// SHA-256 over the dimensions and the exact bit patterns of every parameter.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in [self.obs_dim, self.act_dim].iter().chain(&self.hidden) {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.flat() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Output of [`policy_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

fn layer_views<'a>(sizes: &[usize], params: &'a [f64]) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    let mut out = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for w in sizes.windows(2) {
        let (i, o) = (w[0], w[1]);
        let wv = ArrayView2::from_shape((i, o), &params[off..off + i * o]).expect("layer shape");
        off += i * o;
        let bv = ArrayView1::from(&params[off..off + o]);
        off += o;
        out.push((wv, bv));
    }
    out
}

/// Forward pass over a batch; returns the activations of every layer with
/// the input first and the linear output last.
pub(crate) fn mlp_forward(sizes: &[usize], params: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let layers = layer_views(sizes, params);
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_owned());
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = acts[l].dot(w);
        z += b;
        if l + 1 < layers.len() {
            z.mapv_inplace(f64::tanh);
        }
        acts.push(z);
    }
    acts
}

/// Accumulates the parameter gradient for an upstream gradient on the
/// output layer into `grad` (same layout as `params`).
pub(crate) fn mlp_backward(sizes: &[usize], params: &[f64], acts: &[Array2<f64>], d_out: Array2<f64>, grad: &mut [f64]) {
    let layers = layer_views(sizes, params);
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for w in sizes.windows(2) {
        offsets.push(off);
        off += w[0] * w[1] + w[1];
    }
    let mut delta = d_out;
    for l in (0..layers.len()).rev() {
        let (i, o) = (sizes[l], sizes[l + 1]);
        let gw = acts[l].t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        let base = offsets[l];
        for (g, v) in grad[base..base + i * o].iter_mut().zip(gw.iter()) {
            *g += v;
        }
        for (g, v) in grad[base + i * o..base + i * o + o].iter_mut().zip(gb.iter()) {
            *g += v;
        }
        if l > 0 {
            let mut prev = delta.dot(&layers[l].0.t());
            prev.zip_mut_with(&acts[l], |d, a| *d *= 1.0 - a * a);
            delta = prev;
        }
    }
}

/// Mean action, log standard deviation and value for one observation.
pub fn policy_forward(params: &PolicyParams, obs: &[f64]) -> Result<PolicyOutput> {
    if obs.len() != params.obs_dim {
        return Err(Error::usage(format!(
            "observation has {} entries, policy expects {}",
            obs.len(),
            params.obs_dim
        )));
    }
    let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
    let mean = mlp_forward(&params.policy_sizes(), &params.policy, x).pop().expect("output");
    let value = mlp_forward(&params.value_sizes(), &params.value, x).pop().expect("output");
    Ok(PolicyOutput {
        mean: mean.into_raw_vec_and_offset().0,
        log_std: params.log_std.clone(),
        value: value[[0, 0]],
    })
}

/// Batched mean actions (rows) and values.
pub fn policy_forward_batch(params: &PolicyParams, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    if obs.ncols() != params.obs_dim {
        return Err(Error::usage(format!(
            "observation has {} entries, policy expects {}",
            obs.ncols(),
            params.obs_dim
        )));
    }
    let mean = mlp_forward(&params.policy_sizes(), &params.policy, obs).pop().expect("output");
    let value = mlp_forward(&params.value_sizes(), &params.value, obs).pop().expect("output");
    Ok((mean, value.column(0).to_owned()))
}

/// Diagonal Gaussian log density.
pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LOG_2PI
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (1.0 + LOG_2PI)).sum()
}

/// Draws `mean + exp(log_std) * eps`.
pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + s.exp() * z
        })
        .collect()
}
