//! Trainable layers, parameter storage and the optimizer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Named trainable tensors, iterated in lexicographic path order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts (or replaces) a parameter; it is always marked trainable.
    pub fn insert(&mut self, path: impl Into<String>, mut tensor: Tensor) {
        tensor.set_requires_grad(true);
        self.entries.insert(path.into(), tensor);
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Adds `{prefix}.weight` (`fan_in × fan_out`, uniform in ±1/√fan_in) and a
    /// zero `{prefix}.bias` (`1 × fan_out`).
    pub fn init_dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
        self.insert(
            format!("{prefix}.weight"),
            uniform(&[fan_in, fan_out], fan_in, rng),
        );
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[1, fan_out]));
    }

    /// Adds the four tensors of a gated recurrent cell under `prefix`.
    pub fn init_gru(&mut self, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
        self.insert(
            format!("{prefix}.w_input"),
            uniform(&[input, 3 * hidden], input, rng),
        );
        self.insert(
            format!("{prefix}.w_hidden"),
            uniform(&[hidden, 3 * hidden], hidden, rng),
        );
        self.insert(format!("{prefix}.b_input"), Tensor::zeros(&[1, 3 * hidden]));
        self.insert(
            format!("{prefix}.b_hidden"),
            Tensor::zeros(&[1, 3 * hidden]),
        );
    }

    /// Sets every value to zero.
    pub fn fill_zero(&mut self) {
        for t in self.entries.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, true)
    }

    /// Registers every parameter as a constant of `g` (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(path, t)| {
                let mut leaf = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
                leaf.set_requires_grad(trainable);
                (path.clone(), g.tensor(leaf))
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients a backward pass left on `bound` leaves into this set.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) -> Result<()> {
        for (path, t) in self.entries.iter_mut() {
            let var = bound.get(path)?;
            match g.grad(var) {
                Some(grad) => t.accumulate_grad(grad),
                None => return Err(Error::MissingGrad(path.clone())),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.clear_grad();
        }
    }

    /// Euclidean norm of all gradients together (missing buffers count as zero).
    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(
            self.entries
                .values()
                .filter_map(Tensor::grad)
                .flat_map(|g| g.iter())
                .map(|x| x * x)
                .sum(),
        )
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm {
            let scale = max_norm / (norm + 1e-6);
            for t in self.entries.values_mut() {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|x| *x *= scale);
                }
            }
        }
        norm
    }

    pub fn same_structure(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((pa, ta), (pb, tb))| pa == pb && ta.shape() == tb.shape())
    }
}

/// Copies every value of `src` into `dst`. Both must have identical paths and shapes.
pub fn hard_copy(src: &ParamSet, dst: &mut ParamSet) -> Result<()> {
    if !src.same_structure(dst) {
        let detail = src
            .entries
            .iter()
            .find(|(p, t)| dst.get(p).is_none_or(|d| d.shape() != t.shape()))
            .map(|(p, _)| p.clone())
            .or_else(|| dst.entries.keys().find(|p| src.get(p).is_none()).cloned())
            .unwrap_or_else(|| "parameter count".to_string());
        return Err(Error::Structure(detail));
    }
    for (s, d) in src.entries.values().zip(dst.entries.values_mut()) {
        d.data_mut().copy_from_slice(s.data());
    }
    Ok(())
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Parameters registered on a graph, looked up by path.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// `act(x · W + b)` with the weights stored under `prefix`.
pub fn dense_forward(
    g: &mut Graph,
    params: &Bound,
    prefix: &str,
    x: Var,
    act: Activation,
) -> Result<Var> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    let xw = g.matmul(x, w)?;
    let y = g.add(xw, b)?;
    Ok(act.apply(g, y))
}

/// One gated recurrent update; returns the new hidden state.
///
/// Gates are packed as `[reset | update | candidate]` along the columns of the
/// fused weights:
///
/// ```text
/// r  = σ(x W_r + b_r + h U_r + c_r)
/// u  = σ(x W_u + b_u + h U_u + c_u)
/// n  = tanh(x W_n + b_n + r ∘ (h U_n + c_n))
/// h' = n + u ∘ (h − n)
/// ```
pub fn gru_step(g: &mut Graph, params: &Bound, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let w_in = params.get(&format!("{prefix}.w_input"))?;
    let w_hid = params.get(&format!("{prefix}.w_hidden"))?;
    let b_in = params.get(&format!("{prefix}.b_input"))?;
    let b_hid = params.get(&format!("{prefix}.b_hidden"))?;
    let hidden = g.shape(w_hid)[0];
    if g.shape(h).len() != 2 || g.shape(h)[1] != hidden {
        return Err(Error::Shape {
            op: "gru_step",
            lhs: g.shape(h).to_vec(),
            rhs: vec![hidden],
        });
    }
    let xi = g.matmul(x, w_in)?;
    let xi = g.add(xi, b_in)?;
    let hh = g.matmul(h, w_hid)?;
    let hh = g.add(hh, b_hid)?;

    let xr = g.slice_cols(xi, 0, hidden)?;
    let xu = g.slice_cols(xi, hidden, hidden)?;
    let xn = g.slice_cols(xi, 2 * hidden, hidden)?;
    let hr = g.slice_cols(hh, 0, hidden)?;
    let hu = g.slice_cols(hh, hidden, hidden)?;
    let hn = g.slice_cols(hh, 2 * hidden, hidden)?;

    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let u = g.add(xu, hu)?;
    let u = g.sigmoid(u);
    let rn = g.mul(r, hn)?;
    let n = g.add(xn, rn)?;
    let n = g.tanh(n);
    let diff = g.sub(h, n)?;
    let gated = g.mul(u, diff)?;
    g.add(n, gated)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation; moment buffers live across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter from its gradient buffer.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if let Some((path, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::MissingGrad(path.to_string()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        for (path, tensor) in params.iter_mut() {
            let n = tensor.numel();
            let (m, v) = self
                .moments
                .entry(path.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = tensor.grad().expect("checked above").to_vec();
            for (k, value) in tensor.data_mut().iter_mut().enumerate() {
                let gk = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *value -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
