//! Fully connected tanh network with reverse-mode gradients and Adam.
//!
//! Parameters live in one flat vector, layer by layer: `W_k` (row-major,
//! `N_k x N_{k-1}`) followed by `b_k`. With activation scaling enabled one
//! extra factor per hidden layer is appended, giving `tanh(s_k z)`.
//!
//! Batches may share a per-group suffix of the input (the coefficient
//! parameters of one sample), which the first layer handles by computing the
//! suffix product once per group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LodError, Result};
use crate::scalar::Scalar;

/// `lr(t) = lr0 * rate^(t / steps)`, optionally with an integer exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    #[serde(default)]
    pub staircase: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr0: 1e-3,
            decay_rate: 0.9,
            decay_steps: 1000.0,
            staircase: false,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, t: u64) -> f64 {
        let e = t as f64 / self.decay_steps;
        self.lr0
            * self
                .decay_rate
                .powf(if self.staircase { e.floor() } else { e })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and step counter for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], schedule: &LrSchedule, dir: Direction) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let lr = schedule.lr(self.t);
        self.t += 1;
        let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
        let c1 = T::lit(1.0 - ADAM_BETA1.powf(self.t as f64));
        let c2 = T::lit(1.0 - ADAM_BETA2.powf(self.t as f64));
        let eps = T::lit(ADAM_EPS);
        let step = T::lit(match dir {
            Direction::Descent => -lr,
            Direction::Ascent => lr,
        });
        let one = T::one();
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += step * mh / (vh.sqrt() + eps);
        }
    }
}

/// Multilayer perceptron with tanh hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    params: Vec<T>,
    activation_scaling: bool,
}

/// Inputs of a batch: per-row features `x` and per-group features `p`.
///
/// Row `i` of group `g` (rows `groups[g]..groups[g+1]`) has input `(x_i, p_g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub dx: usize,
    pub x: Vec<T>,
    pub dp: usize,
    pub p: Vec<T>,
    pub groups: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    /// Plain batch without a shared suffix.
    pub fn dense(x: Vec<T>, width: usize) -> Self {
        let rows = x.len() / width.max(1);
        Batch {
            dx: width,
            x,
            dp: 0,
            p: Vec::new(),
            groups: vec![0, rows],
        }
    }

    pub fn rows(&self) -> usize {
        *self.groups.last().unwrap_or(&0)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len().saturating_sub(1)
    }

    fn validate(&self, n0: usize) -> Result<()> {
        if self.dx + self.dp != n0 {
            return Err(LodError::Dimension(format!(
                "input width {} + {} for a network expecting {n0}",
                self.dx, self.dp
            )));
        }
        if self.x.len() != self.rows() * self.dx || self.p.len() != self.num_groups() * self.dp {
            return Err(LodError::Dimension(
                "batch buffers do not match the group layout".into(),
            ));
        }
        if self.groups.windows(2).any(|w| w[0] > w[1]) || self.groups.first() != Some(&0) {
            return Err(LodError::Dimension(
                "group offsets must start at 0 and increase".into(),
            ));
        }
        Ok(())
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    rows: usize,
    /// Hidden outputs `h_1 .. h_{D-1}`.
    hidden: Vec<Vec<T>>,
    /// Hidden pre-activations (only with activation scaling).
    pre: Vec<Vec<T>>,
    pub out: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(widths: &[usize], activation_scaling: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(LodError::Config(format!("invalid widths {widths:?}")));
        }
        let mut net = Mlp {
            widths: widths.to_vec(),
            params: Vec::new(),
            activation_scaling,
        };
        net.params = vec![T::zero(); net.num_params()];
        if activation_scaling {
            let off = net.num_weights();
            net.params[off..].iter_mut().for_each(|s| *s = T::one());
        }
        Ok(net)
    }

    /// Glorot-normal weights with variance `2 / (N_k + N_{k-1})`, zero biases.
    pub fn init_glorot(widths: &[usize], seed: u64, activation_scaling: bool) -> Result<Self> {
        let mut net = Self::zeros(widths, activation_scaling)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..net.depth() {
            let (n_in, n_out) = (net.widths[k], net.widths[k + 1]);
            let dist =
                Normal::new(0.0, (2.0 / (n_in + n_out) as f64).sqrt()).expect("positive variance");
            let off = net.weight_offset(k);
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = T::lit(dist.sample(&mut rng));
            }
        }
        Ok(net)
    }

    pub fn from_params(widths: &[usize], activation_scaling: bool, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(widths, activation_scaling)?;
        if params.len() != net.params.len() {
            return Err(LodError::Dimension(format!(
                "{} parameters for a network with {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// Number of layers `D`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation_scaling(&self) -> bool {
        self.activation_scaling
    }

    /// `N_Θ = Σ N_k (N_{k-1} + 1)`.
    pub fn num_weights(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn num_params(&self) -> usize {
        self.num_weights()
            + if self.activation_scaling {
                self.depth() - 1
            } else {
                0
            }
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Offset of `W_{k+1}` (0-based layer `k`).
    pub fn weight_offset(&self, k: usize) -> usize {
        self.widths
            .windows(2)
            .take(k)
            .map(|w| w[1] * (w[0] + 1))
            .sum()
    }

    pub fn bias_offset(&self, k: usize) -> usize {
        self.weight_offset(k) + self.widths[k] * self.widths[k + 1]
    }

    fn scale(&self, k: usize) -> T {
        if self.activation_scaling {
            self.params[self.num_weights() + k]
        } else {
            T::one()
        }
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            widths: self.widths.clone(),
            params: self
                .params
                .iter()
                .map(|&v| U::lit(v.to_f64_lossy()))
                .collect(),
            activation_scaling: self.activation_scaling,
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self
            .forward_tape(&Batch::dense(x.to_vec(), self.widths[0]))?
            .out)
    }

    /// Outputs for `rows` inputs stored row-major.
    pub fn forward_batch(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() % self.widths[0] != 0 {
            return Err(LodError::Dimension(format!(
                "batch of {} values for input width {}",
                x.len(),
                self.widths[0]
            )));
        }
        Ok(self
            .forward_tape(&Batch::dense(x.to_vec(), self.widths[0]))?
            .out)
    }

    pub fn forward_tape(&self, batch: &Batch<T>) -> Result<Tape<T>> {
        batch.validate(self.widths[0])?;
        let rows = batch.rows();
        let d = self.depth();
        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(d - 1);
        let mut pre = Vec::new();
        let mut cur = self.first_layer(batch);
        for k in 0..d {
            let n_out = self.widths[k + 1];
            if k > 0 {
                let n_in = self.widths[k];
                let prev = hidden.last().expect("hidden layer");
                let b_off = self.bias_offset(k);
                let mut z = Vec::with_capacity(rows * n_out);
                for _ in 0..rows {
                    z.extend_from_slice(&self.params[b_off..b_off + n_out]);
                }
                let w = &self.params[self.weight_offset(k)..b_off];
                crate::scalar::gemm(
                    rows,
                    n_in,
                    n_out,
                    T::one(),
                    prev,
                    false,
                    w,
                    true,
                    T::one(),
                    &mut z,
                );
                cur = z;
            }
            if k + 1 < d {
                let s = self.scale(k);
                if self.activation_scaling {
                    pre.push(cur.clone());
                }
                cur.iter_mut().for_each(|v| *v = (s * *v).tanh());
                hidden.push(cur);
                cur = Vec::new();
            }
        }
        Ok(Tape {
            rows,
            hidden,
            pre,
            out: cur,
        })
    }

    /// `Z_1 = X W_xᵀ + (P W_pᵀ + b_1)[group]`.
    fn first_layer(&self, batch: &Batch<T>) -> Vec<T> {
        let (n0, n1) = (self.widths[0], self.widths[1]);
        let (dx, dp) = (batch.dx, batch.dp);
        let w = &self.params[..n0 * n1];
        let b = &self.params[n0 * n1..n0 * n1 + n1];
        let ng = batch.num_groups();
        let mut shift = Vec::with_capacity(ng * n1);
        for _ in 0..ng {
            shift.extend_from_slice(b);
        }
        if dp > 0 {
            T::gemm_raw(
                ng,
                dp,
                n1,
                T::one(),
                &batch.p,
                dp as isize,
                1,
                &w[dx..],
                1,
                n0 as isize,
                T::one(),
                &mut shift,
                n1 as isize,
                1,
            );
        }
        let rows = batch.rows();
        let mut z = Vec::with_capacity(rows * n1);
        for g in 0..ng {
            for _ in batch.groups[g]..batch.groups[g + 1] {
                z.extend_from_slice(&shift[g * n1..(g + 1) * n1]);
            }
        }
        if dx > 0 {
            T::gemm_raw(
                rows,
                dx,
                n1,
                T::one(),
                &batch.x,
                dx as isize,
                1,
                w,
                1,
                n0 as isize,
                T::one(),
                &mut z,
                n1 as isize,
                1,
            );
        }
        z
    }

    /// Gradient of `Σ_i d_out_i · out_i` with respect to all parameters.
    pub fn backward(&self, batch: &Batch<T>, tape: &Tape<T>, d_out: &[T]) -> Vec<T> {
        let d = self.depth();
        let rows = tape.rows;
        assert_eq!(d_out.len(), rows * self.widths[d]);
        let mut grad = vec![T::zero(); self.num_params()];
        let mut delta = d_out.to_vec();
        for k in (0..d).rev() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let (w_off, b_off) = (self.weight_offset(k), self.bias_offset(k));
            for row in delta.chunks_exact(n_out) {
                for (g, &v) in grad[b_off..b_off + n_out].iter_mut().zip(row) {
                    *g += v;
                }
            }
            if k > 0 {
                let h = &tape.hidden[k - 1];
                crate::scalar::gemm(
                    n_out,
                    rows,
                    n_in,
                    T::one(),
                    &delta,
                    true,
                    h,
                    false,
                    T::zero(),
                    &mut grad[w_off..b_off],
                );
                let mut prev = vec![T::zero(); rows * n_in];
                crate::scalar::gemm(
                    rows,
                    n_out,
                    n_in,
                    T::one(),
                    &delta,
                    false,
                    &self.params[w_off..b_off],
                    false,
                    T::zero(),
                    &mut prev,
                );
                let s = self.scale(k - 1);
                let one = T::one();
                if self.activation_scaling {
                    let z = &tape.pre[k - 1];
                    let mut ds = T::zero();
                    for i in 0..prev.len() {
                        let dt = prev[i] * (one - h[i] * h[i]);
                        ds += dt * z[i];
                        prev[i] = dt * s;
                    }
                    grad[self.num_weights() + k - 1] = ds;
                } else {
                    for (p, &hv) in prev.iter_mut().zip(h) {
                        *p *= one - hv * hv;
                    }
                }
                delta = prev;
            } else {
                let (dx, dp) = (batch.dx, batch.dp);
                let n0 = n_in;
                let gw = &mut grad[w_off..b_off];
                if dx > 0 {
                    T::gemm_raw(
                        n_out,
                        rows,
                        dx,
                        T::one(),
                        &delta,
                        1,
                        n_out as isize,
                        &batch.x,
                        dx as isize,
                        1,
                        T::zero(),
                        gw,
                        n0 as isize,
                        1,
                    );
                }
                if dp > 0 {
                    let ng = batch.num_groups();
                    let mut gsum = vec![T::zero(); ng * n_out];
                    for g in 0..ng {
                        for row in batch.groups[g]..batch.groups[g + 1] {
                            for c in 0..n_out {
                                gsum[g * n_out + c] += delta[row * n_out + c];
                            }
                        }
                    }
                    T::gemm_raw(
                        n_out,
                        ng,
                        dp,
                        T::one(),
                        &gsum,
                        1,
                        n_out as isize,
                        &batch.p,
                        dp as isize,
                        1,
                        T::zero(),
                        &mut gw[dx..],
                        n0 as isize,
                        1,
                    );
                }
            }
        }
        grad
    }
}

/// Network parameters with their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<T> {
    pub net: Mlp<T>,
    pub adam: Adam<T>,
    pub seed: u64,
}

/// Serialized form of a [`NetworkState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub widths: Vec<usize>,
    pub seed: u64,
    pub step: u64,
    #[serde(default)]
    pub activation_scaling: bool,
    pub params: Vec<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn init(widths: &[usize], seed: u64, activation_scaling: bool) -> Result<Self> {
        let net = Mlp::init_glorot(widths, seed, activation_scaling)?;
        let adam = Adam::new(net.num_params());
        Ok(NetworkState { net, adam, seed })
    }

    pub fn step(&mut self, grad: &[T], schedule: &LrSchedule) {
        self.adam
            .step(&mut self.net.params, grad, schedule, Direction::Descent);
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            widths: self.net.widths.clone(),
            seed: self.seed,
            step: self.adam.t,
            activation_scaling: self.net.activation_scaling,
            params: self.net.params.clone(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint<T>) -> Result<Self> {
        let net = Mlp::from_params(&c.widths, c.activation_scaling, c.params)?;
        if c.adam_m.len() != net.num_params() || c.adam_v.len() != net.num_params() {
            return Err(LodError::Dimension(
                "Adam moments do not match the parameter count".into(),
            ));
        }
        Ok(NetworkState {
            net,
            adam: Adam {
                m: c.adam_m,
                v: c.adam_v,
                t: c.step,
            },
            seed: c.seed,
        })
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> NetworkState<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.checkpoint()).expect("checkpoints serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s).map_err(|e| LodError::Parse(e.to_string()))?)
    }
}
