//! Small fully connected networks trained with Adam on squared error.
//!
//! Parameters of every network live in one flat `Vec<f64>`; layers are views
//! into it. Three architectures share the training loop:
//!
//! * `mlp`: `[x, onehot(t), d] -> h -> h -> 1` with ReLU.
//! * `drnet-lite`: a shared trunk `x -> h -> h`, then one head
//!   `[z, d] -> h -> 1` per (intervention, dose stratum).
//! * `vcnet-lite`: a trunk `[x, onehot(t)] -> h -> h` whose output layer has
//!   weights varying with the dose through a quadratic B-spline basis.
//!
//! Covariates and targets are standardized with training statistics before
//! they reach a network; predictions are mapped back.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{EstimatorError, Family, FeatureEncoding, FitData, HyperParams, Params, Query};
use crate::seed::{Rng, SeedTree};

/// Fully connected layer; `w` is row-major `n_out x n_in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Dense {
    fn weights(&self) -> Range<usize> {
        self.w..self.w + self.n_in * self.n_out
    }

    fn init(&self, p: &mut [f64], rng: &mut Rng) {
        let limit = (6.0 / (self.n_in + self.n_out) as f64).sqrt();
        for v in &mut p[self.weights()] {
            *v = rng.random_range(-limit..=limit);
        }
        p[self.b..self.b + self.n_out].iter_mut().for_each(|v| *v = 0.0);
    }

    fn forward(&self, p: &[f64], input: &[f64], rows: usize) -> Vec<f64> {
        let w = &p[self.weights()];
        let b = &p[self.b..self.b + self.n_out];
        let mut out = Vec::with_capacity(rows * self.n_out);
        for r in 0..rows {
            let x = &input[r * self.n_in..(r + 1) * self.n_in];
            for o in 0..self.n_out {
                let wo = &w[o * self.n_in..(o + 1) * self.n_in];
                out.push(b[o] + dot(wo, x));
            }
        }
        out
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `want_input` is set.
    fn backward(&self, p: &[f64], input: &[f64], grad_out: &[f64], rows: usize, g: &mut [f64], want_input: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.n_in, self.n_out);
        let mut grad_in = if want_input { vec![0.0; rows * n_in] } else { Vec::new() };
        for r in 0..rows {
            let x = &input[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let go = grad_out[r * n_out + o];
                if go == 0.0 {
                    continue;
                }
                g[self.b + o] += go;
                let gw = &mut g[self.w + o * n_in..self.w + (o + 1) * n_in];
                for (gi, xi) in gw.iter_mut().zip(x) {
                    *gi += go * xi;
                }
                if want_input {
                    let wo = &p[self.w + o * n_in..self.w + (o + 1) * n_in];
                    for (gi, wi) in grad_in[r * n_in..(r + 1) * n_in].iter_mut().zip(wo) {
                        *gi += go * wi;
                    }
                }
            }
        }
        grad_in
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradients where the ReLU output was zero.
fn relu_mask(post: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(post) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Default)]
struct Layout {
    len: usize,
}

impl Layout {
    fn dense(&mut self, n_in: usize, n_out: usize) -> Dense {
        let d = Dense { w: self.len, b: self.len + n_in * n_out, n_in, n_out };
        self.len += n_in * n_out + n_out;
        d
    }
}

/// Standardized minibatch. `x` is row-major `rows x m`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetBatch {
    pub x: Vec<f64>,
    pub t: Vec<usize>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
}

impl NetBatch {
    pub fn rows(&self) -> usize {
        self.t.len()
    }

    fn gather(&self, m: usize, idx: &[usize]) -> NetBatch {
        let mut b = NetBatch {
            x: Vec::with_capacity(idx.len() * m),
            t: Vec::with_capacity(idx.len()),
            d: Vec::with_capacity(idx.len()),
            y: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            b.x.extend_from_slice(&self.x[i * m..(i + 1) * m]);
            b.t.push(self.t[i]);
            b.d.push(self.d[i]);
            b.y.push(self.y[i]);
        }
        b
    }
}

/// Hidden activations kept from the forward pass.
#[derive(Debug, Default)]
pub struct Cache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// drnet-lite: per-row head input `[z, d]` and head hidden layer.
    head_in: Vec<Vec<f64>>,
    head_h: Vec<Vec<f64>>,
    /// vcnet-lite: per-row basis values.
    basis: Vec<[f64; N_BASIS]>,
}

/// Number of quadratic B-spline basis functions with knots {1/3, 2/3}.
pub const N_BASIS: usize = 5;
const KNOTS: [f64; 8] = [0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0];

/// Quadratic B-spline basis on [0, 1] with interior knots 1/3 and 2/3,
/// by the Cox-de Boor recursion. Doses outside [0, 1] are clamped.
pub fn bspline_basis(d: f64) -> [f64; N_BASIS] {
    let d = d.clamp(0.0, 1.0);
    let mut n0 = [0.0; 7];
    for (i, v) in n0.iter_mut().enumerate() {
        let (lo, hi) = (KNOTS[i], KNOTS[i + 1]);
        if lo < hi && ((lo <= d && d < hi) || (d == 1.0 && hi == 1.0)) {
            *v = 1.0;
        }
    }
    let step = |prev: &[f64], deg: usize, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| {
                let mut v = 0.0;
                let a = KNOTS[i + deg] - KNOTS[i];
                if a > 0.0 {
                    v += (d - KNOTS[i]) / a * prev[i];
                }
                let b = KNOTS[i + deg + 1] - KNOTS[i + 1];
                if b > 0.0 {
                    v += (KNOTS[i + deg + 1] - d) / b * prev[i + 1];
                }
                v
            })
            .collect()
    };
    let n1 = step(&n0, 1, 6);
    let n2 = step(&n1, 2, 5);
    std::array::from_fn(|i| n2[i])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arch {
    Mlp { l1: Dense, l2: Dense, out: Dense },
    DrNet { l1: Dense, l2: Dense, heads: Vec<(Dense, Dense)>, strata: usize },
    VcNet { l1: Dense, l2: Dense, out: Dense },
}

/// A network architecture bound to its input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Arch,
    m: usize,
    k: usize,
    hidden: usize,
    n_params: usize,
    /// `(shift, scale)` for the one-hot columns followed by the dose.
    tail: Vec<(f64, f64)>,
}

impl Network {
    pub fn new(family: Family, m: usize, k: usize, hidden: usize, strata: usize) -> Self {
        let one_hot = if k > 1 { k } else { 0 };
        let mut lay = Layout::default();
        let arch = match family {
            Family::DrnetLite => {
                let l1 = lay.dense(m, hidden);
                let l2 = lay.dense(hidden, hidden);
                let heads = (0..k * strata).map(|_| (lay.dense(hidden + 1, hidden), lay.dense(hidden, 1))).collect();
                Arch::DrNet { l1, l2, heads, strata }
            }
            Family::VcnetLite => {
                let l1 = lay.dense(m + one_hot, hidden);
                let l2 = lay.dense(hidden, hidden);
                let out = lay.dense(hidden, N_BASIS);
                Arch::VcNet { l1, l2, out }
            }
            _ => {
                let l1 = lay.dense(m + one_hot + 1, hidden);
                let l2 = lay.dense(hidden, hidden);
                let out = lay.dense(hidden, 1);
                Arch::Mlp { l1, l2, out }
            }
        };
        Self { arch, m, k, hidden, n_params: lay.len, tail: vec![(0.0, 1.0); one_hot + 1] }
    }

    /// Standardizes the one-hot and dose inputs with statistics of `batch`.
    pub fn with_input_scaling(mut self, batch: &NetBatch) -> Self {
        let n = batch.rows().max(1) as f64;
        let scale = |mean: f64, var: f64| (mean, if var > 0.0 { var.sqrt() } else { 1.0 });
        let one_hot = self.tail.len() - 1;
        for j in 0..one_hot {
            let p = batch.t.iter().filter(|&&t| t == j).count() as f64 / n;
            self.tail[j] = scale(p, p * (1.0 - p));
        }
        let mean = batch.d.iter().sum::<f64>() / n;
        let var = batch.d.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        self.tail[one_hot] = scale(mean, var);
        self
    }

    fn dose_input(&self, d: f64) -> f64 {
        let (shift, scale) = self.tail[self.tail.len() - 1];
        (d - shift) / scale
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn layers(&self) -> Vec<Dense> {
        match &self.arch {
            Arch::Mlp { l1, l2, out } | Arch::VcNet { l1, l2, out } => vec![*l1, *l2, *out],
            Arch::DrNet { l1, l2, heads, .. } => {
                let mut v = vec![*l1, *l2];
                for (a, b) in heads {
                    v.extend([*a, *b]);
                }
                v
            }
        }
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        for layer in self.layers() {
            layer.init(&mut p, rng);
        }
        p
    }

    /// Head index for a dose: `floor(d * E)` clamped to `E - 1`.
    pub fn stratum(d: f64, strata: usize) -> usize {
        ((d.max(0.0) * strata as f64).floor() as usize).min(strata - 1)
    }

    /// Parameter range of the drnet-lite head for `(t, stratum)`.
    pub fn head_params(&self, t: usize, stratum: usize) -> Option<Range<usize>> {
        match &self.arch {
            Arch::DrNet { heads, strata, .. } => {
                let (a, b) = heads[t * strata + stratum];
                Some(a.w..b.b + b.n_out)
            }
            _ => None,
        }
    }

    fn trunk_input(&self, batch: &NetBatch, with_dose: bool) -> Vec<f64> {
        let one_hot = if self.k > 1 { self.k } else { 0 };
        let width = self.m + one_hot + usize::from(with_dose);
        let mut input = Vec::with_capacity(batch.rows() * width);
        for r in 0..batch.rows() {
            input.extend_from_slice(&batch.x[r * self.m..(r + 1) * self.m]);
            if one_hot > 0 {
                input.extend((0..self.k).map(|j| {
                    let (shift, scale) = self.tail[j];
                    (f64::from(u8::from(j == batch.t[r])) - shift) / scale
                }));
            }
            if with_dose {
                input.push(self.dose_input(batch.d[r]));
            }
        }
        input
    }

    pub fn forward(&self, p: &[f64], batch: &NetBatch) -> (Vec<f64>, Cache) {
        let rows = batch.rows();
        let h = self.hidden;
        let mut cache = Cache::default();
        let (l1, l2) = match &self.arch {
            Arch::Mlp { l1, l2, .. } | Arch::VcNet { l1, l2, .. } | Arch::DrNet { l1, l2, .. } => (*l1, *l2),
        };
        cache.input = match &self.arch {
            Arch::Mlp { .. } => self.trunk_input(batch, true),
            Arch::VcNet { .. } => self.trunk_input(batch, false),
            Arch::DrNet { .. } => batch.x.clone(),
        };
        cache.h1 = l1.forward(p, &cache.input, rows);
        relu(&mut cache.h1);
        cache.h2 = l2.forward(p, &cache.h1, rows);
        relu(&mut cache.h2);
        let pred = match &self.arch {
            Arch::Mlp { out, .. } => out.forward(p, &cache.h2, rows),
            Arch::VcNet { out, .. } => {
                let u = out.forward(p, &cache.h2, rows);
                cache.basis = batch.d.iter().map(|&d| bspline_basis(d)).collect();
                (0..rows).map(|r| dot(&u[r * N_BASIS..(r + 1) * N_BASIS], &cache.basis[r])).collect()
            }
            Arch::DrNet { heads, strata, .. } => (0..rows)
                .map(|r| {
                    let (a, b) = heads[batch.t[r] * strata + Self::stratum(batch.d[r], *strata)];
                    let mut input = cache.h2[r * h..(r + 1) * h].to_vec();
                    input.push(self.dose_input(batch.d[r]));
                    let mut hid = a.forward(p, &input, 1);
                    relu(&mut hid);
                    let y = b.forward(p, &hid, 1)[0];
                    cache.head_in.push(input);
                    cache.head_h.push(hid);
                    y
                })
                .collect(),
        };
        (pred, cache)
    }

    /// Back-propagates `dpred` (gradient of the loss w.r.t. each prediction)
    /// and accumulates into `g`.
    pub fn backward(&self, p: &[f64], batch: &NetBatch, cache: &Cache, dpred: &[f64], g: &mut [f64]) {
        let rows = batch.rows();
        let h = self.hidden;
        let (l1, l2) = match &self.arch {
            Arch::Mlp { l1, l2, .. } | Arch::VcNet { l1, l2, .. } | Arch::DrNet { l1, l2, .. } => (*l1, *l2),
        };
        let mut dh2 = match &self.arch {
            Arch::Mlp { out, .. } => out.backward(p, &cache.h2, dpred, rows, g, true),
            Arch::VcNet { out, .. } => {
                let du: Vec<f64> = (0..rows).flat_map(|r| cache.basis[r].map(|phi| phi * dpred[r])).collect();
                out.backward(p, &cache.h2, &du, rows, g, true)
            }
            Arch::DrNet { heads, strata, .. } => {
                let mut dz = vec![0.0; rows * h];
                for r in 0..rows {
                    let (a, b) = heads[batch.t[r] * strata + Self::stratum(batch.d[r], *strata)];
                    let mut dhid = b.backward(p, &cache.head_h[r], &dpred[r..r + 1], 1, g, true);
                    relu_mask(&cache.head_h[r], &mut dhid);
                    let din = a.backward(p, &cache.head_in[r], &dhid, 1, g, true);
                    dz[r * h..(r + 1) * h].copy_from_slice(&din[..h]);
                }
                dz
            }
        };
        relu_mask(&cache.h2, &mut dh2);
        let mut dh1 = l2.backward(p, &cache.h1, &dh2, rows, g, true);
        relu_mask(&cache.h1, &mut dh1);
        l1.backward(p, &cache.input, &dh1, rows, g, false);
    }

    pub fn predict(&self, p: &[f64], batch: &NetBatch) -> Vec<f64> {
        self.forward(p, batch).0
    }

    /// Minibatch objective `mean((pred - y)^2) + l2 * sum(w^2)` over layer
    /// weights (biases unpenalized). Fills `g` with its gradient.
    pub fn loss_and_grad(&self, p: &[f64], batch: &NetBatch, l2: f64, g: &mut [f64]) -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let rows = batch.rows() as f64;
        let (pred, cache) = self.forward(p, batch);
        let mut loss = 0.0;
        let dpred: Vec<f64> = pred
            .iter()
            .zip(&batch.y)
            .map(|(a, y)| {
                loss += (a - y).powi(2) / rows;
                2.0 * (a - y) / rows
            })
            .collect();
        self.backward(p, batch, &cache, &dpred, g);
        if l2 > 0.0 {
            for layer in self.layers() {
                for i in layer.weights() {
                    loss += l2 * p[i] * p[i];
                    g[i] += 2.0 * l2 * p[i];
                }
            }
        }
        loss
    }

    pub fn loss(&self, p: &[f64], batch: &NetBatch, l2: f64) -> f64 {
        let mut g = vec![0.0; self.n_params];
        self.loss_and_grad(p, batch, l2, &mut g)
    }
}

/// Per-column standardization with training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &FitData<'_>) -> Self {
        let m = data.x.cols();
        let n = data.len() as f64;
        let mut mean = vec![0.0; m];
        for &i in data.rows {
            for (j, v) in data.x.row(i).iter().enumerate() {
                mean[j] += v / n;
            }
        }
        let mut sd = vec![0.0; m];
        for &i in data.rows {
            for (j, v) in data.x.row(i).iter().enumerate() {
                sd[j] += (v - mean[j]).powi(2) / n;
            }
        }
        let sd = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, sd }
    }

    fn push(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub steps: usize,
    pub strata: usize,
}

impl NetConfig {
    pub fn from_hyperparams(family: Family, hp: &HyperParams) -> Result<Self, EstimatorError> {
        let vc = family == Family::VcnetLite;
        let mut p = Params::new(hp);
        let cfg = Self {
            learning_rate: p.float_in("learning_rate", if vc { 1e-2 } else { 1e-3 }, 1e-12, 10.0)?,
            l2: p.float_in("l2", 0.0, 0.0, f64::INFINITY)?,
            batch_size: p.count("batch_size", if vc { 128 } else { 64 }, 1)?,
            hidden: p.count("hidden", 32, 1)?,
            steps: p.count("steps", 5000, 0)?,
            strata: if family == Family::DrnetLite { p.count("strata", 10, 1)? } else { 10 },
        };
        if let Some(layers) = hp.get("layers") {
            p.count("layers", 2, 2)?;
            if layers != &super::ParamValue::Int(2) {
                return Err(EstimatorError::Hyperparam { name: "layers".into(), msg: "only 2 layers are supported".into() });
            }
        }
        p.finish()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct NetModel {
    network: Network,
    params: Vec<f64>,
    scaler: Standardizer,
    y_mean: f64,
    y_sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: usize,
    pub best_step: usize,
    /// Validation MSE (standardized targets) at each evaluation point.
    pub val_loss: Vec<f64>,
}

impl NetModel {
    fn batch_of(&self, queries: &[Query<'_>]) -> NetBatch {
        let mut b = NetBatch::default();
        for q in queries {
            self.scaler.push(q.x, &mut b.x);
            b.t.push(q.t);
            b.d.push(q.d);
        }
        b
    }

    pub fn predict(&self, x: &[f64], t: usize, d: f64) -> f64 {
        self.predict_many(&[Query { x, t, d }])[0]
    }

    pub fn predict_many(&self, queries: &[Query<'_>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(2048) {
            let b = self.batch_of(chunk);
            out.extend(self.network.predict(&self.params, &b).into_iter().map(|v| v * self.y_sd + self.y_mean));
        }
        out
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }
}

fn standardized_batch(data: &FitData<'_>, scaler: &Standardizer, y_mean: f64, y_sd: f64) -> NetBatch {
    let mut b = NetBatch::default();
    for &i in data.rows {
        scaler.push(data.x.row(i), &mut b.x);
        b.t.push(data.t[i]);
        b.d.push(data.d[i]);
        b.y.push((data.y[i] - y_mean) / y_sd);
    }
    b
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            p[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains a network family; keeps the parameters with the best validation
/// MSE seen at the periodic evaluation points.
pub fn fit_network(
    family: Family,
    hp: &HyperParams,
    enc: &FeatureEncoding,
    train: &FitData<'_>,
    val: &FitData<'_>,
    seed: &SeedTree,
) -> Result<(NetModel, TrainHistory), EstimatorError> {
    let cfg = NetConfig::from_hyperparams(family, hp)?;
    let scaler = Standardizer::fit(train);
    let ys = train.targets();
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let y_var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / ys.len() as f64;
    let y_sd = if y_var > 0.0 { y_var.sqrt() } else { 1.0 };
    if !y_mean.is_finite() || !y_sd.is_finite() {
        return Err(EstimatorError::NonFiniteLoss {
            step: 0,
            loss: y_var,
            diagnostics: format!("{family}: targets cannot be standardized (mean {y_mean}, variance {y_var})"),
        });
    }
    let train_b = standardized_batch(train, &scaler, y_mean, y_sd);
    let val_b = standardized_batch(val, &scaler, y_mean, y_sd);
    let network = Network::new(family, enc.m, enc.k, cfg.hidden, cfg.strata).with_input_scaling(&train_b);
    let mut rng = seed.child("net").rng();
    let mut params = network.init(&mut rng);
    let l2 = cfg.l2 / train.len() as f64;
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut grad = vec![0.0; params.len()];
    let n = train_b.rows();
    let bs = cfg.batch_size.min(n);
    let eval_every = (cfg.steps / 50).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let val_mse = |p: &[f64]| -> f64 {
        let pred = network.predict(p, &val_b);
        pred.iter().zip(&val_b.y).map(|(a, y)| (a - y).powi(2)).sum::<f64>() / val_b.rows() as f64
    };
    let mut history = TrainHistory { steps: cfg.steps, ..Default::default() };
    let mut best = (f64::INFINITY, params.clone());
    if val_b.rows() > 0 {
        best.0 = val_mse(&params);
        history.val_loss.push(best.0);
    }
    for step in 1..=cfg.steps {
        if cursor + bs > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mb = train_b.gather(enc.m, &order[cursor..cursor + bs]);
        cursor += bs;
        let loss = network.loss_and_grad(&params, &mb, l2, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(EstimatorError::NonFiniteLoss {
                step,
                loss,
                diagnostics: format!(
                    "{family}: learning_rate={}, batch_size={bs}, hidden={}",
                    cfg.learning_rate, cfg.hidden
                ),
            });
        }
        adam.step(&mut params, &grad);
        if val_b.rows() > 0 && (step % eval_every == 0 || step == cfg.steps) {
            let v = val_mse(&params);
            history.val_loss.push(v);
            if v < best.0 {
                best = (v, params.clone());
                history.best_step = step;
            }
        }
    }
    let params = if val_b.rows() > 0 && best.0.is_finite() { best.1 } else { params };
    Ok((NetModel { network, params, scaler, y_mean, y_sd }, history))
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step 1e-5) over at least 50 randomly chosen parameters.
pub fn gradient_check_params(network: &Network, params: &[f64], batch: &NetBatch, l2: f64, rng: &mut Rng) -> f64 {
    const H: f64 = 1e-5;
    let mut grad = vec![0.0; params.len()];
    network.loss_and_grad(params, batch, l2, &mut grad);
    let picks: Vec<usize> = if params.len() <= 64 {
        (0..params.len()).collect()
    } else {
        rand::seq::index::sample(rng, params.len(), 64).into_vec()
    };
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in picks {
        let orig = p[i];
        p[i] = orig + H;
        let up = network.loss(&p, batch, l2);
        p[i] = orig - H;
        let down = network.loss(&p, batch, l2);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}

/// Gradient check of a freshly initialized network of `family` on `data`.
pub fn gradient_check(
    family: Family,
    hp: &HyperParams,
    enc: &FeatureEncoding,
    data: &FitData<'_>,
    seed: &SeedTree,
) -> Result<f64, EstimatorError> {
    let cfg = NetConfig::from_hyperparams(family, hp)?;
    let scaler = Standardizer::fit(data);
    let batch = standardized_batch(data, &scaler, 0.0, 1.0);
    let network = Network::new(family, enc.m, enc.k, cfg.hidden, cfg.strata).with_input_scaling(&batch);
    let mut rng = seed.child("gradcheck").rng();
    let params = network.init(&mut rng);
    Ok(gradient_check_params(&network, &params, &batch, cfg.l2 / data.len().max(1) as f64, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateMatrix;
    use crate::estimators::ParamValue;
    use std::collections::BTreeSet;

    fn toy(n: usize, m: usize, k: usize, seed: u64) -> (CovariateMatrix, Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut rng = SeedTree::new(seed).rng();
        let vals: Vec<f64> = (0..n * m).map(|_| rng.random()).collect();
        let x = CovariateMatrix::new((0..m).map(|j| format!("x{j}")).collect(), vals, BTreeSet::new()).unwrap();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|i| x.get(i, 0) + (3.0 * d[i]).sin() + t[i] as f64).collect();
        (x, t, d, y)
    }

    fn hp(pairs: &[(&str, ParamValue)]) -> HyperParams {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn basis_is_partition_of_unity_and_continuous() {
        for i in 0..=300 {
            let d = i as f64 / 300.0;
            let b = bspline_basis(d);
            assert!(b.iter().all(|v| *v >= -1e-15));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12, "d = {d}");
        }
        assert_eq!(bspline_basis(0.0), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(bspline_basis(1.0), [0.0, 0.0, 0.0, 0.0, 1.0]);
        for knot in [1.0 / 3.0, 2.0 / 3.0] {
            let (a, b) = (bspline_basis(knot - 1e-9), bspline_basis(knot + 1e-9));
            for j in 0..N_BASIS {
                assert!((a[j] - b[j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn stratum_routing() {
        assert_eq!(Network::stratum(0.999, 10), 9);
        assert_eq!(Network::stratum(0.91, 10), 9);
        assert_eq!(Network::stratum(1.0, 10), 9);
        assert_eq!(Network::stratum(0.0, 10), 0);
        assert_eq!(Network::stratum(0.1, 10), 1);
    }

    #[test]
    fn gradient_checks_pass_for_every_architecture() {
        let (x, t, d, y) = toy(12, 4, 3, 1);
        let rows: Vec<usize> = (0..12).collect();
        let data = FitData::new(&x, &rows, &t, &d, &y);
        let enc = FeatureEncoding::new(4, 3);
        for family in [Family::Mlp, Family::DrnetLite, Family::VcnetLite] {
            for l2 in [0.0, 0.1] {
                let h = hp(&[("hidden", ParamValue::Int(8)), ("l2", ParamValue::Float(l2))]);
                let err = gradient_check(family, &h, &enc, &data, &SeedTree::new(3)).unwrap();
                assert!(err < 1e-4, "{family} l2={l2}: {err}");
            }
        }
    }

    #[test]
    fn zero_network_has_zero_gradient() {
        let net = Network::new(Family::Mlp, 3, 1, 5, 10);
        let params = vec![0.0; net.n_params()];
        let batch = NetBatch { x: vec![0.0; 12], t: vec![0; 4], d: vec![0.0; 4], y: vec![0.0; 4] };
        let mut g = vec![1.0; net.n_params()];
        let loss = net.loss_and_grad(&params, &batch, 0.0, &mut g);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let err = gradient_check_params(&net, &params, &batch, 0.0, &mut SeedTree::new(1).rng());
        assert!(err < 1e-4);
    }

    #[test]
    fn drnet_heads_only_affect_their_stratum() {
        let (x, t, d, y) = toy(200, 3, 2, 4);
        let rows: Vec<usize> = (0..150).collect();
        let val: Vec<usize> = (150..200).collect();
        let enc = FeatureEncoding::new(3, 2);
        let h = hp(&[("steps", ParamValue::Int(50)), ("hidden", ParamValue::Int(8))]);
        let (mut model, _) = fit_network(
            Family::DrnetLite,
            &h,
            &enc,
            &FitData::new(&x, &rows, &t, &d, &y),
            &FitData::new(&x, &val, &t, &d, &y),
            &SeedTree::new(5),
        )
        .unwrap();
        let doses: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let before: Vec<Vec<f64>> =
            (0..2).map(|tt| doses.iter().map(|&dd| model.predict(x.row(0), tt, dd)).collect()).collect();
        let range = model.network().head_params(1, 4).unwrap();
        for i in range {
            model.params_mut()[i] += 0.37;
        }
        for tt in 0..2 {
            for (j, &dd) in doses.iter().enumerate() {
                let after = model.predict(x.row(0), tt, dd);
                let inside = tt == 1 && Network::stratum(dd, 10) == 4;
                assert_eq!(after != before[tt][j], inside, "t={tt} d={dd}");
            }
        }
    }

    #[test]
    fn training_reduces_error_and_is_deterministic() {
        let (x, t, d, y) = toy(400, 3, 2, 6);
        let rows: Vec<usize> = (0..320).collect();
        let val: Vec<usize> = (320..400).collect();
        let enc = FeatureEncoding::new(3, 2);
        for family in [Family::Mlp, Family::DrnetLite, Family::VcnetLite] {
            let h = hp(&[("steps", ParamValue::Int(800))]);
            let train = FitData::new(&x, &rows, &t, &d, &y);
            let valf = FitData::new(&x, &val, &t, &d, &y);
            let (a, hist) = fit_network(family, &h, &enc, &train, &valf, &SeedTree::new(7)).unwrap();
            let (b, _) = fit_network(family, &h, &enc, &train, &valf, &SeedTree::new(7)).unwrap();
            assert_eq!(a.params(), b.params());
            assert!(hist.val_loss.last().unwrap() < &hist.val_loss[0], "{family}: {:?}", hist.val_loss);
            let mse = val.iter().map(|&i| (a.predict(x.row(i), t[i], d[i]) - y[i]).powi(2)).sum::<f64>() / 80.0;
            let var = {
                let m = val.iter().map(|&i| y[i]).sum::<f64>() / 80.0;
                val.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>() / 80.0
            };
            assert!(mse < 0.2 * var, "{family}: mse {mse} var {var}");
        }
    }

    #[test]
    fn vcnet_is_continuous_in_dose() {
        let (x, t, d, y) = toy(200, 3, 2, 8);
        let rows: Vec<usize> = (0..160).collect();
        let val: Vec<usize> = (160..200).collect();
        let enc = FeatureEncoding::new(3, 2);
        let h = hp(&[("steps", ParamValue::Int(200))]);
        let (m, _) = fit_network(
            Family::VcnetLite,
            &h,
            &enc,
            &FitData::new(&x, &rows, &t, &d, &y),
            &FitData::new(&x, &val, &t, &d, &y),
            &SeedTree::new(9),
        )
        .unwrap();
        for i in 0..20 {
            for j in 0..100 {
                let dd = j as f64 / 100.0;
                let a = m.predict(x.row(i), t[i], dd);
                let b = m.predict(x.row(i), t[i], dd + 1e-6);
                assert!((a - b).abs() < 1e-3 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn non_finite_training_is_reported() {
        let (x, t, d, mut y) = toy(50, 2, 1, 10);
        y[3] = 1e300;
        let rows: Vec<usize> = (0..40).collect();
        let val: Vec<usize> = (40..50).collect();
        let enc = FeatureEncoding::new(2, 1);
        let h = hp(&[("steps", ParamValue::Int(100))]);
        let r = fit_network(
            Family::Mlp,
            &h,
            &enc,
            &FitData::new(&x, &rows, &t, &d, &y),
            &FitData::new(&x, &val, &t, &d, &y),
            &SeedTree::new(1),
        );
        assert!(matches!(r, Err(EstimatorError::NonFiniteLoss { step: 0, .. })), "{r:?}");
        let net = Network::new(Family::Mlp, 2, 1, 8, 1);
        let params = vec![1e200; net.n_params()];
        let batch = NetBatch { x: vec![1.0; 8], t: vec![0; 4], d: vec![0.5; 4], y: vec![0.0; 4] };
        let mut grad = vec![0.0; params.len()];
        assert!(!net.loss_and_grad(&params, &batch, 0.0, &mut grad).is_finite());
    }
}
