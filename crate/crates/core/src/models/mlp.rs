//! Feed-forward ranker: ReLU hidden layers with inverted dropout, sigmoid
//! output, binary cross-entropy loss.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, OneCycle};
use crate::error::{Error, Result};
use crate::keyed::{mix64, stream_rng};

const INIT_STREAM: u64 = 1;
const HOLDOUT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_units: usize,
    pub n_hidden_layers: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub max_lr: f64,
    pub epochs: usize,
    pub holdout_fraction: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl MlpConfig {
    /// 100 units, dropout 0.1, no weight decay.
    pub fn study() -> Self {
        MlpConfig {
            hidden_units: 100,
            n_hidden_layers: 2,
            dropout: 0.1,
            weight_decay: 0.0,
            max_lr: 0.01,
            epochs: 1000,
            holdout_fraction: 0.01,
            batch_size: None,
            seed: 0,
        }
    }

    /// 300 units, dropout 0.5, weight decay 1e-4.
    pub fn tuned() -> Self {
        MlpConfig {
            hidden_units: 300,
            dropout: 0.5,
            weight_decay: 1e-4,
            ..Self::study()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("mlp: {m}")));
        if self.hidden_units == 0 || self.n_hidden_layers == 0 {
            return bad("hidden_units and n_hidden_layers must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return bad("max_lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::study()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable BCE on a logit.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Dense network. Parameters are stored flat: per layer, the `out × in`
/// weight matrix (row-major) followed by `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-√(6/fan_in), √(6/fan_in))`; zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.last() != Some(&1) || sizes.contains(&0) {
            return Err(Error::Model(format!("invalid layer sizes {sizes:?}")));
        }
        if params.len() != Self::count(&sizes) {
            return Err(Error::Model(format!(
                "expected {} parameters for {sizes:?}, got {}",
                Self::count(&sizes),
                params.len()
            )));
        }
        Ok(Mlp { sizes, params })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(weight offset, bias offset, n_in, n_out)` of layer `l`.
    fn layer(&self, l: usize) -> (usize, usize, usize, usize) {
        let off = Self::count(&self.sizes[..=l]);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        (off, off + n_in * n_out, n_in, n_out)
    }

    fn affine(&self, l: usize, input: &[f64], out: &mut Vec<f64>) {
        let (w, b, n_in, n_out) = self.layer(l);
        out.clear();
        for j in 0..n_out {
            let row = &self.params[w + j * n_in..w + (j + 1) * n_in];
            let mut z = self.params[b + j];
            for (wi, xi) in row.iter().zip(input) {
                z += wi * xi;
            }
            out.push(z);
        }
    }

    /// Pre-sigmoid output; dropout is inactive.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for l in 0..self.n_layers() {
            self.affine(l, &a, &mut z);
            if l + 1 < self.n_layers() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut a, &mut z);
        }
        a[0]
    }

    /// Probability in the open interval (0, 1).
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    /// Mean BCE over the selected rows, without dropout.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64], idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        idx.iter().map(|&i| bce_logit(self.logit(&xs[i]), ys[i])).sum::<f64>() / idx.len() as f64
    }

    /// Mean BCE over `idx` and its gradient with respect to every parameter.
    /// With `dropout = Some((p, rng))` hidden activations are masked.
    pub fn loss_and_grad(
        &self,
        xs: &[Vec<f64>],
        ys: &[f64],
        idx: &[usize],
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let n_layers = self.n_layers();
        let scale = 1.0 / idx.len().max(1) as f64;
        let mut total = 0.0;
        // acts[l] is the input to layer l; pre[l] its pre-activation output
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        let mut pre: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        let mut masks: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        for &i in idx {
            acts[0].clear();
            acts[0].extend_from_slice(&xs[i]);
            for l in 0..n_layers {
                let mut z = std::mem::take(&mut pre[l]);
                self.affine(l, &acts[l], &mut z);
                if l + 1 < n_layers {
                    let next = &mut acts[l + 1];
                    next.clear();
                    masks[l].clear();
                    for &v in &z {
                        let m = match dropout.as_mut() {
                            Some((p, rng)) if *p > 0.0 => {
                                if rng.random::<f64>() < *p {
                                    0.0
                                } else {
                                    1.0 / (1.0 - *p)
                                }
                            }
                            _ => 1.0,
                        };
                        masks[l].push(m);
                        next.push(v.max(0.0) * m);
                    }
                }
                pre[l] = z;
            }
            let z = pre[n_layers - 1][0];
            total += bce_logit(z, ys[i]);
            let mut delta = vec![(sigmoid(z) - ys[i]) * scale];
            for l in (0..n_layers).rev() {
                let (w, b, n_in, n_out) = self.layer(l);
                let input = &acts[l];
                for j in 0..n_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    grad[b + j] += d;
                    let g = &mut grad[w + j * n_in..w + (j + 1) * n_in];
                    for (gk, xk) in g.iter_mut().zip(input) {
                        *gk += d * xk;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; n_in];
                for j in 0..n_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.params[w + j * n_in..w + (j + 1) * n_in];
                    for (pk, wk) in prev.iter_mut().zip(row) {
                        *pk += d * wk;
                    }
                }
                for k in 0..n_in {
                    let gate = if pre[l - 1][k] > 0.0 { masks[l - 1][k] } else { 0.0 };
                    prev[k] *= gate;
                }
                delta = prev;
            }
        }
        (total * scale, grad)
    }
}

/// Per-epoch record of a training run. Index 0 is the initial weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub train_loss: Vec<f64>,
    pub holdout_loss: Vec<f64>,
    /// Learning rate used at each optimizer step.
    pub learning_rates: Vec<f64>,
    pub best_epoch: usize,
    pub n_holdout_groups: usize,
    /// Set when the hold-out split was empty and training loss stood in.
    pub holdout_is_train: bool,
}

/// Splits group ids into (train rows, hold-out rows) with whole groups held out.
pub fn holdout_split(groups: &[u64], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>, usize) {
    let unique: BTreeSet<u64> = groups.iter().copied().collect();
    let mut ids: Vec<u64> = unique.into_iter().collect();
    let n_hold = ((ids.len() as f64 * fraction).round() as usize).min(ids.len().saturating_sub(1));
    ids.shuffle(&mut stream_rng(mix64(seed), HOLDOUT_STREAM));
    let held: BTreeSet<u64> = ids[..n_hold].iter().copied().collect();
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if held.contains(g) {
            hold.push(i);
        } else {
            train.push(i);
        }
    }
    (train, hold, n_hold)
}

/// Trains on prepared rows. `groups` ties rows to initiations for the hold-out split.
/// Returns the weights from the epoch with the lowest hold-out loss.
pub fn fit_mlp(xs: &[Vec<f64>], ys: &[f64], groups: &[u64], cfg: &MlpConfig) -> Result<(Mlp, TrainingTrace)> {
    cfg.validate()?;
    if xs.len() != ys.len() || xs.len() != groups.len() {
        return Err(Error::InvalidConfig("rows, labels and groups differ in length".into()));
    }
    let n_pos = ys.iter().filter(|&&y| y > 0.5).count();
    if n_pos == 0 || n_pos == ys.len() {
        return Err(Error::InsufficientData(
            "training needs at least one positive and one negative sample".into(),
        ));
    }
    let n_in = xs[0].len();
    if xs.iter().any(|x| x.len() != n_in) {
        return Err(Error::InvalidConfig("rows have differing lengths".into()));
    }

    let mut sizes = vec![n_in];
    sizes.extend(std::iter::repeat_n(cfg.hidden_units, cfg.n_hidden_layers));
    sizes.push(1);
    let mut net = Mlp::new(&sizes, &mut stream_rng(mix64(cfg.seed), INIT_STREAM));

    let (mut train, hold, n_hold) = holdout_split(groups, cfg.holdout_fraction, cfg.seed);
    let holdout_is_train = hold.is_empty();
    if holdout_is_train {
        warn!("hold-out split is empty; selecting the best epoch by training loss");
    }
    let batch = cfg.batch_size.unwrap_or(train.len()).min(train.len()).max(1);
    let batches_per_epoch = train.len().div_ceil(batch);
    let schedule = OneCycle::new(cfg.max_lr, cfg.epochs * batches_per_epoch);
    let mut opt = Adam::new(net.params.len(), cfg.weight_decay);
    let mut rng = stream_rng(mix64(cfg.seed), TRAIN_STREAM);

    let eval_set = if holdout_is_train { train.clone() } else { hold };
    let mut trace = TrainingTrace {
        n_holdout_groups: n_hold,
        holdout_is_train,
        ..Default::default()
    };
    trace.train_loss.push(net.loss(xs, ys, &train));
    trace.holdout_loss.push(net.loss(xs, ys, &eval_set));
    let mut best = (trace.holdout_loss[0], 0usize, net.params.clone());
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        if cfg.batch_size.is_some() {
            train.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in train.chunks(batch) {
            let (loss, grad) = net.loss_and_grad(xs, ys, chunk, Some((cfg.dropout, &mut rng)));
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            let lr = schedule.lr(step);
            trace.learning_rates.push(lr);
            opt.step(&mut net.params, &grad, lr);
            step += 1;
        }
        trace.train_loss.push(epoch_loss / train.len() as f64);
        let h = net.loss(xs, ys, &eval_set);
        if !h.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss: h });
        }
        trace.holdout_loss.push(h);
        if h < best.0 {
            best = (h, epoch, net.params.clone());
        }
    }
    trace.best_epoch = best.1;
    net.params = best.2;
    Ok((net, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<u64>) {
        let mut rng = stream_rng(seed, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x = vec![normal.sample(&mut rng), normal.sample(&mut rng)];
            ys.push(f64::from(u8::from(x[0] + x[1] > 0.0)));
            xs.push(x);
        }
        let groups = (0..n as u64).collect();
        (xs, ys, groups)
    }

    fn small_cfg() -> MlpConfig {
        MlpConfig {
            hidden_units: 8,
            epochs: 60,
            holdout_fraction: 0.1,
            max_lr: 0.02,
            ..MlpConfig::study()
        }
    }

    #[test]
    fn learns_separable_toy() {
        let (xs, ys, g) = toy(200, 1);
        let (_, trace) = fit_mlp(&xs, &ys, &g, &small_cfg()).unwrap();
        assert!(trace.holdout_loss[trace.best_epoch] < trace.holdout_loss[0]);
        assert_eq!(trace.learning_rates.len(), 60);
    }

    #[test]
    fn retrain_is_bitwise_identical() {
        let (xs, ys, g) = toy(100, 2);
        let cfg = MlpConfig {
            batch_size: Some(16),
            ..small_cfg()
        };
        let (a, _) = fit_mlp(&xs, &ys, &g, &cfg).unwrap();
        let (b, _) = fit_mlp(&xs, &ys, &g, &cfg).unwrap();
        assert_eq!(
            a.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn weight_decay_shrinks_weights() {
        let (xs, ys, _) = toy(200, 3);
        // final weights after equal epochs, not best-epoch ones
        let norm = |wd: f64| {
            let cfg = small_cfg();
            let mut net = Mlp::new(&[2, 8, 8, 1], &mut stream_rng(mix64(cfg.seed), INIT_STREAM));
            let mut opt = Adam::new(net.params.len(), wd);
            let sched = OneCycle::new(cfg.max_lr, cfg.epochs);
            let mut rng = stream_rng(mix64(cfg.seed), TRAIN_STREAM);
            let all: Vec<usize> = (0..xs.len()).collect();
            for s in 0..cfg.epochs {
                let (_, grad) = net.loss_and_grad(&xs, &ys, &all, Some((cfg.dropout, &mut rng)));
                opt.step(&mut net.params, &grad, sched.lr(s));
            }
            net.params.iter().map(|w| w * w).sum::<f64>()
        };
        assert!(norm(1e-2) < norm(0.0));
    }

    #[test]
    fn inference_ignores_dropout() {
        let (xs, ys, g) = toy(50, 4);
        let (net, _) = fit_mlp(&xs, &ys, &g, &small_cfg()).unwrap();
        let p = net.predict(&xs[0]);
        assert_eq!(p, net.predict(&xs[0]));
        assert!(p > 0.0 && p < 1.0);
        assert!(net.predict(&[1e9, 1e9]) < 1.0);
    }

    #[test]
    fn needs_both_classes() {
        let xs = vec![vec![0.0], vec![1.0]];
        let r = fit_mlp(&xs, &[1.0, 1.0], &[0, 1], &small_cfg());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn holdout_keeps_groups_together() {
        let groups: Vec<u64> = (0..300).map(|i| i / 3).collect();
        let (train, hold, n) = holdout_split(&groups, 0.1, 9);
        assert_eq!(n, 10);
        assert_eq!(hold.len(), 30);
        assert_eq!(train.len() + hold.len(), 300);
        let held: BTreeSet<u64> = hold.iter().map(|&i| groups[i]).collect();
        assert!(train.iter().all(|&i| !held.contains(&groups[i])));
    }
}
