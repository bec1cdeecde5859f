//! SGD with momentum, the training loop, evaluation and checkpoints.

mod checkpoint;
mod eval;
mod metrics;

pub use checkpoint::{checkpoint_load, checkpoint_save, hex, Checkpoint, MAGIC, VERSION};
pub use eval::{argmax, evaluate, EvalResult};
pub use metrics::{MetricsLog, MetricsRow, Split, CSV_HEADER};

use crate::config::FlatConfig;
use crate::data::{augment, Dataset};
use crate::error::{Error, Result};
use crate::graph::{backward, forward, NetworkSpec, ParamStore};
use crate::layers::softmax_xent;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Stream tags for [`Rng::derive`].
const STREAM_EPOCH: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

/// Training samples used for the periodic `train` metrics row.
pub const TRAIN_PROBE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Fixed,
    /// `lr · gamma^floor(iteration / step_size)`.
    Step {
        gamma: f64,
        step_size: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iterations: u64,
    pub eval_interval: u64,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Random pad-crop and flip per training sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            max_iterations: 1000,
            eval_interval: 100,
            seed: 0,
            lr_schedule: LrSchedule::Fixed,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "batch_size",
        "lr",
        "momentum",
        "weight_decay",
        "max_iterations",
        "eval_interval",
        "seed",
        "lr_schedule",
        "lr_gamma",
        "lr_step",
        "augment",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        if let LrSchedule::Step { step_size: 0, .. } = self.lr_schedule {
            return Err(Error::Config("lr_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate for the update that produces `iteration` (1-based).
    pub fn lr_at(&self, iteration: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Fixed => self.lr,
            LrSchedule::Step { gamma, step_size } => self.lr * gamma.powi(((iteration - 1) / step_size) as i32),
        }
    }

    pub fn apply(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(v) = cfg.value("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = cfg.value("lr")? {
            self.lr = v;
        }
        if let Some(v) = cfg.value("momentum")? {
            self.momentum = v;
        }
        if let Some(v) = cfg.value("weight_decay")? {
            self.weight_decay = v;
        }
        if let Some(v) = cfg.value("max_iterations")? {
            self.max_iterations = v;
        }
        if let Some(v) = cfg.value("eval_interval")? {
            self.eval_interval = v;
        }
        if let Some(v) = cfg.value("seed")? {
            self.seed = v;
        }
        if let Some(v) = cfg.value("augment")? {
            self.augment = v;
        }
        match cfg.get("lr_schedule") {
            None | Some("fixed") => {}
            Some("step") => {
                self.lr_schedule = LrSchedule::Step {
                    gamma: cfg.value("lr_gamma")?.unwrap_or(0.1),
                    step_size: cfg.value("lr_step")?.unwrap_or(10_000),
                }
            }
            Some(other) => return Err(Error::Config(format!("unknown lr_schedule `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines covering every field.
    pub fn to_config(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        c.set("batch_size", self.batch_size);
        c.set("lr", self.lr);
        c.set("momentum", self.momentum);
        c.set("weight_decay", self.weight_decay);
        c.set("max_iterations", self.max_iterations);
        c.set("eval_interval", self.eval_interval);
        c.set("seed", self.seed);
        match self.lr_schedule {
            LrSchedule::Fixed => c.set("lr_schedule", "fixed"),
            LrSchedule::Step { gamma, step_size } => {
                c.set("lr_schedule", "step");
                c.set("lr_gamma", gamma);
                c.set("lr_step", step_size);
            }
        }
        c.set("augment", self.augment);
        c
    }
}

/// One momentum update with a given learning rate:
/// `v ← momentum·v − lr·(g + weight_decay·w)`, `w ← w + v`.
/// Gradients are cleared afterwards.
pub fn sgd_update<T: Element>(params: &mut ParamStore<T>, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    {
        let (weights, grads, velocity) = params.split_mut();
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.is_none()) {
            return Err(Error::MissingGradients(name.clone()));
        }
        for ((w, g), v) in weights.values_mut().zip(grads.values()).zip(velocity.values_mut()) {
            let g = g.as_ref().expect("checked above");
            let pairs = std::iter::once((&mut w.weights, (&g.weights, &mut v.weights)));
            let bias = match (w.bias.as_mut(), g.bias.as_ref(), v.bias.as_mut()) {
                (Some(wb), Some(gb), Some(vb)) => Some((wb, (gb, vb))),
                _ => None,
            };
            for (wt, (gt, vt)) in pairs.chain(bias) {
                for ((wx, &gx), vx) in wt.data_mut().iter_mut().zip(gt.data()).zip(vt.data_mut()) {
                    *vx = mu * *vx - lr * (gx + wd * *wx);
                    *wx += *vx;
                }
            }
        }
    }
    params.clear_grads();
    Ok(())
}

/// [`sgd_update`] at the configured base learning rate.
pub fn sgd_step<T: Element>(params: &mut ParamStore<T>, cfg: &TrainConfig) -> Result<()> {
    sgd_update(params, cfg.lr, cfg.momentum, cfg.weight_decay)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    /// Completed iterations.
    pub iteration: u64,
}

impl TrainState {
    pub fn fresh(spec: &NetworkSpec, seed: u64) -> Self {
        Self { params: ParamStore::init(spec, seed), iteration: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub state: TrainState,
    pub metrics: MetricsLog,
    /// Training-batch loss of every iteration run, in order.
    pub batch_losses: Vec<f64>,
}

/// Sample order: one seeded permutation per epoch, so the batch drawn at any
/// iteration depends only on `(seed, iteration)`.
struct Sampler {
    seed: u64,
    n: usize,
    epoch: Option<(u64, Vec<usize>)>,
}

impl Sampler {
    fn new(seed: u64, n: usize) -> Self {
        Self { seed, n, epoch: None }
    }

    fn index(&mut self, position: u64) -> usize {
        let epoch = position / self.n as u64;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut rng = Rng::derive(self.seed, &[STREAM_EPOCH, epoch]);
            let mut perm: Vec<usize> = (0..self.n).collect();
            for i in (1..self.n).rev() {
                perm.swap(i, rng.below(i + 1));
            }
            self.epoch = Some((epoch, perm));
        }
        self.epoch.as_ref().unwrap().1[(position % self.n as u64) as usize]
    }

    fn batch(&mut self, iteration: u64, size: usize) -> Vec<usize> {
        let start = (iteration - 1) * size as u64;
        (0..size as u64).map(|j| self.index(start + j)).collect()
    }
}

fn training_batch(
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<(Tensor, Vec<usize>)> {
    if !cfg.augment {
        return data.gather(indices);
    }
    let images: Vec<Tensor> = indices
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let mut rng = Rng::derive(cfg.seed, &[STREAM_AUGMENT, iteration, j as u64]);
            augment(&data.image(i), &mut rng)
        })
        .collect();
    Ok((Tensor::stack(&images)?, indices.iter().map(|&i| data.labels[i]).collect()))
}

/// One forward/backward/update on a batch; returns the batch loss.
pub fn train_step(
    spec: &NetworkSpec,
    params: &mut ParamStore,
    x: &Tensor,
    labels: &[usize],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (logits, trace) = forward(spec, params, x, true)?;
    let (loss, grad) = softmax_xent(&logits, labels)?;
    backward(spec, params, trace.as_ref(), &grad)?;
    sgd_update(params, lr, cfg.momentum, cfg.weight_decay)?;
    Ok(loss as f64)
}

/// Fresh training run from `cfg.seed`.
pub fn train(spec: &NetworkSpec, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainRun> {
    train_from(spec, data, val, cfg, TrainState::fresh(spec, cfg.seed))
}

/// Continues `state` until `cfg.max_iterations` iterations have completed.
/// Every `eval_interval` iterations a `train` row (plain evaluation on the
/// first [`TRAIN_PROBE`] training samples) and, with `val`, a `val` row are
/// logged. Both depend only on the parameters, so resuming from a checkpoint
/// reproduces the uninterrupted log.
pub fn train_from(
    spec: &NetworkSpec,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    state: TrainState,
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Size("training set is empty".into()));
    }
    let expected = spec.input_shape().batch(1);
    if data.image_shape() != expected {
        return Err(Error::Shape(format!("dataset images {} != network input {expected}", data.image_shape())));
    }
    state.params.validate(spec)?;
    let probe = data.subset(0, data.len().min(TRAIN_PROBE))?;
    let mut sampler = Sampler::new(cfg.seed, data.len());
    let TrainState { mut params, iteration } = state;
    let mut metrics = MetricsLog::default();
    let mut batch_losses = Vec::new();
    for it in iteration + 1..=cfg.max_iterations {
        let indices = sampler.batch(it, cfg.batch_size);
        let (x, labels) = training_batch(data, &indices, cfg, it)?;
        let loss = train_step(spec, &mut params, &x, &labels, cfg.lr_at(it), cfg)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {it}")));
        }
        batch_losses.push(loss);
        if it % cfg.eval_interval == 0 {
            let r = evaluate(spec, &params, &probe, false)?;
            metrics.push(MetricsRow { iteration: it, split: Split::Train, loss: r.loss, accuracy: r.accuracy });
            if let Some(v) = val {
                let r = evaluate(spec, &params, v, false)?;
                metrics.push(MetricsRow { iteration: it, split: Split::Val, loss: r.loss, accuracy: r.accuracy });
            }
        }
    }
    Ok(TrainRun { state: TrainState { params, iteration: cfg.max_iterations.max(iteration) }, metrics, batch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ArchConfig, InputShape};
    use crate::layers::LayerParams;
    use crate::tensor::Shape;
    use indexmap::IndexMap;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let one = Shape::new(1, 1, 1, 1).unwrap();
        let mut m = IndexMap::new();
        m.insert("x".to_string(), LayerParams { weights: Tensor::from_vec(one, vec![w]).unwrap(), bias: None });
        ParamStore::from_params(m)
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        let one = Shape::new(1, 1, 1, 1).unwrap();
        s.set_grad("x", LayerParams { weights: Tensor::from_vec(one, vec![g]).unwrap(), bias: None }).unwrap();
    }

    fn w(s: &ParamStore<f64>) -> f64 {
        s.get("x").unwrap().weights.data()[0]
    }

    #[test]
    fn plain_gradient_descent() {
        let cfg = TrainConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0, ..Default::default() };
        let mut s = scalar_store(1.0);
        set_grad(&mut s, 0.5);
        sgd_step(&mut s, &cfg).unwrap();
        assert_eq!(w(&s), 1.0 - 0.1 * 0.5);
        assert!((w(&s) - 0.95).abs() < 1e-15);
        assert!(s.grad("x").is_none());
    }

    #[test]
    fn momentum_hand_iteration() {
        let cfg = TrainConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0, ..Default::default() };
        let mut s = scalar_store(0.0);
        set_grad(&mut s, 1.0);
        sgd_step(&mut s, &cfg).unwrap();
        assert!((w(&s) + 0.1).abs() < 1e-15);
        set_grad(&mut s, 1.0);
        sgd_step(&mut s, &cfg).unwrap();
        assert!((w(&s) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut s = scalar_store(0.7);
        set_grad(&mut s, 0.0);
        sgd_step(&mut s, &cfg).unwrap();
        assert_eq!(w(&s), 0.7);
    }

    #[test]
    fn missing_gradient() {
        let mut s = scalar_store(0.7);
        assert!(matches!(sgd_step(&mut s, &TrainConfig::default()), Err(Error::MissingGradients(_))));
    }

    #[test]
    fn step_schedule() {
        let cfg =
            TrainConfig { lr: 1.0, lr_schedule: LrSchedule::Step { gamma: 0.5, step_size: 10 }, ..Default::default() };
        assert_eq!(cfg.lr_at(1), 1.0);
        assert_eq!(cfg.lr_at(10), 1.0);
        assert_eq!(cfg.lr_at(11), 0.5);
        assert_eq!(cfg.lr_at(25), 0.25);
    }

    #[test]
    fn config_round_trip() {
        let cfg =
            TrainConfig { lr_schedule: LrSchedule::Step { gamma: 0.5, step_size: 7 }, seed: 3, ..Default::default() };
        let mut back = TrainConfig::default();
        back.apply(&cfg.to_config()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sampler_is_a_permutation_per_epoch() {
        let mut s = Sampler::new(4, 10);
        let mut seen: Vec<usize> = (1..=5).flat_map(|it| s.batch(it, 2)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let mut again = Sampler::new(4, 10);
        assert_eq!(again.batch(3, 2), Sampler::new(4, 10).batch(3, 2));
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let spec = NetworkSpec::build(&ArchConfig {
            input: InputShape::new(3, 32, 32),
            stages: 1,
            branch_width: 2,
            fc1: 4,
            fc2: 3,
            classes: 2,
            ablation: false,
        })
        .unwrap();
        let data = crate::data::synthetic_dataset(crate::data::SyntheticKind::Separable, 4, 2, 0).unwrap();
        let cfg = TrainConfig { max_iterations: 0, seed: 5, ..Default::default() };
        let run = train(&spec, &data, None, &cfg).unwrap();
        assert_eq!(run.state.params, ParamStore::init(&spec, 5));
        assert_eq!(run.metrics.to_csv(), format!("{CSV_HEADER}\n"));
    }
}
