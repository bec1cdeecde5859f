//! Finite-difference gradient checks and gradient-flow probes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{backward_with_fault, deep_name, forward, ArchConfig, Fault, NetworkSpec, ParamStore};
use crate::layers::softmax_xent;
use crate::rng::Rng;
use crate::tensor::{Element, Fill, Tensor};

/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-4;
/// Largest network [`gradcheck`] will perturb exhaustively.
pub const GRADCHECK_MAX_PARAMS: usize = 20_000;
/// Batch size of the fixed random gradcheck batch.
pub const GRADCHECK_BATCH: usize = 2;

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per parameter tensor (`<layer>.w`, `<layer>.b`).
    pub per_param: Vec<(String, f64)>,
    pub global_max: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    fn new(per_param: Vec<(String, f64)>, tolerance: f64) -> Self {
        let global_max = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        Self { per_param, global_max, tolerance, pass: global_max < tolerance }
    }
}

fn loss_of(spec: &NetworkSpec, params: &ParamStore<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward(spec, params, x, false)?;
    let (loss, _) = softmax_xent(&logits, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss during gradient check".into()));
    }
    Ok(loss)
}

fn element_mut<'a>(p: &'a mut ParamStore<f64>, layer: &str, suffix: &str, i: usize) -> &'a mut f64 {
    let lp = p.get_mut(layer).expect("probe shares the checked store's keys");
    let t = if suffix == "w" { &mut lp.weights } else { lp.bias.as_mut().expect("bias present") };
    &mut t.data_mut()[i]
}

/// Compares the analytic gradient of every parameter against a central
/// difference on the given batch, in `f64`. `fault` injects a backward defect.
pub fn gradcheck_on(
    spec: &NetworkSpec,
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    tolerance: f64,
    fault: Fault,
) -> Result<GradCheckReport> {
    let mut analytic = params.clone();
    let (logits, trace) = forward(spec, &analytic, x, true)?;
    let (_, grad) = softmax_xent(&logits, labels)?;
    backward_with_fault(spec, &mut analytic, trace.as_ref(), &grad, fault)?;

    let mut probe = params.clone();
    let mut per_param = Vec::new();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        let g = analytic.grad(name).ok_or_else(|| Error::MissingGradients(name.clone()))?.clone();
        let parts = [("w", Some(&g.weights)), ("b", g.bias.as_ref())];
        for (suffix, ga) in parts {
            let Some(ga) = ga else { continue };
            let mut worst = 0.0f64;
            for i in 0..ga.len() {
                let orig = *element_mut(&mut probe, name, suffix, i);
                *element_mut(&mut probe, name, suffix, i) = orig + GRADCHECK_EPS;
                let plus = loss_of(spec, &probe, x, labels)?;
                *element_mut(&mut probe, name, suffix, i) = orig - GRADCHECK_EPS;
                let minus = loss_of(spec, &probe, x, labels)?;
                *element_mut(&mut probe, name, suffix, i) = orig;
                let numeric = (plus - minus) / (2.0 * GRADCHECK_EPS);
                let a = ga.data()[i];
                if !a.is_finite() || !numeric.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {name}.{suffix}[{i}]")));
                }
                worst = worst.max(relative_error(a, numeric));
            }
            per_param.push((format!("{name}.{suffix}"), worst));
        }
    }
    Ok(GradCheckReport::new(per_param, tolerance))
}

/// The fixed random batch and He-initialized parameters for `seed`.
pub fn gradcheck_inputs(spec: &NetworkSpec, seed: u64) -> Result<(ParamStore<f64>, Tensor<f64>, Vec<usize>)> {
    let params = ParamStore::<f64>::init(spec, seed);
    let mut rng = Rng::derive(seed, &[0x6772_6164]);
    let x =
        Tensor::new(spec.input_shape().batch(GRADCHECK_BATCH), Fill::Normal { mean: 0.0, stddev: 1.0, rng: &mut rng })?;
    let labels = (0..GRADCHECK_BATCH).map(|_| rng.below(spec.num_classes())).collect();
    Ok((params, x, labels))
}

/// Exhaustive finite-difference check of a small network.
pub fn gradcheck(spec: &NetworkSpec, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    gradcheck_with_fault(spec, seed, tolerance, Fault::None)
}

pub fn gradcheck_with_fault(spec: &NetworkSpec, seed: u64, tolerance: f64, fault: Fault) -> Result<GradCheckReport> {
    let total = spec.count_params().total;
    if total > GRADCHECK_MAX_PARAMS {
        return Err(Error::Size(format!(
            "{total} parameters is too many for exhaustive checking (limit {GRADCHECK_MAX_PARAMS})"
        )));
    }
    let (params, x, labels) = gradcheck_inputs(spec, seed)?;
    gradcheck_on(spec, &params, &x, &labels, tolerance, fault)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkTag {
    Ffnet,
    Ablation,
}

impl std::fmt::Display for NetworkTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetworkTag::Ffnet => "ffnet",
            NetworkTag::Ablation => "ablation",
        })
    }
}

/// L2 norm of the first deep-conv weight gradient of every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProfile {
    pub norms: Vec<f64>,
    pub tag: NetworkTag,
    pub seed: u64,
}

impl FlowProfile {
    /// First-stage norm over last-stage norm.
    pub fn ratio(&self) -> f64 {
        self.norms[0] / self.norms[self.norms.len() - 1]
    }

    /// `stage,norm` lines with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,norm\n");
        for (i, n) in self.norms.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, n));
        }
        out
    }
}

fn tag_of(spec: &NetworkSpec) -> NetworkTag {
    if spec.is_ablation() {
        NetworkTag::Ablation
    } else {
        NetworkTag::Ffnet
    }
}

/// Backpropagates `grad_logits` through a captured forward pass on `x` and
/// records per-stage first-conv weight-gradient norms.
pub fn flow_profile_from_grad<T: Element>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    grad_logits: &Tensor<T>,
    seed: u64,
) -> Result<FlowProfile> {
    let mut params = params.clone();
    let (_, trace) = forward(spec, &params, x, true)?;
    backward_with_fault(spec, &mut params, trace.as_ref(), grad_logits, Fault::None)?;
    let norms = (0..spec.stages.len())
        .map(|i| {
            let name = deep_name(i, 0);
            let g = params.grad(&name).ok_or_else(|| Error::MissingGradients(name.clone()))?;
            let n = g.weights.l2_norm();
            if n.is_finite() {
                Ok(n)
            } else {
                Err(Error::NonFinite(format!("gradient norm of {name}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowProfile { norms, tag: tag_of(spec), seed })
}

/// One forward/backward of the softmax cross-entropy loss on a labeled batch.
pub fn flow_profile(
    spec: &NetworkSpec,
    params: &ParamStore,
    x: &Tensor,
    labels: &[usize],
    seed: u64,
) -> Result<FlowProfile> {
    let (logits, _) = forward(spec, params, x, false)?;
    let (_, grad) = softmax_xent(&logits, labels)?;
    flow_profile_from_grad(spec, params, x, &grad, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRow {
    pub seed: u64,
    pub r_ffnet: f64,
    pub r_ablation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSummary {
    pub stage_count: usize,
    pub batch_size: usize,
    pub rows: Vec<FlowRow>,
}

impl FlowSummary {
    /// Fraction of seeds where the fast-forward network keeps relatively more
    /// gradient at its first stage than the ablation.
    pub fn fraction_ffnet_higher(&self) -> f64 {
        let wins = self.rows.iter().filter(|r| r.r_ffnet > r.r_ablation).count();
        wins as f64 / self.rows.len().max(1) as f64
    }

    /// `seed,r_ffnet,r_ablation` lines with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,r_ffnet,r_ablation\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.seed, r.r_ffnet, r.r_ablation));
        }
        out
    }
}

/// The random batch a flow experiment uses for `seed`: standard-normal
/// pixels and uniform labels.
pub fn flow_batch(arch: &ArchConfig, batch_size: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    let mut rng = Rng::derive(seed, &[0x666c_6f77]);
    let x = Tensor::new(arch.input.batch(batch_size), Fill::Normal { mean: 0.0, stddev: 1.0, rng: &mut rng })?;
    let labels = (0..batch_size).map(|_| rng.below(arch.classes)).collect();
    Ok((x, labels))
}

/// For seeds `0..seeds`, initializes the network described by `base` (with
/// `stage_count` stages) and its ablation twin from the same seed, runs both
/// on the same batch at initialization, and records the first/last stage
/// gradient-norm ratios.
pub fn flow_experiment_with(
    base: &ArchConfig,
    stage_count: usize,
    seeds: u64,
    batch_size: usize,
) -> Result<FlowSummary> {
    let arch = ArchConfig { stages: stage_count, ablation: false, ..base.clone() };
    let ffnet = NetworkSpec::build(&arch)?;
    let ablation = NetworkSpec::build(&ArchConfig { ablation: true, ..arch.clone() })?;
    let rows = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let (x, labels) = flow_batch(&arch, batch_size, seed)?;
            let f = flow_profile(&ffnet, &ParamStore::init(&ffnet, seed), &x, &labels, seed)?;
            let a = flow_profile(&ablation, &ParamStore::init(&ablation, seed), &x, &labels, seed)?;
            Ok(FlowRow { seed, r_ffnet: f.ratio(), r_ablation: a.ratio() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowSummary { stage_count, batch_size, rows })
}

/// [`flow_experiment_with`] on the reference architecture (3×32×32 input,
/// 64-filter branches, FC 400 → 100, 10 classes).
pub fn flow_experiment(stage_count: usize, seeds: u64, batch_size: usize) -> Result<FlowSummary> {
    flow_experiment_with(&ArchConfig::default(), stage_count, seeds, batch_size)
}
