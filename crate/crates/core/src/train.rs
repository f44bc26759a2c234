//! Optimizers, mini-batch training loops for teachers and students, and
//! top-1 evaluation.
//!
//! One loop drives all six methods. The sampled paths never touch the full
//! class set on the student side; their per-sample subset sizes are counted
//! so tests can verify the cost contract.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    full_distill_grad_into, is_distill_grad_into, is_subset_loss, pdbs_grad_into, pdbs_loss,
    pdbs_select, RankFrequencyLog, SampledBatchPlan,
};
use crate::model::{
    energies_full_cached, energies_subset, energies_subset_cached, forward, predict_top1,
    softmax_t, Activation, ModelParams, ParamGrad,
};
use crate::proposals::{
    build_mixture_pmf, proposal_teacher, proposal_uniform, schedule_b2, AliasTable,
    LaplaceMixtureConfig,
};
use crate::soft_labels::{RankMaps, SoftLabelStore};
use crate::timing::TimingRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    HardLabels,
    Distillation,
    Pdbs,
    UniformIs,
    Ftis,
    Dis,
}

impl TrainMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMethod::HardLabels => "hard_labels",
            TrainMethod::Distillation => "distillation",
            TrainMethod::Pdbs => "pdbs",
            TrainMethod::UniformIs => "uniform_is",
            TrainMethod::Ftis => "ftis",
            TrainMethod::Dis => "dis",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "hard_labels" => TrainMethod::HardLabels,
            "distillation" => TrainMethod::Distillation,
            "pdbs" => TrainMethod::Pdbs,
            "uniform_is" => TrainMethod::UniformIs,
            "ftis" => TrainMethod::Ftis,
            "dis" => TrainMethod::Dis,
            other => return Err(Error::Param(format!("unknown training method '{other}'"))),
        })
    }

    /// Methods that draw or select a class subset.
    pub fn uses_subset(&self) -> bool {
        matches!(
            self,
            TrainMethod::Pdbs | TrainMethod::UniformIs | TrainMethod::Ftis | TrainMethod::Dis
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// Architecture description used to build fresh models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    /// Uniform init half-width; `None` means `1/sqrt(fan_in)` per layer.
    pub init_scale: Option<f64>,
}

impl ModelSpec {
    pub fn linear() -> Self {
        Self {
            kind: ModelKind::Linear,
            hidden_dim: 0,
            init_scale: None,
        }
    }

    pub fn mlp(hidden_dim: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden_dim,
            init_scale: None,
        }
    }

    pub fn build<R: rand::Rng>(&self, d_in: usize, n_classes: usize, rng: &mut R) -> ModelParams {
        let mut model = match self.kind {
            ModelKind::Linear => ModelParams::linear(d_in, n_classes),
            ModelKind::Mlp => ModelParams::mlp(d_in, self.hidden_dim, n_classes, Activation::Relu),
        };
        model.init_uniform(self.init_scale, rng);
        model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    /// Selected subset size (k) or number of draws (m).
    pub subset_size: usize,
    pub temperature: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    /// Proposal floor for the fixed-teacher method.
    pub teacher_floor: f64,
    /// Rank-proposal parameters for the dynamic method. `bins` is forced to
    /// the class count at train time (one bin per rank) and
    /// `schedule_steps == 0` means "the whole training run".
    pub mixture: LaplaceMixtureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: TrainMethod::Distillation,
            subset_size: 10,
            temperature: 4.0,
            lambda: 1.0,
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            seed: 0,
            teacher_floor: 1e-6,
            mixture: LaplaceMixtureConfig {
                schedule_steps: 0,
                ..LaplaceMixtureConfig::default()
            },
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be >= 1".into()));
        }
        if self.method.uses_subset() && self.subset_size == 0 {
            return Err(Error::Param(
                "subset size must be >= 1 for subset methods".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Param("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Param("lambda must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Optimizer moment buffers, shape-congruent with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// Adam first moment / RMSProp momentum buffer.
    pub first: ParamGrad,
    /// Adam second moment / RMSProp mean-square EMA.
    pub second: ParamGrad,
}

impl OptimizerState {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            step: 0,
            first: ParamGrad::zeros_like(model),
            second: ParamGrad::zeros_like(model),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_MOMENTUM: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// Bias-corrected Adam update:
/// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`,
/// `p -= lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)`.
pub fn adam_step(
    params: &mut ModelParams,
    grad: &ParamGrad,
    state: &mut OptimizerState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let corr1 = 1.0 - beta1.powi(t);
    let corr2 = 1.0 - beta2.powi(t);
    let mut p_arrays = params.arrays_mut();
    let g_arrays = grad.arrays();
    let mut m_arrays = state.first.arrays_mut();
    let mut v_arrays = state.second.arrays_mut();
    for a in 0..g_arrays.len() {
        let (p, g) = (&mut p_arrays[a], g_arrays[a]);
        let (m, v) = (&mut m_arrays[a], &mut v_arrays[a]);
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// RMSProp with momentum:
/// `s = decay*s + (1-decay)*g^2`, `b = momentum*b + lr*g/(sqrt(s)+eps)`,
/// `p -= b`.
pub fn rmsprop_step(
    params: &mut ModelParams,
    grad: &ParamGrad,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    decay: f64,
    eps: f64,
) {
    state.step += 1;
    let mut p_arrays = params.arrays_mut();
    let g_arrays = grad.arrays();
    let mut b_arrays = state.first.arrays_mut();
    let mut s_arrays = state.second.arrays_mut();
    for a in 0..g_arrays.len() {
        let (p, g) = (&mut p_arrays[a], g_arrays[a]);
        let (b, s) = (&mut b_arrays[a], &mut s_arrays[a]);
        for i in 0..g.len() {
            s[i] = decay * s[i] + (1.0 - decay) * g[i] * g[i];
            b[i] = momentum * b[i] + lr * g[i] / (s[i].sqrt() + eps);
            p[i] -= b[i];
        }
    }
}

fn optimizer_step(
    params: &mut ModelParams,
    grad: &ParamGrad,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) {
    match cfg.optimizer {
        OptimizerKind::Adam => adam_step(
            params,
            grad,
            state,
            cfg.learning_rate,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        ),
        OptimizerKind::Rmsprop => rmsprop_step(
            params,
            grad,
            state,
            cfg.learning_rate,
            RMSPROP_MOMENTUM,
            RMSPROP_DECAY,
            RMSPROP_EPS,
        ),
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_top1: Option<f64>,
    pub wall_ms_last_layer: f64,
    pub wall_ms_sampling: f64,
}

pub fn write_epoch_csv<W: Write>(rows: &[EpochRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "epoch,train_loss,eval_top1,wall_ms_last_layer,wall_ms_sampling"
    )?;
    for r in rows {
        let eval = r.eval_top1.map_or(String::new(), |v| v.to_string());
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, eval, r.wall_ms_last_layer, r.wall_ms_sampling
        )?;
    }
    Ok(())
}

/// Cost counters for the subset-size contract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    /// Student class-energy evaluations across the whole run.
    pub student_energy_evals: u64,
    pub samples_processed: u64,
}

/// Everything a training run produces.
pub struct TrainOutcome {
    pub model: ModelParams,
    pub freq_log: RankFrequencyLog,
    pub timing: TimingRecord,
    pub history: Vec<EpochRow>,
    pub stats: TrainStats,
}

struct DistillCtx<'a> {
    store: &'a SoftLabelStore,
    maps: &'a RankMaps,
    teacher: &'a ModelParams,
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over (seed, stream)
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train a fresh teacher on hard labels.
pub fn train_teacher(train: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<ModelParams> {
    Ok(train_teacher_logged(train, None, spec, cfg)?.model)
}

/// Hard-label training with the full outcome (history, timing, stats).
pub fn train_teacher_logged(
    train: &Dataset,
    eval: Option<&Dataset>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.method = TrainMethod::HardLabels;
    train_loop(train, eval, spec, &cfg, None)
}

/// Train a student with whichever method the config names. Soft labels,
/// rank maps, and the teacher model must all describe `train`.
pub fn train_student(
    train: &Dataset,
    store: &SoftLabelStore,
    maps: &RankMaps,
    teacher: &ModelParams,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    if store.n_samples != train.len() || store.n_classes != train.n_classes {
        return Err(Error::Shape(format!(
            "soft-label store is {}x{}, dataset is {}x{}",
            store.n_samples,
            store.n_classes,
            train.len(),
            train.n_classes
        )));
    }
    if maps.n_samples != train.len() || maps.n_classes != train.n_classes {
        return Err(Error::Shape("rank maps misaligned with dataset".into()));
    }
    if teacher.n_classes() != train.n_classes || teacher.input_dim() != train.n_features {
        return Err(Error::Shape("teacher shape misaligned with dataset".into()));
    }
    train_loop(
        train,
        eval,
        spec,
        cfg,
        Some(DistillCtx {
            store,
            maps,
            teacher,
        }),
    )
}

fn train_loop(
    train: &Dataset,
    eval: Option<&Dataset>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    ctx: Option<DistillCtx<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.validate()?;
    if cfg.method != TrainMethod::HardLabels && ctx.is_none() {
        return Err(Error::Param(format!(
            "method {} needs soft labels and a teacher",
            cfg.method.name()
        )));
    }
    let c = train.n_classes;
    let n = train.len();
    let k = cfg.subset_size;

    let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 3));

    let mut model = spec.build(train.n_features, c, &mut init_rng);
    let mut opt = OptimizerState::new(&model);
    let mut batch_grad = ParamGrad::zeros_like(&model);

    // Method-specific fixtures.
    let uniform_alias = if cfg.method == TrainMethod::UniformIs {
        Some(AliasTable::new(&proposal_uniform(c)?)?)
    } else {
        None
    };
    let n_batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mixture = if cfg.method == TrainMethod::Dis {
        let mut mix = cfg.mixture.clone();
        mix.bins = c; // one bin per rank
        if mix.schedule_steps == 0 {
            mix.schedule_steps = (cfg.epochs * n_batches_per_epoch).max(1);
        }
        mix.validate()?;
        Some(mix)
    } else {
        None
    };

    let mut freq_log = RankFrequencyLog::new(c);
    let mut timing = TimingRecord::default();
    let mut stats = TrainStats::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step: usize = 0;

    for epoch in 0..cfg.epochs {
        if cfg.method == TrainMethod::Pdbs {
            freq_log.start_epoch();
        }
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut epoch_last_ns: u64 = 0;
        let mut epoch_samp_ns: u64 = 0;

        for batch in order.chunks(cfg.batch_size) {
            batch_grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_last_ns: u64 = 0;
            let mut batch_samp_ns: u64 = 0;

            // DIS draws one rank set per mini-batch.
            let dis_plan = if let Some(mix) = &mixture {
                let t0 = Instant::now();
                let pmf = build_mixture_pmf(mix, schedule_b2(mix, step))?;
                let table = AliasTable::new(&pmf)?;
                let plan = SampledBatchPlan::draw(&table, pmf.probs(), k, &mut sample_rng);
                batch_samp_ns += t0.elapsed().as_nanos() as u64;
                Some(plan)
            } else {
                None
            };

            for &s in batch {
                let x = train.input(s);
                let y = train.labels[s];
                stats.samples_processed += 1;
                match cfg.method {
                    TrainMethod::HardLabels => {
                        let t0 = Instant::now();
                        let fwd = forward(&model, x)?;
                        let energies = energies_full_cached(&model, &fwd);
                        let q = softmax_t(&energies, cfg.temperature)?;
                        let terms: Vec<(usize, f64)> = (0..c)
                            .map(|i| {
                                let onehot = if i == y { 1.0 } else { 0.0 };
                                (i, (onehot - q[i]) / cfg.temperature * scale)
                            })
                            .collect();
                        crate::model::weighted_energy_grad_into(
                            &mut batch_grad,
                            &model,
                            x,
                            &fwd,
                            &terms,
                        )?;
                        batch_last_ns += t0.elapsed().as_nanos() as u64;
                        stats.student_energy_evals += c as u64;
                        loss_sum += -q[y].max(f64::MIN_POSITIVE).ln();
                    }
                    TrainMethod::Distillation => {
                        let ctx = ctx.as_ref().expect("checked above");
                        let p = ctx.store.row(s);
                        let t0 = Instant::now();
                        let fwd = forward(&model, x)?;
                        let energies = energies_full_cached(&model, &fwd);
                        full_distill_grad_into(
                            &mut batch_grad,
                            &model,
                            x,
                            &fwd,
                            &energies,
                            p,
                            y,
                            cfg.temperature,
                            cfg.lambda,
                            scale,
                        )?;
                        batch_last_ns += t0.elapsed().as_nanos() as u64;
                        stats.student_energy_evals += c as u64;
                        loss_sum += sample_distill_loss(&energies, p, y, cfg)?;
                    }
                    TrainMethod::Pdbs => {
                        let ctx = ctx.as_ref().expect("checked above");
                        let p = ctx.store.row(s);
                        // Selection needs the full student softmax; that cost
                        // is reported in the sampling column.
                        let t0 = Instant::now();
                        let fwd = forward(&model, x)?;
                        let energies = energies_full_cached(&model, &fwd);
                        let q = softmax_t(&energies, cfg.temperature)?;
                        let selected = pdbs_select(p, &q, k, y)?;
                        batch_samp_ns += t0.elapsed().as_nanos() as u64;

                        let t1 = Instant::now();
                        pdbs_grad_into(
                            &mut batch_grad,
                            &model,
                            x,
                            &fwd,
                            p,
                            &selected,
                            cfg.temperature,
                            scale,
                        )?;
                        batch_last_ns += t1.elapsed().as_nanos() as u64;
                        stats.student_energy_evals += (c + selected.len()) as u64;
                        freq_log.record(&selected, ctx.maps.classes_row(s));
                        loss_sum += pdbs_loss(&model, x, p, &selected, cfg.temperature)?;
                    }
                    TrainMethod::UniformIs | TrainMethod::Ftis | TrainMethod::Dis => {
                        let ctx = ctx.as_ref().expect("checked above");

                        let t0 = Instant::now();
                        let (classes, r_values) = match cfg.method {
                            TrainMethod::UniformIs => {
                                let table = uniform_alias.as_ref().expect("uniform table");
                                let classes = table.sample_n(k, &mut sample_rng);
                                let r = vec![1.0 / c as f64; k];
                                (classes, r)
                            }
                            TrainMethod::Ftis => {
                                let pmf = proposal_teacher(ctx.store.row(s), cfg.teacher_floor)?;
                                let table = AliasTable::new(&pmf)?;
                                let classes = table.sample_n(k, &mut sample_rng);
                                let r = classes.iter().map(|&i| pmf.prob(i)).collect();
                                (classes, r)
                            }
                            TrainMethod::Dis => {
                                let plan = dis_plan.as_ref().expect("dis plan");
                                (plan.classes_for(ctx.maps, s), plan.rank_probs.clone())
                            }
                            _ => unreachable!(),
                        };
                        batch_samp_ns += t0.elapsed().as_nanos() as u64;

                        let t1 = Instant::now();
                        let fwd = forward(&model, x)?;
                        let mut evaluated = classes.clone();
                        evaluated.push(y);
                        let teacher_e = energies_subset(ctx.teacher, x, &evaluated)?;
                        is_distill_grad_into(
                            &mut batch_grad,
                            &model,
                            x,
                            &fwd,
                            &teacher_e,
                            y,
                            &classes,
                            &r_values,
                            cfg.temperature,
                            scale,
                        )?;
                        batch_last_ns += t1.elapsed().as_nanos() as u64;
                        stats.student_energy_evals += (classes.len() + 1) as u64;

                        // Proxy loss over the evaluated classes, target first.
                        let mut eval_order = Vec::with_capacity(classes.len() + 1);
                        eval_order.push(y);
                        eval_order.extend_from_slice(&classes);
                        let student_e = energies_subset_cached(&model, &fwd, &eval_order)?;
                        let mut teacher_first = Vec::with_capacity(teacher_e.len());
                        teacher_first.push(teacher_e[classes.len()]);
                        teacher_first.extend_from_slice(&teacher_e[..classes.len()]);
                        loss_sum +=
                            is_subset_loss(&student_e, &teacher_first, &r_values, cfg.temperature)?;
                    }
                }
            }

            optimizer_step(&mut model, &batch_grad, &mut opt, cfg);
            step += 1;
            timing.push(batch_last_ns, batch_samp_ns);
            epoch_last_ns += batch_last_ns;
            epoch_samp_ns += batch_samp_ns;
        }

        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {train_loss} at epoch {epoch}"
            )));
        }
        let eval_top1 = match eval {
            Some(ds) => Some(evaluate_top1(&model, ds)?),
            None => None,
        };
        history.push(EpochRow {
            epoch,
            train_loss,
            eval_top1,
            wall_ms_last_layer: epoch_last_ns as f64 / 1e6,
            wall_ms_sampling: epoch_samp_ns as f64 / 1e6,
        });
    }

    Ok(TrainOutcome {
        model,
        freq_log,
        timing,
        history,
        stats,
    })
}

fn sample_distill_loss(energies: &[f64], p: &[f64], y: usize, cfg: &TrainConfig) -> Result<f64> {
    let q = softmax_t(energies, cfg.temperature)?;
    let p_mass: f64 = p.iter().sum();
    let mut soft = 0.0;
    for (qi, pi) in q.iter().zip(p) {
        let pn = pi / p_mass;
        if pn > 0.0 {
            soft -= pn * qi.max(f64::MIN_POSITIVE).ln();
        }
    }
    let hard = -q[y].max(f64::MIN_POSITIVE).ln();
    Ok(cfg.lambda * soft + (1.0 - cfg.lambda) * hard)
}

/// Fraction of samples whose lowest-energy class matches the label.
pub fn evaluate_top1(model: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Param("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for s in 0..dataset.len() {
        if predict_top1(model, dataset.input(s))? == dataset.labels[s] {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobsConfig};
    use crate::soft_labels::relabel_dataset;

    fn small_blobs(seed: u64) -> (Dataset, Dataset) {
        gen_blobs(&BlobsConfig {
            n_classes: 3,
            samples_per_class: 40,
            dim: 4,
            center_scale: 2.0,
            noise_sigma: 0.6,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn adam_zero_grad_leaves_params_unchanged() {
        let mut m = ModelParams::linear(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.init_uniform(None, &mut rng);
        let before = m.clone();
        let g = ParamGrad::zeros_like(&m);
        let mut state = OptimizerState::new(&m);
        adam_step(
            &mut m, &g, &mut state, 0.01, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
        );
        assert_eq!(m, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_scalar_first_step_is_minus_lr() {
        // Hand evaluation with g=1 from a fresh state: the bias corrections
        // cancel and the update is -lr/(1+eps).
        let mut m = ModelParams::linear(1, 1);
        let mut g = ParamGrad::zeros_like(&m);
        g.out_weights.set(0, 0, 1.0);
        let mut state = OptimizerState::new(&m);
        adam_step(
            &mut m, &g, &mut state, 0.01, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
        );
        let expect = -0.01 / (1.0 + ADAM_EPS);
        assert!((m.out_weights.get(0, 0) - expect).abs() <= 1e-12);
    }

    #[test]
    fn rmsprop_zero_grad_leaves_params_unchanged() {
        let mut m = ModelParams::linear(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        m.init_uniform(None, &mut rng);
        let before = m.clone();
        let g = ParamGrad::zeros_like(&m);
        let mut state = OptimizerState::new(&m);
        rmsprop_step(
            &mut m,
            &g,
            &mut state,
            0.01,
            RMSPROP_MOMENTUM,
            RMSPROP_DECAY,
            RMSPROP_EPS,
        );
        assert_eq!(m, before);
    }

    #[test]
    fn rmsprop_scalar_step_matches_hand_formula() {
        let mut m = ModelParams::linear(1, 1);
        let mut g = ParamGrad::zeros_like(&m);
        g.out_weights.set(0, 0, 2.0);
        let mut state = OptimizerState::new(&m);
        rmsprop_step(&mut m, &g, &mut state, 0.01, 0.9, 0.9, 1e-8);
        // s = 0.1*4 = 0.4; b = 0.01*2/(sqrt(0.4)+1e-8); p = -b
        let expect = -(0.01 * 2.0 / (0.4f64.sqrt() + 1e-8));
        assert!((m.out_weights.get(0, 0) - expect).abs() <= 1e-15);
    }

    #[test]
    fn teacher_learns_separable_blobs() {
        let (train, test) = small_blobs(3);
        let cfg = TrainConfig {
            temperature: 1.0,
            epochs: 30,
            seed: 5,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&train, &ModelSpec::linear(), &cfg).unwrap();
        let acc = evaluate_top1(&teacher, &train).unwrap();
        assert!(acc >= 0.95, "teacher train accuracy {acc}");
        assert!(evaluate_top1(&teacher, &test).unwrap() >= 0.9);
    }

    #[test]
    fn zero_epochs_returns_initialized_params() {
        let (train, _) = small_blobs(4);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&train, &ModelSpec::linear(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(9, 1));
        let expect = ModelSpec::linear().build(4, 3, &mut rng);
        assert_eq!(teacher, expect);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (train, test) = small_blobs(6);
        let tcfg = TrainConfig {
            temperature: 1.0,
            epochs: 10,
            seed: 11,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&train, &ModelSpec::linear(), &tcfg).unwrap();
        let store = relabel_dataset(&teacher, &train, 4.0).unwrap();
        let maps = RankMaps::from_store(&store);
        for method in [
            TrainMethod::Distillation,
            TrainMethod::Pdbs,
            TrainMethod::UniformIs,
            TrainMethod::Ftis,
            TrainMethod::Dis,
        ] {
            let cfg = TrainConfig {
                method,
                subset_size: 2,
                epochs: 3,
                seed: 21,
                ..TrainConfig::default()
            };
            let a = train_student(
                &train,
                &store,
                &maps,
                &teacher,
                &ModelSpec::mlp(6),
                &cfg,
                Some(&test),
            )
            .unwrap();
            let b = train_student(
                &train,
                &store,
                &maps,
                &teacher,
                &ModelSpec::mlp(6),
                &cfg,
                Some(&test),
            )
            .unwrap();
            assert_eq!(
                a.model.checkpoint_bytes().unwrap(),
                b.model.checkpoint_bytes().unwrap(),
                "method {} not deterministic",
                method.name()
            );
        }
    }

    #[test]
    fn student_at_teacher_fixed_point_keeps_zero_gradients() {
        let (train, _) = small_blobs(8);
        let tcfg = TrainConfig {
            temperature: 1.0,
            epochs: 15,
            seed: 13,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&train, &ModelSpec::linear(), &tcfg).unwrap();
        let t = 3.0;
        let store = relabel_dataset(&teacher, &train, t).unwrap();
        // Same architecture, p == q everywhere: distillation gradients
        // vanish up to the teacher-mass renormalization rounding.
        let mut grad = ParamGrad::zeros_like(&teacher);
        for s in 0..train.len() {
            let x = train.input(s);
            let fwd = forward(&teacher, x).unwrap();
            let e = energies_full_cached(&teacher, &fwd);
            full_distill_grad_into(
                &mut grad,
                &teacher,
                x,
                &fwd,
                &e,
                store.row(s),
                train.labels[s],
                t,
                1.0,
                1.0,
            )
            .unwrap();
        }
        assert!(grad.l2_norm() <= 1e-12, "gradient norm {}", grad.l2_norm());
    }

    #[test]
    fn pdbs_full_subset_training_matches_distillation_bitwise() {
        let (train, test) = small_blobs(12);
        let tcfg = TrainConfig {
            temperature: 1.0,
            epochs: 10,
            seed: 31,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&train, &ModelSpec::linear(), &tcfg).unwrap();
        let store = relabel_dataset(&teacher, &train, 4.0).unwrap();
        let maps = RankMaps::from_store(&store);
        let base = TrainConfig {
            epochs: 4,
            seed: 77,
            lambda: 1.0,
            ..TrainConfig::default()
        };
        let full = train_student(
            &train,
            &store,
            &maps,
            &teacher,
            &ModelSpec::mlp(5),
            &TrainConfig {
                method: TrainMethod::Distillation,
                ..base.clone()
            },
            Some(&test),
        )
        .unwrap();
        let pdbs = train_student(
            &train,
            &store,
            &maps,
            &teacher,
            &ModelSpec::mlp(5),
            &TrainConfig {
                method: TrainMethod::Pdbs,
                subset_size: 3, // k = C
                ..base
            },
            Some(&test),
        )
        .unwrap();
        assert_eq!(
            full.model.checkpoint_bytes().unwrap(),
            pdbs.model.checkpoint_bytes().unwrap()
        );
    }

    #[test]
    fn dis_energy_eval_budget_holds() {
        let (train, _) = small_blobs(14);
        let tcfg = TrainConfig {
            temperature: 1.0,
            epochs: 8,
            seed: 41,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&train, &ModelSpec::linear(), &tcfg).unwrap();
        let store = relabel_dataset(&teacher, &train, 4.0).unwrap();
        let maps = RankMaps::from_store(&store);
        let m = 2;
        let cfg = TrainConfig {
            method: TrainMethod::Dis,
            subset_size: m,
            epochs: 2,
            seed: 51,
            ..TrainConfig::default()
        };
        let out = train_student(
            &train,
            &store,
            &maps,
            &teacher,
            &ModelSpec::mlp(4),
            &cfg,
            None,
        )
        .unwrap();
        assert!(out.stats.student_energy_evals <= (m as u64 + 1) * out.stats.samples_processed);
        assert_eq!(
            out.timing.iterations(),
            out.history.len() * train.len().div_ceil(32)
        );
    }

    #[test]
    fn evaluate_top1_matches_scalar_recount_and_rejects_empty() {
        let (train, _) = small_blobs(15);
        let cfg = TrainConfig {
            temperature: 1.0,
            epochs: 5,
            seed: 61,
            ..TrainConfig::default()
        };
        let model = train_teacher(&train, &ModelSpec::linear(), &cfg).unwrap();
        let acc = evaluate_top1(&model, &train).unwrap();
        let mut correct = 0usize;
        for s in 0..train.len() {
            let e = crate::model::energies_full(&model, train.input(s)).unwrap();
            let q = softmax_t(&e, 2.0).unwrap();
            let mut best = 0;
            for i in 1..q.len() {
                if q[i] > q[best] {
                    best = i;
                }
            }
            if best == train.labels[s] {
                correct += 1;
            }
        }
        assert!((acc - correct as f64 / train.len() as f64).abs() <= 1e-15);

        let empty = Dataset {
            n_features: 4,
            n_classes: 3,
            inputs: vec![],
            labels: vec![],
        };
        assert!(evaluate_top1(&model, &empty).is_err());
    }

    #[test]
    fn relabeled_teacher_scores_perfectly_on_its_own_argmax() {
        let (train, _) = small_blobs(16);
        let cfg = TrainConfig {
            temperature: 1.0,
            epochs: 5,
            seed: 71,
            ..TrainConfig::default()
        };
        let model = train_teacher(&train, &ModelSpec::linear(), &cfg).unwrap();
        let store = relabel_dataset(&model, &train, 2.0).unwrap();
        let relabeled = Dataset {
            labels: (0..train.len())
                .map(|s| {
                    let row = store.row(s);
                    (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
                })
                .collect(),
            ..train.clone()
        };
        assert_eq!(evaluate_top1(&model, &relabeled).unwrap(), 1.0);
    }
}
