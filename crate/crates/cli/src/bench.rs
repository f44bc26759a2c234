//! Last-layer cost benchmark: full-softmax distillation gradient versus the
//! uniform-proposal sampled gradient, on the same batch and model snapshot.
//!
//! Protocol: warmup iterations are discarded, then the per-iteration
//! energy+gradient and sampling times are recorded separately and reported
//! as medians.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdkd_core::error::Result;
use sdkd_core::estimators::{full_distill_grad_into, is_distill_grad_into};
use sdkd_core::model::{
    energies_full, energies_full_cached, energies_subset, forward, softmax_t, ModelParams,
    ParamGrad,
};
use sdkd_core::proposals::{proposal_uniform, AliasTable};
use sdkd_core::timing::TimingRecord;

use crate::config::Config;

/// Which gradient path to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchPath {
    /// Full softmax over all classes plus the dense distillation gradient.
    FullSoftmax,
    /// `k` uniform draws plus the target, subset energies on both models.
    SampledUniform,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub batch_size: usize,
    pub k: usize,
    pub warmup: usize,
    pub iters: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl BenchConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            n_classes: cfg.usize_or("bench.n_classes", 5000)?,
            dim: cfg.usize_or("bench.dim", 64)?,
            batch_size: cfg.usize_or("bench.batch_size", 32)?,
            k: cfg.usize_or("bench.k", 50)?,
            warmup: cfg.usize_or("bench.warmup", 10)?,
            iters: cfg.usize_or("bench.iters", 30)?,
            temperature: cfg.f64_or("bench.temperature", 4.0)?,
            seed: cfg.u64_or("bench.seed", 0)?,
        })
    }
}

/// A fixed benchmark scene: student, teacher, one input batch with labels,
/// and precomputed teacher soft labels for the full path.
pub struct BenchScene {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub soft_labels: Vec<f64>,
    pub n_classes: usize,
    pub dim: usize,
    pub temperature: f64,
}

impl BenchScene {
    pub fn build(cfg: &BenchConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut student = ModelParams::linear(cfg.dim, cfg.n_classes);
        let mut teacher = ModelParams::linear(cfg.dim, cfg.n_classes);
        student.init_uniform(None, &mut rng);
        teacher.init_uniform(None, &mut rng);
        let inputs: Vec<f64> = (0..cfg.batch_size * cfg.dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let labels: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..cfg.n_classes))
            .collect();
        let mut soft_labels = Vec::with_capacity(cfg.batch_size * cfg.n_classes);
        for b in 0..cfg.batch_size {
            let x = &inputs[b * cfg.dim..(b + 1) * cfg.dim];
            let e = energies_full(&teacher, x)?;
            soft_labels.extend(softmax_t(&e, cfg.temperature)?);
        }
        Ok(Self {
            student,
            teacher,
            inputs,
            labels,
            soft_labels,
            n_classes: cfg.n_classes,
            dim: cfg.dim,
            temperature: cfg.temperature,
        })
    }

    fn input(&self, b: usize) -> &[f64] {
        &self.inputs[b * self.dim..(b + 1) * self.dim]
    }

    fn soft_row(&self, b: usize) -> &[f64] {
        &self.soft_labels[b * self.n_classes..(b + 1) * self.n_classes]
    }
}

/// Time one gradient path over the scene's batch. The model is treated as a
/// frozen snapshot; every iteration recomputes the same batch gradient.
pub fn time_last_layer(
    scene: &BenchScene,
    path: BenchPath,
    k: usize,
    warmup: usize,
    iters: usize,
    seed: u64,
) -> Result<TimingRecord> {
    let batch = scene.labels.len();
    let scale = 1.0 / batch as f64;
    let t = scene.temperature;
    let mut grad = ParamGrad::zeros_like(&scene.student);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = proposal_uniform(scene.n_classes)?;
    let table = AliasTable::new(&uniform)?;
    let r_uniform = vec![1.0 / scene.n_classes as f64; k];

    let mut timing = TimingRecord::default();
    for iter in 0..warmup + iters {
        grad.fill(0.0);
        let mut last_ns: u64 = 0;
        let mut samp_ns: u64 = 0;
        for b in 0..batch {
            let x = scene.input(b);
            let y = scene.labels[b];
            match path {
                BenchPath::FullSoftmax => {
                    let t0 = Instant::now();
                    let fwd = forward(&scene.student, x)?;
                    let energies = energies_full_cached(&scene.student, &fwd);
                    full_distill_grad_into(
                        &mut grad,
                        &scene.student,
                        x,
                        &fwd,
                        &energies,
                        scene.soft_row(b),
                        y,
                        t,
                        1.0,
                        scale,
                    )?;
                    last_ns += t0.elapsed().as_nanos() as u64;
                }
                BenchPath::SampledUniform => {
                    let t0 = Instant::now();
                    let classes = table.sample_n(k, &mut rng);
                    samp_ns += t0.elapsed().as_nanos() as u64;

                    let t1 = Instant::now();
                    let fwd = forward(&scene.student, x)?;
                    let mut evaluated = classes.clone();
                    evaluated.push(y);
                    let teacher_e = energies_subset(&scene.teacher, x, &evaluated)?;
                    is_distill_grad_into(
                        &mut grad,
                        &scene.student,
                        x,
                        &fwd,
                        &teacher_e,
                        y,
                        &classes,
                        &r_uniform,
                        t,
                        scale,
                    )?;
                    last_ns += t1.elapsed().as_nanos() as u64;
                }
            }
        }
        if iter >= warmup {
            timing.push(last_ns, samp_ns);
        }
    }
    Ok(timing)
}

/// Median-based comparison of the two paths.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub full: TimingRecord,
    pub sampled: TimingRecord,
    pub k: usize,
    pub n_classes: usize,
}

impl BenchReport {
    /// sampled energy+gradient time / full energy+gradient time.
    pub fn last_layer_ratio(&self) -> f64 {
        self.sampled.median_last_layer_ns() as f64 / self.full.median_last_layer_ns() as f64
    }

    /// (sampled energy+gradient + sampling) / full energy+gradient.
    pub fn total_ratio(&self) -> f64 {
        (self.sampled.median_last_layer_ns() + self.sampled.median_sampling_ns()) as f64
            / self.full.median_last_layer_ns() as f64
    }

    pub fn summary(&self) -> String {
        format!(
            "C={} k={}: full {:.3} ms/iter, sampled {:.3} ms/iter (+{:.3} ms sampling), \
             last-layer ratio {:.3}, total ratio {:.3}",
            self.n_classes,
            self.k,
            self.full.median_last_layer_ns() as f64 / 1e6,
            self.sampled.median_last_layer_ns() as f64 / 1e6,
            self.sampled.median_sampling_ns() as f64 / 1e6,
            self.last_layer_ratio(),
            self.total_ratio(),
        )
    }
}

/// Build the scene once and time both paths under the same protocol.
pub fn bench_softmax(cfg: &BenchConfig) -> Result<BenchReport> {
    let scene = BenchScene::build(cfg)?;
    let full = time_last_layer(
        &scene,
        BenchPath::FullSoftmax,
        cfg.k,
        cfg.warmup,
        cfg.iters,
        cfg.seed,
    )?;
    let sampled = time_last_layer(
        &scene,
        BenchPath::SampledUniform,
        cfg.k,
        cfg.warmup,
        cfg.iters,
        cfg.seed,
    )?;
    Ok(BenchReport {
        full,
        sampled,
        k: cfg.k,
        n_classes: cfg.n_classes,
    })
}
