//! Proposal distributions over ranks or classes, and an O(1) alias-method
//! sampler.
//!
//! The rank-domain proposal is a mixture of two Laplace densities on the
//! normalized rank axis [0,1]: a fixed sharp mode at rank 0 and a second
//! mode at rank 1 whose scale grows linearly during training, flattening
//! the right end of the distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the bins of a proposal index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalDomain {
    Ranks,
    Classes,
}

/// A normalized discrete distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalPmf {
    pub domain: ProposalDomain,
    probs: Vec<f64>,
}

impl ProposalPmf {
    pub fn new(domain: ProposalDomain, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Param("empty proposal pmf".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Param(
                "proposal pmf entries must be finite and >= 0".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!("proposal pmf sums to {sum}, not 1")));
        }
        Ok(Self { domain, probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// How the Laplace scale parameters relate to the [0,1] rank axis.
/// `PercentOfAxis` reads a scale of 3 as 0.03 axis units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleUnits {
    Normalized,
    PercentOfAxis,
}

/// Two-Laplace mixture over the normalized rank axis, discretized into
/// `bins` bins, with a linear growth schedule on the second scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceMixtureConfig {
    pub mu1: f64,
    pub b1: f64,
    pub mu2: f64,
    pub b2_init: f64,
    pub b2_final: f64,
    pub bins: usize,
    pub schedule_steps: usize,
    pub scale_units: ScaleUnits,
}

impl Default for LaplaceMixtureConfig {
    fn default() -> Self {
        Self {
            mu1: 0.0,
            b1: 3.0,
            mu2: 1.0,
            b2_init: 5.0,
            b2_final: 500.0,
            bins: 100,
            schedule_steps: 1000,
            scale_units: ScaleUnits::PercentOfAxis,
        }
    }
}

impl LaplaceMixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b1 > 0.0) || !(self.b2_init > 0.0) || !(self.b2_final > 0.0) {
            return Err(Error::Param("laplace scales must be positive".into()));
        }
        if self.b2_final < self.b2_init {
            return Err(Error::Param("b2_final must be >= b2_init".into()));
        }
        if self.bins < 2 {
            return Err(Error::Param("mixture needs at least 2 bins".into()));
        }
        Ok(())
    }

    fn axis_scale(&self, b: f64) -> f64 {
        match self.scale_units {
            ScaleUnits::Normalized => b,
            ScaleUnits::PercentOfAxis => b / 100.0,
        }
    }
}

/// Laplace density `exp(-|x-mu|/b) / (2b)`.
pub fn laplace_density(x: f64, mu: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Param(format!(
            "laplace scale must be positive, got {b}"
        )));
    }
    Ok((-(x - mu).abs() / b).exp() / (2.0 * b))
}

/// Second-Laplace scale after `step` optimizer steps: linear from `b2_init`
/// to `b2_final`, clamped past the end of the schedule.
pub fn schedule_b2(cfg: &LaplaceMixtureConfig, step: usize) -> f64 {
    if cfg.schedule_steps == 0 {
        return cfg.b2_final;
    }
    let frac = step.min(cfg.schedule_steps) as f64 / cfg.schedule_steps as f64;
    cfg.b2_init + (cfg.b2_final - cfg.b2_init) * frac
}

/// Evaluate the mixture at bin centers `(j+0.5)/bins` and normalize.
pub fn build_mixture_pmf(cfg: &LaplaceMixtureConfig, b2_current: f64) -> Result<ProposalPmf> {
    cfg.validate()?;
    if !(b2_current > 0.0) {
        return Err(Error::Param("current b2 must be positive".into()));
    }
    let b1 = cfg.axis_scale(cfg.b1);
    let b2 = cfg.axis_scale(b2_current);
    let m = cfg.bins;
    let mut g = Vec::with_capacity(m);
    let mut sum = 0.0;
    for j in 0..m {
        let c = (j as f64 + 0.5) / m as f64;
        let v = laplace_density(c, cfg.mu1, b1)? + laplace_density(c, cfg.mu2, b2)?;
        sum += v;
        g.push(v);
    }
    for v in g.iter_mut() {
        *v /= sum;
    }
    ProposalPmf::new(ProposalDomain::Ranks, g)
}

/// Uniform proposal over `c` classes.
pub fn proposal_uniform(c: usize) -> Result<ProposalPmf> {
    if c == 0 {
        return Err(Error::Param(
            "uniform proposal needs at least one class".into(),
        ));
    }
    ProposalPmf::new(ProposalDomain::Classes, vec![1.0 / c as f64; c])
}

/// Teacher-prediction proposal with a probability floor. The floor keeps
/// importance weights `e^{-E}/r_i` bounded when the teacher assigns a class
/// essentially zero mass.
pub fn proposal_teacher(p: &[f64], floor: f64) -> Result<ProposalPmf> {
    if p.is_empty() {
        return Err(Error::Param("empty teacher prediction".into()));
    }
    if !(floor >= 0.0) {
        return Err(Error::Param("proposal floor must be >= 0".into()));
    }
    let mut r: Vec<f64> = p.iter().map(|&v| v.max(floor)).collect();
    let sum: f64 = r.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Param("teacher proposal has zero total mass".into()));
    }
    for v in r.iter_mut() {
        *v /= sum;
    }
    ProposalPmf::new(ProposalDomain::Classes, r)
}

/// Walker-Vose alias table: O(n) construction, O(1) exact sampling.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(pmf: &ProposalPmf) -> Result<Self> {
        let n = pmf.len();
        let mut scaled: Vec<f64> = pmf.probs().iter().map(|&p| p * n as f64).collect();
        let mut prob = vec![0.0; n];
        let mut alias: Vec<usize> = (0..n).collect();

        let mut small: Vec<usize> = Vec::with_capacity(n);
        let mut large: Vec<usize> = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers in either stack are 1 up to rounding.
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
        }
        Ok(Self { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// One draw distributed per the source pmf.
    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let j = rng.random_range(0..self.prob.len());
        let u: f64 = rng.random();
        if u < self.prob[j] {
            j
        } else {
            self.alias[j]
        }
    }

    /// `m_draws` i.i.d. with-replacement draws.
    pub fn sample_n<R: Rng>(&self, m_draws: usize, rng: &mut R) -> Vec<usize> {
        (0..m_draws).map(|_| self.sample(rng)).collect()
    }

    /// Probability mass the table actually encodes per bin.
    pub fn reconstructed_pmf(&self) -> Vec<f64> {
        let n = self.prob.len();
        let mut r = vec![0.0; n];
        for i in 0..n {
            r[i] += self.prob[i] / n as f64;
            r[self.alias[i]] += (1.0 - self.prob[i]) / n as f64;
        }
        r
    }
}
