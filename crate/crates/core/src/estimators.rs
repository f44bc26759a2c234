//! Last-layer gradient paths: full distillation, importance-sampled
//! distillation over a proposal, and prediction-difference based selection
//! (PDBS) with a partial softmax. Also the rank-selection frequency
//! recorder.
//!
//! All gradients are exact chain-rule gradients of their scalar losses,
//! including the 1/T factor from the temperature softmax, so they can be
//! checked against central finite differences.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{
    energies_subset_cached, forward, softmax_t, weighted_energy_grad_into, Forward, ModelParams,
    ParamGrad,
};
use crate::proposals::AliasTable;
use crate::soft_labels::RankMaps;

fn check_target(c: usize, y: usize) -> Result<()> {
    if y >= c {
        return Err(Error::Index(format!("target class {y} >= {c}")));
    }
    Ok(())
}

fn teacher_mass(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::Param(format!("teacher mass {sum} is not positive")));
    }
    Ok(sum)
}

/// Gradient of `lambda * ce(q, p) + (1 - lambda) * ce(q, y)` where
/// `q = softmax_T(student energies over all classes)` and `p` is normalized
/// to unit mass before use. Accumulates `scale` times the gradient.
#[allow(clippy::too_many_arguments)]
pub fn full_distill_grad_into(
    acc: &mut ParamGrad,
    student: &ModelParams,
    x: &[f64],
    fwd: &Forward,
    energies: &[f64],
    p: &[f64],
    y: usize,
    t: f64,
    lambda: f64,
    scale: f64,
) -> Result<()> {
    let c = student.n_classes();
    if p.len() != c || energies.len() != c {
        return Err(Error::Shape(format!(
            "soft label length {} does not match {c} classes",
            p.len()
        )));
    }
    check_target(c, y)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Param(format!(
            "lambda must lie in [0,1], got {lambda}"
        )));
    }
    let q = softmax_t(energies, t)?;
    let p_mass = teacher_mass(p)?;

    let mut terms = Vec::with_capacity(c);
    if lambda == 1.0 {
        for i in 0..c {
            let w = (p[i] / p_mass - q[i]) / t * scale;
            terms.push((i, w));
        }
    } else {
        for i in 0..c {
            let soft = lambda * (p[i] / p_mass - q[i]);
            let onehot = if i == y { 1.0 } else { 0.0 };
            let hard = (1.0 - lambda) * (onehot - q[i]);
            terms.push((i, (soft + hard) / t * scale));
        }
    }
    weighted_energy_grad_into(acc, student, x, fwd, &terms)
}

/// Fresh-buffer form of [`full_distill_grad_into`].
pub fn full_distill_grad(
    student: &ModelParams,
    x: &[f64],
    p: &[f64],
    y: usize,
    t: f64,
    lambda: f64,
) -> Result<ParamGrad> {
    let fwd = forward(student, x)?;
    let energies = crate::model::energies_full_cached(student, &fwd);
    let mut acc = ParamGrad::zeros_like(student);
    full_distill_grad_into(&mut acc, student, x, &fwd, &energies, p, y, t, lambda, 1.0)?;
    Ok(acc)
}

/// The scalar loss whose gradient [`full_distill_grad`] computes.
pub fn distill_loss(
    student: &ModelParams,
    x: &[f64],
    p: &[f64],
    y: usize,
    t: f64,
    lambda: f64,
) -> Result<f64> {
    let c = student.n_classes();
    if p.len() != c {
        return Err(Error::Shape("soft label length mismatch".into()));
    }
    check_target(c, y)?;
    let e = crate::model::energies_full(student, x)?;
    let q = softmax_t(&e, t)?;
    let p_mass = teacher_mass(p)?;
    let mut soft = 0.0;
    for i in 0..c {
        let pi = p[i] / p_mass;
        if pi > 0.0 {
            soft -= pi * q[i].ln();
        }
    }
    let hard = -q[y].ln();
    Ok(lambda * soft + (1.0 - lambda) * hard)
}

/// Scalar stage of the importance-sampled estimator: self-normalized
/// importance weights for the evaluated classes, target first.
///
/// `student_e`/`teacher_e` are energies over the evaluated list
/// (target at index 0, then the draws). `r_values` are proposal
/// probabilities of the draws; the injected target uses proposal weight 1.
/// Both weight families are stabilized by their own max-exponent shift,
/// which cancels in the normalized ratios.
fn is_weights(
    student_e: &[f64],
    teacher_e: &[f64],
    r_values: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::Param(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let n = student_e.len();
    debug_assert_eq!(teacher_e.len(), n);
    debug_assert_eq!(r_values.len() + 1, n);
    for (j, &r) in r_values.iter().enumerate() {
        if !(r > 0.0) {
            return Err(Error::Param(format!(
                "proposal probability {r} for draw {j} must be > 0"
            )));
        }
    }
    if teacher_e.iter().chain(student_e).any(|e| !e.is_finite()) {
        return Err(Error::Numeric(
            "non-finite energy in sampled estimator".into(),
        ));
    }

    let max_zs = student_e
        .iter()
        .map(|&e| -e / t)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_zt = teacher_e
        .iter()
        .map(|&e| -e / t)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut v = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut v_total = 0.0;
    let mut u_total = 0.0;
    for j in 0..n {
        let r = if j == 0 { 1.0 } else { r_values[j - 1] };
        let vj = (-student_e[j] / t - max_zs).exp() / r;
        let uj = (-teacher_e[j] / t - max_zt).exp() / r;
        v_total += vj;
        u_total += uj;
        v.push(vj);
        u.push(uj);
    }
    if !v_total.is_finite() || !u_total.is_finite() || v_total <= 0.0 || u_total <= 0.0 {
        return Err(Error::Numeric(
            "sampled estimator normalizers are not finite and positive".into(),
        ));
    }
    Ok((v, u, v_total, u_total))
}

/// Importance-sampled distillation gradient over `classes` drawn from a
/// proposal, with the target class injected at proposal weight 1.
///
/// `teacher_energies` must hold the teacher energies of `classes` in order,
/// with the target's teacher energy appended last. Student energies are
/// computed only over the evaluated classes. Duplicates in `classes` each
/// contribute their own term. Accumulates `scale` times the estimate.
#[allow(clippy::too_many_arguments)]
pub fn is_distill_grad_into(
    acc: &mut ParamGrad,
    student: &ModelParams,
    x: &[f64],
    fwd: &Forward,
    teacher_energies: &[f64],
    y: usize,
    classes: &[usize],
    r_values: &[f64],
    t: f64,
    scale: f64,
) -> Result<()> {
    let c = student.n_classes();
    check_target(c, y)?;
    if teacher_energies.len() != classes.len() + 1 {
        return Err(Error::Shape(format!(
            "need {} teacher energies (draws + target), got {}",
            classes.len() + 1,
            teacher_energies.len()
        )));
    }
    if r_values.len() != classes.len() {
        return Err(Error::Shape(
            "one proposal probability per drawn class".into(),
        ));
    }

    // Evaluated set: target first, then draws (the order the accumulators
    // fill their running sums).
    let mut evaluated = Vec::with_capacity(classes.len() + 1);
    evaluated.push(y);
    evaluated.extend_from_slice(classes);
    let student_e = energies_subset_cached(student, fwd, &evaluated)?;

    let mut teacher_e = Vec::with_capacity(evaluated.len());
    teacher_e.push(teacher_energies[classes.len()]);
    teacher_e.extend_from_slice(&teacher_energies[..classes.len()]);

    let (v, u, v_total, u_total) = is_weights(&student_e, &teacher_e, r_values, t)?;

    let terms: Vec<(usize, f64)> = evaluated
        .iter()
        .zip(v.iter().zip(&u))
        .map(|(&class, (&vj, &uj))| (class, (uj / u_total - vj / v_total) / t * scale))
        .collect();
    weighted_energy_grad_into(acc, student, x, fwd, &terms)
}

/// Fresh-buffer form of [`is_distill_grad_into`].
#[allow(clippy::too_many_arguments)]
pub fn is_distill_grad(
    student: &ModelParams,
    teacher_energies: &[f64],
    x: &[f64],
    y: usize,
    classes: &[usize],
    r_values: &[f64],
    t: f64,
) -> Result<ParamGrad> {
    let fwd = forward(student, x)?;
    let mut acc = ParamGrad::zeros_like(student);
    is_distill_grad_into(
        &mut acc,
        student,
        x,
        &fwd,
        teacher_energies,
        y,
        classes,
        r_values,
        t,
        1.0,
    )?;
    Ok(acc)
}

/// Self-normalized cross-entropy proxy over the evaluated classes; cheap
/// progress signal for sampled training where the full loss is never
/// computed.
pub fn is_subset_loss(
    student_e: &[f64],
    teacher_e: &[f64],
    r_values: &[f64],
    t: f64,
) -> Result<f64> {
    let (v, u, v_total, u_total) = is_weights(student_e, teacher_e, r_values, t)?;
    let mut loss = 0.0;
    for (vj, uj) in v.iter().zip(&u) {
        loss -= uj / u_total * (vj / v_total).ln();
    }
    Ok(loss)
}

/// Running sums of the estimator in accumulator form: scalar normalizers plus
/// mass-weighted student-energy gradients for the teacher and student
/// sides. Kept as the literal accumulator form; the production estimator
/// folds the same sums into per-class weights instead.
pub struct GradAccumulators {
    /// U: total teacher-side importance mass.
    pub teacher_total: f64,
    /// V: total student-side importance mass.
    pub student_total: f64,
    /// h: sum of u_k * grad(E_k).
    pub teacher_grad: ParamGrad,
    /// g: sum of v_k * grad(E_k).
    pub student_grad: ParamGrad,
}

impl GradAccumulators {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            teacher_total: 0.0,
            student_total: 0.0,
            teacher_grad: ParamGrad::zeros_like(model),
            student_grad: ParamGrad::zeros_like(model),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        model: &ModelParams,
        x: &[f64],
        fwd: &Forward,
        class: usize,
        student_e: f64,
        teacher_e: f64,
        proposal_p: f64,
        t: f64,
    ) -> Result<()> {
        let v = (-student_e / t).exp() / proposal_p;
        let u = (-teacher_e / t).exp() / proposal_p;
        if !v.is_finite() || !u.is_finite() {
            return Err(Error::Numeric("non-finite importance weight".into()));
        }
        self.student_total += v;
        self.teacher_total += u;
        weighted_energy_grad_into(&mut self.student_grad, model, x, fwd, &[(class, v)])?;
        weighted_energy_grad_into(&mut self.teacher_grad, model, x, fwd, &[(class, u)])?;
        Ok(())
    }

    /// Add the ground-truth class with proposal weight fixed at 1.
    #[allow(clippy::too_many_arguments)]
    pub fn add_target(
        &mut self,
        model: &ModelParams,
        x: &[f64],
        fwd: &Forward,
        class: usize,
        student_e: f64,
        teacher_e: f64,
        t: f64,
    ) -> Result<()> {
        self.add(model, x, fwd, class, student_e, teacher_e, 1.0, t)
    }

    /// Add one drawn negative class with its proposal probability.
    #[allow(clippy::too_many_arguments)]
    pub fn add_sampled(
        &mut self,
        model: &ModelParams,
        x: &[f64],
        fwd: &Forward,
        class: usize,
        student_e: f64,
        teacher_e: f64,
        proposal_p: f64,
        t: f64,
    ) -> Result<()> {
        if !(proposal_p > 0.0) {
            return Err(Error::Param("proposal probability must be > 0".into()));
        }
        self.add(model, x, fwd, class, student_e, teacher_e, proposal_p, t)
    }

    /// `(1/T) * (h/U - g/V)`.
    pub fn finish(&self, t: f64) -> Result<ParamGrad> {
        if !(self.teacher_total > 0.0) || !(self.student_total > 0.0) {
            return Err(Error::Numeric(
                "accumulators finished before the target class".into(),
            ));
        }
        let mut out = self.teacher_grad.clone();
        out.scale(1.0 / self.teacher_total);
        out.add_scaled(&self.student_grad, -1.0 / self.student_total);
        out.scale(1.0 / t);
        Ok(out)
    }
}

/// The `k` classes with the largest teacher/student prediction gap,
/// ties broken by ascending class id. The target class always participates:
/// when absent it replaces the weakest selected class.
pub fn pdbs_select(p: &[f64], q: &[f64], k: usize, y: usize) -> Result<Vec<usize>> {
    let c = p.len();
    if q.len() != c {
        return Err(Error::Shape("p and q must cover the same classes".into()));
    }
    check_target(c, y)?;
    if k == 0 || k > c {
        return Err(Error::Param(format!(
            "subset size {k} out of range 1..={c}"
        )));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let da = (p[a] - q[a]).abs();
        let db = (p[b] - q[b]).abs();
        db.partial_cmp(&da).expect("finite gaps").then(a.cmp(&b))
    });
    let mut selected = order[..k].to_vec();
    if !selected.contains(&y) {
        selected[k - 1] = y;
    }
    Ok(selected)
}

/// Distillation gradient over a selected subset: partial softmax for the
/// student, teacher mass renormalized over the subset.
#[allow(clippy::too_many_arguments)]
pub fn pdbs_grad_into(
    acc: &mut ParamGrad,
    student: &ModelParams,
    x: &[f64],
    fwd: &Forward,
    p: &[f64],
    selected: &[usize],
    t: f64,
    scale: f64,
) -> Result<()> {
    let c = student.n_classes();
    if p.len() != c {
        return Err(Error::Shape("soft label length mismatch".into()));
    }
    if selected.is_empty() {
        return Err(Error::Param("empty selection".into()));
    }
    // Canonical ascending order: the gradient is a sum, but fixing the
    // order keeps runs reproducible and makes the full-subset case match
    // the full gradient bit for bit.
    let mut s: Vec<usize> = selected.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Param("duplicate class in selection".into()));
    }
    let energies = energies_subset_cached(student, fwd, &s)?;
    let q = softmax_t(&energies, t)?;
    let mut p_mass = 0.0;
    for &i in &s {
        p_mass += p[i];
    }
    if !(p_mass > 0.0) {
        return Err(Error::DegenerateSelection(
            "teacher assigns zero mass to the selected classes".into(),
        ));
    }
    let terms: Vec<(usize, f64)> = s
        .iter()
        .zip(&q)
        .map(|(&i, &qi)| (i, (p[i] / p_mass - qi) / t * scale))
        .collect();
    weighted_energy_grad_into(acc, student, x, fwd, &terms)
}

/// Fresh-buffer form of [`pdbs_grad_into`].
pub fn pdbs_grad(
    student: &ModelParams,
    x: &[f64],
    p: &[f64],
    selected: &[usize],
    t: f64,
) -> Result<ParamGrad> {
    let fwd = forward(student, x)?;
    let mut acc = ParamGrad::zeros_like(student);
    pdbs_grad_into(&mut acc, student, x, &fwd, p, selected, t, 1.0)?;
    Ok(acc)
}

/// The scalar loss whose gradient [`pdbs_grad`] computes: cross entropy of
/// the partial softmax against the renormalized teacher restriction.
pub fn pdbs_loss(
    student: &ModelParams,
    x: &[f64],
    p: &[f64],
    selected: &[usize],
    t: f64,
) -> Result<f64> {
    let mut s: Vec<usize> = selected.to_vec();
    s.sort_unstable();
    let energies = crate::model::energies_subset(student, x, &s)?;
    let q = softmax_t(&energies, t)?;
    let p_mass: f64 = s.iter().map(|&i| p[i]).sum();
    if !(p_mass > 0.0) {
        return Err(Error::DegenerateSelection(
            "teacher assigns zero mass to the selected classes".into(),
        ));
    }
    let mut loss = 0.0;
    for (&i, &qi) in s.iter().zip(&q) {
        let pi = p[i] / p_mass;
        if pi > 0.0 {
            loss -= pi * qi.ln();
        }
    }
    Ok(loss)
}

/// Per-epoch counts of how often each rank was part of a selected subset.
#[derive(Debug, Clone, PartialEq)]
pub struct RankFrequencyLog {
    n_ranks: usize,
    epochs: Vec<Vec<u64>>,
}

impl RankFrequencyLog {
    pub fn new(n_ranks: usize) -> Self {
        Self {
            n_ranks,
            epochs: Vec::new(),
        }
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn start_epoch(&mut self) {
        self.epochs.push(vec![0; self.n_ranks]);
    }

    /// Count every selected class under its rank for this sample.
    pub fn record(&mut self, selected: &[usize], class_to_rank: &[u32]) {
        let counts = self.epochs.last_mut().expect("start_epoch before record");
        for &class in selected {
            counts[class_to_rank[class] as usize] += 1;
        }
    }

    pub fn epoch_counts(&self, epoch: usize) -> &[u64] {
        &self.epochs[epoch]
    }

    /// Counts normalized to sum 1 (all-zero epochs stay zero).
    pub fn normalized(&self, epoch: usize) -> Vec<f64> {
        let counts = &self.epochs[epoch];
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return vec![0.0; self.n_ranks];
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,rank,count,normalized_frequency")?;
        for (e, counts) in self.epochs.iter().enumerate() {
            let norm = self.normalized(e);
            for (rank, (&count, nf)) in counts.iter().zip(&norm).enumerate() {
                writeln!(w, "{e},{rank},{count},{nf}")?;
            }
        }
        Ok(())
    }
}

/// One mini-batch worth of rank draws from a rank-domain proposal, shared
/// by every sample in the batch and mapped to classes per sample.
#[derive(Debug, Clone)]
pub struct SampledBatchPlan {
    pub ranks: Vec<usize>,
    /// Proposal probability of each drawn rank.
    pub rank_probs: Vec<f64>,
}

impl SampledBatchPlan {
    pub fn draw<R: Rng>(table: &AliasTable, rank_pmf: &[f64], m_draws: usize, rng: &mut R) -> Self {
        let ranks = table.sample_n(m_draws, rng);
        let rank_probs = ranks.iter().map(|&r| rank_pmf[r]).collect();
        Self { ranks, rank_probs }
    }

    /// Map the shared ranks to this sample's classes.
    pub fn classes_for(&self, maps: &RankMaps, sample: usize) -> Vec<usize> {
        let row = maps.ranks_row(sample);
        self.ranks.iter().map(|&r| row[r] as usize).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{energies_full, Activation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_model(seed: u64, d: usize, c: usize, hidden: Option<usize>) -> ModelParams {
        let mut m = match hidden {
            None => ModelParams::linear(d, c),
            Some(h) => ModelParams::mlp(d, h, c, Activation::Relu),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.init_uniform(None, &mut rng);
        m
    }

    #[test]
    fn matched_predictions_give_zero_full_gradient() {
        // Zero up to the teacher-mass renormalization rounding.
        let m = seeded_model(1, 3, 4, Some(5));
        let x = [0.2, -0.7, 0.4];
        let e = energies_full(&m, &x).unwrap();
        let p = softmax_t(&e, 2.0).unwrap();
        let g = full_distill_grad(&m, &x, &p, 0, 2.0, 1.0).unwrap();
        for a in g.arrays() {
            for &v in a {
                assert!(v.abs() <= 1e-14);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn lambda_zero_is_hard_label_gradient() {
        let m = seeded_model(2, 2, 3, None);
        let x = [0.5, -1.0];
        let y = 1;
        let t = 1.5;
        let g = full_distill_grad(&m, &x, &[0.2, 0.5, 0.3], y, t, 0.0).unwrap();
        // Hand-assembled one-hot cross-entropy gradient.
        let e = energies_full(&m, &x).unwrap();
        let q = softmax_t(&e, t).unwrap();
        let mut expect = ParamGrad::zeros_like(&m);
        for i in 0..3 {
            let onehot = if i == y { 1.0 } else { 0.0 };
            let w = (onehot - q[i]) / t;
            expect.out_bias[i] = -w;
            for r in 0..2 {
                expect.out_weights.set(i, r, -w * x[r]);
            }
        }
        assert!(g.linf_diff(&expect) <= 1e-15);
    }

    #[test]
    fn is_grad_with_no_draws_is_exactly_zero() {
        let m = seeded_model(3, 3, 6, Some(4));
        let x = [0.1, 0.9, -0.3];
        let teacher = seeded_model(4, 3, 6, Some(4));
        let te = crate::model::energies_subset(&teacher, &x, &[2]).unwrap();
        let g = is_distill_grad(&m, &te, &x, 2, &[], &[], 2.0).unwrap();
        for a in g.arrays() {
            for &v in a {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn is_grad_matched_energies_is_exactly_zero() {
        let m = seeded_model(5, 2, 8, None);
        let x = [1.2, -0.4];
        let classes = vec![0, 3, 3, 7, 1];
        let r = vec![0.2, 0.1, 0.1, 0.4, 0.2];
        let y = 5;
        let mut eval = classes.clone();
        eval.push(y);
        let te = crate::model::energies_subset(&m, &x, &eval).unwrap();
        let g = is_distill_grad(&m, &te, &x, y, &classes, &r, 3.0).unwrap();
        for a in g.arrays() {
            for &v in a {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn is_grad_rejects_nonpositive_proposals() {
        let m = seeded_model(6, 2, 4, None);
        let x = [0.3, 0.3];
        let te = vec![0.0, 0.0];
        assert!(is_distill_grad(&m, &te, &x, 0, &[1], &[0.0], 1.0).is_err());
        assert!(is_distill_grad(&m, &te, &x, 0, &[1], &[-0.5], 1.0).is_err());
    }

    #[test]
    fn accumulator_view_matches_weighted_view() {
        let student = seeded_model(7, 3, 6, Some(4));
        let teacher = seeded_model(8, 3, 6, Some(4));
        let x = [0.4, -0.2, 0.8];
        let y = 1;
        let classes = vec![0, 4, 4, 2];
        let r = vec![0.3, 0.2, 0.2, 0.25];
        let t = 2.0;

        let mut eval = classes.clone();
        eval.push(y);
        let te = crate::model::energies_subset(&teacher, &x, &eval).unwrap();
        let fast = is_distill_grad(&student, &te, &x, y, &classes, &r, t).unwrap();

        let fwd = forward(&student, &x).unwrap();
        let se = energies_subset_cached(&student, &fwd, &eval).unwrap();
        let mut acc = GradAccumulators::new(&student);
        acc.add_target(&student, &x, &fwd, y, se[4], te[4], t)
            .unwrap();
        for j in 0..classes.len() {
            acc.add_sampled(&student, &x, &fwd, classes[j], se[j], te[j], r[j], t)
                .unwrap();
        }
        assert!(acc.teacher_total > 0.0 && acc.student_total > 0.0);
        let slow = acc.finish(t).unwrap();
        let denom = fast.l2_norm().max(1e-12);
        let mut diff = fast.clone();
        diff.add_scaled(&slow, -1.0);
        assert!(diff.l2_norm() / denom <= 1e-12);
    }

    #[test]
    fn pdbs_select_takes_largest_gaps() {
        let p = [0.5, 0.3, 0.2];
        let q = [0.2, 0.3, 0.5];
        let mut s = pdbs_select(&p, &q, 2, 0).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 2]);
    }

    #[test]
    fn pdbs_select_full_subset_is_all_classes() {
        let p = [0.25, 0.25, 0.25, 0.25];
        let q = [0.4, 0.1, 0.3, 0.2];
        let mut s = pdbs_select(&p, &q, 4, 3).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pdbs_select_forces_target_in() {
        let p = [0.25, 0.25, 0.25, 0.25];
        let s = pdbs_select(&p, &p, 1, 2).unwrap();
        assert_eq!(s, vec![2]);
    }

    #[test]
    fn pdbs_select_output_is_distinct_and_contains_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let c = rng.random_range(2..20);
            let mut p = vec![0.0; c];
            let mut q = vec![0.0; c];
            for v in p.iter_mut().chain(q.iter_mut()) {
                *v = rng.random_range(0.0..1.0);
            }
            let k = rng.random_range(1..=c);
            let y = rng.random_range(0..c);
            let s = pdbs_select(&p, &q, k, y).unwrap();
            assert_eq!(s.len(), k);
            assert!(s.contains(&y));
            let mut sorted = s.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), k);
        }
    }

    #[test]
    fn pdbs_grad_full_subset_matches_full_distillation() {
        for seed in 0..5 {
            let m = seeded_model(30 + seed, 3, 6, if seed % 2 == 0 { None } else { Some(4) });
            let x = [0.3, -0.9, 0.5];
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
            let mass: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / mass).collect();
            let all: Vec<usize> = (0..6).collect();
            let a = pdbs_grad(&m, &x, &p, &all, 2.0).unwrap();
            let b = full_distill_grad(&m, &x, &p, 0, 2.0, 1.0).unwrap();
            assert!(a.linf_diff(&b) <= 1e-10);
        }
    }

    #[test]
    fn pdbs_grad_zero_when_restricted_predictions_match() {
        let m = seeded_model(40, 2, 5, None);
        let x = [0.6, -0.6];
        let s = vec![1, 3, 4];
        let e = crate::model::energies_subset(&m, &x, &s).unwrap();
        let q = softmax_t(&e, 2.0).unwrap();
        // Teacher mass proportional to the restricted student softmax.
        let mut p = vec![0.0; 5];
        for (&i, &qi) in s.iter().zip(&q) {
            p[i] = qi * 0.7; // common factor drops out in renormalization
        }
        let g = pdbs_grad(&m, &x, &p, &s, 2.0).unwrap();
        assert!(g.flatten().iter().all(|&v| v.abs() <= 1e-16));
    }

    #[test]
    fn pdbs_grad_rejects_zero_mass_selection() {
        let m = seeded_model(41, 2, 4, None);
        let p = [0.5, 0.5, 0.0, 0.0];
        assert!(matches!(
            pdbs_grad(&m, &[0.1, 0.2], &p, &[2, 3], 1.0),
            Err(Error::DegenerateSelection(_))
        ));
    }

    #[test]
    fn rank_log_counts_selections() {
        let rows = vec![0.1, 0.7, 0.2];
        let store = crate::soft_labels::SoftLabelStore::from_rows(3, 1.0, rows).unwrap();
        let maps = RankMaps::from_store(&store);
        let mut log = RankFrequencyLog::new(3);
        log.start_epoch();
        // rank_to_class = [1, 2, 0]; selecting class 1 hits rank 0.
        log.record(&[1], maps.classes_row(0));
        assert_eq!(log.epoch_counts(0), &[1, 0, 0]);
        log.record(&[0, 2], maps.classes_row(0));
        assert_eq!(log.epoch_counts(0), &[1, 1, 1]);
        let total: u64 = log.epoch_counts(0).iter().sum();
        assert_eq!(total, 3);
        let norm = log.normalized(0);
        assert!((norm.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rank_log_csv_layout() {
        let mut log = RankFrequencyLog::new(2);
        log.start_epoch();
        log.record(&[0], &[0, 1]);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,rank,count,normalized_frequency"));
        assert_eq!(lines.next(), Some("0,0,1,1"));
        assert_eq!(lines.next(), Some("0,1,0,0"));
    }
}
