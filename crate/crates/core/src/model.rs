//! Classifier family exposing class energies and exact per-parameter
//! energy gradients.
//!
//! A model is either a linear softmax classifier or a one-hidden-layer
//! perceptron. The class "energy" is the negated logit: lower energy means
//! higher probability. Everything downstream (distillation losses, sampled
//! estimators) is written in terms of energies and their gradients.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const CHECKPOINT_MAGIC: &[u8; 5] = b"SDKD1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Trainable parameters: an optional hidden layer followed by the output
/// (last) layer whose negated affine map is the energy function.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// d_in x d_repr, absent for the linear model.
    pub hidden_weights: Option<DenseMatrix>,
    /// d_repr, absent for the linear model.
    pub hidden_bias: Option<Vec<f64>>,
    /// The logical d_repr x C output map, stored class-major (C x d_repr)
    /// so per-class energy and gradient kernels touch contiguous memory.
    /// Checkpoints serialize the logical row-major layout.
    pub out_weights: DenseMatrix,
    /// C.
    pub out_bias: Vec<f64>,
    pub activation: Activation,
}

impl ModelParams {
    /// Linear softmax classifier: the representation is the input itself.
    pub fn linear(d_in: usize, n_classes: usize) -> Self {
        Self {
            hidden_weights: None,
            hidden_bias: None,
            out_weights: DenseMatrix::zeros(n_classes, d_in),
            out_bias: vec![0.0; n_classes],
            activation: Activation::Identity,
        }
    }

    /// One-hidden-layer perceptron.
    pub fn mlp(d_in: usize, d_hidden: usize, n_classes: usize, activation: Activation) -> Self {
        Self {
            hidden_weights: Some(DenseMatrix::zeros(d_in, d_hidden)),
            hidden_bias: Some(vec![0.0; d_hidden]),
            out_weights: DenseMatrix::zeros(n_classes, d_hidden),
            out_bias: vec![0.0; n_classes],
            activation,
        }
    }

    /// Draw weights uniformly from `[-s, s]` with `s = scale` when given,
    /// else `1/sqrt(fan_in)` per layer. Biases stay zero.
    pub fn init_uniform<R: Rng>(&mut self, scale: Option<f64>, rng: &mut R) {
        if let Some(h) = self.hidden_weights.as_mut() {
            let s = scale.unwrap_or(1.0 / (h.rows() as f64).sqrt());
            for v in h.data_mut() {
                *v = rng.random_range(-s..s);
            }
        }
        let s = scale.unwrap_or(1.0 / (self.out_weights.cols() as f64).sqrt());
        for v in self.out_weights.data_mut() {
            *v = rng.random_range(-s..s);
        }
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_weights.is_none() && self.activation == Activation::Identity
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden_weights {
            Some(h) => h.rows(),
            None => self.out_weights.cols(),
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.out_weights.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.out_weights.rows()
    }

    /// Weight vector of one class (its row in the class-major store).
    #[inline]
    pub fn class_weights(&self, class: usize) -> &[f64] {
        self.out_weights.row(class)
    }

    /// Ordered parameter arrays (declaration order).
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden_weights {
            out.push(h.data());
        }
        if let Some(b) = &self.hidden_bias {
            out.push(b.as_slice());
        }
        out.push(self.out_weights.data());
        out.push(self.out_bias.as_slice());
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = self.hidden_weights.as_mut() {
            out.push(h.data_mut());
        }
        if let Some(b) = self.hidden_bias.as_mut() {
            out.push(b.as_mut_slice());
        }
        out.push(self.out_weights.data_mut());
        out.push(self.out_bias.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    /// Read/write a single parameter by flat index over the concatenated
    /// arrays. Used by finite-difference checks.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for a in self.arrays() {
            if idx < a.len() {
                return a[idx];
            }
            idx -= a.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, v: f64) {
        for a in self.arrays_mut() {
            if idx < a.len() {
                a[idx] = v;
                return;
            }
            idx -= a.len();
        }
        panic!("flat parameter index out of range");
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match model input dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let kind: i32 = match (&self.hidden_weights, self.activation) {
            (None, Activation::Identity) => 0,
            (Some(_), Activation::Identity) => 1,
            (Some(_), Activation::Relu) => 2,
            (None, Activation::Relu) => {
                return Err(Error::Param(
                    "relu without a hidden layer is not a supported checkpoint kind".into(),
                ))
            }
        };
        w.write_i32::<LittleEndian>(kind)?;
        w.write_i32::<LittleEndian>(self.input_dim() as i32)?;
        w.write_i32::<LittleEndian>(self.repr_dim() as i32)?;
        w.write_i32::<LittleEndian>(self.n_classes() as i32)?;
        if let Some(h) = &self.hidden_weights {
            for &v in h.data() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        if let Some(b) = &self.hidden_bias {
            for &v in b {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        // Output weights go to disk in the logical d_repr x C row-major
        // layout regardless of the in-memory class-major store.
        for r in 0..self.repr_dim() {
            for i in 0..self.n_classes() {
                w.write_f64::<LittleEndian>(self.out_weights.get(i, r))?;
            }
        }
        for &v in &self.out_bias {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint shorter than its magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let kind = r.read_i32::<LittleEndian>()?;
        let d_in = r.read_i32::<LittleEndian>()? as usize;
        let d_repr = r.read_i32::<LittleEndian>()? as usize;
        let c = r.read_i32::<LittleEndian>()? as usize;
        let mut model = match kind {
            0 => {
                if d_in != d_repr {
                    return Err(Error::Format(
                        "linear checkpoint with d_in != d_repr".into(),
                    ));
                }
                ModelParams::linear(d_in, c)
            }
            1 => ModelParams::mlp(d_in, d_repr, c, Activation::Identity),
            2 => ModelParams::mlp(d_in, d_repr, c, Activation::Relu),
            k => return Err(Error::Format(format!("unknown checkpoint kind {k}"))),
        };
        let mut read = |dst: &mut f64| -> Result<()> {
            *dst = r
                .read_f64::<LittleEndian>()
                .map_err(|_| Error::Format("truncated checkpoint".into()))?;
            Ok(())
        };
        if let Some(h) = model.hidden_weights.as_mut() {
            for v in h.data_mut() {
                read(v)?;
            }
        }
        if let Some(b) = model.hidden_bias.as_mut() {
            for v in b.iter_mut() {
                read(v)?;
            }
        }
        for rr in 0..d_repr {
            for i in 0..c {
                let mut v = 0.0;
                read(&mut v)?;
                model.out_weights.set(i, rr, v);
            }
        }
        for v in model.out_bias.iter_mut() {
            read(v)?;
        }
        Ok(model)
    }

    /// Serialized checkpoint bytes; handy for bitwise comparisons.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        Ok(buf)
    }
}

/// Forward pass cache: the representation plus (for hidden models) the
/// pre-activation values needed to backpropagate through the activation.
pub struct Forward {
    pub repr: Vec<f64>,
    hidden_pre: Option<Vec<f64>>,
}

/// Compute the representation and keep what backprop needs.
pub fn forward(model: &ModelParams, x: &[f64]) -> Result<Forward> {
    model.check_input(x)?;
    match &model.hidden_weights {
        None => Ok(Forward {
            repr: x.to_vec(),
            hidden_pre: None,
        }),
        Some(h) => {
            let d_repr = h.cols();
            let bias = model.hidden_bias.as_ref().expect("hidden bias present");
            let mut pre = bias.clone();
            for (a, &xa) in x.iter().enumerate() {
                let row = h.row(a);
                for j in 0..d_repr {
                    pre[j] += xa * row[j];
                }
            }
            let repr = pre.iter().map(|&p| model.activation.apply(p)).collect();
            Ok(Forward {
                repr,
                hidden_pre: Some(pre),
            })
        }
    }
}

/// The final representation of the input under the model.
pub fn forward_representation(model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(model, x)?.repr)
}

/// Energies of all classes: the negated output-layer affine map.
pub fn energies_full(model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let fwd = forward(model, x)?;
    Ok(energies_full_cached(model, &fwd))
}

#[inline]
fn class_energy(model: &ModelParams, repr: &[f64], class: usize) -> f64 {
    let row = model.out_weights.row(class);
    let mut acc = 0.0;
    for (phi, w) in repr.iter().zip(row) {
        acc += phi * w;
    }
    -(acc + model.out_bias[class])
}

pub fn energies_full_cached(model: &ModelParams, fwd: &Forward) -> Vec<f64> {
    // Same per-class kernel as the subset path, so a full subset matches
    // this bit for bit.
    (0..model.n_classes())
        .map(|i| class_energy(model, &fwd.repr, i))
        .collect()
}

/// Energies of the listed classes only; cost scales with the list length.
/// Duplicate ids are allowed (with-replacement sampling).
pub fn energies_subset(model: &ModelParams, x: &[f64], classes: &[usize]) -> Result<Vec<f64>> {
    let fwd = forward(model, x)?;
    energies_subset_cached(model, &fwd, classes)
}

pub fn energies_subset_cached(
    model: &ModelParams,
    fwd: &Forward,
    classes: &[usize],
) -> Result<Vec<f64>> {
    let c = model.n_classes();
    let mut out = Vec::with_capacity(classes.len());
    for &i in classes {
        if i >= c {
            return Err(Error::Index(format!("class id {i} >= {c}")));
        }
        out.push(class_energy(model, &fwd.repr, i));
    }
    Ok(out)
}

/// Temperature softmax over energies with max-subtraction:
/// `q_i = exp(-e_i/T) / sum_m exp(-e_m/T)`.
pub fn softmax_t(energies: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Param(format!(
            "temperature must be positive, got {t}"
        )));
    }
    if energies.is_empty() {
        return Err(Error::Param("softmax over an empty energy vector".into()));
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::Numeric("non-finite energy in softmax".into()));
    }
    let mut z: Vec<f64> = energies.iter().map(|&e| -e / t).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    Ok(z)
}

/// Gradient buffers shaped like a model's parameters. Also reused for
/// optimizer moment arrays, which share the same shape congruence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub hidden_weights: Option<DenseMatrix>,
    pub hidden_bias: Option<Vec<f64>>,
    pub out_weights: DenseMatrix,
    pub out_bias: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Self {
            hidden_weights: model
                .hidden_weights
                .as_ref()
                .map(|h| DenseMatrix::zeros(h.rows(), h.cols())),
            hidden_bias: model.hidden_bias.as_ref().map(|b| vec![0.0; b.len()]),
            out_weights: DenseMatrix::zeros(model.out_weights.rows(), model.out_weights.cols()),
            out_bias: vec![0.0; model.out_bias.len()],
        }
    }

    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden_weights {
            out.push(h.data());
        }
        if let Some(b) = &self.hidden_bias {
            out.push(b.as_slice());
        }
        out.push(self.out_weights.data());
        out.push(self.out_bias.as_slice());
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = self.hidden_weights.as_mut() {
            out.push(h.data_mut());
        }
        if let Some(b) = self.hidden_bias.as_mut() {
            out.push(b.as_mut_slice());
        }
        out.push(self.out_weights.data_mut());
        out.push(self.out_bias.as_mut_slice());
        out
    }

    pub fn fill(&mut self, v: f64) {
        for a in self.arrays_mut() {
            a.fill(v);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.arrays_mut() {
            for v in a.iter_mut() {
                *v *= s;
            }
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &ParamGrad, s: f64) {
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += s * v;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in self.arrays() {
            out.extend_from_slice(a);
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.arrays()
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_diff(&self, other: &ParamGrad) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }
}

/// Accumulate `sum_k w_k * grad_theta(energy_k)` into `acc`.
///
/// The energy of class `i` is `-(repr . W[:,i] + b_i)`, so the output-layer
/// terms are `-w * repr` on column `i` and `-w` on the bias; hidden-layer
/// terms follow from one backprop pass through the activation.
pub fn weighted_energy_grad_into(
    acc: &mut ParamGrad,
    model: &ModelParams,
    x: &[f64],
    fwd: &Forward,
    terms: &[(usize, f64)],
) -> Result<()> {
    let c = model.n_classes();
    let d_repr = model.repr_dim();
    for &(i, _) in terms {
        if i >= c {
            return Err(Error::Index(format!("class id {i} >= {c}")));
        }
    }

    // Output layer, plus the representation gradient if a hidden layer exists.
    let mut d_repr_grad = if model.hidden_weights.is_some() {
        Some(vec![0.0; d_repr])
    } else {
        None
    };
    for &(i, w) in terms {
        acc.out_bias[i] += -w;
        let dst = acc.out_weights.row_mut(i);
        for (d, &phi) in dst.iter_mut().zip(&fwd.repr) {
            *d += -w * phi;
        }
        if let Some(dr) = d_repr_grad.as_mut() {
            let src = model.out_weights.row(i);
            for (d, &wv) in dr.iter_mut().zip(src) {
                *d += -w * wv;
            }
        }
    }

    if let Some(dr) = d_repr_grad {
        let pre = fwd.hidden_pre.as_ref().expect("hidden pre-activations");
        let hw = acc.hidden_weights.as_mut().expect("hidden weight grads");
        let hb = acc.hidden_bias.as_mut().expect("hidden bias grads");
        let mut d_pre = vec![0.0; d_repr];
        for j in 0..d_repr {
            d_pre[j] = dr[j] * model.activation.derivative(pre[j]);
            hb[j] += d_pre[j];
        }
        for (a, &xa) in x.iter().enumerate() {
            let row = hw.row_mut(a);
            for j in 0..d_repr {
                row[j] += xa * d_pre[j];
            }
        }
    }
    Ok(())
}

/// Weighted sum of energy gradients as a fresh buffer.
pub fn weighted_energy_grad(
    model: &ModelParams,
    x: &[f64],
    terms: &[(usize, f64)],
) -> Result<ParamGrad> {
    let fwd = forward(model, x)?;
    let mut acc = ParamGrad::zeros_like(model);
    weighted_energy_grad_into(&mut acc, model, x, &fwd, terms)?;
    Ok(acc)
}

/// Exact gradient of the single class energy with respect to every parameter.
pub fn energy_param_grad(model: &ModelParams, x: &[f64], class_i: usize) -> Result<ParamGrad> {
    weighted_energy_grad(model, x, &[(class_i, 1.0)])
}

/// Class with the lowest energy; ties break toward the lowest id.
pub fn predict_top1(model: &ModelParams, x: &[f64]) -> Result<usize> {
    let e = energies_full(model, x)?;
    let mut best = 0;
    for (i, &v) in e.iter().enumerate().skip(1) {
        if v < e[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_mlp(seed: u64, d_in: usize, d_h: usize, c: usize) -> ModelParams {
        let mut m = ModelParams::mlp(d_in, d_h, c, Activation::Relu);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.init_uniform(None, &mut rng);
        rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        if let Some(b) = m.hidden_bias.as_mut() {
            for v in b.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        for v in m.out_bias.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        m
    }

    #[test]
    fn linear_representation_is_identity() {
        let m = ModelParams::linear(2, 3);
        assert_eq!(
            forward_representation(&m, &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let mut m = ModelParams::mlp(2, 2, 2, Activation::Relu);
        let h = m.hidden_weights.as_mut().unwrap();
        h.set(0, 0, 1.0);
        h.set(1, 1, 1.0);
        assert_eq!(
            forward_representation(&m, &[-1.0, 2.0]).unwrap(),
            vec![0.0, 2.0]
        );
    }

    #[test]
    fn mlp_representation_matches_scalar_loop() {
        let m = seeded_mlp(11, 3, 4, 2);
        let x = [0.3, -1.2, 0.7];
        let got = forward_representation(&m, &x).unwrap();
        let h = m.hidden_weights.as_ref().unwrap();
        let hb = m.hidden_bias.as_ref().unwrap();
        for j in 0..4 {
            let mut pre = hb[j];
            for (a, &xa) in x.iter().enumerate() {
                pre += xa * h.get(a, j);
            }
            let expect = if pre > 0.0 { pre } else { 0.0 };
            assert!((got[j] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn zero_model_has_zero_energies() {
        let m = ModelParams::linear(3, 4);
        assert_eq!(energies_full(&m, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn linear_energies_are_negated_dot_products() {
        let mut m = ModelParams::linear(2, 2);
        // Logical W = [[1,2],[3,4]] (rows = input dims, cols = classes),
        // stored class-major: class 0 -> [1,3], class 1 -> [2,4].
        m.out_weights = DenseMatrix::from_vec(2, 2, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let e = energies_full(&m, &[1.0, 0.0]).unwrap();
        assert_eq!(e, vec![-1.0, -2.0]);
    }

    #[test]
    fn subset_over_all_classes_is_bitwise_full() {
        let m = seeded_mlp(5, 4, 3, 7);
        let x = [0.1, -0.4, 0.9, 0.2];
        let full = energies_full(&m, &x).unwrap();
        let all: Vec<usize> = (0..7).collect();
        let sub = energies_subset(&m, &x, &all).unwrap();
        assert_eq!(full, sub);
    }

    #[test]
    fn subset_passes_duplicates_through() {
        let m = seeded_mlp(6, 3, 3, 5);
        let x = [0.5, 0.5, -0.5];
        let full = energies_full(&m, &x).unwrap();
        let sub = energies_subset(&m, &x, &[2, 2]).unwrap();
        assert_eq!(sub, vec![full[2], full[2]]);
    }

    #[test]
    fn subset_rejects_out_of_range_ids() {
        let m = ModelParams::linear(2, 3);
        assert!(energies_subset(&m, &[0.0, 0.0], &[3]).is_err());
    }

    #[test]
    fn softmax_equal_energies_is_uniform() {
        let q = softmax_t(&[-1.0, -1.0, -1.0], 1.0).unwrap();
        for &v in &q {
            assert!((v - 1.0 / 3.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_ratio() {
        let q = softmax_t(&[0.0, -(2.0f64.ln())], 1.0).unwrap();
        assert!((q[0] - 1.0 / 3.0).abs() <= 1e-12);
        assert!((q[1] - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_flattens_to_uniform_at_high_temperature() {
        let q = softmax_t(&[0.0, -10.0], 1e9).unwrap();
        assert!((q[0] - 0.5).abs() <= 1e-8);
        assert!((q[1] - 0.5).abs() <= 1e-8);
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert!(softmax_t(&[0.0], 0.0).is_err());
        assert!(softmax_t(&[0.0], -1.0).is_err());
        assert!(softmax_t(&[], 1.0).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn linear_energy_grad_is_negated_input() {
        let mut m = ModelParams::linear(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        m.init_uniform(None, &mut rng);
        let x = [1.5, -2.0];
        let g = energy_param_grad(&m, &x, 1).unwrap();
        for r in 0..2 {
            assert_eq!(g.out_weights.get(0, r), 0.0);
            assert_eq!(g.out_weights.get(1, r), -x[r]);
            assert_eq!(g.out_weights.get(2, r), 0.0);
        }
        assert_eq!(g.out_bias, vec![0.0, -1.0, 0.0]);
    }

    #[test]
    fn predict_top1_takes_most_negative_energy() {
        let mut m = ModelParams::linear(1, 3);
        m.out_bias = vec![0.0, 3.0, 1.0]; // energies [0,-3,-1]... bias enters negated
        let e = energies_full(&m, &[0.0]).unwrap();
        assert_eq!(e, vec![0.0, -3.0, -1.0]);
        assert_eq!(predict_top1(&m, &[0.0]).unwrap(), 1);
    }

    #[test]
    fn predict_top1_ties_break_low() {
        let m = ModelParams::linear(1, 4);
        assert_eq!(predict_top1(&m, &[1.0]).unwrap(), 0);
    }

    #[test]
    fn predict_top1_matches_softmax_argmax_across_temperatures() {
        let m = seeded_mlp(17, 3, 5, 6);
        let x = [0.4, -0.8, 1.1];
        let e = energies_full(&m, &x).unwrap();
        let top = predict_top1(&m, &x).unwrap();
        for &t in &[1.0, 5.0, 20.0] {
            let q = softmax_t(&e, t).unwrap();
            let argmax = (0..q.len()).fold(0, |b, i| if q[i] > q[b] { i } else { b });
            assert_eq!(top, argmax);
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let m = seeded_mlp(23, 4, 3, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        m.save_checkpoint(&path).unwrap();
        let back = ModelParams::load_checkpoint(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        std::fs::write(&path, b"NOTIT00000000").unwrap();
        assert!(matches!(
            ModelParams::load_checkpoint(&path),
            Err(Error::Format(_))
        ));
        let m = ModelParams::linear(2, 2);
        m.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            ModelParams::load_checkpoint(&path),
            Err(Error::Format(_))
        ));
    }
}
