//! Teacher relabeling, per-sample rank maps, and the on-disk soft-label store.
//!
//! A sample's "rank map" sorts classes by descending teacher probability:
//! rank 0 is the teacher's top class. Rank-domain proposals sample ranks and
//! map them back to classes through these permutations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{energies_full, softmax_t, ModelParams};

const STORE_MAGIC: &[u8; 5] = b"SDSL1";

/// Dense per-sample teacher probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelStore {
    pub n_samples: usize,
    pub n_classes: usize,
    pub temperature: f64,
    /// n_samples x n_classes, row-major.
    probs: Vec<f64>,
}

impl SoftLabelStore {
    pub fn from_rows(n_classes: usize, temperature: f64, rows: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || !rows.len().is_multiple_of(n_classes) {
            return Err(Error::Shape(
                "soft-label buffer not a multiple of n_classes".into(),
            ));
        }
        Ok(Self {
            n_samples: rows.len() / n_classes,
            n_classes,
            temperature,
            probs: rows,
        })
    }

    #[inline]
    pub fn row(&self, sample: usize) -> &[f64] {
        &self.probs[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    pub fn rows(&self) -> &[f64] {
        &self.probs
    }

    /// Check that every row is a probability vector (sum within 1e-6).
    pub fn validate(&self) -> Result<()> {
        for s in 0..self.n_samples {
            let row = self.row(s);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Format(format!(
                    "soft-label row {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Format(format!("soft-label row {s} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(STORE_MAGIC)?;
        w.write_i32::<LittleEndian>(self.n_samples as i32)?;
        w.write_i32::<LittleEndian>(self.n_classes as i32)?;
        w.write_f64::<LittleEndian>(self.temperature)?;
        for &p in &self.probs {
            w.write_f64::<LittleEndian>(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("soft-label store shorter than its magic".into()))?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format(format!(
                "bad soft-label magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let n_samples = r.read_i32::<LittleEndian>()? as usize;
        let n_classes = r.read_i32::<LittleEndian>()? as usize;
        let temperature = r.read_f64::<LittleEndian>()?;
        let mut probs = vec![0.0; n_samples * n_classes];
        for p in probs.iter_mut() {
            *p = r
                .read_f64::<LittleEndian>()
                .map_err(|_| Error::Format("corrupt soft-label store: truncated rows".into()))?;
        }
        let store = Self {
            n_samples,
            n_classes,
            temperature,
            probs,
        };
        store.validate()?;
        Ok(store)
    }
}

/// Per-sample bijections between ranks and classes.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMaps {
    pub n_samples: usize,
    pub n_classes: usize,
    rank_to_class: Vec<u32>,
    class_to_rank: Vec<u32>,
}

impl RankMaps {
    /// Build rank maps for every row of the store.
    pub fn from_store(store: &SoftLabelStore) -> Self {
        let c = store.n_classes;
        let mut rank_to_class = Vec::with_capacity(store.n_samples * c);
        let mut class_to_rank = vec![0u32; store.n_samples * c];
        for s in 0..store.n_samples {
            let order = build_rank_map(store.row(s));
            for (rank, &class) in order.iter().enumerate() {
                class_to_rank[s * c + class as usize] = rank as u32;
            }
            rank_to_class.extend_from_slice(&order);
        }
        Self {
            n_samples: store.n_samples,
            n_classes: c,
            rank_to_class,
            class_to_rank,
        }
    }

    /// The class holding `rank` for `sample`.
    #[inline]
    pub fn rank_to_class(&self, sample: usize, rank: usize) -> Result<usize> {
        if rank >= self.n_classes {
            return Err(Error::Index(format!(
                "rank {rank} out of range for {} classes",
                self.n_classes
            )));
        }
        Ok(self.rank_to_class[sample * self.n_classes + rank] as usize)
    }

    #[inline]
    pub fn class_to_rank(&self, sample: usize, class: usize) -> Result<usize> {
        if class >= self.n_classes {
            return Err(Error::Index(format!(
                "class {class} out of range for {} classes",
                self.n_classes
            )));
        }
        Ok(self.class_to_rank[sample * self.n_classes + class] as usize)
    }

    /// Borrow one sample's rank->class permutation.
    #[inline]
    pub fn ranks_row(&self, sample: usize) -> &[u32] {
        &self.rank_to_class[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    #[inline]
    pub fn classes_row(&self, sample: usize) -> &[u32] {
        &self.class_to_rank[sample * self.n_classes..(sample + 1) * self.n_classes]
    }
}

/// Classes sorted by descending probability, ties broken by ascending id.
pub fn build_rank_map(p: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..p.len() as u32).collect();
    order.sort_by(|&a, &b| {
        p[b as usize]
            .partial_cmp(&p[a as usize])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    order
}

/// Run the teacher over every sample and collect temperature-softened
/// predictions.
pub fn relabel_dataset(
    teacher: &ModelParams,
    dataset: &Dataset,
    temperature: f64,
) -> Result<SoftLabelStore> {
    if teacher.n_classes() != dataset.n_classes {
        return Err(Error::Shape(format!(
            "teacher has {} outputs, dataset has {} classes",
            teacher.n_classes(),
            dataset.n_classes
        )));
    }
    let mut probs = Vec::with_capacity(dataset.len() * dataset.n_classes);
    for s in 0..dataset.len() {
        let e = energies_full(teacher, dataset.input(s))?;
        probs.extend(softmax_t(&e, temperature)?);
    }
    SoftLabelStore::from_rows(dataset.n_classes, temperature, probs)
}
