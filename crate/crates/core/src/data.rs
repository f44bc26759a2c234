//! Dataset generation and ingestion: synthetic many-class Gaussian blobs,
//! plus IDX and CSV loaders for small real datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled dataset held densely in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// n x n_features, row-major.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.len() * self.n_features {
            return Err(Error::Shape("input buffer length mismatch".into()));
        }
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite dataset input".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Write as a headered CSV with the label in the first column.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "label")?;
        for j in 0..self.n_features {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i])?;
            for v in self.input(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Synthetic Gaussian-blob task: one random center per class, isotropic noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BlobsConfig {
    fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.dim == 0 {
            return Err(Error::Param("blob counts must be positive".into()));
        }
        if !(self.noise_sigma > 0.0) || !(self.center_scale > 0.0) {
            return Err(Error::Param("blob scales must be positive".into()));
        }
        Ok(())
    }
}

/// Generate blobs and split 80/20 per class, keeping priors exactly uniform
/// within each split. Deterministic for a fixed seed.
pub fn gen_blobs(cfg: &BlobsConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.noise_sigma).expect("positive sigma");

    let mut centers = vec![0.0; cfg.n_classes * cfg.dim];
    for v in centers.iter_mut() {
        *v = rng.random_range(-cfg.center_scale..cfg.center_scale);
    }

    let n_train_per_class = (cfg.samples_per_class * 4) / 5;
    let mut train = Dataset {
        n_features: cfg.dim,
        n_classes: cfg.n_classes,
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    let mut test = train.clone();

    for class in 0..cfg.n_classes {
        let center = &centers[class * cfg.dim..(class + 1) * cfg.dim];
        for s in 0..cfg.samples_per_class {
            let dst = if s < n_train_per_class {
                &mut train
            } else {
                &mut test
            };
            for &c in center {
                dst.inputs.push(c + normal.sample(&mut rng));
            }
            dst.labels.push(class);
        }
    }
    Ok((train, test))
}

fn read_idx_header<R: Read>(r: &mut R, want_magic: u32, what: &str) -> Result<u32> {
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("{what}: file too short for magic")))?;
    if magic != want_magic {
        return Err(Error::Format(format!(
            "{what}: magic {magic:#010x}, expected {want_magic:#010x}"
        )));
    }
    r.read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("{what}: truncated count")))
}

/// Load an IDX image/label pair (big-endian, standard layout). Pixels are
/// scaled to `[0,1]` and flattened row-major.
pub fn load_idx<P: AsRef<Path>>(images_path: P, labels_path: P) -> Result<Dataset> {
    let mut ir = BufReader::new(File::open(images_path)?);
    let n_images = read_idx_header(&mut ir, IDX_IMAGES_MAGIC, "idx images")? as usize;
    let rows = ir
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format("idx images: truncated rows".into()))? as usize;
    let cols = ir
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format("idx images: truncated cols".into()))? as usize;
    let mut pixels = vec![0u8; n_images * rows * cols];
    ir.read_exact(&mut pixels)
        .map_err(|_| Error::Format("idx images: truncated pixel data".into()))?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let n_labels = read_idx_header(&mut lr, IDX_LABELS_MAGIC, "idx labels")? as usize;
    if n_labels != n_images {
        return Err(Error::Format(format!(
            "idx count mismatch: {n_images} images vs {n_labels} labels"
        )));
    }
    let mut raw_labels = vec![0u8; n_labels];
    lr.read_exact(&mut raw_labels)
        .map_err(|_| Error::Format("idx labels: truncated label data".into()))?;

    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        n_features: rows * cols,
        n_classes,
        inputs: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels,
    })
}

/// Load a numeric CSV with a header row. The named label column is pulled
/// out and its values re-indexed to contiguous class ids (ascending by the
/// original value); every other column becomes a feature. The second
/// element maps each new class id back to the original label value.
pub fn load_csv<P: AsRef<Path>>(path: P, label_column: &str) -> Result<(Dataset, Vec<i64>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("csv: empty file".into()))??;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = names
        .iter()
        .position(|&n| n == label_column)
        .ok_or_else(|| Error::Format(format!("csv: no column named '{label_column}'")))?;
    let n_features = names.len() - 1;

    let mut raw_labels: Vec<i64> = Vec::new();
    let mut inputs: Vec<f64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::Format(format!(
                "csv row {}: {} cells, expected {}",
                lineno + 2,
                cells.len(),
                names.len()
            )));
        }
        for (j, cell) in cells.iter().enumerate() {
            if j == label_idx {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Format(format!("csv row {}: bad label '{cell}'", lineno + 2))
                })?;
                raw_labels.push(v.round() as i64);
            } else {
                inputs.push(cell.parse().map_err(|_| {
                    Error::Format(format!("csv row {}: non-numeric cell '{cell}'", lineno + 2))
                })?);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Format("csv: no data rows".into()));
    }

    let mut distinct: Vec<i64> = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect();
    let dataset = Dataset {
        n_features,
        n_classes: distinct.len(),
        inputs,
        labels,
    };
    Ok((dataset, distinct))
}
