//! Experiment grid: (method, subset size) cells crossed with seeds,
//! resumable through the results CSV in the output directory.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use sdkd_core::data::{gen_blobs, load_csv, load_idx, BlobsConfig, Dataset};
use sdkd_core::error::{Error, Result};
use sdkd_core::model::ModelParams;
use sdkd_core::soft_labels::{relabel_dataset, RankMaps};
use sdkd_core::train::{
    evaluate_top1, train_student, train_teacher, ModelSpec, TrainConfig, TrainMethod,
};

use crate::config::Config;

pub const RESULTS_HEADER: &str = "method,k,seed,top1,last_layer_ms,sampling_ms";

/// Where the task data comes from.
#[derive(Debug, Clone)]
pub enum DataSpec {
    Blobs(BlobsConfig),
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
    Csv {
        train: String,
        test: String,
        label_column: String,
    },
}

impl DataSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        match cfg.str_or("data.kind", "blobs")?.as_str() {
            "blobs" => Ok(DataSpec::Blobs(cfg.blobs()?)),
            "idx" => Ok(DataSpec::Idx {
                train_images: cfg.str_required("data.idx.train_images")?,
                train_labels: cfg.str_required("data.idx.train_labels")?,
                test_images: cfg.str_required("data.idx.test_images")?,
                test_labels: cfg.str_required("data.idx.test_labels")?,
            }),
            "csv" => Ok(DataSpec::Csv {
                train: cfg.str_required("data.csv.train")?,
                test: cfg.str_required("data.csv.test")?,
                label_column: cfg.str_or("data.csv.label_column", "label")?,
            }),
            other => Err(Error::Param(format!("unknown data kind '{other}'"))),
        }
    }

    /// Load or generate the train/test pair. `seed_offset` shifts the blob
    /// seed so different experiment seeds see independent tasks; file-backed
    /// datasets ignore it.
    pub fn load(&self, seed_offset: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataSpec::Blobs(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = cfg.seed.wrapping_add(seed_offset);
                gen_blobs(&cfg)
            }
            DataSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = load_idx(test_images, test_labels)?;
                let c = train.n_classes.max(test.n_classes);
                train.n_classes = c;
                test.n_classes = c;
                Ok((train, test))
            }
            DataSpec::Csv {
                train,
                test,
                label_column,
            } => {
                let (train, _) = load_csv(train, label_column)?;
                let (test, _) = load_csv(test, label_column)?;
                Ok((train, test))
            }
        }
    }
}

/// Declarative description of one grid run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub teacher_spec: ModelSpec,
    pub teacher_train: TrainConfig,
    pub student_spec: ModelSpec,
    pub base_train: TrainConfig,
    pub relabel_temperature: f64,
    pub cells: Vec<(TrainMethod, usize)>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let methods = cfg.str_list_or(
            "grid.methods",
            &["distillation", "pdbs", "uniform_is", "ftis", "dis"],
        )?;
        let ks = cfg.usize_list_or("grid.ks", &[10])?;
        let mut cells = Vec::new();
        for name in &methods {
            let method = TrainMethod::parse(name)?;
            if method.uses_subset() {
                for &k in &ks {
                    cells.push((method, k));
                }
            } else {
                // Full-softmax methods have no subset axis.
                cells.push((method, 0));
            }
        }
        let seeds = cfg.u64_list_or("grid.seeds", &[0, 1, 2, 3, 4])?;
        if cells.is_empty() || seeds.is_empty() {
            return Err(Error::Param(
                "grid needs at least one cell and one seed".into(),
            ));
        }
        Ok(Self {
            data: DataSpec::from_config(cfg)?,
            teacher_spec: cfg.teacher_spec()?,
            teacher_train: cfg.teacher_train()?,
            student_spec: cfg.student_spec()?,
            base_train: cfg.student_train()?,
            relabel_temperature: cfg.relabel_temperature()?,
            cells,
            seeds,
            jobs: cfg.usize_or("grid.jobs", 1)?.max(1),
        })
    }
}

/// One completed (cell, seed) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub k: usize,
    pub seed: u64,
    pub top1: f64,
    pub last_layer_ms: f64,
    pub sampling_ms: f64,
}

impl ResultRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method, self.k, self.seed, self.top1, self.last_layer_ms, self.sampling_ms
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::Format(format!("bad results row '{line}'")));
        }
        let bad = |what: &str| Error::Format(format!("bad {what} in results row '{line}'"));
        Ok(Self {
            method: cells[0].to_string(),
            k: cells[1].parse().map_err(|_| bad("k"))?,
            seed: cells[2].parse().map_err(|_| bad("seed"))?,
            top1: cells[3].parse().map_err(|_| bad("top1"))?,
            last_layer_ms: cells[4].parse().map_err(|_| bad("last_layer_ms"))?,
            sampling_ms: cells[5].parse().map_err(|_| bad("sampling_ms"))?,
        })
    }
}

/// Parse a results CSV written by [`run_grid`].
pub fn parse_results<P: AsRef<Path>>(path: P) -> Result<Vec<ResultRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != RESULTS_HEADER {
                return Err(Error::Format(format!("unexpected results header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(ResultRow::parse(&line)?);
    }
    Ok(rows)
}

pub fn write_results<P: AsRef<Path>>(path: P, rows: &[ResultRow]) -> Result<()> {
    let mut w = File::create(path)?;
    writeln!(w, "{RESULTS_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

fn sort_canonical(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.k.cmp(&b.k))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Per-seed shared work: task data, trained (or cached) teacher, relabeled
/// store, rank maps.
struct SeedContext {
    train: Dataset,
    test: Dataset,
    teacher: ModelParams,
    store: sdkd_core::soft_labels::SoftLabelStore,
    maps: RankMaps,
}

fn prepare_seed(cfg: &ExperimentConfig, seed: u64, cache_dir: &Path) -> Result<SeedContext> {
    let (train, test) = cfg.data.load(seed)?;
    let ckpt = cache_dir.join(format!("teacher_seed{seed}.bin"));
    let teacher = if ckpt.exists() {
        ModelParams::load_checkpoint(&ckpt)?
    } else {
        let mut tcfg = cfg.teacher_train.clone();
        tcfg.seed = tcfg.seed.wrapping_add(seed);
        let teacher = train_teacher(&train, &cfg.teacher_spec, &tcfg)?;
        teacher.save_checkpoint(&ckpt)?;
        teacher
    };
    let store = relabel_dataset(&teacher, &train, cfg.relabel_temperature)?;
    let maps = RankMaps::from_store(&store);
    Ok(SeedContext {
        train,
        test,
        teacher,
        store,
        maps,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    method: TrainMethod,
    k: usize,
    seed: u64,
) -> Result<ResultRow> {
    let mut tcfg = cfg.base_train.clone();
    tcfg.method = method;
    if method.uses_subset() {
        tcfg.subset_size = k;
    }
    tcfg.seed = seed;
    let outcome = train_student(
        &ctx.train,
        &ctx.store,
        &ctx.maps,
        &ctx.teacher,
        &cfg.student_spec,
        &tcfg,
        None,
    )?;
    let top1 = evaluate_top1(&outcome.model, &ctx.test)?;
    Ok(ResultRow {
        method: method.name().to_string(),
        k,
        seed,
        top1,
        last_layer_ms: outcome.timing.mean_last_layer_ms(),
        sampling_ms: outcome.timing.mean_sampling_ms(),
    })
}

/// Run every missing (cell, seed) combination and return the full sorted
/// table. Completed rows are appended to `results.csv` as they finish, and
/// the file is rewritten in canonical order at the end, so interrupted runs
/// pick up where they left off.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ResultRow>> {
    std::fs::create_dir_all(out_dir)?;
    let cache_dir = out_dir.join("cache");
    std::fs::create_dir_all(&cache_dir)?;
    let results_path = out_dir.join("results.csv");

    let mut existing: Vec<ResultRow> = if results_path.exists() {
        parse_results(&results_path)?
    } else {
        Vec::new()
    };
    let done: HashSet<(String, usize, u64)> = existing
        .iter()
        .map(|r| (r.method.clone(), r.k, r.seed))
        .collect();

    // Group pending cells by seed so the teacher/relabel work is shared.
    let mut pending: Vec<(u64, Vec<(TrainMethod, usize)>)> = Vec::new();
    for &seed in &cfg.seeds {
        let cells: Vec<(TrainMethod, usize)> = cfg
            .cells
            .iter()
            .filter(|(m, k)| !done.contains(&(m.name().to_string(), *k, seed)))
            .cloned()
            .collect();
        if !cells.is_empty() {
            pending.push((seed, cells));
        }
    }

    if !pending.is_empty() {
        if !results_path.exists() {
            let mut w = File::create(&results_path)?;
            writeln!(w, "{RESULTS_HEADER}")?;
        }
        let append = OpenOptions::new().append(true).open(&results_path)?;
        type SeedTasks = std::collections::VecDeque<(u64, Vec<(TrainMethod, usize)>)>;
        let writer = Mutex::new(append);
        let new_rows: Mutex<Vec<ResultRow>> = Mutex::new(Vec::new());
        let queue: Mutex<SeedTasks> = Mutex::new(pending.into_iter().collect());
        let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());

        std::thread::scope(|scope| {
            for _ in 0..cfg.jobs {
                scope.spawn(|| loop {
                    let task = queue.lock().expect("queue lock").pop_front();
                    let Some((seed, cells)) = task else { break };
                    let ctx = match prepare_seed(cfg, seed, &cache_dir) {
                        Ok(ctx) => ctx,
                        Err(e) => {
                            errors
                                .lock()
                                .expect("error lock")
                                .push(format!("seed {seed}: {e}"));
                            continue;
                        }
                    };
                    for (method, k) in cells {
                        let row = match run_cell(cfg, &ctx, method, k, seed) {
                            Ok(row) => row,
                            Err(e) => {
                                // Record the failure as a NaN row; the rest
                                // of the grid keeps going.
                                eprintln!(
                                    "cell ({}, k={k}, seed {seed}) failed: {e}",
                                    method.name()
                                );
                                ResultRow {
                                    method: method.name().to_string(),
                                    k,
                                    seed,
                                    top1: f64::NAN,
                                    last_layer_ms: f64::NAN,
                                    sampling_ms: f64::NAN,
                                }
                            }
                        };
                        let mut w = writer.lock().expect("writer lock");
                        let _ = writeln!(w, "{}", row.csv_line());
                        let _ = w.flush();
                        drop(w);
                        new_rows.lock().expect("rows lock").push(row);
                    }
                });
            }
        });

        let errs = errors.into_inner().expect("error lock");
        if !errs.is_empty() {
            return Err(Error::Training(format!(
                "grid preparation failed: {}",
                errs.join("; ")
            )));
        }
        existing.extend(new_rows.into_inner().expect("rows lock"));
    }

    sort_canonical(&mut existing);
    write_results(&results_path, &existing)?;
    Ok(existing)
}

/// Mean top-1 over seeds for one (method, k) cell of a result table.
pub fn mean_top1(rows: &[ResultRow], method: &str, k: usize) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.k == k && r.top1.is_finite())
        .map(|r| r.top1)
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
