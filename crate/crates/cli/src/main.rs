use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use sdkd_cli::bench::{bench_softmax, BenchConfig};
use sdkd_cli::config::Config;
use sdkd_cli::grid::{parse_results, run_grid, DataSpec, ExperimentConfig};
use sdkd_cli::plot::emit_all;
use sdkd_core::estimators::RankFrequencyLog;
use sdkd_core::model::ModelParams;
use sdkd_core::soft_labels::{relabel_dataset, RankMaps, SoftLabelStore};
use sdkd_core::train::{
    evaluate_top1, train_student, train_teacher_logged, write_epoch_csv, TrainMethod,
};

#[derive(Parser)]
#[command(
    name = "sdkd",
    about = "Sampled-softmax knowledge distillation: train, sample, benchmark",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a blob dataset and write train/test CSVs.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Shift the blob seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a teacher on hard labels and save its checkpoint.
    TrainTeacher {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Relabel the training split with a teacher's soft predictions.
    Relabel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a student with the configured method.
    TrainStudent {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run the (method, k) x seed experiment grid; resumable per row.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace the configured seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict the grid to one method.
        #[arg(long)]
        method: Option<String>,
        /// Restrict the grid to one subset size.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Time the full-softmax path against the sampled path.
    BenchSoftmax {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Render plot data and SVG scatters from a results CSV.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config<E: std::fmt::Display>(e: E) -> Self {
        CliError::Config(e.to_string())
    }

    fn runtime<E: std::fmt::Display>(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn load_config(path: &Option<PathBuf>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::from_file(p).map_err(CliError::config),
    }
}

fn apply_train_overrides(
    cfg: &mut Config,
    seed: &Option<u64>,
    method: &Option<String>,
    k: &Option<usize>,
) -> CliResult {
    if let Some(s) = seed {
        cfg.set("train.seed", json!(s));
    }
    if let Some(m) = method {
        TrainMethod::parse(m).map_err(CliError::config)?;
        cfg.set("train.method", json!(m));
    }
    if let Some(k) = k {
        cfg.set("train.k", json!(k));
    }
    Ok(())
}

fn cmd_gen_data(config: &Option<PathBuf>, out: &Path, seed: Option<u64>) -> CliResult {
    let cfg = load_config(config)?;
    let kind = cfg.str_or("data.kind", "blobs").map_err(CliError::config)?;
    if kind != "blobs" {
        return Err(CliError::Config(format!(
            "gen-data generates blob datasets; data.kind is '{kind}'"
        )));
    }
    let mut blobs = cfg.blobs().map_err(CliError::config)?;
    if let Some(s) = seed {
        blobs.seed = blobs.seed.wrapping_add(s);
    }
    let (train, test) = sdkd_core::data::gen_blobs(&blobs).map_err(CliError::runtime)?;
    std::fs::create_dir_all(out).map_err(CliError::runtime)?;
    train
        .save_csv(out.join("train.csv"))
        .map_err(CliError::runtime)?;
    test.save_csv(out.join("test.csv"))
        .map_err(CliError::runtime)?;
    println!(
        "wrote {} train and {} test samples ({} classes, dim {}) to {}",
        train.len(),
        test.len(),
        train.n_classes,
        train.n_features,
        out.display()
    );
    Ok(())
}

fn cmd_train_teacher(config: &Option<PathBuf>, out: &Path, seed: Option<u64>) -> CliResult {
    let cfg = load_config(config)?;
    let data = DataSpec::from_config(&cfg).map_err(CliError::config)?;
    let spec = cfg.teacher_spec().map_err(CliError::config)?;
    let mut tcfg = cfg.teacher_train().map_err(CliError::config)?;
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    let (train, test) = data.load(0).map_err(CliError::runtime)?;
    let outcome =
        train_teacher_logged(&train, Some(&test), &spec, &tcfg).map_err(CliError::runtime)?;
    std::fs::create_dir_all(out).map_err(CliError::runtime)?;
    outcome
        .model
        .save_checkpoint(out.join("teacher.bin"))
        .map_err(CliError::runtime)?;
    let log = File::create(out.join("teacher_log.csv")).map_err(CliError::runtime)?;
    write_epoch_csv(&outcome.history, log).map_err(CliError::runtime)?;
    let top1 = evaluate_top1(&outcome.model, &test).map_err(CliError::runtime)?;
    println!(
        "teacher test top-1 {top1:.4}; checkpoint at {}",
        out.join("teacher.bin").display()
    );
    Ok(())
}

fn cmd_relabel(config: &Option<PathBuf>, teacher: &Path, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let data = DataSpec::from_config(&cfg).map_err(CliError::config)?;
    let t = cfg.relabel_temperature().map_err(CliError::config)?;
    let (train, _) = data.load(0).map_err(CliError::runtime)?;
    let teacher = ModelParams::load_checkpoint(teacher).map_err(CliError::runtime)?;
    let store = relabel_dataset(&teacher, &train, t).map_err(CliError::runtime)?;
    std::fs::create_dir_all(out).map_err(CliError::runtime)?;
    store
        .save(out.join("store.bin"))
        .map_err(CliError::runtime)?;
    println!(
        "relabeled {} samples over {} classes at T={t}; store at {}",
        store.n_samples,
        store.n_classes,
        out.join("store.bin").display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_student(
    config: &Option<PathBuf>,
    teacher: &Path,
    store: &Path,
    out: &Path,
    seed: Option<u64>,
    method: Option<String>,
    k: Option<usize>,
) -> CliResult {
    let mut cfg = load_config(config)?;
    apply_train_overrides(&mut cfg, &seed, &method, &k)?;
    let data = DataSpec::from_config(&cfg).map_err(CliError::config)?;
    let spec = cfg.student_spec().map_err(CliError::config)?;
    let tcfg = cfg.student_train().map_err(CliError::config)?;

    let (train, test) = data.load(0).map_err(CliError::runtime)?;
    let teacher = ModelParams::load_checkpoint(teacher).map_err(CliError::runtime)?;
    let store = SoftLabelStore::load(store).map_err(CliError::runtime)?;
    let maps = RankMaps::from_store(&store);
    let outcome = train_student(&train, &store, &maps, &teacher, &spec, &tcfg, Some(&test))
        .map_err(CliError::runtime)?;

    std::fs::create_dir_all(out).map_err(CliError::runtime)?;
    outcome
        .model
        .save_checkpoint(out.join("student.bin"))
        .map_err(CliError::runtime)?;
    let log = File::create(out.join("epochs.csv")).map_err(CliError::runtime)?;
    write_epoch_csv(&outcome.history, log).map_err(CliError::runtime)?;
    write_rank_csv(&outcome.freq_log, &out.join("rank_freq.csv"))?;
    let timing = serde_json::to_string_pretty(&outcome.timing).map_err(CliError::runtime)?;
    std::fs::write(out.join("timing.json"), timing).map_err(CliError::runtime)?;
    let top1 = evaluate_top1(&outcome.model, &test).map_err(CliError::runtime)?;
    println!(
        "method {} test top-1 {top1:.4}; mean last-layer {:.3} ms, sampling {:.3} ms per iteration",
        tcfg.method.name(),
        outcome.timing.mean_last_layer_ms(),
        outcome.timing.mean_sampling_ms()
    );
    Ok(())
}

fn write_rank_csv(log: &RankFrequencyLog, path: &Path) -> CliResult {
    let f = File::create(path).map_err(CliError::runtime)?;
    log.write_csv(f).map_err(CliError::runtime)
}

fn cmd_grid(
    config: &Option<PathBuf>,
    out: &Path,
    seed: Option<u64>,
    method: Option<String>,
    k: Option<usize>,
    jobs: Option<usize>,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.set("grid.seeds", json!([s]));
    }
    if let Some(m) = &method {
        cfg.set("grid.methods", json!([m]));
    }
    if let Some(k) = k {
        cfg.set("grid.ks", json!([k]));
    }
    if let Some(j) = jobs {
        cfg.set("grid.jobs", json!(j));
    }
    let exp = ExperimentConfig::from_config(&cfg).map_err(CliError::config)?;
    let rows = run_grid(&exp, out).map_err(CliError::runtime)?;
    println!(
        "{} result rows in {}",
        rows.len(),
        out.join("results.csv").display()
    );
    for (m, kk) in &exp.cells {
        if let Some(mean) = sdkd_cli::grid::mean_top1(&rows, m.name(), *kk) {
            println!("  {} k={kk}: mean top-1 {mean:.4}", m.name());
        }
    }
    Ok(())
}

fn cmd_bench(config: &Option<PathBuf>, out: &Option<PathBuf>, k: Option<usize>) -> CliResult {
    let cfg = load_config(config)?;
    let mut bcfg = BenchConfig::from_config(&cfg).map_err(CliError::config)?;
    if let Some(k) = k {
        bcfg.k = k;
    }
    let report = bench_softmax(&bcfg).map_err(CliError::runtime)?;
    println!("{}", report.summary());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(CliError::runtime)?;
        let mut csv = String::from("path,median_last_layer_ms,median_sampling_ms\n");
        csv.push_str(&format!(
            "full,{},{}\n",
            report.full.median_last_layer_ns() as f64 / 1e6,
            report.full.median_sampling_ns() as f64 / 1e6
        ));
        csv.push_str(&format!(
            "sampled,{},{}\n",
            report.sampled.median_last_layer_ns() as f64 / 1e6,
            report.sampled.median_sampling_ns() as f64 / 1e6
        ));
        std::fs::write(dir.join("bench.csv"), csv).map_err(CliError::runtime)?;
        let records = serde_json::to_string_pretty(&serde_json::json!({
            "full": report.full,
            "sampled": report.sampled,
        }))
        .map_err(CliError::runtime)?;
        std::fs::write(dir.join("bench.json"), records).map_err(CliError::runtime)?;
    }
    Ok(())
}

fn cmd_plot(results: &Path, out: &Path) -> CliResult {
    let rows = parse_results(results).map_err(CliError::runtime)?;
    if rows.is_empty() {
        return Err(CliError::Runtime("results table is empty".into()));
    }
    emit_all(&rows, out).map_err(CliError::runtime)?;
    println!("plots written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match &cli.cmd {
        Cmd::GenData { config, out, seed } => cmd_gen_data(config, out, *seed),
        Cmd::TrainTeacher { config, out, seed } => cmd_train_teacher(config, out, *seed),
        Cmd::Relabel {
            config,
            teacher,
            out,
        } => cmd_relabel(config, teacher, out),
        Cmd::TrainStudent {
            config,
            teacher,
            store,
            out,
            seed,
            method,
            k,
        } => cmd_train_student(config, teacher, store, out, *seed, method.clone(), *k),
        Cmd::Grid {
            config,
            out,
            seed,
            method,
            k,
            jobs,
        } => cmd_grid(config, out, *seed, method.clone(), *k, *jobs),
        Cmd::BenchSoftmax { config, out, k } => cmd_bench(config, out, *k),
        Cmd::Plot { results, out } => cmd_plot(results, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
