mod import;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gfr_core::analysis::{
    cca_csv, encode_feature_dump, export_features, forgetting_curves, DEFAULT_PROBE_CAP, DEFAULT_VARIANCE_THRESHOLD,
};
use gfr_core::config::ExperimentConfig;
use gfr_core::data::{load_dataset, ImageGeometry};
use gfr_core::eval::{average_accuracy, average_forgetting, storage_footprint, AccuracyMatrix, MethodFootprint};
use gfr_core::generator::FeatureGan;
use gfr_core::model::{FeatureExtractor, TapPoint};
use gfr_core::rng::{rng_from_seed, stream_rng, Stream};
use gfr_core::trainer::{
    load_extractors, load_task_generator, load_task_model, prepare_experiment, run_experiment, split_features,
    task_probe, Method, RunOptions,
};
use gfr_core::{GfrError, Result};

const RUN_CONFIG: &str = "config";
const METRICS: &str = "metrics.csv";

#[derive(Parser)]
#[command(name = "gfr", version, about = "Class-incremental learning with generative feature replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a CIFAR-10/100 binary directory or .tar.gz archive into a dataset directory.
    Import {
        source: PathBuf,
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train every task of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Continue after the last completed task.
        #[arg(long)]
        resume: bool,
        /// Override `training.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (defaults to the configured output location).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Delete an existing run directory first.
        #[arg(long)]
        force: bool,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Print average accuracy and forgetting after each task of a run.
    Report { run: PathBuf },
    /// Layer-wise SVCCA similarity between each task's model and later ones.
    Cca {
        run: PathBuf,
        /// Comma-separated taps.
        #[arg(long, default_value = "block1,block2,block3,block4,feature")]
        taps: String,
        /// Probe images per task.
        #[arg(long, default_value_t = DEFAULT_PROBE_CAP)]
        probe: usize,
        #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
        threshold: f64,
        /// Average spatial maps per image instead of treating positions as datapoints.
        #[arg(long)]
        pooled: bool,
        /// Output CSV (defaults to `<run>/cca.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Storage needed by the configured method across the whole stream.
    Memory {
        #[arg(long)]
        config: PathBuf,
    },
    /// Accuracy/forgetting curves and similarity heatmaps as SVG, from CSV files only.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump real and generated features of a run for embedding plots.
    ExportFeatures {
        run: PathBuf,
        /// Task whose model and generator are used (defaults to the last).
        #[arg(long)]
        task: Option<usize>,
        /// Features per class and source.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &GfrError) -> u8 {
    match e {
        GfrError::Config(_) => 2,
        GfrError::Input(_) | GfrError::Estimation(_) | GfrError::Training { .. } | GfrError::Analysis(_) => 3,
        GfrError::Io { .. } | GfrError::Format { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Import { source, out, force } => import::run(&source, &out, force),
        Command::Run {
            config,
            resume,
            seed,
            out,
            force,
            stop_after,
        } => cmd_run(&config, resume, seed, out, force, stop_after),
        Command::Report { run } => cmd_report(&run),
        Command::Cca {
            run,
            taps,
            probe,
            threshold,
            pooled,
            out,
        } => cmd_cca(&run, &taps, probe, threshold, pooled, out),
        Command::Memory { config } => cmd_memory(&config),
        Command::Plot { inputs, out } => plot::run(&inputs, &out),
        Command::ExportFeatures { run, task, count, out } => cmd_export(&run, task, count, &out),
    }
}

fn cmd_run(
    config: &Path,
    resume: bool,
    seed: Option<u64>,
    out: Option<PathBuf>,
    force: bool,
    stop_after: Option<usize>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let outcome = run_experiment(
        &cfg,
        &RunOptions {
            resume,
            stop_after,
            force,
            dir: out,
        },
    )?;
    if outcome.resumed_from > 0 {
        println!("resumed after task {}", outcome.resumed_from);
    }
    let k = outcome.completed;
    println!(
        "{} tasks complete in {}: average accuracy {:.4}",
        k,
        outcome.dir.display(),
        average_accuracy(&outcome.matrix, k)?
    );
    Ok(())
}

fn read_matrix(run: &Path) -> Result<AccuracyMatrix> {
    let path = run.join(METRICS);
    let text = fs::read_to_string(&path).map_err(|e| GfrError::io(&path, e))?;
    AccuracyMatrix::from_csv(&path, &text)
}

fn cmd_report(run: &Path) -> Result<()> {
    let m = read_matrix(run)?;
    for k in 1..=m.num_tasks() {
        let forgetting = if k > 1 {
            format!("{:.4}", average_forgetting(&m, k)?)
        } else {
            "-".to_string()
        };
        println!(
            "k={k} average_accuracy={:.4} average_forgetting={forgetting}",
            average_accuracy(&m, k)?
        );
    }
    Ok(())
}

fn load_run_config(run: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&run.join(RUN_CONFIG))
}

fn cmd_cca(run: &Path, taps: &str, probe: usize, threshold: f64, pooled: bool, out: Option<PathBuf>) -> Result<()> {
    let taps = taps
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<TapPoint>()
                .map_err(|_| GfrError::Config(format!("taps: unknown tap `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let exp = prepare_experiment(&load_run_config(run)?)?;
    let extractors = load_extractors(run, &exp)?;
    let probes = (1..=extractors.len())
        .map(|t| task_probe(&exp.stream, t, probe))
        .collect::<Result<Vec<_>>>()?;
    let cells = forgetting_curves(&extractors, &probes, &taps, pooled, threshold)?;
    let path = out.unwrap_or_else(|| run.join("cca.csv"));
    fs::write(&path, cca_csv(&cells)).map_err(|e| GfrError::io(&path, e))?;
    println!("{} similarity cells written to {}", cells.len(), path.display());
    Ok(())
}

fn cmd_memory(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let dataset_geometry = || -> Result<(ImageGeometry, usize)> {
        let d = &cfg.dataset;
        match d.source.as_str() {
            "disk" => {
                let ds = load_dataset(Path::new(d.path.as_deref().unwrap_or_default()))?;
                Ok((ds.geometry, ds.num_classes))
            }
            _ => Ok((ImageGeometry::new(d.image_side, d.image_side, 3), d.num_classes)),
        }
    };
    let method = cfg.method()?;
    let mut reports = Vec::new();
    if cfg.memory.exemplars > 0 {
        let geometry = match cfg.memory.exemplar_side {
            Some(s) => ImageGeometry::new(s, s, 3),
            None => dataset_geometry()?.0,
        };
        reports.push(storage_footprint(&MethodFootprint::exemplars(
            "exemplars",
            cfg.memory.exemplars,
            geometry,
        )));
    }
    if method == Method::OursGan {
        let (geometry, classes) = dataset_geometry()?;
        let arch = cfg.architecture(geometry)?;
        let m = cfg.method_config()?;
        let dim = if m.tap == TapPoint::Feature {
            arch.feature_dim()
        } else {
            FeatureExtractor::new(arch, m.tap, &mut rng_from_seed(0)).tap_dim(m.tap)
        };
        let (g, d) = FeatureGan::param_counts(classes, dim, m.gan.latent_dim, &m.gan.hidden);
        println!("generator_parameters={g} critic_parameters={d} feature_dim={dim} classes={classes}");
        reports.push(storage_footprint(&MethodFootprint::feature_gan(
            method.name(),
            classes,
            dim,
            m.gan.latent_dim,
            &m.gan.hidden,
        )));
    }
    if reports.is_empty() {
        println!("{}: no stored exemplars or generator", method.name());
    }
    for r in &reports {
        let parts: Vec<String> = r.components.iter().map(|(n, b)| format!("{n}={b}")).collect();
        println!(
            "{}: total_bytes={} ({:.3} MB, {:.3} MiB) {}",
            r.method,
            r.total_bytes(),
            r.megabytes(),
            r.mebibytes(),
            parts.join(" ")
        );
    }
    Ok(())
}

fn cmd_export(run: &Path, task: Option<usize>, count: usize, out: &Path) -> Result<()> {
    let exp = prepare_experiment(&load_run_config(run)?)?;
    let t = task.unwrap_or(exp.stream.len());
    exp.stream.task(t)?;
    let model = load_task_model(run, &exp, t)?;
    let generator = load_task_generator(run, &exp, t)?;
    let indices: Vec<usize> = exp.stream.tasks[..t]
        .iter()
        .flat_map(|task| task.train.iter().copied())
        .collect();
    let (features, labels) = split_features(&model.extractor, &exp.stream, true, &indices)?;
    let classes: Vec<usize> = (0..exp.stream.classes_through(t)).collect();
    let records = export_features(
        Some((&features, &labels)),
        generator.as_ref(),
        &classes,
        count,
        &mut stream_rng(exp.seed(), t, Stream::Export),
    )?;
    fs::write(out, encode_feature_dump(&records)).map_err(|e| GfrError::io(out, e))?;
    println!(
        "{} records of dimension {} written to {}",
        records.len(),
        features.ncols(),
        out.display()
    );
    Ok(())
}
