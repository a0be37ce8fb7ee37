use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{evaluate_seen, train_task, Method, MethodConfig, TrainState};
use crate::config::ExperimentConfig;
use crate::data::{build_task_stream, load_dataset, synthetic_dataset, Normalization, SyntheticSpec, TaskStream};
use crate::error::{GfrError, Result};
use crate::eval::{summary_csv, AccuracyMatrix};
use crate::generator::{FeatureGan, FeatureGenerator, GaussianPrototypeBank};
use crate::model::{Architecture, FeatureExtractor, Model};
use crate::checkpoint;
use crate::rng::rng_from_seed;

pub const CONFIG_FILE: &str = "config";
pub const LOCK_FILE: &str = "lock";
pub const LOG_FILE: &str = "log";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const COMPLETE_MARKER: &str = "complete";
const EXTRACTOR_FILE: &str = "extractor.ckpt";
const HEAD_FILE: &str = "head.ckpt";
const GENERATOR_FILE: &str = "generator.ckpt";
const CRITIC_FILE: &str = "critic.ckpt";
const BANK_FILE: &str = "prototypes.bank";

/// A validated configuration with its data stream and model shapes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub stream: TaskStream,
    pub arch: Architecture,
    pub method: MethodConfig,
}

impl Experiment {
    pub fn seed(&self) -> u64 {
        self.config.training.seed
    }
}

pub fn prepare_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let mut dataset = match d.source.as_str() {
        "disk" => load_dataset(Path::new(d.path.as_deref().unwrap_or_default()))?,
        _ => synthetic_dataset(&SyntheticSpec {
            num_classes: d.num_classes,
            image_side: d.image_side,
            train_per_class: d.train_per_class,
            test_per_class: d.test_per_class,
            seed: d.seed,
        })?,
    };
    if !d.normalize {
        dataset.normalization = Normalization::identity(dataset.geometry.channels);
    }
    let geometry = dataset.geometry;
    let stream = build_task_stream(
        Arc::new(dataset),
        cfg.split.first_task_fraction,
        cfg.split.num_remaining_tasks,
        cfg.split.seed,
    )?;
    Ok(Experiment {
        config: cfg.clone(),
        stream,
        arch: cfg.architecture(geometry)?,
        method: cfg.method_config()?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from the last completed task of an existing run.
    pub resume: bool,
    /// Stop after this task even if more remain.
    pub stop_after: Option<usize>,
    /// Delete an existing run directory before starting.
    pub force: bool,
    /// Run directory; defaults to the configuration's.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub matrix: AccuracyMatrix,
    /// Tasks completed before this invocation started.
    pub resumed_from: usize,
    pub completed: usize,
}

pub fn task_dir(run: &Path, t: usize) -> PathBuf {
    run.join(format!("task_{t}"))
}

struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| GfrError::io(&path, e))?;
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(GfrError::config(format!(
                "run directory {} is locked by another process (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(GfrError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| GfrError::io(path, e))
}

fn is_complete(run: &Path, t: usize) -> bool {
    task_dir(run, t).join(COMPLETE_MARKER).is_file()
}

fn seen_classes(stream: &TaskStream, t: usize) -> usize {
    stream.classes_through(t)
}

/// Model as saved at the end of task `t`.
pub fn load_task_model(run: &Path, exp: &Experiment, t: usize) -> Result<Model> {
    let dir = task_dir(run, t);
    let mut model = Model::new(
        exp.arch,
        exp.method.tap,
        seen_classes(&exp.stream, t),
        exp.method.head_bias,
        &mut rng_from_seed(0),
    );
    model.load(&dir.join(EXTRACTOR_FILE), &dir.join(HEAD_FILE))?;
    Ok(model)
}

/// Replay generator as saved at the end of task `t`, if the method has one.
pub fn load_task_generator(run: &Path, exp: &Experiment, t: usize) -> Result<Option<FeatureGenerator>> {
    let dir = task_dir(run, t);
    match exp.method.method {
        Method::OursGaussian => Ok(Some(FeatureGenerator::Gaussian(GaussianPrototypeBank::load(
            &dir.join(BANK_FILE),
        )?))),
        Method::OursGan => {
            let probe = FeatureExtractor::new(exp.arch, exp.method.tap, &mut rng_from_seed(0));
            let dim = probe.tap_dim(exp.method.tap);
            Ok(Some(FeatureGenerator::Gan(FeatureGan::load(
                &dir.join(GENERATOR_FILE),
                &dir.join(CRITIC_FILE),
                seen_classes(&exp.stream, t),
                dim,
                &exp.method.gan,
            )?)))
        }
        _ => Ok(None),
    }
}

/// Extractors saved after each of tasks `1..=T`. A missing checkpoint is an
/// analysis error.
pub fn load_extractors(run: &Path, exp: &Experiment) -> Result<Vec<FeatureExtractor>> {
    (1..=exp.stream.len())
        .map(|t| {
            let path = task_dir(run, t).join(EXTRACTOR_FILE);
            if !path.is_file() {
                return Err(GfrError::Analysis(format!("missing extractor checkpoint {}", path.display())));
            }
            let mut ext = FeatureExtractor::new(exp.arch, exp.method.tap, &mut rng_from_seed(0));
            let desc = ext.descriptor();
            checkpoint::load_into(&path, &desc, &mut ext)?;
            Ok(ext)
        })
        .collect()
}

fn save_task(run: &Path, state: &TrainState, t: usize) -> Result<()> {
    let dir = task_dir(run, t);
    fs::create_dir_all(&dir).map_err(|e| GfrError::io(&dir, e))?;
    state.model.save(&dir.join(EXTRACTOR_FILE), &dir.join(HEAD_FILE))?;
    match &state.generator {
        Some(FeatureGenerator::Gaussian(bank)) => bank.save(&dir.join(BANK_FILE))?,
        Some(FeatureGenerator::Gan(gan)) => gan.save(&dir.join(GENERATOR_FILE), &dir.join(CRITIC_FILE))?,
        None => {}
    }
    Ok(())
}

fn restore_state(run: &Path, exp: &Experiment, t: usize) -> Result<TrainState> {
    let model = load_task_model(run, exp, t)?;
    let generator = load_task_generator(run, exp, t)?;
    Ok(TrainState {
        completed: t,
        previous: Some(model.snapshot()),
        model,
        generator,
        seed: exp.seed(),
    })
}

fn prepare_dir(dir: &Path, canonical: &str, opts: &RunOptions) -> Result<()> {
    let config_path = dir.join(CONFIG_FILE);
    if dir.exists() {
        if opts.force && !opts.resume {
            fs::remove_dir_all(dir).map_err(|e| GfrError::io(dir, e))?;
        } else if opts.resume {
            if config_path.is_file() {
                let existing = fs::read_to_string(&config_path).map_err(|e| GfrError::io(&config_path, e))?;
                if existing != canonical {
                    return Err(GfrError::config(format!(
                        "configuration differs from the one recorded in {}",
                        config_path.display()
                    )));
                }
            }
        } else {
            let occupied = fs::read_dir(dir)
                .map_err(|e| GfrError::io(dir, e))?
                .next()
                .is_some();
            if occupied {
                return Err(GfrError::config(format!(
                    "run directory {} already exists (use resume or force)",
                    dir.display()
                )));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| GfrError::io(dir, e))?;
    write_file(&config_path, canonical)
}

/// Trains every task of the experiment, writing checkpoints, the accuracy
/// matrix, the summary and a log into the run directory after each task.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let exp = prepare_experiment(cfg)?;
    let dir = opts.dir.clone().unwrap_or_else(|| cfg.run_dir());
    let canonical = cfg.canonical();
    prepare_dir(&dir, &canonical, opts)?;
    let _lock = RunLock::acquire(&dir)?;

    let total = exp.stream.len();
    let last = opts.stop_after.map_or(total, |k| k.min(total));
    let mut start = 0;
    if opts.resume {
        while start < total && is_complete(&dir, start + 1) {
            start += 1;
        }
    }
    let metrics_path = dir.join(METRICS_FILE);
    let (mut state, mut matrix) = if start > 0 {
        let text = fs::read_to_string(&metrics_path).map_err(|e| GfrError::io(&metrics_path, e))?;
        let recorded = AccuracyMatrix::from_csv(&metrics_path, &text)?;
        if recorded.num_tasks() < start {
            return Err(GfrError::format(&metrics_path, "fewer rows than completed tasks"));
        }
        let rows = recorded.rows()[..start].to_vec();
        (restore_state(&dir, &exp, start)?, AccuracyMatrix::from_rows(rows)?)
    } else {
        for t in 1..=total {
            let td = task_dir(&dir, t);
            if td.exists() {
                fs::remove_dir_all(&td).map_err(|e| GfrError::io(&td, e))?;
            }
        }
        (TrainState::new(exp.arch, &exp.stream, &exp.method, exp.seed())?, AccuracyMatrix::new())
    };

    let log_path = dir.join(LOG_FILE);
    let mut log_file: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| GfrError::io(&log_path, e))?;
    let mut io_error = None;
    let mut log = |line: String| {
        if io_error.is_none() {
            if let Err(e) = writeln!(log_file, "{line}") {
                io_error = Some(e);
            }
        }
    };
    if start > 0 {
        log(format!("resumed after task {start}"));
    }

    for t in start + 1..=last {
        train_task(&mut state, &exp.stream, &exp.method, t, &mut log)?;
        let row = evaluate_seen(&state.model, &exp.stream, t)?;
        log(format!(
            "task={t} accuracies={}",
            row.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(",")
        ));
        matrix.push_row(row)?;
        save_task(&dir, &state, t)?;
        write_file(&metrics_path, matrix.to_csv())?;
        write_file(&dir.join(SUMMARY_FILE), summary_csv(&matrix)?)?;
        write_file(&task_dir(&dir, t).join(COMPLETE_MARKER), "")?;
    }
    if let Some(e) = io_error {
        return Err(GfrError::io(&log_path, e));
    }
    Ok(RunOutcome {
        dir,
        completed: matrix.num_tasks(),
        matrix,
        resumed_from: start,
    })
}
