use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flate2::write::GzEncoder;
use flate2::Compression;
use gfr_core::data::load_dataset;

fn gfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfr"))
        .args(args)
        .env_remove("GFR_RUNS_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_config(method: &str, extra: &str) -> String {
    format!(
        "[dataset]\nsource = \"synthetic\"\nnum_classes = 4\nimage_side = 16\ntrain_per_class = 8\ntest_per_class = 4\nseed = 2\n\
         [split]\nfirst_task_fraction = 0.5\nnum_remaining_tasks = 2\nseed = 3\n\
         [model]\nchannels = [4, 4, 6, 8]\n\
         [method]\nname = \"{method}\"\n\
         [generator]\nlatent_dim = 4\nhidden = [16]\nepochs = 3\nbatch_size = 8\n\
         [training]\nepochs = 2\nbatch_size = 8\nseed = 5\n\
         [output]\nname = \"tiny\"\n{extra}"
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_tiny(dir: &Path, method: &str, extra_args: &[&str]) -> (PathBuf, Output) {
    let cfg = write_config(dir, &format!("{method}.toml"), &tiny_config(method, ""));
    let run = dir.join(format!("run-{method}"));
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()];
    args.extend_from_slice(extra_args);
    let out = gfr(&args);
    (run, out)
}

#[test]
fn run_writes_lower_triangle_and_report_summarizes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let (run, out) = run_tiny(tmp.path(), "ours-gan", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 6);
    for t in 1..=3 {
        let dir = run.join(format!("task_{t}"));
        for f in ["extractor.ckpt", "head.ckpt", "generator.ckpt", "critic.ckpt", "complete"] {
            assert!(dir.join(f).is_file(), "missing {f} for task {t}");
        }
    }
    assert!(fs::read_to_string(run.join("config")).unwrap().contains("ours-gan"));
    assert!(fs::read_to_string(run.join("log")).unwrap().contains("step="));
    assert!(!run.join("lock").exists());

    let report = gfr(&["report", run.to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    let lines: Vec<String> = stdout(&report).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("k=1 average_accuracy="));
    assert!(lines[2].contains("average_forgetting="));
}

#[test]
fn bad_method_tag_exits_with_config_code_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &tiny_config("icarl", ""));
    let out = gfr(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("method.name"), "{}", stderr(&out));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &tiny_config("finetune", "colour = \"red\"\n"));
    let out = gfr(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));
}

#[test]
fn diverging_training_exits_with_runtime_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tiny_config("finetune", "").replace("seed = 5\n", "seed = 5\nlearning_rate = 1e300\n");
    let cfg = write_config(tmp.path(), "hot.toml", &text);
    let out = gfr(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("training error"));
}

#[test]
fn existing_run_needs_resume_or_force() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out) = run_tiny(tmp.path(), "finetune", &[]);
    assert_eq!(code(&out), 0);
    let (_, again) = run_tiny(tmp.path(), "finetune", &[]);
    assert_eq!(code(&again), 2);
    let (_, forced) = run_tiny(tmp.path(), "finetune", &["--force"]);
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (full, out) = run_tiny(tmp.path(), "ours-gaussian", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let cfg = tmp.path().join("ours-gaussian.toml");
    let part = tmp.path().join("part");
    let args = |extra: &[&'static str]| {
        let mut a = vec![
            "run".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--out".into(),
            part.to_str().unwrap().into(),
        ];
        a.extend(extra.iter().map(|s| s.to_string()));
        a
    };
    let first = gfr(&args(&["--stop-after", "2"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(!part.join("task_3").exists());
    let second = gfr(&args(&["--resume"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    assert!(stdout(&second).contains("resumed after task 2"));

    assert_eq!(
        fs::read(full.join("metrics.csv")).unwrap(),
        fs::read(part.join("metrics.csv")).unwrap()
    );
    for f in ["extractor.ckpt", "head.ckpt", "prototypes.bank"] {
        assert_eq!(
            fs::read(full.join("task_3").join(f)).unwrap(),
            fs::read(part.join("task_3").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn resume_refuses_a_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (run, out) = run_tiny(tmp.path(), "finetune", &["--stop-after", "1"]);
    assert_eq!(code(&out), 0);
    let cfg = tmp.path().join("finetune.toml");
    let out = gfr(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--resume",
        "--seed",
        "99",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn runs_dir_environment_variable_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_config("finetune", ""));
    let root = tmp.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_gfr"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--stop-after", "1"])
        .env("GFR_RUNS_DIR", &root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(root.join("tiny").join("metrics.csv").is_file());
}

#[test]
fn cca_plot_and_export_work_from_run_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (run, out) = run_tiny(tmp.path(), "ours-gan", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let cca = tmp.path().join("cca.csv");
    let out = gfr(&[
        "cca",
        run.to_str().unwrap(),
        "--taps",
        "block1,feature",
        "--pooled",
        "--out",
        cca.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&cca).unwrap();
    assert!(text.starts_with("layer,t,t_prime,similarity,dims_a,dims_b"));
    assert_eq!(text.lines().count(), 1 + 2 * 6);

    let csv_only = tmp.path().join("csv_only");
    fs::create_dir(&csv_only).unwrap();
    for f in ["metrics.csv", "summary.csv"] {
        fs::copy(run.join(f), csv_only.join(f)).unwrap();
    }
    fs::copy(&cca, csv_only.join("cca.csv")).unwrap();
    let plots = tmp.path().join("plots");
    let out = gfr(&[
        "plot",
        csv_only.join("metrics.csv").to_str().unwrap(),
        csv_only.join("summary.csv").to_str().unwrap(),
        csv_only.join("cca.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["accuracy.svg", "forgetting.svg", "cca_csv_only_block1.svg", "cca_csv_only_feature.svg"] {
        let svg = fs::read_to_string(plots.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
    let ckpt = run.join("task_1").join("extractor.ckpt");
    let out = gfr(&["plot", ckpt.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let dump = tmp.path().join("features.bin");
    let out = gfr(&[
        "export-features",
        run.to_str().unwrap(),
        "--count",
        "3",
        "--out",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let records = 4 * 3 * 2;
    assert_eq!(fs::metadata(&dump).unwrap().len(), (records * (1 + 4 + 4 * 8)) as u64);
}

#[test]
fn cca_without_checkpoints_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (run, out) = run_tiny(tmp.path(), "finetune", &[]);
    assert_eq!(code(&out), 0);
    fs::remove_file(run.join("task_2").join("extractor.ckpt")).unwrap();
    let out = gfr(&["cca", run.to_str().unwrap(), "--pooled"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn memory_reports_exemplar_and_generator_bytes() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = gfr(&["memory", "--config", root.join("memory_exemplars_cifar100.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("total_bytes=6144000"));
    let out = gfr(&["memory", "--config", root.join("memory_exemplars_imagenet100.toml").to_str().unwrap()]);
    assert!(stdout(&out).contains("375.000 MiB"));
    let out = gfr(&["memory", "--config", root.join("memory_feature_gan.toml").to_str().unwrap()]);
    assert!(stdout(&out).contains("generator_parameters=679424 critic_parameters=577025"));
    assert!(stdout(&out).contains("total_bytes=5025796"));
}

/// `n` CIFAR-10 records whose pixels encode record, channel and position.
fn cifar10_records(n: usize, salt: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for r in 0..n {
        out.push(((r + salt) % 10) as u8);
        for c in 0..3 {
            for p in 0..1024 {
                out.push(((r * 7 + c * 50 + p + salt) % 251) as u8);
            }
        }
    }
    out
}

fn cifar10_files() -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = (1..=5)
        .map(|i| (format!("data_batch_{i}.bin"), cifar10_records(3, i)))
        .collect();
    files.push(("test_batch.bin".into(), cifar10_records(2, 9)));
    files
}

#[test]
fn import_cifar10_directory_round_trips_pixels() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("cifar-10-batches-bin");
    fs::create_dir(&src).unwrap();
    for (name, bytes) in cifar10_files() {
        fs::write(src.join(name), bytes).unwrap();
    }
    let out_dir = tmp.path().join("ds");
    let out = gfr(&["import", tmp.path().to_str().unwrap(), out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("imported 15 train and 2 test records over 10 classes"));

    let ds = load_dataset(&out_dir).unwrap();
    assert_eq!((ds.train.len(), ds.test.len(), ds.num_classes), (15, 2, 10));
    let raw = cifar10_records(3, 1);
    for r in 0..3 {
        let rec = &raw[r * 3073..(r + 1) * 3073];
        assert_eq!(ds.train.labels[r], rec[0] as u32);
        let img = ds.train.raw(r);
        for p in [0usize, 1, 500, 1023] {
            for c in 0..3 {
                assert_eq!(img[p * 3 + c], rec[1 + c * 1024 + p]);
            }
        }
    }

    let again = gfr(&["import", tmp.path().to_str().unwrap(), out_dir.to_str().unwrap()]);
    assert_eq!(code(&again), 2);
    let forced = gfr(&["import", tmp.path().to_str().unwrap(), out_dir.to_str().unwrap(), "--force"]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn import_cifar10_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = tmp.path().join("cifar-10-binary.tar.gz");
    let gz = GzEncoder::new(fs::File::create(&archive).unwrap(), Compression::fast());
    let mut builder = tar::Builder::new(gz);
    for (name, bytes) in cifar10_files() {
        let mut header = tar::Header::new_gnu();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_cksum();
        builder
            .append_data(&mut header, format!("cifar-10-batches-bin/{name}"), bytes.as_slice())
            .unwrap();
    }
    builder.into_inner().unwrap().finish().unwrap().flush().unwrap();
    let out_dir = tmp.path().join("ds");
    let out = gfr(&["import", archive.to_str().unwrap(), out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(load_dataset(&out_dir).unwrap().train.len(), 15);
}

#[test]
fn unrecognized_archive_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.tar.gz");
    fs::write(&junk, b"not an archive").unwrap();
    let out = gfr(&["import", junk.to_str().unwrap(), tmp.path().join("ds").to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("junk.tar.gz"));

    let dir = tmp.path().join("partial");
    fs::create_dir(&dir).unwrap();
    fs::write(dir.join("data_batch_1.bin"), cifar10_records(1, 0)).unwrap();
    let out = gfr(&["import", dir.to_str().unwrap(), tmp.path().join("ds2").to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}
