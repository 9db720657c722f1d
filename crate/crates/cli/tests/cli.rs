use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdlnet::eval::{eval_noise, load_image, save_image, REPORT_HEADER};
use cdlnet::synth::{synthetic_corpus, SynthConfig};
use cdlnet::Image;

fn cdlnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdlnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_images(dir: &Path, n: usize, side: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let images: Vec<Image<f64>> = synthetic_corpus(n, &SynthConfig::new(side, side), seed);
    for (i, x) in images.iter().enumerate() {
        save_image(dir.join(format!("im{i:02}.pgm")), x).unwrap();
    }
}

/// Trains a tiny model and returns the directory holding its checkpoints.
fn trained(root: &Path, adaptive: bool) -> PathBuf {
    write_images(&root.join("train"), 6, 40, 10);
    write_images(&root.join("val"), 2, 32, 20);
    let config = root.join("run.cfg");
    std::fs::write(
        &config,
        format!(
            "# tiny run\ndata.train = train\ndata.val = val\nout.dir = out\n\
             model.k = 2\nmodel.m = 4\nmodel.filter_size = 3\nmodel.adaptive = {adaptive}\n\
             train.sigma_range_255 = 15, 35\ntrain.batch_size = 3\ntrain.crop_size = 32\ntrain.max_epochs = 5\n"
        ),
    )
    .unwrap();
    let out = cdlnet(&["train", "--config", config.to_str().unwrap(), "--set", "train.seed=3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("epoch     5"));
    root.join("out")
}

#[test]
fn train_resume_denoise_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), false);
    for f in ["best.ckpt", "last.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let last = out.join("last.ckpt");
    let res = cdlnet(&[
        "train", "--config", dir.path().join("run.cfg").to_str().unwrap(),
        "--resume", last.to_str().unwrap(), "--epochs", "7", "--out", dir.path().join("more").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout(&res).contains("resuming") && stdout(&res).contains("epoch     7"));

    let clean = load_image(dir.path().join("val/im00.pgm")).unwrap();
    let noisy = dir.path().join("noisy.pgm");
    save_image(&noisy, &eval_noise(&clean, "x", 25.0, 0)).unwrap();
    let den = dir.path().join("den.pgm");
    let run = cdlnet(&["denoise", "--ckpt", last.to_str().unwrap(), "--in", noisy.to_str().unwrap(), "--out", den.to_str().unwrap()]);
    assert_eq!(code(&run), 0);
    assert!(stdout(&run).contains("sigma none") && stdout(&run).contains(" ms"));
    let first = std::fs::read(&den).unwrap();
    assert_eq!(load_image(&den).unwrap().dims(), clean.dims());

    let given = cdlnet(&["denoise", "--ckpt", last.to_str().unwrap(), "--in", noisy.to_str().unwrap(), "--out", den.to_str().unwrap(), "--sigma", "25"]);
    assert_eq!(code(&given), 0);
    // Non-adaptive thresholds ignore σ, so the output does not change.
    assert_eq!(std::fs::read(&den).unwrap(), first);

    let grid = dir.path().join("filters.pgm");
    assert_eq!(code(&cdlnet(&["dump-filters", "--ckpt", last.to_str().unwrap(), "--out", grid.to_str().unwrap()])), 0);
    assert_eq!(load_image(&grid).unwrap().dims(), (9, 9));
}

#[test]
fn adaptive_models_need_a_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), true).join("best.ckpt");
    let input = dir.path().join("val/im01.pgm");
    let den = dir.path().join("den.pgm");
    let args = |sigma: &'static str| {
        cdlnet(&["denoise", "--ckpt", ckpt.to_str().unwrap(), "--in", input.to_str().unwrap(), "--out", den.to_str().unwrap(), "--sigma", sigma])
    };
    let none = args("none");
    assert_eq!(code(&none), 1);
    assert!(String::from_utf8_lossy(&none.stderr).contains("contract"));
    assert_eq!(code(&args("auto-mad")), 0);
    assert!(stdout(&args("auto-pca")).contains("(pca)") || stdout(&args("auto-pca")).contains("(mad)"));
    assert_eq!(code(&args("-3")), 1);
}

#[test]
fn eval_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), true).join("best.ckpt");
    let data = dir.path().join("val");
    let report = |name: &str, extra: &[&str]| {
        let path = dir.path().join(name);
        let mut args = vec![
            "eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(),
            "--sigmas", "15,50", "--seed", "4", "--report", path.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = cdlnet(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("output (dB)"));
        std::fs::read_to_string(path).unwrap()
    };
    let a = report("a.csv", &[]);
    let b = report("b.csv", &[]);
    assert_eq!(a, b);
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    assert_eq!(lines.count(), 4);
    let timed = report("c.csv", &["--timing", "--estimator", "pca"]);
    assert!(timed.lines().next().unwrap().ends_with(",millis"));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = cdlnet(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn estimate_reports_the_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.pgm");
    let flat = Image::filled(200, 200, 0.5);
    save_image(&path, &eval_noise(&flat, "n", 20.0, 1)).unwrap();
    for method in ["mad", "pca"] {
        let out = cdlnet(&["estimate", "--in", path.to_str().unwrap(), "--method", method]);
        assert_eq!(code(&out), 0);
        let sigma: f64 = stdout(&out).split_whitespace().next().unwrap().parse().unwrap();
        // 8-bit quantisation adds about 1/12 of a level of variance.
        assert!((sigma - 20.0).abs() < 1.5, "{method}: {sigma}");
    }
    assert_eq!(code(&cdlnet(&["estimate", "--in", path.to_str().unwrap(), "--method", "gt"])), 1);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&cdlnet(&[])), 1);
    assert_eq!(code(&cdlnet(&["denoise", "--bogus"])), 1);
    assert_eq!(code(&cdlnet(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pgm");
    assert_eq!(code(&cdlnet(&["estimate", "--in", missing.to_str().unwrap()])), 2);

    let deep = dir.path().join("deep.pgm");
    std::fs::write(&deep, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
    let out = cdlnet(&["estimate", "--in", deep.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("16-bit"));

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let out = cdlnet(&["dump-filters", "--ckpt", bad.to_str().unwrap(), "--out", "x.pgm"]);
    assert_eq!(code(&out), 2);

    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "model.k = 2\n").unwrap();
    assert_eq!(code(&cdlnet(&["train", "--config", cfg.to_str().unwrap()])), 1);
    std::fs::write(&cfg, "data.train = .\nmodel.k = lots\n").unwrap();
    assert_eq!(code(&cdlnet(&["train", "--config", cfg.to_str().unwrap()])), 2);
}
