use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srres::imaging::io::save_paired_dir;
use srres::imaging::{degrade, load_png, save_png, DegradationSpec, ImageTensor, SamplePair};

fn srres(args: &[&str]) -> Output {
    srres_env(args, None)
}

fn srres_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_srres"));
    cmd.args(args).env_remove("SRRES_SEED").env("RUST_LOG", "warn");
    if let Some(s) = seed {
        cmd.env("SRRES_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn scene(k: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(3, h, w, |(c, y, x)| {
        0.5 + 0.35 * ((x as f64 * 0.23 + k as f64).sin() * (y as f64 * 0.19 + c as f64 * 0.7).cos())
    })
}

fn write_images(dir: &Path, imgs: &[ImageTensor]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, im) in imgs.iter().enumerate() {
        save_png(im, dir.join(format!("{i:04}.png"))).unwrap();
    }
}

fn write_pairs(dir: &Path, n: usize) {
    let pairs: Vec<SamplePair> = (0..n)
        .map(|k| {
            let hr = scene(k, 64, 64);
            let lr = degrade(&hr, &DegradationSpec::new(4, 0.02, k as u64).unwrap()).unwrap();
            SamplePair::new(lr, hr, 4).unwrap()
        })
        .collect();
    save_paired_dir(dir, &pairs).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_SR: [&str; 10] = [
    "--set",
    "total=3",
    "--set",
    "features=4",
    "--set",
    "blocks=1",
    "--set",
    "batch_size=2",
    "--set",
    "patch=8",
];

fn train_tiny(pairs: &Path, out: &Path) -> Output {
    let mut args = vec!["train-sr", "--desk", "--pairs", p(pairs), "--out", p(out)];
    args.extend(TINY_SR);
    srres(&args)
}

#[test]
fn degrade_divides_dims_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_images(&input, &[scene(0, 64, 48), scene(1, 32, 32)]);
    let before = std::fs::read(input.join("0000.png")).unwrap();
    let out_a = dir.path().join("a");
    let o = srres(&[
        "degrade",
        "--in",
        p(&input),
        "--out",
        p(&out_a),
        "--scale",
        "4",
        "--sigma",
        "8",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_png(out_a.join("0000.png")).unwrap().dim(), (3, 16, 12));
    assert_eq!(load_png(out_a.join("0001.png")).unwrap().dim(), (3, 8, 8));
    assert_eq!(std::fs::read(input.join("0000.png")).unwrap(), before);

    let out_b = dir.path().join("b");
    let o = srres_env(
        &["degrade", "--in", p(&input), "--out", p(&out_b), "--sigma", "8"],
        Some("3"),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out_c = dir.path().join("c");
    let o = srres_env(
        &["degrade", "--in", p(&input), "--out", p(&out_c), "--sigma", "8"],
        Some("4"),
    );
    assert_eq!(code(&o), 0);
    let read = |d: &PathBuf| std::fs::read(d.join("0000.png")).unwrap();
    assert_eq!(read(&out_a), read(&out_b));
    assert_ne!(read(&out_a), read(&out_c));
}

#[test]
fn usage_errors_exit_one() {
    let o = srres(&["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&srres(&["degrade", "--bogus"])), 1);
    assert_eq!(code(&srres(&[])), 1);
    assert_eq!(code(&srres(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_two_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = srres(&["degrade", "--in", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
    let o = srres(&["infer", "--ckpt", p(&missing), "--in", "x.png", "--out", "y.png"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_config_values_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    write_pairs(&dir.path().join("pairs"), 2);
    let out = dir.path().join("m.ckpt");
    let pairs = dir.path().join("pairs");
    let args = ["train-sr", "--desk", "--pairs", p(&pairs), "--out", p(&out)];
    let o = srres(&[&args[..], &["--set", "batch_size=abc"]].concat());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("batch_size"), "{}", stderr(&o));
    let o = srres(&[&args[..], &["--set", "no_such_key=1"]].concat());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn training_echo_reproduces_checkpoint_and_infer_scales() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs");
    write_pairs(&pairs, 3);
    let first = dir.path().join("first.ckpt");
    let o = train_tiny(&pairs, &first);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("base_lr="));
    let echo = dir.path().join("first.ckpt.config");
    let second = dir.path().join("second.ckpt");
    let o = srres(&[
        "train-sr",
        "--pairs",
        p(&pairs),
        "--config",
        p(&echo),
        "--out",
        p(&second),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let lr = dir.path().join("lr.png");
    save_png(&scene(7, 32, 32), &lr).unwrap();
    let sr = dir.path().join("sr.png");
    let o = srres(&[
        "infer",
        "--ckpt",
        p(&first),
        "--in",
        p(&lr),
        "--out",
        p(&sr),
        "--scale",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_png(&sr).unwrap().dim(), (3, 128, 128));
    let o = srres(&[
        "infer",
        "--ckpt",
        p(&first),
        "--in",
        p(&lr),
        "--out",
        p(&sr),
        "--ensemble",
        "--sigma",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = srres(&[
        "infer",
        "--ckpt",
        p(&first),
        "--in",
        p(&lr),
        "--out",
        p(&sr),
        "--scale",
        "2",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluate_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs");
    write_pairs(&pairs, 2);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(code(&train_tiny(&pairs, &ckpt)), 0);
    let csv = dir.path().join("report.csv");
    let json = dir.path().join("report.json");
    let o = srres(&[
        "evaluate",
        "--ckpt",
        p(&ckpt),
        "--pairs",
        p(&pairs),
        "--out",
        p(&csv),
        "--json",
        p(&json),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("id,psnr,ssim,lpips"));
    assert!(lines[3].starts_with("mean,"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(v["mean_psnr"].as_f64().unwrap() > 20.0);
}

#[test]
fn solve_writes_image_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let lr = dir.path().join("lr.png");
    save_png(&scene(2, 8, 8), &lr).unwrap();
    let out = dir.path().join("x.png");
    let trace = dir.path().join("trace.csv");
    let o = srres(&[
        "solve",
        "--in",
        p(&lr),
        "--out",
        p(&out),
        "--scale",
        "2",
        "--lambda",
        "0.5",
        "--trace",
        p(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_png(&out).unwrap().dim(), (3, 16, 16));
    let energies: Vec<f64> = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(energies.len() > 1);
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
}

#[test]
fn domain_stage_then_generate_lr() {
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("source");
    let target = dir.path().join("target");
    write_images(&source, &[scene(0, 24, 24), scene(1, 24, 24)]);
    write_images(&target, &[scene(2, 48, 48), scene(3, 56, 56), scene(4, 48, 48)]);
    let ckpt = dir.path().join("gd.ckpt");
    let trace = dir.path().join("gd.csv");
    let mut args = vec![
        "train-domain",
        "--source",
        p(&source),
        "--target",
        p(&target),
        "--out",
        p(&ckpt),
        "--trace",
        p(&trace),
    ];
    for s in [
        "patch=12",
        "batch_size=2",
        "total=1",
        "gd_blocks=1",
        "gd_features=4",
        "dx_widths=4",
    ] {
        args.extend(["--set", s]);
    }
    let o = srres(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 1 + 2);

    let hr = dir.path().join("hr");
    write_images(&hr, &[scene(5, 32, 32), scene(6, 32, 48)]);
    let out = dir.path().join("generated");
    let o = srres(&[
        "generate-lr",
        "--ckpt",
        p(&ckpt),
        "--hr",
        p(&hr),
        "--out",
        p(&out),
        "--scale",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_png(out.join("lr/0000.png")).unwrap().dim(), (3, 8, 8));
    assert_eq!(load_png(out.join("lr/0001.png")).unwrap().dim(), (3, 8, 12));
    assert_eq!(load_png(out.join("hr/0001.png")).unwrap().dim(), (3, 32, 48));

    let o = srres(&[
        "train-sr",
        "--pairs",
        p(&out),
        "--resume",
        p(&ckpt),
        "--out",
        p(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(code(&o), 2);
}
