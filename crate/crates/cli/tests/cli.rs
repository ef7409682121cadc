use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn transvec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transvec"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = transvec(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// A small dataset plus a smoke-profile checkpoint, built once per test binary.
fn fixture() -> &'static Path {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    ROOT.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        ok(&root, &["synth", "--out", "data", "count=48"]);
        ok(
            &root,
            &["train", "--out", "runs/train", "profile=smoke", "steps=20"],
        );
        root
    })
}

#[test]
fn synth_defaults_write_two_domains_of_512() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "a"]);
    for domain in ["domain_x", "domain_y"] {
        let path = dir.path().join("a").join(domain);
        let pngs = std::fs::read_dir(&path)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "png")
            })
            .count();
        assert_eq!(pngs, 512);
        let img = image::open(path.join("00000.png")).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
        assert!(path.join("factors.json").exists());
    }
}

#[test]
fn synth_is_byte_identical_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--out", "a", "--seed", "5", "count=20"],
    );
    ok(
        dir.path(),
        &["synth", "--out", "b", "--seed", "5", "count=20"],
    );
    ok(
        dir.path(),
        &["synth", "--out", "c", "--seed", "6", "count=20"],
    );
    for domain in ["domain_x", "domain_y"] {
        let a = files(&dir.path().join("a").join(domain));
        assert_eq!(a, files(&dir.path().join("b").join(domain)));
        assert_ne!(a, files(&dir.path().join("c").join(domain)));
    }
}

#[test]
fn empty_dataset_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = transvec(dir.path(), &["synth", "--out", "a", "count=0"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("a").exists());
}

#[test]
fn non_empty_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "a", "count=3"]);
    assert_eq!(
        code(&transvec(dir.path(), &["synth", "--out", "a", "count=3"])),
        2
    );
    ok(dir.path(), &["synth", "--out", "a", "count=2", "--force"]);
    let left = std::fs::read_dir(dir.path().join("a/domain_x"))
        .unwrap()
        .count();
    // two images plus the factor manifest; the third image was cleared
    assert_eq!(left, 3);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = transvec(dir.path(), &["train", "--out", "r", "bogus=1"]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("bogus"));
    // a train key is not a synth key
    assert_eq!(
        code(&transvec(dir.path(), &["synth", "--out", "s", "steps=2"])),
        2
    );
    assert_eq!(
        code(&transvec(
            dir.path(),
            &["train", "--out", "r", "steps=many"]
        )),
        2
    );
    assert_eq!(code(&transvec(dir.path(), &["frobnicate"])), 2);
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = transvec(
        dir.path(),
        &[
            "train",
            "--out",
            "r",
            "profile=smoke",
            "data_x=no/such/folder",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/folder"));
}

#[test]
fn smoke_training_writes_checkpoints_and_metrics() {
    let run = fixture().join("runs/train");
    for name in [
        "latest.trvl",
        "checkpoint_000020.trvl",
        "metrics.jsonl",
        "resolved_config.txt",
    ] {
        assert!(run.join(name).exists(), "{name}");
    }
    let rows = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 20);
}

#[test]
fn resolved_config_alone_reproduces_the_run() {
    let root = fixture();
    let echo = root.join("runs/train/resolved_config.txt");
    let text = std::fs::read_to_string(&echo).unwrap();
    assert!(text.contains("steps = 20") && text.contains("image_size = 16"));
    let dir = tempfile::tempdir().unwrap();
    // the echo names the relative data folders, so rerun from the same root
    let out = dir.path().join("again");
    ok(
        root,
        &[
            "train",
            "--config",
            echo.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(
        std::fs::read(root.join("runs/train/latest.trvl")).unwrap(),
        std::fs::read(out.join("latest.trvl")).unwrap()
    );
    let again = std::fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    let strip_out = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("out ="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_out(&again), strip_out(&text));
}

#[test]
fn resume_continues_a_shorter_run() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("longer");
    ok(
        root,
        &[
            "train",
            "--out",
            out.to_str().unwrap(),
            "profile=smoke",
            "steps=24",
            "resume=runs/train/latest.trvl",
        ],
    );
    let rows = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    let mismatch = transvec(
        root,
        &[
            "train",
            "--out",
            dir.path().join("bad").to_str().unwrap(),
            "profile=smoke",
            "base_filters=8",
            "resume=runs/train/latest.trvl",
        ],
    );
    assert_eq!(code(&mismatch), 2);
}

#[test]
fn generate_writes_pairs_and_a_two_column_grid() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    ok(
        root,
        &[
            "generate",
            "--out",
            out.to_str().unwrap(),
            "input=data/domain_x",
            "count=5",
        ],
    );
    for i in 0..5 {
        assert!(out.join(format!("input_{i:03}.png")).exists());
        assert!(out.join(format!("output_{i:03}.png")).exists());
    }
    assert!(!out.join("output_005.png").exists());
    let grid = image::open(out.join("grid.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (2 * 16, 5 * 16));
}

#[test]
fn generate_manipulation_emits_nine_frames() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    ok(
        root,
        &[
            "generate",
            "--out",
            out.to_str().unwrap(),
            "mode=manipulation",
        ],
    );
    for i in 0..9 {
        assert!(out.join(format!("frame_{i}.png")).exists());
        assert!(out.join(format!("generated_{i}.png")).exists());
    }
    assert!(!out.join("frame_9.png").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manipulation.json")).unwrap()).unwrap();
    assert_eq!(report["expected"].as_array().unwrap().len(), 9);
}

#[test]
fn generate_rejects_a_checkpoint_of_another_size() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = transvec(
        root,
        &[
            "generate",
            "--out",
            dir.path().join("g").to_str().unwrap(),
            "image_size=32",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("16"));
}

fn eval_report(root: &Path, out: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec![
        "eval",
        "--out",
        out.to_str().unwrap(),
        "count=40",
        "fid_dim=16",
        "disc_steps=20",
    ];
    args.extend_from_slice(extra);
    ok(root, &args);
    serde_json::from_slice(&std::fs::read(out.join("eval_report.json")).unwrap()).unwrap()
}

const HEADLINE: [&str; 6] = [
    "ssim_mean",
    "pixel_mse_mean",
    "frechet_distance",
    "discriminator_score",
    "r2_pixel",
    "r2_latent",
];

#[test]
fn eval_reports_all_metrics_per_direction_and_repeats_exactly() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = eval_report(root, &dir.path().join("a"), &[]);
    for key in HEADLINE {
        assert!(report[key].is_f64(), "{key}: {}", report[key]);
    }
    let dirs = report["directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 2);
    for d in dirs {
        for key in HEADLINE {
            assert!(d[key].is_f64(), "{}: {key}", d["direction"]);
        }
    }
    let again = eval_report(root, &dir.path().join("b"), &[]);
    assert_eq!(report, again);
}

#[test]
fn metric_flag_restricts_the_report() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = eval_report(root, &dir.path().join("a"), &["--metric", "ssim,r2_latent"]);
    for key in HEADLINE {
        let expected = key == "ssim_mean" || key == "r2_latent";
        assert_eq!(report[key].is_f64(), expected, "{key}");
    }
    let bad = transvec(
        root,
        &[
            "eval",
            "--out",
            dir.path().join("c").to_str().unwrap(),
            "--metric",
            "accuracy",
        ],
    );
    assert_eq!(code(&bad), 2);
}

#[test]
fn analyze_pca_labels_four_classes() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    ok(
        root,
        &[
            "analyze",
            "--out",
            out.to_str().unwrap(),
            "mode=pca",
            "count=12",
        ],
    );
    let csv = std::fs::read_to_string(out.join("pca.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pc1,pc2,domain,source"));
    let mut classes: Vec<String> = lines
        .map(|l| l.splitn(3, ',').nth(2).unwrap().to_string())
        .collect();
    assert_eq!(classes.len(), 48);
    classes.sort();
    classes.dedup();
    assert_eq!(classes, ["x,generated", "x,real", "y,generated", "y,real"]);
    assert!(out.join("pca.png").exists());
}

#[test]
fn analyze_salience_writes_one_heatmap_per_input() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(
        root,
        &[
            "analyze",
            "--out",
            out.to_str().unwrap(),
            "mode=salience",
            "salience_count=3",
            "tile=4",
        ],
    );
    let heatmaps = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name();
            let name = name.to_string_lossy();
            name.starts_with("salience_") && name.ends_with(".png")
        })
        .count();
    assert_eq!(heatmaps, 3);
    let csv = std::fs::read_to_string(out.join("salience_000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
}

#[test]
fn analyze_distances_emits_three_scatter_sets() {
    let root = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(
        root,
        &[
            "analyze",
            "--out",
            out.to_str().unwrap(),
            "mode=distances",
            "count=10",
        ],
    );
    for name in ["pixel_pixel", "pixel_gen", "latent_latent"] {
        let csv = std::fs::read_to_string(out.join(format!("{name}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 45, "{name}");
        assert!(out.join(format!("{name}.png")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("distances.json")).unwrap()).unwrap();
    assert_eq!(summary["pairs"], 45);
    for key in ["r2_pixel_pixel", "r2_pixel_gen", "r2_latent_latent"] {
        let r2 = summary[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r2), "{key} = {r2}");
    }
}
