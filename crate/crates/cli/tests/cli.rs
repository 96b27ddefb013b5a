use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyperada::mixing::LabeledImage;
use hyperada::UNLABELED;
use hyperada_cli::augment::{DacsProvenance, HfaPreview, PolarMixProvenance};
use hyperada_cli::dataset::{read_image, read_scan, write_image};
use hyperada_cli::select::Selection;
use hyperada_cli::simulate::{AblationTable, Metrics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMALL_RGB: &str = r#"
[world]
test_items = 2

[world.rgb]
height = 12
width = 12
scenes = 2

[training]
pretrain_steps = 20
steps_per_round = 4
batch_size = 16
meta_every = 4
"#;

const SMALL_LIDAR: &str = r#"
modality = "lidar"

[world]
test_items = 1

[world.lidar]
beams = 6
azimuth_steps = 90
scans = 3

[training]
pretrain_steps = 20
steps_per_round = 4
batch_size = 16
meta_every = 4
"#;

fn hyperada(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperada"))
        .current_dir(dir)
        .args(args)
        .env_remove("HYPERADA_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = hyperada(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn selftest_passes_and_reports_timing() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["selftest", "--instances", "200"]);
    assert!(out.contains("[geometry]") && out.contains(" ms"), "{out}");
    assert!(!out.contains("FAIL"), "{out}");
}

#[test]
fn zero_ball_guard_fails_boundary_fuzz() {
    let dir = tempfile::tempdir().unwrap();
    let o = hyperada(dir.path(), &["selftest", "--instances", "200", "--fault-zero-ball-eps"]);
    assert_eq!(code(&o), 1);
    let line = stdout(&o).lines().find(|l| l.contains("ball containment")).unwrap().to_string();
    assert!(line.contains("FAIL"), "{line}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[training]\nlearning_rat = 0.1\n");
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--config", bad.to_str().unwrap()],
        vec!["simulate", "--modality", "rgb", "--strategy", "vcd"],
        vec!["frobnicate"],
        vec!["--threads", "0", "selftest"],
        vec!["select", "--modality", "rgb", "--input", ".", "--fraction", "1.5"],
    ];
    for args in cases {
        let o = hyperada(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).trim().is_empty());
    }
    let o = hyperada(dir.path(), &["simulate", "--config", bad.to_str().unwrap()]);
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = hyperada(dir.path(), &["simulate", "--data", "no/such/dir"]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("no/such/dir"), "{}", stderr(&o));
}

#[test]
fn seed_variable_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("seed = 3\n{SMALL_LIDAR}"));
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hyperada"));
        cmd.current_dir(dir.path()).env_remove("HYPERADA_SEED");
        if let Some(v) = env {
            cmd.env("HYPERADA_SEED", v);
        }
        let out = dir.path().join("gen");
        let _ = std::fs::remove_dir_all(&out);
        let o = cmd
            .args(["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = std::fs::read_to_string(out.join("config.toml")).unwrap();
        let v: toml::Value = toml::from_str(&text).unwrap();
        v["seed"].as_integer().unwrap()
    };
    assert_eq!(run(None, &[]), 3);
    assert_eq!(run(Some("11"), &[]), 11);
    assert_eq!(run(Some("11"), &["--seed", "5"]), 5);
}

#[test]
fn simulate_is_deterministic_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_RGB);
    let c = cfg.to_str().unwrap();
    ok(dir.path(), &["simulate", "--config", c, "--seed", "7", "--out", "a"]);
    ok(dir.path(), &["simulate", "--config", c, "--seed", "7", "--out", "b"]);
    let a = std::fs::read(dir.path().join("a/metrics.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/metrics.json")).unwrap());
    for f in ["config.toml", "config.sha256", "round_logs.json", "losses.json", "learning_curve.svg", "loss_curve.svg", "model.ckpt"] {
        assert!(dir.path().join("a").join(f).is_file(), "{f}");
    }
    let m: Metrics = json(dir.path().join("a/metrics.json"));
    let hash = std::fs::read_to_string(dir.path().join("a/config.sha256")).unwrap();
    assert_eq!(m.config_sha256, hash.trim());
    assert_eq!((m.seed, m.rounds.len()), (7, 5));

    ok(dir.path(), &["simulate", "--config", "a/config.toml", "--out", "c"]);
    assert_eq!(a, std::fs::read(dir.path().join("c/metrics.json")).unwrap());

    let default_dir = ok(dir.path(), &["simulate", "--config", c, "--seed", "7"]);
    assert!(default_dir.contains("rgb-halo-seed7"), "{default_dir}");
}

#[test]
fn ablation_emits_four_rows_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_LIDAR);
    ok(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--ablate", "--out", "abl"]);
    let t: AblationTable = json(dir.path().join("abl/ablation.json"));
    let names: Vec<&str> = t.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["al_only", "partial_a", "partial_b", "full"]);
    assert!(dir.path().join("abl/ablation.svg").is_file());
    for n in &names {
        assert!(dir.path().join("abl").join(n).join("metrics.json").is_file());
    }
    let out = ok(dir.path(), &["report", "abl", "abl/full"]);
    for n in &names {
        assert!(out.contains(n), "{out}");
    }
}

#[test]
fn polarmix_validates_sigma_and_writes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_LIDAR);
    ok(dir.path(), &["generate", "--config", cfg.to_str().unwrap(), "--out", "d"]);
    let (a, b) = ("d/source/0000", "d/target/0000");
    let o = hyperada(dir.path(), &["augment", "polarmix", "--a", a, "--b", b, "--out", "m", "--sigma", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sigma"));

    ok(dir.path(), &["augment", "polarmix", "--a", a, "--b", b, "--out", "m", "--sigma", "2.0", "--theta0", "0.5", "--paste-classes", "1,2"]);
    let prov: PolarMixProvenance = json(dir.path().join("m.provenance.json"));
    let out = read_scan(&dir.path().join("m")).unwrap();
    let (sa, sb) = (read_scan(&dir.path().join(a)).unwrap(), read_scan(&dir.path().join(b)).unwrap());
    assert_eq!(prov.points.len(), out.len());
    for (p, src) in out.points.iter().zip(&prov.points) {
        let from = if src.cloud == 0 { &sa } else { &sb };
        let q = from.points[src.index];
        let r = q[0].hypot(q[1]);
        assert_eq!(p[2], q[2]);
        assert!((p[0].hypot(p[1]) - r).abs() <= 1e-6 * r.max(1.0));
    }
}

fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> LabeledImage {
    let channels = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
    let labels = (0..h * w).map(|_| rng.random_range(0..5)).collect();
    LabeledImage::new(h, w, 3, channels, labels).unwrap()
}

#[test]
fn dacs_full_percentile_copies_the_pseudo_labeled_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_RGB);
    let c = cfg.to_str().unwrap();
    ok(dir.path(), &["simulate", "--config", c, "--out", "run"]);
    ok(dir.path(), &["generate", "--config", c, "--out", "d"]);
    ok(
        dir.path(),
        &["augment", "dacs", "--config", c, "--source", "d/source/0000", "--target", "d/target/0001", "--out", "mix", "--tau", "100", "--checkpoint", "run/model.ckpt"],
    );
    let out = read_image(&dir.path().join("mix")).unwrap();
    let tgt = read_image(&dir.path().join("d/target/0001")).unwrap();
    assert_eq!(out.channels, tgt.channels);
    assert!(out.labels.iter().all(|&l| l != UNLABELED));
    let prov: DacsProvenance = json(dir.path().join("mix.provenance.json"));
    assert!(prov.pixels.iter().all(|p| *p == hyperada_cli::augment::DacsOrigin::Target));
    assert!(dir.path().join("mix.mask.hyt").is_file());
}

#[test]
fn hfa_preview_draws_five_per_class_for_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_RGB);
    let c = cfg.to_str().unwrap();
    ok(dir.path(), &["generate", "--config", c, "--out", "d"]);
    ok(dir.path(), &["augment", "hfa-preview", "--config", c, "--input", "d/source", "--out", "p.json"]);
    let p: HfaPreview = json(dir.path().join("p.json"));
    assert_eq!(p.samples_per_class, 5);
    assert!(!p.classes.is_empty());
    for v in p.classes.values() {
        assert_eq!(v.samples.len(), 5);
    }
}

#[test]
fn lidar_select_takes_one_voxel_per_scan_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_LIDAR);
    ok(dir.path(), &["generate", "--config", cfg.to_str().unwrap(), "--out", "d"]);
    ok(dir.path(), &["select", "--modality", "lidar", "--input", "d/target", "--out", "s.json"]);
    let s: Selection = json(dir.path().join("s.json"));
    assert_eq!(s.rounds.len(), 5 * s.items.len());
    assert!(s.rounds.iter().all(|r| r.ids.len() == 1));
    assert!(s.cumulative.iter().all(|&n| n == 5));
}

#[test]
fn rgb_select_meets_the_pixel_budget_and_random_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("imgs")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..2 {
        write_image(&random_image(&mut rng, 25, 40), &dir.path().join(format!("imgs/{k:04}"))).unwrap();
    }
    ok(dir.path(), &["select", "--modality", "rgb", "--input", "imgs", "--fraction", "0.05", "--out", "h.json"]);
    let s: Selection = json(dir.path().join("h.json"));
    assert_eq!(s.cells, [1000, 1000]);
    assert_eq!(s.cumulative, [50, 50]);

    let args = ["select", "--modality", "rgb", "--strategy", "random", "--seed", "9", "--input", "imgs"];
    let a = ok(dir.path(), &args);
    assert_eq!(a, ok(dir.path(), &args));
    let other = ok(dir.path(), &["select", "--modality", "rgb", "--strategy", "random", "--seed", "10", "--input", "imgs"]);
    assert_ne!(a, other);
}
