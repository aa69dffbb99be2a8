use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uma_core::metrics::scenarios;
use uma_core::mot_io::{format_rows, parse_det_file};
use uma_core::network::NetworkConfig;
use uma_core::tensor::load_checkpoint;
use uma_core::training::init_params;

fn uma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uma"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn uma")
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn synth(dir: &Path, name: &str, spec: &str) -> PathBuf {
    let spec_path = dir.join(format!("{name}.spec"));
    fs::write(&spec_path, spec).unwrap();
    let out = dir.join(name);
    let o = uma(&["synth", &s(&spec_path), &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const SMALL: &str = "name = small\nwidth = 200\nheight = 160\nframes = 12\nseed = 4\nidentities = 3\n";

#[test]
fn synth_writes_all_artifacts_deterministically() {
    let t = tempfile::tempdir().unwrap();
    let a = synth(t.path(), "a", SMALL);
    let b = synth(t.path(), "b", SMALL);
    for f in ["seqinfo.ini", "gt/gt.txt", "det/det.txt", "img1/000001.ppm", "img1/000012.ppm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(!a.join("img1/000013.ppm").exists());
}

#[test]
fn synth_seed_flag_changes_motion() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("s.spec");
    fs::write(&spec, SMALL).unwrap();
    let o = uma(&["synth", &s(&spec), &s(&t.path().join("x")), "--seed", "99"]);
    assert!(o.status.success());
    let a = synth(t.path(), "y", SMALL);
    assert_ne!(
        fs::read(a.join("gt/gt.txt")).unwrap(),
        fs::read(t.path().join("x/gt/gt.txt")).unwrap()
    );
}

#[test]
fn synth_gt_counts_visible_frames() {
    // 20 identities over 200 frames, no occlusions: every identity is
    // visible in every frame
    let t = tempfile::tempdir().unwrap();
    let d = synth(
        t.path(),
        "big",
        "name = big\nwidth = 320\nheight = 240\nframes = 200\nseed = 1\nidentities = 20\nframe_noise = 0\n",
    );
    let gt = parse_det_file(d.join("gt/gt.txt")).unwrap();
    assert_eq!(gt.len(), 20 * 200);
}

#[test]
fn invalid_spec_names_the_field() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("bad.spec");
    fs::write(&spec, "width = 200\nheight = wide\n").unwrap();
    let o = uma(&["synth", &s(&spec), &s(&t.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("height") && err.contains(":2"), "{err}");
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), "d", "name = d\nwidth = 320\nheight = 240\nframes = 20\nseed = 2\nidentities = 9\n");
    let out = t.path().join("run");
    let o = uma(&["train", &s(&data), &s(&out), "--set", "train.epochs=0", "--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = load_checkpoint(out.join("model.uma")).unwrap();
    assert_eq!(&saved, init_params(&NetworkConfig::toy(), 11).tensors());
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 1);
    assert!(fs::read_to_string(out.join("config.txt")).unwrap().contains("seed = 11"));
}

#[test]
fn missing_data_dir_is_a_clean_error() {
    let t = tempfile::tempdir().unwrap();
    let o = uma(&["train", &s(&t.path().join("nope")), &s(&t.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let o = uma(&["train", &s(t.path()), &s(&t.path().join("out")), "--set", "tracker.alhpa=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tracker.alhpa"));
}

fn toy_checkpoint(dir: &Path) -> PathBuf {
    let p = dir.join("init.uma");
    init_params(&NetworkConfig::toy(), 0).save(&p).unwrap();
    p
}

#[test]
fn no_detections_give_an_empty_result() {
    let t = tempfile::tempdir().unwrap();
    let seq = synth(t.path(), "empty", "name = e\nwidth = 200\nheight = 160\nframes = 6\nseed = 1\nidentities = 2\ndrop_prob = 1\n");
    assert_eq!(fs::read_to_string(seq.join("det/det.txt")).unwrap(), "");
    let out = t.path().join("res.txt");
    let o = uma(&["track", &s(&toy_checkpoint(t.path())), &s(&seq), &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out).unwrap(), "");
}

#[test]
fn single_noiseless_target_keeps_one_identity() {
    let t = tempfile::tempdir().unwrap();
    let seq = synth(
        t.path(),
        "one",
        "name = one\nwidth = 240\nheight = 180\nframes = 25\nseed = 6\ntarget = 80 90 30 40 1.5 0.5\n",
    );
    let out = t.path().join("res.txt");
    let overlay = t.path().join("frames");
    let o = uma(&[
        "track",
        &s(&toy_checkpoint(t.path())),
        &s(&seq),
        &s(&out),
        "--overlay",
        &s(&overlay),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_det_file(&out).unwrap();
    // born in frame 1, confirmed by the hits in frames 2 and 3
    let frames: Vec<u32> = rows.iter().map(|r| r.frame).collect();
    assert_eq!(frames, (3..=25).collect::<Vec<_>>());
    assert!(rows.iter().all(|r| r.id == rows[0].id));
    assert!(overlay.join("000025.ppm").exists());
}

#[test]
fn incompatible_checkpoint_lists_tensors() {
    let t = tempfile::tempdir().unwrap();
    let seq = synth(t.path(), "s", SMALL);
    let ckpt = toy_checkpoint(t.path());
    let o = uma(&[
        "track",
        &s(&ckpt),
        &s(&seq),
        &s(&t.path().join("r.txt")),
        "--set",
        "network.id_hidden=64",
    ]);
    assert_ne!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("iden.fc1.weight: shape [512, 32], expected [64, 32]"), "{err}");
}

fn eval_rows(gt: &str, hyp: &str) -> String {
    let t = tempfile::tempdir().unwrap();
    let (g, h) = (t.path().join("gt.txt"), t.path().join("hyp.txt"));
    fs::write(&g, gt).unwrap();
    fs::write(&h, hyp).unwrap();
    let csv = t.path().join("r.csv");
    let o = uma(&["eval", &s(&g), &s(&h), "--csv", &s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(csv).unwrap()
}

fn field(csv: &str, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    row[header.iter().position(|h| *h == name).unwrap()].to_string()
}

#[test]
fn eval_scores_known_inputs() {
    let (gt, hyp) = scenarios::mota_point_six();
    let (gt, hyp) = (format_rows(&gt), format_rows(&hyp));
    let c = eval_rows(&gt, &hyp);
    assert_eq!(field(&c, "MOTA").parse::<f64>().unwrap(), 0.6);
    assert_eq!(field(&c, "FP"), "1");
    assert_eq!(field(&c, "IDS"), "1");

    let c = eval_rows(&gt, &gt);
    assert_eq!(field(&c, "MOTA").parse::<f64>().unwrap(), 1.0);

    let c = eval_rows(&gt, "");
    assert_eq!(field(&c, "MOTA").parse::<f64>().unwrap(), 0.0);
    assert_eq!(field(&c, "FN"), "10");
}

#[test]
fn eval_parse_error_names_file_and_line() {
    let t = tempfile::tempdir().unwrap();
    let (g, h) = (t.path().join("gt.txt"), t.path().join("hyp.txt"));
    fs::write(&g, "1,1,0,0,10,10,1,-1,-1,-1\n").unwrap();
    fs::write(&h, "1,1,0,0,10,10,1,-1,-1,-1\n2,x\n").unwrap();
    let o = uma(&["eval", &s(&g), &s(&h)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hyp.txt") && err.contains('2'), "{err}");
}

#[test]
fn verify_suites_and_unknown_name() {
    let o = uma(&["verify", "hungarian"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("6×6: 100/100") && out.contains("suite hungarian: PASS"), "{out}");
    let o = uma(&["verify", "metrics"]);
    assert!(o.status.success());
    let o = uma(&["verify", "everything"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_key_with_published_values() {
    for sub in ["synth", "train", "track", "eval", "verify"] {
        let o = uma(&[sub, "--help"]);
        assert!(o.status.success());
        let h = String::from_utf8_lossy(&o.stdout);
        for k in uma_cli::config::KEYS {
            assert!(h.contains(k.key), "{sub} --help misses {}", k.key);
        }
        assert!(h.contains("published: 0.6") && h.contains("--seed"), "{sub}");
    }
}
