use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use uma_core::kv::KvFile;
use uma_core::metrics::{csv, evaluate, text_table, MetricsReport};
use uma_core::mot_io::{
    eval_gt, frame_file_name, gen_synthetic_sequence, load_sequence, parse_det_file, results_text, write_sequence,
    Sequence, SyntheticSpec,
};
use uma_core::network::NetworkParams;
use uma_core::tracker::{overlay, track_sequence, TrackerStats};
use uma_core::training::{epoch_means, loss_csv, train, TrainDataset};
use uma_core::{Error, Result};

use crate::config::RunConfig;

/// Generates the sequence described by `spec_path` into `out`. `seed`
/// replaces the spec's own seed when given.
pub fn cmd_synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Sequence> {
    let mut text = fs::read_to_string(spec_path)?;
    if let Some(s) = seed {
        // later entries win
        text.push_str(&format!("\nseed = {s}\n"));
    }
    let spec = SyntheticSpec::from_kv(&KvFile::parse(&text, &spec_path.display().to_string())?)?;
    let seq = gen_synthetic_sequence(&spec)?;
    write_sequence(&seq, out)?;
    info!("wrote {} frames, {} gt rows, {} det rows to {}", seq.frames.len(), seq.gt.len(), seq.det.len(), out.display());
    Ok(seq)
}

/// A sequence directory, or a directory whose subdirectories are sequences.
pub fn load_sequences(dir: &Path) -> Result<Vec<Sequence>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
    }
    if dir.join("seqinfo.ini").exists() {
        return Ok(vec![load_sequence(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("seqinfo.ini").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("no sequences (seqinfo.ini) under {}", dir.display())));
    }
    dirs.iter().map(load_sequence).collect()
}

pub const MODEL_FILE: &str = "model.uma";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const EPOCH_DIR: &str = "epochs";

/// Trains on every sequence in `data` and writes the final checkpoint, the
/// per-step loss CSV, per-epoch checkpoints and the merged config to `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<NetworkParams> {
    let seqs = load_sequences(data)?;
    let ds = TrainDataset::from_sequences(seqs, cfg.train.min_track_frames);
    info!("{} identities with at least {} frames", ds.num_identities(), cfg.train.min_track_frames);
    let epochs = out.join(EPOCH_DIR);
    fs::create_dir_all(&epochs)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_file_text())?;
    let geom = cfg.tracker.geometry();
    let outcome = train(&ds, &cfg.network, &cfg.loss, &cfg.train, &geom, cfg.seed, Some(&epochs))?;
    outcome.params.save(out.join(MODEL_FILE))?;
    fs::write(out.join(LOSS_FILE), loss_csv(&outcome.log))?;
    for (e, m) in epoch_means(&outcome.log).iter().enumerate() {
        info!("epoch {e}: mean total loss {m:.4}");
    }
    Ok(outcome.params)
}

/// Tracks one sequence directory and writes MOT result rows to `out`;
/// `overlay_dir` receives annotated frames.
pub fn cmd_track(
    cfg: &RunConfig,
    checkpoint: &Path,
    seq_dir: &Path,
    out: &Path,
    overlay_dir: Option<&Path>,
) -> Result<TrackerStats> {
    let params = NetworkParams::load(&cfg.network, checkpoint)?;
    let seq = load_sequence(seq_dir)?;
    let (rows, stats) = track_sequence(&cfg.network, &params, &cfg.tracker, &seq)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, results_text(&rows)?)?;
    if let Some(dir) = overlay_dir {
        fs::create_dir_all(dir)?;
        for k in 1..=seq.frames.len() as u32 {
            let in_frame: Vec<_> = rows.iter().filter(|r| r.frame == k).cloned().collect();
            overlay(seq.frame(k), &in_frame).write_ppm(dir.join(frame_file_name(k, ".ppm")))?;
        }
    }
    info!("{}: {} rows, {stats:?}", seq.meta.name, rows.len());
    Ok(stats)
}

/// Evaluates `result` against `gt`; returns the text table and writes CSV
/// when asked.
pub fn cmd_eval(cfg: &RunConfig, gt: &Path, result: &Path, csv_out: Option<&Path>) -> Result<(MetricsReport, String)> {
    let gt_rows = eval_gt(&parse_det_file(gt)?);
    let hyp = parse_det_file(result)?;
    let name = result.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let report = evaluate(&name, &gt_rows, &hyp, cfg.eval_iou)?;
    let reports = [report.clone()];
    if let Some(p) = csv_out {
        fs::write(p, csv(&reports))?;
    }
    Ok((report, text_table(&reports)))
}
