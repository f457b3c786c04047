#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use i2t2i_core::ingest::{CaptionEntry, EvaluationManifest, JudgmentEntry, ManifestRow};
use i2t2i_core::model::CaptionSource;
use image::{Rgb, RgbImage};
use serde_json::Value;

pub fn sinusoid(i: usize, size: u32) -> RgbImage {
    let fx = 0.15 + 0.07 * (i % 7) as f64;
    let fy = 0.11 + 0.05 * (i % 5) as f64;
    let phase = i as f64 * 0.9;
    RgbImage::from_fn(size, size, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let c = |k: f64| (127.5 + 120.0 * (fx * x * k + fy * y + phase * k).sin()) as u8;
        Rgb([c(1.0), c(1.7), c(2.3)])
    })
}

pub fn row(i: usize, captions: Vec<CaptionEntry>, judgments: Vec<JudgmentEntry>) -> ManifestRow {
    ManifestRow {
        sample_id: format!("s{i:04}"),
        image: format!("img{i:04}.png"),
        captions,
        judgments,
        provenance: "synthetic".into(),
    }
}

pub fn reference(text: String) -> CaptionEntry {
    CaptionEntry::new(text, CaptionSource::HumanReference)
}

/// Writes each row's image and the manifest; returns the manifest path.
pub fn write_manifest(dir: &Path, dataset_id: &str, rows: Vec<ManifestRow>) -> PathBuf {
    for (i, r) in rows.iter().enumerate() {
        let path = dir.join(&r.image);
        if !path.exists() {
            sinusoid(i, 32).save(path).unwrap();
        }
    }
    let path = dir.join(format!("{dataset_id}.jsonl"));
    EvaluationManifest::new(dataset_id, rows).save(&path).unwrap();
    path
}

/// `n` rows with one distinct reference caption each.
pub fn simple_manifest(dir: &Path, n: usize) -> PathBuf {
    let rows = (0..n).map(|i| row(i, vec![reference(format!("pattern number {i}"))], vec![])).collect();
    write_manifest(dir, "proposed", rows)
}

pub struct Output {
    pub code: i32,
    pub json: Value,
    pub stderr: String,
}

/// Runs the binary with a private cache under `dir`.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_i2t2i"))
        .arg("--cache-dir")
        .arg(dir.join("cache"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    Output {
        code: out.status.code().unwrap_or(-1),
        json: serde_json::from_str(&stdout).unwrap_or(Value::Null),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
