#![allow(dead_code)]

use std::path::Path;

use i2t2i_core::ingest::{CaptionEntry, EvaluationManifest, ManifestRow};
use i2t2i_core::model::CaptionSource;
use image::{Rgb, RgbImage};

/// Smooth synthetic image; distinct `i` give visibly different patterns.
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

/// `n` rows, each with one PNG and `captions` reference captions.
pub fn write_manifest(dir: &Path, dataset_id: &str, n: usize, captions: usize) -> EvaluationManifest {
    let rows = (0..n)
        .map(|i| {
            let name = format!("img{i:03}.png");
            sinusoid(i, 32).save(dir.join(&name)).unwrap();
            ManifestRow {
                sample_id: format!("s{i:03}"),
                image: name,
                captions: (0..captions)
                    .map(|k| CaptionEntry::new(format!("scene {i} view {k}"), CaptionSource::HumanReference))
                    .collect(),
                judgments: vec![],
                provenance: "synthetic".into(),
            }
        })
        .collect();
    let m = EvaluationManifest::new(dataset_id, rows);
    m.save(&dir.join("manifest.jsonl")).unwrap();
    EvaluationManifest::read(&dir.join("manifest.jsonl")).unwrap()
}
