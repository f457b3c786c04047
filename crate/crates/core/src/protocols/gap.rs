//! Matching vs mismatched caption similarity.
//!
//! Each image is scored once with each of its own reference captions and
//! once with a reference borrowed from another image, drawn uniformly with a
//! recorded seed.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{EncoderHandle, GeneratorHandle};
use crate::error::{Error, Result};
use crate::ingest::{EvaluationManifest, ManifestRow};
use crate::metric::{aggregate_scores, Aggregation};
use crate::model::{Caption, CaptionSource, Image};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mean_correct: f64,
    pub mean_incorrect: f64,
    pub gap: f64,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub pairing_seed: u64,
}

/// One own-reference cycle and its mismatched counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapPairing {
    pub sample_id: String,
    pub caption_index: usize,
    pub donor_id: String,
    pub donor_caption_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRun {
    pub report: GapReport,
    pub pairings: Vec<GapPairing>,
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

/// Reference captions of a row; rows without tagged references use all captions.
fn references(row: &ManifestRow) -> Vec<usize> {
    let tagged: Vec<usize> = row
        .captions
        .iter()
        .enumerate()
        .filter(|(_, c)| c.source == CaptionSource::HumanReference)
        .map(|(i, _)| i)
        .collect();
    if tagged.is_empty() {
        (0..row.captions.len()).collect()
    } else {
        tagged
    }
}

/// Deterministic mismatch assignment for every (row, reference) pair.
pub fn gap_pairings(manifest: &EvaluationManifest, pairing_seed: u64) -> Result<Vec<GapPairing>> {
    let rows: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| !r.captions.is_empty()).collect();
    if rows.len() < 2 {
        return Err(Error::Contract(format!(
            "gap experiment needs at least 2 images with references, manifest has {}",
            rows.len()
        )));
    }
    let refs: Vec<Vec<usize>> = rows.iter().map(|r| references(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(pairing_seed);
    let mut out = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for &k in &refs[i] {
            // Uniform over the other rows: draw from n - 1 slots and skip i.
            let mut j = rng.random_range(0..rows.len() - 1);
            if j >= i {
                j += 1;
            }
            let donor_ref = refs[j][rng.random_range(0..refs[j].len())];
            out.push(GapPairing {
                sample_id: row.sample_id.clone(),
                caption_index: k,
                donor_id: rows[j].sample_id.clone(),
                donor_caption_index: donor_ref,
            });
        }
    }
    Ok(out)
}

pub fn likert_gap_experiment(
    pipeline: &Pipeline,
    manifest: &EvaluationManifest,
    generator: &GeneratorHandle,
    encoder: &EncoderHandle,
    pairing_seed: u64,
    seed: u64,
) -> Result<GapRun> {
    let pairings = gap_pairings(manifest, pairing_seed)?;
    let rows: HashMap<&str, &ManifestRow> = manifest.rows.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mut images: HashMap<&str, Image> = HashMap::new();
    for p in &pairings {
        if !images.contains_key(p.sample_id.as_str()) {
            let row = rows[p.sample_id.as_str()];
            images.insert(row.sample_id.as_str(), Image::open(manifest.resolve_image(&row.image))?);
        }
    }
    let caption = |id: &str, k: usize| -> Result<Caption> { rows[id].captions[k].to_caption() };

    let scored: Vec<Result<(f64, f64)>> = pairings
        .par_iter()
        .map(|p| {
            let img = &images[p.sample_id.as_str()];
            let own = caption(&p.sample_id, p.caption_index)?;
            let other = caption(&p.donor_id, p.donor_caption_index)?;
            let c = pipeline.score_caption(&p.sample_id, p.caption_index, img, &own, generator, encoder, seed)?;
            let m = pipeline.score_caption(&p.sample_id, p.caption_index, img, &other, generator, encoder, seed)?;
            Ok((c.score, m.score))
        })
        .collect();
    let mut correct = Vec::with_capacity(scored.len());
    let mut incorrect = Vec::with_capacity(scored.len());
    for s in scored {
        let (c, m) = s?;
        correct.push(c);
        incorrect.push(m);
    }
    let mean_correct = aggregate_scores(&correct, Aggregation::Mean)?;
    let mean_incorrect = aggregate_scores(&incorrect, Aggregation::Mean)?;
    Ok(GapRun {
        report: GapReport {
            mean_correct,
            mean_incorrect,
            gap: mean_correct - mean_incorrect,
            n_correct: correct.len(),
            n_incorrect: incorrect.len(),
            pairing_seed,
        },
        pairings,
        correct,
        incorrect,
    })
}

/// Histogram over [-1, 1] with `bins` equal-width bins, as CSV.
pub fn histogram_csv(correct: &[f64], incorrect: &[f64], bins: usize) -> Result<String> {
    if bins == 0 {
        return Err(Error::Contract("histogram needs at least one bin".into()));
    }
    let count = |xs: &[f64]| {
        let mut h = vec![0usize; bins];
        for &x in xs {
            let t = ((x + 1.0) / 2.0 * bins as f64).floor();
            h[(t.max(0.0) as usize).min(bins - 1)] += 1;
        }
        h
    };
    let (hc, hi) = (count(correct), count(incorrect));
    let mut out = String::from("bin_low,bin_high,correct,incorrect\n");
    let width = 2.0 / bins as f64;
    for b in 0..bins {
        let lo = -1.0 + b as f64 * width;
        let _ = writeln!(out, "{:.4},{:.4},{},{}", lo, lo + width, hc[b], hi[b]);
    }
    Ok(out)
}
