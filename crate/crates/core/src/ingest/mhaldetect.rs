//! M-HalDetect: model-written descriptions with sentence-level labels.
//!
//! Reads a JSON array of `{"image": str, "annotations": [{"text": str, "label": str}]}`.
//! The accurate sentences of a description, joined in order, form its
//! ground-truth caption; each inaccurate sentence becomes its own
//! hallucinated caption. Other labels are ignored.

use std::path::Path;

use serde::Deserialize;

use super::manifest::{CaptionEntry, DatasetKind, EvaluationManifest, JudgmentEntry, ManifestRow};
use super::read_text;
use crate::error::{Error, Result};
use crate::model::{CaptionSource, JudgmentScale};

#[derive(Debug, Deserialize)]
struct Item {
    image: String,
    annotations: Vec<Span>,
}

#[derive(Debug, Deserialize)]
struct Span {
    text: String,
    label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HalCounts {
    pub descriptions: usize,
    pub accurate: usize,
    pub inaccurate: usize,
    pub ignored: usize,
    /// Descriptions with no usable sentence.
    pub skipped: usize,
}

/// One row per description. Judgments are `binary_accurate`, one per
/// caption in the same order.
pub fn load_mhaldetect(path: &Path, image_dir: &Path) -> Result<(EvaluationManifest, HalCounts)> {
    let items: Vec<Item> =
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let mut counts = HalCounts::default();
    let mut rows = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let mut accurate = Vec::new();
        let mut captions = Vec::new();
        for span in &item.annotations {
            let text = span.text.trim();
            if text.is_empty() {
                continue;
            }
            match span.label.to_ascii_uppercase().as_str() {
                "ACCURATE" => {
                    counts.accurate += 1;
                    accurate.push(text);
                }
                "INACCURATE" => {
                    counts.inaccurate += 1;
                    captions.push(CaptionEntry::new(text, CaptionSource::Hallucinated));
                }
                _ => counts.ignored += 1,
            }
        }
        if !accurate.is_empty() {
            captions.insert(0, CaptionEntry::new(accurate.join(" "), CaptionSource::HumanReference));
        }
        if captions.is_empty() {
            counts.skipped += 1;
            continue;
        }
        let judgments = captions
            .iter()
            .map(|c| JudgmentEntry {
                value: if c.source == CaptionSource::HumanReference { 1.0 } else { 0.0 },
                scale: JudgmentScale::BinaryAccurate,
            })
            .collect();
        counts.descriptions += 1;
        rows.push(ManifestRow {
            sample_id: format!("{i}:{}", item.image),
            image: image_dir.join(&item.image).to_string_lossy().into_owned(),
            captions,
            judgments,
            provenance: format!("mhaldetect:{i}"),
        });
    }
    Ok((EvaluationManifest::new(DatasetKind::Mhaldetect.id(), rows), counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ValidateOptions;

    #[test]
    fn labels_map_to_sources() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hal.json");
        let body = serde_json::json!([
            {"image": "a.jpg", "annotations": [
                {"text": "A cat sits on a mat.", "label": "ACCURATE"},
                {"text": "A dog watches it.", "label": "INACCURATE"},
                {"text": "It is sunny.", "label": "ACCURATE"},
                {"text": "Maybe indoors.", "label": "ANALYSIS"},
                {"text": "A red ball.", "label": "INACCURATE"}
            ]},
            {"image": "b.jpg", "annotations": [{"text": "Hm.", "label": "UNSURE"}]}
        ]);
        std::fs::write(&p, body.to_string()).unwrap();
        let (m, counts) = load_mhaldetect(&p, Path::new("img")).unwrap();
        assert_eq!(counts, HalCounts { descriptions: 1, accurate: 2, inaccurate: 2, ignored: 2, skipped: 1 });
        let row = &m.rows[0];
        assert_eq!(row.captions[0].text, "A cat sits on a mat. It is sunny.");
        let sources: Vec<_> = row.captions.iter().map(|c| c.source).collect();
        assert_eq!(sources, [CaptionSource::HumanReference, CaptionSource::Hallucinated, CaptionSource::Hallucinated]);
        let values: Vec<_> = row.judgments.iter().map(|j| j.value).collect();
        assert_eq!(values, [1.0, 0.0, 0.0]);
        assert!(m.validate(ValidateOptions { check_images: false }).is_clean());
    }
}
