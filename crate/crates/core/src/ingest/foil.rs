//! FOIL: COCO captions paired with a copy that has one noun phrase swapped.
//!
//! Reads the released annotation JSON:
//! `{"images": [{"id", "file_name"}], "annotations": [{"image_id", "id", "caption", "foil", ...}]}`.
//! A true caption and its foil share `image_id` and `id`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::manifest::{CaptionEntry, DatasetKind, EvaluationManifest, ManifestRow};
use super::read_text;
use crate::error::{Error, Result};
use crate::model::CaptionSource;

#[derive(Debug, Deserialize)]
struct FoilFile {
    images: Vec<FoilImage>,
    annotations: Vec<FoilAnnotation>,
}

#[derive(Debug, Deserialize)]
struct FoilImage {
    id: u64,
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct FoilAnnotation {
    image_id: u64,
    id: u64,
    caption: String,
    foil: bool,
    #[serde(default)]
    target_word: Option<String>,
    #[serde(default)]
    foil_word: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FoilCounts {
    pub pairs: usize,
    /// Groups that did not form exactly one (true, foil) pair.
    pub unpaired: usize,
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// One row per (true, foil) pair: caption 0 is the true caption, caption 1
/// the foil. A pair whose captions do not differ in any token is an error.
pub fn load_foil(annotations: &Path, image_dir: &Path) -> Result<(EvaluationManifest, FoilCounts)> {
    let file: FoilFile = serde_json::from_str(&read_text(annotations)?)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", annotations.display())))?;
    let names: HashMap<u64, &str> = file.images.iter().map(|i| (i.id, i.file_name.as_str())).collect();

    let mut groups: BTreeMap<(u64, u64), Vec<&FoilAnnotation>> = BTreeMap::new();
    for a in &file.annotations {
        groups.entry((a.image_id, a.id)).or_default().push(a);
    }
    let mut counts = FoilCounts::default();
    let mut rows = Vec::new();
    for ((image_id, ann_id), group) in groups {
        let truth: Vec<_> = group.iter().filter(|a| !a.foil).collect();
        let foils: Vec<_> = group.iter().filter(|a| a.foil).collect();
        let (t, f) = match (truth.as_slice(), foils.as_slice()) {
            ([t], [f]) => (t, f),
            _ => {
                counts.unpaired += 1;
                continue;
            }
        };
        if tokens(&t.caption) == tokens(&f.caption) {
            return Err(Error::Validation(format!(
                "foil pair {image_id}/{ann_id} has identical captions: {:?}",
                t.caption
            )));
        }
        let name = names
            .get(&image_id)
            .ok_or_else(|| Error::Ingestion(format!("annotation {ann_id} names unknown image {image_id}")))?;
        let swap = match (&f.target_word, &f.foil_word) {
            (Some(a), Some(b)) => format!(":{a}->{b}"),
            _ => String::new(),
        };
        rows.push(ManifestRow {
            sample_id: format!("{image_id}:{ann_id}"),
            image: image_dir.join(name).to_string_lossy().into_owned(),
            captions: vec![
                CaptionEntry::new(t.caption.trim(), CaptionSource::HumanReference),
                CaptionEntry::new(f.caption.trim(), CaptionSource::Foil),
            ],
            judgments: Vec::new(),
            provenance: format!("foil{swap}"),
        });
    }
    counts.pairs = rows.len();
    if counts.unpaired > 0 {
        log::warn!("{}: {} annotation groups without a single true/foil pair", annotations.display(), counts.unpaired);
    }
    Ok((EvaluationManifest::new(DatasetKind::Foil.id(), rows), counts))
}
