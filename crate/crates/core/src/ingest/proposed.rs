//! MSCOCO captions merged with a Flickr30k slice, five references per image.
//!
//! MSCOCO is read from a captions JSON (`{"images": [...], "annotations": [...]}`);
//! Flickr30k from its token file (`<image>#<n>\t<caption>`) or the
//! `image_name| comment_number| comment` CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::manifest::{CaptionEntry, DatasetKind, EvaluationManifest, ManifestRow};
use super::read_text;
use crate::error::{Error, Result};
use crate::model::CaptionSource;

pub const REFERENCES_PER_IMAGE: usize = 5;
pub const FLICKR30K_SLICE: usize = 30_000;

#[derive(Debug, Clone)]
pub struct ProposedOptions {
    pub coco_captions: PathBuf,
    pub coco_images: PathBuf,
    pub flickr30k_captions: PathBuf,
    pub flickr30k_images: PathBuf,
    /// Recorded in provenance, e.g. "val2014".
    pub coco_split: String,
    pub flickr30k_limit: usize,
    /// Fail on the first image without exactly five captions.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProposedCounts {
    pub coco_images: usize,
    pub flickr30k_images: usize,
    pub excluded_coco: usize,
    pub excluded_flickr30k: usize,
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    caption: String,
}

/// Flickr30k image name to captions in caption-number order.
pub fn read_flickr30k_captions(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = read_text(path)?;
    let mut out: BTreeMap<String, BTreeMap<u32, String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || (i == 0 && line.starts_with("image_name")) {
            continue;
        }
        let bad = || Error::Ingestion(format!("{}:{}: unrecognized caption line", path.display(), i + 1));
        let (image, number, caption) = if let Some((id, caption)) = line.split_once('\t') {
            let (image, n) = id.rsplit_once('#').ok_or_else(bad)?;
            (image, n, caption)
        } else {
            let mut parts = line.splitn(3, '|');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(bad()),
            }
        };
        let number: u32 = number.trim().parse().map_err(|_| bad())?;
        out.entry(image.trim().to_string()).or_default().insert(number, caption.trim().to_string());
    }
    Ok(out.into_iter().map(|(k, v)| (k, v.into_values().collect())).collect())
}

fn row(prefix: &str, id: &str, image: PathBuf, captions: &[String], provenance: String) -> ManifestRow {
    ManifestRow {
        sample_id: format!("{prefix}:{id}"),
        image: image.to_string_lossy().into_owned(),
        captions: captions.iter().map(|c| CaptionEntry::new(c.trim(), CaptionSource::HumanReference)).collect(),
        judgments: Vec::new(),
        provenance,
    }
}

fn exclude(strict: bool, id: &str, n: usize) -> Result<()> {
    if strict {
        return Err(Error::Ingestion(format!("{id} has {n} captions, expected {REFERENCES_PER_IMAGE}")));
    }
    Ok(())
}

pub fn build_proposed_dataset(opts: &ProposedOptions) -> Result<(EvaluationManifest, ProposedCounts)> {
    let coco: CocoFile = serde_json::from_str(&read_text(&opts.coco_captions)?)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", opts.coco_captions.display())))?;
    let mut by_image: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for a in &coco.annotations {
        by_image.entry(a.image_id).or_default().push(a.caption.clone());
    }
    let mut counts = ProposedCounts::default();
    let mut rows = Vec::new();
    let mut images = coco.images.iter().collect::<Vec<_>>();
    images.sort_by_key(|i| i.id);
    for img in images {
        let caps = by_image.get(&img.id).map(Vec::as_slice).unwrap_or_default();
        if caps.len() != REFERENCES_PER_IMAGE {
            exclude(opts.strict, &format!("coco image {}", img.id), caps.len())?;
            counts.excluded_coco += 1;
            continue;
        }
        counts.coco_images += 1;
        let provenance = format!("mscoco:{}", opts.coco_split);
        rows.push(row("coco", &img.id.to_string(), opts.coco_images.join(&img.file_name), caps, provenance));
    }

    for (name, caps) in read_flickr30k_captions(&opts.flickr30k_captions)? {
        if counts.flickr30k_images == opts.flickr30k_limit {
            break;
        }
        if caps.len() != REFERENCES_PER_IMAGE {
            exclude(opts.strict, &format!("flickr30k image {name}"), caps.len())?;
            counts.excluded_flickr30k += 1;
            continue;
        }
        counts.flickr30k_images += 1;
        rows.push(row("flickr30k", &name, opts.flickr30k_images.join(&name), &caps, "flickr30k".into()));
    }
    if counts.flickr30k_images < opts.flickr30k_limit {
        log::warn!(
            "flickr30k supplied {} five-caption images, fewer than the {} requested",
            counts.flickr30k_images,
            opts.flickr30k_limit
        );
    }
    if counts.excluded_coco + counts.excluded_flickr30k > 0 {
        log::warn!(
            "excluded {} coco and {} flickr30k images without exactly {REFERENCES_PER_IMAGE} captions",
            counts.excluded_coco,
            counts.excluded_flickr30k
        );
    }
    Ok((EvaluationManifest::new(DatasetKind::Proposed.id(), rows), counts))
}
