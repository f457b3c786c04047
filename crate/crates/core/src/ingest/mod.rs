//! Dataset adapters producing validated [`EvaluationManifest`]s.
//!
//! Adapters only read the released files; every normalization happens on
//! the way into the manifest.

pub mod flickr8k;
pub mod foil;
pub mod manifest;
pub mod mhaldetect;
pub mod proposed;

use std::path::Path;

pub use flickr8k::{load_flickr8k_cf, load_flickr8k_expert, Flickr8kOptions};
pub use foil::load_foil;
pub use manifest::{
    CaptionEntry, DatasetKind, EvaluationManifest, IssueCode, JudgmentEntry, ManifestHeader, ManifestRow,
    ValidateOptions, ValidationIssue, ValidationReport, SCHEMA_VERSION,
};
pub use mhaldetect::load_mhaldetect;
pub use proposed::{build_proposed_dataset, ProposedOptions};

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}
