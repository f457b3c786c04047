//! Flickr8K-Expert and Flickr8K-CF.
//!
//! Layout under the dataset root:
//!
//! ```text
//! Flickr8k.token.txt          <image>#<n>\t<caption>
//! ExpertAnnotations.txt       <image>\t<caption id>\t<j1>\t<j2>\t<j3>
//! CrowdFlowerAnnotations.txt  <image>\t<caption id>\t<fraction yes>\t<yes>\t<no>
//! Flicker8k_Dataset/<image>
//! ```

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::manifest::{CaptionEntry, DatasetKind, EvaluationManifest, JudgmentEntry, ManifestRow};
use super::read_text;
use crate::error::{Error, Result};
use crate::model::{CaptionSource, JudgmentScale};

pub const EXPERT_PAIRS: usize = 5_664;
pub const TOKEN_FILE: &str = "Flickr8k.token.txt";
pub const EXPERT_FILE: &str = "ExpertAnnotations.txt";
pub const CF_FILE: &str = "CrowdFlowerAnnotations.txt";
pub const IMAGE_DIR: &str = "Flicker8k_Dataset";

/// Approximate published sizes of the crowd set, in thousands.
const CF_PAIRS_K: usize = 48;
const CF_VOTES_K: usize = 145;

#[derive(Debug, Clone)]
pub struct Flickr8kOptions {
    pub root: PathBuf,
    pub image_dir: PathBuf,
    /// Required row count for the expert set; `None` accepts any.
    pub expected_pairs: Option<usize>,
}

impl Flickr8kOptions {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Flickr8kOptions { image_dir: root.join(IMAGE_DIR), root, expected_pairs: Some(EXPERT_PAIRS) }
    }

    fn locator(&self, image: &str) -> String {
        self.image_dir.join(image).to_string_lossy().into_owned()
    }
}

fn fields<'a>(line: &'a str, file: &Path, lineno: usize, want: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split('\t').map(str::trim).collect();
    if f.len() != want {
        return Err(Error::Ingestion(format!(
            "{}:{lineno}: expected {want} tab-separated fields, found {}",
            file.display(),
            f.len()
        )));
    }
    Ok(f)
}

/// Caption id (`<image>#<n>`) to caption text.
pub fn read_token_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = read_text(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, caption) = line
            .split_once('\t')
            .ok_or_else(|| Error::Ingestion(format!("{}:{}: missing tab", path.display(), i + 1)))?;
        out.insert(id.trim().to_string(), caption.trim().to_string());
    }
    Ok(out)
}

fn parse_judgment(raw: &str, file: &Path, lineno: usize) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| Error::Ingestion(format!("{}:{lineno}: bad number {raw:?}", file.display())))
}

fn caption_for<'a>(tokens: &'a HashMap<String, String>, id: &str, file: &Path, lineno: usize) -> Result<&'a str> {
    tokens
        .get(id)
        .map(String::as_str)
        .ok_or_else(|| Error::Ingestion(format!("{}:{lineno}: caption {id} is not in {TOKEN_FILE}", file.display())))
}

/// One row per expert-judged (image, caption) pair with its three likert
/// judgments. Judgment values are checked by manifest validation, not here.
pub fn load_flickr8k_expert(opts: &Flickr8kOptions) -> Result<EvaluationManifest> {
    let tokens = read_token_file(&opts.root.join(TOKEN_FILE))?;
    let path = opts.root.join(EXPERT_FILE);
    let text = read_text(&path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line, &path, i + 1, 5)?;
        let judgments = f[2..]
            .iter()
            .map(|raw| Ok(JudgmentEntry { value: parse_judgment(raw, &path, i + 1)?, scale: JudgmentScale::Likert1To4 }))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ManifestRow {
            sample_id: format!("{}|{}", f[0], f[1]),
            image: opts.locator(f[0]),
            captions: vec![CaptionEntry::new(caption_for(&tokens, f[1], &path, i + 1)?, CaptionSource::HumanReference)],
            judgments,
            provenance: format!("flickr8k_expert:{EXPERT_FILE}:{}", i + 1),
        });
    }
    if let Some(expected) = opts.expected_pairs {
        if rows.len() != expected {
            return Err(Error::Ingestion(format!(
                "{} has {} pairs, expected {expected}",
                path.display(),
                rows.len()
            )));
        }
    }
    Ok(EvaluationManifest::new(DatasetKind::Flickr8kExpert.id(), rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CfCounts {
    pub pairs: usize,
    pub votes: usize,
    pub images: usize,
}

/// One row per crowd-judged pair, carrying its raw votes as `binary_vote`
/// judgments. The share of yes votes is computed by the protocol.
pub fn load_flickr8k_cf(opts: &Flickr8kOptions) -> Result<(EvaluationManifest, CfCounts)> {
    let tokens = read_token_file(&opts.root.join(TOKEN_FILE))?;
    let path = opts.root.join(CF_FILE);
    let text = read_text(&path)?;
    let mut rows = Vec::new();
    let mut images = HashSet::new();
    let mut votes = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let f = fields(line, &path, lineno, 5)?;
        let count = |raw: &str| {
            raw.parse::<usize>()
                .map_err(|_| Error::Ingestion(format!("{}:{lineno}: bad vote count {raw:?}", path.display())))
        };
        let (yes, no) = (count(f[3])?, count(f[4])?);
        let fraction = parse_judgment(f[2], &path, lineno)?;
        if yes + no > 0 && (fraction - yes as f64 / (yes + no) as f64).abs() > 1e-3 {
            log::warn!("{}:{lineno}: stored fraction {fraction} disagrees with {yes} yes / {no} no", path.display());
        }
        let judgments = std::iter::repeat_n(1.0, yes)
            .chain(std::iter::repeat_n(0.0, no))
            .map(|value| JudgmentEntry { value, scale: JudgmentScale::BinaryVote })
            .collect();
        votes += yes + no;
        images.insert(f[0].to_string());
        rows.push(ManifestRow {
            sample_id: format!("{}|{}", f[0], f[1]),
            image: opts.locator(f[0]),
            captions: vec![CaptionEntry::new(caption_for(&tokens, f[1], &path, lineno)?, CaptionSource::HumanReference)],
            judgments,
            provenance: format!("flickr8k_cf:{CF_FILE}:{lineno}"),
        });
    }
    let counts = CfCounts { pairs: rows.len(), votes, images: images.len() };
    let rounded = |n: usize| (n + 500) / 1000;
    if rounded(counts.pairs) != CF_PAIRS_K || rounded(counts.votes) != CF_VOTES_K {
        log::warn!(
            "{}: {} pairs / {} votes differ from the published ~{CF_PAIRS_K}K / ~{CF_VOTES_K}K",
            path.display(),
            counts.pairs,
            counts.votes
        );
    }
    Ok((EvaluationManifest::new(DatasetKind::Flickr8kCf.id(), rows), counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ValidateOptions;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn fixture(expert: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), TOKEN_FILE, "a.jpg#0\tA dog runs .\na.jpg#1\tA dog .\nb.jpg#0\tTwo cats .\n");
        write(dir.path(), EXPERT_FILE, expert);
        dir
    }

    #[test]
    fn expert_rows_and_count_check() {
        let dir = fixture("a.jpg\ta.jpg#0\t4\t4\t3\na.jpg\tb.jpg#0\t1\t1\t2\n");
        let mut opts = Flickr8kOptions::new(dir.path());
        assert!(matches!(load_flickr8k_expert(&opts), Err(Error::Ingestion(m)) if m.contains("5664")));
        opts.expected_pairs = Some(2);
        let m = load_flickr8k_expert(&opts).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[1].captions[0].text, "Two cats .");
        assert_eq!(m.rows[1].judgments.len(), 3);
        assert!(m.validate(ValidateOptions { check_images: false }).is_clean());
    }

    #[test]
    fn expert_out_of_scale_judgment_fails_validation() {
        let dir = fixture("a.jpg\ta.jpg#0\t5\t4\t3\n");
        let mut opts = Flickr8kOptions::new(dir.path());
        opts.expected_pairs = None;
        let m = load_flickr8k_expert(&opts).unwrap();
        assert!(m.validate(ValidateOptions { check_images: false }).into_result().is_err());
    }

    #[test]
    fn expert_unknown_caption_and_truncation() {
        let dir = fixture("a.jpg\tz.jpg#0\t1\t1\t1\n");
        let mut opts = Flickr8kOptions::new(dir.path());
        opts.expected_pairs = None;
        assert!(load_flickr8k_expert(&opts).is_err());
        let dir = fixture("a.jpg\ta.jpg#0\t1\t1\n");
        assert!(load_flickr8k_expert(&Flickr8kOptions::new(dir.path())).is_err());
    }

    #[test]
    fn cf_votes_become_judgments() {
        let dir = fixture("");
        write(dir.path(), CF_FILE, "a.jpg\ta.jpg#1\t0.666667\t2\t1\nb.jpg\ta.jpg#0\t0.0\t0\t3\n");
        let (m, counts) = load_flickr8k_cf(&Flickr8kOptions::new(dir.path())).unwrap();
        assert_eq!(counts, CfCounts { pairs: 2, votes: 6, images: 2 });
        let values: Vec<f64> = m.rows[0].judgments.iter().map(|j| j.value).collect();
        assert_eq!(values, vec![1.0, 1.0, 0.0]);
        assert!(m.validate(ValidateOptions { check_images: false }).is_clean());
    }
}
