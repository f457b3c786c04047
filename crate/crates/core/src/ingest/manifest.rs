//! JSONL evaluation manifests.
//!
//! The first line is a header `{"dataset_id": ..., "schema_version": 1}`.
//! Every following line is one row:
//!
//! ```json
//! {"sample_id": "...", "image": "...", "captions": [{"text": "...", "source": "..."}],
//!  "judgments": [{"value": 3.0, "scale": "likert_1_4"}], "provenance": "..."}
//! ```
//!
//! Relative image locators resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Caption, CaptionSource, HumanJudgment, JudgmentScale, DEFAULT_TOKEN_LIMIT};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Flickr8kExpert,
    Flickr8kCf,
    Foil,
    Mhaldetect,
    Proposed,
}

impl DatasetKind {
    pub fn id(self) -> &'static str {
        match self {
            DatasetKind::Flickr8kExpert => "flickr8k_expert",
            DatasetKind::Flickr8kCf => "flickr8k_cf",
            DatasetKind::Foil => "foil",
            DatasetKind::Mhaldetect => "mhaldetect",
            DatasetKind::Proposed => "proposed",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [Self::Flickr8kExpert, Self::Flickr8kCf, Self::Foil, Self::Mhaldetect, Self::Proposed]
            .into_iter()
            .find(|k| k.id() == id)
    }

    /// Judgment scales a row of this dataset may carry.
    pub fn allowed_scales(self) -> &'static [JudgmentScale] {
        match self {
            DatasetKind::Flickr8kExpert => &[JudgmentScale::Likert1To4],
            DatasetKind::Flickr8kCf => &[JudgmentScale::BinaryVote, JudgmentScale::FractionYes],
            DatasetKind::Mhaldetect => &[JudgmentScale::BinaryAccurate],
            DatasetKind::Foil | DatasetKind::Proposed => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionEntry {
    pub text: String,
    pub source: CaptionSource,
}

impl CaptionEntry {
    pub fn new(text: impl Into<String>, source: CaptionSource) -> Self {
        CaptionEntry { text: text.into(), source }
    }

    pub fn to_caption(&self) -> Result<Caption> {
        let c = Caption { text: self.text.clone(), token_limit: DEFAULT_TOKEN_LIMIT, source: self.source };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentEntry {
    pub value: f64,
    pub scale: JudgmentScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub image: String,
    pub captions: Vec<CaptionEntry>,
    pub judgments: Vec<JudgmentEntry>,
    pub provenance: String,
}

impl ManifestRow {
    pub fn human_judgments(&self) -> Result<Vec<HumanJudgment>> {
        self.judgments.iter().map(|j| HumanJudgment::new(self.sample_id.clone(), j.value, j.scale)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub dataset_id: String,
    pub schema_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationManifest {
    pub dataset_id: String,
    pub schema_version: u32,
    pub rows: Vec<ManifestRow>,
    /// Directory relative image locators resolve against. Not serialized.
    pub base_dir: Option<PathBuf>,
}

/// Machine-readable reason a row failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueCode {
    DuplicateSampleId,
    EmptySampleId,
    UnresolvableImage,
    NoCaptions,
    EmptyCaption,
    JudgmentOutOfScale,
    ScaleNotAllowed,
    MalformedRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// 1-based line in the JSONL file (header is line 1), when known.
    pub line: Option<usize>,
    pub sample_id: Option<String>,
    pub code: IssueCode,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(id) = &self.sample_id {
            write!(f, "{id}: ")?;
        }
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows_checked: usize,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_clean() {
            return Ok(());
        }
        let shown: Vec<String> = self.issues.iter().take(10).map(|i| i.to_string()).collect();
        Err(Error::Ingestion(format!(
            "{} invalid row(s): {}{}",
            self.issues.len(),
            shown.join("; "),
            if self.issues.len() > 10 { "; ..." } else { "" }
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    pub check_images: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { check_images: true }
    }
}

impl EvaluationManifest {
    pub fn new(dataset_id: impl Into<String>, rows: Vec<ManifestRow>) -> Self {
        EvaluationManifest { dataset_id: dataset_id.into(), schema_version: SCHEMA_VERSION, rows, base_dir: None }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn kind(&self) -> Option<DatasetKind> {
        DatasetKind::from_id(&self.dataset_id)
    }

    pub fn resolve_image(&self, locator: &str) -> PathBuf {
        let p = Path::new(locator);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn row_issues(&self, row: &ManifestRow, line: Option<usize>, opts: ValidateOptions) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut push = |code, message: String| {
            issues.push(ValidationIssue { line, sample_id: Some(row.sample_id.clone()), code, message })
        };
        if row.sample_id.trim().is_empty() {
            push(IssueCode::EmptySampleId, "sample_id is empty".into());
        }
        if row.captions.is_empty() {
            push(IssueCode::NoCaptions, "row has no captions".into());
        }
        for (i, c) in row.captions.iter().enumerate() {
            if c.text.trim().is_empty() {
                push(IssueCode::EmptyCaption, format!("caption {i} is empty"));
            }
        }
        let allowed = self.kind().map(DatasetKind::allowed_scales);
        for j in &row.judgments {
            if let Err(e) = j.scale.check(j.value) {
                push(IssueCode::JudgmentOutOfScale, e.to_string());
            }
            if let Some(allowed) = allowed {
                if !allowed.contains(&j.scale) {
                    push(
                        IssueCode::ScaleNotAllowed,
                        format!("scale {} is not used by dataset {}", j.scale.as_str(), self.dataset_id),
                    );
                }
            }
        }
        if opts.check_images && !self.resolve_image(&row.image).is_file() {
            push(IssueCode::UnresolvableImage, format!("image {:?} does not exist", row.image));
        }
        issues
    }

    /// Checks every row. Row `i` is reported as JSONL line `i + 2`.
    pub fn validate(&self, opts: ValidateOptions) -> ValidationReport {
        let mut report = ValidationReport { rows_checked: self.rows.len(), issues: Vec::new() };
        let mut seen = HashSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            let line = Some(i + 2);
            report.issues.extend(self.row_issues(row, line, opts));
            if !seen.insert(row.sample_id.as_str()) {
                report.issues.push(ValidationIssue {
                    line,
                    sample_id: Some(row.sample_id.clone()),
                    code: IssueCode::DuplicateSampleId,
                    message: "sample_id already used by an earlier row".into(),
                });
            }
        }
        report
    }

    /// Drops rows with issues. The returned report lists every dropped row.
    pub fn retain_valid(&mut self, opts: ValidateOptions) -> ValidationReport {
        let report = self.validate(opts);
        let bad: HashSet<usize> = report.issues.iter().filter_map(|i| i.line).map(|l| l - 2).collect();
        let mut index = 0;
        self.rows.retain(|_| {
            let keep = !bad.contains(&index);
            index += 1;
            keep
        });
        report
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader { dataset_id: self.dataset_id.clone(), schema_version: self.schema_version }
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header())?;
        out.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
        for row in &self.rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses JSONL. Syntax errors and a missing or wrong header fail the whole
    /// read; semantic checks are left to [`validate`](Self::validate).
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: ManifestHeader = loop {
            match lines.next() {
                None => return Err(Error::Ingestion("manifest is empty: missing header line".into())),
                Some((_, Err(e))) => return Err(Error::Ingestion(format!("reading manifest: {e}"))),
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((n, Ok(l))) => {
                    break serde_json::from_str(&l)
                        .map_err(|e| Error::Ingestion(format!("line {}: bad manifest header: {e}", n + 1)))?
                }
            }
        };
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Ingestion(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| Error::Ingestion(format!("reading manifest: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow =
                serde_json::from_str(&line).map_err(|e| Error::Ingestion(format!("line {}: {e}", n + 1)))?;
            rows.push(row);
        }
        Ok(EvaluationManifest { dataset_id: header.dataset_id, schema_version: header.schema_version, rows, base_dir: None })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(BufReader::new(file))?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    /// Reads and validates. Strict mode fails on any issue; lenient mode
    /// drops offending rows and reports them.
    pub fn load(path: &Path, strict: bool, opts: ValidateOptions) -> Result<(Self, ValidationReport)> {
        let mut m = Self::read(path)?;
        if strict {
            let report = m.validate(opts);
            report.clone().into_result()?;
            Ok((m, report))
        } else {
            let report = m.retain_valid(opts);
            for issue in &report.issues {
                log::warn!("{}: dropped row: {issue}", path.display());
            }
            Ok((m, report))
        }
    }

    pub fn human_judgments(&self) -> Result<Vec<HumanJudgment>> {
        let mut out = Vec::new();
        for row in &self.rows {
            out.extend(row.human_judgments()?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str) -> ManifestRow {
        ManifestRow {
            sample_id: id.into(),
            image: format!("{id}.png"),
            captions: vec![CaptionEntry::new("a dog on grass", CaptionSource::HumanReference)],
            judgments: vec![JudgmentEntry { value: 3.0, scale: JudgmentScale::Likert1To4 }],
            provenance: "test".into(),
        }
    }

    #[test]
    fn row_schema_is_exact() {
        let line = serde_json::to_string(&row("a")).unwrap();
        assert_eq!(
            line,
            r#"{"sample_id":"a","image":"a.png","captions":[{"text":"a dog on grass","source":"human_reference"}],"judgments":[{"value":3.0,"scale":"likert_1_4"}],"provenance":"test"}"#
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let m = EvaluationManifest::new("flickr8k_expert", vec![row("a"), row("b")]);
        let text = m.to_jsonl();
        assert!(text.starts_with(r#"{"dataset_id":"flickr8k_expert","schema_version":1}"#));
        let back = EvaluationManifest::parse(text.as_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn validation_reports_every_problem() {
        let mut bad_scale = row("c");
        bad_scale.judgments[0].value = 5.0;
        let mut foil_scale = row("d");
        foil_scale.judgments[0].scale = JudgmentScale::BinaryVote;
        foil_scale.judgments[0].value = 1.0;
        let mut empty = row("e");
        empty.captions[0].text = "  ".into();
        let m = EvaluationManifest::new("flickr8k_expert", vec![row("a"), row("a"), bad_scale, foil_scale, empty]);
        let report = m.validate(ValidateOptions { check_images: false });
        let codes: Vec<IssueCode> = report.issues.iter().map(|i| i.code).collect();
        assert_eq!(
            codes,
            vec![
                IssueCode::DuplicateSampleId,
                IssueCode::JudgmentOutOfScale,
                IssueCode::ScaleNotAllowed,
                IssueCode::EmptyCaption
            ]
        );
        assert_eq!(report.issues[0].line, Some(3));
        assert!(report.into_result().is_err());
    }

    #[test]
    fn lenient_mode_drops_and_reports() {
        let mut bad = row("b");
        bad.captions.clear();
        let mut m = EvaluationManifest::new("generic", vec![row("a"), bad, row("c")]);
        let report = m.retain_valid(ValidateOptions { check_images: false });
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].code, IssueCode::NoCaptions);
        assert_eq!(m.rows.iter().map(|r| r.sample_id.as_str()).collect::<Vec<_>>(), vec!["a", "c"]);
    }

    #[test]
    fn missing_images_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"x").unwrap();
        let m = EvaluationManifest::new("generic", vec![row("a"), row("b")]).with_base_dir(dir.path());
        let report = m.validate(ValidateOptions::default());
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].code, IssueCode::UnresolvableImage);
        assert_eq!(report.issues[0].sample_id.as_deref(), Some("b"));
    }

    #[test]
    fn header_is_mandatory() {
        let line = serde_json::to_string(&row("a")).unwrap();
        assert!(EvaluationManifest::parse(line.as_bytes()).is_err());
        assert!(EvaluationManifest::parse("".as_bytes()).is_err());
        let wrong = "{\"dataset_id\":\"x\",\"schema_version\":2}\n";
        assert!(EvaluationManifest::parse(wrong.as_bytes()).is_err());
    }
}
