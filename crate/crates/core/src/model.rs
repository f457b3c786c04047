//! Domain types shared by the whole toolkit.
//!
//! Everything here is an immutable value object. Images are canonicalized to
//! 8-bit RGB before hashing so that two encodings of the same pixels share a
//! [`ContentHash`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default caption length budget, in backend tokens.
pub const DEFAULT_TOKEN_LIMIT: u32 = 100;

/// SHA-256 digest of a canonical pixel buffer (or any other hashed identity).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    /// Hash of decoded RGB pixels. Dimensions are part of the identity.
    pub fn of_pixels(pixels: &RgbImage) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"rgb8\0");
        hasher.update(pixels.width().to_le_bytes());
        hasher.update(pixels.height().to_le_bytes());
        hasher.update(pixels.as_raw());
        ContentHash(hasher.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Validation(format!("bad hex digest {s:?}: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Validation(format!("digest {s:?} is not 32 bytes")))?;
        Ok(ContentHash(arr))
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Locator plus identity of an image. Does not own pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub content_hash: ContentHash,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "image {} has zero extent {}x{}",
                self.uri, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A decoded image: canonical RGB pixels plus its reference.
#[derive(Debug, Clone)]
pub struct Image {
    reference: ImageRef,
    pixels: RgbImage,
}

impl Image {
    pub fn from_rgb(pixels: RgbImage, uri: impl Into<String>) -> Result<Self> {
        let reference = ImageRef {
            content_hash: ContentHash::of_pixels(&pixels),
            uri: uri.into(),
            width: pixels.width(),
            height: pixels.height(),
        };
        reference.validate()?;
        Ok(Image { reference, pixels })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path.to_string_lossy())
    }

    /// Decodes any supported container into canonical 8-bit RGB. No resizing.
    pub fn decode(bytes: &[u8], uri: impl Into<String>) -> Result<Self> {
        let decoded = image::load_from_memory(bytes)?;
        Self::from_rgb(decoded.to_rgb8(), uri)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.pixels.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn reference(&self) -> &ImageRef {
        &self.reference
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn content_hash(&self) -> ContentHash {
        self.reference.content_hash
    }

    pub fn with_uri(mut self, uri: impl Into<String>) -> Self {
        self.reference.uri = uri.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    ModelGenerated,
    HumanReference,
    Foil,
    Hallucinated,
}

impl CaptionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptionSource::ModelGenerated => "model_generated",
            CaptionSource::HumanReference => "human_reference",
            CaptionSource::Foil => "foil",
            CaptionSource::Hallucinated => "hallucinated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "model_generated" => Ok(CaptionSource::ModelGenerated),
            "human_reference" => Ok(CaptionSource::HumanReference),
            "foil" => Ok(CaptionSource::Foil),
            "hallucinated" => Ok(CaptionSource::Hallucinated),
            other => Err(Error::Validation(format!("unknown caption source {other:?}"))),
        }
    }
}

fn default_token_limit() -> u32 {
    DEFAULT_TOKEN_LIMIT
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    #[serde(default = "default_token_limit")]
    pub token_limit: u32,
    pub source: CaptionSource,
}

impl Caption {
    pub fn new(text: impl Into<String>, source: CaptionSource) -> Result<Self> {
        let caption = Caption { text: text.into(), token_limit: DEFAULT_TOKEN_LIMIT, source };
        caption.validate()?;
        Ok(caption)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Validation("caption text is empty".into()));
        }
        if self.token_limit == 0 {
            return Err(Error::Validation("caption token_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Feature vector emitted by an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dim: usize,
    pub encoder_id: String,
}

impl EmbeddingVector {
    /// Builds a vector, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>, encoder_id: impl Into<String>) -> Result<Self> {
        let v = EmbeddingVector { dim: values.len(), values, encoder_id: encoder_id.into() };
        v.validate()?;
        Ok(v)
    }

    /// Builds a vector as an encoder would emit it: additionally non-zero.
    pub fn from_encoder(values: Vec<f64>, encoder_id: impl Into<String>) -> Result<Self> {
        let v = Self::new(values, encoder_id).map_err(|e| Error::BackendFault(e.to_string()))?;
        if v.is_zero() {
            return Err(Error::BackendFault("encoder emitted the all-zero vector".into()));
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.values.len() != self.dim {
            return Err(Error::Validation(format!(
                "embedding has {} values but dim {}",
                self.values.len(),
                self.dim
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("embedding value {i} is not finite")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Captioner,
    Generator,
    Encoder,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Captioner => "captioner",
            BackendKind::Generator => "generator",
            BackendKind::Encoder => "encoder",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalar descriptor parameter. Integers and floats stay distinct so that
/// `steps = 28` and `steps = 28.0` are different identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(i) => Some(i as f64),
            ParamValue::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ParamValue::Bool(b) => Some(b),
            _ => None,
        }
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}
impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}
impl From<i32> for ParamValue {
    fn from(v: i32) -> Self {
        ParamValue::Int(v as i64)
    }
}
impl From<u32> for ParamValue {
    fn from(v: u32) -> Self {
        ParamValue::Int(v as i64)
    }
}
impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}
impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}
impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Str(v)
    }
}

/// Identity of a captioner, generator or encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind, name: impl Into<String>, version: impl Into<String>) -> Self {
        BackendDescriptor { kind, name: name.into(), version: version.into(), params: BTreeMap::new() }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.params.get(key)
    }

    pub fn param_f64(&self, key: &str, default: f64) -> f64 {
        self.param(key).and_then(ParamValue::as_f64).unwrap_or(default)
    }

    pub fn param_i64(&self, key: &str, default: i64) -> i64 {
        self.param(key).and_then(ParamValue::as_i64).unwrap_or(default)
    }

    pub fn param_str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.param(key).and_then(ParamValue::as_str).unwrap_or(default)
    }

    pub fn param_bool(&self, key: &str, default: bool) -> bool {
        self.param(key).and_then(ParamValue::as_bool).unwrap_or(default)
    }

    /// False only when the descriptor explicitly declares `deterministic = false`.
    pub fn is_deterministic(&self) -> bool {
        self.param_bool("deterministic", true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Configuration(format!("{} descriptor has an empty name", self.kind)));
        }
        if self.version.trim().is_empty() {
            return Err(Error::Configuration(format!("descriptor {} has an empty version", self.name)));
        }
        for (key, value) in &self.params {
            if let ParamValue::Float(f) = value {
                if !f.is_finite() {
                    return Err(Error::Configuration(format!(
                        "descriptor {} param {key} is not a finite number",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical serialization: compact JSON, object keys sorted, floats in
    /// shortest round-trip form. Equal descriptors give identical strings.
    pub fn canonical_string(&self) -> Result<String> {
        self.validate()?;
        // serde_json::Value objects are BTreeMap-backed, so keys come out sorted.
        let value = serde_json::to_value(self).map_err(|e| Error::Configuration(e.to_string()))?;
        serde_json::to_string(&value).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn from_canonical(s: &str) -> Result<Self> {
        let d: BackendDescriptor =
            serde_json::from_str(s).map_err(|e| Error::Configuration(format!("bad descriptor string: {e}")))?;
        d.validate()?;
        Ok(d)
    }
}

/// Full trace of one cycle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    /// Position of the caption within its manifest row.
    #[serde(default)]
    pub caption_index: usize,
    pub caption: Caption,
    pub original: ImageRef,
    pub generated: ImageRef,
    pub score: f64,
    pub generator_id: String,
    pub encoder_id: String,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        if self.sample_id.is_empty() {
            return Err(Error::Validation("score record has an empty sample_id".into()));
        }
        if !self.score.is_finite() || !(-1.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "score {} of {} lies outside [-1, 1]",
                self.score, self.sample_id
            )));
        }
        self.caption.validate()?;
        self.original.validate()?;
        self.generated.validate()?;
        BackendDescriptor::from_canonical(&self.generator_id)?;
        BackendDescriptor::from_canonical(&self.encoder_id)?;
        Ok(())
    }

    /// JSON with `created_at` removed, for reproducibility comparisons.
    pub fn without_timestamp(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("score records always serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("created_at");
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JudgmentScale {
    /// Expert ordinal rating in {1, 2, 3, 4}.
    #[serde(rename = "likert_1_4")]
    Likert1To4,
    /// Share of "yes" votes, aggregated from at least three binary votes.
    #[serde(rename = "fraction_yes")]
    FractionYes,
    /// Accurate (1) or inaccurate (0) sentence label.
    #[serde(rename = "binary_accurate")]
    BinaryAccurate,
    /// One raw crowd vote, yes (1) or no (0).
    #[serde(rename = "binary_vote")]
    BinaryVote,
}

impl JudgmentScale {
    pub fn as_str(self) -> &'static str {
        match self {
            JudgmentScale::Likert1To4 => "likert_1_4",
            JudgmentScale::FractionYes => "fraction_yes",
            JudgmentScale::BinaryAccurate => "binary_accurate",
            JudgmentScale::BinaryVote => "binary_vote",
        }
    }

    pub fn check(self, value: f64) -> Result<()> {
        let ok = match self {
            JudgmentScale::Likert1To4 => [1.0, 2.0, 3.0, 4.0].contains(&value),
            JudgmentScale::FractionYes => (0.0..=1.0).contains(&value),
            JudgmentScale::BinaryAccurate | JudgmentScale::BinaryVote => value == 0.0 || value == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("judgment value {value} is outside the {} scale", self.as_str())))
        }
    }
}

/// Minimum number of binary votes behind a `fraction_yes` judgment.
pub const MIN_FRACTION_VOTES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub sample_id: String,
    pub value: f64,
    pub scale: JudgmentScale,
}

impl HumanJudgment {
    pub fn new(sample_id: impl Into<String>, value: f64, scale: JudgmentScale) -> Result<Self> {
        scale.check(value)?;
        Ok(HumanJudgment { sample_id: sample_id.into(), value, scale })
    }

    /// Aggregates raw yes/no votes into a `fraction_yes` judgment.
    pub fn fraction_yes(sample_id: impl Into<String>, votes: &[bool]) -> Result<Self> {
        if votes.len() < MIN_FRACTION_VOTES {
            return Err(Error::Validation(format!(
                "fraction_yes needs at least {MIN_FRACTION_VOTES} votes, got {}",
                votes.len()
            )));
        }
        let yes = votes.iter().filter(|&&v| v).count();
        Self::new(sample_id, yes as f64 / votes.len() as f64, JudgmentScale::FractionYes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn sample_pixels() -> RgbImage {
        RgbImage::from_fn(7, 5, |x, y| Rgb([(x * 30) as u8, (y * 40) as u8, ((x + y) * 11) as u8]))
    }

    #[test]
    fn content_hash_ignores_container_format() {
        let img = Image::from_rgb(sample_pixels(), "mem").unwrap();
        let png = img.encode_png().unwrap();
        let mut bmp = std::io::Cursor::new(Vec::new());
        img.pixels().write_to(&mut bmp, image::ImageFormat::Bmp).unwrap();
        let bmp = bmp.into_inner();
        assert_ne!(png, bmp);
        let a = Image::decode(&png, "a.png").unwrap();
        let b = Image::decode(&bmp, "b.bmp").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), img.content_hash());
    }

    #[test]
    fn content_hash_depends_on_shape() {
        let flat = RgbImage::from_raw(4, 1, vec![9; 12]).unwrap();
        let tall = RgbImage::from_raw(1, 4, vec![9; 12]).unwrap();
        assert_ne!(ContentHash::of_pixels(&flat), ContentHash::of_pixels(&tall));
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = ContentHash::of_bytes(b"abc");
        assert_eq!(h.to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(ContentHash::from_hex(&h.to_hex()).unwrap(), h);
        assert!(ContentHash::from_hex("abcd").is_err());
    }

    #[test]
    fn caption_rejects_blank_text() {
        assert!(Caption::new("   \n", CaptionSource::HumanReference).is_err());
        let c = Caption::new("a dog", CaptionSource::Foil).unwrap();
        assert_eq!(c.token_limit, DEFAULT_TOKEN_LIMIT);
    }

    #[test]
    fn embedding_invariants() {
        assert!(EmbeddingVector::new(vec![], "e").is_err());
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN], "e").is_err());
        assert!(EmbeddingVector::new(vec![0.0, 0.0], "e").is_ok());
        let err = EmbeddingVector::from_encoder(vec![0.0, 0.0], "e").unwrap_err();
        assert!(matches!(err, Error::BackendFault(_)));
        let err = EmbeddingVector::from_encoder(vec![f64::INFINITY], "e").unwrap_err();
        assert!(matches!(err, Error::BackendFault(_)));
    }

    #[test]
    fn judgment_scales() {
        assert!(HumanJudgment::new("s", 4.0, JudgmentScale::Likert1To4).is_ok());
        assert!(HumanJudgment::new("s", 5.0, JudgmentScale::Likert1To4).is_err());
        assert!(HumanJudgment::new("s", 2.5, JudgmentScale::Likert1To4).is_err());
        assert!(HumanJudgment::new("s", 1.2, JudgmentScale::FractionYes).is_err());
        assert!(HumanJudgment::new("s", 0.5, JudgmentScale::BinaryAccurate).is_err());
        let j = HumanJudgment::fraction_yes("s", &[true, true, false]).unwrap();
        assert_eq!(j.value, 2.0 / 3.0);
        assert!(HumanJudgment::fraction_yes("s", &[true, false]).is_err());
        let json = serde_json::to_string(&JudgmentScale::Likert1To4).unwrap();
        assert_eq!(json, "\"likert_1_4\"");
    }

    fn sd3(version: &str) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Generator, "sd3-medium", version)
    }

    #[test]
    fn canonical_string_ignores_insertion_order() {
        let a = sd3("3.0").with_param("steps", 28).with_param("guidance", 7.0);
        let b = sd3("3.0").with_param("guidance", 7.0).with_param("steps", 28);
        assert_eq!(a.canonical_string().unwrap(), b.canonical_string().unwrap());
    }

    #[test]
    fn canonical_string_distinguishes_versions() {
        assert_ne!(sd3("3.0").canonical_string().unwrap(), sd3("3.1").canonical_string().unwrap());
    }

    /// Hand-written serializer for the canonical layout, independent of serde.
    fn reference_canonical(d: &BackendDescriptor) -> String {
        let mut params: Vec<(&String, &ParamValue)> = d.params.iter().collect();
        params.sort_by(|a, b| a.0.cmp(b.0));
        let rendered: Vec<String> = params
            .iter()
            .map(|(k, v)| {
                let value = match v {
                    ParamValue::Bool(b) => b.to_string(),
                    ParamValue::Int(i) => i.to_string(),
                    ParamValue::Float(f) if f.fract() == 0.0 => format!("{f:.1}"),
                    ParamValue::Float(f) => format!("{f}"),
                    ParamValue::Str(s) => format!("\"{s}\""),
                };
                format!("\"{k}\":{value}")
            })
            .collect();
        format!(
            "{{\"kind\":\"{}\",\"name\":\"{}\",\"params\":{{{}}},\"version\":\"{}\"}}",
            d.kind.as_str(),
            d.name,
            rendered.join(","),
            d.version
        )
    }

    #[test]
    fn canonical_string_matches_reference_serializer() {
        let d = sd3("3.0").with_param("steps", 28).with_param("guidance", 7.0);
        let expected = reference_canonical(&d);
        assert_eq!(
            expected,
            r#"{"kind":"generator","name":"sd3-medium","params":{"guidance":7.0,"steps":28},"version":"3.0"}"#
        );
        let ours = d.canonical_string().unwrap();
        let parsed_ours: serde_json::Value = serde_json::from_str(&ours).unwrap();
        let parsed_ref: serde_json::Value = serde_json::from_str(&expected).unwrap();
        assert_eq!(parsed_ours, parsed_ref);
        assert_eq!(ours, expected);
        assert!(ours.find("guidance").unwrap() < ours.find("steps").unwrap());
        assert_eq!(BackendDescriptor::from_canonical(&ours).unwrap(), d);
    }

    #[test]
    fn canonical_string_rejects_non_finite_params() {
        let d = sd3("3.0").with_param("guidance", f64::NAN);
        assert!(matches!(d.canonical_string(), Err(Error::Configuration(_))));
    }

    #[test]
    fn int_and_float_params_are_distinct() {
        let a = sd3("3.0").with_param("steps", 28);
        let b = sd3("3.0").with_param("steps", 28.0);
        assert_ne!(a.canonical_string().unwrap(), b.canonical_string().unwrap());
        let back = BackendDescriptor::from_canonical(&b.canonical_string().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn canonicalization_is_injective_over_corpus() {
        let mut corpus = Vec::new();
        for kind in [BackendKind::Captioner, BackendKind::Generator, BackendKind::Encoder] {
            for name in ["a", "b", "a,b"] {
                for version in ["1", "1.0", "2"] {
                    corpus.push(BackendDescriptor::new(kind, name, version));
                    corpus.push(BackendDescriptor::new(kind, name, version).with_param("k", 1));
                    corpus.push(BackendDescriptor::new(kind, name, version).with_param("k", 1.0));
                    corpus.push(BackendDescriptor::new(kind, name, version).with_param("k", "1"));
                    corpus.push(BackendDescriptor::new(kind, name, version).with_param("k", true));
                    corpus.push(
                        BackendDescriptor::new(kind, name, version).with_param("k", 1).with_param("j", 1),
                    );
                }
            }
        }
        let strings: std::collections::HashSet<String> =
            corpus.iter().map(|d| d.canonical_string().unwrap()).collect();
        assert_eq!(strings.len(), corpus.len());
    }
}
