//! Logical backend names mapped to descriptors, loaded from TOML or JSON.
//!
//! ```toml
//! [generators.sd3]
//! name = "sd3-medium"
//! version = "1"
//! provider = "remote"
//! params = { endpoint = "http://10.0.0.5:8080", steps = 28, guidance = 7.0 }
//! ```
//!
//! Stub entries are matched by descriptor `name` (`noise-stub`, `pixel-stub`, ...).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::remote::{RemoteCaptioner, RemoteClient, RemoteEncoder, RemoteGenerator};
use super::stubs::{
    ConstantCaptioner, HistogramEncoder, LookupCaptioner, NoiseGenerator, OracleGenerator, PaletteCaptioner,
    PixelEncoder, STUB_VERSION,
};
use super::{CaptionerHandle, EncoderHandle, GeneratorHandle, DEFAULT_PROMPT_TEMPLATE};
use crate::error::{Error, Result};
use crate::model::{BackendDescriptor, BackendKind, ContentHash, ParamValue};

pub const DEFAULT_REMOTE_ENDPOINT: &str = "http://127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub version: String,
    pub provider: Provider,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl RegistryEntry {
    pub fn descriptor(&self, kind: BackendKind) -> BackendDescriptor {
        BackendDescriptor { kind, name: self.name.clone(), version: self.version.clone(), params: self.params.clone() }
    }
}

/// Lookup tables for stubs that need them, usually derived from a manifest.
#[derive(Debug, Clone, Default)]
pub struct StubTables {
    /// Caption text → image the oracle generator returns for it.
    pub oracle: Vec<(String, RgbImage)>,
    /// Image content hash → caption the lookup captioner returns for it.
    pub lookup: Vec<(ContentHash, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default)]
    pub captioners: BTreeMap<String, RegistryEntry>,
    #[serde(default)]
    pub generators: BTreeMap<String, RegistryEntry>,
    #[serde(default)]
    pub encoders: BTreeMap<String, RegistryEntry>,
}

fn stub(name: &str) -> RegistryEntry {
    RegistryEntry { name: name.into(), version: STUB_VERSION.into(), provider: Provider::Stub, params: BTreeMap::new() }
}

fn remote(name: &str, version: &str, params: &[(&str, ParamValue)]) -> RegistryEntry {
    let mut p: BTreeMap<String, ParamValue> = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    p.entry("endpoint".into()).or_insert_with(|| DEFAULT_REMOTE_ENDPOINT.into());
    RegistryEntry { name: name.into(), version: version.into(), provider: Provider::Remote, params: p }
}

impl Registry {
    /// Stubs plus the reference remote instantiation.
    pub fn builtin() -> Self {
        let mut r = Registry::default();
        for name in [LookupCaptioner::NAME, PaletteCaptioner::NAME, ConstantCaptioner::NAME] {
            r.captioners.insert(name.into(), stub(name));
        }
        r.captioners.insert(
            "instructblip-vicuna-7b".into(),
            remote(
                "instructblip-vicuna-7b",
                "1",
                &[("prompt_template", DEFAULT_PROMPT_TEMPLATE.into()), ("token_limit", 100.into())],
            ),
        );
        for name in [OracleGenerator::NAME, NoiseGenerator::NAME] {
            r.generators.insert(name.into(), stub(name));
        }
        r.generators.insert(
            "sd3-medium".into(),
            remote(
                "stable-diffusion-3-medium",
                "1",
                &[
                    ("steps", 28.into()),
                    ("guidance", 7.0.into()),
                    ("width", 1024.into()),
                    ("height", 1024.into()),
                    ("num_images", 1.into()),
                ],
            ),
        );
        for name in [PixelEncoder::NAME, HistogramEncoder::NAME] {
            r.encoders.insert(name.into(), stub(name));
        }
        r.encoders.insert(
            "dinov2-vitb14".into(),
            remote("dinov2-vitb14", "1", &[("pooling", "cls".into()), ("dim", 768.into())]),
        );
        r
    }

    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        match format {
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Configuration(format!("registry: {e}"))),
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::Configuration(format!("registry: {e}"))),
        }
    }

    /// Reads a registry file; `.json` files are JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, ConfigFormat::from_path(path))
    }

    /// Entries of `other` replace same-named entries of `self`.
    pub fn merged(mut self, other: Registry) -> Self {
        self.captioners.extend(other.captioners);
        self.generators.extend(other.generators);
        self.encoders.extend(other.encoders);
        self
    }

    fn table(&self, kind: BackendKind) -> &BTreeMap<String, RegistryEntry> {
        match kind {
            BackendKind::Captioner => &self.captioners,
            BackendKind::Generator => &self.generators,
            BackendKind::Encoder => &self.encoders,
        }
    }

    pub fn names(&self, kind: BackendKind) -> Vec<&str> {
        self.table(kind).keys().map(String::as_str).collect()
    }

    pub fn entry(&self, kind: BackendKind, logical: &str) -> Result<&RegistryEntry> {
        self.table(kind).get(logical).ok_or_else(|| {
            let names = self.names(kind);
            let hint = names
                .iter()
                .min_by_key(|n| edit_distance(n, logical))
                .map(|n| format!("; did you mean {n:?}?"))
                .unwrap_or_default();
            Error::Configuration(format!(
                "unknown {kind} {logical:?}{hint} (registered: {})",
                names.join(", ")
            ))
        })
    }

    pub fn captioner(&self, logical: &str, tables: &StubTables) -> Result<CaptionerHandle> {
        let entry = self.entry(BackendKind::Captioner, logical)?;
        let d = entry.descriptor(BackendKind::Captioner);
        match entry.provider {
            Provider::Remote => {
                let client = Arc::new(RemoteClient::from_descriptor(&d)?);
                CaptionerHandle::new(d, Arc::new(RemoteCaptioner::with_default_tokenizer(client)))
            }
            Provider::Stub => match entry.name.as_str() {
                LookupCaptioner::NAME => Arc::new(LookupCaptioner::new(tables.lookup.iter().cloned())).into_handle(),
                PaletteCaptioner::NAME => Arc::new(PaletteCaptioner::new()).into_handle(),
                ConstantCaptioner::NAME => {
                    Arc::new(ConstantCaptioner::new(d.param_str("text", "a photo"))).into_handle()
                }
                other => Err(unknown_stub(BackendKind::Captioner, other)),
            },
        }
    }

    pub fn generator(&self, logical: &str, tables: &StubTables) -> Result<GeneratorHandle> {
        let entry = self.entry(BackendKind::Generator, logical)?;
        let d = entry.descriptor(BackendKind::Generator);
        let width = d.param_i64("width", 64).clamp(1, 8192) as u32;
        let height = d.param_i64("height", 64).clamp(1, 8192) as u32;
        match entry.provider {
            Provider::Remote => {
                let client = Arc::new(RemoteClient::from_descriptor(&d)?);
                let backend = Arc::new(RemoteGenerator::new(client, &d));
                GeneratorHandle::new(d, backend)
            }
            Provider::Stub => match entry.name.as_str() {
                NoiseGenerator::NAME => Arc::new(NoiseGenerator::new(width, height)).into_handle(),
                OracleGenerator::NAME => {
                    Arc::new(OracleGenerator::new(tables.oracle.iter().cloned(), width, height)).into_handle()
                }
                other => Err(unknown_stub(BackendKind::Generator, other)),
            },
        }
    }

    pub fn encoder(&self, logical: &str) -> Result<EncoderHandle> {
        let entry = self.entry(BackendKind::Encoder, logical)?;
        let d = entry.descriptor(BackendKind::Encoder);
        match entry.provider {
            Provider::Remote => {
                let client = Arc::new(RemoteClient::from_descriptor(&d)?);
                EncoderHandle::new(d, Arc::new(RemoteEncoder::new(client)))
            }
            Provider::Stub => match entry.name.as_str() {
                PixelEncoder::NAME => Arc::new(PixelEncoder::new()).into_handle(),
                HistogramEncoder::NAME => Arc::new(HistogramEncoder::new()).into_handle(),
                other => Err(unknown_stub(BackendKind::Encoder, other)),
            },
        }
    }
}

fn unknown_stub(kind: BackendKind, name: &str) -> Error {
    Error::Configuration(format!("no built-in {kind} stub named {name:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_reference_defaults() {
        let r = Registry::builtin();
        let sd3 = r.entry(BackendKind::Generator, "sd3-medium").unwrap();
        assert_eq!(sd3.params["steps"], ParamValue::Int(28));
        assert_eq!(sd3.params["guidance"], ParamValue::Float(7.0));
        assert_eq!(sd3.params["width"], ParamValue::Int(1024));
        let dino = r.entry(BackendKind::Encoder, "dinov2-vitb14").unwrap();
        assert_eq!(dino.params["pooling"], ParamValue::Str("cls".into()));
        let blip = r.entry(BackendKind::Captioner, "instructblip-vicuna-7b").unwrap();
        assert_eq!(blip.params["prompt_template"], ParamValue::Str(DEFAULT_PROMPT_TEMPLATE.into()));
    }

    #[test]
    fn unknown_name_suggests_closest() {
        let err = Registry::builtin().encoder("pixel-stb").unwrap_err().to_string();
        assert!(err.contains("did you mean \"pixel-stub\""), "{err}");
    }

    #[test]
    fn toml_and_json_configs_parse() {
        let toml = r#"
            [generators.fast-noise]
            name = "noise-stub"
            version = "1"
            provider = "stub"
            params = { width = 32, height = 16 }
        "#;
        let r = Registry::builtin().merged(Registry::parse(toml, ConfigFormat::Toml).unwrap());
        let g = r.generator("fast-noise", &StubTables::default()).unwrap();
        assert_eq!(g.descriptor().param_i64("width", 0), 32);

        let json = r#"{"encoders": {"px": {"name": "pixel-stub", "version": "1", "provider": "stub"}}}"#;
        let r = Registry::parse(json, ConfigFormat::Json).unwrap();
        assert!(r.encoder("px").is_ok());
    }

    #[test]
    fn all_builtin_stubs_build() {
        let r = Registry::builtin();
        let t = StubTables::default();
        for name in ["lookup-stub", "palette-stub", "constant-stub"] {
            r.captioner(name, &t).unwrap();
        }
        for name in ["oracle-stub", "noise-stub"] {
            r.generator(name, &t).unwrap();
        }
        for name in ["pixel-stub", "histogram-stub"] {
            r.encoder(name).unwrap();
        }
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
    }
}
