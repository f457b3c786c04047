//! Pluggable captioner, text-to-image generator and image encoder backends.
//!
//! A backend is a trait object behind a handle that pins its
//! [`BackendDescriptor`]. The descriptor plus the input and seed fully
//! determine the output, which is what makes cache reuse sound.

pub mod registry;
pub mod remote;
pub mod stubs;
pub mod tokenize;

use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::model::{BackendDescriptor, BackendKind, Caption, CaptionSource, EmbeddingVector, Image};

pub use tokenize::{ChunkTokenizer, Tokenizer};

/// Placeholder marking where the image goes in a captioning prompt.
pub const IMAGE_PLACEHOLDER: &str = "<Image>";

/// Reference captioning prompt.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "<Image> A short image caption:";

pub trait Captioner: Send + Sync {
    /// Raw model output, before special-token stripping and truncation.
    fn raw_caption(&self, image: &Image, prompt: &str) -> Result<String>;

    fn tokenizer(&self) -> &dyn Tokenizer;
}

pub trait Generator: Send + Sync {
    fn generate(&self, text: &str, seed: u64) -> Result<RgbImage>;
}

pub trait Encoder: Send + Sync {
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
}

macro_rules! handle {
    ($name:ident, $trait:ident, $kind:expr) => {
        #[derive(Clone)]
        pub struct $name {
            descriptor: BackendDescriptor,
            canonical: String,
            backend: Arc<dyn $trait>,
        }

        impl $name {
            pub fn new(descriptor: BackendDescriptor, backend: Arc<dyn $trait>) -> Result<Self> {
                if descriptor.kind != $kind {
                    return Err(Error::Configuration(format!(
                        "descriptor {} is a {}, expected a {}",
                        descriptor.name, descriptor.kind, $kind
                    )));
                }
                let canonical = descriptor.canonical_string()?;
                Ok($name { descriptor, canonical, backend })
            }

            pub fn descriptor(&self) -> &BackendDescriptor {
                &self.descriptor
            }

            /// Canonical descriptor string; the backend's identity in cache keys and reports.
            pub fn id(&self) -> &str {
                &self.canonical
            }

            pub fn backend(&self) -> &Arc<dyn $trait> {
                &self.backend
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.debug_struct(stringify!($name)).field("descriptor", &self.canonical).finish()
            }
        }
    };
}

handle!(CaptionerHandle, Captioner, BackendKind::Captioner);
handle!(GeneratorHandle, Generator, BackendKind::Generator);
handle!(EncoderHandle, Encoder, BackendKind::Encoder);

pub fn validate_prompt_template(template: &str) -> Result<()> {
    let placeholders = template.matches(IMAGE_PLACEHOLDER).count();
    if placeholders != 1 {
        return Err(Error::Contract(format!(
            "prompt template must contain exactly one {IMAGE_PLACEHOLDER} placeholder, found {placeholders}"
        )));
    }
    Ok(())
}

impl CaptionerHandle {
    /// Captions `image`. Special tokens are stripped and the text is cut to
    /// the caption token budget under the backend's own tokenizer.
    pub fn caption(&self, image: &Image, prompt_template: &str) -> Result<Caption> {
        validate_prompt_template(prompt_template)?;
        let token_limit = self.descriptor.param_i64("token_limit", crate::model::DEFAULT_TOKEN_LIMIT as i64);
        if token_limit <= 0 {
            return Err(Error::Configuration(format!("token_limit must be positive, got {token_limit}")));
        }
        let raw = self.backend.raw_caption(image, prompt_template)?;
        let cleaned = tokenize::strip_special_tokens(&raw);
        let text = tokenize::truncate_to_tokens(&cleaned, self.backend.tokenizer(), token_limit as usize);
        if text.is_empty() {
            return Err(Error::BackendFault(format!("captioner {} returned an empty caption", self.descriptor.name)));
        }
        Ok(Caption { text, token_limit: token_limit as u32, source: CaptionSource::ModelGenerated })
    }
}

impl GeneratorHandle {
    /// Raw generation. Persisting the result is the pipeline's job.
    pub fn generate(&self, caption: &Caption, seed: u64) -> Result<RgbImage> {
        caption.validate().map_err(|e| Error::Contract(e.to_string()))?;
        let pixels = self.backend.generate(&caption.text, seed)?;
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::BackendFault(format!("generator {} returned an empty image", self.descriptor.name)));
        }
        Ok(pixels)
    }

    /// Seeds averaged per caption; 1 unless the descriptor sets `num_seeds`.
    pub fn num_seeds(&self) -> u64 {
        self.descriptor.param_i64("num_seeds", 1).max(1) as u64
    }
}

impl EncoderHandle {
    pub fn embed(&self, image: &Image) -> Result<EmbeddingVector> {
        let values = self.backend.embed(image)?;
        let vector = EmbeddingVector::from_encoder(values, self.canonical.clone())?;
        if let Some(dim) = self.descriptor.param("dim").and_then(|v| v.as_i64()) {
            if vector.dim as i64 != dim {
                return Err(Error::BackendFault(format!(
                    "encoder {} emitted dim {} but its descriptor fixes dim {dim}",
                    self.descriptor.name, vector.dim
                )));
            }
        }
        Ok(vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_template_needs_one_placeholder() {
        assert!(validate_prompt_template(DEFAULT_PROMPT_TEMPLATE).is_ok());
        assert!(validate_prompt_template("A short image caption:").is_err());
        assert!(validate_prompt_template("<Image><Image>").is_err());
    }

    #[test]
    fn handle_rejects_wrong_kind() {
        let d = BackendDescriptor::new(BackendKind::Encoder, "noise-stub", "1");
        let err = GeneratorHandle::new(d, Arc::new(stubs::NoiseGenerator::new(8, 8))).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }
}
