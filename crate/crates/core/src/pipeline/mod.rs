//! The evaluation cycle: image → (caption) → generated image → embeddings → score.
//!
//! Every stage goes through the [`CacheStore`], so an artifact is computed at
//! most once per (descriptor, input, seed). Stages inside one cycle run in
//! order; separate cycles run on a worker pool.

pub mod cache;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, CacheLock, CacheStore, KeyInputs};

use crate::backends::{CaptionerHandle, EncoderHandle, GeneratorHandle, DEFAULT_PROMPT_TEMPLATE};
use crate::error::{Error, Result, Stage};
use crate::ingest::EvaluationManifest;
use crate::metric::{aggregate_scores, cosine_similarity, Aggregation};
use crate::model::{Caption, EmbeddingVector, Image, ScoreRecord};

/// Backend invocations and cache hits per stage.
#[derive(Debug, Default)]
pub struct StageCounters {
    executions: [AtomicUsize; 3],
    hits: [AtomicUsize; 3],
}

fn slot(stage: Stage) -> usize {
    match stage {
        Stage::Caption => 0,
        Stage::Generation => 1,
        Stage::Embedding => 2,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub caption_executions: usize,
    pub generation_executions: usize,
    pub embedding_executions: usize,
    pub cache_hits: usize,
}

impl StageStats {
    pub fn executions(&self) -> usize {
        self.caption_executions + self.generation_executions + self.embedding_executions
    }
}

impl StageCounters {
    fn executed(&self, stage: Stage) {
        self.executions[slot(stage)].fetch_add(1, Ordering::SeqCst);
    }

    fn hit(&self, stage: Stage) {
        self.hits[slot(stage)].fetch_add(1, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> StageStats {
        let e = |s| self.executions[slot(s)].load(Ordering::SeqCst);
        StageStats {
            caption_executions: e(Stage::Caption),
            generation_executions: e(Stage::Generation),
            embedding_executions: e(Stage::Embedding),
            cache_hits: self.hits.iter().map(|h| h.load(Ordering::SeqCst)).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    FailFast,
    #[default]
    SkipAndLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub failure_policy: FailurePolicy,
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
    pub prompt_template: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            failure_policy: FailurePolicy::SkipAndLog,
            workers: 0,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }
}

/// Backends for a manifest run. With a captioner, each row's image is
/// captioned and that caption is scored; otherwise the row's own captions are.
#[derive(Debug, Clone)]
pub struct RunBackends {
    pub captioner: Option<CaptionerHandle>,
    pub generator: GeneratorHandle,
    pub encoder: EncoderHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleFailure {
    pub sample_id: String,
    pub caption_index: Option<usize>,
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<CycleFailure>,
}

pub struct Pipeline {
    cache: CacheStore,
    counters: Arc<StageCounters>,
}

fn stage_of(e: &Error) -> Option<Stage> {
    match e {
        Error::AtStage { stage, .. } => Some(*stage),
        _ => None,
    }
}

impl Pipeline {
    pub fn new(cache: CacheStore) -> Self {
        Pipeline { cache, counters: Arc::new(StageCounters::default()) }
    }

    pub fn cache(&self) -> &CacheStore {
        &self.cache
    }

    pub fn stats(&self) -> StageStats {
        self.counters.snapshot()
    }

    /// Cached captioning.
    pub fn caption(&self, captioner: &CaptionerHandle, image: &Image, prompt_template: &str) -> Result<Caption> {
        let run = || -> Result<Caption> {
            let identity = format!("{}|prompt:{prompt_template}", cache::image_ref(&image.content_hash()));
            let inputs = KeyInputs { descriptor: captioner.id().to_string(), input_identity: identity, seed: 0 };
            let key = CacheKey::derive(Stage::Caption, &inputs.descriptor, &inputs.input_identity, 0);
            if let Some(hit) = self.cache.get(&key, &inputs)? {
                self.counters.hit(Stage::Caption);
                let caption: Caption = serde_json::from_slice(&hit.payload)
                    .map_err(|e| Error::CacheIntegrity { digest: key.digest.to_hex(), reason: e.to_string() })?;
                return Ok(caption);
            }
            self.counters.executed(Stage::Caption);
            let caption = captioner.caption(image, prompt_template)?;
            let payload = serde_json::to_vec(&caption)?;
            let refs = vec![cache::image_ref(&image.content_hash())];
            let out = Some(cache::text_ref(&caption.text));
            self.cache.put(&key, inputs, &payload, refs, out, captioner.descriptor().is_deterministic())?;
            Ok(caption)
        };
        run().map_err(|e| e.at_stage(Stage::Caption))
    }

    /// Cached generation. Returns the stored image (its uri is the cache
    /// path) and the time the entry was first created.
    pub fn generate(&self, generator: &GeneratorHandle, caption: &Caption, seed: u64) -> Result<(Image, DateTime<Utc>)> {
        let run = || -> Result<(Image, DateTime<Utc>)> {
            let inputs = KeyInputs {
                descriptor: generator.id().to_string(),
                input_identity: format!("text:{}", caption.text),
                seed,
            };
            let key = CacheKey::derive(Stage::Generation, &inputs.descriptor, &inputs.input_identity, seed);
            if let Some(hit) = self.cache.get(&key, &inputs)? {
                self.counters.hit(Stage::Generation);
                let img = Image::decode(&hit.payload, hit.path.to_string_lossy())
                    .map_err(|e| Error::CacheIntegrity { digest: key.digest.to_hex(), reason: e.to_string() })?;
                return Ok((img, hit.meta.created_at));
            }
            self.counters.executed(Stage::Generation);
            let pixels = generator.generate(caption, seed)?;
            let img = Image::from_rgb(pixels, "")?;
            let png = img.encode_png()?;
            let refs = vec![cache::text_ref(&caption.text)];
            let out = Some(cache::image_ref(&img.content_hash()));
            let stored = self.cache.put(&key, inputs, &png, refs, out, generator.descriptor().is_deterministic())?;
            // A non-deterministic backend may have lost a write race; serve what is stored.
            let img = Image::decode(&stored.payload, stored.path.to_string_lossy())?;
            Ok((img, stored.meta.created_at))
        };
        run().map_err(|e| e.at_stage(Stage::Generation))
    }

    /// Cached embedding, keyed by the image's content hash.
    pub fn embed(&self, encoder: &EncoderHandle, image: &Image) -> Result<EmbeddingVector> {
        let run = || -> Result<EmbeddingVector> {
            let identity = cache::image_ref(&image.content_hash());
            let inputs = KeyInputs { descriptor: encoder.id().to_string(), input_identity: identity.clone(), seed: 0 };
            let key = CacheKey::derive(Stage::Embedding, &inputs.descriptor, &inputs.input_identity, 0);
            if let Some(hit) = self.cache.get(&key, &inputs)? {
                self.counters.hit(Stage::Embedding);
                let v: EmbeddingVector = serde_json::from_slice(&hit.payload)
                    .map_err(|e| Error::CacheIntegrity { digest: key.digest.to_hex(), reason: e.to_string() })?;
                v.validate().map_err(|e| Error::CacheIntegrity { digest: key.digest.to_hex(), reason: e.to_string() })?;
                return Ok(v);
            }
            self.counters.executed(Stage::Embedding);
            let v = encoder.embed(image)?;
            let payload = serde_json::to_vec(&v)?;
            self.cache.put(&key, inputs, &payload, vec![identity], None, encoder.descriptor().is_deterministic())?;
            Ok(v)
        };
        run().map_err(|e| e.at_stage(Stage::Embedding))
    }

    /// Scores `caption` against `original`. With `num_seeds > 1` on the
    /// generator the score is the mean over consecutive seeds starting at
    /// `seed`, and the record references the first generated image.
    #[allow(clippy::too_many_arguments)]
    pub fn score_caption(
        &self,
        sample_id: &str,
        caption_index: usize,
        original: &Image,
        caption: &Caption,
        generator: &GeneratorHandle,
        encoder: &EncoderHandle,
        seed: u64,
    ) -> Result<ScoreRecord> {
        let reference = self.embed(encoder, original)?;
        let mut scores = Vec::new();
        let mut first: Option<(Image, DateTime<Utc>)> = None;
        for offset in 0..generator.num_seeds() {
            let (generated, created_at) = self.generate(generator, caption, seed.wrapping_add(offset))?;
            let candidate = self.embed(encoder, &generated)?;
            scores.push(cosine_similarity(&reference, &candidate).map_err(|e| e.at_stage(Stage::Embedding))?);
            first.get_or_insert((generated, created_at));
        }
        let (generated, created_at) = first.expect("num_seeds is at least 1");
        let record = ScoreRecord {
            sample_id: sample_id.to_string(),
            caption_index,
            caption: caption.clone(),
            original: original.reference().clone(),
            generated: generated.reference().clone(),
            score: aggregate_scores(&scores, Aggregation::Mean)?,
            generator_id: generator.id().to_string(),
            encoder_id: encoder.id().to_string(),
            seed,
            created_at,
        };
        record.validate()?;
        Ok(record)
    }

    /// Captions `image` with the model under evaluation, then scores that caption.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate_captioner(
        &self,
        sample_id: &str,
        image: &Image,
        captioner: &CaptionerHandle,
        generator: &GeneratorHandle,
        encoder: &EncoderHandle,
        seed: u64,
        prompt_template: &str,
    ) -> Result<ScoreRecord> {
        let caption = self.caption(captioner, image, prompt_template)?;
        self.score_caption(sample_id, 0, image, &caption, generator, encoder, seed)
    }

    fn pool(workers: usize) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Configuration(format!("worker pool: {e}")))
    }

    /// Scores every (row, caption) pair of a validated manifest. Records come
    /// back sorted by (sample_id, caption_index) regardless of scheduling.
    pub fn run_manifest(&self, manifest: &EvaluationManifest, backends: &RunBackends, config: &RunConfig) -> Result<RunOutcome> {
        let pool = Self::pool(config.workers)?;
        pool.install(|| self.run_manifest_inner(manifest, backends, config))
    }

    fn run_manifest_inner(&self, manifest: &EvaluationManifest, backends: &RunBackends, config: &RunConfig) -> Result<RunOutcome> {
        let fail_fast = config.failure_policy == FailurePolicy::FailFast;
        let mut failures = Vec::new();

        // Load and embed each distinct original once, before any cycle runs.
        let mut locators: Vec<&str> = manifest.rows.iter().map(|r| r.image.as_str()).collect();
        locators.sort_unstable();
        locators.dedup();
        let loaded: Vec<(&str, Result<Image>)> = locators
            .par_iter()
            .map(|loc| {
                let img = Image::open(manifest.resolve_image(loc)).and_then(|img| {
                    self.embed(&backends.encoder, &img)?;
                    Ok(img)
                });
                (*loc, img)
            })
            .collect();
        let mut images: HashMap<&str, Image> = HashMap::new();
        let mut broken: HashMap<&str, String> = HashMap::new();
        for (loc, img) in loaded {
            match img {
                Ok(img) => {
                    images.insert(loc, img);
                }
                Err(e) if fail_fast => return Err(e),
                Err(e) => {
                    broken.insert(loc, e.to_string());
                }
            }
        }

        struct Cycle<'a> {
            sample_id: &'a str,
            caption_index: usize,
            image: &'a Image,
            caption: Option<Caption>,
        }
        let mut cycles = Vec::new();
        for row in &manifest.rows {
            let Some(image) = images.get(row.image.as_str()) else {
                let message = broken.get(row.image.as_str()).cloned().unwrap_or_default();
                log::warn!("{}: skipped, image unusable: {message}", row.sample_id);
                failures.push(CycleFailure { sample_id: row.sample_id.clone(), caption_index: None, stage: None, message });
                continue;
            };
            if backends.captioner.is_some() {
                cycles.push(Cycle { sample_id: &row.sample_id, caption_index: 0, image, caption: None });
                continue;
            }
            for (i, entry) in row.captions.iter().enumerate() {
                match entry.to_caption() {
                    Ok(c) => cycles.push(Cycle { sample_id: &row.sample_id, caption_index: i, image, caption: Some(c) }),
                    Err(e) if fail_fast => return Err(Error::Ingestion(format!("{}: {e}", row.sample_id))),
                    Err(e) => failures.push(CycleFailure {
                        sample_id: row.sample_id.clone(),
                        caption_index: Some(i),
                        stage: None,
                        message: e.to_string(),
                    }),
                }
            }
        }

        let results: Vec<(usize, Result<ScoreRecord>)> = cycles
            .par_iter()
            .enumerate()
            .map(|(i, cycle)| {
                let result = match (&cycle.caption, &backends.captioner) {
                    (Some(caption), _) => self.score_caption(
                        cycle.sample_id,
                        cycle.caption_index,
                        cycle.image,
                        caption,
                        &backends.generator,
                        &backends.encoder,
                        config.seed,
                    ),
                    (None, Some(captioner)) => self.evaluate_captioner(
                        cycle.sample_id,
                        cycle.image,
                        captioner,
                        &backends.generator,
                        &backends.encoder,
                        config.seed,
                        &config.prompt_template,
                    ),
                    (None, None) => unreachable!("cycles without a caption exist only with a captioner"),
                };
                (i, result)
            })
            .collect();

        let mut records = Vec::with_capacity(results.len());
        for (i, result) in results {
            match result {
                Ok(r) => records.push(r),
                Err(e) if fail_fast => return Err(e),
                Err(e) => {
                    let cycle = &cycles[i];
                    log::warn!("{}#{}: skipped: {e}", cycle.sample_id, cycle.caption_index);
                    failures.push(CycleFailure {
                        sample_id: cycle.sample_id.to_string(),
                        caption_index: Some(cycle.caption_index),
                        stage: stage_of(&e),
                        message: e.to_string(),
                    });
                }
            }
        }
        records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id).then(a.caption_index.cmp(&b.caption_index)));
        failures.sort_by(|a, b| a.sample_id.cmp(&b.sample_id).then(a.caption_index.cmp(&b.caption_index)));
        Ok(RunOutcome { records, failures })
    }
}

/// Per-sample aggregate over all caption records of that sample, e.g. the
/// mean over an image's five reference captions, each scored independently.
pub fn aggregate_by_sample(records: &[ScoreRecord], mode: Aggregation) -> Result<BTreeMap<String, f64>> {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.sample_id.clone()).or_default().push(r.score);
    }
    grouped.into_iter().map(|(id, scores)| Ok((id, aggregate_scores(&scores, mode)?))).collect()
}
