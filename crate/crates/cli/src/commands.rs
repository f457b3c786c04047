use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use i2t2i_core::backends::registry::{Provider, Registry, StubTables};
use i2t2i_core::backends::stubs::{LookupCaptioner, OracleGenerator};
use i2t2i_core::backends::validate_prompt_template;
use i2t2i_core::ingest::flickr8k::{load_flickr8k_cf, load_flickr8k_expert, Flickr8kOptions};
use i2t2i_core::ingest::{
    build_proposed_dataset, load_foil, load_mhaldetect, EvaluationManifest, ProposedOptions, ValidateOptions,
};
use i2t2i_core::metric::{aggregate_scores, Aggregation};
use i2t2i_core::model::{BackendKind, CaptionSource, Image, ScoreRecord};
use i2t2i_core::pipeline::cache::{image_ref, text_ref};
use i2t2i_core::pipeline::{CacheLock, CacheStore, FailurePolicy, Pipeline, RunBackends, RunConfig};
use i2t2i_core::protocols::report::ensure_single_pipeline;
use i2t2i_core::protocols::{
    flickr8k_cf_protocol, flickr8k_expert_protocol, foil_pairwise_protocol, histogram_csv, likert_gap_experiment,
    mhaldetect_pairwise_protocol, split_by_source, ProtocolReport, TiePolicy,
};
use i2t2i_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::Config;
use crate::{
    CacheAction, Cli, Command, CorrelateArgs, CorrelationProtocol, EvaluateArgs, GapArgs, IngestArgs, IngestSource,
    PairwiseArgs, Response, ScoreArgs, EXIT_CACHE, EXIT_OK, EXIT_SKIPPED,
};

pub(crate) fn dispatch(cli: &Cli) -> Result<Response> {
    let cfg = Config::load_or_default(cli.config.as_deref())?;
    let ctx = Ctx { cache_dir: cfg.cache_dir(cli.cache_dir.as_deref()), registry: cfg.registry(), cfg };
    match &cli.command {
        Command::Score(a) => score(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Correlate(a) => correlate(&ctx, a),
        Command::Foil(a) => pairwise(&ctx, a, "foil", CaptionSource::Foil),
        Command::Haldetect(a) => pairwise(&ctx, a, "mhaldetect", CaptionSource::Hallucinated),
        Command::Gap(a) => gap(&ctx, a),
        Command::Cache { action } => cache(&ctx, action),
        Command::Ingest(a) => ingest(&ctx, a),
    }
}

struct Ctx {
    cfg: Config,
    registry: Registry,
    cache_dir: PathBuf,
}

impl Ctx {
    fn open_pipeline(&self) -> Result<(CacheLock, Pipeline)> {
        let lock = CacheLock::acquire(&self.cache_dir)?;
        Ok((lock, Pipeline::new(CacheStore::open(&self.cache_dir)?)))
    }

    fn is_stub(&self, kind: BackendKind, logical: &str, stub_name: &str) -> Result<bool> {
        let e = self.registry.entry(kind, logical)?;
        Ok(e.provider == Provider::Stub && e.name == stub_name)
    }

    /// Oracle and lookup tables for `manifest`, built only when a selected
    /// stub needs them. The first row mentioning a caption wins.
    fn tables(&self, manifest: &EvaluationManifest, generator: &str, captioner: Option<&str>) -> Result<StubTables> {
        let oracle = self.is_stub(BackendKind::Generator, generator, OracleGenerator::NAME)?;
        let lookup = match captioner {
            Some(c) => self.is_stub(BackendKind::Captioner, c, LookupCaptioner::NAME)?,
            None => false,
        };
        let mut tables = StubTables::default();
        if !oracle && !lookup {
            return Ok(tables);
        }
        let mut seen = HashSet::new();
        for row in &manifest.rows {
            let img = Image::open(manifest.resolve_image(&row.image))?;
            if lookup {
                if let Some(first) = row.captions.first() {
                    tables.lookup.push((img.content_hash(), first.text.clone()));
                }
            }
            if oracle {
                // Only references regenerate the original; foils and
                // hallucinated sentences fall through to noise.
                let tagged = row.captions.iter().any(|c| c.source == CaptionSource::HumanReference);
                let refs = row.captions.iter().filter(|c| !tagged || c.source == CaptionSource::HumanReference);
                for c in refs {
                    if seen.insert(c.text.clone()) {
                        tables.oracle.push((c.text.clone(), img.pixels().clone()));
                    }
                }
            }
        }
        Ok(tables)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.unwrap_or(self.cfg.policies.seed)
    }

    fn tie_policy(&self, flag: Option<crate::TieArg>) -> TiePolicy {
        flag.map(TiePolicy::from).unwrap_or(self.cfg.policies.tie_policy)
    }
}

fn to_value(v: &impl serde::Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn ok(body: Value) -> Response {
    Response { exit: EXIT_OK, body }
}

fn write_json(path: &Path, body: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(body)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn score(ctx: &Ctx, a: &ScoreArgs) -> Result<Response> {
    let image = Image::open(&a.image)?;
    let mut tables = StubTables::default();
    if ctx.is_stub(BackendKind::Generator, &a.backends.generator, OracleGenerator::NAME)? {
        tables.oracle.push((a.caption.clone(), image.pixels().clone()));
    }
    let generator = ctx.registry.generator(&a.backends.generator, &tables)?;
    let encoder = ctx.registry.encoder(&a.backends.encoder)?;
    let caption = i2t2i_core::model::Caption::new(a.caption.clone(), CaptionSource::ModelGenerated)?;
    let sample_id = a.image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let (_lock, pipeline) = ctx.open_pipeline()?;
    let record = pipeline.score_caption(&sample_id, 0, &image, &caption, &generator, &encoder, ctx.seed(a.backends.seed))?;
    Ok(ok(if a.compare { record.without_timestamp() } else { to_value(&record)? }))
}

fn summarize(records: &[ScoreRecord]) -> Result<Value> {
    if records.is_empty() {
        return Ok(json!({ "n": 0, "mean": null, "min": null, "max": null }));
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    Ok(json!({
        "n": scores.len(),
        "mean": aggregate_scores(&scores, Aggregation::Mean)?,
        "min": scores.iter().copied().fold(f64::INFINITY, f64::min),
        "max": scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }))
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<Response> {
    let lenient = a.lenient || ctx.cfg.policies.lenient;
    let (manifest, validation) = EvaluationManifest::load(&a.manifest, !lenient, ValidateOptions::default())?;
    let template = a.prompt_template.clone().unwrap_or_else(|| RunConfig::default().prompt_template);
    validate_prompt_template(&template)?;
    let tables = ctx.tables(&manifest, &a.backends.generator, a.captioner.as_deref())?;
    let backends = RunBackends {
        captioner: a.captioner.as_deref().map(|c| ctx.registry.captioner(c, &tables)).transpose()?,
        generator: ctx.registry.generator(&a.backends.generator, &tables)?,
        encoder: ctx.registry.encoder(&a.backends.encoder)?,
    };
    let run_cfg = RunConfig {
        seed: ctx.seed(a.backends.seed),
        failure_policy: if a.fail_fast { FailurePolicy::FailFast } else { ctx.cfg.policies.failure },
        workers: a.workers.unwrap_or(ctx.cfg.policies.workers),
        prompt_template: template,
    };
    let (_lock, pipeline) = ctx.open_pipeline()?;
    let outcome = pipeline.run_manifest(&manifest, &backends, &run_cfg)?;

    let file = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut w = BufWriter::new(file);
    for r in &outcome.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&a.out, e))?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;

    let stats = pipeline.stats();
    let mut summary = summarize(&outcome.records)?;
    summary["failures"] = json!(outcome.failures.len());
    summary["failed"] = to_value(&outcome.failures)?;
    summary["rejected_rows"] = to_value(&validation.issues)?;
    summary["stage_executions"] = json!({
        "caption": stats.caption_executions,
        "generation": stats.generation_executions,
        "embedding": stats.embedding_executions,
    });
    summary["cache_hits"] = json!(stats.cache_hits);
    summary["generator"] = json!(backends.generator.id());
    summary["encoder"] = json!(backends.encoder.id());
    summary["out"] = json!(a.out);
    let skipped = !outcome.failures.is_empty() || !validation.issues.is_empty();
    Ok(Response { exit: if skipped { EXIT_SKIPPED } else { EXIT_OK }, body: summary })
}

pub fn read_records(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Ingestion(format!("{}:{}: {e}", path.display(), i + 1)))?;
        record.validate().map_err(|e| Error::Ingestion(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

fn records_checked(path: &Path, allow_mixed: bool) -> Result<Vec<ScoreRecord>> {
    let records = read_records(path)?;
    if !allow_mixed {
        ensure_single_pipeline(&records)?;
    }
    Ok(records)
}

fn finish_report(report: ProtocolReport, out: Option<&Path>) -> Result<Response> {
    let body = to_value(&report)?;
    if let Some(path) = out {
        write_json(path, &body)?;
    }
    Ok(ok(body))
}

const PERCENT_NOTE: &str = "statistic is a fraction; baseline values are percentages";

fn correlate(ctx: &Ctx, a: &CorrelateArgs) -> Result<Response> {
    let records = records_checked(&a.records, a.allow_mixed)?;
    let (manifest, _) = EvaluationManifest::load(&a.dataset, true, ValidateOptions { check_images: false })?;
    let protocol = match (a.protocol, manifest.dataset_id.as_str()) {
        (Some(p), _) => p,
        (None, "flickr8k_expert") => CorrelationProtocol::Expert,
        (None, "flickr8k_cf") => CorrelationProtocol::Cf,
        (None, other) => {
            return Err(Error::Configuration(format!(
                "dataset {other:?} has no correlation protocol; pass --protocol"
            )))
        }
    };
    let judgments = manifest.human_judgments()?;
    let lenient = a.lenient || ctx.cfg.policies.lenient;
    let (name, outcome) = match protocol {
        CorrelationProtocol::Expert => ("flickr8k_expert", flickr8k_expert_protocol(&records, &judgments, !lenient)?),
        CorrelationProtocol::Cf => ("flickr8k_cf", flickr8k_cf_protocol(&records, &judgments)?),
    };
    let report = ProtocolReport::new(name, outcome.report.tau, outcome.report.n, &records, &outcome)?
        .with_settings(json!({ "strict": !lenient, "dataset_id": manifest.dataset_id }))
        .with_note(PERCENT_NOTE);
    finish_report(report, a.out.as_deref())
}

fn pairwise(ctx: &Ctx, a: &PairwiseArgs, protocol: &str, negative: CaptionSource) -> Result<Response> {
    let records = records_checked(&a.records, a.allow_mixed)?;
    if let Some(path) = &a.dataset {
        let (manifest, _) = EvaluationManifest::load(path, true, ValidateOptions { check_images: false })?;
        let ids: HashSet<&str> = manifest.rows.iter().map(|r| r.sample_id.as_str()).collect();
        if let Some(r) = records.iter().find(|r| !ids.contains(r.sample_id.as_str())) {
            return Err(Error::Configuration(format!("record {} is not in {}", r.sample_id, path.display())));
        }
    }
    let policy = ctx.tie_policy(a.tie_policy);
    let (positive, negatives) = split_by_source(&records, negative);
    let outcome = if negative == CaptionSource::Foil {
        foil_pairwise_protocol(&positive, &negatives, policy)?
    } else {
        mhaldetect_pairwise_protocol(&positive, &negatives, policy)?
    };
    let mut report = ProtocolReport::new(protocol, outcome.accuracy, outcome.n, &records, &outcome)?
        .with_tie_policy(policy)
        .with_note(PERCENT_NOTE);
    if policy == TiePolicy::Strict && outcome.ties > 0 {
        report = report.with_note(format!("{} tied pairs counted as incorrect", outcome.ties));
    }
    finish_report(report, a.out.as_deref())
}

fn gap(ctx: &Ctx, a: &GapArgs) -> Result<Response> {
    let (manifest, _) = EvaluationManifest::load(&a.dataset, true, ValidateOptions::default())?;
    let tables = ctx.tables(&manifest, &a.backends.generator, None)?;
    let generator = ctx.registry.generator(&a.backends.generator, &tables)?;
    let encoder = ctx.registry.encoder(&a.backends.encoder)?;
    let pairing_seed = a.pairing_seed.unwrap_or(ctx.cfg.policies.pairing_seed);
    let seed = ctx.seed(a.backends.seed);
    let (_lock, pipeline) = ctx.open_pipeline()?;
    let run = likert_gap_experiment(&pipeline, &manifest, &generator, &encoder, pairing_seed, seed)?;
    if let Some(path) = &a.histogram {
        let csv = histogram_csv(&run.correct, &run.incorrect, a.bins)?;
        fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    let mut report = ProtocolReport::new("likert_gap", run.report.gap, run.report.n_correct, &[], &run.report)?;
    report.generator = vec![generator.id().to_string()];
    report.encoder = vec![encoder.id().to_string()];
    let report = report
        .with_settings(json!({ "pairing_seed": pairing_seed, "seed": seed, "dataset_id": manifest.dataset_id }))
        .with_note("baseline values are full-scale targets, not desk-scale expectations");
    finish_report(report, a.out.as_deref())
}

/// Identities of every image and caption in a manifest, for pinning.
fn manifest_refs(path: &Path) -> Result<HashSet<String>> {
    let m = EvaluationManifest::read(path)?;
    let mut refs = HashSet::new();
    for row in &m.rows {
        match Image::open(m.resolve_image(&row.image)) {
            Ok(img) => {
                refs.insert(image_ref(&img.content_hash()));
            }
            Err(e) => log::warn!("{}: cannot pin image of {}: {e}", path.display(), row.sample_id),
        }
        for c in &row.captions {
            refs.insert(text_ref(&c.text));
        }
    }
    Ok(refs)
}

fn cache(ctx: &Ctx, action: &CacheAction) -> Result<Response> {
    let store = CacheStore::open(&ctx.cache_dir)?;
    match action {
        CacheAction::List => {
            let entries = store.list()?;
            let total: u64 = entries.iter().map(|e| e.bytes).sum();
            Ok(ok(json!({ "entries": entries, "count": entries.len(), "total_bytes": total })))
        }
        CacheAction::Verify => {
            let checked = store.list()?.len();
            let corrupt = store.verify()?;
            let body = json!({
                "checked": checked,
                "errors": corrupt.len(),
                "corrupt": corrupt,
                "digests": corrupt.iter().map(|c| c.digest.clone()).collect::<Vec<_>>(),
            });
            Ok(Response { exit: if corrupt.is_empty() { EXIT_OK } else { EXIT_CACHE }, body })
        }
        CacheAction::Gc { max_bytes, pin } => {
            let _lock = CacheLock::acquire(&ctx.cache_dir)?;
            let mut seeds = HashSet::new();
            for p in pin {
                seeds.extend(manifest_refs(p)?);
            }
            let pinned = store.pinned_digests(&seeds)?;
            let report = store.gc(*max_bytes, &pinned)?;
            let mut body = to_value(&report)?;
            body["pinned"] = json!(pinned.len());
            Ok(ok(body))
        }
    }
}

fn required(flag: Option<&PathBuf>, cfg: &Config, key: &str) -> Result<PathBuf> {
    flag.cloned()
        .or_else(|| cfg.dataset(key).map(Path::to_path_buf))
        .ok_or_else(|| Error::Configuration(format!("no path given and no `datasets.{key}` in the config")))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<Response> {
    let out = a.out.clone().ok_or_else(|| Error::Configuration("ingest needs --out".into()))?;
    let cfg = &ctx.cfg;
    let (mut manifest, counts): (EvaluationManifest, Value) = match &a.source {
        IngestSource::Flickr8kExpert { root, image_dir, expected_pairs } => {
            let mut opts = Flickr8kOptions::new(absolute(&required(root.as_ref(), cfg, "flickr8k")?)?);
            if let Some(d) = image_dir {
                opts.image_dir = absolute(d)?;
            }
            opts.expected_pairs = (*expected_pairs > 0).then_some(*expected_pairs);
            (load_flickr8k_expert(&opts)?, Value::Null)
        }
        IngestSource::Flickr8kCf { root, image_dir } => {
            let mut opts = Flickr8kOptions::new(absolute(&required(root.as_ref(), cfg, "flickr8k")?)?);
            if let Some(d) = image_dir {
                opts.image_dir = absolute(d)?;
            }
            let (m, c) = load_flickr8k_cf(&opts)?;
            (m, json!({ "pairs": c.pairs, "votes": c.votes, "images": c.images }))
        }
        IngestSource::Foil { annotations, image_dir } => {
            let (m, c) = load_foil(&required(annotations.as_ref(), cfg, "foil")?, &absolute(image_dir)?)?;
            (m, json!({ "pairs": c.pairs, "unpaired": c.unpaired }))
        }
        IngestSource::Mhaldetect { annotations, image_dir } => {
            let (m, c) = load_mhaldetect(&required(annotations.as_ref(), cfg, "mhaldetect")?, &absolute(image_dir)?)?;
            (
                m,
                json!({
                    "descriptions": c.descriptions, "accurate": c.accurate, "inaccurate": c.inaccurate,
                    "ignored_spans": c.ignored, "skipped_descriptions": c.skipped,
                }),
            )
        }
        IngestSource::Proposed {
            coco_captions,
            coco_images,
            flickr30k_captions,
            flickr30k_images,
            coco_split,
            flickr30k_limit,
        } => {
            let opts = ProposedOptions {
                coco_captions: coco_captions.clone(),
                coco_images: absolute(coco_images)?,
                flickr30k_captions: flickr30k_captions.clone(),
                flickr30k_images: absolute(flickr30k_images)?,
                coco_split: coco_split.clone(),
                flickr30k_limit: *flickr30k_limit,
                strict: !(a.lenient || cfg.policies.lenient),
            };
            let (m, c) = build_proposed_dataset(&opts)?;
            (
                m,
                json!({
                    "coco_images": c.coco_images, "flickr30k_images": c.flickr30k_images,
                    "excluded_coco": c.excluded_coco, "excluded_flickr30k": c.excluded_flickr30k,
                }),
            )
        }
    };
    let opts = ValidateOptions { check_images: !a.no_check_images };
    let report = if a.lenient || cfg.policies.lenient {
        manifest.retain_valid(opts)
    } else {
        let report = manifest.validate(opts);
        report.clone().into_result()?;
        report
    };
    manifest.save(&out)?;
    let mut issue_codes: BTreeMap<String, usize> = BTreeMap::new();
    for i in &report.issues {
        *issue_codes.entry(format!("{:?}", i.code)).or_default() += 1;
    }
    Ok(ok(json!({
        "dataset_id": manifest.dataset_id,
        "rows": manifest.rows.len(),
        "out": out,
        "counts": counts,
        "dropped": report.issues.len(),
        "issues": issue_codes,
    })))
}
