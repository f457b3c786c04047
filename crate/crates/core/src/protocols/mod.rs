//! Benchmark protocols over score records and human judgments.
//!
//! Except for the gap experiment, which has to score mismatched pairs, every
//! protocol is a pure function of its inputs.

pub mod baselines;
pub mod gap;
pub mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use gap::{gap_pairings, histogram_csv, likert_gap_experiment, GapPairing, GapReport, GapRun};
pub use report::ProtocolReport;

use crate::error::{Error, Result};
use crate::metric::Aggregation;
use crate::model::{CaptionSource, HumanJudgment, JudgmentScale, ScoreRecord, MIN_FRACTION_VOTES};
use crate::pipeline::aggregate_by_sample;
use crate::rank::{kendall_tau_b, kendall_tau_c, CorrelationReport};

/// Expert judges per Flickr8K-Expert pair.
pub const EXPERT_JUDGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// A tie counts as incorrect.
    #[default]
    Strict,
    /// A tie counts as half a correct pair.
    HalfCredit,
}

impl TiePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TiePolicy::Strict => "strict",
            TiePolicy::HalfCredit => "half_credit",
        }
    }
}

/// A sample left out of a protocol, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutcome {
    pub report: CorrelationReport,
    /// Image-caption pairs that contributed.
    pub pairs: usize,
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    pub accuracy: f64,
    pub n: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub tie_policy: TiePolicy,
    pub excluded: Vec<Exclusion>,
}

fn scores_by_sample(records: &[ScoreRecord]) -> Result<BTreeMap<String, f64>> {
    aggregate_by_sample(records, Aggregation::Mean)
}

fn judgments_by_sample(judgments: &[HumanJudgment]) -> HashMap<&str, Vec<&HumanJudgment>> {
    let mut out: HashMap<&str, Vec<&HumanJudgment>> = HashMap::new();
    for j in judgments {
        out.entry(j.sample_id.as_str()).or_default().push(j);
    }
    out
}

/// Flattened scores, flattened judgments, pairs kept and pairs excluded.
pub type Flattened = (Vec<f64>, Vec<f64>, usize, Vec<Exclusion>);

/// Expands each pair into one (score, judgment) sample per judge.
/// `strict` turns a pair without exactly three likert judgments into an
/// ingestion error; otherwise the pair is excluded and reported.
pub fn flatten_expert(
    records: &[ScoreRecord],
    judgments: &[HumanJudgment],
    strict: bool,
) -> Result<Flattened> {
    let scores = scores_by_sample(records)?;
    let by_sample = judgments_by_sample(judgments);
    let (mut xs, mut ys, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    let mut pairs = 0;
    for (id, score) in &scores {
        let js: Vec<f64> = by_sample
            .get(id.as_str())
            .map(|v| v.iter().filter(|j| j.scale == JudgmentScale::Likert1To4).map(|j| j.value).collect())
            .unwrap_or_default();
        if js.len() != EXPERT_JUDGES {
            let reason = format!("expected {EXPERT_JUDGES} expert judgments, found {}", js.len());
            if strict {
                return Err(Error::Ingestion(format!("{id}: {reason}")));
            }
            excluded.push(Exclusion { sample_id: id.clone(), reason });
            continue;
        }
        pairs += 1;
        for v in js {
            xs.push(*score);
            ys.push(v);
        }
    }
    Ok((xs, ys, pairs, excluded))
}

/// Kendall τ_c between metric scores and flattened expert judgments.
pub fn flickr8k_expert_protocol(records: &[ScoreRecord], judgments: &[HumanJudgment], strict: bool) -> Result<CorrelationOutcome> {
    let (xs, ys, pairs, excluded) = flatten_expert(records, judgments, strict)?;
    let report = kendall_tau_c(&xs, &ys)?;
    Ok(CorrelationOutcome { report, pairs, excluded })
}

/// Yes-fraction per sample. Raw votes are aggregated; a stored
/// `fraction_yes` judgment is used as is.
fn cf_fraction(id: &str, judgments: &[&HumanJudgment]) -> std::result::Result<f64, String> {
    let stored: Vec<f64> =
        judgments.iter().filter(|j| j.scale == JudgmentScale::FractionYes).map(|j| j.value).collect();
    let votes: Vec<bool> =
        judgments.iter().filter(|j| j.scale == JudgmentScale::BinaryVote).map(|j| j.value == 1.0).collect();
    match (stored.as_slice(), votes.is_empty()) {
        ([v], true) => Ok(*v),
        ([], false) => HumanJudgment::fraction_yes(id, &votes).map(|j| j.value).map_err(|_| {
            format!("only {} votes, at least {MIN_FRACTION_VOTES} required", votes.len())
        }),
        ([], true) => Err("no crowd judgments".into()),
        _ => Err("mixes stored fractions and raw votes".into()),
    }
}

/// Kendall τ_b between metric scores and the per-pair share of "yes" votes.
/// Pairs with fewer than three votes are excluded and counted.
pub fn flickr8k_cf_protocol(records: &[ScoreRecord], judgments: &[HumanJudgment]) -> Result<CorrelationOutcome> {
    let scores = scores_by_sample(records)?;
    let by_sample = judgments_by_sample(judgments);
    let (mut xs, mut ys, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    for (id, score) in &scores {
        let js = by_sample.get(id.as_str()).map(Vec::as_slice).unwrap_or_default();
        match cf_fraction(id, js) {
            Ok(f) => {
                xs.push(*score);
                ys.push(f);
            }
            Err(reason) => excluded.push(Exclusion { sample_id: id.clone(), reason }),
        }
    }
    if !excluded.is_empty() {
        log::warn!("flickr8k_cf: {} pairs excluded", excluded.len());
    }
    let report = kendall_tau_b(&xs, &ys)?;
    let pairs = xs.len();
    Ok(CorrelationOutcome { report, pairs, excluded })
}

#[derive(Default)]
struct Tally {
    wins: usize,
    ties: usize,
    losses: usize,
}

impl Tally {
    fn add(&mut self, better: f64, worse: f64) {
        if better > worse {
            self.wins += 1;
        } else if better == worse {
            self.ties += 1;
        } else {
            self.losses += 1;
        }
    }

    fn finish(self, policy: TiePolicy, excluded: Vec<Exclusion>) -> Result<PairwiseOutcome> {
        let n = self.wins + self.ties + self.losses;
        if n == 0 {
            return Err(Error::Contract("pairwise accuracy over zero pairs".into()));
        }
        let credit = match policy {
            TiePolicy::Strict => self.wins as f64,
            TiePolicy::HalfCredit => self.wins as f64 + 0.5 * self.ties as f64,
        };
        Ok(PairwiseOutcome {
            accuracy: credit / n as f64,
            n,
            wins: self.wins,
            ties: self.ties,
            losses: self.losses,
            tie_policy: policy,
            excluded,
        })
    }
}

fn same_cycle_setup(a: &ScoreRecord, b: &ScoreRecord) -> Result<()> {
    let mismatch = |what: &str| Err(Error::Contract(format!("{}: pair differs in {what}", a.sample_id)));
    if a.original.content_hash != b.original.content_hash {
        return mismatch("original image");
    }
    if a.seed != b.seed {
        return mismatch("seed");
    }
    if a.generator_id != b.generator_id || a.encoder_id != b.encoder_id {
        return mismatch("backends");
    }
    Ok(())
}

fn unique_by_id<'a>(records: &'a [ScoreRecord], side: &str) -> Result<BTreeMap<&'a str, &'a ScoreRecord>> {
    let mut out = BTreeMap::new();
    for r in records {
        if out.insert(r.sample_id.as_str(), r).is_some() {
            return Err(Error::Contract(format!("{side} records repeat sample {}", r.sample_id)));
        }
    }
    Ok(out)
}

/// Share of pairs where the true caption outscores its foil. Records must
/// align one to one by sample id and share image, seed and backends.
pub fn foil_pairwise_protocol(true_records: &[ScoreRecord], foil_records: &[ScoreRecord], policy: TiePolicy) -> Result<PairwiseOutcome> {
    let truth = unique_by_id(true_records, "true")?;
    let foils = unique_by_id(foil_records, "foil")?;
    if truth.len() != foils.len() || truth.keys().zip(foils.keys()).any(|(a, b)| a != b) {
        let missing = truth.keys().find(|k| !foils.contains_key(*k)).or_else(|| foils.keys().find(|k| !truth.contains_key(*k)));
        return Err(Error::Contract(format!(
            "true and foil records are not aligned (first unmatched sample: {})",
            missing.copied().unwrap_or("?")
        )));
    }
    let mut tally = Tally::default();
    for (id, t) in &truth {
        let f = foils[id];
        same_cycle_setup(t, f)?;
        tally.add(t.score, f.score);
    }
    tally.finish(policy, Vec::new())
}

/// Accuracy over every (ground truth, hallucinated sentence) pair of each
/// image. Images lacking either side are excluded and reported.
pub fn mhaldetect_pairwise_protocol(gt_records: &[ScoreRecord], hallucinated: &[ScoreRecord], policy: TiePolicy) -> Result<PairwiseOutcome> {
    let truth = unique_by_id(gt_records, "ground truth")?;
    let mut sentences: BTreeMap<&str, Vec<&ScoreRecord>> = BTreeMap::new();
    for h in hallucinated {
        sentences.entry(h.sample_id.as_str()).or_default().push(h);
    }
    let mut excluded = Vec::new();
    let mut tally = Tally::default();
    for (id, gt) in &truth {
        let Some(hs) = sentences.get(id) else {
            excluded.push(Exclusion { sample_id: id.to_string(), reason: "no hallucinated sentence".into() });
            continue;
        };
        for h in hs {
            same_cycle_setup(gt, h)?;
            tally.add(gt.score, h.score);
        }
    }
    for id in sentences.keys().filter(|id| !truth.contains_key(*id)) {
        excluded.push(Exclusion { sample_id: id.to_string(), reason: "no ground-truth caption".into() });
    }
    tally.finish(policy, excluded)
}

/// Splits records by caption source: (references, the given source).
pub fn split_by_source(records: &[ScoreRecord], other: CaptionSource) -> (Vec<ScoreRecord>, Vec<ScoreRecord>) {
    let mut refs = Vec::new();
    let mut rest = Vec::new();
    for r in records {
        if r.caption.source == CaptionSource::HumanReference {
            refs.push(r.clone());
        } else if r.caption.source == other {
            rest.push(r.clone());
        }
    }
    (refs, rest)
}
