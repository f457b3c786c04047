use chrono::{DateTime, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::baselines::{self, Baseline};
use super::TiePolicy;
use crate::error::{Error, Result};
use crate::model::ScoreRecord;

/// JSON report emitted by every protocol command.
#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub protocol: String,
    /// τ for the correlation protocols, accuracy for the pairwise ones,
    /// the gap for the gap experiment.
    pub statistic: f64,
    pub n: usize,
    pub config_digest: String,
    pub generator: Vec<String>,
    pub encoder: Vec<String>,
    pub timestamp: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie_policy: Option<TiePolicy>,
    pub baselines: Vec<Baseline>,
    pub details: serde_json::Value,
    pub notes: Vec<String>,
    #[serde(skip)]
    settings: serde_json::Value,
}

/// Distinct generator and encoder descriptors across `records`, sorted.
pub fn descriptors_of(records: &[ScoreRecord]) -> (Vec<String>, Vec<String>) {
    let mut g: Vec<String> = records.iter().map(|r| r.generator_id.clone()).collect();
    let mut e: Vec<String> = records.iter().map(|r| r.encoder_id.clone()).collect();
    g.sort();
    g.dedup();
    e.sort();
    e.dedup();
    (g, e)
}

/// Fails when records were produced by more than one pipeline.
pub fn ensure_single_pipeline(records: &[ScoreRecord]) -> Result<()> {
    let (g, e) = descriptors_of(records);
    if g.len() > 1 || e.len() > 1 {
        return Err(Error::Configuration(format!(
            "records mix {} generator and {} encoder descriptors",
            g.len(),
            e.len()
        )));
    }
    Ok(())
}

impl ProtocolReport {
    pub fn new(protocol: &str, statistic: f64, n: usize, records: &[ScoreRecord], details: impl Serialize) -> Result<Self> {
        let (generator, encoder) = descriptors_of(records);
        Ok(ProtocolReport {
            protocol: protocol.to_string(),
            statistic,
            n,
            config_digest: String::new(),
            generator,
            encoder,
            timestamp: Utc::now(),
            tie_policy: None,
            baselines: baselines::for_protocol(protocol),
            details: serde_json::to_value(details)?,
            notes: Vec::new(),
            settings: serde_json::Value::Null,
        }
        .rehash())
    }

    pub fn with_tie_policy(mut self, policy: TiePolicy) -> Self {
        self.tie_policy = Some(policy);
        self.rehash()
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// Records extra run settings (seeds, strictness) in the digest.
    pub fn with_settings(mut self, settings: serde_json::Value) -> Self {
        self.settings = settings;
        self.rehash()
    }

    fn rehash(mut self) -> Self {
        let config = serde_json::json!({
            "protocol": self.protocol,
            "generator": self.generator,
            "encoder": self.encoder,
            "tie_policy": self.tie_policy,
            "settings": self.settings,
        });
        self.config_digest = hex::encode(Sha256::digest(config.to_string().as_bytes()));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CaptionSource;
    use crate::protocols::tests::record;

    #[test]
    fn digest_tracks_configuration() {
        let recs = vec![record("a", 0, 0.5, CaptionSource::HumanReference)];
        let a = ProtocolReport::new("foil", 0.5, 1, &recs, ()).unwrap();
        let b = ProtocolReport::new("foil", 0.9, 1, &recs, ()).unwrap();
        assert_eq!(a.config_digest, b.config_digest);
        let c = a.clone().with_tie_policy(TiePolicy::HalfCredit);
        assert_ne!(a.config_digest, c.config_digest);
        let d = a.clone().with_settings(serde_json::json!({"seed": 3}));
        assert_ne!(a.config_digest, d.config_digest);
        assert_eq!(a.generator.len(), 1);
        assert!(a.baselines.iter().any(|b| b.metric == "CLIP-S"));
    }

    #[test]
    fn mixed_descriptors_are_rejected() {
        let mut recs = vec![record("a", 0, 0.5, CaptionSource::HumanReference), record("b", 0, 0.5, CaptionSource::HumanReference)];
        ensure_single_pipeline(&recs).unwrap();
        recs[1].encoder_id = recs[1].encoder_id.replace("\"e\"", "\"f\"");
        assert!(ensure_single_pipeline(&recs).is_err());
    }
}
