//! Tunable parameters shared by the audit pipelines.

use serde::{Deserialize, Serialize};

use crate::finding::ScoringConfig;

/// Pair-selection source confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfidences {
    pub hotspot: f64,
    pub counter: f64,
    pub shared_state: f64,
    pub triage: f64,
    pub llm_triage: f64,
}

impl Default for PairConfidences {
    fn default() -> Self {
        PairConfidences {
            hotspot: 0.6,
            counter: 0.7,
            shared_state: 0.8,
            triage: 0.9,
            llm_triage: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Cap on claim-first and verdict source extracts, in characters.
    pub char_budget: usize,
    /// Cap on any single prompt, in characters.
    pub prompt_budget: usize,
    pub scoring: ScoringConfig,
    pub pair_confidences: PairConfidences,
    /// Hotspot pairs kept from the attention ranking.
    pub hotspot_pairs: usize,
    /// Minimum attention score of a hotspot pair.
    pub hotspot_min_score: f64,
    /// Upper bound on audited pairs.
    pub max_pairs: usize,
    /// Phase-D vector confirmation thresholds.
    pub vector_min_confidence: f64,
    pub vector_min_trace: usize,
    /// Run the supplementary contract lenses in Phase B.
    pub contract_lenses: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            char_budget: 24_000,
            prompt_budget: 120_000,
            scoring: ScoringConfig::default(),
            pair_confidences: PairConfidences::default(),
            hotspot_pairs: 10,
            hotspot_min_score: 1.0,
            max_pairs: 40,
            vector_min_confidence: 0.8,
            vector_min_trace: 30,
            contract_lenses: true,
        }
    }
}
