//! Per-narrative, per-backend extraction results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::BcsObservation;
use crate::rules::RuleMatch;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OutcomeError {
    #[error("outcome for {0:?}: no-answer status cannot carry observations or an overweight assertion")]
    NoAnswerWithContent(String),
    #[error("outcome for {0:?}: rule backends cannot produce no-answer or extraneous text")]
    InvalidRuleOutcome(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Rule,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    NoAnswer,
    TransportError,
}

/// What one backend produced for one narrative.
///
/// `overweight_asserted` is the backend's own textual overweight claim,
/// distinct from threshold classification of the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub narrative_id: String,
    pub backend_kind: BackendKind,
    pub backend_label: String,
    pub status: OutcomeStatus,
    pub observations: Vec<BcsObservation>,
    pub overweight_asserted: bool,
    pub extraneous_text: Option<String>,
    pub raw_output: String,
}

impl ExtractionOutcome {
    /// Outcome of a rule backend run. The raw output records the matched
    /// notation text.
    pub fn rule(
        narrative_id: impl Into<String>,
        backend_label: impl Into<String>,
        matches: &[RuleMatch],
    ) -> Self {
        let raw_output = matches
            .iter()
            .map(|m| m.matched_text.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        ExtractionOutcome {
            narrative_id: narrative_id.into(),
            backend_kind: BackendKind::Rule,
            backend_label: backend_label.into(),
            status: OutcomeStatus::Ok,
            observations: matches.iter().map(|m| m.observation.clone()).collect(),
            overweight_asserted: false,
            extraneous_text: None,
            raw_output,
        }
    }

    pub fn llm_ok(
        narrative_id: impl Into<String>,
        backend_label: impl Into<String>,
        observations: Vec<BcsObservation>,
        overweight_asserted: bool,
        extraneous_text: Option<String>,
        raw_output: impl Into<String>,
    ) -> Self {
        ExtractionOutcome {
            narrative_id: narrative_id.into(),
            backend_kind: BackendKind::Llm,
            backend_label: backend_label.into(),
            status: OutcomeStatus::Ok,
            observations,
            overweight_asserted,
            extraneous_text,
            raw_output: raw_output.into(),
        }
    }

    /// A response carrying no task content. Observations are empty and no
    /// assertion is recorded, by construction.
    pub fn llm_no_answer(
        narrative_id: impl Into<String>,
        backend_label: impl Into<String>,
        raw_output: impl Into<String>,
    ) -> Self {
        ExtractionOutcome {
            narrative_id: narrative_id.into(),
            backend_kind: BackendKind::Llm,
            backend_label: backend_label.into(),
            status: OutcomeStatus::NoAnswer,
            observations: Vec::new(),
            overweight_asserted: false,
            extraneous_text: None,
            raw_output: raw_output.into(),
        }
    }

    /// A request that failed at the transport layer.
    pub fn transport_error(
        narrative_id: impl Into<String>,
        backend_label: impl Into<String>,
    ) -> Self {
        ExtractionOutcome {
            narrative_id: narrative_id.into(),
            backend_kind: BackendKind::Llm,
            backend_label: backend_label.into(),
            status: OutcomeStatus::TransportError,
            observations: Vec::new(),
            overweight_asserted: false,
            extraneous_text: None,
            raw_output: String::new(),
        }
    }

    /// Record-level prediction: some plausible observation classifies
    /// overweight (ranges by lower bound). Implausible observations are
    /// surfaced for review but never counted.
    pub fn predicted_overweight_bcs(&self) -> bool {
        self.observations
            .iter()
            .any(|obs| obs.plausible && obs.is_overweight())
    }

    /// Broader overweight signal: an overweight observation or the
    /// backend's own assertion.
    pub fn overweight_signal(&self) -> bool {
        self.predicted_overweight_bcs() || self.overweight_asserted
    }

    /// Re-check constructor invariants. Useful after deserializing
    /// outcomes produced elsewhere.
    pub fn validate(&self) -> Result<(), OutcomeError> {
        if self.status == OutcomeStatus::NoAnswer
            && (!self.observations.is_empty() || self.overweight_asserted)
        {
            return Err(OutcomeError::NoAnswerWithContent(self.narrative_id.clone()));
        }
        if self.backend_kind == BackendKind::Rule
            && (self.status == OutcomeStatus::NoAnswer || self.extraneous_text.is_some())
        {
            return Err(OutcomeError::InvalidRuleOutcome(self.narrative_id.clone()));
        }
        Ok(())
    }
}
