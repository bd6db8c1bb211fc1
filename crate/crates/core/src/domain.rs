//! Core value types for clinical narratives, body condition scores, and
//! overweight classification.
//!
//! Scores are exact decimals stored in hundredths, so threshold comparisons
//! can never be flipped by floating-point rounding. All types here are
//! immutable value objects and every operation is pure.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors from score parsing and classification.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("malformed score token: {0:?}")]
    MalformedScore(String),
    #[error("score out of supported range: {0:?}")]
    ScoreOutOfRange(String),
    #[error("range token {0:?} is not ordered low-high")]
    UnorderedRange(String),
    #[error("score must be positive, got {0}")]
    NonPositiveScore(Score),
    #[error("range upper bound {high} is below value {low}")]
    InvalidRange { low: Score, high: Score },
    #[error("span {start}..{end} is empty or reversed")]
    InvalidSpan { start: usize, end: usize },
    #[error("narrative id must be non-empty")]
    EmptyNarrativeId,
    #[error("gold label for {narrative_id:?} marks an overweight BCS but its reference score {score} on the {scale} scale is not overweight")]
    GoldContradiction {
        narrative_id: String,
        score: Score,
        scale: BcsScale,
    },
}

/// A BCS value held exactly in hundredths (e.g. `6.65` is stored as `665`).
///
/// Parsing accepts plain decimal notation; fractional digits beyond two are
/// rounded half away from zero so comparisons stay exact at the stored
/// precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(i64);

/// Integer parts longer than this cannot be a clinical score and would risk
/// overflow in hundredths.
const MAX_INT_DIGITS: usize = 12;

impl Score {
    pub fn from_hundredths(hundredths: i64) -> Self {
        Score(hundredths)
    }

    pub fn from_int(value: i64) -> Self {
        Score(value * 100)
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    /// Exact value as a float, for reporting only (never for comparisons).
    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / 100;
        let frac = (self.0 % 100).abs();
        if frac == 0 {
            write!(f, "{whole}")
        } else if frac % 10 == 0 {
            write!(f, "{whole}.{}", frac / 10)
        } else {
            write!(f, "{whole}.{frac:02}")
        }
    }
}

impl FromStr for Score {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (s, None),
        };
        let digits_only = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits_only(int_part) || frac_part.is_some_and(|f| !digits_only(f)) {
            return Err(DomainError::MalformedScore(s.to_string()));
        }
        if int_part.len() > MAX_INT_DIGITS {
            return Err(DomainError::ScoreOutOfRange(s.to_string()));
        }
        let whole: i64 = int_part.parse().expect("digits checked");
        let mut hundredths = whole * 100;
        if let Some(frac) = frac_part {
            let mut digits = frac.bytes().map(|b| i64::from(b - b'0'));
            hundredths += digits.next().unwrap_or(0) * 10;
            hundredths += digits.next().unwrap_or(0);
            // Round half away from zero on the third fractional digit.
            if digits.next().unwrap_or(0) >= 5 {
                hundredths += 1;
            }
        }
        Ok(Score(hundredths))
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// The two recognised BCS scales. A 5-point score of 3.5 or more, or a
/// 9-point score of 6 or more, counts as overweight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BcsScale {
    #[serde(rename = "5")]
    FivePoint,
    #[serde(rename = "9")]
    NinePoint,
}

impl BcsScale {
    pub fn max_score(self) -> Score {
        match self {
            BcsScale::FivePoint => Score::from_int(5),
            BcsScale::NinePoint => Score::from_int(9),
        }
    }

    pub fn overweight_threshold(self) -> Score {
        match self {
            BcsScale::FivePoint => Score::from_hundredths(350),
            BcsScale::NinePoint => Score::from_hundredths(600),
        }
    }

    pub fn denominator(self) -> Score {
        self.max_score()
    }
}

impl fmt::Display for BcsScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BcsScale::FivePoint => write!(f, "5-point"),
            BcsScale::NinePoint => write!(f, "9-point"),
        }
    }
}

/// Record-level overweight status under the scale's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverweightStatus {
    Overweight,
    NotOverweight,
}

/// Classify a score against its scale threshold.
///
/// Ranged observations classify by their lower bound; callers pass that
/// bound here. Non-positive values are rejected.
pub fn classify_overweight(value: Score, scale: BcsScale) -> Result<OverweightStatus, DomainError> {
    if !value.is_positive() {
        return Err(DomainError::NonPositiveScore(value));
    }
    Ok(if value >= scale.overweight_threshold() {
        OverweightStatus::Overweight
    } else {
        OverweightStatus::NotOverweight
    })
}

/// A parsed numeric score token: either a single value or an ordered range
/// as written in notations like `6-7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreToken {
    Single(Score),
    Range(Score, Score),
}

impl ScoreToken {
    pub fn low(self) -> Score {
        match self {
            ScoreToken::Single(v) => v,
            ScoreToken::Range(lo, _) => lo,
        }
    }

    pub fn high(self) -> Option<Score> {
        match self {
            ScoreToken::Single(_) => None,
            ScoreToken::Range(_, hi) => Some(hi),
        }
    }
}

impl fmt::Display for ScoreToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreToken::Single(v) => write!(f, "{v}"),
            ScoreToken::Range(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

/// Parse a numeric token such as `"7"`, `"5.75"`, or `"6-7"`.
pub fn parse_score_token(token: &str) -> Result<ScoreToken, DomainError> {
    match token.split_once('-') {
        None => Ok(ScoreToken::Single(token.parse()?)),
        Some((lo, hi)) => {
            if lo.is_empty() || hi.is_empty() || hi.contains('-') {
                return Err(DomainError::MalformedScore(token.to_string()));
            }
            let lo: Score = lo.parse()?;
            let hi: Score = hi.parse()?;
            if lo > hi {
                return Err(DomainError::UnorderedRange(token.to_string()));
            }
            Ok(ScoreToken::Range(lo, hi))
        }
    }
}

/// Map a written denominator to a scale. Only exactly 5 and exactly 9 are
/// BCS scales; everything else (lameness `/10`, murmur `/6`, absent) is
/// unknown and must not be classified.
pub fn infer_scale(denominator: Option<Score>) -> Option<BcsScale> {
    match denominator {
        Some(d) if d == Score::from_int(5) => Some(BcsScale::FivePoint),
        Some(d) if d == Score::from_int(9) => Some(BcsScale::NinePoint),
        _ => None,
    }
}

/// Byte offsets `[start, end)` into the text an observation was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self, DomainError> {
        if start >= end {
            return Err(DomainError::InvalidSpan { start, end });
        }
        Ok(Span { start, end })
    }
}

/// A numeric BCS bound to a scale, with the source span when known and a
/// plausibility flag validators may lower but never raise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcsObservation {
    pub value: Score,
    pub value_high: Option<Score>,
    pub scale: BcsScale,
    pub span: Option<Span>,
    pub plausible: bool,
}

impl BcsObservation {
    /// Build an observation, rejecting non-positive values and reversed
    /// ranges. `plausible` starts false only when the value exceeds the
    /// scale maximum.
    pub fn new(
        value: Score,
        value_high: Option<Score>,
        scale: BcsScale,
        span: Option<Span>,
    ) -> Result<Self, DomainError> {
        if !value.is_positive() {
            return Err(DomainError::NonPositiveScore(value));
        }
        if let Some(high) = value_high {
            if high < value {
                return Err(DomainError::InvalidRange { low: value, high });
            }
        }
        Ok(BcsObservation {
            value,
            value_high,
            scale,
            span,
            plausible: value <= scale.max_score(),
        })
    }

    pub fn from_token(
        token: ScoreToken,
        scale: BcsScale,
        span: Option<Span>,
    ) -> Result<Self, DomainError> {
        Self::new(token.low(), token.high(), scale, span)
    }

    /// Overweight under the scale threshold, using the range lower bound.
    pub fn is_overweight(&self) -> bool {
        self.value >= self.scale.overweight_threshold()
    }

    /// Return a copy with the plausibility flag lowered.
    pub fn flagged_implausible(&self) -> Self {
        BcsObservation {
            plausible: false,
            ..self.clone()
        }
    }

    /// Render the score part as written, e.g. `6.65` or `6-7`.
    pub fn score_text(&self) -> String {
        match self.value_high {
            Some(high) => format!("{}-{}", self.value, high),
            None => self.value.to_string(),
        }
    }
}

/// One free-text EHR record with a stable identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNarrative {
    pub id: String,
    pub text: String,
}

impl ClinicalNarrative {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptyNarrativeId);
        }
        Ok(ClinicalNarrative {
            id,
            text: text.into(),
        })
    }

    /// Character count of the narrative text (not bytes).
    pub fn char_length(&self) -> usize {
        self.text.chars().count()
    }
}

/// Human annotation for one narrative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub narrative_id: String,
    pub has_overweight_bcs: bool,
    pub vet_described_overweight: bool,
    pub reference_score: Option<BcsObservation>,
}

impl GoldLabel {
    /// Check internal consistency: an overweight-BCS label with a reference
    /// score requires that score to actually classify overweight.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.has_overweight_bcs {
            if let Some(reference) = &self.reference_score {
                if !reference.is_overweight() {
                    return Err(DomainError::GoldContradiction {
                        narrative_id: self.narrative_id.clone(),
                        score: reference.value,
                        scale: reference.scale,
                    });
                }
            }
        }
        Ok(())
    }
}
