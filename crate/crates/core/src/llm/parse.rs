//! Parsing and validation of free-form model responses.
//!
//! Model output only loosely follows the requested shape, so the parser is
//! total: it scans the response with the extended notation patterns, looks
//! for an overweight assertion, recognises conversational non-answers, and
//! quarantines any text outside the expected structure.

use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};

use crate::domain::BcsObservation;
use crate::outcome::ExtractionOutcome;
use crate::rules::{extract_rule, PatternProfile};

/// How hard to push back on reported observations.
///
/// Permissive keeps whatever the model reported (only scores beyond the
/// scale maximum are flagged). Strict additionally flags observations whose
/// value appears in the source narrative next to a non-BCS unit (`kg`,
/// `/10`, `/6`) when the narrative never mentions a BCS at all — the
/// signature of a score lifted from lameness, murmur, or weight data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Strict,
    Permissive,
}

fn bcs_keyword_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        RegexBuilder::new(r"\b(?:bcs|b\.c\.s\.?|body\s+condition)")
            .case_insensitive(true)
            .build()
            .expect("keyword pattern compiles")
    })
}

fn tokens(lower: &str) -> Vec<&str> {
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

fn negated(tokens: &[&str], index: usize) -> bool {
    let window = &tokens[index.saturating_sub(3)..index];
    window.iter().any(|t| *t == "not") || window.windows(2).any(|pair| pair == ["no", "longer"])
}

/// Does the response assert overweight status? Case-insensitive match on
/// "overweight" not negated by "not" or "no longer" within three tokens.
pub fn overweight_asserted(raw: &str) -> bool {
    let lower = raw.to_lowercase();
    let toks = tokens(&lower);
    toks.iter()
        .enumerate()
        .any(|(i, t)| *t == "overweight" && !negated(&toks, i))
}

fn mentions_overweight(raw_lower: &str) -> bool {
    tokens(raw_lower).contains(&"overweight")
}

fn declares_no_bcs(raw_lower: &str) -> bool {
    raw_lower.contains("no bcs") || raw_lower.contains("no body condition")
}

fn conversational_opener(raw_lower: &str) -> bool {
    let first_word = tokens(raw_lower).first().copied().unwrap_or("");
    matches!(first_word, "hello" | "hi" | "hey" | "greetings")
        || raw_lower.contains("how can i assist")
        || raw_lower.contains("how may i assist")
        || raw_lower.contains("how can i help")
        || raw_lower.contains("how may i help")
}

/// True when the response carries no extractable task content: no BCS
/// notation, no overweight token, and no explicit no-BCS statement.
/// Conversational openers force a no-answer.
pub fn detect_no_answer(raw: &str) -> bool {
    let lower = raw.to_lowercase();
    if conversational_opener(&lower) {
        return true;
    }
    let has_notation = !extract_rule(raw, PatternProfile::Extended).is_empty();
    !(has_notation || mentions_overweight(&lower) || declares_no_bcs(&lower))
}

/// Split a response into sentence-ish segments: boundaries after `.`/`?`/`!`
/// followed by whitespace (so decimals survive) and at line breaks.
fn segments(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = raw.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = match c {
            '\n' => true,
            '.' | '?' | '!' => chars
                .peek()
                .map_or(true, |(_, next)| next.is_whitespace()),
            _ => false,
        };
        if boundary {
            let end = i + c.len_utf8();
            out.push(&raw[start..end]);
            start = end;
        }
    }
    if start < raw.len() {
        out.push(&raw[start..]);
    }
    out
}

/// Concatenate the segments that carry neither a score notation, an
/// overweight statement, nor a no-BCS statement — the model's off-task
/// chatter.
pub fn extraneous_text(raw: &str) -> Option<String> {
    let mut extra: Vec<&str> = Vec::new();
    for segment in segments(raw) {
        let trimmed = segment.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lower = trimmed.to_lowercase();
        let expected = !extract_rule(trimmed, PatternProfile::Extended).is_empty()
            || mentions_overweight(&lower)
            || declares_no_bcs(&lower);
        if !expected {
            extra.push(trimmed);
        }
    }
    if extra.is_empty() {
        None
    } else {
        Some(extra.join(" "))
    }
}

fn is_numeric_boundary(text: &str, byte_idx: usize, before: bool) -> bool {
    let ch = if before {
        text[..byte_idx].chars().next_back()
    } else {
        text[byte_idx..].chars().next()
    };
    match ch {
        None => true,
        Some(c) => !(c.is_ascii_digit() || c == '.'),
    }
}

fn followed_by_decoy_unit(text: &str, after: usize) -> bool {
    let rest = text[after..].trim_start();
    if rest.starts_with("kg") {
        return true;
    }
    for unit in ["/10", "/6"] {
        if let Some(tail) = rest.strip_prefix(unit) {
            if !tail.starts_with(|c: char| c.is_ascii_digit()) {
                return true;
            }
        }
    }
    false
}

/// Does the narrative contain this value as a standalone number adjacent to
/// a non-BCS unit or denominator?
fn value_in_decoy_context(narrative_lower: &str, value_text: &str) -> bool {
    let mut search_from = 0;
    while let Some(pos) = narrative_lower[search_from..].find(value_text) {
        let start = search_from + pos;
        let end = start + value_text.len();
        search_from = start + 1;
        if !is_numeric_boundary(narrative_lower, start, true)
            || !is_numeric_boundary(narrative_lower, end, false)
        {
            continue;
        }
        if followed_by_decoy_unit(narrative_lower, end) {
            return true;
        }
    }
    false
}

/// Apply the validation mode to one observation, against the narrative the
/// model was shown. The plausibility flag is only ever lowered.
pub fn validate_observation(
    observation: &BcsObservation,
    source_narrative: &str,
    mode: ValidationMode,
) -> BcsObservation {
    if mode == ValidationMode::Permissive || !observation.plausible {
        return observation.clone();
    }
    let lower = source_narrative.to_lowercase();
    if bcs_keyword_re().is_match(&lower) {
        return observation.clone();
    }
    if value_in_decoy_context(&lower, &observation.value.to_string()) {
        return observation.flagged_implausible();
    }
    observation.clone()
}

/// Parse one model response into an outcome. Total: any UTF-8 input yields
/// an outcome, worst case a no-answer.
pub fn parse_response(
    narrative_id: &str,
    backend_label: &str,
    raw: &str,
    source_narrative: &str,
    mode: ValidationMode,
) -> ExtractionOutcome {
    if detect_no_answer(raw) {
        return ExtractionOutcome::llm_no_answer(narrative_id, backend_label, raw);
    }
    let observations: Vec<BcsObservation> = extract_rule(raw, PatternProfile::Extended)
        .iter()
        .map(|m| validate_observation(&m.observation, source_narrative, mode))
        .collect();
    ExtractionOutcome::llm_ok(
        narrative_id,
        backend_label,
        observations,
        overweight_asserted(raw),
        extraneous_text(raw),
        raw,
    )
}
