//! Rule-based extraction of BCS notations from narrative text.
//!
//! Two built-in pattern profiles are provided. The faithful profile
//! reproduces the original extractor's syntax, including its documented
//! blind spots: it does not accept a colon after the keyword and does not
//! accept ranged scores written with "out of". The extended profile adds
//! both, so its match set is a superset of the faithful one on every input.
//!
//! Patterns capture the numerator and the full written denominator; a
//! candidate only becomes a match when the denominator maps to a real BCS
//! scale. Lameness scores (`/10`) and murmur grades (`/6`) therefore never
//! match, by construction rather than by special-casing.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};
use thiserror::Error;

use crate::domain::{infer_scale, BcsObservation, Score, Span};

/// Errors from pattern-set construction and config loading.
#[derive(Debug, Error)]
pub enum PatternError {
    #[error("failed to read pattern file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("pattern file line {line}: expected name<TAB>pattern")]
    BadLine { line: usize },
    #[error("pattern {name:?} does not compile: {source}")]
    BadRegex {
        name: String,
        source: Box<regex::Error>,
    },
    #[error("pattern {name:?} must define named capture groups 'value' and 'den'")]
    MissingCaptures { name: String },
    #[error("pattern set is empty")]
    Empty,
}

/// Which built-in pattern inventory to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PatternProfile {
    Faithful,
    Extended,
}

impl PatternProfile {
    pub fn pattern_set(self) -> &'static PatternSet {
        static FAITHFUL: OnceLock<PatternSet> = OnceLock::new();
        static EXTENDED: OnceLock<PatternSet> = OnceLock::new();
        match self {
            PatternProfile::Faithful => {
                FAITHFUL.get_or_init(|| PatternSet::builtin_faithful().expect("builtin patterns compile"))
            }
            PatternProfile::Extended => {
                EXTENDED.get_or_init(|| PatternSet::builtin_extended().expect("builtin patterns compile"))
            }
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PatternProfile::Faithful => "faithful",
            PatternProfile::Extended => "extended",
        }
    }
}

/// One compiled, named notation pattern.
///
/// The regex must expose named groups `value` and `den`, and may expose
/// `high` for ranged notations.
#[derive(Debug)]
pub struct NamedPattern {
    pub name: String,
    regex: Regex,
}

impl NamedPattern {
    pub fn new(name: impl Into<String>, pattern: &str) -> Result<Self, PatternError> {
        let name = name.into();
        let regex = RegexBuilder::new(pattern)
            .case_insensitive(true)
            .build()
            .map_err(|source| PatternError::BadRegex {
                name: name.clone(),
                source: Box::new(source),
            })?;
        let groups: Vec<_> = regex.capture_names().flatten().collect();
        if !groups.contains(&"value") || !groups.contains(&"den") {
            return Err(PatternError::MissingCaptures { name });
        }
        Ok(NamedPattern { name, regex })
    }

    pub fn pattern_str(&self) -> &str {
        self.regex.as_str()
    }
}

/// An ordered, immutable set of notation patterns. Compiled once, safe to
/// share across threads.
#[derive(Debug)]
pub struct PatternSet {
    pub name: String,
    patterns: Vec<NamedPattern>,
}

const KEYWORD: &str = r"\b(?:bcs|b\.c\.s\.?|body\s+condition(?:\s+score)?)";
const NUM: &str = r"\d+(?:\.\d+)?";

fn builtin_patterns(separator: &str, with_range_out_of: bool) -> Vec<(String, String)> {
    let mut patterns = vec![
        (
            "slash".to_string(),
            format!(r"{KEYWORD}{separator}(?P<value>{NUM})\s*/\s*(?P<den>{NUM})"),
        ),
        (
            "out-of".to_string(),
            format!(r"{KEYWORD}{separator}(?P<value>{NUM})\s+out\s+of\s+(?P<den>{NUM})"),
        ),
        (
            "range-slash".to_string(),
            format!(r"{KEYWORD}{separator}(?P<value>{NUM})\s*-\s*(?P<high>{NUM})\s*/\s*(?P<den>{NUM})"),
        ),
    ];
    if with_range_out_of {
        patterns.push((
            "range-out-of".to_string(),
            format!(
                r"{KEYWORD}{separator}(?P<value>{NUM})\s*-\s*(?P<high>{NUM})\s+out\s+of\s+(?P<den>{NUM})"
            ),
        ));
    }
    patterns
}

impl PatternSet {
    /// The original notation inventory: keyword, then space/equals/dash
    /// separation, then `n/d`, `n out of d`, or `n-m/d`. No colon, no
    /// ranged "out of".
    pub fn builtin_faithful() -> Result<Self, PatternError> {
        Self::from_pairs("faithful", builtin_patterns(r"[\s=-]*", false))
    }

    /// The faithful inventory plus colon separation and `n-m out of d`,
    /// covering the documented miss formats.
    pub fn builtin_extended() -> Result<Self, PatternError> {
        Self::from_pairs("extended", builtin_patterns(r"[\s:=-]*", true))
    }

    fn from_pairs(
        name: &str,
        pairs: Vec<(String, String)>,
    ) -> Result<Self, PatternError> {
        let patterns = pairs
            .into_iter()
            .map(|(name, pattern)| NamedPattern::new(name, &pattern))
            .collect::<Result<Vec<_>, _>>()?;
        if patterns.is_empty() {
            return Err(PatternError::Empty);
        }
        Ok(PatternSet {
            name: name.to_string(),
            patterns,
        })
    }

    /// Load a pattern set from a plain-text config: one `name<TAB>pattern`
    /// per line. Blank lines and lines starting with `#` are skipped.
    pub fn from_tsv_str(name: &str, text: &str) -> Result<Self, PatternError> {
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim_end();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (name, pattern) = trimmed
                .split_once('\t')
                .ok_or(PatternError::BadLine { line: idx + 1 })?;
            pairs.push((name.to_string(), pattern.to_string()));
        }
        Self::from_pairs(name, pairs)
    }

    pub fn from_file(path: &Path) -> Result<Self, PatternError> {
        let text = fs::read_to_string(path).map_err(|source| PatternError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        Self::from_tsv_str(&name, &text)
    }

    pub fn patterns(&self) -> &[NamedPattern] {
        &self.patterns
    }
}

/// One extracted notation: the observation plus which pattern produced it
/// and the exact text it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub observation: BcsObservation,
    pub pattern_name: String,
    pub matched_text: String,
}

struct Candidate {
    start: usize,
    end: usize,
    pattern_idx: usize,
    observation: BcsObservation,
}

/// Extract every BCS notation from `text` using a built-in profile.
///
/// Matches are non-overlapping, in document order; overlapping candidates
/// resolve leftmost-longest. Denominators other than 5 and 9 yield no match.
pub fn extract_rule(text: &str, profile: PatternProfile) -> Vec<RuleMatch> {
    extract_with_set(text, profile.pattern_set())
}

/// Extraction against an explicit (possibly file-loaded) pattern set.
pub fn extract_with_set(text: &str, set: &PatternSet) -> Vec<RuleMatch> {
    let mut candidates = Vec::new();
    for (pattern_idx, pattern) in set.patterns.iter().enumerate() {
        for caps in pattern.regex.captures_iter(text) {
            let full = caps.get(0).expect("group 0 always present");
            let Some(observation) = observation_from_captures(&caps, full.start(), full.end())
            else {
                continue;
            };
            candidates.push(Candidate {
                start: full.start(),
                end: full.end(),
                pattern_idx,
                observation,
            });
        }
    }
    // Leftmost-longest, then pattern order for exact ties.
    candidates.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then(b.end.cmp(&a.end))
            .then(a.pattern_idx.cmp(&b.pattern_idx))
    });
    let mut matches = Vec::new();
    let mut covered_to = 0usize;
    for cand in candidates {
        if cand.start < covered_to {
            continue;
        }
        covered_to = cand.end;
        matches.push(RuleMatch {
            matched_text: text[cand.start..cand.end].to_string(),
            pattern_name: set.patterns[cand.pattern_idx].name.clone(),
            observation: cand.observation,
        });
    }
    matches
}

fn observation_from_captures(
    caps: &regex::Captures<'_>,
    start: usize,
    end: usize,
) -> Option<BcsObservation> {
    let value: Score = caps.name("value")?.as_str().parse().ok()?;
    let high: Option<Score> = match caps.name("high") {
        Some(m) => Some(m.as_str().parse().ok()?),
        None => None,
    };
    let den: Score = caps.name("den")?.as_str().parse().ok()?;
    let scale = infer_scale(Some(den))?;
    let span = Span::new(start, end).ok()?;
    BcsObservation::new(value, high, scale, Some(span)).ok()
}

/// Record-level signal: does any match classify overweight (ranges by
/// their lower bound)?
pub fn overweight_hits(text: &str, profile: PatternProfile) -> bool {
    extract_rule(text, profile)
        .iter()
        .any(|m| m.observation.is_overweight())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BcsScale;

    fn single(text: &str, profile: PatternProfile) -> RuleMatch {
        let matches = extract_rule(text, profile);
        assert_eq!(matches.len(), 1, "expected one match in {text:?}: {matches:?}");
        matches.into_iter().next().unwrap()
    }

    #[test]
    fn plain_slash_form_matches_both_profiles() {
        for profile in [PatternProfile::Faithful, PatternProfile::Extended] {
            let m = single("BCS 6/9", profile);
            assert_eq!(m.observation.value, Score::from_int(6));
            assert_eq!(m.observation.scale, BcsScale::NinePoint);
            assert_eq!(m.matched_text, "BCS 6/9");
        }
    }

    #[test]
    fn colon_form_is_a_faithful_miss() {
        assert!(extract_rule("BCS: 6/9", PatternProfile::Faithful).is_empty());
        let m = single("BCS: 6/9", PatternProfile::Extended);
        assert_eq!(m.observation.value, Score::from_int(6));
        assert_eq!(m.observation.scale, BcsScale::NinePoint);
    }

    #[test]
    fn ranged_out_of_form_is_a_faithful_miss() {
        assert!(extract_rule("BCS: 6-7 out of 9", PatternProfile::Faithful).is_empty());
        let m = single("BCS: 6-7 out of 9", PatternProfile::Extended);
        assert_eq!(m.observation.value, Score::from_int(6));
        assert_eq!(m.observation.value_high, Some(Score::from_int(7)));
        assert_eq!(m.observation.scale, BcsScale::NinePoint);
        assert_eq!(m.pattern_name, "range-out-of");
    }

    #[test]
    fn non_bcs_denominators_never_match() {
        for text in ["6/10 lameness", "wt 6.65kg", "murmur grade 3/6", "BCS 6/10", "bcs 2/6"] {
            assert!(extract_rule(text, PatternProfile::Faithful).is_empty(), "{text}");
            assert!(extract_rule(text, PatternProfile::Extended).is_empty(), "{text}");
        }
    }

    #[test]
    fn empty_text_yields_empty_list() {
        assert!(extract_rule("", PatternProfile::Extended).is_empty());
    }

    #[test]
    fn overweight_hits_uses_threshold() {
        assert!(overweight_hits("BCS 7/9 discussed diet", PatternProfile::Faithful));
        assert!(!overweight_hits(
            "BCS 5.75/9 would benefit from further weight loss",
            PatternProfile::Faithful
        ));
        assert!(!overweight_hits("healthy, no concerns", PatternProfile::Faithful));
    }

    #[test]
    fn ranged_scores_classify_by_lower_bound() {
        assert!(overweight_hits("BCS 6-7/9", PatternProfile::Faithful));
        assert!(!overweight_hits("BCS 5-7/9", PatternProfile::Faithful));
    }

    #[test]
    fn numerator_above_scale_max_matches_but_is_implausible() {
        let m = single("BCS 12/9", PatternProfile::Faithful);
        assert!(!m.observation.plausible);
        assert_eq!(m.observation.value, Score::from_int(12));
    }

    #[test]
    fn notation_variants_match() {
        for text in [
            "bcs 4/5",
            "B.C.S. 7/9",
            "BCS=3.5/5",
            "body condition score 8/9",
            "body condition 4.5/5",
            "BCS 6 out of 9",
            "BCS 6-7/9",
        ] {
            assert_eq!(extract_rule(text, PatternProfile::Faithful).len(), 1, "{text}");
        }
        for text in ["BCS: 3.5 out of 5", "body condition: 7/9"] {
            assert!(extract_rule(text, PatternProfile::Faithful).is_empty(), "{text}");
            assert_eq!(extract_rule(text, PatternProfile::Extended).len(), 1, "{text}");
        }
    }

    #[test]
    fn matches_are_in_document_order_with_spans_that_reslice() {
        let text = "o/e BCS 3.5/5, previously bcs 6/9 at the weight clinic";
        let matches = extract_rule(text, PatternProfile::Extended);
        assert_eq!(matches.len(), 2);
        let mut last_end = 0;
        for m in &matches {
            let span = m.observation.span.expect("rule matches carry spans");
            assert!(span.start >= last_end);
            assert_eq!(&text[span.start..span.end], m.matched_text);
            last_end = span.end;
        }
    }

    #[test]
    fn unordered_written_range_is_not_a_match() {
        assert!(extract_rule("BCS 7-6/9", PatternProfile::Extended).is_empty());
    }

    #[test]
    fn bare_scores_without_denominator_never_match() {
        assert!(extract_rule("BCS 7", PatternProfile::Extended).is_empty());
        assert!(extract_rule("BCS 7 today", PatternProfile::Extended).is_empty());
    }

    #[test]
    fn adjacent_digits_do_not_leak_into_denominator() {
        // Greedy denominator capture: "95" is not a scale, so no match.
        assert!(extract_rule("BCS 6/95", PatternProfile::Extended).is_empty());
    }

    #[test]
    fn pattern_set_loads_from_tsv() {
        let tsv = "# test inventory\nslash\t(?P<value>\\d+)\\s*/\\s*(?P<den>\\d+)\n";
        let set = PatternSet::from_tsv_str("custom", tsv).unwrap();
        assert_eq!(set.patterns().len(), 1);
        let matches = extract_with_set("score 6/9 recorded", &set);
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].observation.scale, BcsScale::NinePoint);
    }

    #[test]
    fn tsv_without_tab_or_captures_is_rejected() {
        assert!(matches!(
            PatternSet::from_tsv_str("c", "slash (?P<value>x)"),
            Err(PatternError::BadLine { line: 1 })
        ));
        assert!(matches!(
            PatternSet::from_tsv_str("c", "slash\t\\d+"),
            Err(PatternError::MissingCaptures { .. })
        ));
        assert!(matches!(
            PatternSet::from_tsv_str("c", ""),
            Err(PatternError::Empty)
        ));
    }

    #[test]
    fn extraction_is_deterministic() {
        let text = "BCS 6/9 then BCS: 7/9 and body condition 3.5/5";
        let first = extract_rule(text, PatternProfile::Extended);
        for _ in 0..5 {
            assert_eq!(extract_rule(text, PatternProfile::Extended), first);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn contains_span(haystack: &[RuleMatch], needle: &RuleMatch) -> bool {
            haystack.iter().any(|m| {
                m.observation.span == needle.observation.span
                    && m.observation.value == needle.observation.value
                    && m.observation.value_high == needle.observation.value_high
            })
        }

        proptest! {
            // Denominator gate: only /5 and /9 are BCS scales.
            #[test]
            fn only_bcs_denominators_match(
                word in prop::sample::select(vec![
                    "bcs", "BCS", "b.c.s.", "body condition", "lameness", "wt", "grade", "score",
                ]),
                num in 1u32..13,
                den in 1u32..13,
            ) {
                let text = format!("{word} {num}/{den}");
                let matches = extract_rule(&text, PatternProfile::Extended);
                if den == 5 || den == 9 {
                    for m in &matches {
                        prop_assert!(matches!(m.observation.scale, BcsScale::FivePoint | BcsScale::NinePoint));
                    }
                } else {
                    prop_assert!(matches.is_empty());
                }
            }

            // Every faithful match appears in the extended match set.
            #[test]
            fn extended_is_superset_of_faithful(text in ".{0,120}") {
                let faithful = extract_rule(&text, PatternProfile::Faithful);
                let extended = extract_rule(&text, PatternProfile::Extended);
                for m in &faithful {
                    prop_assert!(contains_span(&extended, m), "lost {m:?} in {text:?}");
                }
            }
        }
    }
}
