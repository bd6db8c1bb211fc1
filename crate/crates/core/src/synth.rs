//! Deterministic synthetic corpus generator.
//!
//! Emits narratives built from the documented notation inventory together
//! with gold labels and matched replay fixtures that emulate the known
//! model failure modes: hallucinated scores from lameness/weight decoys,
//! overweight assertions without a recorded BCS, conversational
//! non-answers on very short records, and off-task appended chatter.
//!
//! Category counts are quota-based (rounded from the configured rates), so
//! a run at the full reference size reproduces the reference tallies
//! exactly; everything else is drawn from a seeded RNG and is byte-stable
//! for a given seed.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{write_corpus, CorpusError, CorpusFile, CorpusFormat, CorpusRecord};
use crate::domain::{
    BcsObservation, BcsScale, ClinicalNarrative, DomainError, GoldLabel, Score,
};
use crate::llm::prompt::{BASELINE_VARIANT, PLUS_EXCLUSIONS_VARIANT};
use crate::llm::replay::{write_fixtures, FixtureEntry};
use crate::rules::{overweight_hits, PatternProfile};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("corpus size must be at least 1")]
    EmptySize,
    #[error("{field} must lie in [0, 1], got {value}")]
    BadRate { field: &'static str, value: f64 },
    #[error("category quotas ({special}) exceed corpus size {size}; lower the rates")]
    RatesExceedSize { special: usize, size: usize },
    #[error("generated record {id} failed its gold self-check")]
    SelfCheck { id: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("failed to write fixtures: {0}")]
    Io(#[from] std::io::Error),
}

/// Generator settings. The rate defaults are calibrated so that a corpus
/// of 4,415 records reproduces the reference taxonomy counts exactly
/// (117 positives, 14 decoy hallucinations, 40+21 assertion-only
/// overweights, 29 no-answers of which 27 are under 23 characters).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub size: usize,
    /// Share of records containing an overweight BCS.
    pub prevalence: f64,
    pub format: CorpusFormat,
    /// Of the positives, share written in formats the faithful profile misses.
    pub extended_only_share: f64,
    /// Share of records that are lameness/weight decoys the baseline model
    /// hallucinates into BCSs.
    pub decoy_rate: f64,
    /// Share of records described as overweight by the vet with no BCS.
    pub vet_overweight_rate: f64,
    /// Share of records whose normal BCS the model wrongly asserts as overweight.
    pub misreport_rate: f64,
    /// Share of records drawing a conversational non-answer.
    pub no_answer_rate: f64,
    /// Of the no-answer records, share under 23 characters.
    pub short_no_answer_share: f64,
    /// Of the positives, share whose response carries appended chatter.
    pub extraneous_share: f64,
    /// Of the positives, share whose response also asserts overweight.
    pub asserted_share: f64,
    /// Of the remaining plain records, share containing a normal BCS.
    pub normal_bcs_share: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, size: usize, prevalence: f64, format: CorpusFormat) -> Self {
        SynthConfig {
            seed,
            size,
            prevalence,
            format,
            extended_only_share: 32.0 / 117.0,
            decoy_rate: 14.0 / 4415.0,
            vet_overweight_rate: 40.0 / 4415.0,
            misreport_rate: 21.0 / 4415.0,
            no_answer_rate: 29.0 / 4415.0,
            short_no_answer_share: 27.0 / 29.0,
            extraneous_share: 12.0 / 117.0,
            asserted_share: 89.0 / 117.0,
            normal_bcs_share: 0.12,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.size == 0 {
            return Err(SynthError::EmptySize);
        }
        let rates = [
            ("prevalence", self.prevalence),
            ("extended_only_share", self.extended_only_share),
            ("decoy_rate", self.decoy_rate),
            ("vet_overweight_rate", self.vet_overweight_rate),
            ("misreport_rate", self.misreport_rate),
            ("no_answer_rate", self.no_answer_rate),
            ("short_no_answer_share", self.short_no_answer_share),
            ("extraneous_share", self.extraneous_share),
            ("asserted_share", self.asserted_share),
            ("normal_bcs_share", self.normal_bcs_share),
        ];
        for (field, value) in rates {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(SynthError::BadRate { field, value });
            }
        }
        Ok(())
    }
}

/// A generated corpus with its matched replay fixtures (both built-in
/// prompt variants).
#[derive(Debug)]
pub struct SynthOutput {
    pub corpus: CorpusFile,
    pub fixtures: Vec<FixtureEntry>,
}

#[derive(Debug, Clone, Copy)]
enum Category {
    Positive {
        extended_only: bool,
        extraneous: bool,
        asserted: bool,
    },
    Decoy,
    VetOverweight,
    Misreport,
    NoAnswer {
        short: bool,
    },
    Plain {
        with_normal_bcs: bool,
    },
}

fn quota(size: usize, rate: f64) -> usize {
    (size as f64 * rate).round() as usize
}

fn pick_flags(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<bool> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let mut flags = vec![false; n];
    for &i in indices.iter().take(k.min(n)) {
        flags[i] = true;
    }
    flags
}

fn pick<'a, T: ?Sized>(rng: &mut ChaCha8Rng, pool: &'a [&'a T]) -> &'a T {
    pool[rng.random_range(0..pool.len())]
}

// Notation templates the faithful profile recognises.
const FAITHFUL_TEMPLATES: &[&str] = &[
    "BCS {v}/{d}",
    "bcs {v}/{d}",
    "B.C.S. {v}/{d}",
    "BCS={v}/{d}",
    "body condition score {v}/{d}",
    "BCS {v} out of {d}",
    "BCS {lo}-{hi}/{d}",
];

// Formats only the extended profile recognises (colon separation, ranged
// "out of").
const EXTENDED_ONLY_TEMPLATES: &[&str] = &[
    "BCS: {v}/{d}",
    "BCS: {lo}-{hi} out of {d}",
    "body condition: {v}/{d}",
    "BCS: {v} out of {d}",
];

const PREFIXES: &[&str] = &["", "o/e ", "annual check. ", "repeat exam. ", "wt stable. "];
const SUFFIXES: &[&str] = &[
    "",
    " discussed diet",
    " advised weight clinic",
    " recheck 3m",
    " owner aware",
];

const CHATTER: &[&str] = &[
    "Last WORM and FLEA treatments?",
    "Possible dietary indiscretion.",
    "Owner keen on home cooking.",
];

const VET_OVERWEIGHT_TEXTS: &[&str] = &[
    "she is overweight, discussed diet",
    "overweight on exam, reduce feed",
    "o reports weight gain, overweight",
    "normal on clinical exam apart from overweight",
];

const SHORT_TEXTS: &[&str] = &[
    "pay now",
    "all ok sign off",
    "ok",
    "no show",
    "rebook",
    "meds collected",
    "see notes",
];

const LONG_NO_ANSWER_TEXTS: &[&str] = &[
    "owner will telephone later this week to rebook the annual check",
    "discussed blood results at length with owner by telephone",
];

const NO_ANSWER_RESPONSES: &[&str] = &[
    "Hello! How can I assist you today?",
    "Hi there! How can I help?",
];

const PLAIN_TEXTS: &[&str] = &[
    "bright alert responsive, no concerns",
    "vaccination given, flea and worm treatment dispensed",
    "murmur grade 3/6 stable, recheck 6 months",
    "ears cleaned, drops dispensed",
    "nails clipped, all fine",
    "dental scale and polish booked",
    "post op check, wound healing well",
];

const NORMAL_BCS_TEMPLATES: &[&str] = &[
    "BCS {v}/{d} otherwise well",
    "bcs {v}/{d}, all fine",
    "body condition score {v}/{d} stable",
];

const MISREPORT_TEMPLATES: &[&str] = &[
    "BCS {v}/{d} would benefit from further weight loss",
    "BCS {v}/{d}, mild weight gain discussed",
    "BCS {v}/{d} diet plan continued",
];

const LAMENESS_TEMPLATES: &[&str] = &["{n}/10 lameness LH", "{n}/10 lameness on exam", "lameness score {n}/10"];
const WEIGHT_TEMPLATES: &[&str] = &["wt {w}kg", "wt {w}kg stable", "weight {w}kg"];

// Score pools in hundredths.
const NINE_OVERWEIGHT: &[i64] = &[600, 650, 700, 750, 800, 900];
const NINE_OVERWEIGHT_RANGES: &[(i64, i64)] = &[(600, 700), (650, 750), (700, 800)];
const FIVE_OVERWEIGHT: &[i64] = &[350, 400, 450, 500];
const FIVE_OVERWEIGHT_RANGES: &[(i64, i64)] = &[(350, 450), (400, 500)];
const NINE_NORMAL: &[i64] = &[200, 300, 400, 450, 500, 575];
const FIVE_NORMAL: &[i64] = &[200, 250, 300];
const LAMENESS_GRADES: &[i64] = &[600, 700, 800, 900];
const WEIGHTS_KG: &[i64] = &[665, 720, 845, 610];

struct GeneratedRecord {
    text: String,
    gold: GoldLabel,
    baseline_response: String,
    exclusions_response: String,
}

fn render(template: &str, value: Score, high: Option<Score>, scale: BcsScale) -> String {
    let mut out = template.to_string();
    out = out.replace("{v}", &value.to_string());
    if let Some(high) = high {
        out = out.replace("{lo}", &value.to_string());
        out = out.replace("{hi}", &high.to_string());
    }
    out.replace("{d}", &scale.denominator().to_string())
}

fn score_response(observation: &BcsObservation, asserted: bool) -> String {
    let den = observation.scale.denominator();
    let verdict = if asserted {
        " BCS overweight."
    } else if observation.is_overweight() {
        ""
    } else {
        " Not overweight."
    };
    format!("BCS {}/{}.{verdict}", observation.score_text(), den)
}

fn gen_record(
    rng: &mut ChaCha8Rng,
    id: &str,
    category: Category,
) -> Result<GeneratedRecord, SynthError> {
    let gold = |has: bool, vet: bool, reference: Option<BcsObservation>| GoldLabel {
        narrative_id: id.to_string(),
        has_overweight_bcs: has,
        vet_described_overweight: vet,
        reference_score: reference,
    };
    match category {
        Category::Positive {
            extended_only,
            extraneous,
            asserted,
        } => {
            let scale = if rng.random_bool(0.7) {
                BcsScale::NinePoint
            } else {
                BcsScale::FivePoint
            };
            let template = if extended_only {
                pick(rng, EXTENDED_ONLY_TEMPLATES)
            } else {
                pick(rng, FAITHFUL_TEMPLATES)
            };
            let ranged = template.contains("{lo}");
            let (value, high) = if ranged {
                let ranges = match scale {
                    BcsScale::NinePoint => NINE_OVERWEIGHT_RANGES,
                    BcsScale::FivePoint => FIVE_OVERWEIGHT_RANGES,
                };
                let (lo, hi) = ranges[rng.random_range(0..ranges.len())];
                (Score::from_hundredths(lo), Some(Score::from_hundredths(hi)))
            } else {
                let pool = match scale {
                    BcsScale::NinePoint => NINE_OVERWEIGHT,
                    BcsScale::FivePoint => FIVE_OVERWEIGHT,
                };
                (
                    Score::from_hundredths(pool[rng.random_range(0..pool.len())]),
                    None,
                )
            };
            let observation = BcsObservation::new(value, high, scale, None)?;
            let notation = render(template, value, high, scale);
            let text = format!(
                "{}{}{}",
                pick(rng, PREFIXES),
                notation,
                pick(rng, SUFFIXES)
            );
            let mut response = score_response(&observation, asserted);
            if extraneous {
                response.push(' ');
                response.push_str(pick(rng, CHATTER));
            }
            let vet = rng.random_bool(0.5);
            Ok(GeneratedRecord {
                text,
                gold: gold(true, vet, Some(observation)),
                exclusions_response: response.clone(),
                baseline_response: response,
            })
        }
        Category::Decoy => {
            let (text, hallucinated) = if rng.random_bool(0.5) {
                let grade = Score::from_hundredths(
                    LAMENESS_GRADES[rng.random_range(0..LAMENESS_GRADES.len())],
                );
                let text = pick(rng, LAMENESS_TEMPLATES).replace("{n}", &grade.to_string());
                (text, grade)
            } else {
                let weight =
                    Score::from_hundredths(WEIGHTS_KG[rng.random_range(0..WEIGHTS_KG.len())]);
                let text = pick(rng, WEIGHT_TEMPLATES).replace("{w}", &weight.to_string());
                (text, weight)
            };
            Ok(GeneratedRecord {
                text,
                gold: gold(false, false, None),
                baseline_response: format!("BCS {hallucinated}/9. BCS overweight."),
                exclusions_response: "No BCS recorded. Not overweight.".to_string(),
            })
        }
        Category::VetOverweight => Ok(GeneratedRecord {
            text: pick(rng, VET_OVERWEIGHT_TEXTS).to_string(),
            gold: gold(false, true, None),
            baseline_response: "No BCS recorded. BCS overweight.".to_string(),
            exclusions_response: "No BCS recorded. BCS overweight.".to_string(),
        }),
        Category::Misreport => {
            let pool = NINE_NORMAL;
            let value = Score::from_hundredths(pool[rng.random_range(0..pool.len())]);
            let observation = BcsObservation::new(value, None, BcsScale::NinePoint, None)?;
            let text = render(
                pick(rng, MISREPORT_TEMPLATES),
                value,
                None,
                BcsScale::NinePoint,
            );
            let response = format!("BCS {value}/9. BCS overweight.");
            Ok(GeneratedRecord {
                text,
                gold: gold(false, false, Some(observation)),
                baseline_response: response.clone(),
                exclusions_response: response,
            })
        }
        Category::NoAnswer { short } => {
            let text = if short {
                pick(rng, SHORT_TEXTS)
            } else {
                pick(rng, LONG_NO_ANSWER_TEXTS)
            };
            let response = pick(rng, NO_ANSWER_RESPONSES).to_string();
            Ok(GeneratedRecord {
                text: text.to_string(),
                gold: gold(false, false, None),
                baseline_response: response.clone(),
                exclusions_response: response,
            })
        }
        Category::Plain { with_normal_bcs } => {
            if with_normal_bcs {
                let scale = if rng.random_bool(0.7) {
                    BcsScale::NinePoint
                } else {
                    BcsScale::FivePoint
                };
                let pool = match scale {
                    BcsScale::NinePoint => NINE_NORMAL,
                    BcsScale::FivePoint => FIVE_NORMAL,
                };
                let value = Score::from_hundredths(pool[rng.random_range(0..pool.len())]);
                let observation = BcsObservation::new(value, None, scale, None)?;
                let text = render(pick(rng, NORMAL_BCS_TEMPLATES), value, None, scale);
                let response = score_response(&observation, false);
                Ok(GeneratedRecord {
                    text,
                    gold: gold(false, false, Some(observation)),
                    baseline_response: response.clone(),
                    exclusions_response: response,
                })
            } else {
                Ok(GeneratedRecord {
                    text: pick(rng, PLAIN_TEXTS).to_string(),
                    gold: gold(false, false, None),
                    baseline_response: "No BCS recorded. Not overweight.".to_string(),
                    exclusions_response: "No BCS recorded. Not overweight.".to_string(),
                })
            }
        }
    }
}

/// Generate a corpus, gold labels, and matched replay fixtures, fully
/// determined by the seed.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let size = config.size;
    let positives = quota(size, config.prevalence);
    let decoys = quota(size, config.decoy_rate);
    let vet_overweight = quota(size, config.vet_overweight_rate);
    let misreports = quota(size, config.misreport_rate);
    let no_answers = quota(size, config.no_answer_rate);
    let special = positives + decoys + vet_overweight + misreports + no_answers;
    if special > size {
        return Err(SynthError::RatesExceedSize { special, size });
    }
    let plain = size - special;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extended_only = pick_flags(&mut rng, positives, quota(positives, config.extended_only_share));
    let extraneous = pick_flags(&mut rng, positives, quota(positives, config.extraneous_share));
    let asserted = pick_flags(&mut rng, positives, quota(positives, config.asserted_share));
    let short = pick_flags(&mut rng, no_answers, quota(no_answers, config.short_no_answer_share));
    let normal_bcs = pick_flags(&mut rng, plain, quota(plain, config.normal_bcs_share));

    let mut categories: Vec<Category> = Vec::with_capacity(size);
    for i in 0..positives {
        categories.push(Category::Positive {
            extended_only: extended_only[i],
            extraneous: extraneous[i],
            asserted: asserted[i],
        });
    }
    categories.extend(std::iter::repeat_n(Category::Decoy, decoys));
    categories.extend(std::iter::repeat_n(Category::VetOverweight, vet_overweight));
    categories.extend(std::iter::repeat_n(Category::Misreport, misreports));
    for i in 0..no_answers {
        categories.push(Category::NoAnswer { short: short[i] });
    }
    for i in 0..plain {
        categories.push(Category::Plain {
            with_normal_bcs: normal_bcs[i],
        });
    }
    categories.shuffle(&mut rng);

    let width = size.to_string().len().max(4);
    let mut records = Vec::with_capacity(size);
    let mut fixtures = Vec::with_capacity(size * 2);
    for (index, category) in categories.into_iter().enumerate() {
        let id = format!("n{:0width$}", index + 1);
        let generated = gen_record(&mut rng, &id, category)?;

        // Self-check: the gold label must hold against the narrative text.
        generated.gold.validate()?;
        if generated.gold.has_overweight_bcs
            != overweight_hits(&generated.text, PatternProfile::Extended)
        {
            return Err(SynthError::SelfCheck { id });
        }

        fixtures.push(FixtureEntry {
            narrative_id: id.clone(),
            variant: BASELINE_VARIANT.to_string(),
            response: generated.baseline_response,
        });
        fixtures.push(FixtureEntry {
            narrative_id: id.clone(),
            variant: PLUS_EXCLUSIONS_VARIANT.to_string(),
            response: generated.exclusions_response,
        });
        records.push(CorpusRecord {
            narrative: ClinicalNarrative::new(id, generated.text)?,
            gold: Some(generated.gold),
        });
    }
    records.sort_by(|a, b| a.narrative.id.cmp(&b.narrative.id));
    fixtures.sort_by(|a, b| {
        (a.narrative_id.as_str(), a.variant.as_str())
            .cmp(&(b.narrative_id.as_str(), b.variant.as_str()))
    });

    Ok(SynthOutput {
        corpus: CorpusFile {
            format: config.format,
            records,
        },
        fixtures,
    })
}

/// File layout produced by [`write_synth_output`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub corpus: PathBuf,
    pub fixtures_dir: PathBuf,
}

/// Write the corpus and fixtures under `dir`.
pub fn write_synth_output(output: &SynthOutput, dir: &Path) -> Result<SynthPaths, SynthError> {
    let corpus_name = match output.corpus.format {
        CorpusFormat::Csv => "corpus.csv",
        CorpusFormat::Jsonl => "corpus.jsonl",
    };
    let corpus_path = dir.join(corpus_name);
    write_corpus(&output.corpus, &corpus_path)?;
    let fixtures_dir = dir.join("fixtures");
    write_fixtures(&fixtures_dir.join("responses.jsonl"), &output.fixtures)?;
    Ok(SynthPaths {
        corpus: corpus_path,
        fixtures_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_deterministic() {
        let config = SynthConfig::new(1, 200, 0.0265, CorpusFormat::Csv);
        let first = generate_synthetic_corpus(&config).unwrap();
        let second = generate_synthetic_corpus(&config).unwrap();
        assert_eq!(first.corpus.records, second.corpus.records);
        assert_eq!(first.fixtures, second.fixtures);

        let other_seed = generate_synthetic_corpus(&SynthConfig::new(2, 200, 0.0265, CorpusFormat::Csv)).unwrap();
        assert_ne!(first.corpus.records, other_seed.corpus.records);
    }

    #[test]
    fn quotas_match_the_spec_example() {
        let config = SynthConfig::new(1, 200, 0.0265, CorpusFormat::Csv);
        let output = generate_synthetic_corpus(&config).unwrap();
        let positives = output
            .corpus
            .records
            .iter()
            .filter(|r| r.gold.as_ref().unwrap().has_overweight_bcs)
            .count();
        assert_eq!(positives, 5); // round(200 * 0.0265)
        assert_eq!(output.corpus.len(), 200);
        assert_eq!(output.fixtures.len(), 400); // both prompt variants
    }

    #[test]
    fn degenerate_sizes_work() {
        let output =
            generate_synthetic_corpus(&SynthConfig::new(7, 1, 0.0, CorpusFormat::Jsonl)).unwrap();
        assert_eq!(output.corpus.len(), 1);
        assert!(!output.corpus.records[0].gold.as_ref().unwrap().has_overweight_bcs);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(matches!(
            generate_synthetic_corpus(&SynthConfig::new(1, 0, 0.5, CorpusFormat::Csv)),
            Err(SynthError::EmptySize)
        ));
        let mut config = SynthConfig::new(1, 10, 1.5, CorpusFormat::Csv);
        assert!(matches!(
            generate_synthetic_corpus(&config),
            Err(SynthError::BadRate { field: "prevalence", .. })
        ));
        config.prevalence = 1.0;
        config.decoy_rate = 1.0;
        assert!(matches!(
            generate_synthetic_corpus(&config),
            Err(SynthError::RatesExceedSize { .. })
        ));
    }

    #[test]
    fn zero_decoy_rate_yields_no_decoys() {
        let mut config = SynthConfig::new(3, 80, 0.1, CorpusFormat::Csv);
        config.decoy_rate = 0.0;
        let output = generate_synthetic_corpus(&config).unwrap();
        for fixture in &output.fixtures {
            // Without decoys no baseline response hallucinates from /10 or kg.
            assert!(!fixture.response.contains("6.65"));
        }
        assert_eq!(output.corpus.len(), 80);
    }

    #[test]
    fn gold_positive_ids_have_matching_overweight_fixtures() {
        let config = SynthConfig::new(5, 300, 0.05, CorpusFormat::Csv);
        let output = generate_synthetic_corpus(&config).unwrap();
        for record in &output.corpus.records {
            let gold = record.gold.as_ref().unwrap();
            if gold.has_overweight_bcs {
                let fixture = output
                    .fixtures
                    .iter()
                    .find(|f| {
                        f.narrative_id == record.narrative.id && f.variant == BASELINE_VARIANT
                    })
                    .unwrap();
                assert!(fixture.response.starts_with("BCS "), "{}", fixture.response);
            }
        }
    }

    #[test]
    fn writes_corpus_and_fixture_files() {
        let dir = tempfile::tempdir().unwrap();
        let output =
            generate_synthetic_corpus(&SynthConfig::new(1, 25, 0.1, CorpusFormat::Jsonl)).unwrap();
        let paths = write_synth_output(&output, dir.path()).unwrap();
        assert!(paths.corpus.ends_with("corpus.jsonl"));
        assert!(paths.fixtures_dir.join("responses.jsonl").exists());
    }
}
