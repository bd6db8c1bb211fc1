//! Corpus files: CSV and JSONL ingestion with integrity checks, plus the
//! matching writers.
//!
//! Columns are `id,text` with an optional gold block
//! `gold_has_overweight_bcs,gold_vet_overweight,gold_score,gold_scale`;
//! JSONL mirrors the field names. Gold columns are all-or-none per file.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    parse_score_token, BcsObservation, BcsScale, ClinicalNarrative, DomainError, GoldLabel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from a file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: invalid JSON record: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("gold columns must be all present or all absent; missing {0:?}")]
    PartialGoldColumns(&'static str),
    #[error("line {line}: record id must not be empty")]
    EmptyId { line: usize },
    #[error("duplicate id {id:?} at lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: gold fields must be all present or all absent within a file")]
    MixedGold { line: usize },
    #[error("line {line}: field {field} must be \"true\" or \"false\", got {value:?}")]
    BadBool {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: bad gold_score: {source}")]
    BadScore { line: usize, source: DomainError },
    #[error("line {line}: gold_scale must be \"5\" or \"9\", got {value:?}")]
    BadScale { line: usize, value: String },
    #[error("line {line}: gold_score requires gold_scale (and vice versa)")]
    ScoreScaleMismatch { line: usize },
    #[error("line {line}: {source}")]
    Domain { line: usize, source: DomainError },
}

/// One corpus row: a narrative and, when the file carries annotations, its
/// gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub narrative: ClinicalNarrative,
    pub gold: Option<GoldLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub format: CorpusFormat,
    pub records: Vec<CorpusRecord>,
}

impl CorpusFile {
    pub fn has_gold(&self) -> bool {
        self.records.first().is_some_and(|r| r.gold.is_some())
    }

    pub fn gold_labels(&self) -> Option<Vec<GoldLabel>> {
        self.records
            .iter()
            .map(|r| r.gold.clone())
            .collect::<Option<Vec<_>>>()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Read and validate a corpus file.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<CorpusFile, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    // Tolerate a UTF-8 byte-order mark.
    let bytes = bytes.strip_prefix(b"\xef\xbb\xbf").unwrap_or(&bytes);
    match format {
        CorpusFormat::Csv => parse_csv(bytes),
        CorpusFormat::Jsonl => parse_jsonl(bytes),
    }
}

struct RowGold {
    has_overweight_bcs: bool,
    vet_described_overweight: bool,
    score: Option<String>,
    scale: Option<String>,
}

fn parse_bool(value: &str, field: &'static str, line: usize) -> Result<bool, CorpusError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CorpusError::BadBool {
            line,
            field,
            value: other.to_string(),
        }),
    }
}

fn build_gold(
    narrative_id: &str,
    row: RowGold,
    line: usize,
) -> Result<GoldLabel, CorpusError> {
    let reference_score = match (row.score.as_deref(), row.scale.as_deref()) {
        (None, None) => None,
        (Some(score), Some(scale)) => {
            let token =
                parse_score_token(score).map_err(|source| CorpusError::BadScore { line, source })?;
            let scale = match scale {
                "5" => BcsScale::FivePoint,
                "9" => BcsScale::NinePoint,
                other => {
                    return Err(CorpusError::BadScale {
                        line,
                        value: other.to_string(),
                    })
                }
            };
            Some(
                BcsObservation::from_token(token, scale, None)
                    .map_err(|source| CorpusError::Domain { line, source })?,
            )
        }
        _ => return Err(CorpusError::ScoreScaleMismatch { line }),
    };
    let label = GoldLabel {
        narrative_id: narrative_id.to_string(),
        has_overweight_bcs: row.has_overweight_bcs,
        vet_described_overweight: row.vet_described_overweight,
        reference_score,
    };
    label
        .validate()
        .map_err(|source| CorpusError::Domain { line, source })?;
    Ok(label)
}

const GOLD_COLUMNS: [&str; 4] = [
    "gold_has_overweight_bcs",
    "gold_vet_overweight",
    "gold_score",
    "gold_scale",
];

fn parse_csv(bytes: &[u8]) -> Result<CorpusFile, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);

    let id_idx = column("id").ok_or(CorpusError::MissingColumn("id"))?;
    let text_idx = column("text").ok_or(CorpusError::MissingColumn("text"))?;
    let gold_idx: Vec<Option<usize>> = GOLD_COLUMNS.iter().map(|c| column(c)).collect();
    let gold_present = gold_idx.iter().any(Option::is_some);
    if gold_present {
        for (idx, name) in gold_idx.iter().zip(GOLD_COLUMNS) {
            if idx.is_none() {
                return Err(CorpusError::PartialGoldColumns(name));
            }
        }
    }

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let id = row.get(id_idx).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(CorpusError::EmptyId { line });
        }
        if let Some(first_line) = seen.insert(id.clone(), line) {
            return Err(CorpusError::DuplicateId {
                id,
                first_line,
                second_line: line,
            });
        }
        let text = row.get(text_idx).unwrap_or_default().to_string();
        let narrative = ClinicalNarrative::new(id.clone(), text)
            .map_err(|source| CorpusError::Domain { line, source })?;
        let gold = if gold_present {
            let field = |i: usize| row.get(gold_idx[i].unwrap()).unwrap_or_default();
            let non_empty = |s: &str| (!s.is_empty()).then(|| s.to_string());
            Some(build_gold(
                &id,
                RowGold {
                    has_overweight_bcs: parse_bool(field(0), "gold_has_overweight_bcs", line)?,
                    vet_described_overweight: parse_bool(field(1), "gold_vet_overweight", line)?,
                    score: non_empty(field(2)),
                    scale: non_empty(field(3)),
                },
                line,
            )?)
        } else {
            None
        };
        records.push(CorpusRecord { narrative, gold });
    }
    Ok(CorpusFile {
        format: CorpusFormat::Csv,
        records,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRow {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_has_overweight_bcs: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_vet_overweight: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_scale: Option<String>,
}

fn parse_jsonl(bytes: &[u8]) -> Result<CorpusFile, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Io {
        path: "<jsonl>".to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut file_has_gold: Option<bool> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow =
            serde_json::from_str(raw_line).map_err(|source| CorpusError::Json { line, source })?;
        if row.id.is_empty() {
            return Err(CorpusError::EmptyId { line });
        }
        if let Some(first_line) = seen.insert(row.id.clone(), line) {
            return Err(CorpusError::DuplicateId {
                id: row.id,
                first_line,
                second_line: line,
            });
        }
        let row_has_gold = match (row.gold_has_overweight_bcs, row.gold_vet_overweight) {
            (Some(_), Some(_)) => true,
            (None, None) => {
                if row.gold_score.is_some() || row.gold_scale.is_some() {
                    return Err(CorpusError::MixedGold { line });
                }
                false
            }
            _ => return Err(CorpusError::MixedGold { line }),
        };
        match file_has_gold {
            None => file_has_gold = Some(row_has_gold),
            Some(expected) if expected != row_has_gold => {
                return Err(CorpusError::MixedGold { line })
            }
            _ => {}
        }
        let narrative = ClinicalNarrative::new(row.id.clone(), row.text.clone())
            .map_err(|source| CorpusError::Domain { line, source })?;
        let gold = if row_has_gold {
            Some(build_gold(
                &row.id,
                RowGold {
                    has_overweight_bcs: row.gold_has_overweight_bcs.unwrap(),
                    vet_described_overweight: row.gold_vet_overweight.unwrap(),
                    score: row.gold_score,
                    scale: row.gold_scale,
                },
                line,
            )?)
        } else {
            None
        };
        records.push(CorpusRecord { narrative, gold });
    }
    Ok(CorpusFile {
        format: CorpusFormat::Jsonl,
        records,
    })
}

fn gold_fields(gold: &GoldLabel) -> (String, String, String, String) {
    let (score, scale) = match &gold.reference_score {
        Some(obs) => (
            obs.score_text(),
            match obs.scale {
                BcsScale::FivePoint => "5".to_string(),
                BcsScale::NinePoint => "9".to_string(),
            },
        ),
        None => (String::new(), String::new()),
    };
    (
        gold.has_overweight_bcs.to_string(),
        gold.vet_described_overweight.to_string(),
        score,
        scale,
    )
}

/// Write a corpus in its own format. Gold columns are emitted when every
/// record carries a label.
pub fn write_corpus(corpus: &CorpusFile, path: &Path) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let with_gold = corpus.has_gold();
    match corpus.format {
        CorpusFormat::Csv => {
            let mut writer = csv::Writer::from_path(path)?;
            if with_gold {
                let mut header = vec!["id", "text"];
                header.extend(GOLD_COLUMNS);
                writer.write_record(&header)?;
            } else {
                writer.write_record(["id", "text"])?;
            }
            for record in &corpus.records {
                let id = &record.narrative.id;
                let text = &record.narrative.text;
                match (&record.gold, with_gold) {
                    (Some(gold), true) => {
                        let (has, vet, score, scale) = gold_fields(gold);
                        writer.write_record([id, text, &has, &vet, &score, &scale])?;
                    }
                    _ => writer.write_record([id, text])?,
                }
            }
            writer.flush().map_err(io_err)?;
        }
        CorpusFormat::Jsonl => {
            let file = fs::File::create(path).map_err(io_err)?;
            let mut out = std::io::BufWriter::new(file);
            for record in &corpus.records {
                let row = match &record.gold {
                    Some(gold) => {
                        let (_, _, score, scale) = gold_fields(gold);
                        JsonlRow {
                            id: record.narrative.id.clone(),
                            text: record.narrative.text.clone(),
                            gold_has_overweight_bcs: Some(gold.has_overweight_bcs),
                            gold_vet_overweight: Some(gold.vet_described_overweight),
                            gold_score: (!score.is_empty()).then_some(score),
                            gold_scale: (!scale.is_empty()).then_some(scale),
                        }
                    }
                    None => JsonlRow {
                        id: record.narrative.id.clone(),
                        text: record.narrative.text.clone(),
                        gold_has_overweight_bcs: None,
                        gold_vet_overweight: None,
                        gold_score: None,
                        gold_scale: None,
                    },
                };
                serde_json::to_writer(&mut out, &row).map_err(|e| CorpusError::Io {
                    path: path.display().to_string(),
                    source: e.into(),
                })?;
                out.write_all(b"\n").map_err(io_err)?;
            }
            out.flush().map_err(io_err)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &[u8], ext: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(format!("corpus.{ext}")), content).unwrap();
        dir
    }

    #[test]
    fn happy_path_csv() {
        let dir = write_temp(b"id,text\nn1,BCS 6/9\nn2,healthy\nn3,\"line one\nline two\"\n", "csv");
        let corpus = ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv).unwrap();
        assert_eq!(corpus.len(), 3);
        assert!(!corpus.has_gold());
        assert_eq!(corpus.records[2].narrative.text, "line one\nline two");
    }

    #[test]
    fn bom_is_tolerated() {
        let dir = write_temp(b"\xef\xbb\xbfid,text\nn1,ok\n", "csv");
        let corpus = ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv).unwrap();
        assert_eq!(corpus.records[0].narrative.id, "n1");
    }

    #[test]
    fn duplicate_ids_name_both_lines() {
        let dir = write_temp(b"id,text\nn1,a\nn2,b\nn1,c\n", "csv");
        let err = ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv).unwrap_err();
        match err {
            CorpusError::DuplicateId { id, first_line, second_line } => {
                assert_eq!(id, "n1");
                assert_eq!(first_line, 2);
                assert_eq!(second_line, 4);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_columns_are_reported() {
        let dir = write_temp(b"identifier,text\nn1,a\n", "csv");
        assert!(matches!(
            ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv),
            Err(CorpusError::MissingColumn("id"))
        ));
    }

    #[test]
    fn partial_gold_block_is_rejected() {
        let dir = write_temp(b"id,text,gold_has_overweight_bcs\nn1,a,true\n", "csv");
        assert!(matches!(
            ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv),
            Err(CorpusError::PartialGoldColumns(_))
        ));
    }

    #[test]
    fn gold_rows_build_labels() {
        let dir = write_temp(
            b"id,text,gold_has_overweight_bcs,gold_vet_overweight,gold_score,gold_scale\nn1,BCS 7/9,true,true,7,9\nn2,fine,false,false,,\n",
            "csv",
        );
        let corpus = ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv).unwrap();
        assert!(corpus.has_gold());
        let gold = corpus.records[0].gold.as_ref().unwrap();
        assert!(gold.has_overweight_bcs);
        assert!(gold.reference_score.as_ref().unwrap().is_overweight());
        assert!(corpus.records[1].gold.as_ref().unwrap().reference_score.is_none());
    }

    #[test]
    fn contradictory_gold_is_rejected_with_line() {
        let dir = write_temp(
            b"id,text,gold_has_overweight_bcs,gold_vet_overweight,gold_score,gold_scale\nn1,BCS 4/9,true,false,4,9\n",
            "csv",
        );
        let err = ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv).unwrap_err();
        assert!(matches!(err, CorpusError::Domain { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn jsonl_round_trips_through_writer() {
        let corpus = CorpusFile {
            format: CorpusFormat::Jsonl,
            records: vec![
                CorpusRecord {
                    narrative: ClinicalNarrative::new("n1", "BCS: 6-7 out of 9").unwrap(),
                    gold: Some(GoldLabel {
                        narrative_id: "n1".into(),
                        has_overweight_bcs: true,
                        vet_described_overweight: false,
                        reference_score: Some(
                            BcsObservation::from_token(
                                parse_score_token("6-7").unwrap(),
                                BcsScale::NinePoint,
                                None,
                            )
                            .unwrap(),
                        ),
                    }),
                },
                CorpusRecord {
                    narrative: ClinicalNarrative::new("n2", "pay now").unwrap(),
                    gold: Some(GoldLabel {
                        narrative_id: "n2".into(),
                        has_overweight_bcs: false,
                        vet_described_overweight: false,
                        reference_score: None,
                    }),
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&corpus, &path).unwrap();
        let back = ingest(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(back.records, corpus.records);
    }

    #[test]
    fn csv_gold_round_trips_through_writer() {
        let corpus = CorpusFile {
            format: CorpusFormat::Csv,
            records: vec![CorpusRecord {
                narrative: ClinicalNarrative::new("n1", "text with, comma and \"quotes\"").unwrap(),
                gold: Some(GoldLabel {
                    narrative_id: "n1".into(),
                    has_overweight_bcs: true,
                    vet_described_overweight: true,
                    reference_score: Some(
                        BcsObservation::new(
                            "3.5".parse().unwrap(),
                            None,
                            BcsScale::FivePoint,
                            None,
                        )
                        .unwrap(),
                    ),
                }),
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.csv");
        write_corpus(&corpus, &path).unwrap();
        let back = ingest(&path, CorpusFormat::Csv).unwrap();
        assert_eq!(back.records, corpus.records);
    }

    #[test]
    fn mixed_gold_presence_in_jsonl_is_rejected() {
        let dir = write_temp(
            br#"{"id":"n1","text":"a","gold_has_overweight_bcs":false,"gold_vet_overweight":false}
{"id":"n2","text":"b"}
"#,
            "jsonl",
        );
        let err = ingest(&dir.path().join("corpus.jsonl"), CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::MixedGold { line: 2 }), "{err:?}");
    }

    #[test]
    fn bad_bool_reports_line_and_field() {
        let dir = write_temp(
            b"id,text,gold_has_overweight_bcs,gold_vet_overweight,gold_score,gold_scale\nn1,a,yes,false,,\n",
            "csv",
        );
        let err = ingest(&dir.path().join("corpus.csv"), CorpusFormat::Csv).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::BadBool { line: 2, field: "gold_has_overweight_bcs", .. }
        ));
    }
}
