use std::collections::BTreeMap;
use std::io::{BufRead, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::consistency::{CheckStage, CrossCheckSample, CrossCheckSet};
use super::vote::VoteRecord;
use crate::error::{Error, Result};
use crate::objective::Emotion;

/// One annotated sample as exchanged between annotation tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    #[serde(default)]
    pub stage: Option<CheckStage>,
    /// Cross-check set the sample belongs to.
    #[serde(default)]
    pub set: Option<String>,
    /// Category the cross-check set was drawn for.
    #[serde(default)]
    pub category: Option<Emotion>,
    #[serde(default)]
    pub prior_label: Option<Emotion>,
    pub votes: Vec<Emotion>,
    #[serde(default)]
    pub confidences: Vec<f64>,
    #[serde(default)]
    pub leader_vote: Option<Emotion>,
    #[serde(default)]
    pub exchange_vote: Option<Emotion>,
    #[serde(default)]
    pub expert_label: Option<Emotion>,
}

impl AnnotationRecord {
    fn three_votes(&self) -> Result<[Emotion; 3]> {
        <[Emotion; 3]>::try_from(self.votes.as_slice()).map_err(|_| {
            Error::invalid(
                "annotation record",
                format!(
                    "{}: expected 3 member votes, found {}",
                    self.sample_id,
                    self.votes.len()
                ),
            )
        })
    }

    pub fn to_vote_record(&self) -> Result<VoteRecord> {
        let v = VoteRecord {
            sample_id: self.sample_id.clone(),
            votes: self.three_votes()?,
            confidences: self.confidences.clone(),
            leader_vote: self.leader_vote,
            exchange_vote: self.exchange_vote,
            expert_label: self.expert_label,
        };
        v.validate()?;
        Ok(v)
    }
}

/// Parses line-delimited JSON; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::invalid("annotation record", format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    sample_id: String,
    #[serde(default)]
    stage: String,
    #[serde(default)]
    set: String,
    #[serde(default)]
    category: String,
    #[serde(default)]
    prior_label: String,
    votes: String,
    #[serde(default)]
    confidences: String,
    #[serde(default)]
    leader_vote: String,
    #[serde(default)]
    exchange_vote: String,
    #[serde(default)]
    expert_label: String,
}

fn list(field: &str) -> impl Iterator<Item = &str> {
    field.split([';', '|']).map(str::trim).filter(|s| !s.is_empty())
}

fn label(field: &str, row: usize) -> Result<Option<Emotion>> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    Emotion::from_name(f)
        .map(Some)
        .ok_or_else(|| Error::invalid("annotation record", format!("row {row}: unknown label {f:?}")))
}

impl CsvRow {
    fn into_record(self, row: usize) -> Result<AnnotationRecord> {
        let stage = match self.stage.trim() {
            "" => None,
            "sA" | "A" | "a" => Some(CheckStage::A),
            "sB" | "B" | "b" => Some(CheckStage::B),
            other => {
                return Err(Error::invalid(
                    "annotation record",
                    format!("row {row}: unknown stage {other:?}"),
                ));
            }
        };
        let votes = list(&self.votes)
            .map(|v| label(v, row)?.ok_or_else(|| Error::invalid("annotation record", "empty vote")))
            .collect::<Result<Vec<_>>>()?;
        let confidences = list(&self.confidences)
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|e| Error::invalid("annotation record", format!("row {row}: confidence {c:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AnnotationRecord {
            sample_id: self.sample_id,
            stage,
            set: Some(self.set.trim().to_string()).filter(|s| !s.is_empty()),
            category: label(&self.category, row)?,
            prior_label: label(&self.prior_label, row)?,
            votes,
            confidences,
            leader_vote: label(&self.leader_vote, row)?,
            exchange_vote: label(&self.exchange_vote, row)?,
            expert_label: label(&self.expert_label, row)?,
        })
    }
}

/// Parses CSV with a header row; list columns separate entries with `;` or `|`.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| row?.into_record(i + 2))
        .collect()
}

/// Reads `.csv` files as CSV and everything else as line-delimited JSON.
pub fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(file)
    } else {
        read_jsonl(std::io::BufReader::new(file))
    }
}

/// Groups the records of one stage into cross-check sets by their `set` field.
///
/// A set's weight class is the number of sets sharing its category.
pub fn cross_check_sets(records: &[AnnotationRecord], stage: CheckStage) -> Result<Vec<CrossCheckSet>> {
    let mut groups: BTreeMap<&str, (Emotion, Vec<CrossCheckSample>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage == Some(stage)) {
        let missing = |what: &str| Error::invalid("cross-check record", format!("{}: missing {what}", r.sample_id));
        let set = r.set.as_deref().ok_or_else(|| missing("set"))?;
        let category = r.category.ok_or_else(|| missing("category"))?;
        let prior = r.prior_label.ok_or_else(|| missing("prior_label"))?;
        let entry = groups.entry(set).or_insert_with(|| (category, Vec::new()));
        if entry.0 != category {
            return Err(Error::invalid(
                "cross-check record",
                format!("set {set} mixes categories"),
            ));
        }
        entry.1.push(CrossCheckSample {
            prior,
            current: r.three_votes()?,
        });
    }
    if groups.is_empty() {
        return Err(Error::Empty("cross-check records for the requested stage"));
    }
    let per_category = |c: Emotion| groups.values().filter(|g| g.0 == c).count();
    Ok(groups
        .values()
        .map(|(category, samples)| CrossCheckSet {
            category: *category,
            stage,
            sets_in_category: per_category(*category),
            samples: samples.clone(),
        })
        .collect())
}
