use serde::{Deserialize, Serialize};

use super::vote::member_majority;
use crate::error::{Error, Result};
use crate::objective::Emotion;

/// Credit for a sample whose resolved label matches the prior label.
pub const MATCH_CREDIT: f64 = 0.7;
/// Credit for a sample that resolves to a different label.
pub const MISMATCH_CREDIT: f64 = 0.3;

/// The two exchange stages of a cross-check round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckStage {
    #[serde(rename = "sA", alias = "A", alias = "a")]
    A,
    #[serde(rename = "sB", alias = "B", alias = "b")]
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckSample {
    pub prior: Emotion,
    pub current: [Emotion; 3],
}

impl CrossCheckSample {
    /// Current labels equal to the prior label.
    pub fn matches(&self) -> usize {
        self.current.iter().filter(|&&c| c == self.prior).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckSet {
    pub category: Emotion,
    pub stage: CheckStage,
    /// Number of sets drawn for this category in the stage; the set weight is its inverse.
    pub sets_in_category: usize,
    pub samples: Vec<CrossCheckSample>,
}

/// Aggregate counts of one set for the inter-group score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetTally {
    pub weight: f64,
    pub m: usize,
    /// Samples whose majority label equals the prior label.
    pub matched: usize,
    /// Samples whose three labels all differ.
    pub more: usize,
}

impl CrossCheckSet {
    pub fn weight(&self) -> Result<f64> {
        match self.sets_in_category {
            1..=3 => Ok(1.0 / self.sets_in_category as f64),
            n => Err(Error::Config(format!(
                "{n} sets for one category has no defined weight"
            ))),
        }
    }

    pub fn tally(&self) -> Result<SetTally> {
        let mut matched = 0;
        let mut more = 0;
        for s in &self.samples {
            match member_majority(&s.current) {
                Some(l) if l == s.prior => matched += 1,
                Some(_) => {}
                None => more += 1,
            }
        }
        Ok(SetTally {
            weight: self.weight()?,
            m: self.samples.len(),
            matched,
            more,
        })
    }
}

/// Mean over sets of the fraction of current labels agreeing with the prior label.
pub fn intra_consistency(sets: &[CrossCheckSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Empty("cross-check sets"));
    }
    let mut total = 0.0;
    for set in sets {
        if set.samples.is_empty() {
            return Err(Error::Empty("cross-check set samples"));
        }
        let c: usize = set.samples.iter().map(CrossCheckSample::matches).sum();
        total += c as f64 / (3 * set.samples.len()) as f64;
    }
    Ok(total / sets.len() as f64)
}

/// `(1/c) * sum_i w_i (0.7 C_i + 0.3 (m - C_i - M_i))` over per-set tallies.
pub fn inter_consistency_from_tallies(tallies: &[SetTally], categories: usize) -> Result<f64> {
    if tallies.is_empty() {
        return Err(Error::Empty("cross-check sets"));
    }
    if categories == 0 {
        return Err(Error::Config("category count must be positive".into()));
    }
    let mut total = 0.0;
    for t in tallies {
        if t.matched + t.more > t.m {
            return Err(Error::invalid(
                "inter_consistency",
                format!("matched {} + more {} exceeds m {}", t.matched, t.more, t.m),
            ));
        }
        let rest = (t.m - t.matched - t.more) as f64;
        total += t.weight * (MATCH_CREDIT * t.matched as f64 + MISMATCH_CREDIT * rest);
    }
    Ok(total / categories as f64)
}

/// Inter-group consistency of one stage.
///
/// Each category must be covered by exactly as many sets as every one of its sets
/// declares, and the number of covered categories must equal `categories`.
pub fn inter_consistency(sets: &[CrossCheckSet], categories: usize) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Empty("cross-check sets"));
    }
    let mut covered: Vec<Emotion> = Vec::new();
    for set in sets {
        let n = sets.iter().filter(|s| s.category == set.category).count();
        if n != set.sets_in_category {
            return Err(Error::Config(format!(
                "{} declares {} sets but {n} are present",
                set.category.name(),
                set.sets_in_category
            )));
        }
        if !covered.contains(&set.category) {
            covered.push(set.category);
        }
    }
    if covered.len() != categories {
        return Err(Error::Config(format!(
            "sets cover {} categories, expected {categories}",
            covered.len()
        )));
    }
    let mut total = 0.0;
    for &cat in &covered {
        let tallies = sets
            .iter()
            .filter(|s| s.category == cat)
            .map(CrossCheckSet::tally)
            .collect::<Result<Vec<_>>>()?;
        let unit: Vec<SetTally> = tallies.iter().map(|t| SetTally { weight: 1.0, ..*t }).collect();
        total += inter_consistency_from_tallies(&unit, tallies.len())?;
    }
    Ok(total / categories as f64)
}

/// Sets-per-category of a stage: three for Neutral, two for Excitation, one for the rest.
pub fn standard_stage_layout() -> Vec<(Emotion, usize)> {
    Emotion::ALL
        .iter()
        .map(|&e| {
            let n = match e {
                Emotion::Neutral => 3,
                Emotion::Excitation => 2,
                _ => 1,
            };
            (e, n)
        })
        .collect()
}
