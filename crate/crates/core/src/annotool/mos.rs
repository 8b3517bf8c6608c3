use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arithmetic mean of 1..=5 quality ratings.
pub fn mos_aggregate(ratings: &[u8]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::Empty("MOS ratings"));
    }
    if let Some(r) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(Error::invalid("mos_aggregate", format!("rating {r} outside 1..=5")));
    }
    Ok(ratings.iter().map(|&r| f64::from(r)).sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosEntry {
    pub dataset: String,
    pub ratings: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosReport {
    pub dataset: String,
    pub raters: usize,
    pub mos: f64,
}

pub fn mos_report(entries: &[MosEntry]) -> Result<Vec<MosReport>> {
    entries
        .iter()
        .map(|e| {
            Ok(MosReport {
                dataset: e.dataset.clone(),
                raters: e.ratings.len(),
                mos: mos_aggregate(&e.ratings)?,
            })
        })
        .collect()
}
