use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Emotion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub sample_id: String,
    pub votes: [Emotion; 3],
    /// Self-reported confidence per member vote; recorded, never used for resolution.
    #[serde(default)]
    pub confidences: Vec<f64>,
    #[serde(default)]
    pub leader_vote: Option<Emotion>,
    #[serde(default)]
    pub exchange_vote: Option<Emotion>,
    #[serde(default)]
    pub expert_label: Option<Emotion>,
}

impl VoteRecord {
    pub fn new(sample_id: impl Into<String>, votes: [Emotion; 3]) -> Self {
        Self {
            sample_id: sample_id.into(),
            votes,
            confidences: Vec::new(),
            leader_vote: None,
            exchange_vote: None,
            expert_label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.confidences.is_empty() && self.confidences.len() != 3 {
            return Err(Error::invalid(
                "vote record",
                format!("{}: {} confidences for 3 votes", self.sample_id, self.confidences.len()),
            ));
        }
        if let Some(c) = self.confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(
                "vote record",
                format!("{}: confidence {c} outside [0, 1]", self.sample_id),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub label: Emotion,
    /// 1: member majority, 2: leader plurality, 3: exchanged leader majority, 4: expert.
    pub stage: u8,
}

fn counts(votes: &[Emotion]) -> [usize; 6] {
    let mut c = [0; 6];
    for v in votes {
        c[v.index()] += 1;
    }
    c
}

/// Label held by at least two of the three member votes, if any.
pub fn member_majority(votes: &[Emotion; 3]) -> Option<Emotion> {
    let c = counts(votes);
    votes.iter().copied().find(|v| c[v.index()] >= 2)
}

fn unique_plurality(votes: &[Emotion]) -> Option<Emotion> {
    let c = counts(votes);
    let max = *c.iter().max()?;
    let mut winners = (0..6).filter(|&i| c[i] == max);
    let first = winners.next()?;
    winners.next().is_none().then(|| Emotion::ALL[first])
}

/// Multi-stage majority resolution of one sample.
///
/// Stage 1 accepts a label with two of three member votes. Otherwise the leader votes
/// and a strictly unique plurality among the four votes decides. Otherwise the
/// exchanged leader votes and a label with at least three of five votes decides.
/// Otherwise the expert label is final.
pub fn resolve_label(v: &VoteRecord) -> Result<Resolution> {
    if let Some(label) = member_majority(&v.votes) {
        return Ok(Resolution { label, stage: 1 });
    }
    let leader = v.leader_vote.ok_or(Error::MissingVote {
        stage: 2,
        vote: "leader_vote",
    })?;
    let four = [v.votes[0], v.votes[1], v.votes[2], leader];
    if let Some(label) = unique_plurality(&four) {
        return Ok(Resolution { label, stage: 2 });
    }
    let exchange = v.exchange_vote.ok_or(Error::MissingVote {
        stage: 3,
        vote: "exchange_vote",
    })?;
    let five = [four[0], four[1], four[2], four[3], exchange];
    let c = counts(&five);
    if let Some(i) = (0..6).find(|&i| c[i] >= 3) {
        return Ok(Resolution {
            label: Emotion::ALL[i],
            stage: 3,
        });
    }
    let label = v.expert_label.ok_or(Error::MissingVote {
        stage: 4,
        vote: "expert_label",
    })?;
    Ok(Resolution { label, stage: 4 })
}
