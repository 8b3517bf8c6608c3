use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// Normalized screening scores of one annotator, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: String,
    /// Emotional-intelligence test result.
    pub we: f64,
    /// Music-sensitivity score.
    pub ms: f64,
    /// Educational background.
    pub eb: f64,
    /// Cultural background.
    pub cb: f64,
    /// Labeling practice.
    pub lp: f64,
    pub gender: Gender,
}

/// Weights of `we`, `ms` and of each of `eb`, `cb`, `lp`.
pub const SCORE_WEIGHTS: [f64; 3] = [0.4, 0.3, 0.1];

impl AnnotatorProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("we", self.we),
            ("ms", self.ms),
            ("eb", self.eb),
            ("cb", self.cb),
            ("lp", self.lp),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "assignment_score",
                    format!("{name}={v} for annotator {} is outside [0, 1]", self.id),
                ));
            }
        }
        Ok(())
    }
}

/// `0.4 we + 0.3 ms + 0.1 (eb + cb + lp)`.
pub fn assignment_score(p: &AnnotatorProfile) -> Result<f64> {
    p.validate()?;
    let [a, b, c] = SCORE_WEIGHTS;
    Ok(a * p.we + b * p.ms + c * (p.eb + p.cb + p.lp))
}

/// Profiles sorted by descending score; equal scores keep id order.
pub fn rank_annotators(profiles: &[AnnotatorProfile]) -> Result<Vec<(String, f64)>> {
    let mut ranked = profiles
        .iter()
        .map(|p| Ok((p.id.clone(), assignment_score(p)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub leader: String,
    /// Two male and one female member.
    pub members: Vec<String>,
}

/// Forms `count` groups: the top `count` annotators lead, the rest are snake-drafted
/// by score so that every group receives two male and one female member.
pub fn form_groups(profiles: &[AnnotatorProfile], count: usize) -> Result<Vec<Group>> {
    if count == 0 {
        return Err(Error::invalid("form_groups", "group count must be positive"));
    }
    let ranked = rank_annotators(profiles)?;
    if ranked.len() < 4 * count {
        return Err(Error::invalid(
            "form_groups",
            format!("{count} groups need {} annotators, have {}", 4 * count, ranked.len()),
        ));
    }
    let gender = |id: &str| {
        profiles
            .iter()
            .find(|p| p.id == id)
            .map(|p| p.gender)
            .unwrap_or(Gender::Male)
    };
    let leaders: Vec<String> = ranked[..count].iter().map(|r| r.0.clone()).collect();
    let rest = &ranked[count..];
    let males: Vec<&String> = rest
        .iter()
        .filter(|r| gender(&r.0) == Gender::Male)
        .map(|r| &r.0)
        .collect();
    let females: Vec<&String> = rest
        .iter()
        .filter(|r| gender(&r.0) == Gender::Female)
        .map(|r| &r.0)
        .collect();
    if males.len() < 2 * count || females.len() < count {
        return Err(Error::invalid(
            "form_groups",
            format!(
                "{count} groups need {} male and {count} female members, have {} and {}",
                2 * count,
                males.len(),
                females.len()
            ),
        ));
    }
    let snake = |round: usize, k: usize| if round.is_multiple_of(2) { k } else { count - 1 - k };
    let mut groups: Vec<Group> = leaders
        .into_iter()
        .map(|leader| Group {
            leader,
            members: Vec::with_capacity(3),
        })
        .collect();
    for (i, id) in males.iter().take(2 * count).enumerate() {
        groups[snake(i / count, i % count)].members.push((*id).clone());
    }
    for (i, id) in females.iter().take(count).enumerate() {
        groups[snake(2, i)].members.push((*id).clone());
    }
    Ok(groups)
}
