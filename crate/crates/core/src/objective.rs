//! Polarity-aware cross-entropy, the three-branch training loss and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Real, Tensor, Var};

/// Lower bound applied to the true-class probability before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

/// The six emotion categories, indexed in this order throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    #[serde(alias = "excitation")]
    Excitation,
    #[serde(alias = "fear")]
    Fear,
    #[serde(alias = "neutral")]
    Neutral,
    #[serde(alias = "relaxation")]
    Relaxation,
    #[serde(alias = "sadness")]
    Sadness,
    #[serde(alias = "tension")]
    Tension,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Excitation,
        Emotion::Fear,
        Emotion::Neutral,
        Emotion::Relaxation,
        Emotion::Sadness,
        Emotion::Tension,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Excitation => "Excitation",
            Emotion::Fear => "Fear",
            Emotion::Neutral => "Neutral",
            Emotion::Relaxation => "Relaxation",
            Emotion::Sadness => "Sadness",
            Emotion::Tension => "Tension",
        }
    }

    /// Case-insensitive lookup by name.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(name.trim()))
    }

    pub fn polarity(self) -> Polarity {
        match self {
            Emotion::Fear | Emotion::Sadness | Emotion::Tension => Polarity::Negative,
            Emotion::Neutral => Polarity::Neutral,
            Emotion::Excitation | Emotion::Relaxation => Polarity::Positive,
        }
    }
}

/// Total map from class index to polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolarityMap(Vec<Polarity>);

impl Default for PolarityMap {
    fn default() -> Self {
        Self(Emotion::ALL.iter().map(|e| e.polarity()).collect())
    }
}

impl PolarityMap {
    pub fn new(polarities: Vec<Polarity>) -> Result<Self> {
        if polarities.is_empty() {
            return Err(Error::Empty("polarity map"));
        }
        Ok(Self(polarities))
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn of(&self, class: usize) -> Result<Polarity> {
        self.0.get(class).copied().ok_or_else(|| {
            Error::invalid(
                "polarity",
                format!("class {class} outside the {}-class map", self.0.len()),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub gamma_pos: f64,
    pub gamma_neu: f64,
    pub gamma_neg: f64,
    /// Weights of the overall, visual and audio branch losses.
    pub branch_weights: [f64; 3],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::uniform(0.7)
    }
}

impl LossConfig {
    /// The same penalty for every polarity and unit branch weights.
    pub fn uniform(gamma: f64) -> Self {
        Self {
            gamma_pos: gamma,
            gamma_neu: gamma,
            gamma_neg: gamma,
            branch_weights: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in [self.gamma_pos, self.gamma_neu, self.gamma_neg] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("penalty {g} must be finite and non-negative")));
            }
        }
        if self.branch_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("branch weights must be finite".into()));
        }
        Ok(())
    }

    pub fn gamma(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Positive => self.gamma_pos,
            Polarity::Neutral => self.gamma_neu,
            Polarity::Negative => self.gamma_neg,
        }
    }
}

/// Counters collected while evaluating a loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTelemetry {
    /// Samples whose true-class probability fell to the log floor.
    pub clamped: usize,
    /// Samples whose predicted polarity differs from the true one.
    pub polarity_mismatches: usize,
}

impl LossTelemetry {
    fn merge(&mut self, other: LossTelemetry) {
        self.clamped += other.clamped;
        self.polarity_mismatches += other.polarity_mismatches;
    }
}

/// Index of the largest entry; the lowest index wins ties. NaN entries never win.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-sample multipliers `1 + gamma(ep(y)) * [ep(y) != ep(pred)]` and the mismatch count.
pub fn penalty_weights<T: Real>(
    preds: &[usize],
    labels: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(Vec<T>, usize)> {
    if labels.len() != preds.len() {
        return Err(Error::shape("polarity_ce_loss", &[preds.len()], &[labels.len()]));
    }
    let mut mismatches = 0;
    let mut w = Vec::with_capacity(labels.len());
    for (&y, &yhat) in labels.iter().zip(preds) {
        let truth = pmap.of(y)?;
        if truth != pmap.of(yhat)? {
            mismatches += 1;
            w.push(T::of(1.0 + cfg.gamma(truth)));
        } else {
            w.push(T::one());
        }
    }
    Ok((w, mismatches))
}

/// Row-wise argmax of a matrix.
pub fn predictions<T: Real>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    let (n, _) = scores.dims2()?;
    Ok((0..n).map(|i| argmax(scores.row(i))).collect())
}

/// Differentiable polarity-penalized cross-entropy over softmax probabilities `[N, C]`,
/// with predictions taken as the row-wise argmax of `probs`.
pub fn polarity_ce_loss_graph<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    labels: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(Var, LossTelemetry)> {
    let preds = predictions(g.value(probs))?;
    polarity_ce_loss_graph_with_preds(g, probs, labels, &preds, cfg, pmap)
}

/// As [`polarity_ce_loss_graph`] with externally supplied predictions.
pub fn polarity_ce_loss_graph_with_preds<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    labels: &[usize],
    preds: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(Var, LossTelemetry)> {
    let (n, c) = g.value(probs).dims2()?;
    if labels.len() != n {
        return Err(Error::shape("polarity_ce_loss", &[n, c], &[labels.len()]));
    }
    if c > pmap.classes() {
        return Err(Error::invalid(
            "polarity_ce_loss",
            format!("{c} classes but the polarity map covers {}", pmap.classes()),
        ));
    }
    if let Some(&y) = labels.iter().chain(preds).find(|&&y| y >= c) {
        return Err(Error::invalid(
            "polarity_ce_loss",
            format!("class {y} out of range for {c} classes"),
        ));
    }
    let (w, polarity_mismatches) = penalty_weights(preds, labels, cfg, pmap)?;
    let (loss, clamped) = g.weighted_nll(probs, labels, &w, T::of(LOG_FLOOR))?;
    if clamped > 0 {
        log::warn!("{clamped} true-class probabilities clamped to {LOG_FLOOR:e}");
    }
    Ok((
        loss,
        LossTelemetry {
            clamped,
            polarity_mismatches,
        },
    ))
}

/// Value of the polarity-penalized cross-entropy.
pub fn polarity_ce_loss<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(T, LossTelemetry)> {
    let preds = predictions(probs)?;
    polarity_ce_loss_with_preds(probs, labels, &preds, cfg, pmap)
}

/// Value of the polarity-penalized cross-entropy with externally supplied predictions.
pub fn polarity_ce_loss_with_preds<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    preds: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(T, LossTelemetry)> {
    let mut g = Graph::new();
    let p = g.input(probs.clone());
    let (loss, tel) = polarity_ce_loss_graph_with_preds(&mut g, p, labels, preds, cfg, pmap)?;
    Ok((g.value(loss).data()[0], tel))
}

/// Mean of `-ln(max(p_y, floor))`.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (n, c) = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", &[n, c], &[labels.len()]));
    }
    if n == 0 {
        return Err(Error::Empty("cross_entropy batch"));
    }
    let floor = T::of(LOG_FLOOR);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid("cross_entropy", format!("label {y} out of range")));
        }
        total = total - crate::numcore::graph::clamp_floor(probs.at2(i, y), floor).ln();
    }
    Ok(total / T::of(n as f64))
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(logits.clone());
    let p = g.softmax(x)?;
    Ok(g.value(p).clone())
}

/// Weighted sum of the overall, visual and audio branch losses, each over its own softmax.
pub fn multi_task_loss_graph<T: Real>(
    g: &mut Graph<T>,
    overall: Var,
    visual: Var,
    audio: Var,
    labels: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(Var, LossTelemetry)> {
    let preds = [overall, visual, audio].map(|v| predictions(g.value(v)));
    let [po, pv, pa] = preds;
    multi_task_loss_graph_with_preds(g, [overall, visual, audio], labels, [&po?, &pv?, &pa?], cfg, pmap)
}

/// As [`multi_task_loss_graph`] with supplied predictions for the overall, visual and
/// audio branches, in that order.
pub fn multi_task_loss_graph_with_preds<T: Real>(
    g: &mut Graph<T>,
    logits: [Var; 3],
    labels: &[usize],
    preds: [&[usize]; 3],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(Var, LossTelemetry)> {
    let n = g.value(logits[0]).dims2()?.0;
    for &v in &logits[1..] {
        if g.value(v).dims2()?.0 != n {
            return Err(Error::shape("multi_task_loss", g.shape(logits[0]), g.shape(v)));
        }
    }
    let mut total: Option<Var> = None;
    let mut tel = LossTelemetry::default();
    for ((logit, pred), &w) in logits.into_iter().zip(preds).zip(&cfg.branch_weights) {
        if w == 0.0 {
            continue;
        }
        let p = g.softmax(logit)?;
        let (l, t) = polarity_ce_loss_graph_with_preds(g, p, labels, pred, cfg, pmap)?;
        tel.merge(t);
        let l = if w == 1.0 { l } else { g.scale(l, T::of(w)) };
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => {
            let z = g.scale(logits[0], T::zero());
            g.sum(z)
        }
    };
    Ok((total, tel))
}

/// Value of [`multi_task_loss_graph`] for plain logit matrices.
pub fn multi_task_loss<T: Real>(
    overall: &Tensor<T>,
    visual: &Tensor<T>,
    audio: &Tensor<T>,
    labels: &[usize],
    cfg: &LossConfig,
    pmap: &PolarityMap,
) -> Result<(T, LossTelemetry)> {
    let mut g = Graph::new();
    let o = g.input(overall.clone());
    let v = g.input(visual.clone());
    let a = g.input(audio.clone());
    let (loss, tel) = multi_task_loss_graph(&mut g, o, v, a, labels, cfg, pmap)?;
    Ok((g.value(loss).data()[0], tel))
}

/// Classification report; rates are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub wa_f1: f64,
    pub uar: f64,
    pub war: f64,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
        if preds.len() != labels.len() {
            return Err(Error::shape("metrics", &[preds.len()], &[labels.len()]));
        }
        let mut m = vec![vec![0usize; classes]; classes];
        for (&p, &y) in preds.iter().zip(labels) {
            if p >= classes || y >= classes {
                return Err(Error::invalid("metrics", format!("class index outside 0..{classes}")));
            }
            m[y][p] += 1;
        }
        Ok(m)
    }
}

/// Accuracy, support-weighted F1, unweighted and weighted average recall, confusion matrix.
///
/// Classes without support contribute zero weight to the weighted scores and are
/// skipped by UAR. A per-class F1 with zero denominator counts as 0.
pub fn metrics(preds: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::Empty("metrics input"));
    }
    let confusion = Metrics::confusion_matrix(preds, labels, classes)?;
    let n = labels.len() as f64;
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();

    let mut wa_f1 = 0.0;
    let mut recall_sum = 0.0;
    let mut war = 0.0;
    let mut supported = 0usize;
    for (c, row) in confusion.iter().enumerate() {
        let tp = row[c] as f64;
        let support: usize = row.iter().sum();
        let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
        if support == 0 {
            continue;
        }
        supported += 1;
        let recall = tp / support as f64;
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / n;
        wa_f1 += w * f1;
        war += w * recall;
        recall_sum += recall;
    }
    Ok(Metrics {
        acc: 100.0 * correct as f64 / n,
        wa_f1: 100.0 * wa_f1,
        uar: 100.0 * recall_sum / supported as f64,
        war: 100.0 * war,
        confusion,
    })
}
