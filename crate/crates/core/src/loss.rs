//! Pair losses expressed over cosine similarities, with analytic `dL/ds`.
//!
//! The focal-contrastive loss treats `s²` (positives) and `max(0, m - s)²`
//! (negatives) as a probability-like quantity `q` and applies the focal term
//! `-α (1 - q)^γ ln q`. `q` is clamped to `[ε, 1]` so the log stays finite;
//! gradients are zero wherever a clamp is active.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::MinedPairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfcConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub margin: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

/// `epsilon` defaults to 1e-3: smaller clamps let a single pair near `s = 0`
/// or `s = m` produce gradients of order `1/sqrt(epsilon)`, which blows up the
/// projection head within one epoch.
impl Default for OfcConfig {
    fn default() -> Self {
        OfcConfig {
            alpha: 1.0,
            gamma: 2.0,
            margin: 0.5,
            epsilon: 1e-3,
            reduction: Reduction::Mean,
        }
    }
}

impl OfcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return bad("margin must lie in (0, 2]");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return bad("epsilon must lie in (0, 1e-3]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Online focal-contrastive loss over mined pairs.
    #[default]
    Ofc,
    /// Online contrastive baseline over hard pairs.
    Oc,
    /// Cosine-similarity regression baseline over all pairs.
    Cs,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ofc" => Ok(LossKind::Ofc),
            "oc" => Ok(LossKind::Oc),
            "cs" => Ok(LossKind::Cs),
            other => Err(Error::InvalidConfig(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Loss value and its gradient with respect to each contributing pair similarity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_wrt_sim: Vec<(usize, f64)>,
}

impl LossOutput {
    fn merge(mut self, other: LossOutput) -> LossOutput {
        self.value += other.value;
        self.grad_wrt_sim.extend(other.grad_wrt_sim);
        self
    }
}

/// Focal term `-α (1-q)^γ ln q` and its derivative in `q`, for `q ∈ [ε, 1]`.
fn focal(q: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let ln_q = q.ln();
    let one_minus = 1.0 - q;
    let weight = one_minus.powf(gamma);
    let value = -alpha * weight * ln_q;
    // d/dq of (1-q)^γ is -γ (1-q)^(γ-1); its product with ln q vanishes as q -> 1.
    let dweight = if gamma == 0.0 || one_minus <= 0.0 {
        0.0
    } else {
        -gamma * one_minus.powf(gamma - 1.0)
    };
    let grad = -alpha * (dweight * ln_q + weight / q);
    (value, grad)
}

fn reduce(terms: Vec<(usize, f64, f64)>, reduction: Reduction) -> LossOutput {
    let scale = match reduction {
        Reduction::Mean if !terms.is_empty() => 1.0 / terms.len() as f64,
        _ => 1.0,
    };
    let value = terms.iter().map(|t| t.1).sum::<f64>() * scale;
    LossOutput {
        value,
        grad_wrt_sim: terms.into_iter().map(|(i, _, g)| (i, g * scale)).collect(),
    }
}

/// Pulls positive pairs towards `|s| = 1`.
pub fn positive_loss(sims: &[(usize, f64)], config: &OfcConfig) -> LossOutput {
    let terms = sims
        .iter()
        .map(|&(i, s)| {
            let raw = s * s;
            let q = raw.max(config.epsilon);
            let (v, dv_dq) = focal(q, config.alpha, config.gamma);
            let dq_ds = if raw > config.epsilon { 2.0 * s } else { 0.0 };
            (i, v, dv_dq * dq_ds)
        })
        .collect();
    reduce(terms, config.reduction)
}

/// Pushes negative pairs below `s = m - 1`, where the loss reaches zero.
pub fn negative_loss(sims: &[(usize, f64)], config: &OfcConfig) -> LossOutput {
    let m = config.margin;
    let terms = sims
        .iter()
        .map(|&(i, s)| {
            let gap = m - s;
            let u = gap.clamp(0.0, 1.0);
            let du_ds = if gap > 0.0 && gap < 1.0 { -1.0 } else { 0.0 };
            let raw = u * u;
            let q = raw.max(config.epsilon);
            let (v, dv_dq) = focal(q, config.alpha, config.gamma);
            let dq_du = if raw > config.epsilon { 2.0 * u } else { 0.0 };
            (i, v, dv_dq * dq_du * du_ds)
        })
        .collect();
    reduce(terms, config.reduction)
}

pub fn ofc_loss(mined: &MinedPairs, config: &OfcConfig) -> Result<LossOutput> {
    ofc_loss_from(&mined.pos_final, &mined.neg_final, config)
}

pub fn ofc_loss_from(
    pos: &[(usize, f64)],
    neg: &[(usize, f64)],
    config: &OfcConfig,
) -> Result<LossOutput> {
    if pos.is_empty() && neg.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(positive_loss(pos, config).merge(negative_loss(neg, config)))
}

/// Online contrastive baseline: `mean (1-s)²` over hard positives plus
/// `mean max(0, s-m)²` over hard negatives (standard-mode hard sets).
pub fn oc_loss(hard_pos: &[(usize, f64)], hard_neg: &[(usize, f64)], margin: f64) -> Result<LossOutput> {
    if hard_pos.is_empty() && hard_neg.is_empty() {
        return Err(Error::NoPairs);
    }
    let pos = hard_pos
        .iter()
        .map(|&(i, s)| (i, (1.0 - s).powi(2), -2.0 * (1.0 - s)))
        .collect();
    let neg = hard_neg
        .iter()
        .map(|&(i, s)| {
            let h = (s - margin).max(0.0);
            (i, h * h, 2.0 * h)
        })
        .collect();
    Ok(reduce(pos, Reduction::Mean).merge(reduce(neg, Reduction::Mean)))
}

/// Cosine-similarity regression: `mean (s - t)²` with `t` = 1 for positives, 0 for negatives.
pub fn cs_loss(pairs: &[(usize, f64, f64)]) -> LossOutput {
    let terms = pairs
        .iter()
        .map(|&(i, s, t)| (i, (s - t).powi(2), 2.0 * (s - t)))
        .collect();
    reduce(terms, Reduction::Mean)
}
