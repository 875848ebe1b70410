//! In-batch pair construction and hard-pair mining.
//!
//! Given pair similarities split by polarity, mining keeps the hard pairs that
//! sit on the wrong side of the opposite polarity's extremum, sorts the rest
//! (positives descending, negatives ascending), keeps the leading `p` percent
//! of each and appends the hard pairs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelSet;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub batch_size: usize,
}

impl PairSet {
    pub fn positive_count(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.polarity == Polarity::Positive)
            .count()
    }

    pub fn negative_count(&self) -> usize {
        self.pairs.len() - self.positive_count()
    }
}

/// When two label sets count as a positive pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveRule {
    /// Label sets are identical.
    #[default]
    Exact,
    /// Label sets share at least one label.
    Overlap,
}

impl PositiveRule {
    pub fn is_positive(self, a: &LabelSet, b: &LabelSet) -> bool {
        match self {
            PositiveRule::Exact => a == b,
            PositiveRule::Overlap => a.intersects(b),
        }
    }
}

/// All `n choose 2` unordered pairs in lexicographic `(a, b)` order, `a < b`.
pub fn build_pairs(labels: &[LabelSet], rule: PositiveRule) -> PairSet {
    let n = labels.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let polarity = if rule.is_positive(&labels[a], &labels[b]) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            pairs.push(Pair { a, b, polarity });
        }
    }
    PairSet {
        pairs,
        batch_size: n,
    }
}

/// Dot product clamped to [-1, 1]; inputs are unit-norm by provider contract.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot compare vectors of dim {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pair similarities split by polarity; the `usize` is an index into `PairSet::pairs`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityTable {
    pub pos: Vec<(usize, f64)>,
    pub neg: Vec<(usize, f64)>,
}

impl SimilarityTable {
    pub fn compute<V: AsRef<[f64]>>(pairs: &PairSet, vectors: &[V]) -> Result<Self> {
        let mut table = SimilarityTable::default();
        for (i, p) in pairs.pairs.iter().enumerate() {
            let s = cosine_similarity(vectors[p.a].as_ref(), vectors[p.b].as_ref())?;
            match p.polarity {
                Polarity::Positive => table.pos.push((i, s)),
                Polarity::Negative => table.neg.push((i, s)),
            }
        }
        Ok(table)
    }

    pub fn from_embeddings(pairs: &PairSet, vectors: &[EmbeddingVector]) -> Result<Self> {
        Self::compute(pairs, vectors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningMode {
    /// Positives above the smallest negative similarity are hard; negatives
    /// below the largest positive similarity are hard.
    #[default]
    Literal,
    /// Online-contrastive convention: positives below the largest negative
    /// similarity and negatives above the smallest positive similarity.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Percentage of refined (non-hard) pairs kept per polarity.
    pub p: f64,
    #[serde(default)]
    pub mode: MiningMode,
    #[serde(default)]
    pub positive_rule: PositiveRule,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            p: 10.0,
            mode: MiningMode::Literal,
            positive_rule: PositiveRule::Exact,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!(
                "mining percentage {} is outside [0, 100]",
                self.p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MiningCounts {
    pub hard_pos: usize,
    pub hard_neg: usize,
    pub refined_pos: usize,
    pub refined_neg: usize,
    pub selected_pos: usize,
    pub selected_neg: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedPairs {
    /// Selected refined positives followed by the hard positives.
    pub pos_final: Vec<(usize, f64)>,
    pub neg_final: Vec<(usize, f64)>,
    pub hard_pos: Vec<(usize, f64)>,
    pub hard_neg: Vec<(usize, f64)>,
    /// Threshold taken from the negative similarities that decides hard positives
    /// (minimum in literal mode, maximum in standard mode); absent with no negatives.
    pub t_neg: Option<f64>,
    /// Threshold taken from the positive similarities that decides hard negatives.
    pub t_pos: Option<f64>,
    pub counts: MiningCounts,
}

impl MinedPairs {
    pub fn is_empty(&self) -> bool {
        self.pos_final.is_empty() && self.neg_final.is_empty()
    }
}

/// Leading `ceil(p/100 * k)` elements of an already sorted slice.
pub fn select_top<T>(sorted: &[T], p: f64) -> &[T] {
    &sorted[..selection_count(sorted.len(), p)]
}

pub fn selection_count(k: usize, p: f64) -> usize {
    let p = p.clamp(0.0, 100.0);
    (((p * k as f64) / 100.0).ceil() as usize).min(k)
}

fn min_sim(v: &[(usize, f64)]) -> Option<f64> {
    v.iter().map(|x| x.1).reduce(f64::min)
}

fn max_sim(v: &[(usize, f64)]) -> Option<f64> {
    v.iter().map(|x| x.1).reduce(f64::max)
}

fn by_sim_then_index(descending: bool) -> impl Fn(&(usize, f64), &(usize, f64)) -> Ordering {
    move |x, y| {
        let o = x.1.total_cmp(&y.1);
        let o = if descending { o.reverse() } else { o };
        o.then(x.0.cmp(&y.0))
    }
}

type Scored = (usize, f64);

fn partition_hard(set: &[Scored], cut: Option<(f64, Ordering)>) -> (Vec<Scored>, Vec<Scored>) {
    set.iter().copied().partition(|e| match cut {
        Some((t, side)) => e.1.partial_cmp(&t) == Some(side),
        None => false,
    })
}

pub fn mine(table: &SimilarityTable, config: &MiningConfig) -> MinedPairs {
    // t_neg is derived from the negatives and gates positives; t_pos the reverse.
    // A pair is hard when its similarity lies strictly on `side` of the threshold.
    let (t_neg, t_pos, pos_side, neg_side) = match config.mode {
        MiningMode::Literal => (
            min_sim(&table.neg),
            max_sim(&table.pos),
            Ordering::Greater,
            Ordering::Less,
        ),
        MiningMode::Standard => (
            max_sim(&table.neg),
            min_sim(&table.pos),
            Ordering::Less,
            Ordering::Greater,
        ),
    };
    let pos_cut = t_neg.map(|t| (t, pos_side));
    let neg_cut = t_pos.map(|t| (t, neg_side));

    let (hard_pos, mut refined_pos) = partition_hard(&table.pos, pos_cut);
    let (hard_neg, mut refined_neg) = partition_hard(&table.neg, neg_cut);
    refined_pos.sort_by(by_sim_then_index(true));
    refined_neg.sort_by(by_sim_then_index(false));

    let top_pos = select_top(&refined_pos, config.p);
    let top_neg = select_top(&refined_neg, config.p);

    let counts = MiningCounts {
        hard_pos: hard_pos.len(),
        hard_neg: hard_neg.len(),
        refined_pos: refined_pos.len(),
        refined_neg: refined_neg.len(),
        selected_pos: top_pos.len(),
        selected_neg: top_neg.len(),
    };
    let pos_final = top_pos.iter().chain(&hard_pos).copied().collect();
    let neg_final = top_neg.iter().chain(&hard_neg).copied().collect();

    MinedPairs {
        pos_final,
        neg_final,
        hard_pos,
        hard_neg,
        t_neg,
        t_pos,
        counts,
    }
}

/// Accumulates `dL/ds` for each pair into `dL/dv` for the pair endpoints,
/// using `s = v_a · v_b`.
pub fn backprop_similarity<V: AsRef<[f64]>>(
    pairs: &PairSet,
    grad_wrt_sim: &[(usize, f64)],
    vectors: &[V],
) -> Vec<Vec<f64>> {
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    let mut grads = vec![vec![0.0; dim]; vectors.len()];
    for &(pi, g) in grad_wrt_sim {
        let p = pairs.pairs[pi];
        let (va, vb) = (vectors[p.a].as_ref(), vectors[p.b].as_ref());
        for k in 0..dim {
            grads[p.a][k] += g * vb[k];
            grads[p.b][k] += g * va[k];
        }
    }
    grads
}
