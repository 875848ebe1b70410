//! Projection and classifier heads, two-stage training, prediction and the
//! model artifact file.
//!
//! Stage one trains a two-layer projection over frozen embeddings with a
//! contrastive pair loss. Stage two trains the projection and a sigmoid
//! classifier jointly with per-label binary cross-entropy.

use std::fs;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{encode_labels, LabelSet, LabelVocabulary};
use crate::embedding::{EmbeddedSample, ProviderConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{cs_loss, oc_loss, ofc_loss_from, LossKind, LossOutput, OfcConfig};
use crate::metrics::threshold_with_fallback;
use crate::mining::{
    backprop_similarity, build_pairs, dot, mine, MiningConfig, MiningMode, PairSet, Polarity,
    PositiveRule, SimilarityTable,
};

pub const FORMAT_VERSION: u64 = 1;

/// Clamp applied to probabilities inside the cross-entropy log.
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Intermediate values of one projection forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    pub hidden: Vec<f64>,
    pub norm: f64,
    pub z: Vec<f64>,
}

impl ProjectionHead {
    pub fn init(d_in: usize, d_hidden: usize, d_proj: usize, rng: &mut ChaCha8Rng) -> Self {
        ProjectionHead {
            w1: Matrix::glorot(d_in, d_hidden, rng),
            b1: vec![0.0; d_hidden],
            w2: Matrix::glorot(d_hidden, d_proj, rng),
            b2: vec![0.0; d_proj],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionHead {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_proj(&self) -> usize {
        self.w2.cols()
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.cols()
            && self.w2.rows() == self.w1.cols()
            && self.b2.len() == self.w2.cols()
            && self.d_in() > 0
            && self.d_proj() > 0;
        if !ok {
            return Err(Error::MalformedArtifact("inconsistent projection shapes".into()));
        }
        if !(self.w1.is_finite() && self.w2.is_finite())
            || self.b1.iter().chain(&self.b2).any(|x| !x.is_finite())
        {
            return Err(Error::MalformedArtifact("non-finite projection weights".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ProjectionCache> {
        if x.len() != self.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "projection expects dim {}, got {}",
                self.d_in(),
                x.len()
            )));
        }
        let mut hidden = self.w1.transpose_mul_add(x, &self.b1);
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let raw = self.w2.transpose_mul_add(&hidden, &self.b2);
        let norm = dot(&raw, &raw).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateProjection);
        }
        let z = raw.iter().map(|v| v / norm).collect();
        Ok(ProjectionCache { hidden, norm, z })
    }

    /// Accumulates parameter gradients for `dL/dz` into `grads`.
    pub fn backward(&self, x: &[f64], cache: &ProjectionCache, dz: &[f64], grads: &mut ProjectionHead) {
        // z = r / |r|  =>  dL/dr = (dz - z (z·dz)) / |r|
        let zdz = dot(&cache.z, dz);
        let dr: Vec<f64> = dz
            .iter()
            .zip(&cache.z)
            .map(|(g, z)| (g - z * zdz) / cache.norm)
            .collect();
        add_into(&mut grads.b2, &dr);
        grads.w2.add_outer(&cache.hidden, &dr);
        let dh = self.w2.mul_vec(&dr);
        let dpre: Vec<f64> = dh
            .iter()
            .zip(&cache.hidden)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        add_into(&mut grads.b1, &dpre);
        grads.w1.add_outer(x, &dpre);
    }

    fn params(&self) -> [&[f64]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.data_mut(), &mut self.b1, self.w2.data_mut(), &mut self.b2]
    }
}

/// Unit-norm projection `normalize(w2ᵀ tanh(w1ᵀ x + b1) + b2)`.
pub fn project(x: &[f64], head: &ProjectionHead) -> Result<Vec<f64>> {
    Ok(head.forward(x)?.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ClassifierHead {
    pub fn init(d_proj: usize, labels: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassifierHead {
            w: Matrix::glorot(d_proj, labels, rng),
            b: vec![0.0; labels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ClassifierHead {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }

    pub fn labels(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.w.transpose_mul_add(z, &self.b)
    }

    /// Accumulates gradients for `dL/dlogits` and returns `dL/dz`.
    pub fn backward(&self, z: &[f64], dlogits: &[f64], grads: &mut ClassifierHead) -> Vec<f64> {
        grads.w.add_outer(z, dlogits);
        add_into(&mut grads.b, dlogits);
        self.w.mul_vec(dlogits)
    }

    fn params(&self) -> [&[f64]; 2] {
        [self.w.data(), &self.b]
    }

    fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [self.w.data_mut(), &mut self.b]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-label sigmoid probabilities.
pub fn classify(z: &[f64], head: &ClassifierHead) -> Vec<f64> {
    head.logits(z).into_iter().map(sigmoid).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub value: f64,
    /// `dL/dp` for every (sample, label) cell; zero where the clamp is active.
    pub grad_wrt_probs: Vec<Vec<f64>>,
}

/// Mean binary cross-entropy over every (sample, label) cell.
pub fn bce_loss(probs: &[Vec<f64>], targets: &[Vec<bool>]) -> Result<BceOutput> {
    if probs.len() != targets.len() || probs.iter().zip(targets).any(|(p, t)| p.len() != t.len()) {
        return Err(Error::ShapeMismatch("probabilities and targets differ in shape".into()));
    }
    let cells: usize = probs.iter().map(Vec::len).sum();
    if cells == 0 {
        return Ok(BceOutput {
            value: 0.0,
            grad_wrt_probs: probs.iter().map(|_| Vec::new()).collect(),
        });
    }
    let scale = 1.0 / cells as f64;
    let mut value = 0.0;
    let grad_wrt_probs = probs
        .iter()
        .zip(targets)
        .map(|(row, trow)| {
            row.iter()
                .zip(trow)
                .map(|(&p, &y)| {
                    let pc = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                    let clamped = pc != p;
                    if y {
                        value -= pc.ln();
                        if clamped { 0.0 } else { -scale / pc }
                    } else {
                        value -= (1.0 - pc).ln();
                        if clamped { 0.0 } else { scale / (1.0 - pc) }
                    }
                })
                .collect()
        })
        .collect();
    Ok(BceOutput {
        value: value * scale,
        grad_wrt_probs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Pretraining learning rate.
    pub learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub momentum: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub loss_kind: LossKind,
    pub mining: MiningConfig,
    pub ofc: OfcConfig,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    /// Share of the dataset held out from training, split with `seed`.
    /// Zero trains and evaluates on everything.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            finetune_learning_rate: 0.3,
            momentum: 0.9,
            epochs_pretrain: 30,
            epochs_finetune: 50,
            batch_size: 32,
            seed: 42,
            decision_threshold: 0.5,
            loss_kind: LossKind::Ofc,
            mining: MiningConfig::default(),
            ofc: OfcConfig::default(),
            hidden_dim: 128,
            proj_dim: 128,
            holdout_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.finetune_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} is outside [0, 1)", self.momentum));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2".into());
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!(
                "decision threshold {} is outside (0, 1)",
                self.decision_threshold
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!(
                "holdout fraction {} is outside [0, 1)",
                self.holdout_fraction
            ));
        }
        if self.hidden_dim == 0 || self.proj_dim == 0 {
            return bad("head dimensions must be positive".into());
        }
        self.mining.validate()?;
        self.ofc.validate()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const STREAM_PROJECTION: u64 = 1;
const STREAM_CLASSIFIER: u64 = 2;
const STREAM_PRETRAIN_SHUFFLE: u64 = 3;
const STREAM_FINETUNE_SHUFFLE: u64 = 4;

pub fn initial_projection(d_in: usize, config: &TrainConfig) -> ProjectionHead {
    ProjectionHead::init(
        d_in,
        config.hidden_dim,
        config.proj_dim,
        &mut config.rng(STREAM_PROJECTION),
    )
}

pub fn initial_classifier(d_proj: usize, labels: usize, config: &TrainConfig) -> ClassifierHead {
    ClassifierHead::init(d_proj, labels, &mut config.rng(STREAM_CLASSIFIER))
}

/// SGD with classical momentum: `v ← μ v + g`, `θ ← θ − η v`.
#[derive(Debug, Clone)]
struct Momentum {
    velocity: Vec<Vec<f64>>,
    lr: f64,
    mu: f64,
}

impl Momentum {
    fn new(shapes: &[usize], lr: f64, mu: f64) -> Self {
        Momentum {
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            lr,
            mu,
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.mu * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

/// Which pairs of a batch feed the contrastive loss, by pair index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub kind: LossKind,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl PairSelection {
    pub fn choose(kind: LossKind, pairs: &PairSet, sims: &[f64], mining: &MiningConfig) -> Self {
        let table = table_from(pairs, sims);
        let ids = |v: &[(usize, f64)]| v.iter().map(|x| x.0).collect::<Vec<_>>();
        match kind {
            LossKind::Ofc => {
                let m = mine(&table, mining);
                PairSelection { kind, pos: ids(&m.pos_final), neg: ids(&m.neg_final) }
            }
            LossKind::Oc => {
                let standard = MiningConfig { mode: MiningMode::Standard, ..*mining };
                let m = mine(&table, &standard);
                PairSelection { kind, pos: ids(&m.hard_pos), neg: ids(&m.hard_neg) }
            }
            LossKind::Cs => PairSelection { kind, pos: ids(&table.pos), neg: ids(&table.neg) },
        }
    }

    /// Evaluates the loss with this selection at the given pair similarities.
    pub fn loss(&self, sims: &[f64], ofc: &OfcConfig) -> Result<LossOutput> {
        let at = |v: &[usize]| v.iter().map(|&i| (i, sims[i])).collect::<Vec<_>>();
        let (pos, neg) = (at(&self.pos), at(&self.neg));
        match self.kind {
            LossKind::Ofc => ofc_loss_from(&pos, &neg, ofc),
            LossKind::Oc => oc_loss(&pos, &neg, ofc.margin),
            LossKind::Cs => {
                if pos.is_empty() && neg.is_empty() {
                    return Err(Error::NoPairs);
                }
                let targets: Vec<_> = pos
                    .iter()
                    .map(|&(i, s)| (i, s, 1.0))
                    .chain(neg.iter().map(|&(i, s)| (i, s, 0.0)))
                    .collect();
                Ok(cs_loss(&targets))
            }
        }
    }
}

fn table_from(pairs: &PairSet, sims: &[f64]) -> SimilarityTable {
    let mut table = SimilarityTable::default();
    for (i, p) in pairs.pairs.iter().enumerate() {
        match p.polarity {
            Polarity::Positive => table.pos.push((i, sims[i])),
            Polarity::Negative => table.neg.push((i, sims[i])),
        }
    }
    table
}

pub fn pair_similarities(pairs: &PairSet, z: &[Vec<f64>]) -> Vec<f64> {
    pairs
        .pairs
        .iter()
        .map(|p| dot(&z[p.a], &z[p.b]).clamp(-1.0, 1.0))
        .collect()
}

/// Forward pass of a contrastive batch; returns projections, pairs, similarities.
pub struct ContrastiveBatch {
    pub caches: Vec<ProjectionCache>,
    pub pairs: PairSet,
    pub sims: Vec<f64>,
}

impl ContrastiveBatch {
    pub fn forward(head: &ProjectionHead, xs: &[&[f64]], labels: &[LabelSet], rule: PositiveRule) -> Result<Self> {
        let caches = xs.iter().map(|x| head.forward(x)).collect::<Result<Vec<_>>>()?;
        let z: Vec<Vec<f64>> = caches.iter().map(|c| c.z.clone()).collect();
        let pairs = build_pairs(labels, rule);
        let sims = pair_similarities(&pairs, &z);
        Ok(ContrastiveBatch { caches, pairs, sims })
    }

    /// Parameter gradients of `loss` (whose gradients are w.r.t. pair similarities).
    pub fn backward(&self, head: &ProjectionHead, xs: &[&[f64]], loss: &LossOutput) -> ProjectionHead {
        let z: Vec<&[f64]> = self.caches.iter().map(|c| c.z.as_slice()).collect();
        let dz = backprop_similarity(&self.pairs, &loss.grad_wrt_sim, &z);
        let mut grads = head.zeros_like();
        for ((x, cache), g) in xs.iter().zip(&self.caches).zip(&dz) {
            head.backward(x, cache, g, &mut grads);
        }
        grads
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub head: ProjectionHead,
    /// Mean batch loss per epoch, over batches that yielded pairs.
    pub epoch_losses: Vec<f64>,
}

fn check_samples(train: &[EmbeddedSample], d_in: usize) -> Result<()> {
    if let Some((row, s)) = train.iter().enumerate().find(|(_, s)| s.embedding.dim() != d_in) {
        return Err(Error::DimensionMismatch {
            row,
            expected: d_in,
            found: s.embedding.dim(),
        });
    }
    Ok(())
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn pretrain(train: &[EmbeddedSample], config: &TrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::InvalidConfig("pretraining needs at least 2 samples".into()));
    }
    let d_in = train[0].embedding.dim();
    check_samples(train, d_in)?;
    let first = &train[0].labels;
    if train.iter().all(|s| s.labels == *first) {
        return Err(Error::NoPairs);
    }

    let mut head = initial_projection(d_in, config);
    let mut opt = Momentum::new(
        &head.params().map(<[f64]>::len),
        config.learning_rate,
        config.momentum,
    );
    let mut rng = config.rng(STREAM_PRETRAIN_SHUFFLE);
    let mut epoch_losses = Vec::with_capacity(config.epochs_pretrain);

    for epoch in 0..config.epochs_pretrain {
        let mut total = 0.0;
        let mut counted = 0usize;
        for batch in batches(train.len(), config.batch_size, &mut rng) {
            if batch.len() < 2 {
                continue;
            }
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train[i].embedding.as_slice()).collect();
            let labels: Vec<LabelSet> = batch.iter().map(|&i| train[i].labels.clone()).collect();
            let fwd = ContrastiveBatch::forward(&head, &xs, &labels, config.mining.positive_rule)?;
            let selection = PairSelection::choose(config.loss_kind, &fwd.pairs, &fwd.sims, &config.mining);
            let loss = match selection.loss(&fwd.sims, &config.ofc) {
                Ok(l) => l,
                Err(Error::NoPairs) => continue,
                Err(e) => return Err(e),
            };
            let grads = fwd.backward(&head, &xs, &loss);
            opt.step(head.params_mut().into(), grads.params().into());
            total += loss.value;
            counted += 1;
        }
        let mean = if counted == 0 { 0.0 } else { total / counted as f64 };
        debug!("pretrain epoch {epoch}: loss {mean:.6} over {counted} batches");
        epoch_losses.push(mean);
    }
    Ok(PretrainOutcome { head, epoch_losses })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub artifact: ModelArtifact,
    pub epoch_losses: Vec<f64>,
}

/// One BCE step's forward values and gradients for a batch.
pub struct ClassifierBatch {
    pub loss: f64,
    pub projection_grads: ProjectionHead,
    pub classifier_grads: ClassifierHead,
}

pub fn classifier_batch(
    projection: &ProjectionHead,
    classifier: &ClassifierHead,
    xs: &[&[f64]],
    targets: &[Vec<bool>],
) -> Result<ClassifierBatch> {
    let caches = xs.iter().map(|x| projection.forward(x)).collect::<Result<Vec<_>>>()?;
    let probs: Vec<Vec<f64>> = caches.iter().map(|c| classify(&c.z, classifier)).collect();
    let bce = bce_loss(&probs, targets)?;
    let mut projection_grads = projection.zeros_like();
    let mut classifier_grads = classifier.zeros_like();
    for (((x, cache), p), dp) in xs.iter().zip(&caches).zip(&probs).zip(&bce.grad_wrt_probs) {
        let dlogits: Vec<f64> = p.iter().zip(dp).map(|(p, g)| g * p * (1.0 - p)).collect();
        let dz = classifier.backward(&cache.z, &dlogits, &mut classifier_grads);
        projection.backward(x, cache, &dz, &mut projection_grads);
    }
    Ok(ClassifierBatch {
        loss: bce.value,
        projection_grads,
        classifier_grads,
    })
}

pub fn finetune(
    train: &[EmbeddedSample],
    projection: ProjectionHead,
    vocabulary: &LabelVocabulary,
    provider: &ProviderConfig,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("fine-tuning needs at least 1 sample".into()));
    }
    projection.check_shapes()?;
    check_samples(train, projection.d_in())?;
    let targets: Vec<Vec<bool>> = train
        .iter()
        .map(|s| encode_labels(&s.labels, vocabulary))
        .collect::<Result<_>>()?;

    let mut projection = projection;
    let mut classifier = initial_classifier(projection.d_proj(), vocabulary.len(), config);
    let shapes: Vec<usize> = projection
        .params()
        .iter()
        .chain(classifier.params().iter())
        .map(|p| p.len())
        .collect();
    let mut opt = Momentum::new(&shapes, config.finetune_learning_rate, config.momentum);
    let mut rng = config.rng(STREAM_FINETUNE_SHUFFLE);
    let mut epoch_losses = Vec::with_capacity(config.epochs_finetune);

    for epoch in 0..config.epochs_finetune {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in batches(train.len(), config.batch_size, &mut rng) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train[i].embedding.as_slice()).collect();
            let ys: Vec<Vec<bool>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let step = classifier_batch(&projection, &classifier, &xs, &ys)?;
            let params: Vec<&mut [f64]> = projection
                .params_mut()
                .into_iter()
                .chain(classifier.params_mut())
                .collect();
            let grads: Vec<&[f64]> = step
                .projection_grads
                .params()
                .into_iter()
                .chain(step.classifier_grads.params())
                .collect();
            opt.step(params, grads);
            total += step.loss;
            count += 1;
        }
        let mean = total / count.max(1) as f64;
        debug!("finetune epoch {epoch}: bce {mean:.6}");
        epoch_losses.push(mean);
    }

    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        vocabulary: vocabulary.clone(),
        embed_dim: projection.d_in(),
        provider: provider.clone(),
        projection,
        classifier,
        decision_threshold: config.decision_threshold,
        train_config: config.clone(),
    };
    Ok(FinetuneOutcome { artifact, epoch_losses })
}

/// Mean positive-pair minus mean negative-pair similarity over every pair of
/// `samples`, measured after projecting through `head`.
pub fn similarity_gap(head: &ProjectionHead, samples: &[EmbeddedSample], rule: PositiveRule) -> Result<f64> {
    let z = samples
        .iter()
        .map(|s| project(s.embedding.as_slice(), head))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<LabelSet> = samples.iter().map(|s| s.labels.clone()).collect();
    let pairs = build_pairs(&labels, rule);
    let sims = pair_similarities(&pairs, &z);
    let table = table_from(&pairs, &sims);
    if table.pos.is_empty() || table.neg.is_empty() {
        return Err(Error::NoPairs);
    }
    let mean = |v: &[(usize, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
    Ok(mean(&table.pos) - mean(&table.neg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u64,
    pub vocabulary: LabelVocabulary,
    pub embed_dim: usize,
    /// Embedding provider the model was trained against.
    pub provider: ProviderConfig,
    pub projection: ProjectionHead,
    pub classifier: ClassifierHead,
    pub decision_threshold: f64,
    pub train_config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelSet,
    /// One probability per vocabulary label, in vocabulary order.
    pub scores: Vec<f64>,
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnknownVersion(self.format_version));
        }
        self.projection.check_shapes()?;
        let consistent = self.projection.d_in() == self.embed_dim
            && self.classifier.w.rows() == self.projection.d_proj()
            && self.classifier.labels() == self.vocabulary.len()
            && self.classifier.b.len() == self.vocabulary.len()
            && self.provider.dim() == self.embed_dim;
        if !consistent {
            return Err(Error::MalformedArtifact("inconsistent dimensions".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::MalformedArtifact("decision threshold outside (0, 1)".into()));
        }
        Ok(())
    }

    pub fn scores(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects embeddings of dim {}, got {}",
                self.embed_dim,
                embedding.len()
            )));
        }
        let z = project(embedding, &self.projection)?;
        Ok(classify(&z, &self.classifier))
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::MalformedArtifact("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::UnknownVersion(version));
        }
        let artifact: ModelArtifact =
            serde_json::from_value(value).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        artifact.validate()?;
        Ok(artifact)
    }
}

/// Labels above the decision threshold, or the single best label when none is.
pub fn predict(embedding: &[f64], artifact: &ModelArtifact) -> Result<Prediction> {
    let scores = artifact.scores(embedding)?;
    let row = threshold_with_fallback(&scores, artifact.decision_threshold);
    Ok(Prediction {
        labels: LabelSet::from_multi_hot(&row),
        scores,
    })
}

pub fn save_artifact(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, artifact.to_json_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_json_bytes(&bytes)
}
