//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so
//! the page needs no generated type glue beyond `wasm-bindgen` itself. The
//! same functions are callable natively, which is how the tests exercise them.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use intent_core::datagen::{offline_generate, pair_combos};
use intent_core::dataset::LabelVocabulary;
use intent_core::embedding::{embed_dataset, toy_embed, ProviderConfig, ToyEmbedder};
use intent_core::loss::{negative_loss, positive_loss, LossKind, OfcConfig};
use intent_core::metrics::{Averaging, EvalReport};
use intent_core::mining::{build_pairs, mine, MiningConfig, MiningMode, MiningCounts, Polarity, PositiveRule, SimilarityTable};
use intent_core::pipeline::{evaluate_model, train_model, LossLog};
use intent_core::trainer::{predict, ModelArtifact, TrainConfig};

const TOY_DIM: usize = 256;

thread_local! {
    static MODEL: RefCell<Option<ModelArtifact>> = const { RefCell::new(None) };
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Debug, Serialize)]
pub struct LossCurve {
    pub similarity: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Per-pair focal-contrastive loss over `points` similarities spanning [-1, 1].
pub fn loss_curve(alpha: f64, gamma: f64, margin: f64, points: usize) -> intent_core::Result<LossCurve> {
    let config = OfcConfig {
        alpha,
        gamma,
        margin,
        ..OfcConfig::default()
    };
    config.validate()?;
    let points = points.max(2);
    let similarity: Vec<f64> = (0..points)
        .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
        .collect();
    let single = |f: fn(&[(usize, f64)], &OfcConfig) -> intent_core::loss::LossOutput| {
        similarity.iter().map(|&s| f(&[(0, s)], &config).value).collect()
    };
    Ok(LossCurve {
        positive: single(positive_loss),
        negative: single(negative_loss),
        similarity: similarity.clone(),
    })
}

#[derive(Debug, Serialize)]
pub struct MinedPair {
    pub a: usize,
    pub b: usize,
    pub positive: bool,
    pub similarity: f64,
    /// "hard", "selected" or "dropped".
    pub status: &'static str,
}

#[derive(Debug, Serialize)]
pub struct MiningView {
    pub texts: Vec<String>,
    pub labels: Vec<Vec<String>>,
    pub pairs: Vec<MinedPair>,
    pub t_neg: Option<f64>,
    pub t_pos: Option<f64>,
    pub counts: MiningCounts,
}

/// Mines one batch of `batch_size` generated queries embedded with the toy provider.
pub fn mining_view(seed: u64, batch_size: usize, p: f64, standard: bool) -> intent_core::Result<MiningView> {
    let vocab = LabelVocabulary::maritime();
    let per_class = batch_size.div_ceil(vocab.len()).max(1);
    let dataset = offline_generate(&vocab, per_class, &pair_combos(&vocab, batch_size / 4, seed), seed)?;
    // Evenly spaced rows so the batch mixes singles and combinations.
    let n = batch_size.min(dataset.len());
    let rows: Vec<usize> = (0..n)
        .map(|i| (seed as usize + i * dataset.len() / n) % dataset.len())
        .collect();
    let batch = dataset.subset(&rows);
    let embedded = embed_dataset(&batch, &ToyEmbedder { dim: TOY_DIM, seed: 0 })?;
    let labels: Vec<_> = batch.samples.iter().map(|s| s.labels.clone()).collect();
    let pair_set = build_pairs(&labels, PositiveRule::Exact);
    let vectors: Vec<_> = embedded.iter().map(|s| s.embedding.clone()).collect();
    let table = SimilarityTable::from_embeddings(&pair_set, &vectors)?;
    let config = MiningConfig {
        p,
        mode: if standard { MiningMode::Standard } else { MiningMode::Literal },
        ..MiningConfig::default()
    };
    config.validate()?;
    let mined = mine(&table, &config);

    let mut status = vec!["dropped"; pair_set.pairs.len()];
    for &(i, _) in mined.pos_final.iter().chain(&mined.neg_final) {
        status[i] = "selected";
    }
    for &(i, _) in mined.hard_pos.iter().chain(&mined.hard_neg) {
        status[i] = "hard";
    }
    let sims: BTreeMap<usize, f64> = table.pos.iter().chain(&table.neg).copied().collect();
    let pairs = pair_set
        .pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| MinedPair {
            a: pair.a,
            b: pair.b,
            positive: pair.polarity == Polarity::Positive,
            similarity: sims[&i],
            status: status[i],
        })
        .collect();
    Ok(MiningView {
        texts: batch.texts(),
        labels: labels
            .iter()
            .map(|l| l.names(&vocab).into_iter().map(str::to_string).collect())
            .collect(),
        pairs,
        t_neg: mined.t_neg,
        t_pos: mined.t_pos,
        counts: mined.counts,
    })
}

#[derive(Debug, Serialize)]
pub struct ToyTraining {
    pub samples: usize,
    pub report: EvalReport,
    pub log: LossLog,
}

/// Generates, embeds, trains and evaluates a toy model; returns it with its summary.
pub fn train_toy(
    per_class: usize,
    combos: usize,
    epochs_pretrain: usize,
    epochs_finetune: usize,
    seed: u64,
    loss: &str,
) -> intent_core::Result<(ModelArtifact, ToyTraining)> {
    let vocab = LabelVocabulary::maritime();
    let dataset = offline_generate(&vocab, per_class, &pair_combos(&vocab, combos, seed), seed)?;
    let provider = ProviderConfig::Toy { dim: TOY_DIM, seed: 0 };
    let embedded = embed_dataset(&dataset, &ToyEmbedder { dim: TOY_DIM, seed: 0 })?;
    let config = TrainConfig {
        epochs_pretrain,
        epochs_finetune,
        seed,
        loss_kind: loss.parse::<LossKind>()?,
        ..TrainConfig::default()
    };
    let run = train_model(&dataset, &embedded, &provider, &config)?;
    let report = evaluate_model(&run.artifact, &dataset, &embedded, Averaging::Micro)?;
    Ok((
        run.artifact,
        ToyTraining {
            samples: dataset.len(),
            report,
            log: run.log,
        },
    ))
}

#[derive(Debug, Serialize)]
pub struct Classification {
    pub labels: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

pub fn classify_with(artifact: &ModelArtifact, text: &str) -> intent_core::Result<Classification> {
    if text.trim().is_empty() {
        return Err(intent_core::Error::EmptyText { line: None });
    }
    let (dim, seed) = match artifact.provider {
        ProviderConfig::Toy { dim, seed } => (dim, seed),
        _ => return Err(intent_core::Error::InvalidConfig("demo models use the toy provider".into())),
    };
    let prediction = predict(toy_embed(text, dim, seed).as_slice(), artifact)?;
    let vocab = &artifact.vocabulary;
    Ok(Classification {
        labels: prediction.labels.names(vocab).into_iter().map(str::to_string).collect(),
        scores: vocab.labels().iter().cloned().zip(prediction.scores).collect(),
    })
}

#[wasm_bindgen(js_name = lossCurve)]
pub fn loss_curve_js(alpha: f64, gamma: f64, margin: f64, points: usize) -> Result<String, JsValue> {
    to_json(&loss_curve(alpha, gamma, margin, points).map_err(js_err)?)
}

#[wasm_bindgen(js_name = mineBatch)]
pub fn mine_batch_js(seed: u32, batch_size: usize, p: f64, standard: bool) -> Result<String, JsValue> {
    to_json(&mining_view(u64::from(seed), batch_size, p, standard).map_err(js_err)?)
}

/// Trains a toy model and keeps it for later `classify` calls.
#[wasm_bindgen(js_name = trainToy)]
pub fn train_toy_js(
    per_class: usize,
    combos: usize,
    epochs_pretrain: usize,
    epochs_finetune: usize,
    seed: u32,
    loss: &str,
) -> Result<String, JsValue> {
    let (artifact, summary) =
        train_toy(per_class, combos, epochs_pretrain, epochs_finetune, u64::from(seed), loss).map_err(js_err)?;
    MODEL.with(|m| *m.borrow_mut() = Some(artifact));
    to_json(&summary)
}

#[wasm_bindgen]
pub fn classify(text: &str) -> Result<String, JsValue> {
    MODEL.with(|m| {
        let model = m.borrow();
        let artifact = model.as_ref().ok_or_else(|| js_err("train a model first"))?;
        to_json(&classify_with(artifact, text).map_err(js_err)?)
    })
}
