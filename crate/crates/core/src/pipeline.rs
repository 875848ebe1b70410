//! Whole-run helpers shared by the command line and the browser demo: split a
//! dataset, train both stages, and evaluate on the same holdout later.

use serde::Serialize;

use crate::dataset::{split_indices, Dataset};
use crate::embedding::{EmbeddedSample, ProviderConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_with, Averaging, EvalReport};
use crate::trainer::{finetune, initial_projection, pretrain, similarity_gap, ModelArtifact, TrainConfig};

/// Row indices of the training and holdout parts of an `n`-row dataset.
/// A zero holdout fraction uses every row for both.
pub fn partition(n: usize, config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if config.holdout_fraction == 0.0 {
        let all: Vec<usize> = (0..n).collect();
        return Ok((all.clone(), all));
    }
    let s = split_indices(n, config.holdout_fraction, config.seed)?;
    Ok((s.train, s.holdout))
}

fn pick(embedded: &[EmbeddedSample], rows: &[usize]) -> Vec<EmbeddedSample> {
    rows.iter().map(|&i| embedded[i].clone()).collect()
}

fn check_aligned(dataset: &Dataset, embedded: &[EmbeddedSample]) -> Result<()> {
    if dataset.len() != embedded.len() {
        return Err(Error::RowCountMismatch {
            file_rows: embedded.len(),
            dataset_rows: dataset.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LossLog {
    pub pretrain: Vec<f64>,
    pub finetune: Vec<f64>,
    /// Holdout margin gap before and after pretraining, when both polarities occur.
    pub gap_before: Option<f64>,
    pub gap_after: Option<f64>,
}

pub struct TrainRun {
    pub artifact: ModelArtifact,
    pub log: LossLog,
}

fn gap_or_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(g) => Ok(Some(g)),
        Err(Error::NoPairs) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn train_model(
    dataset: &Dataset,
    embedded: &[EmbeddedSample],
    provider: &ProviderConfig,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    check_aligned(dataset, embedded)?;
    if let Some(s) = embedded.first() {
        if s.embedding.dim() != provider.dim() {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: provider.dim(),
                found: s.embedding.dim(),
            });
        }
    }
    let (train_rows, holdout_rows) = partition(dataset.len(), config)?;
    let train = pick(embedded, &train_rows);
    let holdout = pick(embedded, &holdout_rows);
    let rule = config.mining.positive_rule;

    let initial = initial_projection(provider.dim(), config);
    let gap_before = gap_or_none(similarity_gap(&initial, &holdout, rule))?;
    let pre = pretrain(&train, config)?;
    let gap_after = gap_or_none(similarity_gap(&pre.head, &holdout, rule))?;
    let fine = finetune(&train, pre.head, &dataset.vocabulary, provider, config)?;
    Ok(TrainRun {
        artifact: fine.artifact,
        log: LossLog {
            pretrain: pre.epoch_losses,
            finetune: fine.epoch_losses,
            gap_before,
            gap_after,
        },
    })
}

/// Scores the holdout recorded in the artifact's training config.
pub fn evaluate_model(
    artifact: &ModelArtifact,
    dataset: &Dataset,
    embedded: &[EmbeddedSample],
    averaging: Averaging,
) -> Result<EvalReport> {
    check_aligned(dataset, embedded)?;
    if dataset.vocabulary != artifact.vocabulary {
        return Err(Error::InvalidVocabulary(
            "dataset taxonomy differs from the model's".into(),
        ));
    }
    let (_, rows) = partition(dataset.len(), &artifact.train_config)?;
    let scores = rows
        .iter()
        .map(|&i| artifact.scores(embedded[i].embedding.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let truth = dataset.subset(&rows).truth_matrix();
    evaluate_with(&scores, artifact.decision_threshold, &truth, averaging)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::offline_generate;
    use crate::dataset::LabelVocabulary;
    use crate::embedding::{embed_dataset, ToyEmbedder};

    fn small() -> (Dataset, Vec<EmbeddedSample>, ProviderConfig, TrainConfig) {
        let v = LabelVocabulary::maritime();
        let ds = offline_generate(&v, 6, &[], 3).unwrap();
        let provider = ProviderConfig::Toy { dim: 64, seed: 0 };
        let e = embed_dataset(&ds, &ToyEmbedder { dim: 64, seed: 0 }).unwrap();
        let cfg = TrainConfig {
            hidden_dim: 16,
            proj_dim: 8,
            epochs_pretrain: 2,
            epochs_finetune: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        (ds, e, provider, cfg)
    }

    #[test]
    fn partition_with_zero_holdout_reuses_everything() {
        let cfg = TrainConfig {
            holdout_fraction: 0.0,
            ..TrainConfig::default()
        };
        let (a, b) = partition(5, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn train_then_evaluate_same_holdout() {
        let (ds, e, provider, cfg) = small();
        let run = train_model(&ds, &e, &provider, &cfg).unwrap();
        assert_eq!(run.log.pretrain.len(), 2);
        assert_eq!(run.log.finetune.len(), 3);
        let report = evaluate_model(&run.artifact, &ds, &e, Averaging::Micro).unwrap();
        assert_eq!(report.sample_count, 10);
    }

    #[test]
    fn rejects_misaligned_or_wrong_dim_inputs() {
        let (ds, e, provider, cfg) = small();
        assert!(matches!(
            train_model(&ds, &e[1..], &provider, &cfg),
            Err(Error::RowCountMismatch { .. })
        ));
        let wrong = ProviderConfig::Toy { dim: 32, seed: 0 };
        assert!(matches!(
            train_model(&ds, &e, &wrong, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
