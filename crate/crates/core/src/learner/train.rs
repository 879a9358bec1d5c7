use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::head::{loss_and_grad, ClassifierHead, Example};
use super::store::FeatureStore;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty applied to weights (not biases) in the update.
    pub weight_decay: f64,
    /// Hidden layer widths; empty means a single softmax layer.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
            weight_decay: 1e-4,
            hidden: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs < 1 {
            problems.push("epochs must be at least 1".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            problems.push(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            problems.push("batch size must be positive".to_string());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.hidden.contains(&0) {
            problems.push("hidden layer widths must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub examples: usize,
}

fn full_pass(head: &ClassifierHead, examples: &[Example<'_>]) -> Result<(f64, f64)> {
    let (loss, _) = loss_and_grad(head, examples)?;
    let mut correct = 0usize;
    for ex in examples {
        if head.predict(ex.features)?.class.index() == ex.label {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / examples.len() as f64))
}

/// Mini-batch SGD over the given examples, in the given order. Each epoch
/// visits a seeded permutation; the head starts from [`ClassifierHead::new`].
///
/// Learning rate zero is allowed (it leaves the parameters untouched).
pub fn train_examples(
    input_dim: usize,
    examples: &[Example<'_>],
    config: &TrainConfig,
) -> Result<(ClassifierHead, TrainLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let mut head = ClassifierHead::new(input_dim, &config.hidden, config.seed)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs as usize),
        examples: examples.len(),
    };
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        SplitMix64::derive(config.seed, &format!("epoch/{epoch}")).shuffle(&mut order);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (loss, grads) = loss_and_grad(&head, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {loss} at epoch {epoch}, batch {b} (learning rate {})",
                    config.learning_rate
                )));
            }
            for (layer, g) in head.layers.iter_mut().zip(&grads.layers) {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= config.learning_rate * (gw + config.weight_decay * *w);
                }
                for (bias, gb) in layer.bias.iter_mut().zip(&g.bias) {
                    *bias -= config.learning_rate * gb;
                }
            }
        }
        let (loss, accuracy) = full_pass(&head, examples)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss became {loss} after epoch {epoch}")));
        }
        log.epochs.push(EpochLog { epoch, loss, accuracy });
    }
    Ok((head, log))
}

/// Train on the rows of `store` labelled `Train` in `splits`. Rows are put in
/// content-hash order first, so the store's row order does not matter.
pub fn train_head(
    store: &FeatureStore,
    splits: &BTreeMap<ContentHash, Split>,
    config: &TrainConfig,
) -> Result<(ClassifierHead, TrainLog)> {
    config.validate()?;
    let mut rows: Vec<_> = store
        .rows
        .iter()
        .filter(|r| splits.get(&r.content_hash) == Some(&Split::Train))
        .collect();
    let train_count = splits.values().filter(|s| **s == Split::Train).count();
    if train_count == 0 {
        return Err(Error::Training("train split is empty".into()));
    }
    if rows.len() != train_count {
        let have: std::collections::HashSet<_> = rows.iter().map(|r| r.content_hash).collect();
        let missing: Vec<String> = splits
            .iter()
            .filter(|(h, s)| **s == Split::Train && !have.contains(*h))
            .take(5)
            .map(|(h, _)| h.short())
            .collect();
        return Err(Error::Training(format!(
            "{} train entries have no feature row (e.g. {})",
            train_count - rows.len(),
            missing.join(", ")
        )));
    }
    rows.sort_by_key(|a| a.content_hash);
    let features: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.values.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let examples: Vec<Example<'_>> = features
        .iter()
        .zip(&rows)
        .map(|(f, r)| Example {
            features: f,
            label: r.label as usize,
        })
        .collect();
    train_examples(store.dim, &examples, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_collects_all_problems() {
        let bad = TrainConfig { epochs: 0, learning_rate: -1.0, batch_size: 0, ..TrainConfig::default() };
        match bad.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 1.0 - i as f64]).collect();
        let ex: Vec<Example> = xs.iter().enumerate().map(|(i, x)| Example { features: x, label: i % 4 }).collect();
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 5, ..TrainConfig::default() };
        let (head, log) = train_examples(2, &ex, &cfg).unwrap();
        assert_eq!(head, ClassifierHead::zeros(2));
        assert!(log.epochs.iter().all(|e| e.loss == log.epochs[0].loss));
        assert_eq!(log.epochs.len(), 10);
    }

    #[test]
    fn empty_train_split_is_error() {
        let store = FeatureStore::new("x", 2);
        assert!(matches!(train_head(&store, &BTreeMap::new(), &TrainConfig::default()), Err(Error::Training(_))));
    }

    #[test]
    fn missing_feature_rows_reported() {
        let store = FeatureStore::new("x", 2);
        let splits = BTreeMap::from([(ContentHash::of(b"a"), Split::Train)]);
        let err = train_head(&store, &splits, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("no feature row"), "{err}");
    }

    #[test]
    fn divergence_aborts() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![1e150 * (i as f64 - 3.5)]).collect();
        let ex: Vec<Example> = xs.iter().enumerate().map(|(i, x)| Example { features: x, label: i % 4 }).collect();
        let cfg = TrainConfig { learning_rate: 1e200, ..TrainConfig::default() };
        assert!(train_examples(1, &ex, &cfg).is_err());
    }
}
