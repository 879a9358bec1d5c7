mod common;

use common::{accuracy, clusters, examples, gradient_check, random_head};
use fleet_census::learner::{loss_and_grad, train_examples, ClassifierHead, TrainConfig};

#[test]
fn gradients_match_central_differences() {
    for (dim, seed) in [(4, 1), (8, 2), (128, 3)] {
        let (xs, ys) = clusters(dim, 8, 2.0, seed);
        let head = random_head(dim, &[], 0.1, seed);
        let check = gradient_check(&head, &examples(&xs, &ys), 1e-5);
        assert_eq!(check.params, 4 * (dim + 1));
        assert!(check.relative < 1e-5, "dim {dim}: relative error {:e}", check.relative);
    }
}

#[test]
fn hidden_layer_gradients_match() {
    let (xs, ys) = clusters(6, 5, 2.0, 9);
    let head = random_head(6, &[7], 0.5, 9);
    let check = gradient_check(&head, &examples(&xs, &ys), 1e-6);
    assert!(check.relative < 1e-6, "relative error {:e}", check.relative);
}

#[test]
fn untrained_head_loss_is_ln4() {
    let (xs, ys) = clusters(8, 10, 3.0, 4);
    for head in [ClassifierHead::zeros(8), ClassifierHead::new(8, &[], 77).unwrap()] {
        let (loss, _) = loss_and_grad(&head, &examples(&xs, &ys)).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let (xs, ys) = clusters(8, 30, 4.0, 5);
    let ex = examples(&xs, &ys);
    let config = TrainConfig {
        epochs: 5,
        learning_rate: 0.05,
        batch_size: 7,
        seed: 11,
        hidden: vec![5],
        ..TrainConfig::default()
    };
    let (a, la) = train_examples(8, &ex, &config).unwrap();
    let (b, lb) = train_examples(8, &ex, &config).unwrap();
    let bits = |h: &ClassifierHead| h.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(la, lb);
    let (c, _) = train_examples(8, &ex, &TrainConfig { seed: 12, ..config }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn full_batch_descent_never_increases_loss() {
    let (xs, ys) = clusters(5, 100, 1.0, 6);
    let ex = examples(&xs, &ys);
    let smooth = 0.5 * xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).sum::<f64>() / xs.len() as f64;
    let config = TrainConfig {
        epochs: 50,
        learning_rate: 1.0 / smooth,
        batch_size: xs.len(),
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let (_, log) = train_examples(5, &ex, &config).unwrap();
    let mut prev = 4f64.ln();
    for e in &log.epochs {
        assert!(e.loss <= prev + 1e-12, "epoch {}: {} > {}", e.epoch, e.loss, prev);
        prev = e.loss;
    }
    assert!(prev < 4f64.ln() - 0.1);
}

#[test]
fn separable_clusters_are_learned() {
    let (xs, ys) = clusters(8, 200, 10.0, 7);
    let (hx, hy) = clusters(8, 50, 10.0, 8);
    let config = TrainConfig {
        epochs: 10,
        learning_rate: 0.05,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    };
    let (head, _) = train_examples(8, &examples(&xs, &ys), &config).unwrap();
    assert!(accuracy(&head, &xs, &ys) >= 0.99);
    assert!(accuracy(&head, &hx, &hy) >= 0.95);
}

#[test]
fn zero_learning_rate_keeps_initial_head() {
    let (xs, ys) = clusters(4, 5, 3.0, 10);
    let config = TrainConfig { epochs: 3, learning_rate: 0.0, seed: 4, ..TrainConfig::default() };
    let (head, _) = train_examples(4, &examples(&xs, &ys), &config).unwrap();
    assert_eq!(head, ClassifierHead::new(4, &[], 4).unwrap());
}
