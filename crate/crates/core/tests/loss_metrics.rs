//! Weighted cross-entropy and classification metrics against brute-force
//! oracles written from the definitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatiospatial::metrics::{average_confusion, per_class_metrics, ConfusionMatrix};
use spatiospatial::tensor::{Tape, Tensor};
use spatiospatial::train::{class_weights, weighted_cross_entropy};

/// Softmax by exponent sums; loss = mean_i W_{y_i} * -ln p_i[y_i].
fn loss_oracle(logits: &[Vec<f64>], targets: &[usize], counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let mut acc = 0.0;
    for (row, &y) in logits.iter().zip(targets) {
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let p = (row[y] - max).exp() / z;
        // one-hot target: only the true class term of the class sum survives
        let mut per_sample = 0.0;
        for c in 0..row.len() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            let w = 1.0 - counts[c] as f64 / total as f64;
            if onehot > 0.0 {
                per_sample += -w * onehot * p.ln();
            }
        }
        acc += per_sample;
    }
    acc / logits.len() as f64
}

#[test]
fn weighted_cross_entropy_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let classes = rng.gen_range(2..6);
        let n = rng.gen_range(1..5);
        let counts: Vec<usize> = (0..classes).map(|_| rng.gen_range(1..300)).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..classes).map(|_| rng.gen_range(-8.0..8.0)).collect()).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let weights = class_weights(&counts).unwrap();
        let tape = Tape::<f64>::new();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let logits = tape.input(Tensor::new(&[n, classes], flat).unwrap());
        let got = weighted_cross_entropy(logits, &targets, &weights).unwrap().value().item().unwrap();
        let want = loss_oracle(&rows, &targets, &counts);
        assert!((got - want).abs() <= 1e-6, "case {case}: {got} vs {want}");
    }
}

#[test]
fn class_weights_sum_to_classes_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let classes = rng.gen_range(2..8);
        let counts: Vec<usize> = (0..classes).map(|_| rng.gen_range(0..10_000)).collect();
        if counts.iter().sum::<usize>() == 0 {
            continue;
        }
        let w = class_weights(&counts).unwrap();
        let sum: f64 = w.weights.iter().sum();
        assert!((sum - (classes as f64 - 1.0)).abs() <= 1e-12, "{counts:?}: {sum}");
    }
}

#[test]
fn rarer_classes_weigh_more() {
    let w = class_weights(&[259, 73, 259]).unwrap();
    assert!(w.weights[1] > w.weights[0]);
    assert_eq!(w.weights[0], w.weights[2]);
}

struct Oracle {
    precision: Vec<f64>,
    recall: Vec<f64>,
    specificity: Vec<f64>,
    f1: Vec<f64>,
    accuracy: f64,
    macro_f1: f64,
    weighted_f1: f64,
}

/// Counts TP/FP/FN/TN by scanning the pairs directly.
fn metrics_oracle(pairs: &[(usize, usize)], classes: usize) -> Oracle {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut o = Oracle {
        precision: vec![],
        recall: vec![],
        specificity: vec![],
        f1: vec![],
        accuracy: div(pairs.iter().filter(|(t, p)| t == p).count(), pairs.len()),
        macro_f1: 0.0,
        weighted_f1: 0.0,
    };
    let mut support = vec![];
    for c in 0..classes {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count();
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count();
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count();
        let tn = pairs.iter().filter(|&&(t, p)| t != c && p != c).count();
        let (p, r) = (div(tp, tp + fp), div(tp, tp + fn_));
        o.precision.push(p);
        o.recall.push(r);
        o.specificity.push(div(tn, tn + fp));
        o.f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        support.push(tp + fn_);
    }
    o.macro_f1 = o.f1.iter().sum::<f64>() / classes as f64;
    o.weighted_f1 = o.f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / pairs.len() as f64;
    o
}

#[test]
fn metrics_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(usize, usize)> = (0..1000).map(|_| (rng.gen_range(0..3), rng.gen_range(0..3))).collect();
    let mut cm = ConfusionMatrix::new(3);
    for &(t, p) in &pairs {
        cm.update(t, p).unwrap();
    }
    let got = per_class_metrics(&cm).unwrap();
    let want = metrics_oracle(&pairs, 3);
    for c in 0..3 {
        let m = &got.per_class[c];
        assert_eq!(m.precision, want.precision[c]);
        assert_eq!(m.recall, want.recall[c]);
        assert_eq!(m.specificity, want.specificity[c]);
        assert_eq!(m.f1, want.f1[c]);
    }
    assert_eq!(got.accuracy, want.accuracy);
    assert_eq!(got.macro_f1, want.macro_f1);
    assert!((got.weighted_f1 - want.weighted_f1).abs() < 1e-15);
}

#[test]
fn metrics_match_oracle_on_skewed_and_degenerate_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let classes = rng.gen_range(2..5);
        let n = rng.gen_range(1..40);
        // a skewed predictor leaves some classes never predicted
        let pairs: Vec<(usize, usize)> =
            (0..n).map(|_| (rng.gen_range(0..classes), rng.gen_range(0..classes.min(2)))).collect();
        let mut cm = ConfusionMatrix::new(classes);
        pairs.iter().for_each(|&(t, p)| cm.update(t, p).unwrap());
        let got = per_class_metrics(&cm).unwrap();
        let want = metrics_oracle(&pairs, classes);
        for c in 0..classes {
            assert_eq!(got.per_class[c].precision, want.precision[c], "trial {trial}");
            assert_eq!(got.per_class[c].recall, want.recall[c], "trial {trial}");
            assert_eq!(got.per_class[c].specificity, want.specificity[c], "trial {trial}");
            assert_eq!(got.per_class[c].f1, want.f1[c], "trial {trial}");
        }
        assert!((got.macro_f1 - want.macro_f1).abs() < 1e-15);
        assert!((got.weighted_f1 - want.weighted_f1).abs() < 1e-15);
    }
}

#[test]
fn zero_denominators_are_flagged() {
    let mut cm = ConfusionMatrix::new(3);
    for _ in 0..4 {
        cm.update(0, 0).unwrap();
        cm.update(1, 0).unwrap();
    }
    let r = per_class_metrics(&cm).unwrap();
    assert_eq!(r.per_class[2].recall, 0.0);
    assert!(r.zero_division.iter().any(|f| f == "recall[2]"));
    assert!(r.zero_division.iter().any(|f| f == "precision[1]"));
    assert!(per_class_metrics(&ConfusionMatrix::new(3)).is_err());
}

#[test]
fn averaged_confusion_of_identical_folds_is_that_fold() {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![0, 2, 2], vec![1, 0, 5]]).unwrap();
    let (counts, rates) = average_confusion(&[cm.clone(), cm.clone(), cm.clone()]).unwrap();
    for (t, row) in cm.rows().iter().enumerate() {
        let n: u64 = row.iter().sum();
        for (p, &v) in row.iter().enumerate() {
            assert_eq!(counts[t][p], v as f64);
            assert!((rates[t][p] - v as f64 / n as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn csv_has_header_and_one_row_per_class() {
    let cm = ConfusionMatrix::from_rows(&[vec![1, 0], vec![2, 3]]).unwrap();
    let csv = cm.to_csv(&["a".into(), "b".into()]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("a"));
    assert!(lines[2].ends_with('3'));
}
