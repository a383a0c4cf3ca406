#![allow(dead_code)]

use rand::Rng;

/// AUROC over all (outlier, inlier) pairs, ties worth one half.
pub fn auroc_pairs(scores: &[f64], is_ood: &[bool]) -> f64 {
    let pos: Vec<f64> = (0..scores.len())
        .filter(|&i| is_ood[i])
        .map(|i| scores[i])
        .collect();
    let neg: Vec<f64> = (0..scores.len())
        .filter(|&i| !is_ood[i])
        .map(|i| scores[i])
        .collect();
    let mut twice: u128 = 0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                twice += 2;
            } else if p == n {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64
}

/// Support-weighted F1 of hard label vectors over classes `0..=k`.
pub fn weighted_f1_labels(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    let mut acc = 0.0;
    for class in 0..=k {
        let actual = truth.iter().filter(|&&t| t == class).count();
        let predicted = pred.iter().filter(|&&p| p == class).count();
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == class && t == class)
            .count();
        total += actual as f64;
        if actual > 0 {
            acc += actual as f64 * (2 * hits) as f64 / (predicted + actual) as f64;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        acc / total
    }
}

/// Best joint F1 by relabelling at every candidate threshold; the largest
/// threshold wins ties. Returns `(f1, threshold)`.
pub fn joint_f1_brute(id_pred: &[usize], scores: &[f64], truth: &[usize], c: usize) -> (f64, f64) {
    let mut thresholds = vec![f64::INFINITY];
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();
    thresholds.extend(sorted);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for theta in thresholds {
        let labels: Vec<usize> = (0..scores.len())
            .map(|i| if scores[i] >= theta { c } else { id_pred[i] })
            .collect();
        let f = weighted_f1_labels(&labels, truth, c);
        if f > best.0 {
            best = (f, theta);
        }
    }
    best
}

/// Trapezoid area under `(x, y)` points sorted by x.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Scores with frequent ties and labels with both identities present.
pub fn scored_instance(rng: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..60);
    let levels = rng.random_range(1..12);
    let mut scores: Vec<f64> = (0..n)
        .map(|_| {
            if levels > 8 {
                rng.random::<f64>()
            } else {
                rng.random_range(0..levels) as f64 / 4.0
            }
        })
        .collect();
    let mut is_ood: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    is_ood[0] = true;
    is_ood[1] = false;
    if rng.random_bool(0.1) {
        scores.iter_mut().for_each(|s| *s = 0.5);
    }
    (scores, is_ood)
}

/// A joint-classification instance: ID predictions in `0..c`, truth in `0..=c`.
pub fn joint_instance(rng: &mut impl Rng) -> (Vec<usize>, Vec<f64>, Vec<usize>, usize) {
    let c = rng.random_range(1..5);
    let (scores, is_ood) = scored_instance(rng);
    let id_pred = (0..scores.len()).map(|_| rng.random_range(0..c)).collect();
    let truth = is_ood
        .iter()
        .map(|&o| if o { c } else { rng.random_range(0..c) })
        .collect();
    (id_pred, scores, truth, c)
}
