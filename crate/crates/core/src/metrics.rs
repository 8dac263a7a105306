//! Evaluation metrics.

use alloc::vec::Vec;

use crate::data::QMatrix;

/// Rank AUC (Mann–Whitney) with tied scores credited one half. `None` when the
/// labels are all one class.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // average 1-based ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let pos = pos as f64;
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

/// Fraction of predictions on the right side of `threshold`.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    if scores.is_empty() {
        return None;
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &l)| (s >= threshold) == l).count();
    Some(hits as f64 / scores.len() as f64)
}

/// Fraction of all skills touched by at least one exercise in `tested`.
pub fn coverage(tested: &[usize], q: &QMatrix) -> f64 {
    let k = q.num_skills();
    if k == 0 {
        return 0.0;
    }
    let mut seen = alloc::vec![false; k];
    for &e in tested {
        for s in q.skills_of(e) {
            seen[s] = true;
        }
    }
    seen.iter().filter(|&&x| x).count() as f64 / k as f64
}

/// Arithmetic mean, `None` when empty.
pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for v in values {
        total += v;
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}
