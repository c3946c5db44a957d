use crate::error::{CliError, Result};

fn check_lengths(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CliError::runtime(format!(
            "metric inputs differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(CliError::runtime("metric inputs are empty"));
    }
    Ok(())
}

/// Fraction of samples whose thresholded score (at 0.5) matches the label.
pub fn accuracy(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| usize::from(**s >= 0.5) == y)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Macro F1 over the two classes; a class with no predictions and no
/// members contributes F1 = 0 only if it has members or predictions.
pub fn macro_f1(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut f1s = Vec::new();
    for class in [1usize, 0usize] {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fne = 0.0;
        for (s, &y) in scores.iter().zip(labels) {
            let pred = usize::from(*s >= 0.5);
            if pred == class && y == class {
                tp += 1.0;
            } else if pred == class && y != class {
                fp += 1.0;
            } else if pred != class && y == class {
                fne += 1.0;
            }
        }
        if tp + fp + fne == 0.0 {
            continue; // class absent entirely
        }
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fne) };
        f1s.push(f1);
    }
    if f1s.is_empty() {
        return Err(CliError::runtime("macro_f1: no class present"));
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half (rank-sum formulation).
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let p = labels.iter().filter(|&&y| y == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(CliError::runtime("auc undefined: one class is absent"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // average ranks over tie groups (1-based ranks)
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Mean reciprocal rank plus Hit@K rates over ranked lists. Each query is
/// (scores, index of the single positive); ties rank the positive after the
/// tied negatives.
pub fn mrr_hits(queries: &[(Vec<f64>, usize)], ks: &[usize]) -> Result<(f64, Vec<f64>)> {
    if queries.is_empty() {
        return Err(CliError::runtime("mrr_hits: no queries"));
    }
    let mut mrr = 0.0;
    let mut hits = vec![0.0; ks.len()];
    for (scores, pos) in queries {
        if *pos >= scores.len() {
            return Err(CliError::runtime("mrr_hits: positive index out of range"));
        }
        let target = scores[*pos];
        let rank = 1 + scores
            .iter()
            .enumerate()
            .filter(|(i, s)| *i != *pos && **s >= target)
            .count();
        mrr += 1.0 / rank as f64;
        for (slot, &k) in hits.iter_mut().zip(ks) {
            if rank <= k {
                *slot += 1.0;
            }
        }
    }
    let q = queries.len() as f64;
    Ok((mrr / q, hits.into_iter().map(|h| h / q).collect()))
}

/// Mean absolute and mean squared error.
pub fn mae_mse(preds: &[f64], targets: &[f64]) -> Result<(f64, f64)> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(CliError::runtime("mae_mse: bad input lengths"));
    }
    let n = preds.len() as f64;
    let mae = preds.iter().zip(targets).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = preds
        .iter()
        .zip(targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok((mae, mse))
}

/// Approximate label ratio of a k-shot setting: shots * classes / n.
pub fn label_ratio(shots: usize, classes: usize, n: usize) -> f64 {
    (shots * classes) as f64 / n as f64
}
