//! Video-level ranking metrics. Forged clips are the positive class and
//! are expected to score higher.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Mann-Whitney AUC: the fraction of (real, fake) pairs ranked correctly,
/// ties counting one half.
///
/// Computed by sorting in `O((n + m) log(n + m))`.
pub fn auc(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Input(format!(
            "auc needs both classes, got {} real and {} fake",
            real.len(),
            fake.len()
        )));
    }
    if real.iter().chain(fake).any(|v| v.is_nan()) {
        return Err(Error::Input("auc scores must not be NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = real
        .iter()
        .map(|&v| (v, false))
        .chain(fake.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of (real strictly below) + 0.5 (real tied) over fake scores,
    // accumulated in doubled units so every term is an integer.
    let mut twice_wins: u128 = 0;
    let mut real_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let group = &all[i..j];
        let fakes = group.iter().filter(|g| g.1).count() as u128;
        let reals = group.len() as u128 - fakes;
        twice_wins += fakes * (2 * real_below + reals);
        real_below += reals;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * real.len() as u128 * fake.len() as u128) as f64)
}

/// Unweighted mean of per-dataset AUCs.
pub fn average_auc(per_dataset: &BTreeMap<String, f64>) -> Result<f64> {
    if per_dataset.is_empty() {
        return Err(Error::Input(
            "average_auc needs at least one dataset".into(),
        ));
    }
    Ok(per_dataset.values().sum::<f64>() / per_dataset.len() as f64)
}

/// Fraction of correct real/fake calls.
pub fn accuracy(real_calls_fake: &[bool], fake_calls_fake: &[bool]) -> Result<f64> {
    let n = real_calls_fake.len() + fake_calls_fake.len();
    if n == 0 {
        return Err(Error::Input("accuracy of zero clips".into()));
    }
    let correct = real_calls_fake.iter().filter(|f| !**f).count()
        + fake_calls_fake.iter().filter(|f| **f).count();
    Ok(correct as f64 / n as f64)
}

/// `(fpr, tpr)` points of the ROC curve from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(real: &[f64], fake: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = real.iter().chain(fake).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |scores: &[f64], th: f64| {
        scores.iter().filter(|&&s| s >= th).count() as f64 / scores.len().max(1) as f64
    };
    std::iter::once((0.0, 0.0))
        .chain(
            thresholds
                .iter()
                .map(|&th| (rate(real, th), rate(fake, th))),
        )
        .chain(std::iter::once((1.0, 1.0)))
        .collect()
}
