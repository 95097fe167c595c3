//! Stratified k-fold splits with a validation subset carved out of each
//! training split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, SparseSeries};
use crate::error::{Error, Result};

pub const VALIDATION_FRACTION: f64 = 0.2;

/// Case indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_groups(labels: &[Label]) -> Option<[Vec<usize>; 2]> {
    let mut groups = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        match l {
            Label::Class(c) => groups[usize::from(*c != 0)].push(i),
            Label::Regression(_) => return None,
        }
    }
    Some(groups)
}

/// Deals shuffled indices round-robin into `k` buckets, each class in turn
/// so both fold sizes and class counts differ by at most one.
fn deal(groups: Vec<Vec<usize>>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut buckets = vec![Vec::new(); k];
    let mut next = 0;
    for mut g in groups {
        g.shuffle(rng);
        for i in g {
            buckets[next % k].push(i);
            next += 1;
        }
    }
    for b in &mut buckets {
        b.sort_unstable();
    }
    buckets
}

/// Splits `train` into (train, validation), stratified like the folds.
pub fn validation_split(
    train: &[usize],
    labels: &[Label],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let sub: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
    let groups: Vec<Vec<usize>> = match class_groups(&sub) {
        Some(g) => g.into_iter().collect(),
        None => vec![(0..train.len()).collect()],
    };
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for mut g in groups {
        g.shuffle(rng);
        let n_val = ((g.len() as f64) * fraction).round() as usize;
        val.extend(g[..n_val].iter().map(|&j| train[j]));
        fit.extend(g[n_val..].iter().map(|&j| train[j]));
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

pub fn kfold_split(cases: &[SparseSeries], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let labels: Vec<Label> = cases.iter().map(|c| c.label).collect();
    kfold_split_labels(&labels, k, seed)
}

pub fn kfold_split_labels(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = labels.len();
    if k < 2 || n < k {
        return Err(Error::Config(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match class_groups(labels) {
        Some(g) => {
            let minority = g[0].len().min(g[1].len());
            if minority < k {
                return Err(Error::Config(format!(
                    "stratified {k}-fold split needs at least {k} cases of each class, smallest class has {minority}"
                )));
            }
            g.into_iter().collect()
        }
        None => vec![(0..n).collect()],
    };
    let buckets = deal(groups, k, &mut rng);
    let mut folds = Vec::with_capacity(k);
    for (f, test) in buckets.iter().enumerate() {
        let train: Vec<usize> = buckets
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, b)| b.iter().copied())
            .collect::<Vec<_>>();
        let mut train = train;
        train.sort_unstable();
        let (fit, validation) = validation_split(&train, labels, VALIDATION_FRACTION, &mut rng);
        folds.push(Fold {
            train: fit,
            validation,
            test: test.clone(),
        });
    }
    Ok(folds)
}
