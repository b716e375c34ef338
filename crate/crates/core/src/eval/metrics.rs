//! Accuracy, non-interpolated average precision and its class mean.

use crate::error::{Error, Result};

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "accuracy needs equal non-empty vectors ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Ranking by descending score, ties broken by lower index first.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean, over the ranks of relevant items, of the precision at that rank.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    if scores.len() != relevant.len() {
        return Err(Error::shape("scores and relevance differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::invalid("average precision needs at least one relevant item"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Unweighted mean of per-class AP over classes that have relevant items.
pub fn mean_ap(per_class_scores: &[Vec<f64>], per_class_relevance: &[Vec<bool>]) -> Result<f64> {
    if per_class_scores.len() != per_class_relevance.len() {
        return Err(Error::shape("one relevance vector per class is required"));
    }
    let mut aps = Vec::new();
    for (s, r) in per_class_scores.iter().zip(per_class_relevance) {
        if r.iter().any(|&x| x) {
            aps.push(average_precision(s, r)?);
        }
    }
    if aps.is_empty() {
        return Err(Error::invalid("mAP needs a class with at least one relevant item"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Precision at every rank counted from scratch over an explicit ordering.
    fn oracle(scores: &[f64], relevant: &[bool]) -> f64 {
        let n = scores.len();
        let mut order: Vec<usize> = (0..n).collect();
        // Selection sort: repeatedly take the highest score, lowest index.
        for pos in 0..n {
            let mut best = pos;
            for cand in pos + 1..n {
                let (a, b) = (order[cand], order[best]);
                if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                    best = cand;
                }
            }
            order.swap(pos, best);
        }
        let mut precisions = vec![];
        for r in 0..n {
            if relevant[order[r]] {
                let in_top = (0..=r).filter(|&q| relevant[order[q]]).count();
                precisions.push(in_top as f64 / (r + 1) as f64);
            }
        }
        precisions.iter().sum::<f64>() / precisions.len() as f64
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.3, 0.1], &[true, true]).unwrap(), 1.0);
        assert_eq!(average_precision(&[4.0, 3.0, 2.0, 1.0], &[false, false, false, true]).unwrap(), 0.25);
        assert!(average_precision(&[1.0], &[false]).is_err());
        // Tied scores: the lower index ranks first.
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn map_examples() {
        let s = vec![vec![0.9, 0.1], vec![0.1, 0.9, 0.5]];
        let r = vec![vec![true, false], vec![true, false, false]];
        assert_eq!(mean_ap(&s, &r).unwrap(), (1.0 + 1.0 / 3.0) / 2.0);
        assert_eq!(mean_ap(&s[..1], &r[..1]).unwrap(), 1.0);
        let half = vec![vec![0.9, 0.8], vec![0.9, 0.8]];
        let rel = vec![vec![true, false], vec![false, true]];
        assert_eq!(mean_ap(&half, &rel).unwrap(), 0.75);
        // Classes without relevant items are skipped.
        let rel = vec![vec![true, false], vec![false, false]];
        assert_eq!(mean_ap(&half, &rel).unwrap(), 1.0);
    }

    #[test]
    fn map_matches_oracle_on_small_random_instances() {
        let mut rng = stream(31, &[]);
        for _ in 0..200 {
            let scores: Vec<Vec<f64>> = (0..2).map(|_| (0..8).map(|_| rng.random_range(0..4) as f64).collect()).collect();
            let mut rel: Vec<Vec<bool>> = (0..2).map(|_| (0..8).map(|_| rng.random_bool(0.4)).collect()).collect();
            rel.iter_mut().for_each(|r| r[0] = true);
            let expect = (oracle(&scores[0], &rel[0]) + oracle(&scores[1], &rel[1])) / 2.0;
            assert_eq!(mean_ap(&scores, &rel).unwrap(), expect);
        }
    }

    proptest! {
        #[test]
        fn ap_equals_oracle(n in 1usize..30, seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let mut rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            rel[rng.random_range(0..n)] = true;
            prop_assert_eq!(average_precision(&scores, &rel).unwrap(), oracle(&scores, &rel));
        }

        #[test]
        fn metrics_permutation_invariant(n in 2usize..30, seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            // Distinct scores so ties cannot reorder under permutation.
            let scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
            let mut rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            rel[0] = true;
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let p = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let pb = |v: &[bool]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let pu = |v: &[usize]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
            prop_assert_eq!(average_precision(&scores, &rel).unwrap(), average_precision(&p(&scores), &pb(&rel)).unwrap());
            prop_assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy(&pu(&pred), &pu(&truth)).unwrap());
            let s2 = vec![scores.clone(), scores.iter().map(|v| -v).collect()];
            let r2 = vec![rel.clone(), rel.iter().map(|v| !v).collect::<Vec<_>>()];
            if r2[1].iter().any(|&x| x) {
                let ps: Vec<Vec<f64>> = s2.iter().map(|v| p(v)).collect();
                let pr: Vec<Vec<bool>> = r2.iter().map(|v| pb(v)).collect();
                prop_assert_eq!(mean_ap(&s2, &r2).unwrap(), mean_ap(&ps, &pr).unwrap());
            }
        }
    }
}
