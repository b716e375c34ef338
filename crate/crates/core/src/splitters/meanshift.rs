use super::ClusterAssignment;
use crate::data::{ClassView, FeatureMatrix};
use crate::error::{Error, Result};
use crate::math::sq_dist;

const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftResult {
    pub assignment: ClusterAssignment,
    /// One merged mode per cluster.
    pub modes: FeatureMatrix,
}

/// Flat-kernel mean-shift started from every sample. Converged modes closer
/// than `bandwidth / 2` are merged; each sample joins the mode its own
/// trajectory reached.
pub fn split_meanshift(view: &ClassView, features_of_view: &FeatureMatrix, bandwidth: f64) -> Result<MeanShiftResult> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = view.len();
    if features_of_view.n_samples() != n {
        return Err(Error::shape("features do not match the class view"));
    }
    let dim = features_of_view.dim();
    let radius2 = bandwidth * bandwidth;
    let stop2 = (1e-3 * bandwidth).powi(2);

    let shift_to_mode = |start: &[f64]| -> Vec<f64> {
        let mut c = start.to_vec();
        for _ in 0..MAX_ITERS {
            let mut sum = vec![0.0; dim];
            let mut count = 0usize;
            for r in features_of_view.rows() {
                if sq_dist(r, &c) <= radius2 {
                    count += 1;
                    for (s, v) in sum.iter_mut().zip(r) {
                        *s += v;
                    }
                }
            }
            if count == 0 {
                break;
            }
            let next: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
            let moved = sq_dist(&next, &c);
            c = next;
            if moved < stop2 {
                break;
            }
        }
        c
    };

    let merge2 = (bandwidth / 2.0).powi(2);
    let mut modes: Vec<Vec<f64>> = Vec::new();
    let mut member_of = Vec::with_capacity(n);
    for r in features_of_view.rows() {
        let m = shift_to_mode(r);
        let found = modes.iter().position(|existing| sq_dist(existing, &m) < merge2);
        let c = match found {
            Some(c) => c,
            None => {
                modes.push(m);
                modes.len() - 1
            }
        };
        member_of.push(c);
    }
    let k = modes.len();
    Ok(MeanShiftResult {
        assignment: ClusterAssignment::new(view.class_id, view.sample_indices.clone(), member_of)?,
        modes: FeatureMatrix::from_raw_unchecked(k, dim, modes.concat()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitters::test_support::{blobs, pair_ari, view_of};

    #[test]
    fn one_tight_blob() {
        let (f, _) = blobs(&[vec![1.0, 1.0, 1.0]], 20, 0.2, 1);
        let r = split_meanshift(&view_of(20), &f, 10.0).unwrap();
        assert_eq!(r.assignment.k, 1);
    }

    #[test]
    fn two_far_blobs() {
        let centers = vec![vec![0.0, 0.0], vec![30.0, 0.0]];
        let (f, truth) = blobs(&centers, 20, 0.5, 2);
        let r = split_meanshift(&view_of(40), &f, 3.0).unwrap();
        assert_eq!(r.assignment.k, 2);
        assert_eq!(pair_ari(&r.assignment.member_of, &truth), 1.0);
        for (mode, center) in r.modes.rows().zip(&centers) {
            assert!(sq_dist(mode, center).sqrt() < 0.5);
        }
    }

    #[test]
    fn tiny_bandwidth_gives_singletons() {
        let (f, _) = blobs(&[vec![0.0; 4]], 30, 1.0, 3);
        let r = split_meanshift(&view_of(30), &f, 1e-3).unwrap();
        assert_eq!(r.assignment.k, 30);
        assert!(split_meanshift(&view_of(30), &f, 0.0).is_err());
    }
}
