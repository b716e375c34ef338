//! SpeFiNet fusion: L-∞ normalise each representation row-wise, then
//! concatenate (specific first, finer second).

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation {
    pub matrix: FeatureMatrix,
    pub spe_dim: usize,
    pub fine_dim: usize,
}

/// Divides every row by its largest absolute entry. All-zero rows pass through.
pub fn linf_normalize(f: &FeatureMatrix) -> FeatureMatrix {
    let mut values = Vec::with_capacity(f.values().len());
    for row in f.rows() {
        let m = row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m > 0.0 {
            values.extend(row.iter().map(|v| v / m));
        } else {
            values.extend_from_slice(row);
        }
    }
    FeatureMatrix::from_raw_unchecked(f.n_samples(), f.dim(), values)
}

pub fn fuse(spe: &FeatureMatrix, fine: &FeatureMatrix) -> Result<FusedRepresentation> {
    if spe.n_samples() != fine.n_samples() {
        return Err(Error::shape(format!(
            "cannot fuse {} specific rows with {} finer rows",
            spe.n_samples(),
            fine.n_samples()
        )));
    }
    let (a, b) = (linf_normalize(spe), linf_normalize(fine));
    let dim = spe.dim() + fine.dim();
    let mut values = Vec::with_capacity(spe.n_samples() * dim);
    for (ra, rb) in a.rows().zip(b.rows()) {
        values.extend_from_slice(ra);
        values.extend_from_slice(rb);
    }
    Ok(FusedRepresentation {
        matrix: FeatureMatrix::from_raw_unchecked(spe.n_samples(), dim, values),
        spe_dim: spe.dim(),
        fine_dim: fine.dim(),
    })
}
