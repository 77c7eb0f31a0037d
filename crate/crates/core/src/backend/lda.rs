//! LDA projection followed by whitening and length normalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge added to the within-class scatter when its Cholesky factor fails.
pub const SCATTER_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaGaussianizer {
    /// Training mean, `D_in`.
    pub mean: DVector<f64>,
    /// `D_out x D_in`; rows are discriminant directions.
    pub projection: DMatrix<f64>,
    /// `D_out x D_out` symmetric whitening matrix.
    pub whitening: DMatrix<f64>,
}

fn group_by_class(class_ids: &[usize]) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = class_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|&c| (0..class_ids.len()).filter(|&i| class_ids[i] == c).collect())
        .collect()
}

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Inverse square root of a symmetric positive definite matrix.
pub(crate) fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::SingularScatter);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// Flips a vector so its largest-magnitude component is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let k = v.iamax();
    if v[k] < 0.0 {
        v.neg_mut();
    }
    v
}

impl LdaGaussianizer {
    /// Fits the discriminant directions of the generalized problem
    /// `Sb v = lambda Sw v`, then a whitening transform from the total
    /// covariance of the projected training data.
    pub fn train(embeddings: &[Vec<f64>], class_ids: &[usize], out_dim: usize) -> Result<Self> {
        if embeddings.len() != class_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.len(),
                got: class_ids.len(),
            });
        }
        let x = to_matrix(embeddings)?;
        let (n, d) = x.shape();
        let classes = group_by_class(class_ids);
        if classes.len() < 2 {
            return Err(Error::InsufficientData(format!("LDA needs 2 classes, got {}", classes.len())));
        }
        if out_dim == 0 || out_dim > classes.len() - 1 || out_dim > d {
            return Err(Error::InvalidConfig(format!(
                "LDA output dimension {out_dim} must be in 1..={} for {} classes of {d}-dim data",
                (classes.len() - 1).min(d),
                classes.len()
            )));
        }
        let mean = x.row_mean().transpose();
        let mut sw = DMatrix::zeros(d, d);
        let mut sb = DMatrix::zeros(d, d);
        for members in &classes {
            let mut mu = DVector::zeros(d);
            for &i in members {
                mu += x.row(i).transpose();
            }
            mu /= members.len() as f64;
            for &i in members {
                let r = x.row(i).transpose() - &mu;
                sw.ger(1.0, &r, &r, 1.0);
            }
            let dm = &mu - &mean;
            sb.ger(members.len() as f64, &dm, &dm, 1.0);
        }
        sw /= n as f64;
        sb /= n as f64;
        let chol = match sw.clone().cholesky() {
            Some(c) => c,
            None => {
                log::warn!("within-class scatter is singular; adding {SCATTER_RIDGE} ridge");
                (sw + DMatrix::identity(d, d) * SCATTER_RIDGE)
                    .cholesky()
                    .ok_or(Error::SingularScatter)?
            }
        };
        let l = chol.l();
        let l_inv = l.clone().try_inverse().ok_or(Error::SingularScatter)?;
        let m = &l_inv * &sb * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lt_inv = l_inv.transpose();
        let mut projection = DMatrix::zeros(out_dim, d);
        for (row, &k) in order.iter().take(out_dim).enumerate() {
            let v = canonical_sign(&lt_inv * eig.eigenvectors.column(k));
            projection.set_row(row, &v.transpose());
        }
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let projected = &centered * projection.transpose();
        let cov = projected.transpose() * &projected / n as f64;
        let whitening = inv_sqrt_spd(&cov)?;
        Ok(Self {
            mean,
            projection,
            whitening,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Center, project and whiten, without the length normalization.
    pub fn whiten(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let c = DVector::from_column_slice(x) - &self.mean;
        Ok(&self.whitening * (&self.projection * c))
    }

    /// Unit-norm transformed embedding.
    pub fn gaussianize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.whiten(x)?;
        let norm = w.norm();
        if !(norm >= 1e-12) {
            return Err(Error::ZeroVector);
        }
        Ok((w / norm).as_slice().to_vec())
    }
}
