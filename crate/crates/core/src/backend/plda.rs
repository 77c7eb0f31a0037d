//! Simplified PLDA: `w = mu + U y + eps`, `y ~ N(0, I)`, `eps ~ N(0, Lambda)`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::lda::to_matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    /// `D x q` speaker-style subspace.
    pub u: DMatrix<f64>,
    /// Residual covariance, `D x D`.
    pub lambda: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaTrainLog {
    /// Observed-data log-likelihood after each iteration.
    pub log_likelihood: Vec<f64>,
}

fn chol(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateData("covariance is not positive definite".into()))
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `log N(x; 0, S)` given the Cholesky factor of `S`.
fn log_gauss(x: &DVector<f64>, c: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len() as f64;
    -0.5 * (d * (2.0 * PI).ln() + log_det(c) + x.dot(&c.solve(x)))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

struct ClassStats {
    n: usize,
    /// Sum of centered samples.
    f: DVector<f64>,
}

impl PldaModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// Between-class covariance `U U^T`.
    pub fn between(&self) -> DMatrix<f64> {
        &self.u * self.u.transpose()
    }

    /// EM with the mean fixed at the sample mean. `U` starts from a seeded
    /// random matrix and `Lambda` from the total covariance.
    pub fn train_em(
        embeddings: &[Vec<f64>],
        class_ids: &[usize],
        q: usize,
        n_iters: usize,
        seed: u64,
    ) -> Result<(Self, PldaTrainLog)> {
        if embeddings.len() != class_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.len(),
                got: class_ids.len(),
            });
        }
        let x = to_matrix(embeddings)?;
        let (n, d) = x.shape();
        let mut ids = class_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if n < 2 || ids.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "PLDA needs >= 2 samples in >= 2 classes, got {n} in {}",
                ids.len()
            )));
        }
        if q > d {
            return Err(Error::InvalidConfig(format!("PLDA rank {q} exceeds dimension {d}")));
        }
        let mu = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
        let scatter = centered.transpose() * &centered;
        let classes: Vec<ClassStats> = ids
            .iter()
            .map(|&c| {
                let mut f = DVector::zeros(d);
                let mut count = 0;
                for i in (0..n).filter(|&i| class_ids[i] == c) {
                    f += centered.row(i).transpose();
                    count += 1;
                }
                ClassStats { n: count, f }
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = &scatter / n as f64;
        let scale = (total.trace() / d as f64).sqrt() * 0.1;
        let mut model = Self {
            mu,
            u: DMatrix::from_fn(d, q, |_, _| scale * rng.sample::<f64, _>(StandardNormal)),
            lambda: total,
        };
        chol(&model.lambda)?;
        let mut log = PldaTrainLog {
            log_likelihood: Vec::with_capacity(n_iters),
        };
        for _ in 0..n_iters {
            let lambda_inv = chol(&model.lambda)?.inverse();
            let ut_li = model.u.transpose() * &lambda_inv;
            let ut_li_u = &ut_li * &model.u;
            let mut sum_f_e = DMatrix::zeros(d, q);
            let mut sum_n_r = DMatrix::zeros(q, q);
            for c in &classes {
                let p = DMatrix::identity(q, q) + &ut_li_u * c.n as f64;
                let p_inv = chol(&p)?.inverse();
                let e = &p_inv * (&ut_li * &c.f);
                sum_f_e += &c.f * e.transpose();
                sum_n_r += (p_inv + &e * e.transpose()) * c.n as f64;
            }
            if q > 0 {
                let r_inv = chol(&symmetrize(sum_n_r))?.inverse();
                model.u = &sum_f_e * r_inv;
            }
            model.lambda = symmetrize((&scatter - &model.u * sum_f_e.transpose()) / n as f64);
            log.log_likelihood.push(model.log_likelihood_of(&classes, &scatter, n)?);
        }
        Ok((model, log))
    }

    /// Marginal log-likelihood of the training data with the class factors
    /// integrated out.
    fn log_likelihood_of(&self, classes: &[ClassStats], scatter: &DMatrix<f64>, n: usize) -> Result<f64> {
        let d = self.dim();
        let q = self.rank();
        let lc = chol(&self.lambda)?;
        let lambda_inv = lc.inverse();
        let ut_li = self.u.transpose() * &lambda_inv;
        let ut_li_u = &ut_li * &self.u;
        let mut ll = -0.5 * n as f64 * (d as f64 * (2.0 * PI).ln() + log_det(&lc));
        ll -= 0.5 * (&lambda_inv.component_mul(scatter)).sum();
        for c in classes {
            let p = DMatrix::identity(q, q) + &ut_li_u * c.n as f64;
            let pc = chol(&p)?;
            let b = &ut_li * &c.f;
            ll += 0.5 * b.dot(&pc.solve(&b)) - 0.5 * log_det(&pc);
        }
        Ok(ll)
    }

    pub fn log_likelihood(&self, embeddings: &[Vec<f64>], class_ids: &[usize]) -> Result<f64> {
        let x = to_matrix(embeddings)?;
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: d });
        }
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - self.mu[j]);
        let scatter = centered.transpose() * &centered;
        let mut ids = class_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let classes: Vec<ClassStats> = ids
            .iter()
            .map(|&c| {
                let rows: Vec<usize> = (0..n).filter(|&i| class_ids[i] == c).collect();
                let f = rows.iter().fold(DVector::zeros(d), |a, &i| a + centered.row(i).transpose());
                ClassStats { n: rows.len(), f }
            })
            .collect();
        self.log_likelihood_of(&classes, &scatter, n)
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Same-class versus different-class log-likelihood ratio between the
    /// mean of `enroll` (n cuts) and `test`.
    pub fn llr(&self, enroll: &[Vec<f64>], test: &[f64]) -> Result<f64> {
        for e in enroll {
            self.check_dim(e)?;
        }
        self.llr_stats(&EnrollStats::from_embeddings(enroll)?, test)
    }

    /// As [`PldaModel::llr`], from precomputed enrollment statistics. The
    /// ratio depends on the enrollment cuts only through their mean and count.
    pub fn llr_stats(&self, enroll: &EnrollStats, test: &[f64]) -> Result<f64> {
        self.check_dim(enroll.mean.as_slice())?;
        self.check_dim(test)?;
        let d = self.dim();
        let n = enroll.count as f64;
        let e = &enroll.mean - &self.mu;
        let t = DVector::from_column_slice(test) - &self.mu;
        let b = self.between();
        let enroll_cov = &b + &self.lambda / n;
        let test_cov = &b + &self.lambda;
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint.view_mut((0, 0), (d, d)).copy_from(&enroll_cov);
        joint.view_mut((0, d), (d, d)).copy_from(&b);
        joint.view_mut((d, 0), (d, d)).copy_from(&b);
        joint.view_mut((d, d), (d, d)).copy_from(&test_cov);
        let mut et = DVector::zeros(2 * d);
        et.rows_mut(0, d).copy_from(&e);
        et.rows_mut(d, d).copy_from(&t);
        Ok(log_gauss(&et, &chol(&joint)?) - log_gauss(&e, &chol(&enroll_cov)?) - log_gauss(&t, &chol(&test_cov)?))
    }

    /// `llr(spoof) - llr(pristine)`: positive when the test looks like the
    /// spoof enrollment.
    pub fn detection_score(&self, pristine_enroll: &[Vec<f64>], spoof_enroll: &[Vec<f64>], test: &[f64]) -> Result<f64> {
        Ok(self.llr(spoof_enroll, test)? - self.llr(pristine_enroll, test)?)
    }

    pub fn detection_score_stats(&self, pristine: &EnrollStats, spoof: &EnrollStats, test: &[f64]) -> Result<f64> {
        Ok(self.llr_stats(spoof, test)? - self.llr_stats(pristine, test)?)
    }
}

/// Mean and count of a set of enrollment embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollStats {
    pub mean: DVector<f64>,
    pub count: usize,
}

impl EnrollStats {
    pub fn from_embeddings(embeddings: &[Vec<f64>]) -> Result<Self> {
        let first = embeddings
            .first()
            .ok_or_else(|| Error::InsufficientData("empty enrollment".into()))?;
        let mut mean = DVector::zeros(first.len());
        for e in embeddings {
            if e.len() != first.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: e.len(),
                });
            }
            mean += DVector::from_column_slice(e);
        }
        mean /= embeddings.len() as f64;
        Ok(Self {
            mean,
            count: embeddings.len(),
        })
    }
}
