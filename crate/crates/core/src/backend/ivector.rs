//! Total-variability model: T-matrix EM and i-vector extraction.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gmm::{BwStats, Gmm};
use crate::error::{Error, Result};

pub const RIDGE: f64 = 1e-6;

/// `(C*D) x R` matrix; rows `c*D..(c+1)*D` belong to component `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct TMatrix {
    pub t: DMatrix<f64>,
}

impl TMatrix {
    pub fn rank(&self) -> usize {
        self.t.ncols()
    }
}

/// Cholesky solve, retrying with a small ridge if the matrix is not PD.
pub(crate) fn chol(m: DMatrix<f64>, what: &str) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    match m.clone().cholesky() {
        Some(c) => c,
        None => {
            log::warn!("{what}: matrix not positive definite, adding ridge {RIDGE}");
            let n = m.nrows();
            (m + DMatrix::identity(n, n) * RIDGE)
                .cholesky()
                .expect("ridge-regularised matrix is positive definite")
        }
    }
}

pub(crate) fn log_det(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Precomputed quantities for posterior computations under a fixed T.
pub struct IvectorExtractor<'a> {
    gmm: &'a Gmm,
    /// `T_c' Sigma_c^-1 T_c` per component.
    a: Vec<DMatrix<f64>>,
    /// `T' Sigma^-1`, R x (C*D).
    t_sinv: DMatrix<f64>,
}

pub struct Posterior {
    pub mean: DVector<f64>,
    pub chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub b: DVector<f64>,
}

impl<'a> IvectorExtractor<'a> {
    pub fn new(t: &TMatrix, gmm: &'a Gmm) -> Result<Self> {
        let (c_n, d) = (gmm.components(), gmm.dim());
        if t.t.nrows() != c_n * d {
            return Err(Error::Dimension(format!(
                "T has {} rows, UBM supervector has {}",
                t.t.nrows(),
                c_n * d
            )));
        }
        let inv_var = DVector::from_iterator(c_n * d, gmm.vars.as_slice().iter().map(|v| 1.0 / v));
        let mut t_sinv = t.t.transpose();
        for (j, mut col) in t_sinv.column_iter_mut().enumerate() {
            col *= inv_var[j];
        }
        let a = (0..c_n)
            .map(|c| {
                let tc = t.t.rows(c * d, d);
                t_sinv.columns(c * d, d) * tc
            })
            .collect();
        Ok(Self { gmm, a, t_sinv })
    }

    pub fn posterior(&self, stats: &BwStats) -> Result<Posterior> {
        let (c_n, d) = (self.gmm.components(), self.gmm.dim());
        if stats.n.len() != c_n || stats.f.shape() != (c_n, d) {
            return Err(Error::Dimension("stats do not match the UBM".into()));
        }
        let r = self.t_sinv.nrows();
        let mut l = DMatrix::identity(r, r);
        for (c, a) in self.a.iter().enumerate() {
            if stats.n[c] != 0.0 {
                l += a * stats.n[c];
            }
        }
        let f = DVector::from_column_slice(stats.f.as_slice());
        let b = &self.t_sinv * f;
        let chol = chol(l, "i-vector precision");
        let mean = chol.solve(&b);
        Ok(Posterior { mean, chol, b })
    }

    pub fn extract(&self, stats: &BwStats) -> Result<DVector<f64>> {
        Ok(self.posterior(stats)?.mean)
    }
}

/// Posterior mean of the total factor given the utterance statistics.
pub fn extract_ivector(t: &TMatrix, gmm: &Gmm, stats: &BwStats) -> Result<DVector<f64>> {
    IvectorExtractor::new(t, gmm)?.extract(stats)
}

#[derive(Clone, Debug)]
pub struct TTraining {
    pub t: TMatrix,
    /// `sum_u 1/2 b'L^-1 b - 1/2 log|L|` before each iteration and after the last:
    /// the T-dependent part of the marginal log-likelihood.
    pub objective: Vec<f64>,
}

pub fn train_tmatrix(
    stats: &[BwStats],
    gmm: &Gmm,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<TTraining> {
    let (c_n, d) = (gmm.components(), gmm.dim());
    if rank == 0 || rank > c_n * d {
        return Err(Error::Dimension(format!(
            "total-factor rank {rank} must be in 1..={}",
            c_n * d
        )));
    }
    if stats.is_empty() {
        return Err(Error::CorpusTooSmall(
            "no utterances for T-matrix training".into(),
        ));
    }
    if stats.len() < rank {
        log::warn!("T-matrix: {} utterances for rank {rank}", stats.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (rank as f64).sqrt();
    let mut t = TMatrix {
        t: DMatrix::from_fn(c_n * d, rank, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        }),
    };
    let mut objective = Vec::with_capacity(iters + 1);
    for it in 0..iters {
        let ex = IvectorExtractor::new(&t, gmm)?;
        let mut obj = 0.0;
        let mut acc_a = vec![DMatrix::<f64>::zeros(rank, rank); c_n];
        let mut acc_c = DMatrix::<f64>::zeros(c_n * d, rank);
        for s in stats {
            let post = ex.posterior(s)?;
            obj += 0.5 * post.b.dot(&post.mean) - 0.5 * log_det(&post.chol);
            let eww = post.chol.inverse() + &post.mean * post.mean.transpose();
            for c in 0..c_n {
                if s.n[c] != 0.0 {
                    acc_a[c] += &eww * s.n[c];
                }
            }
            let f = DVector::from_column_slice(s.f.as_slice());
            acc_c.ger(1.0, &f, &post.mean, 1.0);
        }
        log::debug!("T-matrix iter {it}: objective {obj:.6}");
        objective.push(obj);
        for c in 0..c_n {
            let ch = chol(acc_a[c].clone(), "T-matrix normal equations");
            // T_c' = A_c^-1 C_c'
            let tc_t = ch.solve(&acc_c.rows(c * d, d).transpose());
            t.t.rows_mut(c * d, d).copy_from(&tc_t.transpose());
        }
    }
    let ex = IvectorExtractor::new(&t, gmm)?;
    let mut obj = 0.0;
    for s in stats {
        let post = ex.posterior(s)?;
        obj += 0.5 * post.b.dot(&post.mean) - 0.5 * log_det(&post.chol);
    }
    objective.push(obj);
    Ok(TTraining { t, objective })
}
