//! Gaussian PLDA: x = mu + V y + eps, y ~ N(0, I), eps ~ N(0, Sigma) with full Sigma.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::ivector::{chol, log_det};
use crate::error::{Error, Result};

pub const EIG_FLOOR: f64 = 1e-8;

/// Centering, whitening by the total covariance and optional length
/// normalisation to radius `sqrt(d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaPreprocess {
    pub mean: DVector<f64>,
    pub whiten: DMatrix<f64>,
    pub length_norm: bool,
}

impl PldaPreprocess {
    pub fn fit(x: &[DVector<f64>], length_norm: bool) -> Result<Self> {
        let d = x.first().map_or(0, |v| v.len());
        if x.len() < 2 || d == 0 {
            return Err(Error::CorpusTooSmall(
                "PLDA preprocessing needs at least two vectors".into(),
            ));
        }
        let n = x.len() as f64;
        let mean = x.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
        let mut cov = DMatrix::zeros(d, d);
        for v in x {
            let r = v - &mean;
            cov.ger(1.0 / n, &r, &r, 1.0);
        }
        let eig = SymmetricEigen::new(cov);
        let top = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let scale = eig.eigenvalues.map(|l| 1.0 / l.max(top * 1e-10).sqrt());
        let whiten = DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose();
        Ok(Self {
            mean,
            whiten,
            length_norm,
        })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = &self.whiten * (x - &self.mean);
        if !self.length_norm {
            return y;
        }
        let norm = y.norm();
        if norm > 0.0 {
            let d = y.len() as f64;
            y * (d.sqrt() / norm)
        } else {
            y
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    /// d x q speaker subspace.
    pub v: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl PldaModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn scorer(&self) -> PldaScorer {
        PldaScorer::new(self)
    }
}

/// Same-speaker vs different-speaker LLR evaluated through the latent
/// variable: only q-dimensional quantities depend on the pair.
pub struct PldaScorer {
    mu: DVector<f64>,
    /// V' Sigma^-1, q x d.
    proj: DMatrix<f64>,
    p1_inv: DMatrix<f64>,
    p2_inv: DMatrix<f64>,
    constant: f64,
}

impl PldaScorer {
    fn new(m: &PldaModel) -> Self {
        let q = m.latent_dim();
        let sigma = chol(m.sigma.clone(), "PLDA residual covariance");
        let proj = sigma.solve(&m.v).transpose();
        let vsv = &proj * &m.v;
        let (p1_inv, p2_inv, constant) = if q == 0 {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), 0.0)
        } else {
            let p1 = chol(DMatrix::identity(q, q) + &vsv, "PLDA posterior precision");
            let p2 = chol(
                DMatrix::identity(q, q) + &vsv * 2.0,
                "PLDA posterior precision",
            );
            (
                p1.inverse(),
                p2.inverse(),
                log_det(&p1) - 0.5 * log_det(&p2),
            )
        };
        Self {
            mu: m.mu.clone(),
            proj,
            p1_inv,
            p2_inv,
            constant,
        }
    }

    /// Projects a vector to `V' Sigma^-1 (x - mu)`; score pairs of these with
    /// [`PldaScorer::score_projected`] when one side is reused.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.proj * (x - &self.mu)
    }

    pub fn score_projected(&self, be: &DVector<f64>, bt: &DVector<f64>) -> f64 {
        if be.is_empty() {
            return 0.0;
        }
        let b2 = be + bt;
        0.5 * (quad(&self.p2_inv, &b2) - quad(&self.p1_inv, be) - quad(&self.p1_inv, bt))
            + self.constant
    }

    pub fn score(&self, e: &DVector<f64>, t: &DVector<f64>) -> f64 {
        self.score_projected(&self.project(e), &self.project(t))
    }
}

fn quad(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub fn plda_score(model: &PldaModel, enroll: &DVector<f64>, test: &DVector<f64>) -> f64 {
    model.scorer().score(enroll, test)
}

#[derive(Clone, Debug)]
pub struct PldaTraining {
    pub model: PldaModel,
    /// Log-likelihood of the training data before each iteration and after the last.
    pub log_likelihood: Vec<f64>,
}

struct Groups {
    /// Per speaker: count and sum of centred vectors.
    spk: Vec<(f64, DVector<f64>)>,
    /// Scatter of centred vectors around mu.
    scatter: DMatrix<f64>,
    n: f64,
}

fn group(x: &[DVector<f64>], labels: &[String], mu: &DVector<f64>) -> Groups {
    let d = mu.len();
    let mut by: BTreeMap<&str, (f64, DVector<f64>)> = BTreeMap::new();
    let mut scatter = DMatrix::zeros(d, d);
    for (v, l) in x.iter().zip(labels) {
        let r = v - mu;
        scatter.ger(1.0, &r, &r, 1.0);
        let e = by
            .entry(l.as_str())
            .or_insert_with(|| (0.0, DVector::zeros(d)));
        e.0 += 1.0;
        e.1 += r;
    }
    Groups {
        spk: by.into_values().collect(),
        scatter,
        n: x.len() as f64,
    }
}

fn floor_eigen(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= EIG_FLOOR {
        return sym;
    }
    log::warn!("PLDA: residual covariance lost definiteness, flooring eigenvalues at {EIG_FLOOR}");
    let vals = eig.eigenvalues.map(|l| l.max(EIG_FLOOR));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Exact log-likelihood of all speakers' vectors under the model.
fn log_likelihood(g: &Groups, v: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let d = sigma.nrows() as f64;
    let q = v.ncols();
    let sc = chol(sigma.clone(), "PLDA residual covariance");
    let log_det_s = log_det(&sc);
    let sinv = sc.inverse();
    let vs = v.tr_mul(&sinv);
    let vsv = &vs * v;
    let mut ll =
        -0.5 * (g.n * (d * (2.0 * PI).ln() + log_det_s) + (&sinv.component_mul(&g.scatter)).sum());
    if q == 0 {
        return ll;
    }
    for (n, sum) in &g.spk {
        let p = chol(
            DMatrix::identity(q, q) + &vsv * *n,
            "PLDA posterior precision",
        );
        let b = &vs * sum;
        ll += -0.5 * log_det(&p) + 0.5 * b.dot(&p.solve(&b));
    }
    ll
}

/// EM on vectors that are already preprocessed. `mu` is the sample mean.
pub fn fit_plda(
    x: &[DVector<f64>],
    labels: &[String],
    q: usize,
    iters: usize,
) -> Result<PldaTraining> {
    if x.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} vectors but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let d = x.first().map_or(0, |v| v.len());
    if q > d {
        return Err(Error::Dimension(format!(
            "PLDA latent dim {q} exceeds input dim {d}"
        )));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    if counts.values().filter(|&&c| c >= 2).count() < 2 {
        return Err(Error::CorpusTooSmall(
            "PLDA needs at least two speakers with two or more vectors".into(),
        ));
    }
    let mu = x.iter().fold(DVector::zeros(d), |a, v| a + v) / x.len() as f64;
    let g = group(x, labels, &mu);

    // Init: V from the between-class eigenvectors, Sigma from within-class scatter.
    let mut between = DMatrix::zeros(d, d);
    let mut within = g.scatter.clone();
    for (n, sum) in &g.spk {
        let m = sum / *n;
        between.ger(*n / g.n, &m, &m, 1.0);
        within.ger(-*n, &m, &m, 1.0);
    }
    let within = floor_eigen(&(within / g.n));
    let eig = SymmetricEigen::new(between);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut v = DMatrix::from_fn(d, q, |r, c| {
        eig.eigenvectors[(r, order[c])] * eig.eigenvalues[order[c]].max(0.0).sqrt()
    });
    let mut sigma = within;

    let mut log_lik = Vec::with_capacity(iters + 1);
    for it in 0..iters {
        let ll = log_likelihood(&g, &v, &sigma);
        log::debug!("PLDA iter {it}: log-likelihood {ll:.6}");
        log_lik.push(ll);
        if q == 0 {
            sigma = floor_eigen(&(&g.scatter / g.n));
            continue;
        }
        let sinv = chol(sigma.clone(), "PLDA residual covariance").inverse();
        let vs = v.tr_mul(&sinv);
        let vsv = &vs * &v;
        let mut ryt = DMatrix::zeros(d, q);
        let mut yyt = DMatrix::zeros(q, q);
        for (n, sum) in &g.spk {
            let p = chol(
                DMatrix::identity(q, q) + &vsv * *n,
                "PLDA posterior precision",
            );
            let ey = p.solve(&(&vs * sum));
            ryt.ger(1.0, sum, &ey, 1.0);
            yyt += (p.inverse() + &ey * ey.transpose()) * *n;
        }
        let yc = chol(yyt, "PLDA normal equations");
        v = yc.solve(&ryt.transpose()).transpose();
        sigma = floor_eigen(&((&g.scatter - &v * ryt.transpose()) / g.n));
    }
    log_lik.push(log_likelihood(&g, &v, &sigma));
    Ok(PldaTraining {
        model: PldaModel { mu, v, sigma },
        log_likelihood: log_lik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// Samples from a 1-latent PLDA in 3-D.
    fn one_latent_data(seed: u64) -> (Vec<DVector<f64>>, Vec<String>, DVector<f64>) {
        let v = DVector::from_column_slice(&[2.0, 1.0, -1.0]);
        let noise = [0.5, 0.4, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut l = Vec::new();
        for s in 0..200 {
            let y = normal(&mut rng);
            for _ in 0..6 {
                x.push(DVector::from_fn(3, |k, _| {
                    1.0 + v[k] * y + noise[k] * normal(&mut rng)
                }));
                l.push(format!("s{s}"));
            }
        }
        (x, l, v)
    }

    #[test]
    fn recovers_speaker_direction() {
        let (x, l, v_true) = one_latent_data(1);
        let run = fit_plda(&x, &l, 1, 10).unwrap();
        let v = run.model.v.column(0).into_owned();
        let cos = v.dot(&v_true).abs() / (v.norm() * v_true.norm());
        assert!(cos > 0.95, "cos {cos}");
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        let (x, l, _) = one_latent_data(2);
        for q in [1, 2, 3] {
            let run = fit_plda(&x, &l, q, 15).unwrap();
            for w in run.log_likelihood.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-8 * w[0].abs(),
                    "q={q}: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn no_subspace_scores_zero() {
        let (x, l, _) = one_latent_data(3);
        let m = fit_plda(&x, &l, 0, 3).unwrap().model;
        assert_eq!(m.latent_dim(), 0);
        let s = m.scorer();
        assert_eq!(s.score(&x[0], &x[1]), 0.0);
        assert_eq!(s.score(&x[0], &x[500]), 0.0);
        let zero_v = PldaModel {
            v: DMatrix::zeros(3, 2),
            ..m
        };
        assert_eq!(plda_score(&zero_v, &x[3], &x[7]), 0.0);
    }

    fn random_model(d: usize, q: usize, seed: u64) -> PldaModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        PldaModel {
            mu: DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)),
            v: DMatrix::from_fn(d, q, |_, _| rng.gen_range(-1.5..1.5)),
            sigma: &a * a.transpose() + DMatrix::identity(d, d) * 0.5,
        }
    }

    #[test]
    fn score_is_symmetric() {
        let m = random_model(4, 2, 4);
        let s = m.scorer();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let b = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            assert!((s.score(&a, &b) - s.score(&b, &a)).abs() < 1e-10);
        }
    }

    fn dense_log_normal(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let n = x.len() as f64;
        let inv = cov.clone().try_inverse().unwrap();
        -0.5 * (n * (2.0 * PI).ln() + cov.determinant().ln() + x.dot(&(inv * x)))
    }

    fn dense_llr(m: &PldaModel, e: &DVector<f64>, t: &DVector<f64>) -> f64 {
        let d = m.dim();
        let ac = &m.v * m.v.transpose();
        let tc = &ac + &m.sigma;
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint.view_mut((0, 0), (d, d)).copy_from(&tc);
        joint.view_mut((d, d), (d, d)).copy_from(&tc);
        joint.view_mut((0, d), (d, d)).copy_from(&ac);
        joint.view_mut((d, 0), (d, d)).copy_from(&ac);
        let (ec, tcent) = (e - &m.mu, t - &m.mu);
        let stacked = DVector::from_iterator(2 * d, ec.iter().chain(tcent.iter()).copied());
        dense_log_normal(&stacked, &joint)
            - dense_log_normal(&ec, &tc)
            - dense_log_normal(&tcent, &tc)
    }

    #[test]
    fn hand_model_matches_dense_gaussian() {
        let m = PldaModel {
            mu: DVector::zeros(2),
            v: DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 0.5])),
            sigma: DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.25])),
        };
        let e = DVector::from_column_slice(&[1.0, -0.5]);
        let t = DVector::from_column_slice(&[0.8, 0.3]);
        assert!((plda_score(&m, &e, &t) - dense_llr(&m, &e, &t)).abs() < 1e-10);
        // Per-dimension closed form: independent 2x2 Gaussians.
        let mut want = 0.0;
        for k in 0..2 {
            let (a, w) = (m.v[(k, k)].powi(2), m.sigma[(k, k)]);
            let tt = a + w;
            let det = tt * tt - a * a;
            let (x, y) = (e[k], t[k]);
            want += -0.5 * (det.ln() + (tt * x * x - 2.0 * a * x * y + tt * y * y) / det)
                + 0.5 * (2.0 * tt.ln() + (x * x + y * y) / tt);
        }
        assert!((plda_score(&m, &e, &t) - want).abs() < 1e-10);
    }

    #[test]
    fn random_models_match_dense_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..5 {
            let m = random_model(4, 3, seed);
            let e = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let t = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            assert!((plda_score(&m, &e, &t) - dense_llr(&m, &e, &t)).abs() < 1e-10);
        }
    }

    #[test]
    fn latent_rotation_leaves_scores_unchanged() {
        let m = random_model(5, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let qr = DMatrix::from_fn(3, 3, |_, _| normal(&mut rng)).qr();
        let rotated = PldaModel {
            v: &m.v * qr.q(),
            ..m.clone()
        };
        let (s1, s2) = (m.scorer(), rotated.scorer());
        for _ in 0..10 {
            let a = DVector::from_fn(5, |_, _| rng.gen_range(-2.0..2.0));
            let b = DVector::from_fn(5, |_, _| rng.gen_range(-2.0..2.0));
            assert!((s1.score(&a, &b) - s2.score(&a, &b)).abs() < 1e-10);
        }
    }

    #[test]
    fn preprocessing_whitens_and_normalises() {
        let (x, _, _) = one_latent_data(9);
        let pre = PldaPreprocess::fit(&x, false).unwrap();
        let y: Vec<DVector<f64>> = x.iter().map(|v| pre.apply(v)).collect();
        let n = y.len() as f64;
        let mut cov = DMatrix::zeros(3, 3);
        for v in &y {
            cov.ger(1.0 / n, v, v, 1.0);
        }
        assert!((cov - DMatrix::identity(3, 3)).amax() < 1e-9);
        let ln = PldaPreprocess::fit(&x, true).unwrap();
        for v in &x[..20] {
            assert!((ln.apply(v).norm() - 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, l, _) = one_latent_data(10);
        assert!(fit_plda(&x, &l, 4, 1).is_err());
        let single: Vec<String> = l.iter().map(|_| "a".into()).collect();
        assert!(fit_plda(&x, &single, 1, 1).is_err());
    }
}
