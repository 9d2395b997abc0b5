//! Diagonal-covariance GMM-UBM and Baum-Welch statistics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Variance floor relative to the global per-dimension variance.
pub const VAR_FLOOR_REL: f64 = 1e-3;
/// EM iterations run after each binary split before the next split.
pub const SPLIT_ITERS: usize = 3;
const SPLIT_OFFSET: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Mat,
    pub vars: Mat,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Mat, vars: Mat) -> Result<Self> {
        if means.shape() != vars.shape() || weights.len() != means.rows() {
            return Err(Error::Dimension(format!(
                "gmm: {} weights, means {:?}, vars {:?}",
                weights.len(),
                means.shape(),
                vars.shape()
            )));
        }
        if vars.as_slice().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Dimension("gmm: variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            vars,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn scorer(&self) -> GmmScorer<'_> {
        GmmScorer::new(self)
    }
}

/// Per-component constants for fast log-density evaluation.
pub struct GmmScorer<'a> {
    gmm: &'a Gmm,
    log_const: Vec<f64>,
    inv_vars: Mat,
}

impl<'a> GmmScorer<'a> {
    fn new(gmm: &'a Gmm) -> Self {
        let d = gmm.dim();
        let log_const = (0..gmm.components())
            .map(|c| {
                let log_det: f64 = gmm.vars.row(c).iter().map(|v| v.ln()).sum();
                gmm.weights[c].ln() - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det)
            })
            .collect();
        Self {
            gmm,
            log_const,
            inv_vars: gmm.vars.map(|v| 1.0 / v),
        }
    }

    /// Writes component posteriors for `x` into `post`; returns log p(x).
    pub fn posteriors(&self, x: &[f64], post: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (c, p) in post.iter_mut().enumerate() {
            let m = self.gmm.means.row(c);
            let iv = self.inv_vars.row(c);
            let mut q = 0.0;
            for k in 0..x.len() {
                let diff = x[k] - m[k];
                q += diff * diff * iv[k];
            }
            *p = self.log_const[c] - 0.5 * q;
            max = max.max(*p);
        }
        let mut sum = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        for p in post.iter_mut() {
            *p /= sum;
        }
        max + sum.ln()
    }

    pub fn log_likelihood(&self, frames: &Mat) -> f64 {
        let mut post = vec![0.0; self.gmm.components()];
        frames
            .iter_rows()
            .map(|x| self.posteriors(x, &mut post))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BwStats {
    /// Zeroth-order statistics, one per component.
    pub n: Vec<f64>,
    /// First-order statistics centred on the UBM means, C x D.
    pub f: Mat,
}

impl BwStats {
    pub fn zeros(c: usize, d: usize) -> Self {
        Self {
            n: vec![0.0; c],
            f: Mat::zeros(c, d),
        }
    }
}

pub fn bw_stats(gmm: &Gmm, frames: &Mat) -> Result<BwStats> {
    if frames.cols() != gmm.dim() {
        return Err(Error::Dimension(format!(
            "bw_stats: features have {} dims, UBM has {}",
            frames.cols(),
            gmm.dim()
        )));
    }
    let scorer = gmm.scorer();
    let (c_n, d) = (gmm.components(), gmm.dim());
    let mut stats = BwStats::zeros(c_n, d);
    let mut post = vec![0.0; c_n];
    for x in frames.iter_rows() {
        scorer.posteriors(x, &mut post);
        for c in 0..c_n {
            let g = post[c];
            stats.n[c] += g;
            let m = gmm.means.row(c);
            let f = stats.f.row_mut(c);
            for k in 0..d {
                f[k] += g * (x[k] - m[k]);
            }
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct UbmTraining {
    pub gmm: Gmm,
    /// Total log-likelihood before each of the final EM iterations, then after the last.
    pub log_likelihood: Vec<f64>,
}

struct Accum {
    n: Vec<f64>,
    f: Mat,
    s: Mat,
    ll: f64,
}

fn e_step(gmm: &Gmm, data: &[&Mat]) -> Accum {
    let scorer = gmm.scorer();
    let (c_n, d) = (gmm.components(), gmm.dim());
    let mut acc = Accum {
        n: vec![0.0; c_n],
        f: Mat::zeros(c_n, d),
        s: Mat::zeros(c_n, d),
        ll: 0.0,
    };
    let mut post = vec![0.0; c_n];
    for frames in data {
        for x in frames.iter_rows() {
            acc.ll += scorer.posteriors(x, &mut post);
            for c in 0..c_n {
                let g = post[c];
                if g < 1e-300 {
                    continue;
                }
                acc.n[c] += g;
                let f = acc.f.row_mut(c);
                for k in 0..d {
                    f[k] += g * x[k];
                }
                let s = acc.s.row_mut(c);
                for k in 0..d {
                    s[k] += g * x[k] * x[k];
                }
            }
        }
    }
    acc
}

fn m_step(gmm: &mut Gmm, acc: &Accum, floor: &[f64], total: f64) {
    let (c_n, d) = (gmm.components(), gmm.dim());
    let heaviest = (0..c_n)
        .max_by(|&a, &b| acc.n[a].total_cmp(&acc.n[b]))
        .expect("at least one component");
    for c in 0..c_n {
        let n = acc.n[c];
        if n < 1e-6 {
            continue;
        }
        gmm.weights[c] = n / total;
        for k in 0..d {
            let m = acc.f[(c, k)] / n;
            gmm.means[(c, k)] = m;
            gmm.vars[(c, k)] = (acc.s[(c, k)] / n - m * m).max(floor[k]);
        }
    }
    for c in 0..c_n {
        if acc.n[c] >= 1e-6 {
            continue;
        }
        log::warn!("ubm: component {c} is empty, re-seeding from component {heaviest}");
        let half = gmm.weights[heaviest] / 2.0;
        gmm.weights[heaviest] = half;
        gmm.weights[c] = half;
        for k in 0..d {
            let sd = gmm.vars[(heaviest, k)].sqrt();
            gmm.means[(c, k)] = gmm.means[(heaviest, k)] + SPLIT_OFFSET * sd;
            gmm.vars[(c, k)] = gmm.vars[(heaviest, k)];
        }
    }
    let sum: f64 = gmm.weights.iter().sum();
    for w in &mut gmm.weights {
        *w /= sum;
    }
}

/// Binary-split initialisation from the global Gaussian up to `c` components,
/// then `iters` EM iterations.
pub fn train_ubm(features: &[Mat], c: usize, iters: usize, seed: u64) -> Result<UbmTraining> {
    let data: Vec<&Mat> = features.iter().filter(|f| f.rows() > 0).collect();
    let d = data.first().map_or(0, |f| f.cols());
    if c == 0 || d == 0 {
        return Err(Error::CorpusTooSmall(
            "ubm: no components or no feature frames".into(),
        ));
    }
    if data.iter().any(|f| f.cols() != d) {
        return Err(Error::Dimension(
            "ubm: inconsistent feature dimensions".into(),
        ));
    }
    let total: usize = data.iter().map(|f| f.rows()).sum();
    if total < 10 * c {
        return Err(Error::CorpusTooSmall(format!(
            "ubm: {total} frames for {c} components (need at least {})",
            10 * c
        )));
    }
    let total = total as f64;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for f in &data {
        for x in f.iter_rows() {
            for k in 0..d {
                mean[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
    }
    let mut var = vec![0.0; d];
    for k in 0..d {
        mean[k] /= total;
        var[k] = (sq[k] / total - mean[k] * mean[k]).max(1e-12);
    }
    let floor: Vec<f64> = var.iter().map(|v| v * VAR_FLOOR_REL).collect();
    let mut gmm = Gmm {
        weights: vec![1.0],
        means: Mat::from_vec(1, d, mean),
        vars: Mat::from_vec(1, d, var),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while gmm.components() < c {
        let k = gmm.components();
        let n_split = k.min(c - k);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| gmm.weights[b].total_cmp(&gmm.weights[a]).then(a.cmp(&b)));
        let mut weights = gmm.weights.clone();
        let mut means: Vec<Vec<f64>> = gmm.means.iter_rows().map(<[f64]>::to_vec).collect();
        let mut vars: Vec<Vec<f64>> = gmm.vars.iter_rows().map(<[f64]>::to_vec).collect();
        for &src in &order[..n_split] {
            let sign: Vec<f64> = (0..d)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let sd: Vec<f64> = vars[src].iter().map(|v| v.sqrt()).collect();
            let mut twin = means[src].clone();
            for j in 0..d {
                means[src][j] += SPLIT_OFFSET * sd[j] * sign[j];
                twin[j] -= SPLIT_OFFSET * sd[j] * sign[j];
            }
            weights[src] /= 2.0;
            weights.push(weights[src]);
            means.push(twin);
            vars.push(vars[src].clone());
        }
        gmm = Gmm {
            weights,
            means: Mat::from_rows(&means),
            vars: Mat::from_rows(&vars),
        };
        for _ in 0..SPLIT_ITERS {
            let acc = e_step(&gmm, &data);
            m_step(&mut gmm, &acc, &floor, total);
        }
    }
    let mut log_likelihood = Vec::with_capacity(iters + 1);
    for it in 0..iters {
        let acc = e_step(&gmm, &data);
        log::debug!("ubm iter {it}: avg ll {:.4}", acc.ll / total);
        log_likelihood.push(acc.ll);
        m_step(&mut gmm, &acc, &floor, total);
    }
    log_likelihood.push(gmm.scorer().log_likelihood_all(&data));
    Ok(UbmTraining {
        gmm,
        log_likelihood,
    })
}

impl GmmScorer<'_> {
    fn log_likelihood_all(&self, data: &[&Mat]) -> f64 {
        data.iter().map(|f| self.log_likelihood(f)).sum()
    }
}
