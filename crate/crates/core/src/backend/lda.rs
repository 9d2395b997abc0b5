//! Linear discriminant analysis on i-vectors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `y = proj' x`; columns have unit Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Lda {
    pub proj: DMatrix<f64>,
}

impl Lda {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.proj.tr_mul(x)
    }

    pub fn out_dim(&self) -> usize {
        self.proj.ncols()
    }
}

pub struct Scatter {
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    pub classes: usize,
}

/// Between- and within-class scatter, both normalised by the sample count.
pub fn scatter(x: &[DVector<f64>], labels: &[String]) -> Result<Scatter> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::Dimension(format!(
            "{} vectors but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let d = x[0].len();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let n = x.len() as f64;
    let mean = x.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n;
    let mut between = DMatrix::zeros(d, d);
    let mut within = DMatrix::zeros(d, d);
    for idx in groups.values() {
        let mk = idx.iter().fold(DVector::zeros(d), |acc, &i| acc + &x[i]) / idx.len() as f64;
        let dm = &mk - &mean;
        between.ger(idx.len() as f64 / n, &dm, &dm, 1.0);
        for &i in idx {
            let r = &x[i] - &mk;
            within.ger(1.0 / n, &r, &r, 1.0);
        }
    }
    Ok(Scatter {
        between,
        within,
        classes: groups.len(),
    })
}

/// Ratio-trace criterion `tr((W' Sw W)^-1 W' Sb W)`.
pub fn lda_objective(s: &Scatter, w: &DMatrix<f64>) -> f64 {
    let sw = w.tr_mul(&s.within) * w;
    let sb = w.tr_mul(&s.between) * w;
    sw.lu().solve(&sb).map_or(f64::NAN, |m| m.trace())
}

pub fn train_lda(x: &[DVector<f64>], labels: &[String], out_dim: usize) -> Result<Lda> {
    let s = scatter(x, labels)?;
    let d = x[0].len();
    if s.classes < 2 {
        return Err(Error::CorpusTooSmall(
            "LDA needs at least two classes".into(),
        ));
    }
    if out_dim == 0 || out_dim > d.min(s.classes - 1) {
        return Err(Error::Dimension(format!(
            "LDA output dim {out_dim} must be in 1..={} ({d} inputs, {} classes)",
            d.min(s.classes - 1),
            s.classes
        )));
    }
    let ridge = 1e-6 * s.within.trace() / d as f64;
    let sw = &s.within + DMatrix::identity(d, d) * ridge.max(f64::MIN_POSITIVE);
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::DegenerateSignal("within-class scatter is singular".into()))?;
    let l = chol.l();
    // M = L^-1 Sb L^-T
    let a = l
        .solve_lower_triangular(&s.between)
        .expect("triangular solve");
    let m = l
        .solve_lower_triangular(&a.transpose())
        .expect("triangular solve");
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let u = DMatrix::from_fn(d, out_dim, |r, c| eig.eigenvectors[(r, order[c])]);
    let mut proj = l
        .transpose()
        .solve_upper_triangular(&u)
        .expect("triangular solve");
    for mut col in proj.column_iter_mut() {
        let norm = col.norm();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |p, v| if v.abs() > p.abs() { v } else { p });
        col /= norm * pivot.signum();
    }
    Ok(Lda { proj })
}
