//! i-vector / PLDA verification back-end.
//!
//! Training runs UBM, total-variability matrix, LDA and PLDA as a unit over a
//! labelled set of feature streams; scoring embeds both sides of a trial and
//! returns the PLDA log-likelihood ratio.

pub mod gmm;
pub mod ivector;
pub mod lda;
pub mod plda;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container::{Container, Dtype};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::mat::Mat;

pub use gmm::{bw_stats, train_ubm, BwStats, Gmm};
pub use ivector::{extract_ivector, train_tmatrix, IvectorExtractor, TMatrix};
pub use lda::{train_lda, Lda};
pub use plda::{fit_plda, plda_score, PldaModel, PldaPreprocess, PldaScorer};

pub const BACKEND_KIND: &str = "backend";
pub const IVECTOR_KIND: &str = "ivectors";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub ubm_components: usize,
    pub ubm_iters: usize,
    pub tv_rank: usize,
    pub tv_iters: usize,
    pub lda_dim: usize,
    pub plda_latent: usize,
    pub plda_iters: usize,
    pub length_norm: bool,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            ubm_components: 16,
            ubm_iters: 10,
            tv_rank: 16,
            tv_iters: 10,
            lda_dim: 8,
            plda_latent: 8,
            plda_iters: 10,
            length_norm: true,
            seed: 0,
        }
    }
}

impl BackendConfig {
    pub fn full_scale() -> Self {
        Self {
            ubm_components: 512,
            tv_rank: 400,
            lda_dim: 150,
            plda_latent: 150,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ubm_components == 0 || self.tv_rank == 0 || self.lda_dim == 0 {
            return bad("backend: ubm_components, tv_rank and lda_dim must be positive".into());
        }
        if self.lda_dim > self.tv_rank {
            return bad(format!(
                "backend: lda_dim {} exceeds tv_rank {}",
                self.lda_dim, self.tv_rank
            ));
        }
        if self.plda_latent > self.lda_dim {
            return bad(format!(
                "backend: plda_latent {} exceeds lda_dim {}",
                self.plda_latent, self.lda_dim
            ));
        }
        Ok(())
    }
}

/// Per-stage training objectives, one value per EM iteration plus the final one.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BackendTrainLog {
    pub ubm_log_likelihood: Vec<f64>,
    pub tv_objective: Vec<f64>,
    pub plda_log_likelihood: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendModel {
    pub config: BackendConfig,
    /// Feature settings the model was trained with; scoring must reuse them.
    pub frontend: FrontendConfig,
    pub ubm: Gmm,
    pub t: TMatrix,
    pub lda: Lda,
    pub pre: PldaPreprocess,
    pub plda: PldaModel,
}

/// One labelled training utterance: VAD-selected, normalised feature frames.
pub struct LabelledFeatures<'a> {
    pub features: &'a Mat,
    pub speaker: &'a str,
}

impl BackendModel {
    pub fn train(
        config: &BackendConfig,
        frontend: &FrontendConfig,
        data: &[LabelledFeatures<'_>],
    ) -> Result<(Self, BackendTrainLog)> {
        config.validate()?;
        let feats: Vec<Mat> = data.iter().map(|u| u.features.clone()).collect();
        let labels: Vec<String> = data.iter().map(|u| u.speaker.to_string()).collect();
        log::info!("backend: UBM with {} components", config.ubm_components);
        let ubm = train_ubm(&feats, config.ubm_components, config.ubm_iters, config.seed)?;
        let stats = feats
            .iter()
            .map(|f| bw_stats(&ubm.gmm, f))
            .collect::<Result<Vec<_>>>()?;
        log::info!("backend: T-matrix rank {}", config.tv_rank);
        let tv = train_tmatrix(
            &stats,
            &ubm.gmm,
            config.tv_rank,
            config.tv_iters,
            config.seed ^ 0x7f4a_7c15,
        )?;
        let ex = IvectorExtractor::new(&tv.t, &ubm.gmm)?;
        let ivecs = stats
            .iter()
            .map(|s| ex.extract(s))
            .collect::<Result<Vec<_>>>()?;
        let lda = train_lda(&ivecs, &labels, config.lda_dim)?;
        let projected: Vec<DVector<f64>> = ivecs.iter().map(|w| lda.apply(w)).collect();
        let pre = PldaPreprocess::fit(&projected, config.length_norm)?;
        let prepped: Vec<DVector<f64>> = projected.iter().map(|v| pre.apply(v)).collect();
        let plda = fit_plda(&prepped, &labels, config.plda_latent, config.plda_iters)?;
        let log = BackendTrainLog {
            ubm_log_likelihood: ubm.log_likelihood,
            tv_objective: tv.objective,
            plda_log_likelihood: plda.log_likelihood,
        };
        Ok((
            Self {
                config: config.clone(),
                frontend: frontend.clone(),
                ubm: ubm.gmm,
                t: tv.t,
                lda,
                pre,
                plda: plda.model,
            },
            log,
        ))
    }

    pub fn embedder(&self) -> Result<Embedder<'_>> {
        Ok(Embedder {
            model: self,
            ex: IvectorExtractor::new(&self.t, &self.ubm)?,
            scorer: self.plda.scorer(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config,
            "frontend": self.frontend,
            "length_norm": self.pre.length_norm,
        });
        let mut c = Container::new(BACKEND_KIND, meta);
        c.push(
            "ubm.weights",
            Mat::from_vec(1, self.ubm.components(), self.ubm.weights.clone()),
        );
        c.push("ubm.means", self.ubm.means.clone());
        c.push("ubm.vars", self.ubm.vars.clone());
        c.push("tv.t", to_mat(&self.t.t));
        c.push("lda.proj", to_mat(&self.lda.proj));
        c.push("plda.pre.mean", vec_mat(&self.pre.mean));
        c.push("plda.pre.whiten", to_mat(&self.pre.whiten));
        c.push("plda.mu", vec_mat(&self.plda.mu));
        c.push("plda.v", to_mat(&self.plda.v));
        c.push("plda.sigma", to_mat(&self.plda.sigma));
        c.save(path, Dtype::F64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::load(path, BACKEND_KIND)?;
        let config: BackendConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::ModelFile(format!("backend config: {e}")))?;
        let frontend: FrontendConfig = serde_json::from_value(c.meta["frontend"].clone())
            .map_err(|e| Error::ModelFile(format!("backend frontend config: {e}")))?;
        let length_norm = c.meta["length_norm"]
            .as_bool()
            .ok_or_else(|| Error::ModelFile("backend: missing length_norm flag".into()))?;
        let ubm = Gmm::new(
            c.require("ubm.weights")?.as_slice().to_vec(),
            c.require("ubm.means")?.clone(),
            c.require("ubm.vars")?.clone(),
        )?;
        let model = Self {
            config,
            frontend,
            ubm,
            t: TMatrix {
                t: from_mat(c.require("tv.t")?),
            },
            lda: Lda {
                proj: from_mat(c.require("lda.proj")?),
            },
            pre: PldaPreprocess {
                mean: mat_vec(c.require("plda.pre.mean")?),
                whiten: from_mat(c.require("plda.pre.whiten")?),
                length_norm,
            },
            plda: PldaModel {
                mu: mat_vec(c.require("plda.mu")?),
                v: from_mat(c.require("plda.v")?),
                sigma: from_mat(c.require("plda.sigma")?),
            },
        };
        let (cd, r) = (model.ubm.components() * model.ubm.dim(), model.t.rank());
        if model.t.t.nrows() != cd
            || model.lda.proj.nrows() != r
            || model.pre.whiten.ncols() != model.lda.out_dim()
            || model.plda.dim() != model.pre.whiten.nrows()
        {
            return Err(Error::ModelFile(
                "backend: inconsistent tensor shapes".into(),
            ));
        }
        Ok(model)
    }
}

/// Maps feature streams to the PLDA space and scores pairs.
pub struct Embedder<'a> {
    model: &'a BackendModel,
    ex: IvectorExtractor<'a>,
    scorer: PldaScorer,
}

impl Embedder<'_> {
    pub fn ivector(&self, features: &Mat) -> Result<DVector<f64>> {
        self.ex.extract(&bw_stats(&self.model.ubm, features)?)
    }

    /// i-vector -> LDA -> PLDA preprocessing -> `V' Sigma^-1 (x - mu)`.
    pub fn embed(&self, features: &Mat) -> Result<DVector<f64>> {
        let w = self.ivector(features)?;
        Ok(self.embed_ivector(&w))
    }

    pub fn embed_ivector(&self, w: &DVector<f64>) -> DVector<f64> {
        self.scorer
            .project(&self.model.pre.apply(&self.model.lda.apply(w)))
    }

    pub fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> f64 {
        self.scorer.score_projected(enroll, test)
    }
}

pub fn to_mat(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

pub fn from_mat(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn vec_mat(v: &DVector<f64>) -> Mat {
    Mat::from_vec(1, v.len(), v.as_slice().to_vec())
}

fn mat_vec(m: &Mat) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn save_ivectors(path: impl AsRef<Path>, items: &[(String, DVector<f64>)]) -> Result<()> {
    let dim = items.first().map_or(0, |(_, v)| v.len());
    let mut c = Container::new(IVECTOR_KIND, serde_json::json!({ "dim": dim }));
    for (id, v) in items {
        c.push(id.clone(), vec_mat(v));
    }
    c.save(path, Dtype::F64)
}

pub fn load_ivectors(path: impl AsRef<Path>) -> Result<Vec<(String, DVector<f64>)>> {
    Ok(Container::load(path, IVECTOR_KIND)?
        .entries
        .into_iter()
        .map(|(id, m)| (id, mat_vec(&m)))
        .collect())
}
