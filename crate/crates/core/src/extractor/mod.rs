//! Target speaker extraction: auxiliary-network-conditioned mask estimation
//! on STFT magnitudes, reconstructed with the mixture phase.

pub mod gradcheck;
mod io;
mod layers;
mod loss;
mod network;
mod params;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::signal::{
    reconstruct_with_mixture_phase, stft, ComplexSpectrogram, MagnitudeSpectrogram, Waveform,
    N_BINS,
};

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use loss::{clipped_target, mtsal_loss, mtsal_loss_with_target, psm_target, Mask, PSM_EPS};
pub use params::{ParamStore, TensorInfo};
pub use train::{train, EpochLog, LrSchedule, ScheduleDecision, TrainOutcome};

use network::Network;

/// Uniform initialisation half-width.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SbfMtsal,
    SbfMtsalConcat,
}

impl Variant {
    pub const NAMES: [&'static str; 2] = ["sbf-mtsal", "sbf-mtsal-concat"];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SbfMtsal => "sbf-mtsal",
            Variant::SbfMtsalConcat => "sbf-mtsal-concat",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "sbf-mtsal" => Ok(Variant::SbfMtsal),
            "sbf-mtsal-concat" => Ok(Variant::SbfMtsalConcat),
            _ => Err(Error::Config(format!(
                "unknown variant '{s}', expected one of: {}",
                Variant::NAMES.join(", ")
            ))),
        }
    }
}

/// Architecture and training hyper-parameters. Defaults are desk scale;
/// [`ExtractorConfig::full_scale`] gives the full-size networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub variant: Variant,
    pub bins: usize,
    /// BLSTM cells per direction in the mask network.
    pub blstm_cells: usize,
    /// Adaptation sub-layers (SBF-MTSAL).
    pub n_sublayers: usize,
    /// Speaker embedding size (SBF-MTSAL-Concat).
    pub embed_dim: usize,
    /// Auxiliary network width (ReLU nodes; also BLSTM cells for Concat).
    pub aux_hidden: usize,
    pub ff_hidden: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub batch: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub stop_rel_loss: f64,
    pub seed: u64,
    /// Feed `ln(1 + |S|)` to the networks instead of raw magnitudes.
    pub log_input: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SbfMtsalConcat,
            bins: N_BINS,
            blstm_cells: 64,
            n_sublayers: 8,
            embed_dim: 16,
            aux_hidden: 64,
            ff_hidden: 64,
            lr0: 0.0005,
            lr_decay: 0.7,
            batch: 4,
            min_epochs: 30,
            max_epochs: 100,
            stop_rel_loss: 0.01,
            seed: 0,
            log_input: false,
        }
    }
}

impl ExtractorConfig {
    pub fn full_scale(variant: Variant) -> Self {
        Self {
            variant,
            blstm_cells: 512,
            n_sublayers: 30,
            embed_dim: 30,
            aux_hidden: match variant {
                Variant::SbfMtsal => 512,
                Variant::SbfMtsalConcat => 256,
            },
            ff_hidden: 512,
            batch: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("bins", self.bins),
            ("blstm_cells", self.blstm_cells),
            ("n_sublayers", self.n_sublayers),
            ("embed_dim", self.embed_dim),
            ("aux_hidden", self.aux_hidden),
            ("ff_hidden", self.ff_hidden),
            ("batch", self.batch),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.bins != N_BINS {
            return Err(Error::Config(format!(
                "bins must be {N_BINS}, got {}",
                self.bins
            )));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1)".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One supervised training item: mixture and auxiliary magnitudes plus the
/// clipped phase-sensitive magnitude target.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub mix_mag: MagnitudeSpectrogram,
    pub target: MagnitudeSpectrogram,
    pub aux_mag: MagnitudeSpectrogram,
}

impl TrainingExample {
    pub fn new(
        mix: &ComplexSpectrogram,
        reference: &ComplexSpectrogram,
        aux: &ComplexSpectrogram,
    ) -> Result<Self> {
        Ok(Self {
            mix_mag: mix.magnitude(),
            target: clipped_target(reference, mix)?,
            aux_mag: aux.magnitude(),
        })
    }

    /// Build from waveforms; the reference is truncated to the mixture length.
    pub fn from_waveforms(
        mixture: &Waveform,
        reference: &Waveform,
        aux: &Waveform,
    ) -> Result<Self> {
        let n = mixture.len().min(reference.len());
        let mix = stft(&mixture.truncated(n))?;
        let reference = stft(&reference.truncated(n))?;
        Self::new(&mix, &reference, &stft(aux)?)
    }

    pub fn frames(&self) -> usize {
        self.mix_mag.frames()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorModel {
    config: ExtractorConfig,
    network: Network,
    params: ParamStore,
}

impl ExtractorModel {
    /// Fresh model with parameters drawn uniformly from `(-0.05, 0.05)`.
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let (network, layout) = Network::build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ParamStore::uniform(layout, INIT_SCALE, &mut rng);
        Ok(Self {
            config,
            network,
            params,
        })
    }

    /// Model with all parameters zero.
    pub fn zeros(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let (network, layout) = Network::build(&config);
        Ok(Self {
            config,
            network,
            params: ParamStore::zeros(layout),
        })
    }

    /// Rebuild a model from a config and a flat parameter vector.
    pub fn from_params(config: ExtractorConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (network, layout) = Network::build(&config);
        let params = ParamStore::from_parts(layout, data)
            .ok_or_else(|| Error::ModelFile("parameter count does not match config".into()))?;
        if !params.is_finite() {
            return Err(Error::ModelFile("non-finite parameters".into()));
        }
        Ok(Self {
            config,
            network,
            params,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn features(&self, mag: &MagnitudeSpectrogram) -> Mat {
        if self.config.log_input {
            mag.0.map(f64::ln_1p)
        } else {
            mag.0.clone()
        }
    }

    fn check_inputs(
        &self,
        mix_mag: &MagnitudeSpectrogram,
        aux_mag: &MagnitudeSpectrogram,
    ) -> Result<()> {
        for (what, m) in [("mixture", mix_mag), ("auxiliary", aux_mag)] {
            if m.0.cols() != self.config.bins {
                return Err(Error::Dimension(format!(
                    "{what} has {} bins, model expects {}",
                    m.0.cols(),
                    self.config.bins
                )));
            }
            if m.frames() == 0 {
                return Err(Error::Dimension(format!("{what} has no frames")));
            }
        }
        Ok(())
    }

    /// Estimate the target-speaker mask for a mixture given auxiliary speech.
    pub fn forward(
        &self,
        mix_mag: &MagnitudeSpectrogram,
        aux_mag: &MagnitudeSpectrogram,
    ) -> Result<Mask> {
        self.check_inputs(mix_mag, aux_mag)?;
        let pass = self.network.forward(
            self.params.as_slice(),
            &self.features(mix_mag),
            &self.features(aux_mag),
        )?;
        Ok(Mask(pass.mask))
    }

    /// Adaptation weights (SBF-MTSAL) or speaker embedding (Concat) that the
    /// auxiliary network produces for `aux_mag`.
    pub fn conditioning(&self, aux_mag: &MagnitudeSpectrogram) -> Result<Vec<f64>> {
        let probe = MagnitudeSpectrogram(Mat::zeros(1, self.config.bins));
        self.check_inputs(&probe, aux_mag)?;
        let pass = self.network.forward(
            self.params.as_slice(),
            &self.features(&probe),
            &self.features(aux_mag),
        )?;
        Ok(pass.conditioning())
    }

    pub fn loss(&self, ex: &TrainingExample) -> Result<f64> {
        let mask = self.forward(&ex.mix_mag, &ex.aux_mag)?;
        Ok(mtsal_loss_with_target(&mask, &ex.mix_mag, &ex.target)?.0)
    }

    /// Loss and parameter gradient for one example.
    pub fn loss_and_gradient(&self, ex: &TrainingExample) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(ex, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    fn accumulate_gradient(
        &self,
        ex: &TrainingExample,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_inputs(&ex.mix_mag, &ex.aux_mag)?;
        let p = self.params.as_slice();
        let mix = self.features(&ex.mix_mag);
        let aux = self.features(&ex.aux_mag);
        let pass = self.network.forward(p, &mix, &aux)?;
        let mask = Mask(pass.mask.clone());
        let (loss, mut dmask) = mtsal_loss_with_target(&mask, &ex.mix_mag, &ex.target)?;
        if weight != 1.0 {
            dmask.as_mut_slice().iter_mut().for_each(|v| *v *= weight);
        }
        self.network.backward(p, grad, &mix, &aux, &pass, &dmask);
        Ok(loss)
    }

    /// Mean loss over `batch` and its gradient, accumulated in batch order.
    pub fn backward(&self, batch: &[TrainingExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        let w = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for ex in batch {
            loss += w * self.accumulate_gradient(ex, w, &mut grad)?;
        }
        if let Some(t) = self
            .params
            .tensors()
            .iter()
            .find(|t| grad[t.range()].iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NumericOverflow {
                layer: t.name.clone(),
            });
        }
        Ok((loss, grad))
    }

    /// Extract the target speaker from `mixture` using `aux` as enrollment.
    /// The output covers the mixture's whole frames.
    pub fn extract(&self, mixture: &Waveform, aux: &Waveform) -> Result<Waveform> {
        let mix = stft(mixture)?;
        let aux = stft(aux)?;
        let mix_mag = mix.magnitude();
        let mask = self.forward(&mix_mag, &aux.magnitude())?;
        reconstruct_with_mixture_phase(&mask.apply(&mix_mag)?, &mix)
    }
}
