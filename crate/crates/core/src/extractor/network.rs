//! The two mask-estimation architectures and their reverse-mode gradients.
//!
//! SBF-MTSAL: an auxiliary feed-forward net turns the enrollment magnitudes
//! into `M` adaptation weights (frame-averaged); the mask net runs a BLSTM
//! over the mixture, weights `M` ReLU sub-layers by those weights and sums
//! them, then two ReLU layers and a sigmoid mask layer.
//!
//! SBF-MTSAL-Concat: an auxiliary BLSTM + ReLU + linear net gives a
//! frame-averaged speaker embedding that is appended to every frame of the
//! mask net's first BLSTM output, followed by ReLU, BLSTM, ReLU and the
//! sigmoid mask layer.

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};

use super::layers::{relu_backward, relu_inplace, sigmoid, Affine, Blstm, BlstmTrace};
use super::params::{LayoutBuilder, TensorInfo};
use super::{ExtractorConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct MtsalNet {
    aux1: Affine,
    aux2: Affine,
    aux_out: Affine,
    blstm: Blstm,
    subs: Vec<Affine>,
    ff1: Affine,
    ff2: Affine,
    out: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConcatNet {
    aux_blstm: Blstm,
    aux1: Affine,
    aux_out: Affine,
    blstm1: Blstm,
    ff1: Affine,
    blstm2: Blstm,
    ff2: Affine,
    out: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Network {
    Mtsal(MtsalNet),
    Concat(ConcatNet),
}

pub(crate) struct MtsalTrace {
    aux_h1: Mat,
    aux_h2: Mat,
    alpha: Vec<f64>,
    blstm: BlstmTrace,
    subs: Vec<Mat>,
    adapt: Mat,
    h1: Mat,
    h2: Mat,
}

pub(crate) struct ConcatTrace {
    aux_blstm: BlstmTrace,
    aux_h1: Mat,
    blstm1: BlstmTrace,
    concat: Mat,
    z1: Mat,
    blstm2: BlstmTrace,
    z2: Mat,
}

pub(crate) enum Trace {
    Mtsal(MtsalTrace),
    Concat(ConcatTrace),
}

/// Output of a forward pass that can be differentiated later.
pub(crate) struct ForwardPass {
    pub mask: Mat,
    trace: Trace,
}

impl ForwardPass {
    /// The conditioning vector: adaptation weights or speaker embedding.
    pub fn conditioning(&self) -> Vec<f64> {
        match &self.trace {
            Trace::Mtsal(t) => t.alpha.clone(),
            Trace::Concat(t) => {
                let e = t.concat.cols() - t.blstm1.output.cols();
                t.concat.row(0)[t.concat.cols() - e..].to_vec()
            }
        }
    }
}

fn frame_mean(m: &Mat) -> Vec<f64> {
    m.column_mean()
}

/// Gradient of a frame mean: every frame receives `d / T`.
fn frame_mean_backward(d: &[f64], frames: usize) -> Mat {
    let inv = 1.0 / frames as f64;
    Mat::from_fn(frames, d.len(), |_, j| d[j] * inv)
}

fn check(m: &Mat, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericOverflow {
            layer: layer.to_string(),
        })
    }
}

impl Network {
    pub fn build(cfg: &ExtractorConfig) -> (Self, Vec<TensorInfo>) {
        let mut l = LayoutBuilder::default();
        let bins = cfg.bins;
        let net = match cfg.variant {
            Variant::SbfMtsal => {
                let aux1 = Affine::register(&mut l, "aux.ff1", bins, cfg.aux_hidden);
                let aux2 = Affine::register(&mut l, "aux.ff2", cfg.aux_hidden, cfg.aux_hidden);
                let aux_out = Affine::register(&mut l, "aux.out", cfg.aux_hidden, cfg.n_sublayers);
                let blstm = Blstm::register(&mut l, "mask.blstm", bins, cfg.blstm_cells);
                let subs = (0..cfg.n_sublayers)
                    .map(|m| {
                        Affine::register(
                            &mut l,
                            &format!("mask.adapt.sub{m}"),
                            blstm.out_dim(),
                            cfg.ff_hidden,
                        )
                    })
                    .collect();
                let ff1 = Affine::register(&mut l, "mask.ff1", cfg.ff_hidden, cfg.ff_hidden);
                let ff2 = Affine::register(&mut l, "mask.ff2", cfg.ff_hidden, cfg.ff_hidden);
                let out = Affine::register(&mut l, "mask.out", cfg.ff_hidden, bins);
                Network::Mtsal(MtsalNet {
                    aux1,
                    aux2,
                    aux_out,
                    blstm,
                    subs,
                    ff1,
                    ff2,
                    out,
                })
            }
            Variant::SbfMtsalConcat => {
                let aux_blstm = Blstm::register(&mut l, "aux.blstm", bins, cfg.aux_hidden);
                let aux1 = Affine::register(&mut l, "aux.ff1", aux_blstm.out_dim(), cfg.aux_hidden);
                let aux_out = Affine::register(&mut l, "aux.out", cfg.aux_hidden, cfg.embed_dim);
                let blstm1 = Blstm::register(&mut l, "mask.blstm1", bins, cfg.blstm_cells);
                let ff1 = Affine::register(
                    &mut l,
                    "mask.ff1",
                    blstm1.out_dim() + cfg.embed_dim,
                    cfg.ff_hidden,
                );
                let blstm2 = Blstm::register(&mut l, "mask.blstm2", cfg.ff_hidden, cfg.blstm_cells);
                let ff2 = Affine::register(&mut l, "mask.ff2", blstm2.out_dim(), cfg.ff_hidden);
                let out = Affine::register(&mut l, "mask.out", cfg.ff_hidden, bins);
                Network::Concat(ConcatNet {
                    aux_blstm,
                    aux1,
                    aux_out,
                    blstm1,
                    ff1,
                    blstm2,
                    ff2,
                    out,
                })
            }
        };
        (net, l.finish())
    }

    pub fn forward(&self, p: &[f64], mix: &Mat, aux: &Mat) -> Result<ForwardPass> {
        match self {
            Network::Mtsal(n) => n.forward(p, mix, aux),
            Network::Concat(n) => n.forward(p, mix, aux),
        }
    }

    /// Accumulate `dL/dparams` into `g` given `dL/dmask`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        mix: &Mat,
        aux: &Mat,
        pass: &ForwardPass,
        dmask: &Mat,
    ) {
        // Sigmoid output layer.
        let dpre = pass.mask.zip_map(dmask, |s, d| d * s * (1.0 - s));
        match (self, &pass.trace) {
            (Network::Mtsal(n), Trace::Mtsal(t)) => n.backward(p, g, mix, aux, t, &dpre),
            (Network::Concat(n), Trace::Concat(t)) => n.backward(p, g, mix, aux, t, &dpre),
            _ => unreachable!("trace produced by a different network"),
        }
    }
}

fn sigmoid_mask(out: &Affine, p: &[f64], h: &Mat) -> Mat {
    out.forward(p, h).map(sigmoid)
}

impl MtsalNet {
    fn forward(&self, p: &[f64], mix: &Mat, aux: &Mat) -> Result<ForwardPass> {
        let mut aux_h1 = self.aux1.forward(p, aux);
        relu_inplace(&mut aux_h1);
        let mut aux_h2 = self.aux2.forward(p, &aux_h1);
        relu_inplace(&mut aux_h2);
        let alpha = frame_mean(&self.aux_out.forward(p, &aux_h2));
        check(&Mat::from_vec(1, alpha.len(), alpha.clone()), "aux.out")?;

        let blstm = self.blstm.forward(p, mix);
        check(&blstm.output, "mask.blstm")?;
        let mut adapt = Mat::zeros(mix.rows(), self.ff1.n_in);
        let mut subs = Vec::with_capacity(self.subs.len());
        for (sub, &a) in self.subs.iter().zip(&alpha) {
            let mut z = sub.forward(p, &blstm.output);
            relu_inplace(&mut z);
            for (acc, &v) in adapt.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *acc += a * v;
            }
            subs.push(z);
        }
        check(&adapt, "mask.adapt")?;
        let mut h1 = self.ff1.forward(p, &adapt);
        relu_inplace(&mut h1);
        let mut h2 = self.ff2.forward(p, &h1);
        relu_inplace(&mut h2);
        let mask = sigmoid_mask(&self.out, p, &h2);
        check(&mask, "mask.out")?;
        Ok(ForwardPass {
            mask,
            trace: Trace::Mtsal(MtsalTrace {
                aux_h1,
                aux_h2,
                alpha,
                blstm,
                subs,
                adapt,
                h1,
                h2,
            }),
        })
    }

    fn backward(&self, p: &[f64], g: &mut [f64], mix: &Mat, aux: &Mat, t: &MtsalTrace, dpre: &Mat) {
        let mut dh2 = self.out.backward(p, g, &t.h2, dpre);
        relu_backward(&t.h2, &mut dh2);
        let mut dh1 = self.ff2.backward(p, g, &t.h1, &dh2);
        relu_backward(&t.h1, &mut dh1);
        let dadapt = self.ff1.backward(p, g, &t.adapt, &dh1);

        let mut dblstm = Mat::zeros(mix.rows(), self.blstm.out_dim());
        let mut dalpha = vec![0.0; self.subs.len()];
        for (m, (sub, z)) in self.subs.iter().zip(&t.subs).enumerate() {
            dalpha[m] = dot(dadapt.as_slice(), z.as_slice());
            let mut dz = dadapt.map(|v| v * t.alpha[m]);
            relu_backward(z, &mut dz);
            let dh = sub.backward(p, g, &t.blstm.output, &dz);
            for (acc, v) in dblstm.as_mut_slice().iter_mut().zip(dh.as_slice()) {
                *acc += v;
            }
        }
        self.blstm.backward(p, g, mix, &t.blstm, &dblstm);

        let dout = frame_mean_backward(&dalpha, aux.rows());
        let mut da2 = self.aux_out.backward(p, g, &t.aux_h2, &dout);
        relu_backward(&t.aux_h2, &mut da2);
        let mut da1 = self.aux2.backward(p, g, &t.aux_h1, &da2);
        relu_backward(&t.aux_h1, &mut da1);
        self.aux1.backward_params(g, aux, &da1);
    }
}

impl ConcatNet {
    fn forward(&self, p: &[f64], mix: &Mat, aux: &Mat) -> Result<ForwardPass> {
        let aux_blstm = self.aux_blstm.forward(p, aux);
        check(&aux_blstm.output, "aux.blstm")?;
        let mut aux_h1 = self.aux1.forward(p, &aux_blstm.output);
        relu_inplace(&mut aux_h1);
        let embed = frame_mean(&self.aux_out.forward(p, &aux_h1));
        check(&Mat::from_vec(1, embed.len(), embed.clone()), "aux.out")?;

        let blstm1 = self.blstm1.forward(p, mix);
        check(&blstm1.output, "mask.blstm1")?;
        let repeated = Mat::from_fn(mix.rows(), embed.len(), |_, j| embed[j]);
        let concat = blstm1.output.hcat(&repeated);
        let mut z1 = self.ff1.forward(p, &concat);
        relu_inplace(&mut z1);
        let blstm2 = self.blstm2.forward(p, &z1);
        check(&blstm2.output, "mask.blstm2")?;
        let mut z2 = self.ff2.forward(p, &blstm2.output);
        relu_inplace(&mut z2);
        let mask = sigmoid_mask(&self.out, p, &z2);
        check(&mask, "mask.out")?;
        Ok(ForwardPass {
            mask,
            trace: Trace::Concat(ConcatTrace {
                aux_blstm,
                aux_h1,
                blstm1,
                concat,
                z1,
                blstm2,
                z2,
            }),
        })
    }

    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        mix: &Mat,
        aux: &Mat,
        t: &ConcatTrace,
        dpre: &Mat,
    ) {
        let mut dz2 = self.out.backward(p, g, &t.z2, dpre);
        relu_backward(&t.z2, &mut dz2);
        let dh2 = self.ff2.backward(p, g, &t.blstm2.output, &dz2);
        let mut dz1 = self.blstm2.backward(p, g, &t.z1, &t.blstm2, &dh2);
        relu_backward(&t.z1, &mut dz1);
        let dconcat = self.ff1.backward(p, g, &t.concat, &dz1);
        let (dh1, drep) = dconcat.hsplit(self.blstm1.out_dim());
        self.blstm1.backward(p, g, mix, &t.blstm1, &dh1);

        // The embedding is repeated on every frame, so its gradient is the
        // sum over frames.
        let mut dembed = vec![0.0; drep.cols()];
        for row in drep.iter_rows() {
            for (d, v) in dembed.iter_mut().zip(row) {
                *d += v;
            }
        }
        let dout = frame_mean_backward(&dembed, aux.rows());
        let mut da1 = self.aux_out.backward(p, g, &t.aux_h1, &dout);
        relu_backward(&t.aux_h1, &mut da1);
        let dab = self.aux1.backward(p, g, &t.aux_blstm.output, &da1);
        self.aux_blstm.backward(p, g, aux, &t.aux_blstm, &dab);
    }
}
