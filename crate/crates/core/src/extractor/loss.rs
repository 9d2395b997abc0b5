//! Phase-sensitive mask targets and the magnitude + temporal spectrum
//! approximation (MTSAL) loss.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::signal::{delta, delta_transpose, ComplexSpectrogram, MagnitudeSpectrogram, N_BINS};

/// Floor on the mixture magnitude in the mask denominator.
pub const PSM_EPS: f64 = 1e-8;

/// A T x 129 time-frequency mask with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(pub Mat);

impl Mask {
    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn apply(&self, mix_mag: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
        check_shape(self.0.shape(), mix_mag.0.shape(), "mask vs mixture")?;
        Ok(MagnitudeSpectrogram(
            self.0.zip_map(&mix_mag.0, |m, y| m * y),
        ))
    }
}

fn check_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `|X| cos(theta_X - theta_Y)` per bin, i.e. the projection of the reference
/// onto the mixture phase.
fn phase_projected(reference: &ComplexSpectrogram, mix: &ComplexSpectrogram) -> Result<Mat> {
    check_shape(
        (reference.frames(), N_BINS),
        (mix.frames(), N_BINS),
        "reference vs mixture",
    )?;
    let data = reference
        .as_slice()
        .iter()
        .zip(mix.as_slice())
        .map(|(x, y)| {
            let ny = y.norm();
            if ny > 0.0 {
                // Re(X conj(Y)) / |Y| = |X| cos(dtheta)
                (x * y.conj()).re / ny
            } else {
                // Undefined mixture phase: treat the difference as zero.
                x.norm()
            }
        })
        .collect();
    Ok(Mat::from_vec(mix.frames(), N_BINS, data))
}

/// Phase-sensitive mask clipped to `[0, 1]`.
pub fn psm_target(reference: &ComplexSpectrogram, mix: &ComplexSpectrogram) -> Result<Mask> {
    let proj = phase_projected(reference, mix)?;
    let mix_mag = mix.magnitude();
    Ok(Mask(proj.zip_map(&mix_mag.0, |p, y| {
        (p / y.max(PSM_EPS)).clamp(0.0, 1.0)
    })))
}

/// Magnitude target `clip(|X| cos(dtheta), 0, |Y|)`, exactly realisable by a
/// `[0, 1]` mask on `|Y|`.
pub fn clipped_target(
    reference: &ComplexSpectrogram,
    mix: &ComplexSpectrogram,
) -> Result<MagnitudeSpectrogram> {
    let proj = phase_projected(reference, mix)?;
    let mix_mag = mix.magnitude();
    Ok(MagnitudeSpectrogram(
        proj.zip_map(&mix_mag.0, |p, y| p.clamp(0.0, y)),
    ))
}

pub fn mtsal_loss(
    mask: &Mask,
    mix_mag: &MagnitudeSpectrogram,
    reference: &ComplexSpectrogram,
    mix: &ComplexSpectrogram,
) -> Result<f64> {
    check_shape(
        mix_mag.0.shape(),
        (mix.frames(), N_BINS),
        "magnitude vs mixture",
    )?;
    let target = clipped_target(reference, mix)?;
    mtsal_loss_with_target(mask, mix_mag, &target).map(|(l, _)| l)
}

/// Loss against a precomputed target, plus `dL/dmask`.
pub fn mtsal_loss_with_target(
    mask: &Mask,
    mix_mag: &MagnitudeSpectrogram,
    target: &MagnitudeSpectrogram,
) -> Result<(f64, Mat)> {
    check_shape(mask.0.shape(), mix_mag.0.shape(), "mask vs mixture")?;
    check_shape(target.0.shape(), mix_mag.0.shape(), "target vs mixture")?;
    let (t_len, f_len) = mask.0.shape();
    let scale = 1.0 / (t_len * f_len).max(1) as f64;

    // The dynamics operator is linear, so D(E) - D(G) = D(E - G).
    let r0 = mask
        .0
        .zip_map(&mix_mag.0, |m, y| m * y)
        .zip_map(&target.0, |e, g| e - g);
    let r1 = delta(&r0);
    let r2 = delta(&r1);
    let loss = scale * (r0.sum_sq() + r1.sum_sq() + r2.sum_sq());

    let back2 = delta_transpose(&delta_transpose(&r2));
    let back1 = delta_transpose(&r1);
    let mut grad = r0;
    for ((g, a), b) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(back1.as_slice())
        .zip(back2.as_slice())
    {
        *g = 2.0 * scale * (*g + a + b);
    }
    // dL/dmask = dL/dE * |Y|
    for (g, &y) in grad.as_mut_slice().iter_mut().zip(mix_mag.0.as_slice()) {
        *g *= y;
    }
    Ok((loss, grad))
}
