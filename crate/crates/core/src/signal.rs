//! Waveform I/O, STFT analysis/synthesis and spectro-temporal dynamics.
//!
//! Analysis uses 256-sample frames (32 ms at 8 kHz) with a 128-sample hop and
//! a square-root Hamming window scaled so that the squared window overlap-adds
//! to exactly one. Using the same window for synthesis makes `istft(stft(x))`
//! reproduce every sample that is covered by two frames.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const SAMPLE_RATE: u32 = 8000;
pub const FRAME_LEN: usize = 256;
pub const HOP: usize = 128;
pub const N_BINS: usize = FRAME_LEN / 2 + 1;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn truncated(&self, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Read a PCM16 mono 8 kHz RIFF/WAVE file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.into(),
            msg: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            msg: format!("{} channels, expected mono", spec.channels),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            msg: format!(
                "{:?} {}-bit samples, expected PCM16",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::RateMismatch {
            path: path.into(),
            expected: SAMPLE_RATE,
            found: spec.sample_rate,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })?;
    Ok(Waveform {
        samples,
        sample_rate_hz: spec.sample_rate,
    })
}

/// Write PCM16 mono. Samples are scaled by 32768, rounded and saturated.
pub fn save_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.into(),
            msg: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &w.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

pub fn quantize_pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Analysis/synthesis window: `sqrt(hamming)` divided by the constant that
/// makes `sum_k w(n - k*HOP)^2 == 1`.
pub fn analysis_window() -> Vec<f64> {
    let raw: Vec<f64> = (0..FRAME_LEN)
        .map(|n| (0.54 - 0.46 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos()).sqrt())
        .collect();
    // The periodic Hamming window overlap-adds to a constant at 50% overlap,
    // so any interior sample gives the normaliser.
    let ola: f64 = (0..FRAME_LEN / HOP).map(|k| raw[k * HOP].powi(2)).sum();
    let c = ola.sqrt();
    raw.into_iter().map(|v| v / c).collect()
}

/// Number of full frames available in `n` samples.
pub fn num_frames(n: usize) -> usize {
    if n < FRAME_LEN {
        0
    } else {
        (n - FRAME_LEN) / HOP + 1
    }
}

/// Number of samples an `istft` of `frames` frames produces.
pub fn frames_to_samples(frames: usize) -> usize {
    if frames == 0 {
        0
    } else {
        (frames - 1) * HOP + FRAME_LEN
    }
}

/// T x 129 complex short-time spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize) -> Self {
        Self {
            frames,
            data: vec![Complex64::new(0.0, 0.0); frames * N_BINS],
        }
    }

    pub fn from_vec(frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != frames * N_BINS {
            return Err(Error::Dimension(format!(
                "spectrogram data has {} values, expected {frames} x {N_BINS}",
                data.len()
            )));
        }
        Ok(Self { frames, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        N_BINS
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram(Mat::from_vec(
            self.frames,
            N_BINS,
            self.data.iter().map(|c| c.norm()).collect(),
        ))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            frames: self.frames,
            data: self.data.iter().map(|c| c * gain).collect(),
        }
    }
}

/// T x 129 non-negative magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram(pub Mat);

impl MagnitudeSpectrogram {
    pub fn new(m: Mat) -> Result<Self> {
        if m.cols() != N_BINS {
            return Err(Error::Dimension(format!(
                "magnitude spectrogram has {} bins, expected {N_BINS}",
                m.cols()
            )));
        }
        if m.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Dimension(
                "magnitude spectrogram has negative or NaN entries".into(),
            ));
        }
        Ok(Self(m))
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

thread_local! {
    static FFT: RefCell<Option<FftPair>> = const { RefCell::new(None) };
}

fn with_fft<R>(f: impl FnOnce(&FftPair) -> R) -> R {
    FFT.with(|cell| {
        let mut slot = cell.borrow_mut();
        let pair = slot.get_or_insert_with(|| {
            let mut planner = FftPlanner::new();
            FftPair {
                forward: planner.plan_fft_forward(FRAME_LEN),
                inverse: planner.plan_fft_inverse(FRAME_LEN),
                window: analysis_window(),
            }
        });
        f(pair)
    })
}

pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    let frames = num_frames(w.len());
    if frames == 0 {
        return Err(Error::TooShort {
            needed: FRAME_LEN,
            got: w.len(),
        });
    }
    let mut out = ComplexSpectrogram::zeros(frames);
    with_fft(|fft| {
        let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
        for t in 0..frames {
            let seg = &w.samples[t * HOP..t * HOP + FRAME_LEN];
            for ((b, &s), &win) in buf.iter_mut().zip(seg).zip(&fft.window) {
                *b = Complex64::new(s * win, 0.0);
            }
            fft.forward.process(&mut buf);
            out.frame_mut(t).copy_from_slice(&buf[..N_BINS]);
        }
    });
    Ok(out)
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(s: &ComplexSpectrogram) -> Waveform {
    let frames = s.frames();
    let mut out = vec![0.0; frames_to_samples(frames)];
    with_fft(|fft| {
        let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
        let scale = 1.0 / FRAME_LEN as f64;
        for t in 0..frames {
            let frame = s.frame(t);
            buf[..N_BINS].copy_from_slice(frame);
            // Imaginary parts of DC and Nyquist are dropped, as a real
            // signal cannot carry them.
            buf[0].im = 0.0;
            buf[N_BINS - 1].im = 0.0;
            for k in N_BINS..FRAME_LEN {
                buf[k] = frame[FRAME_LEN - k].conj();
            }
            fft.inverse.process(&mut buf);
            let dst = &mut out[t * HOP..t * HOP + FRAME_LEN];
            for ((o, b), &win) in dst.iter_mut().zip(&buf).zip(&fft.window) {
                *o += b.re * scale * win;
            }
        }
    });
    Waveform::new(out)
}

/// `istft(mag * exp(i * phase(mix)))`. Bins where the mixture is exactly
/// zero are given phase zero.
pub fn reconstruct_with_mixture_phase(
    mag: &MagnitudeSpectrogram,
    mix: &ComplexSpectrogram,
) -> Result<Waveform> {
    if mag.0.shape() != (mix.frames(), N_BINS) {
        return Err(Error::Dimension(format!(
            "magnitude {:?} vs mixture {}x{N_BINS}",
            mag.0.shape(),
            mix.frames()
        )));
    }
    let data = mag
        .0
        .as_slice()
        .iter()
        .zip(mix.as_slice())
        .map(|(&m, y)| {
            let r = y.norm();
            if r > 0.0 {
                y * (m / r)
            } else {
                Complex64::new(m, 0.0)
            }
        })
        .collect();
    Ok(istft(&ComplexSpectrogram::from_vec(mix.frames(), data)?))
}

/// Half-width of the delta regression window.
pub const DELTA_WINDOW: usize = 2;

/// Regression delta along rows (time): `sum_n n (x[t+n] - x[t-n]) / (2 sum_n n^2)`
/// with frame indices clamped to the sequence (edge replication).
pub fn delta(m: &Mat) -> Mat {
    let (t_len, d) = m.shape();
    let mut out = Mat::zeros(t_len, d);
    if t_len == 0 {
        return out;
    }
    let denom = delta_denominator();
    let last = t_len as isize - 1;
    for t in 0..t_len {
        let row = out.row_mut(t);
        for n in 1..=DELTA_WINDOW {
            let fwd = m.row((t as isize + n as isize).min(last) as usize);
            let bwd = m.row((t as isize - n as isize).max(0) as usize);
            let w = n as f64 / denom;
            for j in 0..d {
                row[j] += w * (fwd[j] - bwd[j]);
            }
        }
    }
    out
}

/// Transpose of the linear map [`delta`], used to back-propagate through it.
pub fn delta_transpose(u: &Mat) -> Mat {
    let (t_len, d) = u.shape();
    let mut out = Mat::zeros(t_len, d);
    if t_len == 0 {
        return out;
    }
    let denom = delta_denominator();
    let last = t_len as isize - 1;
    for t in 0..t_len {
        for n in 1..=DELTA_WINDOW {
            let fwd = (t as isize + n as isize).min(last) as usize;
            let bwd = (t as isize - n as isize).max(0) as usize;
            let w = n as f64 / denom;
            for j in 0..d {
                let g = w * u[(t, j)];
                out[(fwd, j)] += g;
                out[(bwd, j)] -= g;
            }
        }
    }
    out
}

fn delta_denominator() -> f64 {
    2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>()
}

/// Delta and acceleration (delta of delta) of a frame sequence.
pub fn dynamics(m: &Mat) -> (Mat, Mat) {
    let d = delta(m);
    let a = delta(&d);
    (d, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn dft_frame(seg: &[f64], window: &[f64]) -> Vec<Complex64> {
        (0..N_BINS)
            .map(|k| {
                seg.iter()
                    .zip(window)
                    .enumerate()
                    .map(|(n, (&x, &w))| {
                        let ang = -2.0 * PI * (k * n) as f64 / FRAME_LEN as f64;
                        Complex64::new(ang.cos(), ang.sin()) * (x * w)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn window_overlap_adds_to_unity() {
        let w = analysis_window();
        for n in 0..HOP {
            let s = w[n].powi(2) + w[n + HOP].powi(2);
            assert!((s - 1.0).abs() < 1e-14, "n={n} sum={s}");
        }
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(num_frames(255), 0);
        assert_eq!(num_frames(256), 1);
        assert_eq!(num_frames(512), 3);
        assert_eq!(num_frames(4096), 31);
    }

    #[test]
    fn stft_rejects_short_input() {
        let err = stft(&Waveform::new(vec![0.0; 255])).unwrap_err();
        assert!(matches!(
            err,
            Error::TooShort {
                needed: 256,
                got: 255
            }
        ));
    }

    #[test]
    fn stft_of_zeros_is_zero() {
        let s = stft(&Waveform::new(vec![0.0; 512])).unwrap();
        assert_eq!(s.frames(), 3);
        assert!(s.as_slice().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_of_constant_has_energy_only_in_dc_and_window_leakage() {
        // A windowed constant is not a pure DC tone, but the Hamming-root
        // window concentrates it in the first two bins.
        let s = stft(&Waveform::new(vec![0.3; 1024])).unwrap();
        for t in 0..s.frames() {
            let f = s.frame(t);
            let peak = (0..N_BINS).max_by(|&a, &b| f[a].norm().total_cmp(&f[b].norm()));
            assert_eq!(peak, Some(0));
            let far: f64 = f[4..].iter().map(|c| c.norm_sqr()).sum();
            let total: f64 = f.iter().map(|c| c.norm_sqr()).sum();
            assert!(far / total < 1e-3, "far/total={}", far / total);
        }
    }

    #[test]
    fn stft_matches_direct_dft() {
        let w = random_wave(1024, 7);
        let s = stft(&w).unwrap();
        let win = analysis_window();
        for t in 0..s.frames() {
            let want = dft_frame(&w.samples[t * HOP..t * HOP + FRAME_LEN], &win);
            for (a, b) in s.frame(t).iter().zip(&want) {
                assert!((a - b).norm() <= 1e-9, "frame {t}");
            }
        }
    }

    #[test]
    fn sinusoid_peaks_at_expected_bin() {
        let samples: Vec<f64> = (0..2048)
            .map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 8000.0).sin())
            .collect();
        let w = Waveform::new(samples);
        let s = stft(&w).unwrap();
        let win = analysis_window();
        for t in 0..s.frames() {
            let oracle = dft_frame(&w.samples[t * HOP..t * HOP + FRAME_LEN], &win);
            let argmax = |f: &[Complex64]| {
                (0..N_BINS)
                    .max_by(|&a, &b| f[a].norm().total_cmp(&f[b].norm()))
                    .unwrap()
            };
            assert_eq!(argmax(&oracle), 32);
            assert_eq!(argmax(s.frame(t)), 32);
        }
    }

    #[test]
    fn istft_roundtrip_interior() {
        let w = random_wave(4096, 11);
        let y = istft(&stft(&w).unwrap());
        assert_eq!(y.len(), 4096);
        for n in HOP..w.len() - HOP {
            assert!((y.samples[n] - w.samples[n]).abs() < 1e-6, "n={n}");
        }
    }

    #[test]
    fn istft_of_zero_spectrogram_is_zero() {
        let y = istft(&ComplexSpectrogram::zeros(4));
        assert_eq!(y.len(), frames_to_samples(4));
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_impulse_gets_squared_window() {
        let win = analysis_window();
        for n0 in [0usize, 17, 128, 255] {
            let mut x = vec![0.0; FRAME_LEN];
            x[n0] = 1.0;
            let y = istft(&stft(&Waveform::new(x)).unwrap());
            for (n, &v) in y.samples.iter().enumerate() {
                let want = if n == n0 { win[n0] * win[n0] } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "n0={n0} n={n}");
            }
        }
    }

    #[test]
    fn parseval_energy_consistency() {
        let w = random_wave(3000, 3);
        let s = stft(&w).unwrap();
        let win = analysis_window();
        let mut spec_energy = 0.0;
        let mut time_energy = 0.0;
        for t in 0..s.frames() {
            let f = s.frame(t);
            // One-sided spectrum: interior bins stand for two.
            spec_energy += f[0].norm_sqr() + f[N_BINS - 1].norm_sqr();
            spec_energy += 2.0 * f[1..N_BINS - 1].iter().map(|c| c.norm_sqr()).sum::<f64>();
            time_energy += w.samples[t * HOP..t * HOP + FRAME_LEN]
                .iter()
                .zip(&win)
                .map(|(x, v)| (x * v).powi(2))
                .sum::<f64>();
        }
        let expected = FRAME_LEN as f64 * time_energy;
        assert!(((spec_energy - expected) / expected).abs() < 1e-6);
    }

    #[test]
    fn stft_is_linear() {
        let x = random_wave(1500, 1);
        let y = random_wave(1500, 2);
        let (a, b) = (0.7, -1.3);
        let combo = Waveform::new(
            x.samples
                .iter()
                .zip(&y.samples)
                .map(|(p, q)| a * p + b * q)
                .collect(),
        );
        let (sx, sy, sc) = (stft(&x).unwrap(), stft(&y).unwrap(), stft(&combo).unwrap());
        for i in 0..sc.as_slice().len() {
            let want = sx.as_slice()[i] * a + sy.as_slice()[i] * b;
            assert!((sc.as_slice()[i] - want).norm() < 1e-9);
        }
    }

    #[test]
    fn mixture_phase_reconstruction() {
        let w = random_wave(2048, 5);
        let mix = stft(&w).unwrap();
        let base = istft(&mix);

        let ident = reconstruct_with_mixture_phase(&mix.magnitude(), &mix).unwrap();
        assert!(ident
            .samples
            .iter()
            .zip(&base.samples)
            .all(|(a, b)| (a - b).abs() < 1e-6));

        let zero = MagnitudeSpectrogram(Mat::zeros(mix.frames(), N_BINS));
        let z = reconstruct_with_mixture_phase(&zero, &mix).unwrap();
        assert!(z.samples.iter().all(|&v| v == 0.0));

        let half = MagnitudeSpectrogram(mix.magnitude().0.map(|v| 0.5 * v));
        let h = reconstruct_with_mixture_phase(&half, &mix).unwrap();
        assert!(h
            .samples
            .iter()
            .zip(&base.samples)
            .all(|(a, b)| (a - 0.5 * b).abs() < 1e-6));

        let bad = MagnitudeSpectrogram(Mat::zeros(mix.frames() + 1, N_BINS));
        assert!(matches!(
            reconstruct_with_mixture_phase(&bad, &mix),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dynamics_of_constant_is_zero() {
        let m = Mat::filled(7, 3, 2.5);
        let (d, a) = dynamics(&m);
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
        assert!(a.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dynamics_of_ramp_is_unit_in_interior() {
        let m = Mat::from_fn(10, 2, |t, _| t as f64);
        let (d, _) = dynamics(&m);
        for t in 2..8 {
            assert!((d[(t, 0)] - 1.0).abs() < 1e-12);
        }
        // Edge replication shortens the reach at the boundaries:
        // t=0: (1*(1-0) + 2*(2-0)) / 10 = 0.5
        assert!((d[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dynamics_of_single_frame_is_zero() {
        let m = Mat::from_vec(1, 3, vec![1.0, -2.0, 3.0]);
        let (d, a) = dynamics(&m);
        assert!(d.as_slice().iter().chain(a.as_slice()).all(|&v| v == 0.0));
    }

    #[test]
    fn wav_scaling_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pcm: Vec<i16> = (0..1000).map(|_| rng.gen()).collect();
        let w = Waveform::new(pcm.iter().map(|&v| f64::from(v) / 32768.0).collect());
        save_wav(&p, &w).unwrap();
        let back = load_wav(&p).unwrap();
        assert_eq!(back, w);
        let bytes1 = std::fs::read(&p).unwrap();
        save_wav(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes1);

        let q = dir.path().join("half.wav");
        save_wav(&q, &Waveform::new(vec![0.5, 0.0])).unwrap();
        assert_eq!(load_wav(&q).unwrap().samples, vec![0.5, 0.0]);

        let z = dir.path().join("z.wav");
        save_wav(&z, &Waveform::new(vec![0.0; 256])).unwrap();
        assert_eq!(load_wav(&z).unwrap().samples, vec![0.0; 256]);
    }

    #[test]
    fn wav_rejects_wrong_formats() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&stereo, spec).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        assert!(matches!(
            load_wav(&stereo),
            Err(Error::UnsupportedFormat { .. })
        ));

        let rate = dir.path().join("r.wav");
        let mut w = Waveform::new(vec![0.0; 10]);
        w.sample_rate_hz = 16000;
        save_wav(&rate, &w).unwrap();
        assert!(matches!(
            load_wav(&rate),
            Err(Error::RateMismatch { found: 16000, .. })
        ));

        let junk = dir.path().join("j.wav");
        std::fs::write(&junk, b"RIFFnonsense").unwrap();
        assert!(matches!(load_wav(&junk), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn delta_is_odd_under_time_reversal(vals in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let m = Mat::from_vec(vals.len(), 1, vals);
            let fwd = delta(&m);
            let rev = delta(&m.reversed_rows());
            for t in 0..m.rows() {
                prop_assert!((rev[(t, 0)] + fwd[(m.rows() - 1 - t, 0)]).abs() < 1e-12);
            }
        }

        #[test]
        fn delta_transpose_is_adjoint(
            a in prop::collection::vec(-1.0f64..1.0, 12),
            b in prop::collection::vec(-1.0f64..1.0, 12),
        ) {
            let x = Mat::from_vec(6, 2, a);
            let u = Mat::from_vec(6, 2, b);
            let lhs: f64 = delta(&x).as_slice().iter().zip(u.as_slice()).map(|(p, q)| p * q).sum();
            let rhs: f64 = x.as_slice().iter().zip(delta_transpose(&u).as_slice()).map(|(p, q)| p * q).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
