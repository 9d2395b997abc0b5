//! Verification features: 19 MFCCs + log energy with deltas and double
//! deltas (60 dims), sliding cepstral mean normalisation, and an energy VAD.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::container::{Container, Dtype};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::signal::{delta, Waveform};

pub const FRAME_LEN: usize = 200;
pub const FRAME_SHIFT: usize = 80;
pub const N_FFT: usize = 256;
pub const N_MEL: usize = 23;
pub const N_CEPS: usize = 19;
pub const STATIC_DIM: usize = N_CEPS + 1;
pub const FEAT_DIM: usize = 3 * STATIC_DIM;
/// Column holding log frame energy.
pub const ENERGY_COL: usize = N_CEPS;
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 3800.0;
pub const PREEMPHASIS: f64 = 0.97;
pub const LOG_FLOOR: f64 = 1e-10;
/// CMN window in frames (3 s at 10 ms).
pub const CMN_WINDOW: usize = 300;
/// Frames more than this many natural-log units below the loudest are silence.
pub const VAD_THRESHOLD: f64 = 3.0;

/// Post-MFCC processing knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub cmn_window: usize,
    pub vad_threshold: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            cmn_window: CMN_WINDOW,
            vad_threshold: VAD_THRESHOLD,
        }
    }
}

/// T x 60 acoustic feature frames.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatures(pub Mat);

impl AcousticFeatures {
    pub fn frames(&self) -> usize {
        self.0.rows()
    }
}

pub type VadMask = Vec<bool>;

fn hz_to_mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

/// `N_MEL x (N_FFT/2+1)` triangular filters, equally spaced on the mel scale.
pub fn mel_filterbank(sample_rate: f64) -> Mat {
    let n_bins = N_FFT / 2 + 1;
    let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
    let edges: Vec<f64> = (0..N_MEL + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (N_MEL + 1) as f64)
        .collect();
    Mat::from_fn(N_MEL, n_bins, |m, k| {
        let mel = hz_to_mel(k as f64 * sample_rate / N_FFT as f64);
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        if mel > l && mel <= c {
            (mel - l) / (c - l)
        } else if mel > c && mel < r {
            (r - mel) / (r - c)
        } else {
            0.0
        }
    })
}

/// MFCC extractor with cached FFT plan, filterbank and DCT.
pub struct Mfcc {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Mat,
    dct: Mat,
}

impl Default for Mfcc {
    fn default() -> Self {
        Self::new()
    }
}

impl Mfcc {
    pub fn new() -> Self {
        let window = (0..FRAME_LEN)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (FRAME_LEN - 1) as f64).cos())
            .collect();
        // Orthonormal DCT-II rows 1..=19 (c0 is replaced by log energy).
        let dct = Mat::from_fn(N_CEPS, N_MEL, |k, n| {
            (2.0 / N_MEL as f64).sqrt()
                * (PI * (k + 1) as f64 * (n as f64 + 0.5) / N_MEL as f64).cos()
        });
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window,
            filters: mel_filterbank(8000.0),
            dct,
        }
    }

    /// Static 20-d features: c1..c19 followed by log frame energy.
    pub fn static_features(&self, w: &Waveform) -> Result<Mat> {
        let x = &w.samples;
        if x.len() < FRAME_LEN {
            return Err(Error::TooShort {
                needed: FRAME_LEN,
                got: x.len(),
            });
        }
        let frames = 1 + (x.len() - FRAME_LEN) / FRAME_SHIFT;
        let mut out = Mat::zeros(frames, STATIC_DIM);
        let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; N_FFT / 2 + 1];
        let mut logmel = vec![0.0; N_MEL];
        for t in 0..frames {
            let start = t * FRAME_SHIFT;
            let seg = &x[start..start + FRAME_LEN];
            let energy: f64 = seg.iter().map(|v| v * v).sum();
            for (n, b) in buf.iter_mut().enumerate() {
                *b = if n < FRAME_LEN {
                    let prev = if start + n > 0 {
                        x[start + n - 1]
                    } else {
                        x[0]
                    };
                    let pre = if start + n > 0 {
                        seg[n] - PREEMPHASIS * prev
                    } else {
                        seg[n]
                    };
                    Complex64::new(pre * self.window[n], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (m, l) in logmel.iter_mut().enumerate() {
                let e: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(a, b)| a * b)
                    .sum();
                *l = (e + LOG_FLOOR).ln();
            }
            let row = out.row_mut(t);
            for k in 0..N_CEPS {
                row[k] = self
                    .dct
                    .row(k)
                    .iter()
                    .zip(&logmel)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            row[ENERGY_COL] = (energy + LOG_FLOOR).ln();
        }
        Ok(out)
    }

    /// 60-d features: statics, deltas and double deltas.
    pub fn compute(&self, w: &Waveform) -> Result<AcousticFeatures> {
        let st = self.static_features(w)?;
        let d = delta(&st);
        let dd = delta(&d);
        Ok(AcousticFeatures(st.hcat(&d).hcat(&dd)))
    }
}

pub fn mfcc(w: &Waveform) -> Result<AcousticFeatures> {
    Mfcc::new().compute(w)
}

/// Sliding-window mean normalisation over `CMN_WINDOW` frames centred on each
/// frame. Near the edges the window is shifted to stay inside the utterance,
/// so utterances no longer than the window get global mean subtraction.
pub fn cmn(f: &AcousticFeatures) -> AcousticFeatures {
    cmn_with_window(f, CMN_WINDOW)
}

pub fn cmn_with_window(f: &AcousticFeatures, window: usize) -> AcousticFeatures {
    let (t_len, d) = f.0.shape();
    let mut prefix = Mat::zeros(t_len + 1, d);
    for t in 0..t_len {
        for j in 0..d {
            prefix[(t + 1, j)] = prefix[(t, j)] + f.0[(t, j)];
        }
    }
    let mut out = f.0.clone();
    for t in 0..t_len {
        let (start, end) = cmn_span(t, t_len, window);
        let n = (end - start) as f64;
        for j in 0..d {
            out[(t, j)] -= (prefix[(end, j)] - prefix[(start, j)]) / n;
        }
    }
    AcousticFeatures(out)
}

pub(crate) fn cmn_span(t: usize, t_len: usize, window: usize) -> (usize, usize) {
    let mut start = t as isize - (window / 2) as isize;
    let mut end = start + window as isize;
    if start < 0 {
        end -= start;
        start = 0;
    }
    if end > t_len as isize {
        start -= end - t_len as isize;
        end = t_len as isize;
    }
    (start.max(0) as usize, end as usize)
}

/// Keep frames whose log energy is within `VAD_THRESHOLD` of the loudest.
/// Expects features before CMN.
pub fn energy_vad(f: &AcousticFeatures) -> VadMask {
    energy_vad_with_threshold(f, VAD_THRESHOLD)
}

pub fn energy_vad_with_threshold(f: &AcousticFeatures, threshold: f64) -> VadMask {
    let e: Vec<f64> = (0..f.frames()).map(|t| f.0[(t, ENERGY_COL)]).collect();
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mask: VadMask = e.iter().map(|&v| v > max - threshold).collect();
    if !mask.iter().any(|&k| k) {
        if let Some(first) = mask.first_mut() {
            *first = true;
        }
    }
    mask
}

/// MFCC -> VAD (on raw log energy) -> CMN over all frames -> drop silence.
pub fn verification_features(mfcc: &Mfcc, cfg: &FrontendConfig, w: &Waveform) -> Result<Mat> {
    let raw = mfcc.compute(w)?;
    let keep = energy_vad_with_threshold(&raw, cfg.vad_threshold);
    Ok(cmn_with_window(&raw, cfg.cmn_window.max(1))
        .0
        .select_rows(&keep))
}

pub const FEATURE_KIND: &str = "features";

/// Writes per-utterance `T x 60` features as f32 into one indexed container
/// (see [`crate::container`]).
pub fn write_feature_archive(path: impl AsRef<Path>, items: &[(String, Mat)]) -> Result<()> {
    let mut c = Container::new(FEATURE_KIND, serde_json::json!({ "dim": FEAT_DIM }));
    for (id, m) in items {
        c.push(id.clone(), m.clone());
    }
    c.save(path, Dtype::F32)
}

pub fn read_feature_archive(path: impl AsRef<Path>) -> Result<Vec<(String, Mat)>> {
    Ok(Container::load(path, FEATURE_KIND)?.entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, amp: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = mfcc(&Waveform::new(noise(8000, 0.1, 1))).unwrap();
        assert_eq!(f.frames(), 1 + (8000 - 200) / 80);
        assert_eq!(f.frames(), 98);
        assert_eq!(f.0.cols(), FEAT_DIM);
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(matches!(
            mfcc(&Waveform::new(vec![0.0; 199])),
            Err(Error::TooShort {
                needed: 200,
                got: 199
            })
        ));
    }

    #[test]
    fn silence_is_stationary_and_finite() {
        let f = mfcc(&Waveform::new(vec![0.0; 4000])).unwrap();
        assert!(f.0.is_finite());
        for t in 1..f.frames() {
            for k in 0..N_CEPS {
                assert_eq!(f.0[(t, k)], f.0[(0, k)]);
            }
        }
        for t in 0..f.frames() {
            for j in STATIC_DIM..FEAT_DIM {
                assert!(f.0[(t, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn features_are_finite_for_extreme_inputs() {
        for sig in [
            vec![1.0; 1000],
            vec![-1.0; 1000],
            noise(1000, 1.0, 2),
            vec![1e-300; 1000],
        ] {
            assert!(mfcc(&Waveform::new(sig)).unwrap().0.is_finite());
        }
    }

    #[test]
    fn mel_filters_are_overlapping_triangles() {
        let fb = mel_filterbank(8000.0);
        for m in 0..N_MEL {
            let row = fb.row(m);
            assert!(row.iter().sum::<f64>() > 0.0, "filter {m} empty");
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if m + 1 < N_MEL {
                let next = fb.row(m + 1);
                assert!(row.iter().zip(next).any(|(a, b)| *a > 0.0 && *b > 0.0));
            }
        }
    }

    fn random_features(t: usize, seed: u64) -> AcousticFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AcousticFeatures(Mat::from_fn(t, FEAT_DIM, |_, _| rng.gen_range(-3.0..3.0)))
    }

    #[test]
    fn short_utterance_cmn_is_global_mean_removal() {
        let f = random_features(250, 3);
        let out = cmn(&f);
        for m in out.0.column_mean() {
            assert!(m.abs() < 1e-10);
        }
        let twice = cmn(&out);
        assert!(twice.0.max_abs_diff(&out.0) < 1e-10);
    }

    #[test]
    fn cmn_is_shift_invariant() {
        let f = random_features(700, 4);
        let shifted = AcousticFeatures(Mat::from_fn(700, FEAT_DIM, |t, j| {
            f.0[(t, j)] + j as f64 * 0.7 - 2.0
        }));
        assert!(cmn(&f).0.max_abs_diff(&cmn(&shifted).0) < 1e-9);
    }

    #[test]
    fn cmn_matches_naive_sliding_mean() {
        // 6 s with a step change at 3 s.
        let f = AcousticFeatures(Mat::from_fn(600, 2, |t, j| {
            (if t < 300 { 1.0 } else { 5.0 }) + j as f64 + (t as f64 * 0.1).sin()
        }));
        let got = cmn(&f);
        for t in 0..600 {
            // Naive O(T * W): gather the centred window, shifting at the edges.
            let mut lo = t as isize - 150;
            let mut hi = lo + 300;
            if lo < 0 {
                hi -= lo;
                lo = 0;
            }
            if hi > 600 {
                lo -= hi - 600;
                hi = 600;
            }
            for j in 0..2 {
                let mean: f64 =
                    (lo..hi).map(|k| f.0[(k as usize, j)]).sum::<f64>() / (hi - lo) as f64;
                assert!((got.0[(t, j)] - (f.0[(t, j)] - mean)).abs() < 1e-9);
            }
        }
        let (a, b) = (cmn_span(100, 600, 300), cmn_span(500, 600, 300));
        assert_ne!(a, b);
    }

    #[test]
    fn constant_energy_keeps_all_frames() {
        let tone: Vec<f64> = (0..8000).map(|n| 0.3 * (n as f64 * 0.3).sin()).collect();
        let mask = energy_vad(&mfcc(&Waveform::new(tone)).unwrap());
        assert!(mask.iter().all(|&k| k));
        let dither = energy_vad(&mfcc(&Waveform::new(vec![1e-6; 8000])).unwrap());
        assert!(dither.iter().all(|&k| k));
    }

    #[test]
    fn vad_tracks_duty_cycle() {
        // 250 ms tone bursts alternating with 250 ms of faint dither.
        let d = noise(16000, 1e-4, 5);
        let sig: Vec<f64> = (0..16000)
            .map(|n| {
                if (n / 2000) % 2 == 0 {
                    0.5 * (n as f64 * 0.2).sin()
                } else {
                    d[n]
                }
            })
            .collect();
        let mask = energy_vad(&mfcc(&Waveform::new(sig)).unwrap());
        let frac = mask.iter().filter(|&&k| k).count() as f64 / mask.len() as f64;
        assert!((frac - 0.5).abs() < 0.1, "kept {frac}");
    }

    #[test]
    fn feature_archive_roundtrip_is_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("feats.bin");
        let f = mfcc(&Waveform::new(noise(2000, 0.2, 6))).unwrap();
        write_feature_archive(&p, &[("u1".into(), f.0.clone())]).unwrap();
        let back = read_feature_archive(&p).unwrap();
        assert_eq!(back[0].0, "u1");
        let want = f.0.map(|v| f64::from(v as f32));
        assert_eq!(back[0].1, want);
    }

    #[test]
    fn verification_features_drop_silence() {
        let mut sig = noise(16000, 1e-5, 7);
        for (n, v) in sig.iter_mut().enumerate().take(8000) {
            *v += 0.4 * (n as f64 * 0.3).sin();
        }
        let w = Waveform::new(sig);
        let all = mfcc(&w).unwrap().frames();
        let kept = verification_features(&Mfcc::new(), &FrontendConfig::default(), &w).unwrap();
        assert_eq!(kept.cols(), FEAT_DIM);
        assert!(kept.rows() < all * 6 / 10 && kept.rows() > all * 4 / 10);
    }

    #[test]
    fn vad_is_gain_invariant() {
        let base: Vec<f64> = (0..12000)
            .map(|n| (n as f64 * 0.05).sin() * (n as f64 / 3000.0).sin().abs() * 0.4 + 1e-3)
            .collect();
        let m1 = energy_vad(&mfcc(&Waveform::new(base.clone())).unwrap());
        for g in [0.01, 0.5, 2.0] {
            let scaled: Vec<f64> = base.iter().map(|v| v * g).collect();
            assert_eq!(energy_vad(&mfcc(&Waveform::new(scaled)).unwrap()), m1);
        }
    }
}
