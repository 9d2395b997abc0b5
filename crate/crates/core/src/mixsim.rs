//! Two-speaker mixture simulation and a synthetic speaker corpus.
//!
//! Mixtures are fully overlapped: both utterances are truncated to the
//! shorter length, the interferer is scaled to the requested SNR measured on
//! whole-utterance RMS, and the sum is peak-normalised jointly only when it
//! would clip.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{read_jsonl, relativize, write_jsonl};
use crate::signal::{load_wav, save_wav, Waveform, SAMPLE_RATE};

pub const SNR_MIN_DB: f64 = 0.0;
pub const SNR_MAX_DB: f64 = 5.0;
/// Peak level applied when a mixture would otherwise clip.
pub const CLIP_PEAK: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!("unknown split '{s}', expected train, dev or test"))
            })
    }
}

/// One corpus row: `{"utt", "spk", "path", "dur_s"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub utt: String,
    pub spk: String,
    pub path: String,
    pub dur_s: f64,
}

/// Corpus rows plus the per-speaker split assignment. Train and dev mixtures
/// share the `Train` speakers; `Test` speakers are held out.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<CorpusRecord>,
    pub speaker_split: BTreeMap<String, Split>,
    /// Directory that relative record paths are resolved against.
    pub root: PathBuf,
}

impl CorpusManifest {
    /// Load a corpus manifest and assign the last `n_test_speakers` speakers
    /// (in sorted id order) to the test split.
    pub fn load(path: impl AsRef<Path>, n_test_speakers: usize) -> Result<Self> {
        let path = path.as_ref();
        let records: Vec<CorpusRecord> = read_jsonl(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::with_test_speakers(records, n_test_speakers, root))
    }

    pub fn with_test_speakers(
        records: Vec<CorpusRecord>,
        n_test_speakers: usize,
        root: PathBuf,
    ) -> Self {
        let speakers: BTreeSet<&str> = records.iter().map(|r| r.spk.as_str()).collect();
        let n_train = speakers.len().saturating_sub(n_test_speakers);
        let speaker_split = speakers
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let split = if i < n_train {
                    Split::Train
                } else {
                    Split::Test
                };
                (s.to_string(), split)
            })
            .collect();
        Self {
            records,
            speaker_split,
            root,
        }
    }

    pub fn record(&self, utt: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.utt == utt)
    }

    pub fn path_of(&self, rec: &CorpusRecord) -> PathBuf {
        let p = Path::new(&rec.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Speakers whose utterances may appear in mixtures of `split`.
    pub fn speakers_for(&self, split: Split) -> Vec<&str> {
        let want = if split == Split::Test {
            Split::Test
        } else {
            Split::Train
        };
        self.speaker_split
            .iter()
            .filter(|(_, &s)| s == want)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn utterances_of(&self, spk: &str) -> Vec<&CorpusRecord> {
        self.records.iter().filter(|r| r.spk == spk).collect()
    }
}

/// A planned mixture. Serialises as one mixture-manifest row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub mix_id: String,
    pub target: String,
    pub interferer: String,
    pub aux: String,
    pub snr_db: f64,
    pub split: Split,
}

/// A rendered mixture-manifest row. `path` points at the mixture, `ref_path`
/// at the (gain-adjusted, truncated) target reference, and `gain` is the joint
/// anti-clipping gain that was applied (1 when none).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub mix_id: String,
    pub target: String,
    pub interferer: String,
    pub aux: String,
    pub snr_db: f64,
    pub split: Split,
    pub path: String,
    pub ref_path: String,
    pub gain: f64,
}

impl MixtureRecord {
    pub fn spec(&self) -> MixtureSpec {
        MixtureSpec {
            mix_id: self.mix_id.clone(),
            target: self.target.clone(),
            interferer: self.interferer.clone(),
            aux: self.aux.clone(),
            snr_db: self.snr_db,
            split: self.split,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Truncated target after the joint gain.
    pub target: Waveform,
    /// Truncated, SNR-scaled interferer after the joint gain.
    pub scaled_interferer: Waveform,
    /// SNR scale applied to the interferer.
    pub interferer_gain: f64,
    /// Joint anti-clipping gain (1 when no clipping would occur).
    pub joint_gain: f64,
}

/// Mix `target` with `interferer` at `snr_db` (target-to-interferer power).
pub fn simulate_mixture(target: &Waveform, interferer: &Waveform, snr_db: f64) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::DegenerateSignal(format!("non-finite SNR {snr_db}")));
    }
    let len = target.len().min(interferer.len());
    let t = target.truncated(len);
    let i = interferer.truncated(len);
    let (rt, ri) = (t.rms(), i.rms());
    if !(rt > 0.0) || !(ri > 0.0) {
        return Err(Error::DegenerateSignal(format!(
            "zero-energy input (target rms {rt}, interferer rms {ri})"
        )));
    }
    let g = (rt / ri) * 10f64.powf(-snr_db / 20.0);
    let scaled = i.scaled(g);
    let mix: Vec<f64> = t
        .samples
        .iter()
        .zip(&scaled.samples)
        .map(|(a, b)| a + b)
        .collect();
    let peak = mix.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let joint_gain = if peak > 1.0 { CLIP_PEAK / peak } else { 1.0 };
    let apply = |w: Waveform| {
        if joint_gain == 1.0 {
            w
        } else {
            w.scaled(joint_gain)
        }
    };
    Ok(Mixture {
        mixture: apply(Waveform::new(mix)),
        target: apply(t),
        scaled_interferer: apply(scaled),
        interferer_gain: g,
        joint_gain,
    })
}

/// Plan `counts` mixtures per split with SNRs uniform in 0-5 dB.
/// Deterministic in `seed`.
pub fn build_dataset(
    corpus: &CorpusManifest,
    counts: SplitCounts,
    seed: u64,
) -> Result<Vec<MixtureSpec>> {
    build_dataset_with_snr(corpus, counts, (SNR_MIN_DB, SNR_MAX_DB), seed)
}

pub fn build_dataset_with_snr(
    corpus: &CorpusManifest,
    counts: SplitCounts,
    snr_db: (f64, f64),
    seed: u64,
) -> Result<Vec<MixtureSpec>> {
    if !(snr_db.0 <= snr_db.1) || !snr_db.0.is_finite() || !snr_db.1.is_finite() {
        return Err(Error::Config(format!("bad SNR range {:?}", snr_db)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(counts.train + counts.dev + counts.test);
    for split in Split::ALL {
        let n = counts.get(split);
        if n == 0 {
            continue;
        }
        let speakers = corpus.speakers_for(split);
        if speakers.len() < 2 {
            return Err(Error::CorpusTooSmall(format!(
                "split {split} needs at least 2 speakers, has {}",
                speakers.len()
            )));
        }
        let utts: Vec<Vec<&CorpusRecord>> =
            speakers.iter().map(|s| corpus.utterances_of(s)).collect();
        if let Some((s, u)) = speakers.iter().zip(&utts).find(|(_, u)| u.len() < 2) {
            return Err(Error::CorpusTooSmall(format!(
                "speaker {s} has {} utterance(s), at least 2 required",
                u.len()
            )));
        }
        for k in 0..n {
            let ti = rng.gen_range(0..speakers.len());
            let mut ii = rng.gen_range(0..speakers.len() - 1);
            if ii >= ti {
                ii += 1;
            }
            let tu = &utts[ti];
            let target_idx = rng.gen_range(0..tu.len());
            let mut aux_idx = rng.gen_range(0..tu.len() - 1);
            if aux_idx >= target_idx {
                aux_idx += 1;
            }
            let interferer = utts[ii].choose(&mut rng).expect("non-empty");
            let snr_db = rng.gen_range(snr_db.0..=snr_db.1);
            specs.push(MixtureSpec {
                mix_id: format!("{split}_{k:05}"),
                target: tu[target_idx].utt.clone(),
                interferer: interferer.utt.clone(),
                aux: tu[aux_idx].utt.clone(),
                snr_db,
                split,
            });
        }
    }
    Ok(specs)
}

/// Render planned mixtures to `out_dir/<split>/{mix,s1}/<mix_id>.wav` and write
/// `out_dir/mixtures.jsonl`. Returns the manifest rows.
pub fn render_dataset(
    corpus: &CorpusManifest,
    specs: &[MixtureSpec],
    out_dir: &Path,
) -> Result<Vec<MixtureRecord>> {
    let by_utt: BTreeMap<&str, &CorpusRecord> =
        corpus.records.iter().map(|r| (r.utt.as_str(), r)).collect();
    let lookup = |utt: &str| {
        by_utt.get(utt).copied().ok_or_else(|| Error::Manifest {
            path: corpus.root.clone(),
            msg: format!("utterance {utt} not in corpus"),
        })
    };
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let target = load_wav(corpus.path_of(lookup(&spec.target)?))?;
        let interferer = load_wav(corpus.path_of(lookup(&spec.interferer)?))?;
        let m = simulate_mixture(&target, &interferer, spec.snr_db)?;
        let split_dir = out_dir.join(spec.split.as_str());
        let mix_path = split_dir.join("mix").join(format!("{}.wav", spec.mix_id));
        let ref_path = split_dir.join("s1").join(format!("{}.wav", spec.mix_id));
        for p in [&mix_path, &ref_path] {
            let dir = p.parent().expect("has parent");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_wav(&mix_path, &m.mixture)?;
        save_wav(&ref_path, &m.target)?;
        rows.push(MixtureRecord {
            mix_id: spec.mix_id.clone(),
            target: spec.target.clone(),
            interferer: spec.interferer.clone(),
            aux: spec.aux.clone(),
            snr_db: spec.snr_db,
            split: spec.split,
            path: relativize(out_dir, &mix_path),
            ref_path: relativize(out_dir, &ref_path),
            gain: m.joint_gain,
        });
    }
    write_jsonl(out_dir.join("mixtures.jsonl"), &rows)?;
    Ok(rows)
}

/// Per-speaker voice: three resonances and a mean pitch.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVoice {
    pub formants_hz: [f64; 3],
    pub bandwidths_hz: [f64; 3],
    pub pitch_hz: f64,
}

impl SyntheticVoice {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            formants_hz: [
                rng.gen_range(300.0..850.0),
                rng.gen_range(950.0..2300.0),
                rng.gen_range(2400.0..3500.0),
            ],
            bandwidths_hz: [
                rng.gen_range(60.0..110.0),
                rng.gen_range(90.0..160.0),
                rng.gen_range(130.0..220.0),
            ],
            pitch_hz: rng.gen_range(85.0..260.0),
        }
    }

    /// Render one utterance of `dur_s` seconds, peak-normalised to 0.5.
    pub fn render(&self, dur_s: f64, rng: &mut impl Rng) -> Waveform {
        let fs = f64::from(SAMPLE_RATE);
        let n = (dur_s * fs).round() as usize;

        // Syllable-like envelope: voiced bursts separated by short pauses,
        // each burst with its own level and slight formant shift.
        let mut env = vec![0.0; n];
        let mut shift = vec![1.0; n];
        let mut pos = rng.gen_range(0..(0.1 * fs) as usize);
        while pos < n {
            let len = rng.gen_range((0.15 * fs) as usize..(0.40 * fs) as usize);
            let amp = rng.gen_range(0.3..1.0);
            let fshift = rng.gen_range(0.93..1.07);
            let end = (pos + len).min(n);
            let ramp = (0.02 * fs) as usize;
            for k in pos..end {
                let a = (k - pos).min(end - 1 - k) as f64 / ramp as f64;
                let r = if a >= 1.0 {
                    1.0
                } else {
                    0.5 - 0.5 * (PI * a).cos()
                };
                env[k] = amp * r;
                shift[k] = fshift;
            }
            pos = end + rng.gen_range((0.05 * fs) as usize..(0.2 * fs) as usize);
        }

        // Glottal pulse train with slow pitch drift; pulses land on the
        // nearest sample of the accumulated phase.
        let drift_rate = rng.gen_range(0.5..2.0);
        let drift_phase = rng.gen_range(0.0..2.0 * PI);
        let mut excitation = vec![0.0; n];
        let mut phase = 0.0;
        for (k, e) in excitation.iter_mut().enumerate() {
            let t = k as f64 / fs;
            let f0 = self.pitch_hz * (1.0 + 0.06 * (2.0 * PI * drift_rate * t + drift_phase).sin());
            phase += f0 / fs;
            if phase >= 1.0 {
                phase -= 1.0;
                *e = 1.0;
            }
            *e += 0.03 * rng.gen_range(-1.0..1.0);
            *e *= env[k];
        }

        let mut y = excitation;
        for (f, bw) in self.formants_hz.iter().zip(&self.bandwidths_hz) {
            let r = (-PI * bw / fs).exp();
            let (mut y1, mut y2) = (0.0, 0.0);
            for k in 0..n {
                let theta = 2.0 * PI * f * shift[k] / fs;
                let a1 = 2.0 * r * theta.cos();
                let a2 = -r * r;
                let g = 1.0 - a1 - a2;
                let out = g * y[k] + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = out;
                y[k] = out;
            }
        }
        let w = Waveform::new(y);
        let peak = w.peak();
        if peak > 0.0 {
            w.scaled(0.5 / peak)
        } else {
            w
        }
    }
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    // SplitMix64-style mixing so nearby indices give unrelated streams.
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate `n_speakers * utts_per_speaker` utterances of 2-5 s under
/// `out_dir/wav/<spk>/` and write `out_dir/corpus.jsonl`.
pub fn synth_corpus(
    n_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<CorpusRecord>> {
    if n_speakers < 4 {
        return Err(Error::CorpusTooSmall(format!(
            "synthetic corpus needs at least 4 speakers, got {n_speakers}"
        )));
    }
    let mut records = Vec::with_capacity(n_speakers * utts_per_speaker);
    for s in 0..n_speakers {
        let spk = speaker_id(s);
        let voice = SyntheticVoice::sample(&mut ChaCha8Rng::seed_from_u64(sub_seed(
            seed,
            s as u64,
            u64::MAX,
        )));
        let dir = out_dir.join("wav").join(&spk);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for u in 0..utts_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, s as u64, u as u64));
            let dur = rng.gen_range(2.0..5.0);
            let w = voice.render(dur, &mut rng);
            let utt = format!("{spk}_u{u:03}");
            let path = dir.join(format!("{utt}.wav"));
            save_wav(&path, &w)?;
            records.push(CorpusRecord {
                utt,
                spk: spk.clone(),
                path: relativize(out_dir, &path),
                dur_s: w.duration_s(),
            });
        }
    }
    write_jsonl(out_dir.join("corpus.jsonl"), &records)?;
    Ok(records)
}
