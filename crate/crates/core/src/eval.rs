//! Trials, detection metrics and score/trial/report file formats.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixsim::{CorpusManifest, MixtureSpec};

pub const DEFAULT_NONTARGET_RATIO: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Key {
    Target,
    Nontarget,
}

impl Key {
    pub fn as_str(self) -> &'static str {
        match self {
            Key::Target => "target",
            Key::Nontarget => "nontarget",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Key::Target => Key::Nontarget,
            Key::Nontarget => Key::Target,
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Key {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "target" => Ok(Key::Target),
            "nontarget" => Ok(Key::Nontarget),
            other => Err(format!("bad trial key {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub key: Key,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub records: Vec<ScoredTrial>,
}

impl ScoreSet {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Key)>) -> Self {
        Self {
            records: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (score, key))| ScoredTrial {
                    trial: Trial {
                        enroll: format!("e{i}"),
                        test: format!("t{i}"),
                        key,
                    },
                    score,
                })
                .collect(),
        }
    }

    pub fn count(&self, key: Key) -> usize {
        self.records.iter().filter(|r| r.trial.key == key).count()
    }

    pub fn scores(&self, key: Key) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.trial.key == key)
            .map(|r| r.score)
            .collect()
    }
}

/// One target trial per mixture, enrolled on a held-out utterance of the
/// target speaker, plus `nontargets` trials enrolled on other speakers of the
/// same speaker pool. The mixture's own utterances are never used for
/// enrollment.
pub fn generate_trials(
    mixtures: &[MixtureSpec],
    corpus: &CorpusManifest,
    nontargets: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let spk_of: BTreeMap<&str, &str> = corpus
        .records
        .iter()
        .map(|r| (r.utt.as_str(), r.spk.as_str()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(mixtures.len() * (nontargets + 1));
    let mut offenders = Vec::new();
    for m in mixtures {
        let Some(&spk) = spk_of.get(m.target.as_str()) else {
            offenders.push(format!(
                "{}: target utterance {} not in corpus",
                m.mix_id, m.target
            ));
            continue;
        };
        let own: Vec<&str> = corpus
            .utterances_of(spk)
            .into_iter()
            .map(|r| r.utt.as_str())
            .filter(|u| *u != m.target && *u != m.aux)
            .collect();
        let others: Vec<&str> = corpus
            .speakers_for(m.split)
            .into_iter()
            .filter(|s| *s != spk)
            .flat_map(|s| corpus.utterances_of(s))
            .map(|r| r.utt.as_str())
            .filter(|u| *u != m.interferer)
            .collect();
        if own.is_empty() {
            offenders.push(format!(
                "{}: speaker {spk} has no spare enrollment utterance",
                m.mix_id
            ));
            continue;
        }
        if others.len() < nontargets {
            offenders.push(format!(
                "{}: {} non-target enrollment utterances for {nontargets} trials",
                m.mix_id,
                others.len()
            ));
            continue;
        }
        let enroll = own.choose(&mut rng).expect("non-empty");
        trials.push(Trial {
            enroll: enroll.to_string(),
            test: m.mix_id.clone(),
            key: Key::Target,
        });
        let mut picks = index::sample(&mut rng, others.len(), nontargets).into_vec();
        picks.sort_unstable();
        for i in picks {
            trials.push(Trial {
                enroll: others[i].to_string(),
                test: m.mix_id.clone(),
                key: Key::Nontarget,
            });
        }
    }
    if !offenders.is_empty() {
        return Err(Error::TrialGeneration { offenders });
    }
    Ok(trials)
}

/// The same pairing with each mixture replaced by its clean target utterance.
pub fn clean_trials(trials: &[Trial], mixtures: &[MixtureSpec]) -> Result<Vec<Trial>> {
    let target: BTreeMap<&str, &str> = mixtures
        .iter()
        .map(|m| (m.mix_id.as_str(), m.target.as_str()))
        .collect();
    trials
        .iter()
        .map(|t| {
            let clean = target
                .get(t.test.as_str())
                .ok_or_else(|| Error::TrialGeneration {
                    offenders: vec![format!("{}: unknown mixture", t.test)],
                })?;
            Ok(Trial {
                enroll: t.enroll.clone(),
                test: clean.to_string(),
                key: t.key,
            })
        })
        .collect()
}

/// Operating points `(p_fa, p_miss)` for the rule "accept iff score >= threshold",
/// at each distinct score in increasing order and finally at +inf.
pub fn det_points(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    let (n_tar, n_non) = (s.count(Key::Target), s.count(Key::Nontarget));
    if n_tar == 0 || n_non == 0 {
        return Err(Error::InsufficientTrials(format!(
            "{n_tar} target and {n_non} non-target trials"
        )));
    }
    if let Some(r) = s.records.iter().find(|r| r.score.is_nan()) {
        return Err(Error::InsufficientTrials(format!(
            "NaN score for trial {} {}",
            r.trial.enroll, r.trial.test
        )));
    }
    let mut sorted: Vec<(f64, Key)> = s.records.iter().map(|r| (r.score, r.trial.key)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (n_tar as f64, n_non as f64);
    let mut points = Vec::new();
    // Counts of scores strictly below the current threshold.
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        points.push(((n_non - non_below) as f64 / nn, tar_below as f64 / nt));
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            match sorted[i].1 {
                Key::Target => tar_below += 1,
                Key::Nontarget => non_below += 1,
            }
            i += 1;
        }
    }
    points.push((0.0, 1.0));
    Ok(points)
}

/// Equal error rate, linearly interpolated between the two operating points
/// that bracket the crossing of the false-alarm and miss rates.
pub fn compute_eer(s: &ScoreSet) -> Result<f64> {
    Ok(eer_from_points(&det_points(s)?))
}

pub(crate) fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    let k = points
        .iter()
        .position(|&(fa, miss)| miss >= fa)
        .expect("last point has p_miss = 1 >= p_fa = 0");
    if k == 0 {
        return points[0].0;
    }
    let (fa0, miss0) = points[k - 1];
    let (fa1, miss1) = points[k];
    let (g0, g1) = (fa0 - miss0, fa1 - miss1);
    let lambda = g0 / (g0 - g1);
    fa0 + lambda * (fa1 - fa0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

pub const DCF08: DcfParams = DcfParams {
    p_target: 0.01,
    c_miss: 10.0,
    c_fa: 1.0,
};

pub const DCF10: DcfParams = DcfParams {
    p_target: 0.001,
    c_miss: 1.0,
    c_fa: 1.0,
};

impl DcfParams {
    pub fn cost(&self, p_fa: f64, p_miss: f64) -> f64 {
        let raw = self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa;
        raw / (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

/// Minimum normalised detection cost over all operating points.
pub fn compute_min_dcf(s: &ScoreSet, p: DcfParams) -> Result<f64> {
    Ok(det_points(s)?
        .into_iter()
        .map(|(fa, miss)| p.cost(fa, miss))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub eer: f64,
    pub dcf08: f64,
    pub dcf10: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn report(s: &ScoreSet, dcf08: DcfParams, dcf10: DcfParams) -> Result<Report> {
    Ok(Report {
        eer: compute_eer(s)?,
        dcf08: compute_min_dcf(s, dcf08)?,
        dcf10: compute_min_dcf(s, dcf10)?,
        n_target: s.count(Key::Target),
        n_nontarget: s.count(Key::Nontarget),
    })
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Trial file: `<enroll> <test> <target|nontarget>` per line.
pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for t in trials {
        writeln!(out, "{} {} {}", t.enroll, t.test, t.key).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}

fn parse_trial(path: &Path, line: usize, f: &[String]) -> Result<Trial> {
    let key = f[2].parse().map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    })?;
    Ok(Trial {
        enroll: f[0].clone(),
        test: f[1].clone(),
        key,
    })
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    read_lines(path)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 3 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("line {line}: expected 3 fields, found {}", f.len()),
                });
            }
            parse_trial(path, line, &f)
        })
        .collect()
}

/// Score file: `<enroll> <test> <target|nontarget> <score>` per line.
pub fn write_scores(path: impl AsRef<Path>, s: &ScoreSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for r in &s.records {
        let t = &r.trial;
        writeln!(out, "{} {} {} {}", t.enroll, t.test, t.key, r.score)
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let records = read_lines(path)?
        .into_iter()
        .map(|(line, f)| {
            let bad = |msg: String| Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {line}: {msg}"),
            };
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            }
            let score = f[3]
                .parse::<f64>()
                .map_err(|e| bad(format!("bad score: {e}")))?;
            Ok(ScoredTrial {
                trial: parse_trial(path, line, &f)?,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet { records })
}

pub fn write_det_csv(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    writeln!(out, "p_fa,p_miss").map_err(|e| Error::io(path, e))?;
    for (fa, miss) in points {
        writeln!(out, "{fa},{miss}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
