//! Probe/gallery ranking, CMC curves, and the multi-trial harness.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::aggregation::similarity_value;
use crate::config::Config;
use crate::data::{split_identities, Camera, Dataset};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::tensor::Tensor;
use crate::training::{self, window, Augmentation, StopReason, TrainOptions};

/// Fraction of probes whose true match ranks within the first `R` gallery
/// entries, for `R = 1..=G`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    pub match_rate: Vec<f64>,
    /// Number of curves averaged into this one.
    pub trials: usize,
}

impl CmcCurve {
    pub fn gallery_size(&self) -> usize {
        self.match_rate.len()
    }

    pub fn is_monotone(&self) -> bool {
        self.match_rate.windows(2).all(|w| w[0] <= w[1])
    }

    /// Match rate at rank `r` as a percentage.
    pub fn rank_at(&self, r: usize) -> Result<f64> {
        if r == 0 || r > self.gallery_size() {
            return Err(Error::Argument(format!(
                "rank {r} outside 1..={}",
                self.gallery_size()
            )));
        }
        Ok(100.0 * self.match_rate[r - 1])
    }

    /// Element-wise arithmetic mean of equally sized curves.
    pub fn mean(curves: &[CmcCurve]) -> Result<CmcCurve> {
        let first = curves
            .first()
            .ok_or_else(|| Error::EmptyInput("mean of zero CMC curves".into()))?;
        let g = first.gallery_size();
        if curves.iter().any(|c| c.gallery_size() != g) {
            return Err(Error::dim("CMC curves of different gallery sizes"));
        }
        let n = curves.len() as f64;
        let match_rate = (0..g)
            .map(|r| curves.iter().map(|c| c.match_rate[r]).sum::<f64>() / n)
            .collect();
        Ok(CmcCurve {
            match_rate,
            trials: curves.iter().map(|c| c.trials).sum(),
        })
    }
}

/// `rank_at` on a curve.
pub fn rank_at(curve: &CmcCurve, r: usize) -> Result<f64> {
    curve.rank_at(r)
}

/// The ordered gallery of one probe.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub probe: String,
    /// Gallery ids with their scores, best first.
    pub ranking: Vec<(String, f64)>,
    /// 1-based position of the probe's own identity.
    pub true_rank: usize,
}

/// Gallery indices sorted by descending score; equal scores keep gallery
/// order.
pub fn order_gallery(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    idx
}

/// 1-based rank of `true_index` under [`order_gallery`].
pub fn true_match_rank(scores: &[f64], true_index: usize) -> usize {
    let s = scores[true_index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x.total_cmp(&s).is_gt() || (x == s && j < true_index))
        .count()
}

pub fn cmc_from_ranks(ranks: &[usize], gallery_size: usize) -> Result<CmcCurve> {
    if ranks.is_empty() || gallery_size == 0 {
        return Err(Error::EmptyInput("CMC needs at least one probe and one gallery entry".into()));
    }
    if let Some(r) = ranks.iter().find(|&&r| r == 0 || r > gallery_size) {
        return Err(Error::Argument(format!("rank {r} outside 1..={gallery_size}")));
    }
    let n = ranks.len() as f64;
    let match_rate = (1..=gallery_size)
        .map(|r| ranks.iter().filter(|&&k| k <= r).count() as f64 / n)
        .collect();
    Ok(CmcCurve { match_rate, trials: 1 })
}

/// CMC of a probe×gallery score matrix where probe `i` truly matches
/// gallery entry `truth[i]`.
pub fn cmc_from_scores(scores: &[Vec<f64>], truth: &[usize]) -> Result<CmcCurve> {
    if scores.len() != truth.len() {
        return Err(Error::dim(format!("{} score rows for {} probes", scores.len(), truth.len())));
    }
    let g = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|row| row.len() != g) {
        return Err(Error::dim("ragged score matrix"));
    }
    if let Some(&t) = truth.iter().find(|&&t| t >= g) {
        return Err(Error::Argument(format!("true match index {t} outside gallery of {g}")));
    }
    let ranks: Vec<usize> = scores
        .iter()
        .zip(truth)
        .map(|(row, &t)| true_match_rank(row, t))
        .collect();
    cmc_from_ranks(&ranks, g)
}

/// Augmentation conditions averaged at test time.
pub fn test_conditions(cfg: &Config) -> Vec<Augmentation> {
    if cfg.test_mirror {
        vec![Augmentation::IDENTITY, Augmentation::MIRROR]
    } else {
        vec![Augmentation::IDENTITY]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub curve: CmcCurve,
    pub rankings: Vec<RankingResult>,
    /// `scores[probe][gallery]`, both in sorted identity order.
    pub scores: Vec<Vec<f64>>,
}

/// Ranks the camera-b sequences of `test_ids` against each camera-a probe.
///
/// Each sequence contributes its first `eval_frames` frames, or all of them
/// when that is 0. Scores are averaged over the test-time augmentation
/// conditions.
pub fn evaluate(arch: &Architecture, params: &ModelParams, ds: &Dataset, test_ids: &[String]) -> Result<Evaluation> {
    let mut ids = test_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::EmptyInput("no test identities".into()));
    }
    let missing: Vec<String> = ids
        .iter()
        .flat_map(|id| {
            Camera::BOTH
                .into_iter()
                .filter(move |&c| ds.sequence(id, c).is_none())
                .map(move |c| format!("{id}/{c}"))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Protocol(format!(
            "test identities missing from a camera: {}",
            missing.join(", ")
        )));
    }
    let conditions = test_conditions(&arch.config);
    let limit = arch.config.eval_frames;
    let mut cache: HashMap<(usize, Camera, usize), Tensor> = HashMap::new();
    let mut feature = |i: usize, cam: Camera, c: usize| -> Result<Tensor> {
        if let Some(f) = cache.get(&(i, cam, c)) {
            return Ok(f.clone());
        }
        let seq = ds.sequence(&ids[i], cam).expect("checked above");
        let t = if limit == 0 { seq.frames.len() } else { limit };
        let frames = conditions[c].apply(&window(&seq.frames, 0, t));
        let f = arch.feature_value(params, &frames)?;
        cache.insert((i, cam, c), f.clone());
        Ok(f)
    };
    let n = ids.len();
    let mut scores = vec![vec![0.0; n]; n];
    for (p, row) in scores.iter_mut().enumerate() {
        for (g, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..conditions.len() {
                let fa = feature(p, Camera::A, c)?;
                let fb = feature(g, Camera::B, c)?;
                acc += similarity_value(&fa, &fb, &params.similarity)?;
            }
            *cell = acc / conditions.len() as f64;
        }
    }
    let truth: Vec<usize> = (0..n).collect();
    let curve = cmc_from_scores(&scores, &truth)?;
    let rankings = scores
        .iter()
        .enumerate()
        .map(|(p, row)| RankingResult {
            probe: ids[p].clone(),
            ranking: order_gallery(row).into_iter().map(|g| (ids[g].clone(), row[g])).collect(),
            true_rank: true_match_rank(row, p),
        })
        .collect();
    Ok(Evaluation {
        curve,
        rankings,
        scores,
    })
}

/// Seed of trial `k` under base seed `seed`.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub curve: CmcCurve,
    pub loss_history: Vec<f64>,
    pub stop: StopReason,
}

#[derive(Clone, Debug)]
pub struct TrialsReport {
    pub trials: Vec<TrialRecord>,
    pub mean: CmcCurve,
}

pub const PER_TRIAL_CSV: &str = "cmc_trials.csv";
pub const MEAN_CSV: &str = "cmc_mean.csv";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn cmc_csv(curve: &CmcCurve) -> String {
    let mut s = String::from("rank,match_rate\n");
    for (r, m) in curve.match_rate.iter().enumerate() {
        s.push_str(&format!("{},{m}\n", r + 1));
    }
    s
}

pub fn trials_csv(curves: &[&CmcCurve]) -> String {
    let mut s = String::from("trial,rank,match_rate\n");
    for (k, c) in curves.iter().enumerate() {
        for (r, m) in c.match_rate.iter().enumerate() {
            s.push_str(&format!("{},{},{m}\n", k + 1, r + 1));
        }
    }
    s
}

pub fn loss_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (e, l) in history.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", e + 1));
    }
    s
}

pub fn write_cmc_csv(path: impl AsRef<Path>, curve: &CmcCurve) -> Result<()> {
    write_text(path.as_ref(), &cmc_csv(curve))
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    write_text(path.as_ref(), &loss_csv(history))
}

/// Reads a `trial,rank,match_rate` table back into per-trial curves.
pub fn read_trials_csv(path: impl AsRef<Path>) -> Result<Vec<CmcCurve>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut curves: Vec<CmcCurve> = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let bad = || Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad row {line:?}"),
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let k: usize = cols[0].parse().map_err(|_| bad())?;
        let m: f64 = cols[2].parse().map_err(|_| bad())?;
        if k == curves.len() + 1 {
            curves.push(CmcCurve { match_rate: vec![], trials: 1 });
        }
        curves.get_mut(k - 1).ok_or_else(bad)?.match_rate.push(m);
    }
    Ok(curves)
}

fn persist(out_dir: Option<&Path>, trials: &[TrialRecord]) -> Result<Option<CmcCurve>> {
    let curves: Vec<&CmcCurve> = trials.iter().map(|t| &t.curve).collect();
    let mean = if curves.is_empty() {
        None
    } else {
        Some(CmcCurve::mean(&curves.iter().map(|c| (*c).clone()).collect::<Vec<_>>())?)
    };
    if let Some(dir) = out_dir {
        write_text(&dir.join(PER_TRIAL_CSV), &trials_csv(&curves))?;
        if let Some(m) = &mean {
            write_cmc_csv(dir.join(MEAN_CSV), m)?;
        }
    }
    Ok(mean)
}

/// Runs `n_trials` independent split/train/evaluate rounds and averages their
/// CMC curves. Trial `k` uses seed `config.seed + k` for both the identity
/// split and training.
///
/// With `out_dir`, per-trial and mean curves and each trial's loss history
/// are written after every trial, so an aborted run leaves the completed
/// trials on disk.
pub fn run_trials(
    ds: &Dataset,
    config: &Config,
    n_trials: usize,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&TrialRecord),
) -> Result<TrialsReport> {
    if n_trials == 0 {
        return Err(Error::Argument("n_trials must be at least 1".into()));
    }
    ds.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let persons = ds.persons();
    let mut trials = Vec::with_capacity(n_trials);
    for k in 0..n_trials {
        let seed = trial_seed(config.seed, k);
        let result = (|| {
            let (train_ids, test_ids) = split_identities(&persons, 0.5, seed)?;
            let mut cfg = config.clone();
            cfg.seed = seed;
            let arch = Architecture::new(&cfg)?;
            let out = training::train(&arch, ds, &train_ids, TrainOptions::default())?;
            if let StopReason::NonFinite { epoch, message } = &out.stop {
                return Err(Error::Numeric(format!("trial {} halted at epoch {epoch}: {message}", k + 1)));
            }
            let ev = evaluate(&arch, &out.params, ds, &test_ids)?;
            Ok(TrialRecord {
                seed,
                train_ids,
                test_ids,
                curve: ev.curve,
                loss_history: out.loss_history,
                stop: out.stop,
            })
        })();
        match result {
            Ok(rec) => {
                if let Some(dir) = out_dir {
                    write_loss_csv(dir.join(format!("loss_trial_{}.csv", k + 1)), &rec.loss_history)?;
                }
                progress(&rec);
                trials.push(rec);
                persist(out_dir, &trials)?;
            }
            Err(e) => {
                persist(out_dir, &trials)?;
                return Err(e);
            }
        }
    }
    let mean = persist(out_dir, &trials)?.expect("at least one trial");
    Ok(TrialsReport { trials, mean })
}
