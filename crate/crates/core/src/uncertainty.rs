//! Frame-level acquisition scores from Monte Carlo samples, video-level mean
//! pooling and top-N video selection. Natural logarithms throughout.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::predictor::{argmax, mean_probs, FrameProbs};
use crate::rng::{hash_str, stream, TAG_POWER_BALD};
use crate::{Error, Result};

/// Added inside logarithms that may see an exact zero.
pub const LOG_EPS: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AcquisitionFn {
    /// Entropy of the mean prediction.
    Entropy,
    /// Mutual information between prediction and dropout mask.
    Bald,
    /// Gumbel-perturbed `log BALD`, with coldness `beta`.
    PowerBald { beta: f64 },
    /// Mean pairwise Jensen-Shannon divergence between samples.
    Jsd,
    /// One minus the modal-class vote share.
    VariationRatio,
}

impl AcquisitionFn {
    pub const ALL_DEFAULT: [AcquisitionFn; 5] = [
        AcquisitionFn::Entropy,
        AcquisitionFn::Bald,
        AcquisitionFn::PowerBald { beta: 1.0 },
        AcquisitionFn::Jsd,
        AcquisitionFn::VariationRatio,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AcquisitionFn::Entropy => "entropy",
            AcquisitionFn::Bald => "bald",
            AcquisitionFn::PowerBald { .. } => "power_bald",
            AcquisitionFn::Jsd => "jsd",
            AcquisitionFn::VariationRatio => "variation_ratio",
        }
    }

    /// Builds a function from its name and an optional Power-BALD coldness.
    pub fn from_name(name: &str, beta: Option<f64>) -> Result<Self> {
        let f = match name.trim().to_ascii_lowercase().as_str() {
            "entropy" => AcquisitionFn::Entropy,
            "bald" => AcquisitionFn::Bald,
            "power_bald" | "powerbald" => AcquisitionFn::PowerBald {
                beta: beta.unwrap_or(1.0),
            },
            "jsd" => AcquisitionFn::Jsd,
            "variation_ratio" => AcquisitionFn::VariationRatio,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown acquisition function `{other}` \
                     (expected entropy | bald | power_bald | jsd | variation_ratio)"
                )))
            }
        };
        if let AcquisitionFn::PowerBald { beta } = f {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "power_bald beta must be positive, got {beta}"
                )));
            }
        }
        Ok(f)
    }

    /// Whether video scores are guaranteed non-negative.
    pub fn is_non_negative(&self) -> bool {
        !matches!(self, AcquisitionFn::PowerBald { .. })
    }
}

impl fmt::Display for AcquisitionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AcquisitionFn::PowerBald { beta } if *beta != 1.0 => write!(f, "power_bald:{beta}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Accepts `name` or `power_bald:<beta>`.
impl FromStr for AcquisitionFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, beta)) => {
                let beta: f64 = beta
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad beta in `{s}`")))?;
                AcquisitionFn::from_name(name, Some(beta))
            }
            None => AcquisitionFn::from_name(s, None),
        }
    }
}

impl TryFrom<String> for AcquisitionFn {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AcquisitionFn> for String {
    fn from(f: AcquisitionFn) -> String {
        f.to_string()
    }
}

/// Shannon entropy of a probability row, with `0 log 0 = 0`.
pub fn entropy(row: ArrayView1<'_, f64>) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Predictive entropy of a mean probability row.
pub fn predictive_entropy(row: ArrayView1<'_, f64>) -> Result<f64> {
    let total = row.sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL || row.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidInput(format!(
            "probability row is not normalised (sum {total})"
        )));
    }
    Ok(entropy(row))
}

fn js_divergence(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    let m = (&p + &q) * 0.5;
    entropy(m.view()) - 0.5 * (entropy(p) + entropy(q))
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(LOG_EPS, 1.0 - LOG_EPS);
    -(-u.ln()).ln()
}

/// Per-frame acquisition scores from `S` stochastic samples of one video.
///
/// Power-BALD noise is drawn from a stream keyed by `seed`, the video id and
/// the frame index, so the score of a frame does not depend on the order in
/// which frames or videos are processed.
pub fn frame_uncertainties(
    samples: &[FrameProbs],
    f: AcquisitionFn,
    seed: u64,
) -> Result<Vec<f64>> {
    let mean = mean_probs(samples)?;
    let s = samples.len() as f64;
    let t_len = mean.len();
    let bald_at = |t: usize| {
        let expected: f64 = samples.iter().map(|p| entropy(p.row(t))).sum::<f64>() / s;
        entropy(mean.row(t)) - expected
    };
    let out = match f {
        AcquisitionFn::Entropy => (0..t_len).map(|t| entropy(mean.row(t))).collect(),
        AcquisitionFn::Bald => (0..t_len).map(bald_at).collect(),
        AcquisitionFn::PowerBald { beta } => {
            let vid = hash_str(&mean.video_id);
            (0..t_len)
                .map(|t| {
                    let mut rng = stream(seed, &[TAG_POWER_BALD, vid, t as u64]);
                    (bald_at(t).max(0.0) + LOG_EPS).ln() + gumbel(&mut rng) / beta
                })
                .collect()
        }
        AcquisitionFn::Jsd => (0..t_len)
            .map(|t| {
                let n = samples.len();
                if n < 2 {
                    return 0.0;
                }
                let mut total = 0.0;
                for a in 0..n {
                    for b in a + 1..n {
                        total += js_divergence(samples[a].row(t), samples[b].row(t));
                    }
                }
                total / (n * (n - 1) / 2) as f64
            })
            .collect(),
        AcquisitionFn::VariationRatio => (0..t_len)
            .map(|t| {
                let mut votes = vec![0usize; mean.num_classes()];
                for p in samples {
                    votes[argmax(p.row(t))] += 1;
                }
                1.0 - *votes.iter().max().unwrap() as f64 / s
            })
            .collect(),
    };
    Ok(out)
}

/// Mean of the frame scores.
pub fn video_score(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::InvalidInput(
            "cannot pool an empty score vector".into(),
        ));
    }
    Ok(u.iter().sum::<f64>() / u.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub score: f64,
}

/// The `min(n, |pool|)` highest-scoring video ids, best first. Ties go to the
/// lexicographically smaller id.
pub fn select_videos(scores: &[VideoScore], n: usize) -> Result<Vec<String>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(
            "cannot select from an empty pool".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidInput("query size must be at least 1".into()));
    }
    let mut ranked: Vec<&VideoScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    Ok(ranked
        .into_iter()
        .take(n)
        .map(|v| v.video_id.clone())
        .collect())
}
