//! Stage-2 clip selection inside a queried video.
//!
//! Candidate boundaries are the frames where the predicted label changes.
//! Each candidate `b` is scored inside the window `[b - w, b + w] ∩ [1, T]`:
//!
//! ```text
//! u_local = mean of frame uncertainty over the window
//! gap     = top-1 minus top-2 mean probability at b
//! grad    = mean L2 distance between consecutive mean-probability rows in the window
//! s_bau   = alpha * u_local + beta * (1 - gap) + gamma * grad
//! ```
//!
//! The top-K candidates become clip queries of nominal length `ℓ` whose center
//! frame is the only labeled frame. Baseline selectors and a greedy k-center
//! coreset live here too.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::VideoRecord;
use crate::predictor::FrameProbs;
use crate::{ClassId, Error, Result};

/// Scoring window used when the clip length is zero.
pub const FALLBACK_SCORING_LEN: usize = 20;

/// Closed, 1-based frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.lo..=self.hi).contains(&t)
    }
}

/// `[b - w, b + w] ∩ [1, T]`.
pub fn boundary_window(b: usize, w: usize, t_len: usize) -> Result<Interval> {
    if b == 0 || b > t_len {
        return Err(Error::InvalidInput(format!(
            "frame {b} is outside 1..={t_len}"
        )));
    }
    Ok(Interval::new(
        b.saturating_sub(w).max(1),
        (b + w).min(t_len),
    ))
}

/// Clip interval of nominal length `clip_len` around `center`.
pub fn clip_interval(center: usize, clip_len: usize, t_len: usize) -> Result<Interval> {
    boundary_window(center, clip_len / 2, t_len)
}

/// Frames (1-based) whose label differs from the previous frame.
pub fn detect_boundaries(pred: &[ClassId]) -> Result<Vec<usize>> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty prediction".into()));
    }
    Ok(pred
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, _)| i + 2)
        .collect())
}

pub fn local_uncertainty(u: &[f64], window: Interval) -> Result<f64> {
    if window.lo == 0 || window.hi > u.len() {
        return Err(Error::InvalidInput(format!(
            "window [{}, {}] is outside 1..={}",
            window.lo,
            window.hi,
            u.len()
        )));
    }
    let slice = &u[window.lo - 1..window.hi];
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// Top-1 minus top-2 probability.
pub fn confidence_gap(row: ArrayView1<'_, f64>) -> Result<f64> {
    if row.len() < 2 {
        return Err(Error::InvalidInput(
            "confidence gap needs two classes".into(),
        ));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in row {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok((first - second).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalGradient {
    pub value: f64,
    /// Adjacent pairs inside the window. Zero means the value is a
    /// placeholder (single-frame window).
    pub pairs: usize,
}

impl TemporalGradient {
    pub fn is_degenerate(&self) -> bool {
        self.pairs == 0
    }
}

/// Mean L2 distance between consecutive probability rows over all adjacent
/// pairs inside `window`.
pub fn temporal_gradient(p: &FrameProbs, window: Interval) -> Result<TemporalGradient> {
    if window.lo == 0 || window.hi > p.len() {
        return Err(Error::InvalidInput("window outside the video".into()));
    }
    let pairs = window.len() - 1;
    if pairs == 0 {
        return Ok(TemporalGradient { value: 0.0, pairs });
    }
    let total: f64 = (window.lo..window.hi)
        .map(|t| {
            let a = p.row(t - 1);
            let b = p.row(t);
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(TemporalGradient {
        value: total / pairs as f64,
        pairs,
    })
}

/// Non-negative fusion weights, normalised to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Deserialize)]
struct RawWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl TryFrom<RawWeights> for ScoreWeights {
    type Error = Error;
    fn try_from(r: RawWeights) -> Result<Self> {
        ScoreWeights::new(r.alpha, r.beta, r.gamma)
    }
}

impl ScoreWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let parts = [alpha, beta, gamma];
        if parts.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "score weights must be finite and non-negative, got {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig(
                "score weights cannot all be zero".into(),
            ));
        }
        Ok(Self {
            alpha: alpha / total,
            beta: beta / total,
            gamma: gamma / total,
        })
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.3,
            gamma: 0.5,
        }
    }
}

pub fn boundary_score(u_local: f64, gap: f64, grad: f64, w: &ScoreWeights) -> f64 {
    w.alpha * u_local + w.beta * (1.0 - gap) + w.gamma * grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryComponents {
    pub u_local: f64,
    pub gap: f64,
    pub grad: f64,
    pub s_bau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCandidate {
    pub video_id: String,
    /// 1-based boundary frame.
    pub frame: usize,
    pub video_len: usize,
    pub components: BoundaryComponents,
}

impl BoundaryCandidate {
    pub fn s_bau(&self) -> f64 {
        self.components.s_bau
    }
}

/// Scores every predicted boundary of one video. `mean` are the mean MC
/// probabilities and `u` the per-frame uncertainty.
pub fn score_boundaries(
    mean: &FrameProbs,
    u: &[f64],
    window_half: usize,
    weights: &ScoreWeights,
) -> Result<Vec<BoundaryCandidate>> {
    if u.len() != mean.len() {
        return Err(Error::LengthMismatch {
            what: "uncertainty vs probabilities".into(),
            left: u.len(),
            right: mean.len(),
        });
    }
    let t_len = mean.len();
    detect_boundaries(&mean.argmax())?
        .into_iter()
        .map(|b| {
            let window = boundary_window(b, window_half, t_len)?;
            let u_local = local_uncertainty(u, window)?;
            let gap = confidence_gap(mean.row(b - 1))?;
            let grad = temporal_gradient(mean, window)?.value;
            Ok(BoundaryCandidate {
                video_id: mean.video_id.clone(),
                frame: b,
                video_len: t_len,
                components: BoundaryComponents {
                    u_local,
                    gap,
                    grad,
                    s_bau: boundary_score(u_local, gap, grad, weights),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipStrategy {
    /// Boundary score (top-K predicted boundaries).
    Bact,
    Random,
    Entropy,
    Equidistant,
    SplitRandom,
    SplitEntropy,
    Coreset,
}

impl ClipStrategy {
    pub const ALL: [ClipStrategy; 7] = [
        ClipStrategy::Bact,
        ClipStrategy::Random,
        ClipStrategy::Entropy,
        ClipStrategy::Equidistant,
        ClipStrategy::SplitRandom,
        ClipStrategy::SplitEntropy,
        ClipStrategy::Coreset,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClipStrategy::Bact => "bact",
            ClipStrategy::Random => "random",
            ClipStrategy::Entropy => "entropy",
            ClipStrategy::Equidistant => "equidistant",
            ClipStrategy::SplitRandom => "split_random",
            ClipStrategy::SplitEntropy => "split_entropy",
            ClipStrategy::Coreset => "coreset",
        }
    }

    /// Whether the strategy reads per-frame uncertainty.
    pub fn needs_uncertainty(&self) -> bool {
        matches!(
            self,
            ClipStrategy::Bact | ClipStrategy::Entropy | ClipStrategy::SplitEntropy
        )
    }
}

impl fmt::Display for ClipStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClipStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        ClipStrategy::ALL
            .into_iter()
            .find(|c| c.name() == s || (s == "s_bau" && *c == ClipStrategy::Bact))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown clip strategy `{s}`")))
    }
}

/// One annotation query: label `center`, use `interval` as unlabeled context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipQuery {
    #[serde(rename = "video")]
    pub video_id: String,
    pub center: usize,
    pub interval: Interval,
    pub strategy: ClipStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<BoundaryComponents>,
}

impl ClipQuery {
    /// The single frame the annotator is asked to label.
    pub fn labeled_frame(&self) -> usize {
        self.center
    }
}

/// Clip length and the quantities derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipGeometry {
    pub clip_len: usize,
    /// Half-width `w` of the boundary scoring window.
    pub window_half: usize,
    /// Minimum distance between two centers selected in one video.
    pub min_separation: usize,
}

impl ClipGeometry {
    /// `w = ⌊ℓ/2⌋`, separation `ℓ`; a zero-length clip keeps the 20-frame
    /// scoring window.
    pub fn from_clip_len(clip_len: usize) -> Self {
        let scoring = if clip_len == 0 {
            FALLBACK_SCORING_LEN
        } else {
            clip_len
        };
        Self {
            clip_len,
            window_half: scoring / 2,
            min_separation: scoring,
        }
    }

    pub fn query(
        &self,
        video_id: &str,
        center: usize,
        t_len: usize,
        strategy: ClipStrategy,
        components: Option<BoundaryComponents>,
    ) -> Result<ClipQuery> {
        Ok(ClipQuery {
            video_id: video_id.to_string(),
            center,
            interval: clip_interval(center, self.clip_len, t_len)?,
            strategy,
            components,
        })
    }
}

fn far_enough(picked: &[usize], t: usize, sep: usize) -> bool {
    picked.iter().all(|&p| p.abs_diff(t) >= sep.max(1))
}

/// The `min(k, |cands|)` best candidates by `s_bau`, ties to the smaller frame
/// then the smaller video id, skipping any candidate closer than
/// `min_separation` frames to one already selected in the same video.
pub fn select_top_k_boundaries(
    cands: &[BoundaryCandidate],
    k: usize,
    geometry: &ClipGeometry,
) -> Result<Vec<ClipQuery>> {
    let mut ranked: Vec<&BoundaryCandidate> = cands.iter().collect();
    ranked.sort_by(|a, b| {
        b.s_bau()
            .total_cmp(&a.s_bau())
            .then(a.frame.cmp(&b.frame))
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    let mut chosen: Vec<&BoundaryCandidate> = Vec::new();
    for c in ranked {
        if chosen.len() == k {
            break;
        }
        let clash = chosen.iter().any(|p| {
            p.video_id == c.video_id && p.frame.abs_diff(c.frame) < geometry.min_separation.max(1)
        });
        if !clash {
            chosen.push(c);
        }
    }
    chosen
        .into_iter()
        .map(|c| {
            geometry.query(
                &c.video_id,
                c.frame,
                c.video_len,
                ClipStrategy::Bact,
                Some(c.components),
            )
        })
        .collect()
}

/// Frames ordered by descending score, ties to the earlier frame (1-based).
fn ranked_frames(u: &[f64], range: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    let mut frames: Vec<usize> = range.collect();
    frames.sort_by(|&a, &b| u[b - 1].total_cmp(&u[a - 1]).then(a.cmp(&b)));
    frames
}

/// Picks from `order`, preferring frames at least `sep` from every picked
/// frame and falling back to any unpicked frame.
fn pick_spaced(order: &[usize], picked: &[usize], sep: usize) -> Option<usize> {
    order
        .iter()
        .copied()
        .find(|&t| far_enough(picked, t, sep))
        .or_else(|| order.iter().copied().find(|t| !picked.contains(t)))
}

fn spans(t_len: usize) -> Vec<std::ops::RangeInclusive<usize>> {
    (0..4)
        .map(|j| (j * t_len / 4 + 1)..=((j + 1) * t_len / 4))
        .filter(|r| !r.is_empty())
        .collect()
}

fn uncertainty_for(u: Option<&[f64]>, t_len: usize, strategy: ClipStrategy) -> Result<&[f64]> {
    match u {
        Some(u) if u.len() == t_len => Ok(u),
        Some(u) => Err(Error::LengthMismatch {
            what: "uncertainty vs video length".into(),
            left: u.len(),
            right: t_len,
        }),
        None => Err(Error::InvalidInput(format!(
            "strategy `{strategy}` needs per-frame uncertainty"
        ))),
    }
}

/// Clip centers (1-based) for the non-boundary baselines. `exclude` frames
/// are never picked.
pub fn baseline_centers<R: Rng>(
    strategy: ClipStrategy,
    t_len: usize,
    u: Option<&[f64]>,
    k: usize,
    min_separation: usize,
    exclude: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let available = t_len - exclude.iter().filter(|&&t| t >= 1 && t <= t_len).count();
    let k = if k > available {
        log::warn!("requested {k} clips from a video with {available} free frames; clamping");
        available
    } else {
        k
    };
    let mut picked: Vec<usize> = exclude.to_vec();
    let n_excluded = picked.len();
    match strategy {
        ClipStrategy::Random => {
            let free: Vec<usize> = (1..=t_len).filter(|t| !exclude.contains(t)).collect();
            let mut centers: Vec<usize> = sample(rng, free.len(), k)
                .into_iter()
                .map(|i| free[i])
                .collect();
            centers.sort_unstable();
            picked.extend(centers);
        }
        ClipStrategy::Entropy => {
            let u = uncertainty_for(u, t_len, strategy)?;
            let order: Vec<usize> = ranked_frames(u, 1..=t_len)
                .into_iter()
                .filter(|t| !exclude.contains(t))
                .collect();
            while picked.len() - n_excluded < k {
                match pick_spaced(&order, &picked, min_separation) {
                    Some(t) => picked.push(t),
                    None => break,
                }
            }
        }
        ClipStrategy::Equidistant => {
            let mut last = 0;
            for i in 1..=k {
                let ideal = ((i as f64 - 0.5) * t_len as f64 / k as f64).floor() as usize;
                let mut t = ideal.max(last + 1).max(1);
                while exclude.contains(&t) && t < t_len {
                    t += 1;
                }
                if t > t_len || exclude.contains(&t) {
                    break;
                }
                picked.push(t);
                last = t;
            }
        }
        ClipStrategy::SplitRandom | ClipStrategy::SplitEntropy => {
            let parts = spans(t_len);
            let orders: Vec<Vec<usize>> = if strategy == ClipStrategy::SplitEntropy {
                let u = uncertainty_for(u, t_len, strategy)?;
                parts.iter().map(|r| ranked_frames(u, r.clone())).collect()
            } else {
                parts.iter().map(|r| r.clone().collect()).collect()
            };
            let mut stalled = 0;
            let mut span = 0;
            while picked.len() - n_excluded < k && stalled < parts.len() {
                let choice = if strategy == ClipStrategy::SplitRandom {
                    let free: Vec<usize> = orders[span]
                        .iter()
                        .copied()
                        .filter(|t| !picked.contains(t))
                        .collect();
                    if free.is_empty() {
                        None
                    } else {
                        Some(free[rng.random_range(0..free.len())])
                    }
                } else {
                    pick_spaced(&orders[span], &picked, min_separation)
                };
                match choice {
                    Some(t) => {
                        picked.push(t);
                        stalled = 0;
                    }
                    None => stalled += 1,
                }
                span = (span + 1) % parts.len();
            }
        }
        ClipStrategy::Bact | ClipStrategy::Coreset => {
            return Err(Error::InvalidInput(format!(
                "`{strategy}` is not a frame-level baseline"
            )))
        }
    }
    Ok(picked.split_off(n_excluded))
}

/// Baseline clip queries for one video.
pub fn baseline_select_clips<R: Rng>(
    strategy: ClipStrategy,
    video: &VideoRecord,
    u: Option<&[f64]>,
    k: usize,
    geometry: &ClipGeometry,
    rng: &mut R,
) -> Result<Vec<ClipQuery>> {
    baseline_centers(
        strategy,
        video.len(),
        u,
        k,
        geometry.min_separation,
        &[],
        rng,
    )?
    .into_iter()
    .map(|c| geometry.query(video.id(), c, video.len(), strategy, None))
    .collect()
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center: repeatedly adds the point farthest from its nearest
/// selected point (ties to the smaller index). With no existing centers the
/// first pick is index 0.
///
/// Returns the `min(k, n - |existing|)` newly selected row indices.
pub fn coreset_select(
    embeddings: &Array2<f64>,
    existing: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    let n = embeddings.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("no embeddings to select from".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if let Some(&bad) = existing.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!(
            "existing index {bad} out of range"
        )));
    }
    let taken: BTreeSet<usize> = existing.iter().copied().collect();
    let mut nearest = vec![f64::INFINITY; n];
    let relax = |nearest: &mut Vec<f64>, c: usize| {
        let center = embeddings.row(c);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(embeddings.row(i), center));
        }
    };
    for &c in &taken {
        relax(&mut nearest, c);
    }
    let mut selected: Vec<usize> = Vec::new();
    let budget = k.min(n - taken.len());
    while selected.len() < budget {
        let next = if taken.is_empty() && selected.is_empty() {
            0
        } else {
            let mut best: Option<usize> = None;
            for i in 0..n {
                if taken.contains(&i) || selected.contains(&i) {
                    continue;
                }
                if best.is_none_or(|b| nearest[i] > nearest[b]) {
                    best = Some(i);
                }
            }
            best.expect("budget leaves a free point")
        };
        selected.push(next);
        relax(&mut nearest, next);
    }
    Ok(selected)
}

/// Coreset clips for one video: the labeled frames' features act as existing
/// centers and the video's frames are the candidates.
pub fn coreset_select_clips(
    video: &VideoRecord,
    labeled_features: &[Vec<f32>],
    k: usize,
    geometry: &ClipGeometry,
) -> Result<Vec<ClipQuery>> {
    let m = labeled_features.len();
    let d = video.dim();
    let mut emb = Array2::<f64>::zeros((m + video.len(), d));
    for (i, f) in labeled_features.iter().enumerate() {
        if f.len() != d {
            return Err(Error::LengthMismatch {
                what: "labeled feature dimension".into(),
                left: f.len(),
                right: d,
            });
        }
        for (j, &x) in f.iter().enumerate() {
            emb[[i, j]] = f64::from(x);
        }
    }
    for t in 0..video.len() {
        for (j, &x) in video.frame(t).iter().enumerate() {
            emb[[m + t, j]] = f64::from(x);
        }
    }
    let existing: Vec<usize> = (0..m).collect();
    coreset_select(&emb, &existing, k)?
        .into_iter()
        .map(|i| {
            geometry.query(
                video.id(),
                i - m + 1,
                video.len(),
                ClipStrategy::Coreset,
                None,
            )
        })
        .collect()
}
