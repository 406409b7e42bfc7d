//! Seeded synthetic benchmark with Markov transcripts and blurred transitions.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, VideoRecord};
use crate::rng::{stream, TAG_SYNTH};
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Training videos.
    pub num_videos: usize,
    /// Held-out videos for evaluation.
    pub num_test_videos: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub min_segment_len: usize,
    pub max_segment_len: usize,
    pub mean_frames: usize,
    /// Standard deviation of the per-element Gaussian feature noise.
    pub noise_std: f64,
    /// Half-width (frames) of the linear class-mean blend around each true
    /// boundary.
    pub transition_width: usize,
    /// Distance between any two class means.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_videos: 60,
            num_test_videos: 20,
            num_classes: 6,
            feature_dim: 16,
            min_segment_len: 20,
            max_segment_len: 80,
            mean_frames: 500,
            noise_std: 1.0,
            transition_width: 8,
            separation: 2.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("synthetic: {m}")));
        if self.num_classes < 2 {
            return fail("at least two classes are required");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive");
        }
        if self.min_segment_len == 0 || self.min_segment_len > self.max_segment_len {
            return fail("segment lengths must satisfy 1 <= min <= max");
        }
        if self.mean_frames == 0 {
            return fail("mean_frames must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std must be finite and non-negative");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return fail("separation must be finite and non-negative");
        }
        Ok(())
    }
}

/// Class means with pairwise distance `separation` (exact when `C <= D`, where
/// the directions are orthonormalised).
fn class_means(cfg: &SyntheticConfig) -> Vec<Array1<f64>> {
    let mut rng = stream(cfg.seed, &[TAG_SYNTH, 0]);
    let d = cfg.feature_dim;
    let mut dirs: Vec<Array1<f64>> = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let mut v: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if cfg.num_classes <= d {
            for u in &dirs {
                let proj = v.dot(u);
                v.scaled_add(-proj, u);
            }
        }
        let norm = v.dot(&v).sqrt().max(1e-12);
        dirs.push(v / norm);
    }
    let radius = cfg.separation / std::f64::consts::SQRT_2;
    dirs.into_iter().map(|u| u * radius).collect()
}

fn sample_transcript<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Vec<(ClassId, usize)> {
    let mean = cfg.mean_frames as f64;
    let target = ((rng.random_range(0.75..1.25) * mean).round() as usize).max(1);
    let mut segments = Vec::new();
    let mut total = 0;
    let mut label = rng.random_range(0..cfg.num_classes);
    while total < target {
        let len = rng.random_range(cfg.min_segment_len..=cfg.max_segment_len);
        segments.push((label, len));
        total += len;
        // uniform over the C-1 other classes
        let step = rng.random_range(1..cfg.num_classes);
        label = (label + step) % cfg.num_classes;
    }
    segments
}

fn render_video(
    id: String,
    cfg: &SyntheticConfig,
    means: &[Array1<f64>],
    video_index: u64,
) -> VideoRecord {
    let mut rng = stream(cfg.seed, &[TAG_SYNTH, 1, video_index]);
    let transcript = sample_transcript(cfg, &mut rng);
    let labels: Vec<ClassId> = transcript
        .iter()
        .flat_map(|&(c, len)| std::iter::repeat_n(c, len))
        .collect();
    // 0-based index of the first frame of every segment after the first
    let boundaries: Vec<usize> = labels
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, _)| i + 1)
        .collect();

    let t_len = labels.len();
    let tau = cfg.transition_width as f64;
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
    let mut features = Array2::<f32>::zeros((t_len, cfg.feature_dim));
    let mut nearest = 0usize;
    for t in 0..t_len {
        while nearest + 1 < boundaries.len()
            && (boundaries[nearest + 1] as f64 - (t as f64 + 0.5)).abs()
                < (boundaries[nearest] as f64 - (t as f64 + 0.5)).abs()
        {
            nearest += 1;
        }
        let mut mean = means[labels[t]].clone();
        if let Some(&b) = boundaries.get(nearest) {
            let offset = t as f64 + 0.5 - b as f64;
            if offset.abs() < tau {
                let lambda = 0.5 + offset / (2.0 * tau);
                let (prev, next) = (labels[b - 1], labels[b]);
                mean = &means[prev] * (1.0 - lambda) + &means[next] * lambda;
            }
        }
        let mut row = features.row_mut(t);
        for (x, m) in row.iter_mut().zip(mean.iter()) {
            let e = if cfg.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            *x = (m + e) as f32;
        }
    }
    VideoRecord::new(id, features, Some(labels)).expect("generated video is well-formed")
}

/// Builds a dataset whose videos follow a no-self-transition Markov chain of
/// classes with uniform segment lengths. Pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let means = class_means(cfg);
    let total = cfg.num_videos + cfg.num_test_videos;
    let width = total.to_string().len().max(3);
    let mut videos = Vec::with_capacity(total);
    let mut split = Split::default();
    for i in 0..total {
        let id = if i < cfg.num_videos {
            format!("train_{i:0width$}")
        } else {
            format!("test_{:0width$}", i - cfg.num_videos)
        };
        if i < cfg.num_videos {
            split.train.push(id.clone());
        } else {
            split.test.push(id.clone());
        }
        videos.push(render_video(id, cfg, &means, i as u64));
    }
    let class_names = (0..cfg.num_classes)
        .map(|c| format!("action_{c}"))
        .collect();
    Dataset::new(videos, class_names, split)
}
