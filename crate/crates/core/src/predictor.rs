//! Probabilistic frame classifier.
//!
//! The reference model is a softmax-linear classifier over a temporal window
//! of `2r + 1` frames (edge frames replicated), trained with mini-batch
//! gradient descent on the labeled frames only and with dropout on the input
//! vector. Keeping dropout active at inference yields the Monte Carlo samples
//! used for uncertainty estimation.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::active_loop::LabeledIndexSet;
use crate::dataset::{Dataset, VideoRecord};
use crate::rng::{hash_str, stream, TAG_MC, TAG_TRAIN};
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Frames on each side of the center frame that enter the input window.
    pub context_radius: usize,
    pub dropout: f64,
    /// Stochastic forward passes per video.
    pub mc_samples: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            context_radius: 7,
            dropout: 0.2,
            mc_samples: 10,
            learning_rate: 1e-2,
            epochs: 85,
            batch_size: 16,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("predictor: {m}")));
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if self.mc_samples == 0 {
            return fail("mc_samples must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.context_radius + 1
    }
}

/// Per-frame class probabilities of one video (`T x C`, rows sum to one).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameProbs {
    pub video_id: String,
    pub probs: Array2<f64>,
}

impl FrameProbs {
    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Probability row of a 0-based frame.
    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.probs.row(t)
    }

    /// Per-frame argmax; ties resolve to the lowest class id.
    pub fn argmax(&self) -> Vec<ClassId> {
        self.probs.rows().into_iter().map(|r| argmax(r)).collect()
    }
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> ClassId {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = c;
        }
    }
    best
}

/// Anything that yields deterministic and stochastic per-frame probabilities.
pub trait FrameModel: Sync {
    fn num_classes(&self) -> usize;

    /// Deterministic forward pass (dropout disabled).
    fn predict_probs(&self, video: &VideoRecord) -> Result<FrameProbs>;

    /// `samples` stochastic forward passes, reproducible given `seed`.
    fn mc_sample(&self, video: &VideoRecord, samples: usize, seed: u64) -> Result<Vec<FrameProbs>>;
}

/// Element-wise mean of a set of sample matrices.
pub fn mean_probs(samples: &[FrameProbs]) -> Result<FrameProbs> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot average zero samples".into()))?;
    let mut sum = Array2::<f64>::zeros(first.probs.dim());
    for s in samples {
        if s.probs.dim() != first.probs.dim() {
            return Err(Error::InvalidInput(format!(
                "sample shapes differ: {:?} vs {:?}",
                s.probs.dim(),
                first.probs.dim()
            )));
        }
        sum += &s.probs;
    }
    sum /= samples.len() as f64;
    Ok(FrameProbs {
        video_id: first.video_id.clone(),
        probs: sum,
    })
}

fn softmax_in_place(mut row: ndarray::ArrayViewMut1<'_, f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|z| (z - max).exp());
    let total = row.sum();
    row /= total;
}

pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for row in logits.rows_mut() {
        softmax_in_place(row);
    }
}

/// Mean cross-entropy of `inputs · weights` against `labels` plus an L2
/// penalty `weight_decay / 2 * ||W||^2` on every row but the last (bias).
/// Returns the objective and its gradient with respect to `weights`.
pub fn objective(
    weights: &Array2<f64>,
    inputs: &Array2<f64>,
    labels: &[ClassId],
    weight_decay: f64,
) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let mut probs = inputs.dot(weights);
    let mut ce = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        ce += log_z - row[y];
        softmax_in_place(row.view_mut());
        row[y] -= 1.0;
    }
    let mut grad = inputs.t().dot(&probs) / n;
    let body = weights.nrows() - 1;
    let reg = weights.slice(s![..body, ..]).mapv(|w| w * w).sum();
    grad.slice_mut(s![..body, ..])
        .scaled_add(weight_decay, &weights.slice(s![..body, ..]));
    (ce / n + 0.5 * weight_decay * reg, grad)
}

/// Builds the input vector of frame `t` (0-based): the features of frames
/// `t - r ..= t + r` clamped to `[lo, hi]`, followed by a constant 1.
pub fn window_input(
    video: &VideoRecord,
    t: usize,
    radius: usize,
    lo: usize,
    hi: usize,
) -> Vec<f64> {
    let d = video.dim();
    let mut x = Vec::with_capacity((2 * radius + 1) * d + 1);
    for k in 0..=2 * radius {
        let pos = (t + k).saturating_sub(radius).clamp(lo, hi);
        x.extend(video.frame(pos).iter().map(|&v| f64::from(v)));
    }
    x.push(1.0);
    x
}

/// Trained windowed softmax classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    #[serde(skip)]
    weights: Array2<f64>,
    feature_dim: usize,
    num_classes: usize,
    loss_trace: Vec<f64>,
    config: PredictorConfig,
}

impl ModelState {
    /// All-zero model: uniform predictions everywhere.
    pub fn zeros(feature_dim: usize, num_classes: usize, config: PredictorConfig) -> Self {
        let rows = config.window_len() * feature_dim + 1;
        Self {
            weights: Array2::zeros((rows, num_classes)),
            feature_dim,
            num_classes,
            loss_trace: Vec::new(),
            config,
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn check_dim(&self, video: &VideoRecord) -> Result<()> {
        if video.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                video: video.id().to_string(),
                expected: self.feature_dim,
                found: video.dim(),
            });
        }
        Ok(())
    }

    /// Mini-batch gradient descent on the labeled frames of `labeled`.
    ///
    /// A labeled frame only sees context inside the clip it was queried with;
    /// window positions outside the clip replicate the clip's edge frames.
    pub fn train(ds: &Dataset, labeled: &LabeledIndexSet, cfg: &PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        if labeled.is_empty() {
            return Err(Error::InvalidInput("no labeled frames to train on".into()));
        }
        let c = ds.num_classes();
        let d = ds.feature_dim();
        let mut model = Self::zeros(d, c, cfg.clone());
        let p = model.weights.nrows();

        let mut inputs = Array2::<f64>::zeros((labeled.len(), p));
        let mut labels = Vec::with_capacity(labeled.len());
        for (i, entry) in labeled.iter().enumerate() {
            let video = ds.video(&entry.video)?;
            if entry.frame == 0 || entry.frame > video.len() {
                return Err(Error::InvalidInput(format!(
                    "frame {} is outside video `{}` (1..={})",
                    entry.frame,
                    entry.video,
                    video.len()
                )));
            }
            if entry.label >= c {
                return Err(Error::InvalidClass {
                    class: entry.label,
                    num_classes: c,
                });
            }
            let lo = entry.context.lo.max(1) - 1;
            let hi = entry.context.hi.min(video.len()) - 1;
            let x = window_input(video, entry.frame - 1, cfg.context_radius, lo, hi);
            inputs.row_mut(i).assign(&ArrayView1::from(&x));
            labels.push(entry.label);
        }

        let mut rng = stream(cfg.seed, &[TAG_TRAIN]);
        let keep = 1.0 - cfg.dropout;
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..cfg.epochs.max(1) {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut x = inputs.select(Axis(0), batch);
                if cfg.dropout > 0.0 {
                    for mut row in x.rows_mut() {
                        for v in row.iter_mut().take(p - 1) {
                            *v = if rng.random::<f64>() < keep {
                                *v / keep
                            } else {
                                0.0
                            };
                        }
                    }
                }
                let y: Vec<ClassId> = batch.iter().map(|&i| labels[i]).collect();
                let (loss, grad) = objective(&model.weights, &x, &y, cfg.weight_decay);
                model.weights.scaled_add(-cfg.learning_rate, &grad);
                epoch_loss += loss * batch.len() as f64;
            }
            model.loss_trace.push(epoch_loss / labels.len() as f64);
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "training diverged; lower the learning rate".into(),
            ));
        }
        Ok(model)
    }

    fn features_f64(video: &VideoRecord) -> Array2<f64> {
        video.features().mapv(f64::from)
    }

    fn logits(&self, video: &VideoRecord) -> Array2<f64> {
        let x = Self::features_f64(video);
        let t_len = video.len();
        let d = self.feature_dim;
        let r = self.config.context_radius;
        let bias = self.weights.row(self.weights.nrows() - 1);
        let mut logits = Array2::<f64>::zeros((t_len, self.num_classes));
        for mut row in logits.rows_mut() {
            row.assign(&bias);
        }
        for k in 0..=2 * r {
            let block = self.weights.slice(s![k * d..(k + 1) * d, ..]);
            let proj = x.dot(&block);
            for t in 0..t_len {
                let pos = (t + k).saturating_sub(r).min(t_len - 1);
                let mut row = logits.row_mut(t);
                row += &proj.row(pos);
            }
        }
        logits
    }

    fn stochastic_pass<R: Rng>(&self, x: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        let t_len = x.nrows();
        let d = self.feature_dim;
        let r = self.config.context_radius;
        let keep = 1.0 - self.config.dropout;
        let scale = 1.0 / keep;
        let bias = self.weights.row(self.weights.nrows() - 1);
        let mut logits = Array2::<f64>::zeros((t_len, self.num_classes));
        let c = self.num_classes;
        for t in 0..t_len {
            let mut acc: Vec<f64> = bias.to_vec();
            for k in 0..=2 * r {
                let pos = (t + k).saturating_sub(r).min(t_len - 1);
                let frame = x.row(pos);
                for j in 0..d {
                    if rng.random::<f64>() >= keep {
                        continue;
                    }
                    let v = frame[j] * scale;
                    let w = self.weights.row(k * d + j);
                    for (a, &wc) in acc.iter_mut().zip(w.iter()).take(c) {
                        *a += v * wc;
                    }
                }
            }
            logits.row_mut(t).assign(&ArrayView1::from(&acc));
        }
        softmax_rows(&mut logits);
        logits
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(self)?;
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.weights.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for w in self.weights.iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |detail: &str| Error::Format {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let mut model: ModelState = serde_json::from_slice(header)?;
        let rows = model.config.window_len() * model.feature_dim + 1;
        let body = &bytes[12 + hlen..];
        if body.len() != 8 * rows * model.num_classes {
            return Err(bad("weight block has the wrong size"));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.weights = Array2::from_shape_vec((rows, model.num_classes), data)
            .map_err(|e| bad(&e.to_string()))?;
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BACTCKPT";

impl FrameModel for ModelState {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_probs(&self, video: &VideoRecord) -> Result<FrameProbs> {
        self.check_dim(video)?;
        let mut probs = self.logits(video);
        softmax_rows(&mut probs);
        Ok(FrameProbs {
            video_id: video.id().to_string(),
            probs,
        })
    }

    fn mc_sample(&self, video: &VideoRecord, samples: usize, seed: u64) -> Result<Vec<FrameProbs>> {
        self.check_dim(video)?;
        if samples == 0 {
            return Err(Error::InvalidInput(
                "at least one MC sample is required".into(),
            ));
        }
        if self.config.dropout == 0.0 {
            let p = self.predict_probs(video)?;
            return Ok(vec![p; samples]);
        }
        let x = Self::features_f64(video);
        let vid = hash_str(video.id());
        Ok((0..samples)
            .map(|s| {
                let mut rng = stream(seed, &[TAG_MC, vid, s as u64]);
                FrameProbs {
                    video_id: video.id().to_string(),
                    probs: self.stochastic_pass(&x, &mut rng),
                }
            })
            .collect())
    }
}
