//! The active-learning loop: pool initialisation, rounds of
//! train / evaluate / query / annotate / transfer under a labeled-frame
//! budget, and configuration sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::acquisition::{
    baseline_centers, coreset_select_clips, score_boundaries, select_top_k_boundaries,
    ClipGeometry, ClipQuery, ClipStrategy, Interval, ScoreWeights,
};
use crate::annotation::{AnnotationResponse, Annotator, OracleAnnotator};
use crate::dataset::{Dataset, VideoRecord};
use crate::metrics::{evaluate, EvalOptions, MetricReport};
use crate::predictor::{mean_probs, FrameModel, FrameProbs, ModelState, PredictorConfig};
use crate::rng::{
    derive_seed, hash_str, stream, TAG_CLIP_SELECT, TAG_INIT, TAG_MC, TAG_POWER_BALD, TAG_TRAIN,
    TAG_VIDEO_SELECT,
};
use crate::uncertainty::{
    frame_uncertainties, select_videos, video_score, AcquisitionFn, VideoScore,
};
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub video: String,
    /// 1-based frame index.
    pub frame: usize,
    pub label: ClassId,
    /// Clip the frame was queried with; training context stays inside it.
    pub context: Interval,
}

/// The labeled frames, keyed by (video, frame).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledIndexSet {
    entries: BTreeMap<(String, usize), LabeledEntry>,
}

impl LabeledIndexSet {
    pub fn insert(
        &mut self,
        video: &str,
        frame: usize,
        label: ClassId,
        context: Interval,
    ) -> Result<()> {
        let key = (video.to_string(), frame);
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateLabel {
                video: video.to_string(),
                frame,
            });
        }
        self.entries.insert(
            key,
            LabeledEntry {
                video: video.to_string(),
                frame,
                label,
                context,
            },
        );
        Ok(())
    }

    pub fn contains(&self, video: &str, frame: usize) -> bool {
        self.entries.contains_key(&(video.to_string(), frame))
    }

    pub fn get(&self, video: &str, frame: usize) -> Option<&LabeledEntry> {
        self.entries.get(&(video.to_string(), frame))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in (video, frame) order.
    pub fn iter(&self) -> impl Iterator<Item = &LabeledEntry> {
        self.entries.values()
    }
}

/// A count, or a percentage of some total (written `"25%"`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantity {
    Count(usize),
    Percent(f64),
}

impl Quantity {
    /// Percentages round half up and never resolve below one.
    pub fn resolve(&self, total: usize) -> usize {
        match *self {
            Quantity::Count(n) => n,
            Quantity::Percent(p) => ((p / 100.0 * total as f64) + 0.5).floor().max(1.0) as usize,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Quantity::Count(n) => n >= 1,
            Quantity::Percent(p) => p.is_finite() && p > 0.0 && p <= 100.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{what} must be at least 1 or a percentage in (0, 100], got {self}"
            )))
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Count(n) => write!(f, "{n}"),
            Quantity::Percent(p) => write!(f, "{p}%"),
        }
    }
}

impl FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("`{s}` is neither a count nor a percentage"));
        match s.strip_suffix('%') {
            Some(p) => p.trim().parse().map(Quantity::Percent).map_err(|_| bad()),
            None => s.parse().map(Quantity::Count).map_err(|_| bad()),
        }
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Quantity::Count(n) => s.serialize_u64(*n as u64),
            Quantity::Percent(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Quantity::Count(n as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoStrategy {
    #[default]
    Uncertainty,
    Random,
}

impl FromStr for VideoStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uncertainty" => Ok(VideoStrategy::Uncertainty),
            "random" => Ok(VideoStrategy::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown video strategy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Number of rounds `R`.
    pub rounds: usize,
    /// Total labeled-frame budget `B`, absolute or a percentage of the
    /// training frames.
    pub budget: Quantity,
    /// Videos queried per round `N_q`, absolute or a percentage of the
    /// training videos.
    pub query_videos: Quantity,
    /// Clips (labeled frames) per queried video `K`.
    pub clips_per_video: usize,
    /// Clip length `ℓ`.
    pub clip_len: usize,
    /// Initially labeled videos `n_init`.
    pub init_videos: Quantity,
    pub init_clips: usize,
    pub video_strategy: VideoStrategy,
    pub clip_strategy: ClipStrategy,
    pub acquisition: AcquisitionFn,
    pub weights: ScoreWeights,
    pub predictor: PredictorConfig,
    pub eval: EvalOptions,
    pub seed: u64,
    /// Store per-round wall time in the history (makes it non-reproducible).
    pub record_wall_time: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            budget: Quantity::Percent(1.1),
            query_videos: Quantity::Percent(25.0),
            clips_per_video: 5,
            clip_len: 20,
            init_videos: Quantity::Percent(25.0),
            init_clips: 5,
            video_strategy: VideoStrategy::Uncertainty,
            clip_strategy: ClipStrategy::Bact,
            acquisition: AcquisitionFn::Entropy,
            weights: ScoreWeights::default(),
            predictor: PredictorConfig::default(),
            eval: EvalOptions::default(),
            seed: 0,
            record_wall_time: false,
        }
    }
}

/// Counts resolved against a concrete dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedCounts {
    pub budget: usize,
    pub query_videos: usize,
    pub init_videos: usize,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.budget.validate("budget")?;
        self.query_videos.validate("query_videos")?;
        self.init_videos.validate("init_videos")?;
        if self.clips_per_video == 0 {
            return Err(Error::InvalidConfig(
                "clips_per_video must be at least 1".into(),
            ));
        }
        if self.init_clips == 0 {
            return Err(Error::InvalidConfig("init_clips must be at least 1".into()));
        }
        if let AcquisitionFn::PowerBald { beta } = self.acquisition {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(Error::InvalidConfig(
                    "power_bald beta must be positive".into(),
                ));
            }
        }
        self.predictor.validate()
    }

    pub fn resolve(&self, ds: &Dataset) -> Result<ResolvedCounts> {
        self.validate()?;
        let n_train = ds.split().train.len();
        let counts = ResolvedCounts {
            budget: self.budget.resolve(ds.total_train_frames()),
            query_videos: self.query_videos.resolve(n_train),
            init_videos: self.init_videos.resolve(n_train),
        };
        if counts.init_videos > n_train {
            return Err(Error::InvalidConfig(format!(
                "{} initial videos requested but the train split has {n_train}",
                counts.init_videos
            )));
        }
        let needed = counts.init_videos * self.init_clips;
        if needed > counts.budget {
            return Err(Error::BudgetExceeded {
                needed,
                budget: counts.budget,
            });
        }
        Ok(counts)
    }

    pub fn geometry(&self) -> ClipGeometry {
        ClipGeometry::from_clip_len(self.clip_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RoundsDone,
    Budget,
    PoolExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::RoundsDone => "rounds_done",
            StopReason::Budget => "budget",
            StopReason::PoolExhausted => "pool_exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundHistory {
    /// 1-based round index.
    pub round: usize,
    pub labeled_before: usize,
    pub labeled_after: usize,
    pub budget: usize,
    pub queried_videos: Vec<String>,
    pub queries: Vec<ClipQuery>,
    /// Requested labels that could not be placed (`N_q * K` minus queries).
    pub shortfall: usize,
    /// Final-epoch training loss.
    pub train_loss: Option<f64>,
    /// Test-split metrics of the model trained at the start of the round.
    pub metrics: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
}

impl RoundHistory {
    pub fn acquired(&self) -> usize {
        self.labeled_after - self.labeled_before
    }
}

/// `D_L`, `D_U` and the labeled frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pools {
    pub labeled_videos: BTreeSet<String>,
    pub unlabeled_videos: BTreeSet<String>,
    pub labels: LabeledIndexSet,
}

/// Checks a batch of responses against the queries they answer and returns
/// them as ready-to-insert entries. Nothing is mutated on error.
fn validate_responses(
    ds: &Dataset,
    labels: &LabeledIndexSet,
    queries: &[ClipQuery],
    responses: &[AnnotationResponse],
) -> Result<Vec<LabeledEntry>> {
    let by_key: BTreeMap<(&str, usize), &ClipQuery> = queries
        .iter()
        .map(|q| ((q.video_id.as_str(), q.labeled_frame()), q))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(responses.len());
    for r in responses {
        let q = by_key
            .get(&(r.video.as_str(), r.frame))
            .ok_or_else(|| Error::UnknownRequest {
                video: r.video.clone(),
                frame: r.frame,
            })?;
        if !seen.insert((r.video.as_str(), r.frame)) || labels.contains(&r.video, r.frame) {
            return Err(Error::DuplicateLabel {
                video: r.video.clone(),
                frame: r.frame,
            });
        }
        if r.class >= ds.num_classes() {
            return Err(Error::InvalidClass {
                class: r.class,
                num_classes: ds.num_classes(),
            });
        }
        out.push(LabeledEntry {
            video: r.video.clone(),
            frame: r.frame,
            label: r.class,
            context: q.interval,
        });
    }
    Ok(out)
}

fn commit(labels: &mut LabeledIndexSet, entries: Vec<LabeledEntry>) -> Result<()> {
    for e in entries {
        labels.insert(&e.video, e.frame, e.label, e.context)?;
    }
    Ok(())
}

/// Samples `n_init` training videos into `D_L` and labels `init_clips`
/// frames of each, picked by the split-random rule.
pub fn init_pools<A: Annotator + ?Sized>(
    ds: &Dataset,
    cfg: &LoopConfig,
    annotator: &mut A,
) -> Result<Pools> {
    let counts = cfg.resolve(ds)?;
    let train = &ds.split().train;
    let mut train_ids: Vec<&String> = train.iter().collect();
    train_ids.sort();
    let mut rng = stream(cfg.seed, &[TAG_INIT]);
    let mut chosen: Vec<String> = sample(&mut rng, train_ids.len(), counts.init_videos)
        .into_iter()
        .map(|i| train_ids[i].clone())
        .collect();
    chosen.sort();

    let geometry = cfg.geometry();
    let mut queries = Vec::new();
    for id in &chosen {
        let video = ds.video(id)?;
        let mut rng = stream(cfg.seed, &[TAG_INIT, hash_str(id)]);
        let centers = baseline_centers(
            ClipStrategy::SplitRandom,
            video.len(),
            None,
            cfg.init_clips,
            geometry.min_separation,
            &[],
            &mut rng,
        )?;
        for c in centers {
            queries.push(geometry.query(id, c, video.len(), ClipStrategy::SplitRandom, None)?);
        }
    }
    let responses = annotator.annotate(ds, 0, &queries)?;
    let mut labels = LabeledIndexSet::default();
    let entries = validate_responses(ds, &labels, &queries, &responses)?;
    commit(&mut labels, entries)?;

    let labeled_videos: BTreeSet<String> = chosen.into_iter().collect();
    let unlabeled_videos = train
        .iter()
        .filter(|id| !labeled_videos.contains(*id))
        .cloned()
        .collect();
    Ok(Pools {
        labeled_videos,
        unlabeled_videos,
        labels,
    })
}

/// Per-video quantities computed from the MC samples of one round.
struct Evidence {
    mean: FrameProbs,
    /// Acquisition-function score per frame (Stage 1).
    acquisition: Vec<f64>,
    /// Predictive entropy of the mean per frame (Stage 2).
    entropy: Vec<f64>,
}

fn evidence(
    model: &ModelState,
    video: &VideoRecord,
    cfg: &LoopConfig,
    round: usize,
) -> Result<Evidence> {
    let mc_seed = derive_seed(cfg.seed, &[TAG_MC, round as u64]);
    let samples = model.mc_sample(video, cfg.predictor.mc_samples, mc_seed)?;
    let mean = mean_probs(&samples)?;
    let entropy = frame_uncertainties(std::slice::from_ref(&mean), AcquisitionFn::Entropy, 0)?;
    let acquisition = if cfg.acquisition == AcquisitionFn::Entropy {
        entropy.clone()
    } else {
        let seed = derive_seed(cfg.seed, &[TAG_POWER_BALD, round as u64]);
        frame_uncertainties(&samples, cfg.acquisition, seed)?
    };
    Ok(Evidence {
        mean,
        acquisition,
        entropy,
    })
}

/// Runs the loop one round at a time.
pub struct ActiveLearner<'a> {
    ds: &'a Dataset,
    cfg: LoopConfig,
    counts: ResolvedCounts,
    pools: Pools,
    round: usize,
    stopped: Option<StopReason>,
    model: Option<ModelState>,
}

impl<'a> ActiveLearner<'a> {
    pub fn new<A: Annotator + ?Sized>(
        ds: &'a Dataset,
        cfg: LoopConfig,
        annotator: &mut A,
    ) -> Result<Self> {
        let counts = cfg.resolve(ds)?;
        let pools = init_pools(ds, &cfg, annotator)?;
        Ok(Self {
            ds,
            cfg,
            counts,
            pools,
            round: 0,
            stopped: None,
            model: None,
        })
    }

    pub fn pools(&self) -> &Pools {
        &self.pools
    }

    pub fn counts(&self) -> ResolvedCounts {
        self.counts
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stopped
    }

    /// Model trained in the most recent round.
    pub fn model(&self) -> Option<&ModelState> {
        self.model.as_ref()
    }

    fn evaluate_test(&self, model: &ModelState) -> Result<Option<MetricReport>> {
        let mut preds = BTreeMap::new();
        let mut gts = BTreeMap::new();
        for v in self.ds.test_videos() {
            if let Some(gt) = v.labels() {
                preds.insert(v.id().to_string(), model.predict_probs(v)?.argmax());
                gts.insert(v.id().to_string(), gt.to_vec());
            }
        }
        if gts.is_empty() {
            return Ok(None);
        }
        evaluate(&preds, &gts, &self.cfg.eval).map(Some)
    }

    fn select_round_videos(
        &self,
        model: &ModelState,
        cache: &mut BTreeMap<String, Evidence>,
    ) -> Result<Vec<String>> {
        let pool: Vec<&String> = self.pools.unlabeled_videos.iter().collect();
        let n = self.counts.query_videos.min(pool.len());
        match self.cfg.video_strategy {
            VideoStrategy::Random => {
                let mut rng = stream(self.cfg.seed, &[TAG_VIDEO_SELECT, self.round as u64]);
                let mut picked: Vec<String> = sample(&mut rng, pool.len(), n)
                    .into_iter()
                    .map(|i| pool[i].clone())
                    .collect();
                picked.sort();
                Ok(picked)
            }
            VideoStrategy::Uncertainty => {
                let scored: Vec<Result<(String, Evidence)>> = pool
                    .par_iter()
                    .map(|id| {
                        let video = self.ds.video(id)?;
                        Ok((
                            (*id).clone(),
                            evidence(model, video, &self.cfg, self.round)?,
                        ))
                    })
                    .collect();
                let mut scores = Vec::with_capacity(scored.len());
                for item in scored {
                    let (id, ev) = item?;
                    scores.push(VideoScore {
                        video_id: id.clone(),
                        score: video_score(&ev.acquisition)?,
                    });
                    cache.insert(id, ev);
                }
                select_videos(&scores, n)
            }
        }
    }

    fn select_video_clips(
        &self,
        video: &VideoRecord,
        ev: Option<&Evidence>,
    ) -> Result<Vec<ClipQuery>> {
        let k = self.cfg.clips_per_video;
        let geometry = self.cfg.geometry();
        let strategy = self.cfg.clip_strategy;
        let mut rng = stream(
            self.cfg.seed,
            &[TAG_CLIP_SELECT, self.round as u64, hash_str(video.id())],
        );
        let u = ev.map(|e| e.entropy.as_slice());
        match strategy {
            ClipStrategy::Bact => {
                let ev = ev.expect("boundary scoring needs evidence");
                let cands = score_boundaries(
                    &ev.mean,
                    &ev.entropy,
                    geometry.window_half,
                    &self.cfg.weights,
                )?;
                let mut picked = select_top_k_boundaries(&cands, k, &geometry)?;
                let missing = k.min(video.len()).saturating_sub(picked.len());
                if missing > 0 {
                    log::info!(
                        "round {}: `{}` has {} usable boundaries, filling {missing} clips by split entropy",
                        self.round,
                        video.id(),
                        picked.len()
                    );
                    let taken: Vec<usize> = picked.iter().map(|q| q.center).collect();
                    let extra = baseline_centers(
                        ClipStrategy::SplitEntropy,
                        video.len(),
                        u,
                        missing,
                        geometry.min_separation,
                        &taken,
                        &mut rng,
                    )?;
                    for c in extra {
                        picked.push(geometry.query(
                            video.id(),
                            c,
                            video.len(),
                            ClipStrategy::SplitEntropy,
                            None,
                        )?);
                    }
                }
                Ok(picked)
            }
            ClipStrategy::Coreset => {
                let labeled: Vec<Vec<f32>> = self
                    .pools
                    .labels
                    .iter()
                    .map(|e| Ok(self.ds.video(&e.video)?.frame(e.frame - 1).to_vec()))
                    .collect::<Result<_>>()?;
                coreset_select_clips(video, &labeled, k, &geometry)
            }
            _ => baseline_centers(
                strategy,
                video.len(),
                u,
                k,
                geometry.min_separation,
                &[],
                &mut rng,
            )?
            .into_iter()
            .map(|c| geometry.query(video.id(), c, video.len(), strategy, None))
            .collect(),
        }
    }

    /// Train, evaluate and (budget and pool permitting) query one round.
    /// An annotation error leaves the labeled set and pools untouched.
    pub fn run_round<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> Result<RoundHistory> {
        if let Some(reason) = self.stopped {
            return Err(Error::InvalidInput(format!(
                "the loop has already stopped ({reason})"
            )));
        }
        let started = Instant::now();
        self.round += 1;
        let round = self.round;

        let mut pcfg = self.cfg.predictor.clone();
        pcfg.seed = derive_seed(self.cfg.seed, &[TAG_TRAIN, round as u64]);
        let model = ModelState::train(self.ds, &self.pools.labels, &pcfg)?;
        let metrics = self.evaluate_test(&model)?;
        let labeled_before = self.pools.labels.len();
        let planned = self.counts.query_videos * self.cfg.clips_per_video;

        let mut history = RoundHistory {
            round,
            labeled_before,
            labeled_after: labeled_before,
            budget: self.counts.budget,
            queried_videos: Vec::new(),
            queries: Vec::new(),
            shortfall: 0,
            train_loss: model.loss_trace().last().copied(),
            metrics,
            wall_time_ms: None,
            stop: None,
        };

        let guard = if labeled_before + planned > self.counts.budget {
            Some(StopReason::Budget)
        } else if self.pools.unlabeled_videos.is_empty() {
            Some(StopReason::PoolExhausted)
        } else {
            None
        };

        if guard.is_none() {
            let mut cache = BTreeMap::new();
            let videos = self.select_round_videos(&model, &mut cache)?;
            let need_evidence = self.cfg.clip_strategy.needs_uncertainty();
            let per_video: Vec<Result<Vec<ClipQuery>>> = videos
                .par_iter()
                .map(|id| {
                    let video = self.ds.video(id)?;
                    let fresh;
                    let ev = match cache.get(id) {
                        Some(ev) => Some(ev),
                        None if need_evidence => {
                            fresh = evidence(&model, video, &self.cfg, round)?;
                            Some(&fresh)
                        }
                        None => None,
                    };
                    self.select_video_clips(video, ev)
                })
                .collect();
            let mut queries = Vec::new();
            for q in per_video {
                queries.extend(q?);
            }
            debug_assert!(queries.len() <= planned);
            if labeled_before + queries.len() > self.counts.budget {
                return Err(Error::BudgetExceeded {
                    needed: labeled_before + queries.len(),
                    budget: self.counts.budget,
                });
            }

            let responses = annotator.annotate(self.ds, round, &queries)?;
            let entries = validate_responses(self.ds, &self.pools.labels, &queries, &responses)?;
            commit(&mut self.pools.labels, entries)?;
            for id in &videos {
                self.pools.unlabeled_videos.remove(id);
                self.pools.labeled_videos.insert(id.clone());
            }
            history.shortfall = planned - queries.len();
            if history.shortfall > 0 {
                log::info!(
                    "round {round}: {} of {planned} planned labels placed",
                    queries.len()
                );
            }
            history.labeled_after = self.pools.labels.len();
            history.queried_videos = videos;
            history.queries = queries;
        }

        self.model = Some(model);
        self.stopped = guard.or((round == self.cfg.rounds).then_some(StopReason::RoundsDone));
        history.stop = self.stopped;
        if self.cfg.record_wall_time {
            history.wall_time_ms = Some(started.elapsed().as_millis() as u64);
        }
        debug_assert!(history.labeled_after <= self.counts.budget);
        Ok(history)
    }
}

/// Runs up to `cfg.rounds` rounds; the last entry carries the stop reason.
pub fn run_experiment<A: Annotator + ?Sized>(
    ds: &Dataset,
    cfg: &LoopConfig,
    annotator: &mut A,
) -> Result<Vec<RoundHistory>> {
    if cfg.rounds == 0 {
        cfg.resolve(ds)?;
        return Ok(Vec::new());
    }
    let mut learner = ActiveLearner::new(ds, cfg.clone(), annotator)?;
    let mut history = Vec::new();
    while learner.stopped().is_none() {
        history.push(learner.run_round(annotator)?);
    }
    Ok(history)
}

/// Clip lengths of the clip-length ablation.
pub const ABLATION_CLIP_LENS: [usize; 6] = [0, 10, 20, 30, 40, 50];

/// Weight triples on a 0.1 grid with `alpha, beta <= 0.4`, `gamma <= 0.6`
/// and `alpha + beta + gamma = 1`.
pub fn weight_grid() -> Vec<ScoreWeights> {
    let mut out = Vec::new();
    for a in 0..=4u32 {
        for b in 0..=4u32 {
            let Some(g) = 10u32.checked_sub(a + b) else {
                continue;
            };
            if g > 6 {
                continue;
            }
            out.push(ScoreWeights {
                alpha: f64::from(a) / 10.0,
                beta: f64::from(b) / 10.0,
                gamma: f64::from(g) / 10.0,
            });
        }
    }
    out
}

/// Axes of a sweep; an empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub weights: Vec<ScoreWeights>,
    pub clip_lens: Vec<usize>,
    pub acquisitions: Vec<AcquisitionFn>,
}

impl SweepGrid {
    pub fn points(&self, base: &LoopConfig) -> Vec<LoopConfig> {
        fn or_base<T: Clone>(v: &[T], b: T) -> Vec<T> {
            if v.is_empty() {
                vec![b]
            } else {
                v.to_vec()
            }
        }
        let weights = or_base(&self.weights, base.weights);
        let lens = or_base(&self.clip_lens, base.clip_len);
        let acqs = or_base(&self.acquisitions, base.acquisition);
        let mut out = Vec::new();
        for &w in &weights {
            for &l in &lens {
                for &a in &acqs {
                    out.push(LoopConfig {
                        weights: w,
                        clip_len: l,
                        acquisition: a,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clip_len: usize,
    pub acquisition: AcquisitionFn,
    pub rounds_run: usize,
    pub labels_used: usize,
    pub stop: Option<StopReason>,
    pub metrics: Option<MetricReport>,
}

/// One experiment per grid point with an oracle annotator of the given
/// label noise. Rows come back in grid order.
pub fn sweep(
    ds: &Dataset,
    base: &LoopConfig,
    grid: &SweepGrid,
    noise: f64,
) -> Result<Vec<SweepRow>> {
    grid.points(base)
        .par_iter()
        .map(|cfg| {
            let mut oracle = OracleAnnotator::new(noise, cfg.seed)?;
            let history = run_experiment(ds, cfg, &mut oracle)?;
            let last = history.last();
            Ok(SweepRow {
                alpha: cfg.weights.alpha,
                beta: cfg.weights.beta,
                gamma: cfg.weights.gamma,
                clip_len: cfg.clip_len,
                acquisition: cfg.acquisition,
                rounds_run: history.len(),
                labels_used: last.map_or(0, |h| h.labeled_after),
                stop: last.and_then(|h| h.stop),
                metrics: last.and_then(|h| h.metrics.clone()),
            })
        })
        .collect()
}

/// Writes `sweep.csv` and `sweep.json` into `out`.
pub fn write_sweep(rows: &[SweepRow], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.json"), serde_json::to_string_pretty(rows)?)?;
    let metric_header = rows
        .iter()
        .find_map(|r| r.metrics.as_ref())
        .map(|m| m.csv_header())
        .unwrap_or_default();
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    let mut header: Vec<String> = [
        "alpha",
        "beta",
        "gamma",
        "clip_len",
        "acquisition",
        "rounds_run",
        "labels_used",
        "stop",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(metric_header.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.alpha.to_string(),
            r.beta.to_string(),
            r.gamma.to_string(),
            r.clip_len.to_string(),
            r.acquisition.to_string(),
            r.rounds_run.to_string(),
            r.labels_used.to_string(),
            r.stop.map(|s| s.to_string()).unwrap_or_default(),
        ];
        match &r.metrics {
            Some(m) => rec.extend(m.csv_row()),
            None => rec.extend(metric_header.iter().map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
