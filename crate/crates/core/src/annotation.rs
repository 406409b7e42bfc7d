//! Label sources for clip queries and result export.
//!
//! [`OracleAnnotator`] answers from ground truth, optionally flipping a
//! fraction of labels. [`HumanAnnotator`] publishes a round's queries to a
//! [`SessionHub`] and blocks until an HTTP client has answered all of them
//! (or cancelled the session). Requests carry the clip context for display
//! but never a ground-truth label.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::ClipQuery;
use crate::active_loop::RoundHistory;
use crate::dataset::Dataset;
use crate::rng::{hash_str, stream, TAG_ORACLE};
use crate::{ClassId, Error, Result};

/// Version of the exported history and selection files.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub session_id: String,
    pub video: String,
    pub frame: usize,
    pub class: ClassId,
    pub annotator: AnnotatorKind,
    /// Milliseconds since the Unix epoch; absent for simulated answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

/// Display-only view of the clip: a min-max normalised feature heat strip
/// (one row per frame of the clip) plus the raw center-frame features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipContext {
    pub heat_strip: Vec<Vec<f32>>,
    pub center_features: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub session_id: String,
    pub video: String,
    /// The only frame to label (the clip center, 1-based).
    pub frame: usize,
    pub query: ClipQuery,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ClipContext>,
}

impl AnnotationRequest {
    pub fn new(
        session_id: &str,
        ds: &Dataset,
        query: &ClipQuery,
        with_context: bool,
    ) -> Result<Self> {
        let video = ds.video(&query.video_id)?;
        let context = if with_context {
            let lo = query.interval.lo.max(1) - 1;
            let hi = query.interval.hi.min(video.len());
            let window = video.features().slice(ndarray::s![lo..hi, ..]);
            let (min, max) = window
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            let span = if max > min { max - min } else { 1.0 };
            Some(ClipContext {
                heat_strip: window
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|&x| (x - min) / span).collect())
                    .collect(),
                center_features: video.frame(query.center - 1).to_vec(),
            })
        } else {
            None
        };
        Ok(Self {
            session_id: session_id.to_string(),
            video: query.video_id.clone(),
            frame: query.labeled_frame(),
            query: query.clone(),
            class_names: ds.class_names().to_vec(),
            context,
        })
    }
}

/// Source of labels for a batch of queries.
///
/// Returning fewer responses than queries means the missing ones were
/// dropped (for example a cancelled session); only returned labels are
/// charged to the budget.
pub trait Annotator {
    fn kind(&self) -> AnnotatorKind;

    fn annotate(
        &mut self,
        ds: &Dataset,
        round: usize,
        queries: &[ClipQuery],
    ) -> Result<Vec<AnnotationResponse>>;
}

/// Ground-truth label at the query's center frame. With probability `noise`
/// it is replaced by a uniformly drawn different class; the draw depends only
/// on `seed`, the video and the frame.
pub fn oracle_annotate(
    ds: &Dataset,
    q: &ClipQuery,
    noise: f64,
    seed: u64,
) -> Result<AnnotationResponse> {
    let video = ds.video(&q.video_id)?;
    let labels = video
        .labels()
        .ok_or_else(|| Error::MissingGroundTruth(q.video_id.clone()))?;
    let frame = q.labeled_frame();
    if frame == 0 || frame > labels.len() {
        return Err(Error::InvalidInput(format!(
            "frame {frame} is outside video `{}`",
            q.video_id
        )));
    }
    let mut class = labels[frame - 1];
    let c = ds.num_classes();
    if noise > 0.0 && c > 1 {
        let mut rng = stream(seed, &[TAG_ORACLE, hash_str(&q.video_id), frame as u64]);
        if rng.random::<f64>() < noise {
            class = (class + rng.random_range(1..c)) % c;
        }
    }
    Ok(AnnotationResponse {
        session_id: "oracle".into(),
        video: q.video_id.clone(),
        frame,
        class,
        annotator: AnnotatorKind::Oracle,
        timestamp_ms: None,
    })
}

#[derive(Debug, Clone, Default)]
pub struct OracleAnnotator {
    pub noise: f64,
    pub seed: u64,
}

impl OracleAnnotator {
    pub fn new(noise: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::InvalidConfig(format!(
                "label noise must be in [0, 1], got {noise}"
            )));
        }
        Ok(Self { noise, seed })
    }
}

impl Annotator for OracleAnnotator {
    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Oracle
    }

    fn annotate(
        &mut self,
        ds: &Dataset,
        _round: usize,
        queries: &[ClipQuery],
    ) -> Result<Vec<AnnotationResponse>> {
        queries
            .iter()
            .map(|q| oracle_annotate(ds, q, self.noise, self.seed))
            .collect()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

type FrameKey = (String, usize);

#[derive(Debug)]
struct PendingRound {
    session_id: String,
    requests: BTreeMap<FrameKey, AnnotationRequest>,
    answers: BTreeMap<FrameKey, AnnotationResponse>,
    opened: bool,
    cancelled: bool,
    closed: bool,
}

impl PendingRound {
    fn outstanding(&self) -> usize {
        self.requests.len() - self.answers.len()
    }

    fn done(&self) -> bool {
        self.cancelled || self.outstanding() == 0
    }
}

#[derive(Debug, Default)]
struct ExperimentSlot {
    round: Option<PendingRound>,
    history: Vec<RoundHistory>,
}

#[derive(Debug, Default)]
struct HubState {
    class_names: Vec<String>,
    experiments: BTreeMap<String, ExperimentSlot>,
    shutdown: bool,
}

/// Shared state between the active-learning loop and the HTTP handlers.
/// All mutations go through one mutex; the loop waits on a condition
/// variable until its round is answered or cancelled.
#[derive(Debug, Default)]
pub struct SessionHub {
    state: Mutex<HubState>,
    changed: Condvar,
}

impl SessionHub {
    pub fn new(class_names: Vec<String>) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(HubState {
                class_names,
                ..Default::default()
            }),
            changed: Condvar::new(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, HubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.lock().class_names.clone()
    }

    pub fn register_experiment(&self, experiment: &str) {
        self.lock()
            .experiments
            .entry(experiment.to_string())
            .or_default();
    }

    pub fn experiments(&self) -> Vec<String> {
        self.lock().experiments.keys().cloned().collect()
    }

    pub fn set_history(&self, experiment: &str, history: Vec<RoundHistory>) {
        self.lock()
            .experiments
            .entry(experiment.to_string())
            .or_default()
            .history = history;
    }

    pub fn history(&self, experiment: &str) -> Result<Vec<RoundHistory>> {
        self.lock()
            .experiments
            .get(experiment)
            .map(|s| s.history.clone())
            .ok_or_else(|| Error::UnknownExperiment(experiment.to_string()))
    }

    fn session_id(experiment: &str, round: usize) -> String {
        format!("{experiment}-r{round}")
    }

    /// Makes `requests` the outstanding queries of `experiment`. Called by
    /// the loop side.
    pub fn publish(
        &self,
        experiment: &str,
        round: usize,
        ds: &Dataset,
        queries: &[ClipQuery],
    ) -> Result<String> {
        let session_id = Self::session_id(experiment, round);
        let mut requests = BTreeMap::new();
        for q in queries {
            let req = AnnotationRequest::new(&session_id, ds, q, true)?;
            let key = (req.video.clone(), req.frame);
            if requests.insert(key, req).is_some() {
                return Err(Error::DuplicateLabel {
                    video: q.video_id.clone(),
                    frame: q.center,
                });
            }
        }
        let mut st = self.lock();
        let slot = st.experiments.entry(experiment.to_string()).or_default();
        slot.round = Some(PendingRound {
            session_id: session_id.clone(),
            requests,
            answers: BTreeMap::new(),
            opened: false,
            cancelled: false,
            closed: false,
        });
        drop(st);
        self.changed.notify_all();
        Ok(session_id)
    }

    /// Blocks until every published request of `experiment` is answered or
    /// the session is cancelled, then closes the round and returns the
    /// answers in (video, frame) order.
    pub fn wait_for_answers(&self, experiment: &str) -> Result<Vec<AnnotationResponse>> {
        let mut st = self.lock();
        loop {
            if st.shutdown {
                return Err(Error::Annotation("annotation service shut down".into()));
            }
            let round = st
                .experiments
                .get_mut(experiment)
                .and_then(|s| s.round.as_mut())
                .ok_or(Error::NoOutstandingQueries)?;
            if round.done() {
                round.closed = true;
                return Ok(round.answers.values().cloned().collect());
            }
            st = self.changed.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Opens (or re-opens) the session for the current round.
    pub fn create_session(&self, experiment: &str) -> Result<String> {
        let mut st = self.lock();
        let slot = st
            .experiments
            .get_mut(experiment)
            .ok_or_else(|| Error::UnknownExperiment(experiment.to_string()))?;
        match slot.round.as_mut() {
            Some(r) if !r.closed && !r.done() => {
                r.opened = true;
                Ok(r.session_id.clone())
            }
            _ => Err(Error::NoOutstandingQueries),
        }
    }

    fn with_session<T>(
        &self,
        session: &str,
        f: impl FnOnce(&mut PendingRound, usize) -> Result<T>,
    ) -> Result<T> {
        let mut st = self.lock();
        let c = st.class_names.len();
        let round = st
            .experiments
            .values_mut()
            .filter_map(|s| s.round.as_mut())
            .find(|r| r.session_id == session && r.opened)
            .ok_or_else(|| Error::UnknownSession(session.to_string()))?;
        f(round, c)
    }

    /// Unanswered requests, ordered by (video, frame).
    pub fn get_pending(&self, session: &str) -> Result<Vec<AnnotationRequest>> {
        self.with_session(session, |r, _| {
            if r.cancelled || r.closed {
                return Ok(Vec::new());
            }
            Ok(r.requests
                .iter()
                .filter(|(k, _)| !r.answers.contains_key(*k))
                .map(|(_, v)| v.clone())
                .collect())
        })
    }

    /// Records one human label; returns the number still outstanding.
    pub fn submit_label(
        &self,
        session: &str,
        video: &str,
        frame: usize,
        class: ClassId,
    ) -> Result<usize> {
        let remaining = self.with_session(session, |r, c| {
            let key = (video.to_string(), frame);
            if r.answers.contains_key(&key) {
                return Err(Error::DuplicateLabel {
                    video: video.to_string(),
                    frame,
                });
            }
            if r.cancelled || r.closed || !r.requests.contains_key(&key) {
                return Err(Error::UnknownRequest {
                    video: video.to_string(),
                    frame,
                });
            }
            if class >= c {
                return Err(Error::InvalidClass {
                    class,
                    num_classes: c,
                });
            }
            r.answers.insert(
                key,
                AnnotationResponse {
                    session_id: r.session_id.clone(),
                    video: video.to_string(),
                    frame,
                    class,
                    annotator: AnnotatorKind::Human,
                    timestamp_ms: Some(now_ms()),
                },
            );
            Ok(r.outstanding())
        })?;
        self.changed.notify_all();
        Ok(remaining)
    }

    /// Drops the unanswered requests of the session; answered ones are kept.
    pub fn cancel(&self, session: &str) -> Result<usize> {
        let answered = self.with_session(session, |r, _| {
            r.cancelled = true;
            Ok(r.answers.len())
        })?;
        self.changed.notify_all();
        Ok(answered)
    }

    /// Wakes every waiting loop with an error.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.changed.notify_all();
    }
}

/// Publishes each round to a [`SessionHub`] and waits for human answers.
pub struct HumanAnnotator {
    hub: Arc<SessionHub>,
    experiment: String,
}

impl HumanAnnotator {
    pub fn new(hub: Arc<SessionHub>, experiment: &str) -> Self {
        hub.register_experiment(experiment);
        Self {
            hub,
            experiment: experiment.to_string(),
        }
    }
}

impl Annotator for HumanAnnotator {
    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Human
    }

    fn annotate(
        &mut self,
        ds: &Dataset,
        round: usize,
        queries: &[ClipQuery],
    ) -> Result<Vec<AnnotationResponse>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        self.hub.publish(&self.experiment, round, ds, queries)?;
        self.hub.wait_for_answers(&self.experiment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFile {
    pub schema_version: u32,
    pub rounds: Vec<RoundHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub schema_version: u32,
    pub round: usize,
    pub queried_videos: Vec<String>,
    pub queries: Vec<ClipQuery>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialized `history.json` contents.
pub fn history_json(history: &[RoundHistory]) -> Result<String> {
    let file = HistoryFile {
        schema_version: SCHEMA_VERSION,
        rounds: history.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

/// Writes `history.json`, `history.csv` and `selections/round_XXX.json`.
pub fn export_results(history: &[RoundHistory], out: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::InvalidInput("cannot export an empty history".into()));
    }
    fs::create_dir_all(out.join("selections"))?;
    write_atomic(&out.join("history.json"), history_json(history)?.as_bytes())?;

    let metric_header = history
        .iter()
        .find_map(|h| h.metrics.as_ref())
        .map(|m| m.csv_header())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "round",
        "labeled_before",
        "labeled_after",
        "acquired",
        "budget",
        "queried_videos",
        "shortfall",
        "train_loss",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(metric_header.iter().cloned());
    header.push("stop".into());
    header.push("wall_time_ms".into());
    w.write_record(&header)?;
    for h in history {
        let mut row = vec![
            h.round.to_string(),
            h.labeled_before.to_string(),
            h.labeled_after.to_string(),
            (h.labeled_after - h.labeled_before).to_string(),
            h.budget.to_string(),
            h.queried_videos.len().to_string(),
            h.shortfall.to_string(),
            h.train_loss.map(|l| l.to_string()).unwrap_or_default(),
        ];
        match &h.metrics {
            Some(m) => row.extend(m.csv_row()),
            None => row.extend(metric_header.iter().map(|_| String::new())),
        }
        row.push(h.stop.map(|s| s.to_string()).unwrap_or_default());
        row.push(h.wall_time_ms.map(|t| t.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(&out.join("history.csv"), &bytes)?;

    for h in history {
        let sel = SelectionFile {
            schema_version: SCHEMA_VERSION,
            round: h.round,
            queried_videos: h.queried_videos.clone(),
            queries: h.queries.clone(),
        };
        let path = out
            .join("selections")
            .join(format!("round_{:03}.json", h.round));
        write_atomic(&path, serde_json::to_string_pretty(&sel)?.as_bytes())?;
    }
    Ok(())
}

pub fn load_history(path: &Path) -> Result<Vec<RoundHistory>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let file: HistoryFile = serde_json::from_str(&text)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported schema version {}", file.schema_version),
        });
    }
    Ok(file.rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{ClipGeometry, ClipStrategy};
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use std::thread;

    fn small() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_videos: 3,
            num_test_videos: 0,
            mean_frames: 120,
            ..Default::default()
        })
        .unwrap()
    }

    fn queries(ds: &Dataset, n: usize) -> Vec<ClipQuery> {
        let g = ClipGeometry::from_clip_len(20);
        let mut out = Vec::new();
        for (i, v) in ds.videos().iter().enumerate() {
            for j in 0..n {
                let c = 5 + 20 * j + i;
                out.push(
                    g.query(v.id(), c, v.len(), ClipStrategy::Bact, None)
                        .unwrap(),
                );
            }
        }
        out
    }

    #[test]
    fn oracle_noise_levels() {
        let ds = small();
        let qs = queries(&ds, 4);
        for q in &qs {
            let gt = ds.video(&q.video_id).unwrap().labels().unwrap()[q.center - 1];
            assert_eq!(oracle_annotate(&ds, q, 0.0, 1).unwrap().class, gt);
            assert_ne!(oracle_annotate(&ds, q, 1.0, 1).unwrap().class, gt);
        }
        let q = &qs[0];
        let gt = ds.video(&q.video_id).unwrap().labels().unwrap()[q.center - 1];
        let flips = (0..10_000u64)
            .filter(|&s| oracle_annotate(&ds, q, 0.1, s).unwrap().class != gt)
            .count();
        assert!((800..=1200).contains(&flips), "{flips}");
        assert_eq!(
            oracle_annotate(&ds, q, 0.5, 9).unwrap(),
            oracle_annotate(&ds, q, 0.5, 9).unwrap()
        );
        assert!(OracleAnnotator::new(1.5, 0).is_err());
    }

    #[test]
    fn oracle_needs_ground_truth() {
        let v =
            crate::dataset::VideoRecord::new("u", ndarray::Array2::zeros((30, 2)), None).unwrap();
        let ds = Dataset::new(vec![v], vec!["a".into(), "b".into()], Default::default()).unwrap();
        let q = ClipGeometry::from_clip_len(20)
            .query("u", 10, 30, ClipStrategy::Random, None)
            .unwrap();
        assert!(matches!(
            oracle_annotate(&ds, &q, 0.0, 0),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn requests_never_carry_labels() {
        let ds = small();
        let q = &queries(&ds, 1)[0];
        let req = AnnotationRequest::new("s", &ds, q, true).unwrap();
        let json = serde_json::to_value(&req).unwrap();
        assert!(json.get("label").is_none() && json.get("class").is_none());
        let ctx = req.context.unwrap();
        assert_eq!(ctx.heat_strip.len(), q.interval.len());
        assert!(ctx
            .heat_strip
            .iter()
            .flatten()
            .all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(req.frame, q.center);
    }

    #[test]
    fn session_lifecycle() {
        let ds = small();
        let qs = queries(&ds, 4);
        assert_eq!(qs.len(), 12);
        let hub = SessionHub::new(ds.class_names().to_vec());
        hub.register_experiment("exp");
        assert!(matches!(
            hub.create_session("exp"),
            Err(Error::NoOutstandingQueries)
        ));
        assert!(matches!(
            hub.create_session("nope"),
            Err(Error::UnknownExperiment(_))
        ));

        let waiter = {
            let hub = Arc::clone(&hub);
            let ds = ds.clone();
            let qs = qs.clone();
            thread::spawn(move || HumanAnnotator::new(hub, "exp").annotate(&ds, 1, &qs))
        };
        let sid = loop {
            match hub.create_session("exp") {
                Ok(s) => break s,
                Err(_) => thread::yield_now(),
            }
        };
        assert_eq!(sid, "exp-r1");
        assert_eq!(hub.create_session("exp").unwrap(), sid);
        let pending = hub.get_pending(&sid).unwrap();
        assert_eq!(pending.len(), 12);
        let mut keys: Vec<_> = pending.iter().map(|r| (r.video.clone(), r.frame)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        for r in pending.iter().take(3) {
            hub.submit_label(&sid, &r.video, r.frame, 0).unwrap();
        }
        assert_eq!(hub.get_pending(&sid).unwrap().len(), 9);
        let first = &pending[0];
        assert!(matches!(
            hub.submit_label(&sid, &first.video, first.frame, 1),
            Err(Error::DuplicateLabel { .. })
        ));
        assert!(matches!(
            hub.submit_label(&sid, &first.video, 9999, 1),
            Err(Error::UnknownRequest { .. })
        ));
        assert!(matches!(
            hub.submit_label(&sid, &pending[5].video, pending[5].frame, 99),
            Err(Error::InvalidClass { .. })
        ));
        assert!(matches!(
            hub.get_pending("bogus"),
            Err(Error::UnknownSession(_))
        ));

        keys.drain(..3);
        for (v, f) in keys {
            hub.submit_label(&sid, &v, f, 2).unwrap();
        }
        let answers = waiter.join().unwrap().unwrap();
        assert_eq!(answers.len(), 12);
        assert!(answers
            .iter()
            .all(|a| a.annotator == AnnotatorKind::Human && a.timestamp_ms.is_some()));
        assert!(hub.get_pending(&sid).unwrap().is_empty());
        assert!(matches!(
            hub.create_session("exp"),
            Err(Error::NoOutstandingQueries)
        ));
    }

    #[test]
    fn cancel_keeps_answered_labels_only() {
        let ds = small();
        let qs = queries(&ds, 2);
        let hub = SessionHub::new(ds.class_names().to_vec());
        let waiter = {
            let hub = Arc::clone(&hub);
            let ds = ds.clone();
            let qs = qs.clone();
            thread::spawn(move || HumanAnnotator::new(hub, "e").annotate(&ds, 3, &qs))
        };
        let sid = loop {
            if let Ok(s) = hub.create_session("e") {
                break s;
            }
            thread::yield_now();
        };
        let p = hub.get_pending(&sid).unwrap();
        hub.submit_label(&sid, &p[0].video, p[0].frame, 1).unwrap();
        assert_eq!(hub.cancel(&sid).unwrap(), 1);
        let answers = waiter.join().unwrap().unwrap();
        assert_eq!(answers.len(), 1);
        assert_eq!(answers[0].class, 1);
    }

    #[test]
    fn shutdown_wakes_the_loop_with_an_error() {
        let ds = small();
        let qs = queries(&ds, 1);
        let hub = SessionHub::new(ds.class_names().to_vec());
        let waiter = {
            let hub = Arc::clone(&hub);
            thread::spawn(move || HumanAnnotator::new(hub, "e").annotate(&ds, 1, &qs))
        };
        while hub.create_session("e").is_err() {
            thread::yield_now();
        }
        hub.shutdown();
        assert!(waiter.join().unwrap().is_err());
    }

    #[test]
    fn export_round_trips() {
        use crate::active_loop::{run_experiment, LoopConfig, Quantity};
        let ds = generate_synthetic(&SyntheticConfig {
            num_videos: 8,
            num_test_videos: 2,
            mean_frames: 120,
            ..Default::default()
        })
        .unwrap();
        let cfg = LoopConfig {
            rounds: 3,
            budget: Quantity::Count(100),
            query_videos: Quantity::Count(2),
            init_videos: Quantity::Count(2),
            predictor: crate::predictor::PredictorConfig {
                epochs: 5,
                mc_samples: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let history = run_experiment(&ds, &cfg, &mut OracleAnnotator::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(export_results(&[], dir.path()).is_err());
        export_results(&history, dir.path()).unwrap();
        assert_eq!(
            load_history(&dir.path().join("history.json")).unwrap(),
            history
        );
        let csv = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(csv.lines().count(), history.len() + 1);
        for h in &history {
            let p = dir
                .path()
                .join("selections")
                .join(format!("round_{:03}.json", h.round));
            let sel: SelectionFile = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
            assert_eq!(sel.queries, h.queries);
        }
        assert!(matches!(
            load_history(&dir.path().join("missing.json")),
            Err(Error::MissingFile(_))
        ));
    }
}
