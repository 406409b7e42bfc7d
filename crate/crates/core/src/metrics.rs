//! Frame accuracy, segmental edit score, segmental overlap F1@k and per-class
//! precision/recall/F1. All scores are percentages.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{segments_from_labels, Segment};
use crate::{ClassId, Error, Result};

/// Overlap thresholds reported by default (F1@10, F1@25, F1@50).
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];

fn check_pair(pred: &[ClassId], gt: &[ClassId]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "prediction vs ground truth".into(),
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty label sequence".into()));
    }
    Ok(())
}

pub fn frame_accuracy(pred: &[ClassId], gt: &[ClassId]) -> Result<f64> {
    check_pair(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn transcript(labels: &[ClassId]) -> Result<Vec<ClassId>> {
    Ok(segments_from_labels(labels)?
        .into_iter()
        .map(|s| s.label)
        .collect())
}

/// Edit distance and normaliser for one pair of label sequences.
fn edit_parts(pred: &[ClassId], gt: &[ClassId]) -> Result<(usize, usize)> {
    let p = transcript(pred)?;
    let g = transcript(gt)?;
    Ok((levenshtein(&p, &g), p.len().max(g.len())))
}

/// `100 * (1 - lev(P, G) / max(|P|, |G|))` over segment transcripts, floored
/// at zero. Sequences may differ in length.
pub fn edit_score(pred: &[ClassId], gt: &[ClassId]) -> Result<f64> {
    let (dist, norm) = edit_parts(pred, gt)?;
    Ok((100.0 * (1.0 - dist as f64 / norm as f64)).max(0.0))
}

/// Intersection-over-union of two 1-based inclusive segments.
pub fn segment_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) + 1).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl OverlapCounts {
    pub fn scores(&self) -> SegmentF1 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        SegmentF1 {
            f1: harmonic(precision, recall),
            precision: 100.0 * precision,
            recall: 100.0 * recall,
        }
    }
}

impl std::ops::AddAssign for OverlapCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of two fractions, returned as a percentage.
fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * p * r / (p + r)
    }
}

/// Greedy overlap matching. Predicted segments are visited in temporal order;
/// each takes the same-class, not-yet-matched ground-truth segment with the
/// highest IoU (first one on ties) if that IoU is at least `tau`.
///
/// Returns, for every predicted segment, the index of the matched
/// ground-truth segment.
pub fn overlap_matches(
    pred: &[ClassId],
    gt: &[ClassId],
    tau: f64,
) -> Result<(Vec<Option<usize>>, usize)> {
    check_pair(pred, gt)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!(
            "overlap threshold must be in (0, 1), got {tau}"
        )));
    }
    let p_segs = segments_from_labels(pred)?;
    let g_segs = segments_from_labels(gt)?;
    let mut used = vec![false; g_segs.len()];
    let matches = p_segs
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in g_segs.iter().enumerate() {
                if used[j] || g.label != p.label {
                    continue;
                }
                let iou = segment_iou(p, g);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= tau => {
                    used[j] = true;
                    Some(j)
                }
                _ => None,
            }
        })
        .collect();
    Ok((matches, g_segs.len()))
}

pub fn overlap_counts(pred: &[ClassId], gt: &[ClassId], tau: f64) -> Result<OverlapCounts> {
    let (matches, n_gt) = overlap_matches(pred, gt, tau)?;
    let tp = matches.iter().filter(|m| m.is_some()).count();
    Ok(OverlapCounts {
        tp,
        fp: matches.len() - tp,
        fn_: n_gt - tp,
    })
}

/// Segmental F1 at overlap threshold `tau` for a single video.
pub fn f1_at_overlap(pred: &[ClassId], gt: &[ClassId], tau: f64) -> Result<SegmentF1> {
    Ok(overlap_counts(pred, gt, tau)?.scores())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentF1 {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// How per-video quantities are combined across a set of videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the per-video scores.
    #[default]
    PerVideo,
    /// Sum the underlying counts over all videos, then score once.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub thresholds: Vec<f64>,
    pub edit: Aggregation,
    pub f1: Aggregation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            edit: Aggregation::PerVideo,
            f1: Aggregation::Pooled,
        }
    }
}

/// Overlap threshold as an integer percentage, used as the report key.
pub fn threshold_key(tau: f64) -> u32 {
    (tau * 100.0).round() as u32
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub accuracy: f64,
    pub edit: f64,
    /// Keyed by overlap threshold in percent.
    pub f1: BTreeMap<u32, SegmentF1>,
    pub per_class: BTreeMap<ClassId, ClassScores>,
    pub frames_evaluated: usize,
}

impl MetricReport {
    pub fn f1_at(&self, percent: u32) -> Option<f64> {
        self.f1.get(&percent).map(|s| s.f1)
    }

    /// Scalar fields in their fixed order (`acc`, `edit`, `f1_XX`...,
    /// `precision_XX`..., `recall_XX`...). Used for CSV and JSON output.
    pub fn flat_fields(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("acc".to_string(), self.accuracy),
            ("edit".to_string(), self.edit),
        ];
        out.extend(self.f1.iter().map(|(k, s)| (format!("f1_{k}"), s.f1)));
        out.extend(
            self.f1
                .iter()
                .map(|(k, s)| (format!("precision_{k}"), s.precision)),
        );
        out.extend(
            self.f1
                .iter()
                .map(|(k, s)| (format!("recall_{k}"), s.recall)),
        );
        out
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.flat_fields().into_iter().map(|(k, _)| k).collect();
        h.push("frames".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r: Vec<String> = self
            .flat_fields()
            .into_iter()
            .map(|(_, v)| v.to_string())
            .collect();
        r.push(self.frames_evaluated.to_string());
        r
    }
}

#[derive(Serialize, Deserialize)]
struct ClassRow {
    class: ClassId,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let fields = self.flat_fields();
        let mut map = s.serialize_map(Some(fields.len() + 2))?;
        for (k, v) in &fields {
            map.serialize_entry(k, v)?;
        }
        map.serialize_entry("frames", &self.frames_evaluated)?;
        let rows: Vec<ClassRow> = self
            .per_class
            .iter()
            .map(|(&class, c)| ClassRow {
                class,
                precision: c.precision,
                recall: c.recall,
                f1: c.f1,
            })
            .collect();
        map.serialize_entry("per_class", &rows)?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for MetricReport {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut raw = BTreeMap::<String, serde_json::Value>::deserialize(d)?;
        let mut take_f64 = |k: &str| -> std::result::Result<f64, D::Error> {
            raw.remove(k)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| D::Error::custom(format!("missing numeric field `{k}`")))
        };
        let accuracy = take_f64("acc")?;
        let edit = take_f64("edit")?;
        let frames_evaluated =
            raw.remove("frames")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| D::Error::custom("missing field `frames`"))? as usize;
        let per_class_rows: Vec<ClassRow> = raw
            .remove("per_class")
            .map(serde_json::from_value)
            .transpose()
            .map_err(D::Error::custom)?
            .unwrap_or_default();
        let mut f1 = BTreeMap::new();
        let keys: Vec<u32> = raw
            .keys()
            .filter_map(|k| k.strip_prefix("f1_").and_then(|p| p.parse().ok()))
            .collect();
        for k in keys {
            let mut get = |prefix: &str| {
                let name = format!("{prefix}_{k}");
                raw.remove(&name)
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| D::Error::custom(format!("missing numeric field `{name}`")))
            };
            f1.insert(
                k,
                SegmentF1 {
                    f1: get("f1")?,
                    precision: get("precision")?,
                    recall: get("recall")?,
                },
            );
        }
        if let Some(k) = raw.keys().next() {
            return Err(D::Error::custom(format!("unknown field `{k}`")));
        }
        Ok(MetricReport {
            accuracy,
            edit,
            f1,
            per_class: per_class_rows
                .into_iter()
                .map(|r| {
                    (
                        r.class,
                        ClassScores {
                            precision: r.precision,
                            recall: r.recall,
                            f1: r.f1,
                        },
                    )
                })
                .collect(),
            frames_evaluated,
        })
    }
}

/// Per-class precision/recall/F1 from the pooled frame confusion counts.
/// Every class that occurs in a prediction or in the ground truth is reported.
pub fn per_class_scores<'a, I>(pairs: I) -> BTreeMap<ClassId, ClassScores>
where
    I: IntoIterator<Item = (&'a [ClassId], &'a [ClassId])>,
{
    // class -> (true positives, predicted count, ground-truth count)
    let mut counts: BTreeMap<ClassId, (usize, usize, usize)> = BTreeMap::new();
    for (pred, gt) in pairs {
        for (&p, &g) in pred.iter().zip(gt) {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
            if p == g {
                counts.entry(p).or_default().0 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(c, (tp, npred, ngt))| {
            let p = ratio(tp, npred);
            let r = ratio(tp, ngt);
            (
                c,
                ClassScores {
                    precision: 100.0 * p,
                    recall: 100.0 * r,
                    f1: harmonic(p, r),
                },
            )
        })
        .collect()
}

/// Scores a set of videos. Accuracy and per-class scores pool all frames;
/// edit and F1 follow `opts`.
pub fn evaluate(
    preds: &BTreeMap<String, Vec<ClassId>>,
    gts: &BTreeMap<String, Vec<ClassId>>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let pred_ids: BTreeSet<&String> = preds.keys().collect();
    let gt_ids: BTreeSet<&String> = gts.keys().collect();
    if pred_ids != gt_ids {
        let diff: Vec<&&String> = pred_ids.symmetric_difference(&gt_ids).collect();
        return Err(Error::InvalidInput(format!(
            "prediction and ground-truth video ids differ: {diff:?}"
        )));
    }
    if gts.is_empty() {
        return Err(Error::InvalidInput("no videos to evaluate".into()));
    }
    for &tau in &opts.thresholds {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!(
                "overlap threshold must be in (0, 1), got {tau}"
            )));
        }
    }

    let mut hits = 0usize;
    let mut frames = 0usize;
    let mut edit_sum = 0.0;
    let (mut dist_sum, mut norm_sum) = (0usize, 0usize);
    let mut pooled = vec![OverlapCounts::default(); opts.thresholds.len()];
    let mut averaged = vec![(0.0, 0.0, 0.0); opts.thresholds.len()];
    for (id, gt) in gts {
        let pred = &preds[id];
        check_pair(pred, gt)?;
        hits += pred.iter().zip(gt).filter(|(p, g)| p == g).count();
        frames += gt.len();
        let (dist, norm) = edit_parts(pred, gt)?;
        edit_sum += (100.0 * (1.0 - dist as f64 / norm as f64)).max(0.0);
        dist_sum += dist;
        norm_sum += norm;
        for (i, &tau) in opts.thresholds.iter().enumerate() {
            let c = overlap_counts(pred, gt, tau)?;
            pooled[i] += c;
            let s = c.scores();
            averaged[i].0 += s.f1;
            averaged[i].1 += s.precision;
            averaged[i].2 += s.recall;
        }
    }
    let n = gts.len() as f64;
    let edit = match opts.edit {
        Aggregation::PerVideo => edit_sum / n,
        Aggregation::Pooled => (100.0 * (1.0 - dist_sum as f64 / norm_sum as f64)).max(0.0),
    };
    let f1 = opts
        .thresholds
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let s = match opts.f1 {
                Aggregation::Pooled => pooled[i].scores(),
                Aggregation::PerVideo => SegmentF1 {
                    f1: averaged[i].0 / n,
                    precision: averaged[i].1 / n,
                    recall: averaged[i].2 / n,
                },
            };
            (threshold_key(tau), s)
        })
        .collect();
    let per_class = per_class_scores(
        gts.iter()
            .map(|(id, g)| (preds[id].as_slice(), g.as_slice())),
    );
    Ok(MetricReport {
        accuracy: 100.0 * hits as f64 / frames as f64,
        edit,
        f1,
        per_class,
        frames_evaluated: frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn expand(runs: &[(ClassId, usize)]) -> Vec<ClassId> {
        runs.iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(frame_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 75.0);
        assert!(frame_accuracy(&[0], &[0, 1]).is_err());
        assert!(frame_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn edit_examples() {
        assert_eq!(edit_score(&[0, 0, 1], &[0, 0, 1]).unwrap(), 100.0);
        // transcripts [A,B,C] vs [A,C]
        let e = edit_score(&[0, 1, 2], &[0, 0, 2]).unwrap();
        assert!((e - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(edit_score(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(edit_score(&[], &[0]).is_err());
    }

    #[test]
    fn f1_examples() {
        let gt = expand(&[(0, 50), (1, 50)]);
        let s = f1_at_overlap(&gt, &gt, 0.5).unwrap();
        assert_eq!((s.f1, s.precision, s.recall), (100.0, 100.0, 100.0));

        let pred = expand(&[(0, 40), (1, 60)]);
        let a = Segment {
            label: 0,
            start: 1,
            end: 40,
        };
        let b = Segment {
            label: 0,
            start: 1,
            end: 50,
        };
        assert!((segment_iou(&a, &b) - 0.8).abs() < 1e-12);
        let c = Segment {
            label: 1,
            start: 41,
            end: 100,
        };
        let d = Segment {
            label: 1,
            start: 51,
            end: 100,
        };
        assert!((segment_iou(&c, &d) - 50.0 / 60.0).abs() < 1e-12);
        assert_eq!(f1_at_overlap(&pred, &gt, 0.5).unwrap().f1, 100.0);

        let pred = expand(&[(0, 10), (2, 40)]);
        let gt = expand(&[(0, 50)]);
        assert_eq!(f1_at_overlap(&pred, &gt, 0.25).unwrap().f1, 0.0);
        assert!(f1_at_overlap(&gt, &gt, 1.0).is_err());
        assert!(f1_at_overlap(&gt, &gt, 0.0).is_err());
    }

    #[test]
    fn evaluate_averages_edit_per_video() {
        let mut preds = BTreeMap::new();
        let mut gts = BTreeMap::new();
        preds.insert("a".to_string(), vec![0, 0, 1, 1]);
        gts.insert("a".to_string(), vec![0, 0, 1, 1]);
        preds.insert("b".to_string(), vec![1; 4]);
        gts.insert("b".to_string(), vec![0; 4]);
        let r = evaluate(&preds, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(r.edit, 50.0);
        assert_eq!(r.accuracy, 50.0);
        assert_eq!(r.frames_evaluated, 8);
        assert_eq!(r.f1.keys().copied().collect::<Vec<_>>(), vec![10, 25, 50]);
        // pooled: 2 TP of 3 predicted, 2 of 3 true segments
        assert!((r.f1_at(50).unwrap() - 200.0 / 3.0).abs() < 1e-9);

        gts.remove("b");
        assert!(evaluate(&preds, &gts, &EvalOptions::default()).is_err());
    }

    #[test]
    fn evaluate_single_perfect_video() {
        let mut m = BTreeMap::new();
        m.insert("v".to_string(), vec![2, 2, 0, 1, 1]);
        let r = evaluate(&m, &m, &EvalOptions::default()).unwrap();
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.edit, 100.0);
        assert!(r.f1.values().all(|s| s.f1 == 100.0));
        assert!(r.per_class.values().all(|c| c.f1 == 100.0));
    }

    #[test]
    fn report_json_round_trip_uses_fixed_names() {
        let mut preds = BTreeMap::new();
        preds.insert("a".to_string(), vec![0, 1, 1, 2]);
        let mut gts = BTreeMap::new();
        gts.insert("a".to_string(), vec![0, 0, 1, 2]);
        let r = evaluate(&preds, &gts, &EvalOptions::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in ["acc", "edit", "f1_10", "f1_25", "f1_50"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back: MetricReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_eq!(
            r.csv_header()[..5],
            ["acc", "edit", "f1_10", "f1_25", "f1_50"]
        );
        assert_eq!(r.csv_header().len(), r.csv_row().len());
    }

    fn labels_strategy() -> impl Strategy<Value = (Vec<ClassId>, Vec<ClassId>)> {
        (1usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(0usize..3, n),
                prop::collection::vec(0usize..3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn self_comparison_is_perfect(labels in prop::collection::vec(0usize..5, 1..100)) {
            prop_assert_eq!(edit_score(&labels, &labels).unwrap(), 100.0);
            prop_assert_eq!(frame_accuracy(&labels, &labels).unwrap(), 100.0);
        }

        #[test]
        fn f1_is_non_increasing_in_threshold((p, g) in labels_strategy()) {
            let mut last = f64::INFINITY;
            for tau in [0.05, 0.1, 0.25, 0.5, 0.75, 0.9] {
                let f = f1_at_overlap(&p, &g, tau).unwrap().f1;
                prop_assert!(f <= last + 1e-12);
                last = f;
            }
        }

        #[test]
        fn matching_consumes_each_ground_truth_once((p, g) in labels_strategy(), tau in 0.01f64..0.99) {
            let (matches, _) = overlap_matches(&p, &g, tau).unwrap();
            let used: Vec<usize> = matches.iter().flatten().copied().collect();
            let unique: BTreeSet<usize> = used.iter().copied().collect();
            prop_assert_eq!(unique.len(), used.len());
        }

        #[test]
        fn metrics_are_invariant_under_class_permutation((p, g) in labels_strategy()) {
            let perm = [2usize, 0, 1];
            let pp: Vec<_> = p.iter().map(|&c| perm[c]).collect();
            let gg: Vec<_> = g.iter().map(|&c| perm[c]).collect();
            prop_assert_eq!(frame_accuracy(&p, &g).unwrap(), frame_accuracy(&pp, &gg).unwrap());
            prop_assert_eq!(edit_score(&p, &g).unwrap(), edit_score(&pp, &gg).unwrap());
            for tau in DEFAULT_THRESHOLDS {
                prop_assert_eq!(f1_at_overlap(&p, &g, tau).unwrap(), f1_at_overlap(&pp, &gg, tau).unwrap());
            }
        }
    }
}
