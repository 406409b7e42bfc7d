//! Videos, labels and segments.
//!
//! Frame indices are 1-based wherever they cross a public boundary
//! ([`Segment`], clip queries, label requests); storage is 0-based.

mod io;
mod synthetic;

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::{ClassId, Error, Result};

pub use io::{load_dataset, read_features, save_dataset, write_features, FeatureFormat};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// One untrimmed video: a `T x D` feature matrix and optional frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    id: String,
    features: Array2<f32>,
    labels: Option<Vec<ClassId>>,
}

impl VideoRecord {
    pub fn new(
        id: impl Into<String>,
        features: Array2<f32>,
        labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        let id = id.into();
        let (t, d) = features.dim();
        if t == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "video `{id}` needs at least one frame and one feature (got {t}x{d})"
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != t {
                return Err(Error::FrameCountMismatch {
                    video: id,
                    features: t,
                    labels: labels.len(),
                });
            }
        }
        Ok(Self {
            id,
            features,
            labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Frame count `T`.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    /// Feature row of a 0-based frame.
    pub fn frame(&self, t: usize) -> ArrayView1<'_, f32> {
        self.features.row(t)
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn segments(&self) -> Option<Vec<Segment>> {
        self.labels
            .as_deref()
            .map(|l| segments_from_labels(l).expect("labels are non-empty"))
    }
}

/// A maximal run of one label. `start` and `end` are 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: ClassId,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Run-length encodes a label sequence.
pub fn segments_from_labels(labels: &[ClassId]) -> Result<Vec<Segment>> {
    let (&first, _) = labels
        .split_first()
        .ok_or_else(|| Error::InvalidInput("cannot segment an empty label sequence".into()))?;
    let mut segments = vec![Segment {
        label: first,
        start: 1,
        end: 1,
    }];
    for (i, &label) in labels.iter().enumerate().skip(1) {
        let last = segments.last_mut().unwrap();
        if label == last.label {
            last.end = i + 1;
        } else {
            segments.push(Segment {
                label,
                start: i + 1,
                end: i + 1,
            });
        }
    }
    Ok(segments)
}

/// Inverse of [`segments_from_labels`].
pub fn expand_segments(segments: &[Segment]) -> Vec<ClassId> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.len()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// A collection of videos sharing one class vocabulary and feature space.
///
/// Videos are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    videos: Vec<VideoRecord>,
    class_names: Vec<String>,
    split: Split,
}

impl Dataset {
    pub fn new(
        mut videos: Vec<VideoRecord>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        videos.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in videos.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidInput(format!(
                    "duplicate video id `{}`",
                    pair[0].id
                )));
            }
        }
        let c = class_names.len();
        for v in &videos {
            if let Some(&bad) = v.labels().and_then(|l| l.iter().find(|&&y| y >= c)) {
                return Err(Error::InvalidClass {
                    class: bad,
                    num_classes: c,
                });
            }
        }
        if let Some(first) = videos.first() {
            if let Some(v) = videos.iter().find(|v| v.dim() != first.dim()) {
                return Err(Error::LengthMismatch {
                    what: format!("feature dimension of `{}` vs `{}`", v.id, first.id),
                    left: v.dim(),
                    right: first.dim(),
                });
            }
        }
        let ds = Self {
            videos,
            class_names,
            split,
        };
        let mut seen = BTreeSet::new();
        for id in ds.split.train.iter().chain(&ds.split.test) {
            ds.video(id)?;
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "video `{id}` appears twice in the splits"
                )));
            }
        }
        Ok(ds)
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Feature dimension shared by all videos (0 for an empty dataset).
    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, VideoRecord::dim)
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn video(&self, id: &str) -> Result<&VideoRecord> {
        self.videos
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .map(|i| &self.videos[i])
            .map_err(|_| Error::UnknownVideo(id.to_string()))
    }

    pub fn train_videos(&self) -> impl Iterator<Item = &VideoRecord> {
        self.split.train.iter().map(|id| self.video(id).unwrap())
    }

    pub fn test_videos(&self) -> impl Iterator<Item = &VideoRecord> {
        self.split.test.iter().map(|id| self.video(id).unwrap())
    }

    pub fn total_train_frames(&self) -> usize {
        self.train_videos().map(VideoRecord::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(label: ClassId, start: usize, end: usize) -> Segment {
        Segment { label, start, end }
    }

    #[test]
    fn run_length_examples() {
        assert_eq!(
            segments_from_labels(&[0, 0, 1, 1, 1, 2]).unwrap(),
            vec![seg(0, 1, 2), seg(1, 3, 5), seg(2, 6, 6)]
        );
        assert_eq!(segments_from_labels(&[5]).unwrap(), vec![seg(5, 1, 1)]);
        assert!(segments_from_labels(&[]).is_err());
    }

    proptest! {
        #[test]
        fn expansion_inverts_segmentation(labels in prop::collection::vec(0usize..4, 1..200)) {
            let segs = segments_from_labels(&labels).unwrap();
            prop_assert_eq!(expand_segments(&segs), labels);
            for w in segs.windows(2) {
                prop_assert_ne!(w[0].label, w[1].label);
                prop_assert_eq!(w[0].end + 1, w[1].start);
            }
        }
    }

    #[test]
    fn video_rejects_label_length_mismatch() {
        let err = VideoRecord::new("a", Array2::zeros((3, 2)), Some(vec![0, 1])).unwrap_err();
        assert!(matches!(err, Error::FrameCountMismatch { .. }));
        assert!(VideoRecord::new("a", Array2::zeros((0, 2)), None).is_err());
    }

    #[test]
    fn dataset_validates_ids_classes_and_splits() {
        let v = |id: &str, labels: Vec<usize>| {
            VideoRecord::new(id, Array2::zeros((labels.len(), 1)), Some(labels)).unwrap()
        };
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(Dataset::new(
            vec![v("x", vec![0]), v("x", vec![1])],
            names.clone(),
            Split::default()
        )
        .is_err());
        assert!(matches!(
            Dataset::new(vec![v("x", vec![2])], names.clone(), Split::default()),
            Err(Error::InvalidClass { .. })
        ));
        let split = Split {
            train: vec!["missing".into()],
            test: vec![],
        };
        assert!(Dataset::new(vec![v("x", vec![0])], names.clone(), split).is_err());
        let ds = Dataset::new(
            vec![v("y", vec![0]), v("x", vec![1, 1])],
            names,
            Split {
                train: vec!["x".into()],
                test: vec!["y".into()],
            },
        )
        .unwrap();
        assert_eq!(ds.videos()[0].id(), "x");
        assert_eq!(ds.total_train_frames(), 2);
    }
}
