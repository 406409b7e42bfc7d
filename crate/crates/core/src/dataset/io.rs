//! Dataset directory layout:
//!
//! ```text
//! root/
//!   features/<id>.feat   binary: b"BACTFEAT", u32 T, u32 D, T*D f32 (all little-endian, row-major)
//!   features/<id>.csv    alternative: one frame per line, comma-separated
//!   groundTruth/<id>.txt one class name per frame
//!   mapping.txt          "<index> <class name>" per line
//!   splits/train.txt     one video id per line
//!   splits/test.txt
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Dataset, Split, VideoRecord};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BACTFEAT";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    #[default]
    Binary,
    Csv,
}

impl FeatureFormat {
    fn extension(self) -> &'static str {
        match self {
            FeatureFormat::Binary => "feat",
            FeatureFormat::Csv => "csv",
        }
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Writes `bytes` next to `path` and renames over it.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode_binary(features: &Array2<f32>) -> Vec<u8> {
    let (t, d) = features.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for x in features.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_binary(path: &Path, bytes: &[u8]) -> Result<Array2<f32>> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(format_err(path, "missing BACTFEAT header"));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * t * d {
        return Err(format_err(
            path,
            format!("header says {t}x{d} but body has {} bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((t, d), data).map_err(|e| format_err(path, e.to_string()))
}

fn encode_csv(features: &Array2<f32>) -> Vec<u8> {
    let mut out = String::new();
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn decode_csv(path: &Path, text: &str) -> Result<Array2<f32>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let x: f32 = field
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad number `{field}`", n + 1)))?;
            data.push(x);
        }
        let w = data.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(format_err(path, format!("line {}: ragged row", n + 1)));
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), data)
        .map_err(|e| format_err(path, e.to_string()))
}

/// Reads one feature file, dispatching on the extension.
pub fn read_features(path: &Path) -> Result<Array2<f32>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("feat") => decode_binary(path, &fs::read(path)?),
        Some("csv") => decode_csv(path, &fs::read_to_string(path)?),
        _ => Err(format_err(path, "expected a .feat or .csv file")),
    }
}

pub fn write_features(path: &Path, features: &Array2<f32>, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Binary => encode_binary(features),
        FeatureFormat::Csv => encode_csv(features),
    };
    write_atomic(path, &bytes)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn read_mapping(path: &Path) -> Result<Vec<String>> {
    let mut entries = Vec::new();
    for line in read_lines(path)? {
        let (idx, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format_err(path, format!("expected `<int> <name>`, got `{line}`")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| format_err(path, format!("bad class index `{idx}`")))?;
        entries.push((idx, name.trim().to_string()));
    }
    entries.sort();
    for (expected, (idx, _)) in entries.iter().enumerate() {
        if *idx != expected {
            return Err(format_err(
                path,
                "class indices must be 0..C-1 without gaps",
            ));
        }
    }
    Ok(entries.into_iter().map(|(_, n)| n).collect())
}

/// Loads a dataset from the standard directory layout. Ground truth and split
/// files are optional; without splits every video is a training video.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let class_names = read_mapping(&root.join("mapping.txt"))?;
    let lookup: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let feature_dir = root.join("features");
    if !feature_dir.is_dir() {
        return Err(Error::MissingFile(feature_dir));
    }
    let mut feature_files: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&feature_dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if matches!(ext, Some("feat" | "csv")) {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            feature_files.push((id, path));
        }
    }
    feature_files.sort();

    let mut videos = Vec::with_capacity(feature_files.len());
    for pair in feature_files.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(format_err(
                &pair[1].1,
                format!("video `{}` has both .feat and .csv features", pair[0].0),
            ));
        }
    }
    for (id, path) in feature_files {
        let features = read_features(&path)?;
        let gt_path = root.join("groundTruth").join(format!("{id}.txt"));
        let labels = if gt_path.exists() {
            let names = read_lines(&gt_path)?;
            let labels = names
                .iter()
                .map(|n| {
                    lookup
                        .get(n.as_str())
                        .copied()
                        .ok_or_else(|| Error::UnknownLabel {
                            video: id.clone(),
                            label: n.clone(),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != features.nrows() {
                return Err(Error::FrameCountMismatch {
                    video: id,
                    features: features.nrows(),
                    labels: labels.len(),
                });
            }
            Some(labels)
        } else {
            None
        };
        videos.push(VideoRecord::new(id, features, labels)?);
    }

    let splits = root.join("splits");
    let split = if splits.is_dir() {
        let read_opt = |name: &str| {
            let p = splits.join(name);
            if p.exists() {
                read_lines(&p)
            } else {
                Ok(Vec::new())
            }
        };
        Split {
            train: read_opt("train.txt")?,
            test: read_opt("test.txt")?,
        }
    } else {
        let mut ids: Vec<String> = videos.iter().map(|v| v.id().to_string()).collect();
        ids.sort();
        Split {
            train: ids,
            test: Vec::new(),
        }
    };
    Dataset::new(videos, class_names, split)
}

fn remove_stale(dir: &Path, keep: &[PathBuf]) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && !keep.contains(&path) {
            fs::remove_file(path)?;
        }
    }
    Ok(())
}

/// Writes `ds` in the layout read by [`load_dataset`]. Every file is replaced
/// atomically; files left over from a previous dataset at `root` are removed.
pub fn save_dataset(ds: &Dataset, root: &Path, format: FeatureFormat) -> Result<()> {
    let feature_dir = root.join("features");
    let gt_dir = root.join("groundTruth");
    let split_dir = root.join("splits");
    for dir in [&feature_dir, &gt_dir, &split_dir] {
        fs::create_dir_all(dir)?;
    }

    let mut mapping = String::new();
    for (i, name) in ds.class_names().iter().enumerate() {
        mapping.push_str(&format!("{i} {name}\n"));
    }
    write_atomic(&root.join("mapping.txt"), mapping.as_bytes())?;

    let mut written_features = Vec::new();
    let mut written_gt = Vec::new();
    for v in ds.videos() {
        let path = feature_dir.join(format!("{}.{}", v.id(), format.extension()));
        write_features(&path, v.features(), format)?;
        written_features.push(path);
        if let Some(labels) = v.labels() {
            let mut text = String::new();
            for &y in labels {
                text.push_str(&ds.class_names()[y]);
                text.push('\n');
            }
            let path = gt_dir.join(format!("{}.txt", v.id()));
            write_atomic(&path, text.as_bytes())?;
            written_gt.push(path);
        }
    }
    remove_stale(&feature_dir, &written_features)?;
    remove_stale(&gt_dir, &written_gt)?;

    for (name, ids) in [
        ("train.txt", &ds.split().train),
        ("test.txt", &ds.split().test),
    ] {
        let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
        write_atomic(&split_dir.join(name), text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn small() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_videos: 2,
            num_test_videos: 1,
            num_classes: 3,
            feature_dim: 4,
            mean_frames: 60,
            min_segment_len: 5,
            max_segment_len: 15,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let ds = small();
        for format in [FeatureFormat::Binary, FeatureFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            save_dataset(&ds, dir.path(), format).unwrap();
            assert_eq!(load_dataset(dir.path()).unwrap(), ds);
        }
    }

    #[test]
    fn header_is_sixteen_bytes() {
        let f = Array2::from_shape_vec((2, 3), vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_binary(&f);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(decode_binary(Path::new("x"), &bytes).unwrap(), f);
        assert!(decode_binary(Path::new("x"), &bytes[..20]).is_err());
    }

    #[test]
    fn two_videos_three_classes() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("features")).unwrap();
        fs::create_dir_all(root.join("groundTruth")).unwrap();
        fs::write(root.join("mapping.txt"), "0 take\n1 open\n2 pour\n").unwrap();
        fs::write(root.join("features/a.csv"), "0,1\n1,0\n").unwrap();
        fs::write(root.join("features/b.csv"), "0.5,0.5\n").unwrap();
        fs::write(root.join("groundTruth/a.txt"), "take\npour\n").unwrap();
        fs::write(root.join("groundTruth/b.txt"), "open\n").unwrap();
        let ds = load_dataset(root).unwrap();
        assert_eq!(ds.videos().len(), 2);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.video("a").unwrap().labels(), Some(&[0, 2][..]));
        assert_eq!(ds.split().train, vec!["a", "b"]);

        fs::write(root.join("groundTruth/b.txt"), "open\nopen\n").unwrap();
        match load_dataset(root) {
            Err(Error::FrameCountMismatch { video, .. }) => assert_eq!(video, "b"),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(root.join("groundTruth/b.txt"), "stir\n").unwrap();
        assert!(matches!(
            load_dataset(root),
            Err(Error::UnknownLabel { .. })
        ));
        fs::remove_file(root.join("mapping.txt")).unwrap();
        assert!(matches!(load_dataset(root), Err(Error::MissingFile(_))));
    }

    #[test]
    fn empty_dataset_writes_mapping_and_empty_dirs() {
        let ds = Dataset::new(vec![], vec!["a".into(), "b".into()], Split::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), FeatureFormat::Binary).unwrap();
        assert!(dir.path().join("features").is_dir());
        assert!(dir.path().join("groundTruth").is_dir());
        assert_eq!(
            fs::read_to_string(dir.path().join("mapping.txt")).unwrap(),
            "0 a\n1 b\n"
        );
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn overwrite_replaces_previous_contents() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small(), dir.path(), FeatureFormat::Csv).unwrap();
        let other = generate_synthetic(&SyntheticConfig {
            num_videos: 1,
            num_test_videos: 0,
            num_classes: 2,
            feature_dim: 3,
            mean_frames: 30,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        save_dataset(&other, dir.path(), FeatureFormat::Binary).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), other);
    }
}
