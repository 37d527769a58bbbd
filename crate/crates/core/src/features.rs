//! Feature ingestion: the `DNF1` binary feature format, CSV manifests, ground-truth
//! files, and clip-to-segment resampling.
//!
//! A feature file is `b"DNF1"`, `u32 n_rows`, `u32 dim`, followed by `n_rows * dim`
//! little-endian `f32` values in row-major order.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DNF1";
pub const DEFAULT_CLIP_LEN: usize = 16;
const MANIFEST_HEADER: [&str; 5] = ["video_id", "label", "feature_path", "frame_count", "gt_path"];

/// Raw per-clip features of one video, before segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub clips: Array2<f64>,
    pub frame_count: usize,
    pub clip_len: usize,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, clips: Array2<f64>, frame_count: usize) -> Result<Self> {
        let video_id = video_id.into();
        if clips.nrows() == 0 || clips.ncols() == 0 {
            return Err(Error::Data(format!("{video_id}: empty feature matrix")));
        }
        if frame_count == 0 {
            return Err(Error::Data(format!("{video_id}: frame_count must be positive")));
        }
        Ok(Self {
            video_id,
            clips,
            frame_count,
            clip_len: DEFAULT_CLIP_LEN,
        })
    }

    pub fn n_clips(&self) -> usize {
        self.clips.nrows()
    }

    pub fn dim(&self) -> usize {
        self.clips.ncols()
    }
}

/// Fixed-length segment features of one video with its video-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub video_id: String,
    pub x: Array2<f64>,
    pub label: u8,
}

impl SegmentFeatures {
    /// Validates the label, finiteness, and that `T` is divisible by `2^(scales-1)`.
    pub fn new(video_id: impl Into<String>, x: Array2<f64>, label: u8, scales: usize) -> Result<Self> {
        let video_id = video_id.into();
        if label > 1 {
            return Err(Error::Validation(format!("{video_id}: label must be 0 or 1, got {label}")));
        }
        check_segment_count(x.nrows(), scales)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{video_id}: non-finite segment feature")));
        }
        Ok(Self { video_id, x, label })
    }

    pub fn segments(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_abnormal(&self) -> bool {
        self.label == 1
    }
}

pub fn check_segment_count(segments: usize, scales: usize) -> Result<()> {
    if scales == 0 {
        return Err(Error::Config("scales must be at least 1".into()));
    }
    let stride = 1usize << (scales - 1);
    if segments == 0 || !segments.is_multiple_of(stride) {
        return Err(Error::Shape(format!(
            "segment count {segments} is not divisible by 2^(S-1) = {stride} for S = {scales}"
        )));
    }
    Ok(())
}

/// Averages clips into `segments` rows.
///
/// Segment `t` owns clips `floor(t*n/T) .. floor((t+1)*n/T)`. When that range is
/// empty (fewer clips than segments) the segment takes the clip nearest its centre,
/// `floor((2t+1)*n / 2T)`.
pub fn resample_to_segments(seq: &FeatureSequence, segments: usize) -> Result<Array2<f64>> {
    if segments == 0 {
        return Err(Error::Config("segment count must be positive".into()));
    }
    let n = seq.n_clips();
    if n == 0 {
        return Err(Error::Data(format!("{}: no clips", seq.video_id)));
    }
    if seq.clips.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite clip feature", seq.video_id)));
    }
    let mut out = Array2::<f64>::zeros((segments, seq.dim()));
    for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let start = t * n / segments;
        let end = (t + 1) * n / segments;
        if end > start {
            let group = seq.clips.slice(ndarray::s![start..end, ..]);
            row.assign(&group.mean_axis(Axis(0)).expect("non-empty group"));
        } else {
            let nearest = ((2 * t + 1) * n / (2 * segments)).min(n - 1);
            row.assign(&seq.clips.row(nearest));
        }
    }
    Ok(out)
}

pub fn write_feature_file(path: &Path, clips: ArrayView2<'_, f64>) -> Result<()> {
    let (rows, dim) = clips.dim();
    let mut buf = Vec::with_capacity(12 + rows * dim * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in clips.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "bad magic bytes, expected DNF1 feature file"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 || dim == 0 {
        return Err(Error::format(path, format!("empty feature matrix {rows}x{dim}")));
    }
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    if bytes.len() - 12 != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {expected}", bytes.len() - 12),
        ));
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite feature value"));
    }
    Ok(Array2::from_shape_vec((rows, dim), values).expect("length checked"))
}

pub fn write_ground_truth(path: &Path, labels: &[u8]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push(if *l == 0 { '0' } else { '1' });
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a newline-separated 0/1 frame label file and checks its length.
pub fn read_ground_truth(path: &Path, frame_count: usize) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::with_capacity(frame_count);
    for (i, line) in text.lines().enumerate() {
        match line.trim() {
            "" => continue,
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(Error::format(path, format!("line {}: expected 0 or 1, got {other:?}", i + 1)))
            }
        }
    }
    if labels.len() != frame_count {
        return Err(Error::format(
            path,
            format!("{} frame labels, manifest says frame_count = {frame_count}", labels.len()),
        ));
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: u8,
    /// Resolved against the manifest's directory when loaded.
    pub feature_path: PathBuf,
    pub frame_count: usize,
    pub gt_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    video_id: String,
    label: u8,
    feature_path: String,
    frame_count: usize,
    gt_path: Option<String>,
}

/// Parses and validates a manifest CSV. Feature files are not opened.
pub fn load_manifest(path: &Path, split: Split) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if !header.is_empty() && header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::format(
            path,
            format!("manifest header must be `{}`", MANIFEST_HEADER.join(",")),
        ));
    }

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.video_id.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty video_id")));
        }
        if !seen.insert(row.video_id.clone()) {
            return Err(Error::Validation(format!("duplicate video_id {:?}", row.video_id)));
        }
        if row.label > 1 {
            return Err(Error::Validation(format!("{}: label must be 0 or 1", row.video_id)));
        }
        if row.frame_count == 0 {
            return Err(Error::Validation(format!("{}: frame_count must be positive", row.video_id)));
        }
        let gt_path = row.gt_path.filter(|p| !p.is_empty()).map(|p| base.join(p));
        if split == Split::Test && gt_path.is_none() {
            return Err(Error::Validation(format!("test row {:?} has no gt_path", row.video_id)));
        }
        entries.push(ManifestEntry {
            video_id: row.video_id,
            label: row.label,
            feature_path: base.join(row.feature_path),
            frame_count: row.frame_count,
            gt_path,
        });
    }
    if entries.is_empty() {
        return Err(Error::Validation(format!("{}: no entries", path.display())));
    }
    Ok(DatasetManifest { entries, split })
}

/// Writes a manifest with paths made relative to `path`'s directory where possible.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(MANIFEST_HEADER)?;
    for e in &manifest.entries {
        writer.write_record([
            e.video_id.clone(),
            e.label.to_string(),
            rel(&e.feature_path),
            e.frame_count.to_string(),
            e.gt_path.as_deref().map(rel).unwrap_or_default(),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

impl ManifestEntry {
    pub fn load_sequence(&self) -> Result<FeatureSequence> {
        let clips = read_feature_file(&self.feature_path)?;
        FeatureSequence::new(self.video_id.clone(), clips, self.frame_count)
    }

    pub fn load_segments(&self, segments: usize, scales: usize) -> Result<SegmentFeatures> {
        check_segment_count(segments, scales)?;
        let seq = self.load_sequence()?;
        let x = resample_to_segments(&seq, segments)?;
        SegmentFeatures::new(self.video_id.clone(), x, self.label, scales)
    }
}

impl DatasetManifest {
    /// Loads and resamples every entry; decoding runs in parallel, output keeps manifest order.
    pub fn load_segments(&self, segments: usize, scales: usize) -> Result<Vec<SegmentFeatures>> {
        let loaded: Vec<SegmentFeatures> = self
            .entries
            .par_iter()
            .map(|e| e.load_segments(segments, scales))
            .collect::<Result<_>>()?;
        if let Some(first) = loaded.first() {
            let dim = first.dim();
            if let Some(bad) = loaded.iter().find(|s| s.dim() != dim) {
                return Err(Error::Validation(format!(
                    "{}: feature dim {} differs from {} ({})",
                    bad.video_id,
                    bad.dim(),
                    dim,
                    first.video_id
                )));
            }
        }
        Ok(loaded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn resample_identity_when_counts_match() {
        let clips = Array2::from_shape_fn((64, 4), |(i, j)| (i * 4 + j) as f64 * 0.25 - 3.0);
        let seq = FeatureSequence::new("v", clips.clone(), 1024).unwrap();
        assert_eq!(resample_to_segments(&seq, 64).unwrap(), clips);
    }

    #[test]
    fn resample_repeats_single_clip() {
        let seq = FeatureSequence::new("v", array![[1.0, -2.0, 3.5]], 16).unwrap();
        let x = resample_to_segments(&seq, 4).unwrap();
        for row in x.rows() {
            assert_eq!(row, array![1.0, -2.0, 3.5]);
        }
    }

    #[test]
    fn resample_short_video_uses_nearest_clip() {
        let seq = FeatureSequence::new("v", array![[0.0], [1.0]], 32).unwrap();
        let x = resample_to_segments(&seq, 4).unwrap();
        assert_eq!(x.column(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn resample_rejects_non_finite() {
        let seq = FeatureSequence::new("v", array![[0.0], [f64::NAN]], 32).unwrap();
        assert!(matches!(resample_to_segments(&seq, 2), Err(Error::Data(_))));
    }

    #[test]
    fn segment_divisibility_is_enforced() {
        assert!(SegmentFeatures::new("v", Array2::zeros((6, 2)), 0, 3).is_err());
        assert!(SegmentFeatures::new("v", Array2::zeros((8, 2)), 0, 3).is_ok());
        assert!(SegmentFeatures::new("v", Array2::zeros((8, 2)), 2, 1).is_err());
    }

    #[test]
    fn feature_file_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        let err = read_feature_file(&path).unwrap_err();
        assert!(err.to_string().contains("bad.bin"), "{err}");
    }

    #[test]
    fn feature_file_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_feature_file(&path, array![[1.0, 2.0]].view()).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DNF1");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..], &2.0f32.to_le_bytes());
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn manifest_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.csv",
            "video_id,label,feature_path,frame_count,gt_path\nn0,0,n0.bin,64,\na0,1,a0.bin,64,\n",
        );
        let m = load_manifest(&p, Split::Train).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].label, 1);
        assert_eq!(m.entries[0].feature_path, dir.path().join("n0.bin"));
        assert!(m.entries[0].gt_path.is_none());
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(
            dir.path(),
            "dup.csv",
            "video_id,label,feature_path,frame_count,gt_path\nv,0,a.bin,64,\nv,1,b.bin,64,\n",
        );
        assert!(matches!(load_manifest(&dup, Split::Train), Err(Error::Validation(_))));

        let empty = write(dir.path(), "empty.csv", "");
        let err = load_manifest(&empty, Split::Train).unwrap_err();
        assert!(err.to_string().contains("no entries"), "{err}");

        let no_gt = write(
            dir.path(),
            "test.csv",
            "video_id,label,feature_path,frame_count,gt_path\nv,1,a.bin,64,\n",
        );
        assert!(matches!(load_manifest(&no_gt, Split::Test), Err(Error::Validation(_))));

        let missing = dir.path().join("nope.csv");
        assert!(matches!(load_manifest(&missing, Split::Train), Err(Error::Io { .. })));
    }

    #[test]
    fn ground_truth_length_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.txt");
        write_ground_truth(&p, &[0, 1, 1]).unwrap();
        assert_eq!(read_ground_truth(&p, 3).unwrap(), vec![0, 1, 1]);
        assert!(read_ground_truth(&p, 4).is_err());
    }
}
