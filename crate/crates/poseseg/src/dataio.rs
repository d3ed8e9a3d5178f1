//! On-disk dataset formats and the loader.
//!
//! A dataset is a JSON manifest plus per-video files: a binary feature matrix
//! (`PSFT` magic, little-endian `u32` version/T/F header, then row-major
//! little-endian `f32`), a pose CSV (`frame_index,x0,y0,…` with all
//! coordinate cells empty when the frame has no pose), and newline-separated
//! class-name files for the transcript and the optional per-frame ground
//! truth. Values are stored in 32 bits and widened to `f64` for compute, so
//! write → read → write is byte-stable.
//!
//! Loading normalizes every present pose. Frames whose pose is degenerate
//! (all keypoints coincident) borrow the nearest preceding valid normalized
//! pose; if none exists the frame simply does not participate in contrastive
//! training, same as a missing pose.

use crate::pose::{normalize_pose, NormalizedPose, PoseError, RawPose};
use crate::segment::Transcript;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FEATURE_MAGIC: &[u8; 4] = b"PSFT";
pub const FEATURE_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: not a feature file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("video {video_id}: {message}")]
    Dimension { video_id: String, message: String },
    #[error("{path}:{line}: unknown class name {name:?}")]
    UnknownClass { path: PathBuf, line: usize, name: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Writes the binary feature matrix.
pub fn write_features(path: &Path, rows: &[Vec<f32>]) -> Result<(), DataError> {
    let feature_dim = rows.first().map_or(0, |r| r.len());
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    emit(FEATURE_MAGIC)?;
    emit(&FEATURE_VERSION.to_le_bytes())?;
    emit(&(rows.len() as u32).to_le_bytes())?;
    emit(&(feature_dim as u32).to_le_bytes())?;
    for row in rows {
        debug_assert_eq!(row.len(), feature_dim);
        for v in row {
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads the binary feature matrix.
pub fn read_features(path: &Path) -> Result<Vec<Vec<f32>>, DataError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(io_err(path))?;
    if &head[0..4] != FEATURE_MAGIC {
        return Err(DataError::BadMagic { path: path.to_path_buf() });
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(DataError::UnsupportedVersion { path: path.to_path_buf(), version });
    }
    let num_frames = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let feature_dim = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; num_frames * feature_dim * 4];
    r.read_exact(&mut payload).map_err(io_err(path))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "trailing bytes after feature payload".into(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(values.chunks(feature_dim.max(1)).take(num_frames).map(|c| c.to_vec()).collect())
}

/// Writes the pose CSV; `None` frames get empty coordinate cells.
pub fn write_pose_csv(
    path: &Path,
    poses: &[Option<Vec<[f32; 2]>>],
    num_keypoints: usize,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut header = String::from("frame_index");
    for k in 0..num_keypoints {
        header.push_str(&format!(",x{k},y{k}"));
    }
    header.push('\n');
    w.write_all(header.as_bytes()).map_err(io_err(path))?;
    for (t, pose) in poses.iter().enumerate() {
        let mut row = t.to_string();
        match pose {
            Some(kps) => {
                debug_assert_eq!(kps.len(), num_keypoints);
                for kp in kps {
                    row.push_str(&format!(",{},{}", kp[0], kp[1]));
                }
            }
            None => row.push_str(&",".repeat(num_keypoints * 2)),
        }
        row.push('\n');
        w.write_all(row.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads the pose CSV back into optional raw poses.
pub fn read_pose_csv(path: &Path, num_keypoints: usize) -> Result<Vec<Option<RawPose>>, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let expected_cols = 1 + 2 * num_keypoints;
    if header.split(',').count() != expected_cols {
        return Err(parse_err(1, format!("expected {expected_cols} header columns")));
    }

    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != expected_cols {
            return Err(parse_err(
                line_no,
                format!("expected {expected_cols} columns, got {}", cells.len()),
            ));
        }
        let frame: usize = cells[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad frame index {:?}", cells[0])))?;
        if frame != out.len() {
            return Err(parse_err(
                line_no,
                format!("frame index {frame} out of order (expected {})", out.len()),
            ));
        }
        let coords = &cells[1..];
        if coords.iter().all(|c| c.is_empty()) {
            out.push(None);
            continue;
        }
        let mut keypoints = Vec::with_capacity(num_keypoints);
        for pair in coords.chunks(2) {
            let mut xy = [0.0f64; 2];
            for (slot, cell) in xy.iter_mut().zip(pair) {
                let v: f32 = cell
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad coordinate {cell:?}")))?;
                *slot = v as f64;
            }
            keypoints.push(xy);
        }
        let raw = RawPose::new(keypoints)
            .map_err(|e| parse_err(line_no, format!("invalid pose: {e}")))?;
        out.push(Some(raw));
    }
    Ok(out)
}

/// Writes one string per line.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), DataError> {
    let mut body = lines.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    std::fs::write(path, body).map_err(io_err(path))
}

/// Reads non-empty lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().map(str::to_string).filter(|l| !l.is_empty()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub split: Split,
    pub feature_file: String,
    pub pose_file: String,
    pub transcript_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Data directory, relative to the manifest's location.
    pub root: String,
    pub num_keypoints: usize,
    pub feature_dim: usize,
    /// Keypoint rotated onto the x-axis during normalization.
    pub head_index: usize,
    pub class_names: Vec<String>,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut body = serde_json::to_string_pretty(self)
            .map_err(|source| DataError::Json { path: path.to_path_buf(), source })?;
        body.push('\n');
        std::fs::write(path, body).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text)
            .map_err(|source| DataError::Json { path: path.to_path_buf(), source })
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// One fully-loaded video, poses already normalized.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub video_id: String,
    pub split: Split,
    pub features: Vec<Vec<f64>>,
    pub poses: Vec<Option<NormalizedPose>>,
    pub transcript: Transcript,
    pub ground_truth: Option<Vec<usize>>,
    /// Frames whose pose was degenerate and replaced by an earlier one.
    pub substituted_frames: Vec<usize>,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.features.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoSample>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self, DataError> {
        let manifest = DatasetManifest::load(manifest_path)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(DataError::UnsupportedVersion {
                path: manifest_path.to_path_buf(),
                version: manifest.format_version,
            });
        }
        if manifest.head_index >= manifest.num_keypoints {
            return Err(DataError::Dimension {
                video_id: "<manifest>".into(),
                message: format!(
                    "head_index {} out of range for {} keypoints",
                    manifest.head_index, manifest.num_keypoints
                ),
            });
        }
        let base = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.root);

        let videos = manifest
            .videos
            .iter()
            .map(|entry| load_video(&manifest, &base, entry))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset { manifest, videos })
    }

    pub fn split(&self, split: Split) -> Vec<&VideoSample> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }
}

fn read_class_ids(
    manifest: &DatasetManifest,
    path: &Path,
) -> Result<Vec<usize>, DataError> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(idx, name)| {
            manifest.class_id(&name).ok_or_else(|| DataError::UnknownClass {
                path: path.to_path_buf(),
                line: idx + 1,
                name,
            })
        })
        .collect()
}

fn load_video(
    manifest: &DatasetManifest,
    base: &Path,
    entry: &VideoEntry,
) -> Result<VideoSample, DataError> {
    let dim_err = |message: String| DataError::Dimension {
        video_id: entry.video_id.clone(),
        message,
    };

    let raw_features = read_features(&base.join(&entry.feature_file))?;
    let num_frames = raw_features.len();
    if num_frames == 0 {
        return Err(dim_err("video has no frames".into()));
    }
    for row in &raw_features {
        if row.len() != manifest.feature_dim {
            return Err(dim_err(format!(
                "feature rows have {} columns, manifest says {}",
                row.len(),
                manifest.feature_dim
            )));
        }
    }
    let features: Vec<Vec<f64>> = raw_features
        .iter()
        .map(|row| row.iter().map(|&v| v as f64).collect())
        .collect();

    let raw_poses = read_pose_csv(&base.join(&entry.pose_file), manifest.num_keypoints)?;
    if raw_poses.len() != num_frames {
        return Err(dim_err(format!(
            "pose file covers {} frames, features {}",
            raw_poses.len(),
            num_frames
        )));
    }

    let mut poses: Vec<Option<NormalizedPose>> = Vec::with_capacity(num_frames);
    let mut substituted_frames = Vec::new();
    let mut last_valid: Option<NormalizedPose> = None;
    for (t, raw) in raw_poses.iter().enumerate() {
        let normalized = match raw {
            None => None,
            Some(raw) => match normalize_pose(raw, manifest.head_index) {
                Ok((np, _)) => {
                    last_valid = Some(np.clone());
                    Some(np)
                }
                Err(PoseError::Degenerate { .. }) => {
                    substituted_frames.push(t);
                    last_valid.clone()
                }
                Err(e) => {
                    return Err(dim_err(format!("frame {t}: {e}")));
                }
            },
        };
        poses.push(normalized);
    }

    let transcript_path = base.join(&entry.transcript_file);
    let transcript_ids = read_class_ids(manifest, &transcript_path)?;
    let transcript = Transcript::new(transcript_ids).map_err(|e| dim_err(e.to_string()))?;
    if transcript.len() > num_frames {
        return Err(dim_err(format!(
            "transcript has {} segments but the video {} frames",
            transcript.len(),
            num_frames
        )));
    }

    let ground_truth = match &entry.label_file {
        None => None,
        Some(file) => {
            let path = base.join(file);
            let labels = read_class_ids(manifest, &path)?;
            if labels.len() != num_frames {
                return Err(dim_err(format!(
                    "label file covers {} frames, features {}",
                    labels.len(),
                    num_frames
                )));
            }
            Some(labels)
        }
    };

    Ok(VideoSample {
        video_id: entry.video_id.clone(),
        split: entry.split,
        features,
        poses,
        transcript,
        ground_truth,
        substituted_frames,
    })
}
