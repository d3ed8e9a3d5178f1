//! Seeded synthetic instructional-video datasets.
//!
//! Each action class owns a few pose prototypes (its sub-action poses) and a
//! matching set of feature directions. A video is a transcript of actions
//! without immediate repeats; within a segment the frames step
//! deterministically through the action's prototypes, emitting keypoints as
//! prototype plus Gaussian noise and features as a fixed random linear image
//! of the one-hot (action, prototype) code plus Gaussian noise. A seeded
//! fraction of frames loses its pose, mimicking sparse pose extraction.
//! Everything — including the train/test split — is a pure function of the
//! config, so regenerating with the same seed reproduces the tree byte for
//! byte.

use crate::dataio::{
    write_features, write_lines, write_pose_csv, DatasetManifest, Split, VideoEntry,
    MANIFEST_VERSION,
};
use crate::dataio::DataError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_videos: usize,
    /// Last `num_test` videos form the test split.
    pub num_test: usize,
    pub num_classes: usize,
    pub num_keypoints: usize,
    pub feature_dim: usize,
    /// Sub-action poses per class; at least 2 to make vanilla mining pay the
    /// false-negative penalty the pose filter avoids.
    pub prototypes_per_action: usize,
    pub mean_segment_len: usize,
    pub segment_len_jitter: usize,
    pub min_transcript_len: usize,
    pub max_transcript_len: usize,
    /// Keypoint noise in raw image units.
    pub pose_noise: f64,
    pub feature_noise: f64,
    pub missing_pose_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 50,
            num_test: 10,
            num_classes: 5,
            num_keypoints: 17,
            feature_dim: 32,
            prototypes_per_action: 3,
            mean_segment_len: 20,
            segment_len_jitter: 6,
            min_transcript_len: 3,
            max_transcript_len: 6,
            pose_noise: 2.0,
            feature_noise: 1.0,
            missing_pose_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: &str| Err(SynthError::BadConfig(msg.into()));
        if self.num_videos == 0 || self.num_test >= self.num_videos {
            return fail("need at least one training and one test video");
        }
        if self.num_classes < 2 {
            return fail("need at least two classes");
        }
        if self.num_keypoints < 2 {
            return fail("need at least two keypoints");
        }
        if self.prototypes_per_action < 1 {
            return fail("need at least one prototype per action");
        }
        if self.mean_segment_len <= self.segment_len_jitter {
            return fail("segment length jitter must stay below the mean");
        }
        if self.min_transcript_len < 1 || self.max_transcript_len < self.min_transcript_len {
            return fail("bad transcript length range");
        }
        if self.min_transcript_len > 1 && self.num_classes < 2 {
            return fail("transcripts without repeats need a second class");
        }
        if !(0.0..1.0).contains(&self.missing_pose_fraction) {
            return fail("missing-pose fraction must lie in [0, 1)");
        }
        if self.pose_noise < 0.0 || self.feature_noise < 0.0 {
            return fail("noise levels must be non-negative");
        }
        Ok(())
    }
}

/// Generates the dataset under `out_dir` and returns the manifest path.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf, SynthError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Pose prototypes: K keypoints uniform over a 200x200 image box.
    let num_codes = cfg.num_classes * cfg.prototypes_per_action;
    let prototypes: Vec<Vec<[f64; 2]>> = (0..num_codes)
        .map(|_| {
            (0..cfg.num_keypoints)
                .map(|_| [rng.gen_range(50.0..250.0), rng.gen_range(50.0..250.0)])
                .collect()
        })
        .collect();

    // Fixed random feature direction per (action, prototype) code.
    let codebook: Vec<Vec<f64>> = (0..num_codes)
        .map(|_| (0..cfg.feature_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();

    let class_names: Vec<String> = (0..cfg.num_classes).map(|c| format!("action_{c}")).collect();
    let mut entries = Vec::with_capacity(cfg.num_videos);

    for v in 0..cfg.num_videos {
        let video_id = format!("video_{v:03}");
        let split = if v < cfg.num_videos - cfg.num_test { Split::Train } else { Split::Test };

        let transcript_len = rng.gen_range(cfg.min_transcript_len..=cfg.max_transcript_len);
        let mut transcript = Vec::with_capacity(transcript_len);
        for _ in 0..transcript_len {
            loop {
                let action = rng.gen_range(0..cfg.num_classes);
                if transcript.last() != Some(&action) {
                    transcript.push(action);
                    break;
                }
            }
        }

        let lengths: Vec<usize> = (0..transcript_len)
            .map(|_| {
                rng.gen_range(
                    cfg.mean_segment_len - cfg.segment_len_jitter
                        ..=cfg.mean_segment_len + cfg.segment_len_jitter,
                )
            })
            .collect();

        let mut features: Vec<Vec<f32>> = Vec::new();
        let mut poses: Vec<Option<Vec<[f32; 2]>>> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for (&action, &len) in transcript.iter().zip(&lengths) {
            for i in 0..len {
                let prototype = i * cfg.prototypes_per_action / len;
                let code = action * cfg.prototypes_per_action + prototype;

                let keypoints: Vec<[f32; 2]> = prototypes[code]
                    .iter()
                    .map(|kp| {
                        [
                            (kp[0] + cfg.pose_noise * normal.sample(&mut rng)) as f32,
                            (kp[1] + cfg.pose_noise * normal.sample(&mut rng)) as f32,
                        ]
                    })
                    .collect();
                let missing = rng.gen::<f64>() < cfg.missing_pose_fraction;
                poses.push(if missing { None } else { Some(keypoints) });

                let row: Vec<f32> = codebook[code]
                    .iter()
                    .map(|&base| (base + cfg.feature_noise * normal.sample(&mut rng)) as f32)
                    .collect();
                features.push(row);
                labels.push(class_names[action].clone());
            }
        }

        let entry = VideoEntry {
            video_id: video_id.clone(),
            split,
            feature_file: format!("{video_id}.feat"),
            pose_file: format!("{video_id}.poses.csv"),
            transcript_file: format!("{video_id}.transcript.txt"),
            label_file: Some(format!("{video_id}.labels.txt")),
        };
        write_features(&out_dir.join(&entry.feature_file), &features)?;
        write_pose_csv(&out_dir.join(&entry.pose_file), &poses, cfg.num_keypoints)?;
        let transcript_names: Vec<String> =
            transcript.iter().map(|&a| class_names[a].clone()).collect();
        write_lines(&out_dir.join(&entry.transcript_file), &transcript_names)?;
        write_lines(&out_dir.join(entry.label_file.as_ref().unwrap()), &labels)?;
        entries.push(entry);
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        root: ".".into(),
        num_keypoints: cfg.num_keypoints,
        feature_dim: cfg.feature_dim,
        head_index: 0,
        class_names,
        videos: entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}
