//! Cross-modal InfoNCE loss with pose-aware negative mining.
//!
//! Frames with a usable pose form the participant set. Each participant
//! anchors two loss terms — RGB embedding against pose candidates and pose
//! embedding against RGB candidates — where the positive is the same frame in
//! the other modality and negatives come from the mining strategy. Vanilla
//! mining takes every other participant; pose-filtered mining keeps only
//! frames whose canonical-pose distance from the anchor is at least `delta`,
//! which drops visually-distinct frames that share the anchor's pose from the
//! negative pool. An anchor with no negatives contributes exactly zero.

use crate::linalg::log_sum_exp;
use crate::nets::{
    cosine_similarity, cosine_similarity_grad_a, EncoderGrads, EncoderParams, NetError,
    ProjectionGrads, ProjectionParams,
};
use crate::pose::{pose_distance, NormalizedPose, PoseError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContrastiveError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("modalities disagree: {rgb} rgb embeddings vs {pose} pose embeddings")]
    ModalityMismatch { rgb: usize, pose: usize },
    #[error("negative sets cover {sets} anchors but there are {frames} frames")]
    NegativeSetMismatch { sets: usize, frames: usize },
    #[error("anchor {anchor}: negative index {index} is out of range or the anchor itself")]
    BadNegativeIndex { anchor: usize, index: usize },
    #[error("pose stream covers {poses} frames, features {features}")]
    FrameCountMismatch { poses: usize, features: usize },
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// How negatives are picked for each anchor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MiningStrategy {
    /// All other participating frames.
    Vanilla,
    /// Only frames whose pose distance from the anchor is at least `delta`.
    /// `delta = 0` reproduces [`MiningStrategy::Vanilla`] exactly.
    PoseFiltered { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub mining: MiningStrategy,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.07,
            mining: MiningStrategy::PoseFiltered { delta: 0.15 },
        }
    }
}

/// Per-anchor negative index lists over the participant sequence.
pub fn mine_negatives(
    poses: &[NormalizedPose],
    mining: &MiningStrategy,
) -> Result<Vec<Vec<usize>>, ContrastiveError> {
    let n = poses.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut negs = Vec::new();
        for j in 0..n {
            if j == t {
                continue;
            }
            let keep = match mining {
                MiningStrategy::Vanilla => true,
                MiningStrategy::PoseFiltered { delta } => {
                    pose_distance(&poses[t], &poses[j])? >= *delta
                }
            };
            if keep {
                negs.push(j);
            }
        }
        out.push(negs);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Sum of the two directional means.
    pub total: f64,
    /// Mean over anchors of the RGB-anchored term.
    pub rgb_to_pose: f64,
    /// Mean over anchors of the pose-anchored term.
    pub pose_to_rgb: f64,
    pub num_anchors: usize,
    /// Anchors whose negative set was empty; they contribute zero loss.
    pub empty_anchors: usize,
}

/// Loss plus gradients with respect to every embedding.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub report: LossReport,
    pub d_rgb: Vec<Vec<f64>>,
    pub d_pose: Vec<Vec<f64>>,
}

/// InfoNCE over two parallel embedding sequences (participants only).
///
/// `negatives[t]` lists the candidate indices mined for anchor `t`; the same
/// sets are used in both directions. Cosine similarities are scaled by the
/// temperature and the per-anchor loss is the negative log of the positive's
/// softmax weight, averaged over anchors per direction.
pub fn contrastive_loss(
    rgb: &[Vec<f64>],
    pose: &[Vec<f64>],
    negatives: &[Vec<usize>],
    temperature: f64,
) -> Result<ContrastiveOutput, ContrastiveError> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(ContrastiveError::BadTemperature(temperature));
    }
    if rgb.len() != pose.len() {
        return Err(ContrastiveError::ModalityMismatch { rgb: rgb.len(), pose: pose.len() });
    }
    let n = rgb.len();
    if negatives.len() != n {
        return Err(ContrastiveError::NegativeSetMismatch { sets: negatives.len(), frames: n });
    }
    for (anchor, negs) in negatives.iter().enumerate() {
        for &j in negs {
            if j >= n || j == anchor {
                return Err(ContrastiveError::BadNegativeIndex { anchor, index: j });
            }
        }
    }

    let dim = rgb.first().map_or(0, |e| e.len());
    let mut d_rgb = vec![vec![0.0; dim]; n];
    let mut d_pose = vec![vec![0.0; dim]; n];
    let mut sums = [0.0f64; 2];
    let mut empty_anchors = 0usize;

    for t in 0..n {
        let negs = &negatives[t];
        if negs.is_empty() {
            empty_anchors += 1;
            continue;
        }
        // direction 0: RGB anchor vs pose candidates; direction 1: swapped.
        for dir in 0..2 {
            let (anchors, candidates): (&[Vec<f64>], &[Vec<f64>]) =
                if dir == 0 { (rgb, pose) } else { (pose, rgb) };
            let anchor = &anchors[t];

            let mut indices = Vec::with_capacity(negs.len() + 1);
            indices.push(t);
            indices.extend_from_slice(negs);
            let scores: Vec<f64> = indices
                .iter()
                .map(|&j| cosine_similarity(anchor, &candidates[j]) / temperature)
                .collect();
            let lse = log_sum_exp(&scores);
            sums[dir] += lse - scores[0];

            // d(loss)/d(score_j) = softmax_j - [j is the positive]; the mean
            // over anchors is applied later.
            for (pos, (&j, &score)) in indices.iter().zip(&scores).enumerate() {
                let mut g = (score - lse).exp();
                if pos == 0 {
                    g -= 1.0;
                }
                let g = g / temperature;
                let ga = cosine_similarity_grad_a(anchor, &candidates[j]);
                let gc = cosine_similarity_grad_a(&candidates[j], anchor);
                let (da, dc) = if dir == 0 {
                    (&mut d_rgb[t], j)
                } else {
                    (&mut d_pose[t], j)
                };
                for (acc, v) in da.iter_mut().zip(&ga) {
                    *acc += g * v;
                }
                let dc_vec = if dir == 0 { &mut d_pose[dc] } else { &mut d_rgb[dc] };
                for (acc, v) in dc_vec.iter_mut().zip(&gc) {
                    *acc += g * v;
                }
            }
        }
    }

    let scale = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    for grad in d_rgb.iter_mut().chain(d_pose.iter_mut()) {
        for v in grad.iter_mut() {
            *v *= scale;
        }
    }
    let rgb_to_pose = sums[0] * scale;
    let pose_to_rgb = sums[1] * scale;
    Ok(ContrastiveOutput {
        report: LossReport {
            total: rgb_to_pose + pose_to_rgb,
            rgb_to_pose,
            pose_to_rgb,
            num_anchors: n,
            empty_anchors,
        },
        d_rgb,
        d_pose,
    })
}

/// Mines negatives from the participant poses and evaluates the loss.
pub fn mine_and_contrast(
    rgb: &[Vec<f64>],
    pose: &[Vec<f64>],
    poses: &[NormalizedPose],
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOutput, ContrastiveError> {
    if poses.len() != rgb.len() {
        return Err(ContrastiveError::NegativeSetMismatch { sets: poses.len(), frames: rgb.len() });
    }
    let negatives = mine_negatives(poses, &cfg.mining)?;
    contrastive_loss(rgb, pose, &negatives, cfg.temperature)
}
