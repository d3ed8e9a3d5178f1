//! 2-D pose canonicalization and the pose-space metric.
//!
//! A raw skeleton is mapped into a canonical frame in three steps: the
//! centroid is moved to the origin, the layout is rescaled so the mean
//! centroid distance is one, and the whole skeleton is rotated so the head
//! keypoint lies on the non-negative x-axis. The result is invariant to
//! translation, isotropic scaling, and rotation of the input, which makes
//! distances between canonical poses comparable across subjects and camera
//! placements.

use thiserror::Error;

/// Mean centroid distances below this are treated as a collapsed skeleton.
pub const DEGENERATE_SPREAD: f64 = 1e-9;

/// If the head sits on the centroid (after scaling) the rotation is undefined
/// and is skipped.
const HEAD_AT_CENTROID: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("pose has no keypoints")]
    Empty,
    #[error("keypoint {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("head index {head} out of range for {keypoints} keypoints")]
    HeadOutOfRange { head: usize, keypoints: usize },
    #[error("degenerate pose: mean centroid distance {spread:e} is below {DEGENERATE_SPREAD:e}")]
    Degenerate { spread: f64 },
    #[error("keypoint count mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
}

/// Detector output in image coordinates, one `[x, y]` per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPose {
    keypoints: Vec<[f64; 2]>,
}

impl RawPose {
    pub fn new(keypoints: Vec<[f64; 2]>) -> Result<Self, PoseError> {
        if keypoints.is_empty() {
            return Err(PoseError::Empty);
        }
        for (index, kp) in keypoints.iter().enumerate() {
            if !(kp[0].is_finite() && kp[1].is_finite()) {
                return Err(PoseError::NonFinite { index });
            }
        }
        Ok(RawPose { keypoints })
    }

    pub fn keypoints(&self) -> &[[f64; 2]] {
        &self.keypoints
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// A pose in the canonical frame: zero centroid, unit mean spread, head on
/// the non-negative x-axis.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose {
    pub keypoints: Vec<[f64; 2]>,
}

impl NormalizedPose {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Interleaved `[x0, y0, x1, y1, ...]` layout used as encoder input.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.keypoints.len() * 2);
        for kp in &self.keypoints {
            out.push(kp[0]);
            out.push(kp[1]);
        }
        out
    }
}

/// The transform parameters applied while normalizing, mainly for debugging
/// and for tests that want to undo the mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTrace {
    pub centroid: [f64; 2],
    pub scale: f64,
    pub angle: f64,
}

/// Maps a raw pose into the canonical frame.
///
/// `head_index` selects the keypoint that is rotated onto the non-negative
/// x-axis. Fails with [`PoseError::Degenerate`] when all keypoints coincide;
/// if only the head sits on the centroid the rotation step is skipped.
pub fn normalize_pose(
    pose: &RawPose,
    head_index: usize,
) -> Result<(NormalizedPose, NormalizationTrace), PoseError> {
    let kps = pose.keypoints();
    let k = kps.len();
    if head_index >= k {
        return Err(PoseError::HeadOutOfRange { head: head_index, keypoints: k });
    }

    let inv_k = 1.0 / k as f64;
    let centroid = [
        kps.iter().map(|p| p[0]).sum::<f64>() * inv_k,
        kps.iter().map(|p| p[1]).sum::<f64>() * inv_k,
    ];

    let mut centered: Vec<[f64; 2]> =
        kps.iter().map(|p| [p[0] - centroid[0], p[1] - centroid[1]]).collect();

    let spread =
        centered.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum::<f64>() * inv_k;
    if spread < DEGENERATE_SPREAD {
        return Err(PoseError::Degenerate { spread });
    }
    for p in &mut centered {
        p[0] /= spread;
        p[1] /= spread;
    }

    let head = centered[head_index];
    let head_norm = (head[0] * head[0] + head[1] * head[1]).sqrt();
    let angle = if head_norm < HEAD_AT_CENTROID { 0.0 } else { head[1].atan2(head[0]) };

    let (sin, cos) = angle.sin_cos();
    for p in &mut centered {
        let [x, y] = *p;
        *p = [x * cos + y * sin, y * cos - x * sin];
    }

    Ok((NormalizedPose { keypoints: centered }, NormalizationTrace { centroid, scale: spread, angle }))
}

/// Mean per-keypoint Euclidean distance between two canonical poses.
///
/// Averaging over keypoints keeps thresholds comparable across skeleton
/// layouts with different keypoint counts.
pub fn pose_distance(a: &NormalizedPose, b: &NormalizedPose) -> Result<f64, PoseError> {
    if a.len() != b.len() {
        return Err(PoseError::ShapeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(PoseError::Empty);
    }
    let sum: f64 = a
        .keypoints
        .iter()
        .zip(&b.keypoints)
        .map(|(p, q)| {
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            (dx * dx + dy * dy).sqrt()
        })
        .sum();
    Ok(sum / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(points: &[[f64; 2]]) -> RawPose {
        RawPose::new(points.to_vec()).unwrap()
    }

    fn assert_pose_close(a: &NormalizedPose, b: &[[f64; 2]], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (p, q) in a.keypoints.iter().zip(b) {
            assert!(
                (p[0] - q[0]).abs() < tol && (p[1] - q[1]).abs() < tol,
                "{p:?} vs {q:?}"
            );
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng, k: usize) -> RawPose {
        loop {
            let kps: Vec<[f64; 2]> =
                (0..k).map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect();
            if let Ok(p) = RawPose::new(kps.clone()) {
                if normalize_pose(&p, 0).is_ok() {
                    return p;
                }
            }
        }
    }

    #[test]
    fn horizontal_pair_is_already_canonical() {
        let (n, trace) = normalize_pose(&pose(&[[3.0, 4.0], [1.0, 4.0]]), 0).unwrap();
        assert_pose_close(&n, &[[1.0, 0.0], [-1.0, 0.0]], 1e-12);
        assert!((trace.centroid[0] - 2.0).abs() < 1e-12);
        assert!((trace.centroid[1] - 4.0).abs() < 1e-12);
        assert!((trace.scale - 1.0).abs() < 1e-12);
        assert!(trace.angle.abs() < 1e-12);
    }

    #[test]
    fn diagonal_pair_rotates_onto_x_axis() {
        let (n, trace) = normalize_pose(&pose(&[[2.0, 2.0], [0.0, 0.0]]), 0).unwrap();
        assert_pose_close(&n, &[[1.0, 0.0], [-1.0, 0.0]], 1e-12);
        assert!((trace.scale - 2f64.sqrt()).abs() < 1e-12);
        assert!((trace.angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn translation_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let k = rng.gen_range(2..=25);
            let base = random_pose(&mut rng, k);
            let (canon, _) = normalize_pose(&base, 0).unwrap();

            let tx = rng.gen_range(-100.0..100.0);
            let ty = rng.gen_range(-100.0..100.0);
            let s = rng.gen_range(0.05..50.0);
            let moved = RawPose::new(
                base.keypoints().iter().map(|p| [p[0] * s + tx, p[1] * s + ty]).collect(),
            )
            .unwrap();
            let (canon2, _) = normalize_pose(&moved, 0).unwrap();
            for (p, q) in canon.keypoints.iter().zip(&canon2.keypoints) {
                assert!((p[0] - q[0]).abs() < 1e-9);
                assert!((p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let k = rng.gen_range(2..=25);
            let base = random_pose(&mut rng, k);
            let (canon, _) = normalize_pose(&base, 0).unwrap();

            let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (s, c) = theta.sin_cos();
            let rotated = RawPose::new(
                base.keypoints()
                    .iter()
                    .map(|p| [p[0] * c - p[1] * s, p[0] * s + p[1] * c])
                    .collect(),
            )
            .unwrap();
            let (canon2, _) = normalize_pose(&rotated, 0).unwrap();
            for (p, q) in canon.keypoints.iter().zip(&canon2.keypoints) {
                assert!((p[0] - q[0]).abs() < 1e-8, "{p:?} vs {q:?}");
                assert!((p[1] - q[1]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn canonical_form_is_idempotent_and_head_sits_on_x_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let k = rng.gen_range(2..=25);
            let head = rng.gen_range(0..k);
            let base = random_pose(&mut rng, k);
            let Ok((canon, _)) = normalize_pose(&base, head) else { continue };

            let hx = canon.keypoints[head][0];
            let hy = canon.keypoints[head][1];
            assert!(hy.abs() < 1e-9, "head y = {hy}");
            assert!(hx >= -1e-12, "head x = {hx}");

            let again = RawPose::new(canon.keypoints.clone()).unwrap();
            let (canon2, trace) = normalize_pose(&again, head).unwrap();
            assert!(trace.centroid[0].abs() < 1e-9);
            assert!(trace.centroid[1].abs() < 1e-9);
            assert!((trace.scale - 1.0).abs() < 1e-9);
            for (p, q) in canon.keypoints.iter().zip(&canon2.keypoints) {
                assert!((p[0] - q[0]).abs() < 1e-9);
                assert!((p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn head_on_centroid_skips_rotation() {
        let raw = pose(&[[1.0, 1.0], [0.0, 1.0], [2.0, 1.0]]);
        let (n, trace) = normalize_pose(&raw, 0).unwrap();
        assert_eq!(trace.angle, 0.0);
        assert!(n.keypoints[0][0].abs() < 1e-12 && n.keypoints[0][1].abs() < 1e-12);
        assert!((n.keypoints[1][0] + 1.5).abs() < 1e-12);
        assert!((n.keypoints[2][0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn collapsed_pose_is_degenerate() {
        let raw = pose(&[[5.0, -3.0], [5.0, -3.0], [5.0, -3.0]]);
        assert!(matches!(normalize_pose(&raw, 0), Err(PoseError::Degenerate { .. })));
    }

    #[test]
    fn input_validation() {
        assert_eq!(RawPose::new(vec![]), Err(PoseError::Empty));
        assert_eq!(
            RawPose::new(vec![[0.0, 0.0], [f64::NAN, 1.0]]),
            Err(PoseError::NonFinite { index: 1 })
        );
        assert_eq!(
            RawPose::new(vec![[f64::INFINITY, 0.0]]),
            Err(PoseError::NonFinite { index: 0 })
        );
        let raw = pose(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(
            normalize_pose(&raw, 2).unwrap_err(),
            PoseError::HeadOutOfRange { head: 2, keypoints: 2 }
        );
    }

    #[test]
    fn distance_examples() {
        let a = NormalizedPose { keypoints: vec![[1.0, 0.0], [-1.0, 0.0]] };
        let b = NormalizedPose { keypoints: vec![[0.0, 1.0], [0.0, -1.0]] };
        assert_eq!(pose_distance(&a, &a).unwrap(), 0.0);
        assert!((pose_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-12);

        let c = NormalizedPose { keypoints: vec![[1.0, 0.15], [-1.0, 0.15]] };
        assert!((pose_distance(&a, &c).unwrap() - 0.15).abs() < 1e-12);

        let short = NormalizedPose { keypoints: vec![[0.0, 0.0]] };
        assert_eq!(
            pose_distance(&a, &short).unwrap_err(),
            PoseError::ShapeMismatch { left: 2, right: 1 }
        );
    }

    #[test]
    fn distance_metric_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let k = rng.gen_range(1..=17);
            let mk = |rng: &mut ChaCha8Rng| NormalizedPose {
                keypoints: (0..k)
                    .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                    .collect(),
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let c = mk(&mut rng);
            let dab = pose_distance(&a, &b).unwrap();
            let dba = pose_distance(&b, &a).unwrap();
            let dac = pose_distance(&a, &c).unwrap();
            let dcb = pose_distance(&c, &b).unwrap();
            assert!(dab >= 0.0);
            assert!((dab - dba).abs() < 1e-12);
            assert!(dab <= dac + dcb + 1e-12);
        }
    }

    #[test]
    fn flatten_interleaves_coordinates() {
        let p = NormalizedPose { keypoints: vec![[1.0, 2.0], [3.0, 4.0]] };
        assert_eq!(p.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
    }
}
