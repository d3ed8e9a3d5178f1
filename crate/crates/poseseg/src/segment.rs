//! Transcript-constrained segmentation: frame classifier, offline alignment,
//! causal online decoding, and the pseudo-label training loss.
//!
//! Both decoders walk the same lattice: frames are assigned to transcript
//! entries monotonically, every entry covering at least one contiguous frame.
//! Offline alignment maximizes the summed frame log-probabilities over the
//! whole video; online decoding runs the prefix lattice and commits each
//! frame's label the moment it arrives, never revising. Among equal-score
//! alignments the offline tie-break prefers later boundaries, i.e. earlier
//! segments absorb the tied frames.

use crate::linalg::{log_sum_exp, Mat};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("video has no frames")]
    EmptyVideo,
    #[error("transcript has {segments} segments but the video only {frames} frames")]
    InfeasibleTranscript { frames: usize, segments: usize },
    #[error("class id {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

/// Ordered action classes known to occur in a video, without timing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript(Vec<usize>);

impl Transcript {
    pub fn new(actions: Vec<usize>) -> Result<Self, SegmentError> {
        if actions.is_empty() {
            return Err(SegmentError::EmptyTranscript);
        }
        Ok(Transcript(actions))
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal run of one label, `start..end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Decomposes per-frame labels into maximal constant-label runs.
pub fn segments_of(labels: &[usize]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            out.push(Segment { label: labels[start], start, end: t });
            start = t;
        }
    }
    out
}

/// Run-length collapse of per-frame labels into an ordered transcript.
pub fn collapse_to_transcript(labels: &[usize]) -> Vec<usize> {
    segments_of(labels).iter().map(|s| s.label).collect()
}

/// A full per-frame labeling of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    labels: Vec<usize>,
}

impl Segmentation {
    pub fn from_frame_labels(labels: Vec<usize>) -> Result<Self, SegmentError> {
        if labels.is_empty() {
            return Err(SegmentError::EmptyVideo);
        }
        Ok(Segmentation { labels })
    }

    pub fn frame_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn segments(&self) -> Vec<Segment> {
        segments_of(&self.labels)
    }

    pub fn transcript(&self) -> Vec<usize> {
        collapse_to_transcript(&self.labels)
    }
}

/// Linear classifier over shared-space embeddings followed by log-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: Mat,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl ClassifierHead {
    /// Draw order `w` (rows then columns) then `b`, from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn seeded(input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input_dim as f64).sqrt();
        let w = Mat::from_fn(num_classes, input_dim, |_, _| rng.gen_range(-bound..bound));
        let b = (0..num_classes).map(|_| rng.gen_range(-bound..bound)).collect();
        ClassifierHead { w, b }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    /// Log-softmax of the affine logits; the row log-sum-exps to zero.
    pub fn log_probs(&self, input: &[f64]) -> Result<Vec<f64>, SegmentError> {
        if input.len() != self.input_dim() {
            return Err(SegmentError::LengthMismatch {
                what: "head input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut z = self.w.matvec(input);
        for (zi, bi) in z.iter_mut().zip(&self.b) {
            *zi += bi;
        }
        let lse = log_sum_exp(&z);
        Ok(z.into_iter().map(|zi| zi - lse).collect())
    }

    /// Backward through log-softmax and the affine map. `log_probs` must be
    /// the forward output for `input`. Returns the input gradient.
    pub fn backward_into(
        &self,
        input: &[f64],
        log_probs: &[f64],
        upstream: &[f64],
        grads: &mut HeadGrads,
    ) -> Result<Vec<f64>, SegmentError> {
        if upstream.len() != self.num_classes() {
            return Err(SegmentError::LengthMismatch {
                what: "head upstream gradient",
                expected: self.num_classes(),
                got: upstream.len(),
            });
        }
        let total: f64 = upstream.iter().sum();
        let d_logits: Vec<f64> = upstream
            .iter()
            .zip(log_probs)
            .map(|(u, lp)| u - lp.exp() * total)
            .collect();
        grads.w.add_outer(&d_logits, input, 1.0);
        for (g, d) in grads.b.iter_mut().zip(&d_logits) {
            *g += d;
        }
        Ok(self.w.matvec_t(&d_logits))
    }

    pub fn sgd_step(&mut self, grads: &HeadGrads, lr: f64) {
        for (p, g) in self.w.data_mut().iter_mut().zip(grads.w.data()) {
            *p -= lr * g;
        }
        for (p, g) in self.b.iter_mut().zip(&grads.b) {
            *p -= lr * g;
        }
    }
}

impl HeadGrads {
    pub fn zeros_like(head: &ClassifierHead) -> Self {
        HeadGrads {
            w: Mat::zeros(head.num_classes(), head.input_dim()),
            b: vec![0.0; head.num_classes()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.w.data_mut() {
            *v *= s;
        }
        for v in &mut self.b {
            *v *= s;
        }
    }
}

/// Applies the head to every frame embedding.
pub fn frame_log_probs(
    head: &ClassifierHead,
    embeddings: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, SegmentError> {
    embeddings.iter().map(|e| head.log_probs(e)).collect()
}

fn validate_log_probs(
    log_probs: &[Vec<f64>],
    transcript: &Transcript,
) -> Result<usize, SegmentError> {
    let t_len = log_probs.len();
    if t_len == 0 {
        return Err(SegmentError::EmptyVideo);
    }
    let num_classes = log_probs[0].len();
    for row in log_probs {
        if row.len() != num_classes {
            return Err(SegmentError::LengthMismatch {
                what: "log-prob row",
                expected: num_classes,
                got: row.len(),
            });
        }
    }
    for &a in transcript.actions() {
        if a >= num_classes {
            return Err(SegmentError::LabelOutOfRange { label: a, num_classes });
        }
    }
    Ok(num_classes)
}

/// Best monotone assignment of frames to transcript entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub segmentation: Segmentation,
    /// Transcript position assigned to each frame (non-decreasing).
    pub segment_indices: Vec<usize>,
    /// Total log-probability of the chosen path.
    pub score: f64,
}

/// Maximizes `Σ_t log_probs[t][label(t)]` over all monotone assignments of
/// frames to the transcript in order, each entry receiving at least one
/// frame. `O(T·n)` dynamic program. Ties between equal-score paths are
/// resolved toward later boundaries (earlier segments grow).
pub fn align_offline(
    log_probs: &[Vec<f64>],
    transcript: &Transcript,
) -> Result<Alignment, SegmentError> {
    validate_log_probs(log_probs, transcript)?;
    let t_len = log_probs.len();
    let n = transcript.len();
    if n > t_len {
        return Err(SegmentError::InfeasibleTranscript { frames: t_len, segments: n });
    }
    let actions = transcript.actions();

    let mut best = vec![vec![f64::NEG_INFINITY; n]; t_len];
    best[0][0] = log_probs[0][actions[0]];
    for t in 1..t_len {
        for k in 0..n {
            let stay = best[t - 1][k];
            let advance = if k > 0 { best[t - 1][k - 1] } else { f64::NEG_INFINITY };
            let prev = stay.max(advance);
            if prev > f64::NEG_INFINITY {
                best[t][k] = log_probs[t][actions[k]] + prev;
            }
        }
    }
    let score = best[t_len - 1][n - 1];

    let mut segment_indices = vec![0usize; t_len];
    let mut k = n - 1;
    for t in (1..t_len).rev() {
        segment_indices[t] = k;
        // On ties, advancing keeps this segment as short as possible, which
        // pushes its start boundary later.
        if k > 0 && best[t - 1][k - 1] >= best[t - 1][k] {
            k -= 1;
        }
    }
    segment_indices[0] = k;
    debug_assert_eq!(k, 0);

    let labels: Vec<usize> = segment_indices.iter().map(|&k| actions[k]).collect();
    Ok(Alignment {
        segmentation: Segmentation::from_frame_labels(labels)?,
        segment_indices,
        score,
    })
}

/// Streaming decoder over the prefix lattice.
///
/// After each [`OnlineDecoder::push`] the frame's label is committed from the
/// best alignment of the frames seen so far to some non-empty transcript
/// prefix; commitments are final. Equal-score prefixes resolve to the
/// shortest one.
#[derive(Debug, Clone)]
pub struct OnlineDecoder {
    actions: Vec<usize>,
    row: Vec<f64>,
    frames_seen: usize,
}

impl OnlineDecoder {
    pub fn new(transcript: &Transcript) -> Self {
        OnlineDecoder {
            actions: transcript.actions().to_vec(),
            row: vec![f64::NEG_INFINITY; transcript.len()],
            frames_seen: 0,
        }
    }

    /// Consumes one frame's log-probability row and commits its label.
    pub fn push(&mut self, log_probs: &[f64]) -> Result<usize, SegmentError> {
        let num_classes = log_probs.len();
        for &a in &self.actions {
            if a >= num_classes {
                return Err(SegmentError::LabelOutOfRange { label: a, num_classes });
            }
        }
        let n = self.actions.len();
        if self.frames_seen == 0 {
            self.row[0] = log_probs[self.actions[0]];
        } else {
            for k in (0..n).rev() {
                let stay = self.row[k];
                let advance = if k > 0 { self.row[k - 1] } else { f64::NEG_INFINITY };
                let prev = stay.max(advance);
                self.row[k] = if prev > f64::NEG_INFINITY {
                    log_probs[self.actions[k]] + prev
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        self.frames_seen += 1;

        let mut best_k = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, &s) in self.row.iter().enumerate() {
            if s > best_score {
                best_score = s;
                best_k = k;
            }
        }
        Ok(self.actions[best_k])
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }
}

/// Runs the online decoder over a whole video.
pub fn decode_online(
    log_probs: &[Vec<f64>],
    transcript: &Transcript,
) -> Result<Segmentation, SegmentError> {
    validate_log_probs(log_probs, transcript)?;
    let mut decoder = OnlineDecoder::new(transcript);
    let labels = log_probs
        .iter()
        .map(|row| decoder.push(row))
        .collect::<Result<Vec<_>, _>>()?;
    Segmentation::from_frame_labels(labels)
}

/// Mean negative log-probability of the pseudo-label at each frame, with the
/// exact gradient with respect to the log-probabilities.
pub fn segmentation_loss(
    log_probs: &[Vec<f64>],
    pseudo_labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>), SegmentError> {
    if log_probs.is_empty() {
        return Err(SegmentError::EmptyVideo);
    }
    if pseudo_labels.len() != log_probs.len() {
        return Err(SegmentError::LengthMismatch {
            what: "pseudo labels",
            expected: log_probs.len(),
            got: pseudo_labels.len(),
        });
    }
    let t_len = log_probs.len();
    let inv_t = 1.0 / t_len as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Vec<f64>> = log_probs.iter().map(|row| vec![0.0; row.len()]).collect();
    for (t, (&label, row)) in pseudo_labels.iter().zip(log_probs).enumerate() {
        if label >= row.len() {
            return Err(SegmentError::LabelOutOfRange { label, num_classes: row.len() });
        }
        loss -= row[label] * inv_t;
        grads[t][label] = -inv_t;
    }
    Ok((loss, grads))
}
