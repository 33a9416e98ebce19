//! Per-frame hand parameters and fixed-length motion sequences.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub const NUM_POSED: usize = 15;
pub const NUM_BETAS: usize = 10;
/// Frame vector: root orientation (3), finger axis-angles (45), shape (10), translation (3).
pub const FRAME_DIM: usize = 3 + 3 * NUM_POSED + NUM_BETAS + 3;
/// Root orientation plus finger rotations.
pub const THETA_DIM: usize = 3 + 3 * NUM_POSED;
pub const FINGER_DIM: usize = 3 * NUM_POSED;

pub const ROOT: std::ops::Range<usize> = 0..3;
pub const FINGERS: std::ops::Range<usize> = 3..THETA_DIM;
pub const BETAS: std::ops::Range<usize> = THETA_DIM..THETA_DIM + NUM_BETAS;
pub const TRANSL: std::ops::Range<usize> = THETA_DIM + NUM_BETAS..FRAME_DIM;

/// Minimum length for three-frame physics windows.
pub const MIN_FRAMES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct HandPose {
    /// Axis-angle, radians.
    pub root_orient: [f64; 3],
    /// Axis-angle per articulated joint, radians.
    pub theta: [[f64; 3]; NUM_POSED],
    pub beta: [f64; NUM_BETAS],
    /// Wrist position, millimetres.
    pub root_translation: [f64; 3],
}

impl Default for HandPose {
    fn default() -> Self {
        HandPose {
            root_orient: [0.0; 3],
            theta: [[0.0; 3]; NUM_POSED],
            beta: [0.0; NUM_BETAS],
            root_translation: [0.0; 3],
        }
    }
}

impl HandPose {
    pub fn from_frame(frame: &[f64]) -> Result<Self> {
        if frame.len() != FRAME_DIM {
            return Err(CoreError::input(format!(
                "frame has {} values, expected {FRAME_DIM}",
                frame.len()
            )));
        }
        let mut p = HandPose::default();
        p.root_orient.copy_from_slice(&frame[ROOT]);
        for (k, t) in p.theta.iter_mut().enumerate() {
            t.copy_from_slice(&frame[3 + 3 * k..6 + 3 * k]);
        }
        p.beta.copy_from_slice(&frame[BETAS]);
        p.root_translation.copy_from_slice(&frame[TRANSL]);
        Ok(p)
    }

    pub fn to_frame(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(FRAME_DIM);
        f.extend_from_slice(&self.root_orient);
        self.theta.iter().for_each(|t| f.extend_from_slice(t));
        f.extend_from_slice(&self.beta);
        f.extend_from_slice(&self.root_translation);
        f
    }

    pub fn is_finite(&self) -> bool {
        self.to_frame().iter().all(|x| x.is_finite())
    }

    /// Wraps every axis-angle to a rotation angle of at most pi.
    pub fn canonicalized(mut self) -> Self {
        self.root_orient = canonical_axis_angle(self.root_orient);
        for t in &mut self.theta {
            *t = canonical_axis_angle(*t);
        }
        self
    }
}

/// Equivalent axis-angle with angle in `[0, pi]`.
pub fn canonical_axis_angle(w: [f64; 3]) -> [f64; 3] {
    let angle = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if angle <= std::f64::consts::PI {
        return w;
    }
    let tau = std::f64::consts::TAU;
    let mut wrapped = angle % tau;
    if wrapped > std::f64::consts::PI {
        wrapped -= tau;
    }
    let s = wrapped / angle;
    [w[0] * s, w[1] * s, w[2] * s]
}

/// `T` frames of `FRAME_DIM` parameters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: usize,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn new(frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * FRAME_DIM {
            return Err(CoreError::input(format!(
                "{} values do not form {frames} frames of {FRAME_DIM}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::input("motion contains non-finite values"));
        }
        Ok(MotionSequence { frames, data })
    }

    pub fn from_poses(poses: &[HandPose]) -> Result<Self> {
        let data = poses.iter().flat_map(HandPose::to_frame).collect();
        Self::new(poses.len(), data)
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FRAME_DIM..(t + 1) * FRAME_DIM]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * FRAME_DIM..(t + 1) * FRAME_DIM]
    }

    pub fn pose(&self, t: usize) -> HandPose {
        HandPose::from_frame(self.frame(t)).expect("frame width is fixed")
    }

    pub fn poses(&self) -> Vec<HandPose> {
        (0..self.frames).map(|t| self.pose(t)).collect()
    }

    /// Root orientation plus finger rotations, `T x 48`.
    pub fn theta(&self) -> Vec<f64> {
        self.channels(0..THETA_DIM)
    }

    /// Finger rotations only, `T x 45`.
    pub fn finger_theta(&self) -> Vec<f64> {
        self.channels(FINGERS)
    }

    pub fn channels(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        (0..self.frames)
            .flat_map(|t| self.frame(t)[range.clone()].to_vec())
            .collect()
    }

    /// Frames `start..end` as a new sequence.
    pub fn window(&self, start: usize, end: usize) -> MotionSequence {
        MotionSequence {
            frames: end - start,
            data: self.data[start * FRAME_DIM..end * FRAME_DIM].to_vec(),
        }
    }

    pub fn require_min_len(&self, need: usize) -> Result<()> {
        if self.frames < need {
            return Err(CoreError::TooShort {
                need,
                got: self.frames,
            });
        }
        Ok(())
    }
}

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: vec![0.0; FRAME_DIM],
            std: vec![1.0; FRAME_DIM],
        }
    }

    /// Statistics over every frame of `seqs`; near-constant channels keep unit scale.
    pub fn fit(seqs: &[MotionSequence]) -> Result<Self> {
        let n: usize = seqs.iter().map(MotionSequence::len).sum();
        if n == 0 {
            return Err(CoreError::input("cannot fit normalization on an empty corpus"));
        }
        let mut mean = vec![0.0; FRAME_DIM];
        for s in seqs {
            for t in 0..s.len() {
                mean.iter_mut().zip(s.frame(t)).for_each(|(m, x)| *m += x);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; FRAME_DIM];
        for s in seqs {
            for t in 0..s.len() {
                for (d, x) in s.frame(t).iter().enumerate() {
                    var[d] += (x - mean[d]).powi(2);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-6 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn normalize(&self, seq: &MotionSequence) -> Vec<f64> {
        seq.data()
            .chunks(FRAME_DIM)
            .flat_map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(d, x)| (x - self.mean[d]) / self.std[d])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Result<MotionSequence> {
        let data: Vec<f64> = z
            .chunks(FRAME_DIM)
            .flat_map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(d, x)| x * self.std[d] + self.mean[d])
                    .collect::<Vec<_>>()
            })
            .collect();
        MotionSequence::new(z.len() / FRAME_DIM, data)
    }

    /// Content hash identifying these statistics.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for x in self.mean.iter().chain(&self.std) {
            h.update(x.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}
