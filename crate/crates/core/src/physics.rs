//! Motion-state annotation and the physics-inspired losses.
//!
//! The tape losses take raw (unnormalized) angles in radians. Their `*_value`
//! twins evaluate the same quantities on plain slices for metrics and tests.

use serde::{Deserialize, Serialize};

use handrift_tensor::{Graph, Result as TResult, Tensor, TensorError, Var};

use crate::error::{CoreError, Result};
use crate::hand::{HandModel, FINGERTIPS, NUM_FINGERS, WRIST};
use crate::motion::{MotionSequence, FINGERS};

pub const NUM_STATES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MotionState {
    Reaching = 0,
    StableGrasping = 1,
    Manipulation = 2,
    Releasing = 3,
    Free = 4,
}

impl MotionState {
    pub const ALL: [MotionState; NUM_STATES] = [
        MotionState::Reaching,
        MotionState::StableGrasping,
        MotionState::Manipulation,
        MotionState::Releasing,
        MotionState::Free,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| CoreError::input(format!("state index {i} outside 0..{NUM_STATES}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionState::Reaching => "reaching",
            MotionState::StableGrasping => "stable_grasping",
            MotionState::Manipulation => "manipulation",
            MotionState::Releasing => "releasing",
            MotionState::Free => "free",
        }
    }

    pub fn in_contact(self) -> bool {
        matches!(self, MotionState::StableGrasping | MotionState::Manipulation)
    }

    /// States whose frames enter the direction-change penalty.
    pub fn is_transport(self) -> bool {
        matches!(self, MotionState::Reaching | MotionState::Releasing)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateTrack {
    pub labels: Vec<MotionState>,
    pub contact: Vec<bool>,
    /// Hand-object distance per frame, mm.
    pub dist: Vec<f64>,
}

impl StateTrack {
    /// Track with labels only; contact follows the label, distances are unknown.
    pub fn from_labels(labels: Vec<MotionState>) -> Self {
        let contact = labels.iter().map(|s| s.in_contact()).collect();
        let dist = vec![f64::NAN; labels.len()];
        StateTrack { labels, contact, dist }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.labels.iter().map(|s| s.index()).collect()
    }

    pub fn window(&self, start: usize, end: usize) -> StateTrack {
        StateTrack {
            labels: self.labels[start..end].to_vec(),
            contact: self.contact[start..end].to_vec(),
            dist: self.dist[start..end].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    /// Object centre per frame, mm.
    pub center: Vec<[f64; 3]>,
    pub contact_threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceReference {
    Fingertips,
    PalmCenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    /// Contact distance, mm. Used when the object track carries no threshold.
    pub contact_threshold: f64,
    /// Minimum approach or retreat rate, mm per frame.
    pub distance_rate: f64,
    /// Finger speed below which a contact frame is a stable grasp, degrees per frame.
    pub finger_speed_deg: f64,
    pub reference: DistanceReference,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            contact_threshold: 10.0,
            distance_rate: 1.0,
            finger_speed_deg: 0.5,
            reference: DistanceReference::Fingertips,
        }
    }
}

/// Labels every frame from contact and the trend of the hand-object distance.
///
/// The distance trend is the centred difference `(d[t+1] - d[t-1]) / 2`,
/// one-sided at the ends. Finger speed is the mean absolute change of the
/// finger angles to the next frame (to the previous one at the last frame).
pub fn annotate_states(
    motion: &MotionSequence,
    obj: &ObjectTrack,
    model: &HandModel,
    cfg: &AnnotatorConfig,
) -> Result<StateTrack> {
    let t_len = motion.len();
    if t_len < 3 {
        return Err(CoreError::TooShort { need: 3, got: t_len });
    }
    if obj.center.len() != t_len {
        return Err(CoreError::input(format!(
            "object track has {} frames, motion has {t_len}",
            obj.center.len()
        )));
    }
    let threshold = if obj.contact_threshold > 0.0 {
        obj.contact_threshold
    } else {
        cfg.contact_threshold
    };
    let mut dist = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let joints = model.forward_kinematics(&motion.pose(t))?;
        let c = obj.center[t];
        let d = |p: [f64; 3]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        dist.push(match cfg.reference {
            DistanceReference::Fingertips => FINGERTIPS.iter().map(|&j| d(joints[j])).fold(f64::INFINITY, f64::min),
            DistanceReference::PalmCenter => {
                let mut p = joints[WRIST];
                for f in 0..NUM_FINGERS {
                    let k = joints[1 + 4 * f];
                    (0..3).for_each(|i| p[i] += k[i]);
                }
                d(p.map(|x| x / (NUM_FINGERS + 1) as f64))
            }
        });
    }
    let speed_limit = cfg.finger_speed_deg.to_radians();
    let fingers: Vec<&[f64]> = (0..t_len).map(|t| &motion.frame(t)[FINGERS]).collect();
    let mut labels = Vec::with_capacity(t_len);
    let mut contact = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let in_contact = dist[t] < threshold;
        contact.push(in_contact);
        let label = if in_contact {
            let (a, b) = if t + 1 < t_len { (t, t + 1) } else { (t - 1, t) };
            let speed = mean_abs_diff(fingers[a], fingers[b]);
            if speed < speed_limit {
                MotionState::StableGrasping
            } else {
                MotionState::Manipulation
            }
        } else {
            let rate = if t == 0 {
                dist[1] - dist[0]
            } else if t + 1 == t_len {
                dist[t] - dist[t - 1]
            } else {
                0.5 * (dist[t + 1] - dist[t - 1])
            };
            if rate < -cfg.distance_rate {
                MotionState::Reaching
            } else if rate > cfg.distance_rate {
                MotionState::Releasing
            } else {
                MotionState::Free
            }
        };
        labels.push(label);
    }
    Ok(StateTrack { labels, contact, dist })
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Start frames of 3-frame windows lying wholly inside one transport state.
pub fn transport_windows(labels: &[MotionState]) -> Vec<usize> {
    if labels.len() < 3 {
        return Vec::new();
    }
    (0..labels.len() - 2)
        .filter(|&t| labels[t].is_transport() && labels[t + 1] == labels[t] && labels[t + 2] == labels[t])
        .collect()
}

/// First frames of consecutive stable-grasp pairs.
pub fn grasp_pairs(labels: &[MotionState]) -> Vec<usize> {
    (0..labels.len().saturating_sub(1))
        .filter(|&t| labels[t] == MotionState::StableGrasping && labels[t + 1] == MotionState::StableGrasping)
        .collect()
}

fn check_labels(op: &'static str, rows: usize, labels: &[MotionState]) -> TResult<()> {
    if rows != labels.len() {
        return Err(TensorError::Invalid {
            op,
            msg: format!("{rows} frames but {} labels", labels.len()),
        });
    }
    Ok(())
}

/// Mean cross-entropy of `[T, S]` logits against per-frame class indices.
pub fn state_loss(g: &Graph, logits: Var, labels: &[usize]) -> TResult<Var> {
    let shape = g.shape(logits);
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TensorError::Invalid {
            op: "state_loss",
            msg: format!("logits {shape:?} vs {} labels", labels.len()),
        });
    }
    let (t, s) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; t * s];
    for (i, &c) in labels.iter().enumerate() {
        if c >= s {
            return Err(TensorError::Invalid {
                op: "state_loss",
                msg: format!("label {c} outside 0..{s}"),
            });
        }
        onehot[i * s + c] = 1.0;
    }
    let target = g.constant(Tensor::new(&[t, s], onehot)?);
    let picked = g.sum(g.mul(g.log_softmax(logits)?, target)?);
    Ok(g.scale(picked, -1.0 / t as f64))
}

/// Hinged direction change over homogeneous reaching or releasing windows.
///
/// `theta` is `[T, D]`; the sign of the first difference carries no gradient.
pub fn kinetics_loss(g: &Graph, theta: Var, labels: &[MotionState]) -> TResult<Var> {
    let shape = g.shape(theta);
    check_labels("kinetics_loss", shape[0], labels)?;
    let windows = transport_windows(labels);
    if windows.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let (t, d) = (shape[0], shape[1]);
    let diff = g.sub(g.slice(theta, 0, 1, t)?, g.slice(theta, 0, 0, t - 1)?)?;
    let lead = g.sign(g.slice(diff, 0, 0, t - 2)?);
    let next = g.slice(diff, 0, 1, t - 1)?;
    let phi = g.hinge(g.neg(g.mul(lead, next)?));
    let mut mask = vec![0.0; t - 2];
    windows.iter().for_each(|&w| mask[w] = 1.0);
    let mask = g.constant(Tensor::new(&[t - 2, 1], mask)?);
    Ok(g.scale(g.sum(g.mul(phi, mask)?), 1.0 / (windows.len() * d) as f64))
}

/// Mean squared L2 change of `theta` (`[T, D]`) over stable-grasp pairs.
pub fn stability_loss(g: &Graph, theta: Var, labels: &[MotionState]) -> TResult<Var> {
    let shape = g.shape(theta);
    check_labels("stability_loss", shape[0], labels)?;
    let pairs = grasp_pairs(labels);
    if pairs.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let t = shape[0];
    let diff = g.sub(g.slice(theta, 0, 1, t)?, g.slice(theta, 0, 0, t - 1)?)?;
    let mut mask = vec![0.0; t - 1];
    pairs.iter().for_each(|&p| mask[p] = 1.0);
    let mask = g.constant(Tensor::new(&[t - 1, 1], mask)?);
    Ok(g.scale(g.sum(g.mul(g.square(diff), mask)?), 1.0 / pairs.len() as f64))
}

/// [`kinetics_loss`] on a row-major `[T, dims]` slice.
pub fn kinetics_value(theta: &[f64], dims: usize, labels: &[MotionState]) -> f64 {
    let windows = transport_windows(labels);
    if windows.is_empty() {
        return 0.0;
    }
    let at = |t: usize, k: usize| theta[t * dims + k];
    let mut total = 0.0;
    for &t in &windows {
        for k in 0..dims {
            let first = at(t + 1, k) - at(t, k);
            let second = at(t + 2, k) - at(t + 1, k);
            total += (-sign(first) * second).max(0.0);
        }
    }
    total / (windows.len() * dims) as f64
}

/// [`stability_loss`] on a row-major `[T, dims]` slice.
pub fn stability_value(theta: &[f64], dims: usize, labels: &[MotionState]) -> f64 {
    let pairs = grasp_pairs(labels);
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|&t| {
            (0..dims)
                .map(|k| (theta[(t + 1) * dims + k] - theta[t * dims + k]).powi(2))
                .sum::<f64>()
        })
        .sum();
    total / pairs.len() as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
