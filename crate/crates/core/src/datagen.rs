//! Scripted synthetic interactions, the perturbation model and the heuristic
//! smoothing baselines.
//!
//! Phase timing: reach frame `k` sits at `s(k / R)` of a minimum-jerk profile,
//! so the first grasp frame is the first to reach the target. Release frame
//! `k` sits at `s((k + 1) / R)`, so the hand leaves contact immediately.
//! Manipulation starts at zero phase, making its first frame equal the grasp
//! pose.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use handrift_tensor::{Graph, Result as TResult, RngStream, Var};

use crate::error::{CoreError, Result};
use crate::hand::{HandModel, FINGERTIPS};
use crate::motion::{HandPose, MotionSequence, FRAME_DIM, NUM_BETAS, NUM_POSED};
use crate::physics::{MotionState, ObjectTrack, StateTrack};

/// Index fingertip closes on the object.
const CONTACT_TIP: usize = 8;
/// Manipulation oscillation period, frames. An even half-period keeps
/// consecutive samples distinct.
const MANIPULATION_PERIOD: f64 = 8.0;

/// Minimum-jerk position profile on `[0, 1]`.
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptSpec {
    pub free_before: usize,
    pub reach: usize,
    pub grasp: usize,
    pub manipulate: usize,
    pub release: usize,
    pub free_after: usize,
    /// Object centre before it is picked up, mm.
    pub object_start: [f64; 3],
    /// Wrist travel during reach and release, mm.
    pub approach_distance: f64,
    /// Fingertip-to-centre distance while holding, mm.
    pub contact_gap: f64,
    pub contact_threshold: f64,
    /// Finger angles at grasp; drawn from the seed when absent.
    pub grasp_pose: Option<Vec<[f64; 3]>>,
    /// Peak finger-angle excursion while manipulating, rad.
    pub manipulation_amplitude: f64,
    pub seed: u64,
}

impl Default for ScriptSpec {
    fn default() -> Self {
        ScriptSpec {
            free_before: 1,
            reach: 5,
            grasp: 3,
            manipulate: 3,
            release: 4,
            free_after: 0,
            object_start: [0.0, 0.0, 400.0],
            approach_distance: 250.0,
            contact_gap: 2.5,
            contact_threshold: 10.0,
            grasp_pose: None,
            manipulation_amplitude: 0.2,
            seed: 0,
        }
    }
}

impl ScriptSpec {
    pub fn total(&self) -> usize {
        self.free_before + self.reach + self.grasp + self.manipulate + self.release + self.free_after
    }

    /// Seeded script of exactly `frames` frames covering every state.
    pub fn random(seed: u64, frames: usize) -> Result<Self> {
        let mut rng = RngStream::derive(seed, "script", &[]);
        let mut spec = ScriptSpec {
            seed,
            ..Default::default()
        };
        let core_min = 4 + 2 + 3 + 4;
        if frames < core_min {
            return Err(CoreError::TooShort { need: core_min, got: frames });
        }
        loop {
            spec.reach = rng.range_inclusive(4, 5);
            spec.grasp = rng.range_inclusive(2, 3);
            spec.manipulate = 3;
            spec.release = rng.range_inclusive(4, 5);
            if spec.reach + spec.grasp + spec.manipulate + spec.release <= frames {
                break;
            }
        }
        let slack = frames - (spec.reach + spec.grasp + spec.manipulate + spec.release);
        if frames > 32 {
            // long scripts stretch the interaction phases
            let extra = slack - slack.min(4);
            spec.grasp += extra / 3;
            spec.manipulate += extra / 3;
            spec.free_after += extra - 2 * (extra / 3);
        }
        let slack = frames - (spec.reach + spec.grasp + spec.manipulate + spec.release + spec.free_after);
        spec.free_before = rng.range_inclusive(0, slack.min(2));
        spec.free_after += slack - spec.free_before;
        spec.approach_distance = rng.uniform_in(200.0, 300.0);
        spec.contact_gap = rng.uniform_in(2.0, 3.0);
        spec.manipulation_amplitude = rng.uniform_in(0.15, 0.25);
        spec.object_start = [
            rng.uniform_in(-100.0, 100.0),
            rng.uniform_in(-100.0, 100.0),
            rng.uniform_in(350.0, 450.0),
        ];
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.total() < 3 {
            return Err(CoreError::config(format!(
                "script has {} frames, need at least 3",
                self.total()
            )));
        }
        let holds = self.grasp + self.manipulate > 0;
        let moves = self.approach_distance > 0.0;
        if holds && moves && self.reach == 0 {
            return Err(CoreError::config(
                "infeasible script: zero-length reach with nonzero approach distance",
            ));
        }
        if holds && moves && self.release == 0 && self.free_after > 0 {
            return Err(CoreError::config(
                "infeasible script: free frames after holding need a release phase",
            ));
        }
        if !(self.approach_distance >= 0.0 && self.contact_gap >= 0.0 && self.contact_threshold > 0.0) {
            return Err(CoreError::config("distances must be non-negative"));
        }
        if let Some(p) = &self.grasp_pose {
            if p.len() != NUM_POSED {
                return Err(CoreError::config(format!(
                    "grasp pose needs {NUM_POSED} joints, got {}",
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth sample produced from one script.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub motion: MotionSequence,
    pub object: ObjectTrack,
    pub states: StateTrack,
}

/// Finger angles: flexion about the local y axis, small abduction about z.
fn finger_pose(rng: &mut RngStream, flex: (f64, f64), spread: f64) -> [[f64; 3]; NUM_POSED] {
    let mut theta = [[0.0; 3]; NUM_POSED];
    for (k, t) in theta.iter_mut().enumerate() {
        let joint = k % 3;
        let scale = [1.0, 1.1, 0.7][joint];
        t[0] = rng.uniform_in(-0.5 * spread, 0.5 * spread);
        t[1] = scale * rng.uniform_in(flex.0, flex.1);
        t[2] = if joint == 0 { rng.uniform_in(-spread, spread) } else { 0.0 };
    }
    theta
}

fn lerp_theta(a: &[[f64; 3]; NUM_POSED], b: &[[f64; 3]; NUM_POSED], s: f64) -> [[f64; 3]; NUM_POSED] {
    let mut out = *a;
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        for c in 0..3 {
            o[c] = x[c] + s * (y[c] - x[c]);
        }
    }
    out
}

fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::from(p)
}

pub fn generate_sequence(spec: &ScriptSpec, model: &HandModel) -> Result<Interaction> {
    spec.validate()?;
    let mut rng = RngStream::derive(spec.seed, "interaction", &[]);
    let root_orient = [
        rng.uniform_in(-0.4, 0.4),
        rng.uniform_in(-0.4, 0.4),
        rng.uniform_in(-0.4, 0.4),
    ];
    let mut beta = [0.0; NUM_BETAS];
    beta.iter_mut().for_each(|b| *b = rng.uniform_in(-1.0, 1.0));
    let open = finger_pose(&mut rng, (0.0, 0.15), 0.05);
    let grasp = match &spec.grasp_pose {
        Some(p) => {
            let mut g = [[0.0; 3]; NUM_POSED];
            g.copy_from_slice(p);
            g
        }
        None => finger_pose(&mut rng, (0.35, 0.8), 0.1),
    };
    let approach = {
        let raw = Vector3::new(rng.normal(), rng.normal(), rng.normal());
        raw.normalize()
    };
    let retreat = {
        let jitter = Vector3::new(rng.normal(), rng.normal(), rng.normal());
        (approach + 0.4 * jitter.normalize()).normalize()
    };
    let wobble: Vec<[f64; 3]> = (0..NUM_POSED)
        .map(|_| {
            let mut d = [0.0; 3];
            d.iter_mut().for_each(|x| {
                let sgn = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                *x = sgn * rng.uniform_in(0.5, 1.0);
            });
            d
        })
        .collect();

    let pose_at = |theta: [[f64; 3]; NUM_POSED], wrist: Vector3<f64>| HandPose {
        root_orient,
        theta,
        beta,
        root_translation: wrist.into(),
    };
    let tip_of = |pose: &HandPose| -> Result<Vector3<f64>> {
        Ok(v3(model.forward_kinematics(pose)?[CONTACT_TIP]))
    };

    // the grasping wrist puts the contact tip `gap` short of the object centre
    let center0 = v3(spec.object_start);
    let tip_local = tip_of(&pose_at(grasp, Vector3::zeros()))?;
    let wrist_grasp = center0 - spec.contact_gap * approach - tip_local;
    let wrist_start = wrist_grasp - spec.approach_distance * approach;
    let interacts = spec.reach + spec.grasp + spec.manipulate + spec.release > 0;

    let mut poses = Vec::with_capacity(spec.total());
    let mut centers = Vec::with_capacity(spec.total());
    let mut labels = Vec::with_capacity(spec.total());
    let mut push = |p: HandPose, c: Vector3<f64>, l: MotionState| {
        poses.push(p);
        centers.push(<[f64; 3]>::from(c));
        labels.push(l);
    };

    let start_wrist = if interacts && spec.reach > 0 { wrist_start } else { wrist_grasp };
    let idle_wrist = if interacts { start_wrist } else { wrist_start };
    for _ in 0..spec.free_before {
        push(pose_at(open, idle_wrist), center0, MotionState::Free);
    }
    for k in 0..spec.reach {
        let s = min_jerk(k as f64 / spec.reach as f64);
        let w = wrist_start + s * (wrist_grasp - wrist_start);
        push(pose_at(lerp_theta(&open, &grasp, s), w), center0, MotionState::Reaching);
    }
    for _ in 0..spec.grasp {
        push(pose_at(grasp, wrist_grasp), center0, MotionState::StableGrasping);
    }
    let hold_offset = center0 - (wrist_grasp + tip_local);
    let mut last_theta = grasp;
    let mut last_center = center0;
    for m in 0..spec.manipulate {
        let phase = (TAU * m as f64 / MANIPULATION_PERIOD).sin();
        let mut theta = grasp;
        for (t, d) in theta.iter_mut().zip(&wobble) {
            for c in 0..3 {
                t[c] += spec.manipulation_amplitude * phase * d[c];
            }
        }
        let pose = pose_at(theta, wrist_grasp);
        let c = tip_of(&pose)? + hold_offset;
        push(pose, c, MotionState::Manipulation);
        last_theta = theta;
        last_center = c;
    }
    let wrist_end = wrist_grasp - spec.approach_distance * retreat;
    for k in 0..spec.release {
        let s = min_jerk((k + 1) as f64 / spec.release as f64);
        let w = wrist_grasp + s * (wrist_end - wrist_grasp);
        push(pose_at(lerp_theta(&last_theta, &open, s), w), last_center, MotionState::Releasing);
    }
    let (tail_theta, tail_wrist) = if spec.release > 0 {
        (open, wrist_end)
    } else if interacts {
        (last_theta, wrist_grasp)
    } else {
        (open, idle_wrist)
    };
    for _ in 0..spec.free_after {
        push(pose_at(tail_theta, tail_wrist), last_center, MotionState::Free);
    }

    let motion = MotionSequence::from_poses(&poses)?;
    let mut dist = Vec::with_capacity(poses.len());
    for (p, c) in poses.iter().zip(&centers) {
        let joints = model.forward_kinematics(p)?;
        let d = FINGERTIPS
            .iter()
            .map(|&j| (v3(joints[j]) - v3(*c)).norm())
            .fold(f64::INFINITY, f64::min);
        dist.push(d);
    }
    let contact = labels.iter().map(|l| l.in_contact()).collect();
    Ok(Interaction {
        motion,
        object: ObjectTrack {
            center: centers,
            contact_threshold: spec.contact_threshold,
        },
        states: StateTrack { labels, contact, dist },
    })
}

/// `count` seeded scripts of `frames` frames; item `i` uses seed `seed + i`.
pub fn generate_corpus(
    model: &HandModel,
    seed: u64,
    count: usize,
    frames: usize,
) -> Result<Vec<(ScriptSpec, Interaction)>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = ScriptSpec::random(seed.wrapping_add(i as u64), frames)?;
            let sample = generate_sequence(&spec, model)?;
            Ok((spec, sample))
        })
        .collect()
}

/// Standard deviation of the additive noise per channel group, raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelNoise {
    /// Root orientation, rad.
    pub root: f64,
    /// Finger joint angles, rad.
    pub fingers: f64,
    pub betas: f64,
    /// Wrist translation, mm.
    pub translation: f64,
}

impl Default for ChannelNoise {
    fn default() -> Self {
        // about 22 mm root-relative MJE and 52 mm/frame^2 ACCL on the desk corpus
        ChannelNoise {
            root: 0.1,
            fingers: 0.25,
            betas: 0.1,
            translation: 5.0,
        }
    }
}

impl ChannelNoise {
    pub fn zero() -> Self {
        ChannelNoise {
            root: 0.0,
            fingers: 0.0,
            betas: 0.0,
            translation: 0.0,
        }
    }

    /// Per-channel standard deviation of a frame.
    pub fn per_channel(&self) -> Vec<f64> {
        use crate::motion::{BETAS, FINGERS, ROOT, TRANSL};
        let mut s = vec![0.0; FRAME_DIM];
        s[ROOT].fill(self.root);
        s[FINGERS].fill(self.fingers);
        s[BETAS].fill(self.betas);
        s[TRANSL].fill(self.translation);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter {
    White,
    /// Noise low-passed over the given number of frames, rescaled to unit variance.
    Correlated(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    pub noise: ChannelNoise,
    /// Chance that a frame starts an occlusion burst.
    pub mask_prob: f64,
    /// Inclusive burst length range, frames.
    pub burst_min: usize,
    pub burst_max: usize,
    /// Noise multiplier on occluded frames.
    pub mask_noise_scale: f64,
    pub jitter: Jitter,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec {
            noise: ChannelNoise::default(),
            mask_prob: 0.03,
            burst_min: 1,
            burst_max: 2,
            mask_noise_scale: 2.0,
            jitter: Jitter::White,
        }
    }
}

impl PerturbSpec {
    pub fn none() -> Self {
        PerturbSpec {
            noise: ChannelNoise::zero(),
            mask_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(CoreError::config("mask_prob must lie in [0, 1]"));
        }
        if self.burst_min == 0 || self.burst_min > self.burst_max {
            return Err(CoreError::config("burst lengths must satisfy 1 <= min <= max"));
        }
        let n = &self.noise;
        if [n.root, n.fingers, n.betas, n.translation, self.mask_noise_scale]
            .iter()
            .any(|x| !(*x >= 0.0))
        {
            return Err(CoreError::config("noise levels must be non-negative"));
        }
        Ok(())
    }
}

/// Noisy observation of `x`: additive noise plus held-frame occlusion bursts.
pub fn perturb(x: &MotionSequence, spec: &PerturbSpec, rng: &mut RngStream) -> Result<MotionSequence> {
    spec.validate()?;
    let t_len = x.len();
    let std = spec.noise.per_channel();
    let mut eps: Vec<f64> = (0..t_len * FRAME_DIM).map(|_| rng.normal()).collect();
    if let Jitter::Correlated(width) = spec.jitter {
        let unit = MotionSequence::new(t_len, eps)?;
        let smooth = gaussian_smooth(&unit, width)?;
        let k = kernel(width);
        let gain = k.iter().map(|w| w * w).sum::<f64>().sqrt();
        eps = smooth.into_data().into_iter().map(|e| e / gain).collect();
    }
    let mut y = x.data().to_vec();
    let mut hold: Option<(usize, usize)> = None;
    for t in 0..t_len {
        if t >= 1 {
            hold = match hold {
                Some((src, left)) if left > 0 => Some((src, left - 1)),
                _ if rng.uniform() < spec.mask_prob => {
                    let len = rng.range_inclusive(spec.burst_min, spec.burst_max);
                    Some((t - 1, len - 1))
                }
                _ => None,
            };
        }
        let (src, scale) = match hold {
            Some((src, _)) => (src, spec.mask_noise_scale),
            None => (t, 1.0),
        };
        for c in 0..FRAME_DIM {
            y[t * FRAME_DIM + c] = x.data()[src * FRAME_DIM + c] + scale * std[c] * eps[t * FRAME_DIM + c];
        }
        if matches!(hold, Some((_, 0))) {
            hold = None;
        }
    }
    MotionSequence::new(t_len, y)
}

/// Normalized Gaussian weights on `-r..=r` with `r = round(4 sigma)`.
pub fn kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma + 0.5) as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Half-sample symmetric reflection of `i` into `0..n`.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Per-channel temporal Gaussian filter with reflected boundaries.
pub fn gaussian_smooth(x: &MotionSequence, sigma_frames: f64) -> Result<MotionSequence> {
    if !(sigma_frames >= 0.0) {
        return Err(CoreError::config("smoothing sigma must be non-negative"));
    }
    if sigma_frames == 0.0 {
        return Ok(x.clone());
    }
    let k = kernel(sigma_frames);
    let r = (k.len() / 2) as i64;
    let n = x.len() as i64;
    let mut out = vec![0.0; x.data().len()];
    for t in 0..n {
        let row = &mut out[t as usize * FRAME_DIM..(t as usize + 1) * FRAME_DIM];
        for (j, w) in k.iter().enumerate() {
            let src = x.frame(reflect(t + j as i64 - r, n));
            row.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
        }
    }
    MotionSequence::new(x.len(), out)
}

/// Low-pass baseline: smoothing with a fixed width.
pub fn smoothfilter_baseline(y: &MotionSequence, sigma_frames: f64) -> Result<MotionSequence> {
    gaussian_smooth(y, sigma_frames)
}

/// Mean squared third temporal difference of a row-major `[T, dims]` slice.
pub fn constant_accel_penalty(x: &[f64], dims: usize) -> f64 {
    let t_len = x.len() / dims;
    if t_len < 4 {
        return 0.0;
    }
    let mut total = 0.0;
    for t in 0..t_len - 3 {
        for k in 0..dims {
            let at = |i: usize| x[(t + i) * dims + k];
            let jerk = at(3) - 3.0 * at(2) + 3.0 * at(1) - at(0);
            total += jerk * jerk;
        }
    }
    total / ((t_len - 3) * dims) as f64
}

/// [`constant_accel_penalty`] on the tape for `[T, D]` input.
pub fn constant_accel_loss(g: &Graph, x: Var) -> TResult<Var> {
    let t = g.shape(x)[0];
    if t < 4 {
        return Ok(g.scalar(0.0));
    }
    let w = [-1.0, 3.0, -3.0, 1.0];
    let mut jerk = None;
    for (i, c) in w.iter().enumerate() {
        let term = g.scale(g.slice(x, 0, i, t - 3 + i)?, *c);
        jerk = Some(match jerk {
            None => term,
            Some(j) => g.add(j, term)?,
        });
    }
    Ok(g.mean(g.square(jerk.unwrap())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_jerk_endpoints_and_monotonicity() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        let mut prev = 0.0;
        for i in 1..=100 {
            let s = min_jerk(i as f64 / 100.0);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn reflection_mirrors_edges() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(9, 2), 1);
    }

    #[test]
    fn random_scripts_fill_the_window() {
        for seed in 0..50 {
            let s = ScriptSpec::random(seed, 16).unwrap();
            assert_eq!(s.total(), 16);
            assert!(s.reach > 0 && s.grasp > 0 && s.manipulate > 0 && s.release > 0);
        }
        assert_eq!(ScriptSpec::random(3, 64).unwrap().total(), 64);
        assert!(ScriptSpec::random(0, 8).is_err());
    }

    #[test]
    fn infeasible_script_is_rejected() {
        let spec = ScriptSpec {
            reach: 0,
            ..Default::default()
        };
        assert!(generate_sequence(&spec, &HandModel::default()).is_err());
    }
}
