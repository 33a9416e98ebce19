//! Procedural articulated hand: skeleton, forward kinematics, skinned mesh and
//! joint regressor.
//!
//! Joint layout: 0 is the wrist; finger `f` (thumb, index, middle, ring,
//! pinky) owns joints `1 + 4f + i`, articulated for `i < 3` and a tip for
//! `i = 3`. The articulated joint `1 + 4f + i` reads pose slot `3f + i`, and
//! bone `b` ends at joint `b + 1`.
//!
//! Frame convention: x points distally along the fingers, y toward the thumb,
//! z along the palm normal. Lengths are millimetres.

mod mesh;
mod rotation;
mod tape;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use handrift_tensor::RngStream;

use crate::error::{CoreError, Result};
use crate::motion::{HandPose, NUM_BETAS};

pub use mesh::{MeshSpec, Template};
pub use rotation::{rodrigues, rodrigues_graph, SERIES_THRESHOLD};
pub use tape::fk_graph;

pub const NUM_JOINTS: usize = 21;
pub const NUM_BONES: usize = NUM_JOINTS - 1;
pub const NUM_FINGERS: usize = 5;
pub const FINGERTIPS: [usize; NUM_FINGERS] = [4, 8, 12, 16, 20];
pub const WRIST: usize = 0;

/// Parent of every joint; `None` for the wrist.
pub fn parent(j: usize) -> Option<usize> {
    match j {
        0 => None,
        j if (j - 1) % 4 == 0 => Some(0),
        j => Some(j - 1),
    }
}

/// Pose slot driving joint `j`, if it is articulated.
pub fn pose_slot(j: usize) -> Option<usize> {
    if j == 0 || j % 4 == 0 {
        None
    } else {
        let f = (j - 1) / 4;
        Some(3 * f + (j - 1) % 4)
    }
}

/// Serializable description; everything else is regenerated from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandModelSpec {
    pub parents: Vec<Option<usize>>,
    /// Offset of each joint from its parent in the rest pose, mm.
    pub rest_offsets: Vec<[f64; 3]>,
    pub shape_seed: u64,
    /// Shape-basis entries are drawn uniformly from `[-range, range]`.
    pub shape_range: f64,
    pub mesh: MeshSpec,
}

impl Default for HandModelSpec {
    fn default() -> Self {
        let rest_offsets = vec![
            [0.0, 0.0, 0.0],
            // thumb
            [20.0, 25.0, -8.0],
            [24.5, 24.5, 0.0],
            [22.5, 19.5, 0.0],
            [20.0, 15.0, 0.0],
            // index
            [90.0, 25.0, 0.0],
            [40.0, 0.0, 0.0],
            [25.0, 0.0, 0.0],
            [20.0, 0.0, 0.0],
            // middle
            [92.0, 5.0, 0.0],
            [44.0, 0.0, 0.0],
            [28.0, 0.0, 0.0],
            [22.0, 0.0, 0.0],
            // ring
            [87.0, -14.0, 0.0],
            [40.0, 0.0, 0.0],
            [26.0, 0.0, 0.0],
            [21.0, 0.0, 0.0],
            // pinky
            [80.0, -32.0, 0.0],
            [32.0, 0.0, 0.0],
            [20.0, 0.0, 0.0],
            [18.0, 0.0, 0.0],
        ];
        HandModelSpec {
            parents: (0..NUM_JOINTS).map(parent).collect(),
            rest_offsets,
            shape_seed: 7,
            shape_range: 0.05,
            mesh: MeshSpec::default(),
        }
    }
}

/// Per-joint world transform: rotation and position.
#[derive(Clone, Copy, Debug)]
pub struct JointTransform {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

/// Immutable once built; every operation is a pure function of its inputs.
#[derive(Clone, Debug)]
pub struct HandModel {
    spec: HandModelSpec,
    /// `NUM_BONES x NUM_BETAS`, row-major.
    shape_basis: Vec<f64>,
    template: Template,
}

impl Default for HandModel {
    fn default() -> Self {
        HandModel::new(HandModelSpec::default()).expect("default hand spec is valid")
    }
}

impl HandModel {
    pub fn new(spec: HandModelSpec) -> Result<Self> {
        validate(&spec)?;
        let mut rng = RngStream::derive(spec.shape_seed, "shape-basis", &[]);
        let r = spec.shape_range;
        let shape_basis = (0..NUM_BONES * NUM_BETAS)
            .map(|_| rng.uniform_in(-r, r))
            .collect();
        let mut model = HandModel {
            spec,
            shape_basis,
            template: Template::empty(),
        };
        model.template = Template::build(&model)?;
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec)?)
    }

    pub fn spec(&self) -> &HandModelSpec {
        &self.spec
    }

    pub fn shape_basis(&self) -> &[f64] {
        &self.shape_basis
    }

    pub fn template(&self) -> &Template {
        &self.template
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn rest_offset(&self, j: usize) -> Vector3<f64> {
        Vector3::from(self.spec.rest_offsets[j])
    }

    /// Length multiplier of every bone.
    pub fn bone_scales(&self, beta: &[f64; NUM_BETAS]) -> [f64; NUM_BONES] {
        let mut s = [1.0; NUM_BONES];
        for (b, sb) in s.iter_mut().enumerate() {
            let row = &self.shape_basis[b * NUM_BETAS..(b + 1) * NUM_BETAS];
            *sb += row.iter().zip(beta).map(|(w, x)| w * x).sum::<f64>();
        }
        s
    }

    /// Rest skeleton for a shape, wrist at the origin.
    pub fn rest_joints(&self, beta: &[f64; NUM_BETAS]) -> Vec<Vector3<f64>> {
        let scales = self.bone_scales(beta);
        let mut p = vec![Vector3::zeros(); NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let par = parent(j).unwrap();
            p[j] = p[par] + scales[j - 1] * self.rest_offset(j);
        }
        p
    }

    /// World transforms of all joints. Tips inherit their parent's rotation.
    pub fn joint_transforms(&self, pose: &HandPose) -> Result<Vec<JointTransform>> {
        if !pose.is_finite() {
            return Err(CoreError::input("non-finite hand pose"));
        }
        let scales = self.bone_scales(&pose.beta);
        let mut out = Vec::with_capacity(NUM_JOINTS);
        out.push(JointTransform {
            rotation: rodrigues(pose.root_orient),
            position: Vector3::from(pose.root_translation),
        });
        for j in 1..NUM_JOINTS {
            let par = out[parent(j).unwrap()];
            let position = par.position + par.rotation * (scales[j - 1] * self.rest_offset(j));
            let rotation = match pose_slot(j) {
                Some(k) => par.rotation * rodrigues(pose.theta[k]),
                None => par.rotation,
            };
            out.push(JointTransform { rotation, position });
        }
        Ok(out)
    }

    pub fn forward_kinematics(&self, pose: &HandPose) -> Result<Vec<[f64; 3]>> {
        Ok(self
            .joint_transforms(pose)?
            .iter()
            .map(|t| t.position.into())
            .collect())
    }

    /// Linear blend skinning of the template.
    pub fn skin_mesh(&self, pose: &HandPose) -> Result<Vec<[f64; 3]>> {
        let transforms = self.joint_transforms(pose)?;
        let rest = self.rest_joints(&pose.beta);
        Ok(self.template.skin(&transforms, &rest))
    }

    /// `H * vertices`.
    pub fn regress_joints(&self, vertices: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let v = self.num_vertices();
        if vertices.len() != v {
            return Err(CoreError::input(format!(
                "regress_joints: expected {v} vertices, got {}",
                vertices.len()
            )));
        }
        let h = self.template.regressor();
        Ok((0..NUM_JOINTS)
            .map(|j| {
                let row = &h[j * v..(j + 1) * v];
                let mut acc = [0.0; 3];
                for (w, p) in row.iter().zip(vertices) {
                    if *w != 0.0 {
                        (0..3).for_each(|c| acc[c] += w * p[c]);
                    }
                }
                acc
            })
            .collect())
    }
}

fn validate(spec: &HandModelSpec) -> Result<()> {
    if spec.parents.len() != NUM_JOINTS || spec.rest_offsets.len() != NUM_JOINTS {
        return Err(CoreError::config(format!(
            "hand model needs {NUM_JOINTS} joints, got {} parents and {} offsets",
            spec.parents.len(),
            spec.rest_offsets.len()
        )));
    }
    for (j, p) in spec.parents.iter().enumerate() {
        if *p != parent(j) {
            return Err(CoreError::config(format!(
                "joint {j} has parent {p:?}, expected {:?}",
                parent(j)
            )));
        }
    }
    for (j, o) in spec.rest_offsets.iter().enumerate().skip(1) {
        let n = Vector3::from(*o).norm();
        if !n.is_finite() || n <= 0.0 {
            return Err(CoreError::config(format!("joint {j} has a degenerate rest offset")));
        }
    }
    if !(spec.shape_range >= 0.0 && spec.shape_range < 0.1) {
        return Err(CoreError::config("shape_range must lie in [0, 0.1)"));
    }
    spec.mesh.validate()
}
