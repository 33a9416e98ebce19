//! Capsule-like template mesh rigged to the skeleton.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{HandModel, JointTransform, NUM_FINGERS, NUM_JOINTS, WRIST};
use crate::error::{CoreError, Result};
use crate::motion::NUM_BETAS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshSpec {
    pub wrist_vertices: usize,
    /// Vertices per ring around an articulated joint.
    pub ring_vertices: usize,
    /// Vertices per ring on the palm segments between wrist and knuckles.
    pub palm_ring_vertices: usize,
    pub metacarpal_rings: usize,
    /// Extra rings along each phalanx.
    pub phalanx_rings: usize,
    pub wrist_radius: f64,
    pub palm_radius: f64,
    /// Ring radius at each finger's first joint, thumb first.
    pub finger_radius: [f64; NUM_FINGERS],
    /// Radius multiplier from one joint to the next along a finger.
    pub taper: f64,
    pub regressor_ridge: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            wrist_vertices: 3,
            ring_vertices: 4,
            palm_ring_vertices: 6,
            metacarpal_rings: 1,
            phalanx_rings: 0,
            wrist_radius: 15.0,
            palm_radius: 12.0,
            finger_radius: [10.0, 9.0, 9.0, 8.5, 7.5],
            taper: 0.85,
            regressor_ridge: 1e-6,
        }
    }
}

impl MeshSpec {
    pub fn validate(&self) -> Result<()> {
        if self.wrist_vertices < 3 || self.ring_vertices < 3 {
            return Err(CoreError::config("wrist and joint rings need at least 3 vertices"));
        }
        if self.metacarpal_rings > 0 && self.palm_ring_vertices < 3 {
            return Err(CoreError::config("palm rings need at least 3 vertices"));
        }
        let radii = [self.wrist_radius, self.palm_radius, self.taper, self.regressor_ridge];
        if radii.iter().chain(&self.finger_radius).any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(CoreError::config("mesh radii, taper and ridge must be positive"));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        let per_finger = self.metacarpal_rings * self.palm_ring_vertices
            + 3 * (1 + self.phalanx_rings) * self.ring_vertices
            + 1;
        self.wrist_vertices + NUM_FINGERS * per_finger
    }
}

/// A vertex sits at `lerp(joint a, joint b, s) + radial` in the rest pose.
#[derive(Clone, Debug)]
struct TemplateVertex {
    a: usize,
    b: usize,
    s: f64,
    radial: Vector3<f64>,
    weights: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct Template {
    vertices: Vec<TemplateVertex>,
    adjacency: Vec<Vec<usize>>,
    /// `NUM_JOINTS x V`, row-major.
    regressor: Vec<f64>,
}

/// Unit vectors spanning the plane orthogonal to `d`.
fn ring_basis(d: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let z = Vector3::z();
    let seed = if d.cross(&z).norm() > 1e-6 { z } else { Vector3::y() };
    let u = seed.cross(&d).normalize();
    (u, d.cross(&u))
}

struct Builder {
    vertices: Vec<TemplateVertex>,
    edges: Vec<BTreeSet<usize>>,
}

impl Builder {
    fn ring(
        &mut self,
        (a, b, s): (usize, usize, f64),
        axis: Vector3<f64>,
        radius: f64,
        count: usize,
        weights: Vec<(usize, f64)>,
    ) -> Vec<usize> {
        let (u, v) = ring_basis(axis.normalize());
        let start = self.vertices.len();
        for k in 0..count {
            let phi = TAU * k as f64 / count as f64;
            self.vertices.push(TemplateVertex {
                a,
                b,
                s,
                radial: radius * (phi.cos() * u + phi.sin() * v),
                weights: weights.clone(),
            });
            self.edges.push(BTreeSet::new());
        }
        let ids: Vec<usize> = (start..start + count).collect();
        if count >= 2 {
            for k in 0..count {
                self.link(ids[k], ids[(k + 1) % count]);
            }
        }
        ids
    }

    fn link(&mut self, i: usize, j: usize) {
        if i != j {
            self.edges[i].insert(j);
            self.edges[j].insert(i);
        }
    }

    /// Connects every vertex of either ring to its proportional partner.
    fn bridge(&mut self, a: &[usize], b: &[usize]) {
        for (k, &i) in a.iter().enumerate() {
            self.link(i, b[k * b.len() / a.len()]);
        }
        for (k, &j) in b.iter().enumerate() {
            self.link(j, a[k * a.len() / b.len()]);
        }
    }
}

impl Template {
    pub(super) fn empty() -> Self {
        Template {
            vertices: Vec::new(),
            adjacency: Vec::new(),
            regressor: Vec::new(),
        }
    }

    pub(super) fn build(model: &HandModel) -> Result<Self> {
        let spec = &model.spec.mesh;
        let mut bld = Builder {
            vertices: Vec::new(),
            edges: Vec::new(),
        };
        let mut owners: Vec<Vec<usize>> = vec![Vec::new(); NUM_JOINTS];

        let wrist = bld.ring(
            (WRIST, WRIST, 0.0),
            Vector3::x(),
            spec.wrist_radius,
            spec.wrist_vertices,
            vec![(WRIST, 1.0)],
        );
        owners[WRIST] = wrist.clone();

        for f in 0..NUM_FINGERS {
            let base = 1 + 4 * f;
            let mut prev = wrist.clone();
            let knuckle_dir = model.rest_offset(base);
            for r in 1..=spec.metacarpal_rings {
                let s = r as f64 / (spec.metacarpal_rings + 1) as f64;
                let ring = bld.ring(
                    (WRIST, base, s),
                    knuckle_dir,
                    spec.palm_radius,
                    spec.palm_ring_vertices,
                    vec![(WRIST, 1.0 - 0.5 * s), (base, 0.5 * s)],
                );
                bld.bridge(&prev, &ring);
                prev = ring;
            }
            let mut radius = spec.finger_radius[f];
            for i in 0..3 {
                let j = base + i;
                let dir = model.rest_offset(j + 1);
                let ring = bld.ring((j, j, 0.0), dir, radius, spec.ring_vertices, vec![(j, 1.0)]);
                bld.bridge(&prev, &ring);
                owners[j] = ring.clone();
                prev = ring;
                let next_radius = radius * spec.taper;
                for r in 1..=spec.phalanx_rings {
                    let s = r as f64 / (spec.phalanx_rings + 1) as f64;
                    let ring = bld.ring(
                        (j, j + 1, s),
                        dir,
                        radius + s * (next_radius - radius),
                        spec.ring_vertices,
                        vec![(j, 1.0)],
                    );
                    bld.bridge(&prev, &ring);
                    prev = ring;
                }
                radius = next_radius;
            }
            let tip = base + 3;
            let cap = bld.ring((tip, tip, 0.0), dir_or_x(model.rest_offset(tip)), 0.0, 1, vec![(tip, 1.0)]);
            bld.bridge(&prev, &cap);
            owners[tip] = cap;
        }

        let mut template = Template {
            vertices: bld.vertices,
            adjacency: bld.edges.into_iter().map(|e| e.into_iter().collect()).collect(),
            regressor: Vec::new(),
        };
        debug_assert_eq!(template.len(), spec.vertex_count());
        template.regressor = fit_regressor(&template, model, &owners, spec.regressor_ridge)?;
        Ok(template)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Sorted neighbor lists, symmetric and without self-loops.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn regressor(&self) -> &[f64] {
        &self.regressor
    }

    /// `(joint, weight)` pairs of vertex `i`.
    pub fn skinning_weights(&self, i: usize) -> &[(usize, f64)] {
        &self.vertices[i].weights
    }

    /// Rest-pose vertex positions for the given rest joints.
    pub fn rest_vertices(&self, rest: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        (0..self.len()).map(|i| self.rest_position(i, rest)).collect()
    }

    fn rest_position(&self, i: usize, rest: &[Vector3<f64>]) -> Vector3<f64> {
        let v = &self.vertices[i];
        rest[v.a] + v.s * (rest[v.b] - rest[v.a]) + v.radial
    }

    pub(super) fn skin(&self, transforms: &[JointTransform], rest: &[Vector3<f64>]) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|i| {
                let local = self.rest_position(i, rest);
                let mut out = Vector3::zeros();
                for &(k, w) in &self.vertices[i].weights {
                    let t = &transforms[k];
                    out += w * (t.rotation * (local - rest[k]) + t.position);
                }
                out.into()
            })
            .collect()
    }
}

fn dir_or_x(d: Vector3<f64>) -> Vector3<f64> {
    if d.norm() > 0.0 {
        d
    } else {
        Vector3::x()
    }
}

/// Per joint, a ridge least-squares fit of convex weights over the vertices the
/// joint owns, solved with a sum-to-one constraint, then clamped and renormalized.
fn fit_regressor(
    template: &Template,
    model: &HandModel,
    owners: &[Vec<usize>],
    ridge: f64,
) -> Result<Vec<f64>> {
    let rest = model.rest_joints(&[0.0; NUM_BETAS]);
    let verts = template.rest_vertices(&rest);
    let nv = template.len();
    let mut h = vec![0.0; NUM_JOINTS * nv];
    for (j, ids) in owners.iter().enumerate() {
        let m = ids.len();
        if m == 0 {
            return Err(CoreError::config(format!("joint {j} owns no vertices")));
        }
        // centered for conditioning; the constraint makes the fit translation-free
        let center = ids.iter().map(|&i| verts[i]).sum::<Vector3<f64>>() / m as f64;
        let pts = DMatrix::from_fn(3, m, |c, k| verts[ids[k]][c] - center[c]);
        let target = rest[j] - center;
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let gram = pts.transpose() * &pts;
        for r in 0..m {
            for c in 0..m {
                kkt[(r, c)] = 2.0 * gram[(r, c)];
            }
            kkt[(r, r)] += 2.0 * ridge;
            kkt[(r, m)] = 1.0;
            kkt[(m, r)] = 1.0;
        }
        let rhs_top = 2.0 * pts.transpose() * target;
        let mut rhs = DVector::zeros(m + 1);
        rhs.rows_mut(0, m).copy_from(&rhs_top);
        rhs[m] = 1.0;
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| CoreError::config(format!("regressor fit for joint {j} is singular")))?;
        let clamped: Vec<f64> = (0..m).map(|k| sol[k].max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if total <= 0.0 {
            return Err(CoreError::config(format!("regressor row {j} collapsed")));
        }
        for (k, &i) in ids.iter().enumerate() {
            h[j * nv + i] = clamped[k] / total;
        }
    }
    Ok(h)
}
