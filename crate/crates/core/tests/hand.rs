use handrift_core::hand::{fk_graph, parent, rodrigues, HandModel, NUM_JOINTS};
use handrift_core::motion::{HandPose, MotionSequence, FRAME_DIM, NUM_BETAS};
use handrift_tensor::gradcheck::{check_gradients, GradCheckOptions};
use handrift_tensor::{Graph, RngStream, Tensor};
use nalgebra::Vector3;
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

fn random_pose(rng: &mut RngStream, angle: f64) -> HandPose {
    let mut p = HandPose::default();
    for c in 0..3 {
        p.root_orient[c] = rng.uniform_in(-1.0, 1.0);
        p.root_translation[c] = rng.uniform_in(-100.0, 100.0);
    }
    for t in p.theta.iter_mut() {
        for c in t.iter_mut() {
            *c = rng.uniform_in(-angle, angle);
        }
    }
    for b in p.beta.iter_mut() {
        *b = rng.uniform_in(-2.0, 2.0);
    }
    p
}

fn v(p: [f64; 3]) -> Vector3<f64> {
    Vector3::from(p)
}

#[test]
fn quarter_turn_root_rotates_rest_skeleton() {
    let m = HandModel::default();
    let pose = HandPose {
        root_orient: [0.0, 0.0, FRAC_PI_2],
        ..Default::default()
    };
    let joints = m.forward_kinematics(&pose).unwrap();
    let rest = m.rest_joints(&[0.0; NUM_BETAS]);
    for (j, r) in joints.iter().zip(&rest) {
        let expect = Vector3::new(-r.y, r.x, r.z);
        assert!((v(*j) - expect).norm() < 1e-12);
    }
}

#[test]
fn bone_lengths_follow_shape_scale() {
    let m = HandModel::default();
    let mut rng = RngStream::new(1, 0);
    for _ in 0..100 {
        let pose = random_pose(&mut rng, 1.2);
        let joints = m.forward_kinematics(&pose).unwrap();
        let scales = m.bone_scales(&pose.beta);
        for j in 1..NUM_JOINTS {
            let len = (v(joints[j]) - v(joints[parent(j).unwrap()])).norm();
            let expect = scales[j - 1] * m.rest_offset(j).norm();
            assert!((len - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_pose_mesh_is_translated_template() {
    let m = HandModel::default();
    let pose = HandPose {
        root_translation: [3.0, -4.0, 5.0],
        ..Default::default()
    };
    let verts = m.skin_mesh(&pose).unwrap();
    let rest = m.template().rest_vertices(&m.rest_joints(&[0.0; NUM_BETAS]));
    for (a, b) in verts.iter().zip(&rest) {
        assert!((v(*a) - b - Vector3::new(3.0, -4.0, 5.0)).norm() < 1e-12);
    }
}

#[test]
fn root_rotation_rigidly_rotates_mesh() {
    let m = HandModel::default();
    let w = [0.3, -0.4, 0.9];
    let pose = HandPose {
        root_orient: w,
        ..Default::default()
    };
    let verts = m.skin_mesh(&pose).unwrap();
    let rest = m.skin_mesh(&HandPose::default()).unwrap();
    let r = rodrigues(w);
    for (a, b) in verts.iter().zip(&rest) {
        assert!((v(*a) - r * v(*b)).norm() < 1e-10);
    }
}

#[test]
fn regressed_joints_match_kinematics() {
    let m = HandModel::default();
    let mut rng = RngStream::new(2, 0);
    for _ in 0..100 {
        let pose = random_pose(&mut rng, 1.0);
        let joints = m.forward_kinematics(&pose).unwrap();
        let reg = m.regress_joints(&m.skin_mesh(&pose).unwrap()).unwrap();
        for (a, b) in joints.iter().zip(&reg) {
            assert!((v(*a) - v(*b)).norm() < 0.5);
        }
    }
}

#[test]
fn regressor_is_linear_and_affine() {
    let m = HandModel::default();
    let zeros = vec![[0.0; 3]; m.num_vertices()];
    assert!(m.regress_joints(&zeros).unwrap().iter().all(|p| *p == [0.0; 3]));
    let rest = m.skin_mesh(&HandPose::default()).unwrap();
    let base = m.regress_joints(&rest).unwrap();
    let c = [12.5, -3.0, 7.25];
    let shifted: Vec<[f64; 3]> = rest.iter().map(|p| [p[0] + c[0], p[1] + c[1], p[2] + c[2]]).collect();
    for (a, b) in m.regress_joints(&shifted).unwrap().iter().zip(&base) {
        assert!((v(*a) - v(*b) - v(c)).norm() < 1e-9);
    }
    for (a, b) in base.iter().zip(m.rest_joints(&[0.0; NUM_BETAS])) {
        assert!((v(*a) - b).norm() < 0.5);
    }
    assert!(m.regress_joints(&rest[1..]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kinematics_is_rotation_equivariant(seed in 0u64..10_000, wx in -1.5f64..1.5, wy in -1.5f64..1.5, wz in -1.5f64..1.5) {
        let m = HandModel::default();
        let mut rng = RngStream::new(seed, 3);
        let mut pose = random_pose(&mut rng, 1.0);
        pose.root_translation = [0.0; 3];
        let g = rodrigues([wx, wy, wz]);
        let composed = g * rodrigues(pose.root_orient);
        let rotated = HandPose {
            root_orient: rotation_to_axis_angle(&composed),
            ..pose.clone()
        };
        let a = m.forward_kinematics(&pose).unwrap();
        let b = m.forward_kinematics(&rotated).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((g * v(*p) - v(*q)).norm() < 1e-9);
        }
    }
}

fn rotation_to_axis_angle(r: &nalgebra::Matrix3<f64>) -> [f64; 3] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis().into()
}

#[test]
fn tape_kinematics_matches_plain_kinematics() {
    let m = HandModel::default();
    let mut rng = RngStream::new(4, 0);
    let poses: Vec<HandPose> = (0..5).map(|_| random_pose(&mut rng, 1.0)).collect();
    let seq = MotionSequence::from_poses(&poses).unwrap();
    let g = Graph::no_grad();
    let x = g.constant(Tensor::new(&[5, FRAME_DIM], seq.data().to_vec()).unwrap());
    let out = g.value(fk_graph(&g, &m, x).unwrap());
    assert_eq!(out.shape(), &[5, NUM_JOINTS, 3]);
    for (t, pose) in poses.iter().enumerate() {
        for (j, p) in m.forward_kinematics(pose).unwrap().iter().enumerate() {
            for c in 0..3 {
                assert!((out.data()[(t * NUM_JOINTS + j) * 3 + c] - p[c]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn tape_kinematics_gradient_matches_finite_differences() {
    let m = HandModel::default();
    let mut rng = RngStream::new(5, 0);
    let poses: Vec<HandPose> = (0..4).map(|_| random_pose(&mut rng, 0.8)).collect();
    let seq = MotionSequence::from_poses(&poses).unwrap();
    let x = Tensor::new(&[4, FRAME_DIM], seq.data().to_vec()).unwrap();
    let weights = Tensor::randn(&[4, NUM_JOINTS, 3], 1.0, &mut rng);
    let report = check_gradients(
        |g, vars| {
            let j = fk_graph(g, &m, vars[0])?;
            let w = g.constant(weights.clone());
            Ok(g.sum(g.mul(j, w)?))
        },
        &[x],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
}
