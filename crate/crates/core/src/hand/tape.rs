//! Forward kinematics recorded on a computation graph.

use handrift_tensor::{Graph, Result, Tensor, TensorError, Var};

use super::{parent, pose_slot, rodrigues_graph, HandModel, NUM_BONES, NUM_JOINTS};
use crate::motion::{BETAS, FRAME_DIM, NUM_BETAS, ROOT, TRANSL};

/// Joint positions `[T, 21, 3]` (mm) from raw frames `[T, FRAME_DIM]`.
pub fn fk_graph(g: &Graph, model: &HandModel, frames: Var) -> Result<Var> {
    let shape = g.shape(frames);
    if shape.len() != 2 || shape[1] != FRAME_DIM {
        return Err(TensorError::Invalid {
            op: "fk_graph",
            msg: format!("expected [T, {FRAME_DIM}], got {shape:?}"),
        });
    }
    let t = shape[0];
    let basis_t = {
        // [NUM_BETAS, NUM_BONES]
        let b = model.shape_basis();
        let mut d = vec![0.0; NUM_BETAS * NUM_BONES];
        for bone in 0..NUM_BONES {
            for k in 0..NUM_BETAS {
                d[k * NUM_BONES + bone] = b[bone * NUM_BETAS + k];
            }
        }
        g.constant(Tensor::new(&[NUM_BETAS, NUM_BONES], d)?)
    };
    let beta = g.slice(frames, 1, BETAS.start, BETAS.end)?;
    let scales = g.add_scalar(g.matmul(beta, basis_t)?, 1.0);

    let mut rot: Vec<Option<Var>> = vec![None; NUM_JOINTS];
    let mut pos: Vec<Option<Var>> = vec![None; NUM_JOINTS];
    rot[0] = Some(rodrigues_graph(g, g.slice(frames, 1, ROOT.start, ROOT.end)?)?);
    pos[0] = Some(g.slice(frames, 1, TRANSL.start, TRANSL.end)?);
    for j in 1..NUM_JOINTS {
        let p = parent(j).unwrap();
        let (rp, pp) = (rot[p].unwrap(), pos[p].unwrap());
        let offset = g.constant(Tensor::new(&[1, 3], model.spec().rest_offsets[j].to_vec())?);
        let scale = g.slice(scales, 1, j - 1, j)?;
        let bone = g.reshape(g.mul(scale, offset)?, &[t, 3, 1])?;
        let moved = g.reshape(g.matmul(rp, bone)?, &[t, 3])?;
        pos[j] = Some(g.add(pp, moved)?);
        rot[j] = Some(match pose_slot(j) {
            Some(k) => {
                let w = g.slice(frames, 1, 3 + 3 * k, 6 + 3 * k)?;
                g.matmul(rp, rodrigues_graph(g, w)?)?
            }
            None => rp,
        });
    }
    let parts: Vec<Var> = pos
        .into_iter()
        .map(|p| g.reshape(p.unwrap(), &[t, 1, 3]))
        .collect::<Result<_>>()?;
    g.concat(&parts, 1)
}
