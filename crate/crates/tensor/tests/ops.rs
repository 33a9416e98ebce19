use std::rc::Rc;

use handrift_tensor::gradcheck::{check_gradients, GradCheckOptions};
use handrift_tensor::{Graph, RngStream, Tensor, Var};
use proptest::prelude::*;

const TOL: f64 = 1e-4;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed, 0);
    Tensor::randn(shape, 1.0, &mut rng)
}

/// Collapses any tensor to a scalar with a non-uniform weighting so every
/// output element matters differently.
fn weighted_sum(g: &Graph, v: Var) -> handrift_tensor::Result<Var> {
    let shape = g.shape(v);
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect())?;
    let w = g.constant(w);
    Ok(g.sum(g.mul(v, w)?))
}

fn assert_grad<F>(name: &str, inputs: &[Tensor], f: F)
where
    F: Fn(&Graph, &[Var]) -> handrift_tensor::Result<Var>,
{
    let report = check_gradients(&f, inputs, &GradCheckOptions::default()).unwrap();
    let worst = report.worst().cloned();
    assert!(
        report.max_rel_err() < TOL,
        "{name}: max rel err {} at {:?}",
        report.max_rel_err(),
        worst
    );
}

#[test]
fn matmul_of_ones() {
    let g = Graph::no_grad();
    let a = g.constant(Tensor::ones(&[2, 3]));
    let b = g.constant(Tensor::ones(&[3, 2]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 2]);
    assert_eq!(g.value(c).data(), &[3.0; 4]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let g = Graph::no_grad();
    let x = g.constant(Tensor::zeros(&[3]));
    let y = g.softmax(x, 1.0, None).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn hinge_values() {
    let g = Graph::no_grad();
    let x = g.constant(Tensor::from_vec(vec![-2.5, 2.5]));
    assert_eq!(g.value(g.hinge(x)).data(), &[0.0, 2.5]);
}

#[test]
fn square_sum_gradient_and_constant_loss() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let loss = g.sum(g.square(x));
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[2.0, 4.0]);

    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let c = g.scalar(3.0);
    let zero = g.scale(g.sum(x), 0.0);
    let loss = g.add(c, zero).unwrap();
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(g.backward(x).is_err());
}

#[test]
fn shape_errors_name_the_op() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    let c = g.constant(Tensor::zeros(&[4]));
    let err = g.add(a, c).unwrap_err().to_string();
    assert!(err.starts_with("add"), "{err}");
}

#[test]
fn sign_has_zero_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![-1.0, 0.5, 0.0]));
    let s = g.sign(x);
    assert_eq!(g.value(s).data(), &[-1.0, 1.0, 0.0]);
    let loss = g.sum(g.mul(s, x).unwrap());
    // d/dx (sign(x) x) with stop-gradient sign = sign(x)
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[-1.0, 1.0, 0.0]);
}

#[test]
fn gradients_of_elementwise_ops() {
    let x = rand_t(&[3, 4], 1);
    let pos = x.map(|v| v.abs() + 0.5);
    let unary: Vec<(&str, fn(&Graph, Var) -> Var)> = vec![
        ("neg", Graph::neg),
        ("exp", Graph::exp),
        ("tanh", Graph::tanh),
        ("sigmoid", Graph::sigmoid),
        ("sin", Graph::sin),
        ("cos", Graph::cos),
        ("square", Graph::square),
        ("gelu", Graph::gelu),
        ("relu", Graph::relu),
    ];
    for (name, op) in unary {
        assert_grad(name, &[x.clone()], |g, v| weighted_sum(g, op(g, v[0])));
    }
    assert_grad("log", &[pos.clone()], |g, v| weighted_sum(g, g.log(v[0])));
    assert_grad("sqrt", &[pos], |g, v| weighted_sum(g, g.sqrt(v[0])));
    assert_grad("scale", &[x.clone()], |g, v| weighted_sum(g, g.scale(v[0], -1.7)));
    assert_grad("add_scalar", &[x], |g, v| weighted_sum(g, g.add_scalar(v[0], 0.3)));
}

#[test]
fn gradients_of_broadcast_binary_ops() {
    let a = rand_t(&[2, 3, 4], 2);
    let shapes: [&[usize]; 4] = [&[2, 3, 4], &[4], &[3, 1], &[]];
    for (k, s) in shapes.iter().enumerate() {
        let b = rand_t(s, 10 + k as u64).map(|v| v.abs() + 0.5);
        assert_grad("add", &[a.clone(), b.clone()], |g, v| weighted_sum(g, g.add(v[0], v[1])?));
        assert_grad("sub", &[a.clone(), b.clone()], |g, v| weighted_sum(g, g.sub(v[0], v[1])?));
        assert_grad("mul", &[a.clone(), b.clone()], |g, v| weighted_sum(g, g.mul(v[0], v[1])?));
        assert_grad("div", &[a.clone(), b.clone()], |g, v| weighted_sum(g, g.div(v[0], v[1])?));
        // operand order swapped
        assert_grad("sub-rev", &[b.clone(), a.clone()], |g, v| weighted_sum(g, g.sub(v[0], v[1])?));
    }
}

#[test]
fn gradients_of_matmul_variants() {
    assert_grad("matmul-2d", &[rand_t(&[3, 4], 3), rand_t(&[4, 5], 4)], |g, v| {
        weighted_sum(g, g.matmul(v[0], v[1])?)
    });
    assert_grad("matmul-shared-rhs", &[rand_t(&[2, 3, 4], 5), rand_t(&[4, 2], 6)], |g, v| {
        weighted_sum(g, g.matmul(v[0], v[1])?)
    });
    assert_grad("matmul-batched", &[rand_t(&[2, 3, 4], 7), rand_t(&[2, 4, 3], 8)], |g, v| {
        weighted_sum(g, g.matmul(v[0], v[1])?)
    });
}

#[test]
fn gradients_of_shape_ops() {
    let x = rand_t(&[2, 3, 4], 9);
    assert_grad("reshape", &[x.clone()], |g, v| weighted_sum(g, g.reshape(v[0], &[6, 4])?));
    assert_grad("permute", &[x.clone()], |g, v| weighted_sum(g, g.permute(v[0], &[2, 0, 1])?));
    assert_grad("transpose", &[x.clone()], |g, v| weighted_sum(g, g.transpose(v[0])?));
    assert_grad("slice", &[x.clone()], |g, v| weighted_sum(g, g.slice(v[0], 1, 1, 3)?));
    assert_grad("concat", &[x.clone(), rand_t(&[2, 2, 4], 11)], |g, v| {
        weighted_sum(g, g.concat(&[v[0], v[1], v[0]], 1)?)
    });
    assert_grad("sum_axis", &[x.clone()], |g, v| weighted_sum(g, g.sum_axis(v[0], 1)?));
    assert_grad("mean_axis", &[x.clone()], |g, v| weighted_sum(g, g.mean_axis(v[0], 2)?));
    assert_grad("mean", &[x], |g, v| Ok(g.mean(g.square(v[0]))));
}

#[test]
fn gradients_of_normalizers() {
    let x = rand_t(&[3, 5], 12);
    assert_grad("softmax", &[x.clone()], |g, v| weighted_sum(g, g.softmax(v[0], 1.0, None)?));
    assert_grad("softmax-temp", &[x.clone()], |g, v| weighted_sum(g, g.softmax(v[0], 0.37, None)?));
    let mask: Vec<bool> = (0..5 * 5).map(|i| i % 5 <= i / 5).collect();
    let mask = Rc::new(mask);
    assert_grad("softmax-masked", &[rand_t(&[2, 5, 5], 13)], |g, v| {
        weighted_sum(g, g.softmax(v[0], 1.0, Some(mask.clone()))?)
    });
    assert_grad("log_softmax", &[x.clone()], |g, v| weighted_sum(g, g.log_softmax(v[0])?));
    assert_grad("layer_norm", &[x], |g, v| weighted_sum(g, g.layer_norm(v[0], 1e-5)?));
}

#[test]
fn masked_softmax_assigns_exact_zeros() {
    let g = Graph::no_grad();
    let x = g.constant(rand_t(&[3, 3], 14));
    let mask = Rc::new(vec![true, false, false, true, true, false, true, true, true]);
    let y = g.value(g.softmax(x, 1.0, Some(mask)).unwrap());
    assert_eq!(y.data()[1], 0.0);
    assert_eq!(y.data()[2], 0.0);
    assert_eq!(y.data()[5], 0.0);
    assert_eq!(y.data()[0], 1.0);
}

#[test]
fn straight_through_keeps_hard_value_soft_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.2, 0.8]));
    let y = g.straight_through(x, Tensor::from_vec(vec![0.0, 1.0])).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 1.0]);
    let w = g.constant(Tensor::from_vec(vec![2.0, 3.0]));
    let loss = g.sum(g.mul(y, w).unwrap());
    assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[2.0, 3.0]);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let g = Graph::new();
        let a = g.param(rand_t(&[4, 6], 20));
        let b = g.param(rand_t(&[6, 3], 21));
        let h = g.tanh(g.matmul(a, b).unwrap());
        let s = g.softmax(h, 0.5, None).unwrap();
        let loss = g.sum(g.square(s));
        let grads = g.backward(loss).unwrap();
        (
            g.value(loss).item().to_bits(),
            grads.get(a).unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in proptest::collection::vec(-30.0f64..30.0, 12), temp in 0.05f64..5.0) {
        let g = Graph::no_grad();
        let x = g.constant(Tensor::new(&[3, 4], data).unwrap());
        let y = g.value(g.softmax(x, temp, None).unwrap());
        for row in y.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean(data in proptest::collection::vec(-1e3f64..1e3, 16)) {
        let g = Graph::no_grad();
        let x = g.constant(Tensor::new(&[2, 8], data).unwrap());
        let y = g.value(g.layer_norm(x, 1e-5).unwrap());
        for row in y.data().chunks(8) {
            prop_assert!((row.iter().sum::<f64>() / 8.0).abs() < 1e-10);
        }
    }
}
