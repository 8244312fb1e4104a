use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};

pub const GRADCHECK_STEP: f64 = 1e-3;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const GRADCHECK_FLOOR: f64 = 1e-6;
const COORDS_PER_INPUT: usize = 20;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps vanishing gradients from
/// turning round-off into huge relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub coords: usize,
    pub max_rel_error: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// Compares backward against central differences of `sum(op(inputs) ⊙ probe)`
/// on 20 random coordinates of every input.
pub fn check_op<F>(name: &'static str, seed: u64, shapes: &[&[usize]], op: F) -> OpCheck
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = op(&mut g, &vars);
    let probe = random_tensor(&mut rng, g.value(out).shape());
    let p = g.constant(probe.clone());
    let weighted = g.mul(out, p).expect("probe matches output");
    let loss = g.sum(weighted).expect("sum");
    let grads = g.backward(loss).expect("scalar loss");

    let loss_of = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t)).collect();
        let out = op(&mut g, &vars);
        g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut check = OpCheck { name, coords: 0, max_rel_error: 0.0 };
    let mut probe_inputs = inputs.clone();
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[which]);
        for _ in 0..COORDS_PER_INPUT {
            let i = rng.random_range(0..input.numel());
            let orig = input.data()[i];
            probe_inputs[which].data_mut()[i] = orig + GRADCHECK_STEP;
            let plus = loss_of(&probe_inputs);
            probe_inputs[which].data_mut()[i] = orig - GRADCHECK_STEP;
            let minus = loss_of(&probe_inputs);
            probe_inputs[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            let err = relative_error(analytic.data()[i], numeric, GRADCHECK_FLOOR);
            check.max_rel_error = check.max_rel_error.max(err);
            check.coords += 1;
        }
    }
    check
}

/// Gradient check of every differentiable operator on small random inputs.
pub fn op_suite(seed: u64) -> Vec<OpCheck> {
    let s = |i: u64| seed.wrapping_mul(1000).wrapping_add(i);
    vec![
        check_op("conv1d", s(0), &[&[3, 40], &[4, 3, 5], &[4]], |g, v| g.conv1d(v[0], v[1], v[2], 3).expect("shapes")),
        check_op("instance_norm", s(1), &[&[3, 30], &[3], &[3]], |g, v| {
            g.instance_norm(v[0], v[1], v[2], 1e-5).expect("shapes")
        }),
        check_op("layer_norm", s(2), &[&[5, 6], &[6], &[6]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).expect("shapes")),
        check_op("gelu", s(3), &[&[4, 7]], |g, v| g.gelu(v[0]).expect("shapes")),
        check_op("linear", s(4), &[&[5, 6], &[6, 4], &[4]], |g, v| g.linear(v[0], v[1], v[2]).expect("shapes")),
        check_op("softmax", s(5), &[&[4, 9]], |g, v| g.softmax(v[0]).expect("shapes")),
        check_op("sigmoid", s(6), &[&[30]], |g, v| g.sigmoid(v[0]).expect("shapes")),
        check_op("matmul", s(7), &[&[5, 4], &[4, 6]], |g, v| g.matmul(v[0], v[1]).expect("shapes")),
        check_op("matmul_bt", s(8), &[&[5, 4], &[6, 4]], |g, v| g.matmul_bt(v[0], v[1]).expect("shapes")),
        check_op("slice/transpose/row/concat/reshape/scale", s(9), &[&[5, 8]], |g, v| {
            let a = g.slice_cols(v[0], 2, 3).expect("shapes");
            let b = g.slice_cols(v[0], 5, 3).expect("shapes");
            let t = g.transpose(a).expect("shapes");
            let r = g.row(t, 1).expect("shapes");
            let c = g.concat_cols(&[b, a]).expect("shapes");
            let flat = g.reshape(c, &[30]).expect("shapes");
            let both = g.concat0(&[flat, r]).expect("shapes");
            g.scale(both, -1.5).expect("shapes")
        }),
        check_op("bce+mse", s(10), &[&[6], &[6]], |g, v| {
            let s = g.sigmoid(v[0]).expect("shapes");
            let shrunk = g.scale(s, 0.98).expect("shapes");
            let ce = g.binary_cross_entropy(shrunk, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0], 1e-7).expect("shapes");
            let mse = g.mean_squared_error(v[1], &[1.0, 2.0, 3.0, 4.0, 5.0, 3.0]).expect("shapes");
            g.add(ce, mse).expect("shapes")
        }),
    ]
}
