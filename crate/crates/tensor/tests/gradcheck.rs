//! Central finite differences in f64 against the reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotrl_tensor::nn::{self, GruCell, MultiHeadAttention};
use slotrl_tensor::{no_grad, Builder, Padding, ParamStore, Tensor};

type T = Tensor<f64>;

fn random_inputs(shapes: &[&[usize]], seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| {
            let t = T::randn(s, &mut rng);
            t.set_requires_grad(true);
            t
        })
        .collect()
}

/// Compares analytic and numeric gradients of the scalar `f(inputs)`.
fn check(inputs: &[T], f: impl Fn(&[T]) -> T) {
    let out = f(inputs);
    assert_eq!(out.numel(), 1, "objective must be a scalar");
    let grads = out.backward();
    let h = 1e-6;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(x).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.numel()]);
        for i in 0..x.numel() {
            let orig = x.data()[i];
            let eval = |v: f64| {
                x.data_mut()[i] = v;
                let _g = no_grad();
                f(inputs).item()
            };
            let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            x.data_mut()[i] = orig;
            let err = (numeric - analytic[i]).abs();
            let tol = 1e-5 * (1.0 + numeric.abs().max(analytic[i].abs()));
            assert!(
                err <= tol,
                "input {k} element {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }
}

/// Contracts an arbitrary output with fixed random weights to get a scalar.
fn project(y: &T) -> T {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = T::randn(y.shape(), &mut rng);
    y.mul(&w).sum_all()
}

#[test]
fn broadcasting_arithmetic() {
    let xs = random_inputs(&[&[2, 3, 4], &[3, 1], &[4]], 1);
    check(&xs, |x| project(&x[0].add(&x[1]).mul(&x[2]).sub(&x[1].mul(&x[0]))));
    let ys = random_inputs(&[&[2, 3], &[2, 1]], 2);
    ys[1].data_mut().iter_mut().for_each(|v| *v = v.abs() + 1.0);
    check(&ys, |x| project(&x[0].div(&x[1])));
}

#[test]
fn unary_functions() {
    let xs = random_inputs(&[&[3, 5]], 3);
    check(&xs, |x| {
        let a = &x[0];
        project(&a.tanh().add(&a.sigmoid()).add(&a.silu()).add(&a.softplus()))
    });
    check(&xs, |x| project(&x[0].exp().mul_scalar(0.5).add(&x[0].square().neg())));
    check(&xs, |x| project(&x[0].log_one_minus_tanh_sq()));
    let pos = random_inputs(&[&[7]], 4);
    pos[0].data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
    check(&pos, |x| project(&x[0].ln().add(&x[0].sqrt())));
}

#[test]
fn relu_away_from_kink() {
    let xs = random_inputs(&[&[10]], 5);
    xs[0].data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.1 {
            *v += 0.3
        }
    });
    check(&xs, |x| project(&x[0].relu()));
}

#[test]
fn reductions_and_layout() {
    let xs = random_inputs(&[&[2, 3, 4]], 6);
    check(&xs, |x| project(&x[0].sum_axis(1, false)));
    check(&xs, |x| project(&x[0].mean_axis(-1, true)));
    check(&xs, |x| project(&x[0].permute(&[2, 0, 1]).reshape(&[4, 6])));
    check(&xs, |x| project(&x[0].narrow(2, 1, 2).transpose(0, 1)));
    check(&xs, |x| project(&x[0].select(1, 2)));
    check(&xs, |x| project(&x[0].unsqueeze(1).expand(&[2, 5, 3, 4])));
    check(&xs, |x| project(&x[0].index_select(&[1, 0, 1])));
    check(&xs, |x| x[0].mean_all());
}

#[test]
fn concatenation_and_stacking() {
    let xs = random_inputs(&[&[2, 3, 2], &[2, 1, 2], &[2, 3, 2]], 7);
    check(&xs, |x| project(&T::cat(&[x[0].clone(), x[1].clone()], 1)));
    check(&xs, |x| project(&T::stack(&[x[0].clone(), x[2].clone()], 1)));
}

#[test]
fn matrix_products() {
    let xs = random_inputs(&[&[2, 3, 4], &[4, 5], &[2, 4, 5], &[2, 5, 4]], 8);
    check(&xs, |x| project(&x[0].matmul(&x[1])));
    check(&xs, |x| project(&x[0].matmul(&x[2])));
    check(&xs, |x| project(&x[0].matmul_t(&x[3])));
    let ys = random_inputs(&[&[3, 4], &[5, 4]], 9);
    check(&ys, |x| project(&x[0].matmul_t(&x[1])));
}

#[test]
fn softmax_and_normalizers() {
    let xs = random_inputs(&[&[2, 3, 4], &[4], &[4]], 10);
    check(&xs, |x| project(&x[0].softmax(-1)));
    check(&xs, |x| project(&x[0].softmax(1)));
    check(&xs, |x| project(&x[0].log_softmax()));
    check(&xs, |x| project(&x[0].layer_norm(&x[1], &x[2], 1e-5)));
    check(&xs, |x| project(&x[0].rms_norm(&x[1], 1e-6)));
}

#[test]
fn masked_softmax_gradient_ignores_masked_entries() {
    let xs = random_inputs(&[&[2, 4]], 11);
    let mask = T::from_vec(
        vec![0.0, f64::NEG_INFINITY, 0.0, 0.0, f64::NEG_INFINITY, 0.0, 0.0, 0.0],
        &[2, 4],
    );
    check(&xs, |x| project(&x[0].add(&mask).softmax(-1)));
    let y = xs[0].add(&mask).softmax(-1);
    assert_eq!(y.data()[1], 0.0);
    assert_eq!(y.data()[4], 0.0);
}

#[test]
fn convolutions() {
    let xs = random_inputs(&[&[2, 5, 6, 3], &[3, 3, 3, 4], &[4]], 12);
    for padding in [Padding::Zeros, Padding::Replicate] {
        check(&xs, |x| project(&x[0].conv2d(&x[1], &x[2], 1, 1, padding)));
        check(&xs, |x| project(&x[0].conv2d(&x[1], &x[2], 2, 1, padding)));
    }
    let ys = random_inputs(&[&[2, 3, 2, 3], &[3, 4, 4, 2], &[2]], 13);
    check(&ys, |x| project(&x[0].conv_transpose2d(&x[1], &x[2], 2, 1, 0)));
    check(&ys, |x| project(&x[0].conv_transpose2d(&x[1], &x[2], 2, 1, 1)));
}

#[test]
fn layers() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut b = Builder::new(&mut store, &mut rng);
    let gru = GruCell::new(&mut b.sub("gru"), 3, 4);
    let attn = MultiHeadAttention::new(&mut b.sub("attn"), 4, 2);
    let xs = random_inputs(&[&[2, 3], &[2, 4], &[2, 3, 4], &[2, 5], &[2, 5]], 15);
    check(&xs, |x| project(&gru.forward(&x[0], &x[1])));
    check(&xs, |x| project(&attn.forward(&x[2], None).0));
    let target = xs[4].softmax(-1).detach();
    check(&xs[3..4], |x| nn::soft_cross_entropy(&x[0], &target).sum_all());
    check(&xs[3..5], |x| nn::mse(&x[0], &x[1]));
    let params: Vec<T> = store.tensors().cloned().collect();
    let out = project(&attn.forward(&xs[2], None).0).add(&project(&gru.forward(&xs[0], &xs[1])));
    let grads = out.backward();
    assert!(params.iter().all(|p| grads.get(p).is_some()));
}
