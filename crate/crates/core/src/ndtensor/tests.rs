use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let b = tape.constant(t(&[2, 2], &[5., 6., 7., 8.]));
    let c = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(c).data(), &[5., 6., 7., 8.]);

    let a = tape.constant(t(&[1, 2], &[1., 2.]));
    let b = tape.constant(t(&[2, 1], &[3., 4.]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[11.]);
    assert!(matches!(tape.matmul(a, a), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_of_sum() {
    // d/dA sum(A.B) with B = [[1],[1]] is B^T broadcast over rows: all ones
    let mut tape = Tape::new();
    let a = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
    let b = tape.constant(t(&[2, 1], &[1., 1.]));
    let c = tape.matmul(a, b).unwrap();
    let s = tape.sum(c).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap(), &[1., 1., 1., 1.]);

    let b = t(&[2, 1], &[1., 1.]);
    let err = grad_check(
        |tape, a| {
            let b = tape.constant(b.clone());
            let c = tape.matmul(a, b)?;
            tape.sum(c)
        },
        &t(&[2, 2], &[1., 2., 3., 4.]),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn conv2d_all_ones() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[3, 3, 1], 1.0).unwrap());
    let k = tape.constant(Tensor::full(&[2, 2, 1, 1], 1.0).unwrap());
    let y = tape.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 2, 1]);
    assert_eq!(tape.value(y).data(), &[4., 4., 4., 4.]);
}

#[test]
fn conv2d_output_size_with_stride_and_padding() {
    let mut tape = Tape::new();
    let x = tape.constant(random(&[64, 64, 3], 1));
    let k = tape.constant(random(&[3, 3, 3, 2], 2));
    let y = tape.conv2d(x, k, 2, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[32, 32, 2]);

    let small = tape.constant(random(&[2, 2, 3], 3));
    let big = tape.constant(random(&[5, 5, 3, 1], 4));
    assert!(matches!(tape.conv2d(small, big, 1, 1), Err(Error::Dimension(_))));
    assert!(matches!(tape.conv2d(x, k, 0, 0), Err(Error::Parameter(_))));
}

#[test]
fn conv2d_identity_kernel_is_exact() {
    let input = random(&[5, 4, 3], 9);
    let mut kernel = vec![0.0; 9];
    for c in 0..3 {
        kernel[c * 3 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let k = tape.constant(t(&[1, 1, 3, 3], &kernel));
    let y = tape.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), input.data());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let input = random(&[5, 5, 2], 11);
    let kernels = random(&[3, 3, 2, 4], 12);
    for (stride, pad) in [(1, 0), (2, 1), (1, 1)] {
        let k = kernels.clone();
        let err_in = grad_check(
            |tape, x| {
                let k = tape.constant(k.clone());
                let y = tape.conv2d(x, k, stride, pad)?;
                let y2 = tape.square(y)?;
                tape.sum(y2)
            },
            &input,
            1e-5,
        )
        .unwrap();
        let x = input.clone();
        let err_k = grad_check(
            |tape, k| {
                let x = tape.constant(x.clone());
                let y = tape.conv2d(x, k, stride, pad)?;
                let y2 = tape.square(y)?;
                tape.sum(y2)
            },
            &kernels,
            1e-5,
        )
        .unwrap();
        assert!(err_in < 1e-4 && err_k < 1e-4, "stride {stride} pad {pad}: {err_in} {err_k}");
    }
}

#[test]
fn relu_and_sigmoid_values() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[-1., 0., 2.]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
    let s = tape.sum(r).unwrap();
    // subgradient at 0 is 0
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[0., 0., 1.]);

    let mut tape = Tape::new();
    let z = tape.param(Tensor::scalar(0.0));
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5]);
    assert_eq!(tape.backward(s).unwrap().get(z).unwrap(), &[0.25]);
}

#[test]
fn sigmoid_is_stable_for_large_inputs() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[-800.0, 800.0]));
    let s = tape.sigmoid(x).unwrap();
    assert_eq!(tape.value(s).data(), &[0.0, 1.0]);
}

#[test]
fn global_avg_pool_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2, 1], &[1., 2., 3., 4.]));
    let p = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(p).shape(), &[1, 1, 1]);
    assert_eq!(tape.value(p).data(), &[2.5]);

    let c = tape.constant(Tensor::full(&[3, 2, 2], 0.7).unwrap());
    let p = tape.global_avg_pool(c).unwrap();
    assert!(tape.value(p).data().iter().all(|v| (v - 0.7).abs() < 1e-15));

    let mut tape = Tape::new();
    let x = tape.param(random(&[4, 4, 1], 5));
    let p = tape.global_avg_pool(x).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0 / 16.0));
    let err = grad_check(
        |tape, x| {
            let p = tape.global_avg_pool(x)?;
            tape.sum(p)
        },
        &random(&[4, 4, 1], 5),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.constant(random(&[10], 1));
    assert_eq!(tape.dropout(x, 0.0, &mut rng, true).unwrap(), x);
    let y = tape.dropout(x, 0.9, &mut rng, false).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    assert!(matches!(tape.dropout(x, 1.0, &mut rng, true), Err(Error::Parameter(_))));

    let ones = tape.constant(Tensor::full(&[10_000], 1.0).unwrap());
    let d = tape.dropout(ones, 0.5, &mut rng, true).unwrap();
    let mean = tape.value(d).data().iter().sum::<f64>() / 10_000.0;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
    assert!(tape.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn dropout_gradient_uses_recorded_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[64], 1.0).unwrap());
    let d = tape.dropout(x, 0.25, &mut rng, true).unwrap();
    let s = tape.sum(d).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), tape.value(d).data());
}

#[test]
fn backward_power_and_chain_rule() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.square(x).unwrap();
    assert_eq!(tape.backward(y).unwrap().get(x).unwrap(), &[6.0]);

    let mut tape = Tape::new();
    let w = tape.param(t(&[1, 1], &[0.0]));
    let xin = tape.constant(t(&[1, 1], &[1.0]));
    let z = tape.matmul(w, xin).unwrap();
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(w).unwrap(), &[0.25]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(random(&[3], 1));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[f64::MAX]));
    assert!(matches!(tape.square(x), Err(Error::NonFinite(_))));
}

#[test]
fn gradients_have_node_shapes_and_skip_constants() {
    let mut tape = Tape::new();
    let w = tape.param(random(&[3, 2], 1));
    let x = tape.constant(random(&[4, 3], 2));
    let b = tape.param(random(&[2], 3));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.add_bias(h, b).unwrap();
    let l = tape.mean(h).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.tensor(w).unwrap().shape(), &[3, 2]);
    assert_eq!(g.tensor(b).unwrap().shape(), &[2]);
    assert!(g.get(x).is_none());
}

#[test]
fn grad_check_simple_functions() {
    let x = random(&[8], 21);
    let e = grad_check(|tape, x| tape.sum(x), &x, 1e-6).unwrap();
    assert!(e < 1e-10, "{e}");
    let e = grad_check(
        |tape, x| {
            let s = tape.square(x)?;
            tape.sum(s)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(e < 1e-6, "{e}");
}

#[test]
fn gradients_are_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut tape = Tape::new();
        let img = tape.constant(random(&[8, 8, 3], 1));
        let k = tape.param(random(&[3, 3, 3, 4], 2));
        let c = tape.conv2d(img, k, 2, 1).unwrap();
        let c = tape.relu(c).unwrap();
        let d = tape.dropout(c, 0.3, &mut rng, true).unwrap();
        let p = tape.global_avg_pool(d).unwrap();
        let l = tape.sum(p).unwrap();
        tape.backward(l).unwrap().get(k).unwrap().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn f32_tape_works() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::new(&[2], vec![1.5f32, -2.0]).unwrap());
    let y = tape.square(x).unwrap();
    let s = tape.sum(y).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[3.0f32, -4.0]);
}

fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

// values kept away from the relu/clamp kinks so central differences are valid
fn off_kink(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.05f64..2.0, any::<bool>()).prop_map(|(v, s)| if s { v } else { -v }), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pointwise_ops_pass_gradient_check(x in off_kink(6), w in finite_vec(6)) {
        let x = t(&[2, 3], &x);
        let w = t(&[2, 3], &w);
        let eps = 1e-5;
        let checks: Vec<Box<dyn Fn(&mut Tape<f64>, NodeId) -> crate::Result<NodeId>>> = vec![
            Box::new(|tp, x| { let r = tp.relu(x)?; let c = tp.constant(w.clone()); let m = tp.mul(r, c)?; tp.sum(m) }),
            Box::new(|tp, x| { let s = tp.sigmoid(x)?; let s = tp.square(s)?; tp.mean(s) }),
            Box::new(|tp, x| { let c = tp.constant(w.clone()); let d = tp.sub(x, c)?; let q = tp.square(d)?; tp.sum(q) }),
            Box::new(|tp, x| { let s = tp.sigmoid(x)?; let l = tp.ln_clamped(s, 1e-12)?; tp.sum(l) }),
            Box::new(|tp, x| { let a = tp.affine(x, -0.5, 0.25)?; let c = tp.clamp(a, -0.6, 0.6)?; let q = tp.square(c)?; tp.sum(q) }),
            Box::new(|tp, x| { let c = tp.constant(w.clone()); let m = tp.concat_cols(x, c)?; let q = tp.square(m)?; tp.sum(q) }),
        ];
        for f in &checks {
            let e = grad_check(|tp, n| f(tp, n), &x, eps).unwrap();
            prop_assert!(e < 1e-4, "rel err {}", e);
        }
    }

    #[test]
    fn dense_and_standardize_pass_gradient_check(x in finite_vec(12), w in finite_vec(8), b in finite_vec(2)) {
        let x = t(&[3, 4], &x);
        let w = t(&[4, 2], &w);
        let b = t(&[2], &b);
        let (xc, bc) = (x.clone(), b.clone());
        let e = grad_check(|tp, w| {
            let xi = tp.constant(xc.clone());
            let bi = tp.constant(bc.clone());
            let h = tp.matmul(xi, w)?;
            let h = tp.add_bias(h, bi)?;
            let s = tp.sigmoid(h)?;
            tp.sum(s)
        }, &w, 1e-5).unwrap();
        prop_assert!(e < 1e-4);

        let sd = t(&[4], &[0.5, 1.5, 2.0, 0.8]);
        let wc = w.clone();
        let e = grad_check(|tp, m| {
            let xi = tp.constant(xc.clone());
            let s = tp.param(sd.clone());
            let z = tp.standardize(xi, m, s, 1e-8)?;
            let wi = tp.constant(wc.clone());
            let h = tp.matmul(z, wi)?;
            let h = tp.sigmoid(h)?;
            tp.sum(h)
        }, &t(&[4], &[0.1, -0.2, 0.3, 0.0]), 1e-5).unwrap();
        prop_assert!(e < 1e-4);
        let mean = t(&[4], &[0.1, -0.2, 0.3, 0.0]);
        let e = grad_check(|tp, s| {
            let xi = tp.constant(xc.clone());
            let m = tp.constant(mean.clone());
            let z = tp.standardize(xi, m, s, 1e-8)?;
            let z = tp.sigmoid(z)?;
            tp.sum(z)
        }, &t(&[4], &[0.5, 1.5, 2.0, 0.8]), 1e-5).unwrap();
        prop_assert!(e < 1e-4);
    }

    #[test]
    fn stack_rows_and_pool_pass_gradient_check(x in finite_vec(18)) {
        let x = t(&[3, 3, 2], &x);
        let e = grad_check(|tp, x| {
            let p = tp.global_avg_pool(x)?;
            let r = tp.reshape(x, &[9, 2])?;
            let q = tp.square(r)?;
            let s1 = tp.sum(q)?;
            let st = tp.stack_rows(&[p, p])?;
            let st = tp.sigmoid(st)?;
            let s2 = tp.sum(st)?;
            tp.add(s1, s2)
        }, &x, 1e-5).unwrap();
        prop_assert!(e < 1e-4);
    }

    #[test]
    fn eval_dropout_is_bit_identical(x in finite_vec(16), rate in 0.0f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let xi = tape.constant(t(&[16], &x));
        let y = tape.dropout(xi, rate, &mut rng, false).unwrap();
        prop_assert_eq!(tape.value(y).data(), tape.value(xi).data());
    }
}

#[test]
fn batched_conv_and_pool_match_per_image() {
    let batch = random(&[3, 6, 5, 2], 21);
    let kernels = random(&[3, 3, 2, 4], 22);
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let k = tape.constant(kernels.clone());
    let y = tape.conv2d(x, k, 2, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 3, 3, 4]);
    let pooled = tape.global_avg_pool(y).unwrap();
    assert_eq!(tape.value(pooled).shape(), &[3, 4]);
    for b in 0..3 {
        let image = Tensor::new(&[6, 5, 2], batch.data()[b * 60..(b + 1) * 60].to_vec()).unwrap();
        let xi = tape.constant(image);
        let yi = tape.conv2d(xi, k, 2, 1).unwrap();
        assert_eq!(tape.value(yi).data(), &tape.value(y).data()[b * 36..(b + 1) * 36]);
        let pi = tape.global_avg_pool(yi).unwrap();
        assert_eq!(tape.value(pi).data(), &tape.value(pooled).data()[b * 4..(b + 1) * 4]);
    }
}

#[test]
fn batched_conv_pool_gradients() {
    let kernels = random(&[3, 3, 2, 3], 24);
    let k = kernels.clone();
    let err_in = grad_check(
        |tape, x| {
            let k = tape.constant(k.clone());
            let y = tape.conv2d(x, k, 2, 1)?;
            let y2 = tape.square(y)?;
            let p = tape.global_avg_pool(y2)?;
            let p2 = tape.square(p)?;
            tape.sum(p2)
        },
        &random(&[2, 5, 5, 2], 23),
        1e-5,
    )
    .unwrap();
    let x = random(&[2, 5, 5, 2], 23);
    let err_k = grad_check(
        |tape, k| {
            let x = tape.constant(x.clone());
            let y = tape.conv2d(x, k, 2, 1)?;
            let p = tape.global_avg_pool(y)?;
            let p2 = tape.square(p)?;
            tape.sum(p2)
        },
        &kernels,
        1e-5,
    )
    .unwrap();
    assert!(err_in < 1e-4 && err_k < 1e-4, "{err_in} {err_k}");
}
