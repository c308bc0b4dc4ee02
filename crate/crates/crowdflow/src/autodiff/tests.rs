use super::*;
use crate::numcheck::{central_diff_grad, max_rel_err};
use crate::rng::{purpose, stream};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;

/// Gradient-check a scalar function of one flat input against central
/// differences.
fn check_scalar_fn(x0: &[f64], build: impl Fn(&Value) -> Value) {
    let x = Value::parameter(x0.to_vec(), vec![x0.len()]);
    let y = build(&x);
    y.backward();
    let analytic = x.grad().expect("input received no gradient");
    let mut f = |xs: &[f64]| build(&Value::vector(xs.to_vec())).item();
    let numeric = central_diff_grad(&mut f, x0, 1e-5);
    let err = max_rel_err(&analytic, &numeric);
    assert!(
        err < 1e-4,
        "gradient mismatch: rel err {err:.3e}\nanalytic {analytic:?}\nnumeric  {numeric:?}"
    );
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let s = Value::vector(vec![0.0, 0.0]).softmax();
    assert_eq!(s.to_vec(), vec![0.5, 0.5]);
}

#[test]
fn matmul_identity() {
    let eye = Value::constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3]);
    let a = Value::constant((1..=9).map(|v| v as f64 * 0.7 - 2.0).collect(), vec![3, 3]);
    let prod = eye.matmul(&a);
    assert_eq!(prod.to_vec(), a.to_vec());
    assert_eq!(prod.shape(), &[3, 3]);
}

#[test]
fn grad_of_sum_of_squares() {
    // d/dx sum(x*x) at [1,2] is [2,4]; frozen from the central-difference
    // oracle with h = 1e-5.
    let x = Value::parameter(vec![1.0, 2.0], vec![2]);
    let y = x.mul(&x).sum();
    y.backward();
    let g = x.grad().unwrap();
    let mut f = |xs: &[f64]| {
        let v = Value::vector(xs.to_vec());
        v.mul(&v).sum().item()
    };
    let oracle = central_diff_grad(&mut f, &[1.0, 2.0], 1e-5);
    assert!(max_rel_err(&g, &oracle) < 1e-9);
    assert!(max_rel_err(&g, &[2.0, 4.0]) < 1e-9);
}

#[test]
fn backward_on_constant_graph_leaves_no_grads() {
    let x = Value::parameter(vec![3.0], vec![1]);
    let c = Value::scalar(5.0).add_const(1.0);
    c.backward(); // constant root: nothing tracks gradients
    assert!(x.grad().is_none());
    assert!(c.grad().is_none());
}

#[test]
fn backward_identity_root() {
    let x = Value::parameter(vec![3.0], vec![1]);
    x.backward();
    assert_eq!(x.grad().unwrap(), vec![1.0]);
}

#[test]
#[should_panic(expected = "scalar root")]
fn backward_rejects_non_scalar_root() {
    let x = Value::parameter(vec![1.0, 2.0], vec![2]);
    x.backward();
}

#[test]
fn backward_twice_doubles_gradients() {
    let x = Value::parameter(vec![1.5, -0.5], vec![2]);
    let y = x.mul(&x).sum();
    y.backward();
    let once = x.grad().unwrap();
    y.backward();
    let twice = x.grad().unwrap();
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(*b, 2.0 * a);
    }
}

#[test]
fn diamond_graph_accumulates_through_both_paths() {
    // y = x*x + x: grad = 2x + 1
    let x = Value::parameter(vec![3.0], vec![1]);
    let y = x.mul(&x).add(&x).sum();
    y.backward();
    assert_abs_diff_eq!(x.grad().unwrap()[0], 7.0, epsilon = 1e-12);
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = stream(11, &[purpose::INIT, 0]);
    for trial in 0..20 {
        let n = 4;
        let x0: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        check_scalar_fn(&x0, |x| {
            let a = x.slice(0, n);
            let b = x.slice(n, n);
            let u = a.add(&b).mul(&a.sub(&b)).add(&b.scale_const(2.5).add_const(0.1));
            concat(&[&u.mean(), &a.sum()]).sum()
        });
        let _ = trial;
    }
}

#[test]
fn matmul_gradients() {
    let mut rng = stream(12, &[purpose::INIT, 0]);
    for _ in 0..10 {
        let x0: Vec<f64> = (0..12).map(|_| rng.random_range(-1.5..1.5)).collect();
        check_scalar_fn(&x0, |x| {
            let a = x.slice(0, 6).reshape(vec![2, 3]);
            let b = x.slice(6, 6).reshape(vec![3, 2]);
            let p = a.matmul(&b);
            p.mul(&p).sum()
        });
    }
}

#[test]
fn activation_gradients() {
    let mut rng = stream(13, &[purpose::INIT, 0]);
    for _ in 0..20 {
        // Keep relu inputs away from the kink: central differences straddle it.
        let x0: Vec<f64> = (0..5)
            .map(|_| {
                let v: f64 = rng.random_range(-2.0..2.0);
                if v.abs() < 0.05 {
                    v + 0.1
                } else {
                    v
                }
            })
            .collect();
        check_scalar_fn(&x0, |x| {
            let t = x.tanh().mul(&x.sigmoid()).add(&x.relu());
            t.mul(&t).sum()
        });
    }
}

#[test]
fn softmax_unit_norm_layernorm_gradients() {
    let mut rng = stream(14, &[purpose::INIT, 0]);
    for _ in 0..20 {
        let x0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_scalar_fn(&x0, |x| {
            let a = x.slice(0, 3);
            let s = a.softmax();
            let u = x.slice(3, 3).add_const(2.0).l2_unit();
            s.dot(&u)
        });
    }
    // layer_norm with its own gamma/beta parameters folded into the input.
    for _ in 0..10 {
        let x0: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_scalar_fn(&x0, |x| {
            let inp = x.slice(0, 3);
            let ln = LayerNorm {
                gamma: x.slice(3, 3),
                beta: x.slice(6, 3),
                eps: 1e-5,
            };
            let y = ln.apply(&inp);
            y.mul(&y).sum()
        });
    }
}

#[test]
fn clamp_and_scale_by_gradients() {
    let mut rng = stream(15, &[purpose::INIT, 0]);
    for _ in 0..10 {
        // clamp01 inputs kept interior
        let mut x0: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..0.9)).collect();
        x0.push(rng.random_range(-1.0..1.0));
        check_scalar_fn(&x0, |x| {
            let v = x.slice(0, 4).clamp01();
            let s = x.slice(4, 1);
            v.scale_by(&s).sum()
        });
    }
}

#[test]
fn affine_and_mlp_gradients() {
    let mut rng = stream(16, &[purpose::INIT, 0]);
    for _ in 0..10 {
        // weights 2x3, bias 2, input 3
        let x0: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_scalar_fn(&x0, |x| {
            let layer = Affine {
                weight: x.slice(0, 6).reshape(vec![2, 3]),
                bias: x.slice(6, 2),
            };
            let y = layer.apply(&x.slice(8, 3)).tanh();
            y.mul(&y).sum()
        });
    }
}

#[test]
fn lstm_zero_parameters_give_zero_hidden() {
    let mut params = ParamSet::new();
    let mut rng = stream(1, &[purpose::INIT]);
    let cell = LstmCell::init(&mut params, "lstm", 3, 4, &mut rng);
    params.set_all_zero();
    let x = Value::vector(vec![0.7, -0.3, 2.0]);
    let h = Value::vector(vec![0.0; 4]);
    let c = Value::vector(vec![0.0; 4]);
    let (h1, c1) = lstm_step(&cell, &x, &h, &c);
    assert_eq!(h1.to_vec(), vec![0.0; 4]);
    assert_eq!(c1.to_vec(), vec![0.0; 4]);
}

#[test]
fn lstm_hidden_state_is_bounded() {
    let mut params = ParamSet::new();
    let mut rng = stream(2, &[purpose::INIT]);
    let cell = LstmCell::init(&mut params, "lstm", 2, 3, &mut rng);
    let mut h = Value::vector(vec![0.0; 3]);
    let mut c = Value::vector(vec![0.0; 3]);
    for i in 0..50 {
        let x = Value::vector(vec![(i as f64).sin() * 5.0, (i as f64).cos() * 5.0]);
        let (h2, c2) = lstm_step(&cell, &x, &h, &c);
        h = h2;
        c = c2;
        assert!(h.data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn lstm_gradient_matches_finite_differences() {
    let mut rng = stream(17, &[purpose::INIT, 0]);
    // Pack gate weights/biases for d_in=2, d_h=2: 4 gates x (2x4 weight + 2 bias) = 40,
    // plus input 2 = 42.
    for _ in 0..5 {
        let x0: Vec<f64> = (0..42).map(|_| rng.random_range(-0.8..0.8)).collect();
        check_scalar_fn(&x0, |x| {
            let gate = |i: usize| Affine {
                weight: x.slice(i * 10, 8).reshape(vec![2, 4]),
                bias: x.slice(i * 10 + 8, 2),
            };
            let cell = LstmCell {
                w_input: gate(0),
                w_forget: gate(1),
                w_cell: gate(2),
                w_output: gate(3),
            };
            let inp = x.slice(40, 2);
            let h0 = Value::vector(vec![0.0; 2]);
            let c0 = Value::vector(vec![0.0; 2]);
            let (h1, c1) = lstm_step(&cell, &inp, &h0, &c0);
            let (h2, _) = lstm_step(&cell, &inp, &h1, &c1);
            h2.sq_norm()
        });
    }
}

#[test]
fn adam_zero_gradients_leave_parameters_unchanged() {
    let mut params = ParamSet::new();
    let p = params.register("p", vec![1.0, -2.0], vec![2]);
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    adam.step(&params).unwrap();
    assert_eq!(p.to_vec(), vec![1.0, -2.0]);
    assert_eq!(adam.step_count, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // One step on scalar p=1 with g=1, lr=0.1: bias-corrected m_hat = v_hat = 1,
    // so p <- 1 - 0.1 * 1/(1 + eps) which is 0.9 up to eps.
    let mut params = ParamSet::new();
    let p = params.register("p", vec![1.0], vec![1]);
    let loss = p.sum();
    loss.backward();
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    adam.step(&params).unwrap();
    assert_abs_diff_eq!(p.item(), 0.9, epsilon = 1e-8);
}

#[test]
fn adam_descends_a_quadratic() {
    let mut params = ParamSet::new();
    let p = params.register("p", vec![3.0], vec![1]);
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    let loss_at = |p: &Value| {
        let d = p.add_const(-1.0);
        d.mul(&d).sum()
    };
    let initial = loss_at(&p).item();
    for _ in 0..100 {
        params.zero_grads();
        let loss = loss_at(&p);
        loss.backward();
        adam.step(&params).unwrap();
    }
    let fin = loss_at(&p).item();
    assert!(fin < 0.1 * initial, "loss {initial} -> {fin} did not decrease enough");
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut params = ParamSet::new();
    let p = params.register("theta", vec![1.0], vec![1]);
    let loss = p.scale_const(f64::INFINITY).sum();
    loss.backward();
    let mut adam = Adam::new(&params, AdamConfig::default());
    let err = adam.step(&params).unwrap_err();
    assert!(err.to_string().contains("theta"), "error should name the parameter: {err}");
}

#[test]
fn sinusoidal_embedding_shape_and_range() {
    let e = sinusoidal_embedding(35, 16);
    assert_eq!(e.shape(), &[16]);
    assert!(e.data().iter().all(|v| v.abs() <= 1.0));
    // step 0: sin terms 0, cos terms 1
    let e0 = sinusoidal_embedding(0, 8);
    for (i, v) in e0.data().iter().enumerate() {
        if i % 2 == 0 {
            assert_eq!(*v, 0.0);
        } else {
            assert_eq!(*v, 1.0);
        }
    }
}

#[test]
fn detach_cuts_the_graph() {
    let x = Value::parameter(vec![2.0], vec![1]);
    let y = x.mul(&x).detach();
    let z = y.scale_const(3.0).sum();
    z.backward();
    assert!(x.grad().is_none());
    assert!(!y.requires_grad());
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(xs in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
        let s = Value::vector(xs).softmax();
        let data = s.to_vec();
        prop_assert!(data.iter().all(|v| *v >= 0.0));
        let sum: f64 = data.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn l2_unit_has_unit_norm_or_zero(xs in proptest::collection::vec(-100.0f64..100.0, 1..8)) {
        let u = Value::vector(xs.clone()).l2_unit();
        let norm: f64 = u.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if xs.iter().all(|v| *v == 0.0) {
            prop_assert_eq!(norm, 0.0);
        } else {
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
