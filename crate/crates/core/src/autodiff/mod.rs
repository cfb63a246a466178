//! Minimal deterministic reverse-mode differentiation over dense f64 arrays.
//!
//! Only the operations the two convolutional branches need are provided:
//! 2D convolution, fully connected layers, elementwise activations, a few
//! reductions for the losses, and Adam.

mod array;
mod conv;
mod gradcheck;
mod optim;
mod params;
mod tape;

pub use array::Array;
pub use conv::Padding;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP};
pub use optim::Adam;
pub use params::{ParamId, Parameter, Params};
pub use tape::{relu, sigmoid, softplus, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;

    fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
        let n = shape.iter().product();
        Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_1x1_unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_array(&mut rng, &[4, 5, 1]);
        let mut t = Tape::new();
        let xi = t.constant(x.clone());
        let k = t.constant(Array::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let b = t.constant(Array::from_vec(vec![0.0]));
        let y = t.conv2d(xi, k, b, Padding::Valid).unwrap();
        assert_eq!(t.value(y), &x);
        let y = t.conv2d(xi, k, b, Padding::Same).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn conv_valid_window_sums() {
        // 1 2 3 / 4 5 6 / 7 8 9 with a 2×2 ones kernel
        let x = Array::new(vec![3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let mut t = Tape::new();
        let xi = t.constant(x);
        let k = t.constant(Array::new(vec![2, 2, 1, 1], vec![1.0; 4]).unwrap());
        let b = t.constant(Array::from_vec(vec![0.0]));
        let y = t.conv2d(xi, k, b, Padding::Valid).unwrap();
        assert_eq!(t.value(y).shape(), &[2, 2, 1]);
        assert_eq!(t.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_same_padding_zero_fills_borders() {
        let x = Array::new(vec![3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let mut t = Tape::new();
        let xi = t.constant(x);
        let k = t.constant(Array::new(vec![3, 3, 1, 1], vec![1.0; 9]).unwrap());
        let b = t.constant(Array::from_vec(vec![0.5]));
        let y = t.conv2d(xi, k, b, Padding::Same).unwrap();
        // corner (0,0): 1+2+4+5; centre: all nine
        assert_eq!(t.value(y).data()[0], 12.5);
        assert_eq!(t.value(y).data()[4], 45.5);
    }

    #[test]
    fn conv_kernel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_array(&mut rng, &[5, 4, 2]);
        let mut params = Params::new();
        params.insert("k", random_array(&mut rng, &[3, 3, 2, 3])).unwrap();
        params.insert("b", random_array(&mut rng, &[3])).unwrap();
        let report = grad_check(
            &mut params,
            |t, p| {
                let xi = t.constant(x.clone());
                let k = t.param(p, p.id("k")?);
                let b = t.param(p, p.id("b")?);
                let y = t.conv2d(xi, k, b, Padding::Same)?;
                Ok(t.sum(y))
            },
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 3 * 3 * 2 * 3 + 3);
    }

    #[test]
    fn fully_connected_identity_and_arithmetic() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(vec![0.3, -2.0, 5.0]));
        let mut eye = Array::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = t.constant(eye);
        let b = t.constant(Array::zeros(&[3]));
        let y = t.fully_connected(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[0.3, -2.0, 5.0]);

        let x = t.constant(Array::from_vec(vec![1.0, 1.0]));
        let w = t.constant(Array::new(vec![2, 1], vec![2.0, -1.0]).unwrap());
        let b = t.constant(Array::from_vec(vec![0.5]));
        let y = t.fully_connected(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.5]);
    }

    #[test]
    fn fully_connected_shape_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(vec![1.0, 1.0, 1.0]));
        let w = t.constant(Array::zeros(&[2, 1]));
        let b = t.constant(Array::zeros(&[1]));
        assert!(t.fully_connected(x, w, b).is_err());
        let w = t.constant(Array::zeros(&[3, 2]));
        assert!(t.fully_connected(x, w, b).is_err());
    }

    #[test]
    fn fully_connected_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = Params::new();
        params.insert("x", random_array(&mut rng, &[3, 4])).unwrap();
        params.insert("w", random_array(&mut rng, &[4, 2])).unwrap();
        params.insert("b", random_array(&mut rng, &[2])).unwrap();
        let report = grad_check(
            &mut params,
            |t, p| {
                let x = t.param(p, p.id("x")?);
                let w = t.param(p, p.id("w")?);
                let b = t.param(p, p.id("b")?);
                let y = t.fully_connected(x, w, b)?;
                let y = t.sigmoid(y);
                Ok(t.sum(y))
            },
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(softplus(-50.0) > 0.0);
        assert!(softplus(-700.0) > 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
        assert!((softplus(40.0) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn relu_gradient_is_step() {
        let mut params = Params::new();
        params.insert("x", Array::from_vec(vec![2.0, -3.0])).unwrap();
        let mut t = Tape::new();
        let x = t.param(&params, params.id("x").unwrap());
        let y = t.relu(x);
        let s = t.sum(y);
        t.backward(s, &mut params).unwrap();
        assert_eq!(params.by_name("x").unwrap().grad.data(), &[1.0, 0.0]);
    }

    #[test]
    fn grad_check_linear_function_is_exact() {
        let mut params = Params::new();
        params.insert("x", Array::from_vec(vec![0.5, -1.5, 2.0])).unwrap();
        let report = grad_check(
            &mut params,
            |t, p| {
                let x = t.param(p, p.id("x")?);
                let y = t.scale(x, 3.0);
                Ok(t.sum(y))
            },
            TOL,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn grad_check_catches_broken_backward_rule() {
        let mut params = Params::new();
        params.insert("x", Array::from_vec(vec![0.7, -1.2])).unwrap();
        let report = grad_check(
            &mut params,
            |t, p| {
                let x = t.param(p, p.id("x")?);
                let y = t.broken_square(x);
                Ok(t.sum(y))
            },
            TOL,
        )
        .unwrap();
        assert!(!report.passed());
        assert!((report.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn grad_check_catches_detached_parameter() {
        let mut params = Params::new();
        params.insert("x", Array::from_vec(vec![0.7])).unwrap();
        let report = grad_check(
            &mut params,
            |t, p| {
                let x = t.constant(p.by_name("x").unwrap().value.clone());
                Ok(t.sum(x))
            },
            TOL,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut params = Params::new();
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(vec![1.0, 2.0]));
        assert!(t.backward(x, &mut params).is_err());
    }

    #[test]
    fn mse_and_matvec_values() {
        let mut t = Tape::new();
        let p = t.constant(Array::from_vec(vec![1.0, 3.0]));
        let l = t.mse(p, &[2.0, 3.0]).unwrap();
        assert_eq!(t.value(l).item(), 0.5);
        assert!(t.mse(p, &[1.0]).is_err());
        let m = Array::new(vec![2, 2], vec![1.0, 0.5, -1.0, 2.0]).unwrap();
        let y = t.matvec_const(p, m).unwrap();
        assert_eq!(t.value(y).data(), &[-2.0, 6.5]);
    }

    /// Small conv → relu → conv → relu → dense → softplus network with the
    /// input itself treated as a parameter so input gradients are checked.
    fn two_layer_conv_check(seed: u64, h: usize, w: usize, cin: usize, c: usize) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        params.insert("input", random_array(&mut rng, &[2, h, w, cin])).unwrap();
        params.insert("k1", random_array(&mut rng, &[3, 3, cin, c])).unwrap();
        params.insert("b1", random_array(&mut rng, &[c])).unwrap();
        params.insert("k2", random_array(&mut rng, &[3, 3, c, c])).unwrap();
        params.insert("b2", random_array(&mut rng, &[c])).unwrap();
        params.insert("w", random_array(&mut rng, &[h * w * c, 1])).unwrap();
        params.insert("b", random_array(&mut rng, &[1])).unwrap();
        let target: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..3.0)).collect();
        grad_check(
            &mut params,
            |t, p| {
                let x = t.param(p, p.id("input")?);
                let k1 = t.param(p, p.id("k1")?);
                let b1 = t.param(p, p.id("b1")?);
                let h1 = t.conv2d(x, k1, b1, Padding::Same)?;
                let h1 = t.relu(h1);
                let k2 = t.param(p, p.id("k2")?);
                let b2 = t.param(p, p.id("b2")?);
                let h2 = t.conv2d(h1, k2, b2, Padding::Same)?;
                let h2 = t.relu(h2);
                let flat = t.reshape(h2, &[2, h * w * c])?;
                let wv = t.param(p, p.id("w")?);
                let bv = t.param(p, p.id("b")?);
                let y = t.fully_connected(flat, wv, bv)?;
                let y = t.softplus(y);
                let y = t.reshape(y, &[2])?;
                t.mse(y, &target)
            },
            TOL,
        )
        .unwrap()
    }

    #[test]
    fn random_two_layer_conv_net_passes_grad_check() {
        let report = two_layer_conv_check(3, 5, 4, 2, 3);
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_op_passes_grad_check(
            seed in 0u64..10_000,
            h in 3usize..6,
            w in 3usize..6,
            cin in 1usize..3,
            cout in 1usize..4,
            valid in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let padding = if valid { Padding::Valid } else { Padding::Same };
            let mut params = Params::new();
            params.insert("x", random_array(&mut rng, &[h, w, cin])).unwrap();
            params.insert("k", random_array(&mut rng, &[3, 3, cin, cout])).unwrap();
            params.insert("kb", random_array(&mut rng, &[cout])).unwrap();
            let (oh, ow) = if valid { (h - 2, w - 2) } else { (h, w) };
            let flat = oh * ow * cout;
            params.insert("w", random_array(&mut rng, &[flat, 2])).unwrap();
            params.insert("wb", random_array(&mut rng, &[2])).unwrap();
            params.insert("g", random_array(&mut rng, &[2])).unwrap();
            let mix = random_array(&mut rng, &[2, 3]);
            let report = grad_check(&mut params, |t, p| {
                let x = t.param(p, p.id("x")?);
                let k = t.param(p, p.id("k")?);
                let kb = t.param(p, p.id("kb")?);
                let c = t.conv2d(x, k, kb, padding)?;
                let c = t.softplus(c);
                let f = t.reshape(c, &[flat])?;
                let w = t.param(p, p.id("w")?);
                let wb = t.param(p, p.id("wb")?);
                let d = t.fully_connected(f, w, wb)?;
                let s = t.sigmoid(d);
                let g = t.param(p, p.id("g")?);
                let m = t.mul(s, g)?;
                let a = t.add(m, d)?;
                let r = t.relu(a);
                let sp = t.softplus(r);
                let mv = t.matvec_const(sp, mix.clone())?;
                let ab = t.abs(mv);
                let sc = t.scale(ab, 0.7);
                let total = t.sum(sc);
                let mse = t.mse(d, &[0.25, -0.5])?;
                let total = t.add(total, mse)?;
                Ok(total)
            }, TOL).unwrap();
            prop_assert!(report.passed(), "{:?}", report);
        }

        #[test]
        fn conv_net_grad_check_random_seeds(seed in 0u64..1_000_000) {
            let report = two_layer_conv_check(seed, 4, 3, 2, 2);
            prop_assert!(report.passed(), "{:?}", report);
        }

        #[test]
        fn forward_is_finite_on_finite_inputs(seed in 0u64..1_000_000, scale in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_array(&mut rng, &[9, 5, 3]).map(|v| v * scale);
            let k = random_array(&mut rng, &[3, 3, 3, 2]);
            let mut t = Tape::new();
            let xi = t.constant(x);
            let ki = t.constant(k);
            let b = t.constant(Array::zeros(&[2]));
            let c = t.conv2d(xi, ki, b, Padding::Same).unwrap();
            let s = t.sigmoid(c);
            let sp = t.softplus(c);
            let r = t.relu(c);
            prop_assert!(t.value(s).is_finite() && t.value(sp).is_finite() && t.value(r).is_finite());
        }
    }
}
