//! Minimal reverse-mode network substrate: 1-D convolution, batch norm,
//! residual blocks, pooling, dense layers, softmax and Adam.

mod layers;
mod model;
mod optim;
mod tensor;

pub use layers::{BatchNorm1d, Conv1d, Dense, MaxPool1d, Mode, Param};
pub use model::{
    build_feature_extractor, build_head, build_head_with, build_model, Arch, FeConfig, HeadConfig, Layer,
    ModelGraph, ResBlock, DEFAULT_HEAD_HIDDEN,
};
pub(crate) use model::build_feature_extractor_on_stream;
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

/// A length-T feature vector produced by a feature extractor.
pub type FeatureVector = Vec<f64>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiny_fe() -> FeConfig {
        FeConfig {
            input_channels: 2,
            input_len: 24,
            stem_channels: 3,
            stem_kernel: 5,
            stem_stride: 2,
            stem_pool: true,
            widths: vec![3, 4],
            blocks: vec![1, 1],
            feature_len: 5,
        }
    }

    fn probe(model: &mut ModelGraph, x: &Tensor, r: &Tensor) -> f64 {
        let y = model.forward(x).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    /// Compares every parameter gradient of `sum(r * model(x))` with central
    /// finite differences.
    fn gradcheck(model: &mut ModelGraph, x: &Tensor, seed: u64) {
        model.set_mode(Mode::Train);
        let out = model.forward(x).unwrap();
        let r = random(out.shape(), seed);
        model.zero_grad();
        model.backward(&r).unwrap();
        let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();
        let eps = 1e-5;
        for (pi, grads) in analytic.iter().enumerate() {
            for (i, &g) in grads.iter().enumerate() {
                let orig = model.params()[pi].value.data()[i];
                model.params_mut()[pi].value.data_mut()[i] = orig + eps;
                let up = probe(model, x, &r);
                model.params_mut()[pi].value.data_mut()[i] = orig - eps;
                let down = probe(model, x, &r);
                model.params_mut()[pi].value.data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let scale = g.abs().max(fd.abs()).max(1e-2);
                assert!(
                    (g - fd).abs() <= 1e-4 * scale,
                    "{} [{i}]: analytic {g} vs fd {fd}",
                    model.params()[pi].name
                );
            }
        }
    }

    #[test]
    fn desk_extractor_outputs_sixty_four() {
        let fe = build_feature_extractor(&FeConfig::default(), 0).unwrap();
        assert_eq!(fe.output_shape().unwrap(), vec![64]);
        let y = fe.infer(&random(&[3, 2, 320], 1)).unwrap();
        assert_eq!(y.shape(), &[3, 64]);
    }

    #[test]
    fn resnet18_shape_is_constructible() {
        let fe = build_feature_extractor(&FeConfig::resnet18(400), 0).unwrap();
        assert_eq!(fe.output_shape().unwrap(), vec![512]);
        // 20 conv layers with fan-in k*cin, 3 downsample shortcuts, 20 batch norms.
        let blocks = fe.layers().iter().filter(|l| matches!(l, Layer::Residual(_))).count();
        assert_eq!(blocks, 8);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k;
        let bn = |c: usize| 2 * c;
        let block = |cin: usize, cout: usize| {
            let short = if cin != cout { conv(cin, cout, 1) + bn(cout) } else { 0 };
            conv(cin, cout, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout) + short
        };
        let want = conv(2, 16, 7) + bn(16) + block(16, 16) + block(16, 32) + block(32, 64);
        assert_eq!(build_feature_extractor(&FeConfig::default(), 0).unwrap().param_count(), want);

        let cfg = FeConfig { feature_len: 10, ..FeConfig::default() };
        assert_eq!(build_feature_extractor(&cfg, 0).unwrap().param_count(), want + 64 * 10 + 10);

        let head = build_head(64, 10, 0, 0).unwrap();
        assert_eq!(head.param_count(), 64 * 64 + 64 + 64 * 10 + 10);
    }

    #[test]
    fn incompatible_shapes_are_rejected() {
        let cfg = FeConfig { widths: vec![16, 0, 64], ..FeConfig::default() };
        assert!(build_feature_extractor(&cfg, 0).is_err());
        let cfg = FeConfig { widths: vec![16, 32], ..FeConfig::default() };
        assert!(build_feature_extractor(&cfg, 0).is_err());
        let fe = build_feature_extractor(&FeConfig::default(), 0).unwrap();
        assert!(matches!(fe.infer(&random(&[1, 2, 100], 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_block_weights_pass_input_through() {
        // Identity stem, one same-width block, global pool.
        let cfg = FeConfig {
            input_channels: 4,
            input_len: 10,
            stem_channels: 4,
            stem_kernel: 1,
            stem_stride: 1,
            stem_pool: false,
            widths: vec![4],
            blocks: vec![1],
            feature_len: 4,
        };
        let mut fe = build_feature_extractor(&cfg, 3).unwrap();
        let layers = fe.layers_mut();
        if let Layer::Conv(stem) = &mut layers[0] {
            let w = stem.weight.value.data_mut();
            w.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..4 {
                w[c * 4 + c] = 1.0;
            }
        }
        if let Layer::Residual(b) = &mut layers[3] {
            b.conv1.weight.value.data_mut().iter_mut().for_each(|w| *w = 0.0);
            b.conv2.weight.value.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        // Nonnegative input survives the stem's batch norm (unit running
        // variance, up to eps) and relu; the zeroed block adds nothing.
        let x = random(&[2, 4, 10], 5);
        let x = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.abs()).collect()).unwrap();
        let y = fe.infer(&x).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (row, got) in x.data().chunks(10).zip(y.data()) {
            let want = s * row.iter().sum::<f64>() / 10.0;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_outputs_probabilities() {
        let head = build_head(64, 10, 1, 0).unwrap();
        let y = head.infer(&random(&[4, 64], 2)).unwrap();
        assert_eq!(y.shape(), &[4, 10]);
        for r in 0..4 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(build_head(64, 2, 1, 0).unwrap().output_shape().unwrap(), vec![2]);
    }

    #[test]
    fn zero_final_dense_gives_uniform_softmax() {
        let mut head = build_head(8, 5, 1, 0).unwrap();
        if let Layer::Dense(d) = &mut head.layers_mut()[2] {
            d.weight.value.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let y = head.infer(&random(&[3, 8], 4)).unwrap();
        assert!(y.data().iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let fe = build_feature_extractor(&tiny_fe(), 2).unwrap();
        let row = random(&[1, 2, 24], 9);
        let x = Tensor::stack(&[row.data(), row.data(), row.data()], &[2, 24]).unwrap();
        let y = fe.infer(&x).unwrap();
        assert_eq!(y.row(0), y.row(1));
        assert_eq!(y.row(0), y.row(2));
    }

    #[test]
    fn dense_forward_matches_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new("d", 3, 2, &mut rng);
        let x = random(&[4, 3], 2);
        let y = d.forward(&x).unwrap();
        for n in 0..4 {
            for o in 0..2 {
                let want: f64 = d.bias.value.data()[o]
                    + (0..3).map(|i| d.weight.value.at2(o, i) * x.at2(n, i)).sum::<f64>();
                assert!((y.at2(n, o) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Conv1d::new("c", 2, 3, 3, 2, 1, true, &mut rng);
        c.bias.as_mut().unwrap().value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = random(&[2, 2, 9], 3);
        let (y, _) = c.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5]);
        let w = c.weight.value.data();
        for n in 0..2 {
            for co in 0..3 {
                for l in 0..5 {
                    let mut want = c.bias.as_ref().unwrap().value.data()[co];
                    for ci in 0..2 {
                        for k in 0..3 {
                            let p = (l * 2 + k) as isize - 1;
                            if (0..9).contains(&p) {
                                want += w[(co * 2 + ci) * 3 + k] * x.data()[(n * 2 + ci) * 9 + p as usize];
                            }
                        }
                    }
                    assert!((y.data()[(n * 3 + co) * 5 + l] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn feature_extractor_gradients_match_finite_differences() {
        let mut fe = build_feature_extractor(&tiny_fe(), 11).unwrap();
        gradcheck(&mut fe, &random(&[3, 2, 24], 12), 13);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut head = build_head_with(&HeadConfig { inputs: 5, hidden: 6, classes: 3 }, 1, 0).unwrap();
        gradcheck(&mut head, &random(&[4, 5], 2), 3);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut head = build_head_with(&HeadConfig { inputs: 4, hidden: 5, classes: 3 }, 1, 0).unwrap();
        let x = random(&[2, 4], 7);
        let out = head.forward(&x).unwrap();
        let r = random(out.shape(), 8);
        let gx = head.backward(&r).unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += 1e-5;
            let mut xm = x.clone();
            xm.data_mut()[i] -= 1e-5;
            let fd = (probe(&mut head, &xp, &r) - probe(&mut head, &xm, &r)) / 2e-5;
            assert!((gx.data()[i] - fd).abs() < 1e-4 * fd.abs().max(1e-2));
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut head = build_head(4, 2, 0, 0).unwrap();
        assert!(matches!(head.backward(&Tensor::zeros(&[1, 2])), Err(Error::NoForward)));
    }

    #[test]
    fn unused_parameter_gradient_is_zero() {
        // Only class 0 carries gradient through a zeroed final layer row set;
        // the unused conv bias-free projection has no path from a zero grad.
        let mut head = build_head(4, 3, 0, 0).unwrap();
        head.forward(&random(&[2, 4], 1)).unwrap();
        head.zero_grad();
        head.backward(&Tensor::zeros(&[2, 3])).unwrap();
        assert!(head.params().iter().all(|p| p.grad.data().iter().all(|g| *g == 0.0)));

        // A dense layer whose input is identically zero gets no weight gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 3, 2, &mut rng);
        d.backward(&random(&[2, 2], 1), &Tensor::zeros(&[2, 3])).unwrap();
        assert!(d.weight.grad.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_are_linear_in_the_loss() {
        let x = random(&[3, 2, 24], 1);
        let grads = |r: &Tensor| {
            let mut fe = build_feature_extractor(&tiny_fe(), 4).unwrap();
            fe.forward(&x).unwrap();
            fe.backward(r).unwrap();
            fe.params().iter().flat_map(|p| p.grad.data().to_vec()).collect::<Vec<_>>()
        };
        let r1 = random(&[3, 5], 2);
        let r2 = random(&[3, 5], 3);
        let mut mix = r1.clone();
        mix.scale(0.7);
        mix.add_scaled(&r2, -1.3).unwrap();
        let (g1, g2, gm) = (grads(&r1), grads(&r2), grads(&mix));
        for i in 0..g1.len() {
            assert!((gm[i] - (0.7 * g1[i] - 1.3 * g2[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_freeze_makes_inference_match_training() {
        let mut fe = build_feature_extractor(&tiny_fe(), 5).unwrap();
        let x = random(&[6, 2, 24], 6);
        fe.freeze_batch_norm(&x).unwrap();
        let train = fe.forward(&x).unwrap();
        let inf = fe.infer(&x).unwrap();
        for (a, b) in train.data().iter().zip(inf.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn inference_is_repeatable_and_state_round_trips() {
        let fe = build_feature_extractor(&tiny_fe(), 5).unwrap();
        let x = random(&[2, 2, 24], 6);
        assert_eq!(fe.infer(&x).unwrap(), fe.infer(&x).unwrap());
        let mut other = build_feature_extractor(&tiny_fe(), 99).unwrap();
        assert_ne!(other.digest(), fe.digest());
        other.load_state(&fe.state()).unwrap();
        assert_eq!(other.digest(), fe.digest());
        assert_eq!(other.infer(&x).unwrap(), fe.infer(&x).unwrap());
        let head = build_head(5, 2, 0, 0).unwrap();
        assert!(matches!(other.load_state(&head.state()), Err(Error::ArchMismatch(_))));
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut head = build_head(3, 2, 0, 0).unwrap();
        let before = head.state();
        let mut opt = Adam::new(&head, AdamConfig::default());
        opt.step(&mut head).unwrap();
        assert_eq!(head.state(), before);
    }

    fn scalar_model(w: &[f64]) -> ModelGraph {
        let mut head = build_head_with(&HeadConfig { inputs: 1, hidden: w.len(), classes: 1 }, 0, 0).unwrap();
        if let Layer::Dense(d) = &mut head.layers_mut()[0] {
            d.weight.value.data_mut().copy_from_slice(w);
        }
        head
    }

    #[test]
    fn adam_descends_on_square() {
        let mut m = scalar_model(&[1.0]);
        let mut opt = Adam::new(&m, AdamConfig::default());
        m.zero_grad();
        m.params_mut()[0].grad.data_mut()[0] = 2.0; // d(w^2)/dw at w = 1
        opt.step(&mut m).unwrap();
        let w = m.params()[0].value.data()[0];
        assert!(w * w < 1.0);
    }

    #[test]
    fn adam_matches_hand_stepped_formula() {
        let mut m = scalar_model(&[0.5, -2.0]);
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut opt = Adam::new(&m, cfg);
        let grads = [[0.3, -1.5], [-0.2, 0.4]];
        let (mut w, mut mm, mut vv) = ([0.5, -2.0], [0.0; 2], [0.0; 2]);
        for (t, g) in grads.iter().enumerate() {
            m.zero_grad();
            m.params_mut()[0].grad.data_mut().copy_from_slice(g);
            opt.step(&mut m).unwrap();
            let t = (t + 1) as i32;
            for i in 0..2 {
                mm[i] = 0.9 * mm[i] + 0.1 * g[i];
                vv[i] = 0.999 * vv[i] + 0.001 * g[i] * g[i];
                let mh = mm[i] / (1.0 - 0.9f64.powi(t));
                let vh = vv[i] / (1.0 - 0.999f64.powi(t));
                w[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        let got = m.params()[0].value.data();
        assert!((got[0] - w[0]).abs() < 1e-15 && (got[1] - w[1]).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite_gradient_by_name() {
        let mut m = scalar_model(&[1.0]);
        let before = m.state();
        let mut opt = Adam::new(&m, AdamConfig::default());
        m.params_mut()[1].grad.data_mut()[0] = f64::NAN;
        match opt.step(&mut m) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "fc1.bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(m.state(), before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn layer_gradients_match_finite_differences(
            cin in 1usize..4, cout in 1usize..4, kernel in 1usize..4, stride in 1usize..3,
            len in 6usize..12, batch in 2usize..4, seed in 0u64..1000,
        ) {
            let cfg = FeConfig {
                input_channels: cin,
                input_len: len,
                stem_channels: cout,
                stem_kernel: kernel,
                stem_stride: stride,
                stem_pool: seed % 2 == 0,
                widths: vec![cout + 1],
                blocks: vec![1],
                feature_len: 3,
            };
            let mut fe = build_feature_extractor(&cfg, seed).unwrap();
            gradcheck(&mut fe, &random(&[batch, cin, len], seed + 1), seed + 2);
        }
    }
}
