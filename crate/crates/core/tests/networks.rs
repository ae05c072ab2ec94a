use mcgan::memory::MEMORY_WIDTH;
use mcgan::networks::{apply_memory_gate, condition_input, Discriminator, GateProjection, Generator};
use mcgan::nn::Mode;
use mcgan::tensor::gradcheck::{check_inputs, check_module};
use mcgan::tensor::{Module, Tape, Tensor};
use mcgan::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: mcgan::tensor::Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64s(shape, &v).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn label_planes_are_one_hot_and_appended() {
    let x: Tensor<f64> = random(&[2, 3, 4, 4], &mut rng(1));
    let c = condition_input(&x, &[0, 1], 2).unwrap();
    assert_eq!(c.shape(), &[2, 5, 4, 4]);
    for y in 0..4 {
        for xx in 0..4 {
            assert_eq!(c.at(&[0, 3, y, xx]), 1.0);
            assert_eq!(c.at(&[0, 4, y, xx]), 0.0);
            assert_eq!(c.at(&[1, 3, y, xx]), 0.0);
            assert_eq!(c.at(&[1, 4, y, xx]), 1.0);
            for ch in 0..3 {
                assert_eq!(c.at(&[0, ch, y, xx]), x.at(&[0, ch, y, xx]));
            }
        }
    }
}

#[test]
fn labels_change_only_label_planes() {
    let x: Tensor<f64> = random(&[1, 3, 8, 8], &mut rng(2));
    let a = condition_input(&x, &[0], 3).unwrap();
    let b = condition_input(&x, &[2], 3).unwrap();
    assert_eq!(a.shape()[1], 6);
    let plane = 64;
    assert_eq!(a.data()[..3 * plane], b.data()[..3 * plane]);
    assert_ne!(a.data()[3 * plane..], b.data()[3 * plane..]);
}

#[test]
fn out_of_range_label_is_rejected() {
    let x: Tensor<f64> = random(&[1, 3, 4, 4], &mut rng(3));
    assert!(matches!(condition_input(&x, &[2], 2), Err(Error::Contract(_))));
}

fn shape_chain(n: usize, base: usize) {
    let size = 1 << n;
    let mut g = Generator::<f32>::with_width(size, 5, base, &mut rng(n as u64)).unwrap();
    assert_eq!(g.stages(), n);
    let x: Tensor<f32> = random(&[1, 5, size, size], &mut rng(9));
    let tape = Tape::new();
    let trace = g.trace(&tape, tape.constant(&x), Mode::Eval, None, None).unwrap();
    for (s, act) in trace.encoder.iter().enumerate() {
        let side = 1 << (n - s - 1);
        let width = base * (1usize << s.min(3));
        assert_eq!(act.shape(), vec![1, width, side, side], "encoder stage {}", s + 1);
    }
    assert_eq!(trace.output.shape(), vec![1, 1, size, size]);
    let last = n - 1;
    for (j, input) in trace.decoder_inputs.iter().enumerate().skip(1) {
        let skip = trace.encoder[last - j].shape();
        let own = trace.decoder_inputs[j].shape()[1] - skip[1];
        assert_eq!(input.shape()[2..], skip[2..], "decoder {j}");
        assert_eq!(own, skip[1], "decoder {j} upsamples to the skip width");
    }
}

#[test]
fn shape_chain_is_closed_for_64_128_256() {
    shape_chain(6, 64);
    shape_chain(7, 16);
    shape_chain(8, 64);
}

#[test]
fn wrong_spatial_size_is_a_shape_error() {
    let mut g = Generator::<f64>::with_width(16, 5, 4, &mut rng(4)).unwrap();
    let tape = Tape::new();
    let x = tape.constant(&Tensor::zeros(&[2, 5, 32, 32]));
    assert!(matches!(g.forward(&tape, x, Mode::Train, None), Err(Error::Shape { .. })));
}

#[test]
fn output_is_bounded_and_deterministic_without_dropout() {
    let mut g = Generator::<f64>::with_width(32, 5, 8, &mut rng(5)).unwrap();
    let x = random(&[2, 5, 32, 32], &mut rng(6));
    let run = |g: &mut Generator<f64>| {
        let tape = Tape::new();
        g.forward(&tape, tape.constant(&x), Mode::Eval, None).unwrap().value()
    };
    let a = run(&mut g);
    let b = run(&mut g);
    assert_eq!(a.shape(), &[2, 1, 32, 32]);
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn dropout_seeds_change_the_output() {
    let mut g = Generator::<f64>::with_width(32, 5, 8, &mut rng(7)).unwrap();
    let x = random(&[2, 5, 32, 32], &mut rng(8));
    let outputs: Vec<Tensor<f64>> = (0..10)
        .map(|seed| {
            let tape = Tape::new();
            let mut r = rng(100 + seed);
            g.forward(&tape, tape.constant(&x), Mode::Train, Some(&mut r)).unwrap().value()
        })
        .collect();
    let max_diff = outputs[1..]
        .iter()
        .flat_map(|o| o.data().iter().zip(outputs[0].data()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    assert!(max_diff > 0.0);
    let tape = Tape::new();
    let again = g.forward(&tape, tape.constant(&x), Mode::Train, Some(&mut rng(100))).unwrap().value();
    assert_eq!(again.data(), outputs[0].data());
}

#[test]
fn zeroing_an_encoder_activation_reaches_its_skip_target() {
    let mut g = Generator::<f64>::with_width(16, 5, 4, &mut rng(10)).unwrap();
    let x = random(&[2, 5, 16, 16], &mut rng(11));
    let tape = Tape::new();
    let base = g.trace(&tape, tape.constant(&x), Mode::Eval, None, None).unwrap();
    let last = g.stages() - 1;
    for s in 0..last {
        let probe = g.trace(&tape, tape.constant(&x), Mode::Eval, None, Some((s, 0))).unwrap();
        let j = last - s;
        let diff: f64 = base.decoder_inputs[j]
            .value()
            .data()
            .iter()
            .zip(probe.decoder_inputs[j].value().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(base.encoder[s].value().data()[0] != 0.0);
        assert!(diff > 0.0, "encoder stage {s} does not reach decoder {j}");
    }
}

#[test]
fn reduced_generator_matches_finite_differences() {
    let mut g = Generator::<f64>::with_width(16, 5, 4, &mut rng(12)).unwrap();
    assert_eq!(g.stages(), 4);
    let x = random::<f64>(&[2, 5, 16, 16], &mut rng(13));
    let w = random::<f64>(&[2, 1, 16, 16], &mut rng(14));
    let report = check_module(&mut g, 6, 15, |g, tape| {
        let o = g.forward(tape, tape.constant(&x), Mode::Train, None)?;
        Ok(o.mul(tape.constant(&w))?.sum())
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
    let report = check_inputs(&[x.clone()], |tape, v| {
        let mut g = g.clone();
        Ok(g.forward(tape, v[0], Mode::Train, None)?.mul(tape.constant(&w))?.sum())
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn discriminator_scores_are_probabilities() {
    let mut d = Discriminator::<f64>::with_width(32, 6, 8, &mut rng(16)).unwrap();
    let mut r = rng(17);
    for _ in 0..5 {
        let scale = r.random_range(0.1..50.0);
        let x = random::<f64>(&[2, 5, 32, 32], &mut r).map(|v| v * scale);
        let y = random::<f64>(&[2, 1, 32, 32], &mut r).map(|v| v * scale);
        let tape = Tape::new();
        let s = d.forward(&tape, tape.constant(&x), tape.constant(&y), Mode::Train).unwrap();
        assert_eq!(s.shape(), vec![2]);
        assert!(s.value().data().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn zero_head_scores_one_half() {
    let mut d = Discriminator::<f64>::with_width(32, 6, 8, &mut rng(18)).unwrap();
    d.head.visit_params_mut(&mut |p| p.tensor.data_mut().fill(0.0));
    let tape = Tape::new();
    let x = tape.constant(&random(&[2, 5, 32, 32], &mut rng(19)));
    let y = tape.constant(&random(&[2, 1, 32, 32], &mut rng(20)));
    let s = d.forward(&tape, x, y, Mode::Eval).unwrap().value();
    assert!(s.data().iter().all(|&p| p == 0.5));
}

#[test]
fn unrelated_maps_change_the_score() {
    for seed in 0..20 {
        let mut d = Discriminator::<f64>::with_width(16, 6, 4, &mut rng(seed)).unwrap();
        let mut r = rng(1000 + seed);
        let tape = Tape::new();
        let x = tape.constant(&random(&[1, 5, 16, 16], &mut r));
        let a = tape.constant(&random(&[1, 1, 16, 16], &mut r));
        let b = tape.constant(&random(&[1, 1, 16, 16], &mut r));
        let sa = d.forward(&tape, x, a, Mode::Eval).unwrap().item();
        let sb = d.forward(&tape, x, b, Mode::Eval).unwrap().item();
        assert_ne!(sa, sb, "seed {seed}");
    }
}

#[test]
fn discriminator_rejects_incongruent_inputs() {
    let mut d = Discriminator::<f64>::with_width(16, 6, 4, &mut rng(21)).unwrap();
    let tape = Tape::new();
    let x = tape.constant(&Tensor::zeros(&[2, 5, 16, 16]));
    let y = tape.constant(&Tensor::zeros(&[2, 1, 8, 8]));
    assert!(matches!(d.forward(&tape, x, y, Mode::Eval), Err(Error::Shape { .. })));
}

fn gate_with(bias: f64) -> GateProjection<f64> {
    let mut g = GateProjection::new(16, &mut rng(22));
    g.linear.weight.tensor.data_mut().fill(0.0);
    g.linear.bias.tensor.data_mut().fill(bias);
    g
}

#[test]
fn near_identity_gate_passes_the_output_through() {
    let gate = gate_with((1.0f64 - 1e-9).atanh());
    let tape = Tape::new();
    let o = tape.constant(&random(&[2, 1, 16, 16], &mut rng(23)));
    let g = tape.constant(&random(&[2, MEMORY_WIDTH], &mut rng(24)));
    let gated = apply_memory_gate(&tape, o, g, &gate).unwrap().value();
    for (a, b) in gated.data().iter().zip(o.value().data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn zero_gate_plane_silences_the_output() {
    let gate = gate_with(0.0);
    let tape = Tape::new();
    let o = tape.constant(&random(&[1, 1, 16, 16], &mut rng(25)));
    let g = tape.constant(&random(&[1, MEMORY_WIDTH], &mut rng(26)));
    let gated = apply_memory_gate(&tape, o, g, &gate).unwrap().value();
    assert!(gated.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gate_gradients_reach_output_and_gate_values() {
    let gate = GateProjection::new(16, &mut rng(27));
    let o = random::<f64>(&[1, 1, 16, 16], &mut rng(28));
    let g = random::<f64>(&[1, MEMORY_WIDTH], &mut rng(29)).map(f64::tanh);
    let w = random::<f64>(&[1, 1, 16, 16], &mut rng(30));
    let tape = Tape::new();
    let (ov, gv) = (tape.var(&o), tape.var(&g));
    let loss = apply_memory_gate(&tape, ov, gv, &gate).unwrap().mul(tape.constant(&w)).unwrap().sum();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.wrt(ov).unwrap().iter().any(|&v| v != 0.0));
    assert!(grads.wrt(gv).unwrap().iter().any(|&v| v != 0.0));
    let report = check_inputs(&[o, g], |tape, v| {
        Ok(apply_memory_gate(tape, v[0], v[1], &gate)?.mul(tape.constant(&w))?.sum())
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn gate_rejects_mismatched_planes() {
    let gate = GateProjection::<f64>::new(16, &mut rng(31));
    let tape = Tape::new();
    let o = tape.constant(&Tensor::zeros(&[1, 1, 32, 32]));
    let g = tape.constant(&Tensor::zeros(&[1, MEMORY_WIDTH]));
    assert!(matches!(apply_memory_gate(&tape, o, g, &gate), Err(Error::Shape { .. })));
}

#[test]
fn heatmaps_are_unit_range_and_sized_to_the_input() {
    let mut g = Generator::<f64>::with_width(32, 5, 8, &mut rng(32)).unwrap();
    let x = random(&[1, 5, 32, 32], &mut rng(33));
    let layers: Vec<usize> = (1..=g.conv_layers()).collect();
    let maps = g.export_activations(&x, &layers).unwrap();
    assert_eq!(maps.len(), layers.len());
    for m in &maps {
        assert_eq!(m.shape(), &[32, 32]);
        assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn zero_weights_on_constant_input_give_a_uniform_heatmap() {
    let mut g = Generator::<f64>::with_width(32, 5, 8, &mut rng(34)).unwrap();
    g.visit_params_mut(&mut |p| {
        if p.is_trainable() {
            p.tensor.data_mut().fill(0.0)
        }
    });
    let x = Tensor::full(&[1, 5, 32, 32], 0.7);
    let n = g.conv_layers();
    for m in g.export_activations(&x, &[2, n - 1]).unwrap() {
        let first = m.data()[0];
        assert!(m.data().iter().all(|&v| v == first));
    }
}

#[test]
fn invalid_layer_ids_are_rejected() {
    let mut g = Generator::<f64>::with_width(16, 5, 4, &mut rng(35)).unwrap();
    let x = Tensor::zeros(&[1, 5, 16, 16]);
    let n = g.conv_layers();
    assert!(matches!(g.export_activations(&x, &[0]), Err(Error::Contract(_))));
    assert!(matches!(g.export_activations(&x, &[n + 1]), Err(Error::Contract(_))));
}
