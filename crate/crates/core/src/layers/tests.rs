use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backend::HeParams;
use crate::engine;
use crate::model::{reference_trace_with, ApproxRelu, SumOrder, Conv, ConvKind, Fc, ModelSpec, Tensor};
use crate::packing;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

fn conv2d(rng: &mut ChaCha8Rng, ch_in: usize, ch_out: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv(Conv {
        kind: ConvKind::TwoD,
        ch_in,
        ch_out,
        kernel,
        stride,
        padding: 0,
        weights: rand_vec(rng, ch_out * ch_in * kernel * kernel),
        bias: rand_vec(rng, ch_out),
    })
}

fn dense(rng: &mut ChaCha8Rng, dat_in: usize, dat_out: usize) -> LayerSpec {
    LayerSpec::Fc(Fc {
        dat_in,
        dat_out,
        weights: rand_vec(rng, dat_in * dat_out),
        bias: rand_vec(rng, dat_out),
    })
}

fn params(depth: u32) -> HeParams {
    HeParams::new(4096, depth).unwrap()
}

/// Runs `m` on `samples` in one batch and checks every layer's logical
/// output equals the plaintext trace exactly.
fn check_trace(m: &ModelSpec, samples: usize, seed: u64) {
    let p = params(16);
    let plan = packing::footprint(m, &p, 1).unwrap();
    let inputs = engine::random_inputs(m, samples, seed);
    let ev = Evaluator::new(p).unwrap();
    let packed = engine::encrypt_samples(&ev, m, &plan, &inputs).unwrap();
    let result = engine::infer_traced(m, packed, &p, &plan).unwrap();
    let trace = result.trace.unwrap();
    for (s, input) in inputs.iter().enumerate() {
        let expected = reference_trace_with(m, input, SumOrder::Diagonal).unwrap();
        for (layer, (he, want)) in trace.iter().zip(&expected).enumerate() {
            assert_eq!(he[s], want.data, "layer {layer} sample {s}");
        }
        assert_eq!(result.outputs[s], expected.last().unwrap().data);
    }
}

fn model(input: Shape, layers: Vec<LayerSpec>) -> ModelSpec {
    ModelSpec {
        name: "t".into(),
        input,
        layers,
    }
}

#[test]
fn conv_matches_oracle_at_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = model(
        Shape::new(2, 9, 9),
        vec![conv2d(&mut rng, 2, 3, 3, 1), LayerSpec::Flatten, dense(&mut rng, 147, 4)],
    );
    check_trace(&m, 3, 10);
}

#[test]
fn layers_match_oracle_at_interval_two_and_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = model(
        Shape::new(1, 16, 16),
        vec![
            conv2d(&mut rng, 1, 2, 2, 2),
            LayerSpec::Square,
            LayerSpec::AvgPool2d { kernel: 2 },
            conv2d(&mut rng, 2, 2, 2, 1),
            LayerSpec::ApproxRelu(ApproxRelu::default()),
            LayerSpec::Flatten,
            dense(&mut rng, 2 * 3 * 3, 5),
        ],
    );
    check_trace(&m, 2, 11);
}

#[test]
fn layers_match_oracle_at_interval_three_and_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = model(
        Shape::new(1, 24, 24),
        vec![
            conv2d(&mut rng, 1, 2, 3, 3),
            LayerSpec::Square,
            LayerSpec::AvgPool2d { kernel: 2 },
            LayerSpec::Flatten,
            dense(&mut rng, 32, 6),
            LayerSpec::Square,
            dense(&mut rng, 6, 3),
        ],
    );
    check_trace(&m, 2, 12);
}

#[test]
fn row_interval_flatten_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = model(
        Shape::new(1, 20, 20),
        vec![conv2d(&mut rng, 1, 3, 4, 4), LayerSpec::Flatten, dense(&mut rng, 75, 7)],
    );
    let layout = engine::layout_trace(&m, &packing::footprint(&m, &params(8), 1).unwrap()).unwrap();
    assert_eq!(layout[1].flatten_plan().extraction, Some(Extraction::RowInterval));
    check_trace(&m, 3, 13);
}

#[test]
fn conv1d_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c1 = LayerSpec::Conv(Conv {
        kind: ConvKind::OneD,
        ch_in: 1,
        ch_out: 2,
        kernel: 3,
        stride: 2,
        padding: 0,
        weights: rand_vec(&mut rng, 6),
        bias: rand_vec(&mut rng, 2),
    });
    let m = model(Shape::new(1, 1, 31), vec![c1, LayerSpec::Square, LayerSpec::Flatten, dense(&mut rng, 30, 4)]);
    check_trace(&m, 4, 14);
}

#[test]
fn fc_chain_with_non_divisible_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = model(
        Shape::new(1, 1, 23),
        vec![
            LayerSpec::Flatten,
            dense(&mut rng, 23, 7),
            LayerSpec::Square,
            dense(&mut rng, 7, 9),
            dense(&mut rng, 9, 2),
        ],
    );
    check_trace(&m, 5, 15);
}

#[test]
fn fc_diagonal_layout() {
    // W = [[1, 2, 3], [4, 5, 6]]: m = 2, n = 3, W_vec = 4.
    let layer = Fc {
        dat_in: 3,
        dat_out: 2,
        weights: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        bias: vec![0.0, 0.0],
    };
    let g = FcGeometry::new(3, 2);
    assert_eq!((g.folds, g.w_vec), (2, 4));
    let d = fc_diagonals(&layer, 1.0);
    assert_eq!(d[0], vec![1.0, 5.0, 3.0, 0.0]);
    assert_eq!(d[1], vec![2.0, 6.0, 0.0, 4.0]);
    assert_eq!(fc_diagonals(&layer, 0.5)[0], vec![0.5, 2.5, 1.5, 0.0]);
}

#[test]
fn fc_counts_scale_with_output_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let LayerSpec::Fc(f) = dense(&mut rng, 64, 10) else { unreachable!() };
    let layout = LayoutState {
        flattened: true,
        ..LayoutState::input(Shape::new(1, 1, 64), vec![0])
    };
    let c = layout.expected_counts(&LayerSpec::Fc(f.clone()));
    assert_eq!(c.pt_mults, 20);
    assert_eq!(c.rotations, 20 + 7);
    assert_eq!(c.adds, 20 + 7 + 1);

    let mut ev = Evaluator::new(params(3)).unwrap();
    let ct = ev.encrypt(&ev.encode(&rand_vec(&mut rng, 64)).unwrap()).unwrap();
    let state = CipherState::new(vec![ct], layout).unwrap();
    let out = fc(&mut ev, &state, &f).unwrap();
    assert_eq!(ev.counts(), c);
    assert_eq!(out.level(), 2);
}

#[test]
fn conv_counts_follow_kernel_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layer = conv2d(&mut rng, 4, 12, 5, 1);
    let layout = LayoutState::input(Shape::new(4, 12, 12), vec![0]);
    let c = layout.expected_counts(&layer);
    assert_eq!(c.rotations, 100);
    assert_eq!(c.pt_mults, 1200);

    let mut ev = Evaluator::new(params(2)).unwrap();
    let cts = (0..4)
        .map(|_| ev.encrypt(&ev.encode(&rand_vec(&mut rng, 144)).unwrap()).unwrap())
        .collect();
    let state = CipherState::new(cts, layout).unwrap();
    let out = apply(&mut ev, &state, &layer).unwrap();
    assert_eq!(ev.counts(), c);
    assert_eq!(out.cts.len(), 12);
    assert_eq!(out.level(), 1);
}

#[test]
fn flatten_plan_follows_layout() {
    let base = LayoutState::input(Shape::new(4, 8, 8), vec![0]);
    let after_conv = LayoutState {
        interval: 2,
        width: 4,
        height: 4,
        ..base.clone()
    };
    let plan = after_conv.flatten_plan();
    assert_eq!(plan.extraction, Some(Extraction::RowInterval));
    assert!(plan.remove_columns);
    assert_eq!(plan.mults(), 2);

    let after_pool = after_conv.advance(&LayerSpec::AvgPool2d { kernel: 2 }).unwrap();
    assert_eq!(after_pool.flatten_plan().extraction, Some(Extraction::Masked));
    assert_eq!(after_pool.pending, 0.25);

    let squared = after_pool.advance(&LayerSpec::Square).unwrap();
    assert_eq!(squared.pending, 1.0 / 16.0);

    assert_eq!(base.flatten_plan().extraction, None);
    assert_eq!(base.flatten_plan().mults(), 1);

    let one_by_one = LayoutState {
        width: 1,
        height: 1,
        interval: 4,
        ..base
    };
    assert_eq!(one_by_one.flatten_plan().mults(), 0);
}

#[test]
fn pooling_rejects_non_divisible_dims() {
    let layout = LayoutState::input(Shape::new(1, 5, 5), vec![0]);
    assert!(matches!(
        layout.advance(&LayerSpec::AvgPool2d { kernel: 2 }),
        Err(Error::NonDivisibleDims { kernel: 2, width: 5, height: 5 })
    ));
}

#[test]
fn fc_requires_flatten() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layout = LayoutState::input(Shape::new(1, 1, 8), vec![0]);
    assert!(matches!(layout.advance(&dense(&mut rng, 8, 2)), Err(Error::NotFlattened)));
}

#[test]
fn drop_level_reaches_target() {
    let mut ev = Evaluator::new(HeParams::default()).unwrap();
    let cts = (0..3).map(|_| ev.encrypt(&ev.encode(&[1.0, 2.0]).unwrap()).unwrap()).collect();
    let state = CipherState::new(cts, LayoutState::input(Shape::new(3, 1, 2), vec![0])).unwrap();
    let dropped = drop_level(&mut ev, &state, 7).unwrap();
    assert_eq!(dropped.level(), 7);
    assert_eq!(ev.counts().pt_mults, 12);
    assert_eq!(dropped.decrypt(&ev)[0][..2], [1.0, 2.0]);

    let same = drop_level(&mut ev, &dropped, 7).unwrap();
    assert_eq!(same.level(), 7);
    assert_eq!(ev.counts().pt_mults, 12);

    assert!(matches!(
        drop_level(&mut ev, &dropped, 9),
        Err(Error::TargetAboveCurrent { current: 7, target: 9 })
    ));
}

#[test]
fn layers_refuse_exhausted_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ev = Evaluator::new(params(1)).unwrap();
    let ct = ev.encrypt(&ev.encode(&rand_vec(&mut rng, 16)).unwrap()).unwrap();
    let state = CipherState::new(vec![ct], LayoutState::input(Shape::new(1, 4, 4), vec![0])).unwrap();
    let state = apply(&mut ev, &state, &LayerSpec::Square).unwrap();
    assert_eq!(state.level(), 0);
    assert!(matches!(
        apply(&mut ev, &state, &LayerSpec::Square),
        Err(Error::LevelExhausted)
    ));
    assert!(matches!(
        apply(&mut ev, &state, &conv2d(&mut rng, 1, 1, 2, 1)),
        Err(Error::LevelExhausted)
    ));
    assert!(matches!(
        apply(&mut ev, &state, &LayerSpec::ApproxRelu(ApproxRelu::default())),
        Err(Error::LevelExhausted)
    ));
    // Pooling spends no level.
    assert!(apply(&mut ev, &state, &LayerSpec::AvgPool2d { kernel: 2 }).is_ok());
}

#[test]
fn padded_conv_is_rejected_at_runtime() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let LayerSpec::Conv(mut c) = conv2d(&mut rng, 1, 1, 3, 1) else { unreachable!() };
    c.padding = 1;
    let mut ev = Evaluator::new(params(2)).unwrap();
    let ct = ev.encrypt(&ev.encode(&[0.0; 16]).unwrap()).unwrap();
    let state = CipherState::new(vec![ct], LayoutState::input(Shape::new(1, 4, 4), vec![0])).unwrap();
    assert!(matches!(conv(&mut ev, &state, &c), Err(Error::PaddingUnsupported)));
}

#[test]
fn avgpool_leaves_partial_sums_in_gaps() {
    let mut ev = Evaluator::new(params(1)).unwrap();
    let data: Vec<f64> = (0..16).map(f64::from).collect();
    let ct = ev.encrypt(&ev.encode(&data).unwrap()).unwrap();
    let state = CipherState::new(vec![ct], LayoutState::input(Shape::new(1, 4, 4), vec![0])).unwrap();
    let out = avgpool(&mut ev, &state, 2).unwrap();
    let dec = out.decrypt(&ev);
    // Window sums at the valid positions; pending 1/4 turns them into means.
    assert_eq!(dec[0][0], 0.0 + 1.0 + 4.0 + 5.0);
    assert_eq!(dec[0][2], 2.0 + 3.0 + 6.0 + 7.0);
    assert_eq!(out.layout.read_sample(&dec, 0), vec![2.5, 4.5, 10.5, 12.5]);
    assert_eq!(dec[0][1], 1.0 + 2.0 + 5.0 + 6.0);
    assert_eq!(out.level(), 1);
    assert_eq!(ev.counts().rotations, 4);
    assert_eq!(ev.counts().adds, 3);
}

#[test]
fn input_tensor_round_trips_through_layout() {
    let shape = Shape::new(2, 3, 4);
    let t = Tensor::new(shape, (0..24).map(f64::from).collect()).unwrap();
    let p = params(2);
    let m = model(shape, Vec::new());
    let plan = packing::footprint(&m, &p, 1).unwrap();
    let ev = Evaluator::new(p).unwrap();
    let state = engine::encrypt_samples(&ev, &m, &plan, &[t.clone(), t.clone()]).unwrap();
    let dec = state.decrypt(&ev);
    assert_eq!(state.layout.read_sample(&dec, 1), t.data);
}

#[test]
fn summation_orders_agree_to_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (n, out) in [(23, 7), (64, 10), (7, 9), (5, 5), (1, 3)] {
        let LayerSpec::Fc(f) = dense(&mut rng, n, out) else { unreachable!() };
        let x = Tensor::new(Shape::new(1, 1, n), rand_vec(&mut rng, n)).unwrap();
        let layer = LayerSpec::Fc(f);
        let a = crate::model::reference_layer_with(&x, &layer, SumOrder::Natural).unwrap();
        let b = crate::model::reference_layer_with(&x, &layer, SumOrder::Diagonal).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() <= 1e-12, "{n}->{out}: {p} vs {q}");
        }
    }
}
