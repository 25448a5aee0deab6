mod common;

use bytecnn::encoder::{ByteSample, HeaderCategory, SampleMeta};
use bytecnn::network::{
    evaluate, loss_and_grad, ops, probabilities, read_model, train_on, write_model, Head, Network,
    NetworkConfig, NetworkError, OptimizerKind, Padding, TrainConfig, TrainError,
};
use bytecnn::splitter::Representation;
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let channels = rng.gen_range(1..5);
        let len = rng.gen_range(8..80);
        let kernel = rng.gen_range(1..=len.min(12));
        let stride = rng.gen_range(1..5);
        let filters = rng.gen_range(1..5);
        let padding = if rng.gen_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let g = ops::ConvGeom::new(channels, len, filters, kernel, stride, padding).unwrap();
        let x = uniform(&mut rng, channels * len, -1.0, 1.0);
        let w = uniform(&mut rng, g.weight_len(), -1.0, 1.0);
        let b = uniform(&mut rng, filters, -1.0, 1.0);
        let mut out = vec![0.0; g.output_size()];
        ops::conv1d_forward(&g, &x, &w, &b, &mut out).unwrap();
        let oracle = naive_conv(&x, channels, len, &w, &b, kernel, stride, padding);
        assert!(max_abs_diff(&out, &oracle) < 1e-9, "{g:?}");
    }
}

#[test]
fn dense_and_pool_match_naive_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n_in = rng.gen_range(1..200);
        let n_out = rng.gen_range(1..8);
        let x = uniform(&mut rng, n_in, -1.0, 1.0);
        let w = uniform(&mut rng, n_in * n_out, -1.0, 1.0);
        let b = uniform(&mut rng, n_out, -1.0, 1.0);
        let mut out = vec![0.0; n_out];
        ops::dense_forward(&x, &w, &b, &mut out).unwrap();
        assert!(max_abs_diff(&out, &naive_dense(&x, &w, &b)) < 1e-9);

        let channels = rng.gen_range(1..4);
        let len = rng.gen_range(1..50);
        let pool = rng.gen_range(1..7);
        let x = uniform(&mut rng, channels * len, -1.0, 1.0);
        let out_len = ops::pool_out_len(len, pool);
        let mut out = vec![0.0; channels * out_len];
        let mut am = vec![0; out.len()];
        ops::maxpool_forward(&x, channels, len, pool, &mut out, &mut am).unwrap();
        assert_eq!(out, naive_pool(&x, channels, len, pool));
    }
}

#[test]
fn pool_ties_take_first_index() {
    let x = [1.0, 3.0, 3.0, 0.0, 2.0];
    let mut out = [0.0; 2];
    let mut am = [0; 2];
    ops::maxpool_forward(&x, 1, 5, 3, &mut out, &mut am).unwrap();
    assert_eq!(out, [3.0, 2.0]);
    assert_eq!(am, [1, 4]);
}

#[test]
fn gradient_suite_within_tolerance() {
    for c in gradient_suite(20, 2024) {
        assert!(c.rel_error < 1e-4, "{c:?}");
    }
}

fn sample(bytes: Vec<u8>, label: usize) -> ByteSample {
    ByteSample {
        content_len: bytes.len(),
        bytes,
        label,
        meta: SampleMeta {
            scenario: "t".into(),
            representation: Representation::Packet,
            category: HeaderCategory::AllHeaders,
            unit_key: "#0".into(),
            truncated_bytes: 0,
        },
    }
}

fn small_net_config() -> NetworkConfig {
    NetworkConfig {
        input_len: 64,
        conv1_filters: 4,
        conv2_filters: 4,
        kernel: 8,
        stride: 2,
        pool: 2,
        dropout_rate: 0.5,
        n_classes: 2,
        head: Head::SoftmaxCrossEntropy,
        padding: Padding::Same,
    }
}

/// Class 1 samples carry 0xAB at byte 5, class 0 samples 0x11.
fn toy_samples(n: usize, seed: u64) -> Vec<ByteSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut b: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
            b[5] = if label == 1 { 0xAB } else { 0x11 };
            b[6] = b[5];
            sample(b, label)
        })
        .collect()
}

#[test]
fn duplicated_batch_gradient_equals_single_sample() {
    let net = Network::new(small_net_config(), 3).unwrap();
    let s = toy_samples(1, 9).remove(0);
    let x = s.values();
    let one = net.forward_batch(std::slice::from_ref(&x), &[s.label], None).unwrap();
    let g1 = net.backward(&one).unwrap();
    let many = net.forward_batch(&vec![x; 7], &[s.label; 7], None).unwrap();
    let g7 = net.backward(&many).unwrap();
    assert!(max_abs_diff(&g1, &g7) < 1e-12);
}

#[test]
fn zero_signal_gives_zero_gradient() {
    let net = Network::new(small_net_config(), 3).unwrap();
    let x = toy_samples(1, 1)[0].values();
    let mut fwd = net.forward_batch(&[x], &[0], None).unwrap();
    fwd.set_score_grads(vec![vec![0.0, 0.0]]);
    assert!(net.backward(&fwd).unwrap().iter().all(|g| *g == 0.0));
}

#[test]
fn backward_after_update_is_stale() {
    let mut net = Network::new(small_net_config(), 3).unwrap();
    let x = toy_samples(1, 1)[0].values();
    let fwd = net.forward_batch(&[x], &[0], None).unwrap();
    net.params_mut()[0] += 1.0;
    assert!(matches!(net.backward(&fwd), Err(NetworkError::StaleCache)));
}

fn quick_train(seed: u64) -> (Network, bytecnn::network::TrainHistory, Vec<ByteSample>) {
    let data = toy_samples(120, 5);
    let (tr, va) = data.split_at(96);
    let tr: Vec<&ByteSample> = tr.iter().collect();
    let va: Vec<&ByteSample> = va.iter().collect();
    let tc = TrainConfig {
        epochs: 6,
        batch_size: 16,
        optimizer: OptimizerKind::adam(1e-2),
        seed,
        stop_at_perfect: false,
    };
    let (net, h) = train_on(&tr, &va, &small_net_config(), &tc).unwrap();
    (net, h, data)
}

#[test]
fn training_is_deterministic() {
    let (a, ha, _) = quick_train(7);
    let (b, hb, _) = quick_train(7);
    assert_eq!(ha, hb);
    assert_eq!(a.params(), b.params());
    let (c, _, _) = quick_train(8);
    assert_ne!(a.params(), c.params());
}

#[test]
fn checkpoint_is_best_validation_epoch() {
    let (net, h, data) = quick_train(7);
    let best = h.best_epoch.unwrap();
    let max = h.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    assert_eq!(h.epochs[best].val_accuracy, max);
    // Earliest epoch achieving the maximum.
    assert!(h.epochs[..best].iter().all(|e| e.val_accuracy < max));
    let va: Vec<&ByteSample> = data[96..].iter().collect();
    let (_, acc, _) = evaluate(&net, &va).unwrap();
    assert_eq!(acc, max);
}

#[test]
fn stops_once_validation_is_perfect() {
    let data = toy_samples(120, 5);
    let tr: Vec<&ByteSample> = data[..96].iter().collect();
    let va: Vec<&ByteSample> = data[96..].iter().collect();
    let tc = TrainConfig {
        epochs: 40,
        batch_size: 16,
        optimizer: OptimizerKind::adam(1e-2),
        seed: 1,
        stop_at_perfect: true,
    };
    let (_, h) = train_on(&tr, &va, &small_net_config(), &tc).unwrap();
    let last = h.epochs.last().unwrap();
    assert_eq!(last.val_accuracy, 1.0);
    assert!(h.stopped_early);
    assert!(h.epochs[..h.epochs.len() - 1]
        .iter()
        .all(|e| e.val_accuracy < 1.0));
}

#[test]
fn huge_learning_rate_diverges_with_history() {
    let data = toy_samples(64, 5);
    let tr: Vec<&ByteSample> = data[..48].iter().collect();
    let va: Vec<&ByteSample> = data[48..].iter().collect();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 8,
        optimizer: OptimizerKind::Sgd {
            lr: 1e200,
            momentum: 0.0,
        },
        seed: 1,
        stop_at_perfect: false,
    };
    match train_on(&tr, &va, &small_net_config(), &tc) {
        Err(TrainError::DivergedLoss { epoch, history }) => {
            assert_eq!(history.epochs.len(), epoch - 1);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn zero_epochs_rejected() {
    let data = toy_samples(20, 5);
    let tr: Vec<&ByteSample> = data[..10].iter().collect();
    let tc = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    assert!(matches!(
        train_on(&tr, &tr, &small_net_config(), &tc),
        Err(TrainError::InvalidConfig(_))
    ));
}

#[test]
fn save_load_preserves_predictions_bit_exactly() {
    let (net, _, data) = quick_train(3);
    let mut buf = Vec::new();
    write_model(&net, "seed=3\n", &mut buf).unwrap();
    let (back, meta) = read_model(buf.as_slice()).unwrap();
    assert_eq!(meta, "seed=3\n");
    assert_eq!(back.params(), net.params());
    for s in &data {
        let a = net.predict(s).unwrap();
        let b = back.predict(s).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn corrupt_model_file_rejected() {
    let (net, _, _) = quick_train(3);
    let mut buf = Vec::new();
    write_model(&net, "", &mut buf).unwrap();
    let mid = buf.len() / 2;
    buf[mid] ^= 0x40;
    assert!(matches!(
        read_model(buf.as_slice()),
        Err(NetworkError::CorruptModelFile(_))
    ));
    assert!(read_model(&buf[..buf.len() - 9]).is_err());
}

#[test]
fn default_geometry() {
    let g = NetworkConfig::default().geometry().unwrap();
    assert_eq!(g.param_breakdown(), [1560, 49184, 1474]);
    assert_eq!(g.param_count(), 52218);
    assert_eq!(
        (g.conv1.out_len, g.pool_len, g.conv2.out_len, g.flat_len),
        (342, 69, 23, 736)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_outputs_form_a_simplex(scores in prop::collection::vec(-50.0f64..50.0, 2..8)) {
        let p = probabilities(&scores, Head::SoftmaxCrossEntropy);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_outputs_in_unit_interval(scores in prop::collection::vec(-50.0f64..50.0, 2..8)) {
        let p = probabilities(&scores, Head::SigmoidPerClass);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn loss_non_negative(scores in prop::collection::vec(-30.0f64..30.0, 2..6), y in 0usize..6) {
        let y = y % scores.len();
        for head in [Head::SoftmaxCrossEntropy, Head::SigmoidPerClass] {
            let (l, g) = loss_and_grad(&scores, y, head).unwrap();
            prop_assert!(l >= 0.0 && l.is_finite());
            prop_assert!(g.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn network_probabilities_simplex(bytes in prop::collection::vec(any::<u8>(), 64), seed in any::<u64>()) {
        let net = Network::new(small_net_config(), seed).unwrap();
        let p = net.predict(&sample(bytes, 0)).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eval_mode_is_deterministic(bytes in prop::collection::vec(any::<u8>(), 64)) {
        let net = Network::new(small_net_config(), 1).unwrap();
        let s = sample(bytes, 0);
        prop_assert_eq!(net.predict(&s).unwrap(), net.predict(&s).unwrap());
    }
}
