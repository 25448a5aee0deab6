//! Independent oracles and helpers shared by the integration tests and the
//! acceptance suite. Nothing here calls the code under test for the value
//! being checked.
#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::path::PathBuf;

use bytecnn::encoder::{slice_category, HeaderCategory};
use bytecnn::ingest::{
    parse_layout, read_pcap_all, RawPacket, TsResolution, LINKTYPE_ETHERNET, PROTO_ICMP, PROTO_TCP,
    PROTO_UDP,
};
use bytecnn::network::{loss_and_grad, ops, Head, Network, NetworkConfig, Padding};
use bytecnn::synth::{build_frame, FrameSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// One row of a `<fixture>.expected.csv` written by `dissect.py`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub index: usize,
    pub malformed: bool,
    pub link_len: Option<usize>,
    pub net: Option<(usize, usize)>,
    pub trans: Option<(usize, usize)>,
    pub src: Option<String>,
    pub dst: Option<String>,
    pub ports: Option<(u16, u16)>,
    pub proto: Option<u8>,
}

pub fn expected(name: &str) -> Vec<Expected> {
    let text = std::fs::read_to_string(fixture(&format!("{name}.expected.csv"))).unwrap();
    let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
    let num = |s: &str| (!s.is_empty()).then(|| s.parse::<usize>().unwrap());
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 12, "{line}");
            Expected {
                index: f[0].parse().unwrap(),
                malformed: f[1] == "malformed",
                link_len: num(f[2]),
                net: num(f[3]).zip(num(f[4])),
                trans: num(f[5]).zip(num(f[6])),
                src: opt(f[7]),
                dst: opt(f[8]),
                ports: num(f[9]).zip(num(f[10])).map(|(a, b)| (a as u16, b as u16)),
                proto: num(f[11]).map(|p| p as u8),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- captures

/// Generator-side truth for one random packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrueTuple {
    pub src: (Ipv4Addr, u16),
    pub dst: (Ipv4Addr, u16),
    pub proto: u8,
}

/// Random capture over a small host/port pool so tuples repeat in both
/// directions. Timestamps collide often. About 5% of frames are ARP and
/// about 3% are truncated mid-IP-header; those carry `None`.
pub fn random_capture(n: usize, seed: u64) -> Vec<(RawPacket, Option<TrueTuple>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hosts: Vec<Ipv4Addr> = (1..=6).map(|i| Ipv4Addr::new(10, 0, 0, i)).collect();
    let ports = [53u16, 80, 1000, 1001];
    (0..n)
        .map(|_| {
            let ts_sec = 100 + rng.gen_range(0..20);
            let ts_frac = rng.gen_range(0..3) * 1000;
            let roll: f64 = rng.gen();
            let pkt = |data: Vec<u8>| RawPacket {
                ts_sec,
                ts_frac,
                resolution: TsResolution::Micro,
                orig_len: data.len() as u32,
                link_type: LINKTYPE_ETHERNET,
                data,
            };
            if roll < 0.05 {
                let mut d = vec![0u8; 42];
                d[12] = 0x08;
                d[13] = 0x06;
                return (pkt(d), None);
            }
            let proto = [PROTO_TCP, PROTO_UDP, PROTO_UDP, PROTO_ICMP][rng.gen_range(0..4)];
            let src = (
                hosts[rng.gen_range(0..hosts.len())],
                ports[rng.gen_range(0..4)],
            );
            let dst = (
                hosts[rng.gen_range(0..hosts.len())],
                ports[rng.gen_range(0..4)],
            );
            let payload_len = rng.gen_range(0..40);
            let mut data = build_frame(&FrameSpec {
                src_mac: [2, 0, 0, 0, 0, 1],
                dst_mac: [2, 0, 0, 0, 0, 2],
                src_ip: src.0,
                dst_ip: dst.0,
                src_port: src.1,
                dst_port: dst.1,
                proto,
                ip_id: rng.gen(),
                tcp_seq: rng.gen(),
                payload: (0..payload_len).map(|_| rng.gen()).collect(),
            });
            if roll < 0.08 {
                data.truncate(14 + 10);
                return (pkt(data), None);
            }
            let (src, dst) = if proto == PROTO_ICMP {
                ((src.0, 0), (dst.0, 0))
            } else {
                (src, dst)
            };
            (pkt(data), Some(TrueTuple { src, dst, proto }))
        })
        .collect()
}

/// O(n²) grouping. Each tupled packet joins the group of the earliest
/// earlier packet that `same` relates it to; groups are listed by first
/// member and sorted by (timestamp, file index) inside.
pub fn brute_force_groups(
    capture: &[(RawPacket, Option<TrueTuple>)],
    same: impl Fn(&TrueTuple, &TrueTuple) -> bool,
) -> Vec<Vec<usize>> {
    let mut root: Vec<Option<usize>> = vec![None; capture.len()];
    for i in 0..capture.len() {
        let Some(ti) = &capture[i].1 else { continue };
        root[i] = Some(i);
        for j in 0..i {
            if let Some(tj) = &capture[j].1 {
                if same(ti, tj) {
                    root[i] = root[j];
                    break;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..capture.len() {
        if root[i] == Some(i) {
            let mut g: Vec<usize> = (i..capture.len()).filter(|&k| root[k] == Some(i)).collect();
            g.sort_by_key(|&k| (capture[k].0.timestamp_nanos(), k));
            groups.push(g);
        }
    }
    groups
}

pub fn same_flow(a: &TrueTuple, b: &TrueTuple) -> bool {
    a == b
}

pub fn same_session(a: &TrueTuple, b: &TrueTuple) -> bool {
    a == b || (a.proto == b.proto && a.src == b.dst && a.dst == b.src)
}

// ---------------------------------------------------------------- kernels

/// Naive convolution: materializes the zero-padded input and loops over
/// every tap. Same-padding puts the extra pad element on the right.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    channels: usize,
    len: usize,
    weights: &[f64],
    bias: &[f64],
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Vec<f64> {
    let filters = bias.len();
    let (out_len, pad_left) = match padding {
        Padding::Valid => ((len - kernel) / stride + 1, 0),
        Padding::Same => {
            let out = len.div_ceil(stride);
            let needed = (out - 1) * stride + kernel;
            let total = needed.saturating_sub(len);
            (out, total / 2)
        }
    };
    let padded_len = len + 2 * kernel + pad_left;
    let mut padded = vec![0.0; channels * padded_len];
    for c in 0..channels {
        for t in 0..len {
            padded[c * padded_len + pad_left + t] = input[c * len + t];
        }
    }
    let mut out = vec![0.0; filters * out_len];
    for f in 0..filters {
        for t in 0..out_len {
            let mut acc = bias[f];
            for c in 0..channels {
                for k in 0..kernel {
                    acc += weights[(f * channels + c) * kernel + k]
                        * padded[c * padded_len + t * stride + k];
                }
            }
            out[f * out_len + t] = acc;
        }
    }
    out
}

pub fn naive_dense(input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(j, b)| {
            b + (0..n_in)
                .map(|i| weights[j * n_in + i] * input[i])
                .sum::<f64>()
        })
        .collect()
}

pub fn naive_pool(input: &[f64], channels: usize, len: usize, pool: usize) -> Vec<f64> {
    let out_len = len.div_ceil(pool);
    let mut out = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for w in 0..out_len {
            let lo = w * pool;
            let hi = (lo + pool).min(len);
            out.push(
                input[c * len + lo..c * len + hi]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---------------------------------------------------------- gradient checks

pub const FD_STEP: f64 = 1e-5;

/// Central difference of `f` at `x` in every coordinate.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// ‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12).
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / (norm(analytic) + norm(numeric)).max(1e-12)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub layer: &'static str,
    pub config: usize,
    pub rel_error: f64,
}

/// conv1d: loss = Σ out·R, gradients for input, weights and bias.
pub fn check_conv(rng: &mut ChaCha8Rng, config: usize) -> GradCheck {
    let channels = rng.gen_range(1..4);
    let kernel = 5;
    let len = 32;
    let stride = rng.gen_range(1..4);
    let filters = rng.gen_range(1..4);
    let padding = if rng.gen_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    };
    let g = ops::ConvGeom::new(channels, len, filters, kernel, stride, padding).unwrap();
    let x = uniform(rng, g.input_size(), -1.0, 1.0);
    let w = uniform(rng, g.weight_len(), -1.0, 1.0);
    let b = uniform(rng, filters, -1.0, 1.0);
    let r = uniform(rng, g.output_size(), -1.0, 1.0);
    let loss = |x: &[f64], w: &[f64], b: &[f64]| {
        let mut out = vec![0.0; g.output_size()];
        ops::conv1d_forward(&g, x, w, b, &mut out).unwrap();
        out.iter().zip(&r).map(|(o, r)| o * r).sum::<f64>()
    };
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let mut gx = vec![0.0; x.len()];
    ops::conv1d_backward(&g, &x, &w, &r, &mut gw, &mut gb, Some(&mut gx));
    let nx = numeric_grad(&x, |x| loss(x, &w, &b));
    let nw = numeric_grad(&w, |w| loss(&x, w, &b));
    let nb = numeric_grad(&b, |b| loss(&x, &w, b));
    let analytic: Vec<f64> = [gx, gw, gb].concat();
    let numeric: Vec<f64> = [nx, nw, nb].concat();
    GradCheck {
        layer: "conv",
        config,
        rel_error: rel_error(&analytic, &numeric),
    }
}

/// ReLU followed by max-pool (pool 2): loss = Σ pool(relu(x))·R.
pub fn check_pool(rng: &mut ChaCha8Rng, config: usize) -> GradCheck {
    let channels = rng.gen_range(1..4);
    let len = 32 - rng.gen_range(0..2); // odd lengths exercise the partial window
    let pool = 2;
    let out_len = ops::pool_out_len(len, pool);
    // Distinct values spaced well beyond the FD step, none near the ReLU kink,
    // keep argmax and the activation pattern stable.
    let mut x: Vec<f64> = (0..channels * len)
        .map(|i| i as f64 * 0.01 - 0.305)
        .collect();
    for i in (1..x.len()).rev() {
        x.swap(i, rng.gen_range(0..=i));
    }
    let r = uniform(rng, channels * out_len, -1.0, 1.0);
    let loss = |x: &[f64]| {
        let mut a = x.to_vec();
        ops::relu_inplace(&mut a);
        let mut out = vec![0.0; channels * out_len];
        let mut am = vec![0; channels * out_len];
        ops::maxpool_forward(&a, channels, len, pool, &mut out, &mut am).unwrap();
        out.iter().zip(&r).map(|(o, r)| o * r).sum::<f64>()
    };
    let mut a = x.clone();
    ops::relu_inplace(&mut a);
    let mut out = vec![0.0; channels * out_len];
    let mut am = vec![0; channels * out_len];
    ops::maxpool_forward(&a, channels, len, pool, &mut out, &mut am).unwrap();
    let mut gx = vec![0.0; x.len()];
    ops::maxpool_backward(&r, &am, &mut gx);
    ops::relu_backward(&x, &mut gx);
    GradCheck {
        layer: "relu+pool",
        config,
        rel_error: rel_error(&gx, &numeric_grad(&x, loss)),
    }
}

/// Dense: loss = Σ out·R.
pub fn check_dense(rng: &mut ChaCha8Rng, config: usize) -> GradCheck {
    let n_in = rng.gen_range(4..40);
    let n_out = rng.gen_range(2..6);
    let x = uniform(rng, n_in, -1.0, 1.0);
    let w = uniform(rng, n_in * n_out, -1.0, 1.0);
    let b = uniform(rng, n_out, -1.0, 1.0);
    let r = uniform(rng, n_out, -1.0, 1.0);
    let loss = |x: &[f64], w: &[f64], b: &[f64]| {
        let mut out = vec![0.0; n_out];
        ops::dense_forward(x, w, b, &mut out).unwrap();
        out.iter().zip(&r).map(|(o, r)| o * r).sum::<f64>()
    };
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; n_out];
    let mut gx = vec![0.0; n_in];
    ops::dense_backward(&x, &w, &r, &mut gw, &mut gb, &mut gx);
    let analytic = [gx, gw, gb].concat();
    let numeric = [
        numeric_grad(&x, |x| loss(x, &w, &b)),
        numeric_grad(&w, |w| loss(&x, w, &b)),
        numeric_grad(&b, |b| loss(&x, &w, b)),
    ]
    .concat();
    GradCheck {
        layer: "dense",
        config,
        rel_error: rel_error(&analytic, &numeric),
    }
}

/// Loss head gradient with respect to the scores.
pub fn check_loss(rng: &mut ChaCha8Rng, config: usize) -> GradCheck {
    let n = rng.gen_range(2..6);
    let head = if config.is_multiple_of(2) {
        Head::SoftmaxCrossEntropy
    } else {
        Head::SigmoidPerClass
    };
    let s = uniform(rng, n, -4.0, 4.0);
    let y = rng.gen_range(0..n);
    let (_, g) = loss_and_grad(&s, y, head).unwrap();
    let ng = numeric_grad(&s, |s| loss_and_grad(s, y, head).unwrap().0);
    GradCheck {
        layer: "loss",
        config,
        rel_error: rel_error(&g, &ng),
    }
}

fn small_config(rng: &mut ChaCha8Rng) -> NetworkConfig {
    NetworkConfig {
        input_len: 32,
        conv1_filters: rng.gen_range(2..5),
        conv2_filters: rng.gen_range(2..5),
        kernel: 5,
        stride: rng.gen_range(1..3),
        pool: 2,
        dropout_rate: 0.5,
        n_classes: rng.gen_range(2..5),
        head: if rng.gen_bool(0.5) {
            Head::SoftmaxCrossEntropy
        } else {
            Head::SigmoidPerClass
        },
        padding: if rng.gen_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        },
    }
}

/// Whole network, loss through the head, with dropout either off or a
/// fixed mask (same seed for every perturbed evaluation).
pub fn check_network(rng: &mut ChaCha8Rng, config: usize, with_dropout: bool) -> GradCheck {
    let cfg = small_config(rng);
    // Nonzero biases: with the zero init, channels that pool to all zeros
    // put conv2 pre-activations exactly on the ReLU kink.
    let params: Vec<f64> = {
        let base = Network::new(cfg, rng.gen()).unwrap();
        base.params()
            .iter()
            .map(|p| p + rng.gen_range(-0.1..0.1))
            .collect()
    };
    let net = Network::from_params(cfg, params, 0).unwrap();
    let x = uniform(rng, cfg.input_len, 0.0, 1.0);
    let y = rng.gen_range(0..cfg.n_classes);
    let mask_seed = with_dropout.then(|| rng.gen::<u64>());
    let cache = net.forward(&x, mask_seed).unwrap();
    let (_, sg) = loss_and_grad(&cache.scores, y, cfg.head).unwrap();
    let mut grads = vec![0.0; net.param_count()];
    net.backward_sample(&cache, &sg, &mut grads).unwrap();
    let numeric = numeric_grad(net.params(), |p| {
        let n = Network::from_params(cfg, p.to_vec(), 0).unwrap();
        let s = n.forward(&x, mask_seed).unwrap().scores;
        loss_and_grad(&s, y, cfg.head).unwrap().0
    });
    GradCheck {
        layer: if with_dropout {
            "network+dropout"
        } else {
            "network"
        },
        config,
        rel_error: rel_error(&grads, &numeric),
    }
}

/// The full gradient suite: `configs` random configurations per layer.
pub fn gradient_suite(configs: usize, seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..configs {
        out.push(check_conv(&mut rng, i));
        out.push(check_pool(&mut rng, i));
        out.push(check_dense(&mut rng, i));
        out.push(check_loss(&mut rng, i));
        out.push(check_network(&mut rng, i, false));
        out.push(check_network(&mut rng, i, true));
    }
    out
}

/// Category slice computed from dissector offsets, with the deepest-boundary
/// fallback applied when a layer is absent.
pub fn reference_slice(data: &[u8], e: &Expected, cat: HeaderCategory) -> Vec<u8> {
    let link = e.link_len.unwrap();
    let deepest = e
        .trans
        .map(|(o, l)| o + l)
        .or(e.net.map(|(o, l)| o + l))
        .unwrap_or(link);
    let net_off = e.net.map_or(deepest, |n| n.0);
    let trans_off = e.trans.map_or(deepest, |t| t.0);
    match cat {
        HeaderCategory::AllHeaders => data.to_vec(),
        HeaderCategory::OnlyEth => [&data[..link], &data[trans_off..]].concat(),
        HeaderCategory::WithoutEth => data[net_off..].to_vec(),
        HeaderCategory::NoHeaders => data[trans_off..].to_vec(),
    }
}

/// Checks every parsed packet of a fixture against `reference_slice` and the
/// complementarity identity; returns how many packets were checked.
pub fn slice_check(name: &str) -> usize {
    let packets = read_pcap_all(fixture(&format!("{name}.pcap"))).unwrap();
    let mut checked = 0;
    for (p, e) in packets.iter().zip(expected(name)) {
        if e.malformed {
            continue;
        }
        let layout = parse_layout(p).unwrap();
        let lens: Vec<usize> = HeaderCategory::ALL
            .iter()
            .map(|&cat| {
                let got = slice_category(&p.data, &layout, cat);
                assert_eq!(
                    got,
                    reference_slice(&p.data, &e, cat),
                    "{name}#{} {cat}",
                    e.index
                );
                got.len()
            })
            .collect();
        if e.trans.is_some() {
            // |OnlyEth| + |WithoutEth| = |AllHeaders| + |NoHeaders|
            assert_eq!(lens[1] + lens[2], lens[0] + lens[3], "{name}#{}", e.index);
        }
        checked += 1;
    }
    checked
}
