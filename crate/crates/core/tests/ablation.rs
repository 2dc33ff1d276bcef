use fusionsort::network::{parameter_count, Ablation, Modality, Network, NetworkConfig};
use fusionsort::ops::Mode;
use fusionsort::{Tape, Tensor};

fn config(flags: (bool, bool, bool)) -> NetworkConfig {
    let mut c = NetworkConfig::new(Modality::Fused, 3, Ablation::Baseline, 0);
    (c.use_comprehensive_attention, c.use_mamba, c.use_weighted_fusion) = flags;
    c
}

fn valid_flag_sets() -> Vec<(bool, bool, bool)> {
    let mut out = Vec::new();
    for ca in [false, true] {
        for mamba in [false, true] {
            for wf in [false, true] {
                if !wf || ca || mamba {
                    out.push((ca, mamba, wf));
                }
            }
        }
    }
    out
}

/// Parameter count by hand for the default widths 16/32, six input
/// channels and three classes.
fn hand_count((ca, mamba, wf): (bool, bool, bool)) -> usize {
    let conv_bn = |cin: usize, cout: usize| cin * cout * 9 + 2 * cout;
    let pointwise = |cin: usize, cout: usize| cin * cout + cout;
    let (w0, w1, k) = (16, 32, 3);
    let mut n = conv_bn(6, w0) + conv_bn(w0, w1) + conv_bn(w1, w0) + pointwise(2 * w0, w0) + 2 * w0 + pointwise(w0, k);
    if ca {
        let red = w0 / 4;
        n += pointwise(w0, red) + 2 * red + 2 * pointwise(red, w0) + pointwise(w0, w0);
    }
    if mamba {
        let (di, s, kw, r) = (2 * w0, 4, 3, 1);
        n += 2 * w0 + w0 * 2 * di + di * kw + di + di * (r + 2 * s) + r * di + di + di * s + di + di * w0;
        n += pointwise(w0, w0);
    }
    if wf {
        n += 2;
    }
    n
}

#[test]
fn parameter_counts_match_hand_arithmetic() {
    for flags in valid_flag_sets() {
        let (_, store) = Network::build(config(flags)).unwrap();
        assert_eq!(parameter_count(&store), hand_count(flags), "{flags:?}");
    }
    let (_, store) = Network::build(config((false, false, false))).unwrap();
    assert_eq!(parameter_count(&store), 10_819);
}

#[test]
fn adding_a_module_strictly_adds_parameters() {
    let sets = valid_flag_sets();
    let counts: Vec<usize> = sets
        .iter()
        .map(|&f| parameter_count(&Network::build(config(f)).unwrap().1))
        .collect();
    let le = |a: bool, b: bool| !a || b;
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            let subset = le(a.0, b.0) && le(a.1, b.1) && le(a.2, b.2) && a != b;
            if subset {
                assert!(counts[i] < counts[j], "{a:?} {} vs {b:?} {}", counts[i], counts[j]);
            }
        }
    }
}

#[test]
fn disabled_modules_record_no_ops() {
    let x = Tensor::new(&[1, 6, 8, 8], (0..384).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    for ablation in Ablation::ALL {
        let (ca, mamba, wf) = ablation.flags();
        let cfg = NetworkConfig::new(Modality::Fused, 3, ablation, 1);
        let (net, store) = Network::build(cfg).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = net.forward(&mut tape, &store, xv, Mode::Eval).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3, 8, 8]);
        let coord_ops = tape.count_ops_in_scope("decoder.cab.coord");
        let mamba_ops = tape.count_ops_in_scope("decoder.cab.mamba");
        let softmax_ops = tape
            .ops()
            .filter(|(op, scope)| *op == "softmax" && scope.starts_with("decoder.cab.fusion"))
            .count();
        assert_eq!(coord_ops > 0, ca, "{ablation:?}");
        assert_eq!(mamba_ops > 0, mamba, "{ablation:?}");
        assert_eq!(tape.count_ops_named("ssm_scan") > 0, mamba, "{ablation:?}");
        assert_eq!(softmax_ops > 0, wf, "{ablation:?}");
        assert!(tape.count_ops_in_scope("decoder.cab.norm") > 0);
    }
}

#[test]
fn weighted_fusion_without_a_path_is_rejected() {
    assert!(config((false, false, true)).validate().is_err());
    assert!(Network::build(config((false, false, true))).is_err());
}
