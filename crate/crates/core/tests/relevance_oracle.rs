mod common;

use common::{he_net, oracle_dtd, random_tensor, small_nets};
use proptest::prelude::*;
use vidrel::network::{gradient, Architecture, LayerParams, LayerSpec, NetworkSpec};
use vidrel::relevance::{dtd_explain, pool_backward, sensitivity_explain, zb_backward, zplus_backward, RelevanceConfig, Target};
use vidrel::synthlab::SeededRng;
use vidrel::Tensor;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn three_neuron_net_by_hand() {
    // x = (0.5, 0.25) in [0, 1]; hidden = relu(2·x1 − x2) = 0.75; logit = 1.5 · 0.75 = 1.125.
    // Input rule numerators: x1·2 − 0·2 − 1·0 = 1.0 and x2·(−1) − 0·0 − 1·(−1) = 0.75,
    // so the relevances are 1.125·(4/7, 3/7).
    let arch = Architecture {
        input_shape: [1, 1, 1, 2],
        layers: vec![
            LayerSpec::Dense { in_features: 2, out_features: 1, has_bias: false },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 1, out_features: 1, has_bias: false },
        ],
    };
    let params = vec![
        Some(LayerParams { weight: t(&[1, 2], &[2.0, -1.0]), bias: None }),
        None,
        Some(LayerParams { weight: t(&[1, 1], &[1.5]), bias: None }),
    ];
    let net = NetworkSpec::new(arch, params).unwrap();
    let x = t(&[1, 1, 1, 2], &[0.5, 0.25]);
    let mut config = RelevanceConfig::new(1, (0.0, 1.0));
    config.epsilon = 1e-14;
    let map = dtd_explain(&net, &net.forward(&x).unwrap(), &config).unwrap();
    assert!((map.explained_value - 1.125).abs() < 1e-15);
    assert!((map.scores.data()[0] - 1.125 * 4.0 / 7.0).abs() < 1e-10);
    assert!((map.scores.data()[1] - 1.125 * 3.0 / 7.0).abs() < 1e-10);
}

#[test]
fn zb_random_first_layer_conserves_per_neuron() {
    let layer = LayerSpec::Conv3d {
        in_channels: 2,
        out_channels: 3,
        kernel: [2, 3, 3],
        stride: [1, 1, 1],
        padding: [0, 1, 1],
        has_bias: false,
    };
    let weight = random_tensor(&[3, 2, 2, 3, 3], 1, -1.0, 1.0);
    let params = LayerParams { weight, bias: None };
    let x = random_tensor(&[2, 4, 5, 5], 2, 0.0, 1.0);
    let out_shape = layer.output_shape(x.shape()).unwrap();
    let low = Tensor::zeros(x.shape());
    let high = Tensor::full(x.shape(), 1.0);
    let n_out: usize = out_shape.iter().product();
    // one-hot relevance per output neuron: the redistributed total must equal it
    let mut rng = SeededRng::new(3);
    for _ in 0..25 {
        let j = rng.below(n_out);
        let mut rel = Tensor::zeros(&out_shape);
        rel.data_mut()[j] = 1.0;
        let r = zb_backward(&layer, &params, &x, &low, &high, &rel, 1e-15).unwrap();
        assert!(r.data().iter().all(|&v| v >= 0.0));
        assert!((r.sum() - 1.0).abs() <= 1e-10, "neuron {j}: {}", r.sum());
    }
}

#[test]
fn small_networks_match_formula_evaluation() {
    for (n, (net, x)) in small_nets().into_iter().enumerate() {
        let trace = net.forward(&x).unwrap();
        for class in 0..net.class_count() {
            let config = RelevanceConfig::new(net.input_shape()[0], (0.0, 1.0)).with_target(Target::Class(class));
            let map = dtd_explain(&net, &trace, &config).unwrap();
            let expect = oracle_dtd(&net, x.data(), class, 0.0, 1.0, config.epsilon);
            for (a, b) in map.scores.data().iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-10, "net {n} class {class}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn bias_free_network_conserves_logit() {
    let arch = Architecture {
        input_shape: [1, 6, 8, 8],
        layers: vec![
            LayerSpec::Conv3d { in_channels: 1, out_channels: 4, kernel: [3, 3, 3], stride: [1, 1, 1], padding: [1, 1, 1], has_bias: false },
            LayerSpec::Relu,
            LayerSpec::MaxPool3d { window: [1, 2, 2], stride: [1, 2, 2] },
            LayerSpec::Conv3d { in_channels: 4, out_channels: 4, kernel: [3, 3, 3], stride: [1, 1, 1], padding: [1, 1, 1], has_bias: false },
            LayerSpec::Relu,
            LayerSpec::SumPool3d { window: [2, 2, 2], stride: [2, 2, 2] },
            LayerSpec::Flatten,
            LayerSpec::Dense { in_features: 4 * 3 * 2 * 2, out_features: 6, has_bias: false },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 6, out_features: 3, has_bias: false },
        ],
    };
    let net = he_net(arch, 7);
    let config = RelevanceConfig::new(1, (0.0, 1.0));
    let mut checked = 0;
    for seed in 0..20 {
        let x = random_tensor(&[1, 6, 8, 8], 1000 + seed, 0.0, 1.0);
        let map = dtd_explain(&net, &net.forward(&x).unwrap(), &config).unwrap();
        if map.explained_value > 0.0 {
            let rel = (map.scores.sum() - map.explained_value).abs() / map.explained_value;
            assert!(rel <= 1e-6, "seed {seed}: leak {rel}");
            assert!(map.scores.data().iter().all(|&r| r >= 0.0));
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn sensitivity_is_squared_gradient() {
    let (net, x) = small_nets().remove(4);
    for class in 0..net.class_count() {
        let g = gradient(&net, &x, class).unwrap();
        let map = sensitivity_explain(&net, &x, class).unwrap();
        let norm: f64 = g.data().iter().map(|v| v * v).sum();
        assert_eq!(map.scores.data(), g.map(|v| v * v).data());
        assert_eq!(map.explained_value.to_bits(), norm.to_bits());
        assert_eq!(map.scores.sum().to_bits(), norm.to_bits());
    }
}

fn dense_layer(n_in: usize, n_out: usize) -> LayerSpec {
    LayerSpec::Dense { in_features: n_in, out_features: n_out, has_bias: false }
}

proptest! {
    #[test]
    fn zplus_conserves_and_stays_non_negative(
        acts in prop::collection::vec(0.01f64..2.0, 4),
        weights in prop::collection::vec(-1.0f64..1.0, 12),
        rel in prop::collection::vec(0.0f64..3.0, 3),
    ) {
        let layer = dense_layer(4, 3);
        let params = LayerParams { weight: t(&[3, 4], &weights), bias: None };
        let r = zplus_backward(&layer, &params, &t(&[4], &acts), &t(&[3], &rel), 1e-9).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= 0.0));
        // each output passes down rel_j · z_j / (z_j + eps); outputs without a positive weight pass nothing
        let expect: f64 = (0..3)
            .map(|j| {
                let z: f64 = (0..4).map(|i| acts[i] * weights[j * 4 + i].max(0.0)).sum();
                if z > 0.0 { rel[j] * z / (z + 1e-9) } else { 0.0 }
            })
            .sum();
        prop_assert!((r.sum() - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn pool_rule_conserves(acts in prop::collection::vec(0.1f64..2.0, 8), rel in prop::collection::vec(0.0f64..3.0, 4)) {
        let layer = LayerSpec::MaxPool3d { window: [2, 1, 1], stride: [2, 1, 1] };
        let r = pool_backward(&layer, &t(&[1, 8, 1, 1], &acts), &t(&[1, 4, 1, 1], &rel), 1e-12).unwrap();
        let total: f64 = rel.iter().sum();
        prop_assert!(r.data().iter().all(|&v| v >= 0.0));
        prop_assert!((r.sum() - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn zb_terms_non_negative(
        x in prop::collection::vec(0.0f64..=1.0, 3),
        weights in prop::collection::vec(-1.0f64..1.0, 6),
        rel in prop::collection::vec(0.0f64..2.0, 2),
    ) {
        let layer = dense_layer(3, 2);
        let params = LayerParams { weight: t(&[2, 3], &weights), bias: None };
        let r = zb_backward(&layer, &params, &t(&[3], &x), &Tensor::zeros(&[3]), &Tensor::full(&[3], 1.0), &t(&[2], &rel), 1e-9).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= 0.0));
        prop_assert!(r.sum() <= rel.iter().sum::<f64>() + 1e-12);
    }
}
