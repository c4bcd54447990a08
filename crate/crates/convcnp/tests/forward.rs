mod common;

use common::toy_task;
use ivos_convcnp::*;
use ivos_core::{Measurement, PerVital, PredictiveDistribution, VitalKind};
use ivos_tensor::{grad_check_params, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn standardization() -> PerVital<Standardizer> {
    PerVital::from_fn(|k| {
        let (mean, std) = match k {
            VitalKind::HeartRate => (88.0, 14.0),
            VitalKind::RespiratoryRate => (19.0, 3.0),
            VitalKind::Spo2 => (95.5, 2.0),
            VitalKind::SystolicBp => (122.0, 18.0),
            VitalKind::Temperature => (98.8, 0.9),
        };
        Standardizer { mean, std }
    })
}

/// Tiny model with the zero-initialised projection and biases replaced by
/// random values, so every layer influences the output and no activation
/// sits exactly on a ReLU kink.
fn randomized_model(seed: u64) -> TrainedModel {
    let mut m = TrainedModel::new(ModelConfig::tiny(), standardization(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        let name = m.params.name(id).to_string();
        if name.starts_with("head.") || name.ends_with(".b") {
            m.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    m
}

#[test]
fn untrained_model_predicts_training_mean() {
    let std = standardization();
    let model = TrainedModel::new(ModelConfig::tiny(), std, 3).unwrap();
    let task = toy_task(60.0);
    let dist = model.forward(&task).unwrap();
    let sigma0 = std::f64::consts::LN_2 + 0.01;
    for kind in VitalKind::ALL {
        for g in 0..dist.grid_len() {
            let (mu, sigma) = dist.node(kind, g);
            assert!((mu - std[kind].mean).abs() < 1e-12);
            assert!((sigma - sigma0 * std[kind].std).abs() < 1e-12);
        }
    }
    assert_eq!(dist.grid_len(), 121);
    assert_eq!(dist.span(), (12.0, 72.0));
}

#[test]
fn translation_by_whole_grid_nodes_is_exact() {
    let model = randomized_model(5);
    let task = toy_task(60.0);
    let base = model.forward(&task).unwrap();
    for nodes in [1usize, 2, 7, 48] {
        let shift = nodes as f64 * 0.5;
        let mut moved = task.clone();
        moved.tau_hours += shift;
        moved.context.iter_mut().for_each(|m| m.t_hours += shift);
        let dist = model.forward(&moved).unwrap();
        for kind in VitalKind::ALL {
            for t in [12.0, 30.25, 59.9, 60.0, 66.3, 72.0] {
                let (m0, s0) = base.at(kind, t).unwrap();
                let (m1, s1) = dist.at(kind, t + shift).unwrap();
                assert!((m0 - m1).abs() <= 1e-9 && (s0 - s1).abs() <= 1e-9, "{kind} {t} shift {shift}");
            }
        }
    }
}

#[test]
fn encoder_shift_moves_channels_by_one_node() {
    let cfg = ModelConfig::tiny();
    let std = standardization();
    let ctx = vec![Measurement::new(30.0, VitalKind::HeartRate, 100.0)];
    let moved = vec![Measurement::new(30.5, VitalKind::HeartRate, 100.0)];
    let a = encode(&ctx, 60.0, &cfg, &std).unwrap();
    let b = encode(&moved, 60.0, &cfg, &std).unwrap();
    let n = a.grid_times.len();
    for ch in 0..10 {
        for j in 0..n - 1 {
            let va = a.values.at2(ch, j);
            let vb = b.values.at2(ch, j + 1);
            assert!((va - vb).abs() < 1e-12, "channel {ch} node {j}");
        }
    }
}

#[test]
fn on_node_queries_are_exact() {
    let model = randomized_model(9);
    let dist = model.forward(&toy_task(60.0)).unwrap();
    for g in [0, 1, 60, 96, 120] {
        let t = dist.grid_times[g];
        assert_eq!(dist.at(VitalKind::Spo2, t).unwrap(), dist.node(VitalKind::Spo2, g));
    }
}

fn unit_distribution() -> (PredictiveDistribution, PerVital<Standardizer>) {
    let times: Vec<f64> = (0..5).map(|i| i as f64).collect();
    let n = VitalKind::COUNT * times.len();
    let dist = PredictiveDistribution {
        tau: 0.0,
        grid_times: times,
        mu: vec![0.0; n],
        sigma: vec![1.0; n],
    };
    (dist, PerVital::from_fn(|_| Standardizer::IDENTITY))
}

#[test]
fn nll_analytic_values() {
    let (dist, std) = unit_distribution();
    let at_mean = [Measurement::new(1.0, VitalKind::HeartRate, 0.0)];
    let (s, n) = nll_sum_with(&dist, &at_mean, &std).unwrap();
    assert_eq!(n, 1);
    assert!((s - 0.918_938_533_204_672_7).abs() < 1e-12);
    let one_sigma = [Measurement::new(1.0, VitalKind::HeartRate, 1.0)];
    let (s, _) = nll_sum_with(&dist, &one_sigma, &std).unwrap();
    assert!((s - 1.418_938_533_204_672_7).abs() < 1e-12);
}

#[test]
fn nll_three_targets_by_hand() {
    let (mut dist, _) = unit_distribution();
    // HR row: mu 80 at every node, sigma 10; SpO2 row: mu 96, sigma 2.
    let g = dist.grid_len();
    let hr = VitalKind::HeartRate.index() * g;
    let sp = VitalKind::Spo2.index() * g;
    dist.mu[hr..hr + g].iter_mut().for_each(|v| *v = 80.0);
    dist.sigma[hr..hr + g].iter_mut().for_each(|v| *v = 10.0);
    dist.mu[sp..sp + g].iter_mut().for_each(|v| *v = 96.0);
    dist.sigma[sp..sp + g].iter_mut().for_each(|v| *v = 2.0);
    let std = PerVital::from_fn(|k| match k {
        VitalKind::HeartRate => Standardizer { mean: 85.0, std: 5.0 },
        VitalKind::Spo2 => Standardizer { mean: 95.0, std: 2.0 },
        _ => Standardizer::IDENTITY,
    });
    let targets = [
        Measurement::new(0.5, VitalKind::HeartRate, 90.0),
        Measurement::new(2.0, VitalKind::Spo2, 93.0),
        Measurement::new(3.0, VitalKind::HeartRate, 75.0),
    ];
    // Standardized sigmas: 2 and 1; z = 1, -1.5, -0.5.
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let expected = 3.0 * half_ln_2pi + 2.0 * 2f64.ln() + 0.5 * (1.0 + 2.25 + 0.25);
    let (s, n) = nll_sum_with(&dist, &targets, &std).unwrap();
    assert_eq!(n, 3);
    assert!((s - expected).abs() < 1e-12);
}

#[test]
fn joint_nll_is_sum_of_single_target_terms() {
    let model = randomized_model(2);
    let task = toy_task(60.0);
    let dist = model.forward(&task).unwrap();
    let (joint, n) = model.nll_sum(&dist, &task.targets).unwrap();
    let mut sum = 0.0;
    for t in &task.targets {
        sum += model.nll_sum(&dist, std::slice::from_ref(t)).unwrap().0;
    }
    assert_eq!(n, 3);
    assert_eq!(joint, sum);

    // The graph loss agrees with the evaluation path.
    let mut g = Graph::new();
    let loss = model.task_loss(&mut g, &model.params, &task).unwrap().unwrap();
    assert!((g.value(loss).item() - joint / 3.0).abs() < 1e-12);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let model = randomized_model(4);
    let task = toy_task(60.0);
    let worst = grad_check_params(
        |g, store| {
            let loss = model.task_loss(g, store, &task).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            Ok(loss.unwrap())
        },
        &model.params,
        1e-6,
    )
    .unwrap();
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn checkpoint_round_trip() {
    let model = randomized_model(8);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = TrainedModel::load(dir.path()).unwrap();
    assert_eq!(back, model);
    let task = toy_task(60.0);
    assert_eq!(back.forward(&task).unwrap(), model.forward(&task).unwrap());
}

#[test]
fn empty_context_is_an_error() {
    let model = randomized_model(1);
    let mut task = toy_task(60.0);
    task.context.clear();
    assert!(matches!(model.forward(&task), Err(ModelError::EmptyContext)));
}

#[test]
fn embedding_has_one_value_per_channel() {
    let model = randomized_model(1);
    let task = toy_task(60.0);
    let (dist, emb) = model.predict_with_embedding(&task.context, task.tau_hours).unwrap();
    assert_eq!(emb.len(), model.config.channels);
    assert!(emb.iter().all(|v| *v >= 0.0));
    assert_eq!(dist, model.forward(&task).unwrap());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn context_strategy() -> impl Strategy<Value = Vec<Measurement>> {
        prop::collection::vec((0.0f64..59.9, 0usize..5, 50.0f64..150.0), 1..40).prop_map(|pts| {
            let mut v: Vec<Measurement> = pts
                .into_iter()
                .map(|(t, k, x)| Measurement::new(t, VitalKind::from_index(k).unwrap(), x))
                .collect();
            v.sort_by(|a, b| a.t_hours.total_cmp(&b.t_hours));
            v
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn density_channels_are_non_negative(ctx in context_strategy()) {
            let enc = encode(&ctx, 60.0, &ModelConfig::tiny(), &standardization()).unwrap();
            let g = enc.grid_times.len();
            for ch in 0..VitalKind::COUNT {
                for j in 0..g {
                    prop_assert!(enc.values.at2(ch, j) >= 0.0);
                }
            }
        }

        #[test]
        fn joint_target_nll_decomposes(ctx in context_strategy(), targets in prop::collection::vec((60.0f64..72.0, 0usize..5, 50.0f64..150.0), 1..12)) {
            let model = randomized_model(3);
            let dist = model.predict(&ctx, 60.0).unwrap();
            let targets: Vec<Measurement> = targets.into_iter()
                .map(|(t, k, x)| Measurement::new(t, VitalKind::from_index(k).unwrap(), x)).collect();
            let (joint, _) = model.nll_sum(&dist, &targets).unwrap();
            let mut sum = 0.0;
            for t in &targets {
                sum += model.nll_sum(&dist, std::slice::from_ref(t)).unwrap().0;
            }
            prop_assert_eq!(joint, sum);
        }
    }
}
