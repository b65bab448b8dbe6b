use hemscast_core::forecaster::{
    evaluate_loss, finetune, forward, init_model, loss_and_gradients, parameter_count, train, ForecastError,
    ForecastSample, ModelConfig, ModelWeights, TrainConfig,
};
use hemscast_core::timeseries::CalendarFeature;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(hidden: usize, heads: usize, input_window: usize, horizon: usize, quantiles: Vec<f64>) -> ModelConfig {
    ModelConfig {
        input_window,
        horizon,
        quantiles,
        hidden_size: hidden,
        attention_heads: heads,
        dropout: 0.1,
        past_covariates: vec![CalendarFeature::QuarterOfDaySin, CalendarFeature::QuarterOfDayCos],
        future_covariates: vec![CalendarFeature::QuarterOfDaySin, CalendarFeature::QuarterOfDayCos, CalendarFeature::IsWeekend],
    }
}

fn random_sample(config: &ModelConfig, rng: &mut ChaCha8Rng, with_target: bool) -> ForecastSample {
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.5)).collect::<Vec<f64>>();
    ForecastSample {
        past_target: draw(config.input_window),
        past_covariates: draw(config.input_window * config.past_covariates.len()),
        future_covariates: draw(config.horizon * config.future_covariates.len()),
        target: with_target.then(|| draw(config.horizon)),
    }
}

/// Sample of `days` of a noiseless daily sinusoid, in scaled units.
fn sinusoid_sample(config: &ModelConfig, start: usize, phase: f64) -> ForecastSample {
    let period = config.horizon as f64;
    let v = |i: usize| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * i as f64 / period + phase).sin();
    let cov = |i: usize| {
        let a = 2.0 * std::f64::consts::PI * i as f64 / period;
        [a.sin(), a.cos()]
    };
    let l = config.input_window;
    let past: Vec<usize> = (start..start + l).collect();
    let future: Vec<usize> = (start + l..start + l + config.horizon).collect();
    ForecastSample {
        past_target: past.iter().map(|&i| v(i)).collect(),
        past_covariates: past.iter().flat_map(|&i| cov(i)).collect(),
        future_covariates: future.iter().flat_map(|&i| [cov(i)[0], cov(i)[1], 0.0]).collect(),
        target: Some(future.iter().map(|&i| v(i)).collect()),
    }
}

fn sinusoid_set(config: &ModelConfig, n: usize, offset: usize) -> Vec<ForecastSample> {
    (0..n).map(|k| sinusoid_sample(config, offset + 7 * k, 0.0)).collect()
}

/// Shifts every target away from the current median prediction so small
/// parameter perturbations never cross a pinball kink.
fn targets_off_kinks(weights: &ModelWeights, sample: &mut ForecastSample, rng: &mut ChaCha8Rng) {
    let f = forward(weights, sample).unwrap();
    let q = weights.config.quantiles.len();
    let target = (0..weights.config.horizon)
        .map(|t| {
            let lo = f.get(t, 0);
            let hi = f.get(t, q - 1);
            if rng.random_bool(0.5) {
                hi + rng.random_range(0.05..0.5)
            } else {
                lo - rng.random_range(0.05..0.5)
            }
        })
        .collect();
    sample.target = Some(target);
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..3 {
        let hidden = [2, 4, 6][draw];
        let config = small_config(hidden, if hidden % 2 == 0 { 2 } else { 1 }, 6, 4, vec![0.1, 0.5, 0.9]);
        let weights = init_model(&config, 100 + draw as u64).unwrap();
        let mut sample = random_sample(&config, &mut rng, false);
        targets_off_kinks(&weights, &mut sample, &mut rng);
        let batch = [sample];
        let (_, grad) = loss_and_gradients(&weights, &batch).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..weights.params.len() {
            let at = |delta: f64| {
                let mut w = weights.clone();
                w.params[i] += delta;
                evaluate_loss(&w, &batch).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "config {draw}: worst relative error {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_finite_shaped_and_monotone(seed in any::<u64>(), scale in 0.01f64..50.0) {
        let config = small_config(4, 2, 12, 8, vec![0.05, 0.3, 0.5, 0.7, 0.95]);
        let weights = init_model(&config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut sample = random_sample(&config, &mut rng, false);
        sample.past_target.iter_mut().for_each(|v| *v *= scale);
        let out = forward(&weights, &sample).unwrap();
        prop_assert_eq!(out.values.len(), 8 * 5);
        prop_assert!(out.values.iter().all(|v| v.is_finite()));
        for t in 0..8 {
            for k in 1..5 {
                prop_assert!(out.get(t, k - 1) <= out.get(t, k));
            }
        }
        prop_assert_eq!(forward(&weights, &sample).unwrap(), out);
    }
}

#[test]
fn duplicating_the_batch_changes_nothing() {
    let config = small_config(4, 2, 12, 8, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<_> = (0..3).map(|_| random_sample(&config, &mut rng, true)).collect();
    let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
    let (l1, g1) = loss_and_gradients(&weights, &batch).unwrap();
    let (l2, g2) = loss_and_gradients(&weights, &doubled).unwrap();
    assert!((l1 - l2).abs() <= 1e-14 * l1.abs());
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-13 * a.abs().max(1e-12), "{a} vs {b}");
    }
}

#[test]
fn batch_loss_is_the_mean_of_per_sample_losses() {
    let config = small_config(4, 2, 12, 8, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<_> = (0..4).map(|_| random_sample(&config, &mut rng, true)).collect();
    let (loss, grad) = loss_and_gradients(&weights, &batch).unwrap();
    let mut mean_loss = 0.0;
    let mut mean_grad = vec![0.0; grad.len()];
    for s in &batch {
        let (l, g) = loss_and_gradients(&weights, std::slice::from_ref(s)).unwrap();
        mean_loss += l / 4.0;
        mean_grad.iter_mut().zip(&g).for_each(|(m, g)| *m += g / 4.0);
    }
    assert!((loss - mean_loss).abs() < 1e-14);
    for (a, b) in grad.iter().zip(&mean_grad) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn missing_target_is_an_error() {
    let config = small_config(4, 2, 12, 8, vec![0.5]);
    let weights = init_model(&config, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = vec![random_sample(&config, &mut rng, true), random_sample(&config, &mut rng, false)];
    assert!(matches!(loss_and_gradients(&weights, &batch), Err(ForecastError::MissingTarget(1))));
}

#[test]
fn exact_output_gives_zero_loss_and_gradient() {
    // heads fixed at a constant equal to every target
    let config = small_config(4, 2, 12, 8, vec![0.5]);
    let mut weights = init_model(&config, 6).unwrap();
    let layout = weights.layout().clone();
    let w = layout.get("heads.weight").unwrap();
    weights.params[w.offset..w.offset + w.len()].iter_mut().for_each(|p| *p = 0.0);
    let b = layout.get("heads.bias").unwrap();
    weights.params[b.offset] = 0.75;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sample = random_sample(&config, &mut rng, false);
    sample.target = Some(vec![0.75; 8]);
    let (loss, grad) = loss_and_gradients(&weights, &[sample]).unwrap();
    assert_eq!(loss, 0.0);
    for name in ["heads.weight", "heads.bias"] {
        let e = layout.get(name).unwrap();
        assert!(grad[e.offset..e.offset + e.len()].iter().all(|&g| g == 0.0), "{name}");
    }
}

#[test]
fn default_parameter_count_from_layer_arithmetic() {
    let c = ModelConfig::default();
    let (h, p, f, q) = (32usize, 6usize, 5usize, 3usize);
    assert_eq!((c.hidden_size, c.past_variables(), c.future_variables(), c.quantiles.len()), (h, p, f, q));
    let linear = |i: usize, o: usize| i * o + o;
    let norm = |w: usize| 2 * w;
    let glu = |i: usize, o: usize| 2 * linear(i, o);
    let grn = |i: usize, hid: usize, o: usize| {
        linear(i, hid) + linear(hid, hid) + glu(hid, o) + if i == o { 0 } else { linear(i, o) } + norm(o)
    };
    let gate = |w: usize| glu(w, w) + norm(w);
    let expected = (p + f) * linear(1, h)
        + grn(p * h, h, p)
        + grn(f * h, h, f)
        + (h * 3 * h + h * 3 * h + 3 * h)
        + gate(h)
        + 4 * linear(h, h)
        + gate(h)
        + grn(h, h, h)
        + linear(h, q);
    let weights = init_model(&c, 0).unwrap();
    assert_eq!(weights.params.len(), expected);
    assert_eq!(parameter_count(&c), expected);
}

fn quick_train(epochs: usize, patience: usize, lr: f64) -> TrainConfig {
    TrainConfig { initial_lr: lr, epochs, batch_size: 4, early_stopping_patience: patience, seed: 9 }
}

#[test]
fn training_is_deterministic() {
    let config = small_config(4, 2, 24, 12, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 7).unwrap();
    let train_set = sinusoid_set(&config, 10, 0);
    let val_set = sinusoid_set(&config, 3, 3);
    let cfg = quick_train(3, 3, 0.05);
    let (a, ha) = train(&weights, &train_set, &val_set, &cfg).unwrap();
    let (b, hb) = train(&weights, &train_set, &val_set, &cfg).unwrap();
    assert!(a.bitwise_eq(&b));
    assert_eq!(ha, hb);
    let bits = |h: &hemscast_core::forecaster::TrainHistory| {
        h.epochs.iter().map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(bits(&ha), bits(&hb));
}

#[test]
fn zero_epochs_is_the_identity() {
    let config = small_config(4, 2, 24, 12, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 8).unwrap();
    let set = sinusoid_set(&config, 4, 0);
    let (out, history) = train(&weights, &set, &set, &quick_train(0, 1, 0.05)).unwrap();
    assert!(out.bitwise_eq(&weights));
    assert!(history.epochs.is_empty());
}

#[test]
fn zero_learning_rate_finetune_is_the_identity() {
    let config = small_config(4, 2, 24, 12, vec![0.1, 0.5, 0.9]);
    let global = init_model(&config, 9).unwrap();
    let set = sinusoid_set(&config, 6, 0);
    let (out, history) = finetune(&global, &set, &set, &quick_train(2, 2, 0.0), &quick_train(10, 3, 0.05)).unwrap();
    assert!(out.bitwise_eq(&global));
    assert_eq!(history.epochs.len(), 2);
}

#[test]
fn finetune_budget_cannot_exceed_pretraining() {
    let config = small_config(4, 2, 24, 12, vec![0.5]);
    let global = init_model(&config, 10).unwrap();
    let set = sinusoid_set(&config, 2, 0);
    let pre = quick_train(5, 3, 0.05);
    assert!(matches!(finetune(&global, &set, &set, &quick_train(2, 1, 0.1), &pre), Err(ForecastError::Config(_))));
    assert!(matches!(finetune(&global, &set, &set, &quick_train(6, 1, 0.01), &pre), Err(ForecastError::Config(_))));
}

#[test]
fn noise_validation_with_patience_one_stops_early() {
    let config = small_config(4, 2, 24, 12, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 11).unwrap();
    let train_set = sinusoid_set(&config, 8, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise: Vec<_> = (0..4)
        .map(|_| {
            let mut s = random_sample(&config, &mut rng, true);
            s.target = Some((0..12).map(|_| rng.random_range(-20.0..20.0)).collect());
            s
        })
        .collect();
    let (_, history) = train(&weights, &train_set, &noise, &quick_train(20, 1, 0.05)).unwrap();
    assert!(history.stopped_early);
    assert!(history.epochs.len() < 20);
}

#[test]
fn one_epoch_budget_records_one_epoch() {
    let config = small_config(4, 2, 24, 12, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 12).unwrap();
    let set = sinusoid_set(&config, 4, 0);
    let (_, history) = train(&weights, &set, &set, &quick_train(1, 1, 0.05)).unwrap();
    assert_eq!(history.epochs.len(), 1);
    assert_eq!(history.epochs[0].epoch, 1);
    assert_eq!(history.epochs[0].lr, 0.05);
}

#[test]
fn sinusoid_is_learned() {
    let config = small_config(8, 2, 48, 24, vec![0.1, 0.5, 0.9]);
    let weights = init_model(&config, 13).unwrap();
    let train_set = sinusoid_set(&config, 24, 0);
    let val_set = sinusoid_set(&config, 6, 5);
    let cfg = TrainConfig { initial_lr: 0.05, epochs: 8, batch_size: 4, early_stopping_patience: 8, seed: 13 };
    let (best, history) = train(&weights, &train_set, &val_set, &cfg).unwrap();
    let first = history.epochs.first().unwrap().train_loss;
    let last = history.epochs.last().unwrap().train_loss;
    assert!(last < first, "train loss {first} -> {last}");
    assert!(evaluate_loss(&best, &val_set).unwrap() < evaluate_loss(&weights, &val_set).unwrap());
}
