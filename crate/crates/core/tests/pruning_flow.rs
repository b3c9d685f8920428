//! End-to-end soft-filter-pruning behavior on real training epochs.

mod common;

use common::random_tensor;
use slimnet::data;
use slimnet::experiment::{evaluate, plain_epoch_hook, DataSource, ExperimentConfig, Method};
use slimnet::flops;
use slimnet::model::{extract_compact, ModelSpec, ResNet};
use slimnet::optim::Sgd;
use slimnet::prune::{
    apply_soft_prune, compute_filter_norms, finalize_compact, sfp_epoch_loop, PruneSchedule,
};
use slimnet::rng;

fn tiny_config(epochs: usize) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(Method::Prune, 20).unwrap();
    config.epochs = epochs;
    config.batch_size = 16;
    config.standard_augment = false;
    config.data = DataSource::Synthetic { train_n: 48, test_n: 32, seed: 5 };
    config
}

fn synthetic_train(config: &ExperimentConfig) -> (data::Dataset, data::Dataset) {
    let DataSource::Synthetic { train_n, test_n, seed } = config.data else { unreachable!() };
    let full = data::synthetic_dataset(train_n + test_n, data::NUM_CLASSES, seed).unwrap();
    let train = data::slice_range(&full, 0, train_n, data::Split::Train);
    let test = data::slice_range(&full, train_n, train_n + test_n, data::Split::Test);
    let stats = data::compute_stats(&train);
    (data::normalize(&train, &stats), data::normalize(&test, &stats))
}

#[test]
fn sfp_regrows_pruned_filters_and_masks_drift() {
    let config = tiny_config(5);
    let (train, _) = synthetic_train(&config);
    let mut model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 1);
    let mut optimizer = Sgd::new(0.1, config.momentum, config.weight_decay).unwrap();

    // Warm one epoch so the optimizer carries momentum, as it does at every
    // pruning event of a real run, then prune and train one more epoch:
    // velocity on freshly zeroed coordinates pushes filters off zero.
    let schedule = PruneSchedule::default();
    {
        let mut hook = plain_epoch_hook(&mut optimizer, &config, &train);
        hook(&mut model, 0).unwrap();
    }
    let mut prune_rng = rng::stream(config.seeds.prune, 1);
    let masks = apply_soft_prune(&mut model, &schedule, &mut prune_rng).unwrap();
    {
        let mut hook = plain_epoch_hook(&mut optimizer, &config, &train);
        hook(&mut model, 1).unwrap();
    }
    let mut regrown = 0;
    for mask in &masks {
        let weight = if mask.path == "stem.conv" {
            &model.stem_conv.weight.value
        } else {
            &model
                .blocks
                .iter()
                .find(|b| b.conv1.path == mask.path)
                .expect("mask path exists")
                .conv1
                .weight
                .value
        };
        let norms = compute_filter_norms(weight, 2.0);
        for (i, &keep) in mask.keep.iter().enumerate() {
            if !keep && norms[i] > 0.0 {
                regrown += 1;
            }
        }
    }
    assert!(regrown > 0, "no pruned filter regrew after a training epoch");

    // Full loop: the mask history must contain at least one differing
    // consecutive pair (soft pruning re-selects every epoch).
    let stochastic = PruneSchedule {
        mode: slimnet::prune::SelectionMode::StochasticByNorm,
        ..PruneSchedule::default()
    };
    let mut model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 1);
    let mut optimizer = Sgd::new(0.1, config.momentum, config.weight_decay).unwrap();
    let history = {
        let mut hook = plain_epoch_hook(&mut optimizer, &config, &train);
        sfp_epoch_loop(&mut model, &stochastic, config.seeds.prune, 5, |m, e| hook(m, e)).unwrap()
    };
    assert_eq!(history.len(), 6);
    let any_differ = history.windows(2).any(|pair| pair[0] != pair[1]);
    assert!(any_differ, "masks never changed across five epochs");
}

#[test]
fn masked_and_compact_models_agree_after_training() {
    let config = tiny_config(3);
    let (train, test) = synthetic_train(&config);
    let schedule = PruneSchedule::default();
    let mut model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 2);
    let mut optimizer = Sgd::new(0.1, config.momentum, config.weight_decay).unwrap();
    {
        let mut hook = plain_epoch_hook(&mut optimizer, &config, &train);
        sfp_epoch_loop(&mut model, &schedule, config.seeds.prune, 3, |m, e| hook(m, e)).unwrap();
    }
    let extraction = finalize_compact(&model, &schedule).unwrap();

    // Logit equivalence on random inputs.
    for seed in 0..4 {
        let input = random_tensor::<f32>(&[4, 3, 32, 32], 500 + seed, 0.5);
        let masked = model.forward_eval(&input).unwrap();
        let compact = extraction.model.forward_eval(&input).unwrap();
        let diff = masked.max_abs_diff(&compact).unwrap();
        assert!(diff < 1e-5, "seed {seed}: logits diverge by {diff}");
    }

    // Identical evaluated accuracy, to the last decimal.
    let masked_acc = evaluate(&model, &test).unwrap();
    let compact_acc = evaluate(&extraction.model, &test).unwrap();
    assert_eq!(masked_acc, compact_acc);

    // Cost reports agree exactly between the two representations.
    let masks = slimnet::prune::zero_filter_masks(&model, schedule.scope);
    let masked_report = flops::masked_model_flops(&model, &masks).unwrap();
    let compact_report = flops::compact_model_flops(&extraction.model).unwrap();
    assert_eq!(masked_report.total_macs(), compact_report.total_macs());
    assert_eq!(masked_report.to_csv(), compact_report.to_csv());

    // Fewer parameters whenever pruning removed at least one filter.
    assert!(extraction.model.parameter_count() < model.parameter_count());
}

#[test]
fn keep_ratio_one_extraction_is_identity_shaped() {
    let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 3);
    let schedule = PruneSchedule { keep_ratio: 1.0, ..Default::default() };
    let extraction = finalize_compact(&model, &schedule).unwrap();
    assert_eq!(extraction.model.parameter_count(), model.parameter_count());
    let input = random_tensor::<f32>(&[2, 3, 32, 32], 9, 1.0);
    let a = model.forward_eval(&input).unwrap();
    let b = extraction.model.forward_eval(&input).unwrap();
    assert_eq!(a.max_abs_diff(&b).unwrap(), 0.0);
}

#[test]
fn masked_equivalence_holds_over_random_mask_draws() {
    // Property form: prune, extract, compare, across several seeds.
    for draw in 0..10u64 {
        let mut model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 50 + draw);
        let schedule = PruneSchedule::default();
        let mut prune_rng = rng::seeded(900 + draw);
        let masks = apply_soft_prune(&mut model, &schedule, &mut prune_rng).unwrap();
        let extraction = extract_compact(&model, &masks).unwrap();
        let input = random_tensor::<f32>(&[2, 3, 32, 32], 7000 + draw, 0.5);
        let a = model.forward_eval(&input).unwrap();
        let b = extraction.model.forward_eval(&input).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-5, "draw {draw}");
    }
}
