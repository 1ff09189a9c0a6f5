use equiformer::attention::{AttnKind, MessageKind};
use equiformer::model::{Mode, ModelConfig};
use equiformer_harness::toy::{make_toy_dataset, ToyKind};
use equiformer_harness::train::{train, TrainConfig};

const VARIANTS: [(AttnKind, MessageKind); 4] = [
    (AttnKind::Mlp, MessageKind::Linear),
    (AttnKind::Mlp, MessageKind::Nonlinear),
    (AttnKind::Dot, MessageKind::Linear),
    (AttnKind::Dot, MessageKind::Nonlinear),
];

#[test]
fn same_seed_same_metrics() {
    let data = make_toy_dataset(ToyKind::PairwiseMorse, 10, 0);
    let (val, _) = make_toy_dataset(ToyKind::PairwiseMorse, 4, 1).split(4);
    let model = ModelConfig::toy(Mode::Se3, AttnKind::Mlp, MessageKind::Nonlinear);
    let cfg = TrainConfig {
        epochs: 5,
        force_weight: 10.0,
        ..TrainConfig::preset("toy").unwrap()
    };
    let a = train(&model, &data, Some(&val), &cfg, |_| {}).unwrap();
    let b = train(&model, &data, Some(&val), &cfg, |_| {}).unwrap();
    for (x, y) in a.log.iter().zip(&b.log) {
        assert!((x.train_loss - y.train_loss).abs() <= 1e-10);
        assert!((x.train.energy_mae - y.train.energy_mae).abs() <= 1e-10);
        assert!((x.train.force_mae.unwrap() - y.train.force_mae.unwrap()).abs() <= 1e-10);
        assert!((x.val.unwrap().energy_mae - y.val.unwrap().energy_mae).abs() <= 1e-10);
    }
    assert_eq!(a.store, b.store);
}

#[test]
fn loss_decreases_for_every_variant() {
    let data = make_toy_dataset(ToyKind::PairwiseMorse, 10, 0);
    for (attn, msg) in VARIANTS {
        for mode in [Mode::Se3, Mode::E3] {
            let model = ModelConfig::toy(mode, attn, msg);
            for seed in 0..3 {
                let cfg = TrainConfig {
                    epochs: 100,
                    seed,
                    ..TrainConfig::preset("toy").unwrap()
                };
                let out = train(&model, &data, None, &cfg, |_| {}).unwrap();
                let (first, last) = (out.log[0].train_loss, out.log[99].train_loss);
                assert!(last < first, "{mode:?} {attn:?} {msg:?} seed {seed}: {first} -> {last}");
            }
        }
    }
}
