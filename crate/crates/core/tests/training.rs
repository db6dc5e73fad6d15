use std::collections::BTreeSet;

use man_core::data::{synth_generate, Domain, SynthConfig};
use man_core::encoders::Backbone;
use man_core::model::{Ablation, ManModel, ModelConfig};
use man_core::numerics::{Gradients, Graph, Owner};
use man_core::pipeline::synth_split;
use man_core::training::{tiny_config, tiny_fixture, train, train_step, AdamState, TrainConfig};

fn tiny_model(seed: u64) -> ManModel {
    ManModel::new(tiny_config(Ablation::FULL, Backbone::SelfAttention), &tiny_fixture().vocab, seed).unwrap()
}

#[test]
fn ownership_partitions_every_tensor() {
    let m = tiny_model(0);
    let sets: Vec<BTreeSet<_>> = [Owner::A, Owner::B, Owner::Shared]
        .iter()
        .map(|&o| m.params.owned_by(o).collect())
        .collect();
    assert!(sets.iter().all(|s| !s.is_empty()));
    assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
    assert_eq!(sets.iter().map(BTreeSet::len).sum::<usize>(), m.params.len());
    for id in m.params.ids() {
        let name = m.params.name(id);
        let want = match name.split('.').next().unwrap() {
            "a" => Owner::A,
            "b" => Owner::B,
            _ => Owner::Shared,
        };
        assert_eq!(m.params.owner(id), want, "{name}");
    }
}

fn grads_of(m: &ManModel, domain: Domain) -> Gradients {
    let fx = tiny_fixture();
    let batch = if domain == Domain::A { &fx.a } else { &fx.b };
    let mut g = Graph::with_params(&m.params);
    let loss = m.single_domain_objective(&mut g, domain, batch, [1e-3, 1e-3, 1e-2]).unwrap();
    let mut grads = Gradients::zeros_like(&m.params);
    g.backward_into(loss.total, &mut grads).unwrap();
    grads
}

#[test]
fn single_domain_gradients_skip_the_other_domain() {
    let m = tiny_model(1);
    let g = grads_of(&m, Domain::B);
    for id in m.params.owned_by(Owner::A) {
        assert_eq!(g.max_abs(id), 0.0, "{}", m.params.name(id));
    }
    let g = grads_of(&m, Domain::A);
    for id in m.params.owned_by(Owner::B) {
        assert_eq!(g.max_abs(id), 0.0, "{}", m.params.name(id));
    }
    assert!(g.max_abs(m.prototypes.unwrap()) > 0.0);
}

#[test]
fn a_only_gradient_reaches_prototypes_through_attention() {
    // With the disentanglement weight off, only the group attention path
    // feeds the prototypes.
    let m = tiny_model(2);
    let fx = tiny_fixture();
    let mut g = Graph::with_params(&m.params);
    let loss = m.single_domain_objective(&mut g, Domain::A, &fx.a, [0.0, 0.0, 0.0]).unwrap();
    let mut grads = Gradients::zeros_like(&m.params);
    g.backward_into(loss.total, &mut grads).unwrap();
    assert!(grads.max_abs(m.prototypes.unwrap()) > 1e-8);
}

#[test]
fn b_only_steps_keep_domain_a_fixed() {
    let fx = tiny_fixture();
    let mut m = tiny_model(3);
    let before = m.params.clone();
    let mut adam = AdamState::new(&m.params);
    let mut grads = Gradients::zeros_like(&m.params);
    for _ in 0..10 {
        train_step(&mut m, &mut adam, &mut grads, &TrainConfig::default(), &[], &fx.b).unwrap();
    }
    for id in m.params.owned_by(Owner::A) {
        assert_eq!(before.get(id), m.params.get(id), "{}", m.params.name(id));
    }
    let moved = m.params.owned_by(Owner::B).filter(|&id| before.get(id) != m.params.get(id)).count();
    assert!(moved > 0);
}

#[test]
fn loss_descends_on_a_fixed_batch() {
    let fx = tiny_fixture();
    let mut drops = Vec::new();
    for seed in 0..5 {
        let mut m = tiny_model(seed);
        let mut adam = AdamState::new(&m.params);
        let mut grads = Gradients::zeros_like(&m.params);
        let cfg = TrainConfig::default();
        let first = train_step(&mut m, &mut adam, &mut grads, &cfg, &fx.a, &fx.b).unwrap().total;
        let mut last = first;
        for _ in 1..50 {
            last = train_step(&mut m, &mut adam, &mut grads, &cfg, &fx.a, &fx.b).unwrap().total;
        }
        drops.push(first - last);
    }
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] > 0.0, "{drops:?}");
}

fn small_split(seed: u64) -> man_core::data::DatasetSplit {
    let data = synth_generate(&SynthConfig {
        users_per_domain: 60,
        items_per_domain: 30,
        seq_len_mean: 6.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    synth_split(&data.all_records(), 6).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        max_len: 6,
        item_dim: 8,
        domain_dim: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let split = small_split(0);
    let cfg = TrainConfig { max_epochs: 0, seed: 4, ..TrainConfig::default() };
    let out = train(&small_model(), &cfg, &split).unwrap();
    let fresh = ManModel::new(small_model(), &split.vocab, man_core::training::derive_seed(4, &[0])).unwrap();
    assert_eq!(out.epochs_run, 0);
    assert_eq!(out.log.to_csv().lines().count(), 1);
    for id in fresh.params.ids() {
        assert_eq!(fresh.params.get(id), out.model.params.get(id));
    }
}

#[test]
fn same_seed_same_parameters() {
    let split = small_split(1);
    let cfg = TrainConfig { max_epochs: 2, seed: 5, eval_negatives: 9, ..TrainConfig::default() };
    let x = train(&small_model(), &cfg, &split).unwrap();
    let y = train(&small_model(), &cfg, &split).unwrap();
    for id in x.model.params.ids() {
        assert_eq!(x.model.params.get(id), y.model.params.get(id));
    }
    let z = train(&small_model(), &TrainConfig { seed: 6, ..cfg }, &split).unwrap();
    assert_ne!(x.log.to_csv(), z.log.to_csv());
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let split = small_split(2);
    let cfg = TrainConfig { max_epochs: 6, patience: 1, seed: 7, eval_negatives: 9, ..TrainConfig::default() };
    let out = train(&small_model(), &cfg, &split).unwrap();
    let mean_auc = |e: usize| {
        let v: Vec<f64> = Domain::BOTH
            .iter()
            .map(|&d| out.log.value(e, d, "validation", "auc").unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let best = out.best_validation.unwrap();
    assert_eq!(mean_auc(out.best_epoch), best);
    for e in 1..=out.epochs_run {
        assert!(mean_auc(e) <= best);
    }
}
