use man_core::encoders::Backbone;
use man_core::model::{Ablation, ManModel, Mode};
use man_core::training::{tiny_config, tiny_fixture, verify_gradients};

#[test]
fn full_model_gradients_match_finite_differences() {
    for backbone in [Backbone::SelfAttention, Backbone::Gru] {
        let report = verify_gradients(&tiny_config(Ablation::FULL, backbone), 3).unwrap();
        for (m, e) in &report.modules {
            println!("{backbone:?} {m}: {e:.3e}");
        }
        assert!(report.max_rel_err < 1e-4, "{backbone:?}: {}", report.max_rel_err);
    }
}

#[test]
fn ablated_model_gradients_match_finite_differences() {
    let report = verify_gradients(&tiny_config(Ablation::NONE, Backbone::SelfAttention), 5).unwrap();
    assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
}

#[test]
fn modes_build_the_expected_parts() {
    let fx = tiny_fixture();
    for mode in [Mode::Cross, Mode::Single, Mode::Shared] {
        let cfg = man_core::model::ModelConfig {
            mode,
            ..tiny_config(Ablation::FULL, Backbone::SelfAttention)
        };
        let m = ManModel::new(cfg, &fx.vocab, 1).unwrap();
        let names: Vec<&str> = m.params.ids().map(|id| m.params.name(id)).collect();
        let has = |p: &str| names.iter().any(|n| n.starts_with(p));
        match mode {
            Mode::Cross => assert!(has("a.isa") && has("b.gpa") && has("global.encoder") && has("shared.prototypes")),
            Mode::Single => assert!(has("a.encoder") && !has("global.") && !has("shared.") && !has("a.isa")),
            Mode::Shared => assert!(has("global.encoder") && !has("a.encoder") && !has("a.head")),
        }
        let p = m.predict_examples(&fx.a).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
