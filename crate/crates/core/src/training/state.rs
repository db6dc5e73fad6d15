use std::path::Path;

use super::checkpoint::Checkpoint;
use super::optim::AdamState;
use crate::config::RunConfig;
use crate::data::Vocabularies;
use crate::error::{Error, Result};
use crate::model::ManModel;
use crate::numerics::{Owner, ParamStore, Tensor};

const CONFIG: &str = "meta.config";
const SEED: &str = "meta.rng_seed";
const EPOCH: &str = "meta.epoch";
const STEPS: &str = "adam.steps";

/// Parameters, optimizer moments, config text and RNG seed in one checkpoint.
pub fn training_checkpoint(model: &ManModel, adam: &AdamState, config: &RunConfig, epoch: usize) -> Checkpoint {
    let mut c = Checkpoint::new();
    let store = &model.params;
    for id in store.ids() {
        c.insert(store.name(id), store.get(id).clone());
    }
    for id in store.ids() {
        c.insert(format!("adam.m.{}", store.name(id)), adam.m[id.index()].clone());
        c.insert(format!("adam.v.{}", store.name(id)), adam.v[id.index()].clone());
    }
    let steps: Vec<f64> = adam.steps.iter().map(|&s| s as f64).collect();
    c.insert(STEPS, Tensor::new(vec![steps.len()], steps).expect("model has parameters"));
    c.insert_u64(SEED, config.train.seed);
    c.insert_u64(EPOCH, epoch as u64);
    c.insert_text(CONFIG, &config.to_text());
    c
}

pub fn save_checkpoint(path: &Path, model: &ManModel, adam: &AdamState, config: &RunConfig, epoch: usize) -> Result<()> {
    training_checkpoint(model, adam, config, epoch).save(path)
}

#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub config: RunConfig,
    pub model: ManModel,
    pub optimizer: AdamState,
    pub seed: u64,
    pub epoch: usize,
}

impl LoadedCheckpoint {
    /// Rebuilds the model described by `ckpt` over `vocab`, auditing every
    /// parameter's name and shape.
    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: &Vocabularies) -> Result<Self> {
        let config = RunConfig::parse(&ckpt.text(CONFIG)?)?;
        let mut params = ParamStore::new();
        for (name, t) in ckpt.entries() {
            if !name.starts_with("adam.") && !name.starts_with("meta.") {
                params.register(name.clone(), Owner::Shared, t.clone())?;
            }
        }
        let model = ManModel::with_params(config.model, vocab, params)?;
        let mut optimizer = AdamState::new(&model.params);
        for id in model.params.ids() {
            let name = model.params.name(id);
            for (slot, prefix) in [(&mut optimizer.m, "adam.m."), (&mut optimizer.v, "adam.v.")] {
                let t = ckpt.require(&format!("{prefix}{name}"))?;
                if t.shape() != model.params.get(id).shape() {
                    return Err(Error::Checkpoint(format!("optimizer state for {name} has shape {:?}", t.shape())));
                }
                slot[id.index()] = t.clone();
            }
        }
        let steps = ckpt.require(STEPS)?;
        if steps.len() != model.params.len() {
            return Err(Error::Checkpoint("optimizer step counts do not match parameters".into()));
        }
        optimizer.steps = steps.data().iter().map(|&s| s as u64).collect();
        Ok(Self {
            config,
            model,
            optimizer,
            seed: ckpt.u64(SEED)?,
            epoch: ckpt.u64(EPOCH)? as usize,
        })
    }
}

pub fn load_checkpoint(path: &Path, vocab: &Vocabularies) -> Result<LoadedCheckpoint> {
    LoadedCheckpoint::from_checkpoint(&Checkpoint::load(path)?, vocab)
}
