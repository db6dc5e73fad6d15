use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{adam_step, AdamConfig, AdamState};
use crate::data::{context_groups, sample_negatives, DatasetSplit, Domain, InteractionIndex, SequenceExample};
use crate::error::{Error, Result};
use crate::metrics::{DomainMetrics, MetricsReport, ScoredExample};
use crate::model::{ManModel, ModelConfig};
use crate::numerics::{Gradients, Graph, Owner};
use crate::prediction::LossBreakdown;

/// Which objectives drive the optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateMode {
    /// One step per batch pair on the combined objective.
    #[default]
    Joint,
    /// Separate steps on each domain's objective, A then B.
    Alternating,
    /// Only domain A's objective.
    SingleA,
    /// Only domain B's objective.
    SingleB,
}

impl UpdateMode {
    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::Joint => "joint",
            UpdateMode::Alternating => "alternating",
            UpdateMode::SingleA => "single_a",
            UpdateMode::SingleB => "single_b",
        }
    }

    pub fn active_domains(self) -> &'static [Domain] {
        match self {
            UpdateMode::Joint | UpdateMode::Alternating => &Domain::BOTH,
            UpdateMode::SingleA => &[Domain::A],
            UpdateMode::SingleB => &[Domain::B],
        }
    }
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(UpdateMode::Joint),
            "alternating" => Ok(UpdateMode::Alternating),
            "single_a" => Ok(UpdateMode::SingleA),
            "single_b" => Ok(UpdateMode::SingleB),
            other => Err(Error::Config(format!("unknown update mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_g: f64,
    /// Positives (each with its negatives) per domain per step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub neg_ratio: usize,
    pub update_mode: UpdateMode,
    /// Validation metric averaged over active domains for early stopping.
    pub early_stop_metric: String,
    pub eval_negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lambda_a: 1e-5,
            lambda_b: 1e-5,
            lambda_g: 1e-4,
            batch_size: 64,
            max_epochs: 20,
            patience: 2,
            neg_ratio: 1,
            update_mode: UpdateMode::Joint,
            early_stop_metric: "auc".into(),
            eval_negatives: 49,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adam.lr <= 0.0 || self.adam.eps <= 0.0 {
            return Err(Error::Config("learning rate and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.lambda_a < 0.0 || self.lambda_b < 0.0 || self.lambda_g < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 || self.patience == 0 || self.neg_ratio == 0 || self.eval_negatives == 0 {
            return Err(Error::Config("batch size, patience and negative counts must be positive".into()));
        }
        if !DomainMetrics::NAMES.contains(&self.early_stop_metric.as_str()) {
            return Err(Error::Config(format!("unknown early-stop metric {:?}", self.early_stop_metric)));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> [f64; 3] {
        [self.lambda_a, self.lambda_b, self.lambda_g]
    }
}

/// Mixes a base seed with a purpose tag into an independent stream seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        x = x.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

const TAG_TRAIN: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_VALIDATION: u64 = 3;
const TAG_TEST: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub domain: Domain,
    pub split: &'static str,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,domain,split,metric,value\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.domain.tag(), r.split, r.metric, r.value));
        }
        s
    }

    pub fn value(&self, epoch: usize, domain: Domain, split: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.domain == domain && r.split == split && r.metric == metric)
            .map(|r| r.value)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (or the initialization).
    pub model: ManModel,
    pub optimizer: AdamState,
    pub log: TrainingLog,
    /// Zero when no epoch improved on nothing, i.e. no training happened.
    pub best_epoch: usize,
    pub best_validation: Option<f64>,
    pub epochs_run: usize,
}

/// Positives paired with sampled negatives for ranking evaluation.
pub fn eval_candidates(
    examples: &[SequenceExample],
    vocab_len: usize,
    interacted: &InteractionIndex,
    negatives: usize,
    seed: u64,
) -> Result<Vec<SequenceExample>> {
    let positives: Vec<SequenceExample> = examples.iter().filter(|e| e.label == 1).cloned().collect();
    sample_negatives(&positives, vocab_len, interacted, negatives, seed)
}

/// Fixed candidate sets for one split of one domain, seeded by purpose.
pub fn split_candidates(split: &DatasetSplit, domain: Domain, test: bool, cfg: &TrainConfig) -> Result<Vec<SequenceExample>> {
    let parts = split.domain(domain);
    let (examples, tag) = match test {
        true => (&parts.test, TAG_TEST),
        false => (&parts.validation, TAG_VALIDATION),
    };
    let seed = derive_seed(cfg.seed, &[tag, domain.index() as u64]);
    eval_candidates(examples, split.vocab.local(domain).len(), split.interacted(), cfg.eval_negatives, seed)
}

/// Scores candidate sets and computes all ranking metrics.
pub fn evaluate(model: &ManModel, candidates: &[SequenceExample]) -> Result<DomainMetrics> {
    let scores = model.predict_examples(candidates)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (g, range) in context_groups(candidates).into_iter().enumerate() {
        for i in range {
            scored.push(ScoredExample {
                user_id: candidates[i].user_id.clone(),
                score: scores[i],
                label: candidates[i].label,
                group: g,
            });
        }
    }
    DomainMetrics::compute(&scored)
}

/// Evaluates every domain that has candidates.
pub fn evaluate_report(model: &ManModel, candidates: &[Vec<SequenceExample>; 2]) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for d in Domain::BOTH {
        if !candidates[d.index()].is_empty() {
            report.domains[d.index()] = Some(evaluate(model, &candidates[d.index()])?);
        }
    }
    Ok(report)
}

fn epoch_batches(split: &DatasetSplit, domain: Domain, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<SequenceExample>>> {
    let train = &split.domain(domain).train;
    let seed = derive_seed(cfg.seed, &[TAG_TRAIN, domain.index() as u64, epoch as u64]);
    let with_negs = sample_negatives(train, split.vocab.local(domain).len(), split.interacted(), cfg.neg_ratio, seed)?;
    let mut groups = context_groups(&with_negs);
    let shuffle = derive_seed(cfg.seed, &[TAG_SHUFFLE, domain.index() as u64, epoch as u64]);
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
    Ok(groups
        .chunks(cfg.batch_size)
        .map(|chunk| chunk.iter().flat_map(|r| with_negs[r.clone()].iter().cloned()).collect())
        .collect())
}

/// Runs one optimizer step on the given batches; an empty batch removes that
/// domain's objective and freezes its exclusive parameters for this step.
pub fn train_step(
    model: &mut ManModel,
    adam: &mut AdamState,
    grads: &mut Gradients,
    cfg: &TrainConfig,
    a: &[SequenceExample],
    b: &[SequenceExample],
) -> Result<LossBreakdown> {
    grads.zero();
    let losses = {
        let mut g = Graph::with_params(&model.params);
        let vars = model.objective(&mut g, a, b, cfg.lambda_a, cfg.lambda_b, cfg.lambda_g)?;
        let values = vars.values(&g);
        if !values.total.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        g.backward_into(vars.total, grads)?;
        values
    };
    let (use_a, use_b) = (!a.is_empty(), !b.is_empty());
    let active = |o: Owner| match o {
        Owner::A => use_a,
        Owner::B => use_b,
        Owner::Shared => true,
    };
    let padding = model.padding_tables();
    adam_step(&mut model.params, grads, adam, &cfg.adam, active, &padding)?;
    Ok(losses)
}

/// Trains a freshly initialized model.
pub fn train(model_config: &ModelConfig, cfg: &TrainConfig, split: &DatasetSplit) -> Result<TrainOutcome> {
    if model_config.max_len != split.max_len {
        return Err(Error::Config(format!(
            "model max length {} differs from dataset max length {}",
            model_config.max_len, split.max_len
        )));
    }
    let model = ManModel::new(*model_config, &split.vocab, derive_seed(cfg.seed, &[0]))?;
    train_model(model, cfg, split)
}

/// Epoch loop with per-epoch validation and early stopping; returns the
/// best-validation parameters.
pub fn train_model(mut model: ManModel, cfg: &TrainConfig, split: &DatasetSplit) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut adam = AdamState::new(&model.params);
    let mut log = TrainingLog::default();
    let active = cfg.update_mode.active_domains();
    let mut outcome = TrainOutcome {
        model: model.clone(),
        optimizer: adam.clone(),
        log: TrainingLog::default(),
        best_epoch: 0,
        best_validation: None,
        epochs_run: 0,
    };
    if cfg.max_epochs == 0 {
        return Ok(outcome);
    }
    let mut validation: [Vec<SequenceExample>; 2] = Default::default();
    for &d in active {
        if split.domain(d).train.is_empty() {
            return Err(Error::Data(format!("domain {d} has no training examples")));
        }
        validation[d.index()] = split_candidates(split, d, false, cfg)?;
        if validation[d.index()].is_empty() {
            return Err(Error::Data(format!("domain {d} has no validation examples")));
        }
    }
    let mut grads = Gradients::zeros_like(&model.params);
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut batches: [Vec<Vec<SequenceExample>>; 2] = Default::default();
        for &d in active {
            batches[d.index()] = epoch_batches(split, d, cfg, epoch)?;
        }
        let steps = batches.iter().map(Vec::len).max().unwrap_or(0);
        let mut loss_sum = [0.0; 2];
        let mut loss_count = [0usize; 2];
        let mut record = |l: &LossBreakdown, a: bool, b: bool| {
            if a {
                loss_sum[0] += l.l_a;
                loss_count[0] += 1;
            }
            if b {
                loss_sum[1] += l.l_b;
                loss_count[1] += 1;
            }
        };
        for i in 0..steps {
            let a = batches[0].get(i).map_or(&[][..], |v| &v[..]);
            let b = batches[1].get(i).map_or(&[][..], |v| &v[..]);
            let step = |model: &mut ManModel, adam: &mut AdamState, grads: &mut Gradients, a, b| {
                train_step(model, adam, grads, cfg, a, b).map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, step {}", i + 1)),
                    other => other,
                })
            };
            match cfg.update_mode {
                UpdateMode::Alternating => {
                    if !a.is_empty() {
                        let l = step(&mut model, &mut adam, &mut grads, a, &[])?;
                        record(&l, true, false);
                    }
                    if !b.is_empty() {
                        let l = step(&mut model, &mut adam, &mut grads, &[], b)?;
                        record(&l, false, true);
                    }
                }
                _ => {
                    let l = step(&mut model, &mut adam, &mut grads, a, b)?;
                    record(&l, !a.is_empty(), !b.is_empty());
                }
            }
        }
        for &d in active {
            let k = d.index();
            log.rows.push(LogRow {
                epoch,
                domain: d,
                split: "train",
                metric: "loss".into(),
                value: loss_sum[k] / loss_count[k].max(1) as f64,
            });
        }
        let report = evaluate_report(&model, &validation)?;
        let mut score = 0.0;
        for &d in active {
            let m = report.get(d).expect("validated domain");
            for (name, v) in DomainMetrics::NAMES.iter().zip(m.values()) {
                log.rows.push(LogRow {
                    epoch,
                    domain: d,
                    split: "validation",
                    metric: name.to_string(),
                    value: v,
                });
            }
            score += m.get(&cfg.early_stop_metric).expect("validated metric");
        }
        score /= active.len() as f64;
        log::info!("epoch {epoch}: validation {} {score:.4}", cfg.early_stop_metric);
        outcome.epochs_run = epoch;
        if outcome.best_validation.map_or(true, |best| score > best) {
            outcome.best_validation = Some(score);
            outcome.best_epoch = epoch;
            outcome.model = model.clone();
            outcome.optimizer = adam.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    outcome.log = log;
    Ok(outcome)
}
