//! Assembly of embeddings, encoders, attention modules and heads into one
//! trainable model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{context_groups, Domain, SequenceExample, Vocabularies};
use crate::embeddings::{EmbeddingDims, EmbeddingTables};
use crate::encoders::{make_global_encoder, make_local_encoders, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::layers::{register_xavier, Mlp};
use crate::mixed_attention::{
    disentangle_loss, group_aggregate, group_pool, group_weight, item_similarity_pooled, sequence_fusion,
    GroupAttention, ItemSimilarity, SequenceFusion,
};
use crate::numerics::{Activation, Graph, Owner, ParamId, ParamStore, Var};
use crate::prediction::{
    domain_loss, head_logits, pool_representations, predict, total_loss, LossVars, ModuleOutputs, Pooling,
    PredictionInputs,
};

/// Which parts of the architecture are built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    /// Local and global paths with the mixed attention modules.
    #[default]
    Cross,
    /// Each domain trains its own local encoder and head.
    Single,
    /// One shared encoder and head serve both domains.
    Shared,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cross => "cross",
            Mode::Single => "single",
            Mode::Shared => "shared",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Mode::Cross),
            "single" => Ok(Mode::Single),
            "shared" => Ok(Mode::Shared),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Switches for the three attention modules (cross mode only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub isa: bool,
    pub sfa: bool,
    pub gpa: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        isa: true,
        sfa: true,
        gpa: true,
    };

    /// The four rows of an ablation study: each module removed, then all on.
    pub const STUDY: [(&'static str, Ablation); 4] = [
        ("wo_isa", Ablation { isa: false, ..Self::FULL }),
        ("wo_sfa", Ablation { sfa: false, ..Self::FULL }),
        ("wo_gpa", Ablation { gpa: false, ..Self::FULL }),
        ("w_all", Self::FULL),
    ];

    pub const NONE: Ablation = Ablation {
        isa: false,
        sfa: false,
        gpa: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub encoder: EncoderConfig,
    pub item_dim: usize,
    pub domain_dim: usize,
    pub max_len: usize,
    pub n_groups: usize,
    pub ablation: Ablation,
    pub isa_hidden: usize,
    pub mlp_hidden: usize,
    pub head_hidden: usize,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cross,
            encoder: EncoderConfig::default(),
            item_dim: 16,
            domain_dim: 4,
            max_len: 10,
            n_groups: 5,
            ablation: Ablation::FULL,
            isa_hidden: 16,
            mlp_hidden: 20,
            head_hidden: 32,
            pooling: Pooling::Sum,
        }
    }
}

impl ModelConfig {
    pub fn width(&self) -> usize {
        self.item_dim + self.domain_dim
    }

    /// Attention switches that actually apply under the current mode.
    pub fn effective_ablation(&self) -> Ablation {
        match self.mode {
            Mode::Cross => self.ablation,
            _ => Ablation::NONE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("item_dim", self.item_dim),
            ("domain_dim", self.domain_dim),
            ("max_len", self.max_len),
            ("n_groups", self.n_groups),
            ("isa_hidden", self.isa_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("head_hidden", self.head_hidden),
            ("encoder.layers", self.encoder.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-domain modules; absent ones are disabled by the config.
#[derive(Clone, Debug, Default)]
pub struct DomainModules {
    pub encoder: Option<Encoder>,
    pub isa: Option<ItemSimilarity>,
    pub sfa: Option<SequenceFusion>,
    pub gpa: Option<GroupAttention>,
    pub head: Option<Mlp>,
}

/// Everything computed from one history that does not depend on the target.
#[derive(Clone, Debug)]
pub struct HistoryState {
    pub domain: Domain,
    pub mask: Vec<bool>,
    pub e_local: Option<Var>,
    pub e_global: Option<Var>,
    /// `N_g×W` weighted group representations, when group attention is on.
    pub groups: Option<Var>,
    pub pooled: PredictionInputs,
}

#[derive(Clone, Debug)]
pub struct ManModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub embeddings: EmbeddingTables,
    pub domains: [DomainModules; 2],
    pub global_encoder: Option<Encoder>,
    pub global_head: Option<Mlp>,
    pub prototypes: Option<ParamId>,
    to_global: [Vec<usize>; 2],
}

fn owner(d: Domain) -> Owner {
    match d {
        Domain::A => Owner::A,
        Domain::B => Owner::B,
    }
}

/// Independent init stream per module, so ablated variants share the
/// initial values of every module they keep.
fn module_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let h = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

impl ManModel {
    /// Builds and initializes a model for the given vocabularies.
    pub fn new(config: ModelConfig, vocab: &Vocabularies, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = |name: &str| module_rng(seed, name);
        let mut store = ParamStore::new();
        let w = config.width();
        let local = config.mode != Mode::Shared;
        let global = config.mode != Mode::Single;
        let ab = config.effective_ablation();
        let dims = EmbeddingDims {
            item_dim: config.item_dim,
            domain_dim: config.domain_dim,
            max_len: config.max_len,
        };
        let embeddings = EmbeddingTables::new(
            &mut store,
            dims,
            local.then(|| [vocab.a.len(), vocab.b.len()]),
            global.then(|| vocab.global.len()),
            &mut rng("embeddings"),
        )?;
        let mut domains: [DomainModules; 2] = Default::default();
        if local {
            let [ea, eb] = make_local_encoders(&mut store, config.encoder, w, &mut rng("local.encoder"))?;
            domains[0].encoder = Some(ea);
            domains[1].encoder = Some(eb);
        }
        let global_encoder = match global {
            true => Some(make_global_encoder(&mut store, config.encoder, w, &mut rng("global.encoder"))?),
            false => None,
        };
        for d in Domain::BOTH {
            let (tag, own) = (d.tag(), owner(d));
            let m = &mut domains[d.index()];
            if ab.isa {
                m.isa = Some(ItemSimilarity::new(&mut store, &format!("{tag}.isa"), own, w, config.isa_hidden, &mut rng(&format!("{tag}.isa")))?);
            }
            if ab.sfa {
                m.sfa = Some(SequenceFusion::new(&mut store, &format!("{tag}.sfa"), own, w, config.mlp_hidden, &mut rng(&format!("{tag}.sfa")))?);
            }
            if ab.gpa {
                m.gpa = Some(GroupAttention::new(
                    &mut store,
                    &format!("{tag}.gpa"),
                    own,
                    w,
                    config.n_groups,
                    config.max_len,
                    config.mlp_hidden,
                    &mut rng(&format!("{tag}.gpa")),
                )?);
            }
        }
        let prototypes = match ab.gpa {
            true => Some(register_xavier(&mut store, "shared.prototypes", Owner::Shared, &[config.n_groups, w], &mut rng("shared.prototypes"))?),
            false => None,
        };
        if local {
            let inputs = [ab.isa, ab.sfa, ab.gpa].iter().filter(|&&on| on).count() + 2;
            for d in Domain::BOTH {
                domains[d.index()].head = Some(Mlp::new(
                    &mut store,
                    &format!("{}.head", d.tag()),
                    owner(d),
                    &[inputs * w, config.head_hidden, 1],
                    Activation::Identity,
                    &mut rng(&format!("{}.head", d.tag())),
                )?);
            }
        }
        let global_head = match global {
            true => Some(Mlp::new(
                &mut store,
                "global.head",
                Owner::Shared,
                &[2 * w, config.head_hidden, 1],
                Activation::Identity,
                &mut rng("global.head"),
            )?),
            false => None,
        };
        Ok(Self {
            config,
            params: store,
            embeddings,
            domains,
            global_encoder,
            global_head,
            prototypes,
            to_global: [vocab.global_map(Domain::A).to_vec(), vocab.global_map(Domain::B).to_vec()],
        })
    }

    /// Rebuilds the architecture and installs `params`, checking that every
    /// name and shape matches.
    pub fn with_params(config: ModelConfig, vocab: &Vocabularies, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, vocab, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let loaded = params
                .by_name(&name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
            if loaded.shape() != model.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    loaded.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = loaded.clone();
        }
        Ok(model)
    }

    /// Every parameter with its owner, in registration order.
    pub fn ownership(&self) -> Vec<(ParamId, Owner)> {
        self.params.ids().map(|id| (id, self.params.owner(id))).collect()
    }

    /// Item tables whose padding row stays zero.
    pub fn padding_tables(&self) -> Vec<ParamId> {
        self.embeddings.item_table_ids()
    }

    pub fn global_index(&self, domain: Domain, local: usize) -> Result<usize> {
        self.to_global[domain.index()]
            .get(local)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("item {local} outside domain {domain} vocabulary")))
    }

    fn globals(&self, domain: Domain, items: &[usize]) -> Result<Vec<usize>> {
        items.iter().map(|&i| self.global_index(domain, i)).collect()
    }

    /// Runs the target-independent part of the model on one history.
    pub fn encode_history(&self, g: &mut Graph<'_>, domain: Domain, history: &[usize], mask: &[bool]) -> Result<HistoryState> {
        if history.len() != mask.len() {
            return Err(Error::Shape(format!("history length {} with mask length {}", history.len(), mask.len())));
        }
        let m = &self.domains[domain.index()];
        let mut out = ModuleOutputs::default();
        let mut state = HistoryState {
            domain,
            mask: mask.to_vec(),
            e_local: None,
            e_global: None,
            groups: None,
            pooled: PredictionInputs::default(),
        };
        if let Some(enc) = &m.encoder {
            let e = self.embeddings.embed_local(g, history, domain)?;
            state.e_local = Some(e);
            out.local = Some(enc.encode(g, e, mask)?);
        }
        if let Some(enc) = &self.global_encoder {
            let gh = self.globals(domain, history)?;
            let e = self.embeddings.embed_global(g, &gh, domain)?;
            state.e_global = Some(e);
            out.global = Some(enc.encode(g, e, mask)?);
        }
        if let (Some(sfa), Some(sl), Some(sg)) = (&m.sfa, out.local, out.global) {
            out.fusion = Some(sequence_fusion(g, sfa, sl, sg, mask)?);
        }
        if let (Some(gpa), Some(sl), Some(p)) = (&m.gpa, out.local, self.prototypes) {
            let c = group_pool(g, gpa, sl, mask)?;
            let protos = g.param(p);
            let dom = group_aggregate(g, gpa, protos, sl, mask)?;
            out.groups = Some(group_weight(g, c, dom)?);
            state.groups = out.groups;
        }
        state.pooled = pool_representations(g, &out, mask, self.config.pooling)?;
        Ok(state)
    }

    /// `n×1` summed head logits for candidate targets (local indices).
    pub fn score_targets(&self, g: &mut Graph<'_>, state: &HistoryState, targets: &[usize]) -> Result<Var> {
        let d = state.domain;
        let m = &self.domains[d.index()];
        let global_targets = match self.global_head.is_some() || m.isa.is_some() {
            true => Some(self.embeddings.global_targets(g, &self.globals(d, targets)?, d)?),
            false => None,
        };
        let mut logits = Vec::with_capacity(2);
        if let Some(head) = &m.head {
            let mut parts = Vec::with_capacity(5);
            if let (Some(isa), Some(el), Some(eg), Some(tg)) = (&m.isa, state.e_local, state.e_global, global_targets) {
                let e_i = item_similarity_pooled(g, isa, tg, el, eg, &state.mask)?;
                parts.push(match self.config.pooling {
                    Pooling::Sum => e_i,
                    Pooling::Mean => {
                        let real = state.mask.iter().filter(|&&x| x).count().max(1);
                        g.scale(e_i, 1.0 / real as f64)
                    }
                });
            }
            let p = &state.pooled;
            parts.extend([p.s_s, p.g_u, p.s_loc].into_iter().flatten());
            parts.push(self.embeddings.local_targets(g, targets, d)?);
            logits.push(head_logits(g, head, &parts)?);
        }
        if let (Some(head), Some(sg), Some(tg)) = (&self.global_head, state.pooled.s_glob, global_targets) {
            logits.push(head_logits(g, head, &[sg, tg])?);
        }
        let mut total = logits[0];
        for &l in &logits[1..] {
            total = g.add(total, l)?;
        }
        Ok(total)
    }

    /// Mean cross-entropy over `examples` (all of one domain). Consecutive
    /// examples sharing a history are encoded once.
    pub fn domain_objective(&self, g: &mut Graph<'_>, examples: &[SequenceExample]) -> Result<Var> {
        let mut probs = Vec::new();
        let mut labels = Vec::with_capacity(examples.len());
        for range in context_groups(examples) {
            let group = &examples[range];
            let head = &group[0];
            let state = self.encode_history(g, head.domain, &head.history, &head.mask)?;
            let targets: Vec<usize> = group.iter().map(|e| e.target).collect();
            let logits = self.score_targets(g, &state, &targets)?;
            probs.push(predict(g, &[logits])?);
            labels.extend(group.iter().map(|e| e.label));
        }
        if probs.is_empty() {
            return Err(Error::InvalidArgument("objective over no examples".into()));
        }
        let probs = if probs.len() == 1 { probs[0] } else { g.concat_rows(&probs)? };
        domain_loss(g, probs, &labels)
    }

    /// The full objective over batches from either or both domains. An empty
    /// batch drops that domain's loss and regularizer.
    pub fn objective(
        &self,
        g: &mut Graph<'_>,
        a: &[SequenceExample],
        b: &[SequenceExample],
        lambda_a: f64,
        lambda_b: f64,
        lambda_g: f64,
    ) -> Result<LossVars> {
        let l_a = match a.is_empty() {
            true => None,
            false => Some(self.domain_objective(g, a)?),
        };
        let l_b = match b.is_empty() {
            true => None,
            false => Some(self.domain_objective(g, b)?),
        };
        let l_g = match self.prototypes {
            Some(p) => {
                let v = g.param(p);
                Some(disentangle_loss(g, v, lambda_g)?)
            }
            None => None,
        };
        total_loss(g, l_a, l_b, &self.ownership(), lambda_a, lambda_b, l_g)
    }

    /// Objective restricted to one domain's batch.
    pub fn single_domain_objective(
        &self,
        g: &mut Graph<'_>,
        domain: Domain,
        examples: &[SequenceExample],
        lambdas: [f64; 3],
    ) -> Result<LossVars> {
        match domain {
            Domain::A => self.objective(g, examples, &[], lambdas[0], lambdas[1], lambdas[2]),
            Domain::B => self.objective(g, &[], examples, lambdas[0], lambdas[1], lambdas[2]),
        }
    }

    /// Click probabilities for each example, encoding shared histories once.
    pub fn predict_examples(&self, examples: &[SequenceExample]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(examples.len());
        for range in context_groups(examples) {
            let group = &examples[range];
            let targets: Vec<usize> = group.iter().map(|e| e.target).collect();
            out.extend(self.score_candidates(group[0].domain, &group[0].history, &group[0].mask, &targets)?);
        }
        Ok(out)
    }

    /// Click probabilities of `targets` after one history.
    pub fn score_candidates(&self, domain: Domain, history: &[usize], mask: &[bool], targets: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::inference(&self.params);
        let state = self.encode_history(&mut g, domain, history, mask)?;
        let logits = self.score_targets(&mut g, &state, targets)?;
        let p = predict(&mut g, &[logits])?;
        Ok(g.value(p).data().to_vec())
    }

    /// Pooled `1×W` group representation for one history, if the model has
    /// group attention.
    pub fn group_representation(&self, domain: Domain, history: &[usize], mask: &[bool]) -> Result<Option<Vec<f64>>> {
        let mut g = Graph::inference(&self.params);
        let state = self.encode_history(&mut g, domain, history, mask)?;
        Ok(state.pooled.g_u.map(|v| g.value(v).data().to_vec()))
    }
}
