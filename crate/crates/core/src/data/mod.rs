//! Interaction logs, sequence construction, negative sampling, chronological
//! splits, and synthetic dual-domain data.

mod kcore;
mod records;
mod sampling;
mod sequences;
mod split;
pub mod synth;
mod vocab;

pub use kcore::apply_k_core;
pub use records::{load_interactions, write_interactions, Domain, InteractionRecord};
pub use sampling::{context_groups, sample_negatives, InteractionIndex};
pub use sequences::{build_sequences, SequenceExample};
pub use split::{chronological_split, DatasetSplit, SplitKind, SplitOptions, SplitParts};
pub use synth::{synth_generate, write_synth, SynthConfig, SynthData};
pub use vocab::{Vocab, Vocabularies, PAD};
