use super::kcore::apply_k_core;
use super::records::{Domain, InteractionRecord};
use super::sampling::InteractionIndex;
use super::sequences::{build_sequences, SequenceExample};
use super::vocab::Vocabularies;
use crate::error::{Error, Result};

/// Train/validation/test examples of one domain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitParts {
    pub train: Vec<SequenceExample>,
    pub validation: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "validation" | "val" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl SplitParts {
    pub fn get(&self, kind: SplitKind) -> &[SequenceExample] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &SequenceExample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Assigns examples by target timestamp: `< val_boundary` → train,
/// `< test_boundary` → validation, otherwise test.
pub fn chronological_split(examples: &[SequenceExample], val_boundary: i64, test_boundary: i64) -> Result<SplitParts> {
    if val_boundary >= test_boundary {
        return Err(Error::InvalidArgument(format!(
            "validation boundary {val_boundary} must precede test boundary {test_boundary}"
        )));
    }
    let mut parts = SplitParts::default();
    for ex in examples {
        let bucket = if ex.timestamp < val_boundary {
            &mut parts.train
        } else if ex.timestamp < test_boundary {
            &mut parts.validation
        } else {
            &mut parts.test
        };
        bucket.push(ex.clone());
    }
    Ok(parts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitOptions {
    pub k_core: usize,
    pub max_len: usize,
    pub val_boundary: i64,
    pub test_boundary: i64,
}

/// Both domains' chronological splits plus vocabularies.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub a: SplitParts,
    pub b: SplitParts,
    pub vocab: Vocabularies,
    pub max_len: usize,
    pub val_boundary: i64,
    pub test_boundary: i64,
    interacted: InteractionIndex,
}

impl DatasetSplit {
    /// Filters, sequences and splits raw records from both domains.
    pub fn from_records(records: &[InteractionRecord], opts: SplitOptions) -> Result<Self> {
        if opts.k_core == 0 || opts.max_len == 0 {
            return Err(Error::InvalidArgument("k-core and max length must be positive".into()));
        }
        let filtered = apply_k_core(records, opts.k_core);
        let vocab = Vocabularies::from_records(&filtered);
        let mut parts = [SplitParts::default(), SplitParts::default()];
        for d in Domain::BOTH {
            let recs: Vec<_> = filtered.iter().filter(|r| r.domain == d).cloned().collect();
            let seqs = build_sequences(&recs, vocab.local(d), opts.max_len)?;
            parts[d.index()] = chronological_split(&seqs, opts.val_boundary, opts.test_boundary)?;
        }
        let [a, b] = parts;
        Ok(Self::from_parts(a, b, vocab, opts.max_len, opts.val_boundary, opts.test_boundary))
    }

    pub fn from_parts(
        a: SplitParts,
        b: SplitParts,
        vocab: Vocabularies,
        max_len: usize,
        val_boundary: i64,
        test_boundary: i64,
    ) -> Self {
        let interacted = InteractionIndex::from_examples(a.iter_all().chain(b.iter_all()));
        Self {
            a,
            b,
            vocab,
            max_len,
            val_boundary,
            test_boundary,
            interacted,
        }
    }

    pub fn domain(&self, d: Domain) -> &SplitParts {
        match d {
            Domain::A => &self.a,
            Domain::B => &self.b,
        }
    }

    pub fn interacted(&self) -> &InteractionIndex {
        &self.interacted
    }
}
