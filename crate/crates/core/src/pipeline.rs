//! End-to-end commands: dataset preparation, synthesis, training,
//! evaluation, ablation and group-number sweeps, and analysis export.
//!
//! A prepared dataset directory holds `dataset.conf`, `vocab_{a,b}.txt` and
//! `{train,validation,test}_{a,b}.tsv`. Split rows are
//! `user_id \t target \t label \t timestamp \t history`, with the history as
//! space-separated item ids, oldest first.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{export_csv, export_group_representations, group_alignment_score, kmeans, pca_2d, projection_csv, write_text};
use crate::config::{KeyValues, RunConfig, SynthSettings};
use crate::data::synth::{load_groups, SYNTH_TEST_BOUNDARY, SYNTH_VAL_BOUNDARY};
use crate::data::{
    load_interactions, synth_generate, write_synth, DatasetSplit, Domain, SequenceExample, SplitKind, SplitOptions,
    SplitParts, Vocab, Vocabularies,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Ablation, ModelConfig};
use crate::training::{evaluate_report, load_checkpoint, save_checkpoint, split_candidates, train, LoadedCheckpoint, TrainConfig, TrainOutcome};

pub const DATASET_CONF: &str = "dataset.conf";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.conf";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const GROUPS_FILE: &str = "groups.tsv";
pub const KMEANS_MAX_ITER: usize = 300;

const SPLITS: [SplitKind; 3] = [SplitKind::Train, SplitKind::Validation, SplitKind::Test];

fn split_file(kind: SplitKind, d: Domain) -> String {
    format!("{}_{}.tsv", kind.name(), d.tag())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_examples(path: &Path, examples: &[SequenceExample], vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        let hist: Vec<&str> = ex.real_history().iter().map(|&i| vocab.id(i)).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            ex.user_id,
            vocab.id(ex.target),
            ex.label,
            ex.timestamp,
            hist.join(" ")
        );
    }
    write_text(path, &out)
}

fn read_examples(path: &Path, domain: Domain, vocab: &Vocab, max_len: usize) -> Result<Vec<SequenceExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |msg: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 tab-separated fields, got {}", f.len())));
        }
        let item = |id: &str| vocab.get(id).ok_or_else(|| err(format!("item {id:?} missing from vocabulary")));
        let target = item(f[1])?;
        let label = match f[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label {other:?} is not 0 or 1"))),
        };
        let timestamp = f[3].parse().map_err(|_| err(format!("timestamp {:?} is not an integer", f[3])))?;
        let history = f[4].split_whitespace().map(item).collect::<Result<Vec<_>>>()?;
        if history.len() > max_len {
            return Err(err(format!("history of {} items exceeds max length {max_len}", history.len())));
        }
        out.push(SequenceExample::new(f[0], domain, &history, max_len, target, label, timestamp));
    }
    Ok(out)
}

/// Writes a split in the prepared-dataset layout.
pub fn write_dataset(dir: &Path, split: &DatasetSplit, k_core: usize) -> Result<()> {
    create_dir(dir)?;
    for d in Domain::BOTH {
        let vocab = split.vocab.local(d);
        write_text(&dir.join(format!("vocab_{}.txt", d.tag())), &(vocab.items().join("\n") + "\n"))?;
        for kind in SPLITS {
            write_examples(&dir.join(split_file(kind, d)), split.domain(d).get(kind), vocab)?;
        }
    }
    let conf = format!(
        "max_len = {}\nval_boundary = {}\ntest_boundary = {}\nk_core = {k_core}\n",
        split.max_len, split.val_boundary, split.test_boundary
    );
    write_text(&dir.join(DATASET_CONF), &conf)
}

/// Reads a prepared dataset directory.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let conf_path = dir.join(DATASET_CONF);
    let text = fs::read_to_string(&conf_path).map_err(|e| Error::io(&conf_path, e))?;
    let (mut max_len, mut val, mut test) = (None, None, None);
    for (k, v, line) in KeyValues::parse(&text)?.entries {
        let bad = || Error::Parse {
            path: conf_path.clone(),
            line,
            msg: format!("{k} = {v:?} is not an integer"),
        };
        match k.as_str() {
            "max_len" => max_len = Some(v.parse::<usize>().map_err(|_| bad())?),
            "val_boundary" => val = Some(v.parse::<i64>().map_err(|_| bad())?),
            "test_boundary" => test = Some(v.parse::<i64>().map_err(|_| bad())?),
            "k_core" => {}
            _ => {
                return Err(Error::Parse {
                    path: conf_path.clone(),
                    line,
                    msg: format!("unknown key {k}"),
                })
            }
        }
    }
    let (Some(max_len), Some(val), Some(test)) = (max_len, val, test) else {
        return Err(Error::Config(format!("{}: max_len, val_boundary and test_boundary are required", conf_path.display())));
    };
    let read_vocab = |d: Domain| -> Result<Vocab> {
        let p = dir.join(format!("vocab_{}.txt", d.tag()));
        let t = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Vocab::from_ids(t.lines().map(str::trim).filter(|l| !l.is_empty())))
    };
    let vocab = Vocabularies::new(read_vocab(Domain::A)?, read_vocab(Domain::B)?);
    let mut parts = [SplitParts::default(), SplitParts::default()];
    for d in Domain::BOTH {
        let p = &mut parts[d.index()];
        p.train = read_examples(&dir.join(split_file(SplitKind::Train, d)), d, vocab.local(d), max_len)?;
        p.validation = read_examples(&dir.join(split_file(SplitKind::Validation, d)), d, vocab.local(d), max_len)?;
        p.test = read_examples(&dir.join(split_file(SplitKind::Test, d)), d, vocab.local(d), max_len)?;
    }
    let [a, b] = parts;
    Ok(DatasetSplit::from_parts(a, b, vocab, max_len, val, test))
}

#[derive(Clone, Debug)]
pub struct PrepareArgs {
    pub input_a: PathBuf,
    pub input_b: PathBuf,
    pub k_core: usize,
    pub max_len: usize,
    pub val_ts: i64,
    pub test_ts: i64,
    pub out: PathBuf,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<DatasetSplit> {
    let mut records = load_interactions(&args.input_a, Domain::A)?;
    records.extend(load_interactions(&args.input_b, Domain::B)?);
    let split = DatasetSplit::from_records(
        &records,
        SplitOptions {
            k_core: args.k_core,
            max_len: args.max_len,
            val_boundary: args.val_ts,
            test_boundary: args.test_ts,
        },
    )?;
    write_dataset(&args.out, &split, args.k_core)?;
    Ok(split)
}

/// Writes raw logs, ground-truth groups and a prepared split into `out`.
pub fn cmd_synth(settings: &SynthSettings, out: &Path) -> Result<DatasetSplit> {
    let data = synth_generate(&settings.synth)?;
    write_synth(out, &data)?;
    let split = synth_split(&data.all_records(), settings.max_len)?;
    write_dataset(out, &split, 1)?;
    Ok(split)
}

/// Splits synthetic records at the generator's fixed boundaries.
pub fn synth_split(records: &[crate::data::InteractionRecord], max_len: usize) -> Result<DatasetSplit> {
    DatasetSplit::from_records(
        records,
        SplitOptions {
            k_core: 1,
            max_len,
            val_boundary: SYNTH_VAL_BOUNDARY,
            test_boundary: SYNTH_TEST_BOUNDARY,
        },
    )
}

/// Loads a run config, resolving a relative `data.dir` against the config
/// file's directory and applying the seed override from the environment.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(d) = &cfg.data_dir {
        if d.is_relative() {
            cfg.data_dir = Some(path.parent().unwrap_or(Path::new("")).join(d));
        }
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("data.dir is not set".into()))
}

/// Dataset for a run; the dataset fixes the sequence length.
pub fn dataset_for(cfg: &mut RunConfig) -> Result<DatasetSplit> {
    let split = load_dataset(data_dir(cfg)?)?;
    if cfg.model.max_len != split.max_len {
        log::info!("using the dataset's max length {} (config had {})", split.max_len, cfg.model.max_len);
        cfg.model.max_len = split.max_len;
    }
    Ok(split)
}

/// Test candidates of every active domain.
pub fn test_report(outcome: &TrainOutcome, split: &DatasetSplit, cfg: &TrainConfig, kind: SplitKind) -> Result<MetricsReport> {
    let mut cands: [Vec<SequenceExample>; 2] = Default::default();
    for &d in cfg.update_mode.active_domains() {
        cands[d.index()] = candidates(split, d, kind, cfg)?;
    }
    evaluate_report(&outcome.model, &cands)
}

fn candidates(split: &DatasetSplit, d: Domain, kind: SplitKind, cfg: &TrainConfig) -> Result<Vec<SequenceExample>> {
    match kind {
        SplitKind::Validation => split_candidates(split, d, false, cfg),
        SplitKind::Test => split_candidates(split, d, true, cfg),
        SplitKind::Train => Err(Error::InvalidArgument("evaluation on the training split is not supported".into())),
    }
}

/// Trains one configuration and writes its checkpoint, log, config and test
/// metrics under `out`.
pub fn run_training(cfg: &RunConfig, split: &DatasetSplit, out: &Path) -> Result<(TrainOutcome, MetricsReport)> {
    create_dir(out)?;
    let outcome = train(&cfg.model, &cfg.train, split)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.model, &outcome.optimizer, cfg, outcome.best_epoch)?;
    write_text(&out.join(TRAIN_LOG_FILE), &outcome.log.to_csv())?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_text())?;
    let report = test_report(&outcome, split, &cfg.train, SplitKind::Test)?;
    write_text(&out.join("metrics_test.csv"), &report.to_csv())?;
    Ok((outcome, report))
}

pub fn cmd_train(config: &Path, out: &Path) -> Result<MetricsReport> {
    let mut cfg = load_run_config(config)?;
    let split = dataset_for(&mut cfg)?;
    if let Some(d) = &cfg.data_dir {
        cfg.data_dir = Some(fs::canonicalize(d).map_err(|e| Error::io(d, e))?);
    }
    Ok(run_training(&cfg, &split, out)?.1)
}

/// Loads a checkpoint together with the dataset named in its config.
pub fn open_checkpoint(path: &Path, data: Option<&Path>) -> Result<(LoadedCheckpoint, DatasetSplit)> {
    let ckpt = crate::training::Checkpoint::load(path)?;
    let cfg = RunConfig::parse(&ckpt.text("meta.config")?)?;
    let dir = match data {
        Some(d) => d.to_path_buf(),
        None => data_dir(&cfg)?.to_path_buf(),
    };
    let split = load_dataset(&dir)?;
    let loaded = load_checkpoint(path, &split.vocab)?;
    Ok((loaded, split))
}

pub fn cmd_eval(checkpoint: &Path, kind: SplitKind, data: Option<&Path>, out: &Path) -> Result<MetricsReport> {
    let (loaded, split) = open_checkpoint(checkpoint, data)?;
    let mut cands: [Vec<SequenceExample>; 2] = Default::default();
    for &d in loaded.config.train.update_mode.active_domains() {
        cands[d.index()] = candidates(&split, d, kind, &loaded.config.train)?;
    }
    let report = evaluate_report(&loaded.model, &cands)?;
    write_text(&out.join(format!("eval_{}.csv", kind.name())), &report.to_csv())?;
    Ok(report)
}

/// Result rows `label,domain,metric,value` for several runs.
fn summary_csv(header: &str, runs: &[(String, MetricsReport)]) -> String {
    let mut s = format!("{header},domain,metric,value\n");
    for (label, report) in runs {
        for (d, name, v) in report.rows() {
            let _ = writeln!(s, "{label},{},{name},{v}", d.tag());
        }
    }
    s
}

/// Trains the four ablation rows and writes `ablation.csv`.
pub fn cmd_ablate(config: &Path, out: &Path) -> Result<Vec<(String, MetricsReport)>> {
    let mut base = load_run_config(config)?;
    let split = dataset_for(&mut base)?;
    let mut runs = Vec::new();
    for (name, ablation) in Ablation::STUDY {
        let cfg = RunConfig {
            model: ModelConfig { ablation, ..base.model },
            ..base.clone()
        };
        let (_, report) = run_training(&cfg, &split, &out.join("ablate").join(name))?;
        runs.push((name.to_string(), report));
    }
    write_text(&out.join("ablation.csv"), &summary_csv("config", &runs))?;
    Ok(runs)
}

/// Trains one model per group count and writes `sweep_groups.csv`.
pub fn cmd_sweep_groups(config: &Path, values: &[usize], out: &Path) -> Result<Vec<(String, MetricsReport)>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no group counts to sweep".into()));
    }
    let mut base = load_run_config(config)?;
    let split = dataset_for(&mut base)?;
    let mut runs = Vec::new();
    for &n in values {
        let cfg = RunConfig {
            model: ModelConfig { n_groups: n, ..base.model },
            ..base.clone()
        };
        cfg.model.validate()?;
        let (_, report) = run_training(&cfg, &split, &out.join("sweep").join(format!("groups_{n}")))?;
        runs.push((n.to_string(), report));
    }
    write_text(&out.join("sweep_groups.csv"), &summary_csv("n_groups", &runs))?;
    Ok(runs)
}

/// Per-domain clustering summary from [`cmd_analyze`].
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSummary {
    pub domain: Domain,
    pub users: usize,
    pub k: usize,
    pub inertia: f64,
    pub alignment: Option<f64>,
}

/// Exports group representations, clusters and projects each domain, and
/// scores clusters against ground truth when `groups.tsv` is available.
pub fn cmd_analyze(checkpoint: &Path, data: Option<&Path>, k: Option<usize>, out: &Path) -> Result<Vec<AnalysisSummary>> {
    let (loaded, split) = open_checkpoint(checkpoint, data)?;
    let dir = match data {
        Some(d) => d.to_path_buf(),
        None => data_dir(&loaded.config)?.to_path_buf(),
    };
    let truth_path = dir.join(GROUPS_FILE);
    let truth = match truth_path.exists() {
        true => Some(load_groups(&truth_path)?),
        false => None,
    };
    let rows = export_group_representations(&loaded.model, &split, truth.as_deref())?;
    write_text(&out.join("group_repr.csv"), &export_csv(&rows))?;
    let k = k.or(loaded.config.analysis_k).unwrap_or(loaded.config.model.n_groups);
    let mut projection = String::new();
    let mut summaries = Vec::new();
    for d in Domain::BOTH {
        let part: Vec<_> = rows.iter().filter(|r| r.domain == d).cloned().collect();
        if part.len() < k.max(2) {
            log::warn!("domain {d}: {} users, too few to cluster into {k} groups", part.len());
            continue;
        }
        let vectors: Vec<Vec<f64>> = part.iter().map(|r| r.vector.clone()).collect();
        let km = kmeans(&vectors, k, loaded.config.train.seed, KMEANS_MAX_ITER)?;
        let coords = match pca_2d(&vectors) {
            Ok(p) => p.coords,
            Err(e) => {
                log::warn!("domain {d}: {e}");
                vec![[0.0, 0.0]; vectors.len()]
            }
        };
        let csv = projection_csv(&part, &km.assignments, &coords)?;
        projection.push_str(if projection.is_empty() { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
        let alignment = match part.iter().map(|r| r.true_group).collect::<Option<Vec<_>>>() {
            Some(t) if !t.is_empty() => Some(group_alignment_score(&km.assignments, &t)?),
            _ => None,
        };
        summaries.push(AnalysisSummary {
            domain: d,
            users: part.len(),
            k,
            inertia: km.inertia,
            alignment,
        });
    }
    write_text(&out.join("projection.csv"), &projection)?;
    let mut s = String::from("domain,users,k,inertia,alignment\n");
    for r in &summaries {
        let a = r.alignment.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{a}", r.domain.tag(), r.users, r.k, r.inertia);
    }
    write_text(&out.join("analysis.csv"), &s)?;
    Ok(summaries)
}
