//! Dual-domain interaction logs with planted, cross-domain user groups.
//!
//! Every user belongs to one of `n_groups` latent groups and every item has a
//! one-hot affinity to one group. Group identities are shared by both
//! domains: an overlapping user keeps its group in both logs, and an item id
//! that appears in both catalogues keeps its affinity. Each interaction picks
//! an item from the user's group pool with probability `1 - noise`, and a
//! uniformly random item otherwise.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::records::{write_interactions, Domain, InteractionRecord};
use crate::error::{Error, Result};

/// First timestamp of each user's second-to-last interaction window.
pub const SYNTH_VAL_BOUNDARY: i64 = 8_000;
/// First timestamp of each user's last interaction window.
pub const SYNTH_TEST_BOUNDARY: i64 = 9_000;
/// Every synthetic user has at least this many interactions per domain.
pub const MIN_SEQ_LEN: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    pub n_groups: usize,
    pub overlap_user_fraction: f64,
    pub overlap_item_fraction: f64,
    /// Mean sequence length in domain A (and B unless overridden).
    pub seq_len_mean: f64,
    /// Mean sequence length in domain B; lets B be the sparser domain.
    pub seq_len_mean_b: Option<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users_per_domain: 200,
            items_per_domain: 100,
            n_groups: 5,
            overlap_user_fraction: 0.0,
            overlap_item_fraction: 0.0,
            seq_len_mean: 10.0,
            seq_len_mean_b: None,
            noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users_per_domain == 0 || self.items_per_domain == 0 || self.n_groups == 0 {
            return Err(Error::InvalidArgument(
                "users, items and groups must all be positive".into(),
            ));
        }
        for (name, v) in [
            ("overlap_user_fraction", self.overlap_user_fraction),
            ("overlap_item_fraction", self.overlap_item_fraction),
            ("noise", self.noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        let means = [Some(self.seq_len_mean), self.seq_len_mean_b];
        if means.into_iter().flatten().any(|m| !(m > 0.0)) {
            return Err(Error::InvalidArgument("sequence length means must be positive".into()));
        }
        Ok(())
    }

    fn seq_len_mean(&self, d: Domain) -> f64 {
        match d {
            Domain::A => self.seq_len_mean,
            Domain::B => self.seq_len_mean_b.unwrap_or(self.seq_len_mean),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthData {
    pub records_a: Vec<InteractionRecord>,
    pub records_b: Vec<InteractionRecord>,
    /// Ground-truth `(user_id, group)` for every user, sorted by id.
    pub user_groups: Vec<(String, usize)>,
    /// Ground-truth `(item_id, group)` for every item, sorted by id.
    pub item_groups: Vec<(String, usize)>,
}

impl SynthData {
    pub fn records(&self, d: Domain) -> &[InteractionRecord] {
        match d {
            Domain::A => &self.records_a,
            Domain::B => &self.records_b,
        }
    }

    pub fn all_records(&self) -> Vec<InteractionRecord> {
        self.records_a.iter().chain(&self.records_b).cloned().collect()
    }

    pub fn group_of(&self, user: &str) -> Option<usize> {
        self.user_groups
            .binary_search_by(|(u, _)| u.as_str().cmp(user))
            .ok()
            .map(|i| self.user_groups[i].1)
    }
}

/// Balanced random assignment of `n` entities to `groups` groups.
fn balanced_groups(rng: &mut ChaCha8Rng, n: usize, groups: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (0..n).map(|i| i % groups).collect();
    g.shuffle(rng);
    g
}

fn sample_len(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let lo = (mean * 0.5).ceil().max(1.0) as usize;
    let hi = ((mean * 1.5).floor() as usize).max(lo);
    rng.gen_range(lo..=hi).max(MIN_SEQ_LEN)
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.items_per_domain;
    let k = config.n_groups;

    // Catalogues: (id, group) per domain.
    let groups_a = balanced_groups(&mut rng, n, k);
    let items_a: Vec<(String, usize)> = (0..n).map(|j| (format!("ia{j}"), groups_a[j])).collect();
    let n_shared = ((config.overlap_item_fraction * n as f64).round() as usize).min(n);
    let mut shared: Vec<(String, usize)> = items_a.choose_multiple(&mut rng, n_shared).cloned().collect();
    shared.sort();
    let groups_b = balanced_groups(&mut rng, n - n_shared, k);
    let mut items_b = shared;
    items_b.extend((0..n - n_shared).map(|j| (format!("ib{j}"), groups_b[j])));

    // Users: (id, group) per domain.
    let m = config.users_per_domain;
    let users_a: Vec<(String, usize)> = (0..m).map(|u| (format!("ua{u}"), rng.gen_range(0..k))).collect();
    let n_overlap = ((config.overlap_user_fraction * m as f64).round() as usize).min(m);
    let mut users_b: Vec<(String, usize)> = users_a.choose_multiple(&mut rng, n_overlap).cloned().collect();
    users_b.sort();
    users_b.extend((0..m - n_overlap).map(|u| (format!("ub{u}"), rng.gen_range(0..k))));

    let mut records = [Vec::new(), Vec::new()];
    for (d, users, items) in [(Domain::A, &users_a, &items_a), (Domain::B, &users_b, &items_b)] {
        let mut pools = vec![Vec::new(); k];
        for (j, (_, g)) in items.iter().enumerate() {
            pools[*g].push(j);
        }
        for (user, group) in users {
            let len = sample_len(&mut rng, config.seq_len_mean(d));
            let mut chosen: Vec<usize> = Vec::with_capacity(len);
            for _ in 0..len {
                let mut pick = 0;
                for _attempt in 0..20 {
                    let pool = &pools[*group];
                    pick = if pool.is_empty() || rng.gen::<f64>() < config.noise {
                        rng.gen_range(0..items.len())
                    } else {
                        pool[rng.gen_range(0..pool.len())]
                    };
                    if !chosen.contains(&pick) {
                        break;
                    }
                }
                chosen.push(pick);
            }
            for (pos, &item) in chosen.iter().enumerate() {
                let timestamp = if pos + 1 == len {
                    SYNTH_TEST_BOUNDARY + rng.gen_range(0..1_000)
                } else if pos + 2 == len {
                    SYNTH_VAL_BOUNDARY + rng.gen_range(0..1_000)
                } else {
                    (pos as i64 * SYNTH_VAL_BOUNDARY) / (len as i64 - 2)
                };
                records[d.index()].push(InteractionRecord {
                    user_id: user.clone(),
                    item_id: items[item].0.clone(),
                    timestamp,
                    label: 1,
                    domain: d,
                });
            }
        }
    }

    let mut user_groups: Vec<(String, usize)> = users_a.into_iter().chain(users_b).collect();
    user_groups.sort();
    user_groups.dedup();
    let mut item_groups: Vec<(String, usize)> = items_a.into_iter().chain(items_b).collect();
    item_groups.sort();
    item_groups.dedup();
    let [records_a, records_b] = records;
    Ok(SynthData {
        records_a,
        records_b,
        user_groups,
        item_groups,
    })
}

/// Writes `a.tsv`, `b.tsv` and the `groups.tsv` ground truth into `dir`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_interactions(&dir.join("a.tsv"), &data.records_a)?;
    write_interactions(&dir.join("b.tsv"), &data.records_b)?;
    let path = dir.join("groups.tsv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for (user, group) in &data.user_groups {
        writeln!(w, "{user}\t{group}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Reads a `user_id \t group_id` ground-truth file.
pub fn load_groups(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = line.split('\t');
        let (Some(user), Some(group), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: "expected user_id<TAB>group_id".into(),
            });
        };
        let group = group.trim().parse().map_err(|_| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg: format!("group {group:?} is not an integer"),
        })?;
        out.push((user.to_string(), group));
    }
    out.sort();
    Ok(out)
}
