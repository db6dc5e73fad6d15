use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::A, Domain::B];

    pub fn index(self) -> usize {
        match self {
            Domain::A => 0,
            Domain::B => 1,
        }
    }

    /// Lowercase tag used in file names and parameter names.
    pub fn tag(self) -> &'static str {
        match self {
            Domain::A => "a",
            Domain::B => "b",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Domain::A),
            "B" | "b" => Ok(Domain::B),
            other => Err(Error::InvalidArgument(format!("unknown domain {other:?}"))),
        }
    }
}

/// One logged user/item event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub label: u8,
    pub domain: Domain,
}

/// Reads `user_id \t item_id \t timestamp \t label` rows (no header).
pub fn load_interactions(path: &Path, domain: Domain) -> Result<Vec<InteractionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, domain, path)
}

pub(crate) fn parse_interactions(text: &str, domain: Domain, path: &Path) -> Result<Vec<InteractionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("timestamp {:?} is not an integer", fields[2])))?;
        if timestamp < 0 {
            return Err(err(format!("negative timestamp {timestamp}")));
        }
        let label = match fields[3].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label {other:?} is not 0 or 1"))),
        };
        out.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            timestamp,
            label,
            domain,
        });
    }
    Ok(out)
}

pub fn write_interactions(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.user_id, r.item_id, r.timestamp, r.label)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
