//! Logged interaction records and rating-file ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::EnvError;
use crate::catalog::Catalog;

/// Length of one ingested slate, and the history window of logged records.
pub const RECORD_SLATE_LEN: usize = 10;
pub const RECORD_HISTORY_LEN: usize = 10;

/// One logged impression: who saw which slate after which positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub user_id: u64,
    pub history: Vec<u64>,
    pub slate: Vec<u64>,
    pub labels: Vec<bool>,
}

impl LogRecord {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|y| **y).count()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> EnvError {
    EnvError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_ids(field: &str, line: usize, what: &str) -> Result<Vec<u64>, EnvError> {
    if field == "-" {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| parse_err(line, format!("{what}: `{s}`: {e}")))
        })
        .collect()
}

fn join(ids: impl IntoIterator<Item = String>) -> String {
    let s: Vec<String> = ids.into_iter().collect();
    if s.is_empty() {
        "-".into()
    } else {
        s.join(",")
    }
}

/// `user<TAB>h1,h2,..<TAB>i1,..,ik<TAB>y1,..,yk`, with `-` for an empty history.
pub fn format_record(r: &LogRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        r.user_id,
        join(r.history.iter().map(u64::to_string)),
        join(r.slate.iter().map(u64::to_string)),
        join(r.labels.iter().map(|y| u8::from(*y).to_string())),
    )
}

pub fn parse_record(text: &str, line: usize) -> Result<LogRecord, EnvError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 4 {
        return Err(parse_err(
            line,
            format!("expected 4 tab-separated fields, found {}", fields.len()),
        ));
    }
    let user_id = fields[0]
        .trim()
        .parse()
        .map_err(|e| parse_err(line, format!("user id `{}`: {e}", fields[0])))?;
    let history = parse_ids(fields[1], line, "history")?;
    let slate = parse_ids(fields[2], line, "slate")?;
    let labels = fields[3]
        .split(',')
        .map(|s| match s.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(line, format!("label `{other}` is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if slate.is_empty() || slate.len() != labels.len() {
        return Err(parse_err(
            line,
            format!(
                "slate has {} items but {} labels",
                slate.len(),
                labels.len()
            ),
        ));
    }
    Ok(LogRecord {
        user_id,
        history,
        slate,
        labels,
    })
}

pub fn write_records(path: &Path, records: &[LogRecord]) -> Result<(), EnvError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<LogRecord>, EnvError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, i + 1)?);
    }
    Ok(records)
}

/// Every item id mentioned by the records.
pub fn records_catalog(records: &[LogRecord]) -> Catalog {
    Catalog::new(
        records
            .iter()
            .flat_map(|r| r.history.iter().chain(&r.slate).copied()),
    )
}

/// Reads `user<TAB>item<TAB>rating<TAB>timestamp` lines. Ratings above 3 are
/// positive. Each user's interactions are ordered by time (ties by item id)
/// and cut into consecutive slates of ten; a trailing partial slate is
/// dropped. A record's history is the user's last positives strictly before
/// its slate.
pub fn ingest_ratings(path: &Path) -> Result<(Vec<LogRecord>, Catalog), EnvError> {
    let reader = BufReader::new(File::open(path)?);
    let mut per_user: BTreeMap<u64, Vec<(u64, u64, bool)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(
                n,
                format!("expected 4 tab-separated fields, found {}", f.len()),
            ));
        }
        let num = |s: &str, what: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| parse_err(n, format!("{what} `{s}`: {e}")))
        };
        let user = num(f[0], "user id")?;
        let item = num(f[1], "item id")?;
        let rating: f64 = f[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(n, format!("rating `{}`: {e}", f[2])))?;
        if !rating.is_finite() {
            return Err(parse_err(n, "rating is not finite"));
        }
        let ts = num(f[3], "timestamp")?;
        per_user
            .entry(user)
            .or_default()
            .push((ts, item, rating > 3.0));
    }
    let mut records = Vec::new();
    for (user, mut events) in per_user {
        events.sort_by_key(|(ts, item, _)| (*ts, *item));
        let mut positives: Vec<u64> = Vec::new();
        for chunk in events.chunks_exact(RECORD_SLATE_LEN) {
            let start = positives.len().saturating_sub(RECORD_HISTORY_LEN);
            records.push(LogRecord {
                user_id: user,
                history: positives[start..].to_vec(),
                slate: chunk.iter().map(|e| e.1).collect(),
                labels: chunk.iter().map(|e| e.2).collect(),
            });
            positives.extend(chunk.iter().filter(|e| e.2).map(|e| e.1));
        }
    }
    let catalog = records_catalog(&records);
    Ok((records, catalog))
}

/// Chronological split: the first `train_fraction` of each user's records
/// (at least one) go to the first set.
pub fn split_records(
    records: &[LogRecord],
    train_fraction: f64,
) -> (Vec<LogRecord>, Vec<LogRecord>) {
    let mut per_user: BTreeMap<u64, Vec<&LogRecord>> = BTreeMap::new();
    for r in records {
        per_user.entry(r.user_id).or_default().push(r);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rs in per_user.values() {
        let cut = ((rs.len() as f64 * train_fraction).round() as usize).clamp(1, rs.len());
        train.extend(rs[..cut].iter().map(|r| (*r).clone()));
        test.extend(rs[cut..].iter().map(|r| (*r).clone()));
    }
    (train, test)
}
