//! Episode CSV ingestion and the long-format output tables.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use triage_core::bounds::BoundCurve;
use triage_core::policies::{Episode, Record, TradeoffCurve};

const COLUMNS: [&str; 4] = ["episode_id", "t_seconds", "score", "label"];

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    episode_id: String,
    t_seconds: f64,
    score: f64,
    label: u8,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    /// Episodes in order of first appearance in the file.
    pub episodes: Vec<(String, Episode)>,
    pub tau: f64,
    pub malformed: usize,
    /// Rows whose score was pulled back into `[0, 1]`.
    pub clamped: usize,
}

impl Ingested {
    pub fn records(&self) -> usize {
        self.episodes.iter().map(|(_, e)| e.len()).sum()
    }
}

/// Reads `episode_id,t_seconds,score,label`. Bad rows are reported on stderr
/// and skipped; more than `max_malformed` of them is an error. Scores outside
/// `[0, 1]` are clamped with a warning. Without a horizon the largest
/// timestamp is used.
pub fn read_episodes(path: &Path, tau: Option<f64>, max_malformed: usize) -> Result<Ingested> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))?
        .clone();
    let missing: Vec<&str> = COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if headers.is_empty() || !missing.is_empty() {
        bail!(
            "{}: expected columns {} (missing {})",
            path.display(),
            COLUMNS.join(","),
            missing.join(",")
        );
    }

    let mut malformed = 0;
    let mut clamped = 0;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Record>> = HashMap::new();
    for (i, result) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = match result {
            Ok(row) => row,
            Err(e) => {
                eprintln!("warning: {}:{line}: {e}", path.display());
                malformed += 1;
                continue;
            }
        };
        let problem = if !(row.t_seconds.is_finite() && row.t_seconds >= 0.0) {
            Some("t_seconds must be a nonnegative number")
        } else if tau.is_some_and(|tau| row.t_seconds > tau) {
            Some("t_seconds beyond the horizon")
        } else if !row.score.is_finite() {
            Some("score must be a number")
        } else if row.label > 1 {
            Some("label must be 0 or 1")
        } else {
            None
        };
        if let Some(p) = problem {
            eprintln!("warning: {}:{line}: {p}", path.display());
            malformed += 1;
            continue;
        }
        if !(0.0..=1.0).contains(&row.score) {
            eprintln!("warning: {}:{line}: score {} clamped to [0, 1]", path.display(), row.score);
            clamped += 1;
        }
        let rec = Record {
            t: row.t_seconds,
            score: row.score.clamp(0.0, 1.0),
            label: row.label == 1,
        };
        groups
            .entry(row.episode_id.clone())
            .or_insert_with(|| {
                order.push(row.episode_id.clone());
                Vec::new()
            })
            .push(rec);
    }
    if malformed > max_malformed {
        bail!(
            "{}: {malformed} malformed rows (limit {max_malformed})",
            path.display()
        );
    }
    if order.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let tau = match tau {
        Some(t) => t,
        None => groups
            .values()
            .flatten()
            .map(|r| r.t)
            .fold(0.0, f64::max),
    };
    if !(tau > 0.0) {
        bail!("{}: cannot infer a positive horizon", path.display());
    }
    let mut episodes = Vec::with_capacity(order.len());
    for id in order {
        let mut recs = groups.remove(&id).expect("grouped");
        recs.sort_by(|a, b| a.t.total_cmp(&b.t));
        let ep = Episode::new(recs, tau).map_err(|e| anyhow!("episode {id}: {e}"))?;
        episodes.push((id, ep));
    }
    Ok(Ingested {
        episodes,
        tau,
        malformed,
        clamped,
    })
}

pub fn write_episodes(path: &Path, episodes: &[(String, Episode)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(COLUMNS)?;
    for (id, ep) in episodes {
        for r in ep.records() {
            w.write_record([
                id.as_str(),
                &r.t.to_string(),
                &r.score.to_string(),
                if r.label { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One per-episode result line.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRow {
    pub policy: &'static str,
    pub k: f64,
    pub episode_id: String,
    pub n_k: usize,
    pub selected: usize,
    pub frauds_caught: usize,
    pub frauds_total: usize,
}

pub fn write_outcomes(path: &Path, rows: &[OutcomeRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "policy",
        "k",
        "episode_id",
        "n_k",
        "selected",
        "frauds_caught",
        "frauds_total",
    ])?;
    for r in rows {
        w.write_record([
            r.policy,
            &r.k.to_string(),
            &r.episode_id,
            &r.n_k.to_string(),
            &r.selected.to_string(),
            &r.frauds_caught.to_string(),
            &r.frauds_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tradeoffs(path: &Path, curves: &[TradeoffCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["policy", "k", "psi_mean", "psi_se", "episodes"])?;
    for c in curves {
        for i in 0..c.k_grid.len() {
            w.write_record([
                c.policy.name(),
                &c.k_grid[i].to_string(),
                &c.psi_mean[i].to_string(),
                &c.psi_se[i].to_string(),
                &c.episodes_used[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds(path: &Path, curves: &[BoundCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["method", "k", "value", "mc_se", "reps", "seed"])?;
    for c in curves {
        for i in 0..c.k_grid.len() {
            w.write_record([
                c.method.name(),
                &c.k_grid[i].to_string(),
                &c.values[i].to_string(),
                &c.mc_se[i].to_string(),
                &c.reps.to_string(),
                &c.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Row of the combined plotting table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub source: &'static str,
    pub method: &'static str,
    pub k: f64,
    pub value: f64,
    pub se: f64,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["source", "method", "k", "value", "se"])?;
    for r in rows {
        w.write_record([
            r.source,
            r.method,
            &r.k.to_string(),
            &r.value.to_string(),
            &r.se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
