//! Success rate, sum-of-costs, makespan and collision rate, per episode and
//! aggregated over groups of episodes.
//!
//! SoC, makespan and collision rate are defined only for successful episodes;
//! aggregates of those three quantities range over successful episodes alone.
//! Collisions counted by the collision rate are the per-agent collision entries
//! of the episode (a swap contributes two).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::record::EpisodeRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Count unfinished agents at the horizon and keep failed episodes in the
    /// SoC aggregate.
    pub soc_cap_failures: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub soc: Option<f64>,
    pub makespan: Option<f64>,
    pub collision_rate: Option<f64>,
    pub collisions: usize,
}

pub fn episode_metrics(record: &EpisodeRecord) -> Result<EpisodeMetrics, MetricsError> {
    episode_metrics_with(record, &MetricsOptions::default())
}

pub fn episode_metrics_with(
    record: &EpisodeRecord,
    opts: &MetricsOptions,
) -> Result<EpisodeMetrics, MetricsError> {
    record.check_consistency()?;
    let success = record.success();
    let collisions = record.collisions.len();
    if !success {
        let soc = opts.soc_cap_failures.then(|| {
            record
                .arrival_times
                .iter()
                .map(|a| a.unwrap_or(record.horizon).min(record.horizon) as f64)
                .sum()
        });
        return Ok(EpisodeMetrics {
            success,
            soc,
            makespan: None,
            collision_rate: None,
            collisions,
        });
    }
    let arrivals: Vec<u32> = record.arrival_times.iter().map(|a| a.unwrap_or(0)).collect();
    let soc: u64 = arrivals.iter().map(|&a| a as u64).sum();
    let makespan = arrivals.iter().copied().max().unwrap_or(0);
    let collision_rate = if makespan == 0 {
        0.0
    } else {
        collisions as f64 / makespan as f64
    };
    Ok(EpisodeMetrics {
        success,
        soc: Some(soc as f64),
        makespan: Some(makespan as f64),
        collision_rate: Some(collision_rate),
        collisions,
    })
}

/// Labels attached to an episode for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupKey {
    pub map_size: Option<usize>,
    pub n_agents: Option<usize>,
    pub density: Option<f64>,
    pub advisor: Option<String>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyField {
    MapSize,
    Agents,
    Density,
    Advisor,
    Fraction,
}

impl GroupKey {
    /// Keeps only the fields named in `fields`.
    pub fn project(&self, fields: &[KeyField]) -> GroupKey {
        let has = |f| fields.contains(&f);
        GroupKey {
            map_size: self.map_size.filter(|_| has(KeyField::MapSize)),
            n_agents: self.n_agents.filter(|_| has(KeyField::Agents)),
            density: self.density.filter(|_| has(KeyField::Density)),
            advisor: self.advisor.clone().filter(|_| has(KeyField::Advisor)),
            fraction: self.fraction.filter(|_| has(KeyField::Fraction)),
        }
    }

    fn sort_key(&self) -> impl Ord + '_ {
        (
            self.map_size,
            self.n_agents,
            self.density.map(OrdF64),
            self.advisor.as_deref(),
            self.fraction.map(OrdF64),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Mean with a 95% normal-approximation half-width (undefined below two samples).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: Option<f64>,
}

impl Estimate {
    fn of(values: &[f64]) -> Option<Estimate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ci95 = (values.len() >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        });
        Some(Estimate { mean, ci95 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub key: GroupKey,
    pub episodes: usize,
    pub successes: usize,
    /// Cooperative success rate: fraction of episodes where every agent arrived.
    pub csr: Option<f64>,
    /// Same quantity as `csr`.
    pub sr: Option<f64>,
    /// Wilson 95% interval for the success rate.
    pub csr_interval: Option<(f64, f64)>,
    pub soc: Option<Estimate>,
    pub makespan: Option<Estimate>,
    pub collision_rate: Option<Estimate>,
}

fn wilson(successes: usize, n: usize) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let z = 1.96f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    Some(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// Per-group metrics, ordered by key. `expected` lists groups to report even
/// when no episode falls in them (they come out with zero counts).
pub fn aggregate(
    records: &[(GroupKey, EpisodeRecord)],
    fields: &[KeyField],
    expected: &[GroupKey],
    opts: &MetricsOptions,
) -> Result<Vec<MetricsReport>, MetricsError> {
    let mut groups: Vec<(GroupKey, Vec<EpisodeMetrics>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut slot = |key: GroupKey, groups: &mut Vec<(GroupKey, Vec<EpisodeMetrics>)>| {
        let id = serde_json::to_string(&key).unwrap_or_default();
        *index.entry(id).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        })
    };
    for key in expected {
        slot(key.project(fields), &mut groups);
    }
    for (key, record) in records {
        let m = episode_metrics_with(record, opts)?;
        let i = slot(key.project(fields), &mut groups);
        groups[i].1.push(m);
    }
    groups.sort_by(|a, b| a.0.sort_key().cmp(&b.0.sort_key()));
    Ok(groups
        .into_iter()
        .map(|(key, ms)| report(key, &ms, opts))
        .collect())
}

fn report(key: GroupKey, ms: &[EpisodeMetrics], opts: &MetricsOptions) -> MetricsReport {
    let episodes = ms.len();
    let successes = ms.iter().filter(|m| m.success).count();
    let csr = (episodes > 0).then(|| successes as f64 / episodes as f64);
    let ok: Vec<&EpisodeMetrics> = ms.iter().filter(|m| m.success).collect();
    let soc_values: Vec<f64> = if opts.soc_cap_failures {
        ms.iter().filter_map(|m| m.soc).collect()
    } else {
        ok.iter().filter_map(|m| m.soc).collect()
    };
    MetricsReport {
        key,
        episodes,
        successes,
        csr,
        sr: csr,
        csr_interval: wilson(successes, episodes),
        soc: Estimate::of(&soc_values),
        makespan: Estimate::of(&ok.iter().filter_map(|m| m.makespan).collect::<Vec<_>>()),
        collision_rate: Estimate::of(
            &ok.iter()
                .filter_map(|m| m.collision_rate)
                .collect::<Vec<_>>(),
        ),
    }
}

pub const CSV_HEADER: &str = "map_size,n_agents,density,advisor,fraction,episodes,successes,SR,SR_lo,SR_hi,MS,MS_ci95,CR,CR_ci95,SoC,SoC_ci95";

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn fmt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn to_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let k = &r.key;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_opt(k.map_size),
            fmt_opt(k.n_agents),
            fmt_opt(k.density),
            k.advisor.as_deref().unwrap_or("NA"),
            fmt_opt(k.fraction),
            r.episodes,
            r.successes,
            fmt_num(r.csr),
            fmt_num(r.csr_interval.map(|i| i.0)),
            fmt_num(r.csr_interval.map(|i| i.1)),
            fmt_num(r.makespan.map(|e| e.mean)),
            fmt_num(r.makespan.and_then(|e| e.ci95)),
            fmt_num(r.collision_rate.map(|e| e.mean)),
            fmt_num(r.collision_rate.and_then(|e| e.ci95)),
            fmt_num(r.soc.map(|e| e.mean)),
            fmt_num(r.soc.and_then(|e| e.ci95)),
        );
    }
    out
}

pub fn to_json(rows: &[MetricsReport]) -> serde_json::Result<String> {
    serde_json::to_string_pretty(rows)
}
