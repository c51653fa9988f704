//! Per-rank communication volume statistics, CSV exports for heat maps and
//! histograms, and the multi-scheme comparison report.

use crate::dist::{ProcessGrid, TreeKind};
use crate::runtime::{run_with_config, CommLedger, Direction, Executor, RuntimeConfig, RuntimeError, Tag, VolumeKind};
use crate::selinv::{selected_inverse, SelInvError, SelInvResult};
use crate::sparse::SparseMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Bytes per reported megabyte.
pub const MB: f64 = 1e6;

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance for the parallel result against the sequential one.
pub const VERIFY_TOLERANCE: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("ledger covers no ranks")]
    EmptyLedger,
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("at least one scheme is required")]
    NoSchemes,
    #[error("ledger has {ledger} ranks but the grid has {grid}")]
    GridMismatch { ledger: usize, grid: usize },
    #[error("{scheme} (seed {seed}) deviates from the sequential result by {error:e} at ({row}, {col})")]
    Verification { scheme: TreeKind, seed: u64, error: f64, row: usize, col: usize },
    #[error("{scheme} (seed {seed}) does not reproduce the {reference} result bit for bit")]
    SchemesDisagree { scheme: TreeKind, seed: u64, reference: TreeKind },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    SelInv(#[from] SelInvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Order statistics of per-rank volume, in MB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub direction: Direction,
    pub kind: VolumeKind,
}

/// Statistics over per-rank byte totals.
pub fn stats_from_bytes(bytes: &[u64], direction: Direction, kind: VolumeKind) -> Result<VolumeStats, AnalysisError> {
    if bytes.is_empty() {
        return Err(AnalysisError::EmptyLedger);
    }
    let mut v: Vec<u64> = bytes.to_vec();
    v.sort_unstable();
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] as f64 } else { (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0 };
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(VolumeStats {
        min: v[0] as f64 / MB,
        max: v[n - 1] as f64 / MB,
        median: median / MB,
        mean: mean / MB,
        stddev: var.sqrt() / MB,
        direction,
        kind,
    })
}

pub fn volume_stats(ledger: &CommLedger, direction: Direction, kind: VolumeKind) -> Result<VolumeStats, AnalysisError> {
    stats_from_bytes(&ledger.per_rank(direction, kind), direction, kind)
}

/// `(grid_row, grid_col, bytes)` for every rank in rank order.
pub fn heatmap_rows(
    ledger: &CommLedger,
    grid: ProcessGrid,
    direction: Direction,
    kind: VolumeKind,
) -> Result<Vec<(usize, usize, u64)>, AnalysisError> {
    if ledger.p() != grid.p() {
        return Err(AnalysisError::GridMismatch { ledger: ledger.p(), grid: grid.p() });
    }
    Ok((0..grid.p())
        .map(|r| {
            let (row, col) = grid.coords(r);
            (row, col, ledger.bytes(r, direction, kind))
        })
        .collect())
}

pub fn write_heatmap<W: std::io::Write>(
    out: W,
    ledger: &CommLedger,
    grid: ProcessGrid,
    direction: Direction,
    kind: VolumeKind,
) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grid_row", "grid_col", "bytes"])?;
    for (row, col, bytes) in heatmap_rows(ledger, grid, direction, kind)? {
        w.serialize((row, col, bytes))?;
    }
    w.flush()?;
    Ok(())
}

pub fn heatmap_csv(
    ledger: &CommLedger,
    grid: ProcessGrid,
    direction: Direction,
    kind: VolumeKind,
    path: impl AsRef<Path>,
) -> Result<(), AnalysisError> {
    write_heatmap(std::fs::File::create(path)?, ledger, grid, direction, kind)
}

/// Reads back the per-rank bytes column of a heat-map CSV.
pub fn read_heatmap_bytes(path: impl AsRef<Path>) -> Result<Vec<u64>, AnalysisError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (_, _, bytes): (usize, usize, u64) = rec?;
        out.push(bytes);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, max]`; the last bin is closed on the right.
/// When every volume is zero all ranks land in the first bin.
pub fn histogram(volumes: &[u64], bins: usize) -> Result<Vec<HistogramBin>, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::ZeroBins);
    }
    let max = volumes.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; bins];
    for &v in volumes {
        let idx = if max == 0 { 0 } else { ((v as u128 * bins as u128) / max as u128) as usize };
        counts[idx.min(bins - 1)] += 1;
    }
    let edge = |i: usize| (max as u128 * i as u128) as f64 / bins as f64;
    Ok(counts.into_iter().enumerate().map(|(i, count)| HistogramBin { lower: edge(i), upper: edge(i + 1), count }).collect())
}

pub fn write_histogram<W: std::io::Write>(
    out: W,
    ledger: &CommLedger,
    direction: Direction,
    kind: VolumeKind,
    bins: usize,
) -> Result<(), AnalysisError> {
    if ledger.p() == 0 {
        return Err(AnalysisError::EmptyLedger);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lower", "bin_upper", "rank_count"])?;
    for b in histogram(&ledger.per_rank(direction, kind), bins)? {
        w.serialize((b.lower, b.upper, b.count))?;
    }
    w.flush()?;
    Ok(())
}

pub fn histogram_csv(
    ledger: &CommLedger,
    direction: Direction,
    kind: VolumeKind,
    bins: usize,
    path: impl AsRef<Path>,
) -> Result<(), AnalysisError> {
    write_histogram(std::fs::File::create(path)?, ledger, direction, kind, bins)
}

/// One column broadcast as seen in the ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BcastRecord {
    pub supernode: usize,
    pub block: usize,
    pub root: usize,
    /// Ranks taking part, root included.
    pub group_size: usize,
    pub root_messages: usize,
}

/// Reconstructs every column broadcast from the event log. The root is the
/// only participant that never receives.
pub fn bcast_root_loads(ledger: &CommLedger) -> Vec<BcastRecord> {
    let mut groups: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for e in ledger.events().iter().filter(|e| e.tag == Tag::ColBcast) {
        groups.entry((e.supernode, e.block)).or_default().push((e.src, e.dst));
    }
    groups
        .into_iter()
        .filter_map(|((supernode, block), edges)| {
            let receivers: std::collections::BTreeSet<usize> = edges.iter().map(|e| e.1).collect();
            let mut ranks = receivers.clone();
            ranks.extend(edges.iter().map(|e| e.0));
            let root = *ranks.iter().find(|r| !receivers.contains(r))?;
            let root_messages = edges.iter().filter(|e| e.0 == root).count();
            Some(BcastRecord { supernode, block, root, group_size: ranks.len(), root_messages })
        })
        .collect()
}

/// The two volumes compared across schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub colbcast_sent: VolumeStats,
    pub rowreduce_received: VolumeStats,
}

impl RunStats {
    pub fn from_ledger(ledger: &CommLedger) -> Result<Self, AnalysisError> {
        Ok(Self {
            colbcast_sent: volume_stats(ledger, Direction::Sent, VolumeKind::ColBcast)?,
            rowreduce_received: volume_stats(ledger, Direction::Received, VolumeKind::RowReduce)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatFields {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// Mean and population standard deviation of each statistic across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: StatFields,
    pub stddev: StatFields,
}

impl Aggregate {
    fn over(stats: &[VolumeStats]) -> Self {
        let n = stats.len() as f64;
        let field = |f: fn(&VolumeStats) -> f64| {
            let m = stats.iter().map(f).sum::<f64>() / n;
            let s = (stats.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, s)
        };
        let (min, max, median, mean, stddev) =
            (field(|s| s.min), field(|s| s.max), field(|s| s.median), field(|s| s.mean), field(|s| s.stddev));
        Self {
            mean: StatFields { min: min.0, max: max.0, median: median.0, mean: mean.0, stddev: stddev.0 },
            stddev: StatFields { min: min.1, max: max.1, median: median.1, mean: mean.1, stddev: stddev.1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: u64,
    #[serde(flatten)]
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: TreeKind,
    pub seeds: Vec<SeedStats>,
    pub colbcast_sent: Aggregate,
    pub rowreduce_received: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub schema_version: u32,
    pub matrix: String,
    pub n: usize,
    pub grid: String,
    pub max_size: usize,
    pub supernodes: usize,
    pub seeds: Vec<u64>,
    /// Largest relative deviation of any run from the sequential result.
    pub max_relative_error: f64,
    pub schemes: Vec<SchemeReport>,
    /// Present when all three schemes were run.
    pub load_balance: Option<LoadBalance>,
}

/// Orderings of the seed-averaged `ColBcast` sent volume. The binary/flat
/// comparison is recorded without an expected direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadBalance {
    pub shifted_stddev_below_binary: bool,
    pub shifted_stddev_below_flat: bool,
    pub shifted_max_below_flat: bool,
    pub binary_stddev_below_flat: bool,
}

impl LoadBalance {
    pub fn holds(&self) -> bool {
        self.shifted_stddev_below_binary && self.shifted_stddev_below_flat && self.shifted_max_below_flat
    }

    fn from_reports(reports: &[SchemeReport]) -> Option<Self> {
        let get = |k| reports.iter().find(|r| r.scheme == k).map(|r| r.colbcast_sent.mean);
        let (f, b, s) = (get(TreeKind::Flat)?, get(TreeKind::Binary)?, get(TreeKind::Shifted)?);
        Some(Self {
            shifted_stddev_below_binary: s.stddev < b.stddev,
            shifted_stddev_below_flat: s.stddev < f.stddev,
            shifted_max_below_flat: s.max < f.max,
            binary_stddev_below_flat: b.stddev < f.stddev,
        })
    }
}

impl SchemeComparison {
    pub fn scheme(&self, kind: TreeKind) -> Option<&SchemeReport> {
        self.schemes.iter().find(|s| s.scheme == kind)
    }

    pub fn to_json(&self) -> Result<String, AnalysisError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Ledger of one (scheme, seed) run kept for the CSV exports.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: TreeKind,
    pub seed: u64,
    pub ledger: CommLedger,
}

/// Runs every scheme for every seed on the same matrix, grid and partition.
/// Each result is checked against the sequential selected inverse and all
/// schemes must agree bit for bit for a given seed before stats are reported.
pub fn compare_schemes(
    a: &SparseMatrix,
    matrix: &str,
    grid: ProcessGrid,
    schemes: &[TreeKind],
    seeds: &[u64],
    max_size: usize,
    executor: Executor,
) -> Result<(SchemeComparison, Vec<SchemeRun>), AnalysisError> {
    if seeds.is_empty() {
        return Err(AnalysisError::NoSeeds);
    }
    if schemes.is_empty() {
        return Err(AnalysisError::NoSchemes);
    }
    let reference = selected_inverse(a, max_size)?;
    let mut runs = Vec::new();
    let mut per_scheme: Vec<Vec<SeedStats>> = vec![Vec::new(); schemes.len()];
    let mut worst = 0.0_f64;
    for &seed in seeds {
        let mut first: Option<(TreeKind, SelInvResult)> = None;
        for (s, &scheme) in schemes.iter().enumerate() {
            let cfg = RuntimeConfig::new(grid, scheme, seed, max_size).with_executor(executor);
            let (res, ledger) = run_with_config(a, &cfg)?;
            let rep = res.compare(&reference)?;
            if !(rep.relative <= VERIFY_TOLERANCE) {
                return Err(AnalysisError::Verification { scheme, seed, error: rep.relative, row: rep.row, col: rep.col });
            }
            worst = worst.max(rep.relative);
            match &first {
                None => first = Some((scheme, res)),
                Some((k, r)) if *r != res => return Err(AnalysisError::SchemesDisagree { scheme, seed, reference: *k }),
                Some(_) => {}
            }
            per_scheme[s].push(SeedStats { seed, stats: RunStats::from_ledger(&ledger)? });
            runs.push(SchemeRun { scheme, seed, ledger });
        }
    }
    let reports: Vec<SchemeReport> = schemes
        .iter()
        .zip(per_scheme)
        .map(|(&scheme, seeds)| {
            let cb: Vec<VolumeStats> = seeds.iter().map(|s| s.stats.colbcast_sent).collect();
            let rr: Vec<VolumeStats> = seeds.iter().map(|s| s.stats.rowreduce_received).collect();
            SchemeReport { scheme, colbcast_sent: Aggregate::over(&cb), rowreduce_received: Aggregate::over(&rr), seeds }
        })
        .collect();
    let cmp = SchemeComparison {
        schema_version: SCHEMA_VERSION,
        matrix: matrix.to_string(),
        n: a.n(),
        grid: grid.to_string(),
        max_size,
        supernodes: reference.structure().count(),
        seeds: seeds.to_vec(),
        max_relative_error: worst,
        load_balance: LoadBalance::from_reports(&reports),
        schemes: reports,
    };
    Ok((cmp, runs))
}
