mod source;

use clap::{Args, Parser, Subcommand};
use selinv_core::analysis::{compare_schemes, heatmap_csv, histogram_csv, volume_stats, AnalysisError, SchemeComparison};
use selinv_core::dist::{build_grid, ProcessGrid, TreeKind};
use selinv_core::factor::{factorize, FactorError};
use selinv_core::runtime::{run_with_config, Direction, Executor, RuntimeConfig, RuntimeError, VolumeKind};
use selinv_core::selinv::{dense_inverse_oracle, extract_selected, selected_inverse, ErrorReport, SelInvError, SelInvResult, ORACLE_MAX_N};
use selinv_core::sparse::SparseMatrix;
use selinv_core::symbolic::Symbolic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const VERIFY_TOLERANCE: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "selinv", version, about = "Selected inversion of sparse matrices and collective-communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factor the matrix and print supernode and fill statistics.
    Factorize(Common),
    /// Run the distributed selected inversion and report communication volume.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Directory for the selected entries and per-rank volume CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check the result against the sequential selected inversion.
        #[arg(long)]
        verify: bool,
    },
    /// Compare sequential and distributed results with a dense inverse.
    Verify(Common),
    /// Run several broadcast/reduction tree schemes and write volume reports.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Comma-separated tree schemes.
        #[arg(long, value_delimiter = ',', default_value = "flat,binary,shifted", value_parser = parse_tree)]
        schemes: Vec<TreeKind>,
        /// Number of runs per scheme; seeds are SEED, SEED+1, ...
        #[arg(long, default_value_t = 6)]
        seeds: u64,
        /// Histogram bin count.
        #[arg(long, default_value_t = 16)]
        bins: usize,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
#[group(skip)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["matrix", "gen"])))]
struct Common {
    /// Matrix Market file.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Generated matrix: lap2d:NXxNY, lap2d-nd:NXxNY, tridiag:N, arrow:N, chain:LEN,
    /// random:N[:PER_COL[:SEED[:sym|unsym]]].
    #[arg(long)]
    gen: Option<String>,
    /// Process grid as PRxPC.
    #[arg(long, default_value = "1x1", value_parser = parse_grid)]
    grid: ProcessGrid,
    /// Broadcast/reduction tree: flat, binary or shifted.
    #[arg(long, default_value = "shifted", value_parser = parse_tree)]
    tree: TreeKind,
    /// Global seed; all randomness is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest supernode, in columns.
    #[arg(long = "max-supernode", default_value_t = 48, value_parser = clap::value_parser!(u64).range(1..))]
    max_supernode: u64,
    /// Worker threads (default: SELINV_THREADS, then the available cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn max_size(&self) -> usize {
        self.max_supernode as usize
    }

    fn runtime(&self, tree: TreeKind, seed: u64) -> RuntimeConfig {
        RuntimeConfig::new(self.grid, tree, seed, self.max_size()).with_executor(self.executor())
    }

    fn executor(&self) -> Executor {
        Executor::Threaded(self.threads)
    }

    fn load(&self) -> Result<(SparseMatrix, String), CliError> {
        source::load(self.matrix.as_deref(), self.gen.as_deref()).map_err(|e| CliError::Input(e.to_string()))
    }
}

fn parse_grid(s: &str) -> Result<ProcessGrid, String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or("expected PRxPC, e.g. 4x3")?;
    let pr = r.trim().parse().map_err(|_| format!("bad row count '{r}'"))?;
    let pc = c.trim().parse().map_err(|_| format!("bad column count '{c}'"))?;
    build_grid(pr, pc).map_err(|e| e.to_string())
}

fn parse_tree(s: &str) -> Result<TreeKind, String> {
    s.parse().map_err(|e: selinv_core::dist::CommError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        CliError::Input(format!("factorization failed: {e}"))
    }
}

impl From<SelInvError> for CliError {
    fn from(e: SelInvError) -> Self {
        match e {
            SelInvError::Factor(f) => f.into(),
            SelInvError::OracleTooLarge { .. } | SelInvError::NotSymmetric | SelInvError::Singular => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Factor(f) => f.into(),
            RuntimeError::NotSymmetric | RuntimeError::Comm(_) => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Runtime(r) => r.into(),
            AnalysisError::SelInv(s) => s.into(),
            AnalysisError::Verification { .. } => CliError::Verification(e.to_string()),
            AnalysisError::Io(_) | AnalysisError::Csv(_) | AnalysisError::NoSeeds | AnalysisError::NoSchemes | AnalysisError::ZeroBins => {
                CliError::Input(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn describe(rep: &ErrorReport) -> String {
    format!(
        "max relative error {:.3e} at entry ({}, {}) in block ({}, {})",
        rep.relative, rep.row, rep.col, rep.row_block, rep.col_block
    )
}

fn cmd_factorize(c: &Common) -> Result<(), CliError> {
    let (a, name) = c.load()?;
    let sym = Symbolic::analyze(&a, c.max_size()).map_err(|e| CliError::Input(e.to_string()))?;
    let f = factorize(&a, c.max_size())?;
    let part = sym.structure.partition();
    let largest = (0..part.count()).map(|k| part.size(k)).max().unwrap_or(0);
    println!("matrix {name}: n = {}, nnz = {}", a.n(), a.nnz());
    println!("fill: {} entries strictly below the diagonal", sym.fill.nnz_lower());
    println!("supernodes: {} (largest {largest} columns)", part.count());
    if a.n() <= ORACLE_MAX_N {
        let (l, u) = f.to_dense();
        let err = l.matmul(&u).max_abs_diff(&a.to_dense());
        println!("reconstruction: max |LU - A| = {err:.3e}");
    }
    Ok(())
}

fn write_entries(res: &SelInvResult, path: &Path) -> Result<(), CliError> {
    let mut entries = res.entries();
    entries.sort_by_key(|e| (e.1, e.0));
    let mut text = String::from("row,col,value\n");
    for (r, col, v) in entries {
        text.push_str(&format!("{r},{col},{v:e}\n"));
    }
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_invert(c: &Common, out: Option<&Path>, verify: bool) -> Result<(), CliError> {
    let (a, name) = c.load()?;
    let (res, ledger) = run_with_config(&a, &c.runtime(c.tree, c.seed))?;
    println!("matrix {name}: n = {}, grid {}, tree {}, seed {}", a.n(), c.grid, c.tree.name(), c.seed);
    for (dir, kind) in [(Direction::Sent, VolumeKind::ColBcast), (Direction::Received, VolumeKind::RowReduce)] {
        let s = volume_stats(&ledger, dir, kind).map_err(CliError::from)?;
        println!(
            "{} {}: min {:.6} max {:.6} median {:.6} stddev {:.6} MB",
            kind.name(),
            dir.name(),
            s.min,
            s.max,
            s.median,
            s.stddev
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        write_entries(&res, &dir.join("selected_inverse.csv"))?;
        for (d, k) in [(Direction::Sent, VolumeKind::ColBcast), (Direction::Received, VolumeKind::RowReduce)] {
            heatmap_csv(&ledger, c.grid, d, k, dir.join(format!("{}_{}_{}.csv", c.tree.name(), k.name(), d.name())))?;
        }
    }
    if verify {
        let rep = res.compare(&selected_inverse(&a, c.max_size())?)?;
        println!("against sequential: {}", describe(&rep));
        if !(rep.relative <= VERIFY_TOLERANCE) {
            return Err(CliError::Verification(format!("verification failed: {}", describe(&rep))));
        }
    }
    Ok(())
}

fn cmd_verify(c: &Common) -> Result<(), CliError> {
    let (a, name) = c.load()?;
    if a.n() > ORACLE_MAX_N {
        return Err(SelInvError::OracleTooLarge { n: a.n() }.into());
    }
    let seq = selected_inverse(&a, c.max_size())?;
    let sym = Symbolic::analyze(&a, c.max_size()).map_err(|e| CliError::Input(e.to_string()))?;
    let oracle = extract_selected(&dense_inverse_oracle(&a)?, &sym.fill, sym.structure.partition())?;
    println!("matrix {name}: n = {}, {} supernodes", a.n(), sym.structure.count());
    let mut failures = Vec::new();
    let seq_rep = seq.compare(&oracle)?;
    println!("sequential: {}", describe(&seq_rep));
    if !(seq_rep.relative <= VERIFY_TOLERANCE) {
        failures.push(format!("sequential: {}", describe(&seq_rep)));
    }
    if a.is_symmetric() {
        let (par, _) = run_with_config(&a, &c.runtime(c.tree, c.seed))?;
        let rep = par.compare(&oracle)?;
        println!("parallel ({} grid, {} tree, seed {}): {}", c.grid, c.tree.name(), c.seed, describe(&rep));
        if !(rep.relative <= VERIFY_TOLERANCE) {
            failures.push(format!("parallel: {}", describe(&rep)));
        }
    } else {
        println!("parallel: skipped, the distributed protocol needs a symmetric matrix");
    }
    if failures.is_empty() {
        println!("ok (tolerance {VERIFY_TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Verification(format!("verification failed: {}", failures.join("; "))))
    }
}

fn write_reports(dir: &Path, cmp: &SchemeComparison, runs: &[selinv_core::analysis::SchemeRun], grid: ProcessGrid, bins: usize, first_seed: u64) -> Result<(), CliError> {
    for run in runs.iter().filter(|r| r.seed == first_seed) {
        for (d, k) in [(Direction::Sent, VolumeKind::ColBcast), (Direction::Received, VolumeKind::RowReduce)] {
            let stem = format!("{}_{}_{}", run.scheme.name(), k.name(), d.name());
            heatmap_csv(&run.ledger, grid, d, k, dir.join(format!("{stem}.csv")))?;
            histogram_csv(&run.ledger, d, k, bins, dir.join(format!("{stem}_hist.csv")))?;
        }
    }
    let json = cmp.to_json()?;
    std::fs::write(dir.join("comparison.json"), json).map_err(|e| CliError::Input(e.to_string()))
}

fn cmd_experiment(c: &Common, schemes: &[TreeKind], seeds: u64, bins: usize, out: &Path) -> Result<(), CliError> {
    let (a, name) = c.load()?;
    if seeds == 0 {
        return Err(CliError::Input("--seeds must be at least 1".into()));
    }
    let mut kinds = schemes.to_vec();
    kinds.dedup();
    std::fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| c.seed.wrapping_add(i)).collect();
    let (cmp, runs) = compare_schemes(&a, &name, c.grid, &kinds, &seed_list, c.max_size(), c.executor())?;
    write_reports(out, &cmp, &runs, c.grid, bins, seed_list[0])?;
    println!("matrix {name}: n = {}, grid {}, {} supernodes, {} seeds", cmp.n, cmp.grid, cmp.supernodes, seeds);
    println!("{:<8} {:>12} {:>12} {:>12} {:>12}   (ColBcast sent, MB, mean over seeds)", "scheme", "min", "max", "median", "stddev");
    for s in &cmp.schemes {
        let m = s.colbcast_sent.mean;
        println!("{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", s.scheme.name(), m.min, m.max, m.median, m.stddev);
    }
    if let Some(lb) = cmp.load_balance {
        println!(
            "shifted stddev < binary: {}, shifted stddev < flat: {}, shifted max < flat max: {}",
            lb.shifted_stddev_below_binary, lb.shifted_stddev_below_flat, lb.shifted_max_below_flat
        );
    }
    println!("wrote reports to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Factorize(c) => cmd_factorize(c),
        Command::Invert { common, out, verify } => cmd_invert(common, out.as_deref(), *verify),
        Command::Verify(c) => cmd_verify(c),
        Command::Experiment { common, schemes, seeds, bins, out } => cmd_experiment(common, schemes, *seeds, *bins, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
