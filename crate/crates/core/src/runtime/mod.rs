//! Emulated distributed execution of parallel selected inversion.
//!
//! Each rank of a `pr x pc` grid is a worker that owns its block-cyclic share
//! of the factors and of the inverse and talks to other ranks only through
//! messages. The run has two passes. The first normalizes the lower panels
//! and hands each `L̂[I][K]ᵀ` to the owner of `Û[K][I]`. The second sweeps
//! supernodes backwards, pipelined across independent subtrees:
//!
//! 1. `Û[K][I]` is broadcast within grid column `I mod pc` to the ranks
//!    holding `Ainv[C][I]` (`ColBcast`);
//! 2. each rank multiplies its `Ainv[J][I]` blocks with the received panels;
//! 3. the partial products are reduced within grid row `J mod pr` to the
//!    owner of `Ainv[J][K]` (`RowReduce`), which also sends the transpose to
//!    the owner of `Ainv[K][J]`;
//! 4. owners of `Ainv[J][K]` form `L̂[J][K]ᵀ Ainv[J][K]`;
//! 5. these are reduced to the owner of the diagonal block (`DiagUpdate`);
//! 6. the owner subtracts the sum from `U_KK⁻¹ L_KK⁻¹`.
//!
//! Reductions add partial sums exactly and round once, so the result does
//! not depend on the tree shape or on message timing.

mod collectives;
mod exact;
mod executor;
mod ledger;
mod message;
mod worker;

pub use collectives::{col_bcast, row_reduce, transpose_handoff};
pub use exact::ExactBlock;
pub use executor::{worker_count, Delivery, Executor, THREADS_ENV};
pub use ledger::{CommLedger, Direction, MessageEvent};
pub use message::{Message, Payload, Tag, VolumeKind, ENTRY_BYTES, HEADER_BYTES};

use crate::dist::{CommError, ProcessGrid, TreeKind};
use crate::factor::{factorize, FactorError, SupFactorization};
use crate::selinv::SelInvResult;
use crate::sparse::SparseMatrix;
use std::sync::Arc;
use thiserror::Error;
use worker::{Plan, RankWorker};

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("the parallel protocol needs a symmetric matrix")]
    NotSymmetric,
    #[error("deadlock: supernode {supernode} stalled on rank {rank} ({detail})")]
    Deadlock { supernode: usize, rank: usize, detail: String },
    #[error("run ended without block ({row_block}, {col_block}) of the inverse")]
    Incomplete { row_block: usize, col_block: usize },
    #[error("rank {rank} needs entry ({row}, {col}) of block ({row_block}, {col_block}) which it does not hold")]
    MissingEntry { rank: usize, row_block: usize, col_block: usize, row: usize, col: usize },
    #[error("non-finite value while processing supernode {supernode}")]
    NonFinite { supernode: usize },
    #[error("rank {rank} is not in the {group} group of rank {anchor}")]
    NotInGroup { rank: usize, anchor: usize, group: &'static str },
    #[error("collective over an empty group")]
    EmptyGroup,
    #[error("partial from rank {rank} is {got:?}, expected {expected:?}")]
    ShapeMismatch { rank: usize, got: (usize, usize), expected: (usize, usize) },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub grid: ProcessGrid,
    pub tree: TreeKind,
    pub seed: u64,
    pub max_size: usize,
    pub executor: Executor,
    /// Report stalled work as [`RuntimeError::Deadlock`]; when off, a stalled
    /// run surfaces as [`RuntimeError::Incomplete`] during assembly.
    pub detect_deadlock: bool,
    /// Fault injection: silently drop every message with this tag.
    pub drop_tag: Option<Tag>,
}

impl RuntimeConfig {
    pub fn new(grid: ProcessGrid, tree: TreeKind, seed: u64, max_size: usize) -> Self {
        Self { grid, tree, seed, max_size, executor: Executor::Threaded(None), detect_deadlock: true, drop_tag: None }
    }

    pub fn with_executor(mut self, executor: Executor) -> Self {
        self.executor = executor;
        self
    }
}

/// Factors `a` and runs the distributed selected inversion with default
/// settings (threaded executor, deadlock detection on).
pub fn run_parallel_selinv(
    a: &SparseMatrix,
    grid: ProcessGrid,
    tree: TreeKind,
    seed: u64,
    max_size: usize,
) -> Result<(SelInvResult, CommLedger), RuntimeError> {
    run_with_config(a, &RuntimeConfig::new(grid, tree, seed, max_size))
}

pub fn run_with_config(a: &SparseMatrix, cfg: &RuntimeConfig) -> Result<(SelInvResult, CommLedger), RuntimeError> {
    let f = factorize(a, cfg.max_size)?;
    run_factored(&f, cfg)
}

/// Runs on an existing (unnormalized) factorization. `cfg.max_size` is
/// ignored; the factorization fixes the partition.
pub fn run_factored(f: &SupFactorization, cfg: &RuntimeConfig) -> Result<(SelInvResult, CommLedger), RuntimeError> {
    if f.is_normalized() {
        return Err(FactorError::AlreadyNormalized.into());
    }
    if !f.is_symmetric_input() {
        return Err(RuntimeError::NotSymmetric);
    }
    let plan = Arc::new(Plan::build(f.clone(), cfg.grid, cfg.tree, cfg.seed)?);
    let mut workers: Vec<RankWorker> = (0..cfg.grid.p()).map(|r| RankWorker::new(r, Arc::clone(&plan))).collect();
    let ledger = match cfg.executor {
        Executor::Deterministic(d) => executor::run_deterministic(&mut workers, d, cfg.drop_tag)?,
        Executor::Threaded(req) => {
            let threads = worker_count(cfg.grid.p(), req);
            let (w, l) = executor::run_threaded(workers, threads, cfg.drop_tag)?;
            workers = w;
            l
        }
    };
    if cfg.detect_deadlock {
        if let Some((supernode, rank, detail)) = workers
            .iter()
            .filter_map(|w| w.stalled().map(|(k, d)| (k, w.rank(), d)))
            .max_by_key(|(k, r, _)| (*k, std::cmp::Reverse(*r)))
        {
            return Err(RuntimeError::Deadlock { supernode, rank, detail });
        }
    }
    let result = assemble(&plan, workers)?;
    Ok((result, ledger))
}

fn assemble(plan: &Plan, workers: Vec<RankWorker>) -> Result<SelInvResult, RuntimeError> {
    let st = plan.structure();
    let mut res = SelInvResult::zeros(st);
    let mut blocks = std::collections::HashMap::new();
    for w in workers {
        let r = w.rank();
        for (key, b) in w.into_blocks() {
            if plan.map.owner(key.0, key.1) != r {
                return Err(RuntimeError::Internal(format!("rank {r} holds block {key:?} it does not own")));
            }
            blocks.insert(key, b);
        }
    }
    for k in (0..plan.count()).rev() {
        let missing = |row_block, col_block| RuntimeError::Incomplete { row_block, col_block };
        res.diag[k] = blocks.remove(&(k, k)).ok_or(missing(k, k))?.data;
        for &j in &plan.ancestors[k] {
            let b = st.block(k, j).expect("ancestor block exists");
            res.lower[k].set_row_range(b.offset, &blocks.remove(&(j, k)).ok_or(missing(j, k))?.data);
            res.upper[k].set_col_range(b.offset, &blocks.remove(&(k, j)).ok_or(missing(k, j))?.data);
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::build_grid;
    use crate::factor::normalize_factors;
    use crate::selinv::selected_inversion_symmetric;
    use crate::sparse::{gen_laplacian_2d, gen_random_diag_dominant, gen_tridiagonal};

    fn det(grid: ProcessGrid, tree: TreeKind) -> RuntimeConfig {
        RuntimeConfig::new(grid, tree, 5, 4).with_executor(Executor::Deterministic(Delivery::RoundRobin))
    }

    #[test]
    fn single_rank_matches_sequential_exactly() {
        let a = gen_laplacian_2d(6, 5).unwrap();
        let f = factorize(&a, 4).unwrap();
        let seq = selected_inversion_symmetric(&normalize_factors(f.clone()).unwrap()).unwrap();
        let (res, ledger) = run_factored(&f, &det(build_grid(1, 1).unwrap(), TreeKind::Binary)).unwrap();
        assert_eq!(res, seq);
        assert_eq!(ledger.total(Direction::Sent, VolumeKind::All), 0);
        assert!(ledger.events().is_empty());
    }

    #[test]
    fn tree_kinds_agree_bitwise_on_each_grid() {
        let a = gen_laplacian_2d(7, 6).unwrap();
        let f = factorize(&a, 4).unwrap();
        let seq = selected_inversion_symmetric(&normalize_factors(f.clone()).unwrap()).unwrap();
        for (pr, pc) in [(2, 2), (3, 2)] {
            let mut first: Option<SelInvResult> = None;
            for tree in TreeKind::ALL {
                let (res, ledger) = run_factored(&f, &det(build_grid(pr, pc).unwrap(), tree)).unwrap();
                assert!(res.compare(&seq).unwrap().relative <= 1e-12);
                assert!(ledger.is_conserved());
                match &first {
                    None => first = Some(res),
                    Some(r) => assert_eq!(&res, r),
                }
            }
        }
    }

    #[test]
    fn threaded_matches_deterministic() {
        let a = gen_laplacian_2d(6, 6).unwrap();
        let grid = build_grid(3, 2).unwrap();
        let (r1, l1) = run_with_config(&a, &det(grid, TreeKind::Shifted)).unwrap();
        let cfg = RuntimeConfig::new(grid, TreeKind::Shifted, 5, 4).with_executor(Executor::Threaded(Some(3)));
        let (r2, l2) = run_with_config(&a, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert!(l1.same_traffic(&l2));
    }

    #[test]
    fn random_delivery_is_harmless() {
        let a = gen_laplacian_2d(5, 5).unwrap();
        let grid = build_grid(2, 3).unwrap();
        let (r0, l0) = run_with_config(&a, &det(grid, TreeKind::Binary)).unwrap();
        for s in 0..4 {
            let mut cfg = det(grid, TreeKind::Binary).with_executor(Executor::Deterministic(Delivery::Random(s)));
            cfg.detect_deadlock = false;
            let (r, l) = run_with_config(&a, &cfg).unwrap();
            assert_eq!(r, r0);
            assert!(l.same_traffic(&l0));
        }
    }

    #[test]
    fn tridiagonal_colbcast_volume_by_hand() {
        // 8 singleton supernodes, C(K) = {K + 1}; every broadcast has two
        // members on a 2x2 grid and carries one entry.
        let a = gen_tridiagonal(8).unwrap();
        let mut cfg = det(build_grid(2, 2).unwrap(), TreeKind::Flat);
        cfg.max_size = 1;
        let (res, ledger) = run_with_config(&a, &cfg).unwrap();
        assert_eq!(ledger.total(Direction::Sent, VolumeKind::ColBcast), 7 * 8);
        let s = crate::symbolic::Symbolic::analyze(&a, 1).unwrap();
        let oracle = crate::selinv::extract_selected(
            &crate::selinv::dense_inverse_oracle(&a).unwrap(),
            &s.fill,
            s.structure.partition(),
        )
        .unwrap();
        assert!(res.compare(&oracle).unwrap().relative <= 1e-10);
    }

    #[test]
    fn dropped_reductions_are_reported_as_deadlock() {
        let a = gen_laplacian_2d(4, 4).unwrap();
        let mut cfg = det(build_grid(2, 2).unwrap(), TreeKind::Binary);
        cfg.drop_tag = Some(Tag::RowReduce);
        match run_with_config(&a, &cfg).unwrap_err() {
            RuntimeError::Deadlock { .. } => {}
            e => panic!("unexpected {e}"),
        }
        cfg.detect_deadlock = false;
        assert!(matches!(run_with_config(&a, &cfg).unwrap_err(), RuntimeError::Incomplete { .. }));
    }

    #[test]
    fn unsymmetric_input_is_rejected() {
        let a = gen_random_diag_dominant(20, 2, 4, false).unwrap();
        let err = run_with_config(&a, &det(build_grid(2, 2).unwrap(), TreeKind::Flat)).unwrap_err();
        assert_eq!(err, RuntimeError::NotSymmetric);
    }
}
