//! Per-rank state machine. A rank owns the blocks the block-cyclic map gives
//! it, reacts to messages, and runs a step as soon as the step's dependency
//! counter reaches zero. Nothing waits on a global barrier.

use super::exact::ExactBlock;
use super::message::{Message, Payload, Tag};
use super::RuntimeError;
use crate::dense::{gemm_acc, inverse_from_lu, solve_unit_lower_right, Dense};
use crate::dist::{build_tree, derive_seed, BlockCyclicMap, CollectiveKind, CommTree, ProcessGrid, TreeKind};
use crate::factor::SupFactorization;
use crate::symbolic::BlockStructure;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

/// Immutable data shared by every rank: the (unnormalized) factorization,
/// the ownership map and one tree per collective.
#[derive(Debug)]
pub(crate) struct Plan {
    pub factor: SupFactorization,
    pub map: BlockCyclicMap,
    pub ancestors: Vec<Vec<usize>>,
    /// `L_KK` distribution for normalization, per `K`.
    pub lpanel: Vec<CommTree>,
    /// Broadcast of `Û[K][I]`, keyed `(K, I)`.
    pub col: HashMap<(usize, usize), CommTree>,
    /// Reduction of `Ainv[J][C] L̂[C][K]`, keyed `(K, J)`.
    pub row: HashMap<(usize, usize), CommTree>,
    /// Reduction of the diagonal-block update, per `K`.
    pub diag: Vec<CommTree>,
}

fn members(mut ranks: Vec<usize>) -> Vec<usize> {
    ranks.sort_unstable();
    ranks.dedup();
    ranks
}

impl Plan {
    pub fn build(factor: SupFactorization, grid: ProcessGrid, kind: TreeKind, seed: u64) -> Result<Self, RuntimeError> {
        let st = factor.structure();
        let count = st.count();
        let map = BlockCyclicMap::new(grid, count);
        let ancestors: Vec<Vec<usize>> = (0..count).map(|k| st.ancestors(k)).collect();
        let mut lpanel = Vec::with_capacity(count);
        let mut diag = Vec::with_capacity(count);
        let mut col = HashMap::new();
        let mut row = HashMap::new();
        for k in 0..count {
            let c = &ancestors[k];
            let root = map.owner(k, k);
            let group = members(c.iter().map(|&i| map.owner(i, k)).chain([root]).collect());
            lpanel.push(build_tree(kind, root, &group, derive_seed(seed, k, CollectiveKind::LPanel, k))?);
            diag.push(build_tree(kind, root, &group, derive_seed(seed, k, CollectiveKind::DiagReduce, k))?);
            for &i in c {
                let root = map.owner(k, i);
                let group = members(c.iter().map(|&j| map.owner(j, i)).chain([root]).collect());
                col.insert((k, i), build_tree(kind, root, &group, derive_seed(seed, k, CollectiveKind::ColBcast, i))?);
            }
            for &j in c {
                let root = map.owner(j, k);
                let group = members(c.iter().map(|&i| map.owner(j, i)).chain([root]).collect());
                row.insert((k, j), build_tree(kind, root, &group, derive_seed(seed, k, CollectiveKind::RowReduce, j))?);
            }
        }
        Ok(Self { factor, map, ancestors, lpanel, col, row, diag })
    }

    pub fn structure(&self) -> &BlockStructure {
        self.factor.structure()
    }

    pub fn count(&self) -> usize {
        self.ancestors.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Event {
    /// `L̂[I][K]` is available locally (from the column broadcast).
    Lhat { k: usize, i: usize },
    /// Owned block `Ainv[row][col]` is final.
    Ainv { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Task {
    /// Local sum `Σ_I Ainv[J][I] L̂[I][K]` over the `I` this rank owns.
    Partial { k: usize, j: usize },
    /// This rank's node in the row reduction for `Ainv[J][K]`.
    RowNode { k: usize, j: usize },
    /// Local sum `Σ_J L̂[J][K]ᵀ Ainv[J][K]` over the `J` this rank owns.
    DiagPartial { k: usize },
    /// This rank's node in the reduction to the diagonal owner.
    DiagNode { k: usize },
}

impl Task {
    fn supernode(&self) -> usize {
        match *self {
            Task::Partial { k, .. } | Task::RowNode { k, .. } | Task::DiagPartial { k } | Task::DiagNode { k } => k,
        }
    }
}

/// A finished block of the inverse with its global row and column indices.
#[derive(Debug, Clone)]
pub(crate) struct OwnedBlock {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub data: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    /// Normalization of the lower panels and the transpose handoff.
    Normalize,
    /// The backward sweep producing the selected inverse.
    Invert,
}

pub(crate) struct RankWorker {
    rank: usize,
    plan: Arc<Plan>,
    /// Own normalized `L̂[I][K]`, keyed `(I, K)`.
    lhat: HashMap<(usize, usize), Dense>,
    /// Own `Û[K][I]`, keyed `(K, I)`.
    uhat: HashMap<(usize, usize), Dense>,
    /// `L̂[I][K]` received through the column broadcast, keyed `(K, I)`.
    recv_lhat: HashMap<(usize, usize), Dense>,
    ainv: HashMap<(usize, usize), OwnedBlock>,
    own_row: HashMap<(usize, usize), ExactBlock>,
    child_row: HashMap<(usize, usize), Vec<(usize, ExactBlock)>>,
    own_diag: HashMap<usize, ExactBlock>,
    child_diag: HashMap<usize, Vec<(usize, ExactBlock)>>,
    counters: HashMap<Task, usize>,
    waiters: HashMap<Event, Vec<Task>>,
    happened: HashSet<Event>,
    ready: Vec<Task>,
    outbox: Vec<Message>,
}

impl RankWorker {
    pub fn new(rank: usize, plan: Arc<Plan>) -> Self {
        Self {
            rank,
            plan,
            lhat: HashMap::new(),
            uhat: HashMap::new(),
            recv_lhat: HashMap::new(),
            ainv: HashMap::new(),
            own_row: HashMap::new(),
            child_row: HashMap::new(),
            own_diag: HashMap::new(),
            child_diag: HashMap::new(),
            counters: HashMap::new(),
            waiters: HashMap::new(),
            happened: HashSet::new(),
            ready: Vec::new(),
            outbox: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn owner(&self, i: usize, j: usize) -> usize {
        self.plan.map.owner(i, j)
    }

    fn send(&mut self, dst: usize, tag: Tag, supernode: usize, block: usize, payload: Payload) {
        debug_assert_ne!(dst, self.rank, "messages never target their sender");
        self.outbox.push(Message { src: self.rank, dst, tag, supernode, block, payload });
    }

    fn forward(&mut self, tree_children: &[usize], tag: Tag, k: usize, block: usize, data: &Dense) {
        for &c in tree_children {
            self.send(c, tag, k, block, Payload::Block(data.clone()));
        }
    }

    pub fn start(&mut self, phase: Phase) -> Result<Vec<Message>, RuntimeError> {
        match phase {
            Phase::Normalize => self.start_normalize()?,
            Phase::Invert => self.start_invert()?,
        }
        self.drain()?;
        Ok(std::mem::take(&mut self.outbox))
    }

    pub fn handle(&mut self, m: Message) -> Result<Vec<Message>, RuntimeError> {
        debug_assert_eq!(m.dst, self.rank);
        let plan = Arc::clone(&self.plan);
        let (k, b) = (m.supernode, m.block);
        match (m.tag, m.payload) {
            (Tag::LPanel, Payload::Block(lkk)) => {
                self.forward(plan.lpanel[k].children_of(self.rank), Tag::LPanel, k, k, &lkk);
                self.normalize(k, &lkk);
            }
            (Tag::UPanel, Payload::Block(u)) => {
                self.uhat.insert((k, b), u);
            }
            (Tag::ColBcast, Payload::Block(u)) => {
                self.forward(plan.col[&(k, b)].children_of(self.rank), Tag::ColBcast, k, b, &u);
                self.recv_lhat.insert((k, b), u.transpose());
                self.fire(Event::Lhat { k, i: b });
            }
            (Tag::RowReduce, Payload::Exact(e)) => {
                self.child_row.entry((k, b)).or_default().push((m.src, e));
                self.decrement(Task::RowNode { k, j: b });
            }
            (Tag::DiagUpdate, Payload::Exact(e)) => {
                self.child_diag.entry(k).or_default().push((m.src, e));
                self.decrement(Task::DiagNode { k });
            }
            (Tag::AinvTranspose, Payload::Block(t)) => {
                let st = plan.structure();
                let rows = st.partition().range(k).collect();
                let cols = st.block_rows(b, k).to_vec();
                self.ainv.insert((k, b), OwnedBlock { rows, cols, data: t });
                self.fire(Event::Ainv { row: k, col: b });
            }
            (tag, _) => return Err(RuntimeError::Internal(format!("unexpected payload for {tag}"))),
        }
        self.drain()?;
        Ok(std::mem::take(&mut self.outbox))
    }

    fn start_normalize(&mut self) -> Result<(), RuntimeError> {
        let plan = Arc::clone(&self.plan);
        for k in 0..plan.count() {
            if self.owner(k, k) == self.rank {
                let lkk = plan.factor.snode(k).diag_l.clone();
                self.forward(plan.lpanel[k].children_of(self.rank), Tag::LPanel, k, k, &lkk);
                self.normalize(k, &lkk);
            }
        }
        Ok(())
    }

    /// `L̂[I][K] = L[I][K] L_KK⁻¹` for every owned `I`, then hand the
    /// transpose to the owner of `Û[K][I]`.
    fn normalize(&mut self, k: usize, lkk: &Dense) {
        let plan = Arc::clone(&self.plan);
        for &i in &plan.ancestors[k] {
            if self.owner(i, k) != self.rank {
                continue;
            }
            let mut blk = plan.factor.lower_block(i, k).expect("ancestor block exists");
            solve_unit_lower_right(&mut blk, lkk);
            let t = blk.transpose();
            let dst = self.owner(k, i);
            if dst == self.rank {
                self.uhat.insert((k, i), t);
            } else {
                self.send(dst, Tag::UPanel, k, i, Payload::Block(t));
            }
            self.lhat.insert((i, k), blk);
        }
    }

    fn register(&mut self, task: Task, events: &[Event], extra: usize) {
        let mut count = extra;
        for e in events {
            if !self.happened.contains(e) {
                count += 1;
                self.waiters.entry(*e).or_default().push(task);
            }
        }
        if count == 0 {
            self.ready.push(task);
        } else {
            self.counters.insert(task, count);
        }
    }

    fn start_invert(&mut self) -> Result<(), RuntimeError> {
        let plan = Arc::clone(&self.plan);
        let me = self.rank;
        for k in 0..plan.count() {
            let c = &plan.ancestors[k];
            for &j in c {
                let tree = &plan.row[&(k, j)];
                if !tree.contains(me) {
                    continue;
                }
                let own: Vec<usize> = c.iter().copied().filter(|&i| self.owner(j, i) == me).collect();
                if !own.is_empty() {
                    let events: Vec<Event> =
                        own.iter().flat_map(|&i| [Event::Lhat { k, i }, Event::Ainv { row: j, col: i }]).collect();
                    self.register(Task::Partial { k, j }, &events, 0);
                }
                self.register(Task::RowNode { k, j }, &[], usize::from(!own.is_empty()) + tree.children_of(me).len());
            }
            let tree = &plan.diag[k];
            if tree.contains(me) {
                let own: Vec<Event> =
                    c.iter().filter(|&&j| self.owner(j, k) == me).map(|&j| Event::Ainv { row: j, col: k }).collect();
                if !own.is_empty() {
                    self.register(Task::DiagPartial { k }, &own, 0);
                }
                self.register(Task::DiagNode { k }, &[], usize::from(!own.is_empty()) + tree.children_of(me).len());
            }
        }
        for k in 0..plan.count() {
            for &i in &plan.ancestors[k] {
                if self.owner(k, i) != me {
                    continue;
                }
                let u = self
                    .uhat
                    .get(&(k, i))
                    .cloned()
                    .ok_or_else(|| RuntimeError::Internal(format!("rank {me} lacks Û[{k}][{i}] after normalization")))?;
                self.forward(plan.col[&(k, i)].children_of(me), Tag::ColBcast, k, i, &u);
                self.recv_lhat.insert((k, i), u.transpose());
                self.fire(Event::Lhat { k, i });
            }
        }
        Ok(())
    }

    fn fire(&mut self, e: Event) {
        if self.happened.insert(e) {
            for t in self.waiters.remove(&e).unwrap_or_default() {
                self.decrement(t);
            }
        }
    }

    fn decrement(&mut self, t: Task) {
        let c = self.counters.get_mut(&t).unwrap_or_else(|| panic!("rank {} has no pending {t:?}", self.rank));
        *c -= 1;
        if *c == 0 {
            self.counters.remove(&t);
            self.ready.push(t);
        }
    }

    fn drain(&mut self) -> Result<(), RuntimeError> {
        while let Some(t) = self.ready.pop() {
            self.run(t)?;
        }
        Ok(())
    }

    fn gather(&self, j: usize, i: usize, rows: &[usize], cols: &[usize]) -> Result<Dense, RuntimeError> {
        let missing = |r: usize, c: usize| RuntimeError::MissingEntry { rank: self.rank, row_block: j, col_block: i, row: r, col: c };
        let blk = self.ainv.get(&(j, i)).ok_or_else(|| missing(rows.first().copied().unwrap_or(0), cols.first().copied().unwrap_or(0)))?;
        let rp = rows
            .iter()
            .map(|&r| blk.rows.binary_search(&r).map_err(|_| missing(r, cols[0])))
            .collect::<Result<Vec<_>, _>>()?;
        let cp = cols
            .iter()
            .map(|&c| blk.cols.binary_search(&c).map_err(|_| missing(rows[0], c)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(blk.data.gather(&rp, &cp))
    }

    fn exact(k: usize, d: &Dense) -> Result<ExactBlock, RuntimeError> {
        ExactBlock::from_dense(d).ok_or(RuntimeError::NonFinite { supernode: k })
    }

    fn sum_with_children(own: Option<ExactBlock>, mut children: Vec<(usize, ExactBlock)>, shape: (usize, usize)) -> ExactBlock {
        children.sort_by_key(|c| c.0);
        let mut total = own.unwrap_or_else(|| ExactBlock::zeros(shape.0, shape.1));
        for (_, c) in &children {
            total.add_assign(c);
        }
        total
    }

    fn run(&mut self, t: Task) -> Result<(), RuntimeError> {
        let plan = Arc::clone(&self.plan);
        let st = plan.structure();
        let me = self.rank;
        match t {
            Task::Partial { k, j } => {
                let rows_j = st.block_rows(j, k);
                let mut acc = Dense::zeros(rows_j.len(), st.partition().size(k));
                for &i in &plan.ancestors[k] {
                    if self.owner(j, i) != me {
                        continue;
                    }
                    let x = self.gather(j, i, rows_j, st.block_rows(i, k))?;
                    gemm_acc(&mut acc, &x, &self.recv_lhat[&(k, i)]);
                }
                self.own_row.insert((k, j), Self::exact(k, &acc)?);
                self.decrement(Task::RowNode { k, j });
            }
            Task::RowNode { k, j } => {
                let shape = (st.block_rows(j, k).len(), st.partition().size(k));
                let total = Self::sum_with_children(
                    self.own_row.remove(&(k, j)),
                    self.child_row.remove(&(k, j)).unwrap_or_default(),
                    shape,
                );
                let tree = &plan.row[&(k, j)];
                if tree.root == me {
                    let value = total.to_dense().neg();
                    let t = value.transpose();
                    self.ainv.insert(
                        (j, k),
                        OwnedBlock { rows: st.block_rows(j, k).to_vec(), cols: st.partition().range(k).collect(), data: value },
                    );
                    self.fire(Event::Ainv { row: j, col: k });
                    let dst = self.owner(k, j);
                    if dst == me {
                        let rows = st.partition().range(k).collect();
                        self.ainv.insert((k, j), OwnedBlock { rows, cols: st.block_rows(j, k).to_vec(), data: t });
                        self.fire(Event::Ainv { row: k, col: j });
                    } else {
                        self.send(dst, Tag::AinvTranspose, k, j, Payload::Block(t));
                    }
                } else {
                    let parent = tree.parent_of(me).expect("non-root member has a parent");
                    self.send(parent, Tag::RowReduce, k, j, Payload::Exact(total));
                }
            }
            Task::DiagPartial { k } => {
                let w = st.partition().size(k);
                let mut acc = Dense::zeros(w, w);
                for &j in &plan.ancestors[k] {
                    if self.owner(j, k) != me {
                        continue;
                    }
                    gemm_acc(&mut acc, &self.lhat[&(j, k)].transpose(), &self.ainv[&(j, k)].data);
                }
                self.own_diag.insert(k, Self::exact(k, &acc)?);
                self.decrement(Task::DiagNode { k });
            }
            Task::DiagNode { k } => {
                let w = st.partition().size(k);
                let total =
                    Self::sum_with_children(self.own_diag.remove(&k), self.child_diag.remove(&k).unwrap_or_default(), (w, w));
                let tree = &plan.diag[k];
                if tree.root == me {
                    let s = plan.factor.snode(k);
                    let value = inverse_from_lu(&s.diag_l, &s.diag_u).sub(&total.to_dense());
                    let idx: Vec<usize> = st.partition().range(k).collect();
                    self.ainv.insert((k, k), OwnedBlock { rows: idx.clone(), cols: idx, data: value });
                    self.fire(Event::Ainv { row: k, col: k });
                } else {
                    let parent = tree.parent_of(me).expect("non-root member has a parent");
                    self.send(parent, Tag::DiagUpdate, k, k, Payload::Exact(total));
                }
            }
        }
        Ok(())
    }

    /// The highest supernode with a step still waiting, and what waits.
    pub fn stalled(&self) -> Option<(usize, String)> {
        self.counters
            .iter()
            .max_by_key(|(t, _)| (t.supernode(), **t))
            .map(|(t, c)| (t.supernode(), format!("{t:?} waiting on {c} input(s)")))
    }

    pub fn into_blocks(self) -> HashMap<(usize, usize), OwnedBlock> {
        self.ainv
    }
}
