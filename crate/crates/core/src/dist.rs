//! Process grid, block-cyclic ownership and the trees used for restricted
//! broadcasts and reductions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("process grid dimensions must be at least 1 (got {pr}x{pc})")]
    ZeroGrid { pr: usize, pc: usize },
    #[error("supernode index ({row}, {col}) outside 0..{count}")]
    BlockOutOfRange { row: usize, col: usize, count: usize },
    #[error("root {root} is not a member of the tree")]
    RootNotMember { root: usize },
    #[error("rank {rank} appears more than once in the member list")]
    DuplicateMember { rank: usize },
    #[error("shift offset {offset} out of range for {len} receivers")]
    BadOffset { offset: usize, len: usize },
    #[error("unknown tree kind {0:?}")]
    UnknownTreeKind(String),
}

/// `pr x pc` grid with row-major rank numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessGrid {
    pub pr: usize,
    pub pc: usize,
}

pub fn build_grid(pr: usize, pc: usize) -> Result<ProcessGrid, CommError> {
    if pr == 0 || pc == 0 {
        return Err(CommError::ZeroGrid { pr, pc });
    }
    Ok(ProcessGrid { pr, pc })
}

impl ProcessGrid {
    pub fn p(&self) -> usize {
        self.pr * self.pc
    }

    pub fn rank(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.pr && col < self.pc);
        row * self.pc + col
    }

    /// `(grid_row, grid_col)` of a rank.
    pub fn coords(&self, rank: usize) -> (usize, usize) {
        (rank / self.pc, rank % self.pc)
    }
}

impl fmt::Display for ProcessGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.pr, self.pc)
    }
}

/// 2D block-cyclic assignment of supernodal blocks to grid ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCyclicMap {
    pub grid: ProcessGrid,
    pub count: usize,
}

impl BlockCyclicMap {
    pub fn new(grid: ProcessGrid, count: usize) -> Self {
        Self { grid, count }
    }

    /// Owner without range checks.
    pub fn owner(&self, i: usize, j: usize) -> usize {
        self.grid.rank(i % self.grid.pr, j % self.grid.pc)
    }
}

pub fn map_block(i: usize, j: usize, m: &BlockCyclicMap) -> Result<usize, CommError> {
    if i >= m.count || j >= m.count {
        return Err(CommError::BlockOutOfRange { row: i, col: j, count: m.count });
    }
    Ok(m.owner(i, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Flat,
    Binary,
    Shifted,
}

impl TreeKind {
    pub const ALL: [TreeKind; 3] = [TreeKind::Flat, TreeKind::Binary, TreeKind::Shifted];

    pub fn name(&self) -> &'static str {
        match self {
            TreeKind::Flat => "flat",
            TreeKind::Binary => "binary",
            TreeKind::Shifted => "shifted",
        }
    }
}

impl fmt::Display for TreeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TreeKind {
    type Err = CommError;
    fn from_str(s: &str) -> Result<Self, CommError> {
        match s {
            "flat" => Ok(TreeKind::Flat),
            "binary" => Ok(TreeKind::Binary),
            "shifted" | "shifted-binary" => Ok(TreeKind::Shifted),
            other => Err(CommError::UnknownTreeKind(other.to_string())),
        }
    }
}

/// Rooted spanning tree over a set of ranks. `members` is sorted ascending;
/// `children[p]` lists the children of `members[p]` in send order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommTree {
    pub root: usize,
    pub members: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    pub kind: TreeKind,
    pub seed: Option<u64>,
}

impl CommTree {
    fn index(&self, rank: usize) -> Option<usize> {
        self.members.binary_search(&rank).ok()
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.index(rank).is_some()
    }

    pub fn children_of(&self, rank: usize) -> &[usize] {
        match self.index(rank) {
            Some(p) => &self.children[p],
            None => &[],
        }
    }

    pub fn parent_of(&self, rank: usize) -> Option<usize> {
        self.members
            .iter()
            .zip(&self.children)
            .find(|(_, ch)| ch.contains(&rank))
            .map(|(&m, _)| m)
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// All edges `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.members
            .iter()
            .zip(&self.children)
            .flat_map(|(&m, ch)| ch.iter().map(move |&c| (m, c)))
            .collect()
    }
}

fn sorted_receivers(root: usize, members: &[usize]) -> Result<(Vec<usize>, Vec<usize>), CommError> {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(CommError::DuplicateMember { rank: w[0] });
    }
    if sorted.binary_search(&root).is_err() {
        return Err(CommError::RootNotMember { root });
    }
    let rest = sorted.iter().copied().filter(|&r| r != root).collect();
    Ok((sorted, rest))
}

fn empty_children(members: &[usize]) -> Vec<Vec<usize>> {
    vec![Vec::new(); members.len()]
}

fn add_child(members: &[usize], children: &mut [Vec<usize>], parent: usize, child: usize) {
    let p = members.binary_search(&parent).expect("parent is a member");
    children[p].push(child);
}

pub fn build_flat_tree(root: usize, members: &[usize]) -> Result<CommTree, CommError> {
    let (sorted, rest) = sorted_receivers(root, members)?;
    let mut children = empty_children(&sorted);
    for r in rest {
        add_child(&sorted, &mut children, root, r);
    }
    Ok(CommTree { root, members: sorted, children, kind: TreeKind::Flat, seed: None })
}

/// Split `list` into a first half of `ceil(len/2)` and the rest; the head of
/// each half becomes a child of `parent` and roots the recursion on its half.
fn split_into(list: &[usize], parent: usize, members: &[usize], children: &mut [Vec<usize>]) {
    if list.is_empty() {
        return;
    }
    let mid = list.len().div_ceil(2);
    for half in [&list[..mid], &list[mid..]] {
        if let Some((&head, tail)) = half.split_first() {
            add_child(members, children, parent, head);
            split_into(tail, head, members, children);
        }
    }
}

fn binary_from_order(
    root: usize,
    sorted: Vec<usize>,
    order: &[usize],
    kind: TreeKind,
    seed: Option<u64>,
) -> CommTree {
    let mut children = empty_children(&sorted);
    split_into(order, root, &sorted, &mut children);
    CommTree { root, members: sorted, children, kind, seed }
}

pub fn build_binary_tree(root: usize, members: &[usize]) -> Result<CommTree, CommError> {
    let (sorted, rest) = sorted_receivers(root, members)?;
    Ok(binary_from_order(root, sorted, &rest, TreeKind::Binary, None))
}

/// Binary tree over the receiver list rotated left by `offset`.
pub fn build_shifted_binary_tree_with_offset(root: usize, members: &[usize], offset: usize) -> Result<CommTree, CommError> {
    let (sorted, mut rest) = sorted_receivers(root, members)?;
    if offset > 0 && offset >= rest.len() {
        return Err(CommError::BadOffset { offset, len: rest.len() });
    }
    rest.rotate_left(offset);
    Ok(binary_from_order(root, sorted, &rest, TreeKind::Shifted, None))
}

/// Offset drawn uniformly from `[0, receivers)` by a ChaCha8 stream seeded with `seed`.
pub fn shift_offset(seed: u64, receivers: usize) -> usize {
    if receivers <= 1 {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(seed).random_range(0..receivers)
}

pub fn build_shifted_binary_tree(root: usize, members: &[usize], seed: u64) -> Result<CommTree, CommError> {
    let (sorted, mut rest) = sorted_receivers(root, members)?;
    let k = shift_offset(seed, rest.len());
    rest.rotate_left(k);
    Ok(binary_from_order(root, sorted, &rest, TreeKind::Shifted, Some(seed)))
}

pub fn build_tree(kind: TreeKind, root: usize, members: &[usize], seed: u64) -> Result<CommTree, CommError> {
    match kind {
        TreeKind::Flat => build_flat_tree(root, members),
        TreeKind::Binary => build_binary_tree(root, members),
        TreeKind::Shifted => build_shifted_binary_tree(root, members, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeStats {
    /// Longest root-to-leaf path in edges.
    pub depth: usize,
    pub max_out_degree: usize,
    /// Non-root members with at least one child.
    pub internal_nodes: BTreeSet<usize>,
}

pub fn tree_stats(t: &CommTree) -> TreeStats {
    let mut depth = 0;
    let mut stack = vec![(t.root, 0usize)];
    while let Some((node, d)) = stack.pop() {
        depth = depth.max(d);
        for &c in t.children_of(node) {
            stack.push((c, d + 1));
        }
    }
    let max_out_degree = t.children.iter().map(Vec::len).max().unwrap_or(0);
    let internal_nodes = t
        .members
        .iter()
        .zip(&t.children)
        .filter(|(&m, ch)| m != t.root && !ch.is_empty())
        .map(|(&m, _)| m)
        .collect();
    TreeStats { depth, max_out_degree, internal_nodes }
}

/// Which collective a derived seed is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveKind {
    LPanel = 1,
    ColBcast = 2,
    RowReduce = 3,
    DiagReduce = 4,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-tree seed from the global seed, the supernode, the collective and the
/// block the collective is about.
pub fn derive_seed(global: u64, supernode: usize, kind: CollectiveKind, block: usize) -> u64 {
    let mut h = splitmix64(global);
    h = splitmix64(h ^ supernode as u64);
    h = splitmix64(h ^ kind as u64);
    splitmix64(h ^ block as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_spanning(t: &CommTree) {
        assert_eq!(t.edge_count(), t.members.len() - 1);
        let mut seen = BTreeSet::new();
        let mut stack = vec![t.root];
        while let Some(n) = stack.pop() {
            assert!(seen.insert(n), "cycle through {n}");
            stack.extend_from_slice(t.children_of(n));
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), t.members);
    }

    #[test]
    fn grids() {
        let g = build_grid(1, 1).unwrap();
        assert_eq!((g.p(), g.rank(0, 0)), (1, 0));
        let g = build_grid(4, 3).unwrap();
        assert_eq!(g.p(), 12);
        assert_eq!(g.rank(1, 2), 5);
        let g = build_grid(2, 2).unwrap();
        let mut ranks: Vec<usize> = (0..2).flat_map(|i| (0..2).map(move |j| g.rank(i, j))).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![0, 1, 2, 3]);
        assert!(build_grid(0, 2).is_err());
    }

    #[test]
    fn block_cyclic_owner() {
        let m = BlockCyclicMap::new(build_grid(4, 3).unwrap(), 10);
        assert_eq!(map_block(0, 0, &m).unwrap(), 0);
        assert_eq!(map_block(5, 4, &m).unwrap(), 4);
        assert!(map_block(10, 0, &m).is_err());
        for i in 0..10 {
            for j in 0..10 {
                if i + 4 < 10 {
                    assert_eq!(m.owner(i, j), m.owner(i + 4, j));
                }
                if j + 3 < 10 {
                    assert_eq!(m.owner(i, j), m.owner(i, j + 3));
                }
            }
        }
    }

    #[test]
    fn flat_tree() {
        let t = build_flat_tree(4, &[4]).unwrap();
        assert_eq!(t.edge_count(), 0);
        let t = build_flat_tree(4, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.children_of(4), &[1, 2, 3, 5, 6]);
        let s = tree_stats(&t);
        assert_eq!((s.depth, s.max_out_degree), (1, 5));
        assert!(s.internal_nodes.is_empty());
        assert_eq!(build_flat_tree(9, &[1, 2]).unwrap_err(), CommError::RootNotMember { root: 9 });
        assert_eq!(build_flat_tree(1, &[1, 2, 2]).unwrap_err(), CommError::DuplicateMember { rank: 2 });
    }

    #[test]
    fn binary_tree_six_members() {
        let t = build_binary_tree(4, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(t.children_of(4), &[1, 5]);
        assert_eq!(t.children_of(1), &[2, 3]);
        assert_eq!(t.children_of(5), &[6]);
        assert_eq!(t.edge_count(), 5);
        assert_eq!(tree_stats(&t).max_out_degree, 2);
        let two = build_binary_tree(3, &[7, 3]).unwrap();
        assert_eq!(two.edges(), vec![(3, 7)]);
    }

    #[test]
    fn shifted_tree_with_six_first() {
        let t = build_shifted_binary_tree_with_offset(4, &[1, 2, 3, 4, 5, 6], 4).unwrap();
        assert_eq!(t.children_of(4), &[6, 3]);
        assert_eq!(t.children_of(6), &[1, 2]);
        let zero = build_shifted_binary_tree_with_offset(4, &[1, 2, 3, 4, 5, 6], 0).unwrap();
        assert_eq!(zero.children, build_binary_tree(4, &[1, 2, 3, 4, 5, 6]).unwrap().children);
        let a = build_shifted_binary_tree(4, &[1, 2, 3, 4, 5, 6], 99).unwrap();
        let b = build_shifted_binary_tree(4, &[1, 2, 3, 4, 5, 6], 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_receiver_leads_for_exactly_one_offset() {
        let members: Vec<usize> = (0..9).collect();
        let mut firsts = vec![];
        for k in 0..8 {
            let t = build_shifted_binary_tree_with_offset(3, &members, k).unwrap();
            firsts.push(t.children_of(3)[0]);
        }
        firsts.sort_unstable();
        assert_eq!(firsts, vec![0, 1, 2, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn binary_depth_and_degree_exhaustive() {
        for g in 1..=128usize {
            let members: Vec<usize> = (0..g).map(|x| 3 * x + 1).collect();
            let bound = (g as f64).log2().ceil() as usize;
            for t in [build_binary_tree(members[0], &members).unwrap(), build_shifted_binary_tree(members[g / 2], &members, g as u64).unwrap()] {
                check_spanning(&t);
                let s = tree_stats(&t);
                assert!(s.max_out_degree <= 2);
                assert!(s.depth <= bound, "g={g} depth={} bound={bound}", s.depth);
            }
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 5, CollectiveKind::ColBcast, 7);
        assert_ne!(a, derive_seed(1, 5, CollectiveKind::RowReduce, 7));
        assert_ne!(a, derive_seed(1, 6, CollectiveKind::ColBcast, 7));
        assert_ne!(a, derive_seed(2, 5, CollectiveKind::ColBcast, 7));
        assert_ne!(a, derive_seed(1, 5, CollectiveKind::ColBcast, 8));
        assert_eq!(a, derive_seed(1, 5, CollectiveKind::ColBcast, 7));
    }
}
