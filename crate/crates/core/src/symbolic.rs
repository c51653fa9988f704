//! Elimination tree, symbolic fill and supernode detection on a structurally
//! symmetric pattern.

use crate::sparse::SparseMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SymbolicError {
    #[error("pattern is not structurally symmetric (entry ({row}, {col}) has no transpose)")]
    NotStructurallySymmetric { row: usize, col: usize },
    #[error("maximum supernode size must be at least 1")]
    ZeroSupernodeSize,
    #[error("elimination tree has {tree} columns but the matrix has {matrix}")]
    DimensionMismatch { tree: usize, matrix: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationTree {
    parent: Vec<Option<usize>>,
    postorder: Vec<usize>,
}

impl EliminationTree {
    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Children are visited before their parent.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n()];
        for (j, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                ch[p].push(j);
            }
        }
        ch
    }
}

fn check_symmetric(a: &SparseMatrix) -> Result<(), SymbolicError> {
    for (i, j, _) in a.triplets() {
        if a.get(j, i).is_none() {
            return Err(SymbolicError::NotStructurallySymmetric { row: i, col: j });
        }
    }
    Ok(())
}

fn postorder_of(parent: &[Option<usize>]) -> Vec<usize> {
    let n = parent.len();
    let mut children = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for (j, p) in parent.iter().enumerate() {
        match p {
            Some(p) => children[*p].push(j),
            None => roots.push(j),
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in roots {
        stack.push((r, 0));
        while let Some((node, next)) = stack.pop() {
            if next < children[node].len() {
                stack.push((node, next + 1));
                stack.push((children[node][next], 0));
            } else {
                order.push(node);
            }
        }
    }
    order
}

/// Liu's algorithm with path compression over the upper triangle.
pub fn elimination_tree(a: &SparseMatrix) -> Result<EliminationTree, SymbolicError> {
    check_symmetric(a)?;
    let n = a.n();
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        let (rows, _) = a.col(k);
        for &i in rows.iter().take_while(|&&i| i < k) {
            let mut node = Some(i);
            while let Some(x) = node {
                if x >= k {
                    break;
                }
                let next = ancestor[x];
                ancestor[x] = Some(k);
                if next.is_none() {
                    parent[x] = Some(k);
                }
                node = next;
            }
        }
    }
    let postorder = postorder_of(&parent);
    Ok(EliminationTree { parent, postorder })
}

/// Strictly-below-diagonal row structure of every column of the filled factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FillPattern {
    cols: Vec<Vec<usize>>,
}

impl FillPattern {
    pub fn from_columns(cols: Vec<Vec<usize>>) -> Self {
        Self { cols }
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }

    pub fn col(&self, j: usize) -> &[usize] {
        &self.cols[j]
    }

    /// Strictly lower nonzeros of L.
    pub fn nnz_lower(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    /// Whether `(i, j)` lies in pattern(L) + pattern(U).
    pub fn contains(&self, i: usize, j: usize) -> bool {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => true,
            std::cmp::Ordering::Greater => self.cols[j].binary_search(&i).is_ok(),
            std::cmp::Ordering::Less => self.cols[i].binary_search(&j).is_ok(),
        }
    }
}

/// Row-subtree traversal: row `i` of L is the union of the etree paths from
/// every `k < i` with `A[i][k] != 0` up to `i`.
pub fn symbolic_fill(a: &SparseMatrix, etree: &EliminationTree) -> Result<FillPattern, SymbolicError> {
    if etree.n() != a.n() {
        return Err(SymbolicError::DimensionMismatch { tree: etree.n(), matrix: a.n() });
    }
    let n = a.n();
    let mut cols = vec![Vec::new(); n];
    let mut mark = vec![usize::MAX; n];
    for i in 0..n {
        mark[i] = i;
        // column i holds row i of A by structural symmetry
        let (rows, _) = a.col(i);
        for &k in rows.iter().take_while(|&&k| k < i) {
            let mut j = k;
            while mark[j] != i {
                cols[j].push(i);
                mark[j] = i;
                match etree.parent(j) {
                    Some(p) => j = p,
                    None => break,
                }
            }
        }
    }
    Ok(FillPattern { cols })
}

/// Contiguous column ranges; supernode `k` covers `starts[k]..starts[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernodePartition {
    starts: Vec<usize>,
    col_to_snode: Vec<usize>,
}

impl SupernodePartition {
    /// `boundaries` are the sorted start columns, beginning with 0.
    pub fn from_boundaries(boundaries: &[usize], n: usize) -> Self {
        assert!(boundaries.first() == Some(&0) || n == 0, "first supernode must start at column 0");
        assert!(boundaries.windows(2).all(|w| w[0] < w[1]), "boundaries must increase");
        assert!(boundaries.last().is_none_or(|&b| b < n), "boundary beyond n");
        let mut starts = boundaries.to_vec();
        starts.push(n);
        let mut col_to_snode = vec![0; n];
        for k in 0..boundaries.len() {
            for c in starts[k]..starts[k + 1] {
                col_to_snode[c] = k;
            }
        }
        Self { starts, col_to_snode }
    }

    pub fn count(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn n(&self) -> usize {
        *self.starts.last().unwrap_or(&0)
    }

    /// Start columns of all supernodes.
    pub fn boundaries(&self) -> &[usize] {
        &self.starts[..self.count()]
    }

    pub fn start(&self, k: usize) -> usize {
        self.starts[k]
    }

    pub fn end(&self, k: usize) -> usize {
        self.starts[k + 1]
    }

    pub fn size(&self, k: usize) -> usize {
        self.starts[k + 1] - self.starts[k]
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.starts[k]..self.starts[k + 1]
    }

    pub fn snode_of(&self, col: usize) -> usize {
        self.col_to_snode[col]
    }
}

/// Greedy left-to-right merge: column `c` joins the open supernode iff the
/// supernode has fewer than `max_size` columns and its structure below `c`
/// equals the structure of column `c`.
pub fn detect_supernodes(fill: &FillPattern, max_size: usize) -> Result<SupernodePartition, SymbolicError> {
    if max_size == 0 {
        return Err(SymbolicError::ZeroSupernodeSize);
    }
    let n = fill.n();
    let mut boundaries = Vec::new();
    let mut start = 0;
    for c in 0..n {
        let joins = c > start
            && c - start < max_size
            && fill.col(start).iter().copied().filter(|&r| r > c).eq(fill.col(c).iter().copied());
        if !joins {
            boundaries.push(c);
            start = c;
        }
    }
    Ok(SupernodePartition::from_boundaries(&boundaries, n))
}

/// Rows `offset..offset + len` of a supernode's below-diagonal panel, all
/// belonging to supernode `snode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRange {
    pub snode: usize,
    pub offset: usize,
    pub len: usize,
}

/// Supernodal block layout derived from the fill and the partition: for each
/// supernode, the rows below it and how they group into blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    partition: SupernodePartition,
    rows: Vec<Vec<usize>>,
    blocks: Vec<Vec<BlockRange>>,
}

impl BlockStructure {
    pub fn new(fill: &FillPattern, partition: &SupernodePartition) -> Self {
        let count = partition.count();
        let mut rows = Vec::with_capacity(count);
        let mut blocks = Vec::with_capacity(count);
        for k in 0..count {
            let last = partition.end(k) - 1;
            let below: Vec<usize> = fill.col(partition.start(k)).iter().copied().filter(|&r| r > last).collect();
            let mut list: Vec<BlockRange> = Vec::new();
            for (pos, &r) in below.iter().enumerate() {
                let s = partition.snode_of(r);
                match list.last_mut() {
                    Some(b) if b.snode == s => b.len += 1,
                    _ => list.push(BlockRange { snode: s, offset: pos, len: 1 }),
                }
            }
            rows.push(below);
            blocks.push(list);
        }
        Self { partition: partition.clone(), rows, blocks }
    }

    pub fn partition(&self) -> &SupernodePartition {
        &self.partition
    }

    pub fn count(&self) -> usize {
        self.partition.count()
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    /// Global rows of the below-diagonal panel of supernode `k`.
    pub fn rows(&self, k: usize) -> &[usize] {
        &self.rows[k]
    }

    pub fn blocks(&self, k: usize) -> &[BlockRange] {
        &self.blocks[k]
    }

    /// Supernodes `I > k` with a nonzero block `L[I][k]`, ascending.
    pub fn ancestors(&self, k: usize) -> Vec<usize> {
        self.blocks[k].iter().map(|b| b.snode).collect()
    }

    pub fn block(&self, k: usize, i: usize) -> Option<BlockRange> {
        self.blocks[k].binary_search_by_key(&i, |b| b.snode).ok().map(|p| self.blocks[k][p])
    }

    /// Global rows of block `L[i][k]` (empty when the block is absent).
    pub fn block_rows(&self, i: usize, k: usize) -> &[usize] {
        match self.block(k, i) {
            Some(b) => &self.rows[k][b.offset..b.offset + b.len],
            None => &[],
        }
    }

    /// Parent of `k` in the supernodal elimination tree.
    pub fn parent(&self, k: usize) -> Option<usize> {
        self.blocks[k].first().map(|b| b.snode)
    }

    /// Global row (first) and column (second) index lists of the stored
    /// selected block at block position `(j, i)`. `None` when the block is
    /// not part of the filled pattern.
    pub fn block_indices(&self, j: usize, i: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        use std::cmp::Ordering::*;
        match j.cmp(&i) {
            Equal => Some((self.partition.range(i).collect(), self.partition.range(i).collect())),
            Greater => self.block(i, j).map(|_| (self.block_rows(j, i).to_vec(), self.partition.range(i).collect())),
            Less => self.block(j, i).map(|_| (self.partition.range(j).collect(), self.block_rows(i, j).to_vec())),
        }
    }

    /// Total stored entries across diagonal blocks and both off-diagonal panels.
    pub fn stored_entries(&self) -> usize {
        (0..self.count())
            .map(|k| {
                let w = self.partition.size(k);
                w * w + 2 * w * self.rows[k].len()
            })
            .sum()
    }
}

/// Ordered index set of supernodes `I > k` with a nonzero block in block
/// column `k` of L (equivalently block row `k` of U).
pub fn ancestor_blocks(k: usize, fill: &FillPattern, part: &SupernodePartition) -> Vec<usize> {
    let last = part.end(k) - 1;
    let mut out: Vec<usize> =
        fill.col(part.start(k)).iter().filter(|&&r| r > last).map(|&r| part.snode_of(r)).collect();
    out.dedup();
    out
}

/// Complete symbolic analysis of a structurally symmetric matrix.
#[derive(Debug, Clone)]
pub struct Symbolic {
    pub etree: EliminationTree,
    pub fill: FillPattern,
    pub structure: BlockStructure,
}

impl Symbolic {
    pub fn analyze(a: &SparseMatrix, max_size: usize) -> Result<Self, SymbolicError> {
        let etree = elimination_tree(a)?;
        let fill = symbolic_fill(a, &etree)?;
        let partition = detect_supernodes(&fill, max_size)?;
        let structure = BlockStructure::new(&fill, &partition);
        Ok(Self { etree, fill, structure })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{gen_arrow, gen_laplacian_2d, gen_tridiagonal, SparseMatrix};

    /// Dense boolean Gaussian elimination: returns (parent, lower fill columns).
    fn dense_symbolic(a: &SparseMatrix) -> (Vec<Option<usize>>, Vec<Vec<usize>>) {
        let n = a.n();
        let mut m = vec![vec![false; n]; n];
        for (i, j, _) in a.triplets() {
            m[i][j] = true;
        }
        for k in 0..n {
            for i in k + 1..n {
                if m[i][k] {
                    for j in k + 1..n {
                        if m[k][j] {
                            m[i][j] = true;
                        }
                    }
                }
            }
        }
        let cols: Vec<Vec<usize>> = (0..n).map(|j| (j + 1..n).filter(|&i| m[i][j]).collect()).collect();
        let parent = cols.iter().map(|c| c.first().copied()).collect();
        (parent, cols)
    }

    fn cycle(n: usize) -> SparseMatrix {
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 4.0));
            let j = (i + 1) % n;
            t.push((i, j, -1.0));
            t.push((j, i, -1.0));
        }
        SparseMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn etree_of_tridiagonal_is_a_chain() {
        let a = gen_tridiagonal(4).unwrap();
        let t = elimination_tree(&a).unwrap();
        assert_eq!(t.parents(), &[Some(1), Some(2), Some(3), None]);
        assert_eq!(t.postorder(), &[0, 1, 2, 3]);
    }

    #[test]
    fn etree_of_arrow_points_to_last() {
        let a = gen_arrow(5).unwrap();
        let t = elimination_tree(&a).unwrap();
        assert_eq!(t.parents(), &[Some(4), Some(4), Some(4), Some(4), None]);
    }

    #[test]
    fn etree_and_fill_match_dense_elimination() {
        for a in [gen_laplacian_2d(3, 3).unwrap(), gen_laplacian_2d(4, 4).unwrap(), cycle(5), cycle(9)] {
            let (parent, cols) = dense_symbolic(&a);
            let t = elimination_tree(&a).unwrap();
            assert_eq!(t.parents(), parent.as_slice());
            let f = symbolic_fill(&a, &t).unwrap();
            for j in 0..a.n() {
                assert_eq!(f.col(j), cols[j].as_slice(), "column {j}");
            }
        }
    }

    #[test]
    fn laplacian_4x4_fill_count() {
        let a = gen_laplacian_2d(4, 4).unwrap();
        let (_, cols) = dense_symbolic(&a);
        let s = Symbolic::analyze(&a, 8).unwrap();
        let expected: usize = cols.iter().map(Vec::len).sum();
        assert_eq!(s.fill.nnz_lower(), expected);
    }

    #[test]
    fn tridiagonal_has_no_fill() {
        let a = gen_tridiagonal(6).unwrap();
        let s = Symbolic::analyze(&a, 1).unwrap();
        for j in 0..5 {
            assert_eq!(s.fill.col(j), &[j + 1]);
        }
        assert!(s.fill.col(5).is_empty());
    }

    #[test]
    fn postorder_visits_children_first() {
        let a = gen_laplacian_2d(5, 4).unwrap();
        let t = elimination_tree(&a).unwrap();
        let mut pos = vec![0; a.n()];
        for (p, &j) in t.postorder().iter().enumerate() {
            pos[j] = p;
        }
        for j in 0..a.n() {
            if let Some(p) = t.parent(j) {
                assert!(p > j);
                assert!(pos[j] < pos[p]);
            }
        }
    }

    #[test]
    fn unsymmetric_pattern_is_rejected() {
        let a = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(elimination_tree(&a).unwrap_err(), SymbolicError::NotStructurallySymmetric { row: 1, col: 0 });
    }

    #[test]
    fn dense_matrix_splits_at_cap() {
        let mut t = vec![];
        for i in 0..6 {
            for j in 0..6 {
                t.push((i, j, if i == j { 10.0 } else { 1.0 }));
            }
        }
        let a = SparseMatrix::from_triplets(6, &t).unwrap();
        let s = Symbolic::analyze(&a, 3).unwrap();
        assert_eq!(s.structure.partition().boundaries(), &[0, 3]);
    }

    #[test]
    fn diagonal_matrix_merges_up_to_cap() {
        let a = SparseMatrix::identity(10);
        let s = Symbolic::analyze(&a, 4).unwrap();
        assert_eq!(s.structure.partition().boundaries(), &[0, 4, 8]);
        assert!(matches!(detect_supernodes(&s.fill, 0), Err(SymbolicError::ZeroSupernodeSize)));
    }

    #[test]
    fn laplacian_partition_rechecks_structure_predicate() {
        let a = gen_laplacian_2d(4, 4).unwrap();
        let s = Symbolic::analyze(&a, 8).unwrap();
        let p = s.structure.partition();
        let below = |c: usize, after: usize| -> Vec<usize> { s.fill.col(c).iter().copied().filter(|&r| r > after).collect() };
        for k in 0..p.count() {
            let last = p.end(k) - 1;
            for c in p.range(k) {
                assert_eq!(below(c, last), below(p.start(k), last));
            }
            assert!(p.size(k) <= 8);
            // a boundary exists only where merging would break the predicate or the cap
            if k + 1 < p.count() {
                let next = p.start(k + 1);
                let merge_ok = p.size(k) < 8 && below(p.start(k), next) == s.fill.col(next);
                assert!(!merge_ok, "boundary at {next} is not forced");
            }
        }
    }

    #[test]
    fn ancestor_sets() {
        let a = gen_tridiagonal(5).unwrap();
        let s = Symbolic::analyze(&a, 1).unwrap();
        let p = s.structure.partition();
        for k in 0..4 {
            assert_eq!(ancestor_blocks(k, &s.fill, p), vec![k + 1]);
        }
        assert!(ancestor_blocks(4, &s.fill, p).is_empty());

        let a = gen_laplacian_2d(4, 4).unwrap();
        let s = Symbolic::analyze(&a, 4).unwrap();
        let p = s.structure.partition();
        let (_, cols) = dense_symbolic(&a);
        for k in 0..p.count() {
            let mut expect: Vec<usize> = p
                .range(k)
                .flat_map(|c| cols[c].iter().copied())
                .filter(|&r| r >= p.end(k))
                .map(|r| p.snode_of(r))
                .collect();
            expect.sort_unstable();
            expect.dedup();
            assert_eq!(ancestor_blocks(k, &s.fill, p), expect);
            assert_eq!(s.structure.ancestors(k), expect);
        }
    }
}
