//! Stand-alone versions of the restricted collectives, executed over a single
//! tree with their own ledger. The distributed run uses the same trees and
//! the same exact reduction inside the rank workers.

use super::exact::ExactBlock;
use super::ledger::CommLedger;
use super::message::{Message, Payload, Tag};
use super::RuntimeError;
use crate::dense::Dense;
use crate::dist::{build_tree, CommTree, ProcessGrid, TreeKind};
use std::collections::BTreeMap;

fn log(ledger: &mut CommLedger, seq: &mut u64, m: &Message) {
    ledger.record_send(m, *seq);
    ledger.record_receive(m);
    *seq += 1;
}

fn group(grid: &ProcessGrid, anchor: usize, ranks: &[usize], column: bool) -> Result<Vec<usize>, RuntimeError> {
    if ranks.is_empty() {
        return Err(RuntimeError::EmptyGroup);
    }
    let (ar, ac) = grid.coords(anchor);
    let mut members = ranks.to_vec();
    members.push(anchor);
    members.sort_unstable();
    members.dedup();
    for &r in &members {
        let (rr, rc) = grid.coords(r);
        let same = if column { rc == ac } else { rr == ar };
        if r >= grid.p() || !same {
            return Err(RuntimeError::NotInGroup { rank: r, anchor, group: if column { "column" } else { "row" } });
        }
    }
    Ok(members)
}

/// Broadcasts `panel` from `owner` to every rank of `subset` (which must lie
/// in the owner's grid column). Returns what each member holds afterwards
/// and one ledger entry per tree edge.
pub fn col_bcast(
    grid: &ProcessGrid,
    owner: usize,
    subset: &[usize],
    panel: &Dense,
    kind: TreeKind,
    seed: u64,
) -> Result<(BTreeMap<usize, Dense>, CommLedger, CommTree), RuntimeError> {
    let members = group(grid, owner, subset, true)?;
    let tree = build_tree(kind, owner, &members, seed)?;
    let mut ledger = CommLedger::new(grid.p());
    let mut seq = 0;
    let mut held = BTreeMap::new();
    held.insert(owner, panel.clone());
    let mut queue = std::collections::VecDeque::from([owner]);
    while let Some(node) = queue.pop_front() {
        for &c in tree.children_of(node) {
            let m = Message { src: node, dst: c, tag: Tag::ColBcast, supernode: 0, block: 0, payload: Payload::Block(held[&node].clone()) };
            log(&mut ledger, &mut seq, &m);
            held.insert(c, held[&node].clone());
            queue.push_back(c);
        }
    }
    Ok((held, ledger, tree))
}

/// Sums the partials of a row group at `target` along the reversed tree.
/// Children are combined in ascending rank order and the addition is exact,
/// so the result is the correctly rounded sum for every tree shape.
pub fn row_reduce(
    grid: &ProcessGrid,
    target: usize,
    partials: &[(usize, Dense)],
    kind: TreeKind,
    seed: u64,
) -> Result<(Dense, CommLedger), RuntimeError> {
    let ranks: Vec<usize> = partials.iter().map(|p| p.0).collect();
    let members = group(grid, target, &ranks, false)?;
    let shape = partials[0].1.shape();
    let mut own: BTreeMap<usize, ExactBlock> = BTreeMap::new();
    for (r, d) in partials {
        if d.shape() != shape {
            return Err(RuntimeError::ShapeMismatch { rank: *r, got: d.shape(), expected: shape });
        }
        let e = ExactBlock::from_dense(d).ok_or(RuntimeError::NonFinite { supernode: 0 })?;
        own.entry(*r).and_modify(|x| x.add_assign(&e)).or_insert(e);
    }
    let tree = build_tree(kind, target, &members, seed)?;
    let mut ledger = CommLedger::new(grid.p());
    let mut seq = 0;

    fn subtree(
        node: usize,
        tree: &CommTree,
        own: &BTreeMap<usize, ExactBlock>,
        shape: (usize, usize),
        ledger: &mut CommLedger,
        seq: &mut u64,
    ) -> ExactBlock {
        let mut total = own.get(&node).cloned().unwrap_or_else(|| ExactBlock::zeros(shape.0, shape.1));
        let mut children = tree.children_of(node).to_vec();
        children.sort_unstable();
        for c in children {
            let part = subtree(c, tree, own, shape, ledger, seq);
            let m = Message { src: c, dst: node, tag: Tag::RowReduce, supernode: 0, block: 0, payload: Payload::Exact(part) };
            log(ledger, seq, &m);
            if let Payload::Exact(p) = &m.payload {
                total.add_assign(p);
            }
        }
        total
    }

    let total = subtree(target, &tree, &own, shape, &mut ledger, &mut seq);
    Ok((total.to_dense(), ledger))
}

/// Moves a finished `L̂[I][K]` panel to the owner of `Û[K][I]` as its
/// transpose. Only defined for symmetric matrices.
pub fn transpose_handoff(
    grid: &ProcessGrid,
    panel: &Dense,
    from: usize,
    to: usize,
    symmetric: bool,
) -> Result<(Dense, CommLedger), RuntimeError> {
    if !symmetric {
        return Err(RuntimeError::NotSymmetric);
    }
    let mut ledger = CommLedger::new(grid.p());
    let t = panel.transpose();
    if from != to {
        let m = Message { src: from, dst: to, tag: Tag::UPanel, supernode: 0, block: 0, payload: Payload::Block(t.clone()) };
        log(&mut ledger, &mut 0, &m);
    }
    Ok((t, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::build_grid;
    use crate::runtime::{Direction, VolumeKind};
    use rand::{Rng, SeedableRng};

    #[test]
    fn bcast_message_counts() {
        let grid = build_grid(8, 2).unwrap();
        let panel = Dense::identity(2);
        let (held, ledger, _) = col_bcast(&grid, 0, &[0], &panel, TreeKind::Flat, 0).unwrap();
        assert_eq!((held.len(), ledger.total_messages(Direction::Sent)), (1, 0));
        let six = [0, 2, 4, 6, 8, 10];
        let (held, ledger, _) = col_bcast(&grid, 4, &six, &panel, TreeKind::Flat, 0).unwrap();
        assert_eq!(held.len(), 6);
        assert_eq!(ledger.messages(4, Direction::Sent, Tag::ColBcast), 5);
        for kind in [TreeKind::Binary, TreeKind::Shifted] {
            let (held, ledger, _) = col_bcast(&grid, 4, &six, &panel, kind, 3).unwrap();
            assert!(held.values().all(|d| *d == panel));
            assert_eq!(ledger.messages(4, Direction::Sent, Tag::ColBcast), 2);
            assert_eq!(ledger.total_messages(Direction::Sent), 5);
            assert_eq!(ledger.total(Direction::Sent, VolumeKind::ColBcast), 5 * 32);
        }
        assert!(matches!(col_bcast(&grid, 0, &[1], &panel, TreeKind::Flat, 0), Err(RuntimeError::NotInGroup { .. })));
        assert!(matches!(col_bcast(&grid, 0, &[], &panel, TreeKind::Flat, 0), Err(RuntimeError::EmptyGroup)));
    }

    #[test]
    fn reduce_sums() {
        let grid = build_grid(1, 6).unwrap();
        let one = Dense::from_fn(2, 2, |_, _| 1.0);
        let (r, l) = row_reduce(&grid, 2, &[(2, one.clone())], TreeKind::Binary, 0).unwrap();
        assert_eq!((r, l.total_messages(Direction::Sent)), (one.clone(), 0));
        let parts: Vec<(usize, Dense)> = [0, 1, 2].iter().map(|&r| (r, one.clone())).collect();
        let (r, _) = row_reduce(&grid, 0, &parts, TreeKind::Flat, 0).unwrap();
        assert_eq!(r, Dense::from_fn(2, 2, |_, _| 3.0));
        let bad = vec![(0, one.clone()), (1, Dense::zeros(1, 2))];
        assert!(matches!(row_reduce(&grid, 0, &bad, TreeKind::Flat, 0), Err(RuntimeError::ShapeMismatch { rank: 1, .. })));
    }

    #[test]
    fn reduce_is_tree_independent_to_the_bit() {
        let grid = build_grid(2, 6).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let parts: Vec<(usize, Dense)> =
            (6..12).map(|r| (r, Dense::from_fn(3, 2, |_, _| rng.random_range(-1e3..1e3)))).collect();
        let (flat, _) = row_reduce(&grid, 9, &parts, TreeKind::Flat, 0).unwrap();
        for kind in [TreeKind::Binary, TreeKind::Shifted] {
            for seed in 0..5 {
                let (r, _) = row_reduce(&grid, 9, &parts, kind, seed).unwrap();
                assert_eq!(r, flat);
            }
        }
        let direct = parts.iter().skip(1).fold(parts[0].1.clone(), |mut acc, (_, d)| {
            acc.sub_assign(&d.neg());
            acc
        });
        assert!(flat.max_abs_diff(&direct) <= 1e-12);
    }

    #[test]
    fn handoff() {
        let grid = build_grid(4, 3).unwrap();
        let p = Dense::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let (t, l) = transpose_handoff(&grid, &p, 5, 5, true).unwrap();
        assert_eq!(l.total_messages(Direction::Sent), 0);
        assert_eq!(t.transpose(), p);
        let (_, l) = transpose_handoff(&grid, &p, 4, 5, true).unwrap();
        assert_eq!(l.total_messages(Direction::Sent), 1);
        assert_eq!(transpose_handoff(&grid, &p, 4, 5, false).unwrap_err(), RuntimeError::NotSymmetric);
    }
}
