use proptest::prelude::*;
use selinv_core::dist::{build_grid, build_tree, tree_stats, TreeKind};
use selinv_core::runtime::{run_with_config, Delivery, Direction, Executor, RuntimeConfig, VolumeKind};
use selinv_core::selinv::{dense_inverse_oracle, extract_selected, selected_inverse};
use selinv_core::sparse::gen_random_diag_dominant;
use selinv_core::symbolic::Symbolic;

fn tree_kind() -> impl Strategy<Value = TreeKind> {
    prop_oneof![Just(TreeKind::Flat), Just(TreeKind::Binary), Just(TreeKind::Shifted)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sequential_matches_dense_oracle(n in 1usize..60, per_col in 0usize..4, seed in any::<u64>(), sym in any::<bool>(), ms in 1usize..10) {
        let a = gen_random_diag_dominant(n, per_col, seed, sym).unwrap();
        let sel = selected_inverse(&a, ms).unwrap();
        let s = Symbolic::analyze(&a, ms).unwrap();
        let oracle = extract_selected(&dense_inverse_oracle(&a).unwrap(), &s.fill, s.structure.partition()).unwrap();
        prop_assert!(sel.compare(&oracle).unwrap().relative <= 1e-10);
    }

    #[test]
    fn trees_span_with_logarithmic_depth(g in 1usize..100, root_pick in any::<prop::sample::Index>(), seed in any::<u64>(), kind in tree_kind()) {
        let members: Vec<usize> = (0..g).map(|i| 3 * i + 1).collect();
        let root = members[root_pick.index(g)];
        let t = build_tree(kind, root, &members, seed).unwrap();
        prop_assert_eq!(t.edge_count(), g - 1);
        let st = tree_stats(&t);
        let bound = if g == 1 { 0 } else { (g as f64).log2().ceil() as usize };
        prop_assert!(st.depth <= bound);
        for &m in &members {
            if m != root {
                prop_assert!(t.parent_of(m).is_some());
            }
        }
        if kind != TreeKind::Flat {
            prop_assert!(st.max_out_degree <= 2);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn parallel_matches_sequential_and_conserves(
        n in 2usize..45,
        per_col in 1usize..4,
        seed in any::<u64>(),
        pr in 1usize..4,
        pc in 1usize..4,
        kind in tree_kind(),
        ms in 1usize..6,
        order in any::<u64>(),
    ) {
        let a = gen_random_diag_dominant(n, per_col, seed, true).unwrap();
        let grid = build_grid(pr, pc).unwrap();
        let cfg = RuntimeConfig::new(grid, kind, seed, ms).with_executor(Executor::Deterministic(Delivery::Random(order)));
        let (res, ledger) = run_with_config(&a, &cfg).unwrap();
        prop_assert!(res.compare(&selected_inverse(&a, ms).unwrap()).unwrap().relative <= 1e-11);
        prop_assert!(ledger.is_conserved());
        prop_assert_eq!(ledger.total(Direction::Sent, VolumeKind::All), ledger.total(Direction::Received, VolumeKind::All));
        let threaded = cfg.clone().with_executor(Executor::Threaded(Some(3)));
        let (res2, ledger2) = run_with_config(&a, &threaded).unwrap();
        prop_assert_eq!(res2, res);
        prop_assert!(ledger2.same_traffic(&ledger));
    }
}
