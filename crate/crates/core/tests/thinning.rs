use bbm_core::bbm_sim::{leaf_configuration, simulate_tree, SimConfig};
use bbm_core::genealogy::{normalized_overlap_matrix, q_thinning_matrix, q_thinning_tree, q_thinning_tree_with, DEFAULT_MATRIX_CAP};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tree_and_matrix_thinning_agree(seed in any::<u64>(), horizon in 1.0f64..4.5, q in 0.01f64..0.99) {
        let tree = simulate_tree(&SimConfig::new(horizon, seed)).unwrap();
        let config = leaf_configuration(&tree).unwrap();
        let m = normalized_overlap_matrix(&tree, DEFAULT_MATRIX_CAP).unwrap();
        prop_assert!(m.is_symmetric_unit_diagonal());
        prop_assert!(m.ultrametric());
        prop_assert!(m.triples_ultrametric());
        prop_assert_eq!(q_thinning_tree_with(&tree, &config, q).unwrap(), q_thinning_matrix(&config, &m, q).unwrap());
    }

    #[test]
    fn thinned_sets_grow_with_q(seed in any::<u64>(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let tree = simulate_tree(&SimConfig::new(4.0, seed)).unwrap();
        let coarse = q_thinning_tree(&tree, lo).unwrap();
        let fine = q_thinning_tree(&tree, hi).unwrap();
        prop_assert!(coarse.selected_indices.iter().all(|i| fine.selected_indices.contains(i)));
        // The overall maximum survives every thinning.
        prop_assert_eq!(coarse.selected_indices.first(), Some(&0));
    }
}
