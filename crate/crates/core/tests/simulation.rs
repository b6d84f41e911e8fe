use bbm_core::bbm_sim::{simulate_tree, BranchingTree, SimConfig};
use bbm_core::martingale::{derivative_martingale, martingale_sums};

#[test]
fn ndjson_round_trip_preserves_the_tree() {
    let tree = simulate_tree(&SimConfig::new(5.0, 99).with_checkpoints(vec![2.5])).unwrap();
    let mut buf = Vec::new();
    tree.write_ndjson(&mut buf).unwrap();
    let back = BranchingTree::read_ndjson(buf.as_slice()).unwrap();
    assert_eq!(back.nodes(), tree.nodes());
    assert_eq!(back.horizon(), tree.horizon());
    back.check_structure().unwrap();
}

#[test]
fn same_seed_same_tree_different_seed_different_tree() {
    let a = simulate_tree(&SimConfig::new(5.0, 7)).unwrap();
    let b = simulate_tree(&SimConfig::new(5.0, 7)).unwrap();
    let c = simulate_tree(&SimConfig::new(5.0, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.nodes(), c.nodes());
}

#[test]
fn derivative_martingale_matches_direct_sum() {
    let tree = simulate_tree(&SimConfig::new(6.0, 3)).unwrap();
    let s = 6.0;
    let positions = tree.positions_at(s).unwrap();
    let direct: f64 = positions
        .iter()
        .map(|&x| {
            let gap = std::f64::consts::SQRT_2 * s - x;
            gap * (-std::f64::consts::SQRT_2 * gap).exp()
        })
        .sum();
    let z = derivative_martingale(&tree, s).unwrap();
    assert!((z - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{z} vs {direct}");
    assert_eq!(martingale_sums(&positions, s).flushed, 0);
}

#[test]
fn mean_population_grows_like_e_to_the_t() {
    // E[N(t)] = e^t for binary branching at rate 1.
    let n = 400;
    let mean = (0..n)
        .map(|i| simulate_tree(&SimConfig::new(3.0, 1000 + i)).unwrap().leaf_count() as f64)
        .sum::<f64>()
        / n as f64;
    // sd of N(3) is about sqrt(e^6 - e^3) ≈ 19.6, so the mean has sd about 1.
    assert!((mean - 3.0f64.exp()).abs() < 4.0, "mean leaf count {mean}");
}
