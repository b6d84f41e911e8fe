use bbm_core::fkpp::{solve_front, tail_fit, Anchor, SolveConfig};

#[test]
fn tail_constant_is_insensitive_to_domain_extent() {
    let base = SolveConfig::new(0.1, 60.0);
    let mut wide = base.clone();
    wide.left *= 2.0;
    wide.right_pad *= 2.0;
    let a = solve_front(&base).unwrap();
    let b = solve_front(&wide).unwrap();
    let ca = tail_fit(&a.profile, Anchor::CdfAtZero(0.77), 1e-8, 1e-2).unwrap().c_hat;
    let cb = tail_fit(&b.profile, Anchor::CdfAtZero(0.77), 1e-8, 1e-2).unwrap().c_hat;
    assert!((ca / cb - 1.0).abs() < 0.1, "C {ca} vs {cb}");
}

#[test]
fn front_track_is_increasing() {
    let run = solve_front(&SolveConfig::new(0.1, 40.0)).unwrap();
    assert!(run.fronts.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(run.times.len(), run.fronts.len());
}
