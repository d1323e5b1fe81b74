mod support {
    pub mod gradcheck;
}

use support::gradcheck::*;

#[test]
fn tape_matches_finite_differences_on_random_networks() {
    let (agreement, total) = gradient_agreement(50, 1e-5, 1e-3);
    assert!(total > 1000);
    assert!(agreement >= 0.99, "{agreement} of {total} coordinates agree");
}

#[test]
fn every_coordinate_agrees_loosely_away_from_kinks() {
    // cross-entropy nets with smooth heads: kinks only come from ReLU
    for seed in [0, 3, 6] {
        let pairs = RandomNet::new(seed).gradient_pairs(1e-6);
        let bad = pairs.iter().filter(|(a, n)| relative_error(*a, *n) > 1e-2).count();
        assert!(bad * 50 <= pairs.len(), "seed {seed}: {bad} of {}", pairs.len());
    }
}
