mod common;

use common::checks;

fn pass(check: checks::Check) {
    if let Err(e) = check {
        panic!("{e}");
    }
}

#[test]
fn extracted_features_match_independent_evaluator_and_planted_counts() {
    pass(checks::extraction());
}

#[test]
fn gower_matches_brute_force_and_is_a_bounded_dissimilarity() {
    pass(checks::gower_pairs());
}

#[test]
fn neighbor_order_is_invariant_to_common_weight_scaling() {
    pass(checks::neighbor_order());
}

#[test]
fn pdp_matches_brute_force_double_loop() {
    pass(checks::pdp());
}

#[test]
fn rank_auc_equals_pairwise_concordance_exactly() {
    pass(checks::auc_exact());
}

#[test]
fn vif_matches_normal_equations_on_known_covariance() {
    pass(checks::vif_known_covariance());
}

#[test]
fn exact_collinearity_removes_one_of_the_pair() {
    pass(checks::vif_exact_collinearity());
}

#[test]
fn near_linear_birth_weight_is_removed_first() {
    pass(checks::vif_near_linear());
}

#[test]
fn pruned_synthetic_cohorts_respect_threshold() {
    pass(checks::vif_pruned_synthetic(0..5));
}
