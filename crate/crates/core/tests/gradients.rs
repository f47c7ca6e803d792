mod common;

use common::*;

const TOL: f64 = 1e-4;

#[test]
fn backprop_matches_finite_differences_on_random_networks() {
    for seed in 0..25 {
        let err = backprop_oracle(seed);
        assert!(err <= TOL, "case {seed}: relative error {err:e}");
    }
}

#[test]
fn per_output_gradients_match_finite_differences() {
    for seed in 0..25 {
        let err = per_output_oracle(seed);
        assert!(err <= TOL, "case {seed}: relative error {err:e}");
    }
}

#[test]
fn square_fisher_matches_summed_squared_output_derivatives() {
    for seed in 0..5 {
        let err = fisher_square_oracle(seed);
        assert!(err <= TOL, "case {seed}: relative error {err:e}");
    }
}

#[test]
fn xent_fisher_is_mean_of_squared_sample_gradients() {
    for seed in 0..5 {
        let err = fisher_xent_oracle(seed);
        assert!(err <= 1e-12, "case {seed}: relative error {err:e}");
    }
}

#[test]
fn pairing_cost_closed_form_matches_merged_loss() {
    let err = pair_cost_oracle(3, 10_000);
    assert!(err <= 1e-9, "relative error {err:e}");
}
