//! Metrics against straightforward single-loop implementations.

mod common;

use common::metric_checks as m;

#[test]
fn rate_and_average_equal_loop_oracles_exactly() {
    m::rate_and_average_equal_loop_oracles_exactly();
}

#[test]
fn mmd_of_a_set_with_itself_vanishes() {
    m::mmd_of_a_set_with_itself_vanishes();
}

#[test]
fn singleton_mmd_matches_closed_form() {
    m::singleton_mmd_matches_closed_form();
}

#[test]
fn mmd_matches_pairwise_oracle() {
    m::mmd_matches_pairwise_oracle();
}

#[test]
fn mmd_grows_with_shift() {
    m::mmd_grows_with_shift();
}
