//! Constrained CEM on the piecewise mixture vs. an independently written
//! distortion-minimization loop (segmental K-means): identical hard
//! partitions and identical boundaries, exactly.

mod common;

#[test]
fn constrained_cem_equals_distortion_loop() {
    common::cem_distortion_check(20);
}
