//! Finite-difference checks for every differentiable operation and loss.

mod common;

use common::grad_cases::{gradient_cases, GROUPS};
use common::FD_REL_TOL;

fn run_group(group: &str) {
    let cases: Vec<_> = gradient_cases()
        .into_iter()
        .filter(|c| c.group == group)
        .collect();
    assert!(!cases.is_empty(), "no cases in {group}");
    for c in cases {
        let (err, seed) = c.worst();
        assert!(
            err <= FD_REL_TOL,
            "{} seed {seed}: rel err {err:.3e}",
            c.name
        );
    }
}

#[test]
fn every_case_is_in_a_known_group() {
    for c in gradient_cases() {
        assert!(GROUPS.contains(&c.group), "{}", c.name);
    }
}

#[test]
fn binary_ops_with_broadcast() {
    run_group("binary");
}

#[test]
fn unary_ops() {
    run_group("unary");
}

#[test]
fn matmul_plain_and_batched() {
    run_group("matmul");
}

#[test]
fn conv2d_geometries() {
    run_group("conv");
}

#[test]
fn reductions() {
    run_group("reduction");
}

#[test]
fn shape_and_layer_ops() {
    run_group("shape");
}

#[test]
fn composite_conv_leaky_mean() {
    run_group("composite");
}

#[test]
fn losses() {
    run_group("loss");
}
