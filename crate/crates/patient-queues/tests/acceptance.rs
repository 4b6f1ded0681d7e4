//! Acceptance gate: runs every criterion of the validation suite and prints
//! one pass/fail line per criterion. `pq selftest` drives the same runners.

use std::path::Path;

use patient_queues::acceptance::{run, CRITERIA};

fn run_one(id: usize) {
    let bin = Path::new(env!("CARGO_BIN_EXE_pq"));
    let results = run(Some(&[id]), bin);
    assert_eq!(results.len(), 1, "criterion {id} missing");
    let r = &results[0];
    let verdict = if r.passed { "PASS" } else { "FAIL" };
    println!("criterion {:02} ({}): {} — {}", r.id, r.name, verdict, r.details);
    assert!(r.passed, "criterion {:02} ({}) failed: {}", r.id, r.name, r.details);
}

#[test]
fn criteria_are_complete() {
    assert_eq!(CRITERIA.len(), 12);
    assert_eq!(CRITERIA.iter().map(|c| c.0).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
}

#[test]
fn criterion_01_rate_algorithm_exactness() {
    run_one(1);
}

#[test]
fn criterion_02_stabilizing_deviation() {
    run_one(2);
}

#[test]
fn criterion_03_structural_property_suite() {
    run_one(3);
}

#[test]
fn criterion_04_line_structure() {
    run_one(4);
}

#[test]
fn criterion_05_parametric_oracle_equivalence() {
    run_one(5);
}

#[test]
fn criterion_06_water_filling() {
    run_one(6);
}

#[test]
fn criterion_07_equilibrium_bound() {
    run_one(7);
}

#[test]
fn criterion_08_capacity_threshold() {
    run_one(8);
}

#[test]
fn criterion_09_deformation_monotonicity() {
    run_one(9);
}

#[test]
fn criterion_10_simulation_convergence() {
    run_one(10);
}

#[test]
fn criterion_11_strong_stability_probe() {
    run_one(11);
}

#[test]
fn criterion_12_determinism() {
    run_one(12);
}
