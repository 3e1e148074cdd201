//! Scenario-scale acceptance checks for `commaware-core`.
//!
//! The checks live in `tests/acceptance.rs` and print one PASS/FAIL line
//! per criterion. The package is separate so that its slow, scenario-sized
//! runs come after the core test suites.
