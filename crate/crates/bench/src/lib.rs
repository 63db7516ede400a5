//! Criterion benches live in benches/; nothing to export.
