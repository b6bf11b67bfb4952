//! Experiment runners (placeholder while the crate is scaffolded).
