//! Training (placeholder while the crate is scaffolded).
