//! Residual compilation (placeholder while the crate is scaffolded).
