//! Config (placeholder while the crate is scaffolded).
