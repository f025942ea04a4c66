//! Holds the workspace acceptance gate, `tests/acceptance.rs`. Run it with
//! `cargo test -p hycon-verify --test acceptance`.
