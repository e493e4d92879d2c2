//! Holds the `acceptance` test target, which runs the default pipeline end
//! to end. It is a separate package so that the rest of the workspace's
//! tests run before it under `cargo test --workspace`.
