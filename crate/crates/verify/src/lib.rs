//! Holds the `acceptance` test target: `cargo test -p nsad-verify`.
