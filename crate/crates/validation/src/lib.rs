//! Acceptance tests for the opensetiq workspace live in `tests/`.
