//! Empty library target. This package exists only for its Criterion
//! benchmarks (see `benches/`), but Cargo requires at least one buildable
//! target per package.
