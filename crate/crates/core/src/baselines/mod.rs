//! Reference solvers: log-domain Sinkhorn scaling and an exact
//! transportation-simplex oracle for small instances.

mod oracle;
mod sinkhorn;

pub use oracle::{exact_oracle, OracleResult, ORACLE_MAX_N};
pub use sinkhorn::{sinkhorn, SinkhornConfig, SinkhornOutput};
