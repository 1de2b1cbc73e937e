pub mod nn;
pub mod paths;
pub mod problem;
pub mod benchmarks;
pub mod metrics;
pub mod solver;
pub mod reflected;
pub mod oracle;
