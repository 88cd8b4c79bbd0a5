//! Automated repository installation: an LLM-guided documentation search,
//! Dockerfile generation and repair against a sandboxed build, a build-log
//! oracle, and the benchmark metrics used to evaluate it.

pub mod agent;
pub mod dataset;
pub mod dockerfile;
pub mod llm;
pub mod metrics;
pub mod navigator;
pub mod oracle;
pub mod orchestrator;
pub mod sandbox;
