//! Discrete-event simulator for multi-turn agentic programs served by an LLM
//! inference engine.
//!
//! Programs alternate LLM turns with external tool calls. Between turns the
//! engine decides what to do with a program's KV cache: drop it, offload it
//! to host memory, or pin it on the GPU for a bounded time in anticipation of
//! the next turn. The [`scheduler`] module implements the tool-call-aware
//! pinning scheduler; [`baselines`] holds the reference policies it is
//! compared against.
//!
//! A run is driven by [`simulation::Simulation`], which replays a workload
//! (see [`workload`]) against one policy and produces a
//! [`metrics::RunReport`].

pub mod audit;
pub mod baselines;
pub mod config;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod runner;
pub mod scheduler;
pub mod sim;
pub mod simulation;
pub mod workload;

pub use error::{Error, Result};
pub use scheduler::PolicyKind;
pub use simulation::{SimConfig, Simulation};
