//! Multi-agent reinforcement learning for black-box REST API testing.

pub mod agents;
pub mod engine;
pub mod learning;
pub mod openapi;
pub mod registry;
pub mod report;
pub mod semantics;
pub mod session;
pub mod spdg;
pub mod values;
