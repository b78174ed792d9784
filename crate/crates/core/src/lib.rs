//! Hierarchical decision making for urban infrastructure.
//!
//! The crate layers four traffic controllers over a mesoscopic traffic
//! world: signal state machines ([`itu`]), conditional-task-graph zone
//! schedulers ([`ztcu`]), constrained CTMDP area controllers ([`atcu`]) and a
//! function-graph coordinator ([`tcu`]), tied together by the constraint
//! propagation engine in [`hierarchy`]. Alongside sit a fuzzy street-lighting
//! controller ([`fuzzy`]), evaluation metrics ([`metrics`]) and a registry
//! that classifies interactions between decision modules ([`registry`]).
//!
//! [`world`] holds the street network, demand and vehicle queues; [`sim`]
//! runs it under fixed-time or hierarchical control. [`config`] reads the
//! TOML inputs and [`cli`] backs the `civitas` binary.

pub mod atcu;
pub mod cli;
pub mod config;
pub mod fmt;
pub mod fuzzy;
pub mod hierarchy;
pub mod itu;
pub mod metrics;
pub mod registry;
pub mod sim;
pub mod tcu;
pub mod world;
pub mod ztcu;
