//! Deterministic sandbox for hypervisor-introspection game cheating.
//!
//! The crate simulates the full stack end to end: a guest with four-level
//! paging and a second-level address table ([`guest`], [`paging`], [`slat`]),
//! a host-side introspection API ([`vmi`]), a synthetic-input channel
//! speaking a QMP-style wire protocol ([`input`]), a toy FPS whose state
//! lives in guest memory behind published offsets ([`game`]), the three
//! classic cheats built on top ([`cheats`]), in-guest anti-cheat probes and
//! game-side mitigations ([`anticheat`]), and a benchmark harness that
//! measures what the cheats cost in ticks per second ([`harness`]).
//!
//! Everything runs on a logical clock; identical seeds and inputs produce
//! byte-identical guest memory, reports, and overlay logs.

pub mod anticheat;
pub mod cheats;
pub mod error;
pub mod game;
pub mod guest;
pub mod harness;
pub mod input;
pub mod math;
pub mod paging;
pub mod sandbox;
pub mod slat;
pub mod vmi;

pub use error::{Result, SimError};
pub use sandbox::Sandbox;
