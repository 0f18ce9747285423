//! Core algorithms for evidence-grounded persona induction.
//!
//! This crate hosts the pure, deterministic half of the pipeline: the domain
//! model for intent memories and personas, candidate parsing and validation,
//! unit-vector embedding tables, the persona quality rewards, the groupwise
//! preference-optimization loss and its toy trainer, the agglomerative
//! clustering baseline, and the retrieval evaluation metrics. Everything here
//! is `no_std`-compatible (with `alloc`), so the same scoring code can run
//! inside constrained or embedded harnesses; IO, HTTP, and the CLI live in
//! the companion `persona-pipeline` crate.
//!
//! The `std` feature (on by default) only toggles `std::error::Error`
//! integration and the standard float intrinsics; with it disabled, float
//! math routes through `libm`.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod cluster;
pub mod domain;
pub mod embedding;
pub mod eval;
pub mod gdpo;
pub mod judge;
pub mod mathx;
pub mod quality;
pub mod rng;
pub mod synth;

pub use domain::{
    parse_candidate, validate_persona_set, CandidateOutput, IntentMemory, Persona, PersonaSet,
    ValidationIssue, ValidationReport, Window,
};
