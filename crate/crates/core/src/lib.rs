//! Exact-integer transformer kernels and a replayable proof DAG over ZMul
//! encodings, Merkle weight commitments and a Fiat-Shamir transcript.
#![cfg_attr(not(feature = "std"), no_std)]
// Lane-parallel witness checks read clearer with explicit indices.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod commit;
pub mod error;
pub mod field;
pub mod fixed;
pub(crate) mod par;
pub mod proof;
pub mod kernels;
pub mod model;
pub mod tensor;
pub mod transcript;
