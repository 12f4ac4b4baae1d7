//! Finite-difference laboratory for Ricci-DeTurck flow on flat tori.
//!
//! The crate is organised bottom-up: [`grid`] and [`tensor`] hold the data,
//! [`geometry`] and [`ball`] the discrete Riemannian calculus, [`deturck`] the
//! DeTurck operator with its linear/quadratic split, [`solver`] the time
//! integrators and heat-kernel probes, [`norms`] the parabolic norms, and
//! [`picard`] the fixed-point scheme. [`experiments`] wires them into the
//! scenarios run by the `flowlab` binary.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod ball;
pub mod derivative;
pub mod deturck;
pub mod dump;
pub mod error;
pub mod experiments;
pub mod families;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod norms;
pub mod picard;
pub mod pullback;
pub mod solver;
pub mod tensor;

pub use error::{FlowError, Result};
pub use grid::{Grid, Stencil};
pub use tensor::{MetricField, TensorField, Valence};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod ch0 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/geometry.md")]
mod ch1 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/deturck.md")]
mod ch2 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/parabolic.md")]
mod ch3 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/norms.md")]
mod ch4 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/fixed-point.md")]
mod ch5 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scenarios.md")]
mod ch6 {}
