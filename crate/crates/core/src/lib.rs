//! Invariant sample measures and linear response for skew products with
//! uniformly contracting fibres.
//!
//! A skew product `T(ω, x) = (f(ω), g(ω, x))` acts on sections `ω ↦ ν_ω` of
//! fibre measures through the sectional transfer operator
//!
//! ```text
//! (K ν)_ω = Σ_i p_i(ω) (g_{θ_i(ω)})_* ν_{θ_i(ω)}
//! ```
//!
//! where `θ_i` are the inverse branches of the base map and `p_i` the
//! Perron–Frobenius weights of the base density. The modules follow the data
//! flow: [`measure`] (fibre measures), [`section`] (measure-valued sections),
//! [`systems`] (built-in families), [`transfer`] (the operator and its fixed
//! point), [`response`] (parameter derivatives) and [`inducing`] (first-return
//! scheme for the intermittent base).

pub mod error;
pub mod inducing;
pub mod io;
pub mod measure;
pub mod numeric;
pub mod observable;
pub mod response;
pub mod section;
pub mod systems;
pub mod transfer;

pub use error::{Error, Result};
