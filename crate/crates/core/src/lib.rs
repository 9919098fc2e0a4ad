//! Numerical laboratory for geodesics on the modular surface.
//!
//! Two conformal metrics on the upper half-plane are compared: the
//! hyperbolic metric and an equivariant Weil–Petersson model that equals
//! `y^{-3/2}|dz|` on the cusp region. Geodesics of both are integrated,
//! decomposed into thick segments and cusp excursions, and compared.

pub mod integrator;
pub mod cli;
pub mod excursions;
pub mod fellow_travel;
pub mod metrics;
pub mod modular_group;
pub mod statistics;
