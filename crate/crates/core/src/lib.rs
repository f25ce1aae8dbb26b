//! Curvature of multiply warped and twisted products under a semi-symmetric
//! non-metric connection and its torsion-free symmetrized variant.
//!
//! Every curvature quantity is available along two independent routes:
//!
//! * [`chart`] assembles the metric on a coordinate chart and contracts
//!   Christoffel symbols directly. This is the oracle.
//! * [`structured`] evaluates the block formulas in terms of warping
//!   functions, their base and fiber derivatives, and fiber geometry.
//!
//! [`einstein`] and [`families`] build on both to check Einstein and
//! constant-scalar-curvature conditions and the closed-form warping
//! functions that satisfy them.
//!
//! Sign conventions: `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z` and
//! `Ric(X,Y) = tr(Z ↦ R(X,Z)Y)`. With these, the unit round sphere has
//! `Ric = −(l−1) g`; see [`chart::FiberGeometry::einstein_constant`].

pub mod chart;
pub mod connection;
pub mod einstein;
pub mod error;
pub mod expr;
pub mod families;
pub mod ode;
pub mod scalar;
pub mod structured;

pub use chart::{
    BaseChart, CurvatureAtPoint, FiberGeometry, FiberSpec, FrameField, PointCoords,
    ProductManifoldSpec,
};
pub use connection::{Connection, ConnectionKind, TorsionField};
pub use error::{ExprError, GeometryError, Result};
pub use expr::ScalarExpr;
pub use structured::{Block, BlockVector, StructuredGeometry};

/// Tolerances shared by checks across modules.
pub mod tolerance {
    /// Residuals of closed-form families, which are exact up to roundoff.
    pub const CLOSED_FORM: f64 = 1e-8;
    /// Comparisons against finite-difference oracles.
    pub const ORACLE: f64 = 1e-6;
    /// Structured covariant derivatives against coefficient contraction.
    pub const COVARIANT: f64 = 1e-7;
    /// Mixed Ricci components treated as zero.
    pub const MIXED_RICCI: f64 = 1e-8;
    /// Frame orthonormality.
    pub const FRAME: f64 = 1e-10;
    /// Two finite-difference estimates further apart than this signal a bad step.
    pub const INSTABILITY: f64 = 1e-4;
}
