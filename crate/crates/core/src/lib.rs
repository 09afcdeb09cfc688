//! Crossing limit cycles of planar piecewise-affine systems split by a circle
//! or axis-aligned ellipse.
//!
//! Both pieces are divergence-free (or constant), so each carries an exact
//! quadratic first integral. A closed orbit meeting the switching curve in two
//! points is pinned down by two scalar closing equations on the torus of
//! intersection angles; this crate solves, certifies, and flows them.

pub mod cycles;
pub mod error;
pub mod fields;
pub mod flow;
pub mod geom;
pub mod poly;
pub mod switching;
pub mod system;

pub use error::{Error, Result};
pub use fields::{
    classify_singularity, first_integral, AffineField, QuadraticIntegral, SingularityKind,
    SingularityReport,
};
pub use geom::{circle_dist, wrap_angle, Point, TAU};
pub use switching::{
    classify_on_sigma, lie_derivative, sliding_field, tangency_points, SigmaClassification,
    SigmaKind, SwitchingConic, TangencyKind, TangencyOrder,
};
pub use system::{ClassTag, PiecewiseSystem};
