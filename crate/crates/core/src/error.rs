use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field is not divergence-free (div = {div:e}); no quadratic first integral")]
    NotDivergenceFree { div: f64 },

    #[error("conic coefficients must be positive: x^2 coeff {inv_u2}, y^2 coeff {inv_v2}, level {level}")]
    InvalidConic { inv_u2: f64, inv_v2: f64, level: f64 },

    #[error("field vanishes identically")]
    DegenerateField,

    #[error("tangency sweep found {found} candidate roots (cap 4): the Lie derivative is degenerate on the switching curve")]
    TooManyRoots { found: usize },

    #[error("angle {angle} is not in a sliding or escape region")]
    NotSlidingPoint { angle: f64 },

    #[error("sliding denominator vanishes at angle {angle} (|outer - inner| = {denom:e})")]
    DivisionDegenerate { angle: f64, denom: f64 },

    #[error("{count} certified cycles exceed the class bound of {bound}")]
    BoundViolation { count: usize, bound: usize },

    #[error("half-map derivative {value:e} vanishes at cycle angle {angle} (fold on the cycle)")]
    FoldOnCycle { angle: f64, value: f64 },

    #[error("genericity violation: {condition}")]
    GenericityViolation { condition: String },

    #[error("orbit cannot leave the switching curve at angle {angle} (tangential start)")]
    StallOnSigma { angle: f64 },

    #[error("event count exceeded {max} (chattering or a numerical loop)")]
    EventLoopGuard { max: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
