//! Gaussian additive mixed models with REML smoothing-parameter selection.

mod basis;
mod effect;
mod fit;
mod formula;

pub use basis::{build_re_block, build_smooth_basis, distinct_sorted, factor_levels, BasisBlock, CubicSpline};
pub use effect::{partial_effect, partial_effect_at, partial_effects, PartialEffect, QUANTILE_FRACTIONS};
pub use fit::{
    fit_gamm, fit_gamm_with, predict, prepare_fit, reml_gradient, reml_score, smooth_significance, DroppedRecord,
    FitOptions, FittedTerm, GammFit, GammReport, PreparedFit, TermSummary,
};
pub use formula::{parse_formula, Formula, TermKind, TermSpec, DEFAULT_K};

use thiserror::Error;

use crate::data::DataError;
use crate::dist::DistError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GammError {
    #[error("formula syntax error at column {column}: {message}")]
    SyntaxError { column: usize, message: String },
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("only {distinct} distinct values for a basis of size {k}")]
    TooFewDistinctValues { distinct: usize, k: usize },
    #[error("degenerate factor: {0}")]
    DegenerateFactor(String),
    #[error("penalized normal equations are rank deficient even with ridge jitter")]
    RankDeficient,
    #[error("{n} usable records but the model needs at least {required}")]
    NotEnoughData { n: usize, required: usize },
    #[error("REML score is not finite")]
    NumericalOverflow,
    #[error("no term `{0}` in the fitted model")]
    TermNotFound(String),
    #[error("term `{0}` is not a smooth")]
    NotSmooth(String),
    #[error("factor level `{0}` was not seen when fitting")]
    UnseenLevel(String),
    #[error("invalid smoothing parameters: {0}")]
    InvalidLambda(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, GammError>;
