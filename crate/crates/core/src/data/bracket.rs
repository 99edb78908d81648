use serde::Serialize;

use super::{DataError, Result};

/// Half-open parameter-count bin `[lower, upper)` in billions; the last bin has no upper edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamBracket {
    pub label: &'static str,
    pub lower: f64,
    /// `None` for the unbounded top bracket.
    pub upper: Option<f64>,
}

impl ParamBracket {
    pub fn contains(&self, params_b: f64) -> bool {
        params_b >= self.lower && self.upper.map_or(true, |u| params_b < u)
    }
}

pub const BRACKETS: [ParamBracket; 6] = [
    ParamBracket { label: "[0,1.5)", lower: 0.0, upper: Some(1.5) },
    ParamBracket { label: "[1.5,3)", lower: 1.5, upper: Some(3.0) },
    ParamBracket { label: "[3,7)", lower: 3.0, upper: Some(7.0) },
    ParamBracket { label: "[7,13)", lower: 7.0, upper: Some(13.0) },
    ParamBracket { label: "[13,35)", lower: 13.0, upper: Some(35.0) },
    ParamBracket { label: "[35,inf)", lower: 35.0, upper: None },
];

pub fn assign_param_bracket(params_b: f64) -> Result<ParamBracket> {
    if !(params_b > 0.0) {
        return Err(DataError::NonPositiveParameter(params_b));
    }
    Ok(*BRACKETS
        .iter()
        .find(|b| b.contains(params_b))
        .expect("brackets partition the positive reals"))
}
