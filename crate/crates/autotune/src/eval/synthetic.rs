//! Analytic stand-in objectives with known optima.
//!
//! Everything is expressed in the maximization convention the engine uses:
//! classic minimization benchmarks are negated.

use super::{EvalRequest, EvalResponse, Evaluation, Evaluator};
use crate::space::Configuration;

/// Negated Branin function. Domain x1 in [-5, 10], x2 in [0, 15]; the three
/// global maxima sit at (-pi, 12.275), (pi, 2.275), (9.42478, 2.475) with
/// value ~= -0.397887.
pub fn branin(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    let a = 1.0;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let r = 6.0;
    let s = 10.0;
    let t = 1.0 / (8.0 * PI);
    let value = a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s;
    -value
}

/// Negated 3-dimensional Hartmann function on [0, 1]^3; the global maximum
/// is ~= 3.86278 at (0.114614, 0.555649, 0.852547).
pub fn hartmann3(x: [f64; 3]) -> f64 {
    const ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
    const A: [[f64; 3]; 4] = [
        [3.0, 10.0, 30.0],
        [0.1, 10.0, 35.0],
        [3.0, 10.0, 30.0],
        [0.1, 10.0, 35.0],
    ];
    const P: [[f64; 3]; 4] = [
        [0.3689, 0.1170, 0.2673],
        [0.4699, 0.4387, 0.7470],
        [0.1091, 0.8732, 0.5547],
        [0.0381, 0.5743, 0.8828],
    ];
    let mut sum = 0.0;
    for i in 0..4 {
        let mut inner = 0.0;
        for j in 0..3 {
            inner += A[i][j] * (x[j] - P[i][j]).powi(2);
        }
        sum += ALPHA[i] * (-inner).exp();
    }
    sum
}

/// Smooth quadratic objective over a mixed categorical/ordinal/integer space
/// with a constructed unique optimum at (kind=cube, x=0.8, y=7).
pub fn mixed_quadratic(kind: &str, x: f64, y: i64) -> f64 {
    let bonus = match kind {
        "linear" => 0.0,
        "square" => 0.08,
        "mix" => 0.12,
        "cube" => 0.20,
        _ => f64::NEG_INFINITY,
    };
    let y_norm = y as f64 / 9.0;
    bonus - 0.15 * (x - 0.8).powi(2) - 0.4 * (y_norm - 7.0 / 9.0).powi(2)
}

/// The optimum `mixed_quadratic` is constructed around.
pub fn mixed_quadratic_optimum() -> (Configuration, f64) {
    let config = Configuration::new()
        .with("kind", "cube")
        .with("x", 0.8)
        .with("y", 7i64);
    (config, 0.20)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticFn {
    Branin,
    Hartmann3,
    MixedQuadratic,
}

impl SyntheticFn {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "branin" => Some(SyntheticFn::Branin),
            "hartmann3" => Some(SyntheticFn::Hartmann3),
            "mixed_quadratic" | "mixed-quadratic" => Some(SyntheticFn::MixedQuadratic),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticFn::Branin => "branin",
            SyntheticFn::Hartmann3 => "hartmann3",
            SyntheticFn::MixedQuadratic => "mixed_quadratic",
        }
    }
}

/// Deterministic analytic evaluator.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticEvaluator {
    pub function: SyntheticFn,
}

impl SyntheticEvaluator {
    pub fn new(function: SyntheticFn) -> Self {
        SyntheticEvaluator { function }
    }

    /// Evaluate a configuration directly. Numeric parameters are taken in
    /// name order for the fixed-dimension functions.
    pub fn eval_config(&self, config: &Configuration) -> EvalResponse {
        match self.function {
            SyntheticFn::Branin => match numeric_values(config).as_slice() {
                [x1, x2] => EvalResponse::ok(branin(*x1, *x2)),
                other => dimension_failure(2, other.len()),
            },
            SyntheticFn::Hartmann3 => match numeric_values(config).as_slice() {
                [x1, x2, x3] => EvalResponse::ok(hartmann3([*x1, *x2, *x3])),
                other => dimension_failure(3, other.len()),
            },
            SyntheticFn::MixedQuadratic => {
                let kind = config.get("kind").and_then(|v| v.as_label());
                let x = config.get("x").and_then(|v| v.as_f64());
                let y = config.get("y").and_then(|v| v.as_int());
                match (kind, x, y) {
                    (Some(kind), Some(x), Some(y)) => {
                        let v = mixed_quadratic(kind, x, y);
                        if v.is_finite() {
                            EvalResponse::ok(v)
                        } else {
                            EvalResponse::failed("unknown kind label")
                        }
                    }
                    _ => EvalResponse::failed("expected parameters kind, x, y"),
                }
            }
        }
    }
}

fn numeric_values(config: &Configuration) -> Vec<f64> {
    config.iter().filter_map(|(_, v)| v.as_f64()).collect()
}

fn dimension_failure(expected: usize, got: usize) -> EvalResponse {
    EvalResponse::failed(&format!(
        "dimension mismatch: expected {expected} numeric parameters, got {got}"
    ))
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        Evaluation::instant(self.eval_config(&request.config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense-grid search for the global maximum, used as the oracle for the
    /// analytic optima.
    fn grid_max_branin(resolution: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..resolution {
            for j in 0..resolution {
                let x1 = -5.0 + 15.0 * i as f64 / (resolution - 1) as f64;
                let x2 = 15.0 * j as f64 / (resolution - 1) as f64;
                best = best.max(branin(x1, x2));
            }
        }
        best
    }

    #[test]
    fn branin_optimum_matches_grid_oracle() {
        let at_known = branin(std::f64::consts::PI, 2.275);
        assert!((at_known - (-0.397_887)).abs() < 1e-5);
        let grid_best = grid_max_branin(2000);
        assert!((grid_best - (-0.397_887)).abs() < 1e-4);
        assert!(at_known >= grid_best - 1e-6);
    }

    #[test]
    fn branin_known_maxima_are_symmetric() {
        let a = branin(std::f64::consts::PI, 2.275);
        let b = branin(-std::f64::consts::PI, 12.275);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn hartmann3_optimum_location_and_value() {
        let v = hartmann3([0.114614, 0.555649, 0.852547]);
        assert!((v - 3.86278).abs() < 1e-4);
        // Coarse grid oracle stays below the known optimum.
        let mut best = f64::NEG_INFINITY;
        let r = 60;
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let x = [
                        i as f64 / (r - 1) as f64,
                        j as f64 / (r - 1) as f64,
                        k as f64 / (r - 1) as f64,
                    ];
                    best = best.max(hartmann3(x));
                }
            }
        }
        assert!(best <= v + 1e-9);
        assert!(best > 3.8);
    }

    #[test]
    fn mixed_quadratic_argmax_matches_construction() {
        let space = crate::builtin::mixed_quadratic_space();
        let all = space.enumerate().unwrap();
        assert!(all.len() <= 500);
        let eval = SyntheticEvaluator::new(SyntheticFn::MixedQuadratic);
        let best = all
            .iter()
            .max_by(|a, b| {
                eval.eval_config(a)
                    .value
                    .partial_cmp(&eval.eval_config(b).value)
                    .unwrap()
            })
            .unwrap();
        let (expected, value) = mixed_quadratic_optimum();
        assert_eq!(best, &expected);
        assert!((eval.eval_config(best).value - value).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_a_failed_response() {
        let eval = SyntheticEvaluator::new(SyntheticFn::Branin);
        let resp = eval.eval_config(&Configuration::new().with("x1", 1.0));
        assert!(!resp.is_ok());
        assert!(resp.meta["error"].as_str().unwrap().contains("dimension"));
    }
}
