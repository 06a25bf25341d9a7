//! Objective-function backends.
//!
//! Three evaluators stand behind one trait: analytic synthetic landscapes
//! (cheap, with known optima), an external subprocess speaking a one-line
//! JSON protocol (for real training scripts), and a built-in toy trainer
//! (a small fully-connected classifier on a synthetic dataset).
//!
//! The wire protocol is newline-delimited UTF-8 with one JSON object per
//! line. Request: `{"run_id", "index", "config": {...}, "epochs"}`.
//! Response: `{"value": <number>, "status": "ok"|"failed", "meta": {...}}`.

mod external;
mod synthetic;
mod trainer;

pub use external::ExternalEvaluator;
pub use synthetic::{
    branin, hartmann3, mixed_quadratic, mixed_quadratic_optimum, SyntheticEvaluator, SyntheticFn,
};
pub use trainer::{eval_toy_trainer, gradient_check, ToyTrainerEvaluator, DEFAULT_EPOCHS};

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::space::Configuration;

/// One evaluation request, as sent over the wire to external evaluators.
/// The architecture key is emitted only when tail surgery is in play.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub run_id: String,
    pub index: usize,
    pub config: Configuration,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<ArchitectureSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStatus {
    Ok,
    Failed,
}

/// One evaluation result. `status == Ok` implies a finite value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub value: f64,
    pub status: EvalStatus,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl EvalResponse {
    pub fn ok(value: f64) -> Self {
        EvalResponse {
            value,
            status: EvalStatus::Ok,
            meta: serde_json::Map::new(),
        }
    }

    pub fn failed(reason: &str) -> Self {
        let mut meta = serde_json::Map::new();
        meta.insert("error".into(), serde_json::Value::String(reason.into()));
        EvalResponse {
            value: 0.0,
            status: EvalStatus::Failed,
            meta,
        }
    }

    pub fn with_meta(mut self, key: &str, value: serde_json::Value) -> Self {
        self.meta.insert(key.into(), value);
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == EvalStatus::Ok
    }
}

/// An evaluation result together with the wall time to report in the run
/// log. Built-in backends are deterministic and report zero so that run logs
/// replay byte-identically; the external backend reports measured seconds.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub response: EvalResponse,
    pub wall_time: f64,
}

impl Evaluation {
    pub fn instant(response: EvalResponse) -> Self {
        Evaluation {
            response,
            wall_time: 0.0,
        }
    }
}

/// A pluggable objective function. Implementations must be reproducible
/// given the request (up to their own documented caveats) and must not
/// panic on malformed configurations: failures are data.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        (**self).evaluate(request)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        (**self).evaluate(request)
    }
}

/// Wraps another evaluator with tail surgery: each configuration is applied
/// to the base architecture and the resulting spec travels with the request,
/// so external trainers can build the exact network being scored. Surgery
/// failures become failed responses.
pub struct TailSurgeryEvaluator<E> {
    pub base: ArchitectureSpec,
    pub inner: E,
}

impl<E: Evaluator> TailSurgeryEvaluator<E> {
    pub fn new(base: ArchitectureSpec, inner: E) -> Self {
        TailSurgeryEvaluator { base, inner }
    }
}

impl<E: Evaluator> Evaluator for TailSurgeryEvaluator<E> {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        match crate::arch::apply_configuration(&self.base, &request.config) {
            Ok((tuned, plan)) => {
                let mut inner_request = request.clone();
                inner_request.architecture = Some(tuned);
                let mut evaluation = self.inner.evaluate(&inner_request);
                evaluation
                    .response
                    .meta
                    .insert("tail_depth".into(), (plan.k as u64).into());
                evaluation
            }
            Err(e) => Evaluation::instant(EvalResponse::failed(&format!("surgery: {e}"))),
        }
    }
}
