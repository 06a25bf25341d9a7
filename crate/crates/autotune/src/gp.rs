//! Exact Gaussian-process regression over encoded configurations.
//!
//! The surrogate is a zero-noise GP with a squared-exponential kernel with
//! per-dimension length scales and a constant prior mean. The posterior at a
//! query point is computed from a Cholesky factor of the kernel matrix plus a
//! small diagonal jitter; discrete spaces produce duplicate encoded points,
//! so the jitter escalates when factorization fails.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::space::EncodedPoint;

/// Largest jitter tried before a factorization failure becomes an error.
pub const MAX_JITTER: f64 = 1e-2;
/// Smallest admissible jitter.
pub const MIN_JITTER: f64 = 1e-10;
/// Default starting jitter.
pub const DEFAULT_JITTER: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need as many targets as inputs ({inputs} inputs, {targets} targets)")]
    ShapeMismatch { inputs: usize, targets: usize },
    #[error("at least one observation is required")]
    Empty,
    #[error("ill-conditioned kernel matrix{}", duplicate_note(.duplicates))]
    IllConditioned { duplicates: Option<(usize, usize)> },
    #[error("kernel parameters must be strictly positive")]
    InvalidParams,
}

fn duplicate_note(dup: &Option<(usize, usize)>) -> String {
    match dup {
        Some((i, j)) => format!(" (inputs {i} and {j} are identical)"),
        None => String::new(),
    }
}

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_jitter: f64,
}

impl KernelParams {
    pub fn new(
        signal_variance: f64,
        length_scales: Vec<f64>,
        noise_jitter: f64,
    ) -> Result<Self, GpError> {
        let ok = signal_variance > 0.0
            && signal_variance.is_finite()
            && !length_scales.is_empty()
            && length_scales.iter().all(|l| *l > 0.0 && l.is_finite())
            && noise_jitter >= MIN_JITTER
            && noise_jitter.is_finite();
        if !ok {
            return Err(GpError::InvalidParams);
        }
        Ok(KernelParams {
            signal_variance,
            length_scales,
            noise_jitter,
        })
    }

    /// Unit signal variance, shared unit length scale, default jitter.
    pub fn isotropic(dim: usize) -> Self {
        KernelParams {
            signal_variance: 1.0,
            length_scales: vec![1.0; dim],
            noise_jitter: DEFAULT_JITTER,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }
}

/// Squared-exponential covariance with automatic relevance:
/// `signal_variance * exp(-0.5 * sum(((a_i - b_i) / l_i)^2))`.
pub fn kernel_eval(a: &EncodedPoint, b: &EncodedPoint, k: &KernelParams) -> Result<f64, GpError> {
    if a.dim() != b.dim() {
        return Err(GpError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.dim() != k.dim() {
        return Err(GpError::DimensionMismatch {
            expected: k.dim(),
            got: a.dim(),
        });
    }
    let mut exponent = 0.0;
    for ((ai, bi), li) in a.coords.iter().zip(&b.coords).zip(&k.length_scales) {
        let z = (ai - bi) / li;
        exponent += z * z;
    }
    Ok(k.signal_variance * (-0.5 * exponent).exp())
}

/// Posterior mean and variance at a single query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    /// Clamped to be non-negative after numerical round-off.
    pub variance: f64,
}

impl Posterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A fitted Gaussian-process model.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<EncodedPoint>,
    targets: DVector<f64>,
    prior_mean: f64,
    kernel: KernelParams,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter_used: f64,
}

impl GpModel {
    /// Fit the GP: build the kernel matrix over `inputs`, factorize it with
    /// a diagonal jitter (escalating tenfold up to [`MAX_JITTER`] when the
    /// factorization fails), and solve for the dual coefficients.
    pub fn fit(
        inputs: &[EncodedPoint],
        targets: &[f64],
        prior_mean: f64,
        kernel: KernelParams,
    ) -> Result<Self, GpError> {
        if inputs.is_empty() {
            return Err(GpError::Empty);
        }
        if inputs.len() != targets.len() {
            return Err(GpError::ShapeMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        let n = inputs.len();
        for p in inputs {
            if p.dim() != kernel.dim() {
                return Err(GpError::DimensionMismatch {
                    expected: kernel.dim(),
                    got: p.dim(),
                });
            }
        }

        let mut base = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let k = kernel_eval(&inputs[i], &inputs[j], &kernel)?;
                base[(i, j)] = k;
                base[(j, i)] = k;
            }
        }

        let residual = DVector::from_iterator(n, targets.iter().map(|y| y - prior_mean));

        let mut jitter = kernel.noise_jitter.max(MIN_JITTER);
        loop {
            let mut k_mat = base.clone();
            for i in 0..n {
                k_mat[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(k_mat) {
                let alpha = chol.solve(&residual);
                return Ok(GpModel {
                    inputs: inputs.to_vec(),
                    targets: DVector::from_column_slice(targets),
                    prior_mean,
                    kernel,
                    chol_l: chol.unpack(),
                    alpha,
                    jitter_used: jitter,
                });
            }
            if jitter >= MAX_JITTER {
                return Err(GpError::IllConditioned {
                    duplicates: find_duplicate_pair(inputs),
                });
            }
            jitter = (jitter * 10.0).min(MAX_JITTER);
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[EncodedPoint] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    /// The diagonal jitter actually used after any escalation.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    fn posterior_raw(&self, x: &EncodedPoint) -> Result<(f64, f64), GpError> {
        let n = self.inputs.len();
        let mut k_x = DVector::zeros(n);
        for (i, xi) in self.inputs.iter().enumerate() {
            k_x[i] = kernel_eval(x, xi, &self.kernel)?;
        }
        let mean = self.prior_mean + k_x.dot(&self.alpha);
        let w = self
            .chol_l
            .solve_lower_triangular(&k_x)
            .expect("factor is non-singular by construction");
        let variance = self.kernel.signal_variance - w.dot(&w);
        Ok((mean, variance))
    }

    /// Posterior mean and variance at `x`, computed through the Cholesky
    /// factor; the variance is clamped at zero.
    pub fn posterior(&self, x: &EncodedPoint) -> Result<Posterior, GpError> {
        let (mean, variance) = self.posterior_raw(x)?;
        Ok(Posterior {
            mean,
            variance: variance.max(0.0),
        })
    }

    /// Log marginal likelihood of the targets under the fitted kernel:
    /// `-1/2 (y - mu0)^T alpha - sum_i log L_ii - n/2 log 2pi`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let residual = self.targets.map(|y| y - self.prior_mean);
        let log_det_half: f64 = self.chol_l.diagonal().iter().map(|l| l.ln()).sum();
        -0.5 * residual.dot(&self.alpha)
            - log_det_half
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn find_duplicate_pair(inputs: &[EncodedPoint]) -> Option<(usize, usize)> {
    for i in 0..inputs.len() {
        for j in (i + 1)..inputs.len() {
            if inputs[i].coords == inputs[j].coords {
                return Some((i, j));
            }
        }
    }
    None
}

/// Deterministic marginal-likelihood maximization over a log-space grid
/// (signal variance in {0.1, 1, 10}, one shared length scale over 7
/// log-spaced values in [0.05, 5]) followed by three coordinate-wise
/// refinement passes with a halving step. The prior mean is fixed to the
/// sample mean of the targets.
pub fn optimize_hyperparams(inputs: &[EncodedPoint], targets: &[f64]) -> KernelParams {
    let dim = inputs.first().map_or(1, EncodedPoint::dim).max(1);
    let prior_mean = if targets.is_empty() {
        0.0
    } else {
        targets.iter().sum::<f64>() / targets.len() as f64
    };

    let score = |log_sv: f64, log_ls: f64| -> f64 {
        let params = KernelParams {
            signal_variance: 10f64.powf(log_sv),
            length_scales: vec![10f64.powf(log_ls); dim],
            noise_jitter: DEFAULT_JITTER,
        };
        match GpModel::fit(inputs, targets, prior_mean, params) {
            Ok(model) => {
                let lml = model.log_marginal_likelihood();
                if lml.is_finite() {
                    lml
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    // Grid stage. ls grid: 0.05 * 100^(k/6) for k in 0..7 spans [0.05, 5].
    let sv_grid = [-1.0, 0.0, 1.0];
    let ls_lo = 0.05f64.log10();
    let ls_hi = 5.0f64.log10();
    let mut best = (sv_grid[0], ls_lo);
    let mut best_score = f64::NEG_INFINITY;
    for &sv in &sv_grid {
        for k in 0..7 {
            let ls = ls_lo + (ls_hi - ls_lo) * k as f64 / 6.0;
            let s = score(sv, ls);
            if s > best_score {
                best_score = s;
                best = (sv, ls);
            }
        }
    }

    // Refinement stage: per coordinate, walk in the improving direction while
    // it keeps improving, then halve the step for the next pass.
    let mut steps = [0.5, (ls_hi - ls_lo) / 12.0];
    let mut point = [best.0, best.1];
    const MAX_MOVES: usize = 25;
    for _pass in 0..3 {
        for c in 0..2 {
            for dir in [1.0, -1.0] {
                let mut moves = 0;
                loop {
                    let mut candidate = point;
                    candidate[c] += dir * steps[c];
                    let s = score(candidate[0], candidate[1]);
                    if s > best_score && moves < MAX_MOVES {
                        best_score = s;
                        point = candidate;
                        moves += 1;
                    } else {
                        break;
                    }
                }
            }
        }
        steps = [steps[0] * 0.5, steps[1] * 0.5];
    }

    KernelParams {
        signal_variance: 10f64.powf(point[0]),
        length_scales: vec![10f64.powf(point[1]); dim],
        noise_jitter: DEFAULT_JITTER,
    }
}
