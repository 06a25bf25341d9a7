//! Built-in toy trainer: a small fully-connected ReLU classifier on a
//! synthetic two-class spiral dataset.
//!
//! The training regimen mirrors the engine's target workload at desk scale:
//! per-parameter adaptive-gradient updates (squared-gradient accumulator,
//! step divided by its root), initial learning rate 0.01 decayed by sqrt(0.1)
//! on a validation-loss plateau, He-normal initialization, dropout after each
//! hidden layer during training only, 50 epochs. Everything is deterministic
//! given the evaluation seed; training runs in f32, the gradient check
//! instantiates the same code in f64.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, NdFloat};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{EvalRequest, EvalResponse, Evaluation, Evaluator};
use crate::space::Configuration;

pub const DEFAULT_EPOCHS: usize = 50;
const BATCH_SIZE: usize = 32;
const LR_INIT: f64 = 0.01;
const PLATEAU_WINDOW: usize = 5;
const PLATEAU_REL_THRESHOLD: f64 = 1e-4;
const ADAGRAD_EPS: f64 = 1e-8;

/// Fixed generation seed for the built-in dataset.
const DATA_SEED: u64 = 1742;
const TRAIN_PER_CLASS: usize = 400;
const VAL_PER_CLASS: usize = 100;
const SPIRAL_TURNS: f64 = 1.5;
const SPIRAL_NOISE: f64 = 0.08;

/// Evaluator wrapper. The per-evaluation seed depends only on the base seed
/// and the configuration's content, so a configuration's objective value is
/// a well-defined deterministic function shared by every strategy and run.
#[derive(Debug, Clone)]
pub struct ToyTrainerEvaluator {
    pub dataset: String,
    pub base_seed: u64,
}

impl ToyTrainerEvaluator {
    pub fn new(dataset: impl Into<String>, base_seed: u64) -> Self {
        ToyTrainerEvaluator {
            dataset: dataset.into(),
            base_seed,
        }
    }
}

impl Evaluator for ToyTrainerEvaluator {
    fn evaluate(&self, request: &EvalRequest) -> Evaluation {
        let seed = self.base_seed ^ request.config.stable_hash();
        Evaluation::instant(eval_toy_trainer_with_epochs(
            &request.config,
            &self.dataset,
            seed,
            request.epochs,
        ))
    }
}

/// Train the configured classifier for the default 50 epochs and report the
/// final validation accuracy.
pub fn eval_toy_trainer(config: &Configuration, dataset: &str, seed: u64) -> EvalResponse {
    eval_toy_trainer_with_epochs(config, dataset, seed, DEFAULT_EPOCHS)
}

pub fn eval_toy_trainer_with_epochs(
    config: &Configuration,
    dataset: &str,
    seed: u64,
    epochs: usize,
) -> EvalResponse {
    if dataset != "spirals" {
        return EvalResponse::failed(&format!("unknown dataset `{dataset}`"));
    }
    let layers = match parse_fc_config(config) {
        Ok(layers) => layers,
        Err(msg) => return EvalResponse::failed(&msg),
    };
    let data = spirals::<f32>();
    match train(&layers, &data, seed, epochs) {
        Ok(outcome) => EvalResponse::ok(outcome.val_accuracy)
            .with_meta("train_accuracy", outcome.train_accuracy.into())
            .with_meta("final_val_loss", outcome.final_val_loss.into())
            .with_meta("epochs_run", (outcome.epochs_run as u64).into())
            .with_meta("dataset", "spirals".into()),
        Err(msg) => EvalResponse::failed(&msg),
    }
}

/// Hidden-layer widths and dropout rates from the FC-stack parameters
/// `n_layers`, `layer{i}_neurons`, `layer{i}_dropout`.
fn parse_fc_config(config: &Configuration) -> Result<Vec<(usize, f64)>, String> {
    let n = config
        .get("n_layers")
        .and_then(|v| v.as_f64())
        .ok_or("missing FC-stack parameter `n_layers`")? as i64;
    if !(1..=3).contains(&n) {
        return Err(format!("n_layers must be in 1..=3, got {n}"));
    }
    let mut layers = Vec::with_capacity(n as usize);
    for i in 1..=n {
        let neurons = config
            .get(&format!("layer{i}_neurons"))
            .and_then(|v| v.as_f64())
            .ok_or_else(|| format!("missing `layer{i}_neurons`"))?;
        let dropout = config
            .get(&format!("layer{i}_dropout"))
            .and_then(|v| v.as_f64())
            .ok_or_else(|| format!("missing `layer{i}_dropout`"))?;
        if neurons < 1.0 || !(0.0..=1.0).contains(&dropout) {
            return Err(format!("invalid layer {i} hyperparameters"));
        }
        layers.push((neurons as usize, dropout));
    }
    Ok(layers)
}

struct Dataset<F> {
    train_x: Array2<F>,
    train_y: Vec<usize>,
    val_x: Array2<F>,
    val_y: Vec<usize>,
}

/// Two interleaved spirals, 500 points per class, shuffled per class and
/// split 400/100 into train/validation. Balanced by construction.
fn spirals<F: NdFloat>() -> Dataset<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(DATA_SEED);
    let per_class = TRAIN_PER_CLASS + VAL_PER_CLASS;
    let mut class_points: Vec<Vec<[f64; 2]>> = Vec::new();
    for class in 0..2usize {
        let mut points = Vec::with_capacity(per_class);
        for i in 0..per_class {
            let t = i as f64 / (per_class - 1) as f64;
            let r = 0.1 + 0.9 * t;
            let theta =
                t * SPIRAL_TURNS * std::f64::consts::TAU + class as f64 * std::f64::consts::PI;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            points.push([
                r * theta.cos() + SPIRAL_NOISE * nx,
                r * theta.sin() + SPIRAL_NOISE * ny,
            ]);
        }
        points.shuffle(&mut rng);
        class_points.push(points);
    }

    let f = |v: f64| F::from(v).expect("fits in float");
    let mut train_x = Array2::zeros((2 * TRAIN_PER_CLASS, 2));
    let mut train_y = Vec::with_capacity(2 * TRAIN_PER_CLASS);
    let mut val_x = Array2::zeros((2 * VAL_PER_CLASS, 2));
    let mut val_y = Vec::with_capacity(2 * VAL_PER_CLASS);
    for (class, points) in class_points.iter().enumerate() {
        for (i, p) in points[..TRAIN_PER_CLASS].iter().enumerate() {
            let row = class * TRAIN_PER_CLASS + i;
            train_x[[row, 0]] = f(p[0]);
            train_x[[row, 1]] = f(p[1]);
        }
        train_y.extend(std::iter::repeat_n(class, TRAIN_PER_CLASS));
        for (i, p) in points[TRAIN_PER_CLASS..].iter().enumerate() {
            let row = class * VAL_PER_CLASS + i;
            val_x[[row, 0]] = f(p[0]);
            val_x[[row, 1]] = f(p[1]);
        }
        val_y.extend(std::iter::repeat_n(class, VAL_PER_CLASS));
    }
    Dataset {
        train_x,
        train_y,
        val_x,
        val_y,
    }
}

struct Mlp<F> {
    weights: Vec<Array2<F>>,
    biases: Vec<Array1<F>>,
    /// Dropout rate after each hidden layer (training only).
    dropout: Vec<f64>,
}

impl<F: NdFloat> Mlp<F> {
    /// He-normal initialization: N(0, 2 / fan_in); biases start at zero.
    fn init(layers: &[(usize, f64)], rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![2usize];
        sizes.extend(layers.iter().map(|(w, _)| *w));
        sizes.push(2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                let z: f64 = rng.sample(StandardNormal);
                F::from(z * std).expect("fits in float")
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Mlp {
            weights,
            biases,
            dropout: layers.iter().map(|(_, d)| *d).collect(),
        }
    }

    fn n_hidden(&self) -> usize {
        self.dropout.len()
    }

    /// Forward pass. In training mode fresh dropout masks are drawn (already
    /// folded into the returned activations); masks are inverted-scaled by
    /// 1/(1-p), or all-zero at p >= 1.
    fn forward(
        &self,
        x: &Array2<F>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<Array2<F>>, Vec<Array2<F>>, Vec<Option<Array2<F>>>) {
        let mut activations = vec![x.clone()];
        let mut pre_activations = Vec::new();
        let mut masks = Vec::new();
        for l in 0..self.weights.len() {
            let z = affine(activations.last().unwrap(), &self.weights[l], &self.biases[l]);
            if l < self.n_hidden() {
                let mut a = z.mapv(|v| v.max(F::zero()));
                let rate = self.dropout[l];
                let mask = match (&mut rng, rate > 0.0) {
                    (Some(rng), true) => {
                        let keep = 1.0 - rate;
                        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
                        let m = Array2::from_shape_fn(a.dim(), |_| {
                            if rng.gen::<f64>() < keep {
                                F::from(scale).unwrap()
                            } else {
                                F::zero()
                            }
                        });
                        a = &a * &m;
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                pre_activations.push(z);
                activations.push(a);
            } else {
                pre_activations.push(z.clone());
                activations.push(z);
            }
        }
        (activations, pre_activations, masks)
    }

    /// Mean softmax cross-entropy over the batch.
    fn loss_from_logits(logits: &Array2<F>, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (row, label) in logits.rows().into_iter().zip(labels) {
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let log_sum = row
                .iter()
                .map(|v| (*v - m).exp())
                .fold(F::zero(), |acc, v| acc + v);
            let log_p = (row[*label] - m).to_f64().unwrap() - log_sum.to_f64().unwrap().ln();
            total -= log_p;
        }
        total / labels.len() as f64
    }

    fn loss(&self, x: &Array2<F>, labels: &[usize]) -> f64 {
        let (activations, _, _) = self.forward(x, None);
        Self::loss_from_logits(activations.last().unwrap(), labels)
    }

    fn accuracy(&self, x: &Array2<F>, labels: &[usize]) -> f64 {
        let (activations, _, _) = self.forward(x, None);
        let logits = activations.last().unwrap();
        let mut hits = 0usize;
        for (row, label) in logits.rows().into_iter().zip(labels) {
            let pred = if row[1] > row[0] { 1 } else { 0 };
            if pred == *label {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    }

    /// Loss and parameter gradients on one batch; dropout masks drawn from
    /// `rng` when given.
    fn loss_and_grad(
        &self,
        x: &Array2<F>,
        labels: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<Array2<F>>, Vec<Array1<F>>) {
        let (activations, pre_activations, masks) = self.forward(x, rng);
        let logits = activations.last().unwrap();
        let loss = Self::loss_from_logits(logits, labels);

        let batch = x.nrows();
        let inv_batch = F::from(1.0 / batch as f64).unwrap();
        // d(mean CE)/d(logits) = (softmax - onehot) / batch.
        let mut delta = Array2::zeros(logits.dim());
        for (i, (row, label)) in logits.rows().into_iter().zip(labels).enumerate() {
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let exps: Vec<F> = row.iter().map(|v| (*v - m).exp()).collect();
            let sum = exps.iter().fold(F::zero(), |acc, v| acc + *v);
            for (j, e) in exps.iter().enumerate() {
                let p = *e / sum;
                let target = if j == *label { F::one() } else { F::zero() };
                delta[[i, j]] = (p - target) * inv_batch;
            }
        }

        let n_layers = self.weights.len();
        let mut dw = vec![Array2::zeros((0, 0)); n_layers];
        let mut db = vec![Array1::zeros(0); n_layers];
        for l in (0..n_layers).rev() {
            let mut grad_w = Array2::zeros(self.weights[l].dim());
            general_mat_mul(F::one(), &activations[l].t(), &delta, F::zero(), &mut grad_w);
            dw[l] = grad_w;
            db[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = Array2::zeros((batch, self.weights[l].nrows()));
                general_mat_mul(F::one(), &delta, &self.weights[l].t(), F::zero(), &mut upstream);
                if let Some(mask) = &masks[l - 1] {
                    upstream = &upstream * mask;
                }
                let z = &pre_activations[l - 1];
                delta = Array2::from_shape_fn(upstream.dim(), |idx| {
                    if z[idx] > F::zero() {
                        upstream[idx]
                    } else {
                        F::zero()
                    }
                });
            }
        }
        (loss, dw, db)
    }
}

fn affine<F: NdFloat>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut out = Array2::zeros((x.nrows(), w.ncols()));
    general_mat_mul(F::one(), x, w, F::zero(), &mut out);
    out += b;
    out
}

struct Adagrad<F> {
    acc_w: Vec<Array2<F>>,
    acc_b: Vec<Array1<F>>,
}

impl<F: NdFloat> Adagrad<F> {
    fn new(model: &Mlp<F>) -> Self {
        Adagrad {
            acc_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            acc_b: model.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
        }
    }

    fn step(&mut self, model: &mut Mlp<F>, dw: &[Array2<F>], db: &[Array1<F>], lr: f64) {
        let lr = F::from(lr).unwrap();
        let eps = F::from(ADAGRAD_EPS).unwrap();
        for l in 0..model.weights.len() {
            ndarray::Zip::from(&mut model.weights[l])
                .and(&mut self.acc_w[l])
                .and(&dw[l])
                .for_each(|w, acc, g| {
                    *acc = *acc + *g * *g;
                    *w = *w - lr * *g / (acc.sqrt() + eps);
                });
            ndarray::Zip::from(&mut model.biases[l])
                .and(&mut self.acc_b[l])
                .and(&db[l])
                .for_each(|b, acc, g| {
                    *acc = *acc + *g * *g;
                    *b = *b - lr * *g / (acc.sqrt() + eps);
                });
        }
    }
}

struct TrainOutcome {
    val_accuracy: f64,
    train_accuracy: f64,
    final_val_loss: f64,
    epochs_run: usize,
}

fn train<F: NdFloat>(
    layers: &[(usize, f64)],
    data: &Dataset<F>,
    seed: u64,
    epochs: usize,
) -> Result<TrainOutcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mlp::init(layers, &mut rng);
    let mut opt = Adagrad::new(&model);
    let n = data.train_x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = LR_INIT;
    let mut best_val_loss = f64::INFINITY;
    let mut epochs_since_improvement = 0usize;
    let mut val_loss = model.loss(&data.val_x, &data.val_y);

    for _epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(BATCH_SIZE) {
            let batch_x = data.train_x.select(Axis(0), chunk);
            let batch_y: Vec<usize> = chunk.iter().map(|i| data.train_y[*i]).collect();
            let (loss, dw, db) = model.loss_and_grad(&batch_x, &batch_y, Some(&mut rng));
            if !loss.is_finite() {
                return Err("diverged".into());
            }
            opt.step(&mut model, &dw, &db, lr);
        }
        val_loss = model.loss(&data.val_x, &data.val_y);
        if !val_loss.is_finite() {
            return Err("diverged".into());
        }
        if val_loss < best_val_loss * (1.0 - PLATEAU_REL_THRESHOLD) {
            best_val_loss = val_loss;
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= PLATEAU_WINDOW {
                lr *= 0.1f64.sqrt();
                epochs_since_improvement = 0;
            }
        }
    }

    Ok(TrainOutcome {
        val_accuracy: model.accuracy(&data.val_x, &data.val_y),
        train_accuracy: model.accuracy(&data.train_x, &data.train_y),
        final_val_loss: val_loss,
        epochs_run: epochs,
    })
}

/// Maximum relative error between analytic gradients and central finite
/// differences (epsilon = 1e-5) at initialization, over every parameter of
/// a dropout-free f64 network with the given hidden widths. Components where
/// both sides are below 1e-5 are skipped as numerically void.
pub fn gradient_check(hidden_widths: &[usize], seed: u64) -> f64 {
    const EPS: f64 = 1e-5;
    let layers: Vec<(usize, f64)> = hidden_widths.iter().map(|w| (*w, 0.0)).collect();
    let data = spirals::<f64>();
    let batch_x = data.train_x.slice(ndarray::s![..64, ..]).to_owned();
    let batch_y: Vec<usize> = data.train_y[..64].to_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mlp::<f64>::init(&layers, &mut rng);
    let (_, dw, db) = model.loss_and_grad(&batch_x, &batch_y, None);

    let mut max_rel = 0.0f64;
    let mut check = |analytic: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * EPS);
        let denom = analytic.abs().max(fd.abs());
        if denom > 1e-5 {
            max_rel = max_rel.max((analytic - fd).abs() / denom);
        }
    };

    let n_layers = model.weights.len();
    for l in 0..n_layers {
        for idx in 0..model.weights[l].len() {
            let (r, c) = (idx / model.weights[l].ncols(), idx % model.weights[l].ncols());
            let orig = model.weights[l][[r, c]];
            model.weights[l][[r, c]] = orig + EPS;
            let plus = model.loss(&batch_x, &batch_y);
            model.weights[l][[r, c]] = orig - EPS;
            let minus = model.loss(&batch_x, &batch_y);
            model.weights[l][[r, c]] = orig;
            check(dw[l][[r, c]], plus, minus);
        }
        for i in 0..model.biases[l].len() {
            let orig = model.biases[l][i];
            model.biases[l][i] = orig + EPS;
            let plus = model.loss(&batch_x, &batch_y);
            model.biases[l][i] = orig - EPS;
            let minus = model.loss(&batch_x, &batch_y);
            model.biases[l][i] = orig;
            check(db[l][i], plus, minus);
        }
    }
    max_rel
}
