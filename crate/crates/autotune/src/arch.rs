//! Layered-architecture modeling: shape inference, tail-replacement surgery,
//! mismatch adapters, and parameter/FLOP accounting.
//!
//! Everything here is symbolic; no weights exist. Convolutions and pools use
//! same-padding, so a layer with stride `s` maps spatial dims `(h, w)` to
//! `(ceil(h/s), ceil(w/s))`. Search-generated layers always have stride 1
//! and therefore preserve spatial dims; hand-authored base layers keep their
//! canonical strides.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{Configuration, ParamDomain, ParamSpec, ParamValue, SearchSpace};

/// Table-derived domains for search-generated layers.
pub const CONV_FILTER_SIZES: [f64; 4] = [1.0, 2.0, 3.0, 5.0];
pub const CONV_N_FILTERS: [f64; 4] = [64.0, 128.0, 256.0, 512.0];
pub const POOL_WINDOWS: [f64; 2] = [2.0, 3.0];
pub const FC_NEURONS: [f64; 5] = [64.0, 128.0, 256.0, 512.0, 1024.0];

pub fn dropout_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub fn units(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_flat(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.h, self.w, self.c)
    }
}

/// One layer of a network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerOp {
    Conv {
        filter_size: usize,
        stride: usize,
        n_filters: usize,
    },
    Maxpool {
        window: usize,
        stride: usize,
    },
    Avgpool {
        window: usize,
        stride: usize,
    },
    Dense {
        n_neurons: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Output {
        n_neurons: usize,
    },
}

impl LayerOp {
    pub fn label(&self) -> String {
        match self {
            LayerOp::Conv {
                filter_size,
                stride,
                n_filters,
            } => format!("conv {filter_size}x{filter_size}/{stride} -> {n_filters}"),
            LayerOp::Maxpool { window, stride } => format!("maxpool {window}x{window}/{stride}"),
            LayerOp::Avgpool { window, stride } => format!("avgpool {window}x{window}/{stride}"),
            LayerOp::Dense { n_neurons } => format!("dense {n_neurons}"),
            LayerOp::Dropout { rate } => format!("dropout {rate}"),
            LayerOp::Flatten => "flatten".to_string(),
            LayerOp::Output { n_neurons } => format!("output {n_neurons}"),
        }
    }

    fn is_output(&self) -> bool {
        matches!(self, LayerOp::Output { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub op: LayerOp,
    #[serde(default)]
    pub frozen: bool,
}

impl LayerSpec {
    pub fn frozen(op: LayerOp) -> Self {
        LayerSpec { op, frozen: true }
    }

    pub fn trainable(op: LayerOp) -> Self {
        LayerSpec { op, frozen: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeOp {
    Add,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operand {
    /// The main-path input arriving from the previous layer.
    Chain,
    /// The tensor carried by the skip edge.
    Skip,
}

/// Repair operator attached to a skip edge. A 1x1 convolution fixes channel
/// mismatches on the skip operand; a nearest-neighbor upsample fixes spatial
/// mismatches on whichever operand is smaller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adapter {
    Conv1x1 { channels: usize },
    Upsample { factor: usize, operand: Operand },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEdge {
    pub from: usize,
    pub to: usize,
    pub merge: MergeOp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adapters: Vec<Adapter>,
}

impl SkipEdge {
    pub fn new(from: usize, to: usize, merge: MergeOp) -> Self {
        SkipEdge {
            from,
            to,
            merge,
            adapters: Vec::new(),
        }
    }
}

/// A layered network description with optional skip connections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_edges: Vec<SkipEdge>,
}

/// First point where the forward shape trace fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    /// Layer index whose input could not be formed or consumed.
    pub position: usize,
    /// Index into `skip_edges` when the failure happened at a merge.
    pub edge: Option<usize>,
    pub chain: Shape,
    pub other: Option<Shape>,
    pub detail: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {}", self.position, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid architecture: {0}")]
    InvalidStructure(String),
    #[error("irreparable mismatch at layer {position}: {detail}")]
    IrreparableMismatch { position: usize, detail: String },
    #[error("depth must be in 1..={max}, got {got}")]
    DepthOutOfRange { got: usize, max: usize },
    #[error("configuration is missing parameter `{0}`")]
    MissingParam(String),
    #[error("architecture definition failed to parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Full forward trace: per-layer input and output shapes plus the shape each
/// skip edge delivers after its adapters.
#[derive(Debug, Clone)]
pub struct ShapeTrace {
    pub layer_inputs: Vec<Shape>,
    pub layer_outputs: Vec<Shape>,
    /// Indexed like `skip_edges`: (carried shape at `from`, shape after
    /// adapters, chain shape at the merge).
    pub edge_shapes: Vec<(Shape, Shape, Shape)>,
}

impl ShapeTrace {
    pub fn final_shape(&self) -> Shape {
        *self.layer_outputs.last().expect("non-empty trace")
    }
}

impl ArchitectureSpec {
    pub fn from_json_str(s: &str) -> Result<Self, ArchError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    fn structural_check(&self) -> Result<(), ArchError> {
        if self.layers.is_empty() {
            return Err(ArchError::InvalidStructure("no layers".into()));
        }
        let outputs = self.layers.iter().filter(|l| l.op.is_output()).count();
        if outputs != 1 || !self.layers.last().unwrap().op.is_output() {
            return Err(ArchError::InvalidStructure(
                "exactly one output layer is required, in final position".into(),
            ));
        }
        if let LayerOp::Output { n_neurons } = self.layers.last().unwrap().op {
            if n_neurons != self.class_count {
                return Err(ArchError::InvalidStructure(format!(
                    "output layer has {n_neurons} neurons but class_count is {}",
                    self.class_count
                )));
            }
        }
        for (i, e) in self.skip_edges.iter().enumerate() {
            if e.from >= e.to || e.to >= self.layers.len() {
                return Err(ArchError::InvalidStructure(format!(
                    "skip edge {i} ({} -> {}) is not strictly forward within bounds",
                    e.from, e.to
                )));
            }
        }
        Ok(())
    }

    /// Forward-propagate `(h, w, c)` through layers and skip merges. The
    /// mismatch report is data, not an error: it names the first offending
    /// position and both shapes.
    pub fn check_shapes(&self) -> Result<ShapeTrace, Mismatch> {
        if let Err(e) = self.structural_check() {
            return Err(Mismatch {
                position: 0,
                edge: None,
                chain: Shape::new(self.input_shape[0], self.input_shape[1], self.input_shape[2]),
                other: None,
                detail: e.to_string(),
            });
        }
        run_trace(self.input_shape, &self.layers, &self.skip_edges)
    }
}

/// The raw forward pass, shared by [`ArchitectureSpec::check_shapes`] and the
/// surgery code that traces headless layer prefixes.
fn run_trace(
    input_shape: [usize; 3],
    layers: &[LayerSpec],
    skip_edges: &[SkipEdge],
) -> Result<ShapeTrace, Mismatch> {
    let mut outputs: Vec<Shape> = Vec::with_capacity(layers.len());
        let mut inputs: Vec<Shape> = Vec::with_capacity(layers.len());
        let mut edge_shapes = vec![
            (Shape::new(0, 0, 0), Shape::new(0, 0, 0), Shape::new(0, 0, 0));
            skip_edges.len()
        ];

        for (i, layer) in layers.iter().enumerate() {
            let mut chain = if i == 0 {
                Shape::new(input_shape[0], input_shape[1], input_shape[2])
            } else {
                outputs[i - 1]
            };

            for (ei, edge) in skip_edges.iter().enumerate() {
                if edge.to != i {
                    continue;
                }
                let carried = outputs[edge.from];
                let mut skip = carried;
                for adapter in &edge.adapters {
                    match adapter {
                        Adapter::Conv1x1 { channels } => skip.c = *channels,
                        Adapter::Upsample { factor, operand } => match operand {
                            Operand::Skip => {
                                skip.h *= factor;
                                skip.w *= factor;
                            }
                            Operand::Chain => {
                                chain.h *= factor;
                                chain.w *= factor;
                            }
                        },
                    }
                }
                edge_shapes[ei] = (carried, skip, chain);
                match edge.merge {
                    MergeOp::Add => {
                        if chain != skip {
                            return Err(Mismatch {
                                position: i,
                                edge: Some(ei),
                                chain,
                                other: Some(skip),
                                detail: format!(
                                    "add-merge requires equal shapes; chain {chain} vs skip {skip}"
                                ),
                            });
                        }
                    }
                    MergeOp::Concat => {
                        if chain.h != skip.h || chain.w != skip.w {
                            return Err(Mismatch {
                                position: i,
                                edge: Some(ei),
                                chain,
                                other: Some(skip),
                                detail: format!(
                                    "concat-merge requires equal spatial dims; chain {chain} vs skip {skip}"
                                ),
                            });
                        }
                        chain.c += skip.c;
                    }
                }
            }

            inputs.push(chain);
            let out = match &layer.op {
                LayerOp::Conv { stride, n_filters, .. } => Shape::new(
                    chain.h.div_ceil(*stride),
                    chain.w.div_ceil(*stride),
                    *n_filters,
                ),
                LayerOp::Maxpool { stride, .. } | LayerOp::Avgpool { stride, .. } => Shape::new(
                    chain.h.div_ceil(*stride),
                    chain.w.div_ceil(*stride),
                    chain.c,
                ),
                LayerOp::Dense { n_neurons } | LayerOp::Output { n_neurons } => {
                    if !chain.is_flat() {
                        return Err(Mismatch {
                            position: i,
                            edge: None,
                            chain,
                            other: None,
                            detail: format!(
                                "dense layer expects flattened input (1, 1, n), got {chain}"
                            ),
                        });
                    }
                    Shape::new(1, 1, *n_neurons)
                }
                LayerOp::Dropout { .. } => chain,
                LayerOp::Flatten => Shape::new(1, 1, chain.units()),
            };
            outputs.push(out);
        }

    Ok(ShapeTrace {
        layer_inputs: inputs,
        layer_outputs: outputs,
        edge_shapes,
    })
}

// --- Accounting ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerAccount {
    pub index: usize,
    pub label: String,
    pub output: Shape,
    pub params: u64,
    pub flops: u64,
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub struct AdapterAccount {
    pub edge: usize,
    pub to: usize,
    pub label: String,
    pub params: u64,
    pub flops: u64,
}

/// Joint parameter and FLOP accounting. FLOPs count one multiply-add as two
/// operations for convolution/dense layers; pooling counts window reads.
/// Adapters inserted by surgery are always trainable.
#[derive(Debug, Clone)]
pub struct Accounting {
    pub layers: Vec<LayerAccount>,
    pub adapters: Vec<AdapterAccount>,
    pub params_frozen: u64,
    pub params_trainable: u64,
    pub flops_total: u64,
    pub flops_learned: u64,
}

impl Accounting {
    pub fn params_total(&self) -> u64 {
        self.params_frozen + self.params_trainable
    }
}

impl ArchitectureSpec {
    /// Per-layer and aggregate parameter/FLOP accounting; requires a clean
    /// shape trace.
    pub fn account(&self) -> Result<Accounting, Mismatch> {
        let trace = self.check_shapes()?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut params_frozen = 0u64;
        let mut params_trainable = 0u64;
        let mut flops_total = 0u64;
        let mut flops_learned = 0u64;

        for (i, layer) in self.layers.iter().enumerate() {
            let input = trace.layer_inputs[i];
            let output = trace.layer_outputs[i];
            let (params, flops) = match &layer.op {
                LayerOp::Conv { filter_size, n_filters, .. } => {
                    let k2 = (filter_size * filter_size) as u64;
                    let params = (k2 * input.c as u64 + 1) * *n_filters as u64;
                    let flops = 2
                        * k2
                        * input.c as u64
                        * *n_filters as u64
                        * output.h as u64
                        * output.w as u64;
                    (params, flops)
                }
                LayerOp::Maxpool { window, .. } | LayerOp::Avgpool { window, .. } => {
                    let flops = (window * window) as u64
                        * output.h as u64
                        * output.w as u64
                        * output.c as u64;
                    (0, flops)
                }
                LayerOp::Dense { n_neurons } | LayerOp::Output { n_neurons } => {
                    let n_in = input.c as u64;
                    let n_out = *n_neurons as u64;
                    ((n_in + 1) * n_out, 2 * n_in * n_out)
                }
                LayerOp::Dropout { .. } | LayerOp::Flatten => (0, 0),
            };
            if layer.frozen {
                params_frozen += params;
            } else {
                params_trainable += params;
                flops_learned += flops;
            }
            flops_total += flops;
            layers.push(LayerAccount {
                index: i,
                label: layer.op.label(),
                output,
                params,
                flops,
                frozen: layer.frozen,
            });
        }

        let mut adapters = Vec::new();
        for (ei, edge) in self.skip_edges.iter().enumerate() {
            let (carried, _, chain) = trace.edge_shapes[ei];
            let mut shape = carried;
            for adapter in &edge.adapters {
                match adapter {
                    Adapter::Conv1x1 { channels } => {
                        let params = (shape.c as u64 + 1) * *channels as u64;
                        let flops = 2 * shape.c as u64
                            * *channels as u64
                            * shape.h as u64
                            * shape.w as u64;
                        params_trainable += params;
                        flops_total += flops;
                        flops_learned += flops;
                        adapters.push(AdapterAccount {
                            edge: ei,
                            to: edge.to,
                            label: format!("conv1x1 {} -> {}", shape.c, channels),
                            params,
                            flops,
                        });
                        shape.c = *channels;
                    }
                    Adapter::Upsample { factor, operand } => {
                        if *operand == Operand::Skip {
                            shape.h *= factor;
                            shape.w *= factor;
                        }
                        adapters.push(AdapterAccount {
                            edge: ei,
                            to: edge.to,
                            label: format!("upsample x{factor} ({operand:?})"),
                            params: 0,
                            flops: 0,
                        });
                    }
                }
            }
            let _ = chain;
        }

        Ok(Accounting {
            layers,
            adapters,
            params_frozen,
            params_trainable,
            flops_total,
            flops_learned,
        })
    }
}

// --- Tail surgery ------------------------------------------------------------

/// Record of one tail replacement: how many base layers were cut, what was
/// generated, and which adapters were inserted (keyed by the merge layer in
/// the new architecture).
#[derive(Debug, Clone)]
pub struct TuningPlan {
    pub k: usize,
    pub generated_layers: Vec<LayerSpec>,
    pub adapters: Vec<(usize, Adapter)>,
}

/// Build the Table-1 search space for replacing up to `k_max` tail layers of
/// `arch`. The space holds a top-level `depth` parameter, per-position
/// conv/pool parameters gated on the depth reaching that position (counted
/// right to left over non-output layers), and the FC-stack parameters
/// (`n_fc` counts the output layer; hidden layer `i` exists when
/// `n_fc >= i + 1`, each with a neuron count and a post-layer dropout rate).
pub fn build_space_for_tail(arch: &ArchitectureSpec, k_max: usize) -> Result<SearchSpace, ArchError> {
    arch.structural_check()?;
    let non_output: Vec<usize> = (0..arch.layers.len())
        .filter(|i| !arch.layers[*i].op.is_output())
        .collect();
    if k_max == 0 || k_max > non_output.len() {
        return Err(ArchError::DepthOutOfRange {
            got: k_max,
            max: non_output.len(),
        });
    }

    let mut params = vec![ParamSpec::new(
        "depth",
        ParamDomain::IntegerRange {
            lo: 1,
            hi: k_max as i64,
        },
    )];
    // Position j counts right to left: j = 1 is the last non-output layer.
    for j in 1..=k_max {
        let idx = non_output[non_output.len() - j];
        let gate: Vec<ParamValue> = (j as i64..=k_max as i64).map(ParamValue::Int).collect();
        match arch.layers[idx].op {
            LayerOp::Conv { .. } => {
                params.push(
                    ParamSpec::new(
                        format!("conv{j}_filter_size"),
                        ParamDomain::OrdinalGrid(CONV_FILTER_SIZES.to_vec()),
                    )
                    .active_if("depth", gate.clone()),
                );
                params.push(
                    ParamSpec::new(
                        format!("conv{j}_n_filters"),
                        ParamDomain::OrdinalGrid(CONV_N_FILTERS.to_vec()),
                    )
                    .active_if("depth", gate),
                );
            }
            LayerOp::Maxpool { .. } | LayerOp::Avgpool { .. } => {
                params.push(
                    ParamSpec::new(
                        format!("pool{j}_window"),
                        ParamDomain::OrdinalGrid(POOL_WINDOWS.to_vec()),
                    )
                    .active_if("depth", gate),
                );
            }
            // Dense, dropout and flatten positions are regenerated by the FC
            // stack, which has its own parameters below.
            _ => {}
        }
    }

    params.push(ParamSpec::new(
        "n_fc",
        ParamDomain::IntegerRange { lo: 1, hi: 3 },
    ));
    for i in 1..=2 {
        let gate: Vec<ParamValue> = ((i + 1) as i64..=3).map(ParamValue::Int).collect();
        params.push(
            ParamSpec::new(
                format!("fc{i}_neurons"),
                ParamDomain::OrdinalGrid(FC_NEURONS.to_vec()),
            )
            .active_if("n_fc", gate.clone()),
        );
        params.push(
            ParamSpec::new(
                format!("fc{i}_dropout"),
                ParamDomain::OrdinalGrid(dropout_grid()),
            )
            .active_if("n_fc", gate),
        );
    }
    Ok(SearchSpace::new(params))
}

fn get_f64(config: &Configuration, name: &str) -> Result<f64, ArchError> {
    config
        .get(name)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| ArchError::MissingParam(name.to_string()))
}

/// Apply a configuration drawn from [`build_space_for_tail`]: cut the last
/// `depth` non-output layers plus the old output layer, regenerate the cut
/// conv/pool positions from the configuration, append the configured FC
/// stack and a fresh output layer sized to the class count, and repair any
/// merge mismatches with adapters. Retained layers come back frozen,
/// generated ones trainable.
pub fn apply_configuration(
    arch: &ArchitectureSpec,
    config: &Configuration,
) -> Result<(ArchitectureSpec, TuningPlan), ArchError> {
    arch.structural_check()?;
    let non_output: Vec<usize> = (0..arch.layers.len())
        .filter(|i| !arch.layers[*i].op.is_output())
        .collect();
    let k = get_f64(config, "depth")? as usize;
    if k == 0 || k > non_output.len() {
        return Err(ArchError::DepthOutOfRange {
            got: k,
            max: non_output.len(),
        });
    }
    // The output layer is last, so the cut is a contiguous suffix.
    let seam = non_output[non_output.len() - k];

    let mut layers: Vec<LayerSpec> = arch.layers[..seam]
        .iter()
        .map(|l| LayerSpec::frozen(l.op.clone()))
        .collect();
    let mut generated: Vec<LayerSpec> = Vec::new();

    // Regenerate cut conv/pool positions in their original order; position j
    // (right to left) carries the parameters conv{j}_* / pool{j}_*.
    for idx in seam..arch.layers.len() - 1 {
        // Right-to-left position of layer `idx` among non-output layers.
        let j = non_output.len() - non_output.iter().position(|p| *p == idx).unwrap();
        match arch.layers[idx].op {
            LayerOp::Conv { .. } => {
                let filter_size = get_f64(config, &format!("conv{j}_filter_size"))? as usize;
                let n_filters = get_f64(config, &format!("conv{j}_n_filters"))? as usize;
                generated.push(LayerSpec::trainable(LayerOp::Conv {
                    filter_size,
                    stride: 1,
                    n_filters,
                }));
            }
            LayerOp::Maxpool { .. } => {
                let window = get_f64(config, &format!("pool{j}_window"))? as usize;
                generated.push(LayerSpec::trainable(LayerOp::Maxpool { window, stride: 1 }));
            }
            LayerOp::Avgpool { .. } => {
                let window = get_f64(config, &format!("pool{j}_window"))? as usize;
                generated.push(LayerSpec::trainable(LayerOp::Avgpool { window, stride: 1 }));
            }
            _ => {}
        }
    }

    // The merge point for re-anchored skip edges: input of the first layer
    // after the generated conv/pool section.
    let reattach_to = layers.len() + generated.len();

    // FC stack. n_fc includes the output layer, so hidden layers are n_fc-1.
    let n_fc = get_f64(config, "n_fc")? as usize;
    if !(1..=3).contains(&n_fc) {
        return Err(ArchError::InvalidStructure(format!(
            "n_fc must be in 1..=3, got {n_fc}"
        )));
    }
    let mut fc_stack: Vec<LayerSpec> = Vec::new();
    for i in 1..n_fc {
        let neurons = get_f64(config, &format!("fc{i}_neurons"))? as usize;
        let dropout = get_f64(config, &format!("fc{i}_dropout"))?;
        fc_stack.push(LayerSpec::trainable(LayerOp::Dense { n_neurons: neurons }));
        fc_stack.push(LayerSpec::trainable(LayerOp::Dropout { rate: dropout }));
    }
    fc_stack.push(LayerSpec::trainable(LayerOp::Output {
        n_neurons: arch.class_count,
    }));

    layers.extend(generated.iter().cloned());

    // Skip edges: keep retained-to-retained edges untouched, re-anchor edges
    // that pointed into the cut region, drop edges whose source was cut.
    let mut skip_edges: Vec<SkipEdge> = Vec::new();
    let mut reanchored: Vec<usize> = Vec::new();
    for edge in &arch.skip_edges {
        if edge.from >= seam {
            continue;
        }
        if edge.to < seam {
            skip_edges.push(edge.clone());
        } else {
            // Adapters from the old geometry no longer apply.
            reanchored.push(skip_edges.len());
            skip_edges.push(SkipEdge::new(edge.from, reattach_to, edge.merge));
        }
    }

    // Flatten before the FC stack when the tensor is not already flat. A
    // re-anchored merge can change the shape at the seam (upsample repairs
    // inflate the chain), so any re-anchoring forces a flatten.
    let needs_flatten = if !reanchored.is_empty() {
        true
    } else if layers.is_empty() {
        !(arch.input_shape[0] == 1 && arch.input_shape[1] == 1)
    } else {
        let retained_edges: Vec<SkipEdge> = skip_edges
            .iter()
            .filter(|e| e.to < layers.len())
            .cloned()
            .collect();
        match run_trace(arch.input_shape, &layers, &retained_edges) {
            Ok(trace) => !trace.final_shape().is_flat(),
            // Pre-existing damage in the retained prefix resurfaces below.
            Err(_) => true,
        }
    };
    if needs_flatten {
        let flat = LayerSpec::trainable(LayerOp::Flatten);
        generated.push(flat.clone());
        layers.push(flat);
    }
    generated.extend(fc_stack.iter().cloned());
    layers.extend(fc_stack);

    let mut result = ArchitectureSpec {
        name: format!("{}+tuned", arch.name),
        input_shape: arch.input_shape,
        class_count: arch.class_count,
        layers,
        skip_edges,
    };

    // Repair loop: each pass fixes the first reported mismatch with exactly
    // one adapter, so every inserted adapter resolves one recorded mismatch.
    let mut plan_adapters: Vec<(usize, Adapter)> = Vec::new();
    let max_repairs = 2 * result.skip_edges.len() + 1;
    for _ in 0..max_repairs {
        let mismatch = match result.check_shapes() {
            Ok(_) => {
                return Ok((
                    result,
                    TuningPlan {
                        k,
                        generated_layers: generated,
                        adapters: plan_adapters,
                    },
                ))
            }
            Err(m) => m,
        };
        // Only merges disturbed by the surgery are repairable; connectivity
        // and merges among retained layers are left exactly as authored.
        let repairable = mismatch.edge.filter(|ei| reanchored.contains(ei));
        let Some(ei) = repairable else {
            return Err(ArchError::IrreparableMismatch {
                position: mismatch.position,
                detail: mismatch.detail,
            });
        };
        let chain = mismatch.chain;
        let skip = mismatch.other.expect("merge mismatch carries both shapes");
        let adapter = if chain.h != skip.h || chain.w != skip.w {
            let (small, large, operand) = if skip.h < chain.h {
                (skip, chain, Operand::Skip)
            } else {
                (chain, skip, Operand::Chain)
            };
            if small.h == 0
                || small.w == 0
                || large.h % small.h != 0
                || large.w % small.w != 0
                || large.h / small.h != large.w / small.w
            {
                return Err(ArchError::IrreparableMismatch {
                    position: mismatch.position,
                    detail: format!(
                        "spatial dims {} vs {} differ by a non-integer factor",
                        chain, skip
                    ),
                });
            }
            Adapter::Upsample {
                factor: large.h / small.h,
                operand,
            }
        } else {
            // Equal spatial dims: an add-merge channel gap, fixed by mapping
            // the skip operand onto the chain's channel count.
            Adapter::Conv1x1 { channels: chain.c }
        };
        result.skip_edges[ei].adapters.push(adapter);
        plan_adapters.push((result.skip_edges[ei].to, adapter));
    }
    match result.check_shapes() {
        Ok(_) => Ok((
            result,
            TuningPlan {
                k,
                generated_layers: generated,
                adapters: plan_adapters,
            },
        )),
        Err(m) => Err(ArchError::IrreparableMismatch {
            position: m.position,
            detail: m.detail,
        }),
    }
}
