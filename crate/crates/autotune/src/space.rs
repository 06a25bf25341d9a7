//! Mixed categorical/ordinal/integer search spaces and their fixed-length
//! real-vector encoding.
//!
//! A [`SearchSpace`] is an ordered list of parameters. Parameters may be
//! conditional: a parameter guarded by `active_if` exists in a configuration
//! only when an earlier parameter holds one of the listed values. The encoding
//! keeps the vector length constant across the whole space so a single kernel
//! is defined over every configuration: categorical parameters occupy a
//! one-hot block (all-zero when inactive), scalar parameters occupy one
//! min-max-normalized coordinate, and conditional scalar parameters carry an
//! extra activity coordinate so "inactive" and "active at the low end" encode
//! differently.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A single parameter value as it appears in a configuration.
#[derive(Debug, Clone)]
pub enum ParamValue {
    /// Categorical label.
    Label(String),
    /// Ordinal-grid or continuous value.
    Real(f64),
    /// Integer-range value.
    Int(i64),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Label(_) => None,
            ParamValue::Real(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            ParamValue::Label(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl PartialEq for ParamValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ParamValue::Label(a), ParamValue::Label(b)) => a == b,
            (ParamValue::Real(a), ParamValue::Real(b)) => a.to_bits() == b.to_bits(),
            (ParamValue::Int(a), ParamValue::Int(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for ParamValue {}

impl Hash for ParamValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            ParamValue::Label(s) => {
                0u8.hash(state);
                s.hash(state);
            }
            ParamValue::Real(v) => {
                1u8.hash(state);
                v.to_bits().hash(state);
            }
            ParamValue::Int(v) => {
                2u8.hash(state);
                v.hash(state);
            }
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Label(s) => write!(f, "{s}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for ParamValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ParamValue::Label(s) => serializer.serialize_str(s),
            ParamValue::Real(v) => serializer.serialize_f64(*v),
            ParamValue::Int(v) => serializer.serialize_i64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        match v {
            serde_json::Value::String(s) => Ok(ParamValue::Label(s)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(ParamValue::Int(i))
                } else if let Some(f) = n.as_f64() {
                    Ok(ParamValue::Real(f))
                } else {
                    Err(D::Error::custom("unrepresentable number"))
                }
            }
            other => Err(D::Error::custom(format!(
                "expected string or number parameter value, got {other}"
            ))),
        }
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Label(s.to_string())
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

/// The domain a single parameter ranges over.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamDomain {
    /// Unordered finite set of labels, encoded one-hot.
    Categorical(Vec<String>),
    /// Strictly increasing finite grid of reals, encoded min-max normalized.
    OrdinalGrid(Vec<f64>),
    /// Inclusive integer range.
    IntegerRange { lo: i64, hi: i64 },
    /// Unquantized real interval. Makes the space cardinality unbounded.
    Continuous { lo: f64, hi: f64 },
}

impl ParamDomain {
    /// Number of distinct values, or `None` for continuous domains.
    pub fn len(&self) -> Option<u128> {
        match self {
            ParamDomain::Categorical(v) => Some(v.len() as u128),
            ParamDomain::OrdinalGrid(v) => Some(v.len() as u128),
            ParamDomain::IntegerRange { lo, hi } => Some((hi - lo) as u128 + 1),
            ParamDomain::Continuous { .. } => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// Map a value onto this domain's canonical representation, or `None`
    /// when the value lies outside the domain. Integers are accepted for real
    /// grids (and vice versa) when they denote the same point.
    pub fn canonicalize(&self, value: &ParamValue) -> Option<ParamValue> {
        match self {
            ParamDomain::Categorical(labels) => {
                let s = value.as_label()?;
                labels.iter().any(|l| l == s).then(|| value.clone())
            }
            ParamDomain::OrdinalGrid(grid) => {
                let v = value.as_f64()?;
                grid.iter().find(|g| **g == v).map(|g| ParamValue::Real(*g))
            }
            ParamDomain::IntegerRange { lo, hi } => {
                let i = match value {
                    ParamValue::Int(i) => *i,
                    ParamValue::Real(f) if f.fract() == 0.0 => *f as i64,
                    _ => return None,
                };
                (*lo..=*hi).contains(&i).then_some(ParamValue::Int(i))
            }
            ParamDomain::Continuous { lo, hi } => {
                let v = value.as_f64()?;
                (v.is_finite() && *lo <= v && v <= *hi).then_some(ParamValue::Real(v))
            }
        }
    }

    /// All values of a finite domain, in canonical order.
    pub fn values(&self) -> Option<Vec<ParamValue>> {
        match self {
            ParamDomain::Categorical(v) => {
                Some(v.iter().map(|s| ParamValue::Label(s.clone())).collect())
            }
            ParamDomain::OrdinalGrid(v) => Some(v.iter().map(|g| ParamValue::Real(*g)).collect()),
            ParamDomain::IntegerRange { lo, hi } => {
                Some((*lo..=*hi).map(ParamValue::Int).collect())
            }
            ParamDomain::Continuous { .. } => None,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self {
            ParamDomain::Categorical(v) => ParamValue::Label(v[rng.gen_range(0..v.len())].clone()),
            ParamDomain::OrdinalGrid(v) => ParamValue::Real(v[rng.gen_range(0..v.len())]),
            ParamDomain::IntegerRange { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
            ParamDomain::Continuous { lo, hi } => ParamValue::Real(rng.gen_range(*lo..*hi)),
        }
    }
}

/// Activation guard for a conditional parameter: the parameter exists iff the
/// referenced (earlier) parameter is itself active and holds one of `any_of`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub param: String,
    pub any_of: Vec<ParamValue>,
}

/// A named parameter within a search space.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub domain: ParamDomain,
    pub active_if: Option<Condition>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, domain: ParamDomain) -> Self {
        ParamSpec {
            name: name.into(),
            domain,
            active_if: None,
        }
    }

    pub fn active_if(mut self, param: impl Into<String>, any_of: Vec<ParamValue>) -> Self {
        self.active_if = Some(Condition {
            param: param.into(),
            any_of,
        });
        self
    }
}

/// A point in a search space: one value per active parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Configuration {
    assignments: BTreeMap<String, ParamValue>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<ParamValue>) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<ParamValue>) {
        self.assignments.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.assignments.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.assignments.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Name-sorted iteration (the map is ordered).
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.assignments.iter()
    }

    /// Stable content hash, identical across processes and platforms.
    pub fn stable_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("configuration serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        write!(f, "{{")?;
        for (k, v) in &self.assignments {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
            first = false;
        }
        write!(f, "}}")
    }
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.assignments.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Configuration {
            assignments: BTreeMap::deserialize(deserializer)?,
        })
    }
}

impl FromIterator<(String, ParamValue)> for Configuration {
    fn from_iter<T: IntoIterator<Item = (String, ParamValue)>>(iter: T) -> Self {
        Configuration {
            assignments: iter.into_iter().collect(),
        }
    }
}

/// A configuration encoded as a fixed-length vector with coordinates in
/// `[0, 1]`, suitable for a kernel over the whole space.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPoint {
    pub coords: Vec<f64>,
}

impl EncodedPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        EncodedPoint { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }
}

/// One invariant violation found by [`SearchSpace::validate`]. Defects are
/// data, not failures: an invalid space can still be inspected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Defect {
    pub param: Option<String>,
    pub message: String,
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.param {
            Some(p) => write!(f, "parameter `{p}`: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Exact number of distinct valid configurations, or unbounded when any
/// active parameter is continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cardinality {
    Finite(u128),
    Unbounded,
}

impl Cardinality {
    pub fn finite(&self) -> Option<u128> {
        match self {
            Cardinality::Finite(n) => Some(*n),
            Cardinality::Unbounded => None,
        }
    }
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cardinality::Finite(n) => write!(f, "{n}"),
            Cardinality::Unbounded => write!(f, "unbounded"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("missing value for active parameter `{0}`")]
    MissingParam(String),
    #[error("value assigned to inactive parameter `{0}`")]
    InactiveParam(String),
    #[error("value {value} outside the domain of parameter `{name}`")]
    OutOfDomain { name: String, value: String },
    #[error("encoded point has length {got}, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("space contains a continuous parameter; configurations cannot be enumerated")]
    Unbounded,
    #[error("space definition failed to parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy)]
enum BlockKind {
    /// One-hot over `len` labels; all-zero when inactive.
    OneHot { len: usize },
    /// Single normalized coordinate, optionally preceded by an activity bit.
    Scalar { with_activity: bool },
}

#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    kind: BlockKind,
}

impl Block {
    fn width(&self) -> usize {
        match self.kind {
            BlockKind::OneHot { len } => len,
            BlockKind::Scalar { with_activity } => 1 + usize::from(with_activity),
        }
    }
}

/// An ordered set of (possibly conditional) parameters with a fixed-length
/// encoding.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
    blocks: Vec<Block>,
    dim: usize,
    index: HashMap<String, usize>,
}

impl SearchSpace {
    /// Build a space from parameter specs. The space is constructed even when
    /// invariants are violated; call [`validate`](Self::validate) to list
    /// defects before sampling or encoding.
    pub fn new(params: Vec<ParamSpec>) -> Self {
        let mut params = params;
        // Canonicalize condition values against the referenced domain so that
        // e.g. `equals: 3` matches an ordinal grid value 3.0.
        let domains: HashMap<String, ParamDomain> = params
            .iter()
            .map(|p| (p.name.clone(), p.domain.clone()))
            .collect();
        for p in &mut params {
            if let Some(cond) = &mut p.active_if {
                if let Some(domain) = domains.get(&cond.param) {
                    for v in &mut cond.any_of {
                        if let Some(canon) = domain.canonicalize(v) {
                            *v = canon;
                        }
                    }
                }
            }
        }

        let mut blocks = Vec::with_capacity(params.len());
        let mut offset = 0;
        for p in &params {
            let kind = match &p.domain {
                ParamDomain::Categorical(labels) => BlockKind::OneHot { len: labels.len() },
                _ => BlockKind::Scalar {
                    with_activity: p.active_if.is_some(),
                },
            };
            let block = Block { offset, kind };
            offset += block.width();
            blocks.push(block);
        }
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        SearchSpace {
            params,
            blocks,
            dim: offset,
            index,
        }
    }

    /// Length of the encoded vector.
    pub fn encoded_dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.index.get(name).map(|i| &self.params[*i])
    }

    /// Check every space invariant; returns one defect per violation.
    pub fn validate(&self) -> Vec<Defect> {
        let mut defects = Vec::new();
        let mut seen: HashSet<&str> = HashSet::new();
        for (i, p) in self.params.iter().enumerate() {
            if !seen.insert(&p.name) {
                defects.push(Defect {
                    param: Some(p.name.clone()),
                    message: "duplicate name".into(),
                });
            }
            match &p.domain {
                ParamDomain::Categorical(labels) => {
                    if labels.is_empty() {
                        defects.push(Defect {
                            param: Some(p.name.clone()),
                            message: "empty value list".into(),
                        });
                    }
                    let mut label_seen = HashSet::new();
                    for l in labels {
                        if !label_seen.insert(l) {
                            defects.push(Defect {
                                param: Some(p.name.clone()),
                                message: format!("duplicate value `{l}`"),
                            });
                        }
                    }
                }
                ParamDomain::OrdinalGrid(grid) => {
                    if grid.is_empty() {
                        defects.push(Defect {
                            param: Some(p.name.clone()),
                            message: "empty value list".into(),
                        });
                    }
                    if grid.iter().any(|v| !v.is_finite()) {
                        defects.push(Defect {
                            param: Some(p.name.clone()),
                            message: "non-finite grid value".into(),
                        });
                    }
                    if grid.windows(2).any(|w| w[0] >= w[1]) {
                        defects.push(Defect {
                            param: Some(p.name.clone()),
                            message: "grid values not strictly increasing".into(),
                        });
                    }
                }
                ParamDomain::IntegerRange { lo, hi } => {
                    if lo > hi {
                        defects.push(Defect {
                            param: Some(p.name.clone()),
                            message: format!("empty range: lo {lo} > hi {hi}"),
                        });
                    }
                }
                ParamDomain::Continuous { lo, hi } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        defects.push(Defect {
                            param: Some(p.name.clone()),
                            message: format!("invalid interval [{lo}, {hi}]"),
                        });
                    }
                }
            }
            if let Some(cond) = &p.active_if {
                match self.index.get(&cond.param) {
                    None => defects.push(Defect {
                        param: Some(p.name.clone()),
                        message: format!("dangling condition: `{}` is not declared", cond.param),
                    }),
                    Some(&j) if j >= i => defects.push(Defect {
                        param: Some(p.name.clone()),
                        message: format!(
                            "condition references `{}`, which is not declared earlier",
                            cond.param
                        ),
                    }),
                    Some(&j) => {
                        let dom = &self.params[j].domain;
                        for v in &cond.any_of {
                            if dom.canonicalize(v).is_none() {
                                defects.push(Defect {
                                    param: Some(p.name.clone()),
                                    message: format!(
                                        "condition value {v} is outside the domain of `{}`",
                                        cond.param
                                    ),
                                });
                            }
                        }
                        if cond.any_of.is_empty() {
                            defects.push(Defect {
                                param: Some(p.name.clone()),
                                message: "condition with empty value list".into(),
                            });
                        }
                    }
                }
            }
        }
        defects
    }

    /// Whether parameter `spec` is active under the (partial) assignments in
    /// `config`. Conditions cascade: an inactive referent deactivates every
    /// dependent.
    fn is_active(&self, spec: &ParamSpec, config: &Configuration) -> bool {
        match &spec.active_if {
            None => true,
            Some(cond) => match config.get(&cond.param) {
                Some(v) => cond.any_of.contains(v),
                None => false,
            },
        }
    }

    /// Draw one configuration uniformly at random. Each active parameter is
    /// drawn independently uniform over its domain, resolving conditional
    /// parameters in declaration order.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let mut config = Configuration::new();
        for p in &self.params {
            if self.is_active(p, &config) {
                config.set(p.name.clone(), p.domain.sample(rng));
            }
        }
        config
    }

    /// Check that `config` assigns exactly the active parameters, each inside
    /// its domain.
    pub fn validate_config(&self, config: &Configuration) -> Result<(), SpaceError> {
        for (name, _) in config.iter() {
            if !self.index.contains_key(name) {
                return Err(SpaceError::UnknownParam(name.clone()));
            }
        }
        for p in &self.params {
            let active = self.is_active(p, config);
            match (active, config.get(&p.name)) {
                (true, Some(v)) => {
                    if p.domain.canonicalize(v).is_none() {
                        return Err(SpaceError::OutOfDomain {
                            name: p.name.clone(),
                            value: v.to_string(),
                        });
                    }
                }
                (true, None) => return Err(SpaceError::MissingParam(p.name.clone())),
                (false, Some(_)) => return Err(SpaceError::InactiveParam(p.name.clone())),
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Rewrite every value of `config` into its domain's canonical
    /// representation (e.g. integer-typed grid points become reals).
    pub fn canonicalize_config(&self, config: &Configuration) -> Result<Configuration, SpaceError> {
        self.validate_config(config)?;
        let mut out = Configuration::new();
        for p in &self.params {
            if let Some(v) = config.get(&p.name) {
                let canon = p.domain.canonicalize(v).expect("validated above");
                out.set(p.name.clone(), canon);
            }
        }
        Ok(out)
    }

    fn normalize(domain: &ParamDomain, value: &ParamValue) -> f64 {
        match domain {
            ParamDomain::Categorical(_) => unreachable!("one-hot handled separately"),
            ParamDomain::OrdinalGrid(grid) => {
                let v = value.as_f64().expect("validated");
                let (lo, hi) = (grid[0], grid[grid.len() - 1]);
                if hi > lo {
                    (v - lo) / (hi - lo)
                } else {
                    0.0
                }
            }
            ParamDomain::IntegerRange { lo, hi } => {
                let v = value.as_f64().expect("validated");
                if hi > lo {
                    (v - *lo as f64) / (*hi - *lo) as f64
                } else {
                    0.0
                }
            }
            ParamDomain::Continuous { lo, hi } => {
                let v = value.as_f64().expect("validated");
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        }
    }

    /// Encode a valid configuration as a fixed-length vector. The block
    /// layout follows declaration order; every coordinate lies in `[0, 1]`.
    pub fn encode(&self, config: &Configuration) -> Result<EncodedPoint, SpaceError> {
        let config = self.canonicalize_config(config)?;
        let mut coords = vec![0.0; self.dim];
        for (p, block) in self.params.iter().zip(&self.blocks) {
            let value = config.get(&p.name);
            match (&block.kind, value) {
                (BlockKind::OneHot { .. }, Some(v)) => {
                    let labels = match &p.domain {
                        ParamDomain::Categorical(l) => l,
                        _ => unreachable!(),
                    };
                    let s = v.as_label().expect("validated");
                    let idx = labels.iter().position(|l| l == s).expect("validated");
                    coords[block.offset + idx] = 1.0;
                }
                (BlockKind::Scalar { with_activity }, Some(v)) => {
                    let base = block.offset;
                    if *with_activity {
                        coords[base] = 1.0;
                        coords[base + 1] = Self::normalize(&p.domain, v);
                    } else {
                        coords[base] = Self::normalize(&p.domain, v);
                    }
                }
                // Inactive blocks stay all-zero (activity bit included).
                (_, None) => {}
            }
        }
        Ok(EncodedPoint::new(coords))
    }

    /// Decode a vector back into a configuration. On encode's image this is
    /// the exact inverse for discrete domains; arbitrary points snap each
    /// block to the nearest valid value (categorical: argmax coordinate,
    /// ordinal/integer: nearest grid value after de-normalization), breaking
    /// ties toward the lower-indexed value. Activity follows the conditional
    /// cascade, not the stored activity bits.
    pub fn decode(&self, point: &EncodedPoint) -> Result<Configuration, SpaceError> {
        if point.coords.len() != self.dim {
            return Err(SpaceError::WrongLength {
                expected: self.dim,
                got: point.coords.len(),
            });
        }
        let mut config = Configuration::new();
        for (p, block) in self.params.iter().zip(&self.blocks) {
            if !self.is_active(p, &config) {
                continue;
            }
            let value = match (&block.kind, &p.domain) {
                (BlockKind::OneHot { len }, ParamDomain::Categorical(labels)) => {
                    let slice = &point.coords[block.offset..block.offset + len];
                    let mut best = 0;
                    for (i, c) in slice.iter().enumerate() {
                        if *c > slice[best] {
                            best = i;
                        }
                    }
                    ParamValue::Label(labels[best].clone())
                }
                (BlockKind::Scalar { with_activity }, domain) => {
                    let t = point.coords[block.offset + usize::from(*with_activity)];
                    Self::snap(domain, t)
                }
                _ => unreachable!(),
            };
            config.set(p.name.clone(), value);
        }
        Ok(config)
    }

    fn snap(domain: &ParamDomain, t: f64) -> ParamValue {
        match domain {
            ParamDomain::Categorical(_) => unreachable!(),
            ParamDomain::OrdinalGrid(grid) => {
                let (lo, hi) = (grid[0], grid[grid.len() - 1]);
                let raw = lo + t * (hi - lo);
                let mut best = 0;
                let mut best_dist = (grid[0] - raw).abs();
                for (i, g) in grid.iter().enumerate().skip(1) {
                    let d = (g - raw).abs();
                    if d < best_dist {
                        best = i;
                        best_dist = d;
                    }
                }
                ParamValue::Real(grid[best])
            }
            ParamDomain::IntegerRange { lo, hi } => {
                let raw = *lo as f64 + t * (*hi - *lo) as f64;
                let floor = raw.floor();
                // Half-way points round toward the lower value.
                let v = if raw - floor > 0.5 { floor + 1.0 } else { floor };
                ParamValue::Int((v as i64).clamp(*lo, *hi))
            }
            ParamDomain::Continuous { lo, hi } => {
                ParamValue::Real(lo + t.clamp(0.0, 1.0) * (hi - lo))
            }
        }
    }

    /// Exact count of distinct valid configurations, accounting for the
    /// conditional cascade.
    pub fn cardinality(&self) -> Cardinality {
        // Parameters referenced by some condition must be branched over;
        // everything else contributes a multiplicative factor.
        let sources: HashSet<&str> = self
            .params
            .iter()
            .filter_map(|p| p.active_if.as_ref().map(|c| c.param.as_str()))
            .collect();

        fn go(
            space: &SearchSpace,
            i: usize,
            pinned: &mut Configuration,
            sources: &HashSet<&str>,
        ) -> Option<u128> {
            if i == space.params.len() {
                return Some(1);
            }
            let p = &space.params[i];
            if !space.is_active(p, pinned) {
                return go(space, i + 1, pinned, sources);
            }
            if sources.contains(p.name.as_str()) {
                let values = p.domain.values()?;
                let mut total: u128 = 0;
                for v in values {
                    pinned.set(p.name.clone(), v);
                    total = total.saturating_add(go(space, i + 1, pinned, sources)?);
                }
                pinned.assignments.remove(&p.name);
                Some(total)
            } else {
                let n = p.domain.len()?;
                go(space, i + 1, pinned, sources).map(|rest| rest.saturating_mul(n))
            }
        }

        let mut pinned = Configuration::new();
        match go(self, 0, &mut pinned, &sources) {
            Some(n) => Cardinality::Finite(n),
            None => Cardinality::Unbounded,
        }
    }

    /// Enumerate every valid configuration in deterministic order (earlier
    /// parameters vary slowest). Errors on continuous domains.
    pub fn enumerate(&self) -> Result<Vec<Configuration>, SpaceError> {
        fn go(
            space: &SearchSpace,
            i: usize,
            current: &mut Configuration,
            out: &mut Vec<Configuration>,
        ) -> Result<(), SpaceError> {
            if i == space.params.len() {
                out.push(current.clone());
                return Ok(());
            }
            let p = &space.params[i];
            if !space.is_active(p, current) {
                return go(space, i + 1, current, out);
            }
            let values = p.domain.values().ok_or(SpaceError::Unbounded)?;
            for v in values {
                current.set(p.name.clone(), v);
                go(space, i + 1, current, out)?;
            }
            current.assignments.remove(&p.name);
            Ok(())
        }

        let mut out = Vec::new();
        let mut current = Configuration::new();
        go(self, 0, &mut current, &mut out)?;
        Ok(out)
    }

    /// Parse a space from its JSON definition document.
    pub fn from_json_str(s: &str) -> Result<Self, SpaceError> {
        let file: SpaceFile = serde_json::from_str(s)?;
        Ok(file.into_space())
    }

    /// Serialize the space back into its JSON definition document.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SpaceFile::from_space(self)).expect("space serializes")
    }

    /// Stable hex digest of the space definition, used to pair run logs with
    /// the space they were produced from.
    pub fn content_hash(&self) -> String {
        let canonical =
            serde_json::to_string(&SpaceFile::from_space(self)).expect("space serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

// --- JSON definition document ---------------------------------------------

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    params: Vec<ParamFile>,
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<ParamValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    active_if: Option<ActiveIfFile>,
}

#[derive(Serialize, Deserialize)]
struct ActiveIfFile {
    param: String,
    equals: serde_json::Value,
}

impl SpaceFile {
    fn into_space(self) -> SearchSpace {
        let params = self
            .params
            .into_iter()
            .map(|p| {
                let domain = match p.kind.as_str() {
                    "categorical" => ParamDomain::Categorical(
                        p.values
                            .unwrap_or_default()
                            .into_iter()
                            .map(|v| v.to_string())
                            .collect(),
                    ),
                    "ordinal" => ParamDomain::OrdinalGrid(
                        p.values
                            .unwrap_or_default()
                            .iter()
                            .filter_map(|v| v.as_f64())
                            .collect(),
                    ),
                    "int_range" => ParamDomain::IntegerRange {
                        lo: p.lo.unwrap_or(0.0) as i64,
                        hi: p.hi.unwrap_or(-1.0) as i64,
                    },
                    "continuous" => ParamDomain::Continuous {
                        lo: p.lo.unwrap_or(f64::NAN),
                        hi: p.hi.unwrap_or(f64::NAN),
                    },
                    other => {
                        // Surfaceable through validate(): an empty categorical
                        // domain is always a defect.
                        ParamDomain::Categorical(vec![format!("<unknown kind: {other}>"); 0])
                    }
                };
                let active_if = p.active_if.map(|a| {
                    let any_of = match a.equals {
                        serde_json::Value::Array(items) => items
                            .into_iter()
                            .filter_map(|v| serde_json::from_value(v).ok())
                            .collect(),
                        single => serde_json::from_value(single).into_iter().collect(),
                    };
                    Condition {
                        param: a.param,
                        any_of,
                    }
                });
                ParamSpec {
                    name: p.name,
                    domain,
                    active_if,
                }
            })
            .collect();
        SearchSpace::new(params)
    }

    fn from_space(space: &SearchSpace) -> Self {
        let params = space
            .params
            .iter()
            .map(|p| {
                let (kind, values, lo, hi) = match &p.domain {
                    ParamDomain::Categorical(labels) => (
                        "categorical",
                        Some(labels.iter().map(|l| ParamValue::Label(l.clone())).collect()),
                        None,
                        None,
                    ),
                    ParamDomain::OrdinalGrid(grid) => (
                        "ordinal",
                        Some(grid.iter().map(|g| ParamValue::Real(*g)).collect()),
                        None,
                        None,
                    ),
                    ParamDomain::IntegerRange { lo, hi } => {
                        ("int_range", None, Some(*lo as f64), Some(*hi as f64))
                    }
                    ParamDomain::Continuous { lo, hi } => ("continuous", None, Some(*lo), Some(*hi)),
                };
                let active_if = p.active_if.as_ref().map(|c| {
                    let equals = if c.any_of.len() == 1 {
                        serde_json::to_value(&c.any_of[0]).expect("value serializes")
                    } else {
                        serde_json::to_value(&c.any_of).expect("values serialize")
                    };
                    ActiveIfFile {
                        param: c.param.clone(),
                        equals,
                    }
                });
                ParamFile {
                    name: p.name.clone(),
                    kind: kind.to_string(),
                    values,
                    lo,
                    hi,
                    active_if,
                }
            })
            .collect();
        SpaceFile { params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fc_stack_space() -> SearchSpace {
        // #FC layers in {1,2,3}; each active layer has 5 neuron choices and
        // an 11-value dropout grid.
        let neurons = vec![64.0, 128.0, 256.0, 512.0, 1024.0];
        let dropout: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut params = vec![ParamSpec::new(
            "n_layers",
            ParamDomain::IntegerRange { lo: 1, hi: 3 },
        )];
        for i in 1..=3 {
            let gate: Vec<ParamValue> = (i..=3).map(ParamValue::Int).collect();
            params.push(
                ParamSpec::new(
                    format!("layer{i}_neurons"),
                    ParamDomain::OrdinalGrid(neurons.clone()),
                )
                .active_if("n_layers", gate.clone()),
            );
            params.push(
                ParamSpec::new(
                    format!("layer{i}_dropout"),
                    ParamDomain::OrdinalGrid(dropout.clone()),
                )
                .active_if("n_layers", gate),
            );
        }
        SearchSpace::new(params)
    }

    #[test]
    fn duplicate_name_is_a_defect() {
        let space = SearchSpace::new(vec![
            ParamSpec::new("neurons_1", ParamDomain::IntegerRange { lo: 1, hi: 4 }),
            ParamSpec::new("neurons_1", ParamDomain::IntegerRange { lo: 1, hi: 4 }),
        ]);
        let defects = space.validate();
        assert_eq!(defects.len(), 1);
        assert!(defects[0].message.contains("duplicate name"));
    }

    #[test]
    fn dangling_condition_is_a_defect() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "x",
            ParamDomain::IntegerRange { lo: 0, hi: 1 },
        )
        .active_if("ghost", vec![ParamValue::Int(1)])]);
        let defects = space.validate();
        assert_eq!(defects.len(), 1);
        assert!(defects[0].message.contains("dangling condition"));
    }

    #[test]
    fn forward_reference_is_a_defect() {
        let space = SearchSpace::new(vec![
            ParamSpec::new("a", ParamDomain::IntegerRange { lo: 0, hi: 1 })
                .active_if("b", vec![ParamValue::Int(1)]),
            ParamSpec::new("b", ParamDomain::IntegerRange { lo: 0, hi: 1 }),
        ]);
        let defects = space.validate();
        assert_eq!(defects.len(), 1);
        assert!(defects[0].message.contains("not declared earlier"));
    }

    #[test]
    fn fc_stack_space_is_valid() {
        assert!(fc_stack_space().validate().is_empty());
    }

    #[test]
    fn non_increasing_grid_is_a_defect() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "g",
            ParamDomain::OrdinalGrid(vec![1.0, 1.0, 2.0]),
        )]);
        assert!(!space.validate().is_empty());
    }

    #[test]
    fn singleton_domain_always_sampled() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "c",
            ParamDomain::Categorical(vec!["a".into()]),
        )]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let cfg = space.sample_uniform(&mut rng);
            assert_eq!(cfg.get("c"), Some(&ParamValue::Label("a".into())));
        }
    }

    #[test]
    fn dropout_grid_sampling_is_uniform() {
        // 110,000 draws over the 11-value dropout grid; each count should be
        // within 3 binomial standard deviations of 10,000.
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let space = SearchSpace::new(vec![ParamSpec::new(
            "dropout",
            ParamDomain::OrdinalGrid(grid.clone()),
        )]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 110_000;
        let mut counts = vec![0usize; 11];
        for _ in 0..n {
            let cfg = space.sample_uniform(&mut rng);
            let v = cfg.get("dropout").unwrap().as_f64().unwrap();
            let idx = grid.iter().position(|g| *g == v).unwrap();
            counts[idx] += 1;
        }
        let p = 1.0 / 11.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, c) in counts.iter().enumerate() {
            let dev = (*c as f64 - n as f64 * p).abs();
            assert!(
                dev <= 3.0 * sigma,
                "value {i} drawn {c} times, deviation {dev:.1} > 3σ = {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn conditional_draw_assigns_exactly_active_layers() {
        let space = fc_stack_space();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen_depth_one = false;
        for _ in 0..200 {
            let cfg = space.sample_uniform(&mut rng);
            let depth = cfg.get("n_layers").unwrap().as_int().unwrap();
            let neuron_params = cfg
                .iter()
                .filter(|(k, _)| k.ends_with("_neurons"))
                .count();
            assert_eq!(neuron_params as i64, depth);
            space.validate_config(&cfg).unwrap();
            if depth == 1 {
                seen_depth_one = true;
                assert_eq!(cfg.len(), 3); // n_layers + one neurons + one dropout
            }
        }
        assert!(seen_depth_one);
    }

    #[test]
    fn one_hot_encoding() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "filters",
            ParamDomain::Categorical(vec!["64".into(), "128".into(), "256".into(), "512".into()]),
        )]);
        let cfg = Configuration::new().with("filters", "256");
        let enc = space.encode(&cfg).unwrap();
        assert_eq!(enc.coords, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn ordinal_min_max_encoding() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "k",
            ParamDomain::OrdinalGrid(vec![1.0, 2.0, 3.0, 5.0]),
        )]);
        let cfg = Configuration::new().with("k", 3.0);
        let enc = space.encode(&cfg).unwrap();
        assert_eq!(enc.coords, vec![0.5]);
    }

    #[test]
    fn encode_rejects_unknown_parameter() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "k",
            ParamDomain::OrdinalGrid(vec![1.0, 2.0]),
        )]);
        let cfg = Configuration::new().with("k", 1.0).with("zz", 1.0);
        match space.encode(&cfg) {
            Err(SpaceError::UnknownParam(name)) => assert_eq!(name, "zz"),
            other => panic!("expected UnknownParam, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_identity_over_whole_space() {
        let space = fc_stack_space();
        let all = space.enumerate().unwrap();
        assert_eq!(all.len(), 169_455);
        // Exhaustive round-trip on a slice plus spot checks keeps this fast;
        // the full space is covered by the injectivity test's smaller space.
        for cfg in all.iter().step_by(97) {
            let enc = space.encode(cfg).unwrap();
            let back = space.decode(&enc).unwrap();
            assert_eq!(&back, cfg);
        }
    }

    #[test]
    fn full_exhaustive_round_trip_small_space() {
        let space = SearchSpace::new(vec![
            ParamSpec::new("n_layers", ParamDomain::IntegerRange { lo: 1, hi: 2 }),
            ParamSpec::new("neurons", ParamDomain::OrdinalGrid(vec![64.0, 256.0, 1024.0])),
            ParamSpec::new(
                "neurons2",
                ParamDomain::OrdinalGrid(vec![64.0, 256.0, 1024.0]),
            )
            .active_if("n_layers", vec![ParamValue::Int(2)]),
            ParamSpec::new(
                "pool",
                ParamDomain::Categorical(vec!["2".into(), "3".into()]),
            ),
        ]);
        let all = space.enumerate().unwrap();
        assert_eq!(all.len(), (3 + 3 * 3) * 2);
        for cfg in &all {
            let back = space.decode(&space.encode(cfg).unwrap()).unwrap();
            assert_eq!(&back, cfg);
        }
    }

    #[test]
    fn decode_breaks_one_hot_ties_toward_lower_index() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "c",
            ParamDomain::Categorical(vec!["a".into(), "b".into(), "c".into(), "d".into()]),
        )]);
        let cfg = space
            .decode(&EncodedPoint::new(vec![0.4, 0.4, 0.1, 0.1]))
            .unwrap();
        assert_eq!(cfg.get("c"), Some(&ParamValue::Label("a".into())));
    }

    #[test]
    fn decode_snaps_ordinal_to_nearest_grid_value() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "k",
            ParamDomain::OrdinalGrid(vec![1.0, 2.0, 3.0, 5.0]),
        )]);
        // 0.49 de-normalizes to 2.96, nearest grid value is 3.
        let cfg = space.decode(&EncodedPoint::new(vec![0.49])).unwrap();
        assert_eq!(cfg.get("k"), Some(&ParamValue::Real(3.0)));
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let space = fc_stack_space();
        match space.decode(&EncodedPoint::new(vec![0.0; 3])) {
            Err(SpaceError::WrongLength { expected, got }) => {
                assert_eq!(expected, space.encoded_dim());
                assert_eq!(got, 3);
            }
            other => panic!("expected WrongLength, got {other:?}"),
        }
    }

    #[test]
    fn cardinality_product_rule() {
        let space = SearchSpace::new(vec![
            ParamSpec::new(
                "c",
                ParamDomain::Categorical(vec!["a".into(), "b".into(), "c".into(), "d".into()]),
            ),
            ParamSpec::new("g", ParamDomain::OrdinalGrid(vec![1.0, 2.0, 3.0])),
        ]);
        assert_eq!(space.cardinality(), Cardinality::Finite(12));
        assert_eq!(space.enumerate().unwrap().len(), 12);
    }

    #[test]
    fn cardinality_matches_enumeration_on_conditional_space() {
        let space = fc_stack_space();
        // Sum over depth k of (5 neuron choices * 11 dropout values)^k.
        let expected: u128 = (1..=3u32).map(|k| 55u128.pow(k)).sum();
        assert_eq!(expected, 169_455);
        assert_eq!(space.cardinality(), Cardinality::Finite(expected));
        assert_eq!(space.enumerate().unwrap().len() as u128, expected);
    }

    #[test]
    fn continuous_parameter_makes_cardinality_unbounded() {
        let space = SearchSpace::new(vec![
            ParamSpec::new("g", ParamDomain::OrdinalGrid(vec![1.0, 2.0])),
            ParamSpec::new("t", ParamDomain::Continuous { lo: 0.0, hi: 1.0 }),
        ]);
        assert_eq!(space.cardinality(), Cardinality::Unbounded);
        assert!(matches!(space.enumerate(), Err(SpaceError::Unbounded)));
    }

    #[test]
    fn encoding_is_injective_on_conditional_space() {
        let space = SearchSpace::new(vec![
            ParamSpec::new("depth", ParamDomain::IntegerRange { lo: 1, hi: 3 }),
            ParamSpec::new("a", ParamDomain::OrdinalGrid(vec![0.0, 0.5, 1.0])).active_if(
                "depth",
                vec![ParamValue::Int(2), ParamValue::Int(3)],
            ),
            ParamSpec::new("b", ParamDomain::IntegerRange { lo: 0, hi: 4 })
                .active_if("depth", vec![ParamValue::Int(3)]),
            ParamSpec::new(
                "c",
                ParamDomain::Categorical(vec!["x".into(), "y".into(), "z".into()]),
            ),
        ]);
        let all = space.enumerate().unwrap();
        assert!(all.len() <= 10_000);
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        for cfg in &all {
            let enc = space.encode(cfg).unwrap();
            let bits: Vec<u64> = enc.coords.iter().map(|c| c.to_bits()).collect();
            assert!(seen.insert(bits), "duplicate encoding for {cfg}");
        }
    }

    #[test]
    fn activity_bit_distinguishes_inactive_from_low_end() {
        let space = SearchSpace::new(vec![
            ParamSpec::new("depth", ParamDomain::IntegerRange { lo: 1, hi: 2 }),
            ParamSpec::new("w", ParamDomain::OrdinalGrid(vec![64.0, 128.0]))
                .active_if("depth", vec![ParamValue::Int(2)]),
        ]);
        let inactive = space
            .encode(&Configuration::new().with("depth", 1i64))
            .unwrap();
        let low = space
            .encode(&Configuration::new().with("depth", 2i64).with("w", 64.0))
            .unwrap();
        // Last block is [activity, value]: inactive is all-zero, active at
        // the grid minimum is [1, 0].
        assert_eq!(inactive.coords[1..], [0.0, 0.0]);
        assert_eq!(low.coords[1..], [1.0, 0.0]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let space = fc_stack_space();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| space.sample_uniform(&mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(123), draw(123));
        assert_ne!(draw(123), draw(124));
    }

    #[test]
    fn sampling_covers_every_unconditional_value() {
        let space = SearchSpace::new(vec![
            ParamSpec::new(
                "c",
                ParamDomain::Categorical(vec!["a".into(), "b".into(), "c".into()]),
            ),
            ParamSpec::new("g", ParamDomain::OrdinalGrid(vec![1.0, 2.0, 3.0, 5.0])),
            ParamSpec::new("i", ParamDomain::IntegerRange { lo: 0, hi: 6 }),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for _ in 0..2000 {
            let cfg = space.sample_uniform(&mut rng);
            for (k, v) in cfg.iter() {
                seen.insert((k.clone(), v.to_string()));
            }
        }
        for p in space.params() {
            for v in p.domain.values().unwrap() {
                assert!(
                    seen.contains(&(p.name.clone(), v.to_string())),
                    "value {v} of `{}` never drawn",
                    p.name
                );
            }
        }
    }

    #[test]
    fn json_definition_round_trips() {
        let json = r#"{
            "params": [
                {"name": "n_layers", "kind": "int_range", "lo": 1, "hi": 3},
                {"name": "neurons", "kind": "ordinal", "values": [64, 128, 256, 512, 1024],
                 "active_if": {"param": "n_layers", "equals": [2, 3]}},
                {"name": "pool", "kind": "categorical", "values": ["2", "3"]},
                {"name": "temp", "kind": "continuous", "lo": 0.0, "hi": 1.5}
            ]
        }"#;
        let space = SearchSpace::from_json_str(json).unwrap();
        assert!(space.validate().is_empty());
        assert_eq!(space.params().len(), 4);
        let reparsed = SearchSpace::from_json_str(&space.to_json_string()).unwrap();
        assert_eq!(space.content_hash(), reparsed.content_hash());
        // Ordinal grids parsed from integer JSON literals still canonicalize.
        let cfg = Configuration::new()
            .with("n_layers", 2i64)
            .with("neurons", 256.0)
            .with("pool", "2")
            .with("temp", 0.25);
        reparsed.validate_config(&cfg).unwrap();
    }

    #[test]
    fn continuous_round_trip_within_tolerance() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "t",
            ParamDomain::Continuous { lo: -2.0, hi: 3.0 },
        )]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let cfg = space.sample_uniform(&mut rng);
            let v = cfg.get("t").unwrap().as_f64().unwrap();
            let back = space.decode(&space.encode(&cfg).unwrap()).unwrap();
            let b = back.get("t").unwrap().as_f64().unwrap();
            assert!((v - b).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn stable_hash_is_reproducible() {
        let cfg = Configuration::new().with("a", 1i64).with("b", "x");
        assert_eq!(cfg.stable_hash(), cfg.stable_hash());
        let other = Configuration::new().with("a", 2i64).with("b", "x");
        assert_ne!(cfg.stable_hash(), other.stable_hash());
    }
}
