//! Bundled search spaces and architecture descriptions.
//!
//! The FC-stack space (`table1.json`) carries the per-layer value sets used
//! throughout: neuron counts {64, 128, 256, 512, 1024} and the 11-value
//! dropout grid, over one to three hidden layers. The benchmark spaces for
//! the analytic objectives are generated here; the layered-network specs are
//! shipped as JSON files and parsed on demand.

use crate::arch::ArchitectureSpec;
use crate::space::{ParamDomain, ParamSpec, SearchSpace};

pub const TABLE1_JSON: &str = include_str!("../data/table1.json");
pub const MIXED_QUADRATIC_JSON: &str = include_str!("../data/mixed_quadratic.json");
pub const VGG16_LIKE_JSON: &str = include_str!("../data/vgg16_like.json");
pub const RESNET50_LIKE_JSON: &str = include_str!("../data/resnet50_like.json");
pub const DENSENET121_LIKE_JSON: &str = include_str!("../data/densenet121_like.json");

/// The FC-stack search space: hidden-layer count in {1, 2, 3} with a neuron
/// count and dropout rate per active layer. Consumed by the toy trainer.
pub fn table1_space() -> SearchSpace {
    SearchSpace::from_json_str(TABLE1_JSON).expect("bundled space parses")
}

/// Mixed categorical/ordinal/integer space (cardinality 440) paired with the
/// `mixed_quadratic` objective; its optimum is known by construction.
pub fn mixed_quadratic_space() -> SearchSpace {
    SearchSpace::from_json_str(MIXED_QUADRATIC_JSON).expect("bundled space parses")
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// 101x101 quantization of the Branin domain x1 in [-5, 10], x2 in [0, 15].
pub fn branin_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::new("x1", ParamDomain::OrdinalGrid(grid(-5.0, 10.0, 101))),
        ParamSpec::new("x2", ParamDomain::OrdinalGrid(grid(0.0, 15.0, 101))),
    ])
}

/// 41-point-per-axis quantization of the Hartmann-3 unit cube.
pub fn hartmann3_space() -> SearchSpace {
    SearchSpace::new(
        (1..=3)
            .map(|i| {
                ParamSpec::new(format!("x{i}"), ParamDomain::OrdinalGrid(grid(0.0, 1.0, 41)))
            })
            .collect(),
    )
}

pub fn vgg16_like() -> ArchitectureSpec {
    ArchitectureSpec::from_json_str(VGG16_LIKE_JSON).expect("bundled architecture parses")
}

pub fn resnet50_like() -> ArchitectureSpec {
    ArchitectureSpec::from_json_str(RESNET50_LIKE_JSON).expect("bundled architecture parses")
}

pub fn densenet121_like() -> ArchitectureSpec {
    ArchitectureSpec::from_json_str(DENSENET121_LIKE_JSON).expect("bundled architecture parses")
}

/// Resolve a bundled space by name (with or without a `.json` suffix).
pub fn space_by_name(name: &str) -> Option<SearchSpace> {
    match name.trim_end_matches(".json") {
        "table1" => Some(table1_space()),
        "branin" => Some(branin_space()),
        "hartmann3" => Some(hartmann3_space()),
        "mixed_quadratic" | "mixed-quadratic" => Some(mixed_quadratic_space()),
        _ => None,
    }
}

/// Resolve a bundled architecture by name (with or without `.json`).
pub fn arch_by_name(name: &str) -> Option<ArchitectureSpec> {
    match name.trim_end_matches(".json") {
        "vgg16_like" | "vgg16-like" => Some(vgg16_like()),
        "resnet50_like" | "resnet50-like" => Some(resnet50_like()),
        "densenet121_like" | "densenet121-like" => Some(densenet121_like()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Cardinality;

    #[test]
    fn bundled_spaces_validate() {
        for space in [
            table1_space(),
            mixed_quadratic_space(),
            branin_space(),
            hartmann3_space(),
        ] {
            assert!(space.validate().is_empty());
        }
    }

    #[test]
    fn table1_space_cardinality() {
        let expected: u128 = (1..=3u32).map(|k| 55u128.pow(k)).sum();
        assert_eq!(table1_space().cardinality(), Cardinality::Finite(expected));
    }

    #[test]
    fn mixed_quadratic_space_cardinality_is_small() {
        assert_eq!(
            mixed_quadratic_space().cardinality(),
            Cardinality::Finite(440)
        );
    }

    #[test]
    fn name_resolution() {
        assert!(space_by_name("table1.json").is_some());
        assert!(space_by_name("branin").is_some());
        assert!(space_by_name("unknown").is_none());
        assert!(arch_by_name("resnet50_like.json").is_some());
        assert!(arch_by_name("lenet").is_none());
    }
}
