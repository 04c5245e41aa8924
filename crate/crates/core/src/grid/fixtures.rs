//! Grids shipped with the crate.

use super::{parse_grid, GridSpec};

/// Five-node feeder with three lines and three switches (two radial topologies).
pub const T5_GRID: &str = include_str!("../../data/t5.grid");
/// [`T5_GRID`] with line (1,2) turned into a switch.
pub const T5_VARIANT_GRID: &str = include_str!("../../data/t5_variant.grid");
/// 33-node feeder with 29 lines and 8 switches.
pub const BW33_GRID: &str = include_str!("../../data/bw33.grid");

pub fn t5() -> GridSpec {
    parse_grid(T5_GRID).expect("shipped t5 grid parses")
}

pub fn t5_variant() -> GridSpec {
    parse_grid(T5_VARIANT_GRID).expect("shipped t5 variant grid parses")
}

pub fn bw33() -> GridSpec {
    parse_grid(BW33_GRID).expect("shipped bw33 grid parses")
}

/// Shipped grid by name: `t5`, `t5_variant` or `bw33`.
pub fn by_name(name: &str) -> Option<GridSpec> {
    match name {
        "t5" => Some(t5()),
        "t5_variant" => Some(t5_variant()),
        "bw33" => Some(bw33()),
        _ => None,
    }
}
