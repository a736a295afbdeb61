//! Instances shipped with the crate.

use crate::model::Instance;

const FIVE_BUS: &str = include_str!("../data/bounds_5bus.json");

/// Meshed 5-bus, 2-period instance with two requests, two single offers and one
/// block; small enough to enumerate every offer arrival order.
pub fn five_bus_bounds() -> Instance {
    serde_json::from_str(FIVE_BUS).expect("shipped 5-bus fixture parses")
}
