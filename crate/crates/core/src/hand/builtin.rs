//! Reference hands shipped with the crate.

use super::spec::HandSpec;

pub const HUMAN: &str = include_str!("../../data/hands/human22.json");
pub const FIVE_FINGER: &str = include_str!("../../data/hands/five_finger_coupled.json");
pub const FOUR_FINGER: &str = include_str!("../../data/hands/four_finger.json");
pub const GRIPPER: &str = include_str!("../../data/hands/two_finger_gripper.json");

fn parse(text: &str) -> HandSpec {
    HandSpec::from_json(text).expect("shipped hand spec is valid")
}

/// 22-DoF demonstrator hand with 17 segments and 41 anchors.
pub fn human() -> HandSpec {
    parse(HUMAN)
}

/// Five fingers, 20 joints driven by 9 actuators.
pub fn five_finger() -> HandSpec {
    parse(FIVE_FINGER)
}

/// Four fingers, 16 independent joints.
pub fn four_finger() -> HandSpec {
    parse(FOUR_FINGER)
}

/// Two hinged fingers driven by one actuator.
pub fn gripper() -> HandSpec {
    parse(GRIPPER)
}

pub fn all() -> Vec<HandSpec> {
    vec![human(), five_finger(), four_finger(), gripper()]
}

/// Looks up a shipped hand by its spec name.
pub fn by_name(name: &str) -> Option<HandSpec> {
    all().into_iter().find(|s| s.name == name)
}
