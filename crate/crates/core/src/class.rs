use serde::{Deserialize, Serialize};

/// Road user category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 3] = [AgentClass::Vehicle, AgentClass::Pedestrian, AgentClass::Cyclist];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Vehicle => "vehicle",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Cyclist => "cyclist",
        }
    }

    /// Default cuboid (length, width, height) in meters.
    pub fn default_dims(self) -> (f64, f64, f64) {
        match self {
            AgentClass::Vehicle => (4.5, 1.8, 1.5),
            AgentClass::Pedestrian => (0.5, 0.5, 1.75),
            AgentClass::Cyclist => (1.8, 0.6, 1.7),
        }
    }

    /// Cruise speed in m/s used for insertion when the road allows more.
    pub fn default_speed(self) -> f64 {
        match self {
            AgentClass::Vehicle => 15.0,
            AgentClass::Pedestrian => 1.4,
            AgentClass::Cyclist => 5.0,
        }
    }
}

impl std::fmt::Display for AgentClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
