use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The eight OSM `highway` values used as classification targets, in
/// descending road priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighwayClass {
    Motorway,
    Trunk,
    Primary,
    Secondary,
    Tertiary,
    Unclassified,
    Residential,
    LivingStreet,
}

pub const NUM_CLASSES: usize = 8;

impl HighwayClass {
    pub const ALL: [HighwayClass; NUM_CLASSES] = [
        HighwayClass::Motorway,
        HighwayClass::Trunk,
        HighwayClass::Primary,
        HighwayClass::Secondary,
        HighwayClass::Tertiary,
        HighwayClass::Unclassified,
        HighwayClass::Residential,
        HighwayClass::LivingStreet,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, Error> {
        Self::ALL.get(i).copied().ok_or(Error::LabelOutOfRange {
            label: i,
            classes: NUM_CLASSES,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HighwayClass::Motorway => "motorway",
            HighwayClass::Trunk => "trunk",
            HighwayClass::Primary => "primary",
            HighwayClass::Secondary => "secondary",
            HighwayClass::Tertiary => "tertiary",
            HighwayClass::Unclassified => "unclassified",
            HighwayClass::Residential => "residential",
            HighwayClass::LivingStreet => "living_street",
        }
    }

    /// Binary road-priority group: motorway..secondary are 0, the rest 1.
    pub fn binary(self) -> usize {
        if self.index() < 4 {
            0
        } else {
            1
        }
    }
}

impl fmt::Display for HighwayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HighwayClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HighwayClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Maps an 8-class prediction index to its binary group.
pub fn aggregate_binary(pred8: usize) -> Result<usize, Error> {
    HighwayClass::from_index(pred8).map(HighwayClass::binary)
}

/// Parses a raw label string and returns its binary group.
pub fn aggregate_binary_label(label: &str) -> Result<usize, Error> {
    label.parse::<HighwayClass>().map(HighwayClass::binary)
}
