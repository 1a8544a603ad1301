use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which signals feed the forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// EMG only.
    #[serde(rename = "SIC")]
    Sic,
    /// EMG plus knee-angle history.
    #[serde(rename = "DIC")]
    Dic,
    #[serde(rename = "SIC_F")]
    SicF,
    #[serde(rename = "DIC_F")]
    DicF,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Sic, Scenario::SicF, Scenario::Dic, Scenario::DicF];

    pub fn uses_kinematics(self) -> bool {
        matches!(self, Scenario::Dic | Scenario::DicF)
    }

    pub fn uses_forces(self) -> bool {
        matches!(self, Scenario::SicF | Scenario::DicF)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Sic => "SIC",
            Scenario::Dic => "DIC",
            Scenario::SicF => "SIC_F",
            Scenario::DicF => "DIC_F",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SIC" => Ok(Scenario::Sic),
            "DIC" => Ok(Scenario::Dic),
            "SIC_F" => Ok(Scenario::SicF),
            "DIC_F" => Ok(Scenario::DicF),
            _ => Err(Error::Config(format!("unknown scenario `{s}` (expected SIC, DIC, SIC_F or DIC_F)"))),
        }
    }
}

/// Supported forecast horizons, in output-rate samples.
pub const HORIZONS: [usize; 3] = [1, 26, 50];

pub fn validate_horizon(h: usize) -> Result<()> {
    if HORIZONS.contains(&h) {
        Ok(())
    } else {
        Err(Error::Config(format!("horizon {h} not in {HORIZONS:?}")))
    }
}
