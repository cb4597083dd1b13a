use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_STAGES: usize = 5;

/// Sleep stage. The discriminant is the on-disk label byte and the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    #[serde(rename = "REM")]
    Rem = 4,
}

impl Stage {
    pub const ALL: [Stage; NUM_STAGES] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Stage> {
        Stage::ALL
            .get(i)
            .copied()
            .ok_or(Error::LabelOutOfRange(i.min(255) as u8))
    }

    pub fn from_byte(b: u8) -> Result<Stage> {
        Stage::from_index(b as usize).map_err(|_| Error::LabelOutOfRange(b))
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
