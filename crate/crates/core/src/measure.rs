//! Measure identifiers and scored results shared by every similarity measure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    NeuNeu,
    NeuLay,
    Svcca,
    Pwcca,
    Attention,
}

impl Measure {
    pub const ALL: [Measure; 5] = [Measure::NeuNeu, Measure::NeuLay, Measure::Svcca, Measure::Pwcca, Measure::Attention];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::NeuNeu => "neu_neu",
            Measure::NeuLay => "neu_lay",
            Measure::Svcca => "svcca",
            Measure::Pwcca => "pwcca",
            Measure::Attention => "attention",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "neu_neu" => Ok(Measure::NeuNeu),
            "neu_lay" => Ok(Measure::NeuLay),
            "svcca" => Ok(Measure::Svcca),
            "pwcca" => Ok(Measure::Pwcca),
            "attention" | "attention_sm" => Ok(Measure::Attention),
            other => Err(Error::InvalidArgument(format!("unknown measure {other:?}"))),
        }
    }
}

/// Which layer of a pair is the source whose neurons (or heads) are averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Direction {
    #[default]
    XToY,
    YToX,
}

/// Per-score warning bits. They travel with grid cells into CSV and SVG output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct Flags(pub u32);

impl Flags {
    pub const NONE: Flags = Flags(0);
    /// Some source or target units had zero variance and were masked.
    pub const MASKED: Flags = Flags(1);
    /// Every source unit was masked; the score is 0 by convention.
    pub const ALL_MASKED: Flags = Flags(1 << 1);
    /// Ridge regularization changed a fit by more than 1e-6.
    pub const REGULARIZED: Flags = Flags(1 << 2);
    /// Fewer frames than target dimensions + 2.
    pub const UNDERDETERMINED: Flags = Flags(1 << 3);
    /// Eigenvalues below the floor were dropped during whitening.
    pub const RANK_DEFICIENT: Flags = Flags(1 << 4);
    /// No canonical directions survived; the score is 0.
    pub const EMPTY: Flags = Flags(1 << 5);

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;

    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for Flags {
    fn bitor_assign(&mut self, rhs: Flags) {
        self.0 |= rhs.0;
    }
}

/// A similarity value plus the warnings raised while computing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub flags: Flags,
}

impl Score {
    pub fn new(value: f64, flags: Flags) -> Self {
        Score { value, flags }
    }

    pub fn clean(value: f64) -> Self {
        Score { value, flags: Flags::NONE }
    }
}
