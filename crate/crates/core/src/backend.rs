//! Search backend shared by the greedy selection loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exhaustive scan, the adaptive inner-product estimator, or the Min-IP index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    Aipe,
    Afn,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Aipe => "aipe",
            Backend::Afn => "afn",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "aipe" => Ok(Backend::Aipe),
            "afn" => Ok(Backend::Afn),
            other => Err(Error::Config(format!("unknown backend {other:?} (expected exact, aipe or afn)"))),
        }
    }
}
