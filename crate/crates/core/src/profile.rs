//! Multipliers for the asymptotic constants of the randomized structures.

use serde::{Deserialize, Serialize};

/// `Full` uses the documented defaults; `Desk` divides each by four for CI-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaConstants {
    /// Projection directions per furthest-neighbor copy.
    pub directions: f64,
    /// Independent furthest-neighbor copies per amplified structure.
    pub copies: f64,
    /// Quantization-independent replicas per sketch, relative to `b log(nb/(lambda delta))`.
    pub replicas: f64,
    /// Ensemble size relative to `(d + log 1/delta) log(nd)`.
    pub sketches: f64,
    /// Sketches sampled per query, relative to `log2 b`.
    pub samples: f64,
    /// Sketch target dimension relative to `4 eps^-2 log(n/delta)`.
    pub target_dim: f64,
    /// Distance-estimator sketch count relative to `(dim + log 1/delta) log m`.
    pub estimator_sketches: f64,
}

impl Profile {
    pub fn constants(self) -> ThetaConstants {
        let full = ThetaConstants {
            directions: 1.0,
            copies: 1.0,
            replicas: 0.01,
            sketches: 0.5,
            samples: 1.0,
            target_dim: 0.25,
            estimator_sketches: 0.25,
        };
        match self {
            Profile::Full => full,
            Profile::Desk => ThetaConstants {
                directions: full.directions / 4.0,
                copies: full.copies / 4.0,
                replicas: full.replicas / 4.0,
                sketches: full.sketches / 4.0,
                samples: full.samples / 4.0,
                target_dim: full.target_dim / 4.0,
                estimator_sketches: full.estimator_sketches / 4.0,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(crate::Error::Config(format!("unknown profile {other:?} (expected full or desk)"))),
        }
    }
}
