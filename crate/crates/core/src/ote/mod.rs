//! Orthogonal transform embeddings.
//!
//! An entity embedding of dimension `d` is split into `K = d / d_s` groups.
//! Each relation owns one raw `d_s × d_s` matrix and one log-scale vector per
//! group; the forward projection of a head group is
//! `diag(exp(s)) · φ(M) · e_h`, the reverse projection of a tail group is
//! `diag(exp(-s)) · φ(M)ᵀ · e_t`, where `φ` is Gram-Schmidt.
//!
//! Ablation variants swap the per-group map:
//!
//! | variant       | forward            | reverse              | parameters per group |
//! |---------------|--------------------|----------------------|----------------------|
//! | `Ote`         | `diag(e^s) φ(M)`   | `diag(e^-s) φ(M)ᵀ`   | `M`, `s`             |
//! | `OteNoScale`  | `φ(M)`             | `φ(M)ᵀ`              | `M`                  |
//! | `Lne`         | `M`                | `M'`                 | `M`, `M'`            |
//! | `RotatE`      | `R(θ)`             | `R(-θ)`              | `θ` (d_s = 2)        |

mod gram_schmidt;
mod model;
mod params;
mod patterns;
mod transform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gram_schmidt::{gram_schmidt, orthogonalize, orthogonalize_backward, TAU_GS};
pub(crate) use model::group_distance;
pub use model::{init_relation, InitConfig, Model, TAU_DET};
pub use params::{ParamShape, Params, Relation, RelationGrad, RelationRef, BLOCK_NAMES};
pub use patterns::{
    composition_residual, inverse_residual, symmetry_residual, verify_composition, verify_inverse, verify_symmetry,
    TAU_PATTERN,
};
pub use transform::{project_backward, project_forward, RelationTransform, Transforms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ote,
    #[serde(rename = "ote-noscale")]
    OteNoScale,
    Lne,
    #[serde(rename = "rotate")]
    RotatE,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ote, Variant::OteNoScale, Variant::Lne, Variant::RotatE];

    pub fn code(self) -> u8 {
        match self {
            Variant::Ote => 0,
            Variant::OteNoScale => 1,
            Variant::Lne => 2,
            Variant::RotatE => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ote => "ote",
            Variant::OteNoScale => "ote-noscale",
            Variant::Lne => "lne",
            Variant::RotatE => "rotate",
        }
    }

    pub fn has_matrix(self) -> bool {
        !matches!(self, Variant::RotatE)
    }

    pub fn has_scale(self) -> bool {
        matches!(self, Variant::Ote)
    }

    pub fn is_orthogonalized(self) -> bool {
        matches!(self, Variant::Ote | Variant::OteNoScale)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant '{s}' (expected ote, ote-noscale, lne or rotate)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Entity embedding dimension `d`.
    pub dim: usize,
    /// Sub-embedding dimension `d_s`.
    pub sub_dim: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(dim: usize, sub_dim: usize, variant: Variant) -> Result<Self, OteError> {
        let cfg = Self { dim, sub_dim, variant };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OteError> {
        let bad = |reason: &str| {
            Err(OteError::Config(format!(
                "d={} d_s={} variant={}: {reason}",
                self.dim, self.sub_dim, self.variant
            )))
        };
        if self.sub_dim < 2 {
            return bad("d_s must be at least 2");
        }
        if self.dim == 0 || !self.dim.is_multiple_of(self.sub_dim) {
            return bad("d_s must divide d");
        }
        if self.variant == Variant::RotatE && self.sub_dim != 2 {
            return bad("RotatE requires d_s = 2");
        }
        Ok(())
    }

    /// Group count `K`.
    pub fn groups(&self) -> usize {
        self.dim / self.sub_dim
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OteError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("Gram-Schmidt degenerate at column {index} (||t|| = {norm:e})")]
    Degenerate { index: usize, norm: f64 },
    #[error("could not draw a full-rank matrix within {attempts} attempts")]
    InitBudget { attempts: usize },
    #[error("parameter block '{block}' has length {actual}, expected {expected}")]
    Shape {
        block: &'static str,
        expected: usize,
        actual: usize,
    },
}
