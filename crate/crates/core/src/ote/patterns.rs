//! Relation-pattern checks: symmetry, inversion and composition.
//!
//! Each check has a residual (largest absolute entry of the defining matrix
//! identity, over all groups) and a boolean form thresholded at [`TAU_PATTERN`].

use crate::numeric::Real;

use super::params::RelationRef;
use super::transform::RelationTransform;
use super::{ModelConfig, OteError};

pub const TAU_PATTERN: f64 = 1e-4;

fn scales<T: Real>(rel: &RelationRef<'_, T>, cfg: &ModelConfig, group: usize) -> Vec<f64> {
    let ds = cfg.sub_dim;
    if cfg.variant.has_scale() {
        rel.scale[group * ds..(group + 1) * ds]
            .iter()
            .map(|v| v.f64())
            .collect()
    } else {
        vec![0.0; ds]
    }
}

/// `max(|φ(M)φ(M) − I|, |s|)`.
pub fn symmetry_residual<T: Real>(rel: RelationRef<'_, T>, cfg: &ModelConfig) -> Result<f64, OteError> {
    let tr = RelationTransform::build(rel, cfg)?;
    let ds = cfg.sub_dim;
    let mut worst = 0.0f64;
    for g in 0..cfg.groups() {
        let q = tr.orthogonal_part(g);
        for i in 0..ds {
            for j in 0..ds {
                let mut s = 0.0;
                for k in 0..ds {
                    s += q[i * ds + k].f64() * q[k * ds + j].f64();
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        for s in scales(&rel, cfg, g) {
            worst = worst.max(s.abs());
        }
    }
    Ok(worst)
}

/// `|diag(e^{s1}) φ(M1) − φ(M2)ᵀ diag(e^{−s2})|`.
pub fn inverse_residual<T: Real>(
    first: RelationRef<'_, T>,
    second: RelationRef<'_, T>,
    cfg: &ModelConfig,
) -> Result<f64, OteError> {
    let t1 = RelationTransform::build(first, cfg)?;
    let t2 = RelationTransform::build(second, cfg)?;
    let ds = cfg.sub_dim;
    let mut worst = 0.0f64;
    for g in 0..cfg.groups() {
        let s1 = scales(&first, cfg, g);
        let s2 = scales(&second, cfg, g);
        let q1 = t1.orthogonal_part(g);
        let q2 = t2.orthogonal_part(g);
        for a in 0..ds {
            for b in 0..ds {
                let lhs = s1[a].exp() * q1[a * ds + b].f64();
                let rhs = q2[b * ds + a].f64() * (-s2[b]).exp();
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}

/// `|diag(e^{s3}) φ(M3) − diag(e^{s2}) φ(M2) diag(e^{s1}) φ(M1)|`.
pub fn composition_residual<T: Real>(
    first: RelationRef<'_, T>,
    second: RelationRef<'_, T>,
    composed: RelationRef<'_, T>,
    cfg: &ModelConfig,
) -> Result<f64, OteError> {
    let maps = [first, second, composed]
        .into_iter()
        .map(|r| RelationTransform::build(r, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = cfg.sub_dim;
    let mut worst = 0.0f64;
    for g in 0..cfg.groups() {
        let scaled = |i: usize, rel: &RelationRef<'_, T>| -> Vec<f64> {
            let s = scales(rel, cfg, g);
            let q = maps[i].orthogonal_part(g);
            (0..ds * ds).map(|k| s[k / ds].exp() * q[k].f64()).collect()
        };
        let a1 = scaled(0, &first);
        let a2 = scaled(1, &second);
        let a3 = scaled(2, &composed);
        for i in 0..ds {
            for j in 0..ds {
                let mut prod = 0.0;
                for k in 0..ds {
                    prod += a2[i * ds + k] * a1[k * ds + j];
                }
                worst = worst.max((a3[i * ds + j] - prod).abs());
            }
        }
    }
    Ok(worst)
}

pub fn verify_symmetry<T: Real>(rel: RelationRef<'_, T>, cfg: &ModelConfig) -> Result<bool, OteError> {
    Ok(symmetry_residual(rel, cfg)? < TAU_PATTERN)
}

pub fn verify_inverse<T: Real>(
    first: RelationRef<'_, T>,
    second: RelationRef<'_, T>,
    cfg: &ModelConfig,
) -> Result<bool, OteError> {
    Ok(inverse_residual(first, second, cfg)? < TAU_PATTERN)
}

pub fn verify_composition<T: Real>(
    first: RelationRef<'_, T>,
    second: RelationRef<'_, T>,
    composed: RelationRef<'_, T>,
    cfg: &ModelConfig,
) -> Result<bool, OteError> {
    Ok(composition_residual(first, second, composed, cfg)? < TAU_PATTERN)
}
