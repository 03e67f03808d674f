use crate::numeric::Real;

use super::{ModelConfig, OteError, Variant};

/// Block sizes implied by a config and vocabulary sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    pub cfg: ModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
}

impl ParamShape {
    pub fn new(cfg: ModelConfig, num_entities: usize, num_relations: usize) -> Self {
        Self {
            cfg,
            num_entities,
            num_relations,
        }
    }

    /// Per-relation lengths of (matrix, scale, reverse, angle).
    pub fn relation_lens(&self) -> [usize; 4] {
        let k = self.cfg.groups();
        let ds = self.cfg.sub_dim;
        let v = self.cfg.variant;
        [
            if v.has_matrix() { k * ds * ds } else { 0 },
            if v.has_scale() { k * ds } else { 0 },
            if v == Variant::Lne { k * ds * ds } else { 0 },
            if v == Variant::RotatE { k } else { 0 },
        ]
    }

    pub fn block_lens(&self) -> [usize; 5] {
        let [m, s, rv, a] = self.relation_lens();
        let r = self.num_relations;
        [self.num_entities * self.cfg.dim, r * m, r * s, r * rv, r * a]
    }

    pub fn total(&self) -> usize {
        self.block_lens().iter().sum()
    }
}

/// Every trainable block of a model. Gradients and optimizer moments use the same type.
///
/// Layout: entities row-major (`entity[e*d..(e+1)*d]`), then per relation its
/// `K` row-major group matrices, its `K` scale vectors, its `K` reverse
/// matrices (LNE only) and its `K` angles (RotatE only). Unused blocks are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub entity: Vec<T>,
    pub matrix: Vec<T>,
    pub scale: Vec<T>,
    pub reverse: Vec<T>,
    pub angle: Vec<T>,
}

pub const BLOCK_NAMES: [&str; 5] = ["entity", "matrix", "scale", "reverse", "angle"];

impl<T: Real> Params<T> {
    pub fn zeros(shape: &ParamShape) -> Self {
        let [e, m, s, r, a] = shape.block_lens();
        Self {
            entity: vec![T::zero(); e],
            matrix: vec![T::zero(); m],
            scale: vec![T::zero(); s],
            reverse: vec![T::zero(); r],
            angle: vec![T::zero(); a],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entity: vec![T::zero(); self.entity.len()],
            matrix: vec![T::zero(); self.matrix.len()],
            scale: vec![T::zero(); self.scale.len()],
            reverse: vec![T::zero(); self.reverse.len()],
            angle: vec![T::zero(); self.angle.len()],
        }
    }

    pub fn blocks(&self) -> [&[T]; 5] {
        [&self.entity, &self.matrix, &self.scale, &self.reverse, &self.angle]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 5] {
        [
            &mut self.entity,
            &mut self.matrix,
            &mut self.scale,
            &mut self.reverse,
            &mut self.angle,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_shape(&self, shape: &ParamShape) -> Result<(), OteError> {
        for ((name, block), expected) in BLOCK_NAMES.iter().zip(self.blocks()).zip(shape.block_lens()) {
            if block.len() != expected {
                return Err(OteError::Shape {
                    block: name,
                    expected,
                    actual: block.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_flat_f64(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().map(|v| v.f64())).collect()
    }

    /// Inverse of [`Params::to_flat_f64`] for the same block lengths.
    pub fn from_flat_f64(like: &Self, flat: &[f64]) -> Self {
        let mut out = like.zeros_like();
        let mut offset = 0;
        for block in out.blocks_mut() {
            for (dst, &src) in block.iter_mut().zip(&flat[offset..]) {
                *dst = T::of(src);
            }
            offset += block.len();
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale_by(&mut self, factor: T) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn relation(&self, shape: &ParamShape, r: usize) -> RelationRef<'_, T> {
        let [m, s, rv, a] = shape.relation_lens();
        RelationRef {
            matrix: &self.matrix[r * m..(r + 1) * m],
            scale: &self.scale[r * s..(r + 1) * s],
            reverse: &self.reverse[r * rv..(r + 1) * rv],
            angle: &self.angle[r * a..(r + 1) * a],
        }
    }

    pub fn relation_mut(&mut self, shape: &ParamShape, r: usize) -> RelationGrad<'_, T> {
        let [m, s, rv, a] = shape.relation_lens();
        RelationGrad {
            matrix: &mut self.matrix[r * m..(r + 1) * m],
            scale: &mut self.scale[r * s..(r + 1) * s],
            reverse: &mut self.reverse[r * rv..(r + 1) * rv],
            angle: &mut self.angle[r * a..(r + 1) * a],
        }
    }

    pub fn set_relation(&mut self, shape: &ParamShape, r: usize, rel: &Relation<T>) {
        let dst = self.relation_mut(shape, r);
        dst.matrix.copy_from_slice(&rel.matrix);
        dst.scale.copy_from_slice(&rel.scale);
        dst.reverse.copy_from_slice(&rel.reverse);
        dst.angle.copy_from_slice(&rel.angle);
    }

    pub fn entity_row(&self, dim: usize, e: usize) -> &[T] {
        &self.entity[e * dim..(e + 1) * dim]
    }
}

/// Borrowed parameters of one relation.
#[derive(Debug, Clone, Copy)]
pub struct RelationRef<'a, T> {
    pub matrix: &'a [T],
    pub scale: &'a [T],
    pub reverse: &'a [T],
    pub angle: &'a [T],
}

/// Mutable view of one relation's blocks (parameters or gradients).
#[derive(Debug)]
pub struct RelationGrad<'a, T> {
    pub matrix: &'a mut [T],
    pub scale: &'a mut [T],
    pub reverse: &'a mut [T],
    pub angle: &'a mut [T],
}

/// Owned parameters of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation<T> {
    pub matrix: Vec<T>,
    pub scale: Vec<T>,
    pub reverse: Vec<T>,
    pub angle: Vec<T>,
}

impl<T: Real> Relation<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let [m, s, rv, a] = ParamShape::new(*cfg, 0, 1).relation_lens();
        Self {
            matrix: vec![T::zero(); m],
            scale: vec![T::zero(); s],
            reverse: vec![T::zero(); rv],
            angle: vec![T::zero(); a],
        }
    }

    /// Identity transform in every group.
    pub fn identity(cfg: &ModelConfig) -> Self {
        let mut rel = Self::zeros(cfg);
        let ds = cfg.sub_dim;
        for block in [&mut rel.matrix, &mut rel.reverse] {
            for g in block.chunks_exact_mut(ds * ds) {
                for i in 0..ds {
                    g[i * ds + i] = T::one();
                }
            }
        }
        rel
    }

    /// Same raw matrix `m` (row-major, `d_s × d_s`) and scale `s` in every group.
    pub fn uniform(cfg: &ModelConfig, m: &[T], s: &[T]) -> Self {
        let mut rel = Self::zeros(cfg);
        for g in rel.matrix.chunks_exact_mut(m.len()) {
            g.copy_from_slice(m);
        }
        for g in rel.reverse.chunks_exact_mut(m.len()) {
            g.copy_from_slice(m);
        }
        if !s.is_empty() {
            for g in rel.scale.chunks_exact_mut(s.len()) {
                g.copy_from_slice(s);
            }
        }
        rel
    }

    pub fn as_ref(&self) -> RelationRef<'_, T> {
        RelationRef {
            matrix: &self.matrix,
            scale: &self.scale,
            reverse: &self.reverse,
            angle: &self.angle,
        }
    }

    pub fn as_mut(&mut self) -> RelationGrad<'_, T> {
        RelationGrad {
            matrix: &mut self.matrix,
            scale: &mut self.scale,
            reverse: &mut self.reverse,
            angle: &mut self.angle,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_and_shapes() {
        let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
        let shape = ParamShape::new(cfg, 3, 2);
        let mut p = Params::<f64>::zeros(&shape);
        assert_eq!(shape.block_lens(), [24, 64, 16, 0, 0]);
        p.matrix[5] = 2.5;
        p.entity[23] = -1.0;
        let back = Params::from_flat_f64(&p, &p.to_flat_f64());
        assert_eq!(back, p);
        assert!(p.check_shape(&shape).is_ok());
        p.scale.pop();
        assert!(matches!(
            p.check_shape(&shape),
            Err(OteError::Shape { block: "scale", .. })
        ));
    }

    #[test]
    fn relation_views_slice_the_right_rows() {
        let cfg = ModelConfig::new(4, 2, Variant::Ote).unwrap();
        let shape = ParamShape::new(cfg, 1, 3);
        let mut p = Params::<f64>::zeros(&shape);
        let rel = Relation::uniform(&cfg, &[1.0, 2.0, 3.0, 4.0], &[0.5, -0.5]);
        p.set_relation(&shape, 1, &rel);
        assert_eq!(p.relation(&shape, 1).matrix, &rel.matrix[..]);
        assert!(p.relation(&shape, 0).matrix.iter().all(|&v| v == 0.0));
        assert_eq!(p.relation(&shape, 1).scale, &[0.5, -0.5, 0.5, -0.5]);
    }
}
