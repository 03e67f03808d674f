use rayon::prelude::*;

use crate::numeric::{gemv, Real};

use super::gram_schmidt::{orthogonalize, orthogonalize_backward};
use super::params::{ParamShape, Params, RelationGrad, RelationRef};
use super::{ModelConfig, OteError, Variant};

/// The per-group forward and reverse maps of one relation, materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTransform<T> {
    sub_dim: usize,
    /// `K` row-major `d_s × d_s` forward maps.
    forward: Vec<T>,
    /// `K` row-major reverse maps.
    backward: Vec<T>,
    /// `φ(M)` per group for the orthogonalized variants.
    ortho: Vec<T>,
    /// `exp(s)` per group (OTE only).
    exp_scale: Vec<T>,
}

impl<T: Real> RelationTransform<T> {
    pub fn build(rel: RelationRef<'_, T>, cfg: &ModelConfig) -> Result<Self, OteError> {
        let ds = cfg.sub_dim;
        let k = cfg.groups();
        let sq = ds * ds;
        let mut forward = vec![T::zero(); k * sq];
        let mut backward = vec![T::zero(); k * sq];
        let mut ortho = Vec::new();
        let mut exp_scale = Vec::new();
        match cfg.variant {
            Variant::Ote | Variant::OteNoScale => {
                ortho = vec![T::zero(); k * sq];
                for g in 0..k {
                    orthogonalize(&rel.matrix[g * sq..(g + 1) * sq], ds, &mut ortho[g * sq..(g + 1) * sq])?;
                }
                if cfg.variant == Variant::Ote {
                    exp_scale = rel.scale.iter().map(|s| s.exp()).collect();
                } else {
                    exp_scale = vec![T::one(); k * ds];
                }
                for g in 0..k {
                    let q = &ortho[g * sq..(g + 1) * sq];
                    let es = &exp_scale[g * ds..(g + 1) * ds];
                    let fwd = &mut forward[g * sq..(g + 1) * sq];
                    let bwd = &mut backward[g * sq..(g + 1) * sq];
                    for a in 0..ds {
                        for b in 0..ds {
                            fwd[a * ds + b] = es[a] * q[a * ds + b];
                            bwd[a * ds + b] = q[b * ds + a] / es[a];
                        }
                    }
                }
            }
            Variant::Lne => {
                forward.copy_from_slice(rel.matrix);
                backward.copy_from_slice(rel.reverse);
            }
            Variant::RotatE => {
                for g in 0..k {
                    let (s, c) = rel.angle[g].sin_cos();
                    forward[g * 4..(g + 1) * 4].copy_from_slice(&[c, -s, s, c]);
                    backward[g * 4..(g + 1) * 4].copy_from_slice(&[c, s, -s, c]);
                }
            }
        }
        Ok(Self {
            sub_dim: ds,
            forward,
            backward,
            ortho,
            exp_scale,
        })
    }

    pub fn groups(&self) -> usize {
        self.forward.len() / (self.sub_dim * self.sub_dim)
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn forward_map(&self, group: usize) -> &[T] {
        let sq = self.sub_dim * self.sub_dim;
        &self.forward[group * sq..(group + 1) * sq]
    }

    pub fn backward_map(&self, group: usize) -> &[T] {
        let sq = self.sub_dim * self.sub_dim;
        &self.backward[group * sq..(group + 1) * sq]
    }

    /// `φ(M)` of a group, or the raw/rotation map for variants without one.
    pub fn orthogonal_part(&self, group: usize) -> &[T] {
        if self.ortho.is_empty() {
            self.forward_map(group)
        } else {
            let sq = self.sub_dim * self.sub_dim;
            &self.ortho[group * sq..(group + 1) * sq]
        }
    }

    /// `x ↦ [A_1 x(1); …; A_K x(K)]`.
    pub fn apply_forward(&self, x: &[T], out: &mut [T]) {
        let ds = self.sub_dim;
        for (g, (xs, os)) in x.chunks_exact(ds).zip(out.chunks_exact_mut(ds)).enumerate() {
            gemv(self.forward_map(g), xs, os);
        }
    }

    pub fn apply_backward(&self, x: &[T], out: &mut [T]) {
        let ds = self.sub_dim;
        for (g, (xs, os)) in x.chunks_exact(ds).zip(out.chunks_exact_mut(ds)).enumerate() {
            gemv(self.backward_map(g), xs, os);
        }
    }

    /// Chains gradients w.r.t. the materialized maps back to the raw parameters.
    ///
    /// `forward_grad` and `backward_grad` have the layout of the forward and
    /// reverse maps; results are added into `out`.
    pub fn backprop(
        &self,
        rel: RelationRef<'_, T>,
        cfg: &ModelConfig,
        forward_grad: &[T],
        backward_grad: &[T],
        out: RelationGrad<'_, T>,
    ) -> Result<(), OteError> {
        let ds = self.sub_dim;
        let sq = ds * ds;
        let k = cfg.groups();
        match cfg.variant {
            Variant::Ote | Variant::OteNoScale => {
                let mut q_grad = vec![T::zero(); sq];
                for g in 0..k {
                    let fg = &forward_grad[g * sq..(g + 1) * sq];
                    let bg = &backward_grad[g * sq..(g + 1) * sq];
                    let es = &self.exp_scale[g * ds..(g + 1) * ds];
                    for a in 0..ds {
                        for b in 0..ds {
                            q_grad[a * ds + b] = es[a] * fg[a * ds + b] + bg[b * ds + a] / es[b];
                        }
                    }
                    if cfg.variant == Variant::Ote {
                        let fwd = self.forward_map(g);
                        let bwd = self.backward_map(g);
                        for a in 0..ds {
                            let mut s = T::zero();
                            for b in 0..ds {
                                s += fg[a * ds + b] * fwd[a * ds + b] - bg[a * ds + b] * bwd[a * ds + b];
                            }
                            out.scale[g * ds + a] += s;
                        }
                    }
                    orthogonalize_backward(
                        &rel.matrix[g * sq..(g + 1) * sq],
                        ds,
                        &q_grad,
                        &mut out.matrix[g * sq..(g + 1) * sq],
                    )?;
                }
            }
            Variant::Lne => {
                for (o, &gr) in out.matrix.iter_mut().zip(forward_grad) {
                    *o += gr;
                }
                for (o, &gr) in out.reverse.iter_mut().zip(backward_grad) {
                    *o += gr;
                }
            }
            Variant::RotatE => {
                for g in 0..k {
                    let (s, c) = rel.angle[g].sin_cos();
                    let fg = &forward_grad[g * 4..(g + 1) * 4];
                    let bg = &backward_grad[g * 4..(g + 1) * 4];
                    // d/dθ [c -s; s c] = [-s -c; c -s], d/dθ [c s; -s c] = [-s c; -c -s]
                    out.angle[g] += fg[0] * (-s) + fg[1] * (-c) + fg[2] * c + fg[3] * (-s);
                    out.angle[g] += bg[0] * (-s) + bg[1] * c + bg[2] * (-c) + bg[3] * (-s);
                }
            }
        }
        Ok(())
    }
}

/// Materialized transforms for every relation of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Transforms<T> {
    cfg: ModelConfig,
    relations: Vec<RelationTransform<T>>,
}

impl<T: Real> Transforms<T> {
    pub fn build(params: &Params<T>, shape: &ParamShape) -> Result<Self, OteError> {
        let relations = (0..shape.num_relations)
            .into_par_iter()
            .map(|r| RelationTransform::build(params.relation(shape, r), &shape.cfg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cfg: shape.cfg,
            relations,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn relation(&self, r: usize) -> &RelationTransform<T> {
        &self.relations[r]
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

/// `ẽ_t = f(h, r)`: the forward projection of a head embedding row.
pub fn project_forward<T: Real>(head: &[T], rel: RelationRef<'_, T>, cfg: &ModelConfig) -> Result<Vec<T>, OteError> {
    let tr = RelationTransform::build(rel, cfg)?;
    let mut out = vec![T::zero(); cfg.dim];
    tr.apply_forward(head, &mut out);
    Ok(out)
}

/// `ẽ_h = f(r, t)`: the reverse projection of a tail embedding row.
pub fn project_backward<T: Real>(tail: &[T], rel: RelationRef<'_, T>, cfg: &ModelConfig) -> Result<Vec<T>, OteError> {
    let tr = RelationTransform::build(rel, cfg)?;
    let mut out = vec![T::zero(); cfg.dim];
    tr.apply_backward(tail, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{check_gradients, l2_norm, GradCheckConfig, Matrix};
    use crate::ote::{gram_schmidt, Relation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn random_relation(cfg: &ModelConfig, seed: u64) -> Relation<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rel = Relation::zeros(cfg);
        rel.matrix = random(&mut rng, rel.matrix.len());
        rel.scale = random(&mut rng, rel.scale.len()).iter().map(|v| 0.3 * v).collect();
        rel.reverse = random(&mut rng, rel.reverse.len());
        rel.angle = random(&mut rng, rel.angle.len());
        rel
    }

    #[test]
    fn identity_relation_is_noop() {
        for variant in Variant::ALL {
            let cfg = ModelConfig::new(6, 2, variant).unwrap();
            let rel = Relation::<f64>::identity(&cfg);
            let x = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
            assert_eq!(project_forward(&x, rel.as_ref(), &cfg).unwrap(), x);
            assert_eq!(project_backward(&x, rel.as_ref(), &cfg).unwrap(), x);
        }
    }

    #[test]
    fn zero_scale_preserves_group_norms() {
        let cfg = ModelConfig::new(12, 4, Variant::Ote).unwrap();
        let mut rel = random_relation(&cfg, 1);
        rel.scale.iter_mut().for_each(|s| *s = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 12);
        let y = project_forward(&x, rel.as_ref(), &cfg).unwrap();
        for (xs, ys) in x.chunks(4).zip(y.chunks(4)) {
            assert!((l2_norm(xs) - l2_norm(ys)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_composed_oracle() {
        // d_s = 4, K = 2, fixed seed: diag(exp(s))·Q·x per group, Q from the recurrence
        let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
        let rel = random_relation(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(&mut rng, 8);
        let y = project_forward(&x, rel.as_ref(), &cfg).unwrap();
        let yb = project_backward(&x, rel.as_ref(), &cfg).unwrap();
        for g in 0..2 {
            let m = Matrix::from_row_major(4, rel.matrix[g * 16..(g + 1) * 16].to_vec()).unwrap();
            let q = gram_schmidt(&m).unwrap();
            for a in 0..4 {
                let mut fwd = 0.0;
                let mut bwd = 0.0;
                for b in 0..4 {
                    fwd += q.get(a, b) * x[g * 4 + b];
                    bwd += q.get(b, a) * x[g * 4 + b];
                }
                let s = rel.scale[g * 4 + a];
                assert!((y[g * 4 + a] - s.exp() * fwd).abs() < 1e-12);
                assert!((yb[g * 4 + a] - (-s).exp() * bwd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_with_zero_or_group_uniform_scale() {
        let cfg = ModelConfig::new(12, 4, Variant::Ote).unwrap();
        let mut rel = random_relation(&cfg, 4);
        let x: Vec<f32> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            random(&mut rng, 12).iter().map(|&v| v as f32).collect()
        };
        for uniform in [0.0, 0.7, -1.1] {
            for (g, chunk) in rel.scale.chunks_mut(4).enumerate() {
                chunk.iter_mut().for_each(|s| *s = uniform * (g as f64 + 1.0) / 3.0);
            }
            let rel32 = Relation::<f32> {
                matrix: rel.matrix.iter().map(|&v| v as f32).collect(),
                scale: rel.scale.iter().map(|&v| v as f32).collect(),
                reverse: vec![],
                angle: vec![],
            };
            let y = project_forward(&x, rel32.as_ref(), &cfg).unwrap();
            let back = project_backward(&y, rel32.as_ref(), &cfg).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences_for_every_variant() {
        for (variant, ds) in [
            (Variant::Ote, 4),
            (Variant::OteNoScale, 3),
            (Variant::Lne, 3),
            (Variant::RotatE, 2),
        ] {
            let cfg = ModelConfig::new(ds * 2, ds, variant).unwrap();
            let rel = random_relation(&cfg, 21);
            let mut rng = ChaCha8Rng::seed_from_u64(22);
            let sq = ds * ds * 2;
            let wf = random(&mut rng, sq);
            let wb = random(&mut rng, sq);
            let pack = |r: &Relation<f64>| -> Vec<f64> {
                [&r.matrix, &r.scale, &r.reverse, &r.angle]
                    .iter()
                    .flat_map(|b| b.iter().copied())
                    .collect()
            };
            let unpack = |flat: &[f64]| -> Relation<f64> {
                let mut r = rel.clone();
                let mut off = 0;
                for b in [&mut r.matrix, &mut r.scale, &mut r.reverse, &mut r.angle] {
                    let n = b.len();
                    b.copy_from_slice(&flat[off..off + n]);
                    off += n;
                }
                r
            };
            // L = <wf, A> + <wb, B>
            let loss = |flat: &[f64]| {
                let r = unpack(flat);
                let tr = RelationTransform::build(r.as_ref(), &cfg).unwrap();
                let mut l = 0.0;
                for g in 0..2 {
                    for (i, (&a, &b)) in tr.forward_map(g).iter().zip(tr.backward_map(g)).enumerate() {
                        l += wf[g * ds * ds + i] * a + wb[g * ds * ds + i] * b;
                    }
                }
                l
            };
            let tr = RelationTransform::build(rel.as_ref(), &cfg).unwrap();
            let mut grad = Relation::zeros(&cfg);
            tr.backprop(rel.as_ref(), &cfg, &wf, &wb, grad.as_mut()).unwrap();
            let report = check_gradients(loss, &pack(&rel), &pack(&grad), &GradCheckConfig::default()).unwrap();
            assert!(report.passed(), "{variant}: {report:?}");
        }
    }

    #[test]
    fn rotate_matches_noscale_on_rotation_matrices() {
        let rot = ModelConfig::new(4, 2, Variant::RotatE).unwrap();
        let ns = ModelConfig::new(4, 2, Variant::OteNoScale).unwrap();
        let angles = [0.4f64, -2.1];
        let mut r1 = Relation::zeros(&rot);
        r1.angle = angles.to_vec();
        let mut r2 = Relation::zeros(&ns);
        for (g, &a) in angles.iter().enumerate() {
            r2.matrix[g * 4..(g + 1) * 4].copy_from_slice(Matrix::<f64>::rotation2(a).as_slice());
        }
        let x = [0.3, -0.7, 1.2, 0.05];
        let a = project_forward(&x, r1.as_ref(), &rot).unwrap();
        let b = project_forward(&x, r2.as_ref(), &ns).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
