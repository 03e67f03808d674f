use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::numeric::{determinant, Real};
use crate::rng::{stream_rng, Stream};

use super::gram_schmidt::orthogonalize;
use super::params::{ParamShape, Params, Relation, RelationRef};
use super::transform::Transforms;
use super::{ModelConfig, OteError, Variant};

/// Raw matrices must satisfy `|det M| > TAU_DET`.
pub const TAU_DET: f64 = 1e-6;

const INIT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Margin γ; entity entries are drawn from `U(-γ/d, γ/d)`.
    pub margin: f64,
    pub seed: u64,
}

/// Draws one relation's parameters. Returns the relation and how many
/// matrices had to be re-drawn for falling under [`TAU_DET`].
///
/// Raw matrices have standard normal entries and scales start at zero, so the
/// initial transform is norm-preserving. LNE starts from an orthogonal map
/// and its exact inverse.
///
/// Draws with a negative determinant have their first column negated. The
/// sign of `det M` survives every update that keeps `M` full rank, and
/// Gram-Schmidt maps it onto `det φ(M)`, so mixed signs would make inverse
/// and composed relations unreachable in the affected groups.
pub fn init_relation<T: Real, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<(Relation<T>, usize), OteError> {
    let ds = cfg.sub_dim;
    let sq = ds * ds;
    let mut rel = Relation::zeros(cfg);
    let mut resampled = 0;
    if cfg.variant.has_matrix() {
        for g in 0..cfg.groups() {
            let block = &mut rel.matrix[g * sq..(g + 1) * sq];
            let mut attempts = 0;
            loop {
                for v in block.iter_mut() {
                    *v = T::of(rng.sample(StandardNormal));
                }
                let det = determinant(block, ds);
                if det.abs() > TAU_DET {
                    if det < 0.0 {
                        for row in 0..ds {
                            block[row * ds] = -block[row * ds];
                        }
                    }
                    break;
                }
                attempts += 1;
                resampled += 1;
                if attempts >= INIT_ATTEMPTS {
                    return Err(OteError::InitBudget { attempts });
                }
            }
        }
    }
    if cfg.variant == Variant::Lne {
        let mut q = vec![T::zero(); sq];
        for g in 0..cfg.groups() {
            orthogonalize(&rel.matrix[g * sq..(g + 1) * sq], ds, &mut q)?;
            for a in 0..ds {
                for b in 0..ds {
                    rel.matrix[g * sq + a * ds + b] = q[a * ds + b];
                    rel.reverse[g * sq + a * ds + b] = q[b * ds + a];
                }
            }
        }
    }
    if cfg.variant == Variant::RotatE {
        let dist = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI);
        for a in rel.angle.iter_mut() {
            *a = T::of(rng.sample(dist));
        }
    }
    Ok((rel, resampled))
}

/// Entity and relation tables plus a version counter bumped on every mutable access.
#[derive(Debug, Clone)]
pub struct Model<T> {
    shape: ParamShape,
    params: Params<T>,
    version: u64,
}

/// Equality of shape and parameters; the version counter is cache bookkeeping.
impl<T: PartialEq> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.params == other.params
    }
}

impl<T: Real> Model<T> {
    pub fn new(
        cfg: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        init: &InitConfig,
    ) -> Result<Self, OteError> {
        cfg.validate()?;
        let shape = ParamShape::new(cfg, num_entities, num_relations);
        let mut params = Params::zeros(&shape);
        let bound = init.margin / cfg.dim as f64;
        let mut rng = stream_rng(init.seed, Stream::Init, &[0]);
        if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in params.entity.iter_mut() {
                *v = T::of(rng.sample(dist));
            }
        }
        for r in 0..num_relations {
            let mut rng = stream_rng(init.seed, Stream::Init, &[1, r as u64]);
            let (rel, resampled) = init_relation(&cfg, &mut rng)?;
            if resampled > 0 {
                log::debug!("relation {r}: {resampled} matrix draw(s) rejected at init");
            }
            params.set_relation(&shape, r, &rel);
        }
        Ok(Self {
            shape,
            params,
            version: 0,
        })
    }

    pub fn from_params(
        cfg: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        params: Params<T>,
    ) -> Result<Self, OteError> {
        cfg.validate()?;
        let shape = ParamShape::new(cfg, num_entities, num_relations);
        params.check_shape(&shape)?;
        Ok(Self {
            shape,
            params,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.shape.cfg
    }

    pub fn shape(&self) -> &ParamShape {
        &self.shape
    }

    pub fn num_entities(&self) -> usize {
        self.shape.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.shape.num_relations
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    /// Mutable parameters; invalidates anything keyed to the current version.
    pub fn params_mut(&mut self) -> &mut Params<T> {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.shape.total()
    }

    pub fn entity(&self, e: usize) -> &[T] {
        self.params.entity_row(self.shape.cfg.dim, e)
    }

    pub fn relation(&self, r: usize) -> RelationRef<'_, T> {
        self.params.relation(&self.shape, r)
    }

    pub fn set_relation(&mut self, r: usize, rel: &Relation<T>) {
        let shape = self.shape;
        self.params_mut().set_relation(&shape, r, rel);
    }

    pub fn set_entity(&mut self, e: usize, values: &[T]) {
        let d = self.shape.cfg.dim;
        self.params_mut().entity[e * d..(e + 1) * d].copy_from_slice(values);
    }

    pub fn transforms(&self) -> Result<Transforms<T>, OteError> {
        Transforms::build(&self.params, &self.shape)
    }

    /// `d((h,r),t) = Σ_i ||ẽ_t(i) − e_t(i)||`.
    pub fn distance_forward(&self, tr: &Transforms<T>, h: usize, r: usize, t: usize) -> T {
        let mut proj = vec![T::zero(); self.shape.cfg.dim];
        tr.relation(r).apply_forward(self.entity(h), &mut proj);
        group_distance(&proj, self.entity(t), self.shape.cfg.sub_dim)
    }

    /// `d(h,(r,t)) = Σ_i ||ẽ_h(i) − e_h(i)||`.
    pub fn distance_backward(&self, tr: &Transforms<T>, h: usize, r: usize, t: usize) -> T {
        let mut proj = vec![T::zero(); self.shape.cfg.dim];
        tr.relation(r).apply_backward(self.entity(t), &mut proj);
        group_distance(&proj, self.entity(h), self.shape.cfg.sub_dim)
    }

    /// Raw matrices with `|det| <= TAU_DET`, or that Gram-Schmidt rejects, as
    /// `(relation, group, det)`. A matrix with long columns can pass the
    /// determinant test while one residual column is still under `TAU_GS`.
    pub fn degenerate_matrices(&self) -> Vec<(usize, usize, f64)> {
        let cfg = self.shape.cfg;
        if !cfg.variant.has_matrix() {
            return Vec::new();
        }
        let ds = cfg.sub_dim;
        let sq = ds * ds;
        let mut bad = Vec::new();
        let mut scratch = vec![T::zero(); sq];
        for r in 0..self.num_relations() {
            let rel = self.relation(r);
            for g in 0..cfg.groups() {
                let block = &rel.matrix[g * sq..(g + 1) * sq];
                let det = determinant(block, ds);
                let rejected = cfg.variant.is_orthogonalized() && orthogonalize(block, ds, &mut scratch).is_err();
                if det.is_nan() || det.abs() <= TAU_DET || rejected {
                    bad.push((r, g, det));
                }
            }
        }
        bad
    }

    /// Redraws one group's raw matrix (and resets its scale). Returns the new determinant.
    pub fn reinit_group(&mut self, r: usize, g: usize, seed: u64) -> Result<f64, OteError> {
        let cfg = self.shape.cfg;
        let ds = cfg.sub_dim;
        let sq = ds * ds;
        let mut rng = stream_rng(seed, Stream::Init, &[2, r as u64, g as u64, self.version]);
        let single = ModelConfig::new(ds, ds, cfg.variant)?;
        let (fresh, _) = init_relation::<T, _>(&single, &mut rng)?;
        let shape = self.shape;
        let view = self.params_mut().relation_mut(&shape, r);
        view.matrix[g * sq..(g + 1) * sq].copy_from_slice(&fresh.matrix);
        if cfg.variant == Variant::Lne {
            view.reverse[g * sq..(g + 1) * sq].copy_from_slice(&fresh.reverse);
        }
        if cfg.variant.has_scale() {
            view.scale[g * ds..(g + 1) * ds].iter_mut().for_each(|s| *s = T::zero());
        }
        Ok(determinant(&fresh.matrix, ds))
    }
}

/// `Σ_i ||a(i) − b(i)||` over groups of `sub_dim`.
pub(crate) fn group_distance<T: Real>(a: &[T], b: &[T], sub_dim: usize) -> T {
    a.chunks_exact(sub_dim)
        .zip(b.chunks_exact(sub_dim))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&p, &q)| (p - q) * (p - q))
                .fold(T::zero(), |acc, v| acc + v)
                .sqrt()
        })
        .fold(T::zero(), |acc, v| acc + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;
    use crate::ote::project_forward;

    fn tiny(variant: Variant, ds: usize) -> Model<f64> {
        let cfg = ModelConfig::new(2 * ds, ds, variant).unwrap();
        Model::new(cfg, 4, 2, &InitConfig { margin: 6.0, seed: 3 }).unwrap()
    }

    #[test]
    fn init_postconditions() {
        let m = tiny(Variant::Ote, 4);
        assert!(m.degenerate_matrices().is_empty());
        for block in m.params().matrix.chunks_exact(16) {
            assert!(determinant(block, 4) > TAU_DET);
        }
        assert!(m.params().scale.iter().all(|&s| s == 0.0));
        let bound = 6.0 / 8.0;
        assert!(m.params().entity.iter().all(|v| v.abs() <= bound));
        let lne = tiny(Variant::Lne, 3);
        assert!(lne.degenerate_matrices().is_empty());
    }

    #[test]
    fn full_rank_draws_at_twenty_never_resample() {
        let cfg = ModelConfig::new(20, 20, Variant::Ote).unwrap();
        let mut total = 0;
        for seed in 0..1000u64 {
            let mut rng = stream_rng(seed, Stream::Init, &[]);
            let (rel, resampled) = init_relation::<f32, _>(&cfg, &mut rng).unwrap();
            assert!(determinant(&rel.matrix, 20).abs() > TAU_DET);
            total += resampled;
        }
        assert_eq!(total, 0);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(Variant::Ote, 4), tiny(Variant::Ote, 4));
        let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
        let other = Model::<f64>::new(cfg, 4, 2, &InitConfig { margin: 6.0, seed: 4 }).unwrap();
        assert_ne!(tiny(Variant::Ote, 4).params(), other.params());
    }

    #[test]
    fn distance_zero_when_tail_equals_projection() {
        let mut m = tiny(Variant::Ote, 4);
        let cfg = *m.config();
        let proj = project_forward(m.entity(0), m.relation(1), &cfg).unwrap();
        m.set_entity(2, &proj);
        let tr = m.transforms().unwrap();
        assert!(m.distance_forward(&tr, 0, 1, 2) < 1e-12);
    }

    #[test]
    fn distance_is_sum_of_group_norms() {
        let cfg = ModelConfig::new(2, 2, Variant::OteNoScale).unwrap();
        let mut m = Model::<f64>::new(cfg, 2, 1, &InitConfig { margin: 0.0, seed: 0 }).unwrap();
        m.set_relation(0, &Relation::identity(&cfg));
        m.set_entity(0, &[3.0, 4.0]);
        let tr = m.transforms().unwrap();
        assert_eq!(m.distance_forward(&tr, 0, 0, 1), 5.0);

        let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
        let m = Model::<f64>::new(cfg, 3, 1, &InitConfig { margin: 4.0, seed: 8 }).unwrap();
        let tr = m.transforms().unwrap();
        let proj = project_forward(m.entity(0), m.relation(0), &cfg).unwrap();
        let t = m.entity(2);
        let mut expected = 0.0;
        for g in 0..2 {
            let mut sq = 0.0;
            for i in 0..4 {
                sq += (proj[g * 4 + i] - t[g * 4 + i]).powi(2);
            }
            expected += f64::sqrt(sq);
        }
        assert!((m.distance_forward(&tr, 0, 0, 2) - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_distance_mirrors_forward_under_transpose() {
        // d(h,(r,t)) with (M, s) equals d((t,r'),h) with M' = φ(M)ᵀ, s' = −s
        let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
        let mut m = Model::<f64>::new(cfg, 3, 2, &InitConfig { margin: 4.0, seed: 12 }).unwrap();
        let mut rel = Relation::zeros(&cfg);
        rel.matrix = m.relation(0).matrix.to_vec();
        rel.scale = vec![0.2, -0.1, 0.05, 0.3, -0.4, 0.0, 0.1, 0.2];
        m.set_relation(0, &rel);
        let tr = m.transforms().unwrap();
        let mut mirrored = Relation::zeros(&cfg);
        for g in 0..2 {
            let q = tr.relation(0).orthogonal_part(g);
            let qt = Matrix::from_row_major(4, q.to_vec()).unwrap().transpose();
            mirrored.matrix[g * 16..(g + 1) * 16].copy_from_slice(qt.as_slice());
        }
        mirrored.scale = rel.scale.iter().map(|s| -s).collect();
        m.set_relation(1, &mirrored);
        let tr = m.transforms().unwrap();
        let a = m.distance_backward(&tr, 0, 0, 2);
        let b = m.distance_forward(&tr, 2, 1, 0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn reinit_restores_full_rank() {
        let mut m = tiny(Variant::Ote, 3);
        let shape = *m.shape();
        m.params_mut().relation_mut(&shape, 1).matrix[..9]
            .iter_mut()
            .for_each(|v| *v = 0.0);
        assert_eq!(m.degenerate_matrices().len(), 1);
        let det = m.reinit_group(1, 0, 5).unwrap();
        assert!(det.abs() > TAU_DET);
        assert!(m.degenerate_matrices().is_empty());
    }

    #[test]
    fn version_bumps_on_mutation() {
        let mut m = tiny(Variant::Ote, 2);
        let v = m.version();
        m.params_mut();
        assert_eq!(m.version(), v + 1);
    }

    #[test]
    fn long_columns_with_a_tiny_residual_count_as_degenerate() {
        let cfg = ModelConfig::new(2, 2, Variant::Ote).unwrap();
        let mut m = Model::<f64>::new(cfg, 2, 1, &InitConfig { margin: 1.0, seed: 0 }).unwrap();
        // columns (1e4, 0) and (1e4, 1e-7): det 1e-3, second residual 1e-7
        m.params_mut().matrix.copy_from_slice(&[1e4, 1e4, 0.0, 1e-7]);
        assert!((determinant(&m.params().matrix, 2) - 1e-3).abs() < 1e-9);
        assert_eq!(m.degenerate_matrices().len(), 1);
        assert!(m.transforms().is_err());
    }
}
