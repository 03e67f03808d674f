use rayon::prelude::*;

use crate::numeric::Real;
use crate::ote::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(like: &Params<T>) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over every block.
pub fn adam_step<T: Real>(params: &mut Params<T>, grads: &Params<T>, state: &mut AdamState<T>, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::of(1.0 - cfg.beta1);
    let c2 = T::of(1.0 - cfg.beta2);
    let bias1 = T::of(1.0 - cfg.beta1.powi(t));
    let bias2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    let blocks = params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut());
    for (((p, g), m), v) in blocks {
        p.par_iter_mut()
            .zip(g.par_iter())
            .zip(m.par_iter_mut())
            .zip(v.par_iter_mut())
            .for_each(|(((p, &g), m), v)| {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ote::{ModelConfig, ParamShape, Variant};

    fn flat(n: usize) -> Params<f64> {
        let cfg = ModelConfig::new(2, 2, Variant::Ote).unwrap();
        let mut p = Params::zeros(&ParamShape::new(cfg, 1, 0));
        p.entity = vec![0.0; n];
        p
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = flat(3);
        p.entity = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        let g = flat(3);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::new(0.1));
        assert_eq!(p, before);
    }

    #[test]
    fn moments_decay_without_gradient() {
        let mut p = flat(1);
        let g = flat(1);
        let mut st = AdamState::new(&p);
        st.m.entity[0] = 1.0;
        st.v.entity[0] = 1.0;
        adam_step(&mut p, &g, &mut st, &AdamConfig::new(0.1));
        assert!((st.m.entity[0] - 0.9).abs() < 1e-15);
        assert!((st.v.entity[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut p = flat(1);
        let mut g = flat(1);
        g.entity[0] = 3.7;
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::new(0.01);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.entity[0];
            adam_step(&mut p, &g, &mut st, &cfg);
            last = before - p.entity[0];
        }
        assert!((last - 0.01).abs() < 1e-6, "step {last}");
    }

    #[test]
    fn quadratic_trajectory_matches_hand_stepped_oracle() {
        // f(x) = Σ a_i (x_i - c_i)², gradient 2 a_i (x_i - c_i)
        let a = [1.0, 4.0, 0.25];
        let c = [0.5, -1.0, 2.0];
        let mut p = flat(3);
        p.entity = vec![2.0, 1.0, -3.0];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::new(0.05);

        let mut x = [2.0f64, 1.0, -3.0];
        let mut m = [0.0f64; 3];
        let mut v = [0.0f64; 3];
        for step in 1..=10 {
            let mut g = flat(3);
            for i in 0..3 {
                g.entity[i] = 2.0 * a[i] * (p.entity[i] - c[i]);
            }
            adam_step(&mut p, &g, &mut st, &cfg);
            for i in 0..3 {
                let gi = 2.0 * a[i] * (x[i] - c[i]);
                m[i] = 0.9 * m[i] + 0.1 * gi;
                v[i] = 0.999 * v[i] + 0.001 * gi * gi;
                let mh = m[i] / (1.0 - 0.9f64.powi(step));
                let vh = v[i] / (1.0 - 0.999f64.powi(step));
                x[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for (a, b) in p.entity.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
