//! Property suite run against a model: finite values, determinants,
//! orthogonality, norm preservation, round trips, gradient checks and
//! relation-pattern residuals.
//!
//! Every check reports the observed value next to its tolerance so a failure
//! names exactly what broke.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{ContextIndex, Split, Triple, TripleStore};
use crate::numeric::{check_gradients, gemv, gemv_t, orthogonality_error, GradCheckConfig, Real};
use crate::ote::{
    inverse_residual, symmetry_residual, InitConfig, Model, ModelConfig, Params, Transforms, Variant, TAU_DET,
    TAU_PATTERN,
};
use crate::rng::{stream_rng, Stream};
use crate::train::{
    batch_loss, batch_loss_and_grad, fix_weights, sample_negatives, Instance, LossSettings, Mode, Stage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    /// Reported for reference; never fails the suite.
    Info,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Outcome,
    pub observed: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn bounded(name: &'static str, observed: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let outcome = if observed < tolerance {
            Outcome::Pass
        } else {
            Outcome::Fail
        };
        Self {
            name,
            outcome,
            observed,
            tolerance,
            detail: detail.into(),
        }
    }

    fn info(name: &'static str, observed: f64, detail: impl Into<String>) -> Self {
        Self {
            name,
            outcome: Outcome::Info,
            observed,
            tolerance: f64::NAN,
            detail: detail.into(),
        }
    }

    fn failed(name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            name,
            outcome: Outcome::Fail,
            observed: f64::NAN,
            tolerance: f64::NAN,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Info => "INFO",
        };
        write!(f, "{tag:<5} {:<22} observed={:<12.3e}", self.name, self.observed)?;
        if self.tolerance.is_finite() {
            write!(f, " tolerance={:<9.1e}", self.tolerance)?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome != Outcome::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.outcome == Outcome::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Bound on `max|φφᵀ − I|`, norm drift and round-trip error.
    pub structural_tolerance: f64,
    /// Random vectors pushed through each group.
    pub probes: usize,
    pub gradients: GradCheckConfig,
    /// Pattern residuals are searched over all relation pairs up to this many relations.
    pub max_pair_relations: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            structural_tolerance: 1e-5,
            probes: 4,
            gradients: GradCheckConfig::default(),
            max_pair_relations: 64,
            seed: 0,
        }
    }
}

pub fn verify_model<T: Real>(model: &Model<T>, cfg: &VerifyConfig) -> VerifyReport {
    let mut checks = vec![finite_check(model.params())];
    let mc = *model.config();
    checks.push(determinant_check(model));
    match model.transforms() {
        Ok(tr) => {
            checks.extend(structural_checks(&tr, &mc, cfg));
            checks.extend(pattern_checks(model, cfg));
        }
        Err(e) => checks.push(CheckResult::failed("transforms", e.to_string())),
    }
    checks.extend(gradient_checks(mc, cfg));
    VerifyReport { checks }
}

fn finite_check<T: Real>(p: &Params<T>) -> CheckResult {
    let bad: Vec<String> = crate::ote::BLOCK_NAMES
        .iter()
        .zip(p.blocks())
        .filter_map(|(name, block)| {
            let n = block.iter().filter(|v| !v.is_finite()).count();
            (n > 0).then(|| format!("{name}:{n}"))
        })
        .collect();
    let count: usize = p
        .blocks()
        .iter()
        .map(|b| b.iter().filter(|v| !v.is_finite()).count())
        .sum();
    CheckResult::bounded("finite-values", count as f64, 0.5, bad.join(" "))
}

fn determinant_check<T: Real>(model: &Model<T>) -> CheckResult {
    if !model.config().variant.has_matrix() {
        return CheckResult::info("determinants", f64::NAN, "no raw matrices");
    }
    let degenerate = model.degenerate_matrices();
    let detail = match degenerate.first() {
        Some((r, g, det)) => format!("relation {r} group {g} has |det| = {det:.3e} <= {TAU_DET:e}"),
        None => String::new(),
    };
    CheckResult::bounded("determinants", degenerate.len() as f64, 0.5, detail)
}

fn structural_checks<T: Real>(tr: &Transforms<T>, mc: &ModelConfig, cfg: &VerifyConfig) -> Vec<CheckResult> {
    if mc.variant == Variant::Lne {
        let skip = "unconstrained maps";
        return vec![
            CheckResult::info("orthogonality", f64::NAN, skip),
            CheckResult::info("norm-preservation", f64::NAN, skip),
            CheckResult::info("round-trip", f64::NAN, skip),
        ];
    }
    let ds = mc.sub_dim;
    let mut rng = stream_rng(cfg.seed, Stream::Sampling, &[0x7e51]);
    let (mut ortho, mut norm, mut round) = (0.0f64, 0.0f64, 0.0f64);
    let mut x = vec![T::zero(); ds];
    let mut y = vec![T::zero(); ds];
    let mut z = vec![T::zero(); ds];
    for r in 0..tr.len() {
        let rt = tr.relation(r);
        for g in 0..mc.groups() {
            let q = rt.orthogonal_part(g);
            ortho = ortho.max(orthogonality_error(q, ds));
            for _ in 0..cfg.probes {
                for v in x.iter_mut() {
                    *v = T::of(rng.sample(StandardNormal));
                }
                gemv(q, &x, &mut y);
                gemv_t(q, &y, &mut z);
                let nx = x.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                norm = norm.max((ny - nx).abs() / nx);
                let err = x
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| (a.f64() - b.f64()).abs())
                    .fold(0.0, f64::max);
                round = round.max(err / nx);
            }
        }
    }
    let tol = cfg.structural_tolerance;
    vec![
        CheckResult::bounded("orthogonality", ortho, tol, "max |QQt - I|"),
        CheckResult::bounded("norm-preservation", norm, tol, "max relative drift of |Qx|"),
        CheckResult::bounded("round-trip", round, tol, "max relative |QtQx - x|"),
    ]
}

/// Closest-to-pattern relations, for reference.
fn pattern_checks<T: Real>(model: &Model<T>, cfg: &VerifyConfig) -> Vec<CheckResult> {
    let mc = *model.config();
    if !mc.variant.is_orthogonalized() && mc.variant != Variant::RotatE {
        return Vec::new();
    }
    let n = model.num_relations();
    let mut out = Vec::new();
    let mut best = (f64::INFINITY, 0);
    for r in 0..n {
        match symmetry_residual(model.relation(r), &mc) {
            Ok(v) if v < best.0 => best = (v, r),
            Ok(_) => {}
            Err(e) => return vec![CheckResult::failed("symmetry-residual", format!("relation {r}: {e}"))],
        }
    }
    if n > 0 {
        let hit = if best.0 < TAU_PATTERN { " (symmetric)" } else { "" };
        out.push(CheckResult::info(
            "symmetry-residual",
            best.0,
            format!("min over relations at r={}{hit}", best.1),
        ));
    }
    if n >= 2 && n <= cfg.max_pair_relations {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                if let Ok(v) = inverse_residual(model.relation(a), model.relation(b), &mc) {
                    if v < best.0 {
                        best = (v, a, b);
                    }
                }
            }
        }
        out.push(CheckResult::info(
            "inverse-residual",
            best.0,
            format!("min over pairs at ({}, {})", best.1, best.2),
        ));
    }
    out
}

/// Finite-difference checks of both training objectives on a tiny 64-bit
/// model with the same variant and sub-dimension.
fn gradient_checks(mc: ModelConfig, cfg: &VerifyConfig) -> Vec<CheckResult> {
    const ENTITIES: usize = 8;
    const RELATIONS: usize = 3;
    let tiny = match ModelConfig::new(2 * mc.sub_dim, mc.sub_dim, mc.variant) {
        Ok(c) => c,
        Err(e) => return vec![CheckResult::failed("gradient", e.to_string())],
    };
    let mut model = match Model::<f64>::new(
        tiny,
        ENTITIES,
        RELATIONS,
        &InitConfig {
            margin: 4.0,
            seed: cfg.seed,
        },
    ) {
        Ok(m) => m,
        Err(e) => return vec![CheckResult::failed("gradient", e.to_string())],
    };
    for (i, s) in model.params_mut().scale.iter_mut().enumerate() {
        *s = 0.1 * ((i % 5) as f64 - 2.0);
    }
    let train: Vec<Triple> = (0..ENTITIES as u32)
        .map(|e| Triple::new(e, e % RELATIONS as u32, (e * 3 + 1) % ENTITIES as u32))
        .collect();
    let index = ContextIndex::build(ENTITIES, &TripleStore::new(Split::Train, train.clone()));
    let instances: Vec<Instance> = train[..4]
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            [Mode::Head, Mode::Tail].map(|mode| Instance {
                positive: *t,
                mode,
                negatives: sample_negatives(t, 3, mode, ENTITIES, cfg.seed, &[i as u64]),
                weights: None,
            })
        })
        .collect();
    [
        (Stage::Pretrain, "gradient-pretrain"),
        (Stage::Finetune, "gradient-finetune"),
    ]
    .into_iter()
    .map(|(stage, name)| {
        let settings = LossSettings {
            margin: 3.0,
            temperature: 1.0,
            stage,
            neighbor_cap: None,
            freeze_neighbors: false,
        };
        let run = || -> Result<CheckResult, String> {
            let fixed = fix_weights(&model, Some(&index), &instances, &settings, 0).map_err(|e| e.to_string())?;
            let (_, grads) =
                batch_loss_and_grad(&model, Some(&index), &fixed, &settings, 0).map_err(|e| e.to_string())?;
            let report = check_gradients(
                |flat| {
                    let p = Params::from_flat_f64(model.params(), flat);
                    Model::from_params(tiny, ENTITIES, RELATIONS, p)
                        .map_err(|e| e.to_string())
                        .and_then(|m| batch_loss(&m, Some(&index), &fixed, &settings, 0).map_err(|e| e.to_string()))
                        .unwrap_or(f64::NAN)
                },
                &model.params().to_flat_f64(),
                &grads.to_flat_f64(),
                &cfg.gradients,
            )
            .map_err(|e| e.to_string())?;
            Ok(CheckResult::bounded(
                name,
                report.max_relative_error,
                report.tolerance,
                format!("{} coordinates, 64-bit toy model", report.checked),
            ))
        };
        run().unwrap_or_else(|e| CheckResult::failed(name, e))
    })
    .collect()
}
