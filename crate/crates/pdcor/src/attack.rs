//! FGM and PGD adversarial attacks in the L-infinity norm.

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_grad, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgm,
    Pgd,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget.
    pub epsilon: f64,
    /// PGD iteration count (the protocol default is 40).
    #[serde(default = "default_pgd_iters")]
    pub pgd_iters: usize,
    /// PGD per-iteration step; defaults to `epsilon / 10`.
    #[serde(default)]
    pub pgd_step: Option<f64>,
    /// Optional data domain `[lo, hi]` to clip into. `None` for
    /// unbounded feature spaces.
    #[serde(default)]
    pub domain: Option<(f64, f64)>,
}

fn default_pgd_iters() -> usize {
    40
}

impl AttackConfig {
    pub fn fgm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgm,
            epsilon,
            pgd_iters: 40,
            pgd_step: None,
            domain: None,
        }
    }

    pub fn pgd(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon,
            pgd_iters: 40,
            pgd_step: None,
            domain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidInput("epsilon must be finite and >= 0".into()));
        }
        if self.kind == AttackKind::Pgd && self.pgd_iters == 0 {
            return Err(Error::InvalidInput("pgd_iters must be >= 1".into()));
        }
        if let Some(s) = self.pgd_step {
            if s.is_nan() || s <= 0.0 {
                return Err(Error::InvalidInput("pgd_step must be > 0".into()));
            }
        }
        if let Some((lo, hi)) = self.domain {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::InvalidInput("domain must satisfy lo < hi".into()));
            }
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        self.pgd_step.unwrap_or(self.epsilon / 10.0)
    }

    /// Dispatch on `kind`.
    pub fn run(&self, model: &Mlp, x: &SampleBatch, labels: &[usize]) -> Result<SampleBatch> {
        match self.kind {
            AttackKind::Fgm => fgm_attack(model, x, labels, self),
            AttackKind::Pgd => pgd_attack(model, x, labels, self),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Project each entry of `adv` onto the epsilon-ball around `x`,
/// intersected with the data domain when one is set. The ball takes
/// precedence, so `epsilon = 0` always returns `x` itself.
fn project(adv: &mut Array2<f64>, x: &Array2<f64>, cfg: &AttackConfig) {
    let eps = cfg.epsilon;
    for (a, &orig) in adv.iter_mut().zip(x.iter()) {
        let (mut lo, mut hi) = (orig - eps, orig + eps);
        if let Some((dlo, dhi)) = cfg.domain {
            lo = lo.max(dlo).min(orig + eps);
            hi = hi.min(dhi).max(orig - eps);
        }
        *a = a.clamp(lo, hi);
    }
}

fn ce_input_gradient(model: &Mlp, x: &SampleBatch, labels: &[usize]) -> Result<Array2<f64>> {
    let trace = model.forward_trace(x)?;
    let d_logits = cross_entropy_grad(&trace.logits, labels)?;
    let (_, d_input) = model.backward(&trace, &d_logits, None);
    Ok(d_input)
}

/// Single-step fast gradient method: `x + eps * sign(grad)`.
pub fn fgm_attack(
    model: &Mlp,
    x: &SampleBatch,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<SampleBatch> {
    cfg.validate()?;
    let g = ce_input_gradient(model, x, labels)?;
    let mut adv = x.as_array().clone();
    adv.zip_mut_with(&g, |a, &gv| *a += cfg.epsilon * sign(gv));
    project(&mut adv, x.as_array(), cfg);
    SampleBatch::new(adv)
}

/// Iterated signed-gradient ascent projected onto the epsilon-ball
/// (and data domain) each iteration. Deterministic: no random start.
pub fn pgd_attack(
    model: &Mlp,
    x: &SampleBatch,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<SampleBatch> {
    cfg.validate()?;
    let step = cfg.step();
    let mut adv = x.as_array().clone();
    for _ in 0..cfg.pgd_iters {
        let g = ce_input_gradient(model, &SampleBatch::new(adv.clone())?, labels)?;
        adv.zip_mut_with(&g, |a, &gv| *a += step * sign(gv));
        project(&mut adv, x.as_array(), cfg);
    }
    SampleBatch::new(adv)
}
