//! Block stochastic gradient training of two coupled models.
//!
//! Each step computes a minibatch gradient for the X block, updates it,
//! then computes the Y gradient at the *updated* X before updating Y. With
//! the quadratic proximal term the argmin update has the closed form of a
//! single gradient step scaled by the step size, and the constraint term
//! enters as a hinge-penalty subgradient added to the block gradient.
//! Step sizes follow the `eta / sqrt(T)` schedule. Running parameter
//! averages over the visited iterates are returned alongside the final
//! iterates.

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::dcor::{double_center, pairwise_distances, DEGENERACY_THRESHOLD};
use crate::error::{Error, Result};
use crate::grad::distance_adjoint;
use crate::nn::{Mlp, MlpGrads, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Hinge penalty on the centered-distance energy of each model's
    /// features: `penalty_weight * max(0, <A,A> - m)`.
    Penalty,
    /// No constraint term; reduces to alternating plain SGD.
    None,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BsgConfig {
    /// Base step size; the per-step size is `eta / sqrt(total_steps)`.
    pub eta: f64,
    /// Total number of steps `T`.
    pub total_steps: usize,
    /// Minibatch size `m` (also the constraint bound).
    pub batch_size: usize,
    pub constraint_mode: ConstraintMode,
    pub penalty_weight: f64,
    /// Record a trace entry every this many steps.
    pub trace_every: usize,
}

impl BsgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(Error::InvalidInput("eta must be > 0".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidInput("total_steps must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidInput("batch_size must be >= 2".into()));
        }
        if self.penalty_weight < 0.0 {
            return Err(Error::InvalidInput("penalty_weight must be >= 0".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidInput("trace_every must be >= 1".into()));
        }
        Ok(())
    }

    /// The constant per-step size `eta / sqrt(T)`.
    pub fn step_size(&self) -> f64 {
        self.eta / (self.total_steps as f64).sqrt()
    }
}

/// A two-block objective `f(Theta_X, Theta_Y; x_t, y_t)`.
pub trait PairObjective {
    /// Value and gradient with respect to the X block at `(fx, fy)`.
    fn grad_x(&self, fx: &Mlp, fy: &Mlp, xb: &SampleBatch, yb: &SampleBatch)
        -> Result<(f64, MlpGrads)>;

    /// Value and gradient with respect to the Y block at `(fx, fy)`.
    fn grad_y(&self, fx: &Mlp, fy: &Mlp, xb: &SampleBatch, yb: &SampleBatch)
        -> Result<(f64, MlpGrads)>;

    /// Normalized monitoring scalar recorded in the trace.
    fn monitor(&self, fx: &Mlp, fy: &Mlp, xb: &SampleBatch, yb: &SampleBatch) -> Result<f64>;
}

/// The distance-coupling objective `<A, B>` over tap features, where `A`
/// and `B` are the double-centered pairwise distance matrices of the two
/// models' features on the minibatch.
pub struct CenteredCoupling;

impl CenteredCoupling {
    fn features_and_centered(model: &Mlp, batch: &SampleBatch) -> Result<(SampleBatch, Array2<f64>)> {
        let trace = model.forward_trace(batch)?;
        let feats = SampleBatch::new(trace.features.clone())
            .map_err(|_| Error::Degenerate("non-finite features".into()))?;
        let a = double_center(&pairwise_distances(&feats));
        Ok((feats, a.as_array().clone()))
    }

    fn one_side(
        own: &Mlp,
        other: &Mlp,
        own_batch: &SampleBatch,
        other_batch: &SampleBatch,
    ) -> Result<(f64, MlpGrads)> {
        let (own_feats, a) = Self::features_and_centered(own, own_batch)?;
        let (_, b) = Self::features_and_centered(other, other_batch)?;
        if a.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch("coupling batch sizes differ".into()));
        }
        let value: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let energy: f64 = a.iter().map(|v| v * v).sum();
        if energy <= DEGENERACY_THRESHOLD {
            return Err(Error::Degenerate("feature batch collapsed to a constant".into()));
        }
        // d<A,B>/d(own features), with B fixed and already centered.
        let dist = pairwise_distances(&own_feats);
        let d_feats = distance_adjoint(&own_feats, &dist, &b);
        let trace = own.forward_trace(own_batch)?;
        let zeros = Array2::zeros(trace.logits.raw_dim());
        let (grads, _) = own.backward(&trace, &zeros, Some(&d_feats));
        Ok((value, grads))
    }
}

impl PairObjective for CenteredCoupling {
    fn grad_x(
        &self,
        fx: &Mlp,
        fy: &Mlp,
        xb: &SampleBatch,
        yb: &SampleBatch,
    ) -> Result<(f64, MlpGrads)> {
        Self::one_side(fx, fy, xb, yb)
    }

    fn grad_y(
        &self,
        fx: &Mlp,
        fy: &Mlp,
        xb: &SampleBatch,
        yb: &SampleBatch,
    ) -> Result<(f64, MlpGrads)> {
        Self::one_side(fy, fx, yb, xb)
    }

    fn monitor(&self, fx: &Mlp, fy: &Mlp, xb: &SampleBatch, yb: &SampleBatch) -> Result<f64> {
        let (_, a) = Self::features_and_centered(fx, xb)?;
        let (_, b) = Self::features_and_centered(fy, yb)?;
        let axb: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let axa: f64 = a.iter().map(|v| v * v).sum();
        let byb: f64 = b.iter().map(|v| v * v).sum();
        let denom = axa * byb;
        if denom <= DEGENERACY_THRESHOLD {
            return Ok(0.0);
        }
        Ok(axb / denom.sqrt())
    }
}

/// Subgradient of `max(0, <A,A> - m)` with respect to the feature batch,
/// where `A` is the double-centered distance matrix of the features.
/// Zero when the constraint is slack.
pub fn constraint_subgrad(features: &SampleBatch, m: usize) -> Array2<f64> {
    let dist = pairwise_distances(features);
    let a = double_center(&dist);
    let energy: f64 = a.as_array().iter().map(|v| v * v).sum();
    if energy <= m as f64 {
        return Array2::zeros((features.n(), features.p()));
    }
    let two_a = a.as_array() * 2.0;
    distance_adjoint(features, &dist, &two_a)
}

/// One trace record (written every `trace_every` steps).
#[derive(Debug, Clone, serde::Serialize)]
pub struct BsgRecord {
    pub step: usize,
    pub objective: f64,
    pub monitor: f64,
    pub grad_norm_x: f64,
    pub grad_norm_y: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct BsgTrace {
    pub records: Vec<BsgRecord>,
    /// Steps skipped because a block's features degenerated.
    pub skipped: Vec<usize>,
}

/// Training outcome: final iterates and the running averages
/// `(1/T) sum_t Theta^t` over the iterates visited before each update.
pub struct BsgOutcome {
    pub fx_final: Mlp,
    pub fy_final: Mlp,
    pub fx_avg: Mlp,
    pub fy_avg: Mlp,
    pub trace: BsgTrace,
}

struct ParamAccum {
    sums: MlpGrads,
    count: usize,
}

impl ParamAccum {
    fn new(model: &Mlp) -> Self {
        Self {
            sums: MlpGrads::zeros_like(model),
            count: 0,
        }
    }

    fn add(&mut self, model: &Mlp) {
        for (s, l) in self.sums.weights.iter_mut().zip(&model.layers) {
            *s += &l.weight;
        }
        for (s, l) in self.sums.biases.iter_mut().zip(&model.layers) {
            *s += &l.bias;
        }
        self.count += 1;
    }

    fn mean(&self, template: &Mlp) -> Mlp {
        let mut out = template.clone();
        let c = self.count.max(1) as f64;
        for (l, s) in out.layers.iter_mut().zip(self.sums.weights.iter()) {
            l.weight = s / c;
        }
        for (l, s) in out.layers.iter_mut().zip(self.sums.biases.iter()) {
            l.bias = s / c;
        }
        out
    }
}

/// Run the block stochastic gradient loop over a prepared stream of
/// minibatch pairs (one pair per step).
pub fn bsg_train<O: PairObjective>(
    fx: &Mlp,
    fy: &Mlp,
    stream: &[(SampleBatch, SampleBatch)],
    objective: &O,
    cfg: &BsgConfig,
) -> Result<BsgOutcome> {
    cfg.validate()?;
    if stream.len() != cfg.total_steps {
        return Err(Error::InvalidInput(format!(
            "stream has {} steps, config says {}",
            stream.len(),
            cfg.total_steps
        )));
    }
    for (xb, yb) in stream {
        if xb.n() != cfg.batch_size || yb.n() != cfg.batch_size {
            return Err(Error::InvalidInput(format!(
                "every minibatch must have exactly {} samples",
                cfg.batch_size
            )));
        }
    }
    let step = cfg.step_size();
    let mut fx = fx.clone();
    let mut fy = fy.clone();
    fx.validate()?;
    fy.validate()?;
    let mut avg_x = ParamAccum::new(&fx);
    let mut avg_y = ParamAccum::new(&fy);
    let mut trace = BsgTrace::default();
    // Momentum-free updates realize the closed-form proximal step.
    let mut opt_x = Sgd::new(step, 0.0);
    let mut opt_y = Sgd::new(step, 0.0);

    for (t, (xb, yb)) in stream.iter().enumerate() {
        avg_x.add(&fx);
        avg_y.add(&fy);

        let gx = match objective.grad_x(&fx, &fy, xb, yb) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => {
                trace.skipped.push(t);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (value, mut grads_x) = gx;
        if cfg.constraint_mode == ConstraintMode::Penalty {
            let mut pen = penalty_grads(&fx, xb, cfg)?;
            pen.scale(cfg.penalty_weight);
            grads_x.add(&pen);
        }
        let norm_x = grads_x.norm();
        opt_x.step(&mut fx, &grads_x)?;

        let gy = match objective.grad_y(&fx, &fy, xb, yb) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => {
                // X already moved per the sequential update order; only Y stalls.
                trace.skipped.push(t);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (_, mut grads_y) = gy;
        if cfg.constraint_mode == ConstraintMode::Penalty {
            let mut pen = penalty_grads(&fy, yb, cfg)?;
            pen.scale(cfg.penalty_weight);
            grads_y.add(&pen);
        }
        let norm_y = grads_y.norm();
        opt_y.step(&mut fy, &grads_y)?;

        if t % cfg.trace_every == 0 {
            let monitor = objective.monitor(&fx, &fy, xb, yb).unwrap_or(f64::NAN);
            trace.records.push(BsgRecord {
                step: t,
                objective: value,
                monitor,
                grad_norm_x: norm_x,
                grad_norm_y: norm_y,
            });
        }
        if !fx.layers.iter().all(|l| l.weight.iter().all(|v| v.is_finite()))
            || !fy.layers.iter().all(|l| l.weight.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Divergence(format!("non-finite parameters at step {t}")));
        }
    }

    let fx_avg = avg_x.mean(&fx);
    let fy_avg = avg_y.mean(&fy);
    Ok(BsgOutcome {
        fx_final: fx,
        fy_final: fy,
        fx_avg,
        fy_avg,
        trace,
    })
}

fn penalty_grads(model: &Mlp, batch: &SampleBatch, cfg: &BsgConfig) -> Result<MlpGrads> {
    let trace = model.forward_trace(batch)?;
    let feats = SampleBatch::new(trace.features.clone())
        .map_err(|_| Error::Degenerate("non-finite features".into()))?;
    let d_feats = constraint_subgrad(&feats, cfg.batch_size);
    let zeros = Array2::zeros(trace.logits.raw_dim());
    let (grads, _) = model.backward(&trace, &zeros, Some(&d_feats));
    Ok(grads)
}
