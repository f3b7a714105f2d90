//! Application recipes: independent-feature pair training with transfer
//! attack evaluation, minibatch network-comparison estimators and layer
//! similarity heatmaps, and the disentanglement loss composition.

use ndarray::Array2;
use rayon::prelude::*;

use crate::attack::AttackConfig;
use crate::batch::SampleBatch;
use crate::dcor::dcor;
use crate::error::{Error, Result};
use crate::grad::{dcor_value_grad, Wrt};
use crate::nn::{cross_entropy, cross_entropy_grad, Mlp, Sgd};
use crate::pdc::pdcor;
use crate::rng;

/// Labeled classification data.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub x: SampleBatch,
    pub y: Vec<usize>,
}

impl LabeledData {
    pub fn new(x: SampleBatch, y: Vec<usize>) -> Result<Self> {
        if x.n() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples vs {} labels",
                x.n(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }
}

/// Epoch-alternating schedule (the only one implemented).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    AlternatingEpochs,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PairTrainConfig {
    /// Weight of the distance-correlation term in the second model's loss.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub lr_f1: f64,
    pub lr_f2: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for PairTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            epochs: 20,
            batch_size: 64,
            schedule: Schedule::AlternatingEpochs,
            lr_f1: 0.15,
            lr_f2: 0.4,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl PairTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidInput("alpha must be finite and >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::InvalidInput("epochs >= 1 and batch_size >= 2 required".into()));
        }
        Ok(())
    }
}

/// Metrics of one pair-training run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PairMetrics {
    /// Total f2 loss per step, in order.
    pub f2_loss_trace: Vec<f64>,
    pub clean_acc_f1: f64,
    pub clean_acc_f2: f64,
    /// Distance correlation between the two tap feature sets on the test set.
    pub final_cross_dcor: f64,
    /// Steps where the DC term was skipped as degenerate.
    pub dc_skipped: usize,
}

/// The combined training loss of the second model: cross-entropy plus
/// `alpha` times the distance correlation between the two feature taps.
/// A degenerate correlation contributes zero (with a warning) so training
/// can continue.
pub fn independence_loss(
    logits2: &Array2<f64>,
    labels: &[usize],
    g1: &SampleBatch,
    g2: &SampleBatch,
    alpha: f64,
) -> Result<f64> {
    if g1.n() != g2.n() || g1.n() != labels.len() {
        return Err(Error::DimensionMismatch(
            "feature batches and labels must align".into(),
        ));
    }
    let ce = cross_entropy(logits2, labels)?;
    if alpha == 0.0 {
        return Ok(ce);
    }
    let rep = dcor(g1, g2)?;
    if rep.degenerate {
        log::warn!("independence loss: degenerate features, DC term set to 0");
        return Ok(ce);
    }
    Ok(ce + alpha * rep.dcor)
}

/// Distance correlation between the tap features of two models on a batch.
pub fn cross_feature_dcor(f1: &Mlp, f2: &Mlp, x: &SampleBatch) -> Result<f64> {
    let (_, g1) = f1.forward(x)?;
    let (_, g2) = f2.forward(x)?;
    Ok(dcor(&SampleBatch::new(g1)?, &SampleBatch::new(g2)?)?.dcor)
}

/// Train `f1` on cross-entropy alone and `f2` on cross-entropy plus the
/// independence term against the current `f1`, alternating one epoch each.
///
/// With `alpha = 0` the run is bitwise identical to an unconstrained
/// baseline under the same seed: the DC branch is skipped entirely.
pub fn train_independent_pair(
    f1: &Mlp,
    f2: &Mlp,
    train: &LabeledData,
    test: &LabeledData,
    cfg: &PairTrainConfig,
) -> Result<(Mlp, Mlp, PairMetrics)> {
    cfg.validate()?;
    let mut f1 = f1.clone();
    let mut f2 = f2.clone();
    f1.validate()?;
    f2.validate()?;
    let n = train.x.n();
    let mut shuffle = rng::substream(cfg.seed, 3);
    let mut opt1 = Sgd::new(cfg.lr_f1, cfg.momentum);
    let mut opt2 = Sgd::new(cfg.lr_f2, cfg.momentum);
    let mut f2_loss_trace = Vec::new();
    let mut dc_skipped = 0usize;

    for epoch in 0..cfg.epochs {
        // f1 epoch: cross-entropy only
        let perm = rng::permutation(&mut shuffle, n);
        for chunk in perm.chunks(cfg.batch_size) {
            let xb = train.x.select_rows(chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| train.y[i]).collect();
            let trace = f1.forward_trace(&xb)?;
            let d_logits = cross_entropy_grad(&trace.logits, &yb)?;
            let (grads, _) = f1.backward(&trace, &d_logits, None);
            if !grads.is_finite() {
                return Err(Error::Divergence(format!("f1 gradients at epoch {epoch}")));
            }
            opt1.step(&mut f1, &grads)?;
        }

        // f2 epoch: cross-entropy + alpha * dcor against the current f1
        let perm = rng::permutation(&mut shuffle, n);
        for chunk in perm.chunks(cfg.batch_size) {
            let xb = train.x.select_rows(chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| train.y[i]).collect();
            let trace = f2.forward_trace(&xb)?;
            let d_logits = cross_entropy_grad(&trace.logits, &yb)?;
            let mut loss = cross_entropy(&trace.logits, &yb)?;
            let mut d_features = None;
            if cfg.alpha > 0.0 {
                let (_, g1) = f1.forward(&xb)?;
                let g1 = SampleBatch::new(g1)?;
                let g2 = SampleBatch::new(trace.features.clone())
                    .map_err(|_| Error::Divergence(format!("f2 features at epoch {epoch}")))?;
                match dcor_value_grad(&g1, &g2, Wrt::Y) {
                    Ok(res) => {
                        loss += cfg.alpha * res.value;
                        d_features = Some(cfg.alpha * &res.grad);
                    }
                    Err(Error::Degenerate(_)) => {
                        log::warn!("epoch {epoch}: degenerate feature batch, DC term skipped");
                        dc_skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "f2 loss became non-finite at epoch {epoch}"
                )));
            }
            f2_loss_trace.push(loss);
            let (grads, _) = f2.backward(&trace, &d_logits, d_features.as_ref());
            if !grads.is_finite() {
                return Err(Error::Divergence(format!("f2 gradients at epoch {epoch}")));
            }
            opt2.step(&mut f2, &grads)?;
        }
    }

    let metrics = PairMetrics {
        f2_loss_trace,
        clean_acc_f1: f1.accuracy(&test.x, &test.y)?,
        clean_acc_f2: f2.accuracy(&test.x, &test.y)?,
        final_cross_dcor: cross_feature_dcor(&f1, &f2, &test.x)?,
        dc_skipped,
    };
    Ok((f1, f2, metrics))
}

/// One row of a transfer-attack table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AttackRow {
    pub kind: crate::attack::AttackKind,
    pub epsilon: f64,
    /// Accuracy of the attacked (source) model on its own adversarial examples.
    pub f1_accuracy: f64,
    /// Accuracy of the transfer target on those examples.
    pub f2_accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AttackTable {
    pub clean_f1: f64,
    pub clean_f2: f64,
    pub rows: Vec<AttackRow>,
}

/// Generate adversarial examples on `f1` for each attack configuration and
/// report `f2`'s accuracy on them.
pub fn transfer_attack_eval(
    f1: &Mlp,
    f2: &Mlp,
    test: &LabeledData,
    attacks: &[AttackConfig],
) -> Result<AttackTable> {
    let mut rows = Vec::with_capacity(attacks.len());
    for cfg in attacks {
        let adv = cfg.run(f1, &test.x, &test.y)?;
        rows.push(AttackRow {
            kind: cfg.kind,
            epsilon: cfg.epsilon,
            f1_accuracy: f1.accuracy(&adv, &test.y)?,
            f2_accuracy: f2.accuracy(&adv, &test.y)?,
        });
    }
    Ok(AttackTable {
        clean_f1: f1.accuracy(&test.x, &test.y)?,
        clean_f2: f2.accuracy(&test.x, &test.y)?,
        rows,
    })
}

fn check_stream(batches: &[&[SampleBatch]], m: usize) -> Result<usize> {
    let t = batches[0].len();
    if t == 0 {
        return Err(Error::InvalidInput("empty minibatch stream".into()));
    }
    if batches.iter().any(|s| s.len() != t) {
        return Err(Error::DimensionMismatch("streams must have equal length".into()));
    }
    for s in batches {
        if let Some(bad) = s.iter().find(|b| b.n() != m) {
            return Err(Error::InvalidInput(format!(
                "every minibatch must have exactly {m} samples, found one with {}",
                bad.n()
            )));
        }
    }
    Ok(t)
}

/// Minibatch estimator `(m/n) * sum_t dCor(x_t, gt_t)`: the arithmetic
/// mean of per-minibatch distance correlations. Every batch must have
/// exactly `m` samples (ragged tails are rejected).
pub fn stochastic_dc_estimate(
    features: &[SampleBatch],
    embeddings: &[SampleBatch],
    m: usize,
) -> Result<f64> {
    let t = check_stream(&[features, embeddings], m)?;
    let mut total = 0.0;
    for (f, e) in features.iter().zip(embeddings) {
        total += dcor(f, e)?.dcor;
    }
    Ok(total / t as f64)
}

/// Minibatch estimator of the conditioned similarity: the mean over
/// minibatches of `pdcor2(x_t, gt_t; y_t)`.
pub fn stochastic_pdc_estimate(
    feat_x: &[SampleBatch],
    feat_y: &[SampleBatch],
    embeddings: &[SampleBatch],
    m: usize,
) -> Result<f64> {
    if m < 4 {
        return Err(Error::SizeTooSmall {
            what: "stochastic_pdc_estimate",
            required: 4,
            actual: m,
        });
    }
    let t = check_stream(&[feat_x, feat_y, embeddings], m)?;
    let mut total = 0.0;
    for ((x, y), gt) in feat_x.iter().zip(feat_y).zip(embeddings) {
        total += pdcor(x, gt, y)?.pdcor2;
    }
    Ok(total / t as f64)
}

/// Finetuning loss: cross-entropy minus `alpha` times the partial distance
/// correlation of `g1` (conditioned on `g2`) against the embedding; the
/// conditioned similarity is maximized. A degenerate projection
/// contributes zero with a warning.
pub fn pdc_finetune_loss(
    logits1: &Array2<f64>,
    labels: &[usize],
    g1: &SampleBatch,
    g2: &SampleBatch,
    gt: &SampleBatch,
    alpha: f64,
) -> Result<f64> {
    let ce = cross_entropy(logits1, labels)?;
    if alpha == 0.0 {
        return Ok(ce);
    }
    let rep = pdcor(g1, gt, g2)?;
    if rep.degenerate {
        log::warn!("finetune loss: degenerate projection, PDC term set to 0");
        return Ok(ce);
    }
    Ok(ce - alpha * rep.pdcor2)
}

/// Layer-by-layer similarity matrix between two feature dumps.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HeatmapResult {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub n_samples: usize,
    /// `values[i][j] = dcor(rows layer i, cols layer j)`.
    pub values: Vec<Vec<f64>>,
}

/// Compute the similarity heatmap over the first `n_samples` common
/// samples. Cells are independent and computed in parallel; assembly is
/// by index, so the result does not depend on the worker count.
pub fn layer_similarity_heatmap(
    dump_a: &crate::dump::FeatureDump,
    dump_b: &crate::dump::FeatureDump,
    n_samples: usize,
) -> Result<HeatmapResult> {
    if n_samples < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    if dump_a.n() < n_samples || dump_b.n() < n_samples {
        return Err(Error::InvalidInput(format!(
            "dumps hold {} and {} samples, need {n_samples}",
            dump_a.n(),
            dump_b.n()
        )));
    }
    if dump_a.sample_ids[..n_samples] != dump_b.sample_ids[..n_samples] {
        return Err(Error::InvalidInput(
            "dumps do not share sample ids over the requested prefix".into(),
        ));
    }
    let rows: Vec<SampleBatch> = dump_a
        .layers
        .iter()
        .map(|l| l.data.head(n_samples))
        .collect::<Result<_>>()?;
    let cols: Vec<SampleBatch> = dump_b
        .layers
        .iter()
        .map(|l| l.data.head(n_samples))
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|i| (0..cols.len()).map(move |j| (i, j)))
        .collect();
    let cells: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let v = dcor(&rows[i], &cols[j]).map(|r| r.dcor)?;
            Ok(((i, j), v))
        })
        .collect::<Result<_>>()?;

    let mut values = vec![vec![0.0; cols.len()]; rows.len()];
    for ((i, j), v) in cells {
        values[i][j] = v;
    }
    Ok(HeatmapResult {
        row_labels: dump_a.layers.iter().map(|l| l.name.clone()).collect(),
        col_labels: dump_b.layers.iter().map(|l| l.name.clone()).collect(),
        n_samples,
        values,
    })
}

/// Distance correlation between the column-concatenated factor batches and
/// the residual batch. Degenerate inputs give zero.
pub fn residual_independence_loss(
    factors: &[&SampleBatch],
    residual: &SampleBatch,
) -> Result<f64> {
    if factors.is_empty() {
        return Err(Error::InvalidInput("need at least one factor".into()));
    }
    let joined = SampleBatch::concat_columns(factors)?;
    if joined.n() != residual.n() {
        return Err(Error::DimensionMismatch(
            "factors and residual must share a sample count".into(),
        ));
    }
    Ok(dcor(&joined, residual)?.dcor)
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DisentangleWeights {
    pub lambda_cls: f64,
    pub lambda_ent: f64,
    pub lambda_res: f64,
}

impl Default for DisentangleWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 0.1,
            lambda_ent: 0.01,
            lambda_res: 1e-5,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DisentangleLosses {
    /// Cross-entropy summed over the labeled (sample, attribute) pairs.
    pub l_cls: f64,
    /// Softmax entropy summed over the unlabeled pairs.
    pub l_ent: f64,
    /// Residual independence term.
    pub l_res: f64,
    /// `lambda_cls * l_cls + lambda_ent * l_ent + lambda_res * l_res`;
    /// any reconstruction term is added by the caller.
    pub weighted_total: f64,
}

/// The semi-supervised disentanglement loss terms: masked classification
/// cross-entropy, entropy on unlabeled pairs, and the residual
/// independence term, plus their weighted combination.
pub fn disentangle_losses(
    classifier_logits: &[Array2<f64>],
    labels: &[Vec<usize>],
    label_mask: &[Vec<bool>],
    factors: &[&SampleBatch],
    residual: &SampleBatch,
    weights: &DisentangleWeights,
) -> Result<DisentangleLosses> {
    let k = classifier_logits.len();
    if k == 0 || labels.len() != k {
        return Err(Error::DimensionMismatch(
            "one logits matrix and label vector per attribute".into(),
        ));
    }
    let n = classifier_logits[0].nrows();
    if label_mask.len() != n || label_mask.iter().any(|row| row.len() != k) {
        return Err(Error::DimensionMismatch(format!(
            "label mask must be {n} x {k}"
        )));
    }
    for (j, (lg, lb)) in classifier_logits.iter().zip(labels).enumerate() {
        if lg.nrows() != n || lb.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "attribute {j}: logits/labels do not cover all {n} samples"
            )));
        }
    }

    let mut l_cls = 0.0;
    let mut l_ent = 0.0;
    for j in 0..k {
        let logits = &classifier_logits[j];
        let classes = logits.ncols();
        for i in 0..n {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            if label_mask[i][j] {
                let y = labels[j][i];
                if y >= classes {
                    return Err(Error::InvalidInput(format!(
                        "attribute {j}, sample {i}: label {y} out of range"
                    )));
                }
                l_cls -= (exps[y] / sum).ln();
            } else {
                for e in &exps {
                    let p = e / sum;
                    if p > 0.0 {
                        l_ent -= p * p.ln();
                    }
                }
            }
        }
    }
    let l_res = residual_independence_loss(factors, residual)?;
    let weighted_total =
        weights.lambda_cls * l_cls + weights.lambda_ent * l_ent + weights.lambda_res * l_res;
    Ok(DisentangleLosses {
        l_cls,
        l_ent,
        l_res,
        weighted_total,
    })
}

/// Full desk-scale protocol: train a baseline pair (`alpha = 0`) and a
/// DC-regularized pair from identical initializations, then evaluate
/// transfer attacks generated on the shared first model.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeskProtocol {
    pub data: crate::synth::BlobConfig,
    pub hidden: Vec<usize>,
    pub train: PairTrainConfig,
    pub attacks: Vec<AttackConfig>,
}

impl Default for DeskProtocol {
    fn default() -> Self {
        Self {
            data: crate::synth::BlobConfig::default(),
            hidden: vec![128, 64],
            train: PairTrainConfig::default(),
            attacks: vec![
                AttackConfig::fgm(0.03),
                AttackConfig::pgd(0.03),
                AttackConfig::fgm(0.05),
                AttackConfig::pgd(0.05),
                AttackConfig::fgm(0.1),
                AttackConfig::pgd(0.1),
            ],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DeskOutcome {
    pub baseline: PairMetrics,
    pub dc: PairMetrics,
    pub baseline_table: AttackTable,
    pub dc_table: AttackTable,
    /// The first model's trajectory is independent of the second's loss,
    /// so the two runs must produce identical copies of it.
    pub f1_identical: bool,
}

pub fn run_desk_protocol(p: &DeskProtocol) -> Result<DeskOutcome> {
    let data = crate::synth::gaussian_blobs(&p.data, p.train.seed)?;
    let train = LabeledData::new(data.train_x, data.train_y)?;
    let test = LabeledData::new(data.test_x, data.test_y)?;

    let mut dims = vec![p.data.dim];
    dims.extend_from_slice(&p.hidden);
    dims.push(p.data.classes);
    let f1_init = Mlp::new(&dims, &mut rng::substream(p.train.seed, 10))?;
    let f2_init = Mlp::new(&dims, &mut rng::substream(p.train.seed, 11))?;

    let mut base_cfg = p.train.clone();
    base_cfg.alpha = 0.0;
    let (f1_b, f2_b, baseline) =
        train_independent_pair(&f1_init, &f2_init, &train, &test, &base_cfg)?;
    let (f1_d, f2_d, dc) = train_independent_pair(&f1_init, &f2_init, &train, &test, &p.train)?;

    let baseline_table = transfer_attack_eval(&f1_b, &f2_b, &test, &p.attacks)?;
    let dc_table = transfer_attack_eval(&f1_d, &f2_d, &test, &p.attacks)?;
    Ok(DeskOutcome {
        baseline,
        dc,
        baseline_table,
        dc_table,
        f1_identical: f1_b == f1_d,
    })
}
