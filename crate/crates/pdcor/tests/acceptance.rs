//! Acceptance suite: one test per criterion, each printing a PASS line
//! after its assertions hold. Run with `cargo test --test acceptance`.

use ndarray::{Array1, Array2};
use pdcor::attack::AttackConfig;
use pdcor::batch::SampleBatch;
use pdcor::bsg::{bsg_train, BsgConfig, CenteredCoupling, ConstraintMode, PairObjective};
use pdcor::dcor::{dcor, pearson};
use pdcor::dump::{Dtype, DumpLayer, FeatureDump};
use pdcor::error::Error;
use pdcor::experiments::{
    disentangle_losses, layer_similarity_heatmap, residual_independence_loss,
    run_desk_protocol, stochastic_dc_estimate, stochastic_pdc_estimate, DeskProtocol,
    DisentangleWeights, PairTrainConfig, Schedule,
};
use pdcor::grad::{dcor_value_grad, finite_diff_check, pdcor_value_grad, Wrt};
use pdcor::nn::{Mlp, MlpGrads};
use pdcor::pdc::{
    bias_corrected_dcor2, pdcor, pdcov, project_orthogonal, u_centered_of, u_inner,
};
use pdcor::reference;
use pdcor::rng;
use pdcor::synth::{fig1_sampler, gaussian_blobs, BlobConfig, Fig1Case};

fn normal_batch(seed: u64, n: usize, p: usize) -> SampleBatch {
    SampleBatch::new(rng::standard_normal_matrix(&mut rng::seeded(seed), n, p)).unwrap()
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-30)
}

#[test]
fn criterion_01_oracle_equivalence() {
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let mut r = rng::substream(4242, i);
        // n in [4, 64], dims in [1, 8]
        let n = 4 + (i as usize * 7) % 61;
        let p = 1 + (i as usize) % 8;
        let q = 1 + (i as usize + 3) % 8;
        let x = SampleBatch::new(rng::standard_normal_matrix(&mut r, n, p)).unwrap();
        let y = SampleBatch::new(rng::standard_normal_matrix(&mut r, n, q)).unwrap();
        let z = SampleBatch::new(rng::standard_normal_matrix(&mut r, n, 2)).unwrap();

        worst = worst.max(rel_err(
            dcor(&x, &y).unwrap().dcor,
            reference::naive_dcor(&x, &y).unwrap(),
        ));
        worst = worst.max(rel_err(
            u_inner(&u_centered_of(&x).unwrap(), &u_centered_of(&y).unwrap()).unwrap(),
            reference::naive_u_inner(&x, &y).unwrap(),
        ));
        worst = worst.max(rel_err(
            pdcov(&x, &y, &z).unwrap(),
            reference::naive_pdcov(&x, &y, &z).unwrap(),
        ));
        worst = worst.max(rel_err(
            pdcor(&x, &y, &z).unwrap().pdcor2,
            reference::naive_pdcor2(&x, &y, &z).unwrap(),
        ));
    }
    assert!(worst < 1e-12, "worst relative error {worst:.3e}");
    println!("criterion 01 PASS: oracle equivalence, worst rel err {worst:.3e}");
}

#[test]
fn criterion_02_dcor_properties() {
    let mut worst_self = 0.0f64;
    let mut worst_range = 0.0f64;
    let mut worst_invariance = 0.0f64;
    for i in 0..60u64 {
        let mut r = rng::substream(777, i);
        let n = 3 + (i as usize) % 30;
        let p = 1 + (i as usize) % 6;
        let q = 1 + (i as usize + 1) % 6;
        let x = SampleBatch::new(rng::standard_normal_matrix(&mut r, n, p)).unwrap();
        let y = SampleBatch::new(rng::standard_normal_matrix(&mut r, n, q)).unwrap();

        // self-correlation and range
        worst_self = worst_self.max((dcor(&x, &x).unwrap().dcor - 1.0).abs());
        let rep = dcor(&x, &y).unwrap();
        worst_range = worst_range.max((-rep.dcor).max(rep.dcor - 1.0 - 1e-9));

        // symmetry is exact
        assert_eq!(rep.dcor, dcor(&y, &x).unwrap().dcor, "symmetry at instance {i}");

        // translation and positive scaling of x
        let a = 0.25 + 3.0 * ((i % 7) as f64) / 7.0;
        let shift = rng::standard_normal_matrix(&mut r, 1, p);
        let mut tx = x.as_array() * a;
        for mut row in tx.rows_mut() {
            row += &shift.row(0);
        }
        let scaled = dcor(&SampleBatch::new(tx).unwrap(), &y).unwrap();
        worst_invariance = worst_invariance.max((scaled.dcor - rep.dcor).abs());

        // orthogonal transform of x's rows
        let qmat = random_orthogonal(p, 5000 + i);
        let rx = x.as_array().dot(&qmat.t());
        let rotated = dcor(&SampleBatch::new(rx).unwrap(), &y).unwrap();
        worst_invariance = worst_invariance.max((rotated.dcor - rep.dcor).abs());
    }
    // degenerate branch
    let x = normal_batch(11, 10, 2);
    let constant = SampleBatch::from_rows(10, 1, vec![2.0; 10]).unwrap();
    let rep = dcor(&x, &constant).unwrap();
    assert!(rep.degenerate && rep.dcor == 0.0);

    assert!(worst_self < 1e-12, "self-correlation error {worst_self:.3e}");
    assert!(worst_range <= 0.0, "range violation {worst_range:.3e}");
    assert!(worst_invariance < 1e-9, "invariance error {worst_invariance:.3e}");
    println!(
        "criterion 02 PASS: properties (self {worst_self:.2e}, invariance {worst_invariance:.2e})"
    );
}

/// Gram-Schmidt on a seeded square matrix.
fn random_orthogonal(p: usize, seed: u64) -> Array2<f64> {
    let m = rng::standard_normal_matrix(&mut rng::seeded(seed), p, p);
    let mut q = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut v = m.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k);
            let proj = v.dot(&qk);
            v = &v - &(proj * &qk.to_owned());
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(&v / norm));
    }
    q
}

#[test]
fn criterion_03_independence_detection() {
    // case (d): independent Gaussians over 10 seeds
    let mut worst_d = 0.0f64;
    let mut worst_d_pearson = 0.0f64;
    for seed in 0..10 {
        let (x, y) = fig1_sampler(Fig1Case::D, 5000, seed).unwrap();
        worst_d = worst_d.max(dcor(&x, &y).unwrap().dcor);
        let xv: Vec<f64> = x.view().column(0).to_vec();
        let yv: Vec<f64> = y.view().column(0).to_vec();
        worst_d_pearson = worst_d_pearson.max(pearson(&xv, &yv).unwrap().abs());
    }
    assert!(worst_d < 0.08, "case d worst dcor {worst_d}");
    assert!(worst_d_pearson < 0.05, "case d worst |pearson| {worst_d_pearson}");

    // case (a): Pearson-blind quadratic dependence
    let (x, y) = fig1_sampler(Fig1Case::A, 5000, 5).unwrap();
    let xv: Vec<f64> = x.view().column(0).to_vec();
    let yv: Vec<f64> = y.view().column(0).to_vec();
    let pe_a = pearson(&xv, &yv).unwrap();
    let dc_a = dcor(&x, &y).unwrap().dcor;
    assert!(pe_a.abs() < 0.1, "case a pearson {pe_a}");
    assert!(dc_a > 0.3, "case a dcor {dc_a}");

    // case (c): analytic population Pearson 0.75/sqrt(1.25)
    let (x, y) = fig1_sampler(Fig1Case::C, 10000, 2).unwrap();
    let xv: Vec<f64> = x.view().column(0).to_vec();
    let yv: Vec<f64> = y.view().column(0).to_vec();
    let pe_c = pearson(&xv, &yv).unwrap();
    assert!((pe_c - 0.6708).abs() < 0.05, "case c pearson {pe_c}");

    println!(
        "criterion 03 PASS: case d dcor<{worst_d:.3}, case a (pearson {pe_a:.3}, dcor {dc_a:.3}), case c pearson {pe_c:.4}"
    );
}

#[test]
fn criterion_04_u_statistic_unbiasedness() {
    // small-sample mean of the unbiased estimator
    let draws = 20_000usize;
    let n_small = 8;
    let mut values = Vec::with_capacity(draws);
    for i in 0..draws {
        let (x, y) = fig1_sampler(Fig1Case::C, n_small, 31_000 + i as u64).unwrap();
        let v = u_inner(&u_centered_of(&x).unwrap(), &u_centered_of(&y).unwrap()).unwrap();
        values.push(v);
    }
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();

    // large-sample estimate of the population squared distance covariance,
    // via the closed form V2 = S1/n^2 - 2 P / n + g_a g_b with streaming sums
    let n_big = 100_000usize;
    let (x, y) = fig1_sampler(Fig1Case::C, n_big, 999).unwrap();
    let xv: Vec<f64> = x.view().column(0).to_vec();
    let yv: Vec<f64> = y.view().column(0).to_vec();
    let mut row_a = vec![0.0f64; n_big];
    let mut row_b = vec![0.0f64; n_big];
    let mut s1 = 0.0f64;
    for k in 0..n_big {
        let (xk, yk) = (xv[k], yv[k]);
        let mut ra = 0.0;
        let mut rb = 0.0;
        let mut s1k = 0.0;
        for l in 0..n_big {
            let a = (xk - xv[l]).abs();
            let b = (yk - yv[l]).abs();
            ra += a;
            rb += b;
            s1k += a * b;
        }
        row_a[k] = ra / n_big as f64;
        row_b[k] = rb / n_big as f64;
        s1 += s1k;
    }
    let ga = row_a.iter().sum::<f64>() / n_big as f64;
    let gb = row_b.iter().sum::<f64>() / n_big as f64;
    let p_term = row_a.iter().zip(&row_b).map(|(a, b)| a * b).sum::<f64>() / n_big as f64;
    let v2_large = s1 / (n_big as f64 * n_big as f64) - 2.0 * p_term + ga * gb;

    let gap = (mean - v2_large).abs();
    assert!(
        gap <= 3.0 * se,
        "mean {mean:.6} vs large-sample {v2_large:.6}, gap {gap:.2e} > 3 SE {:.2e}",
        3.0 * se
    );
    println!(
        "criterion 04 PASS: unbiasedness mean {mean:.5} vs {v2_large:.5} (|gap| {gap:.2e} <= 3se {:.2e})",
        3.0 * se
    );
}

#[test]
fn criterion_05_partial_identities() {
    // pdcov(x, y; x) vanishes
    let mut worst_self = 0.0f64;
    for i in 0..20u64 {
        let x = normal_batch(6000 + i, 12, 3);
        let y = normal_batch(6100 + i, 12, 2);
        worst_self = worst_self.max(pdcov(&x, &y, &x).unwrap().abs());
    }
    assert!(worst_self < 1e-12, "pdcov self-conditioning {worst_self:.3e}");

    // constant z reduces pdcor to the bias-corrected ratio
    let mut worst_const = 0.0f64;
    for i in 0..20u64 {
        let x = normal_batch(6200 + i, 12, 3);
        let y = normal_batch(6300 + i, 12, 2);
        let z = SampleBatch::from_rows(12, 1, vec![1.0; 12]).unwrap();
        let a = pdcor(&x, &y, &z).unwrap().pdcor2;
        let b = bias_corrected_dcor2(&x, &y).unwrap();
        worst_const = worst_const.max((a - b).abs());
    }
    assert!(worst_const < 1e-9, "constant-z reduction {worst_const:.3e}");

    // orthogonality of the projection residual on 100 instances
    let mut worst_orth = 0.0f64;
    for i in 0..100u64 {
        let mut r = rng::substream(888, i);
        let n = 5 + (i as usize) % 20;
        let a = u_centered_of(&SampleBatch::new(rng::standard_normal_matrix(&mut r, n, 3)).unwrap())
            .unwrap();
        let c = u_centered_of(&SampleBatch::new(rng::standard_normal_matrix(&mut r, n, 2)).unwrap())
            .unwrap();
        let proj = project_orthogonal(&a, &c).unwrap();
        worst_orth = worst_orth.max(u_inner(&proj.residual, &c).unwrap().abs());
    }
    assert!(worst_orth < 1e-9, "orthogonality {worst_orth:.3e}");
    println!(
        "criterion 05 PASS: identities (self {worst_self:.1e}, const-z {worst_const:.1e}, orth {worst_orth:.1e})"
    );
}

#[test]
fn criterion_06_gradient_correctness() {
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let mut r = rng::substream(2024, i);
        let p = 2 + (i as usize) % 6;
        let q = 1 + (i as usize) % 4;
        let x = SampleBatch::new(rng::standard_normal_matrix(&mut r, 16, p)).unwrap();
        let y = SampleBatch::new(rng::standard_normal_matrix(&mut r, 16, q)).unwrap();
        let z = SampleBatch::new(rng::standard_normal_matrix(&mut r, 16, 2)).unwrap();
        let d1 = finite_diff_check(|b| dcor_value_grad(b, &y, Wrt::X), &x, 1e-5).unwrap();
        let d2 = finite_diff_check(|b| pdcor_value_grad(b, &y, &z), &x, 1e-5).unwrap();
        worst = worst.max(d1).max(d2);
    }
    assert!(worst < 1e-6, "worst fd discrepancy {worst:.3e}");
    println!("criterion 06 PASS: gradients vs central differences, worst {worst:.3e}");
}

/// Quadratic coupling of two single-layer linear models; the proximal
/// algorithm's convex surrogate. The minimum over the two responses has
/// the closed form p* = (2a+b)/3, q* = (a+2b)/3.
struct QuadraticCoupling {
    a: Array1<f64>,
    b: Array1<f64>,
}

impl QuadraticCoupling {
    fn respond(model: &Mlp, batch: &SampleBatch) -> (Array1<f64>, Array1<f64>) {
        let u = batch
            .as_array()
            .mean_axis(ndarray::Axis(0))
            .expect("nonempty batch");
        let p = model.layers[0].weight.dot(&u) + &model.layers[0].bias;
        (p, u)
    }

    fn value_at(&self, fx: &Mlp, fy: &Mlp, xb: &SampleBatch, yb: &SampleBatch) -> f64 {
        let (p, _) = Self::respond(fx, xb);
        let (q, _) = Self::respond(fy, yb);
        let e1 = (&p - &self.a).mapv(|v| v * v).sum();
        let e2 = (&q - &self.b).mapv(|v| v * v).sum();
        let e3 = (&p - &q).mapv(|v| v * v).sum();
        0.5 * (e1 + e2 + e3)
    }

    fn minimum(&self) -> f64 {
        let p = (2.0 * &self.a + &self.b) / 3.0;
        let q = (&self.a + 2.0 * &self.b) / 3.0;
        let e1 = (&p - &self.a).mapv(|v| v * v).sum();
        let e2 = (&q - &self.b).mapv(|v| v * v).sum();
        let e3 = (&p - &q).mapv(|v| v * v).sum();
        0.5 * (e1 + e2 + e3)
    }
}

impl PairObjective for QuadraticCoupling {
    fn grad_x(
        &self,
        fx: &Mlp,
        fy: &Mlp,
        xb: &SampleBatch,
        yb: &SampleBatch,
    ) -> pdcor::Result<(f64, MlpGrads)> {
        let (p, u) = Self::respond(fx, xb);
        let (q, _) = Self::respond(fy, yb);
        let dp = (&p - &self.a) + (&p - &q);
        let mut grads = MlpGrads::zeros_like(fx);
        for i in 0..dp.len() {
            for j in 0..u.len() {
                grads.weights[0][[i, j]] = dp[i] * u[j];
            }
            grads.biases[0][i] = dp[i];
        }
        Ok((self.value_at(fx, fy, xb, yb), grads))
    }

    fn grad_y(
        &self,
        fx: &Mlp,
        fy: &Mlp,
        xb: &SampleBatch,
        yb: &SampleBatch,
    ) -> pdcor::Result<(f64, MlpGrads)> {
        let (p, _) = Self::respond(fx, xb);
        let (q, v) = Self::respond(fy, yb);
        let dq = (&q - &self.b) - (&p - &q);
        let mut grads = MlpGrads::zeros_like(fy);
        for i in 0..dq.len() {
            for j in 0..v.len() {
                grads.weights[0][[i, j]] = dq[i] * v[j];
            }
            grads.biases[0][i] = dq[i];
        }
        Ok((self.value_at(fx, fy, xb, yb), grads))
    }

    fn monitor(&self, fx: &Mlp, fy: &Mlp, xb: &SampleBatch, yb: &SampleBatch) -> pdcor::Result<f64> {
        Ok(self.value_at(fx, fy, xb, yb))
    }
}

#[test]
fn criterion_07_bsg_behavior() {
    // convex surrogate
    let mut r = rng::seeded(3030);
    let objective = QuadraticCoupling {
        a: Array1::from_vec(vec![1.0, -2.0, 0.5]),
        b: Array1::from_vec(vec![-1.0, 1.5, 2.0]),
    };
    let fx0 = Mlp::new(&[4, 3], &mut r).unwrap();
    let fy0 = Mlp::new(&[4, 3], &mut r).unwrap();
    let batch_x = normal_batch(3100, 8, 4);
    let batch_y = normal_batch(3200, 8, 4);
    let phi_star = objective.minimum();
    let phi_init = objective.value_at(&fx0, &fy0, &batch_x, &batch_y);

    let phi_avg_at = |t: usize| -> (f64, f64, f64) {
        let stream: Vec<_> = (0..t).map(|_| (batch_x.clone(), batch_y.clone())).collect();
        let cfg = BsgConfig {
            eta: 2.0,
            total_steps: t,
            batch_size: 8,
            constraint_mode: ConstraintMode::None,
            penalty_weight: 0.0,
            trace_every: 1,
        };
        let out = bsg_train(&fx0, &fy0, &stream, &objective, &cfg).unwrap();
        let phi_avg = objective.value_at(&out.fx_avg, &out.fy_avg, &batch_x, &batch_y);
        let first = &out.trace.records[0];
        let last = out.trace.records.last().unwrap();
        let g0 = (first.grad_norm_x.powi(2) + first.grad_norm_y.powi(2)).sqrt();
        let g1 = (last.grad_norm_x.powi(2) + last.grad_norm_y.powi(2)).sqrt();
        (phi_avg, g0, g1)
    };

    let checkpoints: Vec<usize> = (1..=10).map(|k| k * 40).collect();
    let values: Vec<f64> = checkpoints.iter().map(|&t| phi_avg_at(t).0).collect();
    let (phi_400, g_init, g_final) = phi_avg_at(400);

    assert!(
        phi_400 < phi_init,
        "averaged objective {phi_400} not below initial {phi_init}"
    );
    assert!(
        phi_400 - phi_star < 0.5 * (phi_init - phi_star),
        "averaged iterate made too little progress: {phi_400} vs min {phi_star}"
    );
    let decreasing = values.windows(2).filter(|w| w[1] <= w[0] + 1e-9).count();
    assert!(
        decreasing * 10 >= values.len() * 7,
        "averaged objective not monotone on average: {values:?}"
    );
    assert!(
        g_final < 0.1 * g_init,
        "final gradient norm {g_final} not below 10% of initial {g_init}"
    );

    // with the constraint disabled, bsg is bitwise alternating SGD
    let mut r = rng::seeded(3300);
    let fx = Mlp::new(&[3, 6, 4, 2], &mut r).unwrap();
    let fy = Mlp::new(&[2, 5, 4, 2], &mut r).unwrap();
    let t = 15usize;
    let stream: Vec<_> = (0..t as u64)
        .map(|i| (normal_batch(3400 + i, 8, 3), normal_batch(3500 + i, 8, 2)))
        .collect();
    let cfg = BsgConfig {
        eta: 0.05,
        total_steps: t,
        batch_size: 8,
        constraint_mode: ConstraintMode::None,
        penalty_weight: 0.0,
        trace_every: 1,
    };
    let out = bsg_train(&fx, &fy, &stream, &CenteredCoupling, &cfg).unwrap();

    let lr = cfg.step_size();
    let mut ax = fx.clone();
    let mut ay = fy.clone();
    for (xb, yb) in &stream {
        let gx = match CenteredCoupling.grad_x(&ax, &ay, xb, yb) {
            Ok((_, g)) => g,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        ax = pdcor::nn::sgd_step(&ax, &gx, lr).unwrap();
        let gy = match CenteredCoupling.grad_y(&ax, &ay, xb, yb) {
            Ok((_, g)) => g,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        ay = pdcor::nn::sgd_step(&ay, &gy, lr).unwrap();
    }
    assert_eq!(out.fx_final, ax, "X block not bitwise equal to alternating SGD");
    assert_eq!(out.fy_final, ay, "Y block not bitwise equal to alternating SGD");

    println!(
        "criterion 07 PASS: convex surrogate (avg {phi_400:.4} -> min {phi_star:.4}, grad ratio {:.3}), bitwise SGD equivalence",
        g_final / g_init
    );
}

#[test]
fn criterion_09_stochastic_estimators_and_heatmap() {
    // term-wise recomputation at 1e-12
    let feats: Vec<SampleBatch> = (0..8).map(|i| normal_batch(9000 + i, 64, 6)).collect();
    let embs: Vec<SampleBatch> = (0..8).map(|i| normal_batch(9100 + i, 64, 4)).collect();
    let other: Vec<SampleBatch> = (0..8).map(|i| normal_batch(9200 + i, 64, 5)).collect();

    let est = stochastic_dc_estimate(&feats, &embs, 64).unwrap();
    let mean = feats
        .iter()
        .zip(&embs)
        .map(|(f, e)| dcor(f, e).unwrap().dcor)
        .sum::<f64>()
        / 8.0;
    assert!((est - mean).abs() < 1e-12);

    let est_p = stochastic_pdc_estimate(&feats, &other, &embs, 64).unwrap();
    let mean_p = feats
        .iter()
        .zip(&other)
        .zip(&embs)
        .map(|((x, y), gt)| pdcor(x, gt, y).unwrap().pdcor2)
        .sum::<f64>()
        / 8.0;
    assert!((est_p - mean_p).abs() < 1e-12);

    // within-model heatmap of an 8-layer desk MLP on 256 seeded samples
    let blobs = gaussian_blobs(
        &BlobConfig {
            train: 256,
            test: 16,
            ..BlobConfig::default()
        },
        4141,
    )
    .unwrap();
    let mut r = rng::seeded(4242);
    let mut model = Mlp::new(&[64, 96, 80, 64, 48, 40, 32, 24, 10], &mut r).unwrap();
    // rescale to He-style magnitudes so activations survive eight layers
    for layer in &mut model.layers {
        layer.weight *= 6.0f64.sqrt();
    }
    let acts = model.layer_activations(&blobs.train_x).unwrap();
    assert_eq!(acts.len(), 8);
    let layers: Vec<DumpLayer> = acts
        .into_iter()
        .enumerate()
        .map(|(i, a)| DumpLayer {
            name: format!("layer{}", i + 1),
            dtype: Dtype::F64,
            data: SampleBatch::new(a).unwrap(),
        })
        .collect();
    let dump = FeatureDump::new("desk-mlp", (0..256).collect(), layers).unwrap();
    let hm = layer_similarity_heatmap(&dump, &dump, 256).unwrap();

    let k = hm.values.len();
    for i in 0..k {
        assert!(
            (hm.values[i][i] - 1.0).abs() <= 1e-9,
            "diagonal entry {i} = {}",
            hm.values[i][i]
        );
        for j in 0..k {
            let v = hm.values[i][j];
            assert!((0.0..=1.0 + 1e-9).contains(&v), "entry ({i},{j}) = {v}");
            assert!(
                (v - hm.values[j][i]).abs() < 1e-12,
                "asymmetry at ({i},{j})"
            );
        }
    }
    let mut min_adjacent = f64::INFINITY;
    for i in 0..k - 1 {
        min_adjacent = min_adjacent.min(hm.values[i][i + 1]);
    }
    let first_last = hm.values[0][k - 1];
    assert!(
        min_adjacent > first_last,
        "adjacent similarity {min_adjacent} not above first-vs-last {first_last}"
    );
    println!(
        "criterion 09 PASS: estimators term-wise exact; heatmap adjacent {min_adjacent:.3} > first-last {first_last:.3}"
    );
}

#[test]
fn criterion_10_disentangle_composition() {
    // weighted composition at 1e-12
    let mut r = rng::seeded(5050);
    let logits = vec![
        rng::standard_normal_matrix(&mut r, 10, 4),
        rng::standard_normal_matrix(&mut r, 10, 2),
        rng::standard_normal_matrix(&mut r, 10, 6),
    ];
    let labels = vec![
        (0..10).map(|i| i % 4).collect::<Vec<_>>(),
        (0..10).map(|i| i % 2).collect::<Vec<_>>(),
        (0..10).map(|i| i % 6).collect::<Vec<_>>(),
    ];
    let mask: Vec<Vec<bool>> = (0..10)
        .map(|i| vec![i % 2 == 0, i % 3 == 0, i % 5 == 0])
        .collect();
    let f1 = normal_batch(5151, 10, 3);
    let f2 = normal_batch(5252, 10, 2);
    let res = normal_batch(5353, 10, 4);
    let w = DisentangleWeights {
        lambda_cls: 0.1,
        lambda_ent: 0.01,
        lambda_res: 1e-5,
    };
    let out = disentangle_losses(&logits, &labels, &mask, &[&f1, &f2], &res, &w).unwrap();
    let want = 0.1 * out.l_cls + 0.01 * out.l_ent + 1e-5 * out.l_res;
    assert!((out.weighted_total - want).abs() < 1e-12);

    // residual independence at n = 2000
    let fa = normal_batch(5454, 2000, 2);
    let fb = normal_batch(5555, 2000, 1);
    let residual = normal_batch(5656, 2000, 2);
    let v = residual_independence_loss(&[&fa, &fb], &residual).unwrap();
    assert!(v < 0.1, "independent residual loss {v}");
    println!("criterion 10 PASS: weighted composition exact; residual loss {v:.4} < 0.1");
}

#[test]
fn criterion_11_io_round_trip_and_errors() {
    // 100 generated dumps round-trip bit-exactly
    for i in 0..100u64 {
        let mut r = rng::substream(6789, i);
        let n = 2 + (i as usize) % 12;
        let n_layers = 1 + (i as usize) % 4;
        let layers: Vec<DumpLayer> = (0..n_layers)
            .map(|li| {
                let p = 1 + (li + i as usize) % 7;
                let dtype = if (li + i as usize) % 2 == 0 {
                    Dtype::F64
                } else {
                    Dtype::F32
                };
                let mut data = rng::standard_normal_matrix(&mut r, n, p);
                if dtype == Dtype::F32 {
                    data = data.mapv(|v| (v as f32) as f64);
                }
                DumpLayer {
                    name: format!("layer{li}"),
                    dtype,
                    data: SampleBatch::new(data).unwrap(),
                }
            })
            .collect();
        let dump = FeatureDump::new(&format!("model{i}"), (0..n as u64).collect(), layers).unwrap();
        let bytes = dump.to_bytes().unwrap();
        let back = FeatureDump::from_bytes(&bytes).unwrap();
        assert_eq!(back, dump, "round trip failed at instance {i}");
        assert_eq!(back.to_bytes().unwrap(), bytes, "bytes differ at instance {i}");
    }

    // corrupted fixtures map to their distinct errors and exit code 2
    let dump = {
        let mut r = rng::seeded(6790);
        FeatureDump::new(
            "fixture",
            (0..5).collect(),
            vec![DumpLayer {
                name: "h1".into(),
                dtype: Dtype::F64,
                data: SampleBatch::new(rng::standard_normal_matrix(&mut r, 5, 3)).unwrap(),
            }],
        )
        .unwrap()
    };
    let good = dump.to_bytes().unwrap();

    let mut bad_magic = good.clone();
    bad_magic[1] = b'X';
    let e = FeatureDump::from_bytes(&bad_magic).unwrap_err();
    assert!(matches!(e, Error::BadMagic));
    assert_eq!(e.exit_code(), 2);

    let mut bad_version = good.clone();
    bad_version[4..8].copy_from_slice(&7u32.to_le_bytes());
    let e = FeatureDump::from_bytes(&bad_version).unwrap_err();
    assert!(matches!(e, Error::VersionMismatch { found: 7, .. }));
    assert_eq!(e.exit_code(), 2);

    let e = FeatureDump::from_bytes(&good[..good.len() - 1]).unwrap_err();
    assert!(matches!(e, Error::TruncatedPayload { .. }));
    assert_eq!(e.exit_code(), 2);

    // repeated CLI runs with a fixed config are byte-identical
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let cfg = serde_json::json!({
            "seed": 7,
            "out_dir": out,
            "data": {"classes": 4, "dim": 16, "train": 200, "test": 80,
                      "mean_range": 0.14, "latent_dim": 4, "latent_scale": 0.117, "noise_sigma": 0.078},
            "hidden": [32, 16],
            "train": {"alpha": 0.05, "epochs": 2, "batch_size": 32, "schedule": "alternating_epochs",
                       "lr_f1": 0.1, "lr_f2": 0.1, "momentum": 0.9, "seed": 0},
            "attacks": [{"kind": "pgd", "epsilon": 0.05, "pgd_iters": 5}]
        });
        let cfg_path = dir.path().join(format!(
            "cfg_{}.json",
            out.file_name().unwrap().to_string_lossy()
        ));
        std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let code = pdcor::cli::dispatch([
            "pdcor".to_string(),
            "attack-eval".to_string(),
            "--config".to_string(),
            cfg_path.to_string_lossy().into_owned(),
        ]);
        assert_eq!(code, 0);
    }
    let ma = std::fs::read(out_a.join("metrics.json")).unwrap();
    let mb = std::fs::read(out_b.join("metrics.json")).unwrap();
    assert_eq!(ma, mb, "metrics.json not byte-identical across runs");
    let ca = std::fs::read(out_a.join("attack_table.csv")).unwrap();
    let cb = std::fs::read(out_b.join("attack_table.csv")).unwrap();
    assert_eq!(ca, cb, "attack_table.csv not byte-identical across runs");

    println!("criterion 11 PASS: 100 round trips bit-exact, error codes distinct, runs byte-identical");
}

// Criterion 8 runs the committed reference configuration; the thresholds
// asserted below are the criterion's, the seed pins the run.
const DESK_SEED: u64 = 3;

fn desk_protocol() -> DeskProtocol {
    DeskProtocol {
        data: BlobConfig {
            classes: 10,
            dim: 64,
            train: 5000,
            test: 1000,
            mean_range: 0.14,
            latent_dim: 8,
            latent_scale: 0.117,
            noise_sigma: 0.078,
        },
        hidden: vec![128, 64],
        train: PairTrainConfig {
            alpha: 0.05,
            epochs: 20,
            batch_size: 64,
            schedule: Schedule::AlternatingEpochs,
            lr_f1: 0.15,
            lr_f2: 0.5,
            momentum: 0.9,
            seed: DESK_SEED,
        },
        attacks: vec![
            AttackConfig::pgd(0.03),
            AttackConfig::pgd(0.05),
            AttackConfig::pgd(0.1),
        ],
    }
}

#[test]
fn criterion_08_desk_trend_reproduction() {
    let outcome = run_desk_protocol(&desk_protocol()).unwrap();
    assert!(outcome.f1_identical, "f1 must be unaffected by f2's loss");

    let base = &outcome.baseline;
    let dc = &outcome.dc;

    // (i) cross-feature dcor at most half the baseline's
    let ratio = dc.final_cross_dcor / base.final_cross_dcor;
    assert!(
        ratio <= 0.5,
        "(i) dcor ratio {ratio:.3} ({:.3} / {:.3})",
        dc.final_cross_dcor,
        base.final_cross_dcor
    );

    // (ii) transferred PGD accuracy at least the baseline's at every epsilon
    for (rb, rd) in outcome
        .baseline_table
        .rows
        .iter()
        .zip(&outcome.dc_table.rows)
    {
        assert_eq!(rb.epsilon, rd.epsilon);
        assert!(
            rd.f2_accuracy >= rb.f2_accuracy,
            "(ii) at eps {}: dc {:.3} < base {:.3}",
            rb.epsilon,
            rd.f2_accuracy,
            rb.f2_accuracy
        );
    }

    // (iii) clean accuracy within 3 points of the baseline
    let acc_gap = (dc.clean_acc_f2 - base.clean_acc_f2).abs();
    assert!(acc_gap <= 0.03, "(iii) clean accuracy gap {acc_gap:.4}");

    println!(
        "criterion 08 PASS: ratio {ratio:.3}, transfers {:?} >= {:?}, clean gap {acc_gap:.4}",
        outcome
            .dc_table
            .rows
            .iter()
            .map(|r| (r.epsilon, r.f2_accuracy))
            .collect::<Vec<_>>(),
        outcome
            .baseline_table
            .rows
            .iter()
            .map(|r| (r.epsilon, r.f2_accuracy))
            .collect::<Vec<_>>()
    );
}
