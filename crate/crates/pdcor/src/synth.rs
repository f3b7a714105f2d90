//! Synthetic data: the four bivariate example distributions used to
//! contrast Pearson and distance correlation, and the seeded Gaussian-blob
//! classification task used by the desk-scale training protocols.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::rng;

/// The four example distributions:
///
/// * `A`: `y = 0.5 x^2 + 0.75 e` (symmetric quadratic; Pearson blind)
/// * `B`: `y = 0.15 x^3 + 0.75 e + 2.5` (monotone cubic)
/// * `C`: bivariate normal, mean `(0, 2.5)`, covariance `[[1, .75], [.75, 1.25]]`
/// * `D`: as `C` but with zero covariance (independent)
///
/// `x ~ N(0,1)` in cases A and B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fig1Case {
    A,
    B,
    C,
    D,
}

impl std::str::FromStr for Fig1Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Fig1Case::A),
            "b" => Ok(Fig1Case::B),
            "c" => Ok(Fig1Case::C),
            "d" => Ok(Fig1Case::D),
            other => Err(Error::InvalidInput(format!("unknown case '{other}'"))),
        }
    }
}

/// Draw `n` paired samples from the chosen case. Deterministic given seed.
pub fn fig1_sampler(case: Fig1Case, n: usize, seed: u64) -> Result<(SampleBatch, SampleBatch)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2, got {n}")));
    }
    let mut r = rng::substream(seed, 0);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = r.sample(StandardNormal);
        let z2: f64 = r.sample(StandardNormal);
        let (x, y) = match case {
            Fig1Case::A => (z1, 0.5 * z1 * z1 + 0.75 * z2),
            Fig1Case::B => (z1, 0.15 * z1 * z1 * z1 + 0.75 * z2 + 2.5),
            // y | x: slope 0.75, residual variance 1.25 - 0.75^2 = 0.6875
            Fig1Case::C => (z1, 2.5 + 0.75 * z1 + (0.6875f64).sqrt() * z2),
            Fig1Case::D => (z1, 2.5 + (1.25f64).sqrt() * z2),
        };
        xs.push(x);
        ys.push(y);
    }
    Ok((SampleBatch::from_column(&xs)?, SampleBatch::from_column(&ys)?))
}

/// Configuration of the Gaussian-blob classification task.
///
/// Class means are drawn uniformly from `[-mean_range, mean_range]^dim`;
/// each sample adds a shared low-rank latent component and isotropic noise.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BlobConfig {
    pub classes: usize,
    pub dim: usize,
    pub train: usize,
    pub test: usize,
    pub mean_range: f64,
    pub latent_dim: usize,
    pub latent_scale: f64,
    pub noise_sigma: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 64,
            train: 5000,
            test: 1000,
            mean_range: 0.14,
            latent_dim: 8,
            latent_scale: 0.117,
            noise_sigma: 0.078,
        }
    }
}

/// A labeled train/test split.
#[derive(Debug, Clone)]
pub struct BlobDataset {
    pub train_x: SampleBatch,
    pub train_y: Vec<usize>,
    pub test_x: SampleBatch,
    pub test_y: Vec<usize>,
}

pub fn gaussian_blobs(cfg: &BlobConfig, seed: u64) -> Result<BlobDataset> {
    if cfg.classes < 2 || cfg.dim == 0 || cfg.train == 0 || cfg.test == 0 {
        return Err(Error::InvalidInput("degenerate blob configuration".into()));
    }
    let mut setup = rng::substream(seed, 0);
    let means = Array2::from_shape_fn((cfg.classes, cfg.dim), |_| {
        setup.gen_range(-cfg.mean_range..cfg.mean_range)
    });
    let directions = rng::standard_normal_matrix(&mut setup, cfg.latent_dim, cfg.dim)
        / (cfg.dim as f64).sqrt();

    let draw = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Result<(SampleBatch, Vec<usize>)> {
        let mut x = Array2::zeros((n, cfg.dim));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = r.gen_range(0..cfg.classes);
            labels.push(y);
            let z: Vec<f64> = (0..cfg.latent_dim).map(|_| r.sample(StandardNormal)).collect();
            for j in 0..cfg.dim {
                let mut latent = 0.0;
                for (k, zk) in z.iter().enumerate() {
                    latent += zk * directions[[k, j]];
                }
                let e: f64 = r.sample(StandardNormal);
                x[[i, j]] = means[[y, j]] + cfg.latent_scale * latent + cfg.noise_sigma * e;
            }
        }
        Ok((SampleBatch::new(x)?, labels))
    };

    let (train_x, train_y) = draw(&mut rng::substream(seed, 1), cfg.train)?;
    let (test_x, test_y) = draw(&mut rng::substream(seed, 2), cfg.test)?;
    Ok(BlobDataset {
        train_x,
        train_y,
        test_x,
        test_y,
    })
}
