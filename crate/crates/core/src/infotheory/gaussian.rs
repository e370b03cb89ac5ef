use crate::numcore::{Rng, Tensor};

/// Variational posterior q(z|x) with per-dimension mean and log-variance.
/// The tensors are usually graph nodes produced by an encoder, so the KL
/// and sampling paths stay differentiable w.r.t. the encoder parameters.
/// The prior is always the standard normal N(0, I).
#[derive(Clone)]
pub struct DiagonalGaussian {
    pub mean: Tensor,
    pub log_variance: Tensor,
}

/// Whether reparameterization draws noise or returns the posterior mean
/// (the deterministic evaluation path).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Sample,
    Mean,
}

/// A reparameterized draw z = mu + sigma * eps together with its source
/// posterior and the noise that produced it.
#[derive(Clone)]
pub struct LatentSample {
    pub z: Tensor,
    pub posterior: DiagonalGaussian,
    pub epsilon: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Tensor, log_variance: Tensor) -> Self {
        assert_eq!(
            mean.shape(),
            log_variance.shape(),
            "mean / log_variance shape mismatch"
        );
        DiagonalGaussian {
            mean,
            log_variance,
        }
    }

    /// Posterior matching the prior exactly (mu = 0, log-variance = 0).
    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian::new(Tensor::zeros(&[dim]), Tensor::zeros(&[dim]))
    }

    /// Select rows of a batched [B, d] posterior.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        DiagonalGaussian::new(
            self.mean.index_select(rows),
            self.log_variance.index_select(rows),
        )
    }

    /// KL(q || N(0, I)) in nats, summed over every dimension present:
    /// 0.5 * sum(mu^2 + sigma^2 - ln sigma^2 - 1). Differentiable in the
    /// posterior parameters; non-negative, zero exactly at the prior.
    pub fn kl_to_standard(&self) -> Tensor {
        let var = self.log_variance.exp();
        self.mean
            .mul(&self.mean)
            .add(&var)
            .sub(&self.log_variance)
            .add_scalar(-1.0)
            .sum()
            .scale(0.5)
    }

    /// z = mu + exp(0.5 * log_variance) * eps, with gradients flowing into
    /// mu and log_variance. Mean mode sets eps = 0.
    pub fn reparameterize(&self, rng: &mut Rng, mode: SampleMode) -> LatentSample {
        let n = self.mean.len();
        let epsilon: Vec<f64> = match mode {
            SampleMode::Sample => (0..n).map(|_| rng.normal()).collect(),
            SampleMode::Mean => vec![0.0; n],
        };
        let eps = Tensor::new(&self.mean.shape(), epsilon.clone());
        let z = self
            .mean
            .add(&self.log_variance.scale(0.5).exp().mul(&eps));
        LatentSample {
            z,
            posterior: self.clone(),
            epsilon,
        }
    }
}

/// Monte-Carlo estimate of E_q[ln q(z) - ln p(z)], an oracle for the
/// closed-form KL. Works on raw slices and never touches the autodiff
/// path, so the two routes stay independent.
pub fn mc_kl_oracle(mean: &[f64], log_variance: &[f64], n_samples: usize, rng: &mut Rng) -> f64 {
    assert_eq!(mean.len(), log_variance.len());
    assert!(n_samples >= 1000, "mc_kl_oracle needs at least 1000 samples");
    let d = mean.len();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for _ in 0..n_samples {
        let mut log_q = 0.0;
        let mut log_p = 0.0;
        for i in 0..d {
            let sigma = (0.5 * log_variance[i]).exp();
            let z = mean[i] + sigma * rng.normal();
            let centered = (z - mean[i]) / sigma;
            log_q += -0.5 * (ln_2pi + log_variance[i] + centered * centered);
            log_p += -0.5 * (ln_2pi + z * z);
        }
        total += log_q - log_p;
    }
    total / n_samples as f64
}
