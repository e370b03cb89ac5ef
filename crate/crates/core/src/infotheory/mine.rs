use crate::error::{Error, Result};
use crate::numcore::{xavier_init, Adam, Rng, Tensor};

/// Abort threshold for the DV bound; estimates this large mean the
/// statistics network has blown up rather than converged.
pub const DIVERGENCE_LIMIT: f64 = 50.0;

/// Statistics network f(z1, z2) -> scalar: a two-hidden-layer relu
/// perceptron over the concatenated pair.
pub struct MineNetwork {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    w3: Tensor,
    b3: Tensor,
    pub input_dim: usize,
    pub hidden: usize,
}

impl MineNetwork {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        assert!(input_dim >= 1 && hidden >= 1);
        MineNetwork {
            w1: xavier_init(rng, input_dim, hidden),
            b1: Tensor::zeros_param(&[hidden]),
            w2: xavier_init(rng, hidden, hidden),
            b2: Tensor::zeros_param(&[hidden]),
            w3: xavier_init(rng, hidden, 1),
            b3: Tensor::zeros_param(&[1]),
            input_dim,
            hidden,
        }
    }

    /// All-zero network: f is identically 0, which makes the DV bound
    /// exactly 0 regardless of the inputs.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        MineNetwork {
            w1: Tensor::zeros_param(&[input_dim, hidden]),
            b1: Tensor::zeros_param(&[hidden]),
            w2: Tensor::zeros_param(&[hidden, hidden]),
            b2: Tensor::zeros_param(&[hidden]),
            w3: Tensor::zeros_param(&[hidden, 1]),
            b3: Tensor::zeros_param(&[1]),
            input_dim,
            hidden,
        }
    }

    /// Rebuilds a network from stored weights, in `params()` order
    /// (w1, b1, w2, b2, w3, b3).
    pub fn from_weights(input_dim: usize, hidden: usize, mut weights: Vec<Tensor>) -> Self {
        assert_eq!(weights.len(), 6, "MineNetwork needs 6 weight tensors");
        let b3 = weights.pop().unwrap();
        let w3 = weights.pop().unwrap();
        let b2 = weights.pop().unwrap();
        let w2 = weights.pop().unwrap();
        let b1 = weights.pop().unwrap();
        let w1 = weights.pop().unwrap();
        assert_eq!(w1.shape(), vec![input_dim, hidden]);
        assert_eq!(w3.shape(), vec![hidden, 1]);
        MineNetwork {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            input_dim,
            hidden,
        }
    }

    /// [B, input_dim] -> [B] scores.
    pub fn forward(&self, pairs: &Tensor) -> Tensor {
        let shape = pairs.shape();
        assert_eq!(shape.len(), 2, "MINE input must be [batch, dim]");
        assert_eq!(shape[1], self.input_dim, "MINE input dim mismatch");
        let h1 = pairs.matmul(&self.w1).add_row(&self.b1).relu();
        let h2 = h1.matmul(&self.w2).add_row(&self.b2).relu();
        let out = h2.matmul(&self.w3).add_row(&self.b3);
        out.reshape(&[shape[0]])
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
            self.w3.clone(),
            self.b3.clone(),
        ]
    }

    pub fn zero_grads(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }
}

/// Donsker-Varadhan lower bound on I(Z1; Z2):
/// mean(f over joint pairs) - log mean(e^f over marginal pairs), computed
/// as mean - logsumexp + ln(batch). Differentiable w.r.t. both the network
/// weights and the pair inputs. Marginal pairs are expected to be the
/// joint batch with z2 permuted in-batch.
pub fn dv_bound(f: &MineNetwork, joint_pairs: &Tensor, marginal_pairs: &Tensor) -> Tensor {
    let b = joint_pairs.shape()[0];
    assert!(
        b >= 2 && marginal_pairs.shape()[0] >= 2,
        "dv_bound needs a batch of at least 2 (no valid shuffle otherwise)"
    );
    let joint_term = f.forward(joint_pairs).mean();
    let marg_scores = f.forward(marginal_pairs);
    let n = marg_scores.len() as f64;
    joint_term
        .sub(&marg_scores.logsumexp())
        .add_scalar(n.ln())
}

/// Builds [B, d1+d2] joint pairs and in-batch-permuted marginal pairs from
/// two row-major sample matrices.
pub fn make_pair_batches(
    z1: &[f64],
    z2: &[f64],
    rows: usize,
    d1: usize,
    d2: usize,
    rng: &mut Rng,
) -> (Tensor, Tensor) {
    assert_eq!(z1.len(), rows * d1);
    assert_eq!(z2.len(), rows * d2);
    assert!(rows >= 2, "pair batches need at least 2 rows");
    let perm = rng.permutation(rows);
    let mut joint = Vec::with_capacity(rows * (d1 + d2));
    let mut marginal = Vec::with_capacity(rows * (d1 + d2));
    for r in 0..rows {
        joint.extend_from_slice(&z1[r * d1..(r + 1) * d1]);
        joint.extend_from_slice(&z2[r * d2..(r + 1) * d2]);
        marginal.extend_from_slice(&z1[r * d1..(r + 1) * d1]);
        let p = perm[r];
        marginal.extend_from_slice(&z2[p * d2..(p + 1) * d2]);
    }
    (
        Tensor::new(&[rows, d1 + d2], joint),
        Tensor::new(&[rows, d1 + d2], marginal),
    )
}

/// Exponential-moving-average state for the log-partition gradient. The
/// naive DV gradient through log E[e^f] is biased for small batches; the
/// standard MINE correction divides the batch mean of e^f by a slow EMA of
/// itself instead.
pub struct EmaDenominator {
    pub decay: f64,
    value: Option<f64>,
}

impl EmaDenominator {
    pub fn new(decay: f64) -> Self {
        EmaDenominator { decay, value: None }
    }

    pub fn update(&mut self, batch_mean_exp: f64) -> f64 {
        let v = match self.value {
            None => batch_mean_exp,
            Some(prev) => self.decay * prev + (1.0 - self.decay) * batch_mean_exp,
        };
        self.value = Some(v);
        v
    }
}

/// One ascent step of the statistics network on a (z1, z2) sample batch.
/// Returns the (exact, uncorrected) DV bound value for tracing. The inputs
/// are plain values, so nothing here can leak gradients into an encoder.
pub fn mine_ascent_step(
    f: &MineNetwork,
    z1: &[f64],
    z2: &[f64],
    rows: usize,
    d1: usize,
    d2: usize,
    ema: &mut EmaDenominator,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<f64> {
    let (joint, marginal) = make_pair_batches(z1, z2, rows, d1, d2, rng);
    let bound = dv_bound(f, &joint, &marginal).item();
    if !bound.is_finite() || bound > DIVERGENCE_LIMIT {
        return Err(Error::Numerical(format!(
            "MINE diverged: DV bound estimate {bound} exceeds {DIVERGENCE_LIMIT} nats"
        )));
    }

    let joint_scores = f.forward(&joint);
    let marg_scores = f.forward(&marginal);
    // The bound itself is logsumexp-stable, but the EMA surrogate
    // exponentiates raw scores; a uniformly exploding f keeps the bound
    // small while e^f overflows, so cap the output magnitude directly.
    let max_abs = joint_scores
        .values()
        .iter()
        .chain(marg_scores.values().iter())
        .fold(0.0_f64, |m, &v| m.max(v.abs()));
    if !max_abs.is_finite() || max_abs > 60.0 {
        return Err(Error::Numerical(format!(
            "MINE diverged: statistics network output magnitude {max_abs} exceeds 60"
        )));
    }
    let marg_exp = marg_scores.exp();
    let denominator = ema.update(marg_exp.values().iter().sum::<f64>() / rows as f64);
    // Surrogate whose gradient is the EMA-corrected DV gradient:
    // mean(f_joint) - mean(e^{f_marg}) / ema. Minimize its negation.
    let surrogate = joint_scores
        .mean()
        .sub(&marg_exp.mean().scale(1.0 / denominator));
    let loss = surrogate.neg();
    f.zero_grads();
    loss.backward()?;
    let params = f.params();
    adam.step(&params.iter().collect::<Vec<_>>());
    Ok(bound)
}

/// Trains f to ascend the DV bound on i.i.d. joint batches from `sampler`
/// and returns the per-step bound trace. `sampler` must yield two
/// row-major matrices with the same row count.
pub fn train_mine<S>(
    f: &MineNetwork,
    mut sampler: S,
    steps: usize,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<Vec<f64>>
where
    S: FnMut(&mut Rng) -> (Vec<f64>, Vec<f64>, usize, usize, usize),
{
    let mut ema = EmaDenominator::new(0.99);
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (z1, z2, rows, d1, d2) = sampler(rng);
        let bound = mine_ascent_step(f, &z1, &z2, rows, d1, d2, &mut ema, adam, rng)?;
        trace.push(bound);
    }
    Ok(trace)
}

/// Analytic mutual information of a bivariate Gaussian with correlation
/// rho: -0.5 ln(1 - rho^2) nats.
pub fn gaussian_mi_analytic(rho: f64) -> f64 {
    assert!(
        rho.abs() < 1.0,
        "gaussian_mi_analytic requires |rho| < 1 (contract violation)"
    );
    -0.5 * (1.0 - rho * rho).ln()
}

/// Post-hoc MI probe: trains a fresh statistics network on fixed sample
/// rows (minibatched with replacement) and evaluates the DV bound once on
/// the full set. Used to measure I(Z1; Z2) of exported representations.
pub fn estimate_mi_from_rows(
    z1: &[f64],
    z2: &[f64],
    rows: usize,
    d1: usize,
    d2: usize,
    hidden: usize,
    steps: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    assert!(rows >= 2);
    let base = Rng::new(seed);
    let mut init_rng = base.stream(0x9101);
    let f = MineNetwork::new(d1 + d2, hidden, &mut init_rng);
    let mut adam = Adam::new(lr);
    let mut train_rng = base.stream(0x9102);
    let batch = batch_size.min(rows);
    train_mine(
        &f,
        |r: &mut Rng| {
            let mut b1 = Vec::with_capacity(batch * d1);
            let mut b2 = Vec::with_capacity(batch * d2);
            for _ in 0..batch {
                let i = r.below(rows);
                b1.extend_from_slice(&z1[i * d1..(i + 1) * d1]);
                b2.extend_from_slice(&z2[i * d2..(i + 1) * d2]);
            }
            (b1, b2, batch, d1, d2)
        },
        steps,
        &mut adam,
        &mut train_rng,
    )?;
    // Final estimate on the full sample set with a fresh permutation.
    let mut eval_rng = base.stream(0x9103);
    let (joint, marginal) = make_pair_batches(z1, z2, rows, d1, d2, &mut eval_rng);
    Ok(dv_bound(&f, &joint, &marginal).item())
}
