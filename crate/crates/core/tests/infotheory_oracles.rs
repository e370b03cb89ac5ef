//! Estimator-vs-oracle checks: the closed-form KL against Monte Carlo,
//! and the trained DV bound against analytic Gaussian mutual information.

use mrdib_core::infotheory::{
    gaussian_mi_analytic, mc_kl_oracle, train_mine, DiagonalGaussian, MineNetwork,
};
use mrdib_core::numcore::{Adam, Rng, Tensor};

#[test]
fn closed_form_kl_agrees_with_monte_carlo_on_50_posteriors() {
    let mut rng = Rng::new(4242);
    for case in 0..50 {
        let d = 1 + rng.below(8);
        let mean: Vec<f64> = (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.uniform_in(-2.0, 1.5)).collect();

        let closed = DiagonalGaussian::new(
            Tensor::new(&[d], mean.clone()),
            Tensor::new(&[d], logvar.clone()),
        )
        .kl_to_standard()
        .item();
        assert!(closed >= 0.0, "KL must be non-negative");

        // 20 independent 5k-sample estimates give both the Monte-Carlo
        // mean and its standard error.
        let runs = 20;
        let estimates: Vec<f64> = (0..runs)
            .map(|r| {
                let mut mc_rng = Rng::new(777).stream(case as u64 * 100 + r as u64);
                mc_kl_oracle(&mean, &logvar, 5_000, &mut mc_rng)
            })
            .collect();
        let grand = estimates.iter().sum::<f64>() / runs as f64;
        let var = estimates
            .iter()
            .map(|e| (e - grand).powi(2))
            .sum::<f64>()
            / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!(
            (closed - grand).abs() <= 3.0 * se.max(1e-4),
            "case {case} (d={d}): closed {closed} vs mc {grand} (se {se})"
        );
    }
}

#[test]
fn kl_is_zero_only_at_the_prior() {
    let mut rng = Rng::new(5);
    for _ in 0..200 {
        let d = 1 + rng.below(6);
        let mean: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let at_prior = mean.iter().all(|&m| m == 0.0) && logvar.iter().all(|&v| v == 0.0);
        let kl = DiagonalGaussian::new(
            Tensor::new(&[d], mean),
            Tensor::new(&[d], logvar),
        )
        .kl_to_standard()
        .item();
        assert!(kl >= 0.0);
        if !at_prior {
            assert!(kl > 0.0, "KL must be strictly positive off the prior");
        }
    }
}

fn correlated_batch(rng: &mut Rng, n: usize, rho: f64) -> (Vec<f64>, Vec<f64>, usize, usize, usize) {
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.normal();
        let b = rng.normal();
        z1.push(a);
        z2.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (z1, z2, n, 1, 1)
}

#[test]
fn dv_bound_never_exceeds_true_mi_plus_margin_on_20_instances() {
    // Lower-bound property: the converged estimate may undershoot but not
    // overshoot the analytic MI beyond estimator noise.
    for case in 0..20 {
        let rho = -0.9 + 1.8 * (case as f64 / 19.0);
        let analytic = gaussian_mi_analytic(rho);
        let base = Rng::new(9000 + case as u64);
        let f = MineNetwork::new(2, 16, &mut base.stream(0));
        let mut adam = Adam::new(5e-3);
        let mut rng = base.stream(1);
        let trace = train_mine(
            &f,
            |r: &mut Rng| correlated_batch(r, 256, rho),
            250,
            &mut adam,
            &mut rng,
        )
        .unwrap();
        let tail = &trace[trace.len() - 30..];
        let converged = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(
            converged <= analytic + 0.05,
            "case {case} (rho {rho:.2}): bound {converged:.4} exceeds analytic {analytic:.4} + 0.05"
        );
    }
}

#[test]
fn copy_channel_of_8_codes_approaches_ln_8_from_below() {
    // z1 uniform over 8 one-hot codes, z2 an exact copy: the mutual
    // information is the source entropy, ln 8.
    let target = 8.0_f64.ln();
    let base = Rng::new(777);
    let f = MineNetwork::new(16, 48, &mut base.stream(0));
    let mut adam = Adam::new(5e-3);
    let mut rng = base.stream(1);
    let trace = train_mine(
        &f,
        |r: &mut Rng| {
            let n = 256;
            let mut z1 = vec![0.0; n * 8];
            for row in 0..n {
                let code = r.below(8);
                z1[row * 8 + code] = 1.0;
            }
            let z2 = z1.clone();
            (z1, z2, n, 8, 8)
        },
        800,
        &mut adam,
        &mut rng,
    )
    .unwrap();
    let tail = &trace[trace.len() - 50..];
    let converged = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(
        converged > 0.9 * target,
        "converged {converged:.4} too far below ln 8 = {target:.4}"
    );
    assert!(
        converged <= target + 0.05,
        "bound {converged:.4} above the ln 8 ceiling"
    );
}

#[test]
fn mine_divergence_guard_aborts_with_diagnostic() {
    // A huge learning rate on a deterministic copy blows the bound up.
    let base = Rng::new(31);
    let f = MineNetwork::new(2, 16, &mut base.stream(0));
    let mut adam = Adam::new(5.0);
    let mut rng = base.stream(1);
    let result = train_mine(
        &f,
        |r: &mut Rng| {
            let n = 64;
            let z1: Vec<f64> = (0..n).map(|_| r.normal()).collect();
            (z1.clone(), z1.clone(), n, 1, 1)
        },
        2000,
        &mut adam,
        &mut rng,
    );
    match result {
        Err(e) => assert!(e.to_string().contains("diverged"), "{e}"),
        Ok(trace) => panic!(
            "expected divergence abort, got full trace ending at {:?}",
            trace.last()
        ),
    }
}
