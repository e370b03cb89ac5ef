//! Gradient checks: every autodiff operation against central finite
//! differences at random points, plus composite paths through the
//! information-theory and loss machinery.

use mrdib_core::numcore::{finite_difference_gradient, softplus, Rng, Tensor};

const FD_H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// |analytic - fd| <= tol * max(1, |analytic|, |fd|), coordinate-wise.
fn assert_grad_close(analytic: &[f64], fd: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), fd.len());
    for (i, (&a, &b)) in analytic.iter().zip(fd).enumerate() {
        let scale = 1.0_f64.max(a.abs()).max(b.abs());
        assert!(
            (a - b).abs() <= tol * scale,
            "{what}: coord {i}: analytic {a} vs fd {b}"
        );
    }
}

/// Builds the loss twice: once on a tracked parameter for backward, once
/// through the FD oracle on shifted constants.
fn check<F>(build: F, x0: Tensor, tol: f64, what: &str)
where
    F: Fn(&Tensor) -> Tensor,
{
    let param = Tensor::param(&x0.shape(), x0.values());
    let loss = build(&param);
    loss.backward().unwrap();
    let analytic = param.grad().unwrap();
    let fd = finite_difference_gradient(&mut |t| build(t).item(), &x0, FD_H);
    assert_grad_close(&analytic, &fd, tol, what);
}

fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(lo, hi)).collect())
}

/// Random values bounded away from a kink at `kink` by `margin`.
fn random_away_from(rng: &mut Rng, shape: &[usize], kink: f64, margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| loop {
            let v = rng.uniform_in(-2.0, 2.0);
            if (v - kink).abs() > margin {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, values)
}

#[test]
fn every_vocabulary_op_matches_finite_differences() {
    let mut rng = Rng::new(20240915);
    let points = 100;
    for p in 0..points {
        let c = random_tensor(&mut rng, &[2, 3], -1.5, 1.5);
        let other = random_tensor(&mut rng, &[2, 3], -1.5, 1.5);
        let row = random_tensor(&mut rng, &[3], -1.0, 1.0);
        let tag = |op: &str| format!("{op} (point {p})");

        let cc = c.clone();
        check(
            move |x| x.add(&cc).mul(&x.clone()).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("add"),
        );
        let rr = row.clone();
        check(
            move |x| x.add_row(&rr).mul(&x.clone()).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("add_row"),
        );
        let cc = c.clone();
        check(
            move |x| x.sub(&cc).mul(&x.clone()).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("sub"),
        );
        let cc = other.clone();
        check(
            move |x| x.mul(&cc).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("mul"),
        );
        check(
            |x| x.scale(1.7).add_scalar(0.3).mul(&x.clone()).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("scale/add_scalar"),
        );
        // matmul: check both operand gradients
        let b = random_tensor(&mut rng, &[3, 2], -1.5, 1.5);
        let bb = b.clone();
        check(
            move |x| x.matmul(&bb).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("matmul lhs"),
        );
        let a = random_tensor(&mut rng, &[2, 3], -1.5, 1.5);
        let aa = a.clone();
        check(
            move |x| aa.matmul(x).sum(),
            random_tensor(&mut rng, &[3, 2], -2.0, 2.0),
            TOL,
            &tag("matmul rhs"),
        );
        check(
            |x| x.exp().sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 1.5),
            TOL,
            &tag("exp"),
        );
        check(
            |x| x.log().sum(),
            random_tensor(&mut rng, &[2, 3], 0.2, 3.0),
            TOL,
            &tag("log"),
        );
        check(
            |x| x.softplus().sum(),
            random_tensor(&mut rng, &[2, 3], -3.0, 3.0),
            TOL,
            &tag("softplus"),
        );
        check(
            |x| x.sigmoid().sum(),
            random_tensor(&mut rng, &[2, 3], -3.0, 3.0),
            TOL,
            &tag("sigmoid"),
        );
        check(
            |x| x.tanh().sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("tanh"),
        );
        check(
            |x| x.relu().mul(&x.clone()).sum(),
            random_away_from(&mut rng, &[2, 3], 0.0, 0.01),
            TOL,
            &tag("relu"),
        );
        check(
            |x| x.clamp(-1.0, 1.0).mul(&x.clone()).sum(),
            {
                // keep points away from both clamp edges
                let n = 6;
                let values: Vec<f64> = (0..n)
                    .map(|_| loop {
                        let v = rng.uniform_in(-2.0, 2.0);
                        if (v - 1.0).abs() > 0.01 && (v + 1.0).abs() > 0.01 {
                            break v;
                        }
                    })
                    .collect();
                Tensor::new(&[2, 3], values)
            },
            TOL,
            &tag("clamp"),
        );
        check(
            |x| x.mul(&x.clone()).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("sum"),
        );
        check(
            |x| x.mul(&x.clone()).mean(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("mean"),
        );
        check(
            |x| x.row_sum().mul(&x.row_sum()).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("row_sum"),
        );
        check(
            |x| x.logsumexp(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("logsumexp"),
        );
        check(
            |x| x.row_logsumexp().sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("row_logsumexp"),
        );
        let cc = c.clone();
        check(
            move |x| x.concat_cols(&cc).row_logsumexp().sum(),
            random_tensor(&mut rng, &[2, 2], -2.0, 2.0),
            TOL,
            &tag("concat_cols"),
        );
        check(
            // repeated indices exercise the scatter-add
            |x| x.index_select(&[1, 0, 1]).mul(&x.index_select(&[0, 1, 1])).sum(),
            random_tensor(&mut rng, &[3, 2], -2.0, 2.0),
            TOL,
            &tag("index_select"),
        );
        check(
            |x| x.reshape(&[6]).mul(&x.reshape(&[6])).sum(),
            random_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            TOL,
            &tag("reshape"),
        );
    }
}

#[test]
fn two_way_softmax_nll_matches_softplus_and_fd() {
    // logits [2, 0]: NLL of the first class is softplus(-2) ~ 0.1269;
    // its gradient must match central differences to 1e-6 relative.
    let logits = Tensor::new(&[2], vec![2.0, 0.0]);
    let nll = |t: &Tensor| {
        let mask = Tensor::new(&[1, 2], vec![1.0, 0.0]);
        let s = t.reshape(&[1, 2]);
        s.row_logsumexp().sub(&s.mul(&mask).row_sum()).sum()
    };
    let value = nll(&logits).item();
    assert!((value - softplus(-2.0)).abs() < 1e-12);
    assert!((value - 0.1269).abs() < 1e-4);

    let param = Tensor::param(&[2], vec![2.0, 0.0]);
    nll(&param).backward().unwrap();
    let analytic = param.grad().unwrap();
    let fd = finite_difference_gradient(&mut |t| nll(t).item(), &logits, FD_H);
    assert_grad_close(&analytic, &fd, 1e-6, "2-way softmax nll");
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = Rng::new(7);
    for _ in 0..20 {
        let mean0 = random_tensor(&mut rng, &[4], -2.0, 2.0);
        let lv0 = random_tensor(&mut rng, &[4], -2.0, 2.0);

        // gradient w.r.t. the mean
        let lv = lv0.clone();
        check(
            move |m| {
                mrdib_core::infotheory::DiagonalGaussian::new(m.clone(), lv.clone())
                    .kl_to_standard()
            },
            mean0.clone(),
            TOL,
            "kl wrt mean",
        );
        // gradient w.r.t. the log-variance
        let mean = mean0.clone();
        check(
            move |lv| {
                mrdib_core::infotheory::DiagonalGaussian::new(mean.clone(), lv.clone())
                    .kl_to_standard()
            },
            lv0,
            TOL,
            "kl wrt log-variance",
        );
    }
}

#[test]
fn dv_bound_gradient_matches_finite_differences() {
    use mrdib_core::infotheory::{dv_bound, MineNetwork};
    let base = Rng::new(99);
    let f = MineNetwork::new(4, 8, &mut base.stream(0));
    let mut rng = base.stream(1);
    let marginal = random_tensor(&mut rng, &[5, 4], -1.0, 1.0);

    // w.r.t. the joint-pair inputs
    let m2 = marginal.clone();
    let fw = f.params();
    let _ = fw;
    let joint0 = random_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let fref = &f;
    let build = move |joint: &Tensor| dv_bound(fref, joint, &m2);
    let param = Tensor::param(&joint0.shape(), joint0.values());
    build(&param).backward().unwrap();
    let analytic = param.grad().unwrap();
    let fd = finite_difference_gradient(&mut |t| build(t).item(), &joint0, FD_H);
    assert_grad_close(&analytic, &fd, TOL, "dv_bound wrt joint inputs");

    // w.r.t. one weight matrix of f: rebuild the network around shifted
    // weights through from_weights.
    let weights = f.params();
    let w1_0 = weights[0].detach();
    let joint = random_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let marg = random_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let rebuild = |w1: &Tensor| {
        let ws = vec![
            w1.clone(),
            weights[1].detach(),
            weights[2].detach(),
            weights[3].detach(),
            weights[4].detach(),
            weights[5].detach(),
        ];
        let ws: Vec<Tensor> = ws
            .into_iter()
            .map(|t| Tensor::param(&t.shape(), t.values()))
            .collect();
        let mut ws2 = ws;
        ws2[0] = w1.clone();
        dv_bound(&MineNetwork::from_weights(4, 8, ws2), &joint, &marg)
    };
    let w1p = Tensor::param(&w1_0.shape(), w1_0.values());
    rebuild(&w1p).backward().unwrap();
    let analytic = w1p.grad().unwrap();
    let fd = finite_difference_gradient(&mut |t| rebuild(t).item(), &w1_0, FD_H);
    assert_grad_close(&analytic, &fd, TOL, "dv_bound wrt f weights");
}
