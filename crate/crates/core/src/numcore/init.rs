use super::rng::Rng;
use super::tensor::Tensor;

/// Xavier/Glorot uniform initialization: draws in
/// +-sqrt(6 / (fan_in + fan_out)), shape [fan_in, fan_out].
pub fn xavier_init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    assert!(
        fan_in >= 1 && fan_out >= 1,
        "xavier_init with zero fan is a contract violation"
    );
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Tensor::param(&[fan_in, fan_out], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_stay_within_the_bound() {
        // bound = sqrt(6/128) ~ 0.2165
        let bound = (6.0_f64 / 128.0).sqrt();
        assert!((bound - 0.2165).abs() < 1e-4);
        let mut rng = Rng::new(1);
        let t = xavier_init(&mut rng, 64, 64);
        for v in t.values() {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let mut rng = Rng::new(2);
        let t = xavier_init(&mut rng, 64, 64);
        let mean: f64 = t.values().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn same_seed_gives_bit_identical_tensors() {
        let a = xavier_init(&mut Rng::new(99), 16, 8);
        let b = xavier_init(&mut Rng::new(99), 16, 8);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    #[should_panic(expected = "zero fan")]
    fn zero_fan_panics() {
        let _ = xavier_init(&mut Rng::new(0), 0, 4);
    }
}
