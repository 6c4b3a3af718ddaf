//! Two-sided geometric noise, the discrete analogue of the Laplace
//! mechanism for integer counts with sensitivity 1.

use rand::Rng;

use super::InsightsError;

pub(crate) fn check_epsilon(epsilon: f64) -> Result<(), InsightsError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(InsightsError::BadEpsilon(epsilon))
    }
}

/// Geometric variate on {0, 1, ...} with P(k) = (1 - a) a^k, a = exp(-epsilon).
fn geometric<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> u64 {
    // 1 - [0, 1) keeps the log finite
    let u = 1.0 - rng.gen::<f64>();
    let k = libm::floor(-libm::log(u) / epsilon);
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64
    }
}

/// Difference of two geometric variates: P(z) proportional to exp(-epsilon |z|),
/// i.e. Laplace-style noise of scale 1/epsilon on the integers.
pub fn two_sided_geometric<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> Result<i64, InsightsError> {
    check_epsilon(epsilon)?;
    let a = geometric(epsilon, rng).min(i64::MAX as u64) as i64;
    let b = geometric(epsilon, rng).min(i64::MAX as u64) as i64;
    Ok(a.saturating_sub(b))
}

/// `count` plus two-sided geometric noise, clamped at zero.
pub fn noisy_count<R: Rng + ?Sized>(count: u64, epsilon: f64, rng: &mut R) -> Result<u64, InsightsError> {
    let z = two_sided_geometric(epsilon, rng)?;
    let noisy = (count.min(i64::MAX as u64) as i64).saturating_add(z);
    Ok(noisy.max(0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(noisy_count(3, 0.0, &mut rng).is_err());
        assert!(noisy_count(3, -1.0, &mut rng).is_err());
        assert!(noisy_count(3, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn huge_epsilon_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(noisy_count(50, 1000.0, &mut rng).unwrap(), 50);
        }
    }

    #[test]
    fn clamped_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..2000).all(|_| noisy_count(0, 0.05, &mut rng).is_ok()));
    }

    #[test]
    fn empirical_pmf_matches_closed_form() {
        // P(Z = z) = (1 - a) / (1 + a) * a^|z|
        let eps = 0.7;
        let a = libm::exp(-eps);
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hist = [0u32; 7];
        for _ in 0..n {
            let z = two_sided_geometric(eps, &mut rng).unwrap();
            if z.abs() <= 3 {
                hist[(z + 3) as usize] += 1;
            }
        }
        for (i, &h) in hist.iter().enumerate() {
            let z = i as i32 - 3;
            let p = (1.0 - a) / (1.0 + a) * a.powi(z.abs());
            let se = libm::sqrt(p * (1.0 - p) / n as f64);
            let obs = h as f64 / n as f64;
            assert!((obs - p).abs() < 4.0 * se, "z={z} obs={obs} p={p}");
        }
    }
}
