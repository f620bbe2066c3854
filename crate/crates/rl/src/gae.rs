//! Generalized advantage estimation over a fixed-length rollout.

use crate::error::RlError;

/// Computes advantages and value targets for one trajectory segment.
///
/// Inputs are per-step arrays of equal length T: rewards, value
/// predictions V(s_t), and episode-termination flags for step t.
/// `bootstrap` is V(s_T) for the state after the last step (ignored
/// when the last step terminated).
///
/// With delta_t = r_t + gamma * (1 - done_t) * V_{t+1} - V_t, the
/// advantage satisfies the backward recursion
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}, and the
/// value target is R_t = A_t + V_t.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let t_max = rewards.len();
    if values.len() != t_max || dones.len() != t_max {
        return Err(RlError::Shape(format!(
            "gae length mismatch: rewards {}, values {}, dones {}",
            t_max,
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; t_max];
    let mut returns = vec![0.0; t_max];
    let mut next_adv = 0.0;
    for t in (0..t_max).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * cont * next_value - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        advantages[t] = next_adv;
        returns[t] = next_adv + values[t];
    }
    Ok((advantages, returns))
}

/// Shifts and scales advantages to zero mean and unit standard
/// deviation: (A - mean) / max(std, 1e-8), with the population std.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len().max(1) as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt().max(1e-8);
    advantages.iter().map(|a| (a - mean) / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Quadratic-time forward-sum reference:
    /// A_t = sum_k (gamma*lambda)^k * delta_{t+k}, with the product
    /// truncated at the first done.
    fn gae_oracle(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let t_max = rewards.len();
        let delta: Vec<f64> = (0..t_max)
            .map(|t| {
                let cont = if dones[t] { 0.0 } else { 1.0 };
                let next_value = if t + 1 < t_max { values[t + 1] } else { bootstrap };
                rewards[t] + gamma * cont * next_value - values[t]
            })
            .collect();
        (0..t_max)
            .map(|t| {
                let mut acc = 0.0;
                let mut coef = 1.0;
                for l in t..t_max {
                    acc += coef * delta[l];
                    if dones[l] {
                        break;
                    }
                    coef *= gamma * lambda;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_quadratic_oracle_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let len = rng.gen_range(1..=64);
            let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.15)).collect();
            let bootstrap = rng.gen_range(-2.0..2.0);
            let gamma = rng.gen_range(0.0..1.0);
            let lambda = rng.gen_range(0.0..1.0);
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
            let oracle = gae_oracle(&rewards, &values, &dones, bootstrap, gamma, lambda);
            for t in 0..len {
                assert_abs_diff_eq!(adv[t], oracle[t], epsilon = 1e-6);
                assert_abs_diff_eq!(ret[t], oracle[t] + values[t], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn lambda_zero_is_the_one_step_td_error() {
        let rewards = [1.0, -0.5, 2.0];
        let values = [0.3, 0.7, -0.2];
        let dones = [false, false, false];
        let (adv, _) = compute_gae(&rewards, &values, &dones, 0.9, 0.99, 0.0).unwrap();
        assert_abs_diff_eq!(adv[0], 1.0 + 0.99 * 0.7 - 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(adv[1], -0.5 + 0.99 * (-0.2) - 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(adv[2], 2.0 + 0.99 * 0.9 - (-0.2), epsilon = 1e-12);
    }

    #[test]
    fn lambda_one_is_discounted_return_minus_value() {
        let rewards = [0.5, 1.5, -1.0, 0.2];
        let values = [0.1, -0.3, 0.6, 0.0];
        let dones = [false, false, false, false];
        let gamma = 0.95;
        let bootstrap = 0.4;
        let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, 1.0).unwrap();
        for t in 0..4 {
            let mut g = 0.0;
            let mut c = 1.0;
            for l in t..4 {
                g += c * rewards[l];
                c *= gamma;
            }
            g += c * bootstrap;
            assert_abs_diff_eq!(adv[t], g - values[t], epsilon = 1e-12);
            assert_abs_diff_eq!(ret[t], g, epsilon = 1e-12);
        }
    }

    #[test]
    fn done_blocks_credit_from_later_rewards() {
        let values = [0.0, 0.0, 0.0];
        let dones = [false, true, false];
        let (a1, _) =
            compute_gae(&[1.0, 1.0, 5.0], &values, &dones, 0.0, 0.99, 0.95).unwrap();
        let (a2, _) =
            compute_gae(&[1.0, 1.0, -5.0], &values, &dones, 0.0, 0.99, 0.95).unwrap();
        assert_abs_diff_eq!(a1[0], a2[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a1[1], a2[1], epsilon = 1e-12);
        assert!(a1[2] != a2[2]);
    }

    #[test]
    fn terminal_last_step_ignores_bootstrap() {
        let rewards = [1.0];
        let values = [0.5];
        let dones = [true];
        let (a_hi, _) = compute_gae(&rewards, &values, &dones, 100.0, 0.99, 0.95).unwrap();
        let (a_lo, _) = compute_gae(&rewards, &values, &dones, -100.0, 0.99, 0.95).unwrap();
        assert_abs_diff_eq!(a_hi[0], a_lo[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a_hi[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn normalization_produces_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let adv: Vec<f64> = (0..4096).map(|_| rng.gen_range(-3.0..7.0)).collect();
        let norm = normalize_advantages(&adv);
        let n = norm.len() as f64;
        let mean = norm.iter().sum::<f64>() / n;
        let std = (norm.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "std {std}");
    }

    #[test]
    fn normalization_of_constant_advantages_is_safe() {
        let norm = normalize_advantages(&[2.5; 10]);
        for v in norm {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = compute_gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.99, 0.95);
        assert!(err.is_err());
    }
}
