//! Running observation normalizer with parallel-merge statistics.
//!
//! Workers accumulate raw per-dimension sums over the observations they
//! collect; after a rollout completes, those accumulators are merged
//! into the shared normalizer in worker order (a deterministic
//! pairwise-merge of count/mean/M2, so results are identical across
//! runs). During collection the normalizer is frozen: every worker
//! normalizes with the statistics that were current when the rollout
//! began.

use crate::error::RlError;

/// Per-worker accumulator of raw observation statistics.
#[derive(Debug, Clone)]
pub struct ObsAccumulator {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl ObsAccumulator {
    pub fn new(dim: usize) -> ObsAccumulator {
        ObsAccumulator {
            count: 0.0,
            sum: vec![0.0; dim],
            sumsq: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, obs: &[f64]) {
        debug_assert_eq!(obs.len(), self.sum.len());
        self.count += 1.0;
        for (i, x) in obs.iter().enumerate() {
            self.sum[i] += x;
            self.sumsq[i] += x * x;
        }
    }
}

/// Running mean/variance with clipped standardization.
#[derive(Debug, Clone)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize, clip: f64) -> RunningNorm {
        RunningNorm {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges one accumulator's statistics (pairwise count/mean/M2
    /// combination). Call once per worker, in worker order.
    pub fn merge(&mut self, acc: &ObsAccumulator) -> Result<(), RlError> {
        if acc.sum.len() != self.dim() || acc.sumsq.len() != self.dim() {
            return Err(RlError::Shape(format!(
                "normalizer dim {} vs accumulator dim {}",
                self.dim(),
                acc.sum.len()
            )));
        }
        if acc.count == 0.0 {
            return Ok(());
        }
        let nb = acc.count;
        let na = self.count;
        let total = na + nb;
        for i in 0..self.dim() {
            let mean_b = acc.sum[i] / nb;
            let m2_b = acc.sumsq[i] - nb * mean_b * mean_b;
            let delta = mean_b - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += m2_b + delta * delta * na * nb / total;
        }
        self.count = total;
        Ok(())
    }

    pub fn variance(&self, i: usize) -> f64 {
        if self.count > 0.0 {
            (self.m2[i] / self.count).max(0.0)
        } else {
            1.0
        }
    }

    /// Standardizes and clips one observation. With no statistics yet
    /// (count == 0) the observation passes through unshifted, clipped.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(obs.len(), self.dim());
        if self.count == 0.0 {
            return obs.iter().map(|x| x.clamp(-self.clip, self.clip)).collect();
        }
        obs.iter()
            .enumerate()
            .map(|(i, x)| {
                let z = (x - self.mean[i]) / (self.variance(i) + 1e-8).sqrt();
                z.clamp(-self.clip, self.clip)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn merged_chunks_match_direct_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 3;
        let data: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..dim).map(|_| rng.gen_range(-4.0..6.0)).collect())
            .collect();

        let mut norm = RunningNorm::new(dim, 10.0);
        for chunk in data.chunks(2_500) {
            let mut acc = ObsAccumulator::new(dim);
            for obs in chunk {
                acc.push(obs);
            }
            norm.merge(&acc).unwrap();
        }

        for i in 0..dim {
            let n = data.len() as f64;
            let mean = data.iter().map(|o| o[i]).sum::<f64>() / n;
            let var = data.iter().map(|o| (o[i] - mean) * (o[i] - mean)).sum::<f64>() / n;
            assert_abs_diff_eq!(norm.mean[i], mean, epsilon = 1e-9);
            assert_abs_diff_eq!(norm.variance(i), var, epsilon = 1e-9);
        }
    }

    #[test]
    fn merge_in_fixed_order_is_bitwise_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chunks: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|_| {
                (0..100)
                    .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(0.0..9.0)])
                    .collect()
            })
            .collect();
        let build = || {
            let mut norm = RunningNorm::new(2, 10.0);
            for chunk in &chunks {
                let mut acc = ObsAccumulator::new(2);
                for obs in chunk {
                    acc.push(obs);
                }
                norm.merge(&acc).unwrap();
            }
            norm
        };
        let a = build();
        let b = build();
        assert_eq!(a.count, b.count);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.m2, b.m2);
    }

    #[test]
    fn normalize_standardizes_and_clips() {
        let mut norm = RunningNorm::new(1, 5.0);
        let mut acc = ObsAccumulator::new(1);
        for k in 0..1000 {
            acc.push(&[(k % 2) as f64 * 2.0]); // values 0 and 2: mean 1, var 1
        }
        norm.merge(&acc).unwrap();
        let z = norm.normalize(&[2.0]);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-6);
        let z = norm.normalize(&[1000.0]);
        assert_eq!(z[0], 5.0);
        let z = norm.normalize(&[-1000.0]);
        assert_eq!(z[0], -5.0);
    }

    #[test]
    fn empty_normalizer_passes_observations_through() {
        let norm = RunningNorm::new(2, 10.0);
        assert_eq!(norm.normalize(&[0.4, -0.9]), vec![0.4, -0.9]);
        assert_eq!(norm.normalize(&[25.0, -25.0]), vec![10.0, -10.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut norm = RunningNorm::new(3, 10.0);
        let acc = ObsAccumulator::new(2);
        assert!(norm.merge(&acc).is_err());
    }

    #[test]
    fn zero_count_accumulator_is_a_no_op() {
        let mut norm = RunningNorm::new(2, 10.0);
        let before = norm.clone();
        norm.merge(&ObsAccumulator::new(2)).unwrap();
        assert_eq!(norm.count, before.count);
        assert_eq!(norm.mean, before.mean);
    }
}
