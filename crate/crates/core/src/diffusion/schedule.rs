use serde::{Deserialize, Serialize};

use super::{DiffusionError, Point5};

/// Linear beta schedule with the derived tables, indexed `1..=steps`
/// (index 0 holds the `s = 0` convention `alpha_bar = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub tilde_beta: Vec<f64>,
    pub tilde_alpha: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need S ≥ 1 and 0 < beta_start ≤ beta_end < 1, got S={steps}, [{beta_start}, {beta_end}]"
            )));
        }
        let mut beta = vec![0.0; steps + 1];
        for (s, b) in beta.iter_mut().enumerate().skip(1) {
            *b = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * (s - 1) as f64 / (steps - 1) as f64
            };
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = vec![1.0; steps + 1];
        for s in 1..=steps {
            alpha_bar[s] = alpha[s] * alpha_bar[s - 1];
        }
        let mut tilde_beta = vec![0.0; steps + 1];
        let mut tilde_alpha = vec![0.0; steps + 1];
        for s in 1..=steps {
            tilde_beta[s] = (1.0 - alpha_bar[s - 1]) / (1.0 - alpha_bar[s]) * beta[s];
            tilde_alpha[s] = (1.0 - alpha[s]) / (1.0 - alpha_bar[s]).sqrt();
        }
        Ok(NoiseSchedule {
            steps,
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
            tilde_beta,
            tilde_alpha,
        })
    }

    /// 200 steps, beta from 1e-4 to 0.05.
    pub fn full() -> Self {
        Self::new(200, 1e-4, 0.05).expect("valid constants")
    }

    /// 100 steps; the end beta is raised so `alpha_bar[S]` is still below 0.01.
    pub fn desk() -> Self {
        Self::new(100, 1e-4, 0.1).expect("valid constants")
    }

    fn check_step(&self, s: usize, min: usize) -> Result<(), DiffusionError> {
        if s < min || s > self.steps {
            return Err(DiffusionError::StepOutOfRange {
                step: s,
                steps: self.steps,
            });
        }
        Ok(())
    }

    /// `p_s = √ᾱ_s·p0 + √(1−ᾱ_s)·eps`.
    pub fn forward_sample(&self, p0: &Point5, s: usize, eps: &Point5) -> Result<Point5, DiffusionError> {
        self.check_step(s, 1)?;
        let (a, b) = (self.alpha_bar[s].sqrt(), (1.0 - self.alpha_bar[s]).sqrt());
        Ok(std::array::from_fn(|i| a * p0[i] + b * eps[i]))
    }

    /// Mean and variance of `q(p_{s−1} | p_s, p0)` from the coefficient form
    /// `√ᾱ_{s−1}β_s/(1−ᾱ_s)·p0 + √α_s(1−ᾱ_{s−1})/(1−ᾱ_s)·p_s`.
    pub fn posterior_stats(&self, p_s: &Point5, p0: &Point5, s: usize) -> Result<(Point5, f64), DiffusionError> {
        self.check_step(s, 2)?;
        let denom = 1.0 - self.alpha_bar[s];
        let c0 = self.alpha_bar[s - 1].sqrt() * self.beta[s] / denom;
        let cs = self.alpha[s].sqrt() * (1.0 - self.alpha_bar[s - 1]) / denom;
        Ok((std::array::from_fn(|i| c0 * p0[i] + cs * p_s[i]), self.tilde_beta[s]))
    }

    /// The same mean written through the noise:
    /// `(p_s − β_s/√(1−ᾱ_s)·eps)/√α_s` with `eps = (p_s − √ᾱ_s p0)/√(1−ᾱ_s)`.
    pub fn posterior_mean_via_noise(&self, p_s: &Point5, p0: &Point5, s: usize) -> Result<Point5, DiffusionError> {
        self.check_step(s, 2)?;
        let sd = (1.0 - self.alpha_bar[s]).sqrt();
        let eps: Point5 = std::array::from_fn(|i| (p_s[i] - self.alpha_bar[s].sqrt() * p0[i]) / sd);
        Ok(self.model_mean(p_s, &eps, s))
    }

    /// Reverse-step mean for a predicted noise: `(p − α̃_s·ε̂)/√α_s`.
    pub fn model_mean(&self, p: &Point5, eps_hat: &Point5, s: usize) -> Point5 {
        let inv = 1.0 / self.alpha[s].sqrt();
        let ta = self.tilde_alpha[s];
        std::array::from_fn(|i| inv * (p[i] - ta * eps_hat[i]))
    }

    /// Reverse-step mean through the implied clean point: `p̂0 = (p −
    /// √(1−ᾱ_s)·ε̂)/√ᾱ_s` is clamped to `[−bound, bound]` and plugged into the
    /// posterior-mean coefficients. Identical to [`Self::model_mean`] (up to
    /// rounding) whenever `p̂0` lies inside the bound.
    pub fn clipped_model_mean(&self, p: &Point5, eps_hat: &Point5, s: usize, bound: f64) -> Point5 {
        let ab = self.alpha_bar[s];
        let (sa, sd) = (ab.sqrt(), (1.0 - ab).sqrt());
        let denom = 1.0 - ab;
        let c0 = self.alpha_bar[s - 1].sqrt() * self.beta[s] / denom;
        let cs = self.alpha[s].sqrt() * (1.0 - self.alpha_bar[s - 1]) / denom;
        std::array::from_fn(|i| {
            let x0 = ((p[i] - sd * eps_hat[i]) / sa).clamp(-bound, bound);
            c0 * x0 + cs * p[i]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn full_schedule_ends_near_standard_normal() {
        let s = NoiseSchedule::full();
        assert!(s.alpha_bar[200] < 0.01, "{}", s.alpha_bar[200]);
        assert!((s.alpha_bar[200] - 6.4e-3).abs() < 3e-4);
        assert!(NoiseSchedule::desk().alpha_bar[100] < 0.01);
    }

    #[test]
    fn identities_hold() {
        for sched in [NoiseSchedule::full(), NoiseSchedule::desk(), NoiseSchedule::new(7, 0.01, 0.3).unwrap()] {
            assert_eq!(sched.tilde_beta[1], 0.0);
            for s in 1..=sched.steps {
                assert!(sched.beta[s] > 0.0 && sched.beta[s] < 1.0);
                if s > 1 {
                    assert!(sched.beta[s] >= sched.beta[s - 1]);
                    assert!(sched.tilde_beta[s] > 0.0 && sched.tilde_beta[s] < sched.beta[s]);
                }
                assert_eq!(sched.alpha_bar[s], sched.alpha[s] * sched.alpha_bar[s - 1]);
                assert!(sched.alpha_bar[s] < sched.alpha_bar[s - 1]);
            }
        }
        let one = NoiseSchedule::new(1, 0.02, 0.02).unwrap();
        assert_eq!(one.alpha_bar[1], 1.0 - 0.02);
    }

    #[test]
    fn rejects_invalid_ranges() {
        assert!(NoiseSchedule::new(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::new(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::new(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::new(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_sample_edge_cases() {
        let sched = NoiseSchedule::desk();
        let p0 = [0.3, -0.2, 0.1, 1.0, -1.0];
        let eps = [0.5, 0.4, -0.3, 0.2, 0.1];
        let a = sched.forward_sample(&p0, 10, &[0.0; 5]).unwrap();
        let b = sched.forward_sample(&[0.0; 5], 10, &eps).unwrap();
        for i in 0..5 {
            assert_eq!(a[i], sched.alpha_bar[10].sqrt() * p0[i]);
            assert_eq!(b[i], (1.0 - sched.alpha_bar[10]).sqrt() * eps[i]);
        }
        assert!(sched.forward_sample(&p0, 0, &eps).is_err());
        assert!(sched.forward_sample(&p0, 101, &eps).is_err());
    }

    #[test]
    fn posterior_mean_forms_agree() {
        let sched = NoiseSchedule::full();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let s = rng.random_range(2..=200);
            let p0: Point5 = std::array::from_fn(|_| rng.sample(StandardNormal));
            let ps: Point5 = std::array::from_fn(|_| rng.sample(StandardNormal));
            let (m1, var) = sched.posterior_stats(&ps, &p0, s).unwrap();
            let m2 = sched.posterior_mean_via_noise(&ps, &p0, s).unwrap();
            assert_eq!(var, sched.tilde_beta[s]);
            for i in 0..5 {
                assert!((m1[i] - m2[i]).abs() < 1e-12, "s={s}: {} vs {}", m1[i], m2[i]);
            }
        }
        let p0 = [1.0, 2.0, -1.0, 0.5, 0.0];
        let ps = sched.forward_sample(&p0, 40, &[0.0; 5]).unwrap();
        let (m, _) = sched.posterior_stats(&ps, &p0, 40).unwrap();
        for i in 0..5 {
            assert!((m[i] - sched.alpha_bar[39].sqrt() * p0[i]).abs() < 1e-12);
        }
        assert!(sched.posterior_stats(&ps, &p0, 1).is_err());
    }
}
