use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.05,
        }
    }
}

/// Linear-beta DDPM schedule. Arrays are indexed by `t - 1` for
/// t in 1..=T; the public accessors take t directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(config: ScheduleConfig) -> Self {
        assert!(config.steps >= 1, "need at least one diffusion step");
        let n = config.steps;
        let beta: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    config.beta_start
                } else {
                    config.beta_start
                        + (config.beta_end - config.beta_start) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self {
            config,
            beta,
            alpha,
            alpha_bar,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Sampler noise scale.
    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    /// Noised pose at step t.
    pub fn forward_noise(&self, p: &[f64; 6], t: usize, eps: &[f64; 6]) -> [f64; 6] {
        noise_with(self.alpha_bar(t), p, eps)
    }

    /// One reverse step given the predicted noise; `z` is ignored at t = 1.
    pub fn reverse_step(&self, x: f64, eps_hat: f64, t: usize, z: f64) -> f64 {
        let (a, ab) = (self.alpha(t), self.alpha_bar(t));
        let mean = (x - (1.0 - a) / (1.0 - ab).sqrt() * eps_hat) / a.sqrt();
        if t > 1 {
            mean + self.sigma(t) * z
        } else {
            mean
        }
    }
}

/// `sqrt(ab) p + sqrt(1 - ab) eps` for an explicit cumulative alpha.
pub fn noise_with(alpha_bar: f64, p: &[f64; 6], eps: &[f64; 6]) -> [f64; 6] {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    std::array::from_fn(|k| s * p[k] + n * eps[k])
}
