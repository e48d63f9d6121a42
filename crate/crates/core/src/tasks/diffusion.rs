use rand::Rng;
use rand_distr::StandardNormal;

use super::TaskError;

/// Linear-β DDPM noise schedule. Steps are numbered `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub const BETA_START: f64 = 1e-4;
    pub const BETA_END: f64 = 0.02;

    pub fn linear(n: usize, beta_start: f64, beta_end: f64) -> Result<Self, TaskError> {
        if n == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(TaskError::Invalid(format!("bad schedule n={n} β∈[{beta_start}, {beta_end}]")));
        }
        let betas: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// The standard 1e-4 → 0.02 schedule with `n` steps.
    pub fn standard(n: usize) -> Result<Self, TaskError> {
        Self::linear(n, Self::BETA_START, Self::BETA_END)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn at(&self, t: usize) -> Result<usize, TaskError> {
        if t == 0 || t > self.steps() {
            Err(TaskError::StepOutOfRange { t, n: self.steps() })
        } else {
            Ok(t - 1)
        }
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, TaskError> {
        Ok(self.alpha_bars[self.at(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64, TaskError> {
        Ok(self.betas[self.at(t)?].sqrt())
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, TaskError> {
        if x0.len() != eps.len() {
            return Err(TaskError::Invalid("q_sample: noise and signal differ in length".into()));
        }
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// One ancestral step `x_t → x_{t−1}` with σ_t = √β_t. `z` is ignored
    /// at `t = 1`.
    pub fn reverse_step(&self, xt: &[f64], eps_pred: &[f64], t: usize, z: &[f64]) -> Result<Vec<f64>, TaskError> {
        let i = self.at(t)?;
        if xt.len() != eps_pred.len() || (t > 1 && z.len() != xt.len()) {
            return Err(TaskError::Invalid("reverse_step: length mismatch".into()));
        }
        let (alpha, beta, ab) = (self.alphas[i], self.betas[i], self.alpha_bars[i]);
        let c = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sigma = beta.sqrt();
        Ok(xt
            .iter()
            .zip(eps_pred)
            .enumerate()
            .map(|(k, (x, e))| {
                let noise = if t > 1 { sigma * z[k] } else { 0.0 };
                inv * (x - c * e) + noise
            })
            .collect())
    }
}

/// Ancestral sampling from `x_N`: `denoise(x_t, t)` returns the predicted
/// noise. Fresh noise is drawn from `rng` for every step above 1.
pub fn ddpm_sample(
    schedule: &DiffusionSchedule,
    x_n: Vec<f64>,
    rng: &mut impl Rng,
    mut denoise: impl FnMut(&[f64], usize) -> Result<Vec<f64>, TaskError>,
) -> Result<Vec<f64>, TaskError> {
    let mut x = x_n;
    for t in (1..=schedule.steps()).rev() {
        let eps = denoise(&x, t)?;
        let z: Vec<f64> = if t > 1 { (0..x.len()).map(|_| rng.sample(StandardNormal)).collect() } else { Vec::new() };
        x = schedule.reverse_step(&x, &eps, t, &z)?;
    }
    Ok(x)
}

/// Sinusoidal step embedding: `sin(t·ω_i)` for the first half,
/// `cos(t·ω_i)` for the second, `ω_i = 10000^(−2i/dim)`.
pub fn sinusoidal_embed(t: usize, dim: usize) -> Result<Vec<f64>, TaskError> {
    if dim == 0 || dim % 2 == 1 {
        return Err(TaskError::Invalid(format!("sinusoidal_embed needs an even dim, got {dim}")));
    }
    let half = dim / 2;
    let omega = |i: usize| 10000f64.powf(-2.0 * i as f64 / dim as f64);
    let t = t as f64;
    Ok((0..half).map(|i| (t * omega(i)).sin()).chain((0..half).map(|i| (t * omega(i)).cos())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_examples() {
        assert_eq!(sinusoidal_embed(0, 4).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        let e = sinusoidal_embed(1, 2).unwrap();
        assert!((e[0] - 0.8415).abs() < 1e-4 && (e[1] - 0.5403).abs() < 1e-4);
        assert!(sinusoidal_embed(3, 5).is_err());
        assert!(sinusoidal_embed(977, 64).unwrap().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_prediction_rescales() {
        let s = DiffusionSchedule::standard(10).unwrap();
        let x = [0.5, -2.0];
        let y = s.reverse_step(&x, &[0.0, 0.0], 1, &[]).unwrap();
        let a = s.alphas[0].sqrt();
        assert!((y[0] - 0.5 / a).abs() < 1e-15 && (y[1] + 2.0 / a).abs() < 1e-15);
    }

    #[test]
    fn exact_noise_single_step_inverts() {
        let s = DiffusionSchedule::standard(1).unwrap();
        let x0 = [0.3, -0.7, 1.1];
        let eps = [1.5, -0.2, 0.4];
        let x1 = s.q_sample(&x0, 1, &eps).unwrap();
        let mut rng = rand::rng();
        let out = ddpm_sample(&s, x1, &mut rng, |_, _| Ok(eps.to_vec())).unwrap();
        for (a, b) in out.iter().zip(x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn range_checks() {
        let s = DiffusionSchedule::standard(10).unwrap();
        assert!(matches!(s.alpha_bar(0), Err(TaskError::StepOutOfRange { t: 0, n: 10 })));
        assert!(s.q_sample(&[1.0], 11, &[0.0]).is_err());
        assert!(DiffusionSchedule::linear(0, 1e-4, 0.02).is_err());
    }
}
