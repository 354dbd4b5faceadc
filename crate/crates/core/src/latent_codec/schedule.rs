use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const TRAIN_STEPS: usize = 1000;
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 2e-2;

/// Linear-β noise schedule with an evenly strided DDIM timestep subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha_bar: Vec<f64>,
    timesteps: Vec<usize>,
}

/// `1 ≤ sample_steps ≤ 1000`. Timesteps are `(0..T)·⌊1000/T⌋`, descending.
pub fn make_schedule(sample_steps: usize) -> Result<Schedule> {
    if !(1..=TRAIN_STEPS).contains(&sample_steps) {
        return Err(Error::Config(format!(
            "sample_steps must be in 1..={TRAIN_STEPS}, got {sample_steps}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(TRAIN_STEPS);
    let mut acc = 1.0f64;
    for s in 0..TRAIN_STEPS {
        let beta = BETA_START + (BETA_END - BETA_START) * s as f64 / (TRAIN_STEPS - 1) as f64;
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    let ratio = TRAIN_STEPS / sample_steps;
    let timesteps = (0..sample_steps).rev().map(|i| i * ratio).collect();
    Ok(Schedule {
        alpha_bar,
        timesteps,
    })
}

impl Schedule {
    pub fn train_steps(&self) -> usize {
        TRAIN_STEPS
    }

    pub fn sample_steps(&self) -> usize {
        self.timesteps.len()
    }

    /// Sampled timesteps, descending.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `ᾱ` at an optional timestep; `None` is the clean end of the chain (1.0).
    pub fn alpha_bar_or_one(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.alpha_bar[t])
    }

    /// Timestep reached after sampling step `step_index`, `None` after the last.
    pub fn prev_timestep(&self, step_index: usize) -> Option<usize> {
        self.timesteps.get(step_index + 1).copied()
    }
}

/// The deterministic DDIM move between two noise levels, either direction:
/// `x₀ = (z − √(1−ᾱ_from)·ε)/√ᾱ_from`, then `z' = √ᾱ_to·x₀ + √(1−ᾱ_to)·ε`.
pub fn ddim_transfer(z: &Tensor, eps: &Tensor, alpha_from: f64, alpha_to: f64) -> Result<Tensor> {
    if z.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "latent {:?} and noise {:?} differ",
            z.shape(),
            eps.shape()
        )));
    }
    let (sa_from, sb_from) = (alpha_from.sqrt(), (1.0 - alpha_from).sqrt());
    let (sa_to, sb_to) = (alpha_to.sqrt(), (1.0 - alpha_to).sqrt());
    let data = z
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| {
            let (z, e) = (z as f64, e as f64);
            let x0 = (z - sb_from * e) / sa_from;
            (sa_to * x0 + sb_to * e) as f32
        })
        .collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// One η = 0 sampling step from `t` down to `t_prev` (`None` = clean).
pub fn ddim_sample_step(
    z_t: &Tensor,
    eps: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    schedule: &Schedule,
) -> Result<Tensor> {
    if t_prev.is_some_and(|p| p >= t) {
        return Err(Error::Config(format!(
            "sampling requires t > t_prev, got {t} -> {t_prev:?}"
        )));
    }
    ddim_transfer(
        z_t,
        eps,
        schedule.alpha_bar(t),
        schedule.alpha_bar_or_one(t_prev),
    )
}

/// One inversion step from `t_prev` (`None` = clean) up to `t`.
pub fn ddim_invert_step(
    z_prev: &Tensor,
    eps: &Tensor,
    t_prev: Option<usize>,
    t: usize,
    schedule: &Schedule,
) -> Result<Tensor> {
    if t_prev.is_some_and(|p| p >= t) {
        return Err(Error::Config(format!(
            "inversion requires t_prev < t, got {t_prev:?} -> {t}"
        )));
    }
    ddim_transfer(
        z_prev,
        eps,
        schedule.alpha_bar_or_one(t_prev),
        schedule.alpha_bar(t),
    )
}

/// Classifier-free guidance: `uncond + scale·(cond − uncond)`.
pub fn cfg_combine(eps_uncond: &Tensor, eps_cond: &Tensor, scale: f32) -> Result<Tensor> {
    let diff = eps_cond.sub(eps_uncond)?;
    let data = eps_uncond
        .data()
        .iter()
        .zip(diff.data())
        .map(|(&u, &d)| u + scale * d)
        .collect();
    Tensor::new(eps_uncond.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_tensor;

    #[test]
    fn first_alpha_bar() {
        let s = make_schedule(50).unwrap();
        assert!((s.alpha_bar(0) - 0.9999).abs() < 1e-12);
    }

    #[test]
    fn schedule_monotone_and_bounded() {
        let s = make_schedule(50).unwrap();
        for t in 1..TRAIN_STEPS {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        for t in 0..TRAIN_STEPS {
            let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
            assert!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0);
        }
    }

    #[test]
    fn timestep_map() {
        let s = make_schedule(50).unwrap();
        assert_eq!(s.sample_steps(), 50);
        assert_eq!(s.timesteps()[0], 980);
        assert_eq!(*s.timesteps().last().unwrap(), 0);
        assert!(s.timesteps().windows(2).all(|w| w[0] > w[1]));
        assert_eq!(make_schedule(1000).unwrap().timesteps()[0], 999);
    }

    #[test]
    fn schedule_range_checked() {
        assert!(matches!(make_schedule(0), Err(Error::Config(_))));
        assert!(matches!(make_schedule(1001), Err(Error::Config(_))));
    }

    #[test]
    fn zero_noise_step_is_pure_scaling() {
        let s = make_schedule(50).unwrap();
        let z = seeded_tensor(&[2, 4], 3).unwrap();
        let eps = Tensor::zeros(vec![2, 4]);
        let out = ddim_sample_step(&z, &eps, 500, Some(480), &s).unwrap();
        let k = (s.alpha_bar(480) / s.alpha_bar(500)).sqrt() as f32;
        for (o, v) in out.data().iter().zip(z.data()) {
            assert!((o - k * v).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_alphas_are_a_fixed_point() {
        let z = seeded_tensor(&[3, 3], 1).unwrap();
        let out = ddim_transfer(&z, &Tensor::zeros(vec![3, 3]), 0.3, 0.3).unwrap();
        assert!(out.max_abs_diff(&z).unwrap() < 1e-7);
    }

    #[test]
    fn invert_then_sample_round_trips() {
        let s = make_schedule(50).unwrap();
        let z = seeded_tensor(&[4, 8], 5).unwrap();
        let eps = seeded_tensor(&[4, 8], 6).unwrap().scale(3.0);
        let up = ddim_invert_step(&z, &eps, Some(480), 500, &s).unwrap();
        let down = ddim_sample_step(&up, &eps, 500, Some(480), &s).unwrap();
        assert!(down.max_abs_diff(&z).unwrap() < 1e-4);
    }

    #[test]
    fn sample_direction_checked() {
        let s = make_schedule(50).unwrap();
        let z = Tensor::zeros(vec![1, 1]);
        assert!(ddim_sample_step(&z, &z, 100, Some(200), &s).is_err());
    }

    #[test]
    fn cfg_cases() {
        let u = seeded_tensor(&[2, 3], 1).unwrap();
        let c = seeded_tensor(&[2, 3], 2).unwrap();
        assert!(cfg_combine(&u, &c, 1.0).unwrap().max_abs_diff(&c).unwrap() < 1e-6);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&u, &u, 7.5).unwrap(), u);
    }
}
