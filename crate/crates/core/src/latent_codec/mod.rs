//! Toy VAE stand-in, the DDIM schedule, and deterministic sampling/inversion.

mod cache;
mod latent;
mod schedule;

pub use cache::{AttentionCache, BranchRecord, SourceQk, StepRecord};
pub use latent::{encode_frames, LatentVideo, RgbVideo, LATENT_MAGIC};
pub use schedule::{
    cfg_combine, ddim_invert_step, ddim_sample_step, ddim_transfer, make_schedule, Schedule,
    TRAIN_STEPS,
};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A deterministic noise predictor that can record source activations.
pub trait InversionPredictor {
    /// Noise estimate for `z` at train timestep `t`, plus whatever the
    /// predictor wants cached for later injection.
    fn predict_recording(&self, z: &LatentVideo, t: usize) -> Result<(Tensor, StepRecord)>;
}

/// Predicts zero noise and records nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl InversionPredictor for ZeroPredictor {
    fn predict_recording(&self, z: &LatentVideo, _t: usize) -> Result<(Tensor, StepRecord)> {
        Ok((
            Tensor::zeros(z.tensor().shape().to_vec()),
            StepRecord::default(),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    /// Final noised latent `z_T`.
    pub z_t: LatentVideo,
    /// Latents after each inversion step, ascending in `t`.
    pub trajectory: Vec<LatentVideo>,
    pub cache: AttentionCache,
}

fn check_noise(z: &LatentVideo, eps: &Tensor, t: usize) -> Result<()> {
    if eps.shape() != z.tensor().shape() {
        return Err(Error::Dimension(format!(
            "predictor returned {:?} for latents {:?}",
            eps.shape(),
            z.tensor().shape()
        ))
        .context(format!("timestep {t}")));
    }
    eps.ensure_finite("noise estimate")
        .map_err(|e| e.context(format!("timestep {t}")))
}

/// Approximate DDIM inversion: each step from `t_prev` to `t` uses the noise
/// predicted for the current latent at `t`, which is also the timestep the
/// recorded activations are filed under.
pub fn ddim_invert<P: InversionPredictor + ?Sized>(
    z0: &LatentVideo,
    schedule: &Schedule,
    predictor: &P,
) -> Result<Inversion> {
    let mut cache = AttentionCache::default();
    let mut trajectory = Vec::with_capacity(schedule.sample_steps());
    let mut z = z0.clone();
    let mut t_prev = None;
    for &t in schedule.timesteps().iter().rev() {
        let (eps, record) = predictor.predict_recording(&z, t)?;
        check_noise(&z, &eps, t)?;
        let next = ddim_invert_step(z.tensor(), &eps, t_prev, t, schedule)?;
        next.ensure_finite("inverted latents")
            .map_err(|e| e.context(format!("timestep {t}")))?;
        z = z.with_data(next)?;
        cache.insert(t, record);
        trajectory.push(z.clone());
        t_prev = Some(t);
    }
    Ok(Inversion {
        z_t: z,
        trajectory,
        cache,
    })
}

/// Runs the sampling chain from `z_t`, asking `eps_fn(step_index, t, z)`
/// for each noise estimate.
pub fn ddim_sample<F>(z_t: &LatentVideo, schedule: &Schedule, mut eps_fn: F) -> Result<LatentVideo>
where
    F: FnMut(usize, usize, &LatentVideo) -> Result<Tensor>,
{
    let mut z = z_t.clone();
    for (step, &t) in schedule.timesteps().iter().enumerate() {
        let eps = eps_fn(step, t, &z)?;
        check_noise(&z, &eps, t)?;
        let next = ddim_sample_step(z.tensor(), &eps, t, schedule.prev_timestep(step), schedule)?;
        next.ensure_finite("sampled latents")
            .map_err(|e| e.context(format!("timestep {t}")))?;
        z = z.with_data(next)?;
    }
    Ok(z)
}
