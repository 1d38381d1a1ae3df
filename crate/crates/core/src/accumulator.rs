//! Spiking to non-spiking bridge.
//!
//! The accumulator sums spikes over consecutive groups of `interval`
//! timesteps and concatenates the group sums along the channel axis,
//! earliest group first. For a `[C, H, W, T]` spike tensor the output is
//! `[C·T/I, H, W]` with
//!
//! ```text
//! A[j, h, w] = Σ_{k<I} S[j mod C, h, w, I·⌊j/C⌋ + k]
//! ```
//!
//! The backward pass copies each output gradient back onto the `I`
//! timesteps that were summed into it. The group-major, channel-minor
//! layout is shared with the counter-bank simulator and with the first
//! layer of the non-spiking head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spiking::SpikeTensor;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulatorConfig {
    pub interval: usize,
    pub timesteps: usize,
    /// Accept `interval ∤ timesteps` by letting the last group cover the
    /// remaining steps. Off by default.
    #[serde(default)]
    pub pad_partial: bool,
}

impl AccumulatorConfig {
    pub fn new(interval: usize, timesteps: usize) -> Result<Self> {
        let cfg = Self {
            interval,
            timesteps,
            pad_partial: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn padded(interval: usize, timesteps: usize) -> Result<Self> {
        let cfg = Self {
            interval,
            timesteps,
            pad_partial: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.interval == 0 || self.interval > self.timesteps {
            return Err(Error::Config(format!(
                "accumulate interval must lie in 1..={}, got {}",
                self.timesteps, self.interval
            )));
        }
        if !self.pad_partial && self.timesteps % self.interval != 0 {
            return Err(Error::Config(format!(
                "accumulate interval {} does not divide {} timesteps",
                self.interval, self.timesteps
            )));
        }
        Ok(())
    }

    /// Number of interval groups, i.e. the channel expansion factor `T/I`.
    pub fn groups(&self) -> usize {
        self.timesteps.div_ceil(self.interval)
    }

    pub fn output_channels(&self, channels: usize) -> usize {
        channels * self.groups()
    }
}

/// Real-valued `[C·T/I, H, W]` tensor of per-interval spike counts.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulatedTensor<S> {
    tensor: Tensor<S>,
}

impl<S: Scalar> AccumulatedTensor<S> {
    pub fn tensor(&self) -> &Tensor<S> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn max_count(&self) -> S {
        self.tensor
            .data()
            .iter()
            .fold(S::zero(), |m, &x| if x > m { x } else { m })
    }
}

pub(crate) fn forward_kernel<S: Scalar>(
    x: &[S],
    channels: usize,
    sites: usize,
    cfg: &AccumulatorConfig,
) -> Vec<S> {
    let (steps, interval) = (cfg.timesteps, cfg.interval);
    let groups = cfg.groups();
    let mut out = vec![S::zero(); groups * channels * sites];
    for g in 0..groups {
        let t0 = g * interval;
        let t1 = (t0 + interval).min(steps);
        for c in 0..channels {
            let dst = &mut out[(g * channels + c) * sites..][..sites];
            for (site, d) in dst.iter_mut().enumerate() {
                let src = &x[(c * sites + site) * steps..][..steps];
                *d = src[t0..t1].iter().fold(S::zero(), |acc, &v| acc + v);
            }
        }
    }
    out
}

pub(crate) fn backward_kernel<S: Scalar>(
    grad: &[S],
    channels: usize,
    sites: usize,
    cfg: &AccumulatorConfig,
) -> Vec<S> {
    let (steps, interval) = (cfg.timesteps, cfg.interval);
    let mut out = vec![S::zero(); channels * sites * steps];
    for c in 0..channels {
        for site in 0..sites {
            let dst = &mut out[(c * sites + site) * steps..][..steps];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = grad[((j / interval) * channels + c) * sites + site];
            }
        }
    }
    out
}

fn check_input<S: Scalar>(x: &Tensor<S>, cfg: &AccumulatorConfig) -> Result<(usize, usize, usize)> {
    cfg.validate()?;
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "accumulator expects [C, H, W, T], got {shape:?}"
        )));
    }
    if shape[3] != cfg.timesteps {
        return Err(Error::Config(format!(
            "accumulator configured for {} timesteps, input has {}",
            cfg.timesteps, shape[3]
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Folds the temporal axis of a spike tensor into channels.
pub fn accumulate_forward<S: Scalar>(
    spikes: &SpikeTensor<S>,
    cfg: &AccumulatorConfig,
) -> Result<AccumulatedTensor<S>> {
    accumulate_forward_real(spikes.tensor(), cfg)
}

/// Same map as [`accumulate_forward`] without the binary-input contract.
/// The map is linear, so it is well defined on any real input.
pub fn accumulate_forward_real<S: Scalar>(
    x: &Tensor<S>,
    cfg: &AccumulatorConfig,
) -> Result<AccumulatedTensor<S>> {
    let (c, h, w) = check_input(x, cfg)?;
    let data = forward_kernel(x.data(), c, h * w, cfg);
    Ok(AccumulatedTensor {
        tensor: Tensor::from_vec(&[cfg.output_channels(c), h, w], data)?,
    })
}

/// Expands a `[C·T/I, H, W]` gradient back to `[C, H, W, T]`.
pub fn accumulate_backward<S: Scalar>(grad: &Tensor<S>, cfg: &AccumulatorConfig) -> Result<Tensor<S>> {
    cfg.validate()?;
    let shape = grad.shape();
    let groups = cfg.groups();
    if shape.len() != 3 || shape[0] % groups != 0 {
        return Err(Error::Dimension(format!(
            "accumulator gradient {shape:?} is not [C·{groups}, H, W]"
        )));
    }
    let c = shape[0] / groups;
    let data = backward_kernel(grad.data(), c, shape[1] * shape[2], cfg);
    Tensor::from_vec(&[c, shape[1], shape[2], cfg.timesteps], data)
}

/// Where a random adjoint probe failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdjointViolation {
    pub trial: usize,
    /// First output element whose forward value disagrees with the
    /// transpose read back through the backward map.
    pub index: usize,
}

/// Checks `⟨A(x), y⟩ == ⟨x, Aᵀ(y)⟩` on random integer-valued probes, where
/// both sides are exact in floating point.
pub fn jacobian_check(
    cfg: &AccumulatorConfig,
    channels: usize,
    height: usize,
    width: usize,
    trials: usize,
    seed: u64,
) -> Result<std::result::Result<(), AdjointViolation>> {
    cfg.validate()?;
    let n_in = channels * height * width * cfg.timesteps;
    if n_in > 10_000 {
        return Err(Error::Contract(format!(
            "jacobian_check is limited to 10^4 input elements, got {n_in}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_shape = [channels, height, width, cfg.timesteps];
    let out_shape = [cfg.output_channels(channels), height, width];
    for trial in 0..trials {
        let x = Tensor::<f64>::from_fn(&in_shape, |_| f64::from(rng.gen_range(0u8..=1)))?;
        let y = Tensor::<f64>::from_fn(&out_shape, |_| f64::from(rng.gen_range(-1000i32..=1000)))?;
        let ax = accumulate_forward_real(&x, cfg)?.into_tensor();
        let aty = accumulate_backward(&y, cfg)?;
        if ax.dot(&y)? != x.dot(&aty)? {
            let index = first_mismatch(&x, &ax, cfg)?;
            return Ok(Err(AdjointViolation { trial, index }));
        }
    }
    Ok(Ok(()))
}

fn first_mismatch(x: &Tensor<f64>, ax: &Tensor<f64>, cfg: &AccumulatorConfig) -> Result<usize> {
    let shape = ax.shape().to_vec();
    for j in 0..ax.numel() {
        let e = Tensor::from_fn(&shape, |i| if i == j { 1.0 } else { 0.0 })?;
        let row = accumulate_backward(&e, cfg)?;
        if x.dot(&row)? != ax.data()[j] {
            return Ok(j);
        }
    }
    Ok(0)
}
