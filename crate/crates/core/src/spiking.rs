//! CUBA-LIF dynamics, spiking convolution, spike pooling and the surrogate
//! gradient used for backpropagation through time.
//!
//! Per neuron and timestep:
//!
//! ```text
//! u[t]  = (1 - α_u)·u[t-1] + x[t]
//! v̂[t]  = (1 - α_v)·v[t-1] + u[t]
//! s[t]  = H(v̂[t] - θ)
//! v[t]  = v̂[t]·(1 - s[t])          hard reset
//! ```
//!
//! During backward the Heaviside derivative is replaced by
//! `(1/2σ)·exp(-|v̂ - θ|/σ)`, evaluated on the pre-reset voltage. In
//! [`SpikeMode::Relaxed`] the forward pass uses the integral of that kernel
//! instead of `H`, which makes the same backward pass an exact gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binary `[C, H, W, T]` event tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor<S> {
    tensor: Tensor<S>,
}

impl<S: Scalar> SpikeTensor<S> {
    pub fn new(tensor: Tensor<S>) -> Result<Self> {
        if tensor.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "spike tensor must be [C, H, W, T], got {:?}",
                tensor.shape()
            )));
        }
        if let Some(i) = tensor.data().iter().position(|&v| v != S::zero() && v != S::one()) {
            return Err(Error::Contract(format!(
                "spike tensor element {i} is {}, expected 0 or 1",
                tensor.data()[i]
            )));
        }
        Ok(Self { tensor })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, timesteps: usize) -> Result<Self> {
        Ok(Self {
            tensor: Tensor::zeros(&[channels, height, width, timesteps])?,
        })
    }

    pub fn from_bits(shape: [usize; 4], bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { S::one() } else { S::zero() }).collect();
        Ok(Self {
            tensor: Tensor::from_vec(&shape, data)?,
        })
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn timesteps(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn get(&self, c: usize, y: usize, x: usize, t: usize) -> bool {
        self.tensor.get(&[c, y, x, t]) != S::zero()
    }

    /// Total number of spikes.
    pub fn count(&self) -> usize {
        self.tensor.data().iter().filter(|&&v| v != S::zero()).count()
    }

    /// Spike count of every frame.
    pub fn counts_per_timestep(&self) -> Vec<usize> {
        let t = self.timesteps();
        let mut out = vec![0; t];
        for (i, &v) in self.tensor.data().iter().enumerate() {
            if v != S::zero() {
                out[i % t] += 1;
            }
        }
        out
    }

    /// Reverses the temporal axis.
    pub fn time_reversed(&self) -> Self {
        let t = self.timesteps();
        let src = self.tensor.data();
        let data = (0..src.len()).map(|i| src[i - i % t + (t - 1 - i % t)]).collect();
        Self {
            tensor: Tensor::from_vec(self.tensor.shape(), data).expect("same shape"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubaLifParams {
    pub current_decay: f64,
    pub voltage_decay: f64,
    pub threshold: f64,
    pub surrogate_width: f64,
}

impl Default for CubaLifParams {
    fn default() -> Self {
        Self {
            current_decay: 0.25,
            voltage_decay: 0.1,
            threshold: 1.0,
            surrogate_width: 0.5,
        }
    }
}

impl CubaLifParams {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.current_decay) || !unit.contains(&self.voltage_decay) {
            return Err(Error::Config(format!(
                "LIF decays must lie in [0, 1], got {} and {}",
                self.current_decay, self.voltage_decay
            )));
        }
        // θ = 0 is tolerated for limit checks; negative or NaN is not.
        if !(self.threshold >= 0.0) {
            return Err(Error::Config(format!("LIF threshold must be positive, got {}", self.threshold)));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::Config(format!(
                "surrogate width must be positive, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

/// How a spiking layer produces its output in the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeMode {
    /// Heaviside spikes, surrogate gradient.
    #[default]
    Binary,
    /// Smooth spikes whose exact derivative is the surrogate.
    Relaxed,
}

/// Spatial reduction applied after a spiking convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "threshold")]
pub enum SpikePoolMode {
    /// Any spike in the 2×2 window.
    #[default]
    Or,
    /// Spike when the window holds at least this many spikes.
    SumThreshold(u8),
}

/// `ds/dv` stand-in: `(1/2σ)·exp(-|v - θ|/σ)`.
pub fn surrogate_grad<S: Scalar>(v: &Tensor<S>, p: &CubaLifParams) -> Tensor<S> {
    let (theta, sigma) = (S::of(p.threshold), S::of(p.surrogate_width));
    v.map(|x| surrogate(x, theta, sigma))
}

#[inline]
fn surrogate<S: Scalar>(v: S, theta: S, sigma: S) -> S {
    let half = S::of(0.5);
    half / sigma * (-(v - theta).abs() / sigma).exp()
}

#[inline]
fn relaxed_spike<S: Scalar>(v: S, theta: S, sigma: S) -> S {
    let half = S::of(0.5);
    let d = v - theta;
    if d < S::zero() {
        half * (d / sigma).exp()
    } else {
        S::one() - half * (-d / sigma).exp()
    }
}

/// Neuron state of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CubaLifState<S> {
    pub u: Tensor<S>,
    pub v: Tensor<S>,
}

impl<S: Scalar> CubaLifState<S> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Ok(Self {
            u: Tensor::zeros(shape)?,
            v: Tensor::zeros(shape)?,
        })
    }
}

/// Result of one LIF update.
#[derive(Clone, Debug)]
pub struct LifStep<S> {
    pub state: CubaLifState<S>,
    pub spikes: Tensor<S>,
    /// Voltage before reset; the surrogate is evaluated here.
    pub v_pre: Tensor<S>,
}

/// Advances a layer of CUBA-LIF neurons by one timestep.
pub fn cuba_lif_step<S: Scalar>(
    state: &CubaLifState<S>,
    input: &Tensor<S>,
    p: &CubaLifParams,
    layer: &str,
    timestep: usize,
) -> Result<LifStep<S>> {
    if input.shape() != state.u.shape() || state.u.shape() != state.v.shape() {
        return Err(Error::shapes("LIF input vs state", input.shape(), state.u.shape()));
    }
    if !input.all_finite() {
        return Err(Error::Numeric {
            layer: layer.to_string(),
            timestep,
        });
    }
    let (du, dv) = (S::one() - S::of(p.current_decay), S::one() - S::of(p.voltage_decay));
    let theta = S::of(p.threshold);
    let n = input.numel();
    let (mut u, mut v, mut s, mut vp) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let ui = du * state.u.data()[i] + input.data()[i];
        let vh = dv * state.v.data()[i] + ui;
        let si = if vh >= theta { S::one() } else { S::zero() };
        u.push(ui);
        vp.push(vh);
        v.push(vh * (S::one() - si));
        s.push(si);
    }
    let shape = input.shape();
    Ok(LifStep {
        state: CubaLifState {
            u: Tensor::from_vec(shape, u)?,
            v: Tensor::from_vec(shape, v)?,
        },
        spikes: Tensor::from_vec(shape, s)?,
        v_pre: Tensor::from_vec(shape, vp)?,
    })
}

/// Runs the recurrence for `neurons` rows of `steps` drive values laid out
/// time-innermost. Returns spikes and pre-reset voltages in the same layout.
pub(crate) fn lif_sequence<S: Scalar>(
    drive: &[S],
    steps: usize,
    p: &CubaLifParams,
    mode: SpikeMode,
    layer: &str,
) -> Result<(Vec<S>, Vec<S>)> {
    if let Some(i) = drive.iter().position(|x| !x.is_finite()) {
        let t = (0..drive.len())
            .filter(|&j| !drive[j].is_finite())
            .map(|j| j % steps)
            .min()
            .unwrap_or(i % steps);
        return Err(Error::Numeric {
            layer: layer.to_string(),
            timestep: t,
        });
    }
    let (du, dv) = (S::one() - S::of(p.current_decay), S::one() - S::of(p.voltage_decay));
    let (theta, sigma) = (S::of(p.threshold), S::of(p.surrogate_width));
    let mut spikes = vec![S::zero(); drive.len()];
    let mut v_pre = vec![S::zero(); drive.len()];
    for ((x, s), vp) in drive
        .chunks_exact(steps)
        .zip(spikes.chunks_exact_mut(steps))
        .zip(v_pre.chunks_exact_mut(steps))
    {
        let (mut u, mut v) = (S::zero(), S::zero());
        for t in 0..steps {
            u = du * u + x[t];
            let vh = dv * v + u;
            let st = match mode {
                SpikeMode::Binary => {
                    if vh >= theta {
                        S::one()
                    } else {
                        S::zero()
                    }
                }
                SpikeMode::Relaxed => relaxed_spike(vh, theta, sigma),
            };
            vp[t] = vh;
            s[t] = st;
            v = vh * (S::one() - st);
        }
    }
    Ok((spikes, v_pre))
}

/// Backpropagation through time for [`lif_sequence`]: maps output-spike
/// gradients to drive gradients, walking each neuron's history backwards.
pub(crate) fn lif_sequence_backward<S: Scalar>(
    grad_spikes: &[S],
    spikes: &[S],
    v_pre: &[S],
    steps: usize,
    p: &CubaLifParams,
) -> Vec<S> {
    let (du, dv) = (S::one() - S::of(p.current_decay), S::one() - S::of(p.voltage_decay));
    let (theta, sigma) = (S::of(p.threshold), S::of(p.surrogate_width));
    let mut gx = vec![S::zero(); grad_spikes.len()];
    for (((gs, s), vp), g) in grad_spikes
        .chunks_exact(steps)
        .zip(spikes.chunks_exact(steps))
        .zip(v_pre.chunks_exact(steps))
        .zip(gx.chunks_exact_mut(steps))
    {
        // gradients arriving from step t+1
        let (mut gv_next, mut gu_next) = (S::zero(), S::zero());
        for t in (0..steps).rev() {
            let g_spike = gs[t] - gv_next * vp[t];
            let g_vhat = gv_next * (S::one() - s[t]) + g_spike * surrogate(vp[t], theta, sigma);
            let g_u = gu_next + g_vhat;
            g[t] = g_u;
            gv_next = dv * g_vhat;
            gu_next = du * g_u;
        }
    }
    gx
}

/// Window-reduces a `[C, H, W, T]` spike map by 2×2 per timestep.
pub fn spike_pool<S: Scalar>(x: &SpikeTensor<S>) -> Result<SpikeTensor<S>> {
    spike_pool_with(x, SpikePoolMode::Or)
}

pub fn spike_pool_with<S: Scalar>(x: &SpikeTensor<S>, mode: SpikePoolMode) -> Result<SpikeTensor<S>> {
    let [c, h, w, t] = [x.channels(), x.height(), x.width(), x.timesteps()];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("spike pooling needs even H and W, got {h}×{w}")));
    }
    let data = match mode {
        SpikePoolMode::Or => kernels::maxpool2_forward(x.tensor().data(), c, h, w, t).0,
        SpikePoolMode::SumThreshold(k) => sum_threshold_pool(x.tensor().data(), c, h, w, t, k).0,
    };
    SpikeTensor::new(Tensor::from_vec(&[c, h / 2, w / 2, t], data)?)
}

/// Sum-then-threshold pooling. Also returns window sums for the backward.
pub(crate) fn sum_threshold_pool<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    t: usize,
    threshold: u8,
) -> (Vec<S>, Vec<S>) {
    let (oh, ow) = (h / 2, w / 2);
    let thr = S::of(f64::from(threshold));
    let mut out = Vec::with_capacity(c * oh * ow * t);
    let mut sums = Vec::with_capacity(c * oh * ow * t);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                for ti in 0..t {
                    let mut acc = S::zero();
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        acc = acc + x[((ch * h + 2 * oy + dy) * w + 2 * ox + dx) * t + ti];
                    }
                    out.push(if acc >= thr { S::one() } else { S::zero() });
                    sums.push(acc);
                }
            }
        }
    }
    (out, sums)
}

/// Spiking convolution outside the autodiff graph: per timestep,
/// `conv2d(x[..., t], w) + bias` drives a CUBA-LIF layer.
pub fn spk_conv_forward<S: Scalar>(
    x: &SpikeTensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
    p: &CubaLifParams,
) -> Result<SpikeTensor<S>> {
    p.validate()?;
    let geom = conv_geom(x.tensor().shape(), weight.shape(), stride, pad)?;
    let mut drive = kernels::conv2d_forward(x.tensor().data(), weight.data(), &geom);
    if let Some(b) = bias {
        add_channel_bias(&mut drive, b.data(), geom.filters)?;
    }
    let (spikes, _) = lif_sequence(&drive, geom.batch, p, SpikeMode::Binary, "spk_conv")?;
    SpikeTensor::new(Tensor::from_vec(
        &[geom.filters, geom.out_height(), geom.out_width(), geom.batch],
        spikes,
    )?)
}

pub(crate) fn add_channel_bias<S: Scalar>(data: &mut [S], bias: &[S], channels: usize) -> Result<()> {
    if bias.len() != channels || data.len() % channels != 0 {
        return Err(Error::Dimension(format!(
            "bias of length {} for {channels} channels",
            bias.len()
        )));
    }
    let per = data.len() / channels;
    for (chunk, &b) in data.chunks_exact_mut(per).zip(bias) {
        for v in chunk {
            *v = *v + b;
        }
    }
    Ok(())
}

/// Validates shapes for a convolution over `[C, H, W, B]` (or `[C, H, W]`).
pub(crate) fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let (c, h, wd, b) = match *x {
        [c, h, w] => (c, h, w, 1),
        [c, h, w, b] => (c, h, w, b),
        _ => return Err(Error::Dimension(format!("conv2d input must be [C,H,W] or [C,H,W,B], got {x:?}"))),
    };
    let &[f, wc, kh, kw] = w else {
        return Err(Error::Dimension(format!("conv2d weight must be [F,C,k,k], got {w:?}")));
    };
    if wc != c || kh != kw {
        return Err(Error::shapes("conv2d input vs weight", x, w));
    }
    if stride == 0 {
        return Err(Error::Dimension("conv2d stride must be at least 1".into()));
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(Error::Dimension(format!(
            "kernel {kh}×{kw} larger than padded input {}×{}",
            h + 2 * pad,
            wd + 2 * pad
        )));
    }
    Ok(ConvGeom {
        channels: c,
        height: h,
        width: wd,
        batch: b,
        filters: f,
        kernel: kh,
        stride,
        pad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(u: f64, v: f64) -> CubaLifState<f64> {
        CubaLifState {
            u: Tensor::scalar(u),
            v: Tensor::scalar(v),
        }
    }

    #[test]
    fn quiescent_state_stays_silent() {
        let st = CubaLifState::<f64>::zeros(&[3, 2]).unwrap();
        let x = Tensor::zeros(&[3, 2]).unwrap();
        let out = cuba_lif_step(&st, &x, &CubaLifParams::default(), "l", 0).unwrap();
        assert!(out.spikes.data().iter().all(|&s| s == 0.0));
        assert!(out.state.u.data().iter().chain(out.state.v.data()).all(|&s| s == 0.0));
    }

    #[test]
    fn suprathreshold_single_step() {
        let p = CubaLifParams {
            current_decay: 0.0,
            voltage_decay: 0.0,
            threshold: 1.0,
            surrogate_width: 0.5,
        };
        let out = cuba_lif_step(&scalar_state(0.0, 0.0), &Tensor::scalar(1.5), &p, "l", 0).unwrap();
        assert_eq!(out.state.u.data(), &[1.5]);
        assert_eq!(out.v_pre.data(), &[1.5]);
        assert_eq!(out.spikes.data(), &[1.0]);
        assert_eq!(out.state.v.data(), &[0.0]);
    }

    #[test]
    fn nan_input_names_layer_and_step() {
        let err = cuba_lif_step(&scalar_state(0.0, 0.0), &Tensor::scalar(f64::NAN), &CubaLifParams::default(), "conv2", 7)
            .unwrap_err();
        assert!(matches!(err, Error::Numeric { ref layer, timestep: 7 } if layer == "conv2"));
        let err = lif_sequence(&[0.0, 1.0, f64::NAN, 0.0], 4, &CubaLifParams::default(), SpikeMode::Binary, "x").unwrap_err();
        assert!(matches!(err, Error::Numeric { timestep: 2, .. }));
    }

    #[test]
    fn surrogate_values() {
        let p = CubaLifParams {
            threshold: 1.0,
            surrogate_width: 1.0,
            ..CubaLifParams::default()
        };
        let v = Tensor::from_vec(&[3], vec![1.0, 2.0, 1e6]).unwrap();
        let g = surrogate_grad(&v, &p);
        assert_eq!(g.data()[0], 0.5);
        assert!((g.data()[1] - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.data()[1] - 0.18394).abs() < 1e-5);
        assert_eq!(g.data()[2], 0.0);
    }

    #[test]
    fn relaxed_spike_integrates_surrogate() {
        let (theta, sigma) = (1.0f64, 0.5);
        for &v in &[-2.0, 0.3, 0.999, 1.0, 1.4, 3.0] {
            let h = 1e-6;
            let fd = (relaxed_spike(v + h, theta, sigma) - relaxed_spike(v - h, theta, sigma)) / (2.0 * h);
            assert!((fd - surrogate(v, theta, sigma)).abs() < 1e-5, "v={v}");
        }
        assert_eq!(relaxed_spike(theta, theta, sigma), 0.5);
    }

    #[test]
    fn sequence_matches_single_steps() {
        let p = CubaLifParams::default();
        let drive: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let (s, vp) = lif_sequence(&drive, 6, &p, SpikeMode::Binary, "l").unwrap();
        for n in 0..2 {
            let mut st = scalar_state(0.0, 0.0);
            for t in 0..6 {
                let out = cuba_lif_step(&st, &Tensor::scalar(drive[n * 6 + t]), &p, "l", t).unwrap();
                assert_eq!(out.spikes.data()[0], s[n * 6 + t]);
                assert_eq!(out.v_pre.data()[0], vp[n * 6 + t]);
                st = out.state;
            }
        }
    }

    #[test]
    fn pooling_or_semantics() {
        let x = SpikeTensor::<f64>::from_bits([1, 2, 2, 1], &[true, false, false, false]).unwrap();
        assert_eq!(spike_pool(&x).unwrap().tensor().data(), &[1.0]);
        let z = SpikeTensor::<f64>::zeros(1, 4, 4, 2).unwrap();
        assert_eq!(spike_pool(&z).unwrap().count(), 0);
        let odd = SpikeTensor::<f64>::zeros(1, 3, 4, 1).unwrap();
        assert!(matches!(spike_pool(&odd), Err(Error::Dimension(_))));
        let two = SpikeTensor::<f64>::from_bits([1, 2, 2, 1], &[true, true, false, false]).unwrap();
        let sum2 = spike_pool_with(&two, SpikePoolMode::SumThreshold(2)).unwrap();
        assert_eq!(sum2.tensor().data(), &[1.0]);
        assert_eq!(spike_pool_with(&x, SpikePoolMode::SumThreshold(2)).unwrap().count(), 0);
    }

    #[test]
    fn spike_tensor_rejects_graded_values() {
        let t = Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, 0.5]).unwrap();
        assert!(matches!(SpikeTensor::new(t), Err(Error::Contract(_))));
    }

    #[test]
    fn time_reversal_flips_frames() {
        let x = SpikeTensor::<f64>::from_bits([1, 1, 2, 3], &[true, false, false, false, true, true]).unwrap();
        let r = x.time_reversed();
        assert_eq!(r.tensor().data(), &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    }
}
