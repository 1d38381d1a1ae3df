//! Behavioural model of the hardware accumulator: a bank of saturating
//! `k`-bit counters with clock, sync and spike ports, an interval register
//! and an output latch, time-multiplexed over 128-neuron partitions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LANES: usize = 128;

/// Counter width able to hold every count `0..=interval`.
pub fn counter_bits_for(interval: usize) -> u32 {
    (usize::BITS - interval.leading_zeros()).max(1)
}

/// Width of the interval register, `⌈log2 I⌉` with a one-bit minimum.
pub fn interval_register_bits(interval: usize) -> u32 {
    counter_bits_for(interval.saturating_sub(1))
}

/// Per-partition state saved while another partition owns the datapath.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BankContext {
    counters: Vec<u32>,
    interval_reg: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterBank {
    bits: u32,
    interval: u32,
    counters: Vec<u32>,
    interval_reg: u32,
    latch: Vec<u32>,
    saturations: u64,
}

impl CounterBank {
    pub fn new(lanes: usize, bits: u32, interval: usize) -> Result<Self> {
        if lanes == 0 {
            return Err(Error::Config("counter bank needs at least one lane".into()));
        }
        if !(1..=32).contains(&bits) {
            return Err(Error::Config(format!("counter width {bits} outside 1..=32")));
        }
        let interval = u32::try_from(interval)
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| Error::Config(format!("interval {interval} must be in 1..=u32::MAX")))?;
        Ok(Self {
            bits,
            interval,
            counters: vec![0; lanes],
            interval_reg: 0,
            latch: vec![0; lanes],
            saturations: 0,
        })
    }

    /// A bank sized by [`counter_bits_for`].
    pub fn sized_for(lanes: usize, interval: usize) -> Result<Self> {
        Self::new(lanes, counter_bits_for(interval), interval)
    }

    pub fn lanes(&self) -> usize {
        self.counters.len()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn max_count(&self) -> u32 {
        u32::MAX >> (32 - self.bits)
    }

    pub fn bus_width(&self) -> usize {
        self.lanes() * self.bits as usize
    }

    pub fn counters(&self) -> &[u32] {
        &self.counters
    }

    pub fn interval_reg(&self) -> u32 {
        self.interval_reg
    }

    pub fn latch(&self) -> &[u32] {
        &self.latch
    }

    /// Increments that hit a full counter.
    pub fn saturation_events(&self) -> u64 {
        self.saturations
    }

    /// One clock edge. Returns the freshly latched values when the interval
    /// completes on this tick.
    pub fn clock_tick(&mut self, spikes: &[bool]) -> Result<Option<&[u32]>> {
        if spikes.len() != self.lanes() {
            return Err(Error::shapes("spike port", &[spikes.len()], &[self.lanes()]));
        }
        let max = self.max_count();
        for (c, &s) in self.counters.iter_mut().zip(spikes) {
            if s {
                if *c == max {
                    self.saturations += 1;
                } else {
                    *c += 1;
                }
            }
        }
        self.interval_reg += 1;
        if self.interval_reg == self.interval {
            self.latch.copy_from_slice(&self.counters);
            self.counters.fill(0);
            self.interval_reg = 0;
            return Ok(Some(&self.latch));
        }
        Ok(None)
    }

    /// Clears counters and the interval register; the latch holds.
    pub fn sync(&mut self) {
        self.counters.fill(0);
        self.interval_reg = 0;
    }

    pub fn save_context(&self) -> BankContext {
        BankContext {
            counters: self.counters.clone(),
            interval_reg: self.interval_reg,
        }
    }

    pub fn restore_context(&mut self, ctx: &BankContext) {
        self.counters.copy_from_slice(&ctx.counters);
        self.interval_reg = ctx.interval_reg;
    }
}

/// Split of a layer's neurons into lane-sized partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub neurons: usize,
    pub lanes: usize,
    pub partitions: usize,
    pub timesteps: usize,
}

impl PartitionPlan {
    pub fn new(neurons: usize, timesteps: usize, lanes: usize) -> Result<Self> {
        if lanes == 0 || timesteps == 0 {
            return Err(Error::Config("lanes and timesteps must be positive".into()));
        }
        Ok(Self {
            neurons,
            lanes,
            partitions: neurons.div_ceil(lanes),
            timesteps,
        })
    }

    pub fn padded_lanes(&self) -> usize {
        self.partitions * self.lanes - self.neurons
    }

    /// One partition slot per timestep per partition.
    pub fn cycles(&self) -> u64 {
        (self.partitions * self.timesteps) as u64
    }
}

/// Stimulus and latch records of a simulation, one entry per tick.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub stimulus: Vec<Vec<bool>>,
    /// `(tick, values)` for every latch event.
    pub latches: Vec<(u64, Vec<u32>)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRun {
    /// Counts laid out as `[group · M + neuron]`.
    pub counts: Vec<u32>,
    pub groups: usize,
    pub saturation_events: u64,
    pub latch_events: u64,
    pub spikes: u64,
    pub trace: Option<Trace>,
}

/// Feeds a flattened `M × T` spike matrix (`spikes[m·T + t]`) through one
/// time-multiplexed bank. Partition `p` takes sub-slot `p` of every
/// timestep; each partition keeps its own counter context.
pub fn run_layer(spikes: &[bool], plan: &PartitionPlan, interval: usize, bits: Option<u32>, record: bool) -> Result<LayerRun> {
    let PartitionPlan {
        neurons: m,
        lanes,
        partitions,
        timesteps: t_len,
    } = *plan;
    if spikes.len() != m * t_len {
        return Err(Error::Config(format!(
            "plan expects {m}×{t_len} spikes, layer provides {}",
            spikes.len()
        )));
    }
    if interval == 0 || t_len % interval != 0 {
        return Err(Error::Config(format!("interval {interval} must divide {t_len} timesteps")));
    }
    let groups = t_len / interval;
    let mut bank = CounterBank::new(lanes, bits.unwrap_or_else(|| counter_bits_for(interval)), interval)?;
    let mut contexts = vec![bank.save_context(); partitions];
    let mut counts = vec![0u32; groups * m];
    let mut trace = record.then(Trace::default);
    let mut port = vec![false; lanes];
    let (mut latch_events, mut total) = (0u64, 0u64);
    let mut tick = 0u64;
    for t in 0..t_len {
        for (p, ctx) in contexts.iter_mut().enumerate() {
            for (lane, bit) in port.iter_mut().enumerate() {
                let n = p * lanes + lane;
                *bit = n < m && spikes[n * t_len + t];
            }
            total += port.iter().filter(|&&b| b).count() as u64;
            bank.restore_context(ctx);
            if let Some(tr) = trace.as_mut() {
                tr.stimulus.push(port.clone());
            }
            if let Some(latched) = bank.clock_tick(&port)? {
                latch_events += 1;
                let g = (t + 1) / interval - 1;
                for (lane, &v) in latched.iter().enumerate() {
                    let n = p * lanes + lane;
                    if n < m {
                        counts[g * m + n] = v;
                    }
                }
                if let Some(tr) = trace.as_mut() {
                    tr.latches.push((tick, latched.to_vec()));
                }
            }
            *ctx = bank.save_context();
            tick += 1;
        }
    }
    Ok(LayerRun {
        counts,
        groups,
        saturation_events: bank.saturation_events(),
        latch_events,
        spikes: total,
        trace,
    })
}

/// Settings a trace was produced with; written as `#` header lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub lanes: usize,
    pub bits: u32,
    pub interval: usize,
    pub partitions: usize,
}

impl TraceHeader {
    fn to_text(self) -> String {
        format!(
            "# lanes {}\n# bits {}\n# interval {}\n# partitions {}\n",
            self.lanes, self.bits, self.interval, self.partitions
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<usize> {
            text.lines()
                .filter_map(|l| l.strip_prefix('#'))
                .find_map(|l| {
                    let mut it = l.split_whitespace();
                    (it.next() == Some(key)).then(|| it.next()).flatten()
                })
                .ok_or_else(|| Error::MissingFields(vec![key.to_string()]))?
                .parse()
                .map_err(|_| Error::Config(format!("trace header `{key}` is not a number")))
        };
        Ok(Self {
            lanes: get("lanes")?,
            bits: get("bits")? as u32,
            interval: get("interval")?,
            partitions: get("partitions")?,
        })
    }
}

fn bits_to_hex(bits: &[bool]) -> String {
    let digits = bits.len().div_ceil(4).max(1);
    (0..digits)
        .rev()
        .map(|d| {
            let nib = (0..4).fold(0u32, |acc, b| acc | (u32::from(bits.get(d * 4 + b).copied().unwrap_or(false)) << b));
            char::from_digit(nib, 16).unwrap()
        })
        .collect()
}

fn hex_to_bits(hex: &str, lanes: usize) -> Option<Vec<bool>> {
    let mut bits = vec![false; lanes];
    for (d, c) in hex.chars().rev().enumerate() {
        let nib = c.to_digit(16)?;
        for b in 0..4 {
            let lane = d * 4 + b;
            if nib >> b & 1 == 1 {
                *bits.get_mut(lane)? = true;
            }
        }
    }
    Some(bits)
}

/// Stimulus file: header, then `tick hex` per tick with lane 0 as the
/// least significant bit.
pub fn format_stimulus(header: TraceHeader, trace: &Trace) -> String {
    let mut s = header.to_text();
    for (tick, bits) in trace.stimulus.iter().enumerate() {
        writeln!(s, "{tick} {}", bits_to_hex(bits)).unwrap();
    }
    s
}

/// Latch file: header, then `tick v0 v1 …` per latch event in hex.
pub fn format_latches(header: TraceHeader, trace: &Trace) -> String {
    let mut s = header.to_text();
    for (tick, values) in &trace.latches {
        write!(s, "{tick}").unwrap();
        for v in values {
            write!(s, " {v:x}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn trace_err(line: usize, msg: &str) -> Error {
    Error::Config(format!("trace line {line}: {msg}"))
}

pub fn parse_stimulus(text: &str) -> Result<(TraceHeader, Vec<Vec<bool>>)> {
    let header = TraceHeader::parse(text)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()) {
        let mut f = line.split_whitespace();
        let (Some(tick), Some(hex), None) = (f.next(), f.next(), f.next()) else {
            return Err(trace_err(i + 1, "expected `tick hex`"));
        };
        if tick.parse::<usize>().ok() != Some(out.len()) {
            return Err(trace_err(i + 1, "ticks must be consecutive from 0"));
        }
        out.push(hex_to_bits(hex, header.lanes).ok_or_else(|| trace_err(i + 1, "bad hex vector"))?);
    }
    Ok((header, out))
}

pub fn parse_latches(text: &str) -> Result<(TraceHeader, Vec<(u64, Vec<u32>)>)> {
    let header = TraceHeader::parse(text)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()) {
        let mut f = line.split_whitespace();
        let tick = f
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| trace_err(i + 1, "bad tick"))?;
        let values = f
            .map(|v| u32::from_str_radix(v, 16))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| trace_err(i + 1, "bad hex value"))?;
        if values.len() != header.lanes {
            return Err(trace_err(i + 1, "wrong number of lanes"));
        }
        out.push((tick, values));
    }
    Ok((header, out))
}

/// Replays a stimulus trace through a fresh bank with round-robin context
/// switching, reproducing the latch trace.
pub fn replay(header: TraceHeader, stimulus: &[Vec<bool>]) -> Result<Vec<(u64, Vec<u32>)>> {
    let mut bank = CounterBank::new(header.lanes, header.bits, header.interval)?;
    let mut contexts = vec![bank.save_context(); header.partitions.max(1)];
    let mut out = Vec::new();
    for (tick, bits) in stimulus.iter().enumerate() {
        let ctx = &mut contexts[tick % header.partitions.max(1)];
        bank.restore_context(ctx);
        if let Some(l) = bank.clock_tick(bits)? {
            out.push((tick as u64, l.to_vec()));
        }
        *ctx = bank.save_context();
    }
    Ok(out)
}

/// Energy constants of the counter bank. Defaults are invented calibration
/// values, not measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HwEnergyModel {
    pub clock_hz: f64,
    /// Joules per counter bit per tick (clocking and leakage).
    pub tick_energy_per_bit: f64,
    /// Joules per counter increment.
    pub increment_energy: f64,
    /// Joules per bit driven onto the output latch.
    pub latch_energy_per_bit: f64,
}

impl Default for HwEnergyModel {
    fn default() -> Self {
        Self {
            clock_hz: 1e9,
            tick_energy_per_bit: 7.2e-16,
            increment_energy: 2.0e-15,
            latch_energy_per_bit: 2.0e-16,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HwCost {
    pub cycles: u64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub power_w: f64,
}

/// Latency, energy and power of one layer pass; `spikes` is the number of
/// counter increments.
pub fn hw_cost(plan: &PartitionPlan, interval: usize, model: &HwEnergyModel, spikes: u64) -> Result<HwCost> {
    if !(model.clock_hz > 0.0) {
        return Err(Error::Config("clock must be positive".into()));
    }
    if interval == 0 {
        return Err(Error::Config("interval must be positive".into()));
    }
    let bits = f64::from(counter_bits_for(interval));
    let cycles = plan.cycles();
    let latches = (plan.partitions * (plan.timesteps / interval)) as f64;
    let lanes = plan.lanes as f64;
    let energy = cycles as f64 * lanes * bits * model.tick_energy_per_bit
        + spikes as f64 * model.increment_energy
        + latches * lanes * bits * model.latch_energy_per_bit;
    let latency = cycles as f64 / model.clock_hz;
    let power = if latency > 0.0 { energy / latency } else { 0.0 };
    Ok(HwCost {
        cycles,
        latency_s: latency,
        energy_j: energy,
        power_w: power,
    })
}
