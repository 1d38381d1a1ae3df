//! Deployment cost model: spiking layers on a neuromorphic chip, the
//! accumulator in between, dense layers on an edge accelerator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hw::{hw_cost, HwEnergyModel, PartitionPlan};
use crate::events::synth_gestures;
use crate::model::{build, neuron_census, HybridModelSpec, ParamStore, Activation, Activity, Architecture, BuiltModel, LayerCensus, LayerKind, LayerSpec};

pub const DEFAULT_PROFILE: &str = include_str!("../profiles/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuromorphicProfile {
    pub name: String,
    pub neurons_per_core: usize,
    pub cores_per_chip: usize,
    pub synapses_per_chip: u64,
    pub energy_per_synaptic_event: f64,
    pub core_energy_per_timestep: f64,
    pub timestep_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeProfile {
    pub name: String,
    pub energy_per_mac: f64,
    pub energy_per_byte: f64,
    pub idle_power: f64,
    pub throughput_macs: f64,
    pub bandwidth_bytes: f64,
    pub layer_overhead: f64,
    pub bytes_per_value: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccumulatorProfile {
    pub lanes: usize,
    pub banks: usize,
    pub clock_hz: f64,
    pub tick_energy_per_bit: f64,
    pub increment_energy: f64,
    pub latch_energy_per_bit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub energy_per_byte: f64,
    pub latency_per_byte: f64,
}

/// Calibration of every device in the deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub neuromorphic: NeuromorphicProfile,
    pub edge: EdgeProfile,
    pub accumulator: AccumulatorProfile,
    pub link: LinkProfile,
}

const REQUIRED: &[(&str, &[&str])] = &[
    (
        "neuromorphic",
        &[
            "name",
            "neurons_per_core",
            "cores_per_chip",
            "synapses_per_chip",
            "energy_per_synaptic_event",
            "core_energy_per_timestep",
            "timestep_duration",
        ],
    ),
    (
        "edge",
        &[
            "name",
            "energy_per_mac",
            "energy_per_byte",
            "idle_power",
            "throughput_macs",
            "bandwidth_bytes",
            "layer_overhead",
            "bytes_per_value",
        ],
    ),
    (
        "accumulator",
        &["lanes", "banks", "clock_hz", "tick_energy_per_bit", "increment_energy", "latch_energy_per_bit"],
    ),
    ("link", &["energy_per_byte", "latency_per_byte"]),
];

impl DeviceProfile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut missing = Vec::new();
        for (section, fields) in REQUIRED {
            let table = value.get(*section).and_then(toml::Value::as_table);
            for f in *fields {
                if table.map_or(true, |t| !t.contains_key(*f)) {
                    missing.push(format!("{section}.{f}"));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingFields(missing));
        }
        let p: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.neuromorphic;
        let e = &self.edge;
        let a = &self.accumulator;
        let positive = [
            ("neuromorphic.neurons_per_core", n.neurons_per_core as f64),
            ("neuromorphic.cores_per_chip", n.cores_per_chip as f64),
            ("neuromorphic.synapses_per_chip", n.synapses_per_chip as f64),
            ("neuromorphic.energy_per_synaptic_event", n.energy_per_synaptic_event),
            ("neuromorphic.core_energy_per_timestep", n.core_energy_per_timestep),
            ("neuromorphic.timestep_duration", n.timestep_duration),
            ("edge.energy_per_mac", e.energy_per_mac),
            ("edge.energy_per_byte", e.energy_per_byte),
            ("edge.idle_power", e.idle_power),
            ("edge.throughput_macs", e.throughput_macs),
            ("edge.bandwidth_bytes", e.bandwidth_bytes),
            ("edge.layer_overhead", e.layer_overhead),
            ("edge.bytes_per_value", e.bytes_per_value as f64),
            ("accumulator.lanes", a.lanes as f64),
            ("accumulator.banks", a.banks as f64),
            ("accumulator.clock_hz", a.clock_hz),
            ("accumulator.tick_energy_per_bit", a.tick_energy_per_bit),
            ("accumulator.increment_energy", a.increment_energy),
            ("accumulator.latch_energy_per_bit", a.latch_energy_per_bit),
        ];
        let bad: Vec<&str> = positive.iter().filter(|(_, v)| !(*v > 0.0 && v.is_finite())).map(|(k, _)| *k).collect();
        if !bad.is_empty() {
            return Err(Error::Config(format!("must be positive and finite: {}", bad.join(", "))));
        }
        let l = &self.link;
        if !(l.energy_per_byte >= 0.0 && l.latency_per_byte >= 0.0) {
            return Err(Error::Config("link costs must be non-negative".into()));
        }
        if l.energy_per_byte > 0.0 && l.latency_per_byte == 0.0 {
            return Err(Error::Config("link energy needs a non-zero link latency".into()));
        }
        Ok(())
    }

    pub fn hw_model(&self) -> HwEnergyModel {
        HwEnergyModel {
            clock_hz: self.accumulator.clock_hz,
            tick_energy_per_bit: self.accumulator.tick_energy_per_bit,
            increment_energy: self.accumulator.increment_energy,
            latch_energy_per_bit: self.accumulator.latch_energy_per_bit,
        }
    }
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self::parse(DEFAULT_PROFILE).expect("shipped profile parses")
    }
}

/// Reference core counts for the seven network variants, attached to reports as
/// annotations only.
pub fn reference_cores(model: Architecture) -> usize {
    match model {
        Architecture::Ann => 0,
        Architecture::Hybrid(1) => 16,
        Architecture::Hybrid(2) => 32,
        Architecture::Hybrid(3) => 36,
        Architecture::Hybrid(4) => 38,
        Architecture::Hybrid(_) => 42,
        Architecture::Snn => 58,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreAllocation {
    pub layer: String,
    pub neurons: usize,
    pub cores: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub layers: Vec<CoreAllocation>,
    pub total_cores: usize,
    pub chips: usize,
}

impl Allocation {
    pub fn multi_chip(&self) -> bool {
        self.chips > 1
    }
}

/// One layer per group of cores, `⌈neurons / neurons_per_core⌉` each.
pub fn allocate_cores(census: &[LayerCensus], profile: &NeuromorphicProfile) -> Allocation {
    let layers: Vec<CoreAllocation> = census
        .iter()
        .map(|c| CoreAllocation {
            layer: c.layer.clone(),
            neurons: c.neurons,
            cores: c.neurons.div_ceil(profile.neurons_per_core),
        })
        .collect();
    let total_cores: usize = layers.iter().map(|l| l.cores).sum();
    Allocation {
        layers,
        chips: total_cores.div_ceil(profile.cores_per_chip),
        total_cores,
    }
}

/// Latency, power and energy of one part of the system. Power is always
/// derived as energy over latency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub component: String,
    pub latency_s: f64,
    pub power_w: f64,
    pub energy_j: f64,
}

impl ComponentCost {
    pub fn new(component: &str, latency_s: f64, energy_j: f64) -> Self {
        Self {
            component: component.to_string(),
            latency_s,
            power_w: if latency_s > 0.0 { energy_j / latency_s } else { 0.0 },
            energy_j,
        }
    }

    /// Relative gap between `energy` and `power · latency`.
    pub fn consistency_error(&self) -> f64 {
        let pl = self.power_w * self.latency_s;
        if self.energy_j == 0.0 && pl == 0.0 {
            0.0
        } else {
            (self.energy_j - pl).abs() / self.energy_j.abs().max(pl.abs())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub model: String,
    pub interval: usize,
    pub timesteps: usize,
    /// `spiking`, `accumulator`, `dense`, `link`, in that order.
    pub components: Vec<ComponentCost>,
    pub total: ComponentCost,
    pub cores: Vec<CoreAllocation>,
    pub total_cores: usize,
    pub chips: usize,
    pub reference_cores: usize,
    pub synaptic_events: u64,
    pub dense_macs: u64,
}

impl CostReport {
    pub fn component(&self, name: &str) -> Option<&ComponentCost> {
        self.components.iter().find(|c| c.component == name)
    }

    pub fn energy(&self, name: &str) -> f64 {
        self.component(name).map_or(0.0, |c| c.energy_j)
    }

    pub fn max_consistency_error(&self) -> f64 {
        self.components
            .iter()
            .chain(std::iter::once(&self.total))
            .map(ComponentCost::consistency_error)
            .fold(0.0, f64::max)
    }
}

fn dense_layer_bytes(layer: &LayerSpec, bytes_per_value: usize) -> u64 {
    let acts: usize = layer.in_shape.iter().product::<usize>() + layer.out_shape.iter().product::<usize>();
    ((layer.parameter_count() + acts) * bytes_per_value) as u64
}

fn is_dense_side(layer: &LayerSpec) -> bool {
    matches!(
        layer.kind,
        LayerKind::Conv { spiking: false, .. }
            | LayerKind::Dense {
                activation: Activation::Relu | Activation::Linear,
                ..
            }
    )
}

/// Cost of one inference of `model`, with spiking activity taken from
/// `activity` (see [`BuiltModel::probe_activity`]).
pub fn estimate(model: &BuiltModel, profile: &DeviceProfile, activity: &Activity) -> Result<CostReport> {
    profile.validate()?;
    let t_len = model.spec.timesteps();
    let census = neuron_census(model);
    let alloc = allocate_cores(&census, &profile.neuromorphic);
    let synapses: u64 = model
        .layers
        .iter()
        .filter(|l| l.is_spiking())
        .map(|l| (l.neurons() * l.parameter_count()) as u64 / l.params()[0].1[0] as u64)
        .sum();
    let chips = alloc
        .chips
        .max(synapses.div_ceil(profile.neuromorphic.synapses_per_chip) as usize);

    // spiking side
    let n = &profile.neuromorphic;
    let spiking_layers = census.len();
    if activity.layers.len() != spiking_layers {
        return Err(Error::Config(format!(
            "activity covers {} spiking layers, model has {spiking_layers}",
            activity.layers.len()
        )));
    }
    let events: u64 = activity.layers.iter().map(|l| l.synaptic_events() as u64).sum();
    let (spk_latency, spk_energy) = if spiking_layers == 0 {
        (0.0, 0.0)
    } else {
        (
            t_len as f64 * n.timestep_duration,
            events as f64 * n.energy_per_synaptic_event + (alloc.total_cores * t_len) as f64 * n.core_energy_per_timestep,
        )
    };

    // accumulator
    let (acc_cost, link_bytes) = match model.accumulator_position {
        Some(pos) => {
            let layer = &model.layers[pos];
            let LayerKind::Accumulate(cfg) = layer.kind else {
                unreachable!("accumulator position points at the accumulator")
            };
            let neurons: usize = layer.in_shape[..3].iter().product();
            let plan = PartitionPlan::new(neurons, t_len, profile.accumulator.lanes)?;
            let spikes = activity.accumulator_input_spikes.unwrap_or(0) as u64;
            let mut c = hw_cost(&plan, cfg.interval, &profile.hw_model(), spikes)?;
            c.latency_s /= profile.accumulator.banks as f64;
            let out: usize = layer.out_shape.iter().product();
            (
                ComponentCost::new("accumulator", c.latency_s, c.energy_j),
                (out * profile.edge.bytes_per_value) as u64,
            )
        }
        None => (ComponentCost::new("accumulator", 0.0, 0.0), 0),
    };

    // dense side
    let e = &profile.edge;
    let (mut dense_latency, mut dense_dynamic, mut macs) = (0.0, 0.0, 0u64);
    for layer in model.layers.iter().filter(|l| is_dense_side(l)) {
        let m = layer.macs_per_step() as u64;
        let bytes = dense_layer_bytes(layer, e.bytes_per_value);
        dense_latency += e.layer_overhead + (m as f64 / e.throughput_macs).max(bytes as f64 / e.bandwidth_bytes);
        dense_dynamic += m as f64 * e.energy_per_mac + bytes as f64 * e.energy_per_byte;
        macs += m;
    }
    let dense_energy = dense_dynamic + e.idle_power * dense_latency;

    let link_bytes = if spiking_layers > 0 && model.spec.model != Architecture::Snn {
        link_bytes
    } else {
        0
    };
    let link = ComponentCost::new(
        "link",
        link_bytes as f64 * profile.link.latency_per_byte,
        link_bytes as f64 * profile.link.energy_per_byte,
    );

    let components = vec![
        ComponentCost::new("spiking", spk_latency, spk_energy),
        acc_cost,
        ComponentCost::new("dense", dense_latency, dense_energy),
        link,
    ];
    let total = ComponentCost::new(
        "total",
        components.iter().map(|c| c.latency_s).sum(),
        components.iter().map(|c| c.energy_j).sum(),
    );
    Ok(CostReport {
        model: model.spec.model.to_string(),
        interval: model.spec.interval,
        timesteps: t_len,
        components,
        total,
        cores: alloc.layers,
        total_cores: alloc.total_cores,
        chips,
        reference_cores: reference_cores(model.spec.model),
        synaptic_events: events,
        dense_macs: macs,
    })
}

/// Activity of a `k`-spiking-layer prefix, cut from the activity of a
/// deeper network that shares its first layers.
pub fn prefix_activity(full: &Activity, model: &BuiltModel) -> Result<Activity> {
    let k = neuron_census(model).len();
    if k > full.layers.len() {
        return Err(Error::Config(format!(
            "probe covers {} spiking layers, model needs {k}",
            full.layers.len()
        )));
    }
    let accumulator_input_spikes = model.accumulator_position.map(|_| {
        if k == 0 {
            full.input_spikes
        } else {
            full.layers.get(k).map_or(0, |l| l.input_spikes)
        }
    });
    if model.accumulator_position.is_some() && k > 0 && k >= full.layers.len() {
        return Err(Error::Config("probe must extend past the accumulator".into()));
    }
    Ok(Activity {
        input_spikes: full.input_spikes,
        layers: full.layers[..k].to_vec(),
        accumulator_input_spikes,
    })
}

/// Models, intervals and probe workload of a cost sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub models: Vec<Architecture>,
    pub intervals: Vec<usize>,
    pub input_shape: [usize; 4],
    pub classes: usize,
    /// Synthetic samples averaged for the activity probe.
    pub probe_samples: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            models: Architecture::ALL.to_vec(),
            intervals: vec![5, 10, 25],
            input_shape: [2, 128, 128, 50],
            classes: 3,
            probe_samples: 3,
            seed: 0,
        }
    }
}

/// Activity of the all-spiking network on synthetic probes. Every hybrid
/// shares its spiking prefix, so one probe serves the whole sweep.
pub fn probe_snn(cfg: &SweepConfig) -> Result<Activity> {
    let spec = HybridModelSpec {
        input_shape: cfg.input_shape,
        ..HybridModelSpec::canonical(Architecture::Snn, 1, cfg.classes)
    };
    let snn = build(&spec)?;
    let params = ParamStore::<f32>::init(&snn, cfg.seed)?;
    let per_class = cfg.probe_samples.div_ceil(cfg.classes).max(1);
    let samples = synth_gestures::<f32>(cfg.classes, per_class, cfg.input_shape, cfg.seed)?;
    let probes = samples
        .iter()
        .take(cfg.probe_samples.max(1))
        .map(|s| snn.probe_activity(&params, &s.frames))
        .collect::<Result<Vec<_>>>()?;
    Ok(Activity::mean(&probes))
}

/// One report per model × interval (a single one for the SNN baseline,
/// which has no accumulator).
pub fn sweep(cfg: &SweepConfig, profile: &DeviceProfile) -> Result<Vec<CostReport>> {
    let activity = probe_snn(cfg)?;
    let mut out = Vec::new();
    for &arch in &cfg.models {
        for &interval in &cfg.intervals {
            let spec = HybridModelSpec {
                input_shape: cfg.input_shape,
                ..HybridModelSpec::canonical(arch, interval, cfg.classes)
            };
            let model = build(&spec)?;
            out.push(estimate(&model, profile, &prefix_activity(&activity, &model)?)?);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Report {
        model: String,
        interval: usize,
        timesteps: usize,
        total_cores: usize,
        chips: usize,
        reference_cores: usize,
        synaptic_events: u64,
        dense_macs: u64,
    },
    Component {
        model: String,
        interval: usize,
        component: String,
        latency_s: f64,
        power_w: f64,
        energy_j: f64,
    },
    Cores {
        model: String,
        interval: usize,
        layer: String,
        neurons: usize,
        cores: usize,
    },
}

/// Line-delimited JSON, one record per line, fixed field order.
pub fn reports_to_jsonl(reports: &[CostReport]) -> String {
    let mut out = String::new();
    let mut push = |r: Record| {
        out.push_str(&serde_json::to_string(&r).expect("records serialise"));
        out.push('\n');
    };
    for r in reports {
        push(Record::Report {
            model: r.model.clone(),
            interval: r.interval,
            timesteps: r.timesteps,
            total_cores: r.total_cores,
            chips: r.chips,
            reference_cores: r.reference_cores,
            synaptic_events: r.synaptic_events,
            dense_macs: r.dense_macs,
        });
        for c in r.components.iter().chain(std::iter::once(&r.total)) {
            push(Record::Component {
                model: r.model.clone(),
                interval: r.interval,
                component: c.component.clone(),
                latency_s: c.latency_s,
                power_w: c.power_w,
                energy_j: c.energy_j,
            });
        }
        for c in &r.cores {
            push(Record::Cores {
                model: r.model.clone(),
                interval: r.interval,
                layer: c.layer.clone(),
                neurons: c.neurons,
                cores: c.cores,
            });
        }
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<CostReport>> {
    let mut reports: Vec<CostReport> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Config(format!("report line {}: {e}", i + 1)))?;
        let orphan = || Error::Config(format!("report line {}: record before its report header", i + 1));
        match rec {
            Record::Report {
                model,
                interval,
                timesteps,
                total_cores,
                chips,
                reference_cores,
                synaptic_events,
                dense_macs,
            } => reports.push(CostReport {
                model,
                interval,
                timesteps,
                components: Vec::new(),
                total: ComponentCost::new("total", 0.0, 0.0),
                cores: Vec::new(),
                total_cores,
                chips,
                reference_cores,
                synaptic_events,
                dense_macs,
            }),
            Record::Component {
                component,
                latency_s,
                power_w,
                energy_j,
                ..
            } => {
                let r = reports.last_mut().ok_or_else(orphan)?;
                let c = ComponentCost {
                    component,
                    latency_s,
                    power_w,
                    energy_j,
                };
                if c.component == "total" {
                    r.total = c;
                } else {
                    r.components.push(c);
                }
            }
            Record::Cores { layer, neurons, cores, .. } => {
                reports.last_mut().ok_or_else(orphan)?.cores.push(CoreAllocation { layer, neurons, cores });
            }
        }
    }
    Ok(reports)
}

/// Human-readable table. Numbers use shortest round-trip notation so the
/// table carries exactly the values of the record stream.
pub fn reports_to_text(reports: &[CostReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let chip_note = if r.chips > 1 { " (multi-chip)" } else { "" };
        writeln!(s, "model {} interval {} timesteps {}", r.model, r.interval, r.timesteps).unwrap();
        writeln!(
            s,
            "cores {} chips {}{chip_note} reference_cores {} synaptic_events {} dense_macs {}",
            r.total_cores, r.chips, r.reference_cores, r.synaptic_events, r.dense_macs
        )
        .unwrap();
        writeln!(s, "{:<12} {:>24} {:>24} {:>24}", "component", "latency_s", "power_w", "energy_j").unwrap();
        for c in r.components.iter().chain(std::iter::once(&r.total)) {
            writeln!(
                s,
                "{:<12} {:>24e} {:>24e} {:>24e}",
                c.component, c.latency_s, c.power_w, c.energy_j
            )
            .unwrap();
        }
        for c in &r.cores {
            writeln!(s, "layer {} neurons {} cores {}", c.layer, c.neurons, c.cores).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_text(text: &str) -> Result<Vec<CostReport>> {
    let bad = |line: &str| Error::Config(format!("report table line `{line}`"));
    let mut reports: Vec<CostReport> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let kv: BTreeMap<&str, &str> = f.chunks(2).filter(|c| c.len() == 2).map(|c| (c[0], c[1])).collect();
        let num = |k: &str| -> Result<u64> { kv.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line)) };
        match f[0] {
            "model" => reports.push(CostReport {
                model: f.get(1).ok_or_else(|| bad(line))?.to_string(),
                interval: num("interval")? as usize,
                timesteps: num("timesteps")? as usize,
                components: Vec::new(),
                total: ComponentCost::new("total", 0.0, 0.0),
                cores: Vec::new(),
                total_cores: 0,
                chips: 0,
                reference_cores: 0,
                synaptic_events: 0,
                dense_macs: 0,
            }),
            "cores" => {
                let r = reports.last_mut().ok_or_else(|| bad(line))?;
                r.total_cores = f[1].parse().map_err(|_| bad(line))?;
                let find = |k: &str| -> Result<u64> {
                    f.iter()
                        .position(|x| *x == k)
                        .and_then(|i| f.get(i + 1))
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(line))
                };
                r.chips = find("chips")? as usize;
                r.reference_cores = find("reference_cores")? as usize;
                r.synaptic_events = find("synaptic_events")?;
                r.dense_macs = find("dense_macs")?;
            }
            "component" => {}
            "layer" => {
                let r = reports.last_mut().ok_or_else(|| bad(line))?;
                r.cores.push(CoreAllocation {
                    layer: f.get(1).ok_or_else(|| bad(line))?.to_string(),
                    neurons: num("neurons")? as usize,
                    cores: num("cores")? as usize,
                });
            }
            name => {
                let r = reports.last_mut().ok_or_else(|| bad(line))?;
                let [_, lat, pow, en] = f[..] else {
                    return Err(bad(line));
                };
                let p = |v: &str| v.parse::<f64>().map_err(|_| bad(line));
                let c = ComponentCost {
                    component: name.to_string(),
                    latency_s: p(lat)?,
                    power_w: p(pow)?,
                    energy_j: p(en)?,
                };
                if name == "total" {
                    r.total = c;
                } else {
                    r.components.push(c);
                }
            }
        }
    }
    Ok(reports)
}

/// Writes `<stem>.txt` and `<stem>.jsonl` into `dir`.
pub fn emit_reports(dir: &Path, stem: &str, reports: &[CostReport]) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = dir.join(format!("{stem}.txt"));
    let jsonl = dir.join(format!("{stem}.jsonl"));
    fs::write(&text, reports_to_text(reports)).map_err(|e| Error::io(&text, e))?;
    fs::write(&jsonl, reports_to_jsonl(reports)).map_err(|e| Error::io(&jsonl, e))?;
    Ok((text, jsonl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, HybridModelSpec};

    fn census(n: &[usize]) -> Vec<LayerCensus> {
        n.iter()
            .enumerate()
            .map(|(i, &neurons)| LayerCensus {
                layer: format!("l{i}"),
                neurons,
            })
            .collect()
    }

    #[test]
    fn core_ceiling() {
        let p = DeviceProfile::default().neuromorphic;
        assert_eq!(allocate_cores(&census(&[1024]), &p).total_cores, 1);
        assert_eq!(allocate_cores(&census(&[1025]), &p).total_cores, 2);
        let big = allocate_cores(&census(&[1024 * 129]), &p);
        assert!(big.multi_chip());
    }

    #[test]
    fn missing_fields_are_listed() {
        let text = DEFAULT_PROFILE.replace("energy_per_mac = 1.0e-11\n", "").replace("lanes = 128\n", "");
        match DeviceProfile::parse(&text) {
            Err(Error::MissingFields(f)) => assert_eq!(f, vec!["edge.energy_per_mac", "accumulator.lanes"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ann_has_zero_spiking_energy() {
        let m = build(&HybridModelSpec::canonical(Architecture::Ann, 5, 3)).unwrap();
        let act = Activity {
            input_spikes: 100,
            layers: vec![],
            accumulator_input_spikes: Some(100),
        };
        let r = estimate(&m, &DeviceProfile::default(), &act).unwrap();
        assert_eq!(r.energy("spiking"), 0.0);
        assert!(r.energy("dense") > 0.0);
        assert!(r.max_consistency_error() < 1e-12);
    }

    #[test]
    fn formats_round_trip() {
        let m = build(&HybridModelSpec::canonical(Architecture::Hybrid(1), 5, 3)).unwrap();
        let act = Activity {
            input_spikes: 100,
            layers: vec![crate::model::LayerActivity {
                layer: "conv1".into(),
                input_spikes: 100,
                output_spikes: 333,
                fan_out: 144,
            }],
            accumulator_input_spikes: Some(77),
        };
        let r = vec![estimate(&m, &DeviceProfile::default(), &act).unwrap()];
        assert_eq!(parse_jsonl(&reports_to_jsonl(&r)).unwrap(), r);
        assert_eq!(parse_text(&reports_to_text(&r)).unwrap(), r);
        assert!(parse_jsonl("").unwrap().is_empty());
    }
}
