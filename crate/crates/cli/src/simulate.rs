use std::fs;
use std::path::PathBuf;

use clap::Args;
use hsnn_core::accumulator::{accumulate_forward, AccumulatorConfig};
use hsnn_core::events::{load_dataset, synth_gestures};
use hsnn_core::hw::{counter_bits_for, format_latches, format_stimulus, hw_cost, run_layer, HwEnergyModel, PartitionPlan, TraceHeader, DEFAULT_LANES};
use hsnn_core::model::build;
use hsnn_core::trainer::Checkpoint;
use hsnn_core::{Graph, SpikeMode, SpikeTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::failure::{CmdResult, ExitCode, Failure};
use crate::manifest::RunManifest;

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Drive the bank with the accumulator input of this checkpoint
    /// instead of random spikes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset to draw the checkpoint's input from (synthetic if absent).
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    /// Sample index used with `--checkpoint`.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Accumulate interval (taken from the checkpoint when one is given).
    #[arg(long, default_value_t = 10)]
    pub interval: usize,
    #[arg(long, default_value_t = 300)]
    pub neurons: usize,
    #[arg(long, default_value_t = 50)]
    pub timesteps: usize,
    /// Spike probability of the random stimulus.
    #[arg(long, default_value_t = 0.2)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_LANES)]
    pub lanes: usize,
    /// Counter width override; the correct width is derived from the interval.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Directory for the stimulus and latch traces.
    #[arg(long = "trace-out", alias = "out")]
    pub trace_out: PathBuf,
}

/// `(neurons, timesteps, interval, spikes[m·T + t])`.
fn checkpoint_stimulus(a: &SimulateArgs, path: &std::path::Path) -> CmdResult<(usize, usize, usize, Vec<bool>)> {
    let ckpt = Checkpoint::<f64>::load(path)?;
    let model = build(&ckpt.spec)?;
    let Some(cfg) = ckpt.spec.accumulator()? else {
        return Err(Failure::usage(format!("{} has no accumulator", ckpt.spec.model)));
    };
    let samples = match &a.data {
        Some(dir) => load_dataset::<f64>(dir)?.1,
        None => synth_gestures::<f64>(ckpt.spec.classes, a.sample / ckpt.spec.classes + 1, ckpt.spec.input_shape, a.seed)?,
    };
    let sample = samples
        .get(a.sample)
        .ok_or_else(|| Failure::usage(format!("sample {} out of range ({} available)", a.sample, samples.len())))?;
    let mut g = Graph::new();
    let vars = ckpt.params.register(&mut g)?;
    let x = g.constant(sample.frames.tensor().clone())?;
    let pass = model.forward(&mut g, &vars, x, SpikeMode::Binary)?;
    let acc_in = g.value(pass.accumulator_input.expect("accumulating model"));
    let shape = acc_in.shape();
    let (m, t) = (shape[..3].iter().product(), shape[3]);
    Ok((m, t, cfg.interval, acc_in.data().iter().map(|&v| v != 0.0).collect()))
}

pub fn simulate_cmd(a: SimulateArgs) -> CmdResult {
    let mut manifest = RunManifest::begin("simulate-hw", &a, a.seed)?;
    let (m, t, interval, spikes) = match &a.checkpoint {
        Some(path) => {
            manifest.add_input(path)?;
            checkpoint_stimulus(&a, path)?
        }
        None => {
            if !(0.0..=1.0).contains(&a.rate) {
                return Err(Failure::usage("--rate must lie in [0, 1]"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let spikes = (0..a.neurons * a.timesteps).map(|_| rng.gen_bool(a.rate)).collect();
            (a.neurons, a.timesteps, a.interval, spikes)
        }
    };
    let cfg = AccumulatorConfig::new(interval, t)?;
    let plan = PartitionPlan::new(m, t, a.lanes)?;
    let bits = a.bits.unwrap_or_else(|| counter_bits_for(interval));
    let run = run_layer(&spikes, &plan, interval, Some(bits), true)?;

    let reference: Vec<u32> = if m == 0 {
        Vec::new()
    } else {
        let x = SpikeTensor::<f64>::from_bits([m, 1, 1, t], &spikes)?;
        accumulate_forward(&x, &cfg)?.tensor().data().iter().map(|&v| v as u32).collect()
    };
    let mismatches = run.counts.iter().zip(&reference).filter(|(a, b)| a != b).count();

    fs::create_dir_all(&a.trace_out)?;
    let header = TraceHeader {
        lanes: a.lanes,
        bits,
        interval,
        partitions: plan.partitions,
    };
    let trace = run.trace.as_ref().expect("recorded");
    let write = |name: &str, text: String| {
        let p = a.trace_out.join(name);
        fs::write(&p, text).map_err(|e| Failure::io(format!("{}: {e}", p.display())))
    };
    write("stimulus.trace", format_stimulus(header, trace))?;
    write("latches.trace", format_latches(header, trace))?;

    let cost = hw_cost(&plan, interval, &HwEnergyModel::default(), run.spikes)?;
    let pass = mismatches == 0 && run.saturation_events == 0;
    let verdict = format!(
        "{}\nneurons {m}\ntimesteps {t}\ninterval {interval}\nbits {bits}\npartitions {}\ncycles {}\nlatch_events {}\nsaturation_events {}\nmismatched_counts {mismatches}\nlatency_s {:e}\nenergy_j {:e}\npower_w {:e}\n",
        if pass { "PASS" } else { "FAIL" },
        plan.partitions,
        cost.cycles,
        run.latch_events,
        run.saturation_events,
        cost.latency_s,
        cost.energy_j,
        cost.power_w,
    );
    write("verdict.txt", verdict)?;
    manifest.finish(&a.trace_out)?;

    let summary = format!(
        "{m} neurons × {t} steps, I={interval}, k={bits}, {} partitions, {} cycles",
        plan.partitions, cost.cycles
    );
    if pass {
        println!("PASS: {summary}; counts match the software accumulator");
        Ok(())
    } else {
        println!(
            "FAIL: {summary}; {} saturation events, {mismatches} of {} counts differ",
            run.saturation_events,
            reference.len()
        );
        Err(Failure::new(ExitCode::Verification, "counter bank disagrees with the software accumulator"))
    }
}
