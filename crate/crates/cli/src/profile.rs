use std::fs;
use std::path::PathBuf;

use clap::Args;
use hsnn_core::cost::{emit_reports, estimate, parse_jsonl, sweep, CostReport, DeviceProfile, SweepConfig};
use hsnn_core::events::synth_gestures;
use hsnn_core::model::{build, Activity, Architecture};
use hsnn_core::trainer::Checkpoint;
use serde::Serialize;

use crate::failure::{CmdResult, ExitCode, Failure};
use crate::manifest::RunManifest;

/// Relative tolerance for `energy = power × latency` in emitted reports.
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    /// Device profile TOML (the shipped calibration when absent).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Profile a trained checkpoint instead of sweeping freshly built models.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ann,s1a4,s2a3,s3a2,s4a1,s5a0,snn")]
    pub models: Vec<Architecture>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,25")]
    pub intervals: Vec<usize>,
    /// Input shape `C,H,W,T` of the swept models.
    #[arg(long, default_value = "2,128,128,50", value_parser = crate::parse_shape)]
    pub shape: [usize; 4],
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Synthetic samples averaged by the activity probe.
    #[arg(long, default_value_t = 3)]
    pub probe_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn checkpoint_report(a: &ProfileArgs, path: &std::path::Path, profile: &DeviceProfile) -> CmdResult<CostReport> {
    let ckpt = Checkpoint::<f64>::load(path)?;
    let model = build(&ckpt.spec)?;
    let spec = &ckpt.spec;
    let per_class = a.probe_samples.div_ceil(spec.classes).max(1);
    let samples = synth_gestures::<f64>(spec.classes, per_class, spec.input_shape, a.seed)?;
    let probes = samples
        .iter()
        .take(a.probe_samples.max(1))
        .map(|s| model.probe_activity(&ckpt.params, &s.frames))
        .collect::<hsnn_core::Result<Vec<_>>>()?;
    Ok(estimate(&model, profile, &Activity::mean(&probes))?)
}

/// Orderings checked over a sweep. Only the I=5 hybrid ordering is a
/// requirement; other intervals are listed for information (`None`).
fn ordering_checks(reports: &[CostReport]) -> Vec<(String, Option<bool>)> {
    let mut out = Vec::new();
    let worst = reports
        .iter()
        .filter(|r| r.total.energy_j > 0.0)
        .map(|r| r.energy("accumulator") / r.total.energy_j)
        .fold(0.0, f64::max);
    out.push((format!("accumulator share of energy < 1e-3 (max {worst:.3e})"), Some(worst < 1e-3)));
    let mut intervals: Vec<usize> = reports.iter().map(|r| r.interval).collect();
    intervals.sort_unstable();
    intervals.dedup();
    for i in intervals {
        let e: Option<Vec<f64>> = (1..=5)
            .map(|k| {
                reports
                    .iter()
                    .find(|r| r.interval == i && r.model == Architecture::Hybrid(k).to_string())
                    .map(|r| r.total.energy_j)
            })
            .collect();
        let Some(e) = e else { continue };
        let holds = e[..4].windows(2).all(|w| w[1] < w[0]) && e[4] > e[3];
        let listed: Vec<String> = e.iter().map(|v| format!("{v:.3e}")).collect();
        out.push((
            format!("I={i}: s1a4..s5a0 energy [{}], falls to s4a1 and rises at s5a0: {holds}", listed.join(", ")),
            (i == 5).then_some(holds),
        ));
    }
    out
}

pub fn profile_cmd(a: ProfileArgs) -> CmdResult {
    let mut manifest = RunManifest::begin("profile", &a, a.seed)?;
    let profile = match &a.profiles {
        Some(path) => {
            manifest.add_input(path)?;
            DeviceProfile::load(path)?
        }
        None => DeviceProfile::default(),
    };
    let reports = match &a.checkpoint {
        Some(path) => {
            manifest.add_input(path)?;
            vec![checkpoint_report(&a, path, &profile)?]
        }
        None => {
            let cfg = SweepConfig {
                models: a.models.clone(),
                intervals: a.intervals.clone(),
                input_shape: a.shape,
                classes: a.classes,
                probe_samples: a.probe_samples,
                seed: a.seed,
            };
            sweep(&cfg, &profile)?
        }
    };
    fs::create_dir_all(&a.out)?;
    let (txt, jsonl) = emit_reports(&a.out, "cost", &reports)?;

    // re-read what was written and check it
    let text = fs::read_to_string(&jsonl).map_err(|e| Failure::io(format!("{}: {e}", jsonl.display())))?;
    let back = parse_jsonl(&text)?;
    let worst = back.iter().map(CostReport::max_consistency_error).fold(0.0, f64::max);

    println!("{:<6} {:>3} {:>14} {:>14} {:>14} {:>6} {:>6}", "model", "I", "energy_j", "latency_s", "power_w", "cores", "ref");
    for r in &back {
        println!(
            "{:<6} {:>3} {:>14.6e} {:>14.6e} {:>14.6e} {:>6} {:>6}",
            r.model, r.interval, r.total.energy_j, r.total.latency_s, r.total.power_w, r.total_cores, r.reference_cores
        );
    }
    println!("{} reports written to {} and {}", back.len(), txt.display(), jsonl.display());
    for (what, verdict) in ordering_checks(&back) {
        let tag = match verdict {
            Some(true) => "ok  ",
            Some(false) => "FAIL",
            None => "info",
        };
        println!("[{tag}] {what}");
    }
    let consistent = worst <= CONSISTENCY_TOL;
    println!(
        "[{}] energy = power × latency on reload (max relative error {worst:.2e})",
        if consistent { "ok  " } else { "FAIL" }
    );
    manifest.finish(&a.out)?;
    if consistent {
        Ok(())
    } else {
        Err(Failure::new(ExitCode::Verification, "reloaded reports violate energy = power × latency"))
    }
}
