use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hsnn_core::events::{load_dataset, stratified_split, Sample};
use hsnn_core::model::{build, Architecture, BuiltModel, HybridModelSpec, ParamStore};
use hsnn_core::trainer::{evaluate, train, write_metrics, Checkpoint, EvalReport, OptimizerState, TrainConfig, TrainError};
use hsnn_core::Scalar;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, ExitCode, Failure};
use crate::manifest::RunManifest;

pub const DEFAULT_INTERVAL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// ann, s1a4 .. s5a0 or snn.
    #[arg(long, required_unless_present = "from_manifest")]
    pub model: Option<Architecture>,
    /// Accumulate interval; must divide the sample length.
    #[arg(long)]
    pub interval: Option<usize>,
    /// Dataset directory written by `gen-data`.
    #[arg(long, required_unless_present = "from_manifest")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Stop once an epoch's mean training loss drops below this.
    #[arg(long)]
    pub target_loss: Option<f64>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Repeat the run recorded in a `run_manifest.json`.
    #[arg(long, conflicts_with_all = ["model", "data", "interval"])]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything a training run depends on, as stored in its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub model: Architecture,
    pub interval: usize,
    pub data: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub target_loss: Option<f64>,
    pub precision: Precision,
}

#[derive(Serialize, Deserialize)]
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn resolve(a: &TrainArgs) -> CmdResult<TrainSettings> {
    if let Some(path) = &a.from_manifest {
        let m = RunManifest::load(path)?;
        if m.command != "train" {
            return Err(Failure::usage(format!("{} records a `{}` run, not `train`", path.display(), m.command)));
        }
        return serde_json::from_value(m.config).map_err(|e| Failure::io(format!("{}: {e}", path.display())));
    }
    let model = a.model.expect("clap requires --model");
    if model == Architecture::Snn {
        if let Some(i) = a.interval {
            eprintln!("warning: snn has no accumulator; --interval {i} is ignored");
        }
    }
    let data = a.data.clone().expect("clap requires --data");
    Ok(TrainSettings {
        model,
        interval: a.interval.unwrap_or(DEFAULT_INTERVAL),
        data: fs::canonicalize(&data).map_err(|e| Failure::io(format!("{}: {e}", data.display())))?,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        test_fraction: a.test_fraction,
        target_loss: a.target_loss,
        precision: a.precision,
    })
}

pub fn train_cmd(a: TrainArgs) -> CmdResult {
    let settings = resolve(&a)?;
    if !(0.0..1.0).contains(&settings.test_fraction) {
        return Err(Failure::usage("--test-fraction must lie in [0, 1)"));
    }
    let mut manifest = RunManifest::begin("train", &settings, settings.seed)?;
    manifest.add_input(&settings.data)?;
    fs::create_dir_all(&a.out)?;
    let result = match settings.precision {
        Precision::F32 => run_train::<f32>(&settings, &a.out),
        Precision::F64 => run_train::<f64>(&settings, &a.out),
    };
    // a diverged run still leaves its last finite checkpoint and a manifest
    let path = manifest.finish(&a.out)?;
    result?;
    println!("manifest {}", path.display());
    Ok(())
}

/// Spec for a dataset of `shape` with `classes` labels.
pub fn spec_for(model: Architecture, interval: usize, shape: [usize; 4], classes: usize) -> HybridModelSpec {
    HybridModelSpec {
        input_shape: shape,
        ..HybridModelSpec::canonical(model, interval, classes)
    }
}

fn run_train<S: Scalar>(s: &TrainSettings, out: &Path) -> CmdResult {
    let (dm, samples) = load_dataset::<S>(&s.data)?;
    let model = build(&spec_for(s.model, s.interval, dm.shape(), dm.classes))?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (split_seed, init_seed, shuffle_seed) = (rng.next_u64(), rng.next_u64(), rng.next_u64());
    let (tr, te) = stratified_split(&samples, s.test_fraction, split_seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<Sample<S>>>();
    let (train_set, test_set) = (pick(&tr), pick(&te));
    write_json(&out.join("split.json"), &Split { train: tr, test: te })?;

    let params = ParamStore::init(&model, init_seed)?;
    let start = Checkpoint {
        spec: model.spec.clone(),
        optimizer: OptimizerState::new(&params)?,
        params,
    };
    let cfg = TrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        learning_rate: s.lr,
        seed: shuffle_seed,
        target_loss: s.target_loss,
        ..TrainConfig::default()
    };
    println!(
        "training {} (I={}) with {} parameters on {} samples, testing on {}",
        s.model,
        s.interval,
        model.parameter_count,
        train_set.len(),
        test_set.len()
    );
    let mut history = Vec::new();
    let outcome = train(&model, start, &train_set, &test_set, &cfg, &mut |r| {
        match r.test_accuracy {
            Some(t) => println!("epoch {:3}  loss {:.6}  train {:.4}  test {t:.4}", r.epoch, r.loss, r.accuracy),
            None => println!("epoch {:3}  loss {:.6}  train {:.4}", r.epoch, r.loss, r.accuracy),
        }
        history.push(r.clone());
    });
    write_metrics(&out.join("metrics.jsonl"), &history)?;
    match outcome {
        Ok(o) => {
            o.checkpoint.save(&out.join("checkpoint"))?;
            let report = if test_set.is_empty() { evaluate(&model, &o.checkpoint.params, &train_set)? } else { o.report };
            write_eval(out, &report)?;
            print_report(&report);
            Ok(())
        }
        Err(TrainError::Diverged { step, last_finite }) => {
            last_finite.save(&out.join("checkpoint"))?;
            Err(Failure::new(
                ExitCode::Numeric,
                format!("training diverged at step {step}; last finite checkpoint saved"),
            ))
        }
        Err(TrainError::Other(e)) => Err(e.into()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string(value).map_err(|e| Failure::io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// `eval.txt` for people, `eval.jsonl` for tools.
pub fn write_eval(out: &Path, r: &EvalReport) -> CmdResult {
    let mut text = format!("accuracy {}\nmean_loss {}\nconfusion\n", r.accuracy, r.mean_loss);
    for row in &r.confusion {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    let path = out.join("eval.txt");
    fs::write(&path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    write_json(&out.join("eval.jsonl"), r)
}

fn print_report(r: &EvalReport) {
    println!("accuracy {:.4}  mean loss {:.6}", r.accuracy, r.mean_loss);
    if r.confusion.len() >= 2 {
        println!("reversal pair (classes 0,1) accuracy {:.4}", r.accuracy_on(&[0, 1]));
    }
    for row in &r.confusion {
        println!("  {row:?}");
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Train,
    Test,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Checkpoint directory (`<train out>/checkpoint`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `split.json` from a training run; without it every sample is scored.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval_cmd(a: EvalArgs) -> CmdResult {
    let mut manifest = RunManifest::begin("eval", &a, 0)?;
    manifest.add_input(&a.checkpoint)?;
    manifest.add_input(&a.data)?;
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
    let model: BuiltModel = build(&ckpt.spec)?;
    let (dm, samples) = load_dataset::<f64>(&a.data)?;
    if dm.shape() != ckpt.spec.input_shape {
        return Err(Failure::usage(format!(
            "dataset shape {:?} does not match model input {:?}",
            dm.shape(),
            ckpt.spec.input_shape
        )));
    }
    let chosen: Vec<Sample<f64>> = match (&a.split, a.subset) {
        (None, _) | (Some(_), Subset::All) => samples,
        (Some(path), subset) => {
            manifest.add_input(path)?;
            let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            let split: Split = serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            let idx = if subset == Subset::Train { split.train } else { split.test };
            idx.iter()
                .map(|&i| samples.get(i).cloned().ok_or_else(|| Failure::usage(format!("split index {i} out of range"))))
                .collect::<CmdResult<_>>()?
        }
    };
    if chosen.is_empty() {
        return Err(Failure::usage("no samples to evaluate"));
    }
    let report = evaluate(&model, &ckpt.params, &chosen)?;
    fs::create_dir_all(&a.out)?;
    write_eval(&a.out, &report)?;
    print_report(&report);
    manifest.finish(&a.out)?;
    Ok(())
}
