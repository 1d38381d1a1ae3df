//! Unified training of spiking backbone, accumulator and dense head.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::events::Sample;
use crate::model::{build, BuiltModel, HybridModelSpec, ParamStore};
use crate::scalar::Scalar;
use crate::spiking::SpikeMode;
use crate::tensor::Tensor;
use crate::weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop once an epoch's mean training loss falls below this value.
    pub target_loss: Option<f64>,
    /// Per-sample graph budget in stored elements.
    pub memory_budget: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 5.0,
            seed: 0,
            target_loss: None,
            memory_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("gradient clip must be non-negative");
        }
        Ok(())
    }
}

/// Adam moments (unused by plain SGD).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S> {
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamStore<S>) -> Result<Self> {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            step: 0,
            m: zeros()?,
            v: zeros()?,
        })
    }

    fn apply(&mut self, params: &mut ParamStore<S>, grads: &[Vec<S>], cfg: &TrainConfig) -> Result<()> {
        self.step += 1;
        let lr = S::of(cfg.learning_rate);
        let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
        let c1 = S::one() - b1.powi(self.step as i32);
        let c2 = S::one() - b2.powi(self.step as i32);
        let eps = S::of(cfg.epsilon);
        for (i, g) in grads.iter().enumerate() {
            let shape = params.tensors[i].shape().to_vec();
            let mut p = params.tensors[i].to_vec();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, &g) in p.iter_mut().zip(g) {
                        *p = *p - lr * g;
                    }
                }
                Optimizer::Adam => {
                    let mut m = self.m[i].to_vec();
                    let mut v = self.v[i].to_vec();
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + (S::one() - b1) * g[j];
                        v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        p[j] = p[j] - lr * mh / (vh.sqrt() + eps);
                    }
                    self.m[i] = Tensor::from_vec(&shape, m)?;
                    self.v[i] = Tensor::from_vec(&shape, v)?;
                }
            }
            params.tensors[i] = Tensor::from_vec(&shape, p)?;
        }
        Ok(())
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub spec: HybridModelSpec,
    pub params: ParamStore<S>,
    pub optimizer: OptimizerState<S>,
}

pub const MODEL_FILE: &str = "model.toml";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";

impl<S: Scalar> Checkpoint<S> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let spec = toml::to_string(&self.spec).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(MODEL_FILE);
        fs::write(&path, spec).map_err(|e| Error::io(path, e))?;
        let named: Vec<(String, Tensor<S>)> = self.params.names.iter().cloned().zip(self.params.tensors.iter().cloned()).collect();
        weights::save(&dir.join(WEIGHTS_FILE), &named)?;
        let mut opt = vec![("adam.step".to_string(), Tensor::scalar(S::of(self.optimizer.step as f64)))];
        for (n, (m, v)) in self.params.names.iter().zip(self.optimizer.m.iter().zip(&self.optimizer.v)) {
            opt.push((format!("m.{n}"), m.clone()));
            opt.push((format!("v.{n}"), v.clone()));
        }
        weights::save(&dir.join(OPTIMIZER_FILE), &opt)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let spec: HybridModelSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let model = build(&spec)?;
        let params = ParamStore::from_named(&model, weights::load(&dir.join(WEIGHTS_FILE))?)?;
        let opt_path = dir.join(OPTIMIZER_FILE);
        let optimizer = if opt_path.exists() {
            let mut named = weights::load::<S>(&opt_path)?.into_iter();
            let step = named
                .next()
                .filter(|(n, _)| n == "adam.step")
                .ok_or_else(|| Error::Config("optimizer state lacks adam.step".into()))?
                .1
                .item()?
                .as_f64() as u64;
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for (i, (_, t)) in named.enumerate() {
                if i % 2 == 0 {
                    m.push(t)
                } else {
                    v.push(t)
                }
            }
            if m.len() != params.len() || v.len() != params.len() {
                return Err(Error::Config("optimizer state does not match weights".into()));
            }
            OptimizerState { step, m, v }
        } else {
            OptimizerState::new(&params)?
        };
        Ok(Self { spec, params, optimizer })
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub loss_curve: Vec<f64>,
    pub mean_loss: f64,
}

impl EvalReport {
    pub fn from_predictions(classes: usize, pairs: &[(usize, usize)], loss_curve: Vec<f64>, mean_loss: f64) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for &(truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        let hits: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let accuracy = if pairs.is_empty() { 0.0 } else { hits as f64 / pairs.len() as f64 };
        Self {
            accuracy,
            confusion,
            loss_curve,
            mean_loss,
        }
    }

    /// Accuracy restricted to samples whose true label is in `labels`.
    pub fn accuracy_on(&self, labels: &[usize]) -> f64 {
        let total: usize = labels.iter().map(|&l| self.confusion[l].iter().sum::<usize>()).sum();
        let hits: usize = labels.iter().map(|&l| self.confusion[l][l]).sum();
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }
}

pub fn argmax<S: Scalar>(x: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

struct SampleResult<S> {
    loss: f64,
    predicted: usize,
    grads: Vec<Vec<S>>,
}

fn sample_gradients<S: Scalar>(model: &BuiltModel, params: &ParamStore<S>, sample: &Sample<S>, budget: Option<usize>) -> Result<SampleResult<S>> {
    let mut g = match budget {
        Some(b) => Graph::with_memory_budget(b),
        None => Graph::new(),
    };
    let vars = params.register(&mut g)?;
    let x = g.constant(sample.frames.tensor().clone())?;
    let pass = model.forward(&mut g, &vars, x, SpikeMode::Binary)?;
    let predicted = argmax(g.value(pass.logits).data());
    let loss = g.softmax_cross_entropy(pass.logits, sample.label)?;
    let loss_value = g.value(loss).item()?.as_f64();
    let grads = g.backward(loss)?;
    Ok(SampleResult {
        loss: loss_value,
        predicted,
        grads: collect(&grads, &vars),
    })
}

fn collect<S: Scalar>(grads: &Gradients<S>, vars: &[Var]) -> Vec<Vec<S>> {
    vars.iter().map(|&v| grads.get(v).expect("params require grad").to_vec()).collect()
}

/// Loss and parameter gradients of one sample, exposed for probes.
pub fn gradients<S: Scalar>(model: &BuiltModel, params: &ParamStore<S>, sample: &Sample<S>) -> Result<(f64, Vec<Tensor<S>>)> {
    let r = sample_gradients(model, params, sample, None)?;
    let tensors = r
        .grads
        .into_iter()
        .zip(&params.tensors)
        .map(|(g, p)| Tensor::from_vec(p.shape(), g))
        .collect::<Result<_>>()?;
    Ok((r.loss, tensors))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub checkpoint: Checkpoint<S>,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
}

/// Training failure; divergence keeps the last parameters that were finite.
#[derive(Debug, thiserror::Error)]
pub enum TrainError<S: Scalar> {
    #[error("training diverged at step {step}")]
    Diverged { step: u64, last_finite: Box<Checkpoint<S>> },
    #[error(transparent)]
    Other(#[from] Error),
}

impl<S: Scalar> From<TrainError<S>> for Error {
    fn from(e: TrainError<S>) -> Self {
        match e {
            TrainError::Diverged { step, .. } => Error::Diverged { step },
            TrainError::Other(e) => e,
        }
    }
}

/// Trains from `start` on `train_set`, evaluating on `eval_set` after each
/// epoch when it is non-empty. `on_epoch` sees every metrics record.
pub fn train<S: Scalar>(
    model: &BuiltModel,
    start: Checkpoint<S>,
    train_set: &[Sample<S>],
    eval_set: &[Sample<S>],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> std::result::Result<TrainOutcome<S>, TrainError<S>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()).into());
    }
    let classes = model.spec.classes;
    if let Some(s) = train_set.iter().chain(eval_set).find(|s| s.label >= classes) {
        return Err(Error::Config(format!("label {} exceeds class count {classes}", s.label)).into());
    }
    let Checkpoint {
        spec,
        mut params,
        optimizer: mut opt,
    } = start;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut loss_curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let (mut epoch_loss, mut hits) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<SampleResult<S>>> = batch
                .par_iter()
                .map(|&i| sample_gradients(model, &params, &train_set[i], cfg.memory_budget))
                .collect();
            let mut sum: Option<Vec<Vec<S>>> = None;
            let mut batch_loss = 0.0;
            for (r, &i) in results.into_iter().zip(batch) {
                let r = r?;
                batch_loss += r.loss;
                hits += usize::from(r.predicted == train_set[i].label);
                match sum.as_mut() {
                    None => sum = Some(r.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            for (a, g) in a.iter_mut().zip(g) {
                                *a = *a + *g;
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let scale = S::one() / S::of_usize(batch.len());
            let mut norm2 = 0.0;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v = *v * scale;
                    norm2 += v.as_f64() * v.as_f64();
                }
            }
            if !batch_loss.is_finite() || !norm2.is_finite() {
                return Err(TrainError::Diverged {
                    step: opt.step + 1,
                    last_finite: Box::new(Checkpoint {
                        spec,
                        params,
                        optimizer: opt,
                    }),
                });
            }
            let norm = norm2.sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let f = S::of(cfg.grad_clip / norm);
                for v in grads.iter_mut().flatten() {
                    *v = *v * f;
                }
            }
            let before = params.clone();
            let before_opt = opt.clone();
            opt.apply(&mut params, &grads, cfg)?;
            if !params.tensors.iter().all(Tensor::all_finite) {
                return Err(TrainError::Diverged {
                    step: opt.step,
                    last_finite: Box::new(Checkpoint {
                        spec,
                        params: before,
                        optimizer: before_opt,
                    }),
                });
            }
            let mean = batch_loss / batch.len() as f64;
            loss_curve.push(mean);
            epoch_loss += batch_loss;
        }
        let record = EpochRecord {
            epoch,
            loss: epoch_loss / train_set.len() as f64,
            accuracy: hits as f64 / train_set.len() as f64,
            test_accuracy: if eval_set.is_empty() {
                None
            } else {
                Some(evaluate(model, &params, eval_set)?.accuracy)
            },
        };
        on_epoch(&record);
        let done = cfg.target_loss.is_some_and(|t| record.loss < t);
        history.push(record);
        if done {
            break;
        }
    }
    let mut report = evaluate(model, &params, if eval_set.is_empty() { train_set } else { eval_set })?;
    report.loss_curve = loss_curve;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            spec,
            params,
            optimizer: opt,
        },
        history,
        report,
    })
}

/// Argmax classification of every sample, run in parallel.
pub fn evaluate<S: Scalar>(model: &BuiltModel, params: &ParamStore<S>, samples: &[Sample<S>]) -> Result<EvalReport> {
    let outputs: Vec<Result<(usize, f64)>> = samples
        .par_iter()
        .map(|s| {
            let logits = model.predict(params, &s.frames)?;
            let mut g = Graph::new();
            let l = g.constant(logits.clone())?;
            let loss = g.softmax_cross_entropy(l, s.label)?;
            Ok((argmax(logits.data()), g.value(loss).item()?.as_f64()))
        })
        .collect();
    let mut pairs = Vec::with_capacity(samples.len());
    let mut total = 0.0;
    for (o, s) in outputs.into_iter().zip(samples) {
        let (pred, loss) = o?;
        pairs.push((s.label, pred));
        total += loss;
    }
    let mean = if samples.is_empty() { 0.0 } else { total / samples.len() as f64 };
    Ok(EvalReport::from_predictions(model.spec.classes, &pairs, Vec::new(), mean))
}

/// Writes records as JSON lines.
pub fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_is_confusion_trace_ratio() {
        let r = EvalReport::from_predictions(3, &[(0, 0), (1, 2), (2, 2), (2, 2)], vec![], 0.0);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.confusion[1][2], 1);
        assert_eq!(r.accuracy_on(&[0, 1]), 0.5);
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![
            EpochRecord {
                epoch: 1,
                loss: 1.25,
                accuracy: 0.5,
                test_accuracy: None,
            },
            EpochRecord {
                epoch: 2,
                loss: 0.5,
                accuracy: 0.75,
                test_accuracy: Some(1.0),
            },
        ];
        write_metrics(&path, &recs).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), recs);
        let first = fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"epoch\":1,\"loss\":1.25,\"accuracy\":0.5}\n"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
