//! Training loop, evaluation metrics, batch sweeps and per-subject reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::baselines::{KnnModel, LdaModel, Priors};
use crate::dataio::{split, SplitSpec, SubjectMeta, WindowedDataset, ZScore};
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy_loss, save_model, Adam, AdamConfig, Model, ModelSpec, Tensor, TrainedModel,
};

pub const DEFAULT_BATCH: usize = 100;
pub const DEFAULT_EPOCHS: usize = 50;
pub const SWEEP_BATCHES: [usize; 3] = [50, 100, 150];
/// Rows per inference call during evaluation. Results do not depend on it.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub split: SplitSpec,
    pub dataset_id: String,
    /// Evaluate train and test accuracy after every epoch.
    pub curves: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            adam: AdamConfig::default(),
            split: SplitSpec::default(),
            dataset_id: String::new(),
            curves: true,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            seed,
            split: SplitSpec::with_seed(seed),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for batchnorm, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub dataset_id: String,
    pub seed: u64,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes absent from the evaluated set.
    pub per_class_recall: Vec<Option<f64>>,
    pub training_time_sec: f64,
    pub loss_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
}

impl Metrics {
    fn from_predictions(preds: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        let acc = accuracy(preds, truth)?;
        let confusion = confusion_matrix(preds, truth, num_classes)?;
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Metrics {
            model: String::new(),
            dataset_id: String::new(),
            seed: 0,
            batch_size: None,
            epochs: None,
            num_classes,
            train_size: 0,
            test_size: truth.len(),
            accuracy: acc,
            confusion,
            per_class_recall,
            training_time_sec: 0.0,
            loss_curve: Vec::new(),
            train_curve: Vec::new(),
            test_curve: Vec::new(),
        })
    }

    /// Copy with the wall-clock field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Metrics {
        Metrics {
            training_time_sec: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true\\pred");
        for c in 0..k {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            s.push_str(&c.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_accuracy,test_accuracy\n");
        let fmt = |v: Option<&f64>| v.map_or(String::new(), f64::to_string);
        for e in 0..self.loss_curve.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e + 1,
                self.loss_curve[e],
                fmt(self.train_curve.get(e)),
                fmt(self.test_curve.get(e))
            ));
        }
        s
    }
}

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyOutput("accuracy of an empty set".into()));
    }
    let correct = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

pub fn confusion_matrix(
    preds: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Config(format!(
                "label {} outside {num_classes} classes",
                p.max(t)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn check_classes(ds: &WindowedDataset, num_classes: usize) -> Result<()> {
    if ds.num_classes() > num_classes {
        return Err(Error::Config(format!(
            "data has labels up to {} but the model has {num_classes} classes",
            ds.num_classes() - 1
        )));
    }
    Ok(())
}

fn predict_rows(model: &TrainedModel, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

/// Inference-mode evaluation; never touches the model's state.
pub fn evaluate(model: &TrainedModel, ds: &WindowedDataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::EmptyOutput("evaluation set is empty".into()));
    }
    check_classes(ds, model.num_classes())?;
    let preds = predict_rows(model, &ds.inputs)?;
    let mut m = Metrics::from_predictions(&preds, &ds.labels, model.num_classes())?;
    m.model = "dlpr".into();
    m.seed = model.model.seed;
    Ok(m)
}

fn batch_tensor(rows: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    let refs: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
    Tensor::from_rows(&refs)
}

fn eval_accuracy(model: &TrainedModel, ds: &WindowedDataset) -> Result<f64> {
    accuracy(&predict_rows(model, &ds.inputs)?, &ds.labels)
}

/// Trains the DLPR network on `train`, z-scoring inputs with training
/// statistics. Final metrics are computed on `test` when given, otherwise on
/// `train`.
pub fn train_dlpr(
    train: &WindowedDataset,
    test: Option<&WindowedDataset>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, Metrics)> {
    let num_classes = train.num_classes().max(test.map_or(0, |t| t.num_classes()));
    let spec = ModelSpec::fitted(train.width(), num_classes)?;
    train_with_spec(train, test, cfg, spec)
}

/// As [`train_dlpr`] with an explicit architecture.
pub fn train_with_spec(
    train: &WindowedDataset,
    test: Option<&WindowedDataset>,
    cfg: &TrainConfig,
    spec: ModelSpec,
) -> Result<(TrainedModel, Metrics)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyOutput("training set is empty".into()));
    }
    train.validate()?;
    if train.len() < 2 {
        return Err(Error::BatchTooSmall(train.len()));
    }
    if let Some(t) = test {
        if t.width() != train.width() {
            return Err(Error::Shape(format!(
                "train rows have {} inputs, test rows {}",
                train.width(),
                t.width()
            )));
        }
    }

    let normalization = ZScore::fit(&train.inputs)?;
    let x = normalization.apply_all(&train.inputs);
    if spec.input_length != train.width() {
        return Err(Error::Shape(format!(
            "model takes {} inputs, data rows have {}",
            spec.input_length,
            train.width()
        )));
    }
    if let Some(t) = test {
        check_classes(t, spec.num_classes)?;
    }
    check_classes(train, spec.num_classes)?;
    let mut tm = TrainedModel {
        model: Model::new(spec, cfg.seed)?,
        normalization,
    };
    let mut adam = Adam::new(cfg.adam)?;
    // separate stream from weight init, which also derives from the seed
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut train_curve = Vec::new();
    let mut test_curve = Vec::new();
    let mut elapsed = 0.0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let xb = batch_tensor(&x, idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let logits = tm.model.forward_train(&xb)?;
            let (loss, grad) = cross_entropy_loss(&logits, &yb)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            tm.model.backward(&grad)?;
            adam.update(tm.model.params_and_grads())?;
            loss_sum += loss;
            batches += 1;
        }
        elapsed += start.elapsed().as_secs_f64();
        loss_curve.push(loss_sum / batches as f64);
        if cfg.curves {
            train_curve.push(eval_accuracy(&tm, train)?);
            if let Some(t) = test {
                test_curve.push(eval_accuracy(&tm, t)?);
            }
        }
    }

    let mut m = evaluate(&tm, test.unwrap_or(train))?;
    m.dataset_id = cfg.dataset_id.clone();
    m.batch_size = Some(cfg.batch_size);
    m.epochs = Some(cfg.epochs);
    m.train_size = train.len();
    m.training_time_sec = elapsed;
    m.loss_curve = loss_curve;
    m.train_curve = train_curve;
    m.test_curve = test_curve;
    Ok((tm, m))
}

/// Splits `ds` with `cfg.split`, then trains and evaluates.
pub fn train_on_split(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<(TrainedModel, Metrics)> {
    let (tr, te) = split(ds, &cfg.split)?;
    train_dlpr(&tr, Some(&te), cfg)
}

/// One training run per batch size, in the given order, on the same split.
pub fn batch_sweep(
    train: &WindowedDataset,
    test: Option<&WindowedDataset>,
    cfg: &TrainConfig,
    sizes: &[usize],
) -> Result<Vec<(TrainedModel, Metrics)>> {
    sizes
        .iter()
        .map(|&b| {
            let c = TrainConfig {
                batch_size: b,
                ..cfg.clone()
            };
            train_dlpr(train, test, &c)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Knn { k: usize },
    Lda { priors: Priors },
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Knn { .. } => "knn",
            Baseline::Lda { .. } => "lda",
        }
    }
}

/// Fits a classical baseline on z-scored training features and evaluates it.
pub fn run_baseline(
    train: &WindowedDataset,
    test: &WindowedDataset,
    kind: Baseline,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyOutput("evaluation set is empty".into()));
    }
    let z = ZScore::fit(&train.inputs)?;
    let xtr = z.apply_all(&train.inputs);
    let xte = z.apply_all(&test.inputs);
    let start = Instant::now();
    let preds = match kind {
        Baseline::Knn { k } => KnnModel::fit(&xtr, &train.labels, k)?.predict_all(&xte)?,
        Baseline::Lda { priors } => {
            LdaModel::fit(&xtr, &train.labels, priors)?.predict_all(&xte)?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let k = train.num_classes().max(test.num_classes());
    let mut m = Metrics::from_predictions(&preds, &test.labels, k)?;
    m.model = kind.name().into();
    m.train_size = train.len();
    m.training_time_sec = elapsed;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub model: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RepeatSummary {
    pub fn from_accuracies(model: &str, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = if accuracies.len() > 1 {
            accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        RepeatSummary {
            model: model.into(),
            accuracies,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Baseline accuracy over `repeats` splits seeded `split.seed, split.seed + 1, ...`.
pub fn baseline_repeats(
    ds: &WindowedDataset,
    kind: Baseline,
    split_spec: &SplitSpec,
    repeats: usize,
) -> Result<RepeatSummary> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let accs = (0..repeats as u64)
        .map(|r| {
            let s = SplitSpec {
                seed: split_spec.seed.wrapping_add(r),
                ..*split_spec
            };
            let (tr, te) = split(ds, &s)?;
            Ok(run_baseline(&tr, &te, kind)?.accuracy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepeatSummary::from_accuracies(kind.name(), accs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject_id: String,
    pub dash_score: Option<f64>,
    pub accuracy: f64,
}

/// One row per subject: its model evaluated on its dataset.
pub fn per_subject_report(
    subjects: &[SubjectMeta],
    models: &[TrainedModel],
    datasets: &[WindowedDataset],
) -> Result<Vec<SubjectRow>> {
    if subjects.len() != models.len() || models.len() != datasets.len() {
        return Err(Error::Config(format!(
            "{} subjects, {} models, {} datasets",
            subjects.len(),
            models.len(),
            datasets.len()
        )));
    }
    subjects
        .iter()
        .zip(models)
        .zip(datasets)
        .map(|((s, m), d)| {
            Ok(SubjectRow {
                subject_id: s.id.clone(),
                dash_score: s.dash_score,
                accuracy: evaluate(m, d)?.accuracy,
            })
        })
        .collect()
}

pub fn subject_report_csv(rows: &[SubjectRow]) -> String {
    let mut s = String::from("subject_id,dash_score,accuracy\n");
    for r in rows {
        let dash = r.dash_score.map_or(String::new(), |d| d.to_string());
        s.push_str(&format!("{},{},{}\n", r.subject_id, dash, r.accuracy));
    }
    s
}

/// Writes `metrics.json`, `confusion.csv`, `curves.csv` and, when given,
/// `model.dlprm` into `dir`.
pub fn write_run(dir: &Path, metrics: &Metrics, model: Option<&TrainedModel>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.json"), metrics.to_json()? + "\n")?;
    fs::write(dir.join("confusion.csv"), metrics.confusion_csv())?;
    fs::write(dir.join("curves.csv"), metrics.curves_csv())?;
    if let Some(m) = model {
        save_model(&dir.join("model.dlprm"), m)?;
    }
    Ok(())
}
