//! End-to-end experiment runner: data, three-stage training, evaluation
//! and report artifacts, driven by one JSON document.
//!
//! Artifacts written to the output directory:
//!
//! ```text
//! config.json           resolved configuration, every default filled in
//! training_log.csv      one row per epoch
//! checkpoint.bin        best model, optimizer state, best-validation record
//! metrics.csv           per test example: fused and per-modality Dice,
//!                       fused Brier, NLL, ECE; final row holds the means
//! metrics_by_source.csv per test example and source (fused or modality)
//! calibration.csv       reliability-diagram bins of the fused output
//! calibration_by_source.csv  the same bins with edges, for every source
//! beta.csv              learned reliability coefficients, one row per modality
//! beta_long.csv         the same coefficients as modality,class,beta rows
//! summary.json          dataset-level means and the best-validation record
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Evaluation, EvaluationConfig, EvaluationSummary, NllChoice};
use crate::io::{load_dataset, Checkpoint};
use crate::metrics::CalibrationBins;
use crate::synthetic::{generate, SyntheticSpec};
use crate::training::{train, BestRecord, Model, ModelShape, TrainingConfig, TrainingLog};

/// Where the examples come from; exactly one of the two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Path(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 64, val: 16, test: 16 }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split: SplitSizes,
    pub model: ModelShape,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    /// Experiment seed. When set it replaces the synthetic-data and training
    /// seeds; model initialization always uses it (or the training seed).
    pub seed: Option<u64>,
}

const SECTIONS: [&str; 6] = ["dataset", "split", "model", "training", "evaluation", "seed"];

fn section<T: for<'de> Deserialize<'de> + Default>(obj: &serde_json::Map<String, Value>, key: &str, problems: &mut Vec<String>) -> T {
    match obj.get(key) {
        None => T::default(),
        Some(v) => T::deserialize(v).unwrap_or_else(|e| {
            problems.push(format!("{key}: {e}"));
            T::default()
        }),
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration, reporting every problem at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(obj) = value else {
            return Err(Error::Config(vec!["configuration must be a JSON object".into()]));
        };
        let mut problems = Vec::new();
        for key in obj.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                problems.push(format!("unknown section `{key}`, expected one of {}", SECTIONS.join(", ")));
            }
        }
        let config = Self {
            dataset: section(&obj, "dataset", &mut problems),
            split: section(&obj, "split", &mut problems),
            model: section(&obj, "model", &mut problems),
            training: section(&obj, "training", &mut problems),
            evaluation: section(&obj, "evaluation", &mut problems),
            seed: section(&obj, "seed", &mut problems),
        };
        problems.extend(config.problems());
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every semantic constraint violated by this configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            out.extend(spec.problems("dataset.synthetic."));
        }
        for (name, n) in [("train", self.split.train), ("val", self.split.val), ("test", self.split.test)] {
            if n == 0 {
                out.push(format!("split.{name} must be at least 1"));
            }
        }
        let m = &self.model;
        for (name, n) in [("features", m.features), ("hidden", m.hidden), ("prototypes", m.prototypes)] {
            if n == 0 {
                out.push(format!("model.{name} must be at least 1"));
            }
        }
        out.extend(self.training.problems("training."));
        if self.evaluation.bins == 0 {
            out.push("evaluation.bins must be at least 1".into());
        }
        out
    }

    /// Applies the experiment seed to every seeded component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let seed = c.seed.unwrap_or(c.training.seed);
        c.seed = Some(seed);
        c.training.seed = seed;
        if let DatasetSource::Synthetic(spec) = &mut c.dataset {
            spec.seed = seed;
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes") + "\n"
    }

    fn model_seed(&self) -> u64 {
        self.seed.unwrap_or(self.training.seed)
    }
}

/// Loads or generates the dataset a configuration refers to.
pub fn load_experiment_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset {
        DatasetSource::Synthetic(spec) => generate(spec, config.split.total()),
        DatasetSource::Path(p) => load_dataset(p),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Skip training and evaluate this checkpoint.
    pub eval_only: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub trained: bool,
    pub epochs: usize,
    pub best: Option<BestRecordSummary>,
    /// `beta[t][k]`, rounded to 3 decimals.
    pub beta: Vec<Vec<f64>>,
    pub test: EvaluationSummary,
    /// How each reported metric is defined.
    pub conventions: Conventions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub dice: String,
    pub brier: String,
    pub nll: String,
    pub ece: String,
}

impl Conventions {
    fn new(config: &EvaluationConfig) -> Self {
        let nll = match config.nll {
            NllChoice::TrueClass => "sum over box voxels of -ln p(true class), p floored at 1e-12",
            NllChoice::OneVsRest => {
                "sum over box voxels of -sum_k [g_k ln p_k + (1-g_k) ln(1-p_k)], p floored at 1e-12"
            }
        };
        Self {
            dice: "whole grid, argmax labels, mean over foreground classes, 0/0 = 1".into(),
            brier: "mean over box voxels of sum over classes of (p_k - g_k)^2".into(),
            nll: nll.into(),
            ece: format!("{} equal-width bins of max probability over box voxels", config.bins),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecordSummary {
    pub epoch: usize,
    pub stage: u8,
    pub val_dice_fused: f64,
    pub val_loss: f64,
}

impl From<BestRecord> for BestRecordSummary {
    fn from(b: BestRecord) -> Self {
        Self { epoch: b.epoch, stage: b.stage, val_dice_fused: b.val_dice_fused, val_loss: b.val_loss }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub model: Model,
    pub log: Option<TrainingLog>,
    pub evaluation: Evaluation,
    pub summary: ExperimentSummary,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Wide reliability table: `modality,<class>...`, 3 decimals.
pub fn beta_table<E>(model: &Model<E>) -> String {
    let mut out = String::from("modality");
    for c in model.frame.labels() {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for (t, m) in model.modalities.iter().enumerate() {
        out.push_str(m);
        for k in 0..model.frame.len() {
            let _ = write!(out, ",{:.3}", model.reliability.beta(t, k));
        }
        out.push('\n');
    }
    out
}

fn calibration_table(eval: &Evaluation) -> String {
    let mut out = String::from("source,bin,lower,upper,count,accuracy,confidence\n");
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    let mut block = |source: &str, bins: &CalibrationBins| {
        let b = bins.n_bins();
        for i in 0..b {
            let _ = writeln!(
                out,
                "{source},{i},{:.3},{:.3},{},{},{}",
                i as f64 / b as f64,
                (i + 1) as f64 / b as f64,
                bins.counts[i],
                fmt(bins.accuracy(i)),
                fmt(bins.confidence(i))
            );
        }
    };
    block("fused", &eval.calibration);
    for (name, bins) in eval.modality_names.iter().zip(&eval.modality_calibration) {
        block(name, bins);
    }
    out
}

fn check_compatible(dataset: &Dataset, model: &Model) -> Result<()> {
    if dataset.n_classes() != model.n_classes() {
        return Err(Error::CheckpointMismatch {
            what: "class count K",
            dataset: dataset.n_classes(),
            checkpoint: model.n_classes(),
        });
    }
    if dataset.n_modalities() != model.n_modalities() {
        return Err(Error::CheckpointMismatch {
            what: "modality count T",
            dataset: dataset.n_modalities(),
            checkpoint: model.n_modalities(),
        });
    }
    for (t, (&c, e)) in dataset.channels.iter().zip(&model.extractors).enumerate() {
        use crate::features::FeatureExtractor;
        if c != e.in_channels() {
            return Err(Error::Format(format!(
                "modality {t} has {c} channels in the dataset but {} in the checkpoint",
                e.in_channels()
            )));
        }
    }
    Ok(())
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Runs the experiment and writes its artifacts into `out`.
///
/// If training diverges the best model so far is still checkpointed along
/// with the training log, and the divergence is returned as the error.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, options: &RunOptions) -> Result<ExperimentOutcome> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let config = config.resolved();
    let dataset = load_experiment_dataset(&config)?;
    let splits = dataset.split(config.split.train, config.split.val, config.split.test)?;
    std::fs::create_dir_all(out)?;
    let config_json = config.to_json();
    write(out, "config.json", &config_json)?;

    let (model, log, best) = match &options.eval_only {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            check_compatible(&dataset, &ckpt.model)?;
            (ckpt.model, None, ckpt.best)
        }
        None => {
            let model =
                Model::init(&dataset.frame, dataset.modalities.clone(), &dataset.channels, config.model, config.model_seed())?;
            let outcome = train(model, splits.train, splits.val, &config.training)?;
            write(out, "training_log.csv", outcome.log.to_csv())?;
            let ckpt = Checkpoint {
                config_json: config_json.clone(),
                model: outcome.model,
                optimizer: outcome.optimizer,
                best: outcome.best,
            };
            ckpt.save(&out.join("checkpoint.bin"))?;
            if let Some(e) = outcome.divergence {
                return Err(e);
            }
            (ckpt.model, Some(outcome.log), ckpt.best)
        }
    };

    let evaluation = evaluate(&model, splits.test, &config.evaluation)?;
    write(out, "metrics.csv", evaluation.metrics_csv())?;
    write(out, "metrics_by_source.csv", evaluation.sources_csv())?;
    write(out, "calibration.csv", evaluation.calibration_csv())?;
    write(out, "calibration_by_source.csv", calibration_table(&evaluation))?;
    write(out, "beta.csv", beta_table(&model))?;
    write(out, "beta_long.csv", model.reliability.to_csv())?;
    let k = model.n_classes();
    let summary = ExperimentSummary {
        seed: config.model_seed(),
        trained: log.is_some(),
        epochs: log.as_ref().map_or(0, |l| l.records.len()),
        best: best.map(Into::into),
        beta: (0..model.n_modalities()).map(|t| (0..k).map(|c| round3(model.reliability.beta(t, c))).collect()).collect(),
        test: evaluation.summary(),
        conventions: Conventions::new(&config.evaluation),
    };
    write(out, "summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(ExperimentOutcome { config, model, log, evaluation, summary })
}

/// Sizes the global worker pool from `EVIFUSE_THREADS` (0 or unset = one
/// worker per core). Has no effect once the pool exists.
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var("EVIFUSE_THREADS") {
        Err(_) => 0,
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(vec![format!("EVIFUSE_THREADS must be a nonnegative integer, got {v:?}")]))?,
    };
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = ExperimentConfig::default().resolved();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn every_problem_is_listed() {
        let text = r#"{
            "dataset": {"synthetic": {"classes": 1, "fidelity": [[1.0], [0.2]], "prior": [1.0]}},
            "split": {"train": 0},
            "model": {"prototypes": 0},
            "training": {"learning_rate": -1.0, "batch_size": "four"},
            "evaluation": {"bins": 0},
            "extra": 1
        }"#;
        let Err(Error::Config(p)) = ExperimentConfig::from_json(text) else { panic!() };
        let all = p.join("\n");
        for needle in [
            "unknown section `extra`",
            "training: invalid type",
            "dataset.synthetic.classes",
            "dataset.synthetic.fidelity[1][0]",
            "split.train",
            "model.prototypes",
            "evaluation.bins",
        ] {
            assert!(all.contains(needle), "missing {needle:?} in\n{all}");
        }
    }

    #[test]
    fn experiment_seed_overrides_component_seeds() {
        let c = ExperimentConfig { seed: Some(9), ..Default::default() }.resolved();
        assert_eq!(c.training.seed, 9);
        let DatasetSource::Synthetic(s) = &c.dataset else { panic!() };
        assert_eq!(s.seed, 9);
        let d = ExperimentConfig::default().resolved();
        assert_eq!(d.seed, Some(0));
    }

    #[test]
    fn fresh_model_reports_half() {
        let d = generate(&SyntheticSpec { width: 4, height: 4, ..Default::default() }, 1).unwrap();
        let m = Model::init(&d.frame, d.modalities.clone(), &d.channels, ModelShape::default(), 0).unwrap();
        assert_eq!(beta_table(&m), "modality,c1,c2,c3\nA,0.500,0.500,0.500\nB,0.500,0.500,0.500\n");
    }
}
