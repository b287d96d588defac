//! Test-set evaluation of a trained model.
//!
//! Dice is computed on the whole grid (mean over foreground classes);
//! Brier, NLL and ECE are restricted to each example's foreground bounding
//! box. Examples without foreground are skipped. Dataset figures are
//! unweighted means of the per-example values.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::metrics::{
    argmax_labels, brier, calibration_bins, foreground_box, mean, mean_foreground_dice, nll, CalibrationBins, NllMode,
    DEFAULT_BINS,
};
use crate::training::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub bins: usize,
    pub nll: NllChoice,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, nll: NllChoice::TrueClass }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllChoice {
    #[default]
    TrueClass,
    OneVsRest,
}

impl From<NllChoice> for NllMode {
    fn from(c: NllChoice) -> Self {
        match c {
            NllChoice::TrueClass => NllMode::TrueClass,
            NllChoice::OneVsRest => NllMode::OneVsRest,
        }
    }
}

/// Calibration and overlap figures for one probability map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub dice: f64,
    pub brier: f64,
    pub nll: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMetrics {
    pub id: String,
    pub fused: Scores,
    /// Single-modality evidence-layer outputs (normalized contours).
    pub modalities: Vec<Scores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub modality_names: Vec<String>,
    pub examples: Vec<ExampleMetrics>,
    /// Ids of examples without foreground.
    pub skipped: Vec<String>,
    /// Pooled over all evaluated voxels.
    pub calibration: CalibrationBins,
    pub modality_calibration: Vec<CalibrationBins>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub evaluated: usize,
    pub skipped: Vec<String>,
    pub fused: Scores,
    pub modalities: Vec<(String, Scores)>,
}

fn scores(probs: &[f64], ex: &LabeledExample, k: usize, config: &EvaluationConfig) -> Result<(Scores, CalibrationBins)> {
    let w = ex.width();
    let region = foreground_box(&ex.labels, w)?;
    let bins = calibration_bins(probs, k, &ex.labels, &region, w, config.bins)?;
    Ok((
        Scores {
            dice: mean_foreground_dice(&argmax_labels(probs, k), &ex.labels, k),
            brier: brier(probs, k, &ex.labels, &region, w)?,
            nll: nll(probs, k, &ex.labels, &region, w, config.nll.into())?,
            ece: bins.ece()?,
        },
        bins,
    ))
}

type Evaluated = Option<(ExampleMetrics, CalibrationBins, Vec<CalibrationBins>)>;

pub fn evaluate<E: FeatureExtractor>(
    model: &Model<E>,
    examples: &[LabeledExample],
    config: &EvaluationConfig,
) -> Result<Evaluation> {
    if config.bins == 0 {
        return Err(Error::Config(vec!["evaluation.bins must be at least 1".into()]));
    }
    let k = model.n_classes();
    let per: Vec<Result<Evaluated>> = examples
        .par_iter()
        .map(|ex| {
            if ex.labels.iter().all(|&l| l == 0) {
                return Ok(None);
            }
            let out = model.forward(ex)?;
            let (fused, fused_bins) = scores(&out.fused_probabilities(), ex, k, config)?;
            let mut modalities = Vec::new();
            let mut mod_bins = Vec::new();
            for m in &out.modalities {
                let (s, b) = scores(&m.probabilities(k), ex, k, config)?;
                modalities.push(s);
                mod_bins.push(b);
            }
            Ok(Some((ExampleMetrics { id: ex.id.clone(), fused, modalities }, fused_bins, mod_bins)))
        })
        .collect();
    let t = model.n_modalities();
    let mut eval = Evaluation {
        modality_names: model.modalities.clone(),
        examples: Vec::new(),
        skipped: Vec::new(),
        calibration: CalibrationBins::new(config.bins),
        modality_calibration: vec![CalibrationBins::new(config.bins); t],
    };
    for (r, ex) in per.into_iter().zip(examples) {
        match r? {
            None => eval.skipped.push(ex.id.clone()),
            Some((m, b, mb)) => {
                eval.examples.push(m);
                eval.calibration.merge(&b);
                eval.modality_calibration.iter_mut().zip(&mb).for_each(|(a, b)| a.merge(b));
            }
        }
    }
    if eval.examples.is_empty() {
        return Err(Error::Empty("test split after skipping all-background examples"));
    }
    Ok(eval)
}

fn mean_scores(s: &[Scores]) -> Scores {
    let pick = |f: fn(&Scores) -> f64| mean(&s.iter().map(f).collect::<Vec<_>>());
    Scores { dice: pick(|s| s.dice), brier: pick(|s| s.brier), nll: pick(|s| s.nll), ece: pick(|s| s.ece) }
}

impl Evaluation {
    pub fn summary(&self) -> EvaluationSummary {
        let fused: Vec<Scores> = self.examples.iter().map(|e| e.fused).collect();
        let modalities = self
            .modality_names
            .iter()
            .enumerate()
            .map(|(t, name)| {
                let s: Vec<Scores> = self.examples.iter().map(|e| e.modalities[t]).collect();
                (name.clone(), mean_scores(&s))
            })
            .collect();
        EvaluationSummary {
            evaluated: self.examples.len(),
            skipped: self.skipped.clone(),
            fused: mean_scores(&fused),
            modalities,
        }
    }

    /// `example_id,dice_fused,dice_<modality>...,brier,nll,ece`, one row per
    /// example and a final `mean` row.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("example_id,dice_fused");
        for m in &self.modality_names {
            let _ = write!(out, ",dice_{m}");
        }
        out.push_str(",brier,nll,ece\n");
        let mut row = |id: &str, fused: &Scores, dice_mod: Vec<f64>| {
            let _ = write!(out, "{id},{:.6}", fused.dice);
            for d in dice_mod {
                let _ = write!(out, ",{d:.6}");
            }
            let _ = writeln!(out, ",{:.6},{:.6},{:.6}", fused.brier, fused.nll, fused.ece);
        };
        for e in &self.examples {
            row(&e.id, &e.fused, e.modalities.iter().map(|s| s.dice).collect());
        }
        let s = self.summary();
        row("mean", &s.fused, s.modalities.iter().map(|(_, m)| m.dice).collect());
        out
    }

    /// `example_id,source,dice,brier,nll,ece` for the fused output and
    /// every single modality.
    pub fn sources_csv(&self) -> String {
        let mut out = String::from("example_id,source,dice,brier,nll,ece\n");
        let mut row = |id: &str, src: &str, s: &Scores| {
            let _ = writeln!(out, "{id},{src},{:.6},{:.6},{:.6},{:.6}", s.dice, s.brier, s.nll, s.ece);
        };
        for e in &self.examples {
            row(&e.id, "fused", &e.fused);
            for (name, s) in self.modality_names.iter().zip(&e.modalities) {
                row(&e.id, name, s);
            }
        }
        out
    }

    /// `bin,count,accuracy,confidence` of the fused output; empty bins
    /// report `nan`.
    pub fn calibration_csv(&self) -> String {
        calibration_csv(&self.calibration)
    }
}

pub fn calibration_csv(bins: &CalibrationBins) -> String {
    let mut out = String::from("bin,count,accuracy,confidence\n");
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    for b in 0..bins.n_bins() {
        let _ = writeln!(out, "{b},{},{},{}", bins.counts[b], fmt(bins.accuracy(b)), fmt(bins.confidence(b)));
    }
    out
}
