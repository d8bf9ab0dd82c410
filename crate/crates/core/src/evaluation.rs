//! Test-set predictions, confusion matrix, accuracy / per-class F1, and reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FrameSequence, Label, SequenceSource, SplitName, VideoSample, SEQUENCE_SHAPE};
use crate::error::{Error, IoContext, Result};
use crate::nn::Tensor;
use crate::plot::confusion_svg;
use crate::provenance::Provenance;
use crate::training::argmax;
use crate::zoo::{ModelFamily, ModelHandle};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const CONFUSION_SVG: &str = "confusion.svg";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// `[[TN, FP], [FN, TP]]`: rows are the true class, columns the prediction,
/// index 1 = Violent.
pub type Confusion = [[usize; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: Label,
    pub predicted: Label,
    /// `[P(NonViolent), P(Violent)]`.
    pub probabilities: [f32; 2],
}

/// Inference-mode predictions, one per sequence, in input order.
pub fn predict_all(handle: &ModelHandle, test: &[FrameSequence], batch_size: usize) -> Result<Vec<Prediction>> {
    let refs: Vec<&FrameSequence> = test.iter().collect();
    predict_refs(handle, &refs, batch_size)
}

/// Like [`predict_all`], loading the sequences batch by batch.
pub fn predict_samples(
    handle: &ModelHandle,
    samples: &[VideoSample],
    source: &dyn SequenceSource,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let seqs = chunk.iter().map(|s| source.sequence(s)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FrameSequence> = seqs.iter().map(|s| s.as_ref()).collect();
        out.extend(predict_refs(handle, &refs, batch_size)?);
    }
    Ok(out)
}

fn predict_refs(handle: &ModelHandle, test: &[&FrameSequence], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(test.len());
    for chunk in test.chunks(batch_size.max(1)) {
        for seq in chunk {
            seq.validate()?;
        }
        let views: Vec<&[f32]> = chunk.iter().map(|s| s.frames.as_slice()).collect();
        let probs = handle.forward(&Tensor::stack(&views, &SEQUENCE_SHAPE)?)?;
        if probs.channels() != 2 {
            return Err(Error::Shape {
                context: "class probabilities".into(),
                expected: vec![chunk.len(), 2],
                received: probs.shape().to_vec(),
            });
        }
        for (seq, row) in chunk.iter().zip(probs.data().chunks(2)) {
            out.push(Prediction {
                id: seq.video_id.clone(),
                truth: seq.label,
                predicted: Label::from_index(argmax(row))?,
                probabilities: [row[0], row[1]],
            });
        }
    }
    Ok(out)
}

/// Count (truth, prediction) pairs of class indices.
pub fn confusion_matrix(preds: &[usize], truths: &[usize]) -> Result<Confusion> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = [[0; 2]; 2];
    for (&p, &t) in preds.iter().zip(truths) {
        if p > 1 || t > 1 {
            return Err(Error::InvalidInput(format!("labels must be 0 or 1, got prediction {p}, truth {t}")));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1_class0: f64,
    pub f1_class1: f64,
}

/// F1 of `class` treated as positive; 0 when precision + recall is 0 or undefined.
fn f1(cm: &Confusion, class: usize) -> f64 {
    let other = 1 - class;
    let tp = cm[class][class] as f64;
    let fp = cm[other][class] as f64;
    let fn_ = cm[class][other] as f64;
    // 2PR/(P+R) == 2TP/(2TP+FP+FN), which is also defined when P or R is 0/0.
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

pub fn metrics_from_confusion(cm: &Confusion) -> Result<Metrics> {
    let total: usize = cm.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    Ok(Metrics {
        accuracy: (cm[0][0] + cm[1][1]) as f64 / total as f64,
        f1_class0: f1(cm, 0),
        f1_class1: f1(cm, 1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_family: ModelFamily,
    pub split_name: SplitName,
    pub accuracy: f64,
    pub f1_class0: f64,
    pub f1_class1: f64,
    pub confusion: Confusion,
    pub per_video: Vec<Prediction>,
    pub provenance: Provenance,
}

impl EvaluationReport {
    pub fn from_predictions(
        model_family: ModelFamily,
        split_name: SplitName,
        per_video: Vec<Prediction>,
        provenance: Provenance,
    ) -> Result<Self> {
        let preds: Vec<usize> = per_video.iter().map(|p| p.predicted.index()).collect();
        let truths: Vec<usize> = per_video.iter().map(|p| p.truth.index()).collect();
        let confusion = confusion_matrix(&preds, &truths)?;
        let m = metrics_from_confusion(&confusion)?;
        Ok(Self {
            model_family,
            split_name,
            accuracy: m.accuracy,
            f1_class0: m.f1_class0,
            f1_class1: m.f1_class1,
            confusion,
            per_video,
            provenance,
        })
    }

    pub fn n_test(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Non-violent videos classified as violent.
    pub fn false_positives(&self) -> usize {
        self.confusion[0][1]
    }

    pub fn metrics_file(&self) -> MetricsFile {
        MetricsFile {
            family: self.model_family,
            split: self.split_name,
            accuracy: self.accuracy,
            f1: F1Scores {
                class0: self.f1_class0,
                class1: self.f1_class1,
            },
            confusion: self.confusion,
            n_test: self.n_test(),
            false_positives: self.false_positives(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Evaluate on the split's test set.
pub fn evaluate(
    handle: &ModelHandle,
    test: &[VideoSample],
    split_name: SplitName,
    source: &dyn SequenceSource,
    batch_size: usize,
    provenance: Provenance,
) -> Result<EvaluationReport> {
    let preds = predict_samples(handle, test, source, batch_size)?;
    EvaluationReport::from_predictions(handle.spec.family, split_name, preds, provenance)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub class0: f64,
    pub class1: f64,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub family: ModelFamily,
    pub split: SplitName,
    pub accuracy: f64,
    pub f1: F1Scores,
    pub confusion: Confusion,
    pub n_test: usize,
    pub false_positives: usize,
    pub provenance: Provenance,
}

impl MetricsFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path).at(path)?)?)
    }
}

/// Write `metrics.json`, `confusion.csv`, `confusion.svg` and `predictions.csv` into `out_dir`.
pub fn emit_report(report: &EvaluationReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let path = out_dir.join(METRICS_FILE);
    let mut json = serde_json::to_vec_pretty(&report.metrics_file())?;
    json.push(b'\n');
    std::fs::write(&path, json).at(&path)?;

    let path = out_dir.join(CONFUSION_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    w.write_record(["truth", "pred", "count"])?;
    for t in 0..2 {
        for p in 0..2 {
            w.write_record([t.to_string(), p.to_string(), report.confusion[t][p].to_string()])?;
        }
    }
    w.flush().at(&path)?;

    let path = out_dir.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    w.write_record(["id", "truth", "pred", "p_nonviolent", "p_violent"])?;
    for p in &report.per_video {
        w.write_record([
            p.id.clone(),
            p.truth.index().to_string(),
            p.predicted.index().to_string(),
            p.probabilities[0].to_string(),
            p.probabilities[1].to_string(),
        ])?;
    }
    w.flush().at(&path)?;

    let title = format!(
        "{} / {}: accuracy {:.4} ({} of {})",
        report.model_family,
        report.split_name,
        report.accuracy,
        report.confusion[0][0] + report.confusion[1][1],
        report.n_test()
    );
    let path = out_dir.join(CONFUSION_SVG);
    let svg = confusion_svg(&title, [Label::NonViolent.as_str(), Label::Violent.as_str()], &report.confusion);
    std::fs::write(&path, svg).at(&path)
}
