use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidbench::data::{FrameSequence, Label, SplitName, SEQUENCE_LEN};
use vidbench::evaluation::{
    confusion_matrix, emit_report, metrics_from_confusion, predict_all, EvaluationReport, MetricsFile, Prediction,
    CONFUSION_CSV, CONFUSION_SVG, METRICS_FILE, PREDICTIONS_FILE,
};
use vidbench::provenance::Provenance;
use vidbench::synthetic::synthetic_split;
use vidbench::zoo::{build_model, BuildOptions, ModelFamily, ModelSpec};
use vidbench::Error;

/// Precision and recall counted straight from the label vectors.
fn brute_force(preds: &[usize], truths: &[usize]) -> (f64, f64, f64) {
    let n = preds.len() as f64;
    let correct = preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64;
    let f1 = |c: usize| {
        let tp = preds.iter().zip(truths).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
        let actual = truths.iter().filter(|&&t| t == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        }
    };
    (correct / n, f1(0), f1(1))
}

#[test]
fn metrics_agree_with_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        // skewed draws so degenerate predictors show up
        let bias: f64 = rng.gen();
        let preds: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(bias))).collect();
        let truths: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let cm = confusion_matrix(&preds, &truths).unwrap();
        assert_eq!(cm.iter().flatten().sum::<usize>(), n);
        let m = metrics_from_confusion(&cm).unwrap();
        let (acc, f0, f1) = brute_force(&preds, &truths);
        assert!((m.accuracy - acc).abs() < 1e-12);
        assert!((m.f1_class0 - f0).abs() < 1e-12, "{cm:?}");
        assert!((m.f1_class1 - f1).abs() < 1e-12, "{cm:?}");
        for v in [m.f1_class0, m.f1_class1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn confusion_examples() {
    assert_eq!(confusion_matrix(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), [[2, 0], [0, 2]]);
    assert_eq!(confusion_matrix(&[1, 0, 1], &[1, 0, 0]).unwrap(), [[1, 1], [0, 1]]);
    assert_eq!(confusion_matrix(&[0; 5], &[1; 5]).unwrap(), [[0, 0], [5, 0]]);
    assert!(matches!(confusion_matrix(&[0, 1], &[0]), Err(Error::InvalidInput(_))));
    assert!(matches!(confusion_matrix(&[2], &[0]), Err(Error::InvalidInput(_))));
    assert_eq!(confusion_matrix(&[], &[]).unwrap(), [[0, 0], [0, 0]]);
}

#[test]
fn metric_examples() {
    let m = metrics_from_confusion(&[[200, 0], [0, 200]]).unwrap();
    assert_eq!((m.accuracy, m.f1_class0, m.f1_class1), (1.0, 1.0, 1.0));

    // 377 of 400 correct, however the 23 errors are distributed.
    for fp in 0..=23 {
        let cm = [[200 - (23 - fp), fp], [23 - fp, 200 - fp]];
        assert_eq!(metrics_from_confusion(&cm).unwrap().accuracy, 0.9425);
    }

    let m = metrics_from_confusion(&[[2, 1], [0, 3]]).unwrap();
    assert!((m.accuracy - 5.0 / 6.0).abs() < 1e-12);
    assert!((m.f1_class0 - 0.8).abs() < 1e-12);
    assert!((m.f1_class1 - 6.0 / 7.0).abs() < 1e-12);

    // A predictor that never says "violent" still has a defined F1.
    let m = metrics_from_confusion(&[[5, 0], [5, 0]]).unwrap();
    assert_eq!(m.f1_class1, 0.0);
    assert!(matches!(metrics_from_confusion(&[[0, 0], [0, 0]]), Err(Error::InvalidInput(_))));
}

fn prediction(id: &str, truth: usize, p1: f32) -> Prediction {
    Prediction {
        id: id.into(),
        truth: Label::from_index(truth).unwrap(),
        predicted: Label::from_index(usize::from(p1 > 0.5)).unwrap(),
        probabilities: [1.0 - p1, p1],
    }
}

fn provenance() -> Provenance {
    Provenance::new(42, &"cfg").unwrap()
}

#[test]
fn report_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds: Vec<Prediction> = (0..37).map(|i| prediction(&format!("v{i}"), i % 2, rng.gen())).collect();
    let report = EvaluationReport::from_predictions(ModelFamily::MobileNetV2Bilstm, SplitName::Full, preds, provenance()).unwrap();
    let mean_correct = report.per_video.iter().filter(|p| p.truth == p.predicted).count() as f64 / 37.0;
    assert!((report.accuracy - mean_correct).abs() < 1e-12);

    let tmp = tempfile::tempdir().unwrap();
    emit_report(&report, tmp.path()).unwrap();
    for f in [METRICS_FILE, CONFUSION_CSV, CONFUSION_SVG, PREDICTIONS_FILE] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let first = std::fs::read(tmp.path().join(METRICS_FILE)).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let order = ["family", "split", "accuracy", "f1", "confusion", "n_test", "false_positives", "provenance"];
    let pos: Vec<usize> = order.iter().map(|k| text.find(&format!("\n  \"{k}\"")).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
    assert_eq!(json["family"], "mobilenetv2_bilstm");
    assert_eq!(json["split"], "full");
    assert_eq!(json["n_test"], 37);
    assert_eq!(json["provenance"]["seed"], 42);
    let m = metrics_from_confusion(&report.confusion).unwrap();
    assert_eq!(json["accuracy"].as_f64().unwrap(), m.accuracy);
    assert_eq!(json["f1"]["class1"].as_f64().unwrap(), m.f1_class1);
    assert_eq!(json["false_positives"], report.confusion[0][1]);
    assert_eq!(MetricsFile::load(&tmp.path().join(METRICS_FILE)).unwrap(), report.metrics_file());

    let csv = std::fs::read_to_string(tmp.path().join(PREDICTIONS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 38);
    let cm = std::fs::read_to_string(tmp.path().join(CONFUSION_CSV)).unwrap();
    let lines: Vec<&str> = cm.lines().collect();
    assert_eq!(lines[0], "truth,pred,count");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[2], format!("0,1,{}", report.confusion[0][1]));
    let svg = std::fs::read_to_string(tmp.path().join(CONFUSION_SVG)).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    emit_report(&report, tmp.path()).unwrap();
    assert_eq!(std::fs::read(tmp.path().join(METRICS_FILE)).unwrap(), first);
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let report = EvaluationReport::from_predictions(
        ModelFamily::Cnn3d,
        SplitName::Fraction,
        vec![prediction("a", 1, 0.9)],
        provenance(),
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    assert!(matches!(emit_report(&report, &blocker.join("sub")), Err(Error::Io { .. })));
}

#[test]
fn predictions_are_pure_and_ordered() {
    let handle = build_model(&ModelSpec::new(ModelFamily::Cnn3d), &BuildOptions::new(1)).unwrap();
    assert!(predict_all(&handle, &[], 4).unwrap().is_empty());

    let (split, source) = synthetic_split((0, 0, 2), 5).unwrap();
    use vidbench::data::SequenceSource;
    let mut seqs: Vec<FrameSequence> = split.test.iter().map(|s| (*source.sequence(s).unwrap()).clone()).collect();
    seqs.push(seqs[0].clone());
    let preds = predict_all(&handle, &seqs, 2).unwrap();
    assert_eq!(preds.len(), 5);
    assert_eq!(preds[4], preds[0]);
    for (p, s) in preds.iter().zip(&seqs) {
        assert_eq!(p.id, s.video_id);
        let sum: f32 = p.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        let arg = usize::from(p.probabilities[1] > p.probabilities[0]);
        assert_eq!(p.predicted.index(), arg);
    }
    // Batch size does not change the answers.
    let single = predict_all(&handle, &seqs, 1).unwrap();
    for (a, b) in preds.iter().zip(&single) {
        assert!((a.probabilities[1] - b.probabilities[1]).abs() < 1e-6);
    }

    let bad = FrameSequence { video_id: "short".into(), frames: vec![0.0; SEQUENCE_LEN - 3], label: Label::Violent };
    assert!(matches!(predict_all(&handle, &[bad], 1), Err(Error::Shape { .. })));
}
