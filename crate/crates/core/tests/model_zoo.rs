use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidbench::data::SEQUENCE_SHAPE;
use vidbench::nn::layers::{Activation, LayerKind, Padding};
use vidbench::nn::{LayerGroup, Optimizer, Tensor};
use vidbench::zoo::{
    backbone_depth, build_backbone_bilstm, build_cnn2d_bilstm, build_cnn3d, build_model, load_checkpoint,
    weights_file_name, BuildOptions, ModelFamily, ModelHandle, ModelSpec, WeightsOrigin,
};
use vidbench::Error;

fn random_options(seed: u64) -> BuildOptions {
    BuildOptions {
        seed,
        weights_dir: "/nonexistent".into(),
        allow_random_init: true,
    }
}

fn build(family: ModelFamily) -> ModelHandle {
    build_model(&ModelSpec::new(family), &random_options(7)).unwrap()
}

fn random_batch(b: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![b];
    shape.extend(SEQUENCE_SHAPE);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

/// Fixture rows: (name, Keras class, "param:AxB;..." in Keras weight order).
fn fixture(file: &str) -> Vec<(String, String, String)> {
    let path = format!("{}/tests/data/{file}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.splitn(3, ' ');
            (
                parts.next().unwrap().to_string(),
                parts.next().unwrap().to_string(),
                parts.next().unwrap_or("").trim().to_string(),
            )
        })
        .collect()
}

fn keras_class(kind: &LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv2d { .. } => "Conv2D",
        LayerKind::DepthwiseConv2d { .. } => "DepthwiseConv2D",
        LayerKind::BatchNorm { .. } => "BatchNormalization",
        LayerKind::Activation {
            activation: Activation::Relu6,
        } => "ReLU",
        LayerKind::Activation { .. } => "Activation",
        LayerKind::Pool2d {
            op: vidbench::nn::layers::PoolOp::Max,
            ..
        } => "MaxPooling2D",
        LayerKind::Pool2d { .. } => "AveragePooling2D",
        LayerKind::Concat => "Concatenate",
        LayerKind::Add => "Add",
        LayerKind::ZeroPad2d { .. } => "ZeroPadding2D",
        _ => "?",
    }
}

/// Our backbone rendered in the fixture format.
fn rendered_backbone(handle: &ModelHandle) -> Vec<(String, String, String)> {
    let mut weights: BTreeMap<String, Vec<String>> = BTreeMap::new();
    handle.with_graph(|g| {
        for (name, p, _) in g.named_params() {
            let (layer, param) = name.split_once('/').unwrap();
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            weights
                .entry(layer.to_string())
                .or_default()
                .push(format!("{param}:{}", dims.join("x")));
        }
    });
    handle
        .backbone_layers()
        .iter()
        .map(|l| {
            (
                l.name.clone(),
                keras_class(&l.kind).to_string(),
                weights.get(&l.name).map(|w| w.join(";")).unwrap_or_default(),
            )
        })
        .collect()
}

fn assert_matches_keras(family: ModelFamily, file: &str) {
    let handle = build(family);
    let ours = rendered_backbone(&handle);
    let keras = fixture(file);
    assert_eq!(ours.len(), keras.len(), "layer count");
    assert_eq!(Some(ours.len()), backbone_depth(family));
    for (i, (a, b)) in ours.iter().zip(&keras).enumerate() {
        assert_eq!(a, b, "layer {i}");
    }
}

#[test]
fn inception_v3_matches_keras_layer_list() {
    assert_matches_keras(ModelFamily::InceptionV3Bilstm, "keras_inception_v3_layers.txt");
}

#[test]
fn mobilenet_v2_matches_keras_layer_list() {
    assert_matches_keras(ModelFamily::MobileNetV2Bilstm, "keras_mobilenet_v2_layers.txt");
}

#[test]
fn cnn3d_layer_sequence() {
    let handle = build(ModelFamily::Cnn3d);
    let kinds: Vec<LayerKind> = handle.layers().into_iter().map(|l| l.kind).collect();
    let conv = |filters| LayerKind::Conv3d {
        filters,
        kernel: [3, 3, 3],
        strides: [1, 1, 1],
        padding: Padding::Same,
        activation: Activation::Relu,
        use_bias: true,
        l2: 0.01,
    };
    let pool = LayerKind::Pool3d {
        op: vidbench::nn::layers::PoolOp::Max,
        pool: [2, 2, 2],
        strides: [2, 2, 2],
        padding: Padding::Valid,
    };
    let bn = LayerKind::BatchNorm {
        epsilon: 1e-3,
        momentum: 0.99,
        scale: true,
        center: true,
    };
    let expected = vec![
        conv(32),
        pool.clone(),
        bn.clone(),
        conv(64),
        pool,
        bn,
        LayerKind::Flatten,
        LayerKind::Dense {
            units: 256,
            activation: Activation::Relu,
            l2: 0.01,
        },
        LayerKind::Dropout { rate: 0.5 },
        LayerKind::Dense {
            units: 2,
            activation: Activation::Softmax,
            l2: 0.0,
        },
    ];
    assert_eq!(kinds, expected);
    assert_eq!(handle.dropout_rate(), Some(0.5));
    assert!(handle.trainable_parameter_count <= handle.parameter_count);
}

#[test]
fn cnn2d_bilstm_structure() {
    let handle = build(ModelFamily::Cnn2dBilstm);
    let layers = handle.layers();
    let filters: Vec<usize> = layers
        .iter()
        .filter_map(|l| match l.kind {
            LayerKind::Conv2d { filters, .. } => Some(filters),
            _ => None,
        })
        .collect();
    assert_eq!(filters, vec![64, 128]);
    let types: Vec<&str> = layers.iter().map(|l| l.kind.type_name()).collect();
    assert_eq!(
        types,
        [
            "fold_time",
            "conv2d",
            "batch_norm",
            "max_pool2d",
            "conv2d",
            "batch_norm",
            "max_pool2d",
            "flatten",
            "unfold_time",
            "bilstm",
            "dropout",
            "dense",
            "dropout",
            "dense"
        ]
    );
    let lstm = layers.iter().position(|l| l.kind.type_name() == "bilstm").unwrap();
    // The recurrent layer sees one step per frame.
    assert_eq!(layers[lstm - 1].output_shape[1], 15);
    assert_eq!(layers[lstm].output_shape, vec![1, 128]);
}

#[test]
fn hybrid_heads_are_identical() {
    let head = |family| -> Vec<(LayerKind, Vec<usize>)> {
        build(family)
            .layers()
            .into_iter()
            .filter(|l| l.group == LayerGroup::Head)
            .map(|l| (l.kind, l.output_shape))
            .collect()
    };
    let inception = head(ModelFamily::InceptionV3Bilstm);
    let mobilenet = head(ModelFamily::MobileNetV2Bilstm);
    // Only the BiLSTM input width differs (2048 vs 1280 features); kinds and outputs agree.
    assert_eq!(inception, mobilenet);
    let cnn2d: Vec<_> = head(ModelFamily::Cnn2dBilstm)
        .into_iter()
        .skip_while(|(k, _)| k.type_name() != "bilstm")
        .collect();
    assert_eq!(cnn2d, inception);
}

#[test]
fn every_family_outputs_probability_rows() {
    for family in ModelFamily::ALL {
        let handle = build(family);
        let mut x = random_batch(2, 3);
        // Second sample identical to the first.
        let len = x.sample_len();
        let first = x.sample(0).to_vec();
        x.data_mut()[len..].copy_from_slice(&first);
        let y = handle.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2], "{family}");
        for row in y.data().chunks(2) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5, "{family}: {row:?}");
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        assert_eq!(y.data()[..2], y.data()[2..], "{family}: identical inputs");
        let again = handle.forward(&x).unwrap();
        assert_eq!(y.data(), again.data(), "{family}: eval forward is pure");
    }
}

#[test]
fn all_zero_input_gives_a_valid_row() {
    let handle = build(ModelFamily::Cnn3d);
    let mut shape = vec![1];
    shape.extend(SEQUENCE_SHAPE);
    let y = handle.forward(&Tensor::zeros(&shape)).unwrap();
    assert!((y.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);
}

#[test]
fn wrong_input_shape_names_both_shapes() {
    let handle = build(ModelFamily::Cnn3d);
    let err = handle.forward(&Tensor::zeros(&[1, 15, 64, 64, 3])).unwrap_err();
    match &err {
        Error::Shape { expected, received, .. } => {
            assert_eq!(expected, &vec![1, 15, 100, 100, 3]);
            assert_eq!(received, &vec![1, 15, 64, 64, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("100"));
}

#[test]
fn builders_reject_other_families() {
    let opts = random_options(1);
    let spec = ModelSpec::new(ModelFamily::Cnn2dBilstm);
    assert!(matches!(build_cnn3d(&spec, &opts), Err(Error::Spec(_))));
    assert!(matches!(build_backbone_bilstm(&spec, &opts), Err(Error::Spec(_))));
    assert!(matches!(
        build_cnn2d_bilstm(&ModelSpec::new(ModelFamily::Cnn3d), &opts),
        Err(Error::Spec(_))
    ));
}

#[test]
fn spec_validation() {
    let mut spec = ModelSpec::new(ModelFamily::MobileNetV2Bilstm);
    spec.trainable_tail_layers = 154;
    assert!(matches!(spec.validate(), Err(Error::Spec(_))));
    spec.trainable_tail_layers = 153;
    spec.validate().unwrap();
    spec.dropout_rate = 1.5;
    assert!(spec.validate().is_err());
    let mut spec = ModelSpec::new(ModelFamily::Cnn3d);
    spec.num_classes = 3;
    assert!(spec.validate().is_err());
}

#[test]
fn spec_json_round_trip() {
    let spec = ModelSpec::new(ModelFamily::InceptionV3Bilstm);
    let json = serde_json::to_value(&spec).unwrap();
    assert_eq!(json["family"], "inceptionv3_bilstm");
    for key in [
        "num_classes",
        "trainable_tail_layers",
        "recurrent_units",
        "dense_units",
        "dropout_rate",
        "l2_strength",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
    let back: ModelSpec = serde_json::from_value(json).unwrap();
    assert_eq!(back, spec);
    assert_eq!("MobileNetV2_BiLSTM".parse::<ModelFamily>().unwrap(), ModelFamily::MobileNetV2Bilstm);
}

fn trainable_flags(handle: &ModelHandle) -> Vec<bool> {
    handle.backbone_layers().iter().map(|l| l.trainable).collect()
}

#[test]
fn exactly_the_last_tail_layers_train() {
    for family in [ModelFamily::InceptionV3Bilstm, ModelFamily::MobileNetV2Bilstm] {
        let depth = backbone_depth(family).unwrap();
        let handle = build(family);
        let flags = trainable_flags(&handle);
        assert_eq!(flags.len(), depth);
        for (i, t) in flags.iter().enumerate() {
            assert_eq!(*t, i >= depth - 80, "{family} layer {i}");
        }
        assert!(handle
            .layers()
            .iter()
            .filter(|l| l.group != LayerGroup::Backbone)
            .all(|l| l.trainable));

        let mut spec = ModelSpec::new(family);
        spec.trainable_tail_layers = 0;
        let frozen = build_model(&spec, &random_options(7)).unwrap();
        assert!(trainable_flags(&frozen).iter().all(|t| !t));
        let head: usize = frozen
            .layers()
            .iter()
            .filter(|l| l.group == LayerGroup::Head)
            .map(|l| l.param_count)
            .sum();
        assert_eq!(frozen.trainable_parameter_count, head);
        assert!(handle.trainable_parameter_count > frozen.trainable_parameter_count);
    }
}

fn snapshot(handle: &ModelHandle) -> Vec<(String, Vec<f32>, bool)> {
    handle.with_graph(|g| {
        g.named_params()
            .into_iter()
            .map(|(n, p, t)| (n, p.value.data().to_vec(), t))
            .collect()
    })
}

#[test]
fn one_step_moves_only_trainable_weights() {
    let mut handle = build(ModelFamily::MobileNetV2Bilstm);
    let before = snapshot(&handle);
    let x = random_batch(2, 11);
    let graph = handle.graph_mut();
    graph.zero_grads();
    graph.forward_backward(&x, &[0, 1]).unwrap();
    // Gradient norm per trainable layer.
    let mut norms: BTreeMap<String, f64> = BTreeMap::new();
    for (name, p, trainable) in graph.named_params() {
        if trainable {
            let layer = name.split_once('/').unwrap().0.to_string();
            *norms.entry(layer).or_default() += p.grad.sum_squares();
        }
    }
    for (layer, norm) in &norms {
        assert!(*norm > 0.0, "{layer} has zero gradient");
    }
    Optimizer::rmsprop().step(graph, 1e-3);
    let after = snapshot(&handle);
    let frozen_layers: std::collections::HashSet<String> = handle
        .layers()
        .into_iter()
        .filter(|l| !l.trainable)
        .map(|l| l.name)
        .collect();
    let mut moved = 0;
    for ((name, a, trainable), (_, b, _)) in before.iter().zip(&after) {
        let layer = name.split_once('/').unwrap().0;
        if frozen_layers.contains(layer) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "{name} changed"
            );
        } else if *trainable && a != b {
            moved += 1;
        }
    }
    assert!(moved > 0);
}

#[test]
fn missing_weights_error_and_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(ModelFamily::MobileNetV2Bilstm);
    let strict = BuildOptions {
        seed: 1,
        weights_dir: dir.path().to_path_buf(),
        allow_random_init: false,
    };
    match build_backbone_bilstm(&spec, &strict) {
        Err(Error::WeightsMissing { path }) => {
            assert!(path.ends_with(weights_file_name(ModelFamily::MobileNetV2Bilstm).unwrap()))
        }
        other => panic!("unexpected {other:?}"),
    }
    let lenient = BuildOptions {
        allow_random_init: true,
        ..strict
    };
    let handle = build_backbone_bilstm(&spec, &lenient).unwrap();
    assert_eq!(handle.weights_origin, WeightsOrigin::RandomFallback);
}

#[test]
fn backbone_weights_load_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(ModelFamily::MobileNetV2Bilstm);
    // A differently seeded model plays the role of exported pretrained weights.
    let donor = build_model(&spec, &random_options(99)).unwrap();
    let file = dir.path().join(weights_file_name(spec.family).unwrap());
    donor.with_graph(|g| vidbench::nn::io::save_weights(g, &file)).unwrap();
    let opts = BuildOptions {
        seed: 1,
        weights_dir: dir.path().to_path_buf(),
        allow_random_init: false,
    };
    let handle = build_backbone_bilstm(&spec, &opts).unwrap();
    assert!(matches!(handle.weights_origin, WeightsOrigin::Pretrained { .. }));
    let backbone: std::collections::HashSet<String> =
        handle.backbone_layers().into_iter().map(|l| l.name).collect();
    for ((name, a, _), (_, b, _)) in snapshot(&handle).iter().zip(&snapshot(&donor)) {
        let layer = name.split_once('/').unwrap().0;
        if backbone.contains(layer) {
            assert_eq!(a, b, "{name} not loaded");
        } else if name.ends_with("kernel") {
            assert_ne!(a, b, "{name} is head and should keep its own init");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let handle = build(ModelFamily::Cnn2dBilstm);
    handle.save_checkpoint(dir.path()).unwrap();
    assert!(dir.path().join("spec.json").exists());
    let restored = load_checkpoint(dir.path()).unwrap();
    assert_eq!(restored.spec, handle.spec);
    let x = random_batch(1, 5);
    assert_eq!(handle.forward(&x).unwrap().data(), restored.forward(&x).unwrap().data());
}

/// Compare against checkpoints produced by `scripts/export_keras_backbone.py
/// --reference DIR`; skipped unless VIDBENCH_KERAS_REFERENCE points at DIR.
#[test]
fn matches_keras_reference_outputs() {
    let Some(root) = std::env::var_os("VIDBENCH_KERAS_REFERENCE") else {
        eprintln!("VIDBENCH_KERAS_REFERENCE not set; skipping");
        return;
    };
    for key in ["mobilenetv2", "inceptionv3"] {
        let dir = std::path::Path::new(&root).join(key);
        let handle = load_checkpoint(&dir).unwrap();
        let raw = std::fs::read(dir.join("probe.safetensors")).unwrap();
        let probe = safetensors::SafeTensors::deserialize(&raw).unwrap();
        let tensor = |name: &str| {
            let view = probe.tensor(name).unwrap();
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::new(view.shape().to_vec(), data).unwrap()
        };
        let ours = handle.forward(&tensor("input")).unwrap();
        let keras = tensor("output");
        for (a, b) in ours.data().iter().zip(keras.data()) {
            assert!((a - b).abs() < 1e-4, "{key}: ours {:?} keras {:?}", ours.data(), keras.data());
        }
        eprintln!("{key}: ours {:?} keras {:?}", ours.data(), keras.data());
    }
}
