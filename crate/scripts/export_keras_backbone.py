#!/usr/bin/env python3
"""Export Keras ImageNet backbone weights to the safetensors layout vidbench loads.

    python scripts/export_keras_backbone.py --out weights/

writes inception_v3_notop.safetensors and mobilenet_v2_1.0_notop.safetensors,
keyed "<layer>/<weight>" (e.g. "block_3_expand/kernel").

With --reference DIR it instead builds a randomly initialised hybrid model
(backbone per frame, average pool, BiLSTM head), and writes a vidbench
checkpoint plus a probe input and the Keras output, for numerical
cross-checks of the Rust implementation.
"""

import argparse
import json
import os

import numpy as np
from safetensors.numpy import save_file

BACKBONES = {
    "inceptionv3": ("InceptionV3", "inception_v3_notop.safetensors", "inceptionv3_bilstm"),
    "mobilenetv2": ("MobileNetV2", "mobilenet_v2_1.0_notop.safetensors", "mobilenetv2_bilstm"),
}


def layer_weights(layer):
    return {f"{layer.name}/{w.path.split('/')[-1]}": np.asarray(w.numpy(), dtype=np.float32) for w in layer.weights}


def backbone(keras, key, weights, pooling=None):
    cls = getattr(keras.applications, BACKBONES[key][0])
    return cls(weights=weights, include_top=False, input_shape=(100, 100, 3), pooling=pooling)


def export(keras, key, out_dir):
    model = backbone(keras, key, "imagenet")
    tensors = {}
    for layer in model.layers:
        tensors.update(layer_weights(layer))
    path = os.path.join(out_dir, BACKBONES[key][1])
    save_file(tensors, path)
    print(f"{path}: {len(model.layers) - 1} layers, {len(tensors)} tensors")


def lstm_weights(bidirectional):
    out = {}
    for direction, layer in (("forward", bidirectional.forward_layer), ("backward", bidirectional.backward_layer)):
        kernel, recurrent, bias = (np.asarray(w.numpy(), dtype=np.float32) for w in layer.weights)
        out[f"{bidirectional.name}/{direction}_kernel"] = kernel
        out[f"{bidirectional.name}/{direction}_recurrent_kernel"] = recurrent
        out[f"{bidirectional.name}/{direction}_bias"] = bias
    return out


def reference(keras, key, out_dir, seed):
    keras.utils.set_random_seed(seed)
    rng = np.random.default_rng(seed)
    # Pool inside the backbone: TimeDistributed(GlobalAveragePooling2D) is
    # unreliable on 1x1 feature maps (InceptionV3 at 100x100).
    base = backbone(keras, key, None, pooling="avg")
    # Non-trivial inference statistics so batch norm is exercised.
    for layer in base.layers:
        if isinstance(layer, keras.layers.BatchNormalization):
            c = layer.moving_mean.shape[0]
            layer.moving_mean.assign(rng.normal(0, 0.1, c).astype(np.float32))
            layer.moving_variance.assign(rng.uniform(0.5, 1.5, c).astype(np.float32))
            if layer.beta is not None:
                layer.beta.assign(rng.normal(0, 0.1, c).astype(np.float32))
            if layer.gamma is not None:
                layer.gamma.assign(rng.uniform(0.8, 1.2, c).astype(np.float32))

    L = keras.layers
    inp = keras.Input((15, 100, 100, 3))
    x = L.Rescaling(2.0, offset=-1.0)(inp)
    x = L.TimeDistributed(base)(x)
    lstm = L.Bidirectional(L.LSTM(64), name="bidirectional")
    x = lstm(x)
    x = L.Dropout(0.5, name="dropout")(x)
    dense = L.Dense(128, activation="relu", name="dense")
    x = dense(x)
    x = L.Dropout(0.5, name="dropout_1")(x)
    out_layer = L.Dense(2, activation="softmax", name="dense_1")
    out = out_layer(x)
    model = keras.Model(inp, out)

    tensors = {}
    for layer in base.layers:
        tensors.update(layer_weights(layer))
    tensors.update(lstm_weights(lstm))
    tensors.update(layer_weights(dense))
    tensors.update(layer_weights(out_layer))

    probe = rng.uniform(0, 1, (2, 15, 100, 100, 3)).astype(np.float32)
    probs = model.predict(probe, verbose=0).astype(np.float32)

    os.makedirs(out_dir, exist_ok=True)
    save_file(tensors, os.path.join(out_dir, "weights.safetensors"))
    save_file({"input": probe, "output": probs}, os.path.join(out_dir, "probe.safetensors"))
    spec = {
        "family": BACKBONES[key][2],
        "num_classes": 2,
        "trainable_tail_layers": 0,
        "recurrent_units": 64,
        "dense_units": [128],
        "dropout_rate": 0.5,
        "l2_strength": 0.0,
    }
    with open(os.path.join(out_dir, "spec.json"), "w") as f:
        json.dump(spec, f, indent=2)
    print(f"{out_dir}: {len(tensors)} tensors, output {probs.tolist()}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="weights")
    ap.add_argument("--backbone", choices=sorted(BACKBONES), action="append")
    ap.add_argument("--reference", metavar="DIR", help="write a random-init reference checkpoint instead")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    import keras

    keys = args.backbone or sorted(BACKBONES)
    if args.reference:
        for key in keys:
            reference(keras, key, os.path.join(args.reference, key), args.seed)
        return
    os.makedirs(args.out, exist_ok=True)
    for key in keys:
        export(keras, key, args.out)


if __name__ == "__main__":
    main()
