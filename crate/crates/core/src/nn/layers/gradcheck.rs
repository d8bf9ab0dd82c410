//! Finite-difference checks of every layer's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn weights(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i * 37 % 17) as f32 - 8.0) / 9.0).collect()
}

fn loss(layer: &mut dyn Layer, inputs: &[Tensor], pass: Pass) -> f64 {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let y = layer.forward(&refs, Pass { record: false, ..pass }).unwrap();
    let w = weights(y.len());
    y.data().iter().zip(&w).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
}

/// Compare analytic input and parameter gradients against central differences
/// of `sum(w * layer(x))` on a handful of coordinates.
fn check(mut layer: impl Layer, shapes: &[&[usize]], training: bool, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            Tensor::new(s.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    let pass = Pass {
        training,
        record: true,
        trainable: true,
    };
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let y = layer.forward(&refs, pass).unwrap();
    let g = Tensor::new(y.shape().to_vec(), weights(y.len())).unwrap();
    let need = Need {
        input_grads: true,
        param_grads: true,
        logits: false,
    };
    let dx = layer.backward(&g, need).unwrap();
    let eps = 1e-2f32;
    for (k, input) in inputs.iter().enumerate() {
        for _ in 0..12 {
            let i = rng.gen_range(0..input.len());
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= eps;
            let num = (loss(&mut layer, &plus, pass) - loss(&mut layer, &minus, pass)) / (2.0 * eps as f64);
            let ana = dx[k].data()[i] as f64;
            assert!((num - ana).abs() < tol * (1.0 + num.abs()), "{:?} input {k}[{i}]: {num} vs {ana}", layer.kind());
        }
    }
    let grads: Vec<Vec<f32>> = layer.params().iter().map(|p| p.grad.data().to_vec()).collect();
    for (p, grad) in grads.iter().enumerate() {
        if !layer.params()[p].is_weight() {
            continue;
        }
        for _ in 0..8 {
            let i = rng.gen_range(0..grad.len());
            let orig = layer.params()[p].value.data()[i];
            layer.params_mut()[p].value.data_mut()[i] = orig + eps;
            let lp = loss(&mut layer, &inputs, pass);
            layer.params_mut()[p].value.data_mut()[i] = orig - eps;
            let lm = loss(&mut layer, &inputs, pass);
            layer.params_mut()[p].value.data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * eps as f64);
            let ana = grad[i] as f64;
            assert!((num - ana).abs() < tol * (1.0 + num.abs()), "{:?} param {p}[{i}]: {num} vs {ana}", layer.kind());
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(4)
}

#[test]
fn conv2d_same_strided() {
    let layer = Conv2d::new(3, 4, [3, 3], &mut rng()).with_strides([2, 2]);
    check(layer, &[&[2, 7, 6, 3]], false, 1e-2);
}

#[test]
fn conv2d_valid_relu_no_bias() {
    let layer = Conv2d::new(2, 3, [3, 1], &mut rng())
        .with_padding(Padding::Valid)
        .with_activation(Activation::Relu)
        .without_bias();
    check(layer, &[&[2, 5, 4, 2]], false, 1e-2);
}

#[test]
fn conv2d_pointwise() {
    check(Conv2d::new(3, 5, [1, 1], &mut rng()), &[&[2, 3, 3, 3]], false, 1e-2);
}

#[test]
fn conv3d_same() {
    // Linear activation: ReLU kinks make central differences unreliable here.
    check(Conv3d::new(2, 3, [3, 3, 3], &mut rng()), &[&[1, 4, 5, 5, 2]], false, 1e-2);
    check(
        Conv3d::new(2, 2, [2, 3, 3], &mut rng()).with_strides([2, 1, 2]).with_padding(Padding::Valid),
        &[&[2, 5, 4, 5, 2]],
        false,
        1e-2,
    );
}

#[test]
fn depthwise_strided_valid() {
    let layer = DepthwiseConv2d::new(3, [3, 3], &mut rng())
        .with_strides([2, 2])
        .with_padding(Padding::Valid);
    check(layer, &[&[2, 7, 7, 3]], false, 1e-2);
}

#[test]
fn depthwise_same_with_bias() {
    check(DepthwiseConv2d::new(2, [3, 3], &mut rng()).with_bias(), &[&[1, 5, 4, 2]], false, 1e-2);
}

#[test]
fn batch_norm_training() {
    check(BatchNorm::new(3), &[&[4, 3, 2, 3]], true, 2e-2);
}

#[test]
fn batch_norm_inference_without_scale() {
    check(BatchNorm::new(3).without_scale(), &[&[2, 2, 2, 3]], false, 1e-2);
}

#[test]
fn pools() {
    check(Pool::avg2d([3, 3], [1, 1], Padding::Same), &[&[2, 5, 5, 2]], false, 1e-2);
    check(Pool::avg2d([3, 3], [2, 2], Padding::Valid), &[&[1, 7, 7, 2]], false, 1e-2);
    check(GlobalAvgPool2d::new(), &[&[2, 3, 4, 3]], false, 1e-2);
}

#[test]
fn activations_dense_and_plumbing() {
    check(ActivationLayer::new(Activation::Softmax), &[&[3, 4]], false, 1e-2);
    check(ActivationLayer::new(Activation::Relu6), &[&[3, 4]], false, 1e-2);
    check(Dense::new(5, 3, &mut rng()).with_activation(Activation::Softmax), &[&[2, 5]], false, 1e-2);
    check(Concat::new(), &[&[2, 3, 2], &[2, 3, 4]], false, 1e-2);
    check(Add::new(), &[&[2, 3], &[2, 3]], false, 1e-2);
    check(ZeroPad2d::new([0, 1, 1, 1]), &[&[2, 3, 3, 2]], false, 1e-2);
    check(Flatten::new(), &[&[2, 3, 3, 2]], false, 1e-2);
    check(FoldTime::new(3), &[&[2, 3, 2, 2, 1]], false, 1e-2);
    check(Rescale::new(2.0, -1.0), &[&[2, 3]], false, 1e-2);
}
