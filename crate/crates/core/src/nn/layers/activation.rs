use super::{missing_cache, single_input, Activation, Layer, LayerKind, Need, Pass};
use crate::error::Result;
use crate::nn::tensor::Tensor;

/// Apply `act` in place; softmax normalizes over the trailing axis.
pub(crate) fn activate(act: Activation, values: &mut [f32], row: usize) {
    match act {
        Activation::Linear => {}
        Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Relu6 => values.iter_mut().for_each(|v| *v = v.clamp(0.0, 6.0)),
        Activation::Softmax => {
            for chunk in values.chunks_mut(row) {
                let max = chunk.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f32;
                for v in chunk.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                chunk.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
}

/// Turn `grad` (w.r.t. the activated output `out`) into a gradient w.r.t. the pre-activation.
pub(crate) fn activation_backward(act: Activation, out: &[f32], grad: &mut [f32], row: usize) {
    match act {
        Activation::Linear => {}
        Activation::Relu => {
            for (g, &y) in grad.iter_mut().zip(out) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Relu6 => {
            for (g, &y) in grad.iter_mut().zip(out) {
                if y <= 0.0 || y >= 6.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Softmax => {
            for (gchunk, ychunk) in grad.chunks_mut(row).zip(out.chunks(row)) {
                let dot: f32 = gchunk.iter().zip(ychunk).map(|(g, y)| g * y).sum();
                for (g, &y) in gchunk.iter_mut().zip(ychunk) {
                    *g = y * (*g - dot);
                }
            }
        }
    }
}

pub struct ActivationLayer {
    activation: Activation,
    output: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            output: None,
        }
    }
}

impl Layer for ActivationLayer {
    fn kind(&self) -> LayerKind {
        LayerKind::Activation {
            activation: self.activation,
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        Ok(single_input(inputs, "activation")?.to_vec())
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let mut out = inputs[0].clone();
        let row = out.channels();
        activate(self.activation, out.data_mut(), row);
        self.output = pass.record.then(|| out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let out = self.output.as_ref().ok_or_else(|| missing_cache("activation"))?;
        let mut g = grad.clone();
        let row = g.channels();
        activation_backward(self.activation, out.data(), g.data_mut(), row);
        Ok(vec![g])
    }

    fn clear_cache(&mut self) {
        self.output = None;
    }
}
