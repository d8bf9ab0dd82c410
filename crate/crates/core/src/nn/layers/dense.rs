use rand_chacha::ChaCha8Rng;

use super::activation::{activate, activation_backward};
use super::{expect_rank, missing_cache, single_input, Activation, Layer, LayerKind, Need, Param, Pass};
use crate::error::{Error, Result};
use crate::nn::gemm::gemm;
use crate::nn::init::glorot_uniform;
use crate::nn::tensor::Tensor;

/// Fully-connected layer over `[n, features]` inputs.
pub struct Dense {
    in_features: usize,
    units: usize,
    activation: Activation,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
    output: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        let values = glorot_uniform(rng, in_features, units, in_features * units);
        Self {
            in_features,
            units,
            activation: Activation::Linear,
            weight: Param::weight("kernel", Tensor::new(vec![in_features, units], values).expect("kernel shape")),
            bias: Param::weight("bias", Tensor::zeros(&[units])),
            input: None,
            output: None,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_l2(mut self, l2: f32) -> Self {
        self.weight.l2 = l2;
        self
    }
}

impl Layer for Dense {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense {
            units: self.units,
            activation: self.activation,
            l2: self.weight.l2,
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "dense")?;
        expect_rank(shape, 2, "dense")?;
        if shape[1] != self.in_features {
            return Err(Error::shape("dense input features", &[shape[0], self.in_features], shape));
        }
        Ok(vec![shape[0], self.units])
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        let shape = self.output_shape(&[x.shape()])?;
        let n = shape[0];
        let mut out = Tensor::zeros(&shape);
        for row in out.data_mut().chunks_mut(self.units) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, self.units, self.in_features, x.data(), false, self.weight.value.data(), false, 1.0, out.data_mut());
        activate(self.activation, out.data_mut(), self.units);
        if pass.record {
            self.input = Some(x.clone());
            self.output = Some(out.clone());
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let out = self.output.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let n = x.batch();
        let mut dz = grad.clone();
        if !(need.logits && self.activation == Activation::Softmax) {
            activation_backward(self.activation, out.data(), dz.data_mut(), self.units);
        }
        if need.param_grads {
            gemm(self.in_features, self.units, n, x.data(), true, dz.data(), false, 1.0, self.weight.grad.data_mut());
            for row in dz.data().chunks(self.units) {
                self.bias.grad.data_mut().iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
        }
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, self.in_features, self.units, dz.data(), false, self.weight.value.data(), true, 0.0, dx.data_mut());
        Ok(vec![dx])
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.input = None;
        self.output = None;
    }
}
