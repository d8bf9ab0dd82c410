use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{missing_cache, single_input, Layer, LayerKind, Need, Pass};
use crate::error::Result;
use crate::nn::tensor::Tensor;

/// Inverted dropout: active only in training passes.
pub struct Dropout {
    rate: f32,
    rng: ChaCha8Rng,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }
}

impl Layer for Dropout {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout { rate: self.rate }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        Ok(single_input(inputs, "dropout")?.to_vec())
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        if !pass.training || self.rate <= 0.0 {
            self.mask = pass.record.then(|| vec![1.0; x.len()]);
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        let mask: Vec<f32> = (0..x.len())
            .map(|_| if self.rng.gen::<f32>() < keep { scale } else { 0.0 })
            .collect();
        let mut out = x.clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = pass.record.then_some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("dropout"))?;
        let mut g = grad.clone();
        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        Ok(vec![g])
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_is_identity_and_training_preserves_expectation() {
        let mut d = Dropout::new(0.5, 1);
        let x = Tensor::filled(&[1, 10_000], 1.0);
        let y = d.forward(&[&x], Pass::default()).unwrap();
        assert_eq!(y, x);
        let pass = Pass {
            training: true,
            record: false,
            trainable: true,
        };
        let y = d.forward(&[&x], pass).unwrap();
        let mean = y.data().iter().sum::<f32>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05);
        assert!(y.data().iter().any(|&v| v == 0.0));
    }
}
