use super::{missing_cache, single_input, Layer, LayerKind, Need, Param, Pass};
use crate::error::Result;
use crate::nn::tensor::Tensor;

/// Batch normalization over the trailing (channel) axis.
///
/// Trainable layers in a training pass normalize with batch statistics and
/// update the moving averages; everything else uses the moving averages.
pub struct BatchNorm {
    channels: usize,
    epsilon: f32,
    momentum: f32,
    gamma: Option<Param>,
    beta: Option<Param>,
    moving_mean: Param,
    moving_variance: Param,
    cache: Option<Cache>,
}

struct Cache {
    normalized: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            epsilon: 1e-3,
            momentum: 0.99,
            gamma: Some(Param::weight("gamma", Tensor::filled(&[channels], 1.0))),
            beta: Some(Param::weight("beta", Tensor::zeros(&[channels]))),
            moving_mean: Param::statistic("moving_mean", Tensor::zeros(&[channels])),
            moving_variance: Param::statistic("moving_variance", Tensor::filled(&[channels], 1.0)),
            cache: None,
        }
    }

    pub fn with_momentum(mut self, momentum: f32) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f32) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Drop the learned scale (gamma fixed at one).
    pub fn without_scale(mut self) -> Self {
        self.gamma = None;
        self
    }

    fn gamma(&self, c: usize) -> f32 {
        self.gamma.as_ref().map_or(1.0, |g| g.value.data()[c])
    }

    fn beta(&self, c: usize) -> f32 {
        self.beta.as_ref().map_or(0.0, |b| b.value.data()[c])
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm {
            epsilon: self.epsilon,
            momentum: self.momentum,
            scale: self.gamma.is_some(),
            center: self.beta.is_some(),
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "batch_norm")?;
        if shape.last() != Some(&self.channels) {
            let mut expected = shape.to_vec();
            if let Some(last) = expected.last_mut() {
                *last = self.channels;
            }
            return Err(crate::error::Error::shape("batch_norm channels", &expected, shape));
        }
        Ok(shape.to_vec())
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        self.output_shape(&[x.shape()])?;
        let c = self.channels;
        let rows = x.len() / c;
        let batch_stats = pass.training && pass.trainable;

        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0f64; c];
            for row in x.data().chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += f64::from(v));
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut sq = vec![0.0f64; c];
            for row in x.data().chunks_exact(c) {
                for ((s, &v), &m) in sq.iter_mut().zip(row).zip(&mean) {
                    let d = f64::from(v) - m;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
            let m = self.momentum;
            for ch in 0..c {
                let mm = &mut self.moving_mean.value.data_mut()[ch];
                *mm = *mm * m + mean[ch] as f32 * (1.0 - m);
                let mv = &mut self.moving_variance.value.data_mut()[ch];
                *mv = *mv * m + var[ch] as f32 * (1.0 - m);
            }
            (
                mean.iter().map(|&v| v as f32).collect::<Vec<_>>(),
                var.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            )
        } else {
            (
                self.moving_mean.value.data().to_vec(),
                self.moving_variance.value.data().to_vec(),
            )
        };

        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        // y = x * a + b, folding the normalization into one affine map
        let a: Vec<f32> = (0..c).map(|ch| self.gamma(ch) * inv_std[ch]).collect();
        let b: Vec<f32> = (0..c).map(|ch| self.beta(ch) - mean[ch] * a[ch]).collect();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ((v, &a), &b) in row.iter_mut().zip(&a).zip(&b) {
                *v = *v * a + b;
            }
        }
        self.cache = pass.record.then(|| {
            let mut normalized = x.clone();
            for row in normalized.data_mut().chunks_exact_mut(c) {
                for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                    *v = (*v - m) * s;
                }
            }
            Cache {
                normalized,
                inv_std,
                batch_stats,
            }
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batch_norm"))?;
        let c = self.channels;
        let rows = grad.len() / c;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (grow, xrow) in grad.data().chunks_exact(c).zip(cache.normalized.data().chunks_exact(c)) {
            for (((sg, sgx), &g), &x) in sum_g.iter_mut().zip(sum_gx.iter_mut()).zip(grow).zip(xrow) {
                *sg += f64::from(g);
                *sgx += f64::from(g) * f64::from(x);
            }
        }
        if need.param_grads {
            if let Some(b) = &mut self.beta {
                b.grad.data_mut().iter_mut().zip(&sum_g).for_each(|(g, s)| *g += *s as f32);
            }
            if let Some(gm) = &mut self.gamma {
                gm.grad.data_mut().iter_mut().zip(&sum_gx).for_each(|(g, s)| *g += *s as f32);
            }
        }
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let scale: Vec<f32> = (0..c).map(|ch| self.gamma(ch) * cache.inv_std[ch]).collect();
        let mut dx = grad.clone();
        if cache.batch_stats {
            let m = rows as f64;
            let mean_g: Vec<f32> = sum_g.iter().map(|s| (s / m) as f32).collect();
            let mean_gx: Vec<f32> = sum_gx.iter().map(|s| (s / m) as f32).collect();
            for (drow, xrow) in dx.data_mut().chunks_exact_mut(c).zip(cache.normalized.data().chunks_exact(c)) {
                for ((((d, &x), &s), &mg), &mgx) in drow.iter_mut().zip(xrow).zip(&scale).zip(&mean_g).zip(&mean_gx) {
                    *d = s * (*d - mg - x * mgx);
                }
            }
        } else {
            for drow in dx.data_mut().chunks_exact_mut(c) {
                drow.iter_mut().zip(&scale).for_each(|(d, &s)| *d *= s);
            }
        }
        Ok(vec![dx])
    }

    fn params(&self) -> Vec<&Param> {
        self.gamma
            .iter()
            .chain(self.beta.iter())
            .chain([&self.moving_mean, &self.moving_variance])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.gamma
            .iter_mut()
            .chain(self.beta.iter_mut())
            .chain([&mut self.moving_mean, &mut self.moving_variance])
            .collect()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_pass_normalizes_each_channel() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::new(vec![4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let pass = Pass {
            training: true,
            record: false,
            trainable: true,
        };
        let y = bn.forward(&[&x], pass).unwrap();
        for ch in 0..2 {
            let col: Vec<f32> = y.data().iter().skip(ch).step_by(2).copied().collect();
            let mean: f32 = col.iter().sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-5);
        }
        // moving averages moved toward the batch statistics
        assert!(bn.moving_mean.value.data()[0] > 0.0);
    }

    #[test]
    fn frozen_layer_leaves_statistics_untouched() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![3, 1], vec![5.0, 6.0, 7.0]).unwrap();
        let pass = Pass {
            training: true,
            record: false,
            trainable: false,
        };
        let before = bn.moving_mean.value.clone();
        bn.forward(&[&x], pass).unwrap();
        assert_eq!(bn.moving_mean.value, before);
    }
}
