use rand_chacha::ChaCha8Rng;

use super::{conv_geometry, expect_rank, missing_cache, single_input, Layer, LayerKind, Need, Padding, Param, Pass};
use crate::error::Result;
use crate::nn::init::glorot_uniform;
use crate::nn::tensor::Tensor;

/// Per-channel 2D convolution (depth multiplier 1), kernel shaped `[kh, kw, c, 1]`.
pub struct DepthwiseConv2d {
    channels: usize,
    kernel: [usize; 2],
    strides: [usize; 2],
    padding: Padding,
    weight: Param,
    bias: Option<Param>,
    input: Option<Tensor>,
}

struct Plan {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    ph: usize,
    pw: usize,
}

impl DepthwiseConv2d {
    pub fn new(channels: usize, kernel: [usize; 2], rng: &mut ChaCha8Rng) -> Self {
        let taps = kernel[0] * kernel[1];
        let values = glorot_uniform(rng, taps * channels, taps, taps * channels);
        Self {
            channels,
            kernel,
            strides: [1, 1],
            padding: Padding::Same,
            weight: Param::weight(
                "kernel",
                Tensor::new(vec![kernel[0], kernel[1], channels, 1], values).expect("kernel shape"),
            ),
            bias: None,
            input: None,
        }
    }

    pub fn with_strides(mut self, strides: [usize; 2]) -> Self {
        self.strides = strides;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = Some(Param::weight("bias", Tensor::zeros(&[self.channels])));
        self
    }

    fn plan(&self, shape: &[usize]) -> Result<Plan> {
        expect_rank(shape, 4, "depthwise_conv2d")?;
        if shape[3] != self.channels {
            let mut expected = shape.to_vec();
            expected[3] = self.channels;
            return Err(crate::error::Error::shape("depthwise_conv2d channels", &expected, shape));
        }
        let (oh, ph) = conv_geometry(shape[1], self.kernel[0], self.strides[0], self.padding);
        let (ow, pw) = conv_geometry(shape[2], self.kernel[1], self.strides[1], self.padding);
        Ok(Plan {
            h: shape[1],
            w: shape[2],
            oh,
            ow,
            ph,
            pw,
        })
    }

    /// Visit every (output offset, input offset, kernel offset) triple, channel-vectorized.
    fn visit(&self, p: &Plan, mut f: impl FnMut(usize, usize, usize)) {
        let c = self.channels;
        for i in 0..p.oh {
            for j in 0..p.ow {
                let out = (i * p.ow + j) * c;
                for a in 0..self.kernel[0] {
                    let y = (i * self.strides[0] + a) as isize - p.ph as isize;
                    if y < 0 || y as usize >= p.h {
                        continue;
                    }
                    for b in 0..self.kernel[1] {
                        let x = (j * self.strides[1] + b) as isize - p.pw as isize;
                        if x < 0 || x as usize >= p.w {
                            continue;
                        }
                        f(out, (y as usize * p.w + x as usize) * c, (a * self.kernel[1] + b) * c);
                    }
                }
            }
        }
    }
}

impl Layer for DepthwiseConv2d {
    fn kind(&self) -> LayerKind {
        LayerKind::DepthwiseConv2d {
            kernel: self.kernel,
            strides: self.strides,
            padding: self.padding,
            use_bias: self.bias.is_some(),
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "depthwise_conv2d")?;
        let p = self.plan(shape)?;
        Ok(vec![shape[0], p.oh, p.ow, self.channels])
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        let p = self.plan(x.shape())?;
        let c = self.channels;
        let mut out = Tensor::zeros(&[x.batch(), p.oh, p.ow, c]);
        let out_len = p.oh * p.ow * c;
        let w = self.weight.value.data();
        for n in 0..x.batch() {
            let src = x.sample(n);
            let dst = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
            self.visit(&p, |o, i, k| {
                for ch in 0..c {
                    dst[o + ch] += src[i + ch] * w[k + ch];
                }
            });
        }
        if let Some(b) = &self.bias {
            for row in out.data_mut().chunks_mut(c) {
                row.iter_mut().zip(b.value.data()).for_each(|(v, b)| *v += b);
            }
        }
        self.input = pass.record.then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        let x = self.input.take().ok_or_else(|| missing_cache("depthwise_conv2d"))?;
        let p = self.plan(x.shape())?;
        let c = self.channels;
        let out_len = p.oh * p.ow * c;
        let in_len = x.sample_len();
        let mut dx = need.input_grads.then(|| Tensor::zeros(x.shape()));
        let mut dw = vec![0.0f32; self.weight.value.len()];
        let w = self.weight.value.data().to_vec();
        for n in 0..x.batch() {
            let src = x.sample(n);
            let dy = &grad.data()[n * out_len..(n + 1) * out_len];
            if need.param_grads {
                self.visit(&p, |o, i, k| {
                    for ch in 0..c {
                        dw[k + ch] += dy[o + ch] * src[i + ch];
                    }
                });
            }
            if let Some(dx) = dx.as_mut() {
                let dst = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
                self.visit(&p, |o, i, k| {
                    for ch in 0..c {
                        dst[i + ch] += dy[o + ch] * w[k + ch];
                    }
                });
            }
        }
        if need.param_grads {
            self.weight.grad.data_mut().iter_mut().zip(&dw).for_each(|(g, d)| *g += d);
            if let Some(b) = &mut self.bias {
                for row in grad.data().chunks(c) {
                    b.grad.data_mut().iter_mut().zip(row).for_each(|(g, v)| *g += v);
                }
            }
        }
        self.input = Some(x);
        Ok(dx.into_iter().collect())
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}
