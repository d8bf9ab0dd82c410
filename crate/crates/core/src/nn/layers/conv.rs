use rand_chacha::ChaCha8Rng;

use super::activation::{activate, activation_backward};
use super::{conv_geometry, missing_cache, single_input, Activation, Layer, LayerKind, Need, Padding, Param, Pass};
use crate::error::{Error, Result};
use crate::nn::gemm::gemm;
use crate::nn::init::glorot_uniform;
use crate::nn::tensor::Tensor;

/// Spatial geometry of one convolution call, always expressed in three
/// spatial axes (2D convolutions use a depth of one).
#[derive(Clone, Copy, Debug)]
struct Geometry {
    input: [usize; 3],
    output: [usize; 3],
    pad: [usize; 3],
    kernel: [usize; 3],
    strides: [usize; 3],
    channels: usize,
}

impl Geometry {
    fn new(input: [usize; 3], channels: usize, kernel: [usize; 3], strides: [usize; 3], padding: Padding) -> Self {
        let mut output = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            let (o, p) = conv_geometry(input[a], kernel[a], strides[a], padding);
            output[a] = o;
            pad[a] = p;
        }
        Self {
            input,
            output,
            pad,
            kernel,
            strides,
            channels,
        }
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.strides == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Calls `f(col_offset, input_offset, len)` for every contiguous run of
    /// one patch row: the in-bounds taps along the width axis are adjacent
    /// in memory, so each (output position, kd, kh) is at most three runs
    /// (zero padding, input, zero padding). `None` marks padding.
    fn for_each_run(&self, mut f: impl FnMut(usize, Option<usize>, usize)) {
        let c = self.channels;
        let kw = self.kernel[2];
        let row = kw * c;
        let mut col = 0;
        for od in 0..self.output[0] {
            for oh in 0..self.output[1] {
                for ow in 0..self.output[2] {
                    let w0 = (ow * self.strides[2]) as isize - self.pad[2] as isize;
                    let lo = (-w0).clamp(0, kw as isize) as usize;
                    let hi = (self.input[2] as isize - w0).clamp(lo as isize, kw as isize) as usize;
                    for kd in 0..self.kernel[0] {
                        let d = (od * self.strides[0] + kd) as isize - self.pad[0] as isize;
                        for kh in 0..self.kernel[1] {
                            let h = (oh * self.strides[1] + kh) as isize - self.pad[1] as isize;
                            let inside = d >= 0 && (d as usize) < self.input[0] && h >= 0 && (h as usize) < self.input[1];
                            if !inside || lo == hi {
                                f(col, None, row);
                            } else {
                                let start = ((d as usize * self.input[1] + h as usize) * self.input[2]) as isize + w0 + lo as isize;
                                if lo > 0 {
                                    f(col, None, lo * c);
                                }
                                f(col + lo * c, Some(start as usize * c), (hi - lo) * c);
                                if hi < kw {
                                    f(col + hi * c, None, (kw - hi) * c);
                                }
                            }
                            col += row;
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f32], col: &mut [f32]) {
        self.for_each_run(|dst, src, len| match src {
            Some(s) => col[dst..dst + len].copy_from_slice(&input[s..s + len]),
            None => col[dst..dst + len].fill(0.0),
        });
    }

    fn col2im(&self, col: &[f32], input_grad: &mut [f32]) {
        self.for_each_run(|dst, src, len| {
            if let Some(s) = src {
                for (g, v) in input_grad[s..s + len].iter_mut().zip(&col[dst..dst + len]) {
                    *g += *v;
                }
            }
        });
    }
}

/// Convolution over up to three spatial axes, lowered to im2col + GEMM.
struct ConvCore {
    rank: usize,
    filters: usize,
    in_channels: usize,
    kernel: [usize; 3],
    strides: [usize; 3],
    padding: Padding,
    activation: Activation,
    weight: Param,
    bias: Option<Param>,
    input: Option<Tensor>,
    output: Option<Tensor>,
}

impl ConvCore {
    fn new(rank: usize, in_channels: usize, filters: usize, kernel: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        let taps: usize = kernel.iter().product();
        let mut shape: Vec<usize> = kernel[3 - rank..].to_vec();
        shape.extend([in_channels, filters]);
        let values = glorot_uniform(rng, taps * in_channels, taps * filters, taps * in_channels * filters);
        let weight = Param::weight("kernel", Tensor::new(shape, values).expect("kernel shape"));
        Self {
            rank,
            filters,
            in_channels,
            kernel,
            strides: [1; 3],
            padding: Padding::Same,
            activation: Activation::Linear,
            weight,
            bias: Some(Param::weight("bias", Tensor::zeros(&[filters]))),
            input: None,
            output: None,
        }
    }

    /// Spatial dims of an input shape, padded to three axes.
    fn spatial(&self, shape: &[usize]) -> Result<[usize; 3]> {
        if shape.len() != self.rank + 2 {
            return Err(Error::Shape {
                context: format!("conv{}d input rank", self.rank),
                expected: vec![0; self.rank + 2],
                received: shape.to_vec(),
            });
        }
        if shape[self.rank + 1] != self.in_channels {
            let mut expected = shape.to_vec();
            expected[self.rank + 1] = self.in_channels;
            return Err(Error::shape(format!("conv{}d input channels", self.rank), &expected, shape));
        }
        let mut s = [1; 3];
        s[3 - self.rank..].copy_from_slice(&shape[1..=self.rank]);
        Ok(s)
    }

    fn geometry(&self, shape: &[usize]) -> Result<Geometry> {
        let g = Geometry::new(self.spatial(shape)?, self.in_channels, self.kernel, self.strides, self.padding);
        if g.positions() == 0 {
            return Err(Error::Shape {
                context: format!("conv{}d input smaller than its kernel", self.rank),
                expected: self.kernel.to_vec(),
                received: shape.to_vec(),
            });
        }
        Ok(g)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        let mut out = vec![input[0]];
        out.extend_from_slice(&g.output[3 - self.rank..]);
        out.push(self.filters);
        Ok(out)
    }

    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let out_shape = self.output_shape(x.shape())?;
        let (p, k, f) = (g.positions(), g.patch(), self.filters);
        let mut out = Tensor::zeros(&out_shape);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; p * k] };
        for n in 0..x.batch() {
            let dst = &mut out.data_mut()[n * p * f..(n + 1) * p * f];
            let src = x.sample(n);
            let lhs: &[f32] = if g.is_pointwise() {
                src
            } else {
                g.im2col(src, &mut col);
                &col
            };
            gemm(p, f, k, lhs, false, self.weight.value.data(), false, 0.0, dst);
        }
        if let Some(b) = &self.bias {
            for row in out.data_mut().chunks_mut(f) {
                row.iter_mut().zip(b.value.data()).for_each(|(v, b)| *v += b);
            }
        }
        activate(self.activation, out.data_mut(), f);
        if pass.record {
            self.input = Some(x.clone());
            self.output = (self.activation != Activation::Linear).then(|| out.clone());
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("conv"))?;
        let g = self.geometry(x.shape())?;
        let (p, k, f) = (g.positions(), g.patch(), self.filters);
        let mut dy = grad.clone();
        if self.activation != Activation::Linear {
            let out = self.output.as_ref().ok_or_else(|| missing_cache("conv"))?;
            activation_backward(self.activation, out.data(), dy.data_mut(), f);
        }
        let mut dx = need.input_grads.then(|| Tensor::zeros(x.shape()));
        let mut col = vec![0.0; p * k];
        for n in 0..x.batch() {
            let dy_n = &dy.data()[n * p * f..(n + 1) * p * f];
            if need.param_grads {
                let lhs: &[f32] = if g.is_pointwise() {
                    x.sample(n)
                } else {
                    g.im2col(x.sample(n), &mut col);
                    &col
                };
                gemm(k, f, p, lhs, true, dy_n, false, 1.0, self.weight.grad.data_mut());
                if let Some(b) = &mut self.bias {
                    for row in dy_n.chunks(f) {
                        b.grad.data_mut().iter_mut().zip(row).for_each(|(g, v)| *g += v);
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                let len = x.sample_len();
                let dst = &mut dx.data_mut()[n * len..(n + 1) * len];
                if g.is_pointwise() {
                    gemm(p, k, f, dy_n, false, self.weight.value.data(), true, 0.0, dst);
                } else {
                    gemm(p, k, f, dy_n, false, self.weight.value.data(), true, 0.0, &mut col);
                    g.col2im(&col, dst);
                }
            }
        }
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
        self.output = None;
    }
}

macro_rules! conv_layer {
    ($name:ident, $rank:expr, $kind:ident) => {
        pub struct $name(ConvCore);

        impl $name {
            pub fn new(in_channels: usize, filters: usize, kernel: [usize; $rank], rng: &mut ChaCha8Rng) -> Self {
                let mut k = [1; 3];
                k[3 - $rank..].copy_from_slice(&kernel);
                Self(ConvCore::new($rank, in_channels, filters, k, rng))
            }

            pub fn with_strides(mut self, strides: [usize; $rank]) -> Self {
                self.0.strides[3 - $rank..].copy_from_slice(&strides);
                self
            }

            pub fn with_padding(mut self, padding: Padding) -> Self {
                self.0.padding = padding;
                self
            }

            pub fn with_activation(mut self, activation: Activation) -> Self {
                self.0.activation = activation;
                self
            }

            pub fn without_bias(mut self) -> Self {
                self.0.bias = None;
                self
            }

            pub fn with_l2(mut self, l2: f32) -> Self {
                self.0.weight.l2 = l2;
                self
            }
        }

        impl Layer for $name {
            fn kind(&self) -> LayerKind {
                let c = &self.0;
                let mut kernel = [0; $rank];
                kernel.copy_from_slice(&c.kernel[3 - $rank..]);
                let mut strides = [0; $rank];
                strides.copy_from_slice(&c.strides[3 - $rank..]);
                LayerKind::$kind {
                    filters: c.filters,
                    kernel,
                    strides,
                    padding: c.padding,
                    activation: c.activation,
                    use_bias: c.bias.is_some(),
                    l2: c.weight.l2,
                }
            }

            fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
                self.0.output_shape(single_input(inputs, stringify!($name))?)
            }

            fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
                self.0.forward(inputs[0], pass)
            }

            fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
                self.0.backward(grad, need)
            }

            fn params(&self) -> Vec<&Param> {
                self.0.params()
            }

            fn params_mut(&mut self) -> Vec<&mut Param> {
                self.0.params_mut()
            }

            fn clear_cache(&mut self) {
                self.0.clear_cache()
            }
        }
    };
}

conv_layer!(Conv2d, 2, Conv2d);
conv_layer!(Conv3d, 3, Conv3d);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Direct nested-loop 2D convolution, independent of the im2col path.
    fn direct_conv2d(x: &Tensor, w: &Tensor, stride: usize, padding: Padding) -> Tensor {
        let (n, h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw, f) = (w.shape()[0], w.shape()[1], w.shape()[3]);
        let (oh, ph) = conv_geometry(h, kh, stride, padding);
        let (ow, pw) = conv_geometry(wd, kw, stride, padding);
        let mut out = Tensor::zeros(&[n, oh, ow, f]);
        for b in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    for o in 0..f {
                        let mut s = 0.0;
                        for a in 0..kh {
                            for bb in 0..kw {
                                let y = (i * stride + a) as isize - ph as isize;
                                let xx = (j * stride + bb) as isize - pw as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    let xv = x.data()[((b * h + y as usize) * wd + xx as usize) * c + ch];
                                    let wv = w.data()[((a * kw + bb) * c + ch) * f + o];
                                    s += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((b * oh + i) * ow + j) * f + o] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|v| ((v * 7919) % 97) as f32 / 97.0 - 0.5).collect()).unwrap()
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(stride, padding, k) in &[
            (1, Padding::Same, [3, 3]),
            (2, Padding::Valid, [3, 3]),
            (2, Padding::Same, [3, 3]),
            (1, Padding::Same, [1, 7]),
            (1, Padding::Valid, [1, 1]),
        ] {
            let mut conv = Conv2d::new(3, 4, k, &mut rng)
                .with_strides([stride, stride])
                .with_padding(padding)
                .without_bias();
            let x = ramp(&[2, 7, 8, 3]);
            let y = conv.forward(&[&x], Pass::default()).unwrap();
            let expect = direct_conv2d(&x, &conv.0.weight.value, stride, padding);
            assert_eq!(y.shape(), expect.shape());
            for (a, b) in y.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn same_padding_keeps_spatial_size_for_conv3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv3d::new(3, 32, [3, 3, 3], &mut rng);
        let shape = conv.output_shape(&[&[2, 15, 100, 100, 3]]).unwrap();
        assert_eq!(shape, vec![2, 15, 100, 100, 32]);
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(3, 8, [3, 3], &mut rng);
        assert!(matches!(conv.output_shape(&[&[1, 10, 10, 4]]), Err(Error::Shape { .. })));
    }
}
