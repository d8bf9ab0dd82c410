//! Parameter-free layers that move data around.

use super::{expect_rank, missing_cache, single_input, Layer, LayerKind, Need, Pass};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// `y = x * scale + offset`.
pub struct Rescale {
    scale: f32,
    offset: f32,
}

impl Rescale {
    pub fn new(scale: f32, offset: f32) -> Self {
        Self { scale, offset }
    }
}

impl Layer for Rescale {
    fn kind(&self) -> LayerKind {
        LayerKind::Rescale {
            scale: self.scale,
            offset: self.offset,
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        Ok(single_input(inputs, "rescale")?.to_vec())
    }

    fn forward(&mut self, inputs: &[&Tensor], _pass: Pass) -> Result<Tensor> {
        let mut out = inputs[0].clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * self.scale + self.offset);
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let mut g = grad.clone();
        g.data_mut().iter_mut().for_each(|v| *v *= self.scale);
        Ok(vec![g])
    }
}

/// Merge the batch and time axes so per-frame layers see one image per row:
/// `[n, t, ...] -> [n * t, ...]`.
pub struct FoldTime {
    steps: usize,
}

impl FoldTime {
    pub fn new(steps: usize) -> Self {
        Self { steps }
    }
}

impl Layer for FoldTime {
    fn kind(&self) -> LayerKind {
        LayerKind::FoldTime { steps: self.steps }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "fold_time")?;
        if shape.len() < 3 || shape[1] != self.steps {
            let mut expected = shape.to_vec();
            if expected.len() > 1 {
                expected[1] = self.steps;
            }
            return Err(Error::shape("fold_time sequence length", &expected, shape));
        }
        let mut out = vec![shape[0] * shape[1]];
        out.extend_from_slice(&shape[2..]);
        Ok(out)
    }

    fn forward(&mut self, inputs: &[&Tensor], _pass: Pass) -> Result<Tensor> {
        let shape = self.output_shape(&[inputs[0].shape()])?;
        inputs[0].clone().reshape(shape)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let mut shape = vec![grad.batch() / self.steps, self.steps];
        shape.extend_from_slice(&grad.shape()[1..]);
        Ok(vec![grad.clone().reshape(shape)?])
    }
}

/// Inverse of [`FoldTime`]: `[n * t, ...] -> [n, t, ...]`.
pub struct UnfoldTime {
    steps: usize,
}

impl UnfoldTime {
    pub fn new(steps: usize) -> Self {
        Self { steps }
    }
}

impl Layer for UnfoldTime {
    fn kind(&self) -> LayerKind {
        LayerKind::UnfoldTime { steps: self.steps }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "unfold_time")?;
        if shape.is_empty() || shape[0] % self.steps != 0 {
            return Err(Error::shape("unfold_time batch multiple", &[self.steps], shape));
        }
        let mut out = vec![shape[0] / self.steps, self.steps];
        out.extend_from_slice(&shape[1..]);
        Ok(out)
    }

    fn forward(&mut self, inputs: &[&Tensor], _pass: Pass) -> Result<Tensor> {
        let shape = self.output_shape(&[inputs[0].shape()])?;
        inputs[0].clone().reshape(shape)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let mut shape = vec![grad.batch() * self.steps];
        shape.extend_from_slice(&grad.shape()[2..]);
        Ok(vec![grad.clone().reshape(shape)?])
    }
}

pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl Default for Flatten {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Flatten {
    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "flatten")?;
        Ok(vec![shape[0], shape[1..].iter().product()])
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        self.input_shape = pass.record.then(|| x.shape().to_vec());
        x.clone().reshape(self.output_shape(&[x.shape()])?)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let shape = self.input_shape.clone().ok_or_else(|| missing_cache("flatten"))?;
        Ok(vec![grad.clone().reshape(shape)?])
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

/// Concatenation along the trailing (channel) axis.
pub struct Concat {
    widths: Vec<usize>,
}

impl Concat {
    pub fn new() -> Self {
        Self { widths: Vec::new() }
    }
}

impl Default for Concat {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Concat {
    fn kind(&self) -> LayerKind {
        LayerKind::Concat
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let first = inputs.first().ok_or_else(|| Error::Spec("concat needs inputs".into()))?;
        let lead = &first[..first.len() - 1];
        let mut channels = 0;
        for s in inputs {
            if &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat leading axes", first, s));
            }
            channels += s[s.len() - 1];
        }
        let mut out = lead.to_vec();
        out.push(channels);
        Ok(out)
    }

    fn forward(&mut self, inputs: &[&Tensor], _pass: Pass) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
        let out_shape = self.output_shape(&shapes)?;
        self.widths = inputs.iter().map(|t| t.channels()).collect();
        let rows = inputs[0].len() / self.widths[0];
        let total = out_shape[out_shape.len() - 1];
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (t, &w) in inputs.iter().zip(&self.widths) {
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        Tensor::new(out_shape, data)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let total: usize = self.widths.iter().sum();
        let rows = grad.len() / total;
        let lead = &grad.shape()[..grad.shape().len() - 1];
        let mut parts: Vec<Vec<f32>> = self.widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for row in grad.data().chunks(total) {
            let mut off = 0;
            for (p, &w) in parts.iter_mut().zip(&self.widths) {
                p.extend_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        parts
            .into_iter()
            .zip(&self.widths)
            .map(|(p, &w)| {
                let mut shape = lead.to_vec();
                shape.push(w);
                Tensor::new(shape, p)
            })
            .collect()
    }
}

/// Elementwise sum of equally shaped inputs.
pub struct Add {
    arity: usize,
}

impl Add {
    pub fn new() -> Self {
        Self { arity: 0 }
    }
}

impl Default for Add {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Add {
    fn kind(&self) -> LayerKind {
        LayerKind::Add
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let first = inputs.first().ok_or_else(|| Error::Spec("add needs inputs".into()))?;
        for s in inputs {
            if s != first {
                return Err(Error::shape("add operands", first, s));
            }
        }
        Ok(first.to_vec())
    }

    fn forward(&mut self, inputs: &[&Tensor], _pass: Pass) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
        self.output_shape(&shapes)?;
        self.arity = inputs.len();
        let mut out = inputs[0].clone();
        for t in &inputs[1..] {
            out.add_assign(t);
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        Ok(vec![grad.clone(); self.arity])
    }
}

/// Zero padding of the two spatial axes of an `NHWC` tensor.
pub struct ZeroPad2d {
    pad: [usize; 4],
}

impl ZeroPad2d {
    /// `[top, bottom, left, right]`.
    pub fn new(pad: [usize; 4]) -> Self {
        Self { pad }
    }
}

impl Layer for ZeroPad2d {
    fn kind(&self) -> LayerKind {
        let [top, bottom, left, right] = self.pad;
        LayerKind::ZeroPad2d {
            top,
            bottom,
            left,
            right,
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let s = single_input(inputs, "zero_pad2d")?;
        expect_rank(s, 4, "zero_pad2d")?;
        Ok(vec![s[0], s[1] + self.pad[0] + self.pad[1], s[2] + self.pad[2] + self.pad[3], s[3]])
    }

    fn forward(&mut self, inputs: &[&Tensor], _pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        let shape = self.output_shape(&[x.shape()])?;
        let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let ow = shape[2];
        let mut out = Tensor::zeros(&shape);
        let out_len = out.sample_len();
        for n in 0..x.batch() {
            let src = x.sample(n);
            let dst = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
            for y in 0..h {
                let d = ((y + self.pad[0]) * ow + self.pad[2]) * c;
                dst[d..d + w * c].copy_from_slice(&src[y * w * c..(y + 1) * w * c]);
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let (oh, ow, c) = (grad.shape()[1], grad.shape()[2], grad.shape()[3]);
        let h = oh - self.pad[0] - self.pad[1];
        let w = ow - self.pad[2] - self.pad[3];
        let mut dx = Tensor::zeros(&[grad.batch(), h, w, c]);
        let in_len = dx.sample_len();
        for n in 0..grad.batch() {
            let src = grad.sample(n);
            let dst = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
            for y in 0..h {
                let s = ((y + self.pad[0]) * ow + self.pad[2]) * c;
                dst[y * w * c..(y + 1) * w * c].copy_from_slice(&src[s..s + w * c]);
            }
        }
        Ok(vec![dx])
    }
}
