use super::{conv_geometry, expect_rank, missing_cache, single_input, Layer, LayerKind, Need, Padding, Pass, PoolOp};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Max or average pooling over two or three spatial axes.
///
/// Average pooling with `Same` padding divides by the number of in-bounds
/// taps, matching TensorFlow.
pub struct Pool {
    rank: usize,
    op: PoolOp,
    pool: [usize; 3],
    strides: [usize; 3],
    padding: Padding,
    cache: Option<PoolCache>,
}

struct PoolCache {
    input_shape: Vec<usize>,
    /// Max: input offset of the winner per output element. Avg: unused.
    argmax: Vec<u32>,
}

struct Plan {
    input: [usize; 3],
    output: [usize; 3],
    pad: [usize; 3],
    channels: usize,
}

impl Pool {
    pub fn max2d(pool: [usize; 2], strides: [usize; 2], padding: Padding) -> Self {
        Self::new(2, PoolOp::Max, [1, pool[0], pool[1]], [1, strides[0], strides[1]], padding)
    }

    pub fn avg2d(pool: [usize; 2], strides: [usize; 2], padding: Padding) -> Self {
        Self::new(2, PoolOp::Avg, [1, pool[0], pool[1]], [1, strides[0], strides[1]], padding)
    }

    pub fn max3d(pool: [usize; 3], strides: [usize; 3], padding: Padding) -> Self {
        Self::new(3, PoolOp::Max, pool, strides, padding)
    }

    fn new(rank: usize, op: PoolOp, pool: [usize; 3], strides: [usize; 3], padding: Padding) -> Self {
        Self {
            rank,
            op,
            pool,
            strides,
            padding,
            cache: None,
        }
    }

    fn plan(&self, shape: &[usize]) -> Result<Plan> {
        expect_rank(shape, self.rank + 2, "pool")?;
        let mut input = [1; 3];
        input[3 - self.rank..].copy_from_slice(&shape[1..=self.rank]);
        let mut output = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            let (o, p) = conv_geometry(input[a], self.pool[a], self.strides[a], self.padding);
            output[a] = o;
            pad[a] = p;
        }
        if output.iter().any(|&o| o == 0) {
            return Err(Error::Shape {
                context: "pool input smaller than the pool window".into(),
                expected: self.pool.to_vec(),
                received: shape.to_vec(),
            });
        }
        Ok(Plan {
            input,
            output,
            pad,
            channels: shape[self.rank + 1],
        })
    }

    fn out_shape(&self, shape: &[usize], plan: &Plan) -> Vec<usize> {
        let mut out = vec![shape[0]];
        out.extend_from_slice(&plan.output[3 - self.rank..]);
        out.push(plan.channels);
        out
    }

    /// In-bounds input ranges along each axis for one output position.
    fn window(&self, plan: &Plan, o: [usize; 3]) -> [(usize, usize); 3] {
        let mut w = [(0, 0); 3];
        for a in 0..3 {
            let start = (o[a] * self.strides[a]) as isize - plan.pad[a] as isize;
            let end = start + self.pool[a] as isize;
            w[a] = (start.max(0) as usize, end.min(plan.input[a] as isize) as usize);
        }
        w
    }
}

impl Layer for Pool {
    fn kind(&self) -> LayerKind {
        if self.rank == 2 {
            LayerKind::Pool2d {
                op: self.op,
                pool: [self.pool[1], self.pool[2]],
                strides: [self.strides[1], self.strides[2]],
                padding: self.padding,
            }
        } else {
            LayerKind::Pool3d {
                op: self.op,
                pool: self.pool,
                strides: self.strides,
                padding: self.padding,
            }
        }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "pool")?;
        let plan = self.plan(shape)?;
        Ok(self.out_shape(shape, &plan))
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        let plan = self.plan(x.shape())?;
        let c = plan.channels;
        let mut out = Tensor::zeros(&self.out_shape(x.shape(), &plan));
        let mut argmax = if pass.record && self.op == PoolOp::Max {
            vec![0u32; out.len()]
        } else {
            Vec::new()
        };
        let (ih, iw) = (plan.input[1], plan.input[2]);
        let in_len = x.sample_len();
        let mut oi = 0;
        for n in 0..x.batch() {
            let src = x.sample(n);
            for od in 0..plan.output[0] {
                for oh in 0..plan.output[1] {
                    for ow in 0..plan.output[2] {
                        let [(d0, d1), (h0, h1), (w0, w1)] = self.window(&plan, [od, oh, ow]);
                        let dst = &mut out.data_mut()[oi..oi + c];
                        match self.op {
                            PoolOp::Max => {
                                dst.iter_mut().for_each(|v| *v = f32::NEG_INFINITY);
                                if !argmax.is_empty() {
                                    let first = n * in_len + ((d0 * ih + h0) * iw + w0) * c;
                                    for ch in 0..c {
                                        argmax[oi + ch] = (first + ch) as u32;
                                    }
                                }
                                for d in d0..d1 {
                                    for h in h0..h1 {
                                        for w in w0..w1 {
                                            let base = ((d * ih + h) * iw + w) * c;
                                            let row = &src[base..base + c];
                                            if argmax.is_empty() {
                                                dst.iter_mut().zip(row).for_each(|(m, &v)| *m = if v > *m { v } else { *m });
                                            } else {
                                                // branch-free select so the channel loop vectorizes
                                                let at = (n * in_len + base) as u32;
                                                let arg = &mut argmax[oi..oi + c];
                                                for (k, ((m, a), &v)) in dst.iter_mut().zip(arg).zip(row).enumerate() {
                                                    let better = v > *m;
                                                    *m = if better { v } else { *m };
                                                    *a = if better { at + k as u32 } else { *a };
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                            PoolOp::Avg => {
                                let count = ((d1 - d0) * (h1 - h0) * (w1 - w0)) as f32;
                                for d in d0..d1 {
                                    for h in h0..h1 {
                                        for w in w0..w1 {
                                            let base = ((d * ih + h) * iw + w) * c;
                                            for ch in 0..c {
                                                dst[ch] += src[base + ch];
                                            }
                                        }
                                    }
                                }
                                dst.iter_mut().for_each(|v| *v /= count);
                            }
                        }
                        oi += c;
                    }
                }
            }
        }
        self.cache = pass.record.then(|| PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("pool"))?;
        let mut dx = Tensor::zeros(&cache.input_shape);
        match self.op {
            PoolOp::Max => {
                let dxd = dx.data_mut();
                for (g, &idx) in grad.data().iter().zip(&cache.argmax) {
                    dxd[idx as usize] += *g;
                }
            }
            PoolOp::Avg => {
                let plan = self.plan(&cache.input_shape)?;
                let c = plan.channels;
                let (ih, iw) = (plan.input[1], plan.input[2]);
                let in_len: usize = cache.input_shape[1..].iter().product();
                let mut oi = 0;
                for n in 0..cache.input_shape[0] {
                    let dst = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
                    for od in 0..plan.output[0] {
                        for oh in 0..plan.output[1] {
                            for ow in 0..plan.output[2] {
                                let [(d0, d1), (h0, h1), (w0, w1)] = self.window(&plan, [od, oh, ow]);
                                let count = ((d1 - d0) * (h1 - h0) * (w1 - w0)) as f32;
                                let g = &grad.data()[oi..oi + c];
                                for d in d0..d1 {
                                    for h in h0..h1 {
                                        for w in w0..w1 {
                                            let base = ((d * ih + h) * iw + w) * c;
                                            for ch in 0..c {
                                                dst[base + ch] += g[ch] / count;
                                            }
                                        }
                                    }
                                }
                                oi += c;
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![dx])
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Mean over the two spatial axes: `[n, h, w, c] -> [n, c]`.
pub struct GlobalAvgPool2d {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool2d {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl Default for GlobalAvgPool2d {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for GlobalAvgPool2d {
    fn kind(&self) -> LayerKind {
        LayerKind::GlobalAvgPool2d
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "global_avg_pool2d")?;
        expect_rank(shape, 4, "global_avg_pool2d")?;
        Ok(vec![shape[0], shape[3]])
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        let shape = self.output_shape(&[x.shape()])?;
        let c = shape[1];
        let area = (x.shape()[1] * x.shape()[2]) as f32;
        let mut out = Tensor::zeros(&shape);
        for n in 0..x.batch() {
            let dst = &mut out.data_mut()[n * c..(n + 1) * c];
            for row in x.sample(n).chunks(c) {
                dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            dst.iter_mut().for_each(|d| *d /= area);
        }
        self.input_shape = pass.record.then(|| x.shape().to_vec());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        if !need.input_grads {
            return Ok(Vec::new());
        }
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_cache("global_avg_pool2d"))?;
        let c = shape[3];
        let area = (shape[1] * shape[2]) as f32;
        let mut dx = Tensor::zeros(shape);
        let len = dx.sample_len();
        for n in 0..shape[0] {
            let g = &grad.data()[n * c..(n + 1) * c];
            for row in dx.data_mut()[n * len..(n + 1) * len].chunks_mut(c) {
                row.iter_mut().zip(g).for_each(|(d, g)| *d = g / area);
            }
        }
        Ok(vec![dx])
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool3d_floors_odd_depth() {
        let p = Pool::max3d([2, 2, 2], [2, 2, 2], Padding::Valid);
        assert_eq!(p.output_shape(&[&[1, 15, 100, 100, 32]]).unwrap(), vec![1, 7, 50, 50, 32]);
    }

    #[test]
    fn same_avg_pool_excludes_padding() {
        let mut p = Pool::avg2d([3, 3], [1, 1], Padding::Same);
        let x = Tensor::filled(&[1, 3, 3, 1], 2.0);
        let y = p.forward(&[&x], Pass::default()).unwrap();
        assert!(y.data().iter().all(|v| (*v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let mut p = Pool::max2d([2, 2], [2, 2], Padding::Valid);
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let pass = Pass {
            training: true,
            record: true,
            trainable: true,
        };
        let y = p.forward(&[&x], pass).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = p
            .backward(
                &Tensor::filled(&[1, 1, 1, 1], 1.0),
                Need {
                    input_grads: true,
                    param_grads: false,
                    logits: false,
                },
            )
            .unwrap();
        assert_eq!(g[0].data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
