use rand_chacha::ChaCha8Rng;

use super::{expect_rank, missing_cache, single_input, Layer, LayerKind, Need, Param, Pass};
use crate::error::{Error, Result};
use crate::nn::gemm::gemm;
use crate::nn::init::{glorot_uniform, orthogonal};
use crate::nn::tensor::Tensor;

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM direction. Gate order i, f, c, o.
struct Cell {
    kernel: Param,
    recurrent: Param,
    bias: Param,
    reverse: bool,
    cache: Option<CellCache>,
}

struct CellCache {
    /// Input rows in processing order, `[t * n, features]`.
    x: Vec<f32>,
    /// Activated gates per step, `[t][n * 4u]`.
    gates: Vec<Vec<f32>>,
    /// Cell states per step (after the update).
    cells: Vec<Vec<f32>>,
    /// Hidden states per step.
    hidden: Vec<Vec<f32>>,
}

impl Cell {
    fn new(
        names: [&'static str; 3],
        features: usize,
        units: usize,
        reverse: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let kernel = glorot_uniform(rng, features, 4 * units, features * 4 * units);
        // Keras builds the recurrent kernel as one orthogonal [u, 4u] matrix.
        let recurrent = orthogonal(rng, units, 4 * units);
        let mut bias = vec![0.0; 4 * units];
        bias[units..2 * units].fill(1.0);
        Self {
            kernel: Param::weight(names[0], Tensor::new(vec![features, 4 * units], kernel).unwrap()),
            recurrent: Param::weight(names[1], Tensor::new(vec![units, 4 * units], recurrent).unwrap()),
            bias: Param::weight(names[2], Tensor::new(vec![4 * units], bias).unwrap()),
            reverse,
            cache: None,
        }
    }

    fn units(&self) -> usize {
        self.recurrent.value.shape()[0]
    }

    /// Returns the final hidden state `[n, u]`.
    fn forward(&mut self, x: &Tensor, record: bool) -> Vec<f32> {
        let (n, steps, features) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let u = self.units();
        let g4 = 4 * u;
        // Time-major copy in processing order.
        let mut xs = Vec::with_capacity(steps * n * features);
        for s in 0..steps {
            let t = if self.reverse { steps - 1 - s } else { s };
            for b in 0..n {
                let off = (b * steps + t) * features;
                xs.extend_from_slice(&x.data()[off..off + features]);
            }
        }
        let mut z_all = vec![0.0; steps * n * g4];
        for row in z_all.chunks_mut(g4) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(steps * n, g4, features, &xs, false, self.kernel.value.data(), false, 1.0, &mut z_all);

        let mut h = vec![0.0; n * u];
        let mut c = vec![0.0; n * u];
        let (mut gates_log, mut cells_log, mut hidden_log) = (Vec::new(), Vec::new(), Vec::new());
        for s in 0..steps {
            let z = &mut z_all[s * n * g4..(s + 1) * n * g4];
            gemm(n, g4, u, &h, false, self.recurrent.value.data(), false, 1.0, z);
            for b in 0..n {
                let zr = &mut z[b * g4..(b + 1) * g4];
                for j in 0..u {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[u + j]);
                    let g = zr[2 * u + j].tanh();
                    let o = sigmoid(zr[3 * u + j]);
                    let cell = f * c[b * u + j] + i * g;
                    c[b * u + j] = cell;
                    h[b * u + j] = o * cell.tanh();
                    zr[j] = i;
                    zr[u + j] = f;
                    zr[2 * u + j] = g;
                    zr[3 * u + j] = o;
                }
            }
            if record {
                gates_log.push(z.to_vec());
                cells_log.push(c.clone());
                hidden_log.push(h.clone());
            }
        }
        self.cache = record.then_some(CellCache {
            x: xs,
            gates: gates_log,
            cells: cells_log,
            hidden: hidden_log,
        });
        h
    }

    /// `dh` is the gradient w.r.t. the final hidden state. Adds the input gradient
    /// into `dx` (`[n, t, features]`, batch-major).
    fn backward(&mut self, dh_last: &[f32], dx: Option<&mut [f32]>, need: Need) -> Result<()> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("bilstm"))?;
        let u = self.units();
        let g4 = 4 * u;
        let steps = cache.gates.len();
        let n = dh_last.len() / u;
        let features = self.kernel.value.shape()[0];
        let mut dz_all = vec![0.0; steps * n * g4];
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; n * u];
        let zeros = vec![0.0; n * u];
        for s in (0..steps).rev() {
            let gates = &cache.gates[s];
            let c_prev = if s > 0 { &cache.cells[s - 1] } else { &zeros };
            let cell = &cache.cells[s];
            let dz = &mut dz_all[s * n * g4..(s + 1) * n * g4];
            for b in 0..n {
                let gr = &gates[b * g4..(b + 1) * g4];
                let dzr = &mut dz[b * g4..(b + 1) * g4];
                for j in 0..u {
                    let k = b * u + j;
                    let (i, f, g, o) = (gr[j], gr[u + j], gr[2 * u + j], gr[3 * u + j]);
                    let tc = cell[k].tanh();
                    let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
                    dzr[j] = dct * g * i * (1.0 - i);
                    dzr[u + j] = dct * c_prev[k] * f * (1.0 - f);
                    dzr[2 * u + j] = dct * i * (1.0 - g * g);
                    dzr[3 * u + j] = dh[k] * tc * o * (1.0 - o);
                    dc[k] = dct * f;
                }
            }
            if need.param_grads && s > 0 {
                gemm(u, g4, n, &cache.hidden[s - 1], true, dz, false, 1.0, self.recurrent.grad.data_mut());
            }
            if s > 0 {
                gemm(n, u, g4, dz, false, self.recurrent.value.data(), true, 0.0, &mut dh);
            }
        }
        if need.param_grads {
            gemm(features, g4, steps * n, &cache.x, true, &dz_all, false, 1.0, self.kernel.grad.data_mut());
            for row in dz_all.chunks(g4) {
                self.bias.grad.data_mut().iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
        }
        if let Some(dx) = dx {
            let mut dxs = vec![0.0; steps * n * features];
            gemm(steps * n, features, g4, &dz_all, false, self.kernel.value.data(), true, 0.0, &mut dxs);
            for s in 0..steps {
                let t = if self.reverse { steps - 1 - s } else { s };
                for b in 0..n {
                    let src = &dxs[(s * n + b) * features..(s * n + b + 1) * features];
                    let off = (b * steps + t) * features;
                    dx[off..off + features].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                }
            }
        }
        Ok(())
    }
}

/// Bidirectional LSTM over `[n, t, features]`, returning the concatenated final
/// states `[n, 2 * units]` (forward first).
pub struct BiLstm {
    features: usize,
    units: usize,
    fwd: Cell,
    bwd: Cell,
    input_shape: Option<Vec<usize>>,
}

impl BiLstm {
    pub fn new(features: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        let fwd = Cell::new(
            ["forward_kernel", "forward_recurrent_kernel", "forward_bias"],
            features,
            units,
            false,
            rng,
        );
        let bwd = Cell::new(
            ["backward_kernel", "backward_recurrent_kernel", "backward_bias"],
            features,
            units,
            true,
            rng,
        );
        Self {
            features,
            units,
            fwd,
            bwd,
            input_shape: None,
        }
    }
}

impl Layer for BiLstm {
    fn kind(&self) -> LayerKind {
        LayerKind::BiLstm { units: self.units }
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let shape = single_input(inputs, "bilstm")?;
        expect_rank(shape, 3, "bilstm")?;
        if shape[2] != self.features {
            return Err(Error::shape("bilstm input features", &[shape[0], shape[1], self.features], shape));
        }
        Ok(vec![shape[0], 2 * self.units])
    }

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor> {
        let x = inputs[0];
        let shape = self.output_shape(&[x.shape()])?;
        let hf = self.fwd.forward(x, pass.record);
        let hb = self.bwd.forward(x, pass.record);
        let u = self.units;
        let mut data = Vec::with_capacity(shape[0] * 2 * u);
        for b in 0..shape[0] {
            data.extend_from_slice(&hf[b * u..(b + 1) * u]);
            data.extend_from_slice(&hb[b * u..(b + 1) * u]);
        }
        self.input_shape = pass.record.then(|| x.shape().to_vec());
        Tensor::new(shape, data)
    }

    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>> {
        let shape = self.input_shape.clone().ok_or_else(|| missing_cache("bilstm"))?;
        let u = self.units;
        let n = shape[0];
        let (mut dhf, mut dhb) = (Vec::with_capacity(n * u), Vec::with_capacity(n * u));
        for row in grad.data().chunks(2 * u) {
            dhf.extend_from_slice(&row[..u]);
            dhb.extend_from_slice(&row[u..]);
        }
        let mut dx = need.input_grads.then(|| Tensor::zeros(&shape));
        self.fwd.backward(&dhf, dx.as_mut().map(|t| t.data_mut()), need)?;
        self.bwd.backward(&dhb, dx.as_mut().map(|t| t.data_mut()), need)?;
        Ok(dx.into_iter().collect())
    }

    fn params(&self) -> Vec<&Param> {
        vec![
            &self.fwd.kernel,
            &self.fwd.recurrent,
            &self.fwd.bias,
            &self.bwd.kernel,
            &self.bwd.recurrent,
            &self.bwd.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.fwd.kernel,
            &mut self.fwd.recurrent,
            &mut self.fwd.bias,
            &mut self.bwd.kernel,
            &mut self.bwd.recurrent,
            &mut self.bwd.bias,
        ]
    }

    fn clear_cache(&mut self) {
        self.fwd.cache = None;
        self.bwd.cache = None;
        self.input_shape = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn loss(layer: &mut BiLstm, x: &Tensor) -> f32 {
        let y = layer.forward(&[x], Pass::default()).unwrap();
        y.data().iter().enumerate().map(|(i, v)| v * (i as f32 * 0.3 - 0.7)).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = BiLstm::new(3, 4, &mut rng);
        let x = Tensor::new(vec![2, 5, 3], (0..30).map(|i| ((i * 7 % 11) as f32 - 5.0) / 6.0).collect()).unwrap();
        let pass = Pass {
            training: true,
            record: true,
            trainable: true,
        };
        let y = layer.forward(&[&x], pass).unwrap();
        let g = Tensor::new(y.shape().to_vec(), (0..y.len()).map(|i| i as f32 * 0.3 - 0.7).collect()).unwrap();
        let need = Need {
            input_grads: true,
            param_grads: true,
            logits: false,
        };
        let dx = layer.backward(&g, need).unwrap().remove(0);
        let eps = 1e-2;
        for i in [0, 7, 13, 29] {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (loss(&mut layer, &xp) - loss(&mut layer, &xm)) / (2.0 * eps);
            assert!((num - dx.data()[i]).abs() < 2e-3, "dx[{i}] {num} vs {}", dx.data()[i]);
        }
        for p in 0..6 {
            let analytic: Vec<f32> = layer.params()[p].grad.data().to_vec();
            for i in [0, 5, 11] {
                let orig = layer.params()[p].value.data()[i];
                layer.params_mut()[p].value.data_mut()[i] = orig + eps;
                let lp = loss(&mut layer, &x);
                layer.params_mut()[p].value.data_mut()[i] = orig - eps;
                let lm = loss(&mut layer, &x);
                layer.params_mut()[p].value.data_mut()[i] = orig;
                let num = (lp - lm) / (2.0 * eps);
                assert!((num - analytic[i]).abs() < 2e-3, "param {p}[{i}] {num} vs {}", analytic[i]);
            }
        }
    }
}
