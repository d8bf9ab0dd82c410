//! Optimizers with Keras update rules.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    RmsProp,
    SgdMomentum,
}

pub struct Optimizer {
    kind: OptimizerKind,
    momentum: f32,
    rho: f32,
    epsilon: f32,
    slots: HashMap<String, Vec<f32>>,
}

impl Optimizer {
    pub fn rmsprop() -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            momentum: 0.0,
            rho: 0.9,
            epsilon: 1e-7,
            slots: HashMap::new(),
        }
    }

    pub fn sgd(momentum: f32) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            rho: 0.0,
            epsilon: 0.0,
            slots: HashMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Apply one update to every trainable weight of `graph`.
    pub fn step(&mut self, graph: &mut Graph, lr: f32) {
        for (name, param, trainable) in graph.named_params_mut() {
            if !trainable {
                continue;
            }
            let slot = self.slots.entry(name).or_insert_with(|| vec![0.0; param.value.len()]);
            let grad = param.grad.data();
            let value = param.value.data_mut();
            match self.kind {
                OptimizerKind::RmsProp => {
                    let (rho, eps) = (self.rho, self.epsilon);
                    for ((w, &g), v) in value.iter_mut().zip(grad).zip(slot.iter_mut()) {
                        *v = rho * *v + (1.0 - rho) * g * g;
                        *w -= lr * g / (v.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let mu = self.momentum;
                    for ((w, &g), m) in value.iter_mut().zip(grad).zip(slot.iter_mut()) {
                        *m = mu * *m - lr * g;
                        *w += *m;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{GraphBuilder, LayerGroup, NodeId};
    use crate::nn::layers::{Activation, Dense};
    use crate::nn::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_weight_graph() -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = GraphBuilder::new(&[1]);
        let out = g
            .add("d", Dense::new(1, 2, &mut rng).with_activation(Activation::Softmax), &[NodeId::Input], LayerGroup::Head)
            .unwrap();
        g.build(out).unwrap()
    }

    fn set_grads(graph: &mut Graph, g: f32) {
        for (_, p, _) in graph.named_params_mut() {
            p.grad.fill(g);
        }
    }

    #[test]
    fn rmsprop_matches_hand_computation() {
        let mut graph = single_weight_graph();
        let before: Vec<f32> = graph.named_params()[0].1.value.data().to_vec();
        let mut opt = Optimizer::rmsprop();
        set_grads(&mut graph, 0.5);
        opt.step(&mut graph, 0.01);
        set_grads(&mut graph, -0.25);
        opt.step(&mut graph, 0.01);
        // v1 = 0.1 * 0.25; w1 = w0 - 0.01 * 0.5 / (sqrt(v1) + 1e-7)
        // v2 = 0.9 v1 + 0.1 * 0.0625; w2 = w1 + 0.01 * 0.25 / (sqrt(v2) + 1e-7)
        let v1 = 0.025f64;
        let v2 = 0.9 * v1 + 0.1 * 0.0625;
        let delta = -0.01 * 0.5 / (v1.sqrt() + 1e-7) + 0.01 * 0.25 / (v2.sqrt() + 1e-7);
        let after = graph.named_params()[0].1.value.data().to_vec();
        for (a, b) in after.iter().zip(&before) {
            assert!(((a - b) as f64 - delta).abs() < 1e-5);
        }
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let mut graph = single_weight_graph();
        let before = graph.named_params()[1].1.value.data()[0];
        let mut opt = Optimizer::sgd(0.9);
        set_grads(&mut graph, 1.0);
        opt.step(&mut graph, 0.1);
        opt.step(&mut graph, 0.1);
        // m1 = -0.1, m2 = -0.09 - 0.1 = -0.19
        let after = graph.named_params()[1].1.value.data()[0];
        assert!((after - before + 0.29).abs() < 1e-6);
    }

    #[test]
    fn frozen_weights_are_untouched() {
        let mut graph = single_weight_graph();
        graph.set_trainable(0, false);
        let before: Vec<Tensor> = graph.named_params().iter().map(|p| p.1.value.clone()).collect();
        set_grads(&mut graph, 1.0);
        Optimizer::sgd(0.9).step(&mut graph, 0.1);
        let after: Vec<Tensor> = graph.named_params().iter().map(|p| p.1.value.clone()).collect();
        assert_eq!(before, after);
    }
}
