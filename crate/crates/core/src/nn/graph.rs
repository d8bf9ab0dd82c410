//! Directed acyclic layer graphs with Keras-compatible layer ordering.

use std::collections::HashMap;

use serde::Serialize;

use super::layers::{Activation, Layer, LayerKind, Need, Param, Pass};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Where a node sits in a composite model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGroup {
    /// Plumbing around the feature extractor (input scaling, time folding).
    Wrapper,
    /// Layers of a pretrained backbone.
    Backbone,
    /// Everything trained from scratch.
    Head,
}

/// Reference to a graph value: the model input or a node output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeId {
    Input,
    Node(usize),
}

struct Node {
    name: String,
    layer: Box<dyn Layer>,
    inputs: Vec<NodeId>,
    group: LayerGroup,
    trainable: bool,
    shape: Vec<usize>,
}

/// Introspection record for one layer.
#[derive(Clone, Debug, Serialize)]
pub struct LayerInfo {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub group: LayerGroup,
    pub trainable: bool,
    pub param_count: usize,
    pub output_shape: Vec<usize>,
}

pub struct GraphBuilder {
    input_shape: Vec<usize>,
    nodes: Vec<Node>,
    counters: HashMap<String, usize>,
}

impl GraphBuilder {
    /// `input_shape` excludes the batch axis.
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            nodes: Vec::new(),
            counters: HashMap::new(),
        }
    }

    /// Keras-style unique name: `prefix`, `prefix_1`, `prefix_2`, ...
    pub fn auto_name(&mut self, prefix: &str) -> String {
        let n = self.counters.entry(prefix.to_string()).or_insert(0);
        let name = if *n == 0 {
            prefix.to_string()
        } else {
            format!("{prefix}_{n}")
        };
        *n += 1;
        name
    }

    /// Shape of a value with a nominal batch of one.
    pub fn shape(&self, id: NodeId) -> &[usize] {
        match id {
            NodeId::Input => &self.input_shape,
            NodeId::Node(i) => &self.nodes[i].shape,
        }
    }

    fn nominal(&self, id: NodeId) -> Vec<usize> {
        match id {
            NodeId::Input => {
                let mut s = vec![1];
                s.extend_from_slice(&self.input_shape);
                s
            }
            NodeId::Node(i) => self.nodes[i].shape.clone(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        layer: impl Layer + 'static,
        inputs: &[NodeId],
        group: LayerGroup,
    ) -> Result<NodeId> {
        let name = name.into();
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Spec(format!("duplicate layer name {name}")));
        }
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|&i| self.nominal(i)).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let shape = layer.output_shape(&refs)?;
        self.nodes.push(Node {
            name,
            layer: Box::new(layer),
            inputs: inputs.to_vec(),
            group,
            trainable: true,
            shape,
        });
        Ok(NodeId::Node(self.nodes.len() - 1))
    }

    /// Finish the graph. Unreachable nodes are an error; nodes are reordered
    /// the way Keras lists functional-model layers: by decreasing distance to
    /// the output, ties broken by depth-first discovery order from the output.
    pub fn build(self, output: NodeId) -> Result<Graph> {
        let NodeId::Node(out) = output else {
            return Err(Error::Spec("graph output cannot be the raw input".into()));
        };
        let n = self.nodes.len();
        let mut pre = vec![usize::MAX; n];
        let mut post = Vec::with_capacity(n);
        let mut counter = 0;
        // Iterative DFS: (node, next input position).
        let mut stack = vec![(out, 0usize)];
        pre[out] = counter;
        counter += 1;
        while let Some((node, pos)) = stack.pop() {
            let inputs = &self.nodes[node].inputs;
            if pos < inputs.len() {
                stack.push((node, pos + 1));
                if let NodeId::Node(i) = inputs[pos] {
                    if pre[i] == usize::MAX {
                        pre[i] = counter;
                        counter += 1;
                        stack.push((i, 0));
                    }
                }
            } else {
                post.push(node);
            }
        }
        if let Some(unused) = pre.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Spec(format!(
                "layer {} does not contribute to the output",
                self.nodes[unused].name
            )));
        }
        // Longest path to the output; consumers precede producers in reverse post-order.
        let mut depth = vec![0usize; n];
        for &node in post.iter().rev() {
            for input in &self.nodes[node].inputs {
                if let NodeId::Node(i) = *input {
                    depth[i] = depth[i].max(depth[node] + 1);
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(depth[i]), pre[i]));
        let mut position = vec![0; n];
        for (p, &i) in order.iter().enumerate() {
            position[i] = p;
        }
        let mut slots: Vec<Option<Node>> = self.nodes.into_iter().map(Some).collect();
        let nodes: Vec<Node> = order
            .iter()
            .map(|&i| {
                let mut node = slots[i].take().expect("each node moved once");
                for input in &mut node.inputs {
                    if let NodeId::Node(j) = input {
                        *j = position[*j];
                    }
                }
                node
            })
            .collect();
        let mut graph = Graph {
            input_shape: self.input_shape,
            output: position[out],
            consumers: vec![0; n],
            nodes,
        };
        graph.count_consumers();
        Ok(graph)
    }
}

pub struct Graph {
    input_shape: Vec<usize>,
    nodes: Vec<Node>,
    output: usize,
    consumers: Vec<usize>,
}

/// Result of one forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Mean cross-entropy plus the L2 penalty.
    pub loss: f64,
    pub probabilities: Tensor,
}

impl Graph {
    fn count_consumers(&mut self) {
        self.consumers = vec![0; self.nodes.len()];
        for node in &self.nodes {
            for input in &node.inputs {
                if let NodeId::Node(i) = *input {
                    self.consumers[i] += 1;
                }
            }
        }
    }

    /// Input shape without the batch axis.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_width(&self) -> usize {
        *self.nodes[self.output].shape.last().unwrap_or(&0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(index, node)| LayerInfo {
                index,
                name: node.name.clone(),
                kind: node.layer.kind(),
                group: node.group,
                trainable: node.trainable,
                param_count: node.layer.params().iter().map(|p| p.value.len()).sum(),
                output_shape: node.shape.clone(),
            })
            .collect()
    }

    pub fn set_trainable(&mut self, index: usize, trainable: bool) {
        self.nodes[index].trainable = trainable;
    }

    pub fn parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| n.layer.params())
            .map(|p| p.value.len())
            .sum()
    }

    /// Parameters the optimizer may update (statistics are never counted).
    pub fn trainable_parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.trainable)
            .flat_map(|n| n.layer.params())
            .filter(|p| p.is_weight())
            .map(|p| p.value.len())
            .sum()
    }

    /// All parameters as `(layer/param, param, trainable)`, in layer order.
    pub fn named_params(&self) -> Vec<(String, &Param, bool)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.layer
                    .params()
                    .into_iter()
                    .map(move |p| (format!("{}/{}", n.name, p.name), p, n.trainable && p.is_weight()))
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param, bool)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let trainable = n.trainable;
                let name = n.name.clone();
                n.layer.params_mut().into_iter().map(move |p| {
                    let t = trainable && p.is_weight();
                    (format!("{}/{}", name, p.name), p, t)
                })
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![x.batch()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::shape("model input", &expected, x.shape()));
        }
        Ok(())
    }

    /// Which nodes must take part in backward: those with trainable
    /// parameters and everything downstream of them.
    fn backward_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for i in 0..self.nodes.len() {
            let node = &self.nodes[i];
            let own = node.trainable && node.layer.params().iter().any(|p| p.is_weight());
            let upstream = node.inputs.iter().any(|inp| matches!(inp, NodeId::Node(j) if mask[*j]));
            mask[i] = own || upstream;
        }
        mask
    }

    fn run(&mut self, x: &Tensor, training: bool, record: Option<&[bool]>) -> Result<Tensor> {
        self.run_until(x, training, record, self.output)
    }

    fn run_until(&mut self, x: &Tensor, training: bool, record: Option<&[bool]>, stop: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut remaining = self.consumers.clone();
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            let inputs: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|inp| match *inp {
                    NodeId::Input => x,
                    NodeId::Node(j) => values[j].as_ref().expect("topological order"),
                })
                .collect();
            let pass = Pass {
                training,
                record: record.is_some_and(|m| m[i]),
                trainable: node.trainable,
            };
            let started = log::log_enabled!(log::Level::Trace).then(std::time::Instant::now);
            let out = node.layer.forward(&inputs, pass)?;
            if let Some(t) = started {
                log::trace!("forward {} {:.1} ms", node.name, t.elapsed().as_secs_f64() * 1e3);
            }
            for inp in self.nodes[i].inputs.clone() {
                if let NodeId::Node(j) = inp {
                    remaining[j] -= 1;
                    if remaining[j] == 0 {
                        values[j] = None;
                    }
                }
            }
            if i == stop {
                return Ok(out);
            }
            values[i] = Some(out);
        }
        Ok(values[self.output].take().expect("output computed"))
    }

    /// Inference-mode output of the named layer (e.g. backbone features).
    pub fn activation(&mut self, x: &Tensor, layer: &str) -> Result<Tensor> {
        let stop = self
            .nodes
            .iter()
            .position(|n| n.name == layer)
            .ok_or_else(|| Error::InvalidParameter(format!("no layer named {layer}")))?;
        self.run_until(x, false, None, stop)
    }

    /// Inference-mode forward pass.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false, None)
    }

    /// Forward with an explicit training flag and no recording.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        self.run(x, training, None)
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            for p in node.layer.params_mut() {
                if p.is_weight() {
                    p.grad.fill(0.0);
                }
            }
        }
    }

    /// Training-mode forward plus backward for categorical cross-entropy
    /// against integer class targets. Gradients (including the L2 term) are
    /// accumulated into the trainable parameters.
    pub fn forward_backward(&mut self, x: &Tensor, targets: &[usize]) -> Result<StepOutput> {
        if targets.len() != x.batch() {
            return Err(Error::InvalidInput(format!(
                "{} targets for a batch of {}",
                targets.len(),
                x.batch()
            )));
        }
        let mask = self.backward_mask();
        let probs = self.run(x, true, Some(&mask))?;
        let classes = probs.channels();
        let b = targets.len();
        let mut loss = 0.0f64;
        let mut grad = probs.clone();
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::InvalidInput(format!("target class {t} out of range")));
            }
            let row = &mut grad.data_mut()[r * classes..(r + 1) * classes];
            // Keras clips probabilities to [eps, 1 - eps] before the log.
            let p = (row[t] as f64).clamp(1e-7, 1.0 - 1e-7);
            loss -= p.ln();
            row[t] -= 1.0;
            row.iter_mut().for_each(|v| *v /= b as f32);
        }
        loss /= b as f64;

        let out_node = &self.nodes[self.output];
        let fused = matches!(
            out_node.layer.kind(),
            LayerKind::Dense {
                activation: Activation::Softmax,
                ..
            }
        );
        if !fused {
            return Err(Error::Spec("training requires a softmax dense output layer".into()));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(grad);
        for i in (0..self.nodes.len()).rev() {
            if !mask[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &mut self.nodes[i];
            let input_grads = node.inputs.iter().any(|inp| matches!(inp, NodeId::Node(j) if mask[*j]));
            let need = Need {
                input_grads,
                param_grads: node.trainable,
                logits: i == self.output,
            };
            let started = log::log_enabled!(log::Level::Trace).then(std::time::Instant::now);
            let dins = node.layer.backward(&g, need)?;
            if let Some(t) = started {
                log::trace!("backward {} {:.1} ms", node.name, t.elapsed().as_secs_f64() * 1e3);
            }
            node.layer.clear_cache();
            if !input_grads {
                continue;
            }
            let inputs = node.inputs.clone();
            for (inp, d) in inputs.into_iter().zip(dins) {
                if let NodeId::Node(j) = inp {
                    if !mask[j] {
                        continue;
                    }
                    match &mut grads[j] {
                        Some(acc) => acc.add_assign(&d),
                        slot => *slot = Some(d),
                    }
                }
            }
        }
        for node in &mut self.nodes {
            node.layer.clear_cache();
        }

        let mut penalty = 0.0f64;
        for node in self.nodes.iter_mut().filter(|n| n.trainable) {
            for p in node.layer.params_mut() {
                if p.l2 > 0.0 && p.is_weight() {
                    penalty += p.l2 as f64 * p.value.sum_squares();
                    let scale = 2.0 * p.l2;
                    let Param { value, grad, .. } = p;
                    grad.data_mut().iter_mut().zip(value.data()).for_each(|(g, w)| *g += scale * w);
                }
            }
        }
        Ok(StepOutput {
            loss: loss + penalty,
            probabilities: probs,
        })
    }

    /// Sum of `l2 * ||w||^2` over every regularized weight.
    pub fn l2_penalty(&self) -> f64 {
        self.nodes
            .iter()
            .flat_map(|n| n.layer.params())
            .filter(|p| p.l2 > 0.0)
            .map(|p| p.l2 as f64 * p.value.sum_squares())
            .sum()
    }
}
