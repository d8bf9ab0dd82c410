//! InceptionV3 and MobileNetV2 feature extractors, layer-for-layer and
//! name-for-name identical to the Keras applications built with
//! `include_top=False`, so exported Keras weights load by name.

use rand_chacha::ChaCha8Rng;

use super::{input_builder, recurrent_head, ModelFamily, ModelSpec};
use crate::data::FRAMES;
use crate::error::Result;
use crate::nn::layers::{
    Activation, ActivationLayer, Add, BatchNorm, Concat, Conv2d, DepthwiseConv2d, FoldTime, GlobalAvgPool2d, Layer,
    Padding, Pool, Rescale, UnfoldTime, ZeroPad2d,
};
use crate::nn::{Graph, GraphBuilder, LayerGroup, NodeId};
use crate::seed::{derive_seed, rng, INIT};

const INCEPTION_V3_DEPTH: usize = 310;
const MOBILENET_V2_DEPTH: usize = 153;

/// Number of backbone layers (input layer excluded).
pub fn backbone_depth(family: ModelFamily) -> Option<usize> {
    match family {
        ModelFamily::InceptionV3Bilstm => Some(INCEPTION_V3_DEPTH),
        ModelFamily::MobileNetV2Bilstm => Some(MOBILENET_V2_DEPTH),
        _ => None,
    }
}

pub fn weights_file_name(family: ModelFamily) -> Option<&'static str> {
    match family {
        ModelFamily::InceptionV3Bilstm => Some("inception_v3_notop.safetensors"),
        ModelFamily::MobileNetV2Bilstm => Some("mobilenet_v2_1.0_notop.safetensors"),
        _ => None,
    }
}

/// Rescale to [-1, 1] → fold time → backbone → global average pool →
/// unfold time → recurrent head.
pub(super) fn backbone_bilstm(spec: &ModelSpec, seed: u64) -> Result<Graph> {
    let mut rng = rng(derive_seed(seed, INIT));
    let mut b = input_builder();
    // Both backbones expect x / 127.5 - 1 on 8-bit pixels; frames are already in [0, 1].
    let name = b.auto_name("rescaling");
    let x = b.add(name, Rescale::new(2.0, -1.0), &[NodeId::Input], LayerGroup::Wrapper)?;
    let name = b.auto_name("fold_time");
    let x = b.add(name, FoldTime::new(FRAMES), &[x], LayerGroup::Wrapper)?;
    let x = {
        let mut bb = Backbone { b: &mut b, rng: &mut rng };
        match spec.family {
            ModelFamily::InceptionV3Bilstm => bb.inception_v3(x)?,
            _ => bb.mobilenet_v2(x)?,
        }
    };
    let name = b.auto_name("global_average_pooling2d");
    let x = b.add(name, GlobalAvgPool2d::new(), &[x], LayerGroup::Wrapper)?;
    let name = b.auto_name("unfold_time");
    let x = b.add(name, UnfoldTime::new(FRAMES), &[x], LayerGroup::Wrapper)?;
    let out = recurrent_head(&mut b, spec, seed, &mut rng, x)?;
    b.build(out)
}

struct Backbone<'a> {
    b: &'a mut GraphBuilder,
    rng: &'a mut ChaCha8Rng,
}

impl Backbone<'_> {
    fn channels(&self, x: NodeId) -> usize {
        *self.b.shape(x).last().expect("rank >= 1")
    }

    fn add(&mut self, name: Option<&str>, prefix: &str, layer: impl Layer + 'static, inputs: &[NodeId]) -> Result<NodeId> {
        let name = match name {
            Some(n) => n.to_string(),
            None => self.b.auto_name(prefix),
        };
        self.b.add(name, layer, inputs, LayerGroup::Backbone)
    }

    // --- InceptionV3 -------------------------------------------------------

    /// Conv (no bias) → BN without scale → ReLU.
    fn conv_bn(&mut self, x: NodeId, filters: usize, kernel: [usize; 2], strides: [usize; 2], padding: Padding) -> Result<NodeId> {
        let c = self.channels(x);
        let conv = Conv2d::new(c, filters, kernel, self.rng)
            .with_strides(strides)
            .with_padding(padding)
            .without_bias();
        let x = self.add(None, "conv2d", conv, &[x])?;
        let bn = BatchNorm::new(filters).without_scale().with_momentum(0.99).with_epsilon(1e-3);
        let x = self.add(None, "batch_normalization", bn, &[x])?;
        self.add(None, "activation", ActivationLayer::new(Activation::Relu), &[x])
    }

    fn conv(&mut self, x: NodeId, filters: usize, kh: usize, kw: usize) -> Result<NodeId> {
        self.conv_bn(x, filters, [kh, kw], [1, 1], Padding::Same)
    }

    fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.add(None, "max_pooling2d", Pool::max2d([3, 3], [2, 2], Padding::Valid), &[x])
    }

    fn avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.add(None, "average_pooling2d", Pool::avg2d([3, 3], [1, 1], Padding::Same), &[x])
    }

    fn concat(&mut self, name: Option<&str>, inputs: &[NodeId]) -> Result<NodeId> {
        self.add(name, "concatenate", Concat::new(), inputs)
    }

    fn inception_v3(&mut self, input: NodeId) -> Result<NodeId> {
        let mut x = self.conv_bn(input, 32, [3, 3], [2, 2], Padding::Valid)?;
        x = self.conv_bn(x, 32, [3, 3], [1, 1], Padding::Valid)?;
        x = self.conv(x, 64, 3, 3)?;
        x = self.max_pool(x)?;
        x = self.conv_bn(x, 80, [1, 1], [1, 1], Padding::Valid)?;
        x = self.conv_bn(x, 192, [3, 3], [1, 1], Padding::Valid)?;
        x = self.max_pool(x)?;

        // mixed 0-2: 35x35 blocks at the reference resolution
        for (i, pool_filters) in [32, 64, 64].into_iter().enumerate() {
            let b1 = self.conv(x, 64, 1, 1)?;
            let b5 = self.conv(x, 48, 1, 1)?;
            let b5 = self.conv(b5, 64, 5, 5)?;
            let b3 = self.conv(x, 64, 1, 1)?;
            let b3 = self.conv(b3, 96, 3, 3)?;
            let b3 = self.conv(b3, 96, 3, 3)?;
            let bp = self.avg_pool(x)?;
            let bp = self.conv(bp, pool_filters, 1, 1)?;
            x = self.concat(Some(&format!("mixed{i}")), &[b1, b5, b3, bp])?;
        }

        // mixed 3: grid reduction
        let b3 = self.conv_bn(x, 384, [3, 3], [2, 2], Padding::Valid)?;
        let bd = self.conv(x, 64, 1, 1)?;
        let bd = self.conv(bd, 96, 3, 3)?;
        let bd = self.conv_bn(bd, 96, [3, 3], [2, 2], Padding::Valid)?;
        let bp = self.max_pool(x)?;
        x = self.concat(Some("mixed3"), &[b3, bd, bp])?;

        // mixed 4-7: factorized 7x7
        for (i, width) in [128, 160, 160, 192].into_iter().enumerate() {
            let b1 = self.conv(x, 192, 1, 1)?;
            let b7 = self.conv(x, width, 1, 1)?;
            let b7 = self.conv(b7, width, 1, 7)?;
            let b7 = self.conv(b7, 192, 7, 1)?;
            let bd = self.conv(x, width, 1, 1)?;
            let bd = self.conv(bd, width, 7, 1)?;
            let bd = self.conv(bd, width, 1, 7)?;
            let bd = self.conv(bd, width, 7, 1)?;
            let bd = self.conv(bd, 192, 1, 7)?;
            let bp = self.avg_pool(x)?;
            let bp = self.conv(bp, 192, 1, 1)?;
            x = self.concat(Some(&format!("mixed{}", 4 + i)), &[b1, b7, bd, bp])?;
        }

        // mixed 8: grid reduction
        let b3 = self.conv(x, 192, 1, 1)?;
        let b3 = self.conv_bn(b3, 320, [3, 3], [2, 2], Padding::Valid)?;
        let b7 = self.conv(x, 192, 1, 1)?;
        let b7 = self.conv(b7, 192, 1, 7)?;
        let b7 = self.conv(b7, 192, 7, 1)?;
        let b7 = self.conv_bn(b7, 192, [3, 3], [2, 2], Padding::Valid)?;
        let bp = self.max_pool(x)?;
        x = self.concat(Some("mixed8"), &[b3, b7, bp])?;

        // mixed 9-10: expanded filter banks
        for i in 0..2 {
            let b1 = self.conv(x, 320, 1, 1)?;
            let b3 = self.conv(x, 384, 1, 1)?;
            let b3a = self.conv(b3, 384, 1, 3)?;
            let b3b = self.conv(b3, 384, 3, 1)?;
            let b3 = self.concat(Some(&format!("mixed9_{i}")), &[b3a, b3b])?;
            let bd = self.conv(x, 448, 1, 1)?;
            let bd = self.conv(bd, 384, 3, 3)?;
            let bda = self.conv(bd, 384, 1, 3)?;
            let bdb = self.conv(bd, 384, 3, 1)?;
            let bd = self.concat(None, &[bda, bdb])?;
            let bp = self.avg_pool(x)?;
            let bp = self.conv(bp, 192, 1, 1)?;
            x = self.concat(Some(&format!("mixed{}", 9 + i)), &[b1, b3, bd, bp])?;
        }
        Ok(x)
    }

    // --- MobileNetV2 (alpha 1.0) -------------------------------------------

    fn bn6(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let c = self.channels(x);
        self.add(Some(name), "", BatchNorm::new(c).with_momentum(0.999).with_epsilon(1e-3), &[x])
    }

    fn relu6(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(Some(name), "", ActivationLayer::new(Activation::Relu6), &[x])
    }

    fn pointwise(&mut self, name: &str, x: NodeId, filters: usize) -> Result<NodeId> {
        let c = self.channels(x);
        let conv = Conv2d::new(c, filters, [1, 1], self.rng).without_bias();
        self.add(Some(name), "", conv, &[x])
    }

    fn inverted_residual(&mut self, input: NodeId, block: usize, filters: usize, stride: usize, expansion: usize) -> Result<NodeId> {
        let in_channels = self.channels(input);
        let mut x = input;
        let prefix = if block == 0 {
            "expanded_conv_".to_string()
        } else {
            let prefix = format!("block_{block}_");
            x = self.pointwise(&format!("{prefix}expand"), x, expansion * in_channels)?;
            x = self.bn6(&format!("{prefix}expand_BN"), x)?;
            x = self.relu6(&format!("{prefix}expand_relu"), x)?;
            prefix
        };
        let padding = if stride == 2 {
            // Pad so the strided valid depthwise conv covers the input like TF's "same".
            let s = self.b.shape(x);
            let (top, left) = (s[1] % 2, s[2] % 2);
            let pad = ZeroPad2d::new([top, 1, left, 1]);
            x = self.add(Some(&format!("{prefix}pad")), "", pad, &[x])?;
            Padding::Valid
        } else {
            Padding::Same
        };
        let c = self.channels(x);
        let dw = DepthwiseConv2d::new(c, [3, 3], self.rng)
            .with_strides([stride, stride])
            .with_padding(padding);
        x = self.add(Some(&format!("{prefix}depthwise")), "", dw, &[x])?;
        x = self.bn6(&format!("{prefix}depthwise_BN"), x)?;
        x = self.relu6(&format!("{prefix}depthwise_relu"), x)?;
        x = self.pointwise(&format!("{prefix}project"), x, filters)?;
        x = self.bn6(&format!("{prefix}project_BN"), x)?;
        if in_channels == filters && stride == 1 {
            x = self.add(Some(&format!("{prefix}add")), "", Add::new(), &[input, x])?;
        }
        Ok(x)
    }

    fn mobilenet_v2(&mut self, input: NodeId) -> Result<NodeId> {
        let conv = Conv2d::new(self.channels(input), 32, [3, 3], self.rng)
            .with_strides([2, 2])
            .with_padding(Padding::Same)
            .without_bias();
        let mut x = self.add(Some("Conv1"), "", conv, &[input])?;
        x = self.bn6("bn_Conv1", x)?;
        x = self.relu6("Conv1_relu", x)?;
        // (filters, stride, expansion) per block
        const BLOCKS: [(usize, usize, usize); 17] = [
            (16, 1, 1),
            (24, 2, 6),
            (24, 1, 6),
            (32, 2, 6),
            (32, 1, 6),
            (32, 1, 6),
            (64, 2, 6),
            (64, 1, 6),
            (64, 1, 6),
            (64, 1, 6),
            (96, 1, 6),
            (96, 1, 6),
            (96, 1, 6),
            (160, 2, 6),
            (160, 1, 6),
            (160, 1, 6),
            (320, 1, 6),
        ];
        for (block, &(filters, stride, expansion)) in BLOCKS.iter().enumerate() {
            x = self.inverted_residual(x, block, filters, stride, expansion)?;
        }
        x = self.pointwise("Conv_1", x, 1280)?;
        x = self.bn6("Conv_1_bn", x)?;
        self.relu6("out_relu", x)
    }
}
