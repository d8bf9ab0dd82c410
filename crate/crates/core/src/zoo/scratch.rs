use super::{dense_tail, input_builder, recurrent_head, ModelSpec};
use crate::data::FRAMES;
use crate::error::Result;
use crate::nn::layers::{Activation, BatchNorm, Conv2d, Conv3d, Flatten, FoldTime, Padding, Pool, UnfoldTime};
use crate::nn::{Graph, LayerGroup};
use crate::seed::{derive_seed, rng, INIT};

/// conv3d(32) → pool → bn → conv3d(64) → pool → bn → flatten → dense → dropout → softmax.
pub(super) fn cnn3d(spec: &ModelSpec, seed: u64) -> Result<Graph> {
    let mut rng = rng(derive_seed(seed, INIT));
    let mut b = input_builder();
    let mut x = crate::nn::NodeId::Input;
    for filters in [32, 64] {
        let channels = *b.shape(x).last().expect("rank >= 1");
        let conv = Conv3d::new(channels, filters, [3, 3, 3], &mut rng)
            .with_padding(Padding::Same)
            .with_activation(Activation::Relu)
            .with_l2(spec.l2_strength);
        let name = b.auto_name("conv3d");
        x = b.add(name, conv, &[x], LayerGroup::Head)?;
        let name = b.auto_name("max_pooling3d");
        x = b.add(name, Pool::max3d([2; 3], [2; 3], Padding::Valid), &[x], LayerGroup::Head)?;
        let name = b.auto_name("batch_normalization");
        x = b.add(name, BatchNorm::new(filters), &[x], LayerGroup::Head)?;
    }
    let name = b.auto_name("flatten");
    x = b.add(name, Flatten::new(), &[x], LayerGroup::Head)?;
    let out = dense_tail(&mut b, spec, seed, &mut rng, x, spec.l2_strength)?;
    b.build(out)
}

/// Per frame: conv(64) → bn → pool → conv(128) → bn → pool → flatten; then the recurrent head.
pub(super) fn cnn2d_bilstm(spec: &ModelSpec, seed: u64) -> Result<Graph> {
    let mut rng = rng(derive_seed(seed, INIT));
    let mut b = input_builder();
    let name = b.auto_name("fold_time");
    let mut x = b.add(name, FoldTime::new(FRAMES), &[crate::nn::NodeId::Input], LayerGroup::Wrapper)?;
    for filters in [64, 128] {
        let channels = *b.shape(x).last().expect("rank >= 1");
        let conv = Conv2d::new(channels, filters, [3, 3], &mut rng)
            .with_padding(Padding::Same)
            .with_activation(Activation::Relu)
            .with_l2(spec.l2_strength);
        let name = b.auto_name("conv2d");
        x = b.add(name, conv, &[x], LayerGroup::Head)?;
        let name = b.auto_name("batch_normalization");
        x = b.add(name, BatchNorm::new(filters), &[x], LayerGroup::Head)?;
        let name = b.auto_name("max_pooling2d");
        x = b.add(name, Pool::max2d([2, 2], [2, 2], Padding::Valid), &[x], LayerGroup::Head)?;
    }
    let name = b.auto_name("flatten");
    x = b.add(name, Flatten::new(), &[x], LayerGroup::Head)?;
    let name = b.auto_name("unfold_time");
    x = b.add(name, UnfoldTime::new(FRAMES), &[x], LayerGroup::Wrapper)?;
    let out = recurrent_head(&mut b, spec, seed, &mut rng, x)?;
    b.build(out)
}
