//! Gradient checks of every differentiable graph operation.

use super::*;
use pamsr::loss::{perceptual_loss, FeatureNet, Layer};
use pamsr::model::SeWeights;
use pamsr::tensor::Padding;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn conv2d_all_geometries() -> Vec<GradReport> {
    let mut out = Vec::new();
    let mut r = rng(1);
    for (k, stride, same, side, cin, cout) in [
        (3, 1, true, 6, 2, 3),
        (3, 2, true, 7, 2, 2),
        (5, 1, false, 7, 1, 2),
        (3, 2, false, 8, 3, 2),
        (1, 1, true, 4, 3, 4),
        (9, 1, true, 5, 1, 2),
    ] {
        let x = random_tensor(&mut r, &[side, side + 1, cin], -1.0, 1.0);
        let w = random_tensor(&mut r, &[k, k, cin, cout], -0.5, 0.5);
        let b = random_tensor(&mut r, &[cout], -0.5, 0.5);
        let pad = if same { Padding::SameReplicate } else { Padding::Valid };
        out.push(gradcheck(
            &format!("conv k{k} s{stride} same={same}"),
            &[x, w, b],
            &[],
            |g, v| g.conv2d(v[0], v[1], v[2], stride, pad).unwrap(),
            |xs| conv2d(&xs[0], &xs[1], &xs[2], stride, same),
            400,
            k as u64,
        ));
    }
    out
}

pub fn dense_layer() -> Vec<GradReport> {
    let mut out = Vec::new();
    let mut r = rng(2);
    let x = random_tensor(&mut r, &[5], -1.0, 1.0);
    let w = random_tensor(&mut r, &[5, 3], -1.0, 1.0);
    let b = random_tensor(&mut r, &[3], -1.0, 1.0);
    out.push(gradcheck(
        "dense",
        &[x, w, b],
        &[],
        |g, v| g.dense(v[0], v[1], v[2]).unwrap(),
        |xs| dense(&xs[0], &xs[1], &xs[2]),
        100,
        2,
    ));
    out
}

pub fn activations() -> Vec<GradReport> {
    let mut out = Vec::new();
    let mut r = rng(3);
    let x = away_from_zero(&mut r, &[4, 3, 2], 0.05, 2.0);
    out.push(gradcheck(
        "relu",
        std::slice::from_ref(&x),
        &[],
        |g, v| g.relu(v[0]),
        |xs| relu(&xs[0]),
        100,
        3,
    ));
    out.push(gradcheck(
        "sigmoid",
        std::slice::from_ref(&x),
        &[],
        |g, v| g.sigmoid(v[0]),
        |xs| sigmoid(&xs[0]),
        100,
        4,
    ));
    out.push(gradcheck(
        "tanh",
        std::slice::from_ref(&x),
        &[],
        |g, v| g.tanh(v[0]),
        |xs| tanh(&xs[0]),
        100,
        5,
    ));
    let a = random_tensor(&mut r, &[2], 0.1, 0.4);
    out.push(gradcheck(
        "prelu",
        &[x, a],
        &[],
        |g, v| g.prelu(v[0], v[1]).unwrap(),
        |xs| prelu(&xs[0], &xs[1]),
        100,
        6,
    ));
    out
}

pub fn resampling_and_pooling() -> Vec<GradReport> {
    let mut out = Vec::new();
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[3, 4, 2], -1.0, 1.0);
    out.push(gradcheck(
        "upsample",
        &[x],
        &[],
        |g, v| g.upsample_nn2x(v[0]).unwrap(),
        |xs| upsample2x(&xs[0]),
        100,
        7,
    ));
    // Distinct values with gaps far larger than the probe step.
    let n = 4 * 6 * 2;
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - 1.0).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut r);
    let x = Tensor::new([4, 6, 2], vals).unwrap();
    out.push(gradcheck(
        "maxpool",
        &[x],
        &[],
        |g, v| g.maxpool2x2(v[0]).unwrap(),
        |xs| maxpool2x2(&xs[0]),
        100,
        8,
    ));
    let x = random_tensor(&mut r, &[3, 5, 4], -1.0, 1.0);
    out.push(gradcheck(
        "global_avg_pool",
        &[x],
        &[],
        |g, v| g.global_avg_pool(v[0]).unwrap(),
        |xs| global_avg_pool(&xs[0]),
        100,
        9,
    ));
    out
}

pub fn elementwise_combinators() -> Vec<GradReport> {
    let mut out = Vec::new();
    let mut r = rng(5);
    let x = random_tensor(&mut r, &[3, 3, 4], -1.0, 1.0);
    let y = random_tensor(&mut r, &[3, 3, 4], -1.0, 1.0);
    let s = random_tensor(&mut r, &[4], -1.0, 1.0);
    out.push(gradcheck(
        "channel_scale",
        &[x.clone(), s],
        &[],
        |g, v| g.channel_scale(v[0], v[1]).unwrap(),
        |xs| channel_scale(&xs[0], &xs[1]),
        100,
        10,
    ));
    out.push(gradcheck(
        "add",
        &[x.clone(), y.clone()],
        &[],
        |g, v| g.add(v[0], v[1]).unwrap(),
        |xs| add(&xs[0], &xs[1]),
        100,
        11,
    ));
    out.push(gradcheck(
        "scale",
        std::slice::from_ref(&x),
        &[],
        |g, v| g.scale(v[0], -1.7),
        |xs| scale(&xs[0], -1.7f32 as f64),
        100,
        12,
    ));
    out.push(gradcheck(
        "sum",
        std::slice::from_ref(&x),
        &[],
        |g, v| g.sum(v[0]),
        |xs| sum(&xs[0]),
        100,
        13,
    ));
    let one = random_tensor(&mut r, &[3, 4, 1], -1.0, 1.0);
    let offsets = [0.3f32, -1.2, 0.0];
    out.push(gradcheck(
        "affine_expand",
        &[one],
        &[],
        |g, v| g.affine_expand(v[0], 2.5, &offsets).unwrap(),
        |xs| affine_expand(&xs[0], 2.5, &offsets.map(|o| o as f64)),
        100,
        14,
    ));
    // Both arguments of the reduction itself, through a further mse.
    out.push(gradcheck(
        "mse_reduce",
        &[x, y],
        &[],
        |g, v| g.mse_reduce(v[0], v[1]).unwrap(),
        |xs| R::new(vec![1], vec![mse(&xs[0], &xs[1])]),
        100,
        15,
    ));
    out
}

pub fn squeeze_excitation_block() -> Vec<GradReport> {
    let mut out = Vec::new();
    let mut r = rng(6);
    let (c, hdim) = (8, 2);
    let inputs = [
        random_tensor(&mut r, &[4, 4, c], -1.0, 1.0),
        random_tensor(&mut r, &[c, hdim], -1.0, 1.0),
        random_tensor(&mut r, &[hdim], 0.2, 0.5),
        random_tensor(&mut r, &[hdim, c], -1.0, 1.0),
        random_tensor(&mut r, &[c], -0.5, 0.5),
    ];
    out.push(gradcheck(
        "se_block",
        &inputs,
        &[],
        |g, v| {
            let w = SeWeights {
                fc1_weight: v[1],
                fc1_bias: v[2],
                fc2_weight: v[3],
                fc2_bias: v[4],
            };
            pamsr::model::se_block(g, v[0], &w, c / hdim).unwrap()
        },
        |xs| se_block(&xs[0], &xs[1], &xs[2], &xs[3], &xs[4]),
        200,
        16,
    ));
    out
}

pub fn perceptual_loss_through_feature_net() -> Vec<GradReport> {
    let mut out = Vec::new();
    let net = FeatureNet::seeded(
        vec![
            Layer::Conv("a".into()),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv("b".into()),
            Layer::Relu,
        ],
        &[4, 3],
        3,
        pamsr::loss::Preprocess {
            gain: 1.5,
            offset: 0.2,
            channel_means: vec![0.1, -0.3],
        },
        7,
    )
    .unwrap();
    let mut r = rng(7);
    let pred = random_tensor(&mut r, &[8, 8, 1], -1.0, 1.0);
    let gt = random_tensor(&mut r, &[8, 8, 1], -1.0, 1.0);
    let w = |n: &str| R::from_tensor(&net.weights()[n]);
    let feats = |x: &R| {
        let x = affine_expand(x, 1.5f32 as f64, &[(0.2f32 - 0.1f32) as f64, (0.2f32 + 0.3f32) as f64]);
        let x = relu(&conv2d(&x, &w("a.weight"), &w("a.bias"), 1, true));
        let x = maxpool2x2(&x);
        relu(&conv2d(&x, &w("b.weight"), &w("b.bias"), 1, true))
    };
    let report = gradcheck(
        "perceptual",
        &[pred, gt],
        &[1],
        |g, v| perceptual_loss(g, v[0], v[1], &net).unwrap(),
        |xs| R::new(vec![1], vec![mse(&feats(&xs[0]), &feats(&xs[1]))]),
        64,
        17,
    );
    out.push(report);
    out
}

/// Every group above, labelled.
pub fn all() -> Vec<(&'static str, Vec<GradReport>)> {
    vec![
        ("conv2d_all_geometries", conv2d_all_geometries()),
        ("dense_layer", dense_layer()),
        ("activations", activations()),
        ("resampling_and_pooling", resampling_and_pooling()),
        ("elementwise_combinators", elementwise_combinators()),
        ("squeeze_excitation_block", squeeze_excitation_block()),
        (
            "perceptual_loss_through_feature_net",
            perceptual_loss_through_feature_net(),
        ),
    ]
}
