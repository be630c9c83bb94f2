//! The segmentation network: a nested-U encoder–decoder built from RSU
//! blocks, with seven encoder stages, six decoder stages, a side-output
//! head per decoder stage (plus the deepest encoder stage), and a 1x1
//! fusion over the concatenated side logits.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::model::SegmentationModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

use super::rsu::{conv_weight_init, RsuBlock};

/// Architecture hyperparameters. Channel widths scale from `base_channels`
/// with the doubling pattern `out[i] = base · min(2^i, 8)`; decoder widths
/// halve back down, floored at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub input_size: (usize, usize),
    /// Encoder stage count; the matching decoder has one stage fewer.
    pub num_encoder_stages: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_classes: 2,
            in_channels: 3,
            base_channels: 64,
            input_size: (256, 256),
            num_encoder_stages: 7,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale configuration used by the synthetic dataset tests.
    pub fn toy() -> Self {
        Self { base_channels: 8, input_size: (64, 64), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_encoder_stages;
        if !(3..=8).contains(&n) {
            return Err(Error::Config(format!("encoder stage count {n} outside 3..=8")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2 (softmax over classes)".into()));
        }
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::Config(format!("in_channels {} must be 1 or 3", self.in_channels)));
        }
        if self.base_channels < 4 {
            return Err(Error::Config("base_channels must be at least 4".into()));
        }
        let div = 1usize << (n - 1);
        let (h, w) = self.input_size;
        if h % div != 0 || w % div != 0 || h < div || w < div {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by {div} for the {n}-stage downsampling path"
            )));
        }
        Ok(())
    }
}

struct StageSpec {
    height: usize,
    dilated: bool,
    in_ch: usize,
    mid_ch: usize,
    out_ch: usize,
    resolution: (usize, usize),
}

struct StagePlan {
    enc: Vec<StageSpec>,
    dec: Vec<StageSpec>,
}

fn plan_stages(cfg: &NetworkConfig) -> StagePlan {
    let n = cfg.num_encoder_stages;
    let b = cfg.base_channels;
    let (h, w) = cfg.input_size;

    let enc_out: Vec<usize> = (0..n).map(|i| b * (1usize << i).min(8)).collect();
    let enc_mid: Vec<usize> = (0..n)
        .map(|i| {
            let src = if i == 0 { b } else { enc_out[i - 1] };
            (src / 2).max(1)
        })
        .collect();
    // Heights N+1−i down to 4, with the last two stages dilated.
    let enc_height = |i: usize| -> (usize, bool) {
        if i >= n - 2 {
            (4, true)
        } else {
            (n + 1 - i, false)
        }
    };

    let enc: Vec<StageSpec> = (0..n)
        .map(|i| {
            let (height, dilated) = enc_height(i);
            StageSpec {
                height,
                dilated,
                in_ch: if i == 0 { cfg.in_channels } else { enc_out[i - 1] },
                mid_ch: enc_mid[i],
                out_ch: enc_out[i],
                resolution: (h >> i, w >> i),
            }
        })
        .collect();

    // Decoder stage j (1-based, De_1 shallow .. De_{n-1} deep) mirrors
    // encoder stage j−1. Output widths halve from the deepest (8b) down,
    // floored at b; mids halve from 4b, floored at b/4.
    let mut dec_out = vec![0usize; n - 1];
    let mut dec_mid = vec![0usize; n - 1];
    for j in (0..n - 1).rev() {
        dec_out[j] = if j == n - 2 { enc_out[n - 1] } else { (dec_out[j + 1] / 2).max(b) };
        dec_mid[j] = if j == n - 2 {
            (enc_out[n - 1] / 2).max(1)
        } else {
            (dec_mid[j + 1] / 2).max((b / 4).max(1))
        };
    }
    let dec: Vec<StageSpec> = (0..n - 1)
        .map(|j| {
            let (height, dilated) = enc_height(j);
            let below = if j == n - 2 { enc_out[n - 1] } else { dec_out[j + 1] };
            StageSpec {
                height,
                dilated,
                in_ch: below + enc_out[j],
                mid_ch: dec_mid[j],
                out_ch: dec_out[j],
                resolution: (h >> j, w >> j),
            }
        })
        .collect();

    StagePlan { enc, dec }
}

#[derive(Debug, Clone)]
struct SideHead {
    w: ParamId,
    b: ParamId,
}

/// One recorded forward pass: the graph plus the probability node ids, so
/// losses can seed gradients directly at the softmax outputs.
pub struct ForwardPass<T: Scalar> {
    pub graph: Graph<T>,
    /// Side probability maps S1..S7 at input resolution.
    pub side_probs: Vec<NodeId>,
    pub fused_probs: NodeId,
}

/// Extracted output tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct NetworkOutputs<T: Scalar> {
    pub side_probs: Vec<Tensor4<T>>,
    pub fused_probs: Tensor4<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn outputs(&self) -> NetworkOutputs<T> {
        NetworkOutputs {
            side_probs: self.side_probs.iter().map(|&id| self.graph.value(id).clone()).collect(),
            fused_probs: self.graph.value(self.fused_probs).clone(),
        }
    }
}

/// The full network with its parameter store.
#[derive(Debug, Clone)]
pub struct U2NetPlus<T: Scalar> {
    pub config: NetworkConfig,
    params: ParamStore<T>,
    enc: Vec<RsuBlock>,
    dec: Vec<RsuBlock>,
    side: Vec<SideHead>,
    fuse_w: ParamId,
    fuse_b: ParamId,
}

impl<T: Scalar> U2NetPlus<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = plan_stages(&config);
        let mut params = ParamStore::new();
        let mut rng = crate::rng::stream(seed, "init", 0, 0);

        let enc: Vec<RsuBlock> = plan
            .enc
            .iter()
            .enumerate()
            .map(|(i, s)| {
                RsuBlock::new(
                    &mut params,
                    &mut rng,
                    &format!("en{}", i + 1),
                    s.height,
                    s.dilated,
                    s.in_ch,
                    s.mid_ch,
                    s.out_ch,
                    s.resolution,
                )
            })
            .collect();
        let dec: Vec<RsuBlock> = plan
            .dec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                RsuBlock::new(
                    &mut params,
                    &mut rng,
                    &format!("de{}", j + 1),
                    s.height,
                    s.dilated,
                    s.in_ch,
                    s.mid_ch,
                    s.out_ch,
                    s.resolution,
                )
            })
            .collect();

        // Side heads: De_1..De_{n-1} then En_n, 3x3 convs with bias.
        let p = config.num_classes;
        let mut side_sources: Vec<usize> = plan.dec.iter().map(|s| s.out_ch).collect();
        side_sources.push(plan.enc[config.num_encoder_stages - 1].out_ch);
        let side: Vec<SideHead> = side_sources
            .iter()
            .enumerate()
            .map(|(i, &ch)| {
                let w = params.add_param(format!("side{}.weight", i + 1), conv_weight_init(&mut rng, p, ch, 3));
                let bound = 1.0 / ((ch * 9) as f64).sqrt();
                let b = params.add_param(
                    format!("side{}.bias", i + 1),
                    ArrayD::from_shape_fn(ndarray::IxDyn(&[p]), |_| T::of(rand::Rng::gen_range(&mut rng, -bound..bound))),
                );
                SideHead { w, b }
            })
            .collect();

        let fuse_in = side.len() * p;
        let fuse_w = params.add_param("fuse.weight", conv_weight_init(&mut rng, p, fuse_in, 1));
        let bound = 1.0 / (fuse_in as f64).sqrt();
        let fuse_b = params.add_param(
            "fuse.bias",
            ArrayD::from_shape_fn(ndarray::IxDyn(&[p]), |_| T::of(rand::Rng::gen_range(&mut rng, -bound..bound))),
        );

        Ok(Self { config, params, enc, dec, side, fuse_w, fuse_b })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Records one forward pass. Probabilities come from per-pixel softmax
    /// over the upsampled side logits and the fused logits.
    pub fn forward(&mut self, batch: &Tensor4<T>, mode: Mode) -> Result<ForwardPass<T>> {
        let (_, c, h, w) = batch.dim();
        if (h, w) != self.config.input_size || c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "batch {c}x{h}x{w} does not match configured input {}x{:?}",
                self.config.in_channels, self.config.input_size
            )));
        }
        let n = self.config.num_encoder_stages;
        let params = &mut self.params;
        let mut g = Graph::new();
        let input = g.input(batch.clone());

        let mut skips = Vec::with_capacity(n);
        let mut cur = input;
        for (i, stage) in self.enc.iter().enumerate() {
            let y = stage.forward(&mut g, cur, mode, params);
            skips.push(y);
            if i + 1 < n {
                cur = g.max_pool2(y);
            }
        }

        let mut dec_outs = vec![None; n - 1];
        let mut below = skips[n - 1];
        for j in (0..n - 1).rev() {
            let (_, _, th, tw) = g.value(skips[j]).dim();
            let up = g.upsample_bilinear(below, th, tw);
            let cat = g.concat(&[up, skips[j]]);
            let out = self.dec[j].forward(&mut g, cat, mode, params);
            dec_outs[j] = Some(out);
            below = out;
        }

        let mut side_logits = Vec::with_capacity(self.side.len());
        for (i, head) in self.side.iter().enumerate() {
            let src = if i < n - 1 { dec_outs[i].unwrap() } else { skips[n - 1] };
            let logit = g.conv2d(src, head.w, Some(head.b), 1, params);
            side_logits.push(g.upsample_bilinear(logit, h, w));
        }
        let fused_cat = g.concat(&side_logits);
        let fused_logit = g.conv2d(fused_cat, self.fuse_w, Some(self.fuse_b), 1, params);

        let side_probs: Vec<NodeId> = side_logits.iter().map(|&l| g.softmax_channels(l)).collect();
        let fused_probs = g.softmax_channels(fused_logit);
        Ok(ForwardPass { graph: g, side_probs, fused_probs })
    }
}

impl<T: Scalar> SegmentationModel<T> for U2NetPlus<T> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict_probs(&mut self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        let pass = self.forward(batch, Mode::Eval)?;
        Ok(pass.graph.value(pass.fused_probs).clone())
    }
}
