//! Residual U-blocks: a mini encoder–decoder (height `L`) whose output adds
//! back onto a same-size input projection. The dilated variant keeps full
//! resolution and grows dilation with depth instead of pooling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BufId, Graph, Mode, NodeId, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Conv3x3 + batch norm + ReLU. The convolution carries no bias; the
/// following normalization would cancel it.
#[derive(Debug, Clone)]
pub struct RebnConv {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufId,
    running_var: BufId,
    dilation: usize,
}

pub(crate) fn conv_weight_init<T: Scalar, R: Rng>(
    rng: &mut R,
    out_ch: usize,
    in_ch: usize,
    k: usize,
) -> ndarray::ArrayD<T> {
    let fan_in = (in_ch * k * k) as f64;
    let bound = 1.0 / fan_in.sqrt();
    ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[out_ch, in_ch, k, k]), |_| {
        T::of(rng.gen_range(-bound..bound))
    })
}

impl RebnConv {
    pub fn new<T: Scalar>(
        params: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        dilation: usize,
    ) -> Self {
        let w = params.add_param(format!("{name}.conv.weight"), conv_weight_init(rng, out_ch, in_ch, 3));
        let gamma = params.add_param(format!("{name}.bn.weight"), ndarray::ArrayD::from_elem(ndarray::IxDyn(&[out_ch]), T::one()));
        let beta = params.add_param(format!("{name}.bn.bias"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_ch])));
        let running_mean = params.add_buffer(format!("{name}.bn.running_mean"), ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_ch])));
        let running_var = params.add_buffer(format!("{name}.bn.running_var"), ndarray::ArrayD::from_elem(ndarray::IxDyn(&[out_ch]), T::one()));
        Self { w, gamma, beta, running_mean, running_var, dilation }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, mode: Mode, params: &mut ParamStore<T>) -> NodeId {
        let c = g.conv2d(x, self.w, None, self.dilation, params);
        g.batch_norm_relu(c, self.gamma, self.beta, self.running_mean, self.running_var, mode, params)
    }
}

/// Caps a dilation so a 3x3 kernel can keep all taps inside an `s`-pixel
/// map; at 1-pixel maps the off-center taps are unreachable regardless.
fn cap_dilation(nominal: usize, min_side: usize) -> usize {
    nominal.min(min_side.saturating_sub(1)).max(1)
}

/// One residual U-block.
///
/// Plain variant (height `L >= 2`): `L−1` encoder convs separated by 2x2
/// pooling, a dilation-2 bottom conv, and a mirrored decoder with bilinear
/// upsampling; the result adds onto the input projection.
///
/// Dilated variant (`RSU-xF`): no resampling; encoder dilations grow as
/// 1, 2, 4, 8 (capped to the map size) and the decoder mirrors them.
#[derive(Debug, Clone)]
pub struct RsuBlock {
    pub height: usize,
    pub dilated: bool,
    convin: RebnConv,
    enc: Vec<RebnConv>,
    bottom: RebnConv,
    dec: Vec<RebnConv>,
}

impl RsuBlock {
    /// `resolution` is the spatial size of this block's input feature map;
    /// it fixes dilation caps and validates the pooling depth.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        height: usize,
        dilated: bool,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        resolution: (usize, usize),
    ) -> Self {
        assert!(height >= 2, "RSU height must be at least 2");
        let (h, w) = resolution;
        let convin = RebnConv::new(params, rng, &format!("{name}.convin"), in_ch, out_ch, 1);

        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let bottom;
        if dilated {
            for level in 0..height - 1 {
                let dil = cap_dilation(1 << level, h.min(w));
                let ic = if level == 0 { out_ch } else { mid_ch };
                enc.push(RebnConv::new(params, rng, &format!("{name}.enc{}", level + 1), ic, mid_ch, dil));
            }
            bottom = RebnConv::new(
                params,
                rng,
                &format!("{name}.bottom"),
                mid_ch,
                mid_ch,
                cap_dilation(1 << (height - 1), h.min(w)),
            );
            for level in (0..height - 1).rev() {
                let dil = cap_dilation(1 << level, h.min(w));
                let oc = if level == 0 { out_ch } else { mid_ch };
                dec.push(RebnConv::new(params, rng, &format!("{name}.dec{}", level + 1), mid_ch * 2, oc, dil));
            }
        } else {
            assert!(
                h % (1 << (height - 2)) == 0 && w % (1 << (height - 2)) == 0,
                "RSU-{height} needs {h}x{w} divisible by {}",
                1 << (height - 2)
            );
            for level in 0..height - 1 {
                let ic = if level == 0 { out_ch } else { mid_ch };
                enc.push(RebnConv::new(params, rng, &format!("{name}.enc{}", level + 1), ic, mid_ch, 1));
            }
            let deepest = (h.min(w)) >> (height - 2);
            bottom = RebnConv::new(params, rng, &format!("{name}.bottom"), mid_ch, mid_ch, cap_dilation(2, deepest));
            for level in (0..height - 1).rev() {
                let oc = if level == 0 { out_ch } else { mid_ch };
                dec.push(RebnConv::new(params, rng, &format!("{name}.dec{}", level + 1), mid_ch * 2, oc, 1));
            }
        }
        Self { height, dilated, convin, enc, bottom, dec }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, mode: Mode, params: &mut ParamStore<T>) -> NodeId {
        let xin = self.convin.forward(g, x, mode, params);
        let mut levels = Vec::with_capacity(self.height - 1);

        let mut cur = xin;
        for (i, conv) in self.enc.iter().enumerate() {
            let y = conv.forward(g, cur, mode, params);
            levels.push(y);
            cur = if !self.dilated && i + 1 < self.enc.len() { g.max_pool2(y) } else { y };
        }
        let mut d = self.bottom.forward(g, cur, mode, params);

        for (i, conv) in self.dec.iter().enumerate() {
            let level = self.height - 2 - i;
            let cat = g.concat(&[d, levels[level]]);
            d = conv.forward(g, cat, mode, params);
            if !self.dilated && level > 0 {
                let (_, _, th, tw) = g.value(levels[level - 1]).dim();
                d = g.upsample_bilinear(d, th, tw);
            }
        }
        g.add(xin, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;
    use rand::Rng;

    fn forward_block(height: usize, dilated: bool, res: usize) -> (usize, usize, usize, usize) {
        let mut params = ParamStore::<f32>::new();
        let mut rng = crate::rng::stream(3, "init", 0, 0);
        let block = RsuBlock::new(&mut params, &mut rng, "rsu", height, dilated, 3, 4, 8, (res, res));
        let mut data_rng = crate::rng::stream(4, "rsu-test", 0, 0);
        let x = Tensor4::from_shape_fn((2, 3, res, res), |_| data_rng.gen::<f32>());
        let mut g = Graph::new();
        let input = g.input(x);
        let y = block.forward(&mut g, input, Mode::Train, &mut params);
        g.value(y).dim()
    }

    #[test]
    fn rsu_preserves_spatial_shape() {
        assert_eq!(forward_block(7, false, 64), (2, 8, 64, 64));
        assert_eq!(forward_block(4, false, 16), (2, 8, 16, 16));
        assert_eq!(forward_block(4, true, 8), (2, 8, 8, 8));
        assert_eq!(forward_block(4, true, 2), (2, 8, 2, 2));
    }

    #[test]
    fn dilation_caps_respect_map_size() {
        assert_eq!(cap_dilation(8, 2), 1);
        assert_eq!(cap_dilation(8, 4), 3);
        assert_eq!(cap_dilation(8, 64), 8);
        assert_eq!(cap_dilation(2, 1), 1);
    }
}
