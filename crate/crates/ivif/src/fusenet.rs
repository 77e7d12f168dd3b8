//! The fusion network: dense-skip feature encoders per modality, an
//! attention/differential fusion block, and a decoder that reconstructs the
//! fused Y plane.
//!
//! Fusion runs in YCbCr space. `fuse_pair` enhances both inputs in RGB,
//! encodes the two enhanced Y planes, fuses them, and carries the enhanced
//! visible chroma through unchanged.
//!
//! The fusion block combines two signals: a multiplicative cross-modal
//! attention map `A = σ(conv(F_ir) ⊙ conv(F_vi))`, and a channel-gated
//! difference correction `(σ(gap(F_other − F_self)) ⊙ (F_other − F_self) +
//! F_self) ⊙ A` applied symmetrically to both branches before a 3×3 fuse
//! convolution over their concatenation.

use ndarray::{concatenate, Array1, Array2, Array3, Axis};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::illum::{enhance, EnhancerModel};
use crate::image::{self, ImageTensor};
use crate::losses::{LossKind, LossWeights};
use crate::nn::{self, Conv2d};
use crate::saliency::WeightPair;

/// Intermediate activation stack, stored channel-major (`[K, H, W]`).
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub data: Array3<f64>,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }
}

/// Which encoder branch to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Ir,
    Vi,
}

/// Architecture descriptor; `base_width` is the per-block encoder output
/// width (the fusion width is three blocks' concatenation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionArch {
    pub base_width: usize,
}

impl Default for FusionArch {
    fn default() -> Self {
        FusionArch { base_width: 16 }
    }
}

/// Pipeline switches mirrored into checkpoints so inference replays the
/// training-time configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineFlags {
    /// Enhance the visible image before fusing.
    pub enhance_vis: bool,
    /// Enhance the infrared image before fusing.
    pub enhance_ir: bool,
    /// Weight the loss target by histogram saliency (0.5/0.5 otherwise).
    pub use_stam: bool,
    /// Use the attention/differential block (plain concatenation otherwise).
    pub use_adfm: bool,
}

impl Default for PipelineFlags {
    fn default() -> Self {
        PipelineFlags { enhance_vis: true, enhance_ir: true, use_stam: true, use_adfm: true }
    }
}

/// Fusion network weights. Encoders share structure but not weights; the
/// two attention convolutions are likewise independent.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub arch: FusionArch,
    pub flags: PipelineFlags,
    pub(crate) enc_ir: Vec<Conv2d>,
    pub(crate) enc_vi: Vec<Conv2d>,
    pub(crate) att_ir: Conv2d,
    pub(crate) att_vi: Conv2d,
    pub(crate) fuse: Conv2d,
    pub(crate) dec: Vec<Conv2d>,
}

/// Gradient buffers mirroring `FusionModel`'s tensors.
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub(crate) enc_ir: Vec<Conv2d>,
    pub(crate) enc_vi: Vec<Conv2d>,
    pub(crate) att_ir: Conv2d,
    pub(crate) att_vi: Conv2d,
    pub(crate) fuse: Conv2d,
    pub(crate) dec: Vec<Conv2d>,
}

impl FusionGrads {
    /// Flattened views in the same order as `FusionModel::param_slices_mut`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for c in self
            .enc_ir
            .iter()
            .chain(self.enc_vi.iter())
            .chain([&self.att_ir, &self.att_vi, &self.fuse])
            .chain(self.dec.iter())
        {
            out.push(c.weight.as_slice().unwrap());
            out.push(c.bias.as_slice().unwrap());
        }
        out
    }

    pub(crate) fn scale(&mut self, k: f64) {
        for c in self
            .enc_ir
            .iter_mut()
            .chain(self.enc_vi.iter_mut())
            .chain([&mut self.att_ir, &mut self.att_vi, &mut self.fuse])
            .chain(self.dec.iter_mut())
        {
            c.weight.mapv_inplace(|v| v * k);
            c.bias.mapv_inplace(|v| v * k);
        }
    }
}

fn encoder_dims(bw: usize) -> [(usize, usize); 3] {
    [(1, bw), (bw, bw), (2 * bw, bw)]
}

impl FusionModel {
    pub fn init(arch: FusionArch, flags: PipelineFlags, rng: &mut ChaCha20Rng) -> Self {
        let bw = arch.base_width;
        let k = 3 * bw;
        let enc = |rng: &mut ChaCha20Rng| -> Vec<Conv2d> {
            encoder_dims(bw).iter().map(|&(i, o)| Conv2d::init(i, o, rng)).collect()
        };
        let enc_ir = enc(rng);
        let enc_vi = enc(rng);
        let att_ir = Conv2d::init(k, k, rng);
        let att_vi = Conv2d::init(k, k, rng);
        let fuse = Conv2d::init(2 * k, k, rng);
        let out_last = if bw == 0 { 0 } else { 1 };
        let mut dec = vec![
            Conv2d::init(k, 2 * bw, rng),
            Conv2d::init(2 * bw, bw, rng),
            Conv2d::init(bw, out_last, rng),
        ];
        // Inputs are illumination-enhanced, so targets sit high in [0,1];
        // start the output sigmoid near that brightness with a damped final
        // layer, otherwise the first optimizer steps march the whole
        // decoder into sigmoid saturation chasing the target mean.
        if let Some(last) = dec.last_mut() {
            last.weight.mapv_inplace(|v| 0.25 * v);
            last.bias.fill(1.7);
        }
        FusionModel { arch, flags, enc_ir, enc_vi, att_ir, att_vi, fuse, dec }
    }

    /// Zero-weight model of the given shape; used when loading checkpoints.
    pub(crate) fn zeroed(arch: FusionArch, flags: PipelineFlags) -> Self {
        let bw = arch.base_width;
        let k = 3 * bw;
        let enc = || -> Vec<Conv2d> {
            encoder_dims(bw).iter().map(|&(i, o)| Conv2d::zeros(i, o)).collect()
        };
        let out_last = if bw == 0 { 0 } else { 1 };
        FusionModel {
            arch,
            flags,
            enc_ir: enc(),
            enc_vi: enc(),
            att_ir: Conv2d::zeros(k, k),
            att_vi: Conv2d::zeros(k, k),
            fuse: Conv2d::zeros(2 * k, k),
            dec: vec![
                Conv2d::zeros(k, 2 * bw),
                Conv2d::zeros(2 * bw, bw),
                Conv2d::zeros(bw, out_last),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.all_convs().iter().map(|c| c.param_count()).sum()
    }

    fn all_convs(&self) -> Vec<&Conv2d> {
        self.enc_ir
            .iter()
            .chain(self.enc_vi.iter())
            .chain([&self.att_ir, &self.att_vi, &self.fuse])
            .chain(self.dec.iter())
            .collect()
    }

    /// Ordered named tensors for checkpointing.
    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let names = self.tensor_names();
        let mut out = Vec::new();
        for (conv, name) in self.all_convs().into_iter().zip(names) {
            let wd = conv.weight.dim();
            out.push((
                format!("{name}.weight"),
                vec![wd.0, wd.1, wd.2, wd.3],
                conv.weight.as_slice().unwrap(),
            ));
            out.push((format!("{name}.bias"), vec![conv.bias.len()], conv.bias.as_slice().unwrap()));
        }
        out
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.enc_ir.len() {
            names.push(format!("enc_ir{i}"));
        }
        for i in 0..self.enc_vi.len() {
            names.push(format!("enc_vi{i}"));
        }
        names.push("att_ir".into());
        names.push("att_vi".into());
        names.push("fuse".into());
        for i in 0..self.dec.len() {
            names.push(format!("dec{i}"));
        }
        names
    }

    /// Mutable flattened parameter views; order matches
    /// `FusionGrads::param_slices`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for c in self
            .enc_ir
            .iter_mut()
            .chain(self.enc_vi.iter_mut())
            .chain([&mut self.att_ir, &mut self.att_vi, &mut self.fuse])
            .chain(self.dec.iter_mut())
        {
            out.push(c.weight.as_slice_mut().unwrap());
            out.push(c.bias.as_slice_mut().unwrap());
        }
        out
    }

    pub fn zero_grads(&self) -> FusionGrads {
        FusionGrads {
            enc_ir: self.enc_ir.iter().map(Conv2d::zeros_like).collect(),
            enc_vi: self.enc_vi.iter().map(Conv2d::zeros_like).collect(),
            att_ir: self.att_ir.zeros_like(),
            att_vi: self.att_vi.zeros_like(),
            fuse: self.fuse.zeros_like(),
            dec: self.dec.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    /// Runs one encoder branch on a Y plane: three 3×3 + leaky-ReLU blocks
    /// where each block sees the concatenation of all previous outputs, and
    /// the returned feature stacks all three block outputs.
    pub fn extract_features(&self, y: &ImageTensor, branch: Branch) -> Result<FeatureMap> {
        let plane = y.plane()?;
        let (h, w) = plane.dim();
        if h < 3 || w < 3 {
            return Err(Error::shape(format!("encoder needs at least 3x3, got {h}x{w}")));
        }
        let x = plane_to_chw(&plane.to_owned());
        let trace = self.encode_trace(&x, branch)?;
        Ok(FeatureMap { data: trace.feature })
    }

    fn branch_convs(&self, branch: Branch) -> &[Conv2d] {
        match branch {
            Branch::Ir => &self.enc_ir,
            Branch::Vi => &self.enc_vi,
        }
    }

    fn encode_trace(&self, x: &Array3<f64>, branch: Branch) -> Result<EncTrace> {
        if self.arch.base_width == 0 {
            return Err(Error::Config("fusion network has zero width".into()));
        }
        let convs = self.branch_convs(branch);
        let z1 = convs[0].forward(x);
        let b1 = nn::leaky_relu(&z1);
        let z2 = convs[1].forward(&b1);
        let b2 = nn::leaky_relu(&z2);
        let cat2 = concatenate(Axis(0), &[b1.view(), b2.view()]).unwrap();
        let z3 = convs[2].forward(&cat2);
        let b3 = nn::leaky_relu(&z3);
        let feature = concatenate(Axis(0), &[b1.view(), b2.view(), b3.view()]).unwrap();
        Ok(EncTrace { x0: x.clone(), z: [z1, z2, z3], b1, cat2, feature })
    }

    fn encode_backward(
        &self,
        branch: Branch,
        trace: &EncTrace,
        g_feature: &Array3<f64>,
        grads: &mut [Conv2d],
        g_input: Option<&mut Array3<f64>>,
    ) {
        let convs = self.branch_convs(branch);
        let bw = self.arch.base_width;
        let mut g_b1 = g_feature.slice(ndarray::s![0..bw, .., ..]).to_owned();
        let mut g_b2 = g_feature.slice(ndarray::s![bw..2 * bw, .., ..]).to_owned();
        let g_b3 = g_feature.slice(ndarray::s![2 * bw.., .., ..]).to_owned();

        let g = nn::leaky_relu_backward(&trace.z[2], &g_b3);
        let mut g_cat2 = Array3::zeros(trace.cat2.dim());
        convs[2].backward(&trace.cat2, &g, &mut grads[2], Some(&mut g_cat2));
        g_b1 += &g_cat2.slice(ndarray::s![0..bw, .., ..]);
        g_b2 += &g_cat2.slice(ndarray::s![bw.., .., ..]);

        let g = nn::leaky_relu_backward(&trace.z[1], &g_b2);
        let mut g_b1_from2 = Array3::zeros(trace.b1.dim());
        convs[1].backward(&trace.b1, &g, &mut grads[1], Some(&mut g_b1_from2));
        g_b1 += &g_b1_from2;

        let g = nn::leaky_relu_backward(&trace.z[0], &g_b1);
        convs[0].backward(&trace.x0, &g, &mut grads[0], g_input);
    }

    /// Cross-modal attention map `σ(conv(f_ir) ⊙ conv(f_vi))`; every element
    /// lies strictly inside (0, 1).
    pub fn adfm_attention(&self, f_ir: &FeatureMap, f_vi: &FeatureMap) -> Result<FeatureMap> {
        if f_ir.data.dim() != f_vi.data.dim() {
            return Err(Error::shape("adfm_attention: feature shape mismatch"));
        }
        let za = self.att_ir.forward(&f_ir.data);
        let zb = self.att_vi.forward(&f_vi.data);
        Ok(FeatureMap { data: nn::sigmoid(&(za * zb)) })
    }

    /// Full fusion block: shared attention, both difference corrections, and
    /// the 3×3 fuse convolution over their concatenation.
    pub fn adfm_fuse(&self, f_ir: &FeatureMap, f_vi: &FeatureMap) -> Result<FeatureMap> {
        if f_ir.data.dim() != f_vi.data.dim() {
            return Err(Error::shape("adfm_fuse: feature shape mismatch"));
        }
        let att = self.adfm_attention(f_ir, f_vi)?;
        let c_ir = adfm_correct(f_ir, f_vi, &att)?;
        let c_vi = adfm_correct(f_vi, f_ir, &att)?;
        let cat = concatenate(Axis(0), &[c_ir.data.view(), c_vi.data.view()]).unwrap();
        Ok(FeatureMap { data: self.fuse.forward(&cat) })
    }

    /// Decodes a fused feature map to a Y plane in (0, 1).
    pub fn decode(&self, f_fus: &FeatureMap) -> Result<ImageTensor> {
        if f_fus.channels() != self.fuse.out_channels() {
            return Err(Error::shape(format!(
                "decode expects {} channels, got {}",
                self.fuse.out_channels(),
                f_fus.channels()
            )));
        }
        let h1 = nn::leaky_relu(&self.dec[0].forward(&f_fus.data));
        let h2 = nn::leaky_relu(&self.dec[1].forward(&h1));
        let out = nn::sigmoid(&self.dec[2].forward(&h2));
        ImageTensor::from_plane(chw_to_plane(&out))
    }

    /// Full forward pass on two Y planes, keeping every activation needed
    /// for backprop.
    pub(crate) fn forward_y_trace(
        &self,
        y_ir: &Array2<f64>,
        y_vi: &Array2<f64>,
    ) -> Result<FusionTrace> {
        if y_ir.dim() != y_vi.dim() {
            return Err(Error::shape(format!(
                "fusion inputs disagree: {:?} vs {:?}",
                y_ir.dim(),
                y_vi.dim()
            )));
        }
        let (h, w) = y_ir.dim();
        if h < 3 || w < 3 {
            return Err(Error::shape(format!("fusion needs at least 3x3 input, got {h}x{w}")));
        }
        let enc_ir = self.encode_trace(&plane_to_chw(y_ir), Branch::Ir)?;
        let enc_vi = self.encode_trace(&plane_to_chw(y_vi), Branch::Vi)?;
        let f_ir = &enc_ir.feature;
        let f_vi = &enc_vi.feature;

        let (adfm, cat) = if self.flags.use_adfm {
            let za = self.att_ir.forward(f_ir);
            let zb = self.att_vi.forward(f_vi);
            let att = nn::sigmoid(&(&za * &zb));
            let side = |f_self: &Array3<f64>, f_other: &Array3<f64>| -> AdfmSide {
                let d = f_other - f_self;
                let gap = channel_means(&d);
                let gch = gap.mapv(nn::sigmoid_scalar);
                let u = &broadcast_mul(&d, &gch) + f_self;
                let c = &u * &att;
                AdfmSide { d, gch, u, c }
            };
            let ir = side(f_ir, f_vi);
            let vi = side(f_vi, f_ir);
            let cat = concatenate(Axis(0), &[ir.c.view(), vi.c.view()]).unwrap();
            (Some(AdfmTrace { za, zb, att, ir, vi }), cat)
        } else {
            (None, concatenate(Axis(0), &[f_ir.view(), f_vi.view()]).unwrap())
        };

        let ffus = self.fuse.forward(&cat);
        let z1 = self.dec[0].forward(&ffus);
        let h1 = nn::leaky_relu(&z1);
        let z2 = self.dec[1].forward(&h1);
        let h2 = nn::leaky_relu(&z2);
        let z3 = self.dec[2].forward(&h2);
        let out = nn::sigmoid(&z3);
        Ok(FusionTrace {
            enc_ir,
            enc_vi,
            adfm,
            cat,
            ffus,
            dec_z: [z1, z2, z3],
            dec_h: [h1, h2],
            out,
        })
    }

    /// Backprop from a gradient on the fused Y plane into parameter
    /// gradients (accumulated into `grads`), optionally also producing the
    /// gradients on the two input planes.
    pub(crate) fn backward_y(
        &self,
        trace: &FusionTrace,
        g_fused: &Array2<f64>,
        grads: &mut FusionGrads,
        want_input_grads: bool,
    ) -> (Option<Array2<f64>>, Option<Array2<f64>>) {
        let g_out = plane_to_chw(g_fused);
        let g = nn::sigmoid_backward(&trace.out, &g_out);
        let mut g_h2 = Array3::zeros(trace.dec_h[1].dim());
        self.dec[2].backward(&trace.dec_h[1], &g, &mut grads.dec[2], Some(&mut g_h2));
        let g = nn::leaky_relu_backward(&trace.dec_z[1], &g_h2);
        let mut g_h1 = Array3::zeros(trace.dec_h[0].dim());
        self.dec[1].backward(&trace.dec_h[0], &g, &mut grads.dec[1], Some(&mut g_h1));
        let g = nn::leaky_relu_backward(&trace.dec_z[0], &g_h1);
        let mut g_ffus = Array3::zeros(trace.ffus.dim());
        self.dec[0].backward(&trace.ffus, &g, &mut grads.dec[0], Some(&mut g_ffus));

        let mut g_cat = Array3::zeros(trace.cat.dim());
        self.fuse.backward(&trace.cat, &g_ffus, &mut grads.fuse, Some(&mut g_cat));
        let k = self.fuse.out_channels();
        let g_top = g_cat.slice(ndarray::s![0..k, .., ..]).to_owned();
        let g_bot = g_cat.slice(ndarray::s![k.., .., ..]).to_owned();

        let f_ir = &trace.enc_ir.feature;
        let f_vi = &trace.enc_vi.feature;
        let (mut g_f_ir, mut g_f_vi) = if let Some(adfm) = &trace.adfm {
            let mut g_f_ir = Array3::zeros(f_ir.dim());
            let mut g_f_vi = Array3::zeros(f_vi.dim());
            // corrected = u ⊙ att with u = gch ⊙ d + f_self
            let g_u_ir = &g_top * &adfm.att;
            let g_u_vi = &g_bot * &adfm.att;
            let g_att = &g_top * &adfm.ir.u + &g_bot * &adfm.vi.u;

            let hw = (f_ir.dim().1 * f_ir.dim().2) as f64;
            let side_back = |side: &AdfmSide,
                                 g_u: &Array3<f64>,
                                 g_self: &mut Array3<f64>,
                                 g_other: &mut Array3<f64>| {
                let mut g_d = broadcast_mul(g_u, &side.gch);
                // channel gate: gch = σ(mean(d)) per channel
                for (c, &gc) in side.gch.iter().enumerate() {
                    let gu_c = g_u.index_axis(Axis(0), c);
                    let d_c = side.d.index_axis(Axis(0), c);
                    let g_gch: f64 = gu_c.iter().zip(d_c.iter()).map(|(a, b)| a * b).sum();
                    let g_gap = g_gch * gc * (1.0 - gc) / hw;
                    g_d.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + g_gap);
                }
                *g_self += g_u;
                *g_self -= &g_d;
                *g_other += &g_d;
            };
            side_back(&adfm.ir, &g_u_ir, &mut g_f_ir, &mut g_f_vi);
            side_back(&adfm.vi, &g_u_vi, &mut g_f_vi, &mut g_f_ir);

            // attention: att = σ(za ⊙ zb)
            let g_prod = nn::sigmoid_backward(&adfm.att, &g_att);
            let g_za = &g_prod * &adfm.zb;
            let g_zb = &g_prod * &adfm.za;
            self.att_ir.backward(f_ir, &g_za, &mut grads.att_ir, Some(&mut g_f_ir));
            self.att_vi.backward(f_vi, &g_zb, &mut grads.att_vi, Some(&mut g_f_vi));
            (g_f_ir, g_f_vi)
        } else {
            (g_top, g_bot)
        };

        let mut g_y_ir = want_input_grads.then(|| Array3::zeros((1, g_fused.dim().0, g_fused.dim().1)));
        let mut g_y_vi = want_input_grads.then(|| Array3::zeros((1, g_fused.dim().0, g_fused.dim().1)));
        // reborrow as Option<&mut>
        self.encode_backward(Branch::Ir, &trace.enc_ir, &mut g_f_ir, &mut grads.enc_ir, g_y_ir.as_mut());
        self.encode_backward(Branch::Vi, &trace.enc_vi, &mut g_f_vi, &mut grads.enc_vi, g_y_vi.as_mut());
        (g_y_ir.map(|g| chw_to_plane(&g)), g_y_vi.map(|g| chw_to_plane(&g)))
    }
}

struct AdfmSide {
    d: Array3<f64>,
    gch: Array1<f64>,
    u: Array3<f64>,
    c: Array3<f64>,
}

struct AdfmTrace {
    za: Array3<f64>,
    zb: Array3<f64>,
    att: Array3<f64>,
    ir: AdfmSide,
    vi: AdfmSide,
}

pub(crate) struct EncTrace {
    x0: Array3<f64>,
    z: [Array3<f64>; 3],
    b1: Array3<f64>,
    cat2: Array3<f64>,
    pub(crate) feature: Array3<f64>,
}

pub(crate) struct FusionTrace {
    enc_ir: EncTrace,
    enc_vi: EncTrace,
    adfm: Option<AdfmTrace>,
    cat: Array3<f64>,
    ffus: Array3<f64>,
    dec_z: [Array3<f64>; 3],
    dec_h: [Array3<f64>; 2],
    pub(crate) out: Array3<f64>,
}

impl FusionTrace {
    pub(crate) fn fused_plane(&self) -> Array2<f64> {
        chw_to_plane(&self.out)
    }
}

/// Difference-feature correction of one branch:
/// `(σ(gap(f_other − f_self)) ⊙ (f_other − f_self) + f_self) ⊙ att`.
pub fn adfm_correct(
    f_self: &FeatureMap,
    f_other: &FeatureMap,
    att: &FeatureMap,
) -> Result<FeatureMap> {
    if f_self.data.dim() != f_other.data.dim() || f_self.data.dim() != att.data.dim() {
        return Err(Error::shape("adfm_correct: shape mismatch"));
    }
    let d = &f_other.data - &f_self.data;
    let gch = channel_means(&d).mapv(nn::sigmoid_scalar);
    let u = &broadcast_mul(&d, &gch) + &f_self.data;
    Ok(FeatureMap { data: &u * &att.data })
}

fn channel_means(a: &Array3<f64>) -> Array1<f64> {
    let (c, h, w) = a.dim();
    let n = (h * w) as f64;
    Array1::from_iter((0..c).map(|ch| a.index_axis(Axis(0), ch).sum() / n))
}

fn broadcast_mul(a: &Array3<f64>, per_channel: &Array1<f64>) -> Array3<f64> {
    let mut out = a.clone();
    for (c, &k) in per_channel.iter().enumerate() {
        out.index_axis_mut(Axis(0), c).mapv_inplace(|v| v * k);
    }
    out
}

pub(crate) fn plane_to_chw(p: &Array2<f64>) -> Array3<f64> {
    let (h, w) = p.dim();
    Array3::from_shape_fn((1, h, w), |(_, y, x)| p[(y, x)])
}

pub(crate) fn chw_to_plane(a: &Array3<f64>) -> Array2<f64> {
    let (_, h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(y, x)| a[(0, y, x)])
}

/// YCbCr planes of a fused pair before RGB conversion.
pub struct FusedPlanes {
    pub y: Array2<f64>,
    pub cb: Array2<f64>,
    pub cr: Array2<f64>,
    /// Enhanced infrared Y plane actually fed to the encoder.
    pub y_ir_en: Array2<f64>,
    /// Enhanced visible Y plane actually fed to the encoder.
    pub y_vi_en: Array2<f64>,
}

/// Runs the full pipeline on an aligned pair and returns the fused YCbCr
/// planes: enhance both images in RGB (per the model's flags), fuse the Y
/// planes, and pass the enhanced visible chroma through unchanged.
pub fn fuse_pair_planes(
    enh: &EnhancerModel,
    fus: &FusionModel,
    ir: &ImageTensor,
    vi: &ImageTensor,
) -> Result<FusedPlanes> {
    if vi.channels() != 3 {
        return Err(Error::shape("fuse_pair expects an RGB visible image"));
    }
    if ir.height() != vi.height() || ir.width() != vi.width() {
        return Err(Error::shape(format!(
            "fuse_pair: {}x{} vs {}x{}",
            ir.height(),
            ir.width(),
            vi.height(),
            vi.width()
        )));
    }
    let ir3 = ir.replicate3();
    let ir_en = if fus.flags.enhance_ir {
        enhance(&ir3, &enh.estimate_illumination(&ir3)?)?
    } else {
        ir3
    };
    let vi_en = if fus.flags.enhance_vis {
        enhance(vi, &enh.estimate_illumination(vi)?)?
    } else {
        vi.clone()
    };
    let vi_ycc = image::rgb_to_ycbcr(&vi_en)?;
    let y_ir = image::luma(&ir_en);
    let y_vi = vi_ycc.channel(0);
    let trace = fus.forward_y_trace(&y_ir, &y_vi)?;
    Ok(FusedPlanes {
        y: trace.fused_plane(),
        cb: vi_ycc.channel(1),
        cr: vi_ycc.channel(2),
        y_ir_en: y_ir,
        y_vi_en: y_vi,
    })
}

/// `fuse_pair_planes` followed by YCbCr→RGB; the everyday entry point.
pub fn fuse_pair(
    enh: &EnhancerModel,
    fus: &FusionModel,
    ir: &ImageTensor,
    vi: &ImageTensor,
) -> Result<ImageTensor> {
    let planes = fuse_pair_planes(enh, fus, ir, vi)?;
    let (h, w) = planes.y.dim();
    let mut ycc = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            ycc[(y, x, 0)] = planes.y[(y, x)];
            ycc[(y, x, 1)] = planes.cb[(y, x)];
            ycc[(y, x, 2)] = planes.cr[(y, x)];
        }
    }
    image::ycbcr_to_rgb(&ImageTensor::from_clamped(ycc))
}

/// Loss of one fusion forward pass on prepared Y planes.
pub fn fusion_loss(
    fus: &FusionModel,
    y_ir: &Array2<f64>,
    y_vi: &Array2<f64>,
    w: &WeightPair,
    lw: &LossWeights,
    kind: LossKind,
) -> Result<f64> {
    let trace = fus.forward_y_trace(y_ir, y_vi)?;
    let fused = trace.fused_plane();
    Ok(crate::losses::loss_grad_planes(kind, &fused, y_ir, y_vi, w, lw)?.0)
}

/// Loss plus analytic gradients for every fusion-network parameter.
pub fn fusion_loss_backward(
    fus: &FusionModel,
    y_ir: &Array2<f64>,
    y_vi: &Array2<f64>,
    w: &WeightPair,
    lw: &LossWeights,
    kind: LossKind,
) -> Result<(f64, FusionGrads)> {
    let trace = fus.forward_y_trace(y_ir, y_vi)?;
    let fused = trace.fused_plane();
    let (value, g_fused, _, _) =
        crate::losses::loss_grad_planes(kind, &fused, y_ir, y_vi, w, lw)?;
    let mut grads = fus.zero_grads();
    fus.backward_y(&trace, &g_fused, &mut grads, false);
    Ok((value, grads))
}
