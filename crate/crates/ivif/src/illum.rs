//! Illumination-map estimation and Retinex-style enhancement.
//!
//! A small shared convolutional network predicts a per-pixel, per-channel
//! illumination map `L` in RGB space; dividing the image by `L` brightens
//! dark regions. The architecture guarantees `L ≥ img` elementwise — the
//! map is the sigmoid output floored at the input image itself,
//! `L = max(σ(conv(img)), img)` — so the enhanced image never leaves
//! `[0, 1]`. The one-sided floor also keeps training stable: pixels where
//! the prediction has already sunk to the image stop pulling it further
//! down, so the map settles into a smooth envelope above the image instead
//! of collapsing onto it.

use ndarray::Array3;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{self, Conv2d};

/// Division floor: keeps `img / L` bounded in near-black regions.
pub const ILLUM_FLOOR: f64 = 1e-3;

/// Per-pixel, per-channel illumination in `[ILLUM_FLOOR, 1]`, stored H×W×3.
#[derive(Debug, Clone)]
pub struct IlluminationMap {
    data: Array3<f64>,
}

impl IlluminationMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::shape("illumination map must have 3 channels"));
        }
        if data.iter().any(|v| !(ILLUM_FLOOR..=1.0).contains(v)) {
            return Err(Error::Argument(format!(
                "illumination values must lie in [{ILLUM_FLOOR}, 1]"
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// All-ones map (identity divisor).
    pub fn ones(height: usize, width: usize) -> Self {
        Self { data: Array3::from_elem((height, width, 3), 1.0) }
    }
}

/// Architecture descriptor for the illumination estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancerConfig {
    /// Number of 3×3 convolution layers.
    pub layers: usize,
    /// Hidden channel width.
    pub width: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        // 4 layers x 32 channels: ~20k parameters, well under the 0.1M cap.
        EnhancerConfig { layers: 4, width: 32 }
    }
}

/// Illumination estimation network shared by both modalities.
///
/// Layers 1..n-1 use leaky ReLU; the last layer is linear and feeds a
/// sigmoid whose output is floored at the input image and at `ILLUM_FLOOR`.
#[derive(Debug, Clone)]
pub struct EnhancerModel {
    pub config: EnhancerConfig,
    pub(crate) convs: Vec<Conv2d>,
}

/// Forward-pass activations kept for backprop.
pub(crate) struct EnhancerTrace {
    /// Input to each conv layer (first entry is the image, CHW).
    pub inputs: Vec<Array3<f64>>,
    /// Pre-activation output of each conv layer.
    pub pre: Vec<Array3<f64>>,
    /// Sigmoid of the last layer.
    pub sig: Array3<f64>,
    /// `max(sig, input, ILLUM_FLOOR)` — the illumination map, CHW.
    pub out: Array3<f64>,
}

impl EnhancerModel {
    pub fn init(config: EnhancerConfig, rng: &mut ChaCha20Rng) -> Self {
        // Small random weights put the initial sigmoid near 0.5, a loose
        // envelope above dark inputs with live gradients everywhere.
        let mut convs = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let cin = if i == 0 { 3 } else { config.width };
            let cout = if i + 1 == config.layers { 3 } else { config.width };
            convs.push(Conv2d::init(cin, cout, rng));
        }
        EnhancerModel { config, convs }
    }

    /// Zero-weight model of the given shape; used when loading checkpoints.
    pub(crate) fn zeroed(config: EnhancerConfig) -> Self {
        let mut convs = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let cin = if i == 0 { 3 } else { config.width };
            let cout = if i + 1 == config.layers { 3 } else { config.width };
            convs.push(Conv2d::zeros(cin, cout));
        }
        EnhancerModel { config, convs }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    /// Ordered parameter tensors, used by the optimizer and checkpoints.
    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            let wd = c.weight.dim();
            out.push((
                format!("conv{i}.weight"),
                vec![wd.0, wd.1, wd.2, wd.3],
                c.weight.as_slice().unwrap(),
            ));
            out.push((format!("conv{i}.bias"), vec![c.bias.len()], c.bias.as_slice().unwrap()));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(c.weight.as_slice_mut().unwrap());
            out.push(c.bias.as_slice_mut().unwrap());
        }
        out
    }

    /// Runs the network on a CHW image, producing the clamped map plus the
    /// activations needed for backprop.
    pub(crate) fn forward_trace(&self, x: &Array3<f64>) -> Result<EnhancerTrace> {
        if self.convs.is_empty() {
            return Err(Error::Config("enhancer has no layers".into()));
        }
        if x.dim().0 != 3 {
            return Err(Error::shape("illumination estimator expects 3 channels"));
        }
        let n = self.convs.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(&cur);
            inputs.push(cur);
            cur = if i + 1 == n { z.clone() } else { nn::leaky_relu(&z) };
            pre.push(z);
        }
        let sig = nn::sigmoid(&cur);
        let mut out = sig.clone();
        out.zip_mut_with(x, |o, &i| *o = o.max(i).max(ILLUM_FLOOR));
        Ok(EnhancerTrace { inputs, pre, sig, out })
    }

    /// Backprop from a gradient on the illumination map into parameter
    /// gradients. Gradients flow through the sigmoid branch only where it
    /// is the active side of the floor; the image branch needs no gradient.
    pub(crate) fn backward(&self, trace: &EnhancerTrace, g_out: &Array3<f64>, grads: &mut [Conv2d]) {
        let mut g = g_out.clone();
        for ((gv, &s), &i) in g.iter_mut().zip(trace.sig.iter()).zip(trace.inputs[0].iter()) {
            if s <= i || s <= ILLUM_FLOOR {
                *gv = 0.0;
            }
        }
        self.backward_sigma(trace, &g, grads);
    }

    /// Backprop from a gradient on the raw sigmoid prediction (before the
    /// floor) into parameter gradients.
    pub(crate) fn backward_sigma(
        &self,
        trace: &EnhancerTrace,
        g_sig: &Array3<f64>,
        grads: &mut [Conv2d],
    ) {
        let mut g = nn::sigmoid_backward(&trace.sig, g_sig);
        let n = self.convs.len();
        for i in (0..n).rev() {
            if i + 1 != n {
                g = nn::leaky_relu_backward(&trace.pre[i], &g);
            }
            let mut gx = Array3::zeros(trace.inputs[i].dim());
            let need_input = i > 0;
            self.convs[i].backward(
                &trace.inputs[i],
                &g,
                &mut grads[i],
                if need_input { Some(&mut gx) } else { None },
            );
            g = gx;
        }
    }

    pub(crate) fn zero_grads(&self) -> Vec<Conv2d> {
        self.convs.iter().map(Conv2d::zeros_like).collect()
    }

    /// Estimates the illumination map of an RGB image.
    ///
    /// The result satisfies `ILLUM_FLOOR ≤ L ≤ 1` and `L ≥ img` elementwise,
    /// and is deterministic for fixed weights.
    pub fn estimate_illumination(&self, img: &ImageTensor) -> Result<IlluminationMap> {
        if img.channels() != 3 {
            return Err(Error::shape("estimate_illumination expects an RGB image"));
        }
        let x = hwc_to_chw(img.data());
        let trace = self.forward_trace(&x)?;
        Ok(IlluminationMap { data: chw_to_hwc(&trace.out) })
    }
}

/// Retinex enhancement: element-wise division by the illumination map,
/// clamped into `[0, 1]`. With `L = ones` this is the identity.
pub fn enhance(img: &ImageTensor, illum: &IlluminationMap) -> Result<ImageTensor> {
    let src = img.replicate3();
    if src.data().dim() != illum.data.dim() {
        return Err(Error::shape(format!(
            "enhance: image {:?} vs illumination {:?}",
            src.data().dim(),
            illum.data.dim()
        )));
    }
    Ok(ImageTensor::from_clamped(src.data() / &illum.data))
}

/// Training loss for the illumination estimator: mean squared deviation of
/// `L` from the input image plus `lambda_tv` times the mean absolute
/// forward difference of `L` (total variation).
pub fn enhancement_loss(img: &ImageTensor, illum: &IlluminationMap, lambda_tv: f64) -> Result<f64> {
    let src = img.replicate3();
    if src.data().dim() != illum.data.dim() {
        return Err(Error::shape("enhancement_loss: shape mismatch"));
    }
    Ok(enhancement_loss_grad(src.data(), &illum.data, lambda_tv).0)
}

/// Loss plus its gradient with respect to `L` (both arrays H×W×C).
pub(crate) fn enhancement_loss_grad(
    img: &Array3<f64>,
    illum: &Array3<f64>,
    lambda_tv: f64,
) -> (f64, Array3<f64>) {
    let (h, w, c) = illum.dim();
    let n = (h * w * c) as f64;
    let mut grad = Array3::zeros((h, w, c));
    let mut fidelity = 0.0;
    for ((idx, &l), &i) in illum.indexed_iter().zip(img.iter()) {
        let d = l - i;
        fidelity += d * d;
        grad[idx] = 2.0 * d / n;
    }
    fidelity /= n;

    // total variation: all horizontal + vertical forward differences pooled
    let diffs = (h * (w - 1) + (h - 1) * w) * c;
    let mut tv = 0.0;
    if diffs > 0 {
        let dn = diffs as f64;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    if x + 1 < w {
                        let d = illum[(y, x + 1, ch)] - illum[(y, x, ch)];
                        tv += d.abs();
                        let s = lambda_tv * d.signum() / dn;
                        grad[(y, x + 1, ch)] += s;
                        grad[(y, x, ch)] -= s;
                    }
                    if y + 1 < h {
                        let d = illum[(y + 1, x, ch)] - illum[(y, x, ch)];
                        tv += d.abs();
                        let s = lambda_tv * d.signum() / dn;
                        grad[(y + 1, x, ch)] += s;
                        grad[(y, x, ch)] -= s;
                    }
                }
            }
        }
        tv /= dn;
    }
    (fidelity + lambda_tv * tv, grad)
}

/// H×W×C → C×H×W.
pub(crate) fn hwc_to_chw(a: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = a.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| a[(y, x, ch)])
}

/// C×H×W → H×W×C.
pub(crate) fn chw_to_hwc(a: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = a.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| a[(ch, y, x)])
}
