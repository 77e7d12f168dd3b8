//! Fusion training objective: saliency-weighted structure, intensity, and
//! gradient terms.
//!
//! All losses operate on Y planes in `[0, 1]` and are differentiable almost
//! everywhere in the fused image; the `*_grad` variants return analytic
//! gradients used by the trainer and checked against finite differences in
//! the test suite.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::{self, ImageTensor};
use crate::saliency::WeightPair;

/// Weights (α, β, γ) for the structure / intensity / gradient terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 15.0, gamma: 3.0 }
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 11×11 Gaussian window, σ = 1.5.
pub(crate) fn gaussian_window() -> Array2<f64> {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut w = Array2::from_shape_fn((n, n), |(y, x)| {
        let dy = y as f64 - c;
        let dx = x as f64 - c;
        (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let sum = w.sum();
    w.mapv_inplace(|v| v / sum);
    w
}

/// Mean local SSIM over all valid 11×11 windows.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let pa = a.plane()?.to_owned();
    let pb = b.plane()?.to_owned();
    ssim_plane(&pa, &pb)
}

pub(crate) struct SsimMoments {
    pub(crate) ux: Array2<f64>,
    pub(crate) uy: Array2<f64>,
    pub(crate) x2m: Array2<f64>,
    pub(crate) y2m: Array2<f64>,
    pub(crate) xym: Array2<f64>,
}

pub(crate) fn ssim_moments(x: &Array2<f64>, y: &Array2<f64>) -> Result<SsimMoments> {
    if x.dim() != y.dim() {
        return Err(Error::shape(format!("ssim: {:?} vs {:?}", x.dim(), y.dim())));
    }
    let (h, w) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs at least {SSIM_WINDOW}px per side, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut m = SsimMoments {
        ux: Array2::zeros((oh, ow)),
        uy: Array2::zeros((oh, ow)),
        x2m: Array2::zeros((oh, ow)),
        y2m: Array2::zeros((oh, ow)),
        xym: Array2::zeros((oh, ow)),
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut sux, mut suy, mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wv = win[(ky, kx)];
                    let xv = x[(oy + ky, ox + kx)];
                    let yv = y[(oy + ky, ox + kx)];
                    sux += wv * xv;
                    suy += wv * yv;
                    sx2 += wv * xv * xv;
                    sy2 += wv * yv * yv;
                    sxy += wv * xv * yv;
                }
            }
            m.ux[(oy, ox)] = sux;
            m.uy[(oy, ox)] = suy;
            m.x2m[(oy, ox)] = sx2;
            m.y2m[(oy, ox)] = sy2;
            m.xym[(oy, ox)] = sxy;
        }
    }
    Ok(m)
}

pub(crate) fn ssim_plane(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    let m = ssim_moments(x, y)?;
    let mut acc = 0.0;
    for (((ux, uy), (x2, y2)), xy) in m
        .ux
        .iter()
        .zip(m.uy.iter())
        .zip(m.x2m.iter().zip(m.y2m.iter()))
        .zip(m.xym.iter())
    {
        let vx = x2 - ux * ux;
        let vy = y2 - uy * uy;
        let cxy = xy - ux * uy;
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        acc += (a1 * a2) / (b1 * b2);
    }
    Ok(acc / m.ux.len() as f64)
}

/// SSIM plus gradients with respect to both inputs.
pub(crate) fn ssim_plane_grad(
    x: &Array2<f64>,
    y: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let m = ssim_moments(x, y)?;
    let (oh, ow) = m.ux.dim();
    let nwin = (oh * ow) as f64;
    let mut value = 0.0;
    // per-window gradients on the five moment maps
    let mut g_ux = Array2::zeros((oh, ow));
    let mut g_uy = Array2::zeros((oh, ow));
    let mut g_x2 = Array2::zeros((oh, ow));
    let mut g_y2 = Array2::zeros((oh, ow));
    let mut g_xy = Array2::zeros((oh, ow));
    for oy in 0..oh {
        for ox in 0..ow {
            let ux = m.ux[(oy, ox)];
            let uy = m.uy[(oy, ox)];
            let vx = m.x2m[(oy, ox)] - ux * ux;
            let vy = m.y2m[(oy, ox)] - uy * uy;
            let cxy = m.xym[(oy, ox)] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            value += s;
            let up = 1.0 / nwin; // mean
            let d_a1 = a2 / (b1 * b2) * up;
            let d_cxy = 2.0 * a1 / (b1 * b2) * up;
            let d_b1 = -s / b1 * up;
            let d_b2 = -s / b2 * up;
            // vx = x2m − ux², cxy = xym − ux·uy
            g_ux[(oy, ox)] = d_a1 * 2.0 * uy + d_b1 * 2.0 * ux - d_b2 * 2.0 * ux - d_cxy * uy;
            g_uy[(oy, ox)] = d_a1 * 2.0 * ux + d_b1 * 2.0 * uy - d_b2 * 2.0 * uy - d_cxy * ux;
            g_x2[(oy, ox)] = d_b2;
            g_y2[(oy, ox)] = d_b2;
            g_xy[(oy, ox)] = d_cxy;
        }
    }
    // scatter the window-weighted gradients back to pixels
    let win = gaussian_window();
    let (h, w) = x.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for oy in 0..oh {
        for ox in 0..ow {
            let (gux, guy) = (g_ux[(oy, ox)], g_uy[(oy, ox)]);
            let (gx2, gy2) = (g_x2[(oy, ox)], g_y2[(oy, ox)]);
            let gxy = g_xy[(oy, ox)];
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wv = win[(ky, kx)];
                    let py = oy + ky;
                    let px = ox + kx;
                    let xv = x[(py, px)];
                    let yv = y[(py, px)];
                    gx[(py, px)] += wv * (gux + 2.0 * xv * gx2 + yv * gxy);
                    gy[(py, px)] += wv * (guy + 2.0 * yv * gy2 + xv * gxy);
                }
            }
        }
    }
    Ok((value / nwin, gx, gy))
}

/// Saliency-weighted target: `t = w_ir ⊙ ir_en + w_vi ⊙ vi_en`.
pub fn target_image(
    ir_en: &ImageTensor,
    vi_en: &ImageTensor,
    w: &WeightPair,
) -> Result<ImageTensor> {
    let a = ir_en.plane()?;
    let b = vi_en.plane()?;
    if a.dim() != b.dim() || a.dim() != w.w_ir.dim() {
        return Err(Error::shape("target_image: shape mismatch"));
    }
    let t = Array2::from_shape_fn(a.dim(), |ix| w.w_ir[ix] * a[ix] + w.w_vi[ix] * b[ix]);
    ImageTensor::from_plane(t)
}

pub(crate) fn target_plane(a: &Array2<f64>, b: &Array2<f64>, w: &WeightPair) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |ix| w.w_ir[ix] * a[ix] + w.w_vi[ix] * b[ix])
}

/// Structure loss: `1 − SSIM(fused, target)`.
pub fn loss_struct(
    fused: &ImageTensor,
    ir_en: &ImageTensor,
    vi_en: &ImageTensor,
    w: &WeightPair,
) -> Result<f64> {
    let t = target_image(ir_en, vi_en, w)?;
    Ok(1.0 - ssim(fused, &t)?)
}

/// Intensity loss: mean absolute difference from the target.
pub fn loss_intensity(
    fused: &ImageTensor,
    ir_en: &ImageTensor,
    vi_en: &ImageTensor,
    w: &WeightPair,
) -> Result<f64> {
    let f = fused.plane()?;
    let t = target_image(ir_en, vi_en, w)?;
    let tp = t.plane()?;
    if f.dim() != tp.dim() {
        return Err(Error::shape("loss_intensity: shape mismatch"));
    }
    let n = f.len() as f64;
    Ok(f.iter().zip(tp.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Gradient loss: mean L1 distance between the fused Sobel magnitude and
/// the elementwise maximum of the source magnitudes.
pub fn loss_grad(fused: &ImageTensor, ir_en: &ImageTensor, vi_en: &ImageTensor) -> Result<f64> {
    let gf = image::sobel_gradient(fused)?;
    let ga = image::sobel_gradient(ir_en)?;
    let gb = image::sobel_gradient(vi_en)?;
    if gf.magnitude.dim() != ga.magnitude.dim() || gf.magnitude.dim() != gb.magnitude.dim() {
        return Err(Error::shape("loss_grad: shape mismatch"));
    }
    let n = gf.magnitude.len() as f64;
    let mut acc = 0.0;
    for ((f, a), b) in gf.magnitude.iter().zip(ga.magnitude.iter()).zip(gb.magnitude.iter()) {
        acc += (f - a.max(*b)).abs();
    }
    Ok(acc / n)
}

/// Total loss: `α·struct + β·intensity + γ·grad`.
pub fn loss_total(
    fused: &ImageTensor,
    ir_en: &ImageTensor,
    vi_en: &ImageTensor,
    w: &WeightPair,
    lw: &LossWeights,
) -> Result<f64> {
    Ok(lw.alpha * loss_struct(fused, ir_en, vi_en, w)?
        + lw.beta * loss_intensity(fused, ir_en, vi_en, w)?
        + lw.gamma * loss_grad(fused, ir_en, vi_en)?)
}

/// Which term of the training objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Struct,
    Intensity,
    Grad,
    Total,
}

/// Loss value plus gradients with respect to the fused plane and to both
/// enhanced source planes.
pub(crate) fn loss_grad_planes(
    kind: LossKind,
    fused: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    w: &WeightPair,
    lw: &LossWeights,
) -> Result<(f64, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let dims = fused.dim();
    if a.dim() != dims || b.dim() != dims || w.w_ir.dim() != dims {
        return Err(Error::shape("loss: shape mismatch"));
    }
    let mut value = 0.0;
    let mut gf = Array2::zeros(dims);
    let mut ga = Array2::zeros(dims);
    let mut gb = Array2::zeros(dims);

    let want = |k: LossKind, weight: f64| -> Option<f64> {
        if kind == k {
            Some(1.0)
        } else if kind == LossKind::Total {
            Some(weight)
        } else {
            None
        }
    };

    let needs_target = matches!(kind, LossKind::Struct | LossKind::Intensity | LossKind::Total);
    let t = if needs_target { Some(target_plane(a, b, w)) } else { None };

    if let Some(scale) = want(LossKind::Struct, lw.alpha) {
        let t = t.as_ref().unwrap();
        let (s, gx, gt) = ssim_plane_grad(fused, t)?;
        value += scale * (1.0 - s);
        gf.zip_mut_with(&gx, |g, &v| *g -= scale * v);
        // chain the target-side gradient into the sources
        for ((idx, gtv), (wa, wb)) in gt.indexed_iter().zip(w.w_ir.iter().zip(w.w_vi.iter())) {
            ga[idx] -= scale * gtv * wa;
            gb[idx] -= scale * gtv * wb;
        }
    }

    if let Some(scale) = want(LossKind::Intensity, lw.beta) {
        let t = t.as_ref().unwrap();
        let n = fused.len() as f64;
        let mut acc = 0.0;
        for ((idx, &fv), &tv) in fused.indexed_iter().zip(t.iter()) {
            let d = fv - tv;
            acc += d.abs();
            let s = d.signum() / n;
            gf[idx] += scale * s;
            ga[idx] -= scale * s * w.w_ir[idx];
            gb[idx] -= scale * s * w.w_vi[idx];
        }
        value += scale * acc / n;
    }

    if let Some(scale) = want(LossKind::Grad, lw.gamma) {
        let (v, gfp, gap, gbp) = grad_loss_planes(fused, a, b)?;
        value += scale * v;
        gf.zip_mut_with(&gfp, |g, &x| *g += scale * x);
        ga.zip_mut_with(&gap, |g, &x| *g += scale * x);
        gb.zip_mut_with(&gbp, |g, &x| *g += scale * x);
    }

    Ok((value, gf, ga, gb))
}

/// Sobel-magnitude L1 loss with gradients to all three planes.
fn grad_loss_planes(
    fused: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let (h, w) = fused.dim();
    if h < 3 || w < 3 {
        return Err(Error::shape("loss_grad needs at least 3x3 images"));
    }
    let (fdx, fdy) = image::sobel_plane(&fused.view());
    let (adx, ady) = image::sobel_plane(&a.view());
    let (bdx, bdy) = image::sobel_plane(&b.view());
    let n = (h * w) as f64;
    let eps = 1e-12;
    let mut value = 0.0;
    let mut gm_f_dx = Array2::zeros((h, w));
    let mut gm_f_dy = Array2::zeros((h, w));
    let mut gm_a_dx = Array2::zeros((h, w));
    let mut gm_a_dy = Array2::zeros((h, w));
    let mut gm_b_dx = Array2::zeros((h, w));
    let mut gm_b_dy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mf = fdx[(y, x)].hypot(fdy[(y, x)]);
            let ma = adx[(y, x)].hypot(ady[(y, x)]);
            let mb = bdx[(y, x)].hypot(bdy[(y, x)]);
            let r = ma.max(mb);
            let d = mf - r;
            value += d.abs();
            let s = d.signum() / n;
            if mf > eps {
                gm_f_dx[(y, x)] = s * fdx[(y, x)] / mf;
                gm_f_dy[(y, x)] = s * fdy[(y, x)] / mf;
            }
            // subgradient of max: route through the larger source magnitude
            if ma >= mb {
                if ma > eps {
                    gm_a_dx[(y, x)] = -s * adx[(y, x)] / ma;
                    gm_a_dy[(y, x)] = -s * ady[(y, x)] / ma;
                }
            } else if mb > eps {
                gm_b_dx[(y, x)] = -s * bdx[(y, x)] / mb;
                gm_b_dy[(y, x)] = -s * bdy[(y, x)] / mb;
            }
        }
    }
    let mut gf = Array2::zeros((h, w));
    let mut ga = Array2::zeros((h, w));
    let mut gb = Array2::zeros((h, w));
    image::sobel_plane_adjoint(&gm_f_dx, &gm_f_dy, &mut gf);
    image::sobel_plane_adjoint(&gm_a_dx, &gm_a_dy, &mut ga);
    image::sobel_plane_adjoint(&gm_b_dx, &gm_b_dy, &mut gb);
    Ok((value / n, gf, ga, gb))
}
