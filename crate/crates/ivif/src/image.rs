//! Image I/O, color-space conversion, quantization, and gradient primitives.
//!
//! All pixel math in this crate happens on `f64` values in `[0, 1]`.
//! `ImageTensor` is the shared carrier for infrared, visible, enhanced, and
//! fused images; single-plane images (Y, gray) use `channels = 1`.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// H×W×C image with every element in `[0, 1]` and `C ∈ {1, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps an H×W×C array, validating the type invariants.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("empty image {h}x{w}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::shape(format!("channels must be 1 or 3, got {c}")));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("image values must lie in [0,1]".into()));
        }
        Ok(Self { data })
    }

    /// Wraps an array that is in range up to floating-point noise, clamping
    /// each element into `[0, 1]`.
    pub(crate) fn from_clamped(mut data: Array3<f64>) -> Self {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self { data }
    }

    /// Single-channel image from a plane.
    pub fn from_plane(plane: Array2<f64>) -> Result<Self> {
        let (h, w) = plane.dim();
        Self::new(Array3::from_shape_fn((h, w, 1), |(y, x, _)| plane[(y, x)]))
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// View of the only plane of a single-channel image.
    pub fn plane(&self) -> Result<ArrayView2<'_, f64>> {
        if self.channels() != 1 {
            return Err(Error::shape(format!(
                "expected a single-channel image, got {} channels",
                self.channels()
            )));
        }
        Ok(self.data.index_axis(ndarray::Axis(2), 0))
    }

    /// Copy of channel `c`.
    pub fn channel(&self, c: usize) -> Array2<f64> {
        self.data.index_axis(ndarray::Axis(2), c).to_owned()
    }

    /// Replicates a single-channel image to three channels; three-channel
    /// input is returned unchanged.
    pub fn replicate3(&self) -> ImageTensor {
        if self.channels() == 3 {
            return self.clone();
        }
        let (h, w, _) = self.data.dim();
        let mut out = Array3::zeros((h, w, 3));
        for c in 0..3 {
            out.index_axis_mut(ndarray::Axis(2), c)
                .assign(&self.data.index_axis(ndarray::Axis(2), 0));
        }
        ImageTensor { data: out }
    }
}

/// Sobel response of a single-channel image: per-pixel x/y derivatives and
/// their magnitude.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
    pub magnitude: Array2<f64>,
}

/// Loads an 8- or 16-bit PNG/JPEG and scales it to `[0, 1]`.
///
/// Grayscale sources yield a single channel; color sources yield RGB with
/// any alpha dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let gray = matches!(
        dynimg,
        image::DynamicImage::ImageLuma8(_)
            | image::DynamicImage::ImageLumaA8(_)
            | image::DynamicImage::ImageLuma16(_)
            | image::DynamicImage::ImageLumaA16(_)
    );
    // 8-bit samples widen to 16 bits as v*257, so v16/65535 == v8/255 exactly.
    let data = if gray {
        let img = dynimg.to_luma16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
            img.get_pixel(x as u32, y as u32).0[0] as f64 / 65535.0
        })
    } else {
        let img = dynimg.to_rgb16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32).0[c] as f64 / 65535.0
        })
    };
    ImageTensor::new(data)
}

/// Writes an image as 8-bit PNG or JPEG, chosen by file extension.
///
/// PNG round-trips through `load_image` within 1/255 per element.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => image::ImageFormat::Png,
        Some("jpg") | Some("jpeg") => image::ImageFormat::Jpeg,
        other => {
            return Err(Error::Argument(format!(
                "unsupported output extension {other:?} (use .png, .jpg, or .jpeg)"
            )))
        }
    };
    let (h, w) = (img.height() as u32, img.width() as u32);
    let result = if img.channels() == 1 {
        let buf = image::GrayImage::from_fn(w, h, |x, y| {
            image::Luma([to_byte(img.data[(y as usize, x as usize, 0)])])
        });
        buf.save_with_format(path, format)
    } else {
        let buf = image::RgbImage::from_fn(w, h, |x, y| {
            let px = |c: usize| to_byte(img.data[(y as usize, x as usize, c)]);
            image::Rgb([px(0), px(1), px(2)])
        });
        buf.save_with_format(path, format)
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// `[0,1]` value to byte, rounding half up.
fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

// Full-range BT.601. Constants chosen so the forward/inverse pair is an
// exact algebraic inverse before clamping.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// RGB → YCbCr (full-range BT.601), each output channel clamped to `[0, 1]`.
pub fn rgb_to_ycbcr(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels() != 3 {
        return Err(Error::shape("rgb_to_ycbcr expects 3 channels"));
    }
    let (h, w, _) = img.data.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (img.data[(y, x, 0)], img.data[(y, x, 1)], img.data[(y, x, 2)]);
            let luma = KR * r + KG * g + KB * b;
            out[(y, x, 0)] = luma;
            out[(y, x, 1)] = 0.5 + (b - luma) / (2.0 * (1.0 - KB));
            out[(y, x, 2)] = 0.5 + (r - luma) / (2.0 * (1.0 - KR));
        }
    }
    Ok(ImageTensor::from_clamped(out))
}

/// YCbCr → RGB (full-range BT.601), clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels() != 3 {
        return Err(Error::shape("ycbcr_to_rgb expects 3 channels"));
    }
    let (h, w, _) = img.data.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (luma, cb, cr) = (img.data[(y, x, 0)], img.data[(y, x, 1)], img.data[(y, x, 2)]);
            let r = luma + 2.0 * (1.0 - KR) * (cr - 0.5);
            let b = luma + 2.0 * (1.0 - KB) * (cb - 0.5);
            let g = (luma - KR * r - KB * b) / KG;
            out[(y, x, 0)] = r;
            out[(y, x, 1)] = g;
            out[(y, x, 2)] = b;
        }
    }
    Ok(ImageTensor::from_clamped(out))
}

/// Y plane of an image: the single plane for 1-channel input, the BT.601
/// luma for RGB input.
pub fn luma(img: &ImageTensor) -> Array2<f64> {
    let (h, w, _) = img.data.dim();
    if img.channels() == 1 {
        return img.channel(0);
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        (KR * img.data[(y, x, 0)] + KG * img.data[(y, x, 1)] + KB * img.data[(y, x, 2)])
            .clamp(0.0, 1.0)
    })
}

/// Quantizes a single-channel image to 256 levels: `round(v*255)` clamped to
/// `{0..255}`.
pub fn quantize256(img: &ImageTensor) -> Result<Array2<u8>> {
    let plane = img.plane()?;
    Ok(plane.mapv(to_byte))
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// 3×3 Sobel gradients with replicate border padding.
pub fn sobel_gradient(img: &ImageTensor) -> Result<GradientField> {
    let plane = img.plane()?;
    let (h, w) = plane.dim();
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("sobel needs at least 3x3, got {h}x{w}")));
    }
    let (dx, dy) = sobel_plane(&plane);
    let magnitude = Array2::from_shape_fn((h, w), |(y, x)| dx[(y, x)].hypot(dy[(y, x)]));
    Ok(GradientField { dx, dy, magnitude })
}

/// Sobel x/y responses of a plane (replicate padding), without the size
/// check or magnitude.
pub(crate) fn sobel_plane(plane: &ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = plane.dim();
    let clamp_at = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut dx = Array2::zeros((h, w));
    let mut dy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (ku, row) in SOBEL_X.iter().enumerate() {
                for (kv, &wx) in row.iter().enumerate() {
                    let syy = clamp_at(y as isize + ku as isize - 1, h);
                    let sxx = clamp_at(x as isize + kv as isize - 1, w);
                    let v = plane[(syy, sxx)];
                    sx += wx * v;
                    sy += SOBEL_Y[ku][kv] * v;
                }
            }
            dx[(y, x)] = sx;
            dy[(y, x)] = sy;
        }
    }
    (dx, dy)
}

/// Scatter-add adjoint of `sobel_plane` for one kernel: accumulates
/// `kernel^T * grad` into `out`, honoring the replicate padding.
pub(crate) fn sobel_plane_adjoint(
    grad_dx: &Array2<f64>,
    grad_dy: &Array2<f64>,
    out: &mut Array2<f64>,
) {
    let (h, w) = grad_dx.dim();
    let clamp_at = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            let gx = grad_dx[(y, x)];
            let gy = grad_dy[(y, x)];
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            for ku in 0..3 {
                for kv in 0..3 {
                    let sy = clamp_at(y as isize + ku as isize - 1, h);
                    let sx = clamp_at(x as isize + kv as isize - 1, w);
                    out[(sy, sx)] += SOBEL_X[ku][kv] * gx + SOBEL_Y[ku][kv] * gy;
                }
            }
        }
    }
}

/// Bilinear resize; used to grow images smaller than the training patch.
pub(crate) fn resize_bilinear(img: &ImageTensor, new_h: usize, new_w: usize) -> ImageTensor {
    let (h, w, c) = img.data.dim();
    let mut out = Array3::zeros((new_h, new_w, c));
    let sy = if new_h > 1 { (h - 1) as f64 / (new_h - 1) as f64 } else { 0.0 };
    let sx = if new_w > 1 { (w - 1) as f64 / (new_w - 1) as f64 } else { 0.0 };
    for y in 0..new_h {
        let fy = y as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..new_w {
            let fx = x as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let v00 = img.data[(y0, x0, ch)];
                let v01 = img.data[(y0, x1, ch)];
                let v10 = img.data[(y1, x0, ch)];
                let v11 = img.data[(y1, x1, ch)];
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                out[(y, x, ch)] = top + (bot - top) * ty;
            }
        }
    }
    ImageTensor::from_clamped(out)
}
