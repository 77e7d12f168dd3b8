//! Histogram-contrast saliency and the saliency-derived fusion weights.
//!
//! The saliency of a pixel is how far its 8-bit intensity sits from the
//! image's global intensity distribution: `raw[x] = Σ_i H(i)·(q[x]−i)^p`
//! over the normalized 256-bin histogram `H`. Maps are normalized by their
//! maximum, and the weight pair `(w_ir, w_vi)` is the convex split
//! `w_ir = 0.5 + (d_ir − d_vi)/2`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::{quantize256, ImageTensor};

/// H×W saliency in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    data: Array2<f64>,
}

impl SaliencyMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("saliency values must lie in [0,1]".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Per-pixel convex weights for the two modalities; `w_ir + w_vi = 1`
/// exactly at every pixel.
#[derive(Debug, Clone)]
pub struct WeightPair {
    pub w_ir: Array2<f64>,
    pub w_vi: Array2<f64>,
}

impl WeightPair {
    /// Neutral 0.5/0.5 weights.
    pub fn uniform(height: usize, width: usize) -> Self {
        WeightPair {
            w_ir: Array2::from_elem((height, width), 0.5),
            w_vi: Array2::from_elem((height, width), 0.5),
        }
    }
}

fn check_p(p: u32) -> Result<()> {
    if p == 0 || p % 2 != 0 {
        return Err(Error::Argument(format!("saliency exponent must be positive and even, got {p}")));
    }
    Ok(())
}

/// Unnormalized histogram-contrast saliency.
///
/// Runs in O(H·W + 256²) by tabulating `S(v) = Σ_i H(i)·(v−i)^p` per level;
/// the inner sum keeps ascending-bin order so the result matches a direct
/// per-pixel loop bit for bit.
pub fn saliency_raw(img: &ImageTensor, p: u32) -> Result<Array2<f64>> {
    check_p(p)?;
    let q = quantize256(img)?;
    let n = (q.len()) as f64;
    let mut hist = [0.0f64; 256];
    for &v in q.iter() {
        hist[v as usize] += 1.0;
    }
    for h in hist.iter_mut() {
        *h /= n;
    }
    let mut table = [0.0f64; 256];
    for (v, entry) in table.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &hv) in hist.iter().enumerate() {
            acc += hv * (v as f64 - i as f64).powi(p as i32);
        }
        *entry = acc;
    }
    Ok(q.mapv(|v| table[v as usize]))
}

/// Saliency normalized by its maximum; a constant image (all-zero raw map)
/// yields the neutral value 0.5 everywhere.
pub fn saliency_map(img: &ImageTensor, p: u32) -> Result<SaliencyMap> {
    let raw = saliency_raw(img, p)?;
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let data = if max > 0.0 { raw.mapv(|v| v / max) } else { raw.mapv(|_| 0.5) };
    Ok(SaliencyMap { data })
}

/// Convex fusion weights from two saliency maps.
pub fn fusion_weights(d_ir: &SaliencyMap, d_vi: &SaliencyMap) -> Result<WeightPair> {
    if d_ir.data.dim() != d_vi.data.dim() {
        return Err(Error::shape(format!(
            "fusion_weights: {:?} vs {:?}",
            d_ir.data.dim(),
            d_vi.data.dim()
        )));
    }
    let w_ir = Array2::from_shape_fn(d_ir.data.dim(), |ix| {
        0.5 + (d_ir.data[ix] - d_vi.data[ix]) * 0.5
    });
    let w_vi = w_ir.mapv(|w| 1.0 - w);
    Ok(WeightPair { w_ir, w_vi })
}
