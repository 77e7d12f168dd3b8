//! Fusion-quality metrics and report generation.
//!
//! Six reference metrics over Y planes: Shannon entropy (EN), sum of
//! correlations of differences (SCD), wavelet feature mutual information
//! (FMI_w), Xydeas–Petrović edge transfer (Q_abf), spatial frequency (SF),
//! and five-scale MS-SSIM. Fusion has no ground truth, so MS-SSIM scores
//! against the saliency-weighted target of the two source Y planes; the
//! report header records that choice.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{self, ImageTensor};
use crate::losses::{self, SSIM_C1, SSIM_C2, SSIM_WINDOW};
use crate::saliency;

/// Shannon entropy (base 2) of the 256-bin intensity histogram; ranges over
/// `[0, 8]`.
pub fn entropy(img: &ImageTensor) -> Result<f64> {
    let q = image::quantize256(img)?;
    let n = q.len() as f64;
    let mut hist = [0.0f64; 256];
    for &v in q.iter() {
        hist[v as usize] += 1.0;
    }
    let mut h = 0.0;
    for &c in hist.iter() {
        if c > 0.0 {
            let p = c / n;
            h -= p * p.log2();
        }
    }
    Ok(h)
}

/// Spatial frequency: `sqrt(RF² + CF²)` where RF²/CF² are the mean squared
/// horizontal/vertical forward differences.
pub fn spatial_frequency(img: &ImageTensor) -> Result<f64> {
    let p = img.plane()?;
    let (h, w) = p.dim();
    let mut rf = 0.0;
    let mut cf = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let d = p[(y, x + 1)] - p[(y, x)];
                rf += d * d;
            }
            if y + 1 < h {
                let d = p[(y + 1, x)] - p[(y, x)];
                cf += d * d;
            }
        }
    }
    let rf2 = if w > 1 { rf / (h * (w - 1)) as f64 } else { 0.0 };
    let cf2 = if h > 1 { cf / ((h - 1) * w) as f64 } else { 0.0 };
    Ok((rf2 + cf2).sqrt())
}

/// Pearson correlation; `None` when either side has (numerically) zero
/// variance.
fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 1e-30 || vb <= 1e-30 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Sum of correlations of differences:
/// `r(fused − b, a) + r(fused − a, b)`; a zero-variance difference (or
/// source) contributes 0.
pub fn scd(fused: &ImageTensor, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let f = fused.plane()?;
    let pa = a.plane()?;
    let pb = b.plane()?;
    if f.dim() != pa.dim() || f.dim() != pb.dim() {
        return Err(Error::shape("scd: shape mismatch"));
    }
    let d1 = &f - &pb;
    let d2 = &f - &pa;
    let t1 = pearson(&d1, &pa.to_owned()).unwrap_or(0.0);
    let t2 = pearson(&d2, &pb.to_owned()).unwrap_or(0.0);
    Ok(t1 + t2)
}

// Xydeas–Petrović sigmoid constants.
const QABF_TG: f64 = 0.9994;
const QABF_KG: f64 = -15.0;
const QABF_DG: f64 = 0.5;
const QABF_TA: f64 = 0.9879;
const QABF_KA: f64 = -22.0;
const QABF_DA: f64 = 0.8;

fn qabf_qg(v: f64) -> f64 {
    QABF_TG / (1.0 + (QABF_KG * (v - QABF_DG)).exp())
}

fn qabf_qa(v: f64) -> f64 {
    QABF_TA / (1.0 + (QABF_KA * (v - QABF_DA)).exp())
}

fn sobel_strength_angle(p: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (dx, dy) = image::sobel_plane(&p.view());
    let g = Array2::from_shape_fn(p.dim(), |ix| dx[ix].hypot(dy[ix]));
    let alpha = Array2::from_shape_fn(p.dim(), |ix| {
        if dx[ix] == 0.0 && dy[ix] == 0.0 {
            0.0
        } else {
            (dy[ix] / dx[ix]).atan()
        }
    });
    (g, alpha)
}

/// Edge-information transfer Q_abf in `[0, 1]`.
///
/// Per pixel, the relative Sobel strength and orientation agreement between
/// each source and the fused image pass through the standard sigmoids; the
/// per-pixel product is rescaled so perfect preservation scores exactly 1,
/// then averaged weighted by source edge strength. An image set with no
/// edges at all scores 0 by convention.
pub fn qabf(fused: &ImageTensor, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let f = fused.plane()?.to_owned();
    let pa = a.plane()?.to_owned();
    let pb = b.plane()?.to_owned();
    if f.dim() != pa.dim() || f.dim() != pb.dim() {
        return Err(Error::shape("qabf: shape mismatch"));
    }
    let (gf, af) = sobel_strength_angle(&f);
    let (ga, aa) = sobel_strength_angle(&pa);
    let (gb, ab) = sobel_strength_angle(&pb);
    let qmax = qabf_qg(1.0) * qabf_qa(1.0);
    let q_source = |gs: f64, als: f64, gfv: f64, alf: f64| -> f64 {
        let g_rel = if gs == gfv {
            if gs == 0.0 {
                0.0
            } else {
                1.0
            }
        } else if gs > gfv {
            gfv / gs
        } else {
            gs / gfv
        };
        let a_rel = 1.0 - (als - alf).abs() / (std::f64::consts::FRAC_PI_2);
        qabf_qg(g_rel) * qabf_qa(a_rel) / qmax
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for ix in ndarray::indices(f.dim()) {
        let ix = (ix.0, ix.1);
        let qa_pix = q_source(ga[ix], aa[ix], gf[ix], af[ix]);
        let qb_pix = q_source(gb[ix], ab[ix], gf[ix], af[ix]);
        num += qa_pix * ga[ix] + qb_pix * gb[ix];
        den += ga[ix] + gb[ix];
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// One-level Haar details (LH, HL, HH), concatenated and flattened.
fn haar_detail_features(p: &Array2<f64>) -> Vec<f64> {
    let (h, w) = p.dim();
    let (hh, ww) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(3 * hh * ww);
    let mut push_band = |f: &dyn Fn(f64, f64, f64, f64) -> f64| {
        for r in 0..hh {
            for c in 0..ww {
                let a = p[(2 * r, 2 * c)];
                let b = p[(2 * r, 2 * c + 1)];
                let cc = p[(2 * r + 1, 2 * c)];
                let d = p[(2 * r + 1, 2 * c + 1)];
                out.push(f(a, b, cc, d));
            }
        }
    };
    push_band(&|a, b, c, d| (a - b + c - d) / 2.0); // horizontal detail
    push_band(&|a, b, c, d| (a + b - c - d) / 2.0); // vertical detail
    push_band(&|a, b, c, d| (a - b - c + d) / 2.0); // diagonal detail
    out
}

/// Normalized mutual information `2·I(X;Y)/(H(X)+H(Y))` over 256-bin joint
/// histograms of min-max-normalized features; 0 when both entropies vanish.
fn nmi(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let bin = |v: &[f64]| -> Vec<usize> {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return vec![0; v.len()];
        }
        v.iter().map(|&t| (((t - lo) / (hi - lo)) * 256.0).floor().min(255.0) as usize).collect()
    };
    let bx = bin(x);
    let by = bin(y);
    let mut joint = vec![0.0f64; 256 * 256];
    let mut hx = [0.0f64; 256];
    let mut hy = [0.0f64; 256];
    let inv = 1.0 / n as f64;
    for (&i, &j) in bx.iter().zip(by.iter()) {
        joint[i * 256 + j] += inv;
        hx[i] += inv;
        hy[j] += inv;
    }
    let ent = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum() };
    let ex = ent(&hx);
    let ey = ent(&hy);
    let exy = ent(&joint);
    if ex + ey <= 0.0 {
        return 0.0;
    }
    let mi = (ex + ey - exy).max(0.0);
    2.0 * mi / (ex + ey)
}

/// Wavelet feature mutual information:
/// `NMI(feat_fused, feat_a) + NMI(feat_fused, feat_b)` over one-level Haar
/// detail coefficients; ranges over `[0, 2]`.
pub fn fmi_w(fused: &ImageTensor, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let f = fused.plane()?.to_owned();
    let pa = a.plane()?.to_owned();
    let pb = b.plane()?.to_owned();
    if f.dim() != pa.dim() || f.dim() != pb.dim() {
        return Err(Error::shape("fmi_w: shape mismatch"));
    }
    if f.dim().0 < 2 || f.dim().1 < 2 {
        return Err(Error::shape("fmi_w needs at least 2x2 images"));
    }
    let ff = haar_detail_features(&f);
    let fa = haar_detail_features(&pa);
    let fb = haar_detail_features(&pb);
    Ok(nmi(&ff, &fa) + nmi(&ff, &fb))
}

/// MS-SSIM scale weights (5 scales).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Minimum side length for five dyadic scales with an 11×11 window.
pub const MS_SSIM_MIN_SIDE: usize = SSIM_WINDOW * 16;

fn mean_pool2(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, xx)| {
        (x[(2 * y, 2 * xx)] + x[(2 * y, 2 * xx + 1)] + x[(2 * y + 1, 2 * xx)]
            + x[(2 * y + 1, 2 * xx + 1)])
            / 4.0
    })
}

/// Mean SSIM and mean contrast-structure over the valid windows.
fn ssim_and_cs(x: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, f64)> {
    let m = losses::ssim_moments(x, y)?;
    let mut ssim_acc = 0.0;
    let mut cs_acc = 0.0;
    let n = m.ux.len() as f64;
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
        ssim_acc += (a1 * a2) / (b1 * b2);
        cs_acc += a2 / b2;
    }
    Ok((ssim_acc / n, cs_acc / n))
}

/// Five-scale MS-SSIM with 2×2 mean-pool downsampling; negative
/// contrast-structure means are clamped to zero before exponentiation.
pub fn ms_ssim(fused: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    let mut f = fused.plane()?.to_owned();
    let mut r = reference.plane()?.to_owned();
    if f.dim() != r.dim() {
        return Err(Error::shape("ms_ssim: shape mismatch"));
    }
    let (h, w) = f.dim();
    if h < MS_SSIM_MIN_SIDE || w < MS_SSIM_MIN_SIDE {
        return Err(Error::shape(format!(
            "ms_ssim needs at least {MS_SSIM_MIN_SIDE}px per side for 5 scales, got {h}x{w}"
        )));
    }
    let mut result = 1.0;
    for (scale, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (mssim, mcs) = ssim_and_cs(&f, &r)?;
        if scale + 1 == MS_SSIM_WEIGHTS.len() {
            result *= mssim.max(0.0).powf(weight);
        } else {
            result *= mcs.max(0.0).powf(weight);
            f = mean_pool2(&f);
            r = mean_pool2(&r);
        }
    }
    Ok(result)
}

/// One evaluated image pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricSet {
    pub en: f64,
    pub scd: f64,
    pub fmi_w: f64,
    pub qabf: f64,
    pub sf: f64,
    pub ms_ssim: f64,
}

pub const METRIC_NAMES: [&str; 6] = ["en", "scd", "fmi_w", "qabf", "sf", "ms_ssim"];

impl MetricSet {
    pub fn get(&self, name: &str) -> f64 {
        match name {
            "en" => self.en,
            "scd" => self.scd,
            "fmi_w" => self.fmi_w,
            "qabf" => self.qabf,
            "sf" => self.sf,
            "ms_ssim" => self.ms_ssim,
            other => panic!("unknown metric {other}"),
        }
    }
}

/// Per-pair metrics, their means, and cumulative-distribution tables.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    /// Reference-image convention recorded for reproducibility.
    pub ms_ssim_reference: String,
    pub pairs: Vec<(String, MetricSet)>,
    pub means: MetricSet,
}

impl MetricReport {
    fn from_pairs(pairs: Vec<(String, MetricSet)>) -> Self {
        let n = pairs.len() as f64;
        let mean = |f: fn(&MetricSet) -> f64| pairs.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
        let means = MetricSet {
            en: mean(|m| m.en),
            scd: mean(|m| m.scd),
            fmi_w: mean(|m| m.fmi_w),
            qabf: mean(|m| m.qabf),
            sf: mean(|m| m.sf),
            ms_ssim: mean(|m| m.ms_ssim),
        };
        MetricReport {
            ms_ssim_reference: "saliency-weighted target of the source Y planes (p=2)".into(),
            pairs,
            means,
        }
    }

    /// Fraction of pairs with metric value ≤ y, one row per observed value.
    pub fn cdf(&self, metric: &str) -> Vec<(f64, f64)> {
        let mut values: Vec<f64> = self.pairs.iter().map(|(_, m)| m.get(metric)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len() as f64;
        values.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n)).collect()
    }

    /// Comma-separated report: header comment, per-pair table, mean row, and
    /// one cumulative table per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# ms_ssim reference: {}\n", self.ms_ssim_reference));
        out.push_str("pair,en,scd,fmi_w,qabf,sf,ms_ssim\n");
        for (name, m) in &self.pairs {
            out.push_str(&format!(
                "{name},{},{},{},{},{},{}\n",
                m.en, m.scd, m.fmi_w, m.qabf, m.sf, m.ms_ssim
            ));
        }
        let m = &self.means;
        out.push_str(&format!(
            "mean,{},{},{},{},{},{}\n",
            m.en, m.scd, m.fmi_w, m.qabf, m.sf, m.ms_ssim
        ));
        out.push('\n');
        out.push_str("cdf,metric,value,fraction\n");
        for name in METRIC_NAMES {
            for (v, frac) in self.cdf(name) {
                out.push_str(&format!("cdf,{name},{v},{frac}\n"));
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cdf: BTreeMap<&str, Vec<(f64, f64)>> =
            METRIC_NAMES.iter().map(|&m| (m, self.cdf(m))).collect();
        serde_json::json!({
            "ms_ssim_reference": self.ms_ssim_reference,
            "pairs": self.pairs.iter().map(|(n, m)| (n.clone(), m)).collect::<BTreeMap<_, _>>(),
            "means": self.means,
            "cdf": cdf,
        })
    }
}

/// PNG/JPEG files in a directory, keyed by basename (file stem); duplicate
/// basenames are a dataset error.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("not a directory: {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png") | Some("jpg") | Some("jpeg")) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("bad file name {}", path.display())))?
            .to_string();
        if out.insert(stem.clone(), path).is_some() {
            return Err(Error::Dataset(format!("duplicate basename {stem} in {}", dir.display())));
        }
    }
    Ok(out)
}

fn y_plane_of(path: &Path) -> Result<ImageTensor> {
    let img = image::load_image(path)?;
    ImageTensor::from_plane(image::luma(&img))
}

/// Evaluates every matched basename across the three directories.
///
/// All three directories must contain exactly the same set of basenames.
pub fn evaluate_pairs(
    dir_fused: impl AsRef<Path>,
    dir_ir: impl AsRef<Path>,
    dir_vi: impl AsRef<Path>,
) -> Result<MetricReport> {
    let fused = list_images(dir_fused.as_ref())?;
    let ir = list_images(dir_ir.as_ref())?;
    let vi = list_images(dir_vi.as_ref())?;
    let keys: Vec<&String> = fused.keys().collect();
    if keys.is_empty() {
        return Err(Error::Dataset("no image pairs found".into()));
    }
    if ir.keys().ne(fused.keys()) || vi.keys().ne(fused.keys()) {
        return Err(Error::Dataset(format!(
            "mismatched filename sets: fused={:?} ir={:?} vi={:?}",
            fused.keys().collect::<Vec<_>>(),
            ir.keys().collect::<Vec<_>>(),
            vi.keys().collect::<Vec<_>>()
        )));
    }
    let mut pairs = Vec::with_capacity(keys.len());
    for (name, fpath) in &fused {
        let f = y_plane_of(fpath)?;
        let a = y_plane_of(&ir[name])?;
        let b = y_plane_of(&vi[name])?;
        pairs.push((name.clone(), evaluate_one(&f, &a, &b)?));
    }
    Ok(MetricReport::from_pairs(pairs))
}

/// All six metrics for one fused/ir/vi triple of Y-plane images.
pub fn evaluate_one(fused: &ImageTensor, a: &ImageTensor, b: &ImageTensor) -> Result<MetricSet> {
    let d_a = saliency::saliency_map(a, 2)?;
    let d_b = saliency::saliency_map(b, 2)?;
    let w = saliency::fusion_weights(&d_a, &d_b)?;
    let reference = losses::target_image(a, b, &w)?;
    Ok(MetricSet {
        en: entropy(fused)?,
        scd: scd(fused, a, b)?,
        fmi_w: fmi_w(fused, a, b)?,
        qabf: qabf(fused, a, b)?,
        sf: spatial_frequency(fused)?,
        ms_ssim: ms_ssim(fused, &reference)?,
    })
}

/// Writes the CSV report to `path` and the JSON document to `path` with
/// `.json` appended.
pub fn write_report(report: &MetricReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_csv())?;
    let mut json_path = path.as_os_str().to_owned();
    json_path.push(".json");
    std::fs::write(json_path, serde_json::to_string_pretty(&report.to_json()).unwrap())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn gray(data: Array2<f64>) -> ImageTensor {
        ImageTensor::from_plane(data).unwrap()
    }

    fn random_gray(h: usize, w: usize, rng: &mut ChaCha20Rng) -> ImageTensor {
        gray(Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..=1.0)))
    }

    #[test]
    fn entropy_reference_points() {
        let c = ImageTensor::constant(8, 8, 1, 0.42).unwrap();
        assert_eq!(entropy(&c).unwrap(), 0.0);

        let two = gray(Array2::from_shape_fn((8, 8), |(y, _)| if y < 4 { 0.0 } else { 1.0 }));
        assert!((entropy(&two).unwrap() - 1.0).abs() < 1e-12);

        // all 256 levels exactly once
        let all = gray(Array2::from_shape_fn((16, 16), |(y, x)| (y * 16 + x) as f64 / 255.0));
        assert!((entropy(&all).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn spatial_frequency_examples_and_oracle() {
        let c = ImageTensor::constant(5, 7, 1, 0.9).unwrap();
        assert_eq!(spatial_frequency(&c).unwrap(), 0.0);

        let pair = gray(ndarray::array![[0.0, 1.0]]);
        assert!((spatial_frequency(&pair).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let img = random_gray(8, 8, &mut rng);
        let got = spatial_frequency(&img).unwrap();
        // loop oracle
        let p = img.plane().unwrap();
        let mut rf = 0.0;
        let mut cf = 0.0;
        for y in 0..8 {
            for x in 0..7 {
                rf += (p[(y, x + 1)] - p[(y, x)]).powi(2);
            }
        }
        for y in 0..7 {
            for x in 0..8 {
                cf += (p[(y + 1, x)] - p[(y, x)]).powi(2);
            }
        }
        let expect = (rf / 56.0 + cf / 56.0).sqrt();
        assert!((got - expect).abs() < 1e-7);
    }

    #[test]
    fn scd_exact_sum_and_degenerate_rule() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = gray(Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..=0.5)));
        let b = gray(Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..=0.5)));
        let f = gray(Array2::from_shape_fn((16, 16), |ix| {
            a.plane().unwrap()[ix] + b.plane().unwrap()[ix]
        }));
        // f - b = a and f - a = b exactly, so both correlations are 1
        let v = scd(&f, &a, &b).unwrap();
        assert!((v - 2.0).abs() < 1e-9, "got {v}");
        assert!((-2.0..=2.0).contains(&v));

        let same = scd(&a, &a, &a).unwrap();
        assert_eq!(same, 0.0, "zero-variance differences contribute 0");
    }

    #[test]
    fn qabf_identity_constant_and_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = random_gray(16, 16, &mut rng);
        let q = qabf(&x, &x, &x).unwrap();
        assert!(q >= 0.999, "identical edge fields must score ~1, got {q}");

        let flat = ImageTensor::constant(16, 16, 1, 0.5).unwrap();
        let a = random_gray(16, 16, &mut rng);
        let b = random_gray(16, 16, &mut rng);
        let q = qabf(&flat, &a, &b).unwrap();
        assert!(q < 0.05, "a flat fused image preserves no edges, got {q}");

        let f = random_gray(16, 16, &mut rng);
        let q1 = qabf(&f, &a, &b).unwrap();
        let q2 = qabf(&f, &b, &a).unwrap();
        assert!((q1 - q2).abs() < 1e-12, "source symmetry");
        assert!((0.0..=1.0).contains(&q1));
    }

    #[test]
    fn qabf_matches_straightline_transliteration() {
        // independent implementation written directly from the published
        // per-pixel recipe, kept deliberately naive
        fn oracle(f: &ImageTensor, a: &ImageTensor, b: &ImageTensor) -> f64 {
            let sob = |img: &ImageTensor| {
                let g = image::sobel_gradient(img).unwrap();
                (g.dx, g.dy)
            };
            let (fdx, fdy) = sob(f);
            let (adx, ady) = sob(a);
            let (bdx, bdy) = sob(b);
            let (h, w) = f.plane().unwrap().dim();
            let qmax = (0.9994 / (1.0 + (-15.0f64 * 0.5).exp()))
                * (0.9879 / (1.0 + (-22.0f64 * 0.2).exp()));
            let mut num = 0.0;
            let mut den = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let gf = (fdx[(y, x)].powi(2) + fdy[(y, x)].powi(2)).sqrt();
                    let af = if fdx[(y, x)] == 0.0 && fdy[(y, x)] == 0.0 {
                        0.0
                    } else {
                        (fdy[(y, x)] / fdx[(y, x)]).atan()
                    };
                    for (dx, dy) in [(&adx, &ady), (&bdx, &bdy)] {
                        let gs = (dx[(y, x)].powi(2) + dy[(y, x)].powi(2)).sqrt();
                        let als = if dx[(y, x)] == 0.0 && dy[(y, x)] == 0.0 {
                            0.0
                        } else {
                            (dy[(y, x)] / dx[(y, x)]).atan()
                        };
                        let g = if gs == gf {
                            if gs == 0.0 {
                                0.0
                            } else {
                                1.0
                            }
                        } else if gs > gf {
                            gf / gs
                        } else {
                            gs / gf
                        };
                        let aa = 1.0 - (als - af).abs() / std::f64::consts::FRAC_PI_2;
                        let qg = 0.9994 / (1.0 + (-15.0 * (g - 0.5)).exp());
                        let qa = 0.9879 / (1.0 + (-22.0 * (aa - 0.8)).exp());
                        num += qg * qa / qmax * gs;
                        den += gs;
                    }
                }
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let f = random_gray(16, 16, &mut rng);
        let a = random_gray(16, 16, &mut rng);
        let b = random_gray(16, 16, &mut rng);
        let got = qabf(&f, &a, &b).unwrap();
        let expect = oracle(&f, &a, &b);
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn fmi_identical_images_score_two() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let x = random_gray(32, 32, &mut rng);
        let v = fmi_w(&x, &x, &x).unwrap();
        assert!((v - 2.0).abs() < 1e-6, "got {v}");
        assert!((0.0..=2.0).contains(&v));
    }

    #[test]
    fn fmi_independent_images_score_low() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let f = random_gray(512, 512, &mut rng);
        let a = random_gray(512, 512, &mut rng);
        let b = random_gray(512, 512, &mut rng);
        let v = fmi_w(&f, &a, &b).unwrap();
        assert!(v < 0.2, "independent features share little information, got {v}");
        // each NMI < 0.1
        let fa = fmi_w(&f, &a, &a).unwrap();
        assert!(fa / 2.0 < 0.1, "per-source NMI should be < 0.1, got {}", fa / 2.0);
    }

    #[test]
    fn ms_ssim_identity_size_check_and_blur() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let x = random_gray(176, 176, &mut rng);
        assert!((ms_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);

        let small = random_gray(175, 176, &mut rng);
        assert!(matches!(ms_ssim(&small, &small), Err(Error::Shape(_))));

        // 3x3 box blur strictly degrades
        let p = x.plane().unwrap();
        let blurred = Array2::from_shape_fn((176, 176), |(y, xx)| {
            let mut acc = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = (y as i64 + dy).clamp(0, 175) as usize;
                    let xc = (xx as i64 + dx).clamp(0, 175) as usize;
                    acc += p[(yy, xc)];
                }
            }
            acc / 9.0
        });
        let v = ms_ssim(&gray(blurred), &x).unwrap();
        assert!(v < 1.0, "blur must strictly lower ms_ssim, got {v}");
        assert!(v > 0.0);
    }

    #[test]
    fn evaluate_pairs_errors_and_single_pair() {
        let dir = tempfile::tempdir().unwrap();
        let fused = dir.path().join("fused");
        let ir = dir.path().join("ir");
        let vi = dir.path().join("vi");
        for d in [&fused, &ir, &vi] {
            std::fs::create_dir(d).unwrap();
        }
        // empty → DatasetError
        assert!(matches!(evaluate_pairs(&fused, &ir, &vi), Err(Error::Dataset(_))));

        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let write = |dir: &std::path::Path, name: &str, rng: &mut ChaCha20Rng| {
            let img = ImageTensor::new(Array3::from_shape_fn((176, 176, 1), |_| {
                rng.random_range(0.0..=1.0)
            }))
            .unwrap();
            image::save_image(&img, dir.join(name)).unwrap();
        };
        write(&fused, "a.png", &mut rng);
        write(&ir, "a.png", &mut rng);
        write(&vi, "a.png", &mut rng);
        let report = evaluate_pairs(&fused, &ir, &vi).unwrap();
        assert_eq!(report.pairs.len(), 1);
        assert_eq!(report.pairs[0].0, "a");
        assert!((report.means.en - report.pairs[0].1.en).abs() < 1e-15);

        // mismatched sets → DatasetError
        write(&fused, "b.png", &mut rng);
        assert!(matches!(evaluate_pairs(&fused, &ir, &vi), Err(Error::Dataset(_))));
    }

    #[test]
    fn cdf_tables_are_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let sets: Vec<(String, MetricSet)> = (0..5)
            .map(|i| {
                (
                    format!("p{i}"),
                    MetricSet {
                        en: rng.random_range(0.0..8.0),
                        scd: rng.random_range(-2.0..2.0),
                        fmi_w: rng.random_range(0.0..2.0),
                        qabf: rng.random_range(0.0..1.0),
                        sf: rng.random_range(0.0..1.0),
                        ms_ssim: rng.random_range(0.0..1.0),
                    },
                )
            })
            .collect();
        let report = MetricReport::from_pairs(sets);
        for name in METRIC_NAMES {
            let cdf = report.cdf(name);
            for win in cdf.windows(2) {
                assert!(win[1].0 >= win[0].0);
                assert!(win[1].1 >= win[0].1, "cdf must be non-decreasing");
            }
            assert_eq!(cdf.last().unwrap().1, 1.0);
        }
        let csv = report.to_csv();
        assert!(csv.contains("pair,en,scd,fmi_w,qabf,sf,ms_ssim"));
        assert!(csv.contains("mean,"));
        let json = report.to_json();
        assert!(json["means"]["en"].is_number());
    }
}
