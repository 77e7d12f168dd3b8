//! Dataset ingestion, the two-stage training procedure, and configuration.
//!
//! Stage 1 trains the shared illumination estimator on patches from both
//! modalities; stage 2 trains the fusion network on the enhanced Y planes
//! under the saliency-weighted objective, with the enhancer frozen by
//! default (`freeze_enhancer=false` fine-tunes it jointly). All randomness
//! derives from the configured seed, so runs are bit-reproducible.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::fusenet::{FusionArch, FusionGrads, FusionModel, PipelineFlags};
use crate::illum::{enhancement_loss_grad, EnhancerConfig, EnhancerModel};
use crate::image::{self, ImageTensor};
use crate::losses::{loss_grad_planes, LossKind, LossWeights};
use crate::nn::{Adam, Conv2d};
use crate::saliency::{self, WeightPair};

/// All hyperparameters, architecture widths, loss weights, and the training
/// schedule. Serialized as flat `key=value` lines; every key can be
/// overridden by an `IVIF_<KEY>` environment variable.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub patch_w: usize,
    pub patch_h: usize,
    pub stage1_batch: usize,
    pub stage1_epochs: usize,
    pub stage2_batch: usize,
    pub stage2_epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub saliency_p: u32,
    pub lambda_tv: f64,
    pub enhance_vis: bool,
    pub enhance_ir: bool,
    pub use_stam: bool,
    pub use_adfm: bool,
    pub freeze_enhancer: bool,
    pub seed: u64,
    pub enhancer_layers: usize,
    pub enhancer_width: usize,
    pub fusion_width: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            patch_w: 600,
            patch_h: 400,
            stage1_batch: 8,
            stage1_epochs: 100,
            stage2_batch: 6,
            stage2_epochs: 150,
            lr: 0.001,
            lr_decay: 0.1,
            lr_decay_every: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            alpha: 1.0,
            beta: 15.0,
            gamma: 3.0,
            saliency_p: 2,
            lambda_tv: 0.15,
            enhance_vis: true,
            enhance_ir: true,
            use_stam: true,
            use_adfm: true,
            freeze_enhancer: true,
            seed: 0,
            enhancer_layers: 4,
            enhancer_width: 32,
            fusion_width: 16,
        }
    }
}

pub const ENV_PREFIX: &str = "IVIF_";

const CONFIG_KEYS: [&str; 25] = [
    "patch_w",
    "patch_h",
    "stage1_batch",
    "stage1_epochs",
    "stage2_batch",
    "stage2_epochs",
    "lr",
    "lr_decay",
    "lr_decay_every",
    "adam_beta1",
    "adam_beta2",
    "alpha",
    "beta",
    "gamma",
    "saliency_p",
    "lambda_tv",
    "enhance_vis",
    "enhance_ir",
    "use_stam",
    "use_adfm",
    "freeze_enhancer",
    "seed",
    "enhancer_layers",
    "enhancer_width",
    "fusion_width",
];

impl FusionConfig {
    /// Defaults, then the optional config file, then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = FusionConfig::default();
        if let Some(path) = path {
            cfg.merge_file(path)?;
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies `IVIF_<KEY>` overrides for every config key.
    pub fn apply_env(&mut self) -> Result<()> {
        for key in CONFIG_KEYS {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "patch_w" => self.patch_w = parse(key, value)?,
            "patch_h" => self.patch_h = parse(key, value)?,
            "stage1_batch" => self.stage1_batch = parse(key, value)?,
            "stage1_epochs" => self.stage1_epochs = parse(key, value)?,
            "stage2_batch" => self.stage2_batch = parse(key, value)?,
            "stage2_epochs" => self.stage2_epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "saliency_p" => self.saliency_p = parse(key, value)?,
            "lambda_tv" => self.lambda_tv = parse(key, value)?,
            "enhance_vis" => self.enhance_vis = parse(key, value)?,
            "enhance_ir" => self.enhance_ir = parse(key, value)?,
            "use_stam" => self.use_stam = parse(key, value)?,
            "use_adfm" => self.use_adfm = parse(key, value)?,
            "freeze_enhancer" => self.freeze_enhancer = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "enhancer_layers" => self.enhancer_layers = parse(key, value)?,
            "enhancer_width" => self.enhancer_width = parse(key, value)?,
            "fusion_width" => self.fusion_width = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_w", self.patch_w),
            ("patch_h", self.patch_h),
            ("stage1_batch", self.stage1_batch),
            ("stage1_epochs", self.stage1_epochs),
            ("stage2_batch", self.stage2_batch),
            ("stage2_epochs", self.stage2_epochs),
            ("lr_decay_every", self.lr_decay_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.saliency_p == 0 || self.saliency_p % 2 != 0 {
            return Err(Error::Config("saliency_p must be positive and even".into()));
        }
        Ok(())
    }

    /// Flat `key=value` rendering, one key per line.
    pub fn to_config_string(&self) -> String {
        format!(
            "patch_w={}\npatch_h={}\nstage1_batch={}\nstage1_epochs={}\nstage2_batch={}\n\
             stage2_epochs={}\nlr={}\nlr_decay={}\nlr_decay_every={}\nadam_beta1={}\n\
             adam_beta2={}\nalpha={}\nbeta={}\ngamma={}\nsaliency_p={}\nlambda_tv={}\n\
             enhance_vis={}\nenhance_ir={}\nuse_stam={}\nuse_adfm={}\nfreeze_enhancer={}\n\
             seed={}\nenhancer_layers={}\nenhancer_width={}\nfusion_width={}\n",
            self.patch_w,
            self.patch_h,
            self.stage1_batch,
            self.stage1_epochs,
            self.stage2_batch,
            self.stage2_epochs,
            self.lr,
            self.lr_decay,
            self.lr_decay_every,
            self.adam_beta1,
            self.adam_beta2,
            self.alpha,
            self.beta,
            self.gamma,
            self.saliency_p,
            self.lambda_tv,
            self.enhance_vis,
            self.enhance_ir,
            self.use_stam,
            self.use_adfm,
            self.freeze_enhancer,
            self.seed,
            self.enhancer_layers,
            self.enhancer_width,
            self.fusion_width,
        )
    }

    /// Step-decay schedule: `lr · lr_decay^⌊epoch / lr_decay_every⌋`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    pub fn flags(&self) -> PipelineFlags {
        PipelineFlags {
            enhance_vis: self.enhance_vis,
            enhance_ir: self.enhance_ir,
            use_stam: self.use_stam,
            use_adfm: self.use_adfm,
        }
    }

    pub fn enhancer_config(&self) -> EnhancerConfig {
        EnhancerConfig { layers: self.enhancer_layers, width: self.enhancer_width }
    }

    pub fn fusion_arch(&self) -> FusionArch {
        FusionArch { base_width: self.fusion_width }
    }
}

/// One matched infrared/visible pair on disk.
#[derive(Debug, Clone)]
pub struct PairEntry {
    pub name: String,
    pub ir_path: PathBuf,
    pub vi_path: PathBuf,
}

/// Directory-backed dataset with `ir/` and `vi/` subdirectories whose
/// basenames match one to one.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pairs: Vec<PairEntry>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PairEntry] {
        &self.pairs
    }

    pub fn load_pair(&self, idx: usize) -> Result<(ImageTensor, ImageTensor)> {
        let entry = &self.pairs[idx];
        Ok((image::load_image(&entry.ir_path)?, image::load_image(&entry.vi_path)?))
    }
}

/// Scans `root/ir` and `root/vi`, pairing files by basename
/// (lexicographically ordered). Unmatched basenames or per-pair dimension
/// mismatches are dataset errors.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<PairedDataset> {
    let root = root.as_ref();
    let ir_dir = root.join("ir");
    let vi_dir = root.join("vi");
    if !ir_dir.is_dir() || !vi_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} must contain ir/ and vi/ subdirectories",
            root.display()
        )));
    }
    let ir = crate::metrics::list_images(&ir_dir)?;
    let vi = crate::metrics::list_images(&vi_dir)?;
    if ir.keys().ne(vi.keys()) {
        let only_ir: Vec<_> = ir.keys().filter(|k| !vi.contains_key(*k)).collect();
        let only_vi: Vec<_> = vi.keys().filter(|k| !ir.contains_key(*k)).collect();
        return Err(Error::Dataset(format!(
            "unmatched basenames: ir-only {only_ir:?}, vi-only {only_vi:?}"
        )));
    }
    if ir.is_empty() {
        return Err(Error::Dataset(format!("no image pairs under {}", root.display())));
    }
    let mut pairs = Vec::with_capacity(ir.len());
    for (name, ir_path) in ir {
        let vi_path = vi[&name].clone();
        let di = ::image::image_dimensions(&ir_path).map_err(|e| {
            Error::Dataset(format!("cannot read {}: {e}", ir_path.display()))
        })?;
        let dv = ::image::image_dimensions(&vi_path).map_err(|e| {
            Error::Dataset(format!("cannot read {}: {e}", vi_path.display()))
        })?;
        if di != dv {
            return Err(Error::Dataset(format!(
                "pair {name}: ir is {}x{}, vi is {}x{}",
                di.0, di.1, dv.0, dv.1
            )));
        }
        pairs.push(PairEntry { name, ir_path, vi_path });
    }
    Ok(PairedDataset { pairs })
}

/// Draws one random crop window of the configured patch size and applies it
/// to both images; images smaller than the patch are bilinearly grown
/// first.
pub fn sample_patch(
    ir: &ImageTensor,
    vi: &ImageTensor,
    cfg: &FusionConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(ImageTensor, ImageTensor)> {
    if ir.height() != vi.height() || ir.width() != vi.width() {
        return Err(Error::Dataset(format!(
            "pair dimensions disagree: {}x{} vs {}x{}",
            ir.height(),
            ir.width(),
            vi.height(),
            vi.width()
        )));
    }
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let grow = |img: &ImageTensor| -> ImageTensor {
        if img.height() < ph || img.width() < pw {
            let sy = ph as f64 / img.height() as f64;
            let sx = pw as f64 / img.width() as f64;
            let s = sy.max(sx);
            let nh = ((img.height() as f64 * s).ceil() as usize).max(ph);
            let nw = ((img.width() as f64 * s).ceil() as usize).max(pw);
            image::resize_bilinear(img, nh, nw)
        } else {
            img.clone()
        }
    };
    let ir = grow(ir);
    let vi = grow(vi);
    let y0 = rng.random_range(0..=(ir.height() - ph));
    let x0 = rng.random_range(0..=(ir.width() - pw));
    let crop = |img: &ImageTensor| -> ImageTensor {
        let view = img.data().slice(ndarray::s![y0..y0 + ph, x0..x0 + pw, ..]);
        ImageTensor::from_clamped(view.to_owned())
    };
    Ok((crop(&ir), crop(&vi)))
}

/// Result of stage-1 training: the model and the per-epoch mean loss log.
pub struct TrainedEnhancer {
    pub model: EnhancerModel,
    pub losses: Vec<f64>,
}

/// Result of stage-2 training. `enhancer` is `Some` only when
/// `freeze_enhancer=false` fine-tuned it.
pub struct TrainedFusion {
    pub model: FusionModel,
    pub losses: Vec<f64>,
    pub enhancer: Option<EnhancerModel>,
}

/// Asymmetry of the stage-1 descent direction: fidelity errors where the
/// prediction sits below the image weigh this much more, steering the
/// prediction toward the upper envelope that the floored map actually uses.
const UNDER_PREDICTION_WEIGHT: f64 = 4.0;

// Independent RNG streams per concern, all derived from the config seed.
const SEED_ENHANCER_INIT: u64 = 0;
const SEED_STAGE1_CROPS: u64 = 1;
const SEED_FUSION_INIT: u64 = 2;
const SEED_STAGE2_CROPS: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed.wrapping_add(stream))
}

fn conv_grad_slices(grads: &[Conv2d]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(grads.len() * 2);
    for c in grads {
        out.push(c.weight.as_slice().unwrap());
        out.push(c.bias.as_slice().unwrap());
    }
    out
}

fn scale_conv_grads(grads: &mut [Conv2d], k: f64) {
    for c in grads.iter_mut() {
        c.weight.mapv_inplace(|v| v * k);
        c.bias.mapv_inplace(|v| v * k);
    }
}

/// BT.601 luma of a CHW 3-channel array.
fn luma_chw(en: &Array3<f64>) -> Array2<f64> {
    let r = en.index_axis(Axis(0), 0);
    let g = en.index_axis(Axis(0), 1);
    let b = en.index_axis(Axis(0), 2);
    Array2::from_shape_fn(r.dim(), |ix| 0.299 * r[ix] + 0.587 * g[ix] + 0.114 * b[ix])
}

/// Stage 1: trains the shared illumination estimator on patches from both
/// modalities (infrared patches are channel-replicated).
pub fn train_enhancer(ds: &PairedDataset, cfg: &FusionConfig) -> Result<TrainedEnhancer> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let mut model =
        EnhancerModel::init(cfg.enhancer_config(), &mut stream_rng(cfg.seed, SEED_ENHANCER_INIT));
    let mut crop_rng = stream_rng(cfg.seed, SEED_STAGE1_CROPS);
    let mut opt = Adam::new(cfg.adam_beta1, cfg.adam_beta2);
    let mut losses = Vec::with_capacity(cfg.stage1_epochs);

    for epoch in 0..cfg.stage1_epochs {
        let lr = cfg.lr_at_epoch(epoch);
        // one crop per pair per epoch, both modalities
        let mut samples: Vec<Array3<f64>> = Vec::with_capacity(2 * ds.len());
        for idx in 0..ds.len() {
            let (ir, vi) = ds.load_pair(idx)?;
            let (ir_p, vi_p) = sample_patch(&ir, &vi, cfg, &mut crop_rng)?;
            samples.push(crate::illum::hwc_to_chw(ir_p.replicate3().data()));
            samples.push(crate::illum::hwc_to_chw(vi_p.replicate3().data()));
        }
        let mut epoch_loss = 0.0;
        for batch in samples.chunks(cfg.stage1_batch) {
            let mut grads = model.zero_grads();
            for x in batch {
                let trace = model.forward_trace(x)?;
                let img_hwc = crate::illum::chw_to_hwc(x);
                // The logged loss is the real objective at the floored map.
                let l_hwc = crate::illum::chw_to_hwc(&trace.out);
                epoch_loss += enhancement_loss_grad(&img_hwc, &l_hwc, cfg.lambda_tv).0;
                // Descend on the objective evaluated at the raw prediction:
                // the floor's flat side has no gradient, and descending
                // through it one-sidedly lets the prediction sink under the
                // image and never return. Under-predictions carry extra
                // weight so the prediction settles near the upper envelope,
                // where it agrees with the floored map.
                let sig_hwc = crate::illum::chw_to_hwc(&trace.sig);
                let (_, mut g_sig) = enhancement_loss_grad(&img_hwc, &sig_hwc, cfg.lambda_tv);
                let n = sig_hwc.len() as f64;
                for ((g, &s), &i) in g_sig.iter_mut().zip(sig_hwc.iter()).zip(img_hwc.iter()) {
                    if s < i {
                        // extra fidelity pull for the under-prediction side
                        *g += (UNDER_PREDICTION_WEIGHT - 1.0) * 2.0 * (s - i) / n;
                    }
                }
                model.backward_sigma(&trace, &crate::illum::hwc_to_chw(&g_sig), &mut grads);
            }
            scale_conv_grads(&mut grads, 1.0 / batch.len() as f64);
            let grad_slices = conv_grad_slices(&grads);
            let mut params = model.tensors_mut();
            opt.step(lr, &mut params, &grad_slices);
        }
        losses.push(epoch_loss / samples.len() as f64);
    }
    Ok(TrainedEnhancer { model, losses })
}

/// Per-sample forward state of the stage-2 pipeline for one modality.
struct ModalityState {
    /// Patch in CHW, channel-replicated to 3.
    x: Array3<f64>,
    /// Enhancer trace when this modality was enhanced.
    trace: Option<crate::illum::EnhancerTrace>,
    /// Enhanced (or raw) image in CHW.
    en: Array3<f64>,
    /// Y plane fed to the fusion network.
    y: Array2<f64>,
}

fn enhance_modality(enh: &EnhancerModel, patch: &ImageTensor, enabled: bool) -> Result<ModalityState> {
    let x = crate::illum::hwc_to_chw(patch.replicate3().data());
    if !enabled {
        let y = luma_chw(&x);
        let en = x.clone();
        return Ok(ModalityState { x, trace: None, en, y });
    }
    let trace = enh.forward_trace(&x)?;
    let mut en = &x / &trace.out;
    en.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let y = luma_chw(&en);
    Ok(ModalityState { x, trace: Some(trace), en, y })
}

/// Backprop a Y-plane gradient through luma extraction and the Retinex
/// division into enhancer parameter gradients.
fn backprop_modality(
    enh: &EnhancerModel,
    state: &ModalityState,
    g_y: &Array2<f64>,
    grads: &mut [Conv2d],
) {
    let Some(trace) = &state.trace else { return };
    let (_, h, w) = state.x.dim();
    let mut g_l = Array3::zeros((3, h, w));
    let coef = [0.299, 0.587, 0.114];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let ratio = state.en[(c, y, x)];
                if ratio < 1.0 {
                    // en = x / L  =>  d en / d L = -x / L^2
                    let l = trace.out[(c, y, x)];
                    g_l[(c, y, x)] =
                        coef[c] * g_y[(y, x)] * (-state.x[(c, y, x)] / (l * l));
                }
            }
        }
    }
    enh.backward(trace, &g_l, grads);
}

/// Stage 2: trains the fusion network (and optionally fine-tunes the
/// enhancer) on enhanced Y patches under the total loss.
pub fn train_fusion(
    ds: &PairedDataset,
    enh: &EnhancerModel,
    cfg: &FusionConfig,
) -> Result<TrainedFusion> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let flags = cfg.flags();
    let lw = cfg.loss_weights();
    let mut model =
        FusionModel::init(cfg.fusion_arch(), flags, &mut stream_rng(cfg.seed, SEED_FUSION_INIT));
    let mut enh = enh.clone();
    let fine_tune = !cfg.freeze_enhancer;
    let mut crop_rng = stream_rng(cfg.seed, SEED_STAGE2_CROPS);
    let mut opt = Adam::new(cfg.adam_beta1, cfg.adam_beta2);
    let mut enh_opt = Adam::new(cfg.adam_beta1, cfg.adam_beta2);
    let mut losses = Vec::with_capacity(cfg.stage2_epochs);

    for epoch in 0..cfg.stage2_epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut crops: Vec<(ImageTensor, ImageTensor)> = Vec::with_capacity(ds.len());
        for idx in 0..ds.len() {
            let (ir, vi) = ds.load_pair(idx)?;
            crops.push(sample_patch(&ir, &vi, cfg, &mut crop_rng)?);
        }
        let mut epoch_loss = 0.0;
        for batch in crops.chunks(cfg.stage2_batch) {
            let mut grads: FusionGrads = model.zero_grads();
            let mut enh_grads = enh.zero_grads();
            for (ir_p, vi_p) in batch {
                let ir_state = enhance_modality(&enh, ir_p, flags.enhance_ir)?;
                let vi_state = enhance_modality(&enh, vi_p, flags.enhance_vis)?;
                let w = stam_weights(&ir_state.y, &vi_state.y, cfg)?;
                let trace = model.forward_y_trace(&ir_state.y, &vi_state.y)?;
                let fused = trace.fused_plane();
                let (loss, g_fused, g_a, g_b) =
                    loss_grad_planes(LossKind::Total, &fused, &ir_state.y, &vi_state.y, &w, &lw)?;
                epoch_loss += loss;
                let (g_yir_net, g_yvi_net) =
                    model.backward_y(&trace, &g_fused, &mut grads, fine_tune);
                if fine_tune {
                    let g_yir = g_a + g_yir_net.unwrap();
                    let g_yvi = g_b + g_yvi_net.unwrap();
                    backprop_modality(&enh, &ir_state, &g_yir, &mut enh_grads);
                    backprop_modality(&enh, &vi_state, &g_yvi, &mut enh_grads);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            let grad_slices = grads.param_slices();
            let mut params = model.param_slices_mut();
            opt.step(lr, &mut params, &grad_slices);
            if fine_tune {
                scale_conv_grads(&mut enh_grads, inv);
                let enh_slices = conv_grad_slices(&enh_grads);
                let mut enh_params = enh.tensors_mut();
                enh_opt.step(lr, &mut enh_params, &enh_slices);
            }
        }
        losses.push(epoch_loss / crops.len() as f64);
    }
    Ok(TrainedFusion { model, losses, enhancer: fine_tune.then_some(enh) })
}

/// Saliency-derived loss weights (uniform 0.5/0.5 when STAM is disabled).
fn stam_weights(y_ir: &Array2<f64>, y_vi: &Array2<f64>, cfg: &FusionConfig) -> Result<WeightPair> {
    if !cfg.use_stam {
        let (h, w) = y_ir.dim();
        return Ok(WeightPair::uniform(h, w));
    }
    let ir_img = ImageTensor::from_clamped(plane_to_hw1(y_ir));
    let vi_img = ImageTensor::from_clamped(plane_to_hw1(y_vi));
    let d_ir = saliency::saliency_map(&ir_img, cfg.saliency_p)?;
    let d_vi = saliency::saliency_map(&vi_img, cfg.saliency_p)?;
    saliency::fusion_weights(&d_ir, &d_vi)
}

fn plane_to_hw1(p: &Array2<f64>) -> Array3<f64> {
    let (h, w) = p.dim();
    Array3::from_shape_fn((h, w, 1), |(y, x, _)| p[(y, x)])
}

/// Total trainable scalar parameters across both networks.
pub fn count_parameters(enh: &EnhancerModel, fus: &FusionModel) -> usize {
    enh.param_count() + fus.param_count()
}

/// Hard ceiling on the combined parameter budget.
pub const PARAM_BUDGET: usize = 1_000_000;

/// Writes one `epoch,loss` row per epoch.
pub fn write_loss_log(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let mut out = String::new();
    for (epoch, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
