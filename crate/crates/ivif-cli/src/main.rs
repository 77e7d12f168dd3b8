//! Command-line entry points for the fusion pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors
//! (missing/undecodable files, bad datasets, bad checkpoints, bad config
//! files). `params` exits 3 when the model is over the parameter budget.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use ivif::checkpoint;
use ivif::image::{load_image, save_image, ImageTensor};
use ivif::metrics;
use ivif::saliency;
use ivif::trainer::{self, FusionConfig};
use ivif::Error;

#[derive(Parser)]
#[command(
    name = "ivif",
    version,
    about = "Illumination-aware infrared/visible image fusion",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the illumination enhancement network (stage 1).
    TrainEnhancer {
        /// Dataset root containing ir/ and vi/ subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Flat key=value config file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss log path (default: <out>.loss.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the fusion network (stage 2) on enhanced inputs.
    TrainFusion {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 enhancer checkpoint.
        #[arg(long)]
        enhancer: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Use uniform 0.5/0.5 loss weights instead of saliency.
        #[arg(long)]
        no_stam: bool,
        /// Replace the attention/differential block with plain concatenation.
        #[arg(long)]
        no_adfm: bool,
        /// Feed the raw infrared image (skip its enhancement).
        #[arg(long)]
        no_enhance_ir: bool,
        /// Feed the raw visible image (skip its enhancement).
        #[arg(long)]
        no_enhance_vis: bool,
    },
    /// Fuse one infrared/visible pair, or two directories pairwise.
    Fuse {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vi: PathBuf,
        #[arg(long)]
        enhancer: PathBuf,
        #[arg(long)]
        fusion: PathBuf,
        /// Output image (or directory in batch mode).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score fused images against their sources with six quality metrics.
    Eval {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vi: PathBuf,
        /// Report path; a machine-readable <out>.json is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the total trainable parameter count and budget verdict.
    Params {
        #[arg(long)]
        enhancer: PathBuf,
        #[arg(long)]
        fusion: PathBuf,
    },
    /// Dump a histogram-contrast saliency map as a grayscale PNG.
    Saliency {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Even positive saliency exponent.
        #[arg(short, long, default_value_t = 2)]
        p: u32,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> ivif::Result<i32> {
    match cmd {
        Command::TrainEnhancer { data, config, out, log } => {
            let cfg = FusionConfig::load(config.as_deref())?;
            let ds = trainer::load_dataset(&data)?;
            println!(
                "training enhancer: {} pairs, {} epochs, batch {}",
                ds.len(),
                cfg.stage1_epochs,
                cfg.stage1_batch
            );
            let trained = trainer::train_enhancer(&ds, &cfg)?;
            checkpoint::save_enhancer(&trained.model, &out)?;
            let log_path = log.unwrap_or_else(|| default_log_path(&out));
            trainer::write_loss_log(&log_path, &trained.losses)?;
            println!(
                "done: first-epoch loss {:.6}, last-epoch loss {:.6}",
                trained.losses.first().unwrap(),
                trained.losses.last().unwrap()
            );
            println!("checkpoint: {}", out.display());
            println!("loss log: {}", log_path.display());
            Ok(0)
        }
        Command::TrainFusion {
            data,
            enhancer,
            config,
            out,
            log,
            no_stam,
            no_adfm,
            no_enhance_ir,
            no_enhance_vis,
        } => {
            let mut cfg = FusionConfig::load(config.as_deref())?;
            cfg.use_stam &= !no_stam;
            cfg.use_adfm &= !no_adfm;
            cfg.enhance_ir &= !no_enhance_ir;
            cfg.enhance_vis &= !no_enhance_vis;
            let enh = checkpoint::load_enhancer(&enhancer)?;
            let ds = trainer::load_dataset(&data)?;
            println!(
                "training fusion: {} pairs, {} epochs, batch {}, stam={} adfm={} e/inf={} e/vis={}",
                ds.len(),
                cfg.stage2_epochs,
                cfg.stage2_batch,
                cfg.use_stam,
                cfg.use_adfm,
                cfg.enhance_ir,
                cfg.enhance_vis
            );
            let trained = trainer::train_fusion(&ds, &enh, &cfg)?;
            checkpoint::save_fusion(&trained.model, &out)?;
            let log_path = log.unwrap_or_else(|| default_log_path(&out));
            trainer::write_loss_log(&log_path, &trained.losses)?;
            if let Some(tuned) = &trained.enhancer {
                let mut tuned_path = out.as_os_str().to_owned();
                tuned_path.push(".enhancer");
                checkpoint::save_enhancer(tuned, Path::new(&tuned_path))?;
                println!("fine-tuned enhancer: {}", Path::new(&tuned_path).display());
            }
            println!(
                "done: first-epoch loss {:.6}, last-epoch loss {:.6}",
                trained.losses.first().unwrap(),
                trained.losses.last().unwrap()
            );
            println!("checkpoint: {}", out.display());
            println!("loss log: {}", log_path.display());
            Ok(0)
        }
        Command::Fuse { ir, vi, enhancer, fusion, out } => {
            let enh = checkpoint::load_enhancer(&enhancer)?;
            let fus = checkpoint::load_fusion(&fusion)?;
            if ir.is_dir() != vi.is_dir() {
                return Err(Error::Dataset(
                    "--ir and --vi must both be files or both be directories".into(),
                ));
            }
            if ir.is_dir() {
                let irs = metrics::list_images(&ir)?;
                let vis = metrics::list_images(&vi)?;
                if irs.keys().ne(vis.keys()) {
                    return Err(Error::Dataset(format!(
                        "unmatched basenames: ir {:?} vs vi {:?}",
                        irs.keys().collect::<Vec<_>>(),
                        vis.keys().collect::<Vec<_>>()
                    )));
                }
                if irs.is_empty() {
                    return Err(Error::Dataset("no image pairs to fuse".into()));
                }
                std::fs::create_dir_all(&out)?;
                for (name, ir_path) in &irs {
                    let fused = fuse_one(&enh, &fus, ir_path, &vis[name])?;
                    let out_path = out.join(format!("{name}.png"));
                    save_image(&fused, &out_path)?;
                    println!("{}", out_path.display());
                }
            } else {
                let fused = fuse_one(&enh, &fus, &ir, &vi)?;
                save_image(&fused, &out)?;
                println!("{}", out.display());
            }
            Ok(0)
        }
        Command::Eval { fused, ir, vi, out } => {
            let report = metrics::evaluate_pairs(&fused, &ir, &vi)?;
            metrics::write_report(&report, &out)?;
            let m = &report.means;
            println!("pairs evaluated: {}", report.pairs.len());
            println!(
                "means: en={:.4} scd={:.4} fmi_w={:.4} qabf={:.4} sf={:.5} ms_ssim={:.4}",
                m.en, m.scd, m.fmi_w, m.qabf, m.sf, m.ms_ssim
            );
            println!("report: {} (+ .json)", out.display());
            Ok(0)
        }
        Command::Params { enhancer, fusion } => {
            let enh = checkpoint::load_enhancer(&enhancer)?;
            let fus = checkpoint::load_fusion(&fusion)?;
            let total = trainer::count_parameters(&enh, &fus);
            let budget = trainer::PARAM_BUDGET;
            println!("enhancer parameters: {}", enh.param_count());
            println!("fusion parameters:   {}", fus.param_count());
            println!("total parameters:    {total} ({:.3} M)", total as f64 / 1e6);
            if total <= budget {
                println!("within budget: {total} <= {budget}");
                Ok(0)
            } else {
                println!("OVER BUDGET: {total} > {budget}");
                Ok(3)
            }
        }
        Command::Saliency { input, out, p } => {
            let img = load_image(&input)?;
            let gray = ImageTensor::from_plane(ivif::image::luma(&img))?;
            let map = saliency::saliency_map(&gray, p)?;
            let map_img = ImageTensor::from_plane(map.data().clone())?;
            save_image(&map_img, &out)?;
            println!("{}", out.display());
            Ok(0)
        }
    }
}

fn fuse_one(
    enh: &ivif::illum::EnhancerModel,
    fus: &ivif::fusenet::FusionModel,
    ir: &Path,
    vi: &Path,
) -> ivif::Result<ImageTensor> {
    let ir_img = load_image(ir)?;
    let vi_img = load_image(vi)?.replicate3();
    ivif::fusenet::fuse_pair(enh, fus, &ir_img, &vi_img)
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".loss.csv");
    PathBuf::from(name)
}
