//! `pmag` command-line front end.
//!
//! Every subcommand is deterministic. Exit codes: 0 success, 2 format or I/O
//! error, 3 validation error, 4 provider error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention_map::{aggregate_heatmap, TokenHeatmap};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{
    grid_from_npy, grid_to_npy, heatmap_from_npy, load_replay_provider, mask_to_npy, read_image,
    read_npy, render_heat, round_through_f32, stack_from_npy, write_image, write_npy,
    SyntheticSpec, TraceRecord,
};
use crate::magnifier::{magnify, ImageBuffer};
use crate::postprocess::{postprocess_pipeline, PostprocessConfig, DEFAULT_ALPHA, DEFAULT_KERNEL};
use crate::refinement::{
    refine, AttentionProvider, RefinementConfig, RefinementTrace, DEFAULT_BETA, DEFAULT_MAX_ITERS,
    DEFAULT_START_LAYER,
};

/// Blend weight of the heatmap layer in pipeline visualizations.
pub const VIZ_BLEND: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "pmag",
    version,
    about = "Attention-guided perception maps and image magnification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate a 4-D attention stack into a token heatmap.
    Heatmap {
        /// `[layers, heads, grid_h, grid_w]` '<f4' NPY file.
        attn: PathBuf,
        /// First aggregated layer (0-based).
        #[arg(long, default_value_t = DEFAULT_START_LAYER)]
        layer_start: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run iterative refinement and write the normalized heatmap.
    Refine {
        #[command(flatten)]
        provider: ProviderArgs,
        #[command(flatten)]
        refinement: RefineArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON trace of every pass.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Directory receiving the '|b1' mask used for each pass.
        #[arg(long)]
        mask_dir: Option<PathBuf>,
    },
    /// Turn a token heatmap into a pixel-level perception map.
    Postprocess {
        heat: PathBuf,
        #[command(flatten)]
        post: PostArgs,
        /// Output width in pixels (defaults to the heatmap width).
        #[arg(long)]
        width: Option<usize>,
        /// Output height in pixels (defaults to the heatmap height).
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp an image so high-perception regions are magnified.
    Magnify {
        image: PathBuf,
        pmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        size: OutSize,
    },
    /// Render a heatmap or perception map with the viridis colormap.
    ///
    /// Maps with values outside [0, 1] are min-max normalized first.
    Render {
        map: PathBuf,
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long, default_value_t = VIZ_BLEND)]
        blend: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine, post-process, magnify and visualize in one go.
    Pipeline {
        image: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        #[command(flatten)]
        refinement: RefineArgs,
        #[command(flatten)]
        post: PostArgs,
        #[command(flatten)]
        size: OutSize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ProviderArgs {
    /// Replay manifest listing per-pass attention dumps.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Synthetic blob provider description.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct RefineArgs {
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_START_LAYER)]
    pub layer_start: usize,
}

impl RefineArgs {
    fn config(&self) -> RefinementConfig {
        RefinementConfig {
            start_layer: self.layer_start,
            beta: self.beta,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct PostArgs {
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct OutSize {
    /// Output width (defaults to the input width).
    #[arg(long)]
    pub out_width: Option<usize>,
    /// Output height (defaults to the input height).
    #[arg(long)]
    pub out_height: Option<usize>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pmag: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Heatmap {
            attn,
            layer_start,
            out,
        } => cmd_heatmap(&attn, layer_start, &out),
        Command::Refine {
            provider,
            refinement,
            out,
            trace,
            mask_dir,
        } => cmd_refine(
            &provider,
            &refinement.config(),
            &out,
            trace.as_deref(),
            mask_dir.as_deref(),
        ),
        Command::Postprocess {
            heat,
            post,
            width,
            height,
            out,
        } => cmd_postprocess(&heat, post, width, height, &out),
        Command::Magnify {
            image,
            pmap,
            out,
            size,
        } => cmd_magnify(&image, &pmap, &out, size),
        Command::Render {
            map,
            overlay,
            blend,
            out,
        } => cmd_render(&map, overlay.as_deref(), blend, &out),
        Command::Pipeline {
            image,
            provider,
            refinement,
            post,
            size,
            out_dir,
        } => cmd_pipeline(
            &image,
            &provider,
            &refinement.config(),
            post,
            size,
            &out_dir,
        ),
    }
}

pub fn cmd_heatmap(attn: &Path, layer_start: usize, out: &Path) -> Result<()> {
    let stack = stack_from_npy(&read_npy(attn)?)?;
    let heat = aggregate_heatmap(&stack, layer_start)?;
    write_npy(out, &grid_to_npy(heat.grid()))
}

fn open_provider(args: &ProviderArgs) -> Result<Box<dyn AttentionProvider>> {
    match (&args.manifest, &args.synthetic) {
        (Some(m), None) => Ok(Box::new(load_replay_provider(m)?)),
        (None, Some(s)) => Ok(Box::new(SyntheticSpec::read(s)?.build()?)),
        _ => Err(Error::validation(
            "exactly one of --manifest or --synthetic is required",
        )),
    }
}

fn run_refinement(
    provider: &ProviderArgs,
    cfg: &RefinementConfig,
) -> Result<(TokenHeatmap, RefinementTrace)> {
    let mut p = open_provider(provider)?;
    refine(&mut p, cfg)
}

fn write_json(path: &Path, record: &TraceRecord) -> Result<()> {
    fs::write(path, record.to_json()?)?;
    Ok(())
}

pub fn cmd_refine(
    provider: &ProviderArgs,
    cfg: &RefinementConfig,
    out: &Path,
    trace_path: Option<&Path>,
    mask_dir: Option<&Path>,
) -> Result<()> {
    let (hstar, trace) = run_refinement(provider, cfg)?;
    write_npy(out, &grid_to_npy(hstar.grid()))?;
    if let Some(path) = trace_path {
        write_json(path, &TraceRecord::from_trace(&trace))?;
    }
    if let Some(dir) = mask_dir {
        fs::create_dir_all(dir)?;
        for rec in &trace.iterations {
            write_npy(
                dir.join(format!("mask{}.npy", rec.iteration)),
                &mask_to_npy(&rec.mask),
            )?;
        }
    }
    Ok(())
}

pub fn cmd_postprocess(
    heat: &Path,
    post: PostArgs,
    width: Option<usize>,
    height: Option<usize>,
    out: &Path,
) -> Result<()> {
    let heat = heatmap_from_npy(&read_npy(heat)?)?;
    let (h, w) = heat.dims();
    let cfg = PostprocessConfig {
        alpha: post.alpha,
        kernel: post.kernel,
        out_h: height.unwrap_or(h),
        out_w: width.unwrap_or(w),
    };
    let pmap = postprocess_pipeline(&heat, &cfg)?;
    write_npy(out, &grid_to_npy(pmap.grid()))
}

fn output_dims(image: &ImageBuffer, size: OutSize) -> (usize, usize) {
    (
        size.out_height.unwrap_or(image.height()),
        size.out_width.unwrap_or(image.width()),
    )
}

pub fn cmd_magnify(image: &Path, pmap: &Path, out: &Path, size: OutSize) -> Result<()> {
    let img = read_image(image)?;
    let pmap = grid_from_npy(&read_npy(pmap)?)?;
    let (oh, ow) = output_dims(&img, size);
    write_image(out, &magnify(&img, &pmap, oh, ow)?)
}

/// Values already in `[0, 1]` pass through; anything else is min-max scaled.
fn displayable(map: &Grid<f64>) -> Grid<f64> {
    match map.min_max() {
        Some((lo, hi)) if lo < 0.0 || hi > 1.0 => {
            if hi > lo {
                map.map(|v| (v - lo) / (hi - lo))
            } else {
                map.map(|_| 0.5)
            }
        }
        _ => map.clone(),
    }
}

pub fn cmd_render(map: &Path, overlay: Option<&Path>, blend: f64, out: &Path) -> Result<()> {
    let values = displayable(&grid_from_npy(&read_npy(map)?)?);
    let overlay = overlay.map(read_image).transpose()?;
    write_image(out, &render_heat(&values, overlay.as_ref(), blend)?)
}

/// Writes `hstar.npy`, `pmap.npy`, `magnified.png`, `trace.json` and
/// `viz.png` into `out_dir`.
///
/// Intermediate maps are rounded through `f32` exactly as the standalone
/// commands would see them after reading the written files, so the outputs
/// match running `refine`, `postprocess`, `magnify` and `render` in turn.
pub fn cmd_pipeline(
    image: &Path,
    provider: &ProviderArgs,
    cfg: &RefinementConfig,
    post: PostArgs,
    size: OutSize,
    out_dir: &Path,
) -> Result<()> {
    let img = read_image(image)?;
    let (hstar, trace) = run_refinement(provider, cfg)?;

    let post_cfg = PostprocessConfig {
        alpha: post.alpha,
        kernel: post.kernel,
        out_h: img.height(),
        out_w: img.width(),
    };
    let hstar = TokenHeatmap::new(round_through_f32(hstar.grid()))?;
    let pmap = postprocess_pipeline(&hstar, &post_cfg)?;
    let pmap = round_through_f32(pmap.grid());

    let (oh, ow) = output_dims(&img, size);
    let magnified = magnify(&img, &pmap, oh, ow)?;
    let viz = render_heat(&displayable(&pmap), Some(&img), VIZ_BLEND)?;

    let mut record = TraceRecord::from_trace(&trace);
    record.postprocess = Some(post_cfg);

    fs::create_dir_all(out_dir)?;
    write_npy(out_dir.join("hstar.npy"), &grid_to_npy(hstar.grid()))?;
    write_npy(out_dir.join("pmap.npy"), &grid_to_npy(&pmap))?;
    write_image(out_dir.join("magnified.png"), &magnified)?;
    write_json(&out_dir.join("trace.json"), &record)?;
    write_image(out_dir.join("viz.png"), &viz)?;
    Ok(())
}
