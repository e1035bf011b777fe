use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bevkit", version, about = "Bird's-eye-view world-model toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides shared by every subcommand. Flags beat `--config`, which beats defaults.
#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Strict JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// BeV cell size in meters.
    #[arg(long, global = true)]
    pub grid_res: Option<f64>,
    /// Side of the square BeV extent in meters.
    #[arg(long, global = true)]
    pub grid_extent: Option<f64>,
    #[arg(long, global = true)]
    pub dmin: Option<f64>,
    #[arg(long, global = true)]
    pub dmax: Option<f64>,
    #[arg(long, global = true)]
    pub dsize: Option<f64>,
    #[arg(long, global = true)]
    pub center_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub nms_window: Option<usize>,
    /// Tracking gate in meters.
    #[arg(long, global = true)]
    pub match_distance: Option<f64>,
    /// KL weight of the sequential bound.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Output file or directory.
    #[arg(short = 'o', long = "output", global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scene and write a dataset bundle.
    Synth {
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Lift one camera's features and splat them into the BeV grid.
    Lift {
        /// Rig JSON (cameras, depth bins, grid).
        #[arg(long)]
        rig: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Warp a BeV field by a planar rigid motion.
    Warp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tx: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        ty: f64,
    },
    /// Decode and track the label heads of a bundle.
    Decode {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Decode one frame from its heads and carry ids over from the previous map.
    Track {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        seg: PathBuf,
        #[arg(long)]
        centerness: PathBuf,
        #[arg(long)]
        offset: PathBuf,
        /// First fresh id; defaults to one above the largest previous id.
        #[arg(long)]
        next_id: Option<u32>,
    },
    /// Video panoptic quality of predicted against ground-truth instance maps.
    Vpq {
        /// Instance-map files, or directories of them, in time order.
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = RangeArg::Long)]
        range: RangeArg,
    },
    /// Compare the sequential bound with the exact evidence of a linear-Gaussian model.
    ElboDemo {
        /// Model JSON; a random model from --seed when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Trajectory JSON lines; sampled from the model when absent.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        state_dim: usize,
        #[arg(long, default_value_t = 1)]
        action_dim: usize,
        #[arg(long, default_value_t = 2)]
        obs_dim: usize,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Rasterize boxes and write every label target.
    Labels {
        /// Boxes JSON lines, one list per frame.
        #[arg(long)]
        boxes: PathBuf,
    },
    /// Export one channel of a field as an 8-bit PGM.
    RenderPgm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, allow_hyphen_values = true)]
        min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        max: Option<f64>,
    },
    /// Encode, align, decode and score a bundle end to end.
    Pipeline {
        #[arg(long)]
        bundle: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RangeArg {
    Short,
    Long,
}
