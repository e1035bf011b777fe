use std::path::{Path, PathBuf};

use bevkit::camera::{DepthBinsRecord, GridRecord};
use bevkit::instances::DecodeParams;
use bevkit::io::read_json;
use bevkit::losses::LossWeights;
use bevkit::synth::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::args::GlobalArgs;
use crate::CliError;

/// JSON file accepted by `--config`; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub grid: Option<GridRecord>,
    pub depth_bins: Option<DepthBinsRecord>,
    pub decode: Option<DecodeParams>,
    pub loss: Option<LossWeights>,
    pub beta: Option<f64>,
    pub scene: Option<SceneConfig>,
}

/// Effective parameters after merging defaults, the config file and flags.
#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub grid: GridRecord,
    pub depth_bins: DepthBinsRecord,
    /// Whether grid or bins were overridden, so a rig file's own values can win otherwise.
    pub grid_overridden: bool,
    pub bins_overridden: bool,
    pub decode: DecodeParams,
    pub beta: f64,
    pub scene: SceneConfig,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => read_json::<RunConfig>(p)?,
            None => RunConfig::default(),
        };
        let mut grid = file.grid.unwrap_or_default();
        let mut grid_overridden = file.grid.is_some();
        if let Some(r) = args.grid_res {
            grid.resolution = r;
            grid_overridden = true;
        }
        if let Some(e) = args.grid_extent {
            grid.extent_x = e;
            grid.extent_y = e;
            grid_overridden = true;
        }
        let mut bins = file.depth_bins.unwrap_or_default();
        let mut bins_overridden = file.depth_bins.is_some();
        for (flag, slot) in [
            (args.dmin, &mut bins.d_min),
            (args.dmax, &mut bins.d_max),
            (args.dsize, &mut bins.d_size),
        ] {
            if let Some(v) = flag {
                *slot = v;
                bins_overridden = true;
            }
        }
        grid.build()?;
        bins.build()?;

        let mut decode = file.decode.unwrap_or_default();
        if let Some(v) = args.center_threshold {
            decode.center_threshold = v;
        }
        if let Some(v) = args.nms_window {
            decode.nms_window = v;
        }
        if let Some(v) = args.match_distance {
            decode.max_match_distance = v;
        }
        decode.validate()?;

        // No subcommand consumes loss weights yet; they are still checked.
        file.loss.unwrap_or_default().validate()?;
        let beta = args.beta.or(file.beta).unwrap_or(1.0);
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(CliError::Usage(format!("--beta must be finite and >= 0, got {beta}")));
        }
        let seed = args.seed.or(file.seed).unwrap_or(0);

        let mut scene = file.scene.unwrap_or_default();
        if args.seed.is_some() || file.seed.is_some() {
            scene.seed = seed;
        }
        if grid_overridden {
            scene.rig.grid = grid;
        }
        if bins_overridden {
            scene.rig.depth_bins = bins;
        }

        Ok(Self {
            seed,
            output: args.output.clone().or(file.output),
            grid,
            depth_bins: bins,
            grid_overridden,
            bins_overridden,
            decode,
            beta,
            scene,
        })
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::Usage("this subcommand needs -o/--output".into()))
    }
}
