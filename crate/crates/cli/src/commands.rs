use std::fs;
use std::path::{Path, PathBuf};

use bevkit::camera::{lift_features, splat_to_bev, CameraFeature, RigRecord};
use bevkit::egomotion::{warp_bev, SE2Pose};
use bevkit::fields::Field3D;
use bevkit::instances::{
    assign_pixels, generate_labels, nms_peaks, boxes_to_occupancy, track_step, BevBox, InstanceMap,
    SegmentationHead, CENTERNESS_SIGMA,
};
use bevkit::io::{read_bgrid, read_json, read_jsonl, write_bgrid, write_json, write_pgm};
use bevkit::metrics::{crop_to_range, vpq, Range, VpqInput};
use bevkit::pipeline::{label_heads, run_pipeline};
use bevkit::probabilistic::{
    expected_sequential_free_energy, kalman_log_evidence, lgssm_filter, random_model,
    sample_trajectory, sequential_free_energy_mc, ModelRecord, Trajectory, TrajectoryStep,
};
use bevkit::synth::{label_file, load_dataset, make_dataset};
use bevkit::{Error, NoiseSource};
use serde::Serialize;

use crate::args::{Command, RangeArg};
use crate::config::Settings;
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Writes to `-o` when given, stdout otherwise.
fn emit_json<T: Serialize>(s: &Settings, value: &T) -> CmdResult {
    match &s.output {
        Some(p) => Ok(write_json(p, value)?),
        None => {
            print_json(value);
            Ok(())
        }
    }
}

fn instance_map(path: &Path) -> Result<InstanceMap, CliError> {
    InstanceMap::from_field(&read_bgrid(path)?).map_err(|e| Error::format(path, e.to_string()).into())
}

fn single_channel(path: &Path) -> Result<bevkit::fields::Field2D<f64>, CliError> {
    let f = read_bgrid(path)?;
    if f.channels() != 1 {
        return Err(Error::format(path, format!("expected 1 channel, got {}", f.channels())).into());
    }
    Ok(f.channel(0))
}

/// Expands directories into their sorted `.bgrid` files.
fn expand_maps(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "bgrid"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn run(command: &Command, s: &Settings) -> CmdResult {
    match command {
        Command::Synth { vehicles, horizon } => {
            let mut cfg = s.scene.clone();
            if let Some(v) = vehicles {
                cfg.num_vehicles = *v;
            }
            if let Some(h) = horizon {
                cfg.horizon = *h;
            }
            let out = s.output()?;
            let ds = make_dataset(&cfg, out)?;
            println!(
                "wrote {} frames, {} vehicles, {} cameras to {}",
                ds.labels.len(),
                ds.timeline.vehicles.len(),
                cfg.rig.cameras.len(),
                out.display()
            );
            Ok(())
        }
        Command::Lift { rig, camera, content, depth } => {
            let mut record: RigRecord = read_json(rig)?;
            if s.grid_overridden {
                record.grid = s.grid;
            }
            if s.bins_overridden {
                record.depth_bins = s.depth_bins;
            }
            let cams = record.build_cameras()?;
            let cam = cams.get(*camera).ok_or_else(|| {
                CliError::Usage(format!("camera {camera} not in rig of {} cameras", cams.len()))
            })?;
            let feat = CameraFeature::new(read_bgrid(content)?, read_bgrid(depth)?)?;
            let lifted = lift_features(&feat, &cam.intrinsics, &record.depth_bins.build()?)?;
            let bev = splat_to_bev(&lifted, &cam.cam_to_ego, &record.grid.build()?);
            write_bgrid(s.output()?, &bev)?;
            Ok(())
        }
        Command::Warp { input, yaw, tx, ty } => {
            let field = read_bgrid(input)?;
            let warped = warp_bev(&field, &SE2Pose::new(*yaw, *tx, *ty), &s.grid.build()?)?;
            write_bgrid(s.output()?, &warped)?;
            Ok(())
        }
        Command::Decode { bundle } => {
            let ds = load_dataset(bundle)?;
            let grid = ds.config.rig.grid.build()?;
            let decoded = bevkit::instances::decode_sequence(&label_heads(&ds.labels), &s.decode, &grid)?;
            let out = s.output()?;
            create_dir(&out.join("maps"))?;
            for (t, m) in decoded.maps.iter().enumerate() {
                write_bgrid(out.join("maps").join(format!("t{t:03}_instance.bgrid")), &m.to_field())?;
            }
            write_json(out.join("match_log.json"), &decoded.matches)?;
            for d in &decoded.diagnostics {
                eprintln!("warning: {d}");
            }
            Ok(())
        }
        Command::Track { prev, flow, seg, centerness, offset, next_id } => {
            let prev = instance_map(prev)?;
            let seg = SegmentationHead::Binary(single_channel(seg)?).foreground()?;
            let centers = nms_peaks(&single_channel(centerness)?, &s.decode)?;
            let assign = assign_pixels(&seg, &read_bgrid(offset)?, &centers)?;
            if let Some(d) = &assign.diagnostic {
                eprintln!("warning: {d}");
            }
            let mut next = next_id.unwrap_or_else(|| prev.instance_ids().last().map_or(1, |m| m + 1));
            let (h, w) = prev.shape();
            let grid = s.grid.build()?;
            if (grid.height(), grid.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "maps are {h}x{w} but the grid is {}x{}",
                    grid.height(),
                    grid.width()
                ))
                .into());
            }
            let step = track_step(&prev, &read_bgrid(flow)?, &centers, &assign.map, &s.decode, &grid, 1, &mut next)?;
            write_bgrid(s.output()?, &step.map.to_field())?;
            print_json(&step.matches);
            Ok(())
        }
        Command::Vpq { pred, gt, range } => {
            let load = |paths: &[PathBuf]| -> Result<Vec<InstanceMap>, CliError> {
                expand_maps(paths)?.iter().map(|p| instance_map(p)).collect()
            };
            let (mut p, mut g) = (load(pred)?, load(gt)?);
            if let RangeArg::Short = range {
                let grid = s.grid.build()?;
                let crop = |maps: &[InstanceMap]| -> Result<Vec<InstanceMap>, CliError> {
                    Ok(maps
                        .iter()
                        .map(|m| crop_to_range(m, &grid, Range::Short))
                        .collect::<bevkit::Result<Vec<_>>>()?)
                };
                p = crop(&p)?;
                g = crop(&g)?;
            }
            let report = vpq(&VpqInput { pred: &p, gt: &g })?;
            emit_json(s, &report)
        }
        Command::ElboDemo { model, trajectory, state_dim, action_dim, obs_dim, steps, samples } => {
            let mut noise = NoiseSource::new(s.seed);
            let model = match model {
                Some(p) => read_json::<ModelRecord>(p)?.build().map_err(|e| Error::format(p, e.to_string()))?,
                None => random_model(&mut noise, *state_dim, *action_dim, *obs_dim)?,
            };
            let traj = match trajectory {
                Some(p) => Trajectory::from_steps(&read_jsonl::<TrajectoryStep>(p)?)
                    .map_err(|e| Error::format(p, e.to_string()))?,
                None => sample_trajectory(&model, *steps, &mut noise)?,
            };
            let q = lgssm_filter(&model, &traj)?;
            let evidence = kalman_log_evidence(&model, &traj)?;
            let expected = expected_sequential_free_energy(&model, &traj, &q, s.beta)?;
            let mc = sequential_free_energy_mc(&model, &traj, &q, s.beta, s.seed, *samples)?;
            #[derive(Serialize)]
            struct Report {
                beta: f64,
                steps: usize,
                log_evidence: f64,
                bound_expected: f64,
                bound_mc_mean: f64,
                bound_mc_std_error: f64,
                samples: usize,
                gap: f64,
            }
            emit_json(
                s,
                &Report {
                    beta: s.beta,
                    steps: traj.len(),
                    log_evidence: evidence,
                    bound_expected: expected,
                    bound_mc_mean: mc.mean,
                    bound_mc_std_error: mc.std_error,
                    samples: mc.samples,
                    gap: evidence - expected,
                },
            )
        }
        Command::Labels { boxes } => {
            let frames: Vec<Vec<BevBox>> = read_jsonl(boxes)?;
            let grid = s.grid.build()?;
            let maps = frames
                .iter()
                .map(|b| boxes_to_occupancy(b, &grid).map(|(_, m)| m))
                .collect::<bevkit::Result<Vec<_>>>()?;
            let out = s.output()?;
            create_dir(&out.join("labels"))?;
            for (t, l) in generate_labels(&maps, CENTERNESS_SIGMA)?.iter().enumerate() {
                write_bgrid(label_file(out, t, "segmentation"), &Field3D::from(l.segmentation.clone()))?;
                write_bgrid(label_file(out, t, "instance"), &l.instance.to_field())?;
                write_bgrid(label_file(out, t, "centerness"), &Field3D::from(l.centerness.clone()))?;
                write_bgrid(label_file(out, t, "offset"), &l.offset)?;
                write_bgrid(label_file(out, t, "flow"), &l.flow)?;
                let frag = l.instance.fragmented_ids();
                if !frag.is_empty() {
                    eprintln!("warning: frame {t}: fragmented instances {frag:?}");
                }
            }
            Ok(())
        }
        Command::RenderPgm { input, channel, min, max } => {
            let field = read_bgrid(input)?;
            if *channel >= field.channels() {
                return Err(CliError::Usage(format!(
                    "channel {channel} out of range for {} channels",
                    field.channels()
                )));
            }
            let plane = field.channel(*channel);
            let lo = min.unwrap_or_else(|| plane.as_slice().iter().copied().fold(f64::INFINITY, f64::min));
            let mut hi = max.unwrap_or_else(|| plane.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max));
            if max.is_none() && hi <= lo {
                hi = lo + 1.0;
            }
            write_pgm(&plane, s.output()?, lo, hi)?;
            Ok(())
        }
        Command::Pipeline { bundle } => {
            let summary = run_pipeline(bundle, &s.decode, s.output()?)?;
            print_json(&summary);
            Ok(())
        }
    }
}
