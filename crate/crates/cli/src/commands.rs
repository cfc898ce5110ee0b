use std::io::Write;
use std::path::{Path, PathBuf};

use sldepth_core::denoise::{apply, default_radius, FilterConfig, RangeKernel};
use sldepth_core::depth_image::{depth_map_to_disparity_map, synth_scene};
use sldepth_core::io::{
    read_manifest, read_pose_sidecar, write_label_raster, write_pose_sidecar, write_resolution_csv,
    CameraConfig, DepthEncoding, DepthRasterFile, ExperimentConfig, PlaneList, SceneConfig,
};
use sldepth_core::noise_model::{
    analyze_depth_resolution, disparity_levels_per_unit, estimate_subpixel_resolution,
};
use sldepth_core::planes::extract_planes;
use sldepth_core::tsdf::{fuse_volume, PlyFormat, VolumeParams, WeightingMode};
use sldepth_core::{CameraModel, DepthMap};

use crate::error::CliError;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
use crate::{Command, FilterModeArg, WeightArg};

/// Depth separating the near and far report bands of `denoise`.
const FAR_BAND_MM: f64 = 2000.0;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            scene,
            out,
            labels_out,
            pose_out,
            quantize,
        } => simulate(&scene, &out, labels_out, pose_out.as_deref(), quantize),
        Command::AnalyzeNoise { input, camera, csv } => {
            analyze_noise(&input, camera.as_deref(), csv.as_deref())
        }
        Command::Denoise {
            input,
            out,
            mode,
            sigma_s,
            sigma_d,
            k,
            radius,
            truth_scene,
        } => {
            let range = match (mode, sigma_d, k) {
                (FilterModeArg::Gaussian, None, None) => None,
                (FilterModeArg::Bilateral, Some(sigma_d), None) => {
                    Some(RangeKernel::Fixed { sigma_d })
                }
                (FilterModeArg::Adaptive, None, Some(k)) => Some(RangeKernel::Adaptive { k }),
                (FilterModeArg::Bilateral, None, _) => {
                    return Err(usage("bilateral mode requires --sigma-d"))
                }
                (FilterModeArg::Adaptive, _, None) => {
                    return Err(usage("adaptive mode requires --k"))
                }
                (FilterModeArg::Gaussian, ..) => {
                    return Err(usage("gaussian mode takes neither --sigma-d nor --k"));
                }
                (FilterModeArg::Bilateral, _, Some(_)) => {
                    return Err(usage("--k conflicts with bilateral mode"))
                }
                (FilterModeArg::Adaptive, Some(_), _) => {
                    return Err(usage("--sigma-d conflicts with adaptive mode"))
                }
            };
            let cfg = FilterConfig {
                sigma_s,
                radius: radius.unwrap_or_else(|| default_radius(sigma_s)),
                range,
            };
            denoise(&input, &out, &cfg, truth_scene.as_deref())
        }
        Command::Fuse {
            scans,
            mode,
            voxel,
            out,
            camera,
            truncation,
            margin,
            ascii,
            truth_scene,
        } => {
            let mode = match mode {
                WeightArg::Uniform => WeightingMode::Uniform,
                WeightArg::Quartic => WeightingMode::InverseQuartic,
            };
            let format = if ascii {
                PlyFormat::Ascii
            } else {
                PlyFormat::BinaryLittleEndian
            };
            let opts = FuseOptions {
                mode,
                voxel,
                truncation,
                margin,
                format,
            };
            fuse(
                &scans,
                &out,
                camera.as_deref(),
                &opts,
                truth_scene.as_deref(),
            )
        }
        Command::Planes {
            input,
            camera,
            tau,
            sigma,
            min_area,
            labels_out,
            json_out,
        } => planes(
            &input,
            camera.as_deref(),
            tau,
            sigma,
            min_area,
            labels_out.as_deref(),
            json_out.as_deref(),
        ),
    }
}

fn usage(msg: &str) -> CliError {
    CliError::Usage(msg.to_owned())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn camera_for(config: &CameraConfig, map: &DepthMap) -> Result<CameraModel, CliError> {
    Ok(config.model_for(map.width(), map.height())?)
}

fn scene_of(cfg: &ExperimentConfig, path: &Path) -> Result<SceneConfig, CliError> {
    cfg.scene
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{}: no [scene] section", path.display())))
}

fn simulate(
    scene_path: &Path,
    out: &Path,
    labels_out: Option<PathBuf>,
    pose_out: Option<&Path>,
    quantize: bool,
) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(scene_path)?;
    let scene = scene_of(&cfg, scene_path)?;
    let cam = cfg.camera.model()?;
    let (w, h) = (cfg.camera.width, cfg.camera.height);
    let result = synth_scene(
        &scene.surfaces,
        &cam,
        &scene.pose(),
        w,
        h,
        &cfg.synth_options(quantize),
    )?;
    let file = DepthRasterFile::new(result.depth, cam.depth_step);
    file.save(out, DepthEncoding::smallest_lossless(&file.map))?;
    let labels_path = labels_out.unwrap_or_else(|| out.with_extension("labels"));
    write_label_raster(&result.labels, create(&labels_path)?)?;
    if let Some(p) = pose_out {
        write_pose_sidecar(&scene.pose(), create(p)?)?;
    }
    say!(
        "wrote {} ({w}x{h}, {} valid pixels, {}) and {}",
        out.display(),
        file.map.valid_count(),
        if quantize { "quantized" } else { "continuous" },
        labels_path.display()
    );
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn analyze_noise(input: &Path, camera: Option<&Path>, csv: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(camera)?;
    let file = DepthRasterFile::load(input)?;
    let cam = camera_for(&cfg.camera, &file.map)?;
    let analysis = analyze_depth_resolution(file.map.iter_valid().map(|(_, _, z)| z))?;
    say!("unique depths: {}", analysis.unique_depths.len());
    say!(
        "depth range: {} .. {} mm",
        analysis.unique_depths[0],
        analysis.unique_depths[analysis.unique_depths.len() - 1]
    );
    say!("slope: {:.4}", analysis.slope);
    say!("intercept: {:.4}", analysis.intercept);
    match estimate_subpixel_resolution(&file.map, &cam) {
        Ok(step) => {
            let fb = cam.fb();
            let levels =
                disparity_levels_per_unit(file.map.iter_valid().map(|(_, _, z)| fb / z), step);
            // The lowest complete unit interval is the least affected by depth rounding.
            let lowest = levels.iter().nth(1).or_else(|| levels.iter().next());
            match lowest {
                Some((unit, n)) => say!(
                    "disparity step: {step} px ({n} levels in [{unit}, {}) px)",
                    unit + 1
                ),
                None => say!("disparity step: {step} px"),
            }
        }
        Err(e) => say!("disparity step: not estimated ({e})"),
    }
    if let Some(path) = csv {
        write_resolution_csv(&analysis, create(path)?)?;
        say!("wrote {}", path.display());
    }
    Ok(())
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

fn denoise(
    input: &Path,
    out: &Path,
    cfg: &FilterConfig,
    truth: Option<&Path>,
) -> Result<(), CliError> {
    let file = DepthRasterFile::load(input)?;
    let filtered = apply(&file.map, cfg)?;
    let change = rms(file
        .map
        .iter_valid()
        .zip(filtered.iter_valid())
        .map(|((_, _, a), (_, _, b))| b - a));
    let result = DepthRasterFile::new(filtered, file.depth_step);
    result.save(out, DepthEncoding::smallest_lossless(&result.map))?;
    match change {
        Some(c) => say!(
            "rms change: {c:.4} mm over {} pixels",
            file.map.valid_count()
        ),
        None => say!("rms change: n/a (no valid pixels)"),
    }
    if let Some(path) = truth {
        let tcfg = ExperimentConfig::load(path)?;
        let scene = scene_of(&tcfg, path)?;
        let map = &file.map;
        let cam = camera_for(&tcfg.camera, map)?;
        let truth = synth_scene(
            &scene.surfaces,
            &cam,
            &scene.pose(),
            map.width(),
            map.height(),
            &tcfg.synth_options(false),
        )?;
        // Pixels whose window is cut by the image border are left out: one-sided
        // windows bias every filter on a slanted surface.
        let (w, h, r) = (map.width(), map.height(), cfg.radius);
        let band = |m: &DepthMap, far: bool| {
            rms(m.iter_valid().filter_map(|(x, y, z)| {
                let t = truth.true_depth[y * w + x];
                let inside = x >= r && y >= r && x + r < w && y + r < h;
                (inside && t > 0.0 && (t > FAR_BAND_MM) == far).then_some(z - t)
            }))
        };
        for (name, far) in [("near (Z <= 2000 mm)", false), ("far (Z > 2000 mm)", true)] {
            match (band(map, far), band(&result.map, far)) {
                (Some(before), Some(after)) => say!(
                    "{name} band residual: {before:.4} -> {after:.4} mm ({:.1}% of input)",
                    100.0 * after / before.max(f64::MIN_POSITIVE)
                ),
                _ => say!("{name} band residual: n/a (no pixels)"),
            }
        }
    }
    say!("wrote {}", out.display());
    Ok(())
}

struct FuseOptions {
    mode: WeightingMode,
    voxel: f64,
    truncation: Option<f64>,
    margin: f64,
    format: PlyFormat,
}

fn fuse(
    manifest: &Path,
    out: &Path,
    camera: Option<&Path>,
    opts: &FuseOptions,
    truth: Option<&Path>,
) -> Result<(), CliError> {
    if !(opts.voxel.is_finite() && opts.voxel > 0.0) {
        return Err(usage("--voxel must be positive"));
    }
    if !(opts.margin.is_finite() && opts.margin >= 0.0) {
        return Err(usage("--margin must be non-negative"));
    }
    let cfg = load_config(camera)?;
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: manifest lists no scans",
            manifest.display()
        )));
    }
    let mut scans = Vec::with_capacity(entries.len());
    for e in &entries {
        let map = DepthRasterFile::load(&e.raster)?.map;
        let reader = std::fs::File::open(&e.pose)
            .map(std::io::BufReader::new)
            .map_err(|err| CliError::Io(format!("{}: {err}", e.pose.display())))?;
        let pose = read_pose_sidecar(reader)
            .map_err(|err| CliError::Io(format!("{}: {err}", e.pose.display())))?;
        scans.push((map, pose));
    }
    let (w, h) = (scans[0].0.width(), scans[0].0.height());
    if scans.iter().any(|(m, _)| (m.width(), m.height()) != (w, h)) {
        return Err(usage("all scans must share one raster size"));
    }
    let cam = camera_for(&cfg.camera, &scans[0].0)?;
    let mut params = VolumeParams::enclosing_scans(&scans, &cam, opts.voxel, opts.margin)
        .ok_or_else(|| CliError::Insufficient("no valid depth in any scan".into()))?;
    params.truncation = opts.truncation;

    let volume = fuse_volume(&scans, &cam, &params, opts.mode)?;
    let mesh = volume.extract_mesh();
    let [nx, ny, nz] = params.dims;
    say!(
        "volume: {nx}x{ny}x{nz} voxels of {} mm, {} observed",
        opts.voxel,
        volume.observed_count()
    );
    say!(
        "mesh: {} vertices, {} triangles",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    let mut writer = create(out)?;
    mesh.write_ply(&mut writer, opts.format)?;
    writer
        .flush()
        .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    if let Some(path) = truth {
        let tcfg = ExperimentConfig::load(path)?;
        let surfaces = scene_of(&tcfg, path)?.surfaces;
        for mode in [WeightingMode::InverseQuartic, WeightingMode::Uniform] {
            let m = if mode == opts.mode {
                mesh.clone()
            } else {
                fuse_volume(&scans, &cam, &params, mode)?.extract_mesh()
            };
            match m.rms_distance_to(&surfaces) {
                Some(e) => say!("rms to truth ({}): {e:.4} mm", mode_name(mode)),
                None => say!("rms to truth ({}): n/a (empty mesh)", mode_name(mode)),
            }
        }
    }
    say!("wrote {}", out.display());
    Ok(())
}

fn mode_name(mode: WeightingMode) -> &'static str {
    match mode {
        WeightingMode::Uniform => "uniform",
        WeightingMode::InverseQuartic => "quartic",
    }
}

fn planes(
    input: &Path,
    camera: Option<&Path>,
    tau: Option<f64>,
    sigma: Option<f64>,
    min_area: Option<usize>,
    labels_out: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(camera)?;
    let file = DepthRasterFile::load(input)?;
    let cam = camera_for(&cfg.camera, &file.map)?;
    let mut params = cfg.planes;
    params.tau = tau.unwrap_or(params.tau);
    params.sigma = sigma.unwrap_or(params.sigma);
    params.min_area = min_area.unwrap_or(params.min_area);
    let dmap = depth_map_to_disparity_map(&file.map, &cam);
    let seg = extract_planes(&dmap, &cam, &params)?;
    say!(
        "{} planes after {} iterations",
        seg.planes.len(),
        seg.iterations
    );
    for (i, p) in seg.planes.iter().enumerate() {
        let n = p.unit_normal();
        say!(
            "  plane {}: {} px, normal ({:.4}, {:.4}, {:.4}), distance {:.1} mm",
            i + 1,
            p.support,
            n.x,
            n.y,
            n.z,
            1.0 / nalgebra::Vector3::from(p.world).norm()
        );
    }
    if let Some(path) = labels_out {
        write_label_raster(&seg.labels, create(path)?)?;
        say!("wrote {}", path.display());
    }
    if let Some(path) = json_out {
        let list = PlaneList {
            width: file.map.width(),
            height: file.map.height(),
            iterations: seg.iterations,
            planes: seg.planes.clone(),
        };
        std::fs::write(path, list.to_json()? + "\n")
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        say!("wrote {}", path.display());
    }
    Ok(())
}
