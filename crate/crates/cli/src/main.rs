use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use objstitch::blend::OcclusionMode;
use objstitch::io::{
    detections_to_records, matches_to_records, parse_detections, parse_matches, read_raster, write_label_map,
    write_png, CanvasPolicy, DetectionSet, FlowFile, StitchConfig,
};
use objstitch::model::Raster;
use objstitch::pipeline::{evaluate, oracle, stitch, OracleInstance};
use objstitch::registration::Homography;
use objstitch::synthetic::{detect_template, geometric_matches, sprite_template, walking_scene, SceneLayout};
use objstitch::Error;

#[derive(Parser)]
#[command(name = "objstitch", version, about = "Object-aware image stitching and mosaic evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stitch a reference image and its candidates into one mosaic.
    Stitch {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reference image (image id 0).
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Candidate images (ids 1, 2, ...).
        #[arg(long, num_args = 1.., required = true)]
        candidates: Vec<PathBuf>,
        /// Detection records for every input; omit for none.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        matches: PathBuf,
        /// Dense flow grids for mesh refinement, one file per candidate.
        #[arg(long, num_args = 1..)]
        flow: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label_map: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        occlusion_mode: Option<OcclusionMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_canvas)]
        canvas: Option<CanvasPolicy>,
    },
    /// Count and score objects of a finished mosaic against its inputs.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mosaic: PathBuf,
        /// Input images (ids 0..n); the mosaic is id n.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exact minimum versus alpha-expansion on a tiny serialized model.
    Oracle {
        instance: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the synthetic walking-object scene: two views, detections and matches.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Detections and matches for evaluating a stitched synthetic mosaic:
    /// template detections on the mosaic and matches carried by the
    /// homographies of the stitch report.
    SynthEval {
        /// Directory written by `synth`; outputs go here too.
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        mosaic: PathBuf,
        #[arg(long)]
        stitch_report: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
    },
}

fn parse_canvas(s: &str) -> Result<CanvasPolicy, String> {
    match s {
        "union" => Ok(CanvasPolicy::Union),
        "reference" => Ok(CanvasPolicy::Reference),
        _ => Err(format!("unknown canvas policy '{s}' (union, reference)")),
    }
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 4,
            Error::NoRegistration | Error::InsufficientMatches(_) | Error::DegenerateWarp(_) => 3,
            Error::InstanceTooLarge { .. } => 5,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::input(path, e))
}

fn load_image(path: &Path) -> CliResult<Raster> {
    read_raster(path).map_err(|e| Failure::input(path, e))
}

fn load_config(path: Option<&Path>) -> CliResult<StitchConfig> {
    match path {
        Some(p) => Ok(StitchConfig::load(p)?),
        None => Ok(StitchConfig::default()),
    }
}

fn write_report<T: Serialize>(report: &T, path: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(Error::from)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", p.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn detections_for(path: Option<&Path>, dims: &[(usize, usize)]) -> CliResult<DetectionSet> {
    match path {
        Some(p) => parse_detections(&read_text(p)?, dims).map_err(|e| Failure::input(p, e)),
        None => Ok(DetectionSet {
            objects: vec![Vec::new(); dims.len()],
            extras: Vec::new(),
        }),
    }
}

/// Input → canvas homographies recorded in a stitch report.
fn canvas_homographies(report: &serde_json::Value, n: usize) -> Result<Vec<Homography>, String> {
    let offset: (f64, f64) = serde_json::from_value(report["canvas"]["offset"].clone()).map_err(|e| e.to_string())?;
    let shift = Homography::translation(offset.0, offset.1);
    (0..n)
        .map(|i| {
            let rows: [[f64; 3]; 3] = serde_json::from_value(report["registration"][i]["homography"].clone())
                .map_err(|e| format!("registration {i}: {e}"))?;
            let h = Homography::from_rows(rows).map_err(|e| e.to_string())?;
            shift.compose(&h).map_err(|e| e.to_string())
        })
        .collect()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Stitch {
            config,
            reference,
            candidates,
            detections,
            matches,
            flow,
            out,
            label_map,
            report,
            occlusion_mode,
            seed,
            canvas,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = occlusion_mode {
                cfg.occlusion_mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = canvas {
                cfg.canvas = c;
            }
            let images = std::iter::once(&reference)
                .chain(&candidates)
                .map(|p| load_image(p))
                .collect::<CliResult<Vec<_>>>()?;
            let dims: Vec<(usize, usize)> = images.iter().map(Raster::dims).collect();
            let dets = detections_for(detections.as_deref(), &dims)?;
            let pairs = parse_matches(&read_text(&matches)?, &dims).map_err(|e| Failure::input(&matches, e))?;
            let flows = flow
                .iter()
                .map(|p| FlowFile::parse(&read_text(p)?).map_err(|e| Failure::input(p, e)))
                .collect::<CliResult<Vec<_>>>()?;
            let result = stitch(&images, &dets, &pairs, &flows, &cfg)?;
            write_png(&result.mosaic, &out)?;
            if let Some(p) = &label_map {
                write_label_map(&result.labeling, p)?;
            }
            write_report(&result.report, report.as_deref())
        }
        Command::Evaluate {
            config,
            mosaic,
            inputs,
            detections,
            matches,
            report,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = load_image(&mosaic)?;
            let images = inputs.iter().map(|p| load_image(p)).collect::<CliResult<Vec<_>>>()?;
            let mut dims: Vec<(usize, usize)> = images.iter().map(Raster::dims).collect();
            dims.push(output.dims());
            let dets = detections_for(Some(&detections), &dims)?;
            let pairs = parse_matches(&read_text(&matches)?, &dims).map_err(|e| Failure::input(&matches, e))?;
            let r = evaluate(&output, &images, &dets, &pairs, &cfg)?;
            write_report(&r, report.as_deref())
        }
        Command::Oracle {
            instance,
            config,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            let inst: OracleInstance =
                serde_json::from_str(&read_text(&instance)?).map_err(|e| Failure::input(&instance, e))?;
            let model = inst.to_model(&cfg.energy).map_err(|e| Failure::input(&instance, e))?;
            let r = oracle(&model, &cfg)?;
            write_report(&r, report.as_deref())
        }
        Command::Synth { out_dir, seed } => {
            let scene = walking_scene(seed, SceneLayout::default())?;
            fs::create_dir_all(&out_dir).map_err(Error::from)?;
            write_png(&scene.images[0], &out_dir.join("reference.png"))?;
            write_png(&scene.images[1], &out_dir.join("candidate.png"))?;
            let dims: Vec<(usize, usize)> = scene.images.iter().map(Raster::dims).collect();
            write_report(
                &detections_to_records(&scene.detections, &dims),
                Some(&out_dir.join("detections.json")),
            )?;
            write_report(&matches_to_records(&scene.matches), Some(&out_dir.join("matches.json")))
        }
        Command::SynthEval {
            scene_dir,
            mosaic,
            stitch_report,
            threshold,
        } => {
            let images = ["reference.png", "candidate.png"]
                .iter()
                .map(|n| load_image(&scene_dir.join(n)))
                .collect::<CliResult<Vec<_>>>()?;
            let output = load_image(&mosaic)?;
            let mut dims: Vec<(usize, usize)> = images.iter().map(Raster::dims).collect();
            dims.push(output.dims());
            let n = images.len();
            let det_path = scene_dir.join("detections.json");
            let mut dets = detections_for(Some(&det_path), &dims)?;
            dets.objects[n] = detect_template(&output, &sprite_template(), threshold, n)?;
            let match_path = scene_dir.join("matches.json");
            let mut pairs = parse_matches(&read_text(&match_path)?, &dims).map_err(|e| Failure::input(&match_path, e))?;
            let report: serde_json::Value =
                serde_json::from_str(&read_text(&stitch_report)?).map_err(|e| Failure::input(&stitch_report, e))?;
            let to_canvas = canvas_homographies(&report, n).map_err(|m| Failure::input(&stitch_report, m))?;
            for (i, h) in to_canvas.iter().enumerate() {
                pairs.push(geometric_matches(h, dims[i], output.dims(), 4, (i, n)));
            }
            write_report(
                &detections_to_records(&dets.objects, &dims),
                Some(&scene_dir.join("eval_detections.json")),
            )?;
            write_report(&matches_to_records(&pairs), Some(&scene_dir.join("eval_matches.json")))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
