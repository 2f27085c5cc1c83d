//! `truss-harvest` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{aggregate_report, render_csv, render_markdown, simulate, EpisodeRecord, HarvestPolicy, NoiseModel, SimConfig};
use crate::clustering::{adaptive_dbscan, ClusterParams, ImageBounds};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::io;
use crate::phenotyping::{
    associate_fruits_2d, build_phenotype, resolve_ambiguous, AssociationParams, CloudDepth, DetectionClass,
    FruitSphere, QualityTable,
};
use crate::planning::{plan_wrap_trajectory, resolve_collisions, EffectorModel, PlanParams, ShiftParams};
use crate::pose::{
    accuracy_at, adjust_sigmas, default_multipliers, estimate_sigmas, oks, PedicelKeypoints3,
    SigmaVector,
};

#[derive(Debug, Parser)]
#[command(name = "truss-harvest", version, about = "Truss-tomato perception, planning and harvest simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Md,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster a depth cloud per truss detection and print truss phenotypes.
    Phenotype {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Clustering parameters JSON.
        #[arg(long)]
        cluster: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// OKS of predicted against ground-truth keypoint annotations.
    PoseEval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Seven-element sigma array; defaults to 0.05 for every keypoint.
        #[arg(long)]
        sigmas: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75")]
        thresholds: Vec<f64>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Estimate per-keypoint sigmas from repeated annotations.
    Sigmas {
        /// Expert annotation file.
        #[arg(long)]
        expert: PathBuf,
        /// One file per annotator, objects in the expert's order.
        #[arg(long, num_args = 1.., required = true)]
        annotators: Vec<PathBuf>,
        /// Seven multipliers applied after estimation.
        #[arg(long)]
        multipliers: Option<PathBuf>,
        /// Fallback for keypoints with too few samples.
        #[arg(long, default_value_t = 0.05)]
        default_sigma: f64,
    },
    /// Plan a wrap trajectory from a 3D pose and fruit spheres.
    Plan {
        /// `{"keypoints": [[x, y, z] x 7]}`, SP first.
        #[arg(long)]
        pose: PathBuf,
        /// `[{"center": [x, y, z], "radius": r}, ...]`.
        #[arg(long)]
        spheres: PathBuf,
        #[arg(long)]
        effector: Option<PathBuf>,
    },
    /// Run synthetic harvest episodes and print the report.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 15)]
        episodes: usize,
        /// Noise model JSON; zero noise when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// `controlled`, `continuous` or a policy JSON file.
        #[arg(long, default_value = "continuous")]
        policy: String,
        /// Simulation config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the episode records to this file.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
    /// Render a report from episode records.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on input or domain errors, 2 on
/// usage errors.
pub fn run<I, S>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            if !text.ends_with('\n') {
                let _ = out.write_all(b"\n");
            }
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Phenotype { detections, cloud, intrinsics, cluster, format } => {
            phenotype(&detections, &cloud, &intrinsics, cluster.as_deref(), format)
        }
        Command::PoseEval { pred, gt, sigmas, thresholds, format } => pose_eval(&pred, &gt, sigmas.as_deref(), &thresholds, format),
        Command::Sigmas { expert, annotators, multipliers, default_sigma } => {
            sigmas(&expert, &annotators, multipliers.as_deref(), default_sigma)
        }
        Command::Plan { pose, spheres, effector } => plan(&pose, &spheres, effector.as_deref()),
        Command::Simulate { seed, episodes, noise, policy, config, records, format } => {
            let noise = match noise {
                Some(p) => io::read_json::<NoiseModel>(&p)?,
                None => NoiseModel::zero(),
            };
            let policy = match policy.as_str() {
                "controlled" => HarvestPolicy::controlled(),
                "continuous" => HarvestPolicy::continuous(),
                path => io::read_json(Path::new(path))?,
            };
            let cfg = match config {
                Some(p) => io::read_json::<SimConfig>(&p)?,
                None => SimConfig::default(),
            };
            cfg.validate()?;
            let recs = simulate(seed, episodes, &noise, &policy, &cfg)?;
            if let Some(path) = records {
                std::fs::write(&path, io::to_json(&recs)?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
            render(&recs, format)
        }
        Command::Report { records, format } => render(&io::read_json::<Vec<EpisodeRecord>>(&records)?, format),
    }
}

fn render(records: &[EpisodeRecord], format: Format) -> Result<String> {
    let report = aggregate_report(records)?;
    match format {
        Format::Md => Ok(render_markdown(&report)),
        Format::Csv => render_csv(&report),
        Format::Json => io::to_json(&report),
    }
}

fn phenotype(
    detections: &Path,
    cloud: &Path,
    intrinsics: &Path,
    cluster: Option<&Path>,
    format: Format,
) -> Result<String> {
    let k = io::parse_intrinsics(&intrinsics.display().to_string(), &io::read_text(intrinsics)?)?;
    let cloud = io::parse_cloud(&cloud.display().to_string(), &io::read_text(cloud)?)?;
    let dets = io::parse_detections(&detections.display().to_string(), &io::read_text(detections)?)?;
    let params: ClusterParams<f64> = match cluster {
        Some(p) => io::read_json(p)?,
        None => ClusterParams::default(),
    };
    params.validate()?;
    let trusses: Vec<_> = dets.iter().filter(|d| d.class == DetectionClass::Truss).copied().collect();
    let fruits: Vec<_> = dets.iter().filter(|d| d.class == DetectionClass::Fruit).copied().collect();
    let association = associate_fruits_2d(&fruits, &trusses, &AssociationParams::default())?;
    let association = resolve_ambiguous(&association, &dets, &cloud, &params, &k)?;
    let bounds = ImageBounds::from(&k);
    let grades = QualityTable::default();

    let mut out = Vec::new();
    for t in &trusses {
        let ids = association.assigned_to(t.id);
        let members: Vec<_> = fruits.iter().filter(|f| ids.contains(&f.id)).copied().collect();
        if members.is_empty() {
            continue;
        }
        let seeds: Vec<_> = members.iter().map(|f| f.bbox.center()).collect();
        let clusters = adaptive_dbscan(&cloud, &t.bbox, &seeds, &params, bounds)?;
        let mut keep: Vec<usize> = clusters
            .seed_assignments
            .iter()
            .filter_map(|s| s.cluster)
            .flat_map(|c| clusters.members(c))
            .collect();
        keep.sort_unstable();
        keep.dedup();
        let sub = cloud.select(&keep);
        let phen = build_phenotype(t, &members, None, &k, &CloudDepth::new(&sub, params.seed_window))?;
        let grade = grades.grade(&phen).map(str::to_string);
        out.push((phen, grade));
    }
    match format {
        Format::Json => io::to_json(
            &out.iter()
                .map(|(p, g)| {
                    let mut v = serde_json::to_value(p).map_err(|e| Error::Io(e.to_string()))?;
                    v["grade"] = json!(g);
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => {
            let mut s = String::from("| Truss | Fruits | Ripe | Terminal | Median volume (cm³) | Grade |\n|---|---|---|---|---|---|\n");
            for (p, g) in &out {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {:.2} | {} |\n",
                    p.truss_id,
                    p.fruit_count,
                    p.overall_ripe,
                    p.terminal_fruit_id,
                    p.median_volume() * 1e6,
                    g.as_deref().unwrap_or("-")
                ));
            }
            Ok(s)
        }
    }
}

fn pose_eval(pred: &Path, gt: &Path, sigmas: Option<&Path>, thresholds: &[f64], format: Format) -> Result<String> {
    let preds = io::parse_annotations(&pred.display().to_string(), &io::read_text(pred)?)?;
    let gts = io::parse_annotations(&gt.display().to_string(), &io::read_text(gt)?)?;
    let sigmas = match sigmas {
        Some(p) => SigmaVector::new(io::parse_seven(&p.display().to_string(), &io::read_text(p)?)?)?,
        None => SigmaVector::uniform(0.05)?,
    };
    let mut pairs_p = Vec::new();
    let mut pairs_g = Vec::new();
    let mut rows = Vec::new();
    for (ga, g) in &gts {
        let (_, p) = preds
            .iter()
            .find(|(pa, _)| pa.image_id == ga.image_id && pa.truss_id == ga.truss_id)
            .ok_or_else(|| Error::parse(pred.display().to_string(), format!("no prediction for image {} truss {}", ga.image_id, ga.truss_id)))?;
        let score = oks(p, g, &sigmas)?;
        rows.push(json!({"image_id": ga.image_id, "truss_id": ga.truss_id, "oks": score}));
        pairs_p.push(p.clone());
        pairs_g.push(g.clone());
    }
    let mut accuracy = Vec::new();
    for t in thresholds {
        accuracy.push(json!({"threshold": t, "accuracy": accuracy_at(&pairs_p, &pairs_g, &sigmas, *t)?}));
    }
    match format {
        Format::Json => io::to_json(&json!({"objects": rows, "accuracy": accuracy})),
        _ => {
            let mut s = String::from("| Threshold | Accuracy |\n|---|---|\n");
            for a in &accuracy {
                s.push_str(&format!("| {} | {:.4} |\n", a["threshold"], a["accuracy"].as_f64().unwrap_or(f64::NAN)));
            }
            Ok(s)
        }
    }
}

fn sigmas(expert: &Path, annotators: &[PathBuf], multipliers: Option<&Path>, default_sigma: f64) -> Result<String> {
    let gt: Vec<_> = io::parse_annotations(&expert.display().to_string(), &io::read_text(expert)?)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let mut sets = Vec::new();
    for a in annotators {
        let list = io::parse_annotations(&a.display().to_string(), &io::read_text(a)?)?;
        sets.push(list.into_iter().map(|(_, s)| s).collect::<Vec<_>>());
    }
    let estimate = estimate_sigmas(&sets, &gt)?;
    let resolved = estimate.resolve(&SigmaVector::uniform(default_sigma)?);
    let mult = match multipliers {
        Some(p) => io::parse_seven(&p.display().to_string(), &io::read_text(p)?)?,
        None => default_multipliers(),
    };
    let adjusted = adjust_sigmas(&resolved, &mult)?;
    let unestimable: Vec<&str> = estimate.unestimable().iter().map(|n| n.label()).collect();
    io::to_json(&json!({
        "estimated": estimate.0,
        "unestimable": unestimable,
        "sigmas": resolved.0,
        "adjusted": adjusted.0,
    }))
}

#[derive(Debug, Deserialize, Serialize)]
struct PoseFile {
    keypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize, Serialize)]
struct SphereRecord {
    center: [f64; 3],
    radius: f64,
}

fn plan(pose: &Path, spheres: &Path, effector: Option<&Path>) -> Result<String> {
    let source = pose.display().to_string();
    let file: PoseFile = io::read_json(pose)?;
    let kps: [[f64; 3]; 7] = file
        .keypoints
        .as_slice()
        .try_into()
        .map_err(|_| Error::parse(&source, format!("expected 7 keypoints, found {}", file.keypoints.len())))?;
    let pose = PedicelKeypoints3::from_positions(kps.map(|p| Point3::new(p[0], p[1], p[2])), 1.0)?;
    let spheres = io::read_json::<Vec<SphereRecord>>(spheres)?
        .into_iter()
        .map(|s| FruitSphere::new(Point3::new(s.center[0], s.center[1], s.center[2]), s.radius))
        .collect::<Result<Vec<_>>>()?;
    let effector: EffectorModel<f64> = match effector {
        Some(p) => io::read_json(p)?,
        None => EffectorModel::default(),
    };
    let planned = plan_wrap_trajectory(&pose, &spheres, &effector, &PlanParams::default())?;
    let traj = resolve_collisions(&planned, &spheres, &effector, &ShiftParams::default())?;
    io::to_json(&io::trajectory_records(&traj))
}
