//! One function per subcommand. Each reads its inputs (meshes and upstream
//! artifacts under `outdir`), runs the stage and writes `<outdir>/<stage>/`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use shapeharmony::metrics::{evaluate_with, map_targets, write_curve_csv};
use shapeharmony::tta::{final_map_from, FrameReport};
use shapeharmony::{
    adapt, build_operators, build_ssm, compute_eigenbasis, generality, geodesics, load_mesh,
    nearest_features, optimize_features, optimize_trajectory, row_normalize, specificity,
    standardize, wks, write_obj, EigenBasis, Error, EvalReport, FeatureField, FinalMapSource,
    MapExport, Mesh, PointMap, Trajectory,
};

use crate::config::{GroundTruth, PipelineConfig, Stage};
use crate::error::{CliError, Context};

const MAP_XY: &str = "map_xy.txt";
const MAP_YX: &str = "map_yx.txt";
const BASELINE_XY: &str = "baseline_xy.txt";
const BASELINE_YX: &str = "baseline_yx.txt";

struct Pair {
    x: Mesh,
    y: Mesh,
}

fn load(path: &Path) -> Result<Mesh, CliError> {
    load_mesh(path, None).context(format!("loading {}", path.display()))
}

fn load_normalized(path: &Path) -> Result<Mesh, CliError> {
    load(path)?
        .normalize()
        .context(format!("normalizing {}", path.display()))
}

fn load_pair(cfg: &PipelineConfig) -> Result<Pair, CliError> {
    Ok(Pair {
        x: load_normalized(&cfg.mesh_x)?,
        y: load_normalized(&cfg.mesh_y)?,
    })
}

fn stage_dir(cfg: &PipelineConfig, stage: Stage) -> PathBuf {
    cfg.outdir.join(stage.dir())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
        .context("creating output directory")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .context("writing report")
}

fn basis(mesh: &Mesh, k: usize, which: &str) -> Result<EigenBasis, CliError> {
    let ops = build_operators(mesh).context(format!("operators of {which}"))?;
    compute_eigenbasis(&ops, k).context(format!("eigenbasis of {which}"))
}

fn read_map(path: &Path, n_src: usize, n_dst: usize) -> Result<PointMap, CliError> {
    let map = PointMap::read_hard(path, n_dst).context(format!("reading {}", path.display()))?;
    if map.n_src() != n_src {
        return Err(CliError::Domain {
            context: format!("reading {}", path.display()),
            source: Error::Dimension(format!(
                "map has {} rows, mesh has {n_src} vertices",
                map.n_src()
            )),
        });
    }
    Ok(map)
}

fn jittered(f: &FeatureField, sigma: f64, rng: &mut ChaCha8Rng) -> FeatureField {
    if sigma == 0.0 {
        return f.clone();
    }
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let mut values = f.values.clone();
    // column-major order, fixed by the seed
    for v in values.iter_mut() {
        *v += noise.sample(rng);
    }
    FeatureField {
        values,
        normalized: false,
    }
}

#[derive(Debug, Serialize)]
pub struct MatchReport {
    pub n_x: usize,
    pub n_y: usize,
    pub k: usize,
    pub feature_dim: usize,
    pub export: MapExport,
    pub best_iter: usize,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub trace: Vec<f64>,
}

/// Bases, initial features, feature optimization; writes hard maps, the WKS
/// nearest-neighbour baseline and both functional maps.
pub fn run_match(cfg: &PipelineConfig) -> Result<MatchReport, CliError> {
    let pair = load_pair(cfg)?;
    let bx = basis(&pair.x, cfg.k, "X")?;
    let by = basis(&pair.y, cfg.k, "Y")?;
    let d = cfg.matching.feature_dim;
    let wx = standardize(&wks(&bx, d).context("descriptors of X")?);
    let wy = standardize(&wks(&by, d).context("descriptors of Y")?);

    let (nx, ny) = (
        row_normalize(&wx).context("normalizing X descriptors")?,
        row_normalize(&wy).context("normalizing Y descriptors")?,
    );
    let baseline_xy = nearest_features(&nx, &ny).context("baseline map")?;
    let baseline_yx = nearest_features(&ny, &nx).context("baseline map")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fx = jittered(&wx, cfg.init_jitter, &mut rng);
    let fy = jittered(&wy, cfg.init_jitter, &mut rng);
    let result =
        optimize_features(&bx, &by, (&fx, &fy), &cfg.matching).context("feature optimization")?;

    let dir = stage_dir(cfg, Stage::Match);
    create_dir(&dir)?;
    let write = |m: &PointMap, name: &str| {
        m.write_hard(dir.join(name))
            .context(format!("writing {name}"))
    };
    write(&result.maps.0, MAP_XY)?;
    write(&result.maps.1, MAP_YX)?;
    write(&baseline_xy, BASELINE_XY)?;
    write(&baseline_yx, BASELINE_YX)?;
    result
        .c_xy
        .write(dir.join("c_xy.fmap"))
        .context("writing c_xy.fmap")?;
    result
        .c_yx
        .write(dir.join("c_yx.fmap"))
        .context("writing c_yx.fmap")?;
    let report = MatchReport {
        n_x: pair.x.n_vertices(),
        n_y: pair.y.n_vertices(),
        k: cfg.k,
        feature_dim: d,
        export: cfg.matching.export,
        best_iter: result.best_iter,
        initial_loss: result.trace[0],
        best_loss: result.best_loss(),
        trace: result.trace,
    };
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "match: loss {:.6} -> {:.6} (best iteration {})",
        report.initial_loss, report.best_loss, report.best_iter
    );
    Ok(report)
}

/// Trajectory optimization from the match stage's hard maps.
pub fn run_interpolate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let pair = load_pair(cfg)?;
    let (nx, ny) = (pair.x.n_vertices(), pair.y.n_vertices());
    let m = stage_dir(cfg, Stage::Match);
    let pi_xy = read_map(&m.join(MAP_XY), nx, ny)?;
    let pi_yx = read_map(&m.join(MAP_YX), ny, nx)?;
    let out = optimize_trajectory(&pair.x, &pair.y, &pi_xy, &pi_yx, &cfg.interpolate)
        .context("trajectory optimization")?;

    let dir = stage_dir(cfg, Stage::Interpolate);
    create_dir(&dir)?;
    out.x
        .write_frames(dir.join("x"), &pair.x)
        .context("writing X frames")?;
    out.y
        .write_frames(dir.join("y"), &pair.y)
        .context("writing Y frames")?;
    write_json(
        &dir.join("manifest.json"),
        &out.manifest(cfg.interpolate.weights),
    )?;
    println!(
        "interpolate: loss {:.6} -> {:.6}, arap {:.6} -> {:.6}",
        out.initial.total, out.best.total, out.initial.arap, out.best.arap
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TtaReport<'a> {
    final_map: FinalMapSource,
    frames: &'a [FrameReport],
}

/// Per-frame shape adaptation of the interpolated X frames; writes the
/// shape field, adapted frames and the final `X -> Y` map.
pub fn run_tta(cfg: &PipelineConfig) -> Result<(), CliError> {
    let pair = load_pair(cfg)?;
    let (nx, ny) = (pair.x.n_vertices(), pair.y.n_vertices());
    let steps = cfg.interpolate.steps;
    let interp = stage_dir(cfg, Stage::Interpolate);
    let tx = Trajectory::read_frames(interp.join("x"), steps).context("reading X frames")?;
    let ty = Trajectory::read_frames(interp.join("y"), steps).context("reading Y frames")?;
    if tx.n() != nx || ty.n() != ny {
        return Err(CliError::Domain {
            context: "reading frames".into(),
            source: Error::Dimension("frames do not match the configured meshes".into()),
        });
    }
    let pi_xy = read_map(&stage_dir(cfg, Stage::Match).join(MAP_XY), nx, ny)?;
    let adaptation = adapt(&tx, &ty, &pair.x, &cfg.tta).context("adaptation")?;
    let map = final_map_from(&tx, &ty, &adaptation.field, &pi_xy, cfg.tta.final_map)
        .context("final map")?;
    let adapted = Trajectory {
        frames: tx
            .frames
            .iter()
            .zip(&adaptation.field.deltas)
            .map(|(f, d)| f + d)
            .collect(),
    };

    let dir = stage_dir(cfg, Stage::Tta);
    create_dir(&dir)?;
    adaptation
        .field
        .write(dir.join("field.sfld"))
        .context("writing field.sfld")?;
    map.write_hard(dir.join(MAP_XY))
        .context("writing final map")?;
    adapted
        .write_frames(dir.join("adapted"), &pair.x)
        .context("writing adapted frames")?;
    write_json(
        &dir.join("report.json"),
        &TtaReport {
            final_map: cfg.tta.final_map,
            frames: &adaptation.frames,
        },
    )?;
    let (before, after) = adaptation.frames.iter().fold((0.0, 0.0), |(b, a), f| {
        (b + f.initial_chamfer, a + f.final_chamfer)
    });
    println!("tta: chamfer summed over frames {before:.6e} -> {after:.6e}");
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct NamedReport {
    pub name: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    gt: &'a GroundTruth,
    maps: &'a [NamedReport],
}

/// Scores the final, match and baseline maps that exist under `outdir`.
pub fn run_eval(cfg: &PipelineConfig) -> Result<Vec<NamedReport>, CliError> {
    let pair = load_pair(cfg)?;
    let (nx, ny) = (pair.x.n_vertices(), pair.y.n_vertices());
    let gt = match &cfg.gt {
        GroundTruth::None => return Err(CliError::Usage("eval needs a ground truth".into())),
        GroundTruth::Identity if nx != ny => {
            return Err(CliError::Domain {
                context: "identity ground truth".into(),
                source: Error::Dimension(format!("meshes have {nx} and {ny} vertices")),
            })
        }
        GroundTruth::Identity => PointMap::identity(nx),
        GroundTruth::File(p) => read_map(p, nx, ny)?,
    };
    let candidates = [
        ("final", stage_dir(cfg, Stage::Tta).join(MAP_XY)),
        ("match", stage_dir(cfg, Stage::Match).join(MAP_XY)),
        (
            "wks_baseline",
            stage_dir(cfg, Stage::Match).join(BASELINE_XY),
        ),
    ];
    let present: Vec<_> = candidates
        .into_iter()
        .filter(|(_, p)| p.is_file())
        .collect();
    if present.is_empty() {
        return Err(CliError::Domain {
            context: "eval".into(),
            source: Error::EmptyInput(format!("no maps found under {}", cfg.outdir.display())),
        });
    }
    let geo =
        geodesics(&pair.y, &map_targets(&gt).context("ground truth")?).context("geodesics on Y")?;
    let mut reports = Vec::with_capacity(present.len());
    for (name, path) in &present {
        let pred = read_map(path, nx, ny)?;
        let report = evaluate_with(&pair.x, &pair.y, &pred, &gt, &geo, &cfg.eval)
            .context(format!("evaluating {name}"))?;
        reports.push(NamedReport {
            name: name.to_string(),
            report,
        });
    }

    let dir = stage_dir(cfg, Stage::Eval);
    create_dir(&dir)?;
    for r in &reports {
        write_curve_csv(dir.join(format!("pck_{}.csv", r.name)), &r.report.pck)
            .context("writing PCK curve")?;
        write_curve_csv(
            dir.join(format!("conformal_{}.csv", r.name)),
            &r.report.conformal_curve,
        )
        .context("writing conformal curve")?;
    }
    write_json(
        &dir.join("report.json"),
        &EvalOutput {
            gt: &cfg.gt,
            maps: &reports,
        },
    )?;
    println!(
        "{:<14} {:>16} {:>8} {:>10}",
        "map", "geo err (x100)", "AUC", "conformal"
    );
    for r in &reports {
        println!(
            "{:<14} {:>16.3} {:>8.4} {:>10.4}",
            r.name,
            100.0 * r.report.mean_geo_err,
            r.report.auc,
            r.report.mean_conformal
        );
    }
    Ok(reports)
}

#[derive(Debug, Serialize)]
pub struct SsmMetrics {
    pub shapes: usize,
    pub n: usize,
    pub modes: usize,
    pub variances: Vec<f64>,
    /// `(q, value)` pairs.
    pub generality: Vec<(usize, f64)>,
    pub specificity: Vec<(usize, f64)>,
}

/// Shape model over the configured shapes, or over the adapted X frames of a
/// pipeline run when none are configured.
pub fn run_ssm(cfg: &PipelineConfig) -> Result<SsmMetrics, CliError> {
    let (template, shapes): (Mesh, Vec<DMatrix<f64>>) = if cfg.ssm.shapes.is_empty() {
        let x = load_normalized(&cfg.mesh_x)?;
        let frames = Trajectory::read_frames(
            stage_dir(cfg, Stage::Tta).join("adapted"),
            cfg.interpolate.steps,
        )
        .context("reading adapted frames")?;
        (x, frames.frames)
    } else {
        let meshes = cfg
            .ssm
            .shapes
            .iter()
            .map(|p| load(p))
            .collect::<Result<Vec<_>, _>>()?;
        let shapes = meshes.iter().map(Mesh::positions).collect();
        (
            meshes.into_iter().next().expect("validated non-empty"),
            shapes,
        )
    };
    let m = shapes.len();
    if m < 3 {
        return Err(CliError::Domain {
            context: "ssm".into(),
            source: Error::Dimension(format!(
                "a shape model needs at least 3 shapes here, got {m}"
            )),
        });
    }
    let q = cfg.ssm.modes.unwrap_or(m - 1).min(m - 1);
    let model = build_ssm(&shapes, q).context("building shape model")?;
    let top = model.modes().max(1);
    // leave-one-out models see m - 1 shapes, so at most m - 2 modes
    let gen = (1..=top.min(m - 2))
        .map(|q| Ok((q, generality(&shapes, q).context("generality")?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let spec = (1..=top)
        .map(|q| {
            Ok((
                q,
                specificity(&model, q, cfg.ssm.specificity_trials, cfg.seed)
                    .context("specificity")?,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let dir = stage_dir(cfg, Stage::Ssm);
    create_dir(&dir)?;
    model
        .write(dir.join("model.ssm"))
        .context("writing model.ssm")?;
    let export = |positions: &DMatrix<f64>, name: String| -> Result<(), CliError> {
        let mesh = template.with_positions(positions).context("sample mesh")?;
        write_obj(dir.join(&name), &mesh).context(format!("writing {name}"))
    };
    export(&model.mean, "mean.obj".into())?;
    for j in 0..cfg.ssm.exported_modes.min(model.modes()) {
        let mut coeffs = vec![0.0; j + 1];
        for (sign, tag) in [(1.0, "plus"), (-1.0, "minus")] {
            coeffs[j] = sign * cfg.ssm.sample_sd;
            let s = model.sample(&coeffs).context("sampling")?;
            export(&s, format!("mode_{j}_{tag}.obj"))?;
        }
    }
    let metrics = SsmMetrics {
        shapes: m,
        n: model.n(),
        modes: model.modes(),
        variances: model.variances.clone(),
        generality: gen,
        specificity: spec,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!("ssm: {} shapes, {} modes", m, metrics.modes);
    for (q, g) in &metrics.generality {
        println!("  generality (q = {q}): {g:.6e}");
    }
    for (q, s) in &metrics.specificity {
        println!("  specificity (q = {q}): {s:.6e}");
    }
    Ok(metrics)
}

/// All stages in order; evaluation runs only with a configured ground truth.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(), CliError> {
    run_match(cfg)?;
    run_interpolate(cfg)?;
    run_tta(cfg)?;
    if cfg.gt == GroundTruth::None {
        println!("eval: skipped (no ground truth configured)");
    } else {
        run_eval(cfg)?;
    }
    run_ssm(cfg)?;
    Ok(())
}
