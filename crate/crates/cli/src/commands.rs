use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use gaborface::dataset::{load_manifest, split_dataset, DatasetManifest};
use gaborface::filter_selection::SelectionCriterion;
use gaborface::filter_selection::{available_components, filters_to_matrix};
use gaborface::gabor::{build_bank as gabor_bank, BankParams, FilterBank};
use gaborface::image::{load_image, save_pgm};
use gaborface::preprocess::{draw_eyes, draw_polygon, EyePair, GeometryParams, Point, Preprocessor};
use gaborface::recognizer::{
    enroll as fit, fit_bank, load_model, load_samples, run_split, save_model, PipelineConfig, RecognitionReport, Sample,
};
use gaborface::Stage;
use serde::Serialize;

use crate::config::{Grid, RunConfig};
use crate::{Common, DataArgs};

/// Sizes the global rayon pool from `GFR_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("GFR_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("GFR_THREADS={v:?} is not a thread count"))?;
    if n == 0 {
        bail!("GFR_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

struct Ctx {
    run: RunConfig,
    pipeline: PipelineConfig,
}

fn context(common: &Common) -> Result<Ctx> {
    let run = RunConfig::load(common.config.as_deref())?;
    let mut pipeline = run.pipeline.clone();
    if let Some(k) = common.select_k {
        pipeline.selection = SelectionCriterion::Count(k);
    }
    if let Some(v) = common.select_variance {
        if !(v > 0.0 && v <= 1.0) {
            bail!("--select-variance must be in (0, 1], got {v}");
        }
        pipeline.selection = SelectionCriterion::TargetVariance(v);
    }
    pipeline.validate()?;
    Ok(Ctx { run, pipeline })
}

fn out_dir(common: &Common, ctx: &Ctx) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| ctx.run.out_dir.clone())
        .ok_or_else(|| anyhow!("no output directory: pass --out or set out_dir in the config"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn manifest(data: &DataArgs, ctx: &Ctx) -> Result<DatasetManifest> {
    let path = data
        .manifest
        .clone()
        .or_else(|| ctx.run.manifest.clone())
        .ok_or_else(|| anyhow!("no dataset: pass --manifest or set manifest in the config"))?;
    let m = if path.is_dir() {
        DatasetManifest::from_subject_dirs(&path, true)?
    } else {
        load_manifest(&path)?
    };
    if m.entries.is_empty() {
        bail!("manifest {} lists no images", path.display());
    }
    Ok(m)
}

fn seeds(data: &DataArgs, ctx: &Ctx) -> Vec<u64> {
    match &data.seeds {
        Some(s) if !s.is_empty() => s.clone(),
        _ if !ctx.run.seeds.is_empty() => ctx.run.seeds.clone(),
        _ => vec![0],
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

#[derive(Serialize)]
struct BankSummary {
    n_filters_total: usize,
    k: usize,
    retained_variance: f64,
    available_components: usize,
    nonzero_eigenvalues: usize,
    kernel_size: usize,
    selection: SelectionCriterion,
    centered: bool,
    bank: BankParams,
}

pub fn build_bank(common: &Common) -> Result<bool> {
    let ctx = context(common)?;
    let out = out_dir(common, &ctx)?;
    let cfg = &ctx.pipeline;
    let bank = gabor_bank(&cfg.bank)?;
    let (ortho, eigens) = fit_bank(cfg)?;
    let kdir = out.join("kernels");
    fs::create_dir_all(&kdir)?;
    for (i, k) in bank.kernels().iter().enumerate() {
        let s = i / cfg.bank.n_orientations;
        let o = i % cfg.bank.n_orientations;
        save_pgm(&k.real_image(), &kdir.join(format!("gabor_s{s}_o{o}_re.pgm")))?;
        save_pgm(&k.imag_image(), &kdir.join(format!("gabor_s{s}_o{o}_im.pgm")))?;
    }
    for (i, k) in ortho.kernels.iter().enumerate() {
        save_pgm(&k.real_image(), &kdir.join(format!("ortho_{i:02}_re.pgm")))?;
        save_pgm(&k.imag_image(), &kdir.join(format!("ortho_{i:02}_im.pgm")))?;
    }
    write(&out.join("variance.csv"), eigens.variance_csv())?;
    let summary = BankSummary {
        n_filters_total: bank.len(),
        k: ortho.k,
        retained_variance: ortho.retained_variance,
        available_components: available_components(&filters_to_matrix(&bank, cfg.center_filters)?, &eigens),
        nonzero_eigenvalues: eigens.nonzero_count(),
        kernel_size: cfg.bank.kernel_size(),
        selection: cfg.selection,
        centered: cfg.center_filters,
        bank: cfg.bank.clone(),
    };
    write(&out.join("bank.json"), json(&summary))?;
    println!(
        "selected {} of {} filters, retained variance {:.4}",
        ortho.k,
        bank.len(),
        ortho.retained_variance
    );
    Ok(true)
}

fn eyes_arg(eyes: Option<&[f64]>) -> Result<Option<EyePair>> {
    match eyes {
        None => Ok(None),
        Some([lx, ly, rx, ry]) => Ok(Some(EyePair::from_coords((*lx, *ly), (*rx, *ry))?)),
        Some(_) => bail!("--eyes takes four numbers: lx,ly,rx,ry"),
    }
}

#[derive(Serialize)]
struct RoiDump {
    eyes: EyePair,
    eye_distance: f64,
    crop_corners: [Point; 4],
    mouth_corners: [Point; 4],
    geometry: GeometryParams,
}

pub fn preprocess(common: &Common, image: &Path, skip_detect: bool, eyes: Option<&[f64]>) -> Result<bool> {
    let ctx = context(common)?;
    let out = out_dir(common, &ctx)?;
    let img = load_image(image).map_err(|e| e.at(Stage::Load, Some(image.to_path_buf())))?;
    let pre = Preprocessor::new(ctx.pipeline.preprocess.clone())?;
    if skip_detect {
        let r = pre.run_prenormalized(&img)?;
        save_pgm(&r.output, &out.join("asr.pgm"))?;
        println!("wrote {}", out.join("asr.pgm").display());
        return Ok(true);
    }
    let known = eyes_arg(eyes)?;
    let r = pre
        .run(&img, known)
        .with_context(|| format!("preprocessing {}", image.display()))?;
    let eyes = r.eyes.expect("set on the detection path");
    let crop = r.crop.expect("set on the detection path");
    save_pgm(&draw_eyes(&img, &eyes), &out.join("eyes.pgm"))?;
    let boxed = draw_polygon(&draw_polygon(&img, &crop.corners()), &crop.mouth_corners());
    save_pgm(&boxed, &out.join("crop.pgm"))?;
    save_pgm(&r.normalized, &out.join("normalized.pgm"))?;
    save_pgm(&r.output, &out.join("asr.pgm"))?;
    let roi = RoiDump {
        eyes,
        eye_distance: eyes.distance(),
        crop_corners: crop.corners(),
        mouth_corners: crop.mouth_corners(),
        geometry: crop.params,
    };
    write(&out.join("roi.json"), json(&roi))?;
    println!(
        "eyes at ({:.2}, {:.2}) and ({:.2}, {:.2}), scores {:.3} / {:.3}",
        eyes.left.x, eyes.left.y, eyes.right.x, eyes.right.y, eyes.score_left, eyes.score_right
    );
    Ok(true)
}

pub fn enroll(common: &Common, data: &DataArgs, model_path: &Path, split_seed: Option<u64>) -> Result<bool> {
    let ctx = context(common)?;
    let m = manifest(data, &ctx)?;
    let indices: Vec<usize> = match split_seed {
        Some(seed) => split_dataset(&m, seed)?.train,
        None => (0..m.entries.len()).collect(),
    };
    let train = load_samples(&m, &indices)?;
    let t = Instant::now();
    let model = fit(&train, &ctx.pipeline)?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_model(&model, model_path)?;
    println!(
        "enrolled {} images of {} subjects with {} filters (r = {}) in {:.1} s -> {}",
        model.gallery.len(),
        m.subjects().len(),
        model.n_filters(),
        model.subspace.output_dim(),
        t.elapsed().as_secs_f64(),
        model_path.display()
    );
    Ok(true)
}

pub fn identify(
    common: &Common,
    model_path: &Path,
    image: &Path,
    skip_detect: bool,
    eyes: Option<&[f64]>,
    top: usize,
) -> Result<bool> {
    if common.select_k.is_some() || common.select_variance.is_some() {
        bail!("filter selection is fixed by the model; --select-k/--select-variance do not apply to identify");
    }
    let model = load_model(model_path)?;
    let img = load_image(image).map_err(|e| e.at(Stage::Load, Some(image.to_path_buf())))?;
    let probe = Sample {
        label: String::new(),
        image: img,
        path: Some(image.to_path_buf()),
        eyes: eyes_arg(eyes)?,
        prenormalized: skip_detect,
    };
    let id = model.identify(&probe)?;
    println!("{}\t{:.12e}", id.label, id.distance);
    for &(i, d) in id.ranked.iter().take(top) {
        println!("  #{i}\t{}\t{:.12e}", model.gallery[i].label, d);
    }
    Ok(true)
}

#[derive(Serialize)]
struct RunSummary {
    seed: Option<u64>,
    rank1_rate: f64,
    correct: usize,
    total: usize,
    n_filters: usize,
    failures: usize,
}

#[derive(Serialize)]
struct Aggregate {
    runs: usize,
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
}

fn aggregate(rates: &[f64]) -> Aggregate {
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let sd = if rates.len() > 1 {
        (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate {
        runs: rates.len(),
        mean,
        sd,
        min: rates.iter().copied().fold(f64::INFINITY, f64::min),
        max: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Serialize)]
struct EvaluateOutput {
    runs: Vec<RunSummary>,
    aggregate: Aggregate,
}

fn summary(r: &RecognitionReport) -> RunSummary {
    RunSummary {
        seed: r.seed,
        rank1_rate: r.rank1_rate,
        correct: r.correct,
        total: r.total,
        n_filters: r.n_filters,
        failures: r.failures.len(),
    }
}

pub fn evaluate(common: &Common, data: &DataArgs, model_path: Option<&Path>) -> Result<bool> {
    let ctx = context(common)?;
    let out = out_dir(common, &ctx)?;
    let m = manifest(data, &ctx)?;
    let mut reports = Vec::new();
    if let Some(path) = model_path {
        let model = load_model(path)?;
        let all: Vec<usize> = (0..m.entries.len()).collect();
        let probes = load_samples(&m, &all)?;
        let r = model.evaluate(&probes)?;
        write(&out.join("report.json"), r.to_json())?;
        write(&out.join("confusion.csv"), r.confusion_csv())?;
        reports.push(r);
    } else {
        for seed in seeds(data, &ctx) {
            let split = split_dataset(&m, seed)?;
            let r = run_split(&m, &split, &ctx.pipeline, false)?;
            write(&out.join(format!("report_seed{seed}.json")), r.to_json())?;
            write(&out.join(format!("confusion_seed{seed}.csv")), r.confusion_csv())?;
            println!("seed {seed}: rank-1 {:.4} ({}/{})", r.rank1_rate, r.correct, r.total);
            reports.push(r);
        }
    }
    let rates: Vec<f64> = reports.iter().map(|r| r.rank1_rate).collect();
    let output = EvaluateOutput {
        runs: reports.iter().map(summary).collect(),
        aggregate: aggregate(&rates),
    };
    write(&out.join("evaluate.json"), json(&output))?;
    println!(
        "rank-1 {:.4} ± {:.4} over {} run(s)",
        output.aggregate.mean, output.aggregate.sd, output.aggregate.runs
    );
    Ok(true)
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep(common: &Common, data: &DataArgs, grid_path: &Path) -> Result<bool> {
    let ctx = context(common)?;
    let grid = Grid::load(grid_path)?;
    let points = grid.points(&ctx.pipeline)?;
    let out = out_dir(common, &ctx)?;
    let m = manifest(data, &ctx)?;
    let seeds = seeds(data, &ctx);
    let splits = seeds.iter().map(|&s| split_dataset(&m, s)).collect::<gaborface::Result<Vec<_>>>()?;

    let mut csv = String::from(
        "k,rho,metric,f,r,n_filters,rank1_mean,rank1_sd,runs,enroll_features_ms,probe_features_ms,total_ms,status\n",
    );
    let mut all_ok = true;
    for p in &points {
        let mut cfg = ctx.pipeline.clone();
        if let Some(k) = p.k {
            cfg.selection = SelectionCriterion::Count(k);
        }
        cfg.features.downsample = p.rho;
        cfg.metric = p.metric;
        cfg.subspace.pca_dim = p.f;
        cfg.subspace.lda_dim = p.r;
        let t = Instant::now();
        let mut rates = Vec::new();
        let (mut enroll_ms, mut probe_ms) = (0.0, 0.0);
        let mut n_filters = 0;
        let mut status = String::from("ok");
        for split in &splits {
            match run_split(&m, split, &cfg, true) {
                Ok(r) => {
                    rates.push(r.rank1_rate);
                    enroll_ms += r.enroll_timing_ms.map(|t| t.features).unwrap_or(0.0);
                    probe_ms += r.timing_ms.features;
                    n_filters = r.n_filters;
                }
                Err(e) => {
                    status = format!("error: {e}").replace([',', '\n'], ";");
                    all_ok = false;
                    break;
                }
            }
        }
        let total_ms = t.elapsed().as_secs_f64() * 1e3;
        let (mean, sd) = if rates.len() == splits.len() {
            let a = aggregate(&rates);
            (format!("{:.6}", a.mean), format!("{:.6}", a.sd))
        } else {
            (String::new(), String::new())
        };
        let runs = rates.len().max(1) as f64;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{}\n",
            p.k.map(|k| k.to_string()).unwrap_or_else(|| "config".into()),
            p.rho,
            p.metric.name(),
            opt(p.f),
            opt(p.r),
            n_filters,
            mean,
            sd,
            rates.len(),
            enroll_ms / runs,
            probe_ms / runs,
            total_ms / runs,
            status
        ));
        eprintln!("k={:?} rho={} metric={} f={:?} r={:?}: {status}", p.k, p.rho, p.metric.name(), p.f, p.r);
    }
    write(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(all_ok)
}
