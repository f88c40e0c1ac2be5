//! End-to-end enrollment, identification and evaluation.

mod persist;
mod report;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use persist::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use report::{ProbeFailure, ProbeOutcome, RecognitionReport, StageTimings, SubjectStats};

use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result, Stage};
use crate::filter_selection::{select_bank, FilterEigens, OrthoBank, SelectionCriterion};
use crate::gabor::{build_bank, BankParams, FeatureExtractor, FeatureOptions};
use crate::image::{load_image, Image};
use crate::preprocess::{
    asr_illumination, detect_eyes, normalize_geometry, EyePair, PreprocessConfig, NORMALIZED_SIZE,
};
use crate::subspace::{subspace_fit_matrix, subspace_project, SubspaceModel, SubspaceOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// Templates are unit-normalized under the cosine metric and left as is
    /// under the Euclidean one.
    fn normalize(&self, v: &mut [f64]) {
        if let Metric::Cosine = self {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                let den = (aa * bb).sqrt();
                if den > 0.0 {
                    1.0 - ab / den
                } else {
                    1.0
                }
            }
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric {other:?} (expected cosine or euclidean)"))),
        }
    }
}

fn default_analysis_size() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Treat every input as already cropped (skip eye detection and the
    /// geometric step).
    #[serde(default)]
    pub prenormalized: bool,
    /// Side of the image the filters see; the 128×128 crop is box-averaged
    /// down to it.
    #[serde(default = "default_analysis_size")]
    pub analysis_size: usize,
    #[serde(default)]
    pub bank: BankParams,
    #[serde(default)]
    pub selection: SelectionCriterion,
    /// Center the filters before the filter-space eigendecomposition.
    #[serde(default = "default_true")]
    pub center_filters: bool,
    #[serde(default)]
    pub features: FeatureOptions,
    #[serde(default)]
    pub subspace: SubspaceOptions,
    #[serde(default)]
    pub metric: Metric,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preprocess: PreprocessConfig::default(),
            prenormalized: false,
            analysis_size: default_analysis_size(),
            bank: BankParams::default(),
            selection: SelectionCriterion::default(),
            center_filters: true,
            features: FeatureOptions::default(),
            subspace: SubspaceOptions::default(),
            metric: Metric::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.bank.validate()?;
        if self.analysis_size == 0 || NORMALIZED_SIZE % self.analysis_size != 0 {
            return Err(Error::Config(format!(
                "analysis_size must divide {NORMALIZED_SIZE}, got {}",
                self.analysis_size
            )));
        }
        if self.features.downsample == 0 {
            return Err(Error::Config("features.downsample must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One labelled input image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub label: String,
    pub image: Image,
    pub path: Option<PathBuf>,
    /// Known eye positions; skips detection when set.
    pub eyes: Option<EyePair>,
    pub prenormalized: bool,
}

impl Sample {
    pub fn new(label: impl Into<String>, image: Image) -> Self {
        Sample {
            label: label.into(),
            image,
            path: None,
            eyes: None,
            prenormalized: false,
        }
    }

    pub fn prenormalized(label: impl Into<String>, image: Image) -> Self {
        Sample {
            prenormalized: true,
            ..Sample::new(label, image)
        }
    }

    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let image = load_image(&entry.path).map_err(|e| e.at(Stage::Load, Some(entry.path.clone())))?;
        let eyes = match entry.eyes() {
            Some((l, r)) => Some(EyePair::from_coords(l, r).map_err(|e| e.at(Stage::Load, Some(entry.path.clone())))?),
            None => None,
        };
        Ok(Sample {
            label: entry.subject_id.clone(),
            image,
            path: Some(entry.path.clone()),
            eyes,
            prenormalized: entry.prenormalized,
        })
    }
}

/// Loads the manifest entries at `indices`, failing on the first error.
pub fn load_samples(manifest: &DatasetManifest, indices: &[usize]) -> Result<Vec<Sample>> {
    indices.par_iter().map(|&i| Sample::load(&manifest.entries[i])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub label: String,
    pub template: Vec<f64>,
}

/// Time spent per stage for one image.
#[derive(Debug, Clone, Copy, Default)]
struct ImageTiming {
    preprocess: Duration,
    features: Duration,
    projection: Duration,
}

/// Fitted pipeline: orthogonal bank, subspace and gallery, plus the eye
/// templates used at fit time.
pub struct RecognizerModel {
    pub config: PipelineConfig,
    pub ortho_bank: OrthoBank,
    pub subspace: SubspaceModel,
    pub gallery: Vec<GalleryEntry>,
    pub format_version: u32,
    pub left_template: Image,
    pub right_template: Image,
    extractor: FeatureExtractor,
}

impl std::fmt::Debug for RecognizerModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecognizerModel")
            .field("n_filters", &self.ortho_bank.k)
            .field("feature_dim", &self.subspace.pca.input_dim())
            .field("pca_dim", &self.subspace.pca.output_dim())
            .field("lda_dim", &self.subspace.output_dim())
            .field("gallery", &self.gallery.len())
            .finish()
    }
}

/// Result of one identification.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub label: String,
    pub distance: f64,
    /// `(gallery index, distance)` sorted by distance, ties by index.
    pub ranked: Vec<(usize, f64)>,
}

/// Everything the pipeline needs to turn an image into features.
struct Frontend<'a> {
    config: &'a PipelineConfig,
    left_template: &'a Image,
    right_template: &'a Image,
    extractor: &'a FeatureExtractor,
}

impl Frontend<'_> {
    /// Preprocessed analysis-size image.
    fn analysis_image(&self, sample: &Sample) -> Result<Image> {
        let path = || sample.path.clone();
        let cfg = self.config;
        let normalized = if sample.prenormalized || cfg.prenormalized {
            let img = &sample.image;
            if img.width() == NORMALIZED_SIZE && img.height() == NORMALIZED_SIZE {
                img.clone()
            } else {
                img.resize_bilinear(NORMALIZED_SIZE, NORMALIZED_SIZE)
            }
        } else {
            let eyes = match sample.eyes {
                Some(e) => e,
                None => detect_eyes(&sample.image, self.left_template, self.right_template, cfg.preprocess.min_score)
                    .map_err(|e| e.at(Stage::Detect, path()))?,
            };
            normalize_geometry(&sample.image, &eyes).map_err(|e| e.at(Stage::Normalize, path()))?
        };
        let lit = if cfg.preprocess.illumination {
            asr_illumination(&normalized, &cfg.preprocess.asr).map_err(|e| e.at(Stage::Illumination, path()))?
        } else {
            normalized
        };
        let factor = NORMALIZED_SIZE / cfg.analysis_size;
        Ok(if factor > 1 { lit.box_downsample(factor) } else { lit })
    }

    fn features(&self, sample: &Sample, timing: &mut ImageTiming) -> Result<Vec<f64>> {
        let t0 = Instant::now();
        let img = self.analysis_image(sample)?;
        let t1 = Instant::now();
        let fv = self
            .extractor
            .extract(&img)
            .map_err(|e| e.at(Stage::Features, sample.path.clone()))?;
        timing.preprocess += t1 - t0;
        timing.features += t1.elapsed();
        Ok(fv.values)
    }
}

fn load_templates(cfg: &PreprocessConfig) -> Result<(Image, Image)> {
    let p = crate::preprocess::Preprocessor::new(cfg.clone())?;
    let (l, r) = p.templates();
    Ok((l.clone(), r.clone()))
}

fn extractor_for(config: &PipelineConfig, bank: &OrthoBank) -> Result<FeatureExtractor> {
    FeatureExtractor::new(bank, config.analysis_size, config.analysis_size, config.features)
        .map_err(|e| e.at(Stage::Features, None))
}

/// Builds the Gabor bank and the orthogonal bank the config asks for.
pub fn fit_bank(config: &PipelineConfig) -> Result<(OrthoBank, FilterEigens)> {
    let bank = build_bank(&config.bank).map_err(|e| e.at(Stage::FilterSelection, None))?;
    select_bank(&bank, config.selection, config.center_filters).map_err(|e| e.at(Stage::FilterSelection, None))
}

/// Fits the pipeline on `train` and stores every training image's template
/// as the gallery.
pub fn enroll(train: &[Sample], config: &PipelineConfig) -> Result<RecognizerModel> {
    enroll_timed(train, config).map(|(m, _)| m)
}

/// `enroll` plus per-stage wall-clock totals.
pub fn enroll_timed(train: &[Sample], config: &PipelineConfig) -> Result<(RecognizerModel, StageTimings)> {
    config.validate()?;
    let mut timings = StageTimings::default();

    let mut class_of: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let labels: Vec<usize> = train
        .iter()
        .map(|s| {
            *class_of.entry(s.label.as_str()).or_insert_with(|| {
                order.push(s.label.as_str());
                counts.push(0);
                order.len() - 1
            })
        })
        .collect();
    for &l in &labels {
        counts[l] += 1;
    }
    if order.len() < 2 {
        return Err(Error::SingleClass.at(Stage::Subspace, None));
    }
    if let Some(i) = counts.iter().position(|&c| c < 2) {
        return Err(Error::TooFewSamples(format!("label {:?} has only {} image(s); need at least 2", order[i], counts[i]))
            .at(Stage::Subspace, None));
    }

    let t = Instant::now();
    let (left_template, right_template) = load_templates(&config.preprocess)?;
    let (ortho_bank, _) = fit_bank(config)?;
    let extractor = extractor_for(config, &ortho_bank)?;
    timings.filter_selection = ms(t.elapsed());

    let frontend = Frontend {
        config,
        left_template: &left_template,
        right_template: &right_template,
        extractor: &extractor,
    };
    let per_image: Vec<(Vec<f64>, ImageTiming)> = train
        .par_iter()
        .map(|s| {
            let mut timing = ImageTiming::default();
            frontend.features(s, &mut timing).map(|f| (f, timing))
        })
        .collect::<Result<_>>()?;
    let dim = per_image[0].0.len();
    let mut x = DMatrix::<f64>::zeros(dim, train.len());
    for (j, (f, timing)) in per_image.into_iter().enumerate() {
        x.column_mut(j).copy_from_slice(&f);
        timings.preprocess += ms(timing.preprocess);
        timings.features += ms(timing.features);
    }

    let t = Instant::now();
    let subspace = subspace_fit_matrix(x.clone(), &labels, &config.subspace).map_err(|e| e.at(Stage::Subspace, None))?;
    timings.subspace += ms(t.elapsed());

    let t = Instant::now();
    let gallery = train
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut template: Vec<f64> = subspace_project(&subspace, x.column(j).as_slice())
                .map_err(|e| e.at(Stage::Subspace, s.path.clone()))?
                .iter()
                .copied()
                .collect();
            config.metric.normalize(&mut template);
            Ok(GalleryEntry {
                label: s.label.clone(),
                template,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    timings.projection += ms(t.elapsed());

    Ok((
        RecognizerModel {
            config: config.clone(),
            ortho_bank,
            subspace,
            gallery,
            format_version: FORMAT_VERSION,
            left_template,
            right_template,
            extractor,
        },
        timings,
    ))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl RecognizerModel {
    pub(crate) fn from_parts(
        config: PipelineConfig,
        ortho_bank: OrthoBank,
        subspace: SubspaceModel,
        gallery: Vec<GalleryEntry>,
        left_template: Image,
        right_template: Image,
    ) -> Result<Self> {
        let extractor = extractor_for(&config, &ortho_bank)?;
        Ok(RecognizerModel {
            config,
            ortho_bank,
            subspace,
            gallery,
            format_version: FORMAT_VERSION,
            left_template,
            right_template,
            extractor,
        })
    }

    fn frontend(&self) -> Frontend<'_> {
        Frontend {
            config: &self.config,
            left_template: &self.left_template,
            right_template: &self.right_template,
            extractor: &self.extractor,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.ortho_bank.k
    }

    /// Gallery-space template of a sample (normalized per the metric).
    pub fn template(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.template_timed(sample, &mut ImageTiming::default())
    }

    fn template_timed(&self, sample: &Sample, timing: &mut ImageTiming) -> Result<Vec<f64>> {
        let f = self.frontend().features(sample, timing)?;
        let t = Instant::now();
        let mut v: Vec<f64> = subspace_project(&self.subspace, &f)
            .map_err(|e| e.at(Stage::Subspace, sample.path.clone()))?
            .iter()
            .copied()
            .collect();
        self.config.metric.normalize(&mut v);
        timing.projection += t.elapsed();
        Ok(v)
    }

    /// Nearest gallery template to `template`.
    pub fn match_template(&self, template: &[f64]) -> Result<Identification> {
        if self.gallery.is_empty() {
            return Err(Error::EmptyGallery.at(Stage::Match, None));
        }
        let mut ranked: Vec<(usize, f64)> = self
            .gallery
            .iter()
            .enumerate()
            .map(|(i, g)| (i, self.config.metric.distance(template, &g.template)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let (best, distance) = ranked[0];
        Ok(Identification {
            label: self.gallery[best].label.clone(),
            distance,
            ranked,
        })
    }

    pub fn identify(&self, probe: &Sample) -> Result<Identification> {
        if self.gallery.is_empty() {
            return Err(Error::EmptyGallery.at(Stage::Match, None));
        }
        let t = self.template(probe)?;
        self.match_template(&t)
    }

    /// Keeps only the gallery entries whose label satisfies `keep`.
    pub fn retain_gallery(&mut self, keep: impl Fn(&str) -> bool) {
        self.gallery.retain(|g| keep(&g.label));
    }

    /// Rank-1 evaluation; probes that fail anywhere in the pipeline count as
    /// misses and are listed in the report.
    pub fn evaluate(&self, test: &[Sample]) -> Result<RecognitionReport> {
        self.evaluate_with_failures(test, Vec::new())
    }

    /// `evaluate` where `failed` holds probes that could not even be loaded.
    pub fn evaluate_with_failures(&self, test: &[Sample], failed: Vec<ProbeOutcome>) -> Result<RecognitionReport> {
        if test.is_empty() && failed.is_empty() {
            return Err(Error::TooFewSamples("evaluation set is empty".into()));
        }
        if self.gallery.is_empty() {
            return Err(Error::EmptyGallery.at(Stage::Match, None));
        }
        let outcomes: Vec<(ProbeOutcome, ImageTiming, Duration)> = test
            .par_iter()
            .map(|s| {
                let mut timing = ImageTiming::default();
                let result = self.template_timed(s, &mut timing);
                let t = Instant::now();
                let outcome = match result.and_then(|v| self.match_template(&v)) {
                    Ok(id) => ProbeOutcome {
                        truth: s.label.clone(),
                        predicted: Some(id.label),
                        distance: Some(id.distance),
                        path: s.path.clone(),
                        error: None,
                    },
                    Err(e) => ProbeOutcome {
                        truth: s.label.clone(),
                        predicted: None,
                        distance: None,
                        path: s.path.clone(),
                        error: Some(e.to_string()),
                    },
                };
                (outcome, timing, t.elapsed())
            })
            .collect();
        let mut timings = StageTimings::default();
        let mut probes = failed;
        for (o, t, m) in outcomes {
            timings.preprocess += ms(t.preprocess);
            timings.features += ms(t.features);
            timings.projection += ms(t.projection);
            timings.matching += ms(m);
            probes.push(o);
        }
        Ok(RecognitionReport::from_outcomes(probes, self.n_filters(), None, timings))
    }
}

/// Enrolls on the split's training entries and evaluates on its test
/// entries.
pub fn run_split(
    manifest: &DatasetManifest,
    split: &crate::dataset::Split,
    config: &PipelineConfig,
    use_verification: bool,
) -> Result<RecognitionReport> {
    let train = load_samples(manifest, &split.train)?;
    let probe_idx = if use_verification { &split.verification } else { &split.test };
    let (model, enroll_timing) = enroll_timed(&train, config)?;
    let mut probes = Vec::new();
    let mut failed = Vec::new();
    for &i in probe_idx {
        let e = &manifest.entries[i];
        match Sample::load(e) {
            Ok(s) => probes.push(s),
            Err(err) => failed.push(ProbeOutcome {
                truth: e.subject_id.clone(),
                predicted: None,
                distance: None,
                path: Some(e.path.clone()),
                error: Some(err.to_string()),
            }),
        }
    }
    let mut report = model.evaluate_with_failures(&probes, failed)?;
    report.seed = Some(split.seed);
    report.enroll_timing_ms = Some(enroll_timing);
    Ok(report)
}
