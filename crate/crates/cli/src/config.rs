use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaborface::recognizer::{Metric, PipelineConfig};
use serde::{Deserialize, Serialize};

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    /// Manifest file or ORL-style directory; `--manifest` overrides it.
    pub manifest: Option<PathBuf>,
    /// `--out` overrides it.
    pub out_dir: Option<PathBuf>,
    /// Split seeds; `--seeds` overrides them.
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }
}

/// Sweep grid file. Every listed axis must be non-empty; omitted axes keep
/// the config value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub k: Option<Vec<usize>>,
    pub rho: Option<Vec<usize>>,
    pub metric: Option<Vec<Metric>>,
    /// PCA dimension; `null` means the N − c default.
    pub f: Option<Vec<Option<usize>>>,
    /// LDA dimension; `null` means c − 1.
    pub r: Option<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    /// `None` keeps the config's selection criterion.
    pub k: Option<usize>,
    pub rho: usize,
    pub metric: Metric,
    pub f: Option<usize>,
    pub r: Option<usize>,
}

fn dedup<T: PartialEq + Clone + std::fmt::Debug>(name: &str, values: Option<&Vec<T>>, default: T) -> Result<Vec<T>> {
    let Some(values) = values else {
        return Ok(vec![default]);
    };
    if values.is_empty() {
        bail!("sweep grid axis `{name}` is empty");
    }
    let mut out: Vec<T> = Vec::new();
    for v in values {
        if out.contains(v) {
            eprintln!("warning: duplicate value {v:?} on sweep axis `{name}` ignored");
        } else {
            out.push(v.clone());
        }
    }
    Ok(out)
}

impl Grid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing grid {}", path.display()))
    }

    /// Cartesian product in k, ρ, metric, f, r order (k varies slowest).
    pub fn points(&self, base: &PipelineConfig) -> Result<Vec<GridPoint>> {
        if self.k.is_none() && self.rho.is_none() && self.metric.is_none() && self.f.is_none() && self.r.is_none() {
            bail!("sweep grid is empty: list at least one of k, rho, metric, f, r");
        }
        let k_values = self.k.as_ref().map(|v| v.iter().copied().map(Some).collect::<Vec<_>>());
        let ks = dedup("k", k_values.as_ref(), None)?;
        let rhos = dedup("rho", self.rho.as_ref(), base.features.downsample)?;
        let metrics = dedup("metric", self.metric.as_ref(), base.metric)?;
        let fs = dedup("f", self.f.as_ref(), base.subspace.pca_dim)?;
        let rs = dedup("r", self.r.as_ref(), base.subspace.lda_dim)?;
        let mut points = Vec::new();
        for &k in &ks {
            for &rho in &rhos {
                for &metric in &metrics {
                    for &f in &fs {
                        for &r in &rs {
                            points.push(GridPoint { k, rho, metric, f, r });
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}
