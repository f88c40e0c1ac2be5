//! Dataset manifests and the per-subject 4/3/3 train/verification/test split.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    subject: String,
    path: PathBuf,
    #[serde(default)]
    eye_left: Option<[f64; 2]>,
    #[serde(default)]
    eye_right: Option<[f64; 2]>,
    #[serde(default)]
    prenormalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub path: PathBuf,
    pub eye_left: Option<(f64, f64)>,
    pub eye_right: Option<(f64, f64)>,
    pub prenormalized: bool,
}

impl ManifestEntry {
    pub fn eyes(&self) -> Option<((f64, f64), (f64, f64))> {
        Some((self.eye_left?, self.eye_right?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Validates uniqueness of paths and eye ordering.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.clone()) {
                return Err(Error::DuplicatePath(e.path.clone()));
            }
            if let (Some(l), Some(r)) = (e.eye_left, e.eye_right) {
                if l.0 >= r.0 {
                    return Err(Error::SwappedEyes(e.path.clone()));
                }
            }
            if e.eye_left.is_some() != e.eye_right.is_some() {
                return Err(Error::Parse(format!(
                    "{}: eye_left and eye_right must be given together",
                    e.path.display()
                )));
            }
        }
        Ok(DatasetManifest { entries })
    }

    /// Subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.subject_id.as_str()))
            .map(|e| e.subject_id.as_str())
            .collect()
    }

    /// Builds a manifest from a `root/<subject>/<image>` directory layout
    /// (the layout of the ORL distribution). Files are sorted by name.
    pub fn from_subject_dirs(root: &Path, prenormalized: bool) -> Result<Self> {
        let mut subjects: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subjects.sort_by(|a, b| natural_key(a).cmp(&natural_key(b)));
        let mut entries = Vec::new();
        for dir in subjects {
            let subject = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "png" | "jpg" | "jpeg"))
                })
                .collect();
            files.sort_by(|a, b| natural_key(a).cmp(&natural_key(b)));
            for path in files {
                entries.push(ManifestEntry {
                    subject_id: subject.clone(),
                    path,
                    eye_left: None,
                    eye_right: None,
                    prenormalized,
                });
            }
        }
        DatasetManifest::new(entries)
    }
}

// "s2" sorts before "s10"
fn natural_key(p: &Path) -> (String, u64, String) {
    let name = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
    let prefix: String = name.chars().take_while(|c| !c.is_ascii_digit()).collect();
    (prefix, digits.parse().unwrap_or(0), name)
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let raw: Vec<RawEntry> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let entries = raw
        .into_iter()
        .map(|r| {
            let path = if r.path.is_absolute() {
                r.path
            } else {
                base_dir.join(r.path)
            };
            ManifestEntry {
                subject_id: r.subject,
                path,
                eye_left: r.eye_left.map(|[x, y]| (x, y)),
                eye_right: r.eye_right.map(|[x, y]| (x, y)),
                prenormalized: r.prenormalized,
            }
        })
        .collect();
    DatasetManifest::new(entries)
}

/// Reads a JSON manifest; relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

pub fn manifest_to_json(manifest: &DatasetManifest) -> String {
    let raw: Vec<RawEntry> = manifest
        .entries
        .iter()
        .map(|e| RawEntry {
            subject: e.subject_id.clone(),
            path: e.path.clone(),
            eye_left: e.eye_left.map(|(x, y)| [x, y]),
            eye_right: e.eye_right.map(|(x, y)| [x, y]),
            prenormalized: e.prenormalized,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("manifest serializes")
}

/// SplitMix64 (Steele, Lea & Flood). Used for split shuffles so that splits
/// are reproducible from any language.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Fisher-Yates over `items`, drawing `j = next_u64() % (i + 1)` for
/// `i = n-1 .. 1`.
pub fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub verification: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Per-subject partition sizes (train, verification, test) for `k` images.
pub fn partition_sizes(k: usize) -> (usize, usize, usize) {
    if k >= 10 {
        return (4, 3, 3);
    }
    let part = (k as f64 * 0.3).round() as usize;
    (k - 2 * part, part, part)
}

/// Shuffles every subject's entries with SplitMix64 seeded by
/// `seed ^ fnv1a64(subject_id)` and deals them out 4/3/3.
pub fn split_dataset(manifest: &DatasetManifest, seed: u64) -> Result<Split> {
    let mut by_subject: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_subject.entry(e.subject_id.as_str()).or_default().push(i);
    }
    let mut split = Split {
        train: Vec::new(),
        verification: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for subject in manifest.subjects() {
        let mut idx = by_subject.remove(subject).unwrap_or_default();
        if idx.len() < 3 {
            return Err(Error::TooFewImages(subject.to_string()));
        }
        let mut rng = SplitMix64::new(seed ^ fnv1a64(subject.as_bytes()));
        shuffle(&mut idx, &mut rng);
        let (tr, va, te) = partition_sizes(idx.len());
        split.train.extend_from_slice(&idx[..tr]);
        split.verification.extend_from_slice(&idx[tr..tr + va]);
        split.test.extend_from_slice(&idx[tr + va..tr + va + te]);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(subject: &str, path: &str) -> ManifestEntry {
        ManifestEntry {
            subject_id: subject.into(),
            path: path.into(),
            eye_left: None,
            eye_right: None,
            prenormalized: false,
        }
    }

    fn manifest_with(counts: &[usize]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (s, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push(entry(&format!("s{s}"), &format!("s{s}/{i}.pgm")));
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    #[test]
    fn parses_manifest_and_resolves_paths() {
        let json = r#"[
            {"subject": "a", "path": "a/1.pgm"},
            {"subject": "a", "path": "a/2.pgm"},
            {"subject": "b", "path": "b/1.pgm", "prenormalized": true},
            {"subject": "b", "path": "/abs/b2.pgm", "eye_left": [30, 40], "eye_right": [60, 41]}
        ]"#;
        let m = parse_manifest(json, Path::new("/data/set")).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.entries[0].path, PathBuf::from("/data/set/a/1.pgm"));
        assert!(m.entries[0].eye_left.is_none());
        assert!(m.entries[2].prenormalized);
        assert_eq!(m.entries[3].path, PathBuf::from("/abs/b2.pgm"));
        assert_eq!(m.entries[3].eyes(), Some(((30.0, 40.0), (60.0, 41.0))));
        assert_eq!(m.subjects(), vec!["a", "b"]);
    }

    #[test]
    fn swapped_eyes_rejected() {
        let json = r#"[{"subject": "a", "path": "x.pgm", "eye_left": [80, 50], "eye_right": [40, 50]}]"#;
        assert!(matches!(
            parse_manifest(json, Path::new(".")),
            Err(Error::SwappedEyes(_))
        ));
    }

    #[test]
    fn duplicate_path_rejected() {
        let json = r#"[{"subject": "a", "path": "x.pgm"}, {"subject": "b", "path": "x.pgm"}]"#;
        assert!(matches!(
            parse_manifest(json, Path::new(".")),
            Err(Error::DuplicatePath(_))
        ));
    }

    #[test]
    fn malformed_json_and_unknown_keys() {
        assert!(matches!(parse_manifest("{", Path::new(".")), Err(Error::Parse(_))));
        let json = r#"[{"subject": "a", "path": "x.pgm", "eyes": [1, 2]}]"#;
        assert!(matches!(parse_manifest(json, Path::new(".")), Err(Error::Parse(_))));
    }

    #[test]
    fn splitmix_reference_values() {
        // published test vector for seed 1234567
        let mut rng = SplitMix64::new(1234567);
        let got: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(got, vec![6457827717110365317, 3203168211198807973, 9817491932198370423]);
    }

    #[test]
    fn ten_images_split_4_3_3() {
        let m = manifest_with(&[10]);
        let s = split_dataset(&m, 7).unwrap();
        assert_eq!((s.train.len(), s.verification.len(), s.test.len()), (4, 3, 3));
        let mut all: Vec<usize> = s.train.iter().chain(&s.verification).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn partition_sizes_for_small_subjects() {
        assert_eq!(partition_sizes(7), (3, 2, 2));
        assert_eq!(partition_sizes(3), (1, 1, 1));
        assert_eq!(partition_sizes(4), (2, 1, 1));
        assert_eq!(partition_sizes(9), (3, 3, 3));
        assert_eq!(partition_sizes(64), (4, 3, 3));
    }

    #[test]
    fn seven_images_split_3_2_2() {
        let s = split_dataset(&manifest_with(&[7]), 1).unwrap();
        assert_eq!((s.train.len(), s.verification.len(), s.test.len()), (3, 2, 2));
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let m = manifest_with(&[10, 10, 12]);
        assert_eq!(split_dataset(&m, 42).unwrap(), split_dataset(&m, 42).unwrap());
        assert_ne!(split_dataset(&m, 42).unwrap(), split_dataset(&m, 43).unwrap());
    }

    #[test]
    fn too_few_images() {
        let m = manifest_with(&[10, 2]);
        assert!(matches!(split_dataset(&m, 0), Err(Error::TooFewImages(s)) if s == "s1"));
    }

    #[test]
    fn larger_subjects_leave_extras_unused() {
        let m = manifest_with(&[15]);
        let s = split_dataset(&m, 3).unwrap();
        assert_eq!(s.train.len() + s.verification.len() + s.test.len(), 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn splits_are_disjoint(counts in proptest::collection::vec(3usize..16, 1..6), seed in any::<u64>()) {
                let m = manifest_with(&counts);
                let s = split_dataset(&m, seed).unwrap();
                let tr: HashSet<_> = s.train.iter().collect();
                let va: HashSet<_> = s.verification.iter().collect();
                let te: HashSet<_> = s.test.iter().collect();
                prop_assert!(tr.is_disjoint(&va));
                prop_assert!(tr.is_disjoint(&te));
                prop_assert!(va.is_disjoint(&te));
                prop_assert!(s.train.iter().chain(&s.verification).chain(&s.test).all(|&i| i < m.entries.len()));
                prop_assert_eq!(&s, &split_dataset(&m, seed).unwrap());
            }
        }
    }
}
