use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Wall-clock milliseconds per stage, summed over images.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub filter_selection: f64,
    pub preprocess: f64,
    pub features: f64,
    pub subspace: f64,
    pub projection: f64,
    pub matching: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub truth: String,
    pub predicted: Option<String>,
    pub distance: Option<f64>,
    pub path: Option<PathBuf>,
    pub error: Option<String>,
}

impl ProbeOutcome {
    pub fn correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.truth.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub path: Option<PathBuf>,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub correct: usize,
    pub total: usize,
    pub rate: f64,
}

/// Label used in the confusion table for probes that produced no decision.
pub const NO_DECISION: &str = "<failed>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub rank1_rate: f64,
    pub correct: usize,
    pub total: usize,
    pub per_subject: BTreeMap<String, SubjectStats>,
    /// truth → predicted → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub timing_ms: StageTimings,
    pub enroll_timing_ms: Option<StageTimings>,
    pub n_filters: usize,
    pub seed: Option<u64>,
    pub failures: Vec<ProbeFailure>,
    pub probes: Vec<ProbeOutcome>,
}

impl RecognitionReport {
    pub fn from_outcomes(probes: Vec<ProbeOutcome>, n_filters: usize, seed: Option<u64>, timing_ms: StageTimings) -> Self {
        let mut per_subject: BTreeMap<String, SubjectStats> = BTreeMap::new();
        let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut failures = Vec::new();
        let mut correct = 0;
        for p in &probes {
            let ok = p.correct();
            correct += ok as usize;
            let s = per_subject.entry(p.truth.clone()).or_insert(SubjectStats {
                correct: 0,
                total: 0,
                rate: 0.0,
            });
            s.total += 1;
            s.correct += ok as usize;
            let predicted = p.predicted.clone().unwrap_or_else(|| NO_DECISION.to_string());
            *confusion.entry(p.truth.clone()).or_default().entry(predicted).or_default() += 1;
            if let Some(e) = &p.error {
                failures.push(ProbeFailure {
                    path: p.path.clone(),
                    label: p.truth.clone(),
                    error: e.clone(),
                });
            }
        }
        for s in per_subject.values_mut() {
            s.rate = s.correct as f64 / s.total as f64;
        }
        let total = probes.len();
        RecognitionReport {
            rank1_rate: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            correct,
            total,
            per_subject,
            confusion,
            timing_ms,
            enroll_timing_ms: None,
            n_filters,
            seed,
            failures,
            probes,
        }
    }

    /// `truth,predicted,count` rows, sorted by truth then prediction.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth,predicted,count\n");
        for (truth, row) in &self.confusion {
            for (pred, n) in row {
                out.push_str(&format!("{},{},{}\n", csv_field(truth), csv_field(pred), n));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(truth: &str, predicted: Option<&str>) -> ProbeOutcome {
        ProbeOutcome {
            truth: truth.into(),
            predicted: predicted.map(Into::into),
            distance: predicted.map(|_| 0.1),
            path: None,
            error: predicted.is_none().then(|| "eyes not found".to_string()),
        }
    }

    #[test]
    fn counts_and_rates() {
        let r = RecognitionReport::from_outcomes(
            vec![outcome("a", Some("a")), outcome("a", Some("b")), outcome("b", Some("b")), outcome("b", None)],
            25,
            Some(7),
            StageTimings::default(),
        );
        assert_eq!((r.correct, r.total), (2, 4));
        assert_eq!(r.rank1_rate, 0.5);
        assert_eq!(r.per_subject["a"].rate, 0.5);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.confusion["b"][NO_DECISION], 1);
        assert_eq!(r.confusion_csv(), "truth,predicted,count\na,a,1\na,b,1\nb,<failed>,1\nb,b,1\n");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("x,y"), "\"x,y\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
