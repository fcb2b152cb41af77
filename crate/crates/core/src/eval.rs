//! Scoring of predicted events against ground truth.
//!
//! F1 measures whether anomalies were found at all; NRMSE measures how
//! precisely their start times were placed (root-mean-square error over
//! true positives, clamped and normalized by 300 s); the combined score
//! is `S4 = F1 * (1 - NRMSE)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Challenge-shape prediction: one anomaly start per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub video_id: String,
    pub start_time_s: f64,
    pub confidence: f64,
}

/// One matched prediction/truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub video_id: String,
    pub predicted_s: f64,
    pub truth_s: f64,
}

impl MatchedPair {
    pub fn abs_error_s(&self) -> f64 {
        (self.predicted_s - self.truth_s).abs()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }
}

/// Greedy matching per video: closest pairs first, each prediction and
/// each truth used at most once, matches only within `match_window_s`.
/// Ties break toward the earlier prediction, then the earlier truth.
pub fn match_events(
    predictions: &[Prediction],
    ground_truth: &[(String, f64)],
    match_window_s: f64,
) -> MatchResult {
    let mut by_video: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, p) in predictions.iter().enumerate() {
        by_video.entry(&p.video_id).or_default().0.push(i);
    }
    for (i, (vid, _)) in ground_truth.iter().enumerate() {
        by_video.entry(vid).or_default().1.push(i);
    }

    let mut result = MatchResult::default();
    for (_, (preds, truths)) in by_video {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for &pi in &preds {
            for &ti in &truths {
                let err = (predictions[pi].start_time_s - ground_truth[ti].1).abs();
                if err <= match_window_s {
                    candidates.push((err, pi, ti));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(
                    predictions[a.1]
                        .start_time_s
                        .total_cmp(&predictions[b.1].start_time_s),
                )
                .then(ground_truth[a.2].1.total_cmp(&ground_truth[b.2].1))
        });
        let mut used_pred = vec![false; predictions.len()];
        let mut used_truth = vec![false; ground_truth.len()];
        let mut matched_here = 0usize;
        for (_, pi, ti) in candidates {
            if used_pred[pi] || used_truth[ti] {
                continue;
            }
            used_pred[pi] = true;
            used_truth[ti] = true;
            matched_here += 1;
            result.pairs.push(MatchedPair {
                video_id: predictions[pi].video_id.clone(),
                predicted_s: predictions[pi].start_time_s,
                truth_s: ground_truth[ti].1,
            });
        }
        result.false_positives += preds.len() - matched_here;
        result.false_negatives += truths.len() - matched_here;
    }
    result
}

/// Harmonic mean of precision and recall; 0 when nothing matched.
pub fn f1(m: &MatchResult) -> Result<f64> {
    let tp = m.true_positives();
    if tp + m.false_positives + m.false_negatives == 0 {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / (tp + m.false_positives) as f64;
    let r = tp as f64 / (tp + m.false_negatives) as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Root-mean-square start-time error over the true positives.
pub fn rmse(m: &MatchResult) -> Option<f64> {
    let tp = m.true_positives();
    if tp == 0 {
        return None;
    }
    let sq: f64 = m
        .pairs
        .iter()
        .map(|p| {
            let e = p.predicted_s - p.truth_s;
            e * e
        })
        .sum();
    Some((sq / tp as f64).sqrt())
}

/// Normalization ceiling for the time error, in seconds.
pub const NRMSE_CEILING_S: f64 = 300.0;

/// `min(rmse, 300) / 300`; with no true positives the worst case 1.0.
pub fn nrmse(m: &MatchResult) -> f64 {
    match rmse(m) {
        Some(r) => r.min(NRMSE_CEILING_S) / NRMSE_CEILING_S,
        None => 1.0,
    }
}

/// Combined track score.
pub fn s4(f1_score: f64, nrmse_score: f64) -> f64 {
    f1_score * (1.0 - nrmse_score)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub f1: f64,
    /// RMSE in seconds over true positives; `None` when there are none.
    pub rmse: Option<f64>,
    pub nrmse: f64,
    pub s4: f64,
}

pub fn compute_scores(m: &MatchResult) -> Result<Scores> {
    let f = f1(m)?;
    let n = nrmse(m);
    Ok(Scores {
        f1: f,
        rmse: rmse(m),
        nrmse: n,
        s4: s4(f, n),
    })
}

/// Text report: one line per video plus the aggregate scores.
pub fn format_report(
    predictions: &[Prediction],
    ground_truth: &[(String, f64)],
    m: &MatchResult,
    scores: &Scores,
) -> String {
    let mut videos: BTreeMap<&str, (usize, usize, usize, Vec<f64>)> = BTreeMap::new();
    for p in predictions {
        videos.entry(&p.video_id).or_default();
    }
    for (v, _) in ground_truth {
        videos.entry(v).or_default();
    }
    for pair in &m.pairs {
        let e = videos.entry(&pair.video_id).or_default();
        e.0 += 1;
        e.3.push(pair.abs_error_s());
    }
    // recompute per-video fp/fn from counts
    for (vid, entry) in videos.iter_mut() {
        let preds = predictions.iter().filter(|p| &p.video_id == vid).count();
        let truths = ground_truth.iter().filter(|(v, _)| v == vid).count();
        entry.1 = preds - entry.0;
        entry.2 = truths - entry.0;
    }

    let mut out = String::new();
    let _ = writeln!(out, "video_id\tTP\tFP\tFN\tmean_abs_err_s");
    for (vid, (tp, fp, fn_, errs)) in &videos {
        let mean_err = if errs.is_empty() {
            "-".to_string()
        } else {
            format!("{:.3}", errs.iter().sum::<f64>() / errs.len() as f64)
        };
        let _ = writeln!(out, "{vid}\t{tp}\t{fp}\t{fn_}\t{mean_err}");
    }
    let _ = writeln!(out, "--");
    let rmse_txt = scores
        .rmse
        .map(|r| format!("{r:.4}"))
        .unwrap_or_else(|| "-".to_string());
    let _ = writeln!(
        out,
        "F1 {:.4}  RMSE {}  NRMSE {:.6}  S4 {:.4}",
        scores.f1, rmse_txt, scores.nrmse, scores.s4
    );
    out
}

/// Load predictions: lines of `video_id start_time_seconds confidence`.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(perr(format!("expected 3 fields, got {}", fields.len())));
        }
        out.push(Prediction {
            video_id: fields[0].to_string(),
            start_time_s: fields[1]
                .parse()
                .map_err(|_| perr("bad start time".into()))?,
            confidence: fields[2]
                .parse()
                .map_err(|_| perr("bad confidence".into()))?,
        });
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = String::new();
    for p in predictions {
        let _ = writeln!(out, "{} {:.3} {:.4}", p.video_id, p.start_time_s, p.confidence);
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pred(v: &str, t: f64) -> Prediction {
        Prediction {
            video_id: v.into(),
            start_time_s: t,
            confidence: 0.9,
        }
    }

    #[test]
    fn exact_match() {
        let m = match_events(&[pred("a", 50.0)], &[("a".into(), 50.0)], 10.0);
        assert_eq!(m.true_positives(), 1);
        assert_eq!((m.false_positives, m.false_negatives), (0, 0));
    }

    #[test]
    fn late_prediction_misses_window() {
        let m = match_events(&[pred("a", 65.0)], &[("a".into(), 50.0)], 10.0);
        assert_eq!(m.true_positives(), 0);
        assert_eq!((m.false_positives, m.false_negatives), (1, 1));
    }

    #[test]
    fn closer_prediction_wins() {
        let m = match_events(
            &[pred("a", 53.0), pred("a", 51.0)],
            &[("a".into(), 50.0)],
            10.0,
        );
        assert_eq!(m.true_positives(), 1);
        assert_eq!(m.pairs[0].predicted_s, 51.0);
        assert_eq!(m.false_positives, 1);
    }

    #[test]
    fn videos_do_not_cross_match() {
        let m = match_events(&[pred("a", 50.0)], &[("b".into(), 50.0)], 10.0);
        assert_eq!(m.true_positives(), 0);
        assert_eq!((m.false_positives, m.false_negatives), (1, 1));
    }

    #[test]
    fn f1_examples() {
        let mk = |tp: usize, fp: usize, fn_: usize| MatchResult {
            pairs: (0..tp)
                .map(|_| MatchedPair {
                    video_id: "v".into(),
                    predicted_s: 1.0,
                    truth_s: 1.0,
                })
                .collect(),
            false_positives: fp,
            false_negatives: fn_,
        };
        assert_relative_eq!(f1(&mk(10, 0, 0)).unwrap(), 1.0);
        assert_relative_eq!(f1(&mk(0, 3, 2)).unwrap(), 0.0);
        let v = f1(&mk(8, 2, 1)).unwrap();
        let p: f64 = 0.8;
        let r: f64 = 8.0 / 9.0;
        assert_relative_eq!(v, 2.0 * p * r / (p + r), epsilon = 1e-12);
        assert!(f1(&mk(0, 0, 0)).is_err());
    }

    #[test]
    fn nrmse_examples() {
        let mk = |errs: &[f64]| MatchResult {
            pairs: errs
                .iter()
                .map(|&e| MatchedPair {
                    video_id: "v".into(),
                    predicted_s: 100.0 + e,
                    truth_s: 100.0,
                })
                .collect(),
            false_positives: 0,
            false_negatives: 0,
        };
        assert_relative_eq!(nrmse(&mk(&[0.0, 0.0])), 0.0);
        assert_relative_eq!(nrmse(&mk(&[300.0])), 1.0);
        assert_relative_eq!(nrmse(&mk(&[600.0])), 1.0, epsilon = 1e-12); // clamp
        // a known reported operating point
        assert_relative_eq!(nrmse(&mk(&[3.4039])), 3.4039 / 300.0, epsilon = 1e-12);
        // no true positives: worst case
        let empty = MatchResult {
            false_negatives: 1,
            ..Default::default()
        };
        assert_eq!(nrmse(&empty), 1.0);
    }

    #[test]
    fn s4_examples() {
        assert_relative_eq!(s4(1.0, 0.0), 1.0);
        assert_relative_eq!(s4(0.0, 0.3), 0.0);
        let v = s4(0.9302, 3.4039 / 300.0);
        assert!((v - 0.9196).abs() < 5e-5, "s4 = {v}");
    }

    #[test]
    fn s4_never_exceeds_f1() {
        for &f in &[0.0, 0.3, 0.9302, 1.0] {
            for &n in &[0.0, 0.1, 0.5, 1.0] {
                assert!(s4(f, n) <= f + 1e-12);
            }
        }
        assert_relative_eq!(s4(0.7, 0.0), 0.7);
    }

    #[test]
    fn nrmse_clamp_monotone() {
        let mk = |e: f64| MatchResult {
            pairs: vec![MatchedPair {
                video_id: "v".into(),
                predicted_s: 100.0 + e,
                truth_s: 100.0,
            }],
            false_positives: 0,
            false_negatives: 0,
        };
        let mut last = 0.0;
        for e in [0.0, 1.0, 10.0, 100.0, 299.0, 300.0, 500.0] {
            let n = nrmse(&mk(e));
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn match_order_independent() {
        let preds = vec![pred("a", 53.0), pred("a", 51.0), pred("a", 90.0)];
        let mut rev = preds.clone();
        rev.reverse();
        let gt = vec![("a".to_string(), 50.0), ("a".to_string(), 88.0)];
        let m1 = match_events(&preds, &gt, 10.0);
        let m2 = match_events(&rev, &gt, 10.0);
        let mut p1: Vec<(f64, f64)> = m1.pairs.iter().map(|p| (p.predicted_s, p.truth_s)).collect();
        let mut p2: Vec<(f64, f64)> = m2.pairs.iter().map(|p| (p.predicted_s, p.truth_s)).collect();
        p1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        p2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(p1, p2);
    }

    #[test]
    fn predictions_roundtrip() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("preds.txt");
        let preds = vec![pred("a", 12.5), pred("b", 99.0)];
        write_predictions(&path, &preds).unwrap();
        let back = load_predictions(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].video_id, "a");
        assert_relative_eq!(back[0].start_time_s, 12.5);
    }

    #[test]
    fn report_contains_videos_and_scores() {
        let preds = vec![pred("a", 50.0)];
        let gt = vec![("a".to_string(), 50.0), ("b".to_string(), 10.0)];
        let m = match_events(&preds, &gt, 10.0);
        let scores = compute_scores(&m).unwrap();
        let report = format_report(&preds, &gt, &m, &scores);
        assert!(report.contains("a\t1\t0\t0"));
        assert!(report.contains("b\t0\t0\t1"));
        assert!(report.contains("F1"));
    }
}
