//! Multi-vehicle trajectory tracing around a refined anomaly time.
//!
//! Crashes show up as sharp turns, both of the crashing vehicle and of
//! neighbours dodging it. Box centers from the original-stream tracks are
//! binned into 26 one-second intervals around the anchor; each per-vehicle
//! segment is scored by its straight-line fit residual, and the crash
//! instant is the interval where the count of badly-curving segments
//! spikes. Naturally curved roads produce a flat elevated count instead
//! (the platform effect) and must return nothing.

use crate::error::{Error, Result};
use crate::mask::RoadMask;
use crate::track::Track;
use crate::types::TimeStamp;

/// The window always spans `[anchor - LEAD_S, anchor + TAIL_S)`, split
/// into `INTERVAL_COUNT` one-second bins.
pub const INTERVAL_COUNT: usize = 26;
pub const LEAD_S: f64 = 20.0;
pub const TAIL_S: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveParams {
    /// Fit residual above which a one-second segment counts as a sharp curve.
    pub fit_error_thresh: f64,
    /// Segments with fewer points than this are skipped.
    pub min_traj_points: usize,
    /// Off-track candidates must have at least this box area.
    pub offtrack_area_thresh: f64,
    /// Off-track candidates must curve at least this much.
    pub offtrack_error_thresh: f64,
    /// Intervals the off-road condition must recur in.
    pub offtrack_min_freq: usize,
    /// A peak needs at least this many abnormal curves.
    pub peak_min: usize,
    /// A peak must exceed `platform_ratio x` the typical nonzero count,
    /// otherwise the series is a platform.
    pub platform_ratio: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            fit_error_thresh: 30.0,
            min_traj_points: 10,
            offtrack_area_thresh: 40.0,
            offtrack_error_thresh: 10.0,
            offtrack_min_freq: 8,
            peak_min: 2,
            platform_ratio: 3.0,
        }
    }
}

/// One vehicle's center points within one interval.
#[derive(Debug, Clone)]
pub struct IntervalTraj {
    pub track_id: u64,
    pub points: Vec<(f64, f64)>,
    /// Points whose center lies on the road mask.
    pub on_road_points: usize,
    pub mean_box_area: f64,
}

impl IntervalTraj {
    pub fn is_on_road(&self) -> bool {
        2 * self.on_road_points >= self.points.len()
    }
}

/// Trajectories binned into the 26 one-second intervals around an anchor.
#[derive(Debug, Clone)]
pub struct TrajectoryWindow {
    pub anchor: TimeStamp,
    pub intervals: Vec<Vec<IntervalTraj>>,
}

impl TrajectoryWindow {
    pub fn interval_start(&self, i: usize) -> f64 {
        self.anchor.seconds - LEAD_S + i as f64
    }
}

/// Bin all tracked box centers around the anchor.
pub fn build_window(
    tracks: &[Track],
    anchor: TimeStamp,
    fps: f64,
    road_mask: &RoadMask,
) -> TrajectoryWindow {
    let window_start = anchor.seconds - LEAD_S;
    let mut intervals: Vec<Vec<IntervalTraj>> = vec![Vec::new(); INTERVAL_COUNT];
    for track in tracks {
        let mut per_interval: Vec<Option<IntervalTraj>> = vec![None; INTERVAL_COUNT];
        for p in &track.history {
            let t = p.frame_idx as f64 / fps;
            let rel = t - window_start;
            if rel < 0.0 {
                continue;
            }
            let i = rel.floor() as usize;
            if i >= INTERVAL_COUNT {
                continue;
            }
            let slot = per_interval[i].get_or_insert_with(|| IntervalTraj {
                track_id: track.id,
                points: Vec::new(),
                on_road_points: 0,
                mean_box_area: 0.0,
            });
            let (cx, cy) = p.bbox.center();
            slot.points.push((cx, cy));
            if road_mask.contains_point(cx, cy) {
                slot.on_road_points += 1;
            }
            slot.mean_box_area += p.bbox.area();
        }
        for (i, slot) in per_interval.into_iter().enumerate() {
            if let Some(mut traj) = slot {
                traj.mean_box_area /= traj.points.len() as f64;
                intervals[i].push(traj);
            }
        }
    }
    TrajectoryWindow { anchor, intervals }
}

/// Mean squared perpendicular distance to the total-least-squares line.
///
/// Orthogonal regression handles vertical motion that y-on-x fitting
/// cannot: the residual is the smaller eigenvalue of the scatter matrix
/// divided by the point count. Translation-invariant; scaling coordinates
/// by `s` scales the result by `s^2`.
pub fn line_fit_error(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &(x, y) in points {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det_part = ((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy).sqrt();
    let lambda_min = 0.5 * (tr - det_part);
    Ok((lambda_min / n).max(0.0))
}

/// Track ids whose off-road curving recurs often enough to count as
/// genuinely off-track (leaving the road), rather than mask noise.
pub fn offtrack_filter(window: &TrajectoryWindow, params: &CurveParams) -> Vec<u64> {
    use std::collections::BTreeMap;
    let mut recurrences: BTreeMap<u64, usize> = BTreeMap::new();
    for interval in &window.intervals {
        for traj in interval {
            if traj.points.len() < params.min_traj_points || traj.is_on_road() {
                continue;
            }
            if traj.mean_box_area < params.offtrack_area_thresh {
                continue;
            }
            let e = line_fit_error(&traj.points).unwrap_or(0.0);
            if e > params.offtrack_error_thresh {
                *recurrences.entry(traj.track_id).or_insert(0) += 1;
            }
        }
    }
    recurrences
        .into_iter()
        .filter(|&(_, c)| c >= params.offtrack_min_freq)
        .map(|(id, _)| id)
        .collect()
}

/// Abnormal-curve count per interval: on-road segments with a fit residual
/// above the threshold, plus curving segments of flagged off-track
/// vehicles.
pub fn count_abnormal_curves(
    window: &TrajectoryWindow,
    params: &CurveParams,
) -> Vec<usize> {
    let offtrack = offtrack_filter(window, params);
    let mut counts = vec![0usize; INTERVAL_COUNT];
    for (i, interval) in window.intervals.iter().enumerate() {
        for traj in interval {
            if traj.points.len() < params.min_traj_points {
                continue;
            }
            let e = match line_fit_error(&traj.points) {
                Ok(e) => e,
                Err(_) => continue,
            };
            if traj.is_on_road() {
                if e > params.fit_error_thresh {
                    counts[i] += 1;
                }
            } else if offtrack.contains(&traj.track_id) && e > params.offtrack_error_thresh {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Pick the crash interval out of the abnormal-curve series, guarding
/// against the platform effect of naturally curved roads.
///
/// The argmax qualifies as a peak when it reaches `peak_min` and clearly
/// dominates the remaining nonzero counts (at least `platform_ratio x`
/// their lower median). A flat series of equal nonzero counts never
/// qualifies. Ties resolve to the earliest interval.
pub fn locate_crash_interval(counts: &[usize], params: &CurveParams) -> Option<usize> {
    let max = *counts.iter().max()?;
    if max < params.peak_min {
        return None;
    }
    let argmax = counts.iter().position(|&c| c == max)?;
    // nonzero counts except one occurrence of the max
    let mut others: Vec<usize> = Vec::new();
    let mut max_removed = false;
    for &c in counts {
        if c == 0 {
            continue;
        }
        if c == max && !max_removed {
            max_removed = true;
            continue;
        }
        others.push(c);
    }
    if others.is_empty() {
        return Some(argmax);
    }
    others.sort_unstable();
    let median = others[(others.len() - 1) / 2] as f64;
    if (max as f64) >= params.platform_ratio * median {
        Some(argmax)
    } else {
        None
    }
}
