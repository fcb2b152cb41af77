//! Singular-vehicle tracing with sparse optical flow.
//!
//! Feature points seeded inside the stopped vehicle's box are tracked
//! backward frame by frame with pyramidal Lucas-Kanade. Once a point fails
//! to track it is deposed and never revived, so the active set only
//! shrinks. Per frame, a KNN filter in displacement space drops deviating
//! points, the surviving displacements average into a velocity magnitude,
//! and the magnitude series is cleaned by peak suppression and scanned by
//! a moving-window estimator for the drastic change that marks the crash.

use crate::error::{Error, Result};
use crate::ingest::{to_grayscale, Frame, FrameSource};
use crate::mask::PixelRect;
use crate::types::{AnomalyEvent, BBox};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Feature points seeded in the box at the stopping frame.
    pub seed_count: usize,
    /// How many frames to walk backward.
    pub trace_len: usize,
    /// Neighbours considered by the displacement outlier filter.
    pub knn_k: usize,
    /// Mean KNN distance above which a displacement is dropped.
    pub density_thresh: f64,
    /// Neighbourhood radius for isolated-peak suppression.
    pub neighbor_len: usize,
    /// Moving-window length for the spike detector.
    pub window_len: usize,
    /// Scale factor on the window std when sizing the normal interval.
    pub window_scale: f64,
    /// Side of the square Lucas-Kanade window (odd).
    pub lk_window: usize,
    pub pyramid_levels: usize,
    /// Minimum normalized eigenvalue of the gradient matrix; below it the
    /// local system is ill-conditioned and the point is dropped.
    pub min_eig_threshold: f64,
    /// Newton iterations per pyramid level.
    pub max_iterations: usize,
    /// Greedy spacing between seeded feature points.
    pub min_seed_distance: f64,
    /// A detected spike only counts as a crash if the velocity there is at
    /// least this many px/frame; keeps sub-pixel tracking noise on fully
    /// stopped segments from firing the detector.
    pub min_crash_magnitude: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            seed_count: 50,
            trace_len: 390,
            knn_k: 6,
            density_thresh: 6.6,
            neighbor_len: 5,
            window_len: 60,
            window_scale: 2.5,
            lk_window: 15,
            pyramid_levels: 3,
            min_eig_threshold: 1e-4,
            max_iterations: 20,
            min_seed_distance: 3.0,
            min_crash_magnitude: 1.0,
        }
    }
}

/// Ranks of the magnitude series examined by peak suppression
/// (1st, 3rd, 5th and 7th largest).
pub const SUPPRESS_RANKS: [usize; 4] = [0, 2, 4, 6];

/// A tracked feature point. Once `tracked` goes false the point is dead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub pos: (f64, f64),
    pub tracked: bool,
}

/// Single-channel float image with bilinear sampling.
#[derive(Debug, Clone)]
pub struct GrayF32 {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl GrayF32 {
    pub fn from_frame(frame: &Frame) -> GrayF32 {
        debug_assert!(frame.is_gray());
        GrayF32 {
            width: frame.width as usize,
            height: frame.height as usize,
            data: frame.data.iter().map(|&v| v as f32).collect(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with clamped borders.
    #[inline]
    fn sample(&self, x: f32, y: f32) -> f32 {
        let xc = x.clamp(0.0, (self.width - 1) as f32);
        let yc = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f32;
        let fy = yc - y0 as f32;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn downsample(&self) -> GrayF32 {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (x0, y0) = (2 * x, 2 * y);
                let x1 = (x0 + 1).min(self.width - 1);
                let y1 = (y0 + 1).min(self.height - 1);
                let v = (self.at(x0, y0) + self.at(x1, y0) + self.at(x0, y1) + self.at(x1, y1))
                    / 4.0;
                data.push(v);
            }
        }
        GrayF32 {
            width: w,
            height: h,
            data,
        }
    }
}

/// Image pyramid, level 0 at full resolution.
pub struct Pyramid {
    levels: Vec<GrayF32>,
}

impl Pyramid {
    pub fn build(frame: &Frame, levels: usize) -> Pyramid {
        let mut out = Vec::with_capacity(levels.max(1));
        out.push(GrayF32::from_frame(frame));
        for _ in 1..levels.max(1) {
            let next = out.last().unwrap().downsample();
            if next.width < 8 || next.height < 8 {
                break;
            }
            out.push(next);
        }
        Pyramid { levels: out }
    }
}

/// Track one point from `from` into `to`. Returns the displacement and
/// whether tracking held.
fn track_point(
    from: &Pyramid,
    to: &Pyramid,
    pos: (f64, f64),
    params: &FlowParams,
) -> ((f64, f64), bool) {
    let hw = (params.lk_window / 2) as i32;
    let win_px = ((2 * hw + 1) * (2 * hw + 1)) as f32;
    let top = from.levels.len().min(to.levels.len()) - 1;

    let mut d = (0.0f32, 0.0f32);
    for level in (0..=top).rev() {
        let scale = (1 << level) as f32;
        let i_img = &from.levels[level];
        let j_img = &to.levels[level];
        let px = pos.0 as f32 / scale;
        let py = pos.1 as f32 / scale;

        // template gradients around the point in `from`
        let n = (2 * hw + 1) as usize;
        let mut ix = vec![0.0f32; n * n];
        let mut iy = vec![0.0f32; n * n];
        let mut iv = vec![0.0f32; n * n];
        let (mut gxx, mut gxy, mut gyy) = (0.0f32, 0.0f32, 0.0f32);
        for (wy, row) in (-hw..=hw).enumerate() {
            for (wx, col) in (-hw..=hw).enumerate() {
                let (sx, sy) = (px + col as f32, py + row as f32);
                let gx = (i_img.sample(sx + 1.0, sy) - i_img.sample(sx - 1.0, sy)) / 2.0;
                let gy = (i_img.sample(sx, sy + 1.0) - i_img.sample(sx, sy - 1.0)) / 2.0;
                let idx = wy * n + wx;
                ix[idx] = gx;
                iy[idx] = gy;
                iv[idx] = i_img.sample(sx, sy);
                gxx += gx * gx;
                gxy += gx * gy;
                gyy += gy * gy;
            }
        }

        // minimum eigenvalue of the gradient matrix, normalized per pixel
        let tr = gxx + gyy;
        let det_part = ((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy).sqrt();
        let min_eig = 0.5 * (tr - det_part) / win_px;
        if (min_eig as f64) < params.min_eig_threshold {
            return ((0.0, 0.0), false);
        }
        let det = gxx * gyy - gxy * gxy;
        if det.abs() < 1e-12 {
            return ((0.0, 0.0), false);
        }

        for _ in 0..params.max_iterations {
            let (mut bx, mut by) = (0.0f32, 0.0f32);
            for (wy, row) in (-hw..=hw).enumerate() {
                for (wx, col) in (-hw..=hw).enumerate() {
                    let idx = wy * n + wx;
                    let jx = px + col as f32 + d.0;
                    let jy = py + row as f32 + d.1;
                    let r = iv[idx] - j_img.sample(jx, jy);
                    bx += r * ix[idx];
                    by += r * iy[idx];
                }
            }
            let du = (gyy * bx - gxy * by) / det;
            let dv = (gxx * by - gxy * bx) / det;
            d.0 += du;
            d.1 += dv;
            if du * du + dv * dv < 1e-4 {
                break;
            }
        }

        if level > 0 {
            d.0 *= 2.0;
            d.1 *= 2.0;
        }
    }

    let fin = (pos.0 + d.0 as f64, pos.1 + d.1 as f64);
    let (w, h) = (from.levels[0].width as f64, from.levels[0].height as f64);
    if fin.0 < 0.0 || fin.1 < 0.0 || fin.0 >= w || fin.1 >= h {
        return ((0.0, 0.0), false);
    }
    ((d.0 as f64, d.1 as f64), true)
}

/// One Lucas-Kanade step for all live points. Each tracked point moves to
/// its matched position in `to` and reports its displacement; points that
/// fail go dead and report zero.
pub fn lk_step(
    from: &Pyramid,
    to: &Pyramid,
    points: &mut [FlowPoint],
    params: &FlowParams,
) -> Vec<(f64, f64)> {
    points
        .iter_mut()
        .map(|p| {
            if !p.tracked {
                return (0.0, 0.0);
            }
            let (d, ok) = track_point(from, to, p.pos, params);
            if ok {
                p.pos = (p.pos.0 + d.0, p.pos.1 + d.1);
            } else {
                p.tracked = false;
            }
            d
        })
        .collect()
}

/// Seed up to `count` corner-like points inside the box, strongest first,
/// greedily spaced by `min_seed_distance`.
pub fn seed_points(
    bbox: &BBox,
    frame: &Frame,
    count: usize,
    params: &FlowParams,
) -> Result<Vec<FlowPoint>> {
    debug_assert!(frame.is_gray());
    let rect = PixelRect::from_bbox(bbox, frame.width, frame.height).ok_or(
        Error::InvalidBBox {
            x1: bbox.x1,
            y1: bbox.y1,
            x2: bbox.x2,
            y2: bbox.y2,
            reason: "box lies outside the frame",
        },
    )?;
    let img = GrayF32::from_frame(frame);
    let (w, h) = (img.width, img.height);

    // Shi-Tomasi response: min eigenvalue of the 3x3-summed gradient matrix
    let mut responses: Vec<(f32, u32, u32)> = Vec::new();
    let x_lo = rect.x0.max(2) as usize;
    let x_hi = (rect.x1 as usize).min(w.saturating_sub(2));
    let y_lo = rect.y0.max(2) as usize;
    let y_hi = (rect.y1 as usize).min(h.saturating_sub(2));
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (mut gxx, mut gxy, mut gyy) = (0.0f32, 0.0f32, 0.0f32);
            for sy in y - 1..=y + 1 {
                for sx in x - 1..=x + 1 {
                    let gx = (img.at(sx + 1, sy) - img.at(sx - 1, sy)) / 2.0;
                    let gy = (img.at(sx, sy + 1) - img.at(sx, sy - 1)) / 2.0;
                    gxx += gx * gx;
                    gxy += gx * gy;
                    gyy += gy * gy;
                }
            }
            let tr = gxx + gyy;
            let det_part = ((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy).sqrt();
            let min_eig = 0.5 * (tr - det_part);
            responses.push((min_eig, x as u32, y as u32));
        }
    }
    let max_resp = responses
        .iter()
        .map(|r| r.0)
        .fold(0.0f32, f32::max);
    if max_resp <= 1e-3 {
        return Ok(Vec::new()); // featureless region, nothing to seed
    }
    let floor = (0.01 * max_resp).max(1e-3);
    responses.retain(|r| r.0 > floor);
    responses.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let min_d2 = params.min_seed_distance * params.min_seed_distance;
    let mut out: Vec<FlowPoint> = Vec::new();
    for &(_, x, y) in &responses {
        if out.len() >= count {
            break;
        }
        let (fx, fy) = (x as f64, y as f64);
        let spaced = out.iter().all(|p| {
            let (dx, dy) = (p.pos.0 - fx, p.pos.1 - fy);
            dx * dx + dy * dy >= min_d2
        });
        if spaced {
            out.push(FlowPoint {
                pos: (fx, fy),
                tracked: true,
            });
        }
    }
    Ok(out)
}

/// Indices of displacements whose mean distance to their `k` nearest
/// neighbours stays within `density_thresh`. With `k + 1` or fewer points
/// everything passes and the warning flag is set.
pub fn knn_outlier_filter(
    displacements: &[(f64, f64)],
    k: usize,
    density_thresh: f64,
) -> (Vec<usize>, bool) {
    let n = displacements.len();
    if n < k + 1 {
        return ((0..n).collect(), true);
    }
    let mut inliers = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = displacements[i].0 - displacements[j].0;
                let dy = displacements[i].1 - displacements[j].1;
                (dx * dx + dy * dy).sqrt()
            })
            .collect();
        dists.sort_by(f64::total_cmp);
        let mean: f64 = dists[..k].iter().sum::<f64>() / k as f64;
        if mean <= density_thresh {
            inliers.push(i);
        }
    }
    (inliers, false)
}

/// One entry of the backward velocity series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    /// The earlier frame of the pair this motion was measured over.
    pub frame_idx: usize,
    pub magnitude: f64,
    pub mean_u: f64,
    pub mean_v: f64,
    pub active_points: usize,
}

/// Velocity magnitudes walking backward from the stop frame.
#[derive(Debug, Clone, Default)]
pub struct VelocitySeries {
    pub stop_frame: usize,
    pub fps: f64,
    pub samples: Vec<FlowSample>,
    pub knn_warned: bool,
}

impl VelocitySeries {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.magnitude).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Trace the event's box backward `trace_len` frames (truncated at the
/// start of the video). An empty series means the branch abstains.
pub fn backward_trace(
    event: &AnomalyEvent,
    frames: &dyn FrameSource,
    params: &FlowParams,
) -> Result<VelocitySeries> {
    let fps = frames.fps();
    let stop_frame = event
        .start_time
        .to_frame(fps)
        .min(frames.frame_count().saturating_sub(1));
    let trace_len = params.trace_len.min(stop_frame);
    let mut series = VelocitySeries {
        stop_frame,
        fps,
        samples: Vec::with_capacity(trace_len),
        knn_warned: false,
    };
    if trace_len == 0 {
        return Ok(series);
    }

    let stop_gray = to_grayscale(&frames.get(stop_frame)?);
    let mut points = seed_points(&event.bbox, &stop_gray, params.seed_count, params)?;
    if points.is_empty() {
        return Ok(series);
    }

    let mut cur = Pyramid::build(&stop_gray, params.pyramid_levels);
    for back in 1..=trace_len {
        let prev_idx = stop_frame - back;
        let prev_gray = to_grayscale(&frames.get(prev_idx)?);
        let prev = Pyramid::build(&prev_gray, params.pyramid_levels);

        let displacements = lk_step(&cur, &prev, &mut points, params);
        let live: Vec<(f64, f64)> = points
            .iter()
            .zip(&displacements)
            .filter(|(p, _)| p.tracked)
            .map(|(_, &d)| d)
            .collect();
        points.retain(|p| p.tracked);
        if live.is_empty() {
            break;
        }

        let (inliers, warned) = knn_outlier_filter(&live, params.knn_k, params.density_thresh);
        series.knn_warned |= warned;
        let picked: Vec<(f64, f64)> = if inliers.is_empty() {
            live.clone()
        } else {
            inliers.iter().map(|&i| live[i]).collect()
        };
        let n = picked.len() as f64;
        let mean_u = picked.iter().map(|d| d.0).sum::<f64>() / n;
        let mean_v = picked.iter().map(|d| d.1).sum::<f64>() / n;
        series.samples.push(FlowSample {
            frame_idx: prev_idx,
            magnitude: (mean_u * mean_u + mean_v * mean_v).sqrt(),
            mean_u,
            mean_v,
            active_points: live.len(),
        });
        cur = prev;
    }
    Ok(series)
}

/// Zero out isolated impulses among the top-ranked magnitudes.
///
/// The 1st, 3rd, 5th and 7th largest values are inspected; one whose whole
/// `neighbor_len`-neighbourhood is strictly smaller is an isolated spike
/// (noise) and is set to zero. Never touches more than four positions and
/// never writes anything but zero.
pub fn peak_suppress(values: &mut [f64], neighbor_len: usize) {
    if values.is_empty() {
        return;
    }
    let mut ranked: Vec<usize> = (0..values.len()).collect();
    ranked.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut to_zero = Vec::new();
    for &rank in SUPPRESS_RANKS.iter() {
        let Some(&idx) = ranked.get(rank) else {
            continue;
        };
        let lo = idx.saturating_sub(neighbor_len);
        let hi = (idx + neighbor_len).min(values.len() - 1);
        let has_neighbors = lo < idx || hi > idx;
        let isolated = (lo..=hi)
            .filter(|&j| j != idx)
            .all(|j| values[j] < values[idx]);
        if isolated && has_neighbors {
            to_zero.push(idx);
        }
    }
    for idx in to_zero {
        values[idx] = 0.0;
    }
}

/// All series indices flagged as drastic changes by the sliding-window
/// scan, ascending and deduplicated.
fn drastic_change_indices(values: &[f64], window_len: usize, scale: f64) -> Vec<usize> {
    let n = values.len();
    let max_run = (window_len / 4).max(1);
    let mut flagged = std::collections::BTreeSet::new();
    for s in 0..=n - window_len {
        let w = &values[s..s + window_len];
        let len = window_len as f64;
        let mean = w.iter().sum::<f64>() / len;
        let mae = w.iter().map(|v| (v - mean).abs()).sum::<f64>() / len;
        let std = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len).sqrt();
        let half = mae + scale * std;
        let (lo, hi) = (mean - half, mean + half);

        let mut run_start: Option<usize> = None;
        for (j, &v) in w.iter().enumerate() {
            let outlier = v > hi || v < lo;
            if outlier && run_start.is_none() {
                run_start = Some(j);
            }
            let run_ended = !outlier || j == window_len - 1;
            if let (Some(rs), true) = (run_start, run_ended) {
                let run_end = if outlier { j } else { j - 1 };
                let run_len = run_end - rs + 1;
                let peak = w[rs..=run_end].iter().cloned().fold(f64::MIN, f64::max);
                // a drastic change is a genuine local peak: well above the
                // series values flanking the run. A stop edge fails this
                // (the cruise plateau continues on one side at the same
                // height), a crash spike towers over the plateau on both
                // sides.
                let (gs, ge) = (s + rs, s + run_end);
                let above_left = gs > 0 && peak >= 2.0 * values[gs - 1];
                let above_right = ge + 1 < n && peak >= 2.0 * values[ge + 1];
                if run_len <= max_run && peak >= 2.0 * mean && above_left && above_right {
                    flagged.insert(gs);
                }
                run_start = None;
            }
        }
    }
    flagged.into_iter().collect()
}

/// Scan the series with a sliding window; values outside
/// `mean +- (mae + scale * std)` are outliers. Short, strong outlier runs
/// (drastic changes) mark an anomaly; long gentle ones are normal traffic
/// dynamics. Returns the earliest anomalous series index.
pub fn moving_window_detect(
    values: &[f64],
    window_len: usize,
    scale: f64,
) -> Result<Option<usize>> {
    let n = values.len();
    if n < window_len || window_len == 0 {
        return Err(Error::InsufficientHistory {
            needed: window_len,
            got: n,
        });
    }
    Ok(drastic_change_indices(values, window_len, scale)
        .into_iter()
        .next())
}

/// Full crash localization on a traced series: suppress isolated noise
/// peaks, scan for drastic changes, keep those with real vehicle motion
/// behind them, and map the earliest survivor back to its frame index.
/// `None` when the series is too short or nothing qualifies.
pub fn locate_crash_frame(series: &VelocitySeries, params: &FlowParams) -> Option<usize> {
    let mut mags = series.magnitudes();
    if mags.len() < params.window_len {
        return None;
    }
    peak_suppress(&mut mags, params.neighbor_len);
    drastic_change_indices(&mags, params.window_len, params.window_scale)
        .into_iter()
        .find(|&i| mags[i] >= params.min_crash_magnitude)
        .map(|i| series.samples[i].frame_idx)
}
