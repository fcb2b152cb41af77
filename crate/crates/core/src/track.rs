//! Multi-object tracking over detections and box-level anomaly
//! classification.
//!
//! Association uses a constant-velocity Kalman prediction plus optimal IoU
//! assignment; there is deliberately no appearance model, so the tracker
//! carries no learned weights. Identity losses from occlusion are repaired
//! by IoU against recently lost tracks.
//!
//! One tracker instance per video stream, fed strictly in frame order.

use crate::assign::max_score_assignment;
use crate::error::Result;
use crate::mask::RoadMask;
use crate::types::{AnomalyEvent, BBox, Branch, Detection, TimeStamp};

/// Constant-velocity filter on the box center. Box extents are smoothed
/// separately; only the center needs the velocity estimate.
#[derive(Debug, Clone)]
struct Kalman {
    /// cx, cy, vx, vy
    x: [f64; 4],
    p: [[f64; 4]; 4],
}

const KF_MEAS_VAR: f64 = 1.0;
const KF_PROCESS_VAR: f64 = 0.5;

impl Kalman {
    fn new(cx: f64, cy: f64) -> Self {
        let mut p = [[0.0; 4]; 4];
        p[0][0] = 4.0;
        p[1][1] = 4.0;
        p[2][2] = 100.0;
        p[3][3] = 100.0;
        Self {
            x: [cx, cy, 0.0, 0.0],
            p,
        }
    }

    fn predict(&mut self) {
        self.x[0] += self.x[2];
        self.x[1] += self.x[3];
        // P = F P F^T + Q with F = [I, I; 0, I]
        for j in 0..4 {
            self.p[0][j] += self.p[2][j];
            self.p[1][j] += self.p[3][j];
        }
        for i in 0..4 {
            self.p[i][0] += self.p[i][2];
            self.p[i][1] += self.p[i][3];
        }
        for i in 0..4 {
            self.p[i][i] += KF_PROCESS_VAR;
        }
    }

    fn update(&mut self, zx: f64, zy: f64) {
        let y = [zx - self.x[0], zy - self.x[1]];
        let s = [
            [self.p[0][0] + KF_MEAS_VAR, self.p[0][1]],
            [self.p[1][0], self.p[1][1] + KF_MEAS_VAR],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let si = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                k[i][j] = self.p[i][0] * si[0][j] + self.p[i][1] * si[1][j];
            }
        }
        for i in 0..4 {
            self.x[i] += k[i][0] * y[0] + k[i][1] * y[1];
        }
        let old = self.p;
        for i in 0..4 {
            for j in 0..4 {
                self.p[i][j] = old[i][j] - (k[i][0] * old[0][j] + k[i][1] * old[1][j]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame_idx: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub status: TrackStatus,
    /// Frame indices strictly increasing; gaps appear across occlusions.
    pub history: Vec<TrackPoint>,
    kf: Kalman,
    width: f64,
    height: f64,
    /// Consecutive successful associations.
    pub hits: u32,
    pub steps_since_update: u32,
}

impl Track {
    fn new(id: u64, det: &Detection) -> Self {
        let (cx, cy) = det.bbox.center();
        Self {
            id,
            status: TrackStatus::Tentative,
            history: vec![TrackPoint {
                frame_idx: det.frame_idx,
                bbox: det.bbox,
                score: det.score,
            }],
            kf: Kalman::new(cx, cy),
            width: det.bbox.width(),
            height: det.bbox.height(),
            hits: 1,
            steps_since_update: 0,
        }
    }

    /// Predicted box for the next step (post-`predict` state).
    fn predicted_bbox(&self) -> BBox {
        let (cx, cy) = (self.kf.x[0], self.kf.x[1]);
        BBox {
            x1: cx - self.width / 2.0,
            y1: cy - self.height / 2.0,
            x2: cx + self.width / 2.0,
            y2: cy + self.height / 2.0,
        }
    }

    fn absorb(&mut self, det: &Detection, min_hits: u32) {
        let (cx, cy) = det.bbox.center();
        self.kf.update(cx, cy);
        self.width = 0.5 * self.width + 0.5 * det.bbox.width();
        self.height = 0.5 * self.height + 0.5 * det.bbox.height();
        self.history.push(TrackPoint {
            frame_idx: det.frame_idx,
            bbox: det.bbox,
            score: det.score,
        });
        self.hits += 1;
        self.steps_since_update = 0;
        if self.status == TrackStatus::Tentative && self.hits >= min_hits {
            self.status = TrackStatus::Confirmed;
        }
    }

    pub fn last_bbox(&self) -> &BBox {
        &self.history.last().expect("track never empty").bbox
    }

    pub fn first_frame(&self) -> usize {
        self.history[0].frame_idx
    }

    pub fn last_frame(&self) -> usize {
        self.history.last().unwrap().frame_idx
    }

    /// Every box the track ever occupied, for trajectory-mask accumulation.
    pub fn footprints(&self) -> Vec<BBox> {
        self.history.iter().map(|p| p.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    /// Association pairs below this IoU are forbidden.
    pub gate_iou: f64,
    /// Consecutive hits to promote tentative -> confirmed.
    pub min_hits: u32,
    /// Steps without a detection before a track is declared lost.
    pub max_age: u32,
    /// IoU against a lost track's last box at which its id is retrieved.
    pub retrieve_iou: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            gate_iou: 0.1,
            min_hits: 3,
            max_age: 30,
            retrieve_iou: 0.3,
        }
    }
}

/// Among the lost tracks, find the one whose last box best overlaps
/// `new_box`, provided the IoU clears `thresh`. Ties break toward larger
/// IoU, then smaller id.
pub fn retrieve_id(lost: &[Track], new_box: &BBox, thresh: f64) -> Option<usize> {
    let mut best: Option<(usize, f64, u64)> = None;
    for (i, t) in lost.iter().enumerate() {
        let iou = t.last_bbox().iou(new_box);
        if iou < thresh {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b_iou, b_id)) => iou > b_iou || (iou == b_iou && t.id < b_id),
        };
        if better {
            best = Some((i, iou, t.id));
        }
    }
    best.map(|(i, _, _)| i)
}

/// SORT-style tracker: predict, assign, spawn, age.
pub struct Tracker {
    pub params: TrackerParams,
    active: Vec<Track>,
    lost: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            active: Vec::new(),
            lost: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    /// Advance one step with this frame's detections. `frame_idx` must be
    /// strictly greater than in the previous call.
    pub fn step(&mut self, detections: &[Detection], frame_idx: usize) {
        if let Some(last) = self.last_frame {
            debug_assert!(frame_idx > last, "tracker stepped out of frame order");
        }
        self.last_frame = Some(frame_idx);
        for t in &mut self.active {
            t.kf.predict();
        }

        let scores: Vec<Vec<f64>> = self
            .active
            .iter()
            .map(|t| {
                let pb = t.predicted_bbox();
                detections.iter().map(|d| pb.iou(&d.bbox)).collect()
            })
            .collect();
        let pairs = max_score_assignment(&scores, self.params.gate_iou);

        let mut det_matched = vec![false; detections.len()];
        let mut track_matched = vec![false; self.active.len()];
        for &(ti, di) in &pairs {
            self.active[ti].absorb(&detections[di], self.params.min_hits);
            track_matched[ti] = true;
            det_matched[di] = true;
        }

        // age unmatched tracks; expire to lost
        for (ti, matched) in track_matched.iter().enumerate() {
            if !matched {
                let t = &mut self.active[ti];
                t.steps_since_update += 1;
                t.hits = 0;
            }
        }
        let max_age = self.params.max_age;
        let mut still_active = Vec::with_capacity(self.active.len());
        for mut t in self.active.drain(..) {
            if t.steps_since_update > max_age {
                t.status = TrackStatus::Lost;
                self.lost.push(t);
            } else {
                still_active.push(t);
            }
        }
        self.active = still_active;

        // unmatched detections: retrieve a lost id or spawn a new track
        for (di, det) in detections.iter().enumerate() {
            if det_matched[di] {
                continue;
            }
            if let Some(li) = retrieve_id(&self.lost, &det.bbox, self.params.retrieve_iou) {
                let mut t = self.lost.swap_remove(li);
                // resume under the old identity; history keeps the gap
                t.status = if t.hits >= self.params.min_hits || t.status == TrackStatus::Lost {
                    TrackStatus::Confirmed
                } else {
                    TrackStatus::Tentative
                };
                let (cx, cy) = det.bbox.center();
                t.kf = Kalman::new(cx, cy);
                t.steps_since_update = 0;
                t.absorb(det, self.params.min_hits);
                self.active.push(t);
            } else {
                self.active.push(Track::new(self.next_id, det));
                self.next_id += 1;
            }
        }
    }

    pub fn active_tracks(&self) -> &[Track] {
        &self.active
    }

    pub fn lost_tracks(&self) -> &[Track] {
        &self.lost
    }

    /// All tracks ever created, active and lost, ordered by id.
    pub fn into_tracks(self) -> Vec<Track> {
        let mut all = self.active;
        all.extend(self.lost);
        all.sort_by_key(|t| t.id);
        all
    }
}

/// The interval / frequency / stability rule set that separates genuinely
/// stopped vehicles from tracking noise.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyCriteria {
    /// A stopped vehicle must persist at least this long.
    pub min_duration_s: f64,
    /// Length of each trailing presence window.
    pub window_s: f64,
    /// Number of trailing windows inspected.
    pub window_count: usize,
    /// Windows (out of `window_count`) the track must appear in.
    pub min_windows_present: usize,
    /// IoU threshold for retrieving a lost identity.
    pub iou_retrieve_thresh: f64,
    /// Center standard deviation (px, either axis) above which the box is
    /// not considered stable.
    pub center_std_max: f64,
}

impl Default for AnomalyCriteria {
    fn default() -> Self {
        Self {
            min_duration_s: 40.0,
            window_s: 10.0,
            window_count: 5,
            min_windows_present: 4,
            iou_retrieve_thresh: 0.3,
            center_std_max: 3.0,
        }
    }
}

/// Earliest history index from which the remainder of the track is stable
/// (center std below the limit on both axes).
fn stable_span_start(track: &Track, center_std_max: f64) -> Option<usize> {
    let n = track.history.len();
    if n < 2 {
        return None;
    }
    // suffix sums of center coordinates and squares
    let centers: Vec<(f64, f64)> = track.history.iter().map(|p| p.bbox.center()).collect();
    let (mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0);
    let mut best: Option<usize> = None;
    for s in (0..n).rev() {
        let (cx, cy) = centers[s];
        sx += cx;
        sy += cy;
        sxx += cx * cx;
        syy += cy * cy;
        let m = (n - s) as f64;
        if n - s < 2 {
            continue;
        }
        let vx = (sxx / m - (sx / m) * (sx / m)).max(0.0);
        let vy = (syy / m - (sy / m) * (sy / m)).max(0.0);
        if vx.sqrt() < center_std_max && vy.sqrt() < center_std_max {
            best = Some(s);
        }
    }
    best
}

/// Classify background-stream tracks into stopped-vehicle events.
///
/// A track qualifies when its stable span lasts at least
/// `min_duration_s`, it shows up in enough of the trailing windows, and
/// its mean center lies on the road mask.
pub fn classify_box_anomalies(
    tracks: &[Track],
    road_mask: &RoadMask,
    criteria: &AnomalyCriteria,
    fps: f64,
    video_id: &str,
) -> Result<Vec<AnomalyEvent>> {
    let mut events = Vec::new();
    for track in tracks {
        let Some(start_idx) = stable_span_start(track, criteria.center_std_max) else {
            continue;
        };
        let span = &track.history[start_idx..];
        let t_start = span[0].frame_idx as f64 / fps;
        let t_end = span[span.len() - 1].frame_idx as f64 / fps;
        if t_end - t_start < criteria.min_duration_s {
            continue;
        }

        // presence in trailing windows ending at the last observation
        let mut present = 0usize;
        for w in 0..criteria.window_count {
            let hi = t_end - w as f64 * criteria.window_s;
            let lo = hi - criteria.window_s;
            if span
                .iter()
                .any(|p| {
                    let t = p.frame_idx as f64 / fps;
                    t > lo && t <= hi
                })
            {
                present += 1;
            }
        }
        // the newest window's closed upper bound excludes nothing at w = 0
        if present < criteria.min_windows_present {
            continue;
        }

        let m = span.len() as f64;
        let (mut cx, mut cy) = (0.0, 0.0);
        for p in span {
            let c = p.bbox.center();
            cx += c.0;
            cy += c.1;
        }
        if !road_mask.contains_point(cx / m, cy / m) {
            continue;
        }

        let confidence =
            (span.iter().map(|p| p.score).sum::<f64>() / m).clamp(0.0, 1.0);
        events.push(AnomalyEvent::new(
            video_id,
            TimeStamp::from_seconds(t_start),
            span[span.len() - 1].bbox,
            confidence,
            Branch::BoxLevel,
        )?);
    }
    events.sort_by(|a, b| a.start_time.seconds.total_cmp(&b.start_time.seconds));
    Ok(events)
}
