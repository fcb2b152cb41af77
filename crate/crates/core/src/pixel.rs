//! Pixel-level tracking branch: per-pixel spatio-temporal counters over
//! background-stream detections.
//!
//! Six grids evolve together: consecutive-detection and consecutive-miss
//! counters, a state machine (normal -> suspicious -> anomalous), a running
//! score mean, and the first/last frame of the current coverage run.
//! Regions that stay covered long enough become anomalous; a miss longer
//! than the tolerance resets the run.

use std::collections::VecDeque;

use crate::error::Result;
use crate::mask::{connected_components, BinaryMask, PixelRect, RoadMask};
use crate::types::{AnomalyEvent, Branch, Detection, TimeStamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PixelState {
    Normal = 0,
    Suspicious = 1,
    Anomalous = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrackerParams {
    /// Coverage duration at which a region becomes anomalous.
    pub min_abnormal_duration_s: f64,
    /// Coverage duration at which a region becomes suspicious.
    pub suspicious_duration_s: f64,
    /// Consecutive miss time that resets a coverage run.
    pub miss_tolerance_s: f64,
    /// Detections scoring below this do not count as coverage.
    pub score_floor: f64,
}

impl Default for PixelTrackerParams {
    fn default() -> Self {
        Self {
            min_abnormal_duration_s: 60.0,
            suspicious_duration_s: 40.0,
            miss_tolerance_s: 2.0,
            score_floor: 0.3,
        }
    }
}

/// How many past update steps of detections to keep for box matching.
const RECENT_DETECTION_STEPS: usize = 5;

pub struct PixelStateGrid {
    pub width: u32,
    pub height: u32,
    pub params: PixelTrackerParams,
    fps: f64,
    detected: Vec<u32>,
    undetected: Vec<u32>,
    state: Vec<PixelState>,
    score: Vec<f32>,
    start: Vec<u32>,
    end: Vec<u32>,
    recent: VecDeque<(usize, Vec<Detection>)>,
}

impl PixelStateGrid {
    pub fn new(width: u32, height: u32, fps: f64, params: PixelTrackerParams) -> Self {
        assert!(params.suspicious_duration_s < params.min_abnormal_duration_s);
        let n = (width * height) as usize;
        Self {
            width,
            height,
            params,
            fps,
            detected: vec![0; n],
            undetected: vec![0; n],
            state: vec![PixelState::Normal; n],
            score: vec![0.0; n],
            start: vec![0; n],
            end: vec![0; n],
            recent: VecDeque::new(),
        }
    }

    pub fn state_at(&self, x: u32, y: u32) -> PixelState {
        self.state[(y * self.width + x) as usize]
    }

    pub fn counters_at(&self, x: u32, y: u32) -> (u32, u32) {
        let i = (y * self.width + x) as usize;
        (self.detected[i], self.undetected[i])
    }

    pub fn run_bounds_at(&self, x: u32, y: u32) -> (u32, u32) {
        let i = (y * self.width + x) as usize;
        (self.start[i], self.end[i])
    }

    /// Advance the grids with this step's background-stream detections.
    pub fn update(&mut self, detections: &[Detection], frame_idx: usize) {
        let (w, h) = (self.width, self.height);
        // coverage score per pixel; NEG means uncovered
        const NEG: f32 = -1.0;
        let mut cover = vec![NEG; (w * h) as usize];
        let mut kept = Vec::new();
        for det in detections {
            if det.score < self.params.score_floor {
                continue;
            }
            kept.push(*det);
            if let Some(r) = PixelRect::from_bbox(&det.bbox, w, h) {
                for y in r.y0..r.y1 {
                    let row = (y * w) as usize;
                    for x in r.x0..r.x1 {
                        let c = &mut cover[row + x as usize];
                        *c = c.max(det.score as f32);
                    }
                }
            }
        }
        self.recent.push_back((frame_idx, kept));
        while self.recent.len() > RECENT_DETECTION_STEPS {
            self.recent.pop_front();
        }

        let fps = self.fps;
        let p = &self.params;
        for i in 0..cover.len() {
            if cover[i] >= 0.0 {
                self.detected[i] += 1;
                self.undetected[i] = 0;
                if self.detected[i] == 1 {
                    self.start[i] = frame_idx as u32;
                    self.score[i] = cover[i];
                } else {
                    let n = self.detected[i] as f32;
                    self.score[i] += (cover[i] - self.score[i]) / n;
                }
                self.end[i] = frame_idx as u32;
                let covered_s = (self.end[i] - self.start[i]) as f64 / fps;
                if self.state[i] == PixelState::Normal && covered_s >= p.suspicious_duration_s {
                    self.state[i] = PixelState::Suspicious;
                }
                if self.state[i] == PixelState::Suspicious
                    && covered_s >= p.min_abnormal_duration_s
                {
                    self.state[i] = PixelState::Anomalous;
                }
            } else if self.detected[i] > 0 {
                self.undetected[i] += 1;
                let missed_s = (frame_idx as u32 - self.end[i]) as f64 / fps;
                if missed_s > p.miss_tolerance_s {
                    self.detected[i] = 0;
                    self.undetected[i] = 0;
                    self.state[i] = PixelState::Normal;
                    self.score[i] = 0.0;
                }
            }
        }
    }

    /// Connected anomalous regions on the road mask, one event each.
    ///
    /// Each region reports the best-overlapping recent detection box (the
    /// region's own bounding rectangle if none overlaps), the earliest
    /// coverage start among its pixels, and the mean running score.
    pub fn extract_anomalies(
        &self,
        road_mask: &RoadMask,
        video_id: &str,
    ) -> Result<Vec<AnomalyEvent>> {
        let (w, h) = (self.width, self.height);
        let anomalous = BinaryMask::from_fn(w, h, |x, y| {
            self.state_at(x, y) == PixelState::Anomalous && road_mask.mask.get(x, y)
        });
        let (labels, comps) = connected_components(&anomalous);

        let mut events = Vec::new();
        for comp in &comps {
            let mut min_start = u32::MAX;
            let mut score_sum = 0.0f64;
            for y in comp.rect.y0..comp.rect.y1 {
                for x in comp.rect.x0..comp.rect.x1 {
                    let i = (y * w + x) as usize;
                    if labels[i] == comp.label {
                        min_start = min_start.min(self.start[i]);
                        score_sum += self.score[i] as f64;
                    }
                }
            }
            let comp_bbox = comp.rect.to_bbox();
            let mut best = comp_bbox;
            let mut best_iou = 0.0;
            for (_, dets) in &self.recent {
                for det in dets {
                    let iou = det.bbox.iou(&comp_bbox);
                    if iou > best_iou {
                        best_iou = iou;
                        best = det.bbox;
                    }
                }
            }
            events.push(AnomalyEvent::new(
                video_id,
                TimeStamp::from_frame(min_start as usize, self.fps),
                best,
                (score_sum / comp.area as f64).clamp(0.0, 1.0),
                Branch::PixelLevel,
            )?);
        }
        events.sort_by(|a, b| a.start_time.seconds.total_cmp(&b.start_time.seconds));
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;

    fn det(frame_idx: usize, x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection {
            frame_idx,
            bbox: BBox::new(x, y, x + w, y + h).unwrap(),
            score,
        }
    }

    /// Update cadence used by the pipeline: one step per background sample.
    const STEP: usize = 120;
    const FPS: f64 = 30.0;

    fn grid() -> PixelStateGrid {
        PixelStateGrid::new(80, 60, FPS, PixelTrackerParams::default())
    }

    #[test]
    fn no_detections_stays_normal() {
        let mut g = grid();
        for s in 0..40 {
            g.update(&[], s * STEP);
        }
        for y in 0..60 {
            for x in 0..80 {
                assert_eq!(g.state_at(x, y), PixelState::Normal);
            }
        }
    }

    #[test]
    fn static_box_70s_becomes_anomalous() {
        let mut g = grid();
        // 70 s of coverage at the sampling cadence
        let steps = (70.0 * FPS) as usize / STEP + 1;
        for s in 0..steps {
            g.update(&[det(s * STEP, 20.0, 10.0, 16.0, 10.0, 0.9)], s * STEP);
        }
        assert_eq!(g.state_at(25, 12), PixelState::Anomalous);
        assert_eq!(g.state_at(5, 5), PixelState::Normal);
        let (start, end) = g.run_bounds_at(25, 12);
        assert_eq!(start, 0, "coverage started with the first update");
        assert!(end >= start);
        let events = g
            .extract_anomalies(&RoadMask::full(80, 60), "v")
            .unwrap();
        assert_eq!(events.len(), 1);
        assert!(events[0].start_time.seconds < 1.0);
        assert!(events[0].bbox.iou(&BBox::new(20.0, 10.0, 36.0, 20.0).unwrap()) >= 0.5);
    }

    #[test]
    fn box_45s_reaches_suspicious_then_resets() {
        let mut g = grid();
        let steps = (45.0 * FPS) as usize / STEP;
        for s in 0..=steps {
            g.update(&[det(s * STEP, 20.0, 10.0, 16.0, 10.0, 0.9)], s * STEP);
        }
        assert_eq!(g.state_at(25, 12), PixelState::Suspicious);
        // box gone: next miss exceeds the 2 s tolerance at this cadence
        g.update(&[], (steps + 1) * STEP);
        assert_eq!(g.state_at(25, 12), PixelState::Normal);
        let (d, u) = g.counters_at(25, 12);
        assert_eq!((d, u), (0, 0));
    }

    #[test]
    fn low_score_detections_ignored() {
        let mut g = grid();
        for s in 0..40 {
            g.update(&[det(s * STEP, 20.0, 10.0, 16.0, 10.0, 0.2)], s * STEP);
        }
        assert_eq!(g.state_at(25, 12), PixelState::Normal);
    }

    #[test]
    fn masked_out_component_suppressed() {
        let mut g = grid();
        for s in 0..30 {
            g.update(&[det(s * STEP, 20.0, 10.0, 16.0, 10.0, 0.9)], s * STEP);
        }
        assert_eq!(g.state_at(25, 12), PixelState::Anomalous);
        let mut mask = RoadMask::full(80, 60);
        mask.mask = BinaryMask::from_fn(80, 60, |x, _| x >= 50);
        let events = g.extract_anomalies(&mask, "v").unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn two_vehicles_two_events() {
        let mut g = grid();
        for s in 0..30 {
            g.update(
                &[
                    det(s * STEP, 10.0, 10.0, 14.0, 9.0, 0.9),
                    det(s * STEP, 50.0, 40.0, 14.0, 9.0, 0.8),
                ],
                s * STEP,
            );
        }
        let events = g.extract_anomalies(&RoadMask::full(80, 60), "v").unwrap();
        assert_eq!(events.len(), 2);
        assert!(events[0].bbox.iou(&events[1].bbox) == 0.0);
    }

    #[test]
    fn counters_mutually_exclusive_and_bounds_ordered() {
        let mut g = grid();
        for s in 0..50 {
            let dets = if s % 3 == 0 {
                vec![det(s * STEP, 20.0, 10.0, 16.0, 10.0, 0.9)]
            } else {
                vec![]
            };
            let before: Vec<(u32, u32)> =
                (0..60).flat_map(|y| (0..80).map(move |x| (x, y))).map(|(x, y)| g.counters_at(x, y)).collect();
            g.update(&dets, s * STEP);
            let mut i = 0;
            for y in 0..60 {
                for x in 0..80 {
                    let (d0, u0) = before[i];
                    let (d1, u1) = g.counters_at(x, y);
                    i += 1;
                    let d_inc = d1 == d0 + 1;
                    let u_inc = u1 == u0 + 1;
                    assert!(!(d_inc && u_inc), "both counters incremented at ({x},{y})");
                    let (start, end) = g.run_bounds_at(x, y);
                    if d1 > 0 {
                        assert!(start <= end);
                    }
                }
            }
        }
    }

    #[test]
    fn state_monotone_within_run() {
        let mut g = grid();
        let mut last = PixelState::Normal;
        for s in 0..40 {
            g.update(&[det(s * STEP, 20.0, 10.0, 16.0, 10.0, 0.9)], s * STEP);
            let now = g.state_at(25, 12);
            assert!(now as u8 >= last as u8, "state must not regress inside a run");
            last = now;
        }
        assert_eq!(last, PixelState::Anomalous);
    }
}
