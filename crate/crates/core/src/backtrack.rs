//! ROI backtracking: refine an event's start time by fixing its box as a
//! region of interest and scanning backward through the original frames.
//!
//! Background modeling reports a stopped vehicle only after it has been
//! absorbed (the appearance delay). The vehicle's location, however, is
//! already correct, so comparing the ROI patch at the coarse stop frame
//! against the same patch in earlier frames finds the true stop: the patch
//! stays "the same" back to the moment the vehicle arrived.
//!
//! Patch similarity is judged by three metrics fused by majority vote,
//! with running-average floors as a second gate against slow drift.

use crate::error::{Error, Result};
use crate::ingest::{to_grayscale, Frame, FrameSource};
use crate::mask::PixelRect;
use crate::types::{AnomalyEvent, Branch, Detection, TimeStamp};

/// Cap reported when two patches are identical (zero MSE).
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: u32 = 8;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityThresholds {
    /// Per-comparison vote thresholds: a metric votes "same" above these.
    pub psnr_stop: f64,
    pub ssim_stop: f64,
    pub euclid_stop: f64,
    /// Running-average floors over the whole walk.
    pub psnr_avg: f64,
    pub ssim_avg: f64,
    pub euclid_avg: f64,
    /// The walk never looks further back than this.
    pub max_backtrack_s: f64,
    /// The event box must match an original-stream detection at least this
    /// well near the coarse time, or the event passes through unrefined.
    pub roi_iou_thresh: f64,
    /// Branch fusion window: events further apart than this stay separate.
    pub max_deviation_s: f64,
    /// Events from the two branches merge when boxes overlap at least this.
    pub fuse_iou: f64,
    /// Compare every Nth frame on the way back.
    pub stride: usize,
}

impl Default for SimilarityThresholds {
    fn default() -> Self {
        Self {
            psnr_stop: 13.0,
            ssim_stop: 0.4,
            euclid_stop: 0.7,
            psnr_avg: 10.0,
            ssim_avg: 0.3,
            euclid_avg: 0.65,
            max_backtrack_s: 15.0,
            roi_iou_thresh: 0.9,
            max_deviation_s: 12.0,
            fuse_iou: 0.3,
            stride: 3,
        }
    }
}

/// Grayscale image patch cut out of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Patch {
    pub fn from_frame(frame: &Frame, rect: &PixelRect) -> Patch {
        debug_assert!(frame.is_gray());
        let mut data = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                data.push(frame.luma(x, y));
            }
        }
        Patch {
            width: rect.width(),
            height: rect.height(),
            data,
        }
    }

    fn check_same_size(&self, other: &Patch) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::PatchSizeMismatch {
                a_w: self.width,
                a_h: self.height,
                b_w: other.width,
                b_h: other.height,
            });
        }
        Ok(())
    }
}

/// Peak signal-to-noise ratio in dB; identical patches return the cap.
pub fn psnr(a: &Patch, b: &Patch) -> Result<f64> {
    a.check_same_size(b)?;
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(PSNR_CAP_DB)
    } else {
        Ok(10.0 * (255.0 * 255.0 / mse).log10())
    }
}

/// Mean local structural similarity over sliding 8x8 windows.
pub fn ssim(a: &Patch, b: &Patch) -> Result<f64> {
    a.check_same_size(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::PatchTooSmall {
            w: a.width,
            h: a.height,
            min: SSIM_WINDOW,
        });
    }
    let w = a.width as usize;
    let win = SSIM_WINDOW as usize;
    let npx = (win * win) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..=(a.height as usize - win) {
        for wx in 0..=(w - win) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in wy..wy + win {
                let row = y * w;
                for x in wx..wx + win {
                    let pa = a.data[row + x] as f64;
                    let pb = b.data[row + x] as f64;
                    sa += pa;
                    sb += pb;
                    saa += pa * pa;
                    sbb += pb * pb;
                    sab += pa * pb;
                }
            }
            let (ma, mb) = (sa / npx, sb / npx);
            let va = saa / npx - ma * ma;
            let vb = sbb / npx - mb * mb;
            let cov = sab / npx - ma * mb;
            let s = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            total += s;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Normalized Euclidean similarity: 1 for identical patches, 0 at the
/// maximum possible distance.
pub fn euclid_similarity(a: &Patch, b: &Patch) -> Result<f64> {
    a.check_same_size(b)?;
    let n = a.data.len() as f64;
    let sq: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(1.0 - sq.sqrt() / (255.0 * n.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Same,
    Changed,
}

/// Majority vote of the three metrics against their stop thresholds.
pub fn vote_fuse(
    psnr_db: f64,
    ssim_val: f64,
    euclid_val: f64,
    thresholds: &SimilarityThresholds,
) -> Verdict {
    let votes = (psnr_db > thresholds.psnr_stop) as u32
        + (ssim_val > thresholds.ssim_stop) as u32
        + (euclid_val > thresholds.euclid_stop) as u32;
    if votes >= 2 {
        Verdict::Same
    } else {
        Verdict::Changed
    }
}

/// What the backward walk did to one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktrackInfo {
    pub coarse_start: TimeStamp,
    /// True when the ROI gate passed and the walk ran.
    pub refined: bool,
    pub comparisons: usize,
}

/// Walk backward from the coarse start, extending the "same" run while the
/// vote says the patch has not changed and the running metric averages stay
/// above their floors. The refined start is the earliest frame of that run;
/// it never precedes `coarse - max_backtrack_s` and never follows the
/// coarse start.
pub fn backtrack_start(
    event: &AnomalyEvent,
    frames: &dyn FrameSource,
    original_detections: &[Detection],
    thresholds: &SimilarityThresholds,
) -> Result<(AnomalyEvent, BacktrackInfo)> {
    let fps = frames.fps();
    // floor, so the refined start can never land after the coarse one
    let coarse_frame =
        ((event.start_time.seconds * fps).floor() as usize).min(frames.frame_count().saturating_sub(1));
    let info_unrefined = BacktrackInfo {
        coarse_start: event.start_time,
        refined: false,
        comparisons: 0,
    };

    // object-level gate: the ROI must coincide with an original detection
    // near the coarse time
    let near = (fps.ceil() as usize).max(1);
    let gate_ok = original_detections.iter().any(|d| {
        d.frame_idx + near >= coarse_frame
            && d.frame_idx <= coarse_frame + near
            && d.bbox.iou(&event.bbox) >= thresholds.roi_iou_thresh
    });
    if !gate_ok {
        return Ok((event.clone(), info_unrefined));
    }

    let Some(rect) = PixelRect::from_bbox(&event.bbox, frames.width(), frames.height()) else {
        return Ok((event.clone(), info_unrefined));
    };

    let reference = Patch::from_frame(&to_grayscale(&frames.get(coarse_frame)?), &rect);
    let max_back = (thresholds.max_backtrack_s * fps).round() as usize;
    let stride = thresholds.stride.max(1);

    let mut refined_frame = coarse_frame;
    let (mut sum_psnr, mut sum_ssim, mut sum_euclid) = (0.0, 0.0, 0.0);
    let mut comparisons = 0usize;
    let mut back = stride;
    while back <= max_back && back <= coarse_frame {
        let frame_idx = coarse_frame - back;
        let patch = Patch::from_frame(&to_grayscale(&frames.get(frame_idx)?), &rect);
        let p = psnr(&reference, &patch)?;
        let s = ssim(&reference, &patch)?;
        let e = euclid_similarity(&reference, &patch)?;
        comparisons += 1;
        if vote_fuse(p, s, e, thresholds) == Verdict::Changed {
            break;
        }
        sum_psnr += p;
        sum_ssim += s;
        sum_euclid += e;
        let n = comparisons as f64;
        if sum_psnr / n <= thresholds.psnr_avg
            || sum_ssim / n <= thresholds.ssim_avg
            || sum_euclid / n <= thresholds.euclid_avg
        {
            break;
        }
        refined_frame = frame_idx;
        back += stride;
    }

    let mut refined = event.clone();
    refined.start_time = TimeStamp::from_frame(refined_frame, fps);
    debug_assert!(refined.start_time.seconds <= event.start_time.seconds + 1e-9);
    Ok((
        refined,
        BacktrackInfo {
            coarse_start: event.start_time,
            refined: true,
            comparisons,
        },
    ))
}

/// Merge pixel- and box-branch events: overlapping boxes whose start times
/// agree within the deviation window collapse to the earlier start. Merges
/// repeat until stable, so same-branch duplicates also collapse.
pub fn fuse_branch_events(
    pixel_events: &[AnomalyEvent],
    box_events: &[AnomalyEvent],
    thresholds: &SimilarityThresholds,
) -> Vec<AnomalyEvent> {
    let mut pool: Vec<AnomalyEvent> = pixel_events
        .iter()
        .chain(box_events.iter())
        .cloned()
        .collect();
    pool.sort_by(|a, b| a.start_time.seconds.total_cmp(&b.start_time.seconds));

    loop {
        let mut merged_any = false;
        'scan: for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                let dt = (pool[i].start_time.seconds - pool[j].start_time.seconds).abs();
                if pool[i].bbox.iou(&pool[j].bbox) >= thresholds.fuse_iou
                    && dt <= thresholds.max_deviation_s
                {
                    let keep_j = pool[j].clone();
                    let keep = &mut pool[i];
                    // earlier start wins (pool is start-sorted, i is earlier)
                    keep.confidence = keep.confidence.max(keep_j.confidence);
                    if keep.branch != keep_j.branch {
                        keep.branch = Branch::Fused;
                    }
                    pool.remove(j);
                    merged_any = true;
                    break 'scan;
                }
            }
        }
        if !merged_any {
            break;
        }
    }
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemorySource;
    use crate::types::BBox;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn patch(w: u32, h: u32, v: u8) -> Patch {
        Patch {
            width: w,
            height: h,
            data: vec![v; (w * h) as usize],
        }
    }

    #[test]
    fn psnr_examples() {
        let a = patch(10, 10, 0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = patch(10, 10, 255);
        assert_relative_eq!(psnr(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
        let c = patch(10, 10, 16);
        let expect = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert_relative_eq!(psnr(&a, &c).unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn ssim_examples() {
        let a = patch(12, 12, 77);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        // constant patches: variance terms collapse to 1, luminance term
        // gives the closed form
        let a = patch(12, 12, 100);
        let b = patch(12, 12, 150);
        let expect = (2.0 * 100.0 * 150.0 + SSIM_C1) / (100.0 * 100.0 + 150.0 * 150.0 + SSIM_C1);
        assert_relative_eq!(ssim(&a, &b).unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn ssim_rejects_small_patches() {
        let a = patch(7, 12, 10);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_noise_patches_decorrelate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let a = Patch {
                width: 16,
                height: 16,
                data: (0..256).map(|_| rng.gen()).collect(),
            };
            let b = Patch {
                width: 16,
                height: 16,
                data: (0..256).map(|_| rng.gen()).collect(),
            };
            let v = ssim(&a, &b).unwrap();
            assert!(v < 0.2, "independent noise should not look similar: {v}");
        }
    }

    #[test]
    fn euclid_examples() {
        let a = patch(10, 10, 0);
        assert_eq!(euclid_similarity(&a, &a).unwrap(), 1.0);
        let b = patch(10, 10, 255);
        assert_relative_eq!(euclid_similarity(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
        let c = patch(10, 10, 51);
        assert_relative_eq!(euclid_similarity(&a, &c).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn metric_symmetry() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Patch {
            width: 10,
            height: 10,
            data: (0..100).map(|_| rng.gen()).collect(),
        };
        let b = Patch {
            width: 10,
            height: 10,
            data: (0..100).map(|_| rng.gen()).collect(),
        };
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert_eq!(
            euclid_similarity(&a, &b).unwrap(),
            euclid_similarity(&b, &a).unwrap()
        );
        assert_relative_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn vote_examples() {
        let t = SimilarityThresholds::default();
        assert_eq!(vote_fuse(100.0, 1.0, 1.0, &t), Verdict::Same);
        assert_eq!(vote_fuse(5.0, 0.1, 0.2, &t), Verdict::Changed);
        // 2 of 3: psnr and euclid vote same, ssim does not
        assert_eq!(vote_fuse(14.0, 0.35, 0.75, &t), Verdict::Same);
    }

    proptest! {
        #[test]
        fn vote_is_monotone(
            p in 0.0f64..30.0, s in -1.0f64..1.0, e in 0.0f64..1.0,
            dp in 0.0f64..10.0, ds in 0.0f64..0.5, de in 0.0f64..0.3,
        ) {
            let t = SimilarityThresholds::default();
            if vote_fuse(p, s, e, &t) == Verdict::Same {
                prop_assert_eq!(vote_fuse(p + dp, s + ds, e + de, &t), Verdict::Same);
            }
        }
    }

    /// Scene fixture: flat road, a bright textured car appears at
    /// `arrive_frame` and stays.
    fn scene(frames: usize, arrive_frame: usize) -> (MemorySource, BBox, Vec<Detection>) {
        let (w, h) = (120u32, 80u32);
        let car = BBox::new(40.0, 30.0, 70.0, 50.0).unwrap();
        let mut source = MemorySource {
            fps: 30.0,
            frames: Vec::with_capacity(frames),
        };
        let mut dets = Vec::new();
        for idx in 0..frames {
            let mut data = vec![60u8; (w * h) as usize];
            if idx >= arrive_frame {
                for y in 30..50u32 {
                    for x in 40..70u32 {
                        // deterministic texture so the patch is not flat
                        data[(y * w + x) as usize] = 170 + ((x * 7 + y * 13) % 60) as u8;
                    }
                }
                dets.push(Detection {
                    frame_idx: idx,
                    bbox: car,
                    score: 0.95,
                });
            }
            source.frames.push(Frame::gray(idx, w, h, data));
        }
        (source, car, dets)
    }

    #[test]
    fn backtrack_recovers_arrival() {
        let fps = 30.0;
        let arrive = 300usize; // t = 10 s
        let (source, car, dets) = scene(800, arrive);
        // coarse report 12 s late
        let coarse = TimeStamp::from_frame(arrive + 360, fps);
        let event =
            AnomalyEvent::new("v", coarse, car, 0.9, Branch::BoxLevel).unwrap();
        let t = SimilarityThresholds::default();
        let (refined, info) = backtrack_start(&event, &source, &dets, &t).unwrap();
        assert!(info.refined);
        let err = refined.start_time.seconds - arrive as f64 / fps;
        assert!(
            (0.0..=0.2).contains(&err),
            "refined within one stride of the true arrival, err {err}"
        );
        assert!(refined.start_time.seconds <= info.coarse_start.seconds);
    }

    #[test]
    fn backtrack_clamps_at_max_window() {
        let fps = 30.0;
        // car present from the start; walk must stop at the 15 s bound
        let (source, car, dets) = scene(800, 0);
        let coarse = TimeStamp::from_frame(750, fps); // 25 s
        let event = AnomalyEvent::new("v", coarse, car, 0.9, Branch::BoxLevel).unwrap();
        let t = SimilarityThresholds::default();
        let (refined, _) = backtrack_start(&event, &source, &dets, &t).unwrap();
        assert_relative_eq!(
            refined.start_time.seconds,
            25.0 - t.max_backtrack_s,
            epsilon = 1e-9
        );
    }

    #[test]
    fn backtrack_gate_failure_passes_through() {
        let fps = 30.0;
        let (source, car, _) = scene(400, 100);
        let coarse = TimeStamp::from_frame(200, fps);
        let event = AnomalyEvent::new("v", coarse, car, 0.9, Branch::PixelLevel).unwrap();
        // detections that barely overlap the ROI (IoU < 0.9)
        let shifted = car.shifted(10.0, 0.0);
        let dets: Vec<Detection> = (100..400)
            .map(|f| Detection {
                frame_idx: f,
                bbox: shifted,
                score: 0.9,
            })
            .collect();
        let t = SimilarityThresholds::default();
        let (out, info) = backtrack_start(&event, &source, &dets, &t).unwrap();
        assert!(!info.refined);
        assert_eq!(out, event);
    }

    proptest! {
        #[test]
        fn backtrack_is_bounded_monotone(coarse_s in 16.0f64..24.0, arrive_s in 2.0f64..20.0) {
            let fps = 30.0;
            let arrive = (arrive_s * fps) as usize;
            let (source, car, dets) = scene(780, arrive);
            let coarse = TimeStamp::from_seconds(coarse_s);
            let event = AnomalyEvent::new("v", coarse, car, 0.9, Branch::BoxLevel).unwrap();
            let t = SimilarityThresholds::default();
            let (refined, _) = backtrack_start(&event, &source, &dets, &t).unwrap();
            // `coarse` snaps down to a frame boundary before the walk starts,
            // so allow one frame of slack on the bounds
            let frame_s = 1.0 / fps;
            prop_assert!(refined.start_time.seconds <= coarse.seconds + 1e-9);
            prop_assert!(
                refined.start_time.seconds >= coarse.seconds - t.max_backtrack_s - frame_s - 1e-9
            );
        }
    }

    fn ev(start: f64, bbox: BBox, branch: Branch) -> AnomalyEvent {
        AnomalyEvent::new("v", TimeStamp::from_seconds(start), bbox, 0.8, branch).unwrap()
    }

    #[test]
    fn fuse_identical_events() {
        let b = BBox::new(10.0, 10.0, 40.0, 30.0).unwrap();
        let t = SimilarityThresholds::default();
        let fused = fuse_branch_events(
            &[ev(100.0, b, Branch::PixelLevel)],
            &[ev(100.0, b, Branch::BoxLevel)],
            &t,
        );
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].branch, Branch::Fused);
        assert_eq!(fused[0].start_time.seconds, 100.0);
    }

    #[test]
    fn fuse_respects_deviation_window() {
        let b = BBox::new(10.0, 10.0, 40.0, 30.0).unwrap();
        let t = SimilarityThresholds::default();
        let fused = fuse_branch_events(
            &[ev(100.0, b, Branch::PixelLevel)],
            &[ev(130.0, b, Branch::BoxLevel)],
            &t,
        );
        assert_eq!(fused.len(), 2, "30 s apart must stay separate");
    }

    #[test]
    fn fuse_keeps_disjoint_boxes() {
        let a = BBox::new(10.0, 10.0, 40.0, 30.0).unwrap();
        let b = BBox::new(200.0, 100.0, 240.0, 130.0).unwrap();
        let t = SimilarityThresholds::default();
        let fused = fuse_branch_events(
            &[ev(100.0, a, Branch::PixelLevel)],
            &[ev(101.0, b, Branch::BoxLevel)],
            &t,
        );
        assert_eq!(fused.len(), 2);
    }

    #[test]
    fn fuse_takes_earliest_of_chain() {
        let b = BBox::new(10.0, 10.0, 40.0, 30.0).unwrap();
        let t = SimilarityThresholds::default();
        let fused = fuse_branch_events(
            &[ev(100.0, b, Branch::PixelLevel), ev(105.0, b, Branch::PixelLevel)],
            &[ev(108.0, b, Branch::BoxLevel)],
            &t,
        );
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].start_time.seconds, 100.0);
    }
}
