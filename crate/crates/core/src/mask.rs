//! Binary grids, morphology, connected components, and the road mask.
//!
//! The road mask is the intersection of two accumulators built over a full
//! pass of the video: a motion accumulator (frame differences) and a
//! trajectory accumulator (tracked box footprints). Regions that only ever
//! see parked vehicles or wind-blown foliage fail one of the two branches
//! and drop out of the mask.

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::types::BBox;

/// Binary H x W grid; data is 0/1 per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    /// Wrap an existing 0/1 buffer.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a & b)
            .collect();
        BinaryMask {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// True iff every set pixel of `self` is set in `other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.data
            .iter()
            .zip(&other.data)
            .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// Render as an 8-bit image (255 = set) for inspection dumps.
    pub fn to_frame(&self, idx: usize) -> Frame {
        let data = self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        Frame::gray(idx, self.width, self.height, data)
    }
}

/// Per-pixel hit counter used while accumulating a mask branch.
#[derive(Debug, Clone)]
pub struct Accumulator {
    pub width: u32,
    pub height: u32,
    counts: Vec<u32>,
}

impl Accumulator {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![0; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.counts[(y * self.width + x) as usize]
    }

    #[inline]
    fn bump(&mut self, idx: usize) {
        self.counts[idx] = self.counts[idx].saturating_add(1);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Pixels with at least `min_hits` accumulated hits.
    pub fn threshold(&self, min_hits: u32) -> BinaryMask {
        let data = self
            .counts
            .iter()
            .map(|&c| (c >= min_hits) as u8)
            .collect();
        BinaryMask {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Integer pixel rectangle, half-open on both axes, clamped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    /// exclusive
    pub x1: u32,
    /// exclusive
    pub y1: u32,
}

impl PixelRect {
    /// Rasterize a continuous box onto a `width x height` grid. Returns
    /// `None` when nothing of the box lands on the grid.
    pub fn from_bbox(b: &BBox, width: u32, height: u32) -> Option<PixelRect> {
        let x0 = b.x1.floor().max(0.0) as u32;
        let y0 = b.y1.floor().max(0.0) as u32;
        let x1 = (b.x2.ceil().min(width as f64)).max(0.0) as u32;
        let y1 = (b.y2.ceil().min(height as f64)).max(0.0) as u32;
        if x0 >= x1 || y0 >= y1 {
            None
        } else {
            Some(PixelRect { x0, y0, x1, y1 })
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        (self.width() as usize) * (self.height() as usize)
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x1: self.x0 as f64,
            y1: self.y0 as f64,
            x2: self.x1 as f64,
            y2: self.y1 as f64,
        }
    }
}

/// A connected component of set pixels (8-connectivity).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub label: u32,
    pub area: usize,
    /// Bounding rectangle, half-open.
    pub rect: PixelRect,
}

/// Label connected components (8-connectivity). Returns the label grid
/// (0 = background, labels start at 1) and per-component stats.
pub fn connected_components(mask: &BinaryMask) -> (Vec<u32>, Vec<Component>) {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    let mut next = 1u32;

    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = next;
        next += 1;
        labels[start] = label;
        stack.push(start);
        let (mut area, mut x0, mut y0, mut x1, mut y1) =
            (0usize, u32::MAX, u32::MAX, 0u32, 0u32);
        while let Some(idx) = stack.pop() {
            area += 1;
            let (x, y) = ((idx % w) as u32, (idx / w) as u32);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if mask.data[nidx] != 0 && labels[nidx] == 0 {
                        labels[nidx] = label;
                        stack.push(nidx);
                    }
                }
            }
        }
        comps.push(Component {
            label,
            area,
            rect: PixelRect {
                x0,
                y0,
                x1: x1 + 1,
                y1: y1 + 1,
            },
        });
    }
    (labels, comps)
}

fn dilate_once(mask: &BinaryMask, radius: u32) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let r = radius as i64;
    // separable: horizontal OR, then vertical OR
    let mut horiz = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = (x as i64 - r).max(0) as u32;
            let hi = ((x as i64 + r).min(w as i64 - 1)) as u32;
            let any = (lo..=hi).any(|xx| mask.get(xx, y));
            horiz.set(x, y, any);
        }
    }
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        let lo = (y as i64 - r).max(0) as u32;
        let hi = ((y as i64 + r).min(h as i64 - 1)) as u32;
        for x in 0..w {
            let any = (lo..=hi).any(|yy| horiz.get(x, yy));
            out.set(x, y, any);
        }
    }
    out
}

fn erode_once(mask: &BinaryMask, radius: u32) -> BinaryMask {
    // Outside the grid counts as foreground so closing never eats borders.
    let (w, h) = (mask.width, mask.height);
    let r = radius as i64;
    let mut horiz = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = (x as i64 - r).max(0) as u32;
            let hi = ((x as i64 + r).min(w as i64 - 1)) as u32;
            let all = (lo..=hi).all(|xx| mask.get(xx, y));
            horiz.set(x, y, all);
        }
    }
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        let lo = (y as i64 - r).max(0) as u32;
        let hi = ((y as i64 + r).min(h as i64 - 1)) as u32;
        for x in 0..w {
            let all = (lo..=hi).all(|yy| horiz.get(x, yy));
            out.set(x, y, all);
        }
    }
    out
}

/// Dilate with a square structuring element, `iters` times.
pub fn dilate(mask: &BinaryMask, kernel_size: u32, iters: usize) -> BinaryMask {
    let radius = kernel_size / 2;
    let mut m = mask.clone();
    for _ in 0..iters {
        m = dilate_once(&m, radius);
    }
    m
}

/// Erode with a square structuring element, `iters` times.
pub fn erode(mask: &BinaryMask, kernel_size: u32, iters: usize) -> BinaryMask {
    let radius = kernel_size / 2;
    let mut m = mask.clone();
    for _ in 0..iters {
        m = erode_once(&m, radius);
    }
    m
}

/// Shape repair: dilation then erosion with a square kernel.
pub fn morph_repair(
    mask: &BinaryMask,
    dilate_iters: usize,
    erode_iters: usize,
    kernel_size: u32,
) -> BinaryMask {
    erode(&dilate(mask, kernel_size, dilate_iters), kernel_size, erode_iters)
}

/// Parameters of the motion branch (frame differencing).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMaskParams {
    /// Gap between the two frames of each differenced pair.
    pub subtract_interval: usize,
    /// Absolute intensity difference at which a pixel counts as changed.
    pub binarize_thresh: u8,
    /// Upper bound on total changed area per pair, as a fraction of H*W.
    /// Pairs above it are rejected as camera shake or rotation.
    pub change_upper_fraction: f64,
    /// Minimum connected-region area; smaller blobs are noise.
    pub min_region_area: usize,
    /// Absolute cap on accepted total diff area in pixels. Pairs above it
    /// are treated as continuous shaking and dropped.
    pub area_filter: usize,
}

impl Default for MotionMaskParams {
    fn default() -> Self {
        Self {
            subtract_interval: 3,
            binarize_thresh: 15,
            change_upper_fraction: 0.5,
            min_region_area: 30,
            area_filter: 6000,
        }
    }
}

/// What happened to one differenced frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionOutcome {
    Accumulated { changed_area: usize },
    SkippedShake { changed_area: usize },
}

/// Difference `frame_t` against the frame `subtract_interval` earlier,
/// reject shake pairs, drop tiny regions, and accumulate what remains.
pub fn motion_mask_update(
    acc: &mut Accumulator,
    frame_t: &Frame,
    frame_earlier: &Frame,
    params: &MotionMaskParams,
) -> Result<MotionOutcome> {
    if frame_t.width != frame_earlier.width || frame_t.height != frame_earlier.height {
        return Err(Error::DimensionMismatch {
            expected_w: frame_t.width,
            expected_h: frame_t.height,
            got_w: frame_earlier.width,
            got_h: frame_earlier.height,
        });
    }
    debug_assert!(frame_t.is_gray() && frame_earlier.is_gray());

    let (w, h) = (frame_t.width, frame_t.height);
    let mut diff = BinaryMask::new(w, h);
    let mut changed = 0usize;
    for (i, (&a, &b)) in frame_t.data.iter().zip(&frame_earlier.data).enumerate() {
        if a.abs_diff(b) >= params.binarize_thresh {
            diff.data[i] = 1;
            changed += 1;
        }
    }

    let upper = (params.change_upper_fraction * (w as f64) * (h as f64)) as usize;
    if changed > upper.min(params.area_filter) {
        return Ok(MotionOutcome::SkippedShake {
            changed_area: changed,
        });
    }

    let (labels, comps) = connected_components(&diff);
    let keep: Vec<bool> = {
        let mut keep = vec![false; comps.len() + 1];
        for c in &comps {
            if c.area >= params.min_region_area {
                keep[c.label as usize] = true;
            }
        }
        keep
    };
    for (i, &label) in labels.iter().enumerate() {
        if label != 0 && keep[label as usize] {
            acc.bump(i);
        }
    }
    Ok(MotionOutcome::Accumulated {
        changed_area: changed,
    })
}

/// Accumulate tracked box footprints (filled rectangles) into the
/// trajectory branch.
pub fn trajectory_mask_update(acc: &mut Accumulator, footprints: &[BBox]) {
    let (w, h) = (acc.width, acc.height);
    for b in footprints {
        if let Some(r) = PixelRect::from_bbox(b, w, h) {
            for y in r.y0..r.y1 {
                let row = (y * w) as usize;
                for x in r.x0..r.x1 {
                    acc.bump(row + x as usize);
                }
            }
        }
    }
}

/// Morphology settings for the final mask repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MorphParams {
    pub dilate_iters: usize,
    pub erode_iters: usize,
    pub kernel_size: u32,
}

impl Default for MorphParams {
    fn default() -> Self {
        Self {
            dilate_iters: 2,
            erode_iters: 2,
            kernel_size: 5,
        }
    }
}

/// The frozen drivable-region mask plus the per-branch hit counters it
/// was fused from.
#[derive(Debug, Clone)]
pub struct RoadMask {
    pub mask: BinaryMask,
    pub motion_hits: Accumulator,
    pub trajectory_hits: Accumulator,
}

impl RoadMask {
    /// Whole grid set; useful when a caller wants mask filtering off.
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            mask: BinaryMask::from_fn(width, height, |_, _| true),
            motion_hits: Accumulator::new(width, height),
            trajectory_hits: Accumulator::new(width, height),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if x < 0.0 || y < 0.0 {
            return false;
        }
        let (xi, yi) = (x.floor() as u32, y.floor() as u32);
        xi < self.mask.width && yi < self.mask.height && self.mask.get(xi, yi)
    }
}

/// Intersect the two accumulated branches at `min_hits`, then repair the
/// shape with dilation/erosion.
pub fn fuse_masks(
    motion: &Accumulator,
    trajectory: &Accumulator,
    min_hits: u32,
    morph: &MorphParams,
) -> RoadMask {
    let fused = motion.threshold(min_hits).and(&trajectory.threshold(min_hits));
    let mask = morph_repair(&fused, morph.dilate_iters, morph.erode_iters, morph.kernel_size);
    RoadMask {
        mask,
        motion_hits: motion.clone(),
        trajectory_hits: trajectory.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        BinaryMask::from_fn(w, h, |x, y| {
            rows[y as usize].as_bytes()[x as usize] == b'#'
        })
    }

    /// Direct-definition morphology used as an oracle for the separable
    /// implementation.
    fn brute_dilate(mask: &BinaryMask, radius: i64) -> BinaryMask {
        BinaryMask::from_fn(mask.width, mask.height, |x, y| {
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0
                        && ny >= 0
                        && nx < mask.width as i64
                        && ny < mask.height as i64
                        && mask.get(nx as u32, ny as u32)
                    {
                        return true;
                    }
                }
            }
            false
        })
    }

    fn brute_erode(mask: &BinaryMask, radius: i64) -> BinaryMask {
        BinaryMask::from_fn(mask.width, mask.height, |x, y| {
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && nx < mask.width as i64 && ny < mask.height as i64 {
                        if !mask.get(nx as u32, ny as u32) {
                            return false;
                        }
                    }
                    // outside counts as foreground
                }
            }
            true
        })
    }

    #[test]
    fn dilate_single_pixel() {
        let m = mask_from_rows(&[".....", ".....", "..#..", ".....", "....."]);
        let d = dilate(&m, 3, 1);
        let expect = mask_from_rows(&[".....", ".###.", ".###.", ".###.", "....."]);
        assert_eq!(d, expect);
    }

    #[test]
    fn morph_empty_stays_empty() {
        let m = BinaryMask::new(7, 7);
        assert!(morph_repair(&m, 2, 2, 5).is_empty());
    }

    #[test]
    fn closing_bridges_two_bands() {
        // two 3-wide bands separated by a 2-px gap
        let rows = [
            "##########", "##########", "##########", "..........", "..........",
            "##########", "##########", "##########",
        ];
        let m = mask_from_rows(&rows);
        let closed = morph_repair(&m, 1, 1, 3);
        let (_, comps) = connected_components(&closed);
        assert_eq!(comps.len(), 1, "bands should merge into one component");
        // brute-force oracle agrees
        let oracle = brute_erode(&brute_dilate(&m, 1), 1);
        assert_eq!(closed, oracle);
    }

    #[test]
    fn components_basic() {
        let m = mask_from_rows(&["##..#", "##..#", ".....", "#...."]);
        let (_, comps) = connected_components(&m);
        assert_eq!(comps.len(), 3);
        let areas: Vec<usize> = comps.iter().map(|c| c.area).collect();
        assert!(areas.contains(&4) && areas.contains(&2) && areas.contains(&1));
    }

    #[test]
    fn motion_identical_frames_no_change() {
        let f = Frame::gray(0, 10, 10, vec![100; 100]);
        let mut acc = Accumulator::new(10, 10);
        let out = motion_mask_update(&mut acc, &f, &f, &MotionMaskParams::default()).unwrap();
        assert_eq!(out, MotionOutcome::Accumulated { changed_area: 0 });
        assert_eq!(acc.total(), 0);
    }

    #[test]
    fn motion_moved_block_accumulates_both_positions() {
        let (w, h) = (40u32, 40u32);
        let block = |ox: u32| {
            let mut d = vec![50u8; (w * h) as usize];
            for y in 10..20 {
                for x in ox..ox + 10 {
                    d[(y * w + x) as usize] = 200;
                }
            }
            Frame::gray(0, w, h, d)
        };
        let f_prev = block(5);
        let f_cur = block(10); // moved 5 px right
        let mut acc = Accumulator::new(w, h);
        let params = MotionMaskParams {
            min_region_area: 20,
            ..Default::default()
        };
        let out = motion_mask_update(&mut acc, &f_cur, &f_prev, &params).unwrap();
        // old-only columns (5..10) and new-only columns (15..20) changed
        match out {
            MotionOutcome::Accumulated { changed_area } => assert_eq!(changed_area, 100),
            other => panic!("unexpected {other:?}"),
        }
        assert!(acc.get(7, 15) > 0, "vacated area accumulates");
        assert!(acc.get(17, 15) > 0, "newly covered area accumulates");
        assert_eq!(acc.get(12, 15), 0, "overlap did not change");
    }

    #[test]
    fn motion_shake_guard_skips() {
        let (w, h) = (20u32, 20u32);
        let a = Frame::gray(0, w, h, vec![0; 400]);
        let b = Frame::gray(1, w, h, vec![200; 400]); // 100% of pixels changed
        let mut acc = Accumulator::new(w, h);
        let params = MotionMaskParams {
            change_upper_fraction: 0.5,
            area_filter: usize::MAX,
            ..Default::default()
        };
        let out = motion_mask_update(&mut acc, &b, &a, &params).unwrap();
        assert_eq!(out, MotionOutcome::SkippedShake { changed_area: 400 });
        assert_eq!(acc.total(), 0);
    }

    #[test]
    fn motion_area_filter_skips() {
        let (w, h) = (100u32, 100u32);
        let a = Frame::gray(0, w, h, vec![0; 10000]);
        let mut d = vec![0u8; 10000];
        for i in 0..7000 {
            d[i] = 255;
        }
        let b = Frame::gray(1, w, h, d);
        let mut acc = Accumulator::new(w, h);
        let params = MotionMaskParams {
            change_upper_fraction: 1.0,
            area_filter: 6000,
            ..Default::default()
        };
        let out = motion_mask_update(&mut acc, &b, &a, &params).unwrap();
        assert!(matches!(out, MotionOutcome::SkippedShake { .. }));
    }

    #[test]
    fn trajectory_footprints() {
        let mut acc = Accumulator::new(20, 20);
        trajectory_mask_update(&mut acc, &[]);
        assert_eq!(acc.total(), 0);
        let b = BBox::new(2.0, 3.0, 6.0, 5.0).unwrap();
        trajectory_mask_update(&mut acc, &[b]);
        assert_eq!(acc.total(), 8); // 4 x 2 rectangle
        assert_eq!(acc.get(2, 3), 1);
        assert_eq!(acc.get(6, 3), 0); // x2 is exclusive after rasterization
    }

    #[test]
    fn fusion_is_intersection() {
        let mut motion = Accumulator::new(10, 10);
        let mut traj = Accumulator::new(10, 10);
        // motion covers rows 0..6, trajectory covers rows 3..9
        for _ in 0..5 {
            trajectory_mask_update(&mut motion, &[BBox::new(0.0, 0.0, 10.0, 6.0).unwrap()]);
            trajectory_mask_update(&mut traj, &[BBox::new(0.0, 3.0, 10.0, 9.0).unwrap()]);
        }
        let morph = MorphParams {
            dilate_iters: 0,
            erode_iters: 0,
            kernel_size: 3,
        };
        let road = fuse_masks(&motion, &traj, 5, &morph);
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(road.mask.get(x, y), (3..6).contains(&y), "({x},{y})");
            }
        }
        // containment in both branches before morphology
        assert!(road.mask.subset_of(&motion.threshold(5)));
        assert!(road.mask.subset_of(&traj.threshold(5)));
    }

    #[test]
    fn fusion_disjoint_is_empty() {
        let mut motion = Accumulator::new(10, 10);
        let mut traj = Accumulator::new(10, 10);
        for _ in 0..5 {
            trajectory_mask_update(&mut motion, &[BBox::new(0.0, 0.0, 10.0, 3.0).unwrap()]);
            trajectory_mask_update(&mut traj, &[BBox::new(0.0, 7.0, 10.0, 10.0).unwrap()]);
        }
        let road = fuse_masks(&motion, &traj, 5, &MorphParams::default());
        assert!(road.mask.is_empty());
    }

    #[test]
    fn pixel_rect_clamps() {
        let b = BBox::new(-3.0, -2.0, 4.5, 3.2).unwrap();
        let r = PixelRect::from_bbox(&b, 10, 10).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0, 0, 5, 4));
        assert!(PixelRect::from_bbox(&BBox::new(20.0, 20.0, 30.0, 30.0).unwrap(), 10, 10).is_none());
    }

    proptest! {
        #[test]
        fn separable_matches_brute_force(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(13, 11, |_, _| rng.gen_bool(0.4));
            prop_assert_eq!(dilate(&m, 3, 1), brute_dilate(&m, 1));
            prop_assert_eq!(erode(&m, 3, 1), brute_erode(&m, 1));
            prop_assert_eq!(dilate(&m, 5, 1), brute_dilate(&m, 2));
            prop_assert_eq!(erode(&m, 5, 1), brute_erode(&m, 2));
        }

        #[test]
        fn closing_is_extensive(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(16, 12, |_, _| rng.gen_bool(0.3));
            let closed = morph_repair(&m, 1, 1, 3);
            // dilate-then-erode with equal iterations never loses a pixel,
            // so no component of any size disappears
            prop_assert!(m.subset_of(&closed));
        }

        #[test]
        fn motion_accumulator_monotone(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (16u32, 16u32);
            let mut acc = Accumulator::new(w, h);
            let params = MotionMaskParams {
                min_region_area: 1,
                ..Default::default()
            };
            let mut prev_total = 0u64;
            for i in 0..5 {
                let a = Frame::gray(i, w, h, (0..256).map(|_| rng.gen()).collect());
                let b = Frame::gray(i, w, h, (0..256).map(|_| rng.gen()).collect());
                let _ = motion_mask_update(&mut acc, &a, &b, &params).unwrap();
                let total = acc.total();
                prop_assert!(total >= prev_total);
                prev_total = total;
            }
        }
    }
}
