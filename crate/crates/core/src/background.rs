//! Per-pixel Gaussian-mixture background subtraction (MOG2-style, with
//! the adaptive update scheme of Zivkovic).
//!
//! Each pixel carries up to `max_components` Gaussians over intensity.
//! Components that keep matching the incoming stream gain weight; a vehicle
//! that stops on the road is therefore absorbed into the background image
//! after a lag. That lag (the appearance delay) is what ROI backtracking
//! later removes from reported start times.
//!
//! One model instance per video; updates must arrive in frame order. The
//! per-pixel update is data-parallel across rows.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::mask::BinaryMask;

/// Compile-time cap on mixture size; `max_components` must stay below it.
pub const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundParams {
    /// Maximum Gaussians per pixel.
    pub max_components: usize,
    /// Learning history in frames; the learning rate is `1 / history`.
    pub history: u32,
    /// Squared Mahalanobis distance below which a sample matches a component.
    pub match_threshold: f64,
    /// Cumulative weight of the components considered background.
    pub background_ratio: f64,
    pub var_init: f64,
    pub var_min: f64,
    pub var_max: f64,
    /// Emit a background image every this many frames.
    pub sample_interval: usize,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            max_components: 5,
            history: 120,
            match_threshold: 16.0,
            background_ratio: 0.9,
            var_init: 15.0 * 15.0,
            var_min: 4.0,
            var_max: 5.0 * 15.0 * 15.0,
            sample_interval: 120,
        }
    }
}

impl BackgroundParams {
    pub fn alpha(&self) -> f64 {
        1.0 / self.history as f64
    }

    fn validate(&self) {
        assert!(self.max_components >= 1 && self.max_components <= MAX_COMPONENTS);
        assert!(self.history >= 1);
        assert!(self.match_threshold > 0.0);
        assert!(self.background_ratio > 0.0 && self.background_ratio <= 1.0);
        assert!(self.var_min > 0.0 && self.var_min <= self.var_init);
        assert!(self.var_max >= self.var_init);
        assert!(self.sample_interval >= 1);
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Gaussian {
    weight: f64,
    mean: f64,
    var: f64,
}

/// Mixture state of a single pixel.
#[derive(Debug, Clone, Copy)]
pub struct GmmPixel {
    count: u8,
    comps: [Gaussian; MAX_COMPONENTS],
}

impl GmmPixel {
    fn empty() -> Self {
        Self {
            count: 0,
            comps: [Gaussian::default(); MAX_COMPONENTS],
        }
    }

    pub fn component_count(&self) -> usize {
        self.count as usize
    }

    pub fn weight_sum(&self) -> f64 {
        self.comps[..self.count as usize]
            .iter()
            .map(|c| c.weight)
            .sum()
    }

    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.comps[..self.count as usize].iter().map(|c| c.var)
    }

    /// Mean of the heaviest component: the background estimate.
    fn background_mean(&self) -> f64 {
        self.comps[..self.count as usize]
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .map(|c| c.mean)
            .unwrap_or(0.0)
    }

    /// Returns true when the sample is foreground.
    fn update(&mut self, x: f64, p: &BackgroundParams, alpha: f64) -> bool {
        let n = self.count as usize;

        // rank active components by weight / sigma, heaviest first
        let mut order = [0usize; MAX_COMPONENTS];
        for (i, slot) in order.iter_mut().enumerate().take(n) {
            *slot = i;
        }
        let key = |c: &Gaussian| c.weight / c.var.sqrt();
        order[..n].sort_unstable_by(|&a, &b| key(&self.comps[b]).total_cmp(&key(&self.comps[a])));

        // first ranked component the sample is close to
        let mut matched: Option<usize> = None;
        let mut cum_before = 0.0f64;
        let mut is_background = false;
        for &i in &order[..n] {
            let c = &self.comps[i];
            let d = x - c.mean;
            if matched.is_none() && (d * d) < p.match_threshold * c.var {
                matched = Some(i);
                is_background = cum_before <= p.background_ratio;
            }
            cum_before += c.weight;
        }

        match matched {
            Some(i) => {
                let delta = x - self.comps[i].mean;
                for (j, c) in self.comps[..n].iter_mut().enumerate() {
                    if j == i {
                        c.weight += alpha * (1.0 - c.weight);
                        let rate = alpha / c.weight;
                        c.mean += rate * delta;
                        c.var = (c.var + rate * (delta * delta - c.var))
                            .clamp(p.var_min, p.var_max);
                    } else {
                        c.weight -= alpha * c.weight;
                    }
                }
            }
            None => {
                for c in self.comps[..n].iter_mut() {
                    c.weight -= alpha * c.weight;
                }
                let fresh = Gaussian {
                    weight: alpha,
                    mean: x,
                    var: p.var_init,
                };
                if n < p.max_components {
                    self.comps[n] = fresh;
                    self.count += 1;
                } else {
                    // replace the weakest
                    let weakest = (0..n)
                        .min_by(|&a, &b| {
                            self.comps[a].weight.total_cmp(&self.comps[b].weight)
                        })
                        .unwrap();
                    self.comps[weakest] = fresh;
                }
            }
        }

        // renormalize to a proper distribution
        let sum: f64 = self.comps[..self.count as usize]
            .iter()
            .map(|c| c.weight)
            .sum();
        if sum > 0.0 {
            for c in self.comps[..self.count as usize].iter_mut() {
                c.weight /= sum;
            }
        }

        !is_background
    }
}

/// Whole-frame mixture state.
pub struct GmmGrid {
    pub width: u32,
    pub height: u32,
    pub params: BackgroundParams,
    pixels: Vec<GmmPixel>,
    updates: usize,
}

impl GmmGrid {
    pub fn new(width: u32, height: u32, params: BackgroundParams) -> Self {
        params.validate();
        Self {
            width,
            height,
            params,
            pixels: vec![GmmPixel::empty(); (width * height) as usize],
            updates: 0,
        }
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn pixel(&self, x: u32, y: u32) -> &GmmPixel {
        &self.pixels[(y * self.width + x) as usize]
    }

    /// Feed the next frame; returns the foreground mask (1 = foreground).
    pub fn update(&mut self, frame: &Frame) -> Result<BinaryMask> {
        if frame.width != self.width || frame.height != self.height {
            return Err(Error::DimensionMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: frame.width,
                got_h: frame.height,
            });
        }
        debug_assert!(frame.is_gray());
        let w = self.width as usize;
        let params = self.params.clone();
        let alpha = params.alpha();
        let mut mask = vec![0u8; w * self.height as usize];

        mask.par_chunks_mut(w)
            .zip(self.pixels.par_chunks_mut(w))
            .zip(frame.data.par_chunks(w))
            .for_each(|((mask_row, model_row), frame_row)| {
                for ((m, px), &v) in mask_row.iter_mut().zip(model_row).zip(frame_row) {
                    *m = px.update(v as f64, &params, alpha) as u8;
                }
            });

        self.updates += 1;
        Ok(BinaryMask::from_raw(self.width, self.height, mask))
    }

    /// Current background estimate: per pixel, the mean of the heaviest
    /// component, rounded to 8 bits.
    pub fn background_image(&self, idx: usize) -> Result<Frame> {
        if self.updates == 0 {
            return Err(Error::UninitializedModel);
        }
        let data = self
            .pixels
            .iter()
            .map(|px| px.background_mean().round().clamp(0.0, 255.0) as u8)
            .collect();
        Ok(Frame::gray(idx, self.width, self.height, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_frame(idx: usize, w: u32, h: u32, v: u8) -> Frame {
        Frame::gray(idx, w, h, vec![v; (w * h) as usize])
    }

    fn frame_with_square(idx: usize, w: u32, h: u32, bg: u8, fg: u8, rect: (u32, u32, u32, u32)) -> Frame {
        let mut data = vec![bg; (w * h) as usize];
        let (x0, y0, x1, y1) = rect;
        for y in y0..y1 {
            for x in x0..x1 {
                data[(y * w + x) as usize] = fg;
            }
        }
        Frame::gray(idx, w, h, data)
    }

    #[test]
    fn stationary_scene_is_background() {
        let mut grid = GmmGrid::new(16, 12, BackgroundParams::default());
        let mut last = BinaryMask::new(16, 12);
        for i in 0..300 {
            last = grid.update(&constant_frame(i, 16, 12, 100)).unwrap();
        }
        assert!(last.is_empty(), "constant scene must settle to background");
    }

    #[test]
    fn sudden_square_is_foreground() {
        let (w, h) = (40, 40);
        let mut grid = GmmGrid::new(w, h, BackgroundParams::default());
        for i in 0..200 {
            grid.update(&constant_frame(i, w, h, 80)).unwrap();
        }
        let mask = grid
            .update(&frame_with_square(200, w, h, 80, 220, (10, 10, 30, 30)))
            .unwrap();
        for y in 0..h {
            for x in 0..w {
                let inside = (10..30).contains(&x) && (10..30).contains(&y);
                assert_eq!(mask.get(x, y), inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn background_image_constant_scene() {
        let mut grid = GmmGrid::new(8, 8, BackgroundParams::default());
        for i in 0..50 {
            grid.update(&constant_frame(i, 8, 8, 128)).unwrap();
        }
        let bg = grid.background_image(0).unwrap();
        assert!(bg.data.iter().all(|&v| v == 128));
    }

    #[test]
    fn background_image_requires_update() {
        let grid = GmmGrid::new(8, 8, BackgroundParams::default());
        assert!(grid.background_image(0).is_err());
    }

    #[test]
    fn parked_from_start_is_in_background() {
        let (w, h) = (30, 20);
        let mut grid = GmmGrid::new(w, h, BackgroundParams::default());
        for i in 0..150 {
            grid.update(&frame_with_square(i, w, h, 60, 200, (5, 5, 15, 15)))
                .unwrap();
        }
        let bg = grid.background_image(0).unwrap();
        assert_eq!(bg.luma(10, 10), 200);
        assert_eq!(bg.luma(25, 10), 60);
    }

    #[test]
    fn late_arrival_appears_with_delay() {
        let (w, h) = (30u32, 20u32);
        let params = BackgroundParams::default();
        let interval = params.sample_interval;
        let mut grid = GmmGrid::new(w, h, params);
        let arrive = 600usize;
        let mut appeared_at: Option<usize> = None;
        for i in 0..3000 {
            let frame = if i < arrive {
                constant_frame(i, w, h, 60)
            } else {
                frame_with_square(i, w, h, 60, 200, (8, 4, 20, 14))
            };
            grid.update(&frame).unwrap();
            if (i + 1) % interval == 0 && appeared_at.is_none() {
                let bg = grid.background_image(i).unwrap();
                if bg.luma(14, 9) > 150 {
                    appeared_at = Some(i);
                }
            }
        }
        let appeared = appeared_at.expect("static object must eventually absorb");
        let delay = appeared - arrive;
        assert!(delay > 0, "appearance must lag the true arrival");
        assert!(
            delay < 10 * interval,
            "appearance delay {delay} too large"
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut grid = GmmGrid::new(8, 8, BackgroundParams::default());
        assert!(grid.update(&constant_frame(0, 9, 8, 0)).is_err());
    }

    proptest! {
        #[test]
        fn weights_normalized_and_variance_clamped(seed in any::<u64>(), frames in 2usize..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (6u32, 5u32);
            let params = BackgroundParams::default();
            let mut grid = GmmGrid::new(w, h, params.clone());
            for i in 0..frames {
                let data: Vec<u8> = (0..(w * h)).map(|_| rng.gen()).collect();
                grid.update(&Frame::gray(i, w, h, data)).unwrap();
                for y in 0..h {
                    for x in 0..w {
                        let px = grid.pixel(x, y);
                        prop_assert!((px.weight_sum() - 1.0).abs() < 1e-9);
                        for v in px.variances() {
                            prop_assert!(v >= params.var_min - 1e-6);
                            prop_assert!(v <= params.var_max + 1e-6);
                        }
                        prop_assert!(px.component_count() <= params.max_components);
                    }
                }
            }
        }
    }
}
