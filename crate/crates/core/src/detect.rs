//! Threshold-and-components box detector.
//!
//! Stands in for an external object detector when none is configured:
//! the synthetic scenes render vehicles brighter than the road, so a
//! plain intensity threshold followed by connected components recovers
//! tight boxes. Real footage should supply detector output files instead.

use crate::ingest::Frame;
use crate::mask::{connected_components, BinaryMask};
use crate::types::Detection;

#[derive(Debug, Clone, PartialEq)]
pub struct RectDetectorParams {
    /// Minimum intensity for a pixel to count as object.
    pub intensity_thresh: u8,
    /// Components smaller than this are discarded as noise.
    pub min_area: usize,
    /// Score attached to every emitted detection.
    pub score: f64,
}

impl Default for RectDetectorParams {
    fn default() -> Self {
        Self {
            intensity_thresh: 140,
            min_area: 40,
            score: 0.9,
        }
    }
}

/// Detect bright rectangular blobs in a grayscale frame.
pub fn detect_bright_rects(frame: &Frame, params: &RectDetectorParams) -> Vec<Detection> {
    debug_assert!(frame.is_gray());
    let data = frame
        .data
        .iter()
        .map(|&v| (v >= params.intensity_thresh) as u8)
        .collect();
    let mask = BinaryMask::from_raw(frame.width, frame.height, data);
    let (_, comps) = connected_components(&mask);
    let mut out: Vec<Detection> = comps
        .iter()
        .filter(|c| c.area >= params.min_area)
        .map(|c| Detection {
            frame_idx: frame.idx,
            bbox: c.rect.to_bbox(),
            score: params.score,
        })
        .collect();
    // deterministic order: scan order already holds, but make it explicit
    out.sort_by(|a, b| {
        (a.bbox.y1, a.bbox.x1)
            .partial_cmp(&(b.bbox.y1, b.bbox.x1))
            .unwrap()
    });
    out
}
