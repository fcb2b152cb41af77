//! Shared geometric and temporal primitives used by every stage.
//!
//! All types here are plain immutable values; the operations are pure
//! functions, so they are safe to copy between worker threads.

use crate::error::{Error, Result};

/// Axis-aligned bounding box in pixel coordinates, origin top-left.
///
/// Coordinates are continuous; rasterization only happens where pixels
/// are actually read (patch extraction, mask lookup).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Build a box, enforcing `x1 <= x2`, `y1 <= y2` and finite coordinates.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidBBox {
                x1,
                y1,
                x2,
                y2,
                reason: "non-finite coordinate",
            });
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBBox {
                x1,
                y1,
                x2,
                y2,
                reason: "corners out of order",
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Center point; always lies inside the box (inclusive).
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Intersection-over-union. Zero-area pairs return 0 so that degenerate
    /// detections never match anything.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Smallest box containing both.
    pub fn union_rect(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Translate by (dx, dy).
    pub fn shifted(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

/// One detector output box on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame_idx: usize,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(frame_idx: usize, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            frame_idx,
            bbox,
            score,
        })
    }
}

/// A point in video time. Derived exactly from `frame_idx / fps`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TimeStamp {
    pub seconds: f64,
}

impl TimeStamp {
    pub fn from_seconds(seconds: f64) -> Self {
        Self { seconds }
    }

    pub fn from_frame(frame_idx: usize, fps: f64) -> Self {
        Self {
            seconds: frame_idx as f64 / fps,
        }
    }

    pub fn to_frame(&self, fps: f64) -> usize {
        (self.seconds * fps).round().max(0.0) as usize
    }
}

/// Which stage of the pipeline produced (or last refined) an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    PixelLevel,
    BoxLevel,
    Fused,
    FlowRefined,
    TrajectoryRefined,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::PixelLevel => "pixel",
            Branch::BoxLevel => "box",
            Branch::Fused => "fused",
            Branch::FlowRefined => "flow-refined",
            Branch::TrajectoryRefined => "trajectory-refined",
        }
    }

    pub fn parse(s: &str) -> Option<Branch> {
        match s {
            "pixel" => Some(Branch::PixelLevel),
            "box" => Some(Branch::BoxLevel),
            "fused" => Some(Branch::Fused),
            "flow-refined" => Some(Branch::FlowRefined),
            "trajectory-refined" => Some(Branch::TrajectoryRefined),
            _ => None,
        }
    }
}

/// A detected traffic anomaly: where, when, how confident, and which
/// branch of the pipeline is responsible for the current start time.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEvent {
    pub video_id: String,
    pub start_time: TimeStamp,
    pub bbox: BBox,
    pub confidence: f64,
    pub branch: Branch,
}

impl AnomalyEvent {
    pub fn new(
        video_id: impl Into<String>,
        start_time: TimeStamp,
        bbox: BBox,
        confidence: f64,
        branch: Branch,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidScore(confidence));
        }
        if start_time.seconds < 0.0 {
            return Err(Error::InvalidBBox {
                x1: start_time.seconds,
                y1: 0.0,
                x2: 0.0,
                y2: 0.0,
                reason: "negative start time",
            });
        }
        Ok(Self {
            video_id: video_id.into(),
            start_time,
            bbox,
            confidence,
            branch,
        })
    }
}

/// Population standard deviation of box centers over a track window,
/// per axis. The window is treated as a full census of the segment,
/// so the divisor is `n`, not `n - 1`.
pub fn center_stability(window: &[BBox]) -> Result<(f64, f64)> {
    if window.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: window.len(),
        });
    }
    let n = window.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for b in window {
        let (cx, cy) = b.center();
        sx += cx;
        sy += cy;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut vx, mut vy) = (0.0, 0.0);
    for b in window {
        let (cx, cy) = b.center();
        vx += (cx - mx) * (cx - mx);
        vy += (cy - my) * (cy - my);
    }
    Ok(((vx / n).sqrt(), (vy / n).sqrt()))
}
