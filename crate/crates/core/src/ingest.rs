//! Loading of frame sequences, detection files and ground truth.
//!
//! A video is an image-sequence directory plus a small key-value manifest,
//! not an encoded stream. That keeps fixtures bit-exact and removes codec
//! dependencies; `ffmpeg -i video.mp4 frames/frame_%06d.png` produces the
//! expected layout from a real recording.
//!
//! Manifests and detection sets are immutable after load and can be shared
//! across threads; frame reads are independent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{BBox, Detection};

/// Grayscale weights for RGB -> luma conversion (ITU-R BT.601).
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFormat {
    Gray,
    Rgb,
}

/// One decoded video frame, 8-bit, grayscale or RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub idx: usize,
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
    /// Row-major; `width * height` bytes for gray, `* 3` for RGB.
    pub data: Vec<u8>,
}

impl Frame {
    pub fn gray(idx: usize, width: u32, height: u32, data: Vec<u8>) -> Frame {
        assert_eq!(data.len(), (width * height) as usize);
        Frame {
            idx,
            width,
            height,
            format: PixelFormat::Gray,
            data,
        }
    }

    pub fn rgb(idx: usize, width: u32, height: u32, data: Vec<u8>) -> Frame {
        assert_eq!(data.len(), (width * height * 3) as usize);
        Frame {
            idx,
            width,
            height,
            format: PixelFormat::Rgb,
            data,
        }
    }

    pub fn is_gray(&self) -> bool {
        self.format == PixelFormat::Gray
    }

    /// Gray intensity at (x, y). Panics if called on an RGB frame.
    #[inline]
    pub fn luma(&self, x: u32, y: u32) -> u8 {
        debug_assert!(self.is_gray());
        self.data[(y * self.width + x) as usize]
    }
}

/// Convert to grayscale with `round(0.299 R + 0.587 G + 0.114 B)`.
/// Already-gray frames pass through unchanged, so the conversion is
/// idempotent.
pub fn to_grayscale(frame: &Frame) -> Frame {
    match frame.format {
        PixelFormat::Gray => frame.clone(),
        PixelFormat::Rgb => {
            let mut data = Vec::with_capacity((frame.width * frame.height) as usize);
            for px in frame.data.chunks_exact(3) {
                let luma =
                    LUMA_R * px[0] as f64 + LUMA_G * px[1] as f64 + LUMA_B * px[2] as f64;
                data.push(luma.round().clamp(0.0, 255.0) as u8);
            }
            Frame::gray(frame.idx, frame.width, frame.height, data)
        }
    }
}

/// Describes one video: where its frames live and how they are shaped.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifest {
    pub video_id: String,
    pub frame_dir: PathBuf,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    /// printf-style pattern with one zero-padded index slot, e.g.
    /// `frame_%06d.png`.
    pub frame_pattern: String,
}

impl VideoManifest {
    pub fn duration_seconds(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    /// Path of frame `idx` (no range check).
    pub fn frame_path(&self, idx: usize) -> PathBuf {
        self.frame_dir.join(expand_pattern(&self.frame_pattern, idx))
    }
}

/// Expand `%0Nd` (or `%d`) in `pattern` with `idx`.
fn expand_pattern(pattern: &str, idx: usize) -> String {
    let mut out = String::with_capacity(pattern.len() + 8);
    let bytes = pattern.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let mut j = i + 1;
            let mut width = 0usize;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                width = width * 10 + (bytes[j] - b'0') as usize;
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'd' {
                let _ = write!(out, "{:0w$}", idx, w = width);
                i = j + 1;
                continue;
            }
        }
        out.push(bytes[i] as char);
        i += 1;
    }
    out
}

fn pattern_has_index_slot(pattern: &str) -> bool {
    expand_pattern(pattern, 0) != expand_pattern(pattern, 1)
}

/// Parse and validate a manifest file. Verifies that every frame file the
/// manifest promises actually exists.
pub fn load_manifest(path: &Path) -> Result<VideoManifest> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let merr = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };

    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| merr(format!("expected `key = value`, got {line:?}")))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }

    let get = |key: &str| -> Result<&String> {
        fields
            .get(key)
            .ok_or_else(|| merr(format!("missing key `{key}`")))
    };
    let parse_num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| merr(format!("key `{key}` is not a number")))
    };

    let video_id = get("video_id")?.clone();
    let fps = parse_num("fps")?;
    let width = parse_num("width")? as u32;
    let height = parse_num("height")? as u32;
    let frame_count = parse_num("frame_count")? as usize;
    let frame_pattern = get("frame_pattern")?.clone();

    if fps <= 0.0 || !fps.is_finite() {
        return Err(merr(format!("fps must be positive, got {fps}")));
    }
    if width == 0 || height == 0 {
        return Err(merr("width and height must be positive".into()));
    }
    if frame_count == 0 {
        return Err(merr("frame_count must be positive".into()));
    }
    if !pattern_has_index_slot(&frame_pattern) {
        return Err(merr(format!(
            "frame_pattern {frame_pattern:?} has no %d index slot"
        )));
    }

    let manifest = VideoManifest {
        video_id,
        frame_dir: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        fps,
        width,
        height,
        frame_count,
        frame_pattern,
    };

    for idx in 0..manifest.frame_count {
        let fp = manifest.frame_path(idx);
        if !fp.exists() {
            return Err(merr(format!("frame {idx} missing: {}", fp.display())));
        }
    }
    Ok(manifest)
}

/// Write a manifest next to its frames.
pub fn write_manifest(path: &Path, m: &VideoManifest) -> Result<()> {
    let body = format!(
        "video_id = {}\nfps = {}\nwidth = {}\nheight = {}\nframe_count = {}\nframe_pattern = {}\n",
        m.video_id, m.fps, m.width, m.height, m.frame_count, m.frame_pattern
    );
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read and decode one frame. Reads are pure so repeated calls yield
/// bit-identical buffers.
pub fn read_frame(manifest: &VideoManifest, idx: usize) -> Result<Frame> {
    if idx >= manifest.frame_count {
        return Err(Error::FrameOutOfRange {
            idx,
            frame_count: manifest.frame_count,
        });
    }
    let path = manifest.frame_path(idx);
    let frame = load_frame_file(&path, idx)?;
    if frame.width != manifest.width || frame.height != manifest.height {
        return Err(Error::DimensionMismatch {
            expected_w: manifest.width,
            expected_h: manifest.height,
            got_w: frame.width,
            got_h: frame.height,
        });
    }
    Ok(frame)
}

/// Decode a single image file (PNG or binary PGM/PPM) as a frame.
pub fn load_frame_file(path: &Path, idx: usize) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // Raw PGM/PPM has a tiny header; decode it directly, it is the hot path.
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(&bytes, idx).ok_or_else(|| Error::Decode {
            path: path.to_path_buf(),
            reason: "malformed PNM header".into(),
        });
    }
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width(), g.height());
            Frame::gray(idx, w, h, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width(), rgb.height());
            Frame::rgb(idx, w, h, rgb.into_raw())
        }
    })
}

fn decode_pnm(bytes: &[u8], idx: usize) -> Option<Frame> {
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        _ => return None,
    };
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos]).ok()?.parse().ok()?;
    }
    if fields[2] != 255 {
        return None;
    }
    pos += 1; // single whitespace after maxval
    let (w, h) = (fields[0], fields[1]);
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return None;
    }
    let data = bytes[pos..pos + need].to_vec();
    Some(if channels == 1 {
        Frame::gray(idx, w as u32, h as u32, data)
    } else {
        Frame::rgb(idx, w as u32, h as u32, data)
    })
}

/// Write a frame as binary PGM/PPM (by content) or PNG (by `.png` extension).
pub fn save_frame(path: &Path, frame: &Frame) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.extension().is_some_and(|e| e == "png") {
        let res = match frame.format {
            PixelFormat::Gray => image::save_buffer(
                path,
                &frame.data,
                frame.width,
                frame.height,
                image::ColorType::L8,
            ),
            PixelFormat::Rgb => image::save_buffer(
                path,
                &frame.data,
                frame.width,
                frame.height,
                image::ColorType::Rgb8,
            ),
        };
        return res.map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        });
    }
    let magic = match frame.format {
        PixelFormat::Gray => "P5",
        PixelFormat::Rgb => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    fs::write(path, out).map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionSource {
    /// Detector ran on the raw camera frames.
    Original,
    /// Detector ran on the background-model image stream.
    Background,
}

/// Per-frame detection lists for one video.
#[derive(Debug, Clone)]
pub struct DetectionSet {
    pub source: DetectionSource,
    by_frame: BTreeMap<usize, Vec<Detection>>,
}

impl DetectionSet {
    pub fn new(source: DetectionSource) -> Self {
        Self {
            source,
            by_frame: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, det: Detection) {
        self.by_frame.entry(det.frame_idx).or_default().push(det);
    }

    pub fn at_frame(&self, idx: usize) -> &[Detection] {
        self.by_frame.get(&idx).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Frame indices that carry at least one detection, ascending.
    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_frame.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.by_frame.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_frame.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_frame.is_empty()
    }

    pub fn max_frame_idx(&self) -> Option<usize> {
        self.by_frame.keys().next_back().copied()
    }

    /// Check the set against a manifest's frame count.
    pub fn validate_frame_count(&self, frame_count: usize) -> Result<()> {
        match self.max_frame_idx() {
            Some(max) if max >= frame_count => Err(Error::FrameOutOfRange {
                idx: max,
                frame_count,
            }),
            _ => Ok(()),
        }
    }
}

/// Load a detection file: one record per line,
/// `frame_idx  x1  y1  x2  y2  score` (tab-separated, score in [0, 1]).
pub fn load_detections(path: &Path, source: DetectionSource) -> Result<DetectionSet> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut set = DetectionSet::new(source);
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(perr(format!("expected 6 fields, got {}", fields.len())));
        }
        let frame_idx: usize = fields[0]
            .parse()
            .map_err(|_| perr(format!("bad frame index {:?}", fields[0])))?;
        let mut nums = [0.0f64; 5];
        for (i, f) in fields[1..].iter().enumerate() {
            nums[i] = f
                .parse()
                .map_err(|_| perr(format!("bad number {f:?}")))?;
        }
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| perr(e.to_string()))?;
        let det = Detection::new(frame_idx, bbox, nums[4]).map_err(|e| perr(e.to_string()))?;
        set.push(det);
    }
    Ok(set)
}

/// Write a detection set in the same format `load_detections` reads.
pub fn write_detections(path: &Path, set: &DetectionSet) -> Result<()> {
    let mut out = String::new();
    for det in set.iter() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            det.frame_idx, det.bbox.x1, det.bbox.y1, det.bbox.x2, det.bbox.y2, det.score
        );
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Random access to a video's frames, independent of how they are stored.
/// Implementations must be cheap to call repeatedly and deterministic.
pub trait FrameSource: Sync {
    fn fps(&self) -> f64;
    fn frame_count(&self) -> usize;
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    /// Fetch frame `idx` as stored (callers that need grayscale convert).
    fn get(&self, idx: usize) -> Result<Frame>;
}

/// Frame source backed by a manifest directory.
pub struct ManifestSource {
    manifest: VideoManifest,
}

impl ManifestSource {
    pub fn new(manifest: VideoManifest) -> Self {
        Self { manifest }
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }
}

impl FrameSource for ManifestSource {
    fn fps(&self) -> f64 {
        self.manifest.fps
    }
    fn frame_count(&self) -> usize {
        self.manifest.frame_count
    }
    fn width(&self) -> u32 {
        self.manifest.width
    }
    fn height(&self) -> u32 {
        self.manifest.height
    }
    fn get(&self, idx: usize) -> Result<Frame> {
        read_frame(&self.manifest, idx)
    }
}

/// In-memory frame source, used by tests and the scenario generator.
pub struct MemorySource {
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl FrameSource for MemorySource {
    fn fps(&self) -> f64 {
        self.fps
    }
    fn frame_count(&self) -> usize {
        self.frames.len()
    }
    fn width(&self) -> u32 {
        self.frames.first().map(|f| f.width).unwrap_or(0)
    }
    fn height(&self) -> u32 {
        self.frames.first().map(|f| f.height).unwrap_or(0)
    }
    fn get(&self, idx: usize) -> Result<Frame> {
        self.frames
            .get(idx)
            .cloned()
            .ok_or(Error::FrameOutOfRange {
                idx,
                frame_count: self.frames.len(),
            })
    }
}

/// Ground truth: lines of `video_id start_time_seconds`.
pub fn load_ground_truth(path: &Path) -> Result<Vec<(String, f64)>> {
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
        let mut it = line.split_whitespace();
        let id = it
            .next()
            .ok_or_else(|| perr("missing video id".into()))?
            .to_string();
        let t: f64 = it
            .next()
            .ok_or_else(|| perr("missing start time".into()))?
            .parse()
            .map_err(|_| perr("bad start time".into()))?;
        if t < 0.0 {
            return Err(perr(format!("negative start time {t}")));
        }
        out.push((id, t));
    }
    Ok(out)
}

pub fn write_ground_truth(path: &Path, truth: &[(String, f64)]) -> Result<()> {
    let mut out = String::new();
    for (id, t) in truth {
        let _ = writeln!(out, "{id} {t}");
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
