//! Scene recording container and CSV exports.
//!
//! A scene is a directory:
//!
//! ```text
//! scene.json          manifest
//! frames/000000.ppm   binary PPM (P6, 8-bit, no comments), one per frame
//! meta.jsonl          {"frame":i,"t":s,"camera":{"pos":[x,y,z],"quat":[w,x,y,z]}}
//! points.jsonl        optional {"frame":i,"points":{"name":[x,y,z]}}
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraState, Intrinsics, ReferencePlane, World3};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("frame count mismatch: {0}")]
    FrameCountMismatch(String),
    #[error("unsupported scene version {0}")]
    UnsupportedVersion(u32),
    #[error("frame index {index} out of range (scene has {len} frames)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corrupt frame {index}: {reason}")]
    CorruptFrame { index: usize, reason: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SceneError {
    pub fn code(&self) -> &'static str {
        match self {
            SceneError::MalformedManifest(_) => "MalformedManifest",
            SceneError::FrameCountMismatch(_) => "FrameCountMismatch",
            SceneError::UnsupportedVersion(_) => "UnsupportedVersion",
            SceneError::IndexOutOfRange { .. } => "IndexOutOfRange",
            SceneError::CorruptFrame { .. } => "CorruptFrame",
            SceneError::IoFailure { .. } => "IoFailure",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::IoFailure { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub fps: f64,
    pub resolution: [u32; 2],
    pub intrinsics: Intrinsics,
    pub plane: ReferencePlane,
    pub frame_count: usize,
}

impl Manifest {
    pub fn width(&self) -> u32 {
        self.resolution[0]
    }

    pub fn height(&self) -> u32 {
        self.resolution[1]
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.version != SCENE_VERSION {
            return Err(SceneError::UnsupportedVersion(self.version));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(SceneError::MalformedManifest(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(SceneError::MalformedManifest("resolution must be nonzero".into()));
        }
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(SceneError::MalformedManifest("focal lengths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    pos: [f64; 3],
    quat: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaLine {
    frame: usize,
    t: f64,
    camera: PoseRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointsLine {
    frame: usize,
    points: BTreeMap<String, [f64; 3]>,
}

/// Named world points for one frame (e.g. body joints from an external tracker).
pub type ExternalPoints = BTreeMap<String, World3>;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub index: usize,
    pub t: f64,
    pub camera: CameraState,
}

/// A loaded scene. Pixel data stays on disk until [`SceneRecording::decode_frame`].
#[derive(Debug, Clone)]
pub struct SceneRecording {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub frames: Vec<FrameMeta>,
    pub external_points: Option<Vec<ExternalPoints>>,
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub t: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
    pub camera: CameraState,
}

impl Frame {
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

pub fn frame_path(root: &Path, index: usize) -> PathBuf {
    root.join("frames").join(format!("{index:06}.ppm"))
}

impl SceneRecording {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.manifest.fps
    }

    /// Length of the recording in seconds (`frames / fps`).
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.manifest.fps
    }

    pub fn plane(&self) -> &ReferencePlane {
        &self.manifest.plane
    }

    pub fn points_at(&self, index: usize) -> Option<&ExternalPoints> {
        self.external_points.as_ref().and_then(|p| p.get(index))
    }

    pub fn decode_frame(&self, index: usize) -> Result<Frame, SceneError> {
        let meta = self
            .frames
            .get(index)
            .ok_or(SceneError::IndexOutOfRange { index, len: self.frames.len() })?;
        let path = frame_path(&self.root, index);
        let mut bytes = Vec::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(&path))?;
        let (w, h, pixels) = decode_ppm(&bytes)
            .map_err(|reason| SceneError::CorruptFrame { index, reason })?;
        if (w, h) != (self.manifest.width(), self.manifest.height()) {
            return Err(SceneError::CorruptFrame {
                index,
                reason: format!("frame is {w}x{h}, manifest says {:?}", self.manifest.resolution),
            });
        }
        Ok(Frame { index, t: meta.t, width: w, height: h, pixels, camera: meta.camera })
    }
}

pub fn encode_ppm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decode a binary P6 image with maxval 255 and no comments.
pub fn decode_ppm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), String> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| "non-ascii header")?);
    }
    if fields[0] != "P6" {
        return Err(format!("bad magic {:?}", fields[0]));
    }
    let num = |s: &str| s.parse::<u32>().map_err(|_| format!("bad header field {s:?}"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() {
        return Err("missing raster".into());
    }
    let data = &bytes[i + 1..];
    let want = w as usize * h as usize * 3;
    if data.len() != want {
        return Err(format!("raster has {} bytes, expected {want}", data.len()));
    }
    Ok((w, h, data.to_vec()))
}

fn read_lines(path: &Path) -> Result<Vec<String>, SceneError> {
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(io_err(path)))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect()
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneRecording, SceneError> {
    let root = path.as_ref().to_path_buf();
    let manifest_path = root.join("scene.json");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    // check the version before the rest of the schema
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != u64::from(SCENE_VERSION) {
            return Err(SceneError::UnsupportedVersion(v as u32));
        }
    }
    let manifest: Manifest = serde_json::from_value(raw)
        .map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    manifest.validate()?;

    let mut frames = Vec::with_capacity(manifest.frame_count);
    for (n, line) in read_lines(&root.join("meta.jsonl"))?.iter().enumerate() {
        let meta: MetaLine = serde_json::from_str(line)
            .map_err(|e| SceneError::MalformedManifest(format!("meta.jsonl line {}: {e}", n + 1)))?;
        if meta.frame != n {
            return Err(SceneError::MalformedManifest(format!(
                "meta.jsonl line {} describes frame {}",
                n + 1,
                meta.frame
            )));
        }
        if let Some(prev) = frames.last().map(|f: &FrameMeta| f.t) {
            if !(meta.t > prev) {
                return Err(SceneError::MalformedManifest(format!(
                    "timestamps not strictly increasing at frame {n}"
                )));
            }
        }
        let p = meta.camera.pos;
        let camera = CameraState::from_parts(
            World3::new(p[0], p[1], p[2]),
            meta.camera.quat,
            manifest.intrinsics,
            manifest.width(),
            manifest.height(),
        )
        .map_err(|e| SceneError::MalformedManifest(format!("frame {n}: {e}")))?;
        frames.push(FrameMeta { index: n, t: meta.t, camera });
    }
    if frames.len() != manifest.frame_count {
        return Err(SceneError::FrameCountMismatch(format!(
            "manifest declares {} frames, meta.jsonl has {}",
            manifest.frame_count,
            frames.len()
        )));
    }
    let frames_dir = root.join("frames");
    let on_disk = match fs::read_dir(&frames_dir) {
        Ok(rd) => rd
            .filter_map(Result::ok)
            .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
            .count(),
        Err(_) => 0,
    };
    if on_disk != manifest.frame_count {
        return Err(SceneError::FrameCountMismatch(format!(
            "manifest declares {} frames, frames/ holds {on_disk}",
            manifest.frame_count
        )));
    }
    for i in 0..manifest.frame_count {
        if !frame_path(&root, i).is_file() {
            return Err(SceneError::FrameCountMismatch(format!("missing frame file {i:06}.ppm")));
        }
    }

    let points_path = root.join("points.jsonl");
    let external_points = if points_path.exists() {
        let mut per_frame = vec![ExternalPoints::new(); manifest.frame_count];
        for (n, line) in read_lines(&points_path)?.iter().enumerate() {
            let rec: PointsLine = serde_json::from_str(line).map_err(|e| {
                SceneError::MalformedManifest(format!("points.jsonl line {}: {e}", n + 1))
            })?;
            let slot = per_frame.get_mut(rec.frame).ok_or_else(|| {
                SceneError::MalformedManifest(format!("points.jsonl references frame {}", rec.frame))
            })?;
            *slot = rec
                .points
                .into_iter()
                .map(|(k, p)| (k, World3::new(p[0], p[1], p[2])))
                .collect();
        }
        Some(per_frame)
    } else {
        None
    };

    Ok(SceneRecording { root, manifest, frames, external_points })
}

/// Streaming writer for the scene container.
pub struct SceneWriter {
    root: PathBuf,
    manifest: Manifest,
    meta: BufWriter<File>,
    points: Option<BufWriter<File>>,
    count: usize,
    last_t: Option<f64>,
}

impl SceneWriter {
    pub fn create(
        root: impl AsRef<Path>,
        fps: f64,
        resolution: [u32; 2],
        intrinsics: Intrinsics,
        plane: ReferencePlane,
    ) -> Result<Self, SceneError> {
        let root = root.as_ref().to_path_buf();
        let frames = root.join("frames");
        fs::create_dir_all(&frames).map_err(io_err(&frames))?;
        let meta_path = root.join("meta.jsonl");
        let meta = BufWriter::new(File::create(&meta_path).map_err(io_err(&meta_path))?);
        let manifest = Manifest {
            version: SCENE_VERSION,
            fps,
            resolution,
            intrinsics,
            plane,
            frame_count: 0,
        };
        manifest.validate()?;
        Ok(SceneWriter { root, manifest, meta, points: None, count: 0, last_t: None })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_frame(
        &mut self,
        t: f64,
        camera: &CameraState,
        pixels: &[u8],
        points: Option<&ExternalPoints>,
    ) -> Result<usize, SceneError> {
        let index = self.count;
        let [w, h] = self.manifest.resolution;
        if pixels.len() != w as usize * h as usize * 3 {
            return Err(SceneError::CorruptFrame {
                index,
                reason: format!("buffer has {} bytes", pixels.len()),
            });
        }
        if self.last_t.is_some_and(|prev| !(t > prev)) {
            return Err(SceneError::MalformedManifest(format!(
                "timestamps not strictly increasing at frame {index}"
            )));
        }
        let path = frame_path(&self.root, index);
        fs::write(&path, encode_ppm(w, h, pixels)).map_err(io_err(&path))?;
        let q = camera.orientation.quaternion();
        let line = MetaLine {
            frame: index,
            t,
            camera: PoseRecord {
                pos: [camera.position.x, camera.position.y, camera.position.z],
                quat: [q.w, q.i, q.j, q.k],
            },
        };
        let meta_path = self.root.join("meta.jsonl");
        writeln!(self.meta, "{}", serde_json::to_string(&line).expect("meta serializes"))
            .map_err(io_err(&meta_path))?;
        if let Some(points) = points {
            if self.points.is_none() {
                let p = self.root.join("points.jsonl");
                self.points = Some(BufWriter::new(File::create(&p).map_err(io_err(&p))?));
            }
            let rec = PointsLine {
                frame: index,
                points: points.iter().map(|(k, v)| (k.clone(), [v.x, v.y, v.z])).collect(),
            };
            let p = self.root.join("points.jsonl");
            let w = self.points.as_mut().expect("opened above");
            writeln!(w, "{}", serde_json::to_string(&rec).expect("points serialize"))
                .map_err(io_err(&p))?;
        }
        self.count += 1;
        self.last_t = Some(t);
        Ok(index)
    }

    pub fn finish(mut self) -> Result<PathBuf, SceneError> {
        let meta_path = self.root.join("meta.jsonl");
        self.meta.flush().map_err(io_err(&meta_path))?;
        if let Some(p) = self.points.as_mut() {
            let path = self.root.join("points.jsonl");
            p.flush().map_err(io_err(&path))?;
        }
        self.manifest.frame_count = self.count;
        let path = self.root.join("scene.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(self.root)
    }
}

/// Fixed six-decimal rendering used by every CSV export.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-tick variable values, columns in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableLog {
    columns: Vec<String>,
    rows: Vec<(f64, Vec<Option<f64>>)>,
}

impl VariableLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Append one sample. `values` is iterated in registration order; names
    /// not seen before become new columns.
    pub fn push<'a>(&mut self, t: f64, values: impl IntoIterator<Item = (&'a str, f64)>) {
        if let Some((last, _)) = self.rows.last() {
            debug_assert!(t >= *last, "variable log time went backwards");
        }
        let mut row = vec![None; self.columns.len()];
        for (name, v) in values {
            let idx = match self.columns.iter().position(|c| c == name) {
                Some(i) => i,
                None => {
                    self.columns.push(name.to_string());
                    row.push(None);
                    self.columns.len() - 1
                }
            };
            row[idx] = Some(v);
        }
        self.rows.push((t, row));
    }

    pub fn series(&self, name: &str) -> Vec<(f64, f64)> {
        let Some(idx) = self.columns.iter().position(|c| c == name) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|(t, row)| row.get(idx).copied().flatten().map(|v| (*t, v)))
            .collect()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, Vec<(&str, f64)>)> + '_ {
        self.rows.iter().map(|(t, row)| {
            let vals = row
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (self.columns[i].as_str(), v)))
                .collect();
            (*t, vals)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (t, row) in &self.rows {
            out.push_str(&fmt_num(*t));
            for i in 0..self.columns.len() {
                out.push(',');
                if let Some(Some(v)) = row.get(i) {
                    out.push_str(&fmt_num(*v));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn export_csv(log: &VariableLog, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    fs::write(path, log.to_csv()).map_err(io_err(path))
}
