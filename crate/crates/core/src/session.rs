//! Command/event protocol around the engine and timeline control for
//! recorded scenes.
//!
//! Messages are JSON objects tagged by `"type"`. Commands may carry an `"id"`
//! that is echoed in the matching `ack`. Unknown fields are ignored.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{Engine, EngineError, FrameInput, StateDiff};
use crate::geometry::{CameraState, ReferencePlane, Screen2};
use crate::scene::{ExternalPoints, Frame, SceneError, SceneRecording};
use crate::sketch::{self, Stroke, StrokePoint};
use crate::viz::PlaneRect;

pub const PROTOCOL_VERSION: u32 = 1;

/// Strokes may overshoot the image by this fraction of its smaller side.
pub const STROKE_MARGIN_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Select,
    Sketch,
    Annotation,
    Graph,
    Record,
    Play,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Command {
    Hello { protocol_version: u32 },
    Tap { u: f64, v: f64 },
    /// Points are `[u, v, t]`.
    Stroke { points: Vec<[f64; 3]> },
    LabelEdit { target: String, text: String },
    Mode { mode: Mode },
    /// Screen rectangle `[u0, v0, u1, v1]`, unprojected onto the plane.
    PlaceGraph { rect: [f64; 4] },
    Scrub { t: f64 },
    Play,
    Pause,
}

/// A command with its optional client-chosen id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    #[serde(flatten)]
    pub command: Command,
}

impl From<Command> for Envelope {
    fn from(command: Command) -> Self {
        Envelope { id: None, command }
    }
}

/// One line of a headless script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    #[serde(rename = "atFrame")]
    pub at_frame: usize,
    #[serde(flatten)]
    pub envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Event {
    State {
        diff: StateDiff,
    },
    Fault {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subject_id: Option<String>,
    },
    Ack {
        #[serde(default)]
        command_id: Option<Value>,
    },
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("protocol version {got} is not supported (expected {expected})")]
    ProtocolVersionMismatch { expected: u32, got: u32 },
    #[error("session not established: send hello first")]
    NotEstablished,
    #[error("{0}")]
    BadMode(String),
    #[error("{what} is out of range")]
    OutOfRange { what: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::ProtocolVersionMismatch { .. } => "ProtocolVersionMismatch",
            SessionError::NotEstablished => "NotEstablished",
            SessionError::BadMode(_) => "BadMode",
            SessionError::OutOfRange { .. } => "OutOfRange",
            SessionError::Engine(e) => e.code(),
            SessionError::Scene(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone)]
struct Current {
    index: usize,
    t: f64,
    camera: CameraState,
    pixels: Option<Frame>,
    points: Option<ExternalPoints>,
}

/// Frames come from a recorded scene or are pushed one by one.
#[derive(Debug)]
enum Source {
    Recorded(SceneRecording),
    Live,
}

/// One client session: engine, timeline position, mode and event log.
#[derive(Debug)]
pub struct Session {
    engine: Engine,
    source: Source,
    current: Option<Current>,
    mode: Mode,
    established: bool,
    playing: bool,
    log: Vec<Event>,
}

impl Session {
    /// Session over a recorded scene, positioned on frame 0 (not yet ticked).
    pub fn recorded(scene: SceneRecording) -> Result<Self, SessionError> {
        let engine = Engine::new(*scene.plane());
        let mut s = Session {
            engine,
            source: Source::Recorded(scene),
            current: None,
            mode: Mode::default(),
            established: false,
            playing: false,
            log: Vec::new(),
        };
        if s.frame_count() > 0 {
            s.load_frame(0)?;
        }
        Ok(s)
    }

    /// Session fed by [`Session::push_frame`].
    pub fn live(plane: ReferencePlane) -> Self {
        Session {
            engine: Engine::new(plane),
            source: Source::Live,
            current: None,
            mode: Mode::default(),
            established: false,
            playing: false,
            log: Vec::new(),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_playing(&self) -> bool {
        self.playing
    }

    pub fn is_established(&self) -> bool {
        self.established
    }

    pub fn frame_index(&self) -> Option<usize> {
        self.current.as_ref().map(|c| c.index)
    }

    pub fn scene(&self) -> Option<&SceneRecording> {
        match &self.source {
            Source::Recorded(s) => Some(s),
            Source::Live => None,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.scene().map_or(0, SceneRecording::len)
    }

    /// Every event emitted so far, in order.
    pub fn event_log(&self) -> &[Event] {
        &self.log
    }

    fn emit(&mut self, e: Event, out: &mut Vec<Event>) {
        self.log.push(e.clone());
        out.push(e);
    }

    /// Make frame `k` of the recorded scene current without ticking.
    pub fn load_frame(&mut self, k: usize) -> Result<(), SessionError> {
        let Source::Recorded(scene) = &self.source else {
            return Err(SessionError::BadMode("no recorded scene loaded".into()));
        };
        let meta = scene.frames.get(k).ok_or(SceneError::IndexOutOfRange { index: k, len: scene.len() })?;
        let pixels = if self.engine.needs_pixels(k) { Some(scene.decode_frame(k)?) } else { None };
        self.current = Some(Current {
            index: k,
            t: meta.t,
            camera: meta.camera,
            pixels,
            points: scene.points_at(k).cloned(),
        });
        Ok(())
    }

    /// Decode the current frame's pixels if they are not loaded yet.
    fn ensure_pixels(&mut self) -> Result<(), SessionError> {
        let Some(cur) = self.current.as_mut() else {
            return Err(SessionError::BadMode("no frame available yet".into()));
        };
        if cur.pixels.is_none() {
            match &self.source {
                Source::Recorded(scene) => cur.pixels = Some(scene.decode_frame(cur.index)?),
                Source::Live => return Err(SessionError::BadMode("live frame has no pixels".into())),
            }
        }
        Ok(())
    }

    fn advance(&mut self, sample: bool) -> Result<(), SessionError> {
        let needs = self.current.as_ref().is_some_and(|c| self.engine.needs_pixels(c.index));
        if needs {
            self.ensure_pixels()?;
        }
        let Some(cur) = &self.current else { return Ok(()) };
        let input = FrameInput {
            index: cur.index,
            t: cur.t,
            camera: &cur.camera,
            frame: cur.pixels.as_ref(),
            points: cur.points.as_ref(),
        };
        self.engine.advance(&input, sample);
        Ok(())
    }

    fn publish(&mut self, out: &mut Vec<Event>) {
        let diff = self.engine.take_diff();
        if !diff.is_empty() {
            self.emit(Event::State { diff }, out);
        }
    }

    /// Tick the current frame (sampling plots and recordings) and emit the diff.
    pub fn tick(&mut self) -> Result<Vec<Event>, SessionError> {
        let mut out = Vec::new();
        self.advance(true)?;
        self.publish(&mut out);
        Ok(out)
    }

    /// Load and tick frame `k`.
    pub fn step_to(&mut self, k: usize) -> Result<Vec<Event>, SessionError> {
        self.load_frame(k)?;
        self.tick()
    }

    /// Feed a live frame and tick it.
    pub fn push_frame(&mut self, frame: Frame, points: Option<ExternalPoints>) -> Result<Vec<Event>, SessionError> {
        if !matches!(self.source, Source::Live) {
            return Err(SessionError::BadMode("frames come from the recorded scene".into()));
        }
        self.current = Some(Current { index: frame.index, t: frame.t, camera: frame.camera, pixels: Some(frame), points });
        self.tick()
    }

    /// Apply one command. Success yields an ack followed by any state change;
    /// failure yields a single fault and leaves the state untouched.
    pub fn handle(&mut self, env: Envelope) -> Vec<Event> {
        let mut out = Vec::new();
        let subject = subject_of(&env.command);
        match self.apply(&env.command) {
            Ok(()) => {
                self.emit(Event::Ack { command_id: env.id }, &mut out);
                if let Err(e) = self.advance(false) {
                    let fault = Event::Fault { code: e.code().into(), message: e.to_string(), subject_id: None };
                    self.emit(fault, &mut out);
                }
                self.publish(&mut out);
            }
            Err(e) => {
                let fault = Event::Fault { code: e.code().into(), message: e.to_string(), subject_id: subject };
                self.emit(fault, &mut out);
            }
        }
        out
    }

    fn camera(&self) -> Result<CameraState, SessionError> {
        self.current
            .as_ref()
            .map(|c| c.camera)
            .ok_or_else(|| SessionError::BadMode("no frame available yet".into()))
    }

    fn check_point(&self, u: f64, v: f64, margin: f64) -> Result<(), SessionError> {
        let cam = self.camera()?;
        let (w, h) = (f64::from(cam.width), f64::from(cam.height));
        if u.is_finite() && v.is_finite() && u >= -margin && v >= -margin && u <= w + margin && v <= h + margin {
            Ok(())
        } else {
            Err(SessionError::OutOfRange { what: format!("point ({u}, {v})") })
        }
    }

    fn apply(&mut self, cmd: &Command) -> Result<(), SessionError> {
        if let Command::Hello { protocol_version } = cmd {
            if *protocol_version != PROTOCOL_VERSION {
                return Err(SessionError::ProtocolVersionMismatch { expected: PROTOCOL_VERSION, got: *protocol_version });
            }
            self.established = true;
            return Ok(());
        }
        if !self.established {
            return Err(SessionError::NotEstablished);
        }
        match cmd {
            Command::Hello { .. } => unreachable!("handled above"),
            Command::Mode { mode } => {
                self.mode = *mode;
                Ok(())
            }
            Command::Tap { u, v } => self.tap(Screen2::new(*u, *v)),
            Command::Stroke { points } => {
                let annotation = match self.mode {
                    Mode::Sketch => false,
                    Mode::Annotation => true,
                    m => return Err(SessionError::BadMode(format!("strokes need sketch or annotation mode, not {m:?}"))),
                };
                let cam = self.camera()?;
                let margin = STROKE_MARGIN_FRACTION * f64::from(cam.width.min(cam.height));
                for p in points {
                    self.check_point(p[0], p[1], margin)?;
                }
                let stroke = Stroke { points: points.iter().map(|p| StrokePoint { u: p[0], v: p[1], t: p[2] }).collect() };
                self.engine.add_stroke(&stroke, &cam, annotation)?;
                Ok(())
            }
            Command::LabelEdit { target, text } => {
                self.engine.label(target, text)?;
                Ok(())
            }
            Command::PlaceGraph { rect } => {
                if self.mode != Mode::Graph {
                    return Err(SessionError::BadMode(format!("placing a graph needs graph mode, not {:?}", self.mode)));
                }
                let cam = self.camera()?;
                let margin = STROKE_MARGIN_FRACTION * f64::from(cam.width.min(cam.height));
                self.check_point(rect[0], rect[1], margin)?;
                self.check_point(rect[2], rect[3], margin)?;
                let plane = *self.engine.plane();
                let p = cam.ray_cast_to_plane(&plane, Screen2::new(rect[0], rect[1])).map_err(EngineError::from)?;
                let q = cam.ray_cast_to_plane(&plane, Screen2::new(rect[2], rect[3])).map_err(EngineError::from)?;
                self.engine
                    .place_graph(PlaneRect::from_corners(plane.plane_coords(&p), plane.plane_coords(&q)));
                Ok(())
            }
            Command::Scrub { t } => self.scrub(*t),
            Command::Play | Command::Pause => {
                if self.scene().is_none() {
                    return Err(SessionError::BadMode("play and pause need a recorded scene".into()));
                }
                self.playing = matches!(cmd, Command::Play);
                Ok(())
            }
        }
    }

    fn tap(&mut self, tap: Screen2) -> Result<(), SessionError> {
        self.check_point(tap.u, tap.v, 0.0)?;
        let cam = self.camera()?;
        match self.mode {
            Mode::Select => {
                let snap = sketch::snap_radius(&cam);
                let cur = self.current.as_ref().expect("camera implies a frame");
                let near = cur.points.as_ref().and_then(|pts| {
                    pts.iter()
                        .filter_map(|(name, p)| {
                            let d = cam.project_to_screen(&self.engine.plane().project(p)).ok()?.distance(&tap);
                            (d <= snap).then_some((d, name.clone()))
                        })
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .map(|(_, n)| n)
                });
                if let Some(name) = near {
                    let (points, t) = (cur.points.clone(), cur.t);
                    self.engine.track_external(&name, &cam, points.as_ref(), t)?;
                } else {
                    self.ensure_pixels()?;
                    let frame = self.current.as_ref().and_then(|c| c.pixels.as_ref()).expect("pixels ensured");
                    self.engine.track_color(frame, tap)?;
                }
                Ok(())
            }
            Mode::Record | Mode::Play => {
                let id = self
                    .engine
                    .entity_near(&cam, tap)
                    .map(str::to_string)
                    .ok_or_else(|| EngineError::UnknownEntity(format!("no tracked object near ({}, {})", tap.u, tap.v)))?;
                if self.mode == Mode::Record {
                    self.engine.toggle_recording(&id)?;
                } else {
                    self.engine.toggle_strobes(&id)?;
                }
                Ok(())
            }
            m => Err(SessionError::BadMode(format!("taps are not used in {m:?} mode"))),
        }
    }

    /// Replay frames 0..=frame(t) with the current sketch.
    pub fn scrub(&mut self, t: f64) -> Result<(), SessionError> {
        let Some(scene) = self.scene() else {
            return Err(SessionError::BadMode("scrubbing needs a recorded scene".into()));
        };
        let duration = scene.duration();
        if !(0.0..=duration).contains(&t) {
            return Err(SessionError::OutOfRange { what: format!("t = {t} (duration {duration})") });
        }
        let n = scene.len();
        let k = ((t * scene.fps()).floor() as usize).min(n.saturating_sub(1));
        self.engine.reset_dynamic();
        for i in 0..=k {
            self.load_frame(i)?;
            self.advance(true)?;
        }
        Ok(())
    }

    /// Advance playback by one frame; returns false at the end of the scene.
    pub fn play_step(&mut self) -> Result<(bool, Vec<Event>), SessionError> {
        let next = self.frame_index().map_or(0, |k| k + 1);
        if next >= self.frame_count() {
            self.playing = false;
            return Ok((false, Vec::new()));
        }
        Ok((true, self.step_to(next)?))
    }
}

fn subject_of(cmd: &Command) -> Option<String> {
    match cmd {
        Command::LabelEdit { target, .. } => Some(target.clone()),
        _ => None,
    }
}

/// Parse a JSONL script. Blank lines and lines starting with `#` are skipped.
pub fn parse_script(text: &str) -> Result<Vec<ScriptLine>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: ScriptLine = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
        out.push(parsed);
    }
    Ok(out)
}
