//! Synthetic scene generator: solid-color markers moving along analytic
//! trajectories on the reference plane, rendered through a slowly swaying
//! camera. Each scene gets a `truth.csv` and a demo `script.jsonl`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{CameraState, Intrinsics, Plane2, ReferencePlane, Screen2, World3};
use crate::scene::{fmt_num, SceneError, SceneWriter};
use crate::session::{Command, Envelope, Mode, ScriptLine, PROTOCOL_VERSION};

pub const GRAVITY: f64 = 9.81;
pub const CAMERA_HEIGHT: f64 = 1.5;

pub const RED: [u8; 3] = [220, 40, 40];
pub const GREEN: [u8; 3] = [40, 170, 60];
pub const BLUE: [u8; 3] = [50, 80, 210];
const BACKGROUND: [u8; 3] = [205, 205, 200];
const DARK: [u8; 3] = [70, 70, 70];
const PALE: [u8; 3] = [185, 190, 205];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::BadParams(_) => "BadParams",
            SynthError::Scene(e) => e.code(),
            SynthError::Io { .. } => "IoFailure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Pendulum,
    Projectile,
    Cycloid,
    Slider,
    RotatingPoint,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::Pendulum,
        SceneKind::Projectile,
        SceneKind::Cycloid,
        SceneKind::Slider,
        SceneKind::RotatingPoint,
    ];
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Pendulum => "pendulum",
            SceneKind::Projectile => "projectile",
            SceneKind::Cycloid => "cycloid",
            SceneKind::Slider => "slider",
            SceneKind::RotatingPoint => "rotating-point",
        })
    }
}

impl FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown scene kind `{s}` (pendulum, projectile, cycloid, slider, rotating-point)"))
    }
}

/// Generator parameters. Kind-specific fields are ignored by other kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub fps: f64,
    pub duration: f64,
    pub width: u32,
    pub height: u32,
    /// Camera sway amplitude in meters.
    pub sway: f64,
    /// Per-channel pixel noise amplitude.
    pub noise: u8,
    pub seed: u64,
    /// Pendulum amplitude, degrees.
    pub theta0: f64,
    /// Pendulum period, rotating-point period, slider period; seconds.
    pub period: f64,
    /// Cycloid wheel radius or rotating-point radius, meters.
    pub radius: f64,
    /// Cycloid rolling distance, meters.
    pub distance: f64,
    /// Rotating-point start phase, degrees.
    pub phase: f64,
}

impl SynthParams {
    /// Defaults for `kind`.
    pub fn for_kind(kind: SceneKind) -> Self {
        let base = SynthParams {
            fps: 20.0,
            duration: 10.0,
            width: 640,
            height: 480,
            sway: 0.01,
            noise: 3,
            seed: 7,
            theta0: 30.0,
            period: 1.5,
            radius: 0.1,
            distance: 1.0,
            phase: 60.0,
        };
        match kind {
            SceneKind::RotatingPoint => SynthParams { radius: 0.2, period: 4.0, ..base },
            SceneKind::Slider => SynthParams { period: 5.0, ..base },
            _ => base,
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self, kind: SceneKind) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadParams(m));
        if !(self.fps.is_finite() && self.fps > 0.0 && self.fps <= 1000.0) {
            return bad(format!("fps must be in (0, 1000], got {}", self.fps));
        }
        if !(self.duration.is_finite() && self.duration > 0.0 && self.duration <= 600.0) {
            return bad(format!("duration must be in (0, 600] s, got {}", self.duration));
        }
        if self.frame_count() == 0 {
            return bad("duration * fps rounds to zero frames".into());
        }
        if !(32..=4096).contains(&self.width) || !(32..=4096).contains(&self.height) {
            return bad(format!("resolution must be within 32..=4096, got {}x{}", self.width, self.height));
        }
        if !(self.sway.is_finite() && (0.0..=0.1).contains(&self.sway)) {
            return bad(format!("sway must be in [0, 0.1] m, got {}", self.sway));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return bad(format!("period must be positive, got {}", self.period));
        }
        match kind {
            SceneKind::Pendulum if !(self.theta0 > 0.0 && self.theta0 <= 80.0) => {
                bad(format!("theta0 must be in (0, 80] degrees, got {}", self.theta0))
            }
            SceneKind::Pendulum if pendulum_length(self.period) > 0.75 => {
                bad(format!("period {} s gives a pendulum longer than the view", self.period))
            }
            SceneKind::Cycloid if !(self.radius > 0.0 && self.radius <= 0.25) => {
                bad(format!("radius must be in (0, 0.25] m, got {}", self.radius))
            }
            SceneKind::Cycloid if !(self.distance > 0.0 && self.distance <= 1.2) => {
                bad(format!("distance must be in (0, 1.2] m, got {}", self.distance))
            }
            SceneKind::RotatingPoint if !(self.radius > 0.0 && self.radius <= 0.4) => {
                bad(format!("radius must be in (0, 0.4] m, got {}", self.radius))
            }
            SceneKind::RotatingPoint if !self.phase.is_finite() => bad("phase must be finite".into()),
            _ => Ok(()),
        }
    }

    fn intrinsics(&self) -> Intrinsics {
        // keep about 400 px per meter at the default height whatever the width
        let f = 600.0 * f64::from(self.width) / 640.0;
        Intrinsics { fx: f, fy: f, cx: f64::from(self.width) / 2.0, cy: f64::from(self.height) / 2.0 }
    }

    /// Camera for time `t`: looking straight down -z from 1.5 m, +y up in
    /// the image, translated by a slow Lissajous sway.
    pub fn camera_at(&self, t: f64) -> CameraState {
        let tau = std::f64::consts::TAU;
        let dx = self.sway * (tau * t / 3.7).sin();
        let dy = 0.6 * self.sway * (tau * t / 5.3 + 1.0).sin();
        let eye = World3::new(dx, dy, CAMERA_HEIGHT);
        CameraState::look_at(eye, eye - World3::z(), World3::y(), self.intrinsics(), self.width, self.height)
            .expect("generator camera is valid")
    }
}

pub fn pendulum_length(period: f64) -> f64 {
    GRAVITY * period * period / (4.0 * std::f64::consts::PI * std::f64::consts::PI)
}

const PENDULUM_PIVOT: (f64, f64) = (0.0, 0.3);
const CYCLOID_START: (f64, f64) = (-0.5, -0.2);
const PROJECTILE_GROUND: f64 = -0.3;
const PROJECTILE_APEX: f64 = 0.45;
const SLIDER_Y: f64 = -0.15;
const SLIDER_ANCHOR_X: f64 = -0.4;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disc { c: Plane2, r: f64, rgb: [u8; 3] },
    Capsule { a: Plane2, b: Plane2, r: f64, rgb: [u8; 3] },
}

impl Shape {
    fn bounds(&self) -> (Plane2, Plane2) {
        match *self {
            Shape::Disc { c, r, .. } => (Plane2::new(c.a - r, c.b - r), Plane2::new(c.a + r, c.b + r)),
            Shape::Capsule { a, b, r, .. } => (
                Plane2::new(a.a.min(b.a) - r, a.b.min(b.b) - r),
                Plane2::new(a.a.max(b.a) + r, a.b.max(b.b) + r),
            ),
        }
    }

    fn contains(&self, p: Plane2) -> bool {
        match *self {
            Shape::Disc { c, r, .. } => (p.a - c.a).hypot(p.b - c.b) <= r,
            Shape::Capsule { a, b, r, .. } => {
                let (dx, dy) = (b.a - a.a, b.b - a.b);
                let len2 = dx * dx + dy * dy;
                let t = if len2 == 0.0 { 0.0 } else { (((p.a - a.a) * dx + (p.b - a.b) * dy) / len2).clamp(0.0, 1.0) };
                (p.a - a.a - t * dx).hypot(p.b - a.b - t * dy) <= r
            }
        }
    }

    fn rgb(&self) -> [u8; 3] {
        match *self {
            Shape::Disc { rgb, .. } | Shape::Capsule { rgb, .. } => rgb,
        }
    }
}

fn p2(x: f64, y: f64) -> Plane2 {
    Plane2::new(x, y)
}

/// Analytic state of a scene at time `t`: shapes to draw and truth columns.
struct Sample {
    shapes: Vec<Shape>,
    truth: Vec<f64>,
}

fn truth_header(kind: SceneKind) -> &'static str {
    match kind {
        SceneKind::Pendulum => "t,theta,angle,x,y,z",
        SceneKind::Projectile => "t,x,y,z",
        SceneKind::Cycloid => "t,phi,x,y,z",
        SceneKind::Slider => "t,x,y,z,length",
        SceneKind::RotatingPoint => "t,phi,x,y,z,height",
    }
}

fn sample(kind: SceneKind, p: &SynthParams, t: f64) -> Sample {
    let tau = std::f64::consts::TAU;
    match kind {
        SceneKind::Pendulum => {
            let len = pendulum_length(p.period);
            let theta = p.theta0 * (tau * t / p.period).cos();
            let (s, c) = theta.to_radians().sin_cos();
            let (px, py) = PENDULUM_PIVOT;
            let bob = p2(px + len * s, py - len * c);
            Sample {
                shapes: vec![
                    Shape::Capsule { a: p2(px, py), b: bob, r: 0.003, rgb: DARK },
                    Shape::Disc { c: p2(px, py), r: 0.01, rgb: DARK },
                    Shape::Disc { c: bob, r: 0.03, rgb: RED },
                ],
                truth: vec![theta, theta.abs(), bob.a, bob.b, 0.0],
            }
        }
        SceneKind::Projectile => {
            let fall = (2.0 * PROJECTILE_APEX / GRAVITY).sqrt();
            let tau_b = (t + fall).rem_euclid(2.0 * fall) - fall;
            let y = PROJECTILE_GROUND + PROJECTILE_APEX - 0.5 * GRAVITY * tau_b * tau_b;
            let x = -0.6 + 1.2 * t / p.duration;
            let r = 0.025;
            Sample {
                shapes: vec![
                    Shape::Capsule { a: p2(-0.75, PROJECTILE_GROUND - r), b: p2(0.75, PROJECTILE_GROUND - r), r: 0.004, rgb: DARK },
                    Shape::Disc { c: p2(x, y), r, rgb: GREEN },
                ],
                truth: vec![x, y, 0.0],
            }
        }
        SceneKind::Cycloid => {
            let (x0, y0) = CYCLOID_START;
            let r = p.radius;
            let phi = (p.distance / r) * t / p.duration;
            let center = p2(x0 + r * phi, y0 + r);
            let rim = p2(x0 + r * (phi - phi.sin()), y0 + r * (1.0 - phi.cos()));
            Sample {
                shapes: vec![
                    Shape::Capsule { a: p2(-0.75, y0 - 0.006), b: p2(0.75, y0 - 0.006), r: 0.004, rgb: DARK },
                    Shape::Disc { c: center, r, rgb: PALE },
                    Shape::Disc { c: center, r: 0.012, rgb: BLUE },
                    Shape::Disc { c: rim, r: 0.015, rgb: RED },
                ],
                truth: vec![phi, rim.a, rim.b, 0.0],
            }
        }
        SceneKind::Slider => {
            let x = -0.1 + 0.3 * (tau * t / p.period).sin();
            Sample {
                shapes: vec![
                    Shape::Capsule { a: p2(-0.55, SLIDER_Y), b: p2(0.55, SLIDER_Y), r: 0.004, rgb: DARK },
                    Shape::Disc { c: p2(SLIDER_ANCHOR_X, SLIDER_Y), r: 0.02, rgb: BLUE },
                    Shape::Disc { c: p2(x, SLIDER_Y), r: 0.025, rgb: RED },
                ],
                truth: vec![x, SLIDER_Y, 0.0, x - SLIDER_ANCHOR_X],
            }
        }
        SceneKind::RotatingPoint => {
            let phi = p.phase + 360.0 * t / p.period;
            let (s, c) = phi.to_radians().sin_cos();
            let pt = p2(p.radius * c, p.radius * s);
            Sample {
                shapes: vec![
                    Shape::Capsule { a: p2(0.0, 0.0), b: pt, r: 0.003, rgb: DARK },
                    Shape::Disc { c: p2(0.0, 0.0), r: 0.01, rgb: DARK },
                    Shape::Disc { c: pt, r: 0.02, rgb: RED },
                ],
                truth: vec![phi, pt.a, pt.b, 0.0, pt.b],
            }
        }
    }
}

/// Rasterize `shapes` by casting each pixel center onto the plane.
fn render(camera: &CameraState, plane: &ReferencePlane, shapes: &[Shape], noise: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut px: Vec<u8> = BACKGROUND.iter().copied().cycle().take(w * h * 3).collect();
    for shape in shapes {
        let (lo, hi) = shape.bounds();
        let corners = [p2(lo.a, lo.b), p2(lo.a, hi.b), p2(hi.a, lo.b), p2(hi.a, hi.b)];
        let screen: Vec<Screen2> = corners
            .iter()
            .filter_map(|c| camera.project_to_screen(&plane.world_of(*c)).ok())
            .collect();
        if screen.len() < 4 {
            continue;
        }
        let u0 = screen.iter().map(|s| s.u).fold(f64::INFINITY, f64::min).floor() - 1.0;
        let u1 = screen.iter().map(|s| s.u).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
        let v0 = screen.iter().map(|s| s.v).fold(f64::INFINITY, f64::min).floor() - 1.0;
        let v1 = screen.iter().map(|s| s.v).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
        let (x0, x1) = (u0.max(0.0) as usize, (u1.max(0.0) as usize).min(w));
        let (y0, y1) = (v0.max(0.0) as usize, (v1.max(0.0) as usize).min(h));
        for y in y0..y1 {
            for x in x0..x1 {
                let center = Screen2::new(x as f64 + 0.5, y as f64 + 0.5);
                let Ok(world) = camera.ray_cast_to_plane(plane, center) else { continue };
                if shape.contains(plane.plane_coords(&world)) {
                    let i = (y * w + x) * 3;
                    px[i..i + 3].copy_from_slice(&shape.rgb());
                }
            }
        }
    }
    if noise > 0 {
        let span = u64::from(noise) * 2 + 1;
        let mut bits = 0u64;
        let mut left = 0;
        for v in px.iter_mut() {
            if left == 0 {
                bits = rng.next_u64();
                left = 8;
            }
            let n = ((bits & 0xff) % span) as i16 - i16::from(noise);
            bits >>= 8;
            left -= 1;
            *v = (i16::from(*v) + n).clamp(0, 255) as u8;
        }
    }
    px
}

/// What [`generate_scene`] wrote.
#[derive(Debug, Clone)]
pub struct GenSummary {
    pub root: PathBuf,
    pub kind: SceneKind,
    pub frames: usize,
}

/// Render a scene container plus `truth.csv` and a demo `script.jsonl` into `out`.
pub fn generate_scene(kind: SceneKind, params: &SynthParams, out: impl AsRef<Path>) -> Result<GenSummary, SynthError> {
    params.validate(kind)?;
    let out = out.as_ref();
    let plane = ReferencePlane::xy();
    let mut writer = SceneWriter::create(out, params.fps, [params.width, params.height], params.intrinsics(), plane)?;
    let n = params.frame_count();
    let mut truth = format!("{}\n", truth_header(kind));
    for k in 0..n {
        let t = k as f64 / params.fps;
        let camera = params.camera_at(t);
        let s = sample(kind, params, t);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ k as u64);
        let pixels = render(&camera, &plane, &s.shapes, params.noise, &mut rng);
        writer.write_frame(t, &camera, &pixels, None)?;
        truth.push_str(&fmt_num(t));
        for v in s.truth {
            truth.push(',');
            truth.push_str(&fmt_num(v));
        }
        truth.push('\n');
    }
    let root = writer.finish()?;
    write(&root.join("truth.csv"), truth)?;
    let mut script = String::new();
    for line in demo_script(kind, params) {
        script.push_str(&serde_json::to_string(&line).expect("script line serializes"));
        script.push('\n');
    }
    write(&root.join("script.jsonl"), script)?;
    Ok(GenSummary { root, kind, frames: n })
}

fn write(path: &Path, text: String) -> Result<(), SynthError> {
    fs::write(path, text).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
}

/// Builds frame-0 commands with world points projected through the frame-0 camera.
struct ScriptBuilder {
    camera: CameraState,
    lines: Vec<ScriptLine>,
}

impl ScriptBuilder {
    fn new(params: &SynthParams) -> Self {
        let mut b = ScriptBuilder { camera: params.camera_at(0.0), lines: Vec::new() };
        b.push(Command::Hello { protocol_version: PROTOCOL_VERSION });
        b
    }

    fn push(&mut self, command: Command) {
        self.lines.push(ScriptLine { at_frame: 0, envelope: Envelope { id: None, command } });
    }

    fn screen(&self, x: f64, y: f64) -> Screen2 {
        self.camera.project_to_screen(&World3::new(x, y, 0.0)).expect("point in front of camera")
    }

    fn mode(&mut self, mode: Mode) {
        self.push(Command::Mode { mode });
    }

    fn tap(&mut self, x: f64, y: f64) {
        let s = self.screen(x, y);
        self.push(Command::Tap { u: round3(s.u), v: round3(s.v) });
    }

    /// A straight stroke sampled at five points.
    fn stroke(&mut self, from: (f64, f64), to: (f64, f64)) {
        let points = (0..5)
            .map(|i| {
                let f = f64::from(i) / 4.0;
                let s = self.screen(from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1));
                [round3(s.u), round3(s.v), f64::from(i) * 0.02]
            })
            .collect();
        self.push(Command::Stroke { points });
    }

    fn label(&mut self, target: &str, text: &str) {
        self.push(Command::LabelEdit { target: target.into(), text: text.into() });
    }

    fn graph(&mut self, rect: [f64; 4]) {
        self.mode(Mode::Graph);
        self.push(Command::PlaceGraph { rect });
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn polar(origin: (f64, f64), len: f64, deg_from_down: f64) -> (f64, f64) {
    let (s, c) = deg_from_down.to_radians().sin_cos();
    (origin.0 + len * s, origin.1 - len * c)
}

/// Demo command script for a generated scene. Entity ids follow creation
/// order: every tracked object, line, arc, area and graph takes the next number.
pub fn demo_script(kind: SceneKind, params: &SynthParams) -> Vec<ScriptLine> {
    let mut b = ScriptBuilder::new(params);
    let s0 = sample(kind, params, 0.0);
    let truth = &s0.truth;
    match kind {
        SceneKind::Pendulum => {
            let pivot = PENDULUM_PIVOT;
            let bob = (truth[2], truth[3]);
            let theta = truth[0];
            b.mode(Mode::Select);
            b.tap(bob.0, bob.1); // track1
            b.mode(Mode::Sketch);
            b.stroke(pivot, (pivot.0, pivot.1 - 0.6)); // line2: vertical reference
            b.stroke(pivot, bob); // line3: pivot to bob
            b.stroke(polar(pivot, 0.3, 0.0), polar(pivot, 0.3, theta)); // arc4
            b.label("arc4", "angle");
            b.stroke(pivot, polar(pivot, 0.4, theta / 2.0)); // line5
            b.stroke(polar(pivot, 0.25, 0.0), polar(pivot, 0.25, theta / 2.0)); // arc6
            b.label("arc6", "angle / 2");
            b.graph([20.0, 20.0, 220.0, 120.0]); // graph7
            b.label("graph7.y", "angle");
            b.mode(Mode::Record);
            b.tap(bob.0, bob.1);
        }
        SceneKind::Cycloid => {
            let rim = (truth[1], truth[2]);
            let hub = (CYCLOID_START.0, CYCLOID_START.1 + params.radius);
            b.mode(Mode::Select);
            b.tap(rim.0, rim.1); // track1
            b.tap(hub.0, hub.1); // track2
            b.mode(Mode::Sketch);
            b.stroke(hub, rim); // line3: spoke
            b.label("line3", "spoke");
            b.mode(Mode::Record);
            b.tap(rim.0, rim.1);
            b.mode(Mode::Play);
            b.tap(rim.0, rim.1);
        }
        SceneKind::Projectile => {
            let ball = (truth[0], truth[1]);
            b.mode(Mode::Select);
            b.tap(ball.0, ball.1); // track1
            b.mode(Mode::Sketch);
            b.stroke((-0.7, PROJECTILE_GROUND), (0.7, PROJECTILE_GROUND)); // line2: ground
            b.stroke(ball, (ball.0, PROJECTILE_GROUND)); // line3: height, perpendicular to ground
            b.label("line3", "height");
            b.graph([20.0, 20.0, 220.0, 120.0]); // graph4
            b.label("graph4.y", "height");
            b.mode(Mode::Record);
            b.tap(ball.0, ball.1);
        }
        SceneKind::Slider => {
            let knob = (truth[0], truth[1]);
            b.mode(Mode::Select);
            b.tap(SLIDER_ANCHOR_X, SLIDER_Y); // track1
            b.tap(knob.0, knob.1); // track2
            b.mode(Mode::Sketch);
            b.stroke((SLIDER_ANCHOR_X, SLIDER_Y), knob); // line3
            b.label("line3", "size");
            b.label("out:dino-size", "size * 2");
            b.graph([20.0, 20.0, 220.0, 120.0]); // graph4
            b.label("graph4.y", "size, dino-size");
        }
        SceneKind::RotatingPoint => {
            let pt = (truth[1], truth[2]);
            let phi = params.phase;
            let at = |r: f64, deg: f64| {
                let (s, c) = deg.to_radians().sin_cos();
                (r * c, r * s)
            };
            let reach = params.radius * 1.75;
            b.mode(Mode::Select);
            b.tap(pt.0, pt.1); // track1
            b.mode(Mode::Sketch);
            b.stroke((0.0, 0.0), (reach, 0.0)); // line2: reference
            b.stroke((0.0, 0.0), pt); // line3: arm
            let r = params.radius * 0.5;
            b.stroke(at(r, 0.0), at(r, phi)); // arc4
            b.label("arc4", "angle");
            b.stroke(pt, (pt.0, 0.0)); // line5: perpendicular to the reference
            b.label("line5", "height");
            b.graph([20.0, 20.0, 220.0, 120.0]); // graph6
            b.label("graph6.x", "angle");
            b.label("graph6.y", "height");
        }
    }
    b.lines
}

/// Parse a `truth.csv` into its header and rows.
pub fn read_truth(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::load_scene;
    use crate::tracker::{track, ColorModel};

    fn small(kind: SceneKind) -> SynthParams {
        SynthParams { duration: 0.5, ..SynthParams::for_kind(kind) }
    }

    #[test]
    fn pendulum_length_matches_period() {
        // T = 2 pi sqrt(L / g)
        let l = pendulum_length(1.5);
        let t = std::f64::consts::TAU * (l / GRAVITY).sqrt();
        assert!((t - 1.5).abs() < 1e-12);
        assert!((l - 0.5591).abs() < 1e-4);
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = SynthParams::for_kind(SceneKind::Pendulum);
        p.fps = 0.0;
        assert_eq!(p.validate(SceneKind::Pendulum).unwrap_err().code(), "BadParams");
        let p = SynthParams { theta0: 95.0, ..SynthParams::for_kind(SceneKind::Pendulum) };
        assert!(p.validate(SceneKind::Pendulum).is_err());
        let p = SynthParams { radius: 0.0, ..SynthParams::for_kind(SceneKind::Cycloid) };
        assert!(p.validate(SceneKind::Cycloid).is_err());
        assert!("pendulumz".parse::<SceneKind>().is_err());
        for k in SceneKind::ALL {
            assert_eq!(k.to_string().parse::<SceneKind>().unwrap(), k);
        }
    }

    #[test]
    fn cycloid_truth_is_parametric() {
        let p = SynthParams::for_kind(SceneKind::Cycloid);
        for k in [0, 37, 199] {
            let t = k as f64 / p.fps;
            let s = sample(SceneKind::Cycloid, &p, t);
            let phi = s.truth[0];
            assert!((phi - 10.0 * t / 10.0).abs() < 1e-12);
            let x = -0.5 + 0.1 * (phi - phi.sin());
            let y = -0.2 + 0.1 * (1.0 - phi.cos());
            assert!((s.truth[1] - x).abs() < 1e-12 && (s.truth[2] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_scene_loads_and_marker_is_where_truth_says() {
        let dir = tempfile::tempdir().unwrap();
        let p = small(SceneKind::Pendulum);
        let sum = generate_scene(SceneKind::Pendulum, &p, dir.path()).unwrap();
        assert_eq!(sum.frames, 10);
        let rec = load_scene(dir.path()).unwrap();
        assert_eq!(rec.len(), 10);
        let (header, rows) = read_truth(&fs::read_to_string(dir.path().join("truth.csv")).unwrap());
        assert_eq!(header, ["t", "theta", "angle", "x", "y", "z"]);
        assert_eq!(rows.len(), 10);
        let f = rec.decode_frame(3).unwrap();
        let model = ColorModel::new(crate::tracker::rgb_to_hsv(RED[0], RED[1], RED[2]));
        let r = track(&f, &model);
        assert!(r.found);
        let world = f.camera.ray_cast_to_plane(rec.plane(), r.centroid).unwrap();
        assert!((world.x - rows[3][3]).abs() < 2e-3, "{} vs {}", world.x, rows[3][3]);
        assert!((world.y - rows[3][4]).abs() < 2e-3, "{} vs {}", world.y, rows[3][4]);
        // background corner is gray with bounded noise
        let [r0, g0, b0] = f.rgb(0, 0);
        for (c, base) in [(r0, 205), (g0, 205), (b0, 200)] {
            assert!((i16::from(c) - base).abs() <= 3);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let p = SynthParams { duration: 0.15, ..SynthParams::for_kind(SceneKind::Cycloid) };
        generate_scene(SceneKind::Cycloid, &p, d1.path()).unwrap();
        generate_scene(SceneKind::Cycloid, &p, d2.path()).unwrap();
        for f in ["scene.json", "meta.jsonl", "truth.csv", "script.jsonl", "frames/000002.ppm"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
    }
}
