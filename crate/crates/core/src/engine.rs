//! Named variables, parameter bindings and the per-frame tick.
//!
//! Every variable and binding is a node in one dependency graph. A measured
//! variable depends on the bindings that move the lines it reads; an
//! expression depends on its free variables; a binding depends on its free
//! variables and on whatever moves the lines it reads as a reference. The
//! tick walks that graph in topological order, ties broken by name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Env, Expr, ExprError};
use crate::geometry::{CameraState, GeometryError, Plane2, ReferencePlane, Screen2, World3};
use crate::scene::{ExternalPoints, Frame, VariableLog};
use crate::sketch::{
    self, AngleArc, AreaPolygon, Derivation, Endpoint, LineKind, LineSegment, SketchContext, SketchError,
    SketchIntent, Stroke,
};
use crate::tracker::{self, TrackError, TrackResult, TrackSource, TrackedEntity};
use crate::viz::{self, Axis, GraphPlot, MotionRecording, PlaneRect, StrobeSet, VizError, XAxis};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("`{0}` is already a measured variable")]
    NameCollision(String),
    #[error("`{0}` is not a valid variable name")]
    InvalidName(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("cyclic dependency through {}", .0.join(", "))]
    CyclicDependency(Vec<String>),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("not bindable: {0}")]
    NotBindable(String),
    #[error("constraint conflict: {0}")]
    ConstraintConflict(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::NameCollision(_) => "NameCollision",
            EngineError::InvalidName(_) => "InvalidName",
            EngineError::Expr(e) => e.code(),
            EngineError::CyclicDependency(_) => "CyclicDependency",
            EngineError::UnknownEntity(_) => "UnknownEntity",
            EngineError::NotBindable(_) => "NotBindable",
            EngineError::ConstraintConflict(_) => "ConstraintConflict",
            EngineError::Sketch(e) => e.code(),
            EngineError::Track(_) => "OutOfBounds",
            EngineError::Viz(e) => e.code(),
            EngineError::Geometry(e) => e.code(),
        }
    }
}

/// A scalar property of a sketch entity, or a named output channel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ParamRef {
    LineLength(String),
    /// Signed angle of p1 -> p2 against the plane's first basis axis.
    LineAngle(String),
    ArcAngle(String),
    Area(String),
    Output(String),
}

impl ParamRef {
    pub fn entity(&self) -> &str {
        match self {
            ParamRef::LineLength(id)
            | ParamRef::LineAngle(id)
            | ParamRef::ArcAngle(id)
            | ParamRef::Area(id)
            | ParamRef::Output(id) => id,
        }
    }
}

impl fmt::Display for ParamRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamRef::LineLength(id) => write!(f, "{id}.length"),
            ParamRef::LineAngle(id) => write!(f, "{id}.angle"),
            ParamRef::ArcAngle(id) => write!(f, "{id}.angle"),
            ParamRef::Area(id) => write!(f, "{id}.area"),
            ParamRef::Output(name) => write!(f, "out:{name}"),
        }
    }
}

impl From<ParamRef> for String {
    fn from(p: ParamRef) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ParamRef {
    type Error = String;

    /// Parses the textual form using the id prefix to pick the entity kind.
    fn try_from(s: String) -> Result<Self, String> {
        if let Some(name) = s.strip_prefix("out:") {
            return Ok(ParamRef::Output(name.to_string()));
        }
        let (id, prop) = match s.split_once('.') {
            Some((id, p)) => (id, Some(p)),
            None => (s.as_str(), None),
        };
        let kind = id.trim_end_matches(|c: char| c.is_ascii_digit());
        let id = id.to_string();
        match (kind, prop) {
            ("line", None | Some("length")) => Ok(ParamRef::LineLength(id)),
            ("line", Some("angle")) => Ok(ParamRef::LineAngle(id)),
            ("arc", None | Some("angle")) => Ok(ParamRef::ArcAngle(id)),
            ("area", None | Some("area")) => Ok(ParamRef::Area(id)),
            _ => Err(format!("not a parameter reference: `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarSource {
    Measured(ParamRef),
    Expression { text: String, expr: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub source: VarSource,
    pub value: f64,
    /// Published as an output channel.
    pub output: bool,
    initial: f64,
}

/// Bind-time geometry a binding moves relative to.
#[derive(Debug, Clone, PartialEq)]
enum Drive {
    /// Keep p1, move p2 along the bind-time direction.
    Length { line: String, dir: World3 },
    /// Keep p1 and the length, set the direction.
    Angle { line: String, len: f64 },
    /// Rotate `line` about `pivot_is_p1`'s end, measured from the arc's other ray.
    Arc {
        arc: String,
        line: String,
        reference: String,
        driven_is_b: bool,
        pivot_is_p1: bool,
        len: f64,
        sign: f64,
    },
    /// Scale bind-time endpoints about the polygon centroid.
    Area {
        lines: Vec<(String, World3, World3)>,
        centroid: World3,
        area0: f64,
    },
}

impl Drive {
    fn driven_lines(&self) -> Vec<&str> {
        match self {
            Drive::Length { line, .. } | Drive::Angle { line, .. } | Drive::Arc { line, .. } => vec![line],
            Drive::Area { lines, .. } => lines.iter().map(|(l, _, _)| l.as_str()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub id: String,
    pub target: ParamRef,
    pub text: String,
    pub expr: Expr,
    /// Last value successfully applied.
    pub applied: Option<f64>,
    drive: Drive,
}

/// Dependency-graph node. Variables sort before bindings, then by name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKey {
    Var(String),
    Binding(String),
}

impl NodeKey {
    pub fn name(&self) -> &str {
        match self {
            NodeKey::Var(n) | NodeKey::Binding(n) => n,
        }
    }
}

pub type DepGraph = BTreeMap<NodeKey, BTreeSet<NodeKey>>;

/// Topological order of `deps` (node -> nodes it depends on). Ready nodes
/// are taken in key order, so independent nodes come out sorted by name.
pub fn resolve_order(deps: &DepGraph) -> Result<Vec<NodeKey>, EngineError> {
    let mut pending: BTreeMap<&NodeKey, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&NodeKey, Vec<&NodeKey>> = BTreeMap::new();
    for (node, ds) in deps {
        let known: Vec<&NodeKey> = ds.iter().filter(|d| deps.contains_key(*d)).collect();
        pending.insert(node, known.len());
        for d in known {
            dependents.entry(d).or_default().push(node);
        }
    }
    let mut ready: BTreeSet<&NodeKey> = pending.iter().filter(|(_, n)| **n == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::with_capacity(deps.len());
    while let Some(node) = ready.pop_first() {
        order.push(node.clone());
        for d in dependents.get(node).map(Vec::as_slice).unwrap_or_default() {
            let n = pending.get_mut(d).expect("dependent is a node");
            *n -= 1;
            if *n == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() < deps.len() {
        let stuck = pending
            .iter()
            .filter(|(k, _)| !order.contains(k))
            .map(|(k, _)| k.name().to_string())
            .collect();
        return Err(EngineError::CyclicDependency(stuck));
    }
    Ok(order)
}

/// One frame of input to the tick.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub index: usize,
    pub t: f64,
    pub camera: &'a CameraState,
    /// Decoded pixels; may be omitted when every color entity is cached.
    pub frame: Option<&'a Frame>,
    pub points: Option<&'a ExternalPoints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub code: String,
    pub message: String,
}

impl Fault {
    fn from_error(e: &EngineError) -> Self {
        Fault { code: e.code().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineView {
    pub line: LineSegment,
    pub length: f64,
    pub angle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcView {
    pub arc: AngleArc,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaView {
    pub area: AreaPolygon,
    pub vertices: Vec<World3>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingView {
    pub target: ParamRef,
    pub text: String,
    pub value: Option<f64>,
}

/// Complete engine state as seen by clients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateSnapshot {
    pub frame: Option<FrameStamp>,
    pub camera: Option<CameraState>,
    pub tracked: IndexMap<String, TrackedEntity>,
    pub lines: IndexMap<String, LineView>,
    pub arcs: IndexMap<String, ArcView>,
    pub areas: IndexMap<String, AreaView>,
    pub variables: IndexMap<String, f64>,
    pub outputs: IndexMap<String, f64>,
    pub bindings: IndexMap<String, BindingView>,
    pub faults: BTreeMap<String, Fault>,
    pub graphs: IndexMap<String, GraphPlot>,
    pub recordings: IndexMap<String, MotionRecording>,
    pub strobes: IndexMap<String, StrobeSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStamp {
    pub index: usize,
    pub t: f64,
}

/// Changes to one plot since the last diff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlotDelta {
    pub id: String,
    /// Replace the buffers instead of appending.
    pub reset: bool,
    pub placement: PlaneRect,
    pub x_axis: XAxis,
    pub series: Vec<String>,
    pub window: f64,
    pub appended: u64,
    /// Samples to drop from the front of every series.
    pub trim: usize,
    /// New samples per series, in `series` order.
    pub samples: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordingDelta {
    pub entity_id: String,
    pub reset: bool,
    pub active: bool,
    pub samples: Vec<(f64, World3)>,
}

/// Everything that changed between two snapshots. Maps carry full replacement
/// values for changed keys; plots and recordings carry appends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct StateDiff {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameStamp>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraState>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub tracked: IndexMap<String, TrackedEntity>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub lines: IndexMap<String, LineView>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub arcs: IndexMap<String, ArcView>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub areas: IndexMap<String, AreaView>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub variables: IndexMap<String, f64>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub outputs: IndexMap<String, f64>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub bindings: IndexMap<String, BindingView>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub faults: BTreeMap<String, Fault>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub faults_cleared: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub plots: Vec<PlotDelta>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub recordings: Vec<RecordingDelta>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub strobes: IndexMap<String, StrobeSet>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub strobes_removed: Vec<String>,
}

fn changed<V: Clone + PartialEq>(old: &IndexMap<String, V>, new: &IndexMap<String, V>) -> IndexMap<String, V> {
    new.iter()
        .filter(|(k, v)| old.get(*k) != Some(*v))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn plot_delta(old: Option<&GraphPlot>, new: &GraphPlot) -> Option<PlotDelta> {
    let full = |reset| PlotDelta {
        id: new.id.clone(),
        reset,
        placement: new.placement,
        x_axis: new.x_axis.clone(),
        series: new.series_names().iter().map(|s| s.to_string()).collect(),
        window: new.window,
        appended: new.appended,
        trim: 0,
        samples: new.series.iter().map(|s| s.samples.iter().copied().collect()).collect(),
    };
    let Some(old) = old else { return Some(full(true)) };
    if old == new {
        return None;
    }
    let same_shape = old.placement == new.placement
        && old.x_axis == new.x_axis
        && old.window == new.window
        && old.series_names() == new.series_names();
    if !same_shape || new.appended < old.appended {
        return Some(full(true));
    }
    let k = (new.appended - old.appended) as usize;
    let old_len = old.series.first().map_or(0, |s| s.samples.len());
    let new_len = new.series.first().map_or(0, |s| s.samples.len());
    if k > new_len || old_len + k < new_len {
        return Some(full(true));
    }
    let mut delta = full(false);
    delta.trim = old_len + k - new_len;
    delta.samples = new
        .series
        .iter()
        .map(|s| s.samples.iter().skip(new_len - k).copied().collect())
        .collect();
    Some(delta)
}

fn recording_delta(old: Option<&MotionRecording>, new: &MotionRecording) -> Option<RecordingDelta> {
    if old == Some(new) {
        return None;
    }
    let extends = old.is_some_and(|o| o.samples.len() <= new.samples.len() && new.samples[..o.samples.len()] == o.samples[..]);
    let skip = if extends { old.map_or(0, |o| o.samples.len()) } else { 0 };
    Some(RecordingDelta {
        entity_id: new.entity_id.clone(),
        reset: !extends,
        active: new.active,
        samples: new.samples[skip..].to_vec(),
    })
}

impl StateSnapshot {
    /// Diff that turns `self` into `next`.
    pub fn diff(&self, next: &StateSnapshot) -> StateDiff {
        StateDiff {
            frame: (self.frame != next.frame).then_some(next.frame).flatten(),
            camera: (self.camera != next.camera).then_some(next.camera).flatten(),
            tracked: changed(&self.tracked, &next.tracked),
            lines: changed(&self.lines, &next.lines),
            arcs: changed(&self.arcs, &next.arcs),
            areas: changed(&self.areas, &next.areas),
            variables: changed(&self.variables, &next.variables),
            outputs: changed(&self.outputs, &next.outputs),
            bindings: changed(&self.bindings, &next.bindings),
            faults: next
                .faults
                .iter()
                .filter(|(k, v)| self.faults.get(*k) != Some(*v))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            faults_cleared: self.faults.keys().filter(|k| !next.faults.contains_key(*k)).cloned().collect(),
            plots: next
                .graphs
                .values()
                .filter_map(|g| plot_delta(self.graphs.get(&g.id), g))
                .collect(),
            recordings: next
                .recordings
                .values()
                .filter_map(|r| recording_delta(self.recordings.get(&r.entity_id), r))
                .collect(),
            strobes: changed(&self.strobes, &next.strobes),
            strobes_removed: self.strobes.keys().filter(|k| !next.strobes.contains_key(*k)).cloned().collect(),
        }
    }

    pub fn apply(&mut self, diff: &StateDiff) {
        if let Some(f) = diff.frame {
            self.frame = Some(f);
        }
        if let Some(c) = diff.camera {
            self.camera = Some(c);
        }
        fn merge<V: Clone>(dst: &mut IndexMap<String, V>, src: &IndexMap<String, V>) {
            for (k, v) in src {
                dst.insert(k.clone(), v.clone());
            }
        }
        merge(&mut self.tracked, &diff.tracked);
        merge(&mut self.lines, &diff.lines);
        merge(&mut self.arcs, &diff.arcs);
        merge(&mut self.areas, &diff.areas);
        merge(&mut self.variables, &diff.variables);
        merge(&mut self.outputs, &diff.outputs);
        merge(&mut self.bindings, &diff.bindings);
        for (k, v) in &diff.faults {
            self.faults.insert(k.clone(), v.clone());
        }
        for k in &diff.faults_cleared {
            self.faults.remove(k);
        }
        for p in &diff.plots {
            let g = self
                .graphs
                .entry(p.id.clone())
                .or_insert_with(|| GraphPlot::new(p.id.clone(), p.placement));
            if p.reset {
                g.placement = p.placement;
                g.x_axis = p.x_axis.clone();
                g.window = p.window;
                g.series = p
                    .series
                    .iter()
                    .zip(&p.samples)
                    .map(|(name, s)| viz::Series { name: name.clone(), samples: s.iter().copied().collect() })
                    .collect();
            } else {
                for (series, new) in g.series.iter_mut().zip(&p.samples) {
                    series.samples.drain(..p.trim.min(series.samples.len()));
                    series.samples.extend(new.iter().copied());
                }
            }
            g.appended = p.appended;
        }
        for r in &diff.recordings {
            let rec = self
                .recordings
                .entry(r.entity_id.clone())
                .or_insert_with(|| MotionRecording::new(r.entity_id.clone()));
            if r.reset {
                rec.samples.clear();
            }
            rec.samples.extend(r.samples.iter().copied());
            rec.active = r.active;
        }
        merge(&mut self.strobes, &diff.strobes);
        for k in &diff.strobes_removed {
            self.strobes.shift_remove(k);
        }
    }
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        *self == StateDiff::default()
    }
}

/// What a label edit did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelOutcome {
    Variable(String),
    Binding(String),
    Axis(String),
    Spacing,
}

/// The sketch, its variables and bindings, and everything derived per tick.
#[derive(Debug, Clone)]
pub struct Engine {
    plane: ReferencePlane,
    next_id: u64,
    tracked: IndexMap<String, TrackedEntity>,
    lines: IndexMap<String, LineSegment>,
    arcs: IndexMap<String, AngleArc>,
    areas: IndexMap<String, AreaPolygon>,
    vars: IndexMap<String, Variable>,
    bindings: IndexMap<String, Binding>,
    order: Vec<NodeKey>,
    graphs: IndexMap<String, GraphPlot>,
    recordings: IndexMap<String, MotionRecording>,
    strobes_shown: BTreeSet<String>,
    strobe_spacing: f64,
    faults: BTreeMap<String, Fault>,
    log: VariableLog,
    track_cache: HashMap<(String, usize), TrackResult>,
    pristine_tracked: IndexMap<String, TrackedEntity>,
    pristine_lines: IndexMap<String, LineSegment>,
    frame: Option<FrameStamp>,
    camera: Option<CameraState>,
    last_sampled: Option<usize>,
    emitted: StateSnapshot,
}

impl Engine {
    pub fn new(plane: ReferencePlane) -> Self {
        Engine {
            plane,
            next_id: 1,
            tracked: IndexMap::new(),
            lines: IndexMap::new(),
            arcs: IndexMap::new(),
            areas: IndexMap::new(),
            vars: IndexMap::new(),
            bindings: IndexMap::new(),
            order: Vec::new(),
            graphs: IndexMap::new(),
            recordings: IndexMap::new(),
            strobes_shown: BTreeSet::new(),
            strobe_spacing: viz::DEFAULT_STROBE_SPACING,
            faults: BTreeMap::new(),
            log: VariableLog::new(),
            track_cache: HashMap::new(),
            pristine_tracked: IndexMap::new(),
            pristine_lines: IndexMap::new(),
            frame: None,
            camera: None,
            last_sampled: None,
            emitted: StateSnapshot::default(),
        }
    }

    pub fn plane(&self) -> &ReferencePlane {
        &self.plane
    }

    pub fn tracked(&self) -> &IndexMap<String, TrackedEntity> {
        &self.tracked
    }

    pub fn lines(&self) -> &IndexMap<String, LineSegment> {
        &self.lines
    }

    pub fn arcs(&self) -> &IndexMap<String, AngleArc> {
        &self.arcs
    }

    pub fn areas(&self) -> &IndexMap<String, AreaPolygon> {
        &self.areas
    }

    pub fn variables(&self) -> &IndexMap<String, Variable> {
        &self.vars
    }

    pub fn bindings(&self) -> &IndexMap<String, Binding> {
        &self.bindings
    }

    pub fn graphs(&self) -> &IndexMap<String, GraphPlot> {
        &self.graphs
    }

    pub fn recordings(&self) -> &IndexMap<String, MotionRecording> {
        &self.recordings
    }

    pub fn faults(&self) -> &BTreeMap<String, Fault> {
        &self.faults
    }

    pub fn log(&self) -> &VariableLog {
        &self.log
    }

    pub fn order(&self) -> &[NodeKey] {
        &self.order
    }

    pub fn strobe_spacing(&self) -> f64 {
        self.strobe_spacing
    }

    pub fn env(&self) -> Env {
        self.vars.iter().map(|(k, v)| (k.clone(), v.value)).collect()
    }

    fn fresh_id(&mut self, prefix: &str) -> String {
        let id = format!("{prefix}{}", self.next_id);
        self.next_id += 1;
        id
    }

    // ----- tracking ------------------------------------------------------

    /// Start tracking the color under `tap` in `frame`.
    pub fn track_color(&mut self, frame: &Frame, tap: Screen2) -> Result<String, EngineError> {
        let model = tracker::select_color_target(frame, tap)?;
        let world = frame.camera.ray_cast_to_plane(&self.plane, tap)?;
        let id = self.fresh_id("track");
        let mut ent = TrackedEntity::new(id.clone(), TrackSource::Color { model }, tap, world);
        self.pristine_tracked.insert(id.clone(), ent.clone());
        let r = tracker::track(frame, &model);
        ent.apply(&r, &frame.camera, &self.plane, frame.t);
        self.track_cache.insert((id.clone(), frame.index), r);
        self.tracked.insert(id.clone(), ent);
        Ok(id)
    }

    /// Follow a named external point stream (e.g. a body joint).
    pub fn track_external(
        &mut self,
        name: &str,
        camera: &CameraState,
        points: Option<&ExternalPoints>,
        t: f64,
    ) -> Result<String, EngineError> {
        let p = points
            .and_then(|p| p.get(name))
            .copied()
            .ok_or_else(|| EngineError::UnknownEntity(name.to_string()))?;
        let world = self.plane.project(&p);
        let screen = camera.project_to_screen(&world).unwrap_or_default();
        let id = self.fresh_id("track");
        let source = TrackSource::External { name: name.to_string() };
        let mut ent = TrackedEntity::new(id.clone(), source, screen, world);
        self.pristine_tracked.insert(id.clone(), ent.clone());
        ent.apply_external(Some(p), camera, &self.plane, t);
        self.tracked.insert(id.clone(), ent);
        Ok(id)
    }

    /// Nearest tracked entity whose projection lies within the snap radius.
    pub fn entity_near(&self, camera: &CameraState, tap: Screen2) -> Option<&str> {
        let snap = sketch::snap_radius(camera);
        self.tracked
            .values()
            .filter_map(|e| {
                let d = camera.project_to_screen(&e.world_pos).ok()?.distance(&tap);
                (d <= snap).then_some((d, e.id.as_str()))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, id)| id)
    }

    /// Whether ticking frame `index` needs decoded pixels.
    pub fn needs_pixels(&self, index: usize) -> bool {
        self.tracked.values().any(|e| {
            matches!(e.source, TrackSource::Color { .. }) && !self.track_cache.contains_key(&(e.id.clone(), index))
        })
    }

    // ----- sketching -----------------------------------------------------

    /// Interpret a stroke and add the resulting entity. Returns its id.
    pub fn add_stroke(&mut self, stroke: &Stroke, camera: &CameraState, annotation: bool) -> Result<String, EngineError> {
        let ctx = SketchContext { lines: &self.lines, tracked: &self.tracked, camera, plane: &self.plane };
        let intent = sketch::classify_stroke(stroke, &ctx, annotation)?;
        let id = match intent {
            SketchIntent::NewLine { p1, p2, a, b, kind, perpendicular_to } => {
                let id = self.fresh_id("line");
                let line = LineSegment { id: id.clone(), p1, p2, kind, label: None, perpendicular_to, a, b };
                self.insert_line(line);
                id
            }
            SketchIntent::NewAngle { line_a, line_b, side_a, side_b, vertex } => {
                let id = self.fresh_id("arc");
                let arc = AngleArc { id: id.clone(), line_a, line_b, side_a, side_b, vertex, label: None };
                self.arcs.insert(id.clone(), arc);
                id
            }
            SketchIntent::NewArea { mut chain, p1, p2, a, b } => {
                let closing = self.fresh_id("line");
                let line = LineSegment {
                    id: closing.clone(),
                    p1,
                    p2,
                    kind: LineKind::Static,
                    label: None,
                    perpendicular_to: None,
                    a,
                    b,
                };
                self.insert_line(line);
                chain.push(closing);
                let id = self.fresh_id("area");
                self.areas.insert(id.clone(), AreaPolygon { id: id.clone(), boundary: chain, label: None });
                id
            }
            SketchIntent::NewAnnotation { anchor, offset } => {
                let id = self.fresh_id("line");
                let line = sketch::annotation_line(id.clone(), &anchor, self.tracked[&anchor].world_pos, offset);
                self.insert_line(line);
                id
            }
        };
        self.order = self.rebuild_order(&self.vars, &self.bindings)?;
        Ok(id)
    }

    fn insert_line(&mut self, mut line: LineSegment) {
        if let Some(r) = line.perpendicular_to.as_ref().and_then(|r| self.lines.get(r)) {
            let (ra, rb) = (r.a, r.b);
            sketch::resolve_line(&mut line, &self.tracked, Some((&ra, &rb)));
        }
        self.pristine_lines.insert(line.id.clone(), line.clone());
        self.lines.insert(line.id.clone(), line);
    }

    // ----- measuring -----------------------------------------------------

    fn line(&self, id: &str) -> Result<&LineSegment, EngineError> {
        self.lines.get(id).ok_or_else(|| EngineError::UnknownEntity(id.to_string()))
    }

    fn area_lines(&self, area: &AreaPolygon) -> Result<Vec<&LineSegment>, EngineError> {
        area.boundary.iter().map(|l| self.line(l)).collect()
    }

    pub fn measure(&self, p: &ParamRef) -> Result<f64, EngineError> {
        match p {
            ParamRef::LineLength(id) => Ok(self.line(id)?.length()),
            ParamRef::LineAngle(id) => Ok(sketch::measure_line_angle(&self.plane, self.line(id)?)?),
            ParamRef::ArcAngle(id) => {
                let arc = self.arcs.get(id).ok_or_else(|| EngineError::UnknownEntity(id.clone()))?;
                Ok(sketch::measure_arc(arc, self.line(&arc.line_a)?, self.line(&arc.line_b)?)?)
            }
            ParamRef::Area(id) => {
                let area = self.areas.get(id).ok_or_else(|| EngineError::UnknownEntity(id.clone()))?;
                Ok(sketch::measure_area(&self.plane, &self.area_lines(area)?)?)
            }
            ParamRef::Output(name) => self
                .vars
                .get(name)
                .map(|v| v.value)
                .ok_or_else(|| EngineError::UnknownEntity(format!("out:{name}"))),
        }
    }

    /// Resolve a label target such as `line3`, `line3.angle` or `arc4`.
    pub fn param_for(&self, target: &str) -> Result<ParamRef, EngineError> {
        if let Some(name) = target.strip_prefix("out:") {
            return Ok(ParamRef::Output(name.to_string()));
        }
        let (id, prop) = match target.split_once('.') {
            Some((id, p)) => (id, Some(p)),
            None => (target, None),
        };
        let bad = || EngineError::NotBindable(format!("`{target}` has no scalar parameter"));
        let id_s = id.to_string();
        if self.lines.contains_key(id) {
            return match prop {
                None | Some("length") => Ok(ParamRef::LineLength(id_s)),
                Some("angle") => Ok(ParamRef::LineAngle(id_s)),
                _ => Err(bad()),
            };
        }
        if self.arcs.contains_key(id) {
            return match prop {
                None | Some("angle") => Ok(ParamRef::ArcAngle(id_s)),
                _ => Err(bad()),
            };
        }
        if self.areas.contains_key(id) {
            return match prop {
                None | Some("area") => Ok(ParamRef::Area(id_s)),
                _ => Err(bad()),
            };
        }
        if self.tracked.contains_key(id) {
            return Err(bad());
        }
        Err(EngineError::UnknownEntity(target.to_string()))
    }

    /// Lines a parameter reads, including perpendicular references.
    fn lines_read(&self, p: &ParamRef) -> BTreeSet<String> {
        let direct: Vec<String> = match p {
            ParamRef::LineLength(id) | ParamRef::LineAngle(id) => vec![id.clone()],
            ParamRef::ArcAngle(id) => self
                .arcs
                .get(id)
                .map(|a| vec![a.line_a.clone(), a.line_b.clone()])
                .unwrap_or_default(),
            ParamRef::Area(id) => self.areas.get(id).map(|a| a.boundary.clone()).unwrap_or_default(),
            ParamRef::Output(_) => Vec::new(),
        };
        let mut out = BTreeSet::new();
        for l in direct {
            self.close_over_perpendicular(&l, &mut out);
        }
        out
    }

    fn close_over_perpendicular(&self, line: &str, out: &mut BTreeSet<String>) {
        if !out.insert(line.to_string()) {
            return;
        }
        if let Some(r) = self.lines.get(line).and_then(|l| l.perpendicular_to.clone()) {
            self.close_over_perpendicular(&r, out);
        }
    }

    // ----- dependency graph ----------------------------------------------

    fn drivers<'b>(bindings: &'b IndexMap<String, Binding>) -> BTreeMap<&'b str, &'b str> {
        let mut m = BTreeMap::new();
        for b in bindings.values() {
            for l in b.drive_lines() {
                m.insert(l, b.id.as_str());
            }
        }
        m
    }

    fn dep_graph(&self, vars: &IndexMap<String, Variable>, bindings: &IndexMap<String, Binding>) -> DepGraph {
        let drivers = Self::drivers(bindings);
        let driven_by = |lines: &BTreeSet<String>, skip: Option<&str>| -> BTreeSet<NodeKey> {
            lines
                .iter()
                .filter_map(|l| drivers.get(l.as_str()))
                .filter(|b| Some(**b) != skip)
                .map(|b| NodeKey::Binding(b.to_string()))
                .collect()
        };
        let mut g = DepGraph::new();
        for v in vars.values() {
            let deps = match &v.source {
                VarSource::Measured(p) => driven_by(&self.lines_read(p), None),
                VarSource::Expression { expr, .. } => {
                    expr::free_variables(expr).into_iter().map(NodeKey::Var).collect()
                }
            };
            g.insert(NodeKey::Var(v.name.clone()), deps);
        }
        for b in bindings.values() {
            let mut deps: BTreeSet<NodeKey> = expr::free_variables(&b.expr).into_iter().map(NodeKey::Var).collect();
            if let Drive::Arc { reference, .. } = &b.drive {
                let mut refs = BTreeSet::new();
                self.close_over_perpendicular(reference, &mut refs);
                deps.extend(driven_by(&refs, Some(&b.id)));
            }
            g.insert(NodeKey::Binding(b.id.clone()), deps);
        }
        g
    }

    fn rebuild_order(
        &self,
        vars: &IndexMap<String, Variable>,
        bindings: &IndexMap<String, Binding>,
    ) -> Result<Vec<NodeKey>, EngineError> {
        resolve_order(&self.dep_graph(vars, bindings))
    }

    fn check_free_vars(&self, expr: &Expr, allow: Option<&str>) -> Result<(), EngineError> {
        for v in expr::free_variables(expr) {
            if !self.vars.contains_key(&v) && Some(v.as_str()) != allow {
                return Err(ExprError::UnknownIdentifier(v).into());
            }
        }
        Ok(())
    }

    // ----- variables -----------------------------------------------------

    /// Name a measured parameter.
    pub fn define_variable(&mut self, param: ParamRef, name: &str) -> Result<(), EngineError> {
        let name = name.trim();
        if !expr::is_identifier(name) {
            return Err(EngineError::InvalidName(name.to_string()));
        }
        if self.vars.contains_key(name) {
            return Err(EngineError::NameCollision(name.to_string()));
        }
        if let ParamRef::Output(_) = param {
            return Err(EngineError::NotBindable("output channels are defined by expression".into()));
        }
        if let Some(existing) = self.vars.values().find(|v| v.source == VarSource::Measured(param.clone())) {
            return Err(EngineError::NameCollision(existing.name.clone()));
        }
        let value = self.measure(&param).unwrap_or(0.0);
        let var = Variable {
            name: name.to_string(),
            source: VarSource::Measured(param.clone()),
            value,
            output: false,
            initial: value,
        };
        let mut vars = self.vars.clone();
        vars.insert(name.to_string(), var);
        let order = self.rebuild_order(&vars, &self.bindings)?;
        self.vars = vars;
        self.order = order;
        self.set_label(&param, name);
        Ok(())
    }

    /// Define or replace an expression variable. `output` publishes it as an
    /// output channel.
    pub fn define_expression(&mut self, name: &str, text: &str, output: bool) -> Result<(), EngineError> {
        let name = name.trim();
        if !expr::is_identifier(name) {
            return Err(EngineError::InvalidName(name.to_string()));
        }
        if let Some(v) = self.vars.get(name) {
            if matches!(v.source, VarSource::Measured(_)) {
                return Err(EngineError::NameCollision(name.to_string()));
            }
        }
        let parsed = expr::parse(text)?;
        self.check_free_vars(&parsed, None)?;
        let value = expr::evaluate(&parsed, &self.env()).unwrap_or(0.0);
        let mut vars = self.vars.clone();
        let was_output = vars.get(name).is_some_and(|v| v.output);
        let source = VarSource::Expression { text: text.trim().to_string(), expr: parsed };
        match vars.get_mut(name) {
            Some(v) => {
                v.source = source;
                v.output |= output;
            }
            None => {
                vars.insert(
                    name.to_string(),
                    Variable { name: name.to_string(), source, value, output: output || was_output, initial: value },
                );
            }
        }
        let order = self.rebuild_order(&vars, &self.bindings)?;
        self.vars = vars;
        self.order = order;
        Ok(())
    }

    fn set_label(&mut self, p: &ParamRef, text: &str) {
        let label = Some(text.to_string());
        match p {
            ParamRef::LineLength(id) | ParamRef::LineAngle(id) => {
                if let Some(l) = self.lines.get_mut(id) {
                    l.label = label.clone();
                }
                if let Some(l) = self.pristine_lines.get_mut(id) {
                    l.label = label;
                }
            }
            ParamRef::ArcAngle(id) => {
                if let Some(a) = self.arcs.get_mut(id) {
                    a.label = label;
                }
            }
            ParamRef::Area(id) => {
                if let Some(a) = self.areas.get_mut(id) {
                    a.label = label;
                }
            }
            ParamRef::Output(_) => {}
        }
    }

    // ----- bindings ------------------------------------------------------

    fn check_static(&self, line_id: &str, binding_id: &str) -> Result<&LineSegment, EngineError> {
        let line = self.line(line_id)?;
        if line.kind != LineKind::Static {
            return Err(EngineError::NotBindable(format!("{line_id} follows a tracked object")));
        }
        if let Some(r) = &line.perpendicular_to {
            return Err(EngineError::ConstraintConflict(format!("{line_id} is held perpendicular to {r}")));
        }
        if let Some(other) = Self::drivers(&self.bindings).get(line_id) {
            if *other != binding_id {
                return Err(EngineError::ConstraintConflict(format!("{line_id} is already driven by {other}")));
            }
        }
        Ok(line)
    }

    fn is_static(&self, line_id: &str, binding_id: &str) -> bool {
        self.check_static(line_id, binding_id).is_ok()
    }

    fn make_drive(&self, target: &ParamRef, id: &str) -> Result<Drive, EngineError> {
        let degenerate = |l: &str| EngineError::Sketch(SketchError::DegenerateGeometry(format!("line {l} has zero length")));
        match target {
            ParamRef::LineLength(l) => {
                let line = self.check_static(l, id)?;
                let dir = (line.b - line.a).try_normalize(0.0).ok_or_else(|| degenerate(l))?;
                Ok(Drive::Length { line: l.clone(), dir })
            }
            ParamRef::LineAngle(l) => {
                let line = self.check_static(l, id)?;
                Ok(Drive::Angle { line: l.clone(), len: line.length() })
            }
            ParamRef::ArcAngle(a) => {
                let arc = self.arcs.get(a).ok_or_else(|| EngineError::UnknownEntity(a.clone()))?;
                let (driven_is_b, line_id, ref_id) = if self.is_static(&arc.line_b, id) {
                    (true, &arc.line_b, &arc.line_a)
                } else {
                    // report why the preferred line was refused if neither works
                    self.check_static(&arc.line_a, id).map_err(|_| {
                        self.check_static(&arc.line_b, id).err().expect("line_b was refused")
                    })?;
                    (false, &arc.line_a, &arc.line_b)
                };
                let (line, reference) = (self.line(line_id)?, self.line(ref_id)?);
                let vertex = sketch::arc_vertex(&self.plane, self.line(&arc.line_a)?, self.line(&arc.line_b)?);
                let pivot_is_p1 = (line.a - vertex).norm() <= (line.b - vertex).norm();
                let len = line.length();
                if len == 0.0 {
                    return Err(degenerate(line_id));
                }
                let ref_side = if driven_is_b { arc.side_a } else { arc.side_b };
                let dref = self.plane.direction_coords(&((reference.b - reference.a) * ref_side));
                let far_dir = if pivot_is_p1 { line.b - line.a } else { line.a - line.b };
                let dl = self.plane.direction_coords(&far_dir);
                let cross = dref.a * dl.b - dref.b * dl.a;
                Ok(Drive::Arc {
                    arc: a.clone(),
                    line: line_id.clone(),
                    reference: ref_id.clone(),
                    driven_is_b,
                    pivot_is_p1,
                    len,
                    sign: if cross < 0.0 { -1.0 } else { 1.0 },
                })
            }
            ParamRef::Area(a) => {
                let area = self.areas.get(a).ok_or_else(|| EngineError::UnknownEntity(a.clone()))?;
                let mut lines = Vec::new();
                for l in &area.boundary {
                    let line = self.check_static(l, id)?;
                    lines.push((l.clone(), line.a, line.b));
                }
                let refs = self.area_lines(area)?;
                let verts = sketch::area_vertices(&refs);
                let area0 = sketch::measure_area(&self.plane, &refs)?;
                if area0 == 0.0 {
                    return Err(SketchError::DegenerateGeometry(format!("{a} has zero area")).into());
                }
                let centroid = verts.iter().sum::<World3>() / verts.len() as f64;
                Ok(Drive::Area { lines, centroid, area0 })
            }
            ParamRef::Output(_) => unreachable!("output channels are variables"),
        }
    }

    /// Bind a parameter (or output channel) to an expression over variables.
    pub fn bind_parameter(&mut self, target: ParamRef, text: &str) -> Result<String, EngineError> {
        if let ParamRef::Output(name) = &target {
            self.define_expression(name, text, true)?;
            return Ok(target.to_string());
        }
        let parsed = expr::parse(text)?;
        self.check_free_vars(&parsed, None)?;
        let id = target.to_string();
        let drive = match self.bindings.get(&id) {
            Some(existing) => existing.drive.clone(),
            None => self.make_drive(&target, &id)?,
        };
        let binding = Binding {
            id: id.clone(),
            target: target.clone(),
            text: text.trim().to_string(),
            expr: parsed,
            applied: self.bindings.get(&id).and_then(|b| b.applied),
            drive,
        };
        let mut bindings = self.bindings.clone();
        bindings.insert(id.clone(), binding.clone());
        let order = self.rebuild_order(&self.vars, &bindings)?;
        self.bindings = bindings;
        self.order = order;
        self.mark_derived(&binding);
        self.set_label(&target, text.trim());
        Ok(id)
    }

    fn mark_derived(&mut self, b: &Binding) {
        let derived = || Endpoint::Derived { from: Derivation::Binding { binding: b.id.clone() } };
        let edit = |line: &mut LineSegment| match &b.drive {
            Drive::Length { .. } | Drive::Angle { .. } => line.p2 = derived(),
            Drive::Arc { pivot_is_p1, .. } => {
                if *pivot_is_p1 {
                    line.p2 = derived();
                } else {
                    line.p1 = derived();
                }
            }
            Drive::Area { .. } => {
                line.p1 = derived();
                line.p2 = derived();
            }
        };
        for l in b.drive_lines() {
            if let Some(line) = self.lines.get_mut(l) {
                edit(line);
            }
            if let Some(line) = self.pristine_lines.get_mut(l) {
                edit(line);
            }
        }
        if let Drive::Arc { arc, driven_is_b, pivot_is_p1, .. } = &b.drive {
            let side = if *pivot_is_p1 { 1.0 } else { -1.0 };
            if let Some(a) = self.arcs.get_mut(arc) {
                if *driven_is_b {
                    a.side_b = side;
                } else {
                    a.side_a = side;
                }
            }
        }
    }

    fn apply_binding(&mut self, id: &str, value: f64) -> Result<(), EngineError> {
        let drive = self.bindings[id].drive.clone();
        let domain = |what: &str| EngineError::Expr(ExprError::DomainError(format!("{what} {value}")));
        match drive {
            Drive::Length { line, dir } => {
                if value < 0.0 {
                    return Err(domain("negative length"));
                }
                let l = self.lines.get_mut(&line).expect("driven line exists");
                l.b = l.a + dir * value;
            }
            Drive::Angle { line, len } => {
                let (s, c) = value.to_radians().sin_cos();
                let d = self.plane.world_of(Plane2::new(c * len, s * len)) - self.plane.origin;
                let l = self.lines.get_mut(&line).expect("driven line exists");
                l.b = l.a + d;
            }
            Drive::Arc { arc, line, reference, driven_is_b, pivot_is_p1, len, sign } => {
                let a = &self.arcs[&arc];
                let r = &self.lines[&reference];
                let ref_side = if driven_is_b { a.side_a } else { a.side_b };
                let dref = self.plane.direction_coords(&((r.b - r.a) * ref_side));
                let n = dref.a.hypot(dref.b);
                if n == 0.0 {
                    return Err(SketchError::DegenerateGeometry(format!("line {reference} has zero length")).into());
                }
                let (s, c) = (sign * value).to_radians().sin_cos();
                let (x, y) = (dref.a / n, dref.b / n);
                let rotated = Plane2::new(c * x - s * y, s * x + c * y);
                let d = (self.plane.world_of(rotated) - self.plane.origin) * len;
                let l = self.lines.get_mut(&line).expect("driven line exists");
                if pivot_is_p1 {
                    l.b = l.a + d;
                } else {
                    l.a = l.b + d;
                }
            }
            Drive::Area { lines, centroid, area0 } => {
                if value < 0.0 {
                    return Err(domain("negative area"));
                }
                let k = (value / area0).sqrt();
                for (id, a0, b0) in lines {
                    let l = self.lines.get_mut(&id).expect("driven line exists");
                    l.a = centroid + (a0 - centroid) * k;
                    l.b = centroid + (b0 - centroid) * k;
                }
            }
        }
        self.resolve_perpendiculars();
        Ok(())
    }

    fn resolve_perpendiculars(&mut self) {
        let ids: Vec<String> = self.lines.values().filter(|l| l.perpendicular_to.is_some()).map(|l| l.id.clone()).collect();
        for id in ids {
            self.resolve_one(&id);
        }
    }

    fn resolve_one(&mut self, id: &str) {
        let reference = self.lines[id]
            .perpendicular_to
            .as_ref()
            .and_then(|r| self.lines.get(r))
            .map(|r| (r.a, r.b));
        let line = self.lines.get_mut(id).expect("line exists");
        sketch::resolve_line(line, &self.tracked, reference.as_ref().map(|(a, b)| (a, b)));
    }

    // ----- labels --------------------------------------------------------

    /// Apply a label edit. Targets: an entity id with optional `.length`,
    /// `.angle` or `.area`; `graphN.x` / `graphN.y`; `out:<name>`;
    /// `var:<name>`; `spacing`.
    pub fn label(&mut self, target: &str, text: &str) -> Result<LabelOutcome, EngineError> {
        let target = target.trim();
        if target == "spacing" {
            let s: f64 = text
                .trim()
                .parse()
                .map_err(|_| ExprError::SyntaxError { pos: 0, message: format!("expected a number, got `{text}`") })?;
            if !(s >= 0.0 && s.is_finite()) {
                return Err(ExprError::DomainError(format!("strobe spacing {s}")).into());
            }
            self.strobe_spacing = s;
            return Ok(LabelOutcome::Spacing);
        }
        if let Some(name) = target.strip_prefix("var:") {
            self.define_expression(name, text, false)?;
            return Ok(LabelOutcome::Variable(name.trim().to_string()));
        }
        let (head, prop) = target.split_once('.').unwrap_or((target, ""));
        if self.graphs.contains_key(head) {
            let axis = match prop {
                "x" => Axis::X,
                "y" | "" => Axis::Y,
                _ => return Err(EngineError::UnknownEntity(target.to_string())),
            };
            self.bind_axis(head, axis, text)?;
            return Ok(LabelOutcome::Axis(head.to_string()));
        }
        let param = self.param_for(target)?;
        if let ParamRef::Output(_) = param {
            return self.bind_parameter(param, text).map(LabelOutcome::Binding);
        }
        let trimmed = text.trim();
        if expr::is_identifier(trimmed) && !self.vars.contains_key(trimmed) {
            self.define_variable(param, trimmed)?;
            return Ok(LabelOutcome::Variable(trimmed.to_string()));
        }
        if expr::is_identifier(trimmed) {
            // an existing name: bind a static parameter to it, a measured one collides
            if let Err(e) = self.make_drive(&param, &param.to_string()) {
                return Err(match e {
                    EngineError::NotBindable(_) => EngineError::NameCollision(trimmed.to_string()),
                    other => other,
                });
            }
        }
        self.bind_parameter(param, text).map(LabelOutcome::Binding)
    }

    // ----- plots, recordings, strobes ------------------------------------

    pub fn place_graph(&mut self, rect: PlaneRect) -> String {
        let id = self.fresh_id("graph");
        self.graphs.insert(id.clone(), GraphPlot::new(id.clone(), rect));
        id
    }

    pub fn bind_axis(&mut self, graph: &str, axis: Axis, text: &str) -> Result<(), EngineError> {
        let vars = &self.vars;
        let g = self
            .graphs
            .get_mut(graph)
            .ok_or_else(|| EngineError::UnknownEntity(graph.to_string()))?;
        let mut candidate = g.clone();
        candidate.bind_axis(axis, text, &|n| vars.contains_key(n))?;
        *g = candidate;
        Ok(())
    }

    fn check_entity(&self, id: &str) -> Result<(), EngineError> {
        if self.tracked.contains_key(id) {
            Ok(())
        } else {
            Err(EngineError::UnknownEntity(id.to_string()))
        }
    }

    pub fn start_recording(&mut self, entity: &str) -> Result<(), EngineError> {
        self.check_entity(entity)?;
        self.recordings
            .entry(entity.to_string())
            .or_insert_with(|| MotionRecording::new(entity))
            .start()?;
        Ok(())
    }

    pub fn stop_recording(&mut self, entity: &str) -> Result<(), EngineError> {
        self.check_entity(entity)?;
        match self.recordings.get_mut(entity) {
            Some(r) => Ok(r.stop()?),
            None => Err(VizError::NotRecording(entity.to_string()).into()),
        }
    }

    /// Start or stop recording; returns whether the entity is now recording.
    pub fn toggle_recording(&mut self, entity: &str) -> Result<bool, EngineError> {
        if self.recordings.get(entity).is_some_and(|r| r.active) {
            self.stop_recording(entity)?;
            Ok(false)
        } else {
            self.start_recording(entity)?;
            Ok(true)
        }
    }

    /// Show or hide stroboscopic markers for a recording; returns whether shown.
    pub fn toggle_strobes(&mut self, entity: &str) -> Result<bool, EngineError> {
        self.check_entity(entity)?;
        if !self.recordings.contains_key(entity) {
            return Err(VizError::NotRecording(entity.to_string()).into());
        }
        if self.strobes_shown.remove(entity) {
            Ok(false)
        } else {
            self.strobes_shown.insert(entity.to_string());
            Ok(true)
        }
    }

    pub fn strobes(&self, entity: &str) -> Option<StrobeSet> {
        self.recordings.get(entity).map(|r| viz::strobe_markers(r, self.strobe_spacing))
    }

    // ----- tick ----------------------------------------------------------

    /// Advance one frame and return the changes since the last emitted state.
    pub fn tick(&mut self, input: &FrameInput<'_>) -> StateDiff {
        self.advance(input, true);
        self.take_diff()
    }

    /// Re-evaluate the sketch against `input`. With `sample` set, plots,
    /// recordings and the variable log take one sample, at most once per frame.
    pub fn advance(&mut self, input: &FrameInput<'_>, sample: bool) {
        let camera = input.camera;
        self.frame = Some(FrameStamp { index: input.index, t: input.t });
        self.camera = Some(*camera);

        // 1. tracked entities
        for ent in self.tracked.values_mut() {
            match &ent.source {
                TrackSource::Color { model } => {
                    let key = (ent.id.clone(), input.index);
                    let r = match (self.track_cache.get(&key), input.frame) {
                        (Some(r), _) => *r,
                        (None, Some(frame)) => {
                            let r = tracker::track(frame, model);
                            self.track_cache.insert(key, r);
                            r
                        }
                        (None, None) => TrackResult { centroid: ent.screen_pos, pixel_area: 0, found: false },
                    };
                    ent.apply(&r, camera, &self.plane, input.t);
                }
                TrackSource::External { name } => {
                    let p = input.points.and_then(|p| p.get(name)).copied();
                    ent.apply_external(p, camera, &self.plane, input.t);
                }
            }
        }

        // 2. attached endpoints, annotation offsets, perpendicular feet
        let ids: Vec<String> = self.lines.keys().cloned().collect();
        for id in &ids {
            self.resolve_one(id);
        }

        // 3-5. variables and bindings in dependency order
        let mut env = self.env();
        for node in self.order.clone() {
            match node {
                NodeKey::Var(name) => {
                    let result = match &self.vars[&name].source {
                        VarSource::Measured(p) => self.measure(p),
                        VarSource::Expression { expr, .. } => expr::evaluate(expr, &env).map_err(Into::into),
                    };
                    match result {
                        Ok(v) => {
                            self.vars[&name].value = v;
                            self.faults.remove(&name);
                        }
                        Err(e) => {
                            self.faults.insert(name.clone(), Fault::from_error(&e));
                        }
                    }
                    env.insert(name.clone(), self.vars[&name].value);
                }
                NodeKey::Binding(id) => {
                    let result = expr::evaluate(&self.bindings[&id].expr, &env)
                        .map_err(EngineError::from)
                        .and_then(|v| self.apply_binding(&id, v).map(|()| v));
                    match result {
                        Ok(v) => {
                            self.bindings[&id].applied = Some(v);
                            self.faults.remove(&id);
                        }
                        Err(e) => {
                            self.faults.insert(id.clone(), Fault::from_error(&e));
                        }
                    }
                }
            }
        }

        // arc vertices follow their lines
        for arc in self.arcs.values_mut() {
            if let (Some(la), Some(lb)) = (self.lines.get(&arc.line_a), self.lines.get(&arc.line_b)) {
                arc.vertex = sketch::arc_vertex(&self.plane, la, lb);
            }
        }

        // 6. samples, once per frame
        if sample && self.last_sampled != Some(input.index) {
            self.last_sampled = Some(input.index);
            for g in self.graphs.values_mut() {
                g.append_samples(&env, input.t);
            }
            for rec in self.recordings.values_mut() {
                if rec.active {
                    if let Some(ent) = self.tracked.get(&rec.entity_id) {
                        rec.push(input.t, ent.world_pos);
                    }
                }
            }
            if !self.vars.is_empty() {
                self.log.push(input.t, self.vars.values().map(|v| (v.name.as_str(), v.value)));
            }
        }
    }

    /// Current state as clients see it.
    pub fn snapshot(&self) -> StateSnapshot {
        let lines = self
            .lines
            .values()
            .map(|l| {
                let view = LineView {
                    line: l.clone(),
                    length: l.length(),
                    angle: sketch::measure_line_angle(&self.plane, l).ok(),
                };
                (l.id.clone(), view)
            })
            .collect();
        let arcs = self
            .arcs
            .values()
            .map(|a| (a.id.clone(), ArcView { arc: a.clone(), value: self.measure(&ParamRef::ArcAngle(a.id.clone())).ok() }))
            .collect();
        let areas = self
            .areas
            .values()
            .map(|a| {
                let vertices = self.area_lines(a).map(|ls| sketch::area_vertices(&ls)).unwrap_or_default();
                let value = self.measure(&ParamRef::Area(a.id.clone())).ok();
                (a.id.clone(), AreaView { area: a.clone(), vertices, value })
            })
            .collect();
        StateSnapshot {
            frame: self.frame,
            camera: self.camera,
            tracked: self.tracked.clone(),
            lines,
            arcs,
            areas,
            variables: self.vars.values().map(|v| (v.name.clone(), v.value)).collect(),
            outputs: self.vars.values().filter(|v| v.output).map(|v| (v.name.clone(), v.value)).collect(),
            bindings: self
                .bindings
                .values()
                .map(|b| {
                    let view = BindingView { target: b.target.clone(), text: b.text.clone(), value: b.applied };
                    (b.id.clone(), view)
                })
                .collect(),
            faults: self.faults.clone(),
            graphs: self.graphs.clone(),
            recordings: self.recordings.clone(),
            strobes: self
                .strobes_shown
                .iter()
                .filter_map(|e| self.strobes(e).map(|s| (e.clone(), s)))
                .collect(),
        }
    }

    /// Diff against the last emitted state, then remember the current one.
    pub fn take_diff(&mut self) -> StateDiff {
        let snap = self.snapshot();
        let diff = self.emitted.diff(&snap);
        self.emitted = snap;
        diff
    }

    /// The last state handed out by [`Engine::take_diff`].
    pub fn emitted(&self) -> &StateSnapshot {
        &self.emitted
    }

    /// Forget everything time-dependent so frames can be replayed from the
    /// start with the current sketch. Track results stay cached.
    pub fn reset_dynamic(&mut self) {
        for (id, ent) in &self.pristine_tracked {
            self.tracked.insert(id.clone(), ent.clone());
        }
        for (id, line) in &self.pristine_lines {
            self.lines.insert(id.clone(), line.clone());
        }
        for v in self.vars.values_mut() {
            v.value = v.initial;
        }
        for b in self.bindings.values_mut() {
            b.applied = None;
        }
        for g in self.graphs.values_mut() {
            g.clear();
        }
        for r in self.recordings.values_mut() {
            r.samples.clear();
        }
        self.faults.clear();
        self.log.clear();
        self.last_sampled = None;
    }
}

impl Binding {
    fn drive_lines(&self) -> Vec<&str> {
        self.drive.driven_lines()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::sketch::Stroke;

    fn camera() -> CameraState {
        // 400 px per meter on z = 0, +y up on screen
        CameraState::look_at(
            World3::new(0.0, 0.0, 1.5),
            World3::zeros(),
            World3::y(),
            Intrinsics::synthetic(640, 480),
            640,
            480,
        )
        .unwrap()
    }

    fn px(p: (f64, f64)) -> (f64, f64) {
        let s = camera().project_to_screen(&World3::new(p.0, p.1, 0.0)).unwrap();
        (s.u, s.v)
    }

    fn stroke(a: (f64, f64), b: (f64, f64)) -> Stroke {
        Stroke::from_screen(&[px(a), px(b)])
    }

    fn input(cam: &CameraState, index: usize) -> FrameInput<'_> {
        FrameInput { index, t: index as f64 * 0.05, camera: cam, frame: None, points: None }
    }

    /// Two static lines from the origin: along +x and at 40 degrees, with an arc.
    fn wedge() -> (Engine, String) {
        let mut e = Engine::new(ReferencePlane::xy());
        let cam = camera();
        e.add_stroke(&stroke((0.0, 0.0), (0.5, 0.0)), &cam, false).unwrap();
        let (s, c) = 40f64.to_radians().sin_cos();
        e.add_stroke(&stroke((0.0, 0.0), (0.5 * c, 0.5 * s)), &cam, false).unwrap();
        let arc = e
            .add_stroke(&stroke((0.3, 0.0), (0.3 * c, 0.3 * s)), &cam, false)
            .unwrap();
        (e, arc)
    }

    #[test]
    fn param_ref_text_round_trip() {
        for p in [
            ParamRef::LineLength("line3".into()),
            ParamRef::LineAngle("line3".into()),
            ParamRef::ArcAngle("arc4".into()),
            ParamRef::Area("area9".into()),
            ParamRef::Output("dino-size".into()),
        ] {
            assert_eq!(ParamRef::try_from(p.to_string()).unwrap(), p);
        }
        assert_eq!(ParamRef::try_from("arc4".to_string()).unwrap(), ParamRef::ArcAngle("arc4".into()));
        assert!(ParamRef::try_from("graph2.x".to_string()).is_err());
    }

    #[test]
    fn order_of_chain_and_ties() {
        let mut g = DepGraph::new();
        let v = |s: &str| NodeKey::Var(s.into());
        g.insert(v("c"), [v("b")].into());
        g.insert(v("b"), [v("a")].into());
        g.insert(v("a"), BTreeSet::new());
        assert_eq!(resolve_order(&g).unwrap(), vec![v("a"), v("b"), v("c")]);

        let mut g = DepGraph::new();
        g.insert(v("zeta"), BTreeSet::new());
        g.insert(v("alpha"), BTreeSet::new());
        g.insert(v("mid"), BTreeSet::new());
        assert_eq!(resolve_order(&g).unwrap(), vec![v("alpha"), v("mid"), v("zeta")]);

        let mut g = DepGraph::new();
        g.insert(v("a"), [v("b")].into());
        g.insert(v("b"), [v("a")].into());
        g.insert(v("free"), BTreeSet::new());
        match resolve_order(&g) {
            Err(EngineError::CyclicDependency(names)) => assert_eq!(names, vec!["a", "b"]),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn naming_an_arc_defines_a_measured_variable() {
        let (mut e, arc) = wedge();
        let cam = camera();
        assert_eq!(e.label(&arc, "angle").unwrap(), LabelOutcome::Variable("angle".into()));
        e.tick(&input(&cam, 0));
        assert!((e.env()["angle"] - 40.0).abs() < 1e-9);
        assert_eq!(e.arcs()[&arc].label.as_deref(), Some("angle"));
    }

    #[test]
    fn empty_and_duplicate_names_rejected() {
        let (mut e, arc) = wedge();
        assert!(matches!(e.define_variable(ParamRef::ArcAngle(arc.clone()), ""), Err(EngineError::InvalidName(_))));
        e.define_variable(ParamRef::LineLength("line1".into()), "len").unwrap();
        assert_eq!(
            e.define_variable(ParamRef::ArcAngle(arc), "len"),
            Err(EngineError::NameCollision("len".into()))
        );
    }

    #[test]
    fn existing_name_on_dynamic_param_collides() {
        let mut e = Engine::new(ReferencePlane::xy());
        let cam = camera();
        // an external point stands in for a tracked object
        let mut pts = ExternalPoints::new();
        pts.insert("hand".into(), World3::new(0.2, 0.2, 0.0));
        let t = e.track_external("hand", &cam, Some(&pts), 0.0).unwrap();
        let l1 = e.add_stroke(&stroke((-0.3, -0.2), (0.2, 0.2)), &cam, false).unwrap();
        assert!(e.lines()[&l1].is_dynamic(), "{:?}", e.lines()[&l1]);
        let l2 = e.add_stroke(&stroke((-0.3, 0.1), (-0.3, -0.3)), &cam, false).unwrap();
        e.label(&l2, "size").unwrap();
        assert_eq!(e.label(&l1, "size"), Err(EngineError::NameCollision("size".into())));
        assert!(matches!(e.label(&l1, "size * 2"), Err(EngineError::NotBindable(_))));
        assert_eq!(t, "track1");
    }

    #[test]
    fn existing_name_on_static_param_binds() {
        let (mut e, arc) = wedge();
        let cam = camera();
        e.label("var:target", "25").unwrap();
        assert_eq!(e.label(&arc, "target").unwrap(), LabelOutcome::Binding(format!("{arc}.angle")));
        e.tick(&input(&cam, 0));
        let v = e.measure(&ParamRef::ArcAngle(arc.clone())).unwrap();
        assert!((v - 25.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn bisector_follows_angle_over_half() {
        let (mut e, arc) = wedge();
        let cam = camera();
        e.label(&arc, "angle").unwrap();
        // second arc between line1 and a new static line at 10 degrees
        let (s, c) = 10f64.to_radians().sin_cos();
        e.add_stroke(&stroke((0.0, 0.0), (0.4 * c, 0.4 * s)), &cam, false).unwrap();
        let arc2 = e.add_stroke(&stroke((0.3, 0.0), (0.3 * c, 0.3 * s)), &cam, false).unwrap();
        assert!(arc2.starts_with("arc"), "{arc2}");
        e.label(&arc2, "angle / 2").unwrap();
        e.tick(&input(&cam, 0));
        let half = e.measure(&ParamRef::ArcAngle(arc2.clone())).unwrap();
        assert!((half - 20.0).abs() < 1e-9, "{half}");
        assert_eq!(e.bindings()[&format!("{arc2}.angle")].applied, Some(20.0));
    }

    #[test]
    fn cycle_rejected_and_state_unchanged() {
        let mut e = Engine::new(ReferencePlane::xy());
        let cam = camera();
        e.label("var:b", "1").unwrap();
        e.label("var:a", "b + 1").unwrap();
        e.tick(&input(&cam, 0));
        let before_snap = e.snapshot();
        let before_vars = e.variables().clone();
        let before_order = e.order().to_vec();
        let err = e.label("var:b", "a + 1").unwrap_err();
        assert_eq!(err.code(), "CyclicDependency");
        assert_eq!(e.snapshot(), before_snap);
        assert_eq!(e.variables(), &before_vars);
        assert_eq!(e.order(), &before_order[..]);
    }

    #[test]
    fn self_binding_through_geometry_is_a_cycle() {
        let (mut e, arc) = wedge();
        e.label(&arc, "angle").unwrap();
        let err = e.bind_parameter(ParamRef::ArcAngle(arc), "angle / 2").unwrap_err();
        assert_eq!(err.code(), "CyclicDependency");
        assert!(e.bindings().is_empty());
    }

    #[test]
    fn faults_are_isolated_and_hold_last_value() {
        let mut e = Engine::new(ReferencePlane::xy());
        let cam = camera();
        e.label("var:k", "2").unwrap();
        e.label("var:inv", "1 / (k - 2)").unwrap();
        e.label("var:twice", "k * 2").unwrap();
        let d = e.tick(&input(&cam, 0));
        assert_eq!(d.faults["inv"].code, "DivisionByZero");
        assert_eq!(e.env()["twice"], 4.0);
        e.label("var:k", "3").unwrap();
        e.tick(&input(&cam, 1));
        assert_eq!(e.env()["inv"], 1.0);
        assert!(!e.faults().contains_key("inv"));
        e.label("var:k", "2").unwrap();
        let d = e.tick(&input(&cam, 2));
        assert_eq!(e.env()["inv"], 1.0, "held last good value");
        assert_eq!(e.env()["twice"], 4.0);
        assert!(d.faults.contains_key("inv"));
    }

    #[test]
    fn unknown_identifier_and_syntax_errors() {
        let (mut e, arc) = wedge();
        assert_eq!(e.label(&arc, "nope + 1").unwrap_err().code(), "UnknownIdentifier");
        assert_eq!(e.label(&arc, "1 +").unwrap_err().code(), "SyntaxError");
        assert_eq!(e.label("arc99", "x").unwrap_err().code(), "UnknownEntity");
    }

    #[test]
    fn retick_is_a_fixed_point() {
        let (mut e, arc) = wedge();
        let cam = camera();
        e.label(&arc, "angle").unwrap();
        let g = e.place_graph(PlaneRect::from_corners(Plane2::new(0.0, 0.0), Plane2::new(0.2, 0.1)));
        e.label(&format!("{g}.y"), "angle").unwrap();
        let first = e.tick(&input(&cam, 0));
        assert!(!first.is_empty());
        let again = e.tick(&input(&cam, 0));
        assert!(again.is_empty(), "{again:?}");
        assert_eq!(e.graphs()[&g].series[0].samples.len(), 1);
    }

    #[test]
    fn length_and_area_bindings_move_geometry() {
        let mut e = Engine::new(ReferencePlane::xy());
        let cam = camera();
        let l1 = e.add_stroke(&stroke((0.0, 0.0), (0.4, 0.0)), &cam, false).unwrap();
        e.label("var:len", "0.25").unwrap();
        e.label(&l1, "len").unwrap();
        e.tick(&input(&cam, 0));
        assert!((e.lines()[&l1].length() - 0.25).abs() < 1e-12);
        assert_eq!(e.lines()[&l1].a, World3::zeros());

        // square 0.2 x 0.2 from three strokes plus closure
        let mut e = Engine::new(ReferencePlane::xy());
        e.add_stroke(&stroke((0.0, 0.0), (0.2, 0.0)), &cam, false).unwrap();
        e.add_stroke(&stroke((0.2, 0.0), (0.2, 0.2)), &cam, false).unwrap();
        e.add_stroke(&stroke((0.2, 0.2), (0.0, 0.2)), &cam, false).unwrap();
        let area = e.add_stroke(&stroke((0.0, 0.2), (0.0, 0.0)), &cam, false).unwrap();
        assert!(area.starts_with("area"), "{area}");
        e.label("var:target", "0.09").unwrap();
        e.label(&area, "target").unwrap();
        e.tick(&input(&cam, 0));
        let a = e.measure(&ParamRef::Area(area)).unwrap();
        assert!((a - 0.09).abs() < 1e-12, "{a}");
    }

    #[test]
    fn output_channels_publish_values() {
        let (mut e, arc) = wedge();
        let cam = camera();
        e.label(&arc, "angle").unwrap();
        e.label("out:dino-size", "angle / 40").unwrap();
        let d = e.tick(&input(&cam, 0));
        assert!((d.outputs["dino-size"] - 1.0).abs() < 1e-9);
        assert_eq!(e.log().columns(), ["angle", "dino-size"]);
    }

    #[test]
    fn diffs_rebuild_the_snapshot() {
        let (mut e, arc) = wedge();
        let cam = camera();
        let mut pts = ExternalPoints::new();
        let mut mirror = StateSnapshot::default();
        e.label(&arc, "angle").unwrap();
        let g = e.place_graph(PlaneRect::from_corners(Plane2::new(0.0, 0.0), Plane2::new(0.2, 0.1)));
        e.label(&format!("{g}.y"), "angle").unwrap();
        pts.insert("hand".into(), World3::new(0.1, 0.1, 0.0));
        let t = e.track_external("hand", &cam, Some(&pts), 0.0).unwrap();
        e.start_recording(&t).unwrap();
        e.toggle_strobes(&t).unwrap();
        for k in 0..300 {
            pts.insert("hand".into(), World3::new(0.1 + 0.002 * k as f64, 0.1, 0.0));
            let inp = FrameInput { points: Some(&pts), ..input(&cam, k) };
            let d = e.tick(&inp);
            let json = serde_json::to_string(&d).unwrap();
            let back: StateDiff = serde_json::from_str(&json).unwrap();
            mirror.apply(&back);
            if k == 150 {
                e.label("var:half", "angle / 2").unwrap();
                e.label(&format!("{g}.y"), "angle, half").unwrap();
            }
        }
        assert_eq!(mirror, e.snapshot());
        assert_eq!(e.graphs()[&g].series[0].samples.len(), 149, "rebinding at frame 150 cleared the buffer");
    }

    #[test]
    fn reset_then_replay_matches_first_pass() {
        let (mut e, arc) = wedge();
        let cam = camera();
        e.label(&arc, "angle").unwrap();
        e.label("var:t2", "angle * 2").unwrap();
        for k in 0..5 {
            e.tick(&input(&cam, k));
        }
        let first = e.snapshot();
        let log = e.log().to_csv();
        e.reset_dynamic();
        for k in 0..5 {
            e.advance(&input(&cam, k), true);
        }
        assert_eq!(e.snapshot(), first);
        assert_eq!(e.log().to_csv(), log);
    }
}
