//! Sketch entities, stroke classification and measurement.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraState, GeometryError, Plane2, ReferencePlane, Screen2, World3};
use crate::tracker::TrackedEntity;

/// Snap radius as a fraction of the shorter image side.
pub const SNAP_FRACTION: f64 = 0.025;
/// Allowed deviation from a right angle for a perpendicular constraint.
pub const PERPENDICULAR_TOL_DEG: f64 = 10.0;
/// Below this angle between two lines the intersection is considered unreliable.
pub const PARALLEL_LIMIT_DEG: f64 = 1.0;
/// Endpoints closer than this are treated as joined.
pub const JOIN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SketchError {
    #[error("stroke chord {chord:.2} px is shorter than the snap radius {snap:.2} px")]
    StrokeTooShort { chord: f64, snap: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("no tracked object near either end of the stroke")]
    NoAnchor,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl SketchError {
    pub fn code(&self) -> &'static str {
        match self {
            SketchError::StrokeTooShort { .. } => "StrokeTooShort",
            SketchError::DegenerateGeometry(_) => "DegenerateGeometry",
            SketchError::NoAnchor => "NoAnchor",
            SketchError::Geometry(g) => g.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Derivation {
    /// Position written by a parameter binding.
    Binding { binding: String },
    /// Foot of the perpendicular from the other endpoint onto the constraint's reference line.
    Perpendicular,
    /// Other endpoint plus a fixed world-frame offset.
    Offset { offset: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Endpoint {
    Fixed { pos: [f64; 3] },
    Attached { entity: String },
    Derived { from: Derivation },
}

impl Endpoint {
    pub fn fixed(p: World3) -> Self {
        Endpoint::Fixed { pos: [p.x, p.y, p.z] }
    }

    pub fn attached(id: impl Into<String>) -> Self {
        Endpoint::Attached { entity: id.into() }
    }

    pub fn attached_to(&self) -> Option<&str> {
        match self {
            Endpoint::Attached { entity } => Some(entity),
            _ => None,
        }
    }
}

fn w3(a: [f64; 3]) -> World3 {
    World3::new(a[0], a[1], a[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LineKind {
    Static,
    Dynamic,
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LineSegment {
    pub id: String,
    pub p1: Endpoint,
    pub p2: Endpoint,
    pub kind: LineKind,
    pub label: Option<String>,
    pub perpendicular_to: Option<String>,
    /// Resolved position of `p1`.
    pub a: World3,
    /// Resolved position of `p2`.
    pub b: World3,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn is_dynamic(&self) -> bool {
        self.p1.attached_to().is_some() || self.p2.attached_to().is_some()
    }

    pub fn attached_entities(&self) -> impl Iterator<Item = &str> {
        self.p1.attached_to().into_iter().chain(self.p2.attached_to())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AngleArc {
    pub id: String,
    pub line_a: String,
    pub line_b: String,
    /// +1 when the arc opens along `p1 -> p2` of the line, -1 otherwise.
    pub side_a: f64,
    pub side_b: f64,
    pub vertex: World3,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AreaPolygon {
    pub id: String,
    pub boundary: Vec<String>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub u: f64,
    pub v: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<StrokePoint>,
}

impl Stroke {
    pub fn from_screen(points: &[(f64, f64)]) -> Self {
        Stroke {
            points: points
                .iter()
                .enumerate()
                .map(|(i, &(u, v))| StrokePoint { u, v, t: i as f64 * 0.01 })
                .collect(),
        }
    }

    pub fn start(&self) -> Screen2 {
        let p = self.points.first().expect("stroke has points");
        Screen2::new(p.u, p.v)
    }

    pub fn end(&self) -> Screen2 {
        let p = self.points.last().expect("stroke has points");
        Screen2::new(p.u, p.v)
    }
}

/// What a stroke turns into.
#[derive(Debug, Clone, PartialEq)]
pub enum SketchIntent {
    NewLine {
        p1: Endpoint,
        p2: Endpoint,
        a: World3,
        b: World3,
        kind: LineKind,
        perpendicular_to: Option<String>,
    },
    NewAngle {
        line_a: String,
        line_b: String,
        side_a: f64,
        side_b: f64,
        vertex: World3,
    },
    /// Close `chain` with a new line from the last chain end back to the first.
    NewArea {
        chain: Vec<String>,
        p1: Endpoint,
        p2: Endpoint,
        a: World3,
        b: World3,
    },
    NewAnnotation {
        anchor: String,
        offset: World3,
    },
}

/// Read-only view of the sketch used for classification.
pub struct SketchContext<'a> {
    pub lines: &'a IndexMap<String, LineSegment>,
    pub tracked: &'a IndexMap<String, TrackedEntity>,
    pub camera: &'a CameraState,
    pub plane: &'a ReferencePlane,
}

pub fn snap_radius(camera: &CameraState) -> f64 {
    SNAP_FRACTION * f64::from(camera.width.min(camera.height))
}

fn seg_distance(p: Screen2, a: Screen2, b: Screen2) -> f64 {
    let (dx, dy) = (b.u - a.u, b.v - a.v);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.u - a.u) * dx + (p.v - a.v) * dy) / len2).clamp(0.0, 1.0)
    };
    p.distance(&Screen2::new(a.u + t * dx, a.v + t * dy))
}

/// Closest point to `p` on the infinite line through `a`, `b`.
pub fn foot_on_line(p: &World3, a: &World3, b: &World3) -> Option<World3> {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return None;
    }
    Some(a + d * ((p - a).dot(&d) / len2))
}

fn closest_on_segment(p: &World3, a: &World3, b: &World3) -> World3 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    a + d * ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
}

struct ProjectedLine<'a> {
    line: &'a LineSegment,
    sa: Screen2,
    sb: Screen2,
}

fn joined(x: &Endpoint, px: &World3, y: &Endpoint, py: &World3) -> bool {
    match (x.attached_to(), y.attached_to()) {
        (Some(i), Some(j)) => i == j,
        _ => (px - py).norm() <= JOIN_TOL,
    }
}

fn endpoint_of(line: &LineSegment, second: bool) -> (&Endpoint, World3) {
    if second {
        (&line.p2, line.b)
    } else {
        (&line.p1, line.a)
    }
}

/// Endpoint a new line should share with an existing line end.
fn share_endpoint(ep: &Endpoint, pos: World3) -> Endpoint {
    match ep {
        Endpoint::Attached { entity } => Endpoint::attached(entity.clone()),
        _ => Endpoint::fixed(pos),
    }
}

impl SketchContext<'_> {
    fn projected(&self) -> Vec<ProjectedLine<'_>> {
        self.lines
            .values()
            .filter_map(|line| {
                let sa = self.camera.project_to_screen(&line.a).ok()?;
                let sb = self.camera.project_to_screen(&line.b).ok()?;
                Some(ProjectedLine { line, sa, sb })
            })
            .collect()
    }

    fn nearest_tracked(&self, p: Screen2, snap: f64, exclude: Option<&str>) -> Option<&TrackedEntity> {
        self.tracked
            .values()
            .filter(|e| Some(e.id.as_str()) != exclude)
            .filter_map(|e| {
                let s = self.camera.project_to_screen(&e.world_pos).ok()?;
                let d = s.distance(&p);
                (d <= snap).then_some((d, e))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, e)| e)
    }

    /// Lines whose body (away from both endpoints) passes within the snap radius.
    fn body_hits<'p>(&self, proj: &'p [ProjectedLine<'_>], p: Screen2, snap: f64) -> Vec<(f64, &'p ProjectedLine<'p>)> {
        let mut hits: Vec<_> = proj
            .iter()
            .filter(|pl| pl.sa.distance(&p) > snap && pl.sb.distance(&p) > snap)
            .filter_map(|pl| {
                let d = seg_distance(p, pl.sa, pl.sb);
                (d <= snap).then_some((d, pl))
            })
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.line.id.cmp(&b.1.line.id)));
        hits
    }

    /// Line endpoints within the snap radius: (distance, line, is_p2).
    fn end_hits<'p>(&self, proj: &'p [ProjectedLine<'_>], p: Screen2, snap: f64) -> Vec<(f64, &'p ProjectedLine<'p>, bool)> {
        let mut hits = Vec::new();
        for pl in proj {
            for (second, s) in [(false, pl.sa), (true, pl.sb)] {
                let d = s.distance(&p);
                if d <= snap {
                    hits.push((d, pl, second));
                }
            }
        }
        hits.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.line.id.cmp(&b.1.line.id))
                .then(a.2.cmp(&b.2))
        });
        hits
    }

    fn is_open_end(&self, line: &LineSegment, second: bool) -> bool {
        let (ep, pos) = endpoint_of(line, second);
        !self.lines.values().any(|other| {
            other.id != line.id
                && [false, true].iter().any(|&s| {
                    let (oe, op) = endpoint_of(other, s);
                    joined(ep, &pos, oe, &op)
                })
        })
    }

    /// Path of joined lines leaving `from` through its `exit` end and
    /// arriving at `to` through the end opposite `to_open`.
    fn chain_between(&self, from: &str, from_open_second: bool, to: &str, to_open_second: bool) -> Option<Vec<String>> {
        // depth-first over simple paths; sketches are small
        fn dfs(
            ctx: &SketchContext<'_>,
            cur: &str,
            exit_second: bool,
            target: &str,
            target_entry_second: bool,
            path: &mut Vec<String>,
        ) -> bool {
            let line = &ctx.lines[cur];
            let (ep, pos) = endpoint_of(line, exit_second);
            for other in ctx.lines.values() {
                if path.iter().any(|p| p == &other.id) {
                    continue;
                }
                for entry_second in [false, true] {
                    let (oe, op) = endpoint_of(other, entry_second);
                    if !joined(ep, &pos, oe, &op) {
                        continue;
                    }
                    path.push(other.id.clone());
                    if other.id == target {
                        if entry_second == target_entry_second {
                            return true;
                        }
                    } else if dfs(ctx, &other.id, !entry_second, target, target_entry_second, path) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }
        let mut path = vec![from.to_string()];
        dfs(self, from, !from_open_second, to, !to_open_second, &mut path).then_some(path)
    }
}

/// Decide what a stroke means. Precedence: angle between two line bodies,
/// then closing an open chain into an area, then a line whose ends snap to
/// tracked objects / line ends / line bodies, then a free static line.
pub fn classify_stroke(
    stroke: &Stroke,
    ctx: &SketchContext<'_>,
    annotation: bool,
) -> Result<SketchIntent, SketchError> {
    if stroke.points.len() < 2 {
        return Err(SketchError::StrokeTooShort { chord: 0.0, snap: snap_radius(ctx.camera) });
    }
    let snap = snap_radius(ctx.camera);
    let (s, e) = (stroke.start(), stroke.end());
    let chord = s.distance(&e);
    if chord < snap {
        return Err(SketchError::StrokeTooShort { chord, snap });
    }

    if annotation {
        return classify_annotation(s, e, ctx, snap);
    }

    let proj = ctx.projected();
    let ws = ctx.camera.ray_cast_to_plane(ctx.plane, s)?;
    let we = ctx.camera.ray_cast_to_plane(ctx.plane, e)?;

    // angle: both ends on the bodies of two distinct lines
    let hs = ctx.body_hits(&proj, s, snap);
    let he = ctx.body_hits(&proj, e, snap);
    let mut best: Option<(f64, &LineSegment, &LineSegment)> = None;
    for (ds, ls) in &hs {
        for (de, le) in &he {
            if ls.line.id != le.line.id && best.is_none_or(|(d, _, _)| ds + de < d) {
                best = Some((ds + de, ls.line, le.line));
            }
        }
    }
    if let Some((_, la, lb)) = best {
        let ta = closest_on_segment(&ws, &la.a, &la.b);
        let tb = closest_on_segment(&we, &lb.a, &lb.b);
        let vertex = arc_vertex(ctx.plane, la, lb);
        return Ok(SketchIntent::NewAngle {
            line_a: la.id.clone(),
            line_b: lb.id.clone(),
            side_a: arc_side(la, &vertex, &ta),
            side_b: arc_side(lb, &vertex, &tb),
            vertex,
        });
    }

    // area: both ends on the open ends of one chain
    let es = ctx.end_hits(&proj, s, snap);
    let ee = ctx.end_hits(&proj, e, snap);
    for (_, ls, ss) in &es {
        for (_, le, se) in &ee {
            if ls.line.id == le.line.id
                || !ctx.is_open_end(ls.line, *ss)
                || !ctx.is_open_end(le.line, *se)
            {
                continue;
            }
            if let Some(chain) = ctx.chain_between(&ls.line.id, *ss, &le.line.id, *se) {
                let (end_ep, end_pos) = endpoint_of(le.line, *se);
                let (start_ep, start_pos) = endpoint_of(ls.line, *ss);
                return Ok(SketchIntent::NewArea {
                    chain,
                    p1: share_endpoint(end_ep, end_pos),
                    p2: share_endpoint(start_ep, start_pos),
                    a: end_pos,
                    b: start_pos,
                });
            }
        }
    }

    // line: resolve each end independently
    let start = snap_end(ctx, &proj, s, ws, snap, None);
    let end = snap_end(ctx, &proj, e, we, snap, start.endpoint.attached_to());
    if (start.pos - end.pos).norm() == 0.0 {
        return Err(SketchError::StrokeTooShort { chord, snap });
    }

    // perpendicular: exactly one end lands on a line body at a near-right angle
    let candidates = [(&start, &end), (&end, &start)];
    for (on, other) in candidates {
        let Some(ref_id) = &on.on_line else { continue };
        if other.on_line.as_deref() == Some(ref_id.as_str()) {
            continue;
        }
        let r = &ctx.lines[ref_id];
        let dir_ref = r.b - r.a;
        let dir_new = on.pos - other.pos;
        if dir_ref.norm() == 0.0 {
            continue;
        }
        let angle = dir_ref.angle(&dir_new).to_degrees();
        if (angle - 90.0).abs() <= PERPENDICULAR_TOL_DEG {
            let foot = foot_on_line(&other.pos, &r.a, &r.b).expect("nonzero reference");
            let kind = if other.endpoint.attached_to().is_some() { LineKind::Dynamic } else { LineKind::Static };
            return Ok(SketchIntent::NewLine {
                p1: other.endpoint.clone(),
                p2: Endpoint::Derived { from: Derivation::Perpendicular },
                a: other.pos,
                b: foot,
                kind,
                perpendicular_to: Some(ref_id.clone()),
            });
        }
    }

    let kind = if start.endpoint.attached_to().is_some() || end.endpoint.attached_to().is_some() {
        LineKind::Dynamic
    } else {
        LineKind::Static
    };
    Ok(SketchIntent::NewLine {
        p1: start.endpoint,
        p2: end.endpoint,
        a: start.pos,
        b: end.pos,
        kind,
        perpendicular_to: None,
    })
}

struct SnappedEnd {
    endpoint: Endpoint,
    pos: World3,
    on_line: Option<String>,
}

fn snap_end(
    ctx: &SketchContext<'_>,
    proj: &[ProjectedLine<'_>],
    p: Screen2,
    world: World3,
    snap: f64,
    exclude_entity: Option<&str>,
) -> SnappedEnd {
    if let Some(ent) = ctx.nearest_tracked(p, snap, exclude_entity) {
        return SnappedEnd {
            endpoint: Endpoint::attached(ent.id.clone()),
            pos: ent.world_pos,
            on_line: None,
        };
    }
    if let Some((_, pl, second)) = ctx.end_hits(proj, p, snap).first() {
        let (ep, pos) = endpoint_of(pl.line, *second);
        return SnappedEnd { endpoint: share_endpoint(ep, pos), pos, on_line: None };
    }
    if let Some((_, pl)) = ctx.body_hits(proj, p, snap).first() {
        let pos = closest_on_segment(&world, &pl.line.a, &pl.line.b);
        return SnappedEnd {
            endpoint: Endpoint::fixed(pos),
            pos,
            on_line: Some(pl.line.id.clone()),
        };
    }
    SnappedEnd { endpoint: Endpoint::fixed(world), pos: world, on_line: None }
}

fn classify_annotation(
    s: Screen2,
    e: Screen2,
    ctx: &SketchContext<'_>,
    snap: f64,
) -> Result<SketchIntent, SketchError> {
    let at_start = ctx.nearest_tracked(s, snap, None);
    let at_end = ctx.nearest_tracked(e, snap, None);
    let (anchor, free) = match (at_start, at_end) {
        (Some(a), _) => (a, e),
        (None, Some(a)) => (a, s),
        (None, None) => return Err(SketchError::NoAnchor),
    };
    let free_world = ctx.camera.ray_cast_to_plane(ctx.plane, free)?;
    Ok(SketchIntent::NewAnnotation {
        anchor: anchor.id.clone(),
        offset: free_world - anchor.world_pos,
    })
}

/// Build an annotation line for an anchor entity from a stroke.
pub fn make_annotation_line(
    id: impl Into<String>,
    stroke: &Stroke,
    ctx: &SketchContext<'_>,
) -> Result<LineSegment, SketchError> {
    match classify_stroke(stroke, ctx, true)? {
        SketchIntent::NewAnnotation { anchor, offset } => {
            let a = ctx.tracked[&anchor].world_pos;
            Ok(annotation_line(id, &anchor, a, offset))
        }
        _ => Err(SketchError::NoAnchor),
    }
}

pub fn annotation_line(id: impl Into<String>, anchor: &str, anchor_pos: World3, offset: World3) -> LineSegment {
    LineSegment {
        id: id.into(),
        p1: Endpoint::attached(anchor),
        p2: Endpoint::Derived {
            from: Derivation::Offset { offset: [offset.x, offset.y, offset.z] },
        },
        kind: LineKind::Annotation,
        label: None,
        perpendicular_to: None,
        a: anchor_pos,
        b: anchor_pos + offset,
    }
}

/// Re-resolve a line's endpoints from tracked entities, annotation offsets
/// and its perpendicular constraint. Binding-derived endpoints are left as is.
pub fn resolve_line(
    line: &mut LineSegment,
    tracked: &IndexMap<String, TrackedEntity>,
    reference: Option<(&World3, &World3)>,
) {
    let resolve = |ep: &Endpoint, current: World3| -> World3 {
        match ep {
            Endpoint::Fixed { pos } => w3(*pos),
            Endpoint::Attached { entity } => tracked.get(entity).map_or(current, |e| e.world_pos),
            Endpoint::Derived { .. } => current,
        }
    };
    line.a = resolve(&line.p1, line.a);
    line.b = resolve(&line.p2, line.b);
    if let Endpoint::Derived { from: Derivation::Offset { offset } } = &line.p2 {
        line.b = line.a + w3(*offset);
    }
    if let Endpoint::Derived { from: Derivation::Offset { offset } } = &line.p1 {
        line.a = line.b + w3(*offset);
    }
    if let (Endpoint::Derived { from: Derivation::Perpendicular }, Some((ra, rb))) = (&line.p2, reference) {
        if let Some(foot) = foot_on_line(&line.a, ra, rb) {
            line.b = foot;
        }
    }
}

/// Vertex of an arc: intersection of the two infinite lines in the plane, or
/// the midpoint of the closest endpoint pair when the lines are nearly parallel.
pub fn arc_vertex(plane: &ReferencePlane, la: &LineSegment, lb: &LineSegment) -> World3 {
    let (a0, a1) = (plane.plane_coords(&la.a), plane.plane_coords(&la.b));
    let (b0, b1) = (plane.plane_coords(&lb.a), plane.plane_coords(&lb.b));
    let da = (a1.a - a0.a, a1.b - a0.b);
    let db = (b1.a - b0.a, b1.b - b0.b);
    let cross = da.0 * db.1 - da.1 * db.0;
    let na = da.0.hypot(da.1);
    let nb = db.0.hypot(db.1);
    if na > 0.0 && nb > 0.0 && (cross / (na * nb)).abs() > PARALLEL_LIMIT_DEG.to_radians().sin() {
        let w = (b0.a - a0.a, b0.b - a0.b);
        let t = (w.0 * db.1 - w.1 * db.0) / cross;
        return plane.world_of(Plane2::new(a0.a + t * da.0, a0.b + t * da.1));
    }
    let mut best = (f64::INFINITY, la.a);
    for p in [la.a, la.b] {
        for q in [lb.a, lb.b] {
            let d = (p - q).norm();
            if d < best.0 {
                best = (d, (p + q) * 0.5);
            }
        }
    }
    best.1
}

/// Which way along `line` (p1 -> p2 is +1) the arc opens, judged from the
/// point where the stroke touched it.
pub fn arc_side(line: &LineSegment, vertex: &World3, touch: &World3) -> f64 {
    let dir = line.b - line.a;
    let along = (touch - vertex).dot(&dir);
    if along.abs() > 1e-12 * dir.norm_squared().max(1e-300) {
        return along.signum();
    }
    // touch at the vertex: open towards the farther endpoint
    if (line.b - vertex).norm() >= (line.a - vertex).norm() { 1.0 } else { -1.0 }
}

fn ray_dir(line: &LineSegment, side: f64) -> Result<World3, SketchError> {
    let d = (line.b - line.a) * side;
    d.try_normalize(0.0)
        .ok_or_else(|| SketchError::DegenerateGeometry(format!("line {} has zero length", line.id)))
}

/// Unsigned angle in degrees between two arc rays.
pub fn measure_arc(arc: &AngleArc, la: &LineSegment, lb: &LineSegment) -> Result<f64, SketchError> {
    let da = ray_dir(la, arc.side_a)?;
    let db = ray_dir(lb, arc.side_b)?;
    Ok(da.cross(&db).norm().atan2(da.dot(&db)).to_degrees())
}

/// Signed angle of `p1 -> p2` from the plane's `basis_u`, degrees in (-180, 180].
pub fn measure_line_angle(plane: &ReferencePlane, line: &LineSegment) -> Result<f64, SketchError> {
    let d = plane.direction_coords(&(line.b - line.a));
    if d.a == 0.0 && d.b == 0.0 {
        return Err(SketchError::DegenerateGeometry(format!("line {} has zero length", line.id)));
    }
    Ok(d.b.atan2(d.a).to_degrees())
}

/// Signed shoelace area of a closed polygon in plane coordinates.
pub fn shoelace(points: &[Plane2]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p.a * q.b - q.a * p.b;
    }
    0.5 * acc
}

/// Polygon corners: the junction between consecutive boundary lines.
pub fn area_vertices(lines: &[&LineSegment]) -> Vec<World3> {
    let n = lines.len();
    (0..n)
        .map(|i| {
            let (l, m) = (lines[i], lines[(i + 1) % n]);
            let mut best = (f64::INFINITY, l.b);
            for p in [l.a, l.b] {
                for q in [m.a, m.b] {
                    let d = (p - q).norm();
                    if d < best.0 {
                        best = (d, (p + q) * 0.5);
                    }
                }
            }
            best.1
        })
        .collect()
}

pub fn measure_area(plane: &ReferencePlane, lines: &[&LineSegment]) -> Result<f64, SketchError> {
    if lines.len() < 3 {
        return Err(SketchError::DegenerateGeometry("area needs at least three lines".into()));
    }
    let pts: Vec<Plane2> = area_vertices(lines).iter().map(|p| plane.plane_coords(p)).collect();
    Ok(shoelace(&pts).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::tracker::{ColorModel, Hsv, TrackSource};
    use approx::assert_abs_diff_eq;

    fn camera() -> CameraState {
        // 400 px per meter on the z = 0 plane
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

    fn static_line(id: &str, a: World3, b: World3) -> LineSegment {
        LineSegment {
            id: id.into(),
            p1: Endpoint::fixed(a),
            p2: Endpoint::fixed(b),
            kind: LineKind::Static,
            label: None,
            perpendicular_to: None,
            a,
            b,
        }
    }

    fn ball(id: &str, p: World3) -> TrackedEntity {
        let model = ColorModel::new(Hsv { h: 0.0, s: 1.0, v: 1.0 });
        let mut e = TrackedEntity::new(id, TrackSource::Color { model }, Screen2::default(), p);
        e.found = true;
        e
    }

    struct Fixture {
        lines: IndexMap<String, LineSegment>,
        tracked: IndexMap<String, TrackedEntity>,
        camera: CameraState,
        plane: ReferencePlane,
    }

    impl Fixture {
        fn new() -> Self {
            Fixture {
                lines: IndexMap::new(),
                tracked: IndexMap::new(),
                camera: camera(),
                plane: ReferencePlane::xy(),
            }
        }

        fn add_line(&mut self, l: LineSegment) {
            self.lines.insert(l.id.clone(), l);
        }

        fn classify(&self, from: World3, to: World3, annotation: bool) -> Result<SketchIntent, SketchError> {
            let s = self.camera.project_to_screen(&from).unwrap();
            let e = self.camera.project_to_screen(&to).unwrap();
            let ctx = SketchContext {
                lines: &self.lines,
                tracked: &self.tracked,
                camera: &self.camera,
                plane: &self.plane,
            };
            classify_stroke(&Stroke::from_screen(&[(s.u, s.v), (e.u, e.v)]), &ctx, annotation)
        }
    }

    fn p(x: f64, y: f64) -> World3 {
        World3::new(x, y, 0.0)
    }

    #[test]
    fn stroke_from_ball_is_dynamic_line() {
        let mut fx = Fixture::new();
        fx.tracked.insert("track1".into(), ball("track1", p(0.1, 0.1)));
        match fx.classify(p(0.105, 0.1), p(-0.3, 0.2), false).unwrap() {
            SketchIntent::NewLine { p1, kind, a, .. } => {
                assert_eq!(p1, Endpoint::attached("track1"));
                assert_eq!(kind, LineKind::Dynamic);
                assert_eq!(a, p(0.1, 0.1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stroke_between_line_bodies_is_angle() {
        let mut fx = Fixture::new();
        fx.add_line(static_line("line1", p(0.0, 0.0), p(0.0, -0.5)));
        fx.add_line(static_line("line2", p(0.0, 0.0), p(0.25, -0.433)));
        match fx.classify(p(0.0, -0.25), p(0.125, -0.2165), false).unwrap() {
            SketchIntent::NewAngle { line_a, line_b, vertex, side_a, side_b } => {
                assert_eq!((line_a.as_str(), line_b.as_str()), ("line1", "line2"));
                assert_abs_diff_eq!(vertex, p(0.0, 0.0), epsilon = 1e-9);
                assert_eq!((side_a, side_b), (1.0, 1.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stroke_in_free_space_is_static_line() {
        let fx = Fixture::new();
        match fx.classify(p(-0.2, 0.0), p(0.2, 0.1), false).unwrap() {
            SketchIntent::NewLine { p1, p2, kind, perpendicular_to, .. } => {
                assert_eq!(kind, LineKind::Static);
                assert!(matches!(p1, Endpoint::Fixed { .. }));
                assert!(matches!(p2, Endpoint::Fixed { .. }));
                assert!(perpendicular_to.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn closing_a_chain_makes_an_area() {
        let mut fx = Fixture::new();
        fx.add_line(static_line("line1", p(0.0, 0.0), p(0.3, 0.0)));
        fx.add_line(static_line("line2", p(0.3, 0.0), p(0.3, 0.3)));
        match fx.classify(p(0.3, 0.3), p(0.0, 0.0), false).unwrap() {
            SketchIntent::NewArea { chain, a, b, .. } => {
                assert_eq!(chain, vec!["line2".to_string(), "line1".to_string()]);
                assert_eq!(a, p(0.0, 0.0));
                assert_eq!(b, p(0.3, 0.3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_stroke_is_rejected() {
        let fx = Fixture::new();
        let err = fx.classify(p(0.0, 0.0), p(0.01, 0.0), false).unwrap_err();
        assert_eq!(err.code(), "StrokeTooShort");
    }

    #[test]
    fn near_right_angle_onto_line_creates_constraint() {
        let mut fx = Fixture::new();
        fx.add_line(static_line("ground", p(-0.5, 0.0), p(0.5, 0.0)));
        fx.tracked.insert("track1".into(), ball("track1", p(0.1, 0.5)));
        match fx.classify(p(0.1, 0.5), p(0.13, 0.0), false).unwrap() {
            SketchIntent::NewLine { p1, p2, a, b, perpendicular_to, .. } => {
                assert_eq!(p1, Endpoint::attached("track1"));
                assert_eq!(p2, Endpoint::Derived { from: Derivation::Perpendicular });
                assert_eq!(perpendicular_to.as_deref(), Some("ground"));
                assert_abs_diff_eq!((b - a).norm(), 0.5, epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        // a slanted stroke (about 27 degrees off) stays unconstrained
        match fx.classify(p(0.1, 0.5), p(0.35, 0.0), false).unwrap() {
            SketchIntent::NewLine { perpendicular_to, .. } => assert!(perpendicular_to.is_none()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perpendicular_length_tracks_height() {
        let mut tracked = IndexMap::new();
        tracked.insert("track1".to_string(), ball("track1", p(0.1, 0.5)));
        let ground = static_line("ground", p(-0.5, 0.0), p(0.5, 0.0));
        let mut l = LineSegment {
            id: "line2".into(),
            p1: Endpoint::attached("track1"),
            p2: Endpoint::Derived { from: Derivation::Perpendicular },
            kind: LineKind::Dynamic,
            label: None,
            perpendicular_to: Some("ground".into()),
            a: p(0.1, 0.5),
            b: p(0.1, 0.0),
        };
        resolve_line(&mut l, &tracked, Some((&ground.a, &ground.b)));
        assert_abs_diff_eq!(l.length(), 0.5, epsilon = 1e-12);
        tracked["track1"].world_pos = p(0.4, 0.5);
        resolve_line(&mut l, &tracked, Some((&ground.a, &ground.b)));
        assert_abs_diff_eq!(l.length(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!((l.b - l.a).dot(&(ground.b - ground.a)), 0.0, epsilon = 1e-12);
        tracked["track1"].world_pos = p(0.4, 0.2);
        resolve_line(&mut l, &tracked, Some((&ground.a, &ground.b)));
        assert_abs_diff_eq!(l.length(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn annotation_keeps_offset() {
        let mut fx = Fixture::new();
        fx.tracked.insert("track1".into(), ball("track1", p(0.0, 0.0)));
        let s = fx.camera.project_to_screen(&p(0.0, 0.0)).unwrap();
        let e = fx.camera.project_to_screen(&p(0.0, -0.1)).unwrap();
        let ctx = SketchContext { lines: &fx.lines, tracked: &fx.tracked, camera: &fx.camera, plane: &fx.plane };
        let mut l = make_annotation_line("line2", &Stroke::from_screen(&[(s.u, s.v), (e.u, e.v)]), &ctx).unwrap();
        assert_eq!(l.kind, LineKind::Annotation);
        let before = l.b;
        resolve_line(&mut l, &fx.tracked, None);
        assert_abs_diff_eq!(l.b, before, epsilon = 1e-12);
        fx.tracked["track1"].world_pos = p(0.3, 0.0);
        resolve_line(&mut l, &fx.tracked, None);
        assert_abs_diff_eq!(l.b, before + p(0.3, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn annotation_needs_anchor() {
        let fx = Fixture::new();
        assert_eq!(fx.classify(p(0.0, 0.0), p(0.2, 0.0), true).unwrap_err(), SketchError::NoAnchor);
    }

    #[test]
    fn measurements() {
        let plane = ReferencePlane::xy();
        let l = static_line("l", p(0.0, 0.0), p(1.0, 0.0));
        assert_eq!(l.length(), 1.0);
        assert_eq!(measure_line_angle(&plane, &l).unwrap(), 0.0);

        let vertical = static_line("v", p(0.0, 0.0), p(0.0, -1.0));
        let t = 40f64.to_radians();
        let swing = static_line("s", p(0.0, 0.0), p(t.sin() * 0.5, -t.cos() * 0.5));
        let arc = AngleArc {
            id: "a".into(),
            line_a: "v".into(),
            line_b: "s".into(),
            side_a: 1.0,
            side_b: 1.0,
            vertex: p(0.0, 0.0),
            label: None,
        };
        assert_abs_diff_eq!(measure_arc(&arc, &vertical, &swing).unwrap(), 40.0, epsilon = 1e-12);

        let zero = static_line("z", p(0.0, 0.0), p(0.0, 0.0));
        assert_eq!(measure_arc(&arc, &vertical, &zero).unwrap_err().code(), "DegenerateGeometry");

        let l1 = static_line("1", p(0.0, 0.0), p(1.0, 0.0));
        let l2 = static_line("2", p(1.0, 0.0), p(0.0, 1.0));
        let l3 = static_line("3", p(0.0, 1.0), p(0.0, 0.0));
        assert_abs_diff_eq!(measure_area(&plane, &[&l1, &l2, &l3]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn parallel_lines_use_closest_pair_vertex() {
        let plane = ReferencePlane::xy();
        let a = static_line("a", p(0.0, 0.0), p(1.0, 0.0));
        let b = static_line("b", p(1.2, 0.001), p(2.0, 0.001));
        let v = arc_vertex(&plane, &a, &b);
        assert_abs_diff_eq!(v, p(1.1, 0.0005), epsilon = 1e-12);
    }
}
