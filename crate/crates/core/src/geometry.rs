//! Camera model, reference plane and conversions between screen pixels,
//! world coordinates and plane-local 2D coordinates.
//!
//! Conventions: the world frame is right-handed and measured in meters.
//! Camera space follows the usual computer-vision layout (x right, y down,
//! z forward) and `CameraState::orientation` rotates camera-space vectors
//! into the world frame. Screen coordinates are pixels with the origin at
//! the top-left corner of the image; pixel `(i, j)` covers
//! `[i, i + 1) x [j, j + 1)` so its center is `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point or vector in the world frame, in meters.
pub type World3 = Vector3<f64>;

const QUAT_NORM_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("view ray does not intersect the reference plane")]
    NoIntersection,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid plane: {0}")]
    InvalidPlane(String),
}

impl GeometryError {
    pub fn code(&self) -> &'static str {
        match self {
            GeometryError::NoIntersection => "NoIntersection",
            GeometryError::BehindCamera(_) => "BehindCamera",
            GeometryError::InvalidCamera(_) => "InvalidCamera",
            GeometryError::InvalidPlane(_) => "InvalidPlane",
        }
    }
}

/// Screen position in pixels, origin top-left. May lie outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Screen2 {
    pub u: f64,
    pub v: f64,
}

impl Screen2 {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Screen2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Coordinates on the reference plane along `(basis_u, basis_v)`, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Plane2 {
    pub a: f64,
    pub b: f64,
}

impl Plane2 {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Default synthetic camera used by the scene generators.
    pub fn synthetic(width: u32, height: u32) -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: f64::from(width) / 2.0,
            cy: f64::from(height) / 2.0,
        }
    }
}

/// Camera pose plus intrinsics for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraRecord", try_from = "CameraRecord")]
pub struct CameraState {
    pub position: World3,
    /// Camera-to-world rotation.
    pub orientation: UnitQuaternion<f64>,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
}

/// Wire form of a camera: `pos` as `[x, y, z]`, `quat` as `[w, x, y, z]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub pos: [f64; 3],
    pub quat: [f64; 4],
    pub intrinsics: Intrinsics,
    pub resolution: [u32; 2],
}

impl From<CameraState> for CameraRecord {
    fn from(c: CameraState) -> Self {
        let q = c.orientation.quaternion();
        CameraRecord {
            pos: [c.position.x, c.position.y, c.position.z],
            quat: [q.w, q.i, q.j, q.k],
            intrinsics: c.intrinsics,
            resolution: [c.width, c.height],
        }
    }
}

impl TryFrom<CameraRecord> for CameraState {
    type Error = GeometryError;

    fn try_from(r: CameraRecord) -> Result<Self, Self::Error> {
        CameraState::from_parts(
            World3::new(r.pos[0], r.pos[1], r.pos[2]),
            r.quat,
            r.intrinsics,
            r.resolution[0],
            r.resolution[1],
        )
    }
}

/// Build a unit quaternion from raw `[w, x, y, z]`, rejecting anything that
/// is not already unit length within tolerance.
pub fn quaternion_from_wxyz(q: [f64; 4]) -> Result<UnitQuaternion<f64>, GeometryError> {
    let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = raw.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(GeometryError::InvalidCamera(format!(
            "quaternion norm {norm} is not 1"
        )));
    }
    Ok(UnitQuaternion::new_unchecked(raw))
}

impl CameraState {
    pub fn from_parts(
        position: World3,
        quat_wxyz: [f64; 4],
        intrinsics: Intrinsics,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let cam = CameraState {
            position,
            orientation: quaternion_from_wxyz(quat_wxyz)?,
            intrinsics,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` hinting the world
    /// direction that should appear towards the top of the image.
    pub fn look_at(
        eye: World3,
        target: World3,
        up: World3,
        intrinsics: Intrinsics,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera("eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera("up is parallel to view".into()))?;
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        let cam = CameraState {
            position: eye,
            orientation: UnitQuaternion::from_rotation_matrix(&rot),
            intrinsics,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || !k.fx.is_finite() || !k.fy.is_finite() {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !k.cx.is_finite() || !k.cy.is_finite() {
            return Err(GeometryError::InvalidCamera("principal point must be finite".into()));
        }
        if !self.position.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidCamera("position must be finite".into()));
        }
        let n = self.orientation.quaternion().norm();
        if (n - 1.0).abs() > QUAT_NORM_TOL {
            return Err(GeometryError::InvalidCamera(format!("quaternion norm {n} is not 1")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera("resolution must be nonzero".into()));
        }
        Ok(())
    }

    /// World-space unit direction of the view ray through a screen point.
    pub fn ray_direction(&self, pt: Screen2) -> World3 {
        let k = &self.intrinsics;
        let cam = Vector3::new((pt.u - k.cx) / k.fx, (pt.v - k.cy) / k.fy, 1.0);
        (self.orientation * cam).normalize()
    }

    /// Depth of a world point along the optical axis.
    pub fn depth_of(&self, p: &World3) -> f64 {
        (self.orientation.inverse() * (p - self.position)).z
    }

    pub fn project_to_screen(&self, p: &World3) -> Result<Screen2, GeometryError> {
        let c = self.orientation.inverse() * (p - self.position);
        if c.z <= 0.0 {
            return Err(GeometryError::BehindCamera(c.z));
        }
        let k = &self.intrinsics;
        Ok(Screen2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
    }

    pub fn ray_cast_to_plane(
        &self,
        plane: &ReferencePlane,
        pt: Screen2,
    ) -> Result<World3, GeometryError> {
        let dir = self.ray_direction(pt);
        let denom = dir.dot(&plane.normal);
        if denom.abs() < PARALLEL_TOL {
            return Err(GeometryError::NoIntersection);
        }
        let t = (plane.origin - self.position).dot(&plane.normal) / denom;
        if !(t > 0.0) || !t.is_finite() {
            return Err(GeometryError::NoIntersection);
        }
        let hit = self.position + dir * t;
        // snap out the residual normal component so the result lies on the plane
        Ok(plane.project(&hit))
    }

    pub fn contains(&self, pt: Screen2) -> bool {
        pt.u >= 0.0 && pt.v >= 0.0 && pt.u < f64::from(self.width) && pt.v < f64::from(self.height)
    }
}

/// Free-function form of [`CameraState::ray_cast_to_plane`].
pub fn ray_cast_to_plane(
    camera: &CameraState,
    plane: &ReferencePlane,
    pt: Screen2,
) -> Result<World3, GeometryError> {
    camera.ray_cast_to_plane(plane, pt)
}

/// Free-function form of [`CameraState::project_to_screen`].
pub fn project_to_screen(camera: &CameraState, p: &World3) -> Result<Screen2, GeometryError> {
    camera.project_to_screen(p)
}

/// The detected surface: an oriented plane with an orthonormal, right-handed
/// 2D chart `(basis_u, basis_v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlaneRecord", try_from = "PlaneRecord")]
pub struct ReferencePlane {
    pub origin: World3,
    pub normal: World3,
    pub basis_u: World3,
    pub basis_v: World3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub origin: [f64; 3],
    pub normal: [f64; 3],
    pub basis_u: [f64; 3],
    pub basis_v: [f64; 3],
}

fn arr(v: &World3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec3(a: [f64; 3]) -> World3 {
    World3::new(a[0], a[1], a[2])
}

impl From<ReferencePlane> for PlaneRecord {
    fn from(p: ReferencePlane) -> Self {
        PlaneRecord {
            origin: arr(&p.origin),
            normal: arr(&p.normal),
            basis_u: arr(&p.basis_u),
            basis_v: arr(&p.basis_v),
        }
    }
}

impl TryFrom<PlaneRecord> for ReferencePlane {
    type Error = GeometryError;

    fn try_from(r: PlaneRecord) -> Result<Self, Self::Error> {
        let p = ReferencePlane {
            origin: vec3(r.origin),
            normal: vec3(r.normal),
            basis_u: vec3(r.basis_u),
            basis_v: vec3(r.basis_v),
        };
        p.validate()?;
        Ok(p)
    }
}

impl ReferencePlane {
    /// Plane through `origin` with the given normal; `basis_u` is the
    /// projection of `u_hint` onto the plane and `basis_v = normal x basis_u`.
    pub fn new(origin: World3, normal: World3, u_hint: World3) -> Result<Self, GeometryError> {
        let normal = normal
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPlane("zero normal".into()))?;
        let basis_u = (u_hint - normal * u_hint.dot(&normal))
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPlane("u hint parallel to normal".into()))?;
        let basis_v = normal.cross(&basis_u);
        let p = ReferencePlane { origin, normal, basis_u, basis_v };
        p.validate()?;
        Ok(p)
    }

    /// The `z = 0` plane with `basis_u = +x`, `basis_v = +y`.
    pub fn xy() -> Self {
        ReferencePlane {
            origin: World3::zeros(),
            normal: World3::z(),
            basis_u: World3::x(),
            basis_v: World3::y(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, v) in [("normal", &self.normal), ("basis_u", &self.basis_u), ("basis_v", &self.basis_v)] {
            if !v.iter().all(|c| c.is_finite()) || (v.norm() - 1.0).abs() > ORTHO_TOL {
                return Err(GeometryError::InvalidPlane(format!("{name} is not a unit vector")));
            }
        }
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidPlane("origin must be finite".into()));
        }
        if self.basis_u.dot(&self.basis_v).abs() > ORTHO_TOL
            || self.basis_u.dot(&self.normal).abs() > ORTHO_TOL
            || self.basis_v.dot(&self.normal).abs() > ORTHO_TOL
        {
            return Err(GeometryError::InvalidPlane("basis is not orthogonal".into()));
        }
        if (self.basis_u.cross(&self.basis_v) - self.normal).norm() > ORTHO_TOL {
            return Err(GeometryError::InvalidPlane("basis is not right-handed".into()));
        }
        Ok(())
    }

    /// Signed distance of `p` from the plane along the normal.
    pub fn signed_distance(&self, p: &World3) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project(&self, p: &World3) -> World3 {
        self.world_of(self.plane_coords(p))
    }

    pub fn plane_coords(&self, p: &World3) -> Plane2 {
        let d = p - self.origin;
        Plane2::new(d.dot(&self.basis_u), d.dot(&self.basis_v))
    }

    pub fn world_of(&self, q: Plane2) -> World3 {
        self.origin + self.basis_u * q.a + self.basis_v * q.b
    }

    /// In-plane direction vector expressed in plane coordinates.
    pub fn direction_coords(&self, d: &World3) -> Plane2 {
        Plane2::new(d.dot(&self.basis_u), d.dot(&self.basis_v))
    }
}
