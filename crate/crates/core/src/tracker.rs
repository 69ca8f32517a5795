//! Color-model object tracking.
//!
//! A tap samples the median HSV of a 5x5 neighborhood. Every frame, pixels
//! within the model tolerance form a mask; the largest 4-connected component
//! gives the target centroid, which is then cast onto the reference plane.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraState, ReferencePlane, Screen2, World3};
use crate::scene::Frame;

pub const DEFAULT_HUE_TOL: f64 = 10.0;
pub const DEFAULT_SAT_TOL: f64 = 0.25;
pub const DEFAULT_VAL_TOL: f64 = 0.25;
const TAP_RADIUS: i64 = 2;
const MIN_COMPONENT_AT_VGA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("tap ({u}, {v}) is outside the {width}x{height} frame")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    /// Degrees in [0, 360).
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB to HSV.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> Hsv {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = f64::from(max) / 255.0;
    let delta = f64::from(max - min);
    if max == 0 || delta == 0.0 {
        return Hsv { h: 0.0, s: 0.0, v };
    }
    let s = delta / f64::from(max);
    let (rf, gf, bf) = (f64::from(r), f64::from(g), f64::from(b));
    let mut h = if max == r {
        60.0 * ((gf - bf) / delta)
    } else if max == g {
        60.0 * ((bf - rf) / delta + 2.0)
    } else {
        60.0 * ((rf - gf) / delta + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v }
}

/// Smallest absolute angular difference between two hues, in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ColorModel {
    pub center: Hsv,
    pub hue_tol: f64,
    pub sat_tol: f64,
    pub val_tol: f64,
}

impl ColorModel {
    pub fn new(center: Hsv) -> Self {
        ColorModel {
            center,
            hue_tol: DEFAULT_HUE_TOL,
            sat_tol: DEFAULT_SAT_TOL,
            val_tol: DEFAULT_VAL_TOL,
        }
    }

    pub fn matches(&self, px: Hsv) -> bool {
        (px.v - self.center.v).abs() <= self.val_tol
            && (px.s - self.center.s).abs() <= self.sat_tol
            && hue_distance(px.h, self.center.h) <= self.hue_tol
    }

    pub fn matches_rgb(&self, r: u8, g: u8, b: u8) -> bool {
        self.matches(rgb_to_hsv(r, g, b))
    }
}

/// Pick a color model from the median HSV around a tap.
pub fn select_color_target(frame: &Frame, tap: Screen2) -> Result<ColorModel, TrackError> {
    let (w, h) = (frame.width, frame.height);
    if !(tap.u >= 0.0 && tap.v >= 0.0 && tap.u < f64::from(w) && tap.v < f64::from(h)) {
        return Err(TrackError::OutOfBounds { u: tap.u, v: tap.v, width: w, height: h });
    }
    let (cx, cy) = (tap.u.floor() as i64, tap.v.floor() as i64);
    let mut samples = Vec::with_capacity(25);
    for y in cy - TAP_RADIUS..=cy + TAP_RADIUS {
        for x in cx - TAP_RADIUS..=cx + TAP_RADIUS {
            if x >= 0 && y >= 0 && x < i64::from(w) && y < i64::from(h) {
                let [r, g, b] = frame.rgb(x as u32, y as u32);
                samples.push(rgb_to_hsv(r, g, b));
            }
        }
    }
    let [r, g, b] = frame.rgb(cx as u32, cy as u32);
    let anchor = rgb_to_hsv(r, g, b).h;
    // hue median is taken on offsets from the tapped pixel so the wrap at 0/360 is harmless
    let mut offsets: Vec<f64> = samples
        .iter()
        .map(|p| {
            let d = (p.h - anchor).rem_euclid(360.0);
            if d > 180.0 { d - 360.0 } else { d }
        })
        .collect();
    let h = (anchor + median(&mut offsets)).rem_euclid(360.0);
    let s = median(&mut samples.iter().map(|p| p.s).collect::<Vec<_>>());
    let v = median(&mut samples.iter().map(|p| p.v).collect::<Vec<_>>());
    Ok(ColorModel::new(Hsv { h, s, v }))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub centroid: Screen2,
    pub pixel_area: usize,
    pub found: bool,
}

impl TrackResult {
    fn missing() -> Self {
        TrackResult { centroid: Screen2::default(), pixel_area: 0, found: false }
    }
}

/// Minimum component size: 30 px at 640x480, scaled by image area.
pub fn min_component_size(width: u32, height: u32) -> usize {
    let scaled = MIN_COMPONENT_AT_VGA * f64::from(width) * f64::from(height) / (640.0 * 480.0);
    (scaled.round() as usize).max(1)
}

/// Boolean mask of pixels matching `model`, row-major.
pub fn color_mask(frame: &Frame, model: &ColorModel) -> Vec<bool> {
    frame
        .pixels
        .chunks_exact(3)
        .map(|p| model.matches_rgb(p[0], p[1], p[2]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub area: usize,
    pub centroid: Screen2,
}

/// 4-connected components of `mask`, in scan order of their first pixel.
pub fn connected_components(mask: &[bool], width: u32, height: u32) -> Vec<Component> {
    let (w, h) = (width as usize, height as usize);
    let mut seen = vec![false; mask.len()];
    let mut stack: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0u64, 0u64);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            sx += x as u64;
            sy += y as u64;
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let n = area as f64;
        out.push(Component {
            area,
            // pixel (x, y) is centered at (x + 0.5, y + 0.5)
            centroid: Screen2::new(sx as f64 / n + 0.5, sy as f64 / n + 0.5),
        });
    }
    out
}

/// Largest component wins; equal areas fall back to the smaller (u, v) centroid.
pub fn track(frame: &Frame, model: &ColorModel) -> TrackResult {
    let mask = color_mask(frame, model);
    let comps = connected_components(&mask, frame.width, frame.height);
    let best = comps.into_iter().max_by(|a, b| {
        a.area.cmp(&b.area).then_with(|| {
            // reversed so the lexicographically smaller centroid is the max
            (b.centroid.u, b.centroid.v)
                .partial_cmp(&(a.centroid.u, a.centroid.v))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    match best {
        Some(c) if c.area >= min_component_size(frame.width, frame.height) => {
            TrackResult { centroid: c.centroid, pixel_area: c.area, found: true }
        }
        _ => TrackResult::missing(),
    }
}

/// Where a tracked entity's position comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum TrackSource {
    Color { model: ColorModel },
    /// A named point supplied per frame by the scene (e.g. a body joint).
    External { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrackedEntity {
    pub id: String,
    pub source: TrackSource,
    pub screen_pos: Screen2,
    pub world_pos: World3,
    pub found: bool,
    pub stale_since: Option<f64>,
}

impl TrackedEntity {
    pub fn new(id: impl Into<String>, source: TrackSource, screen_pos: Screen2, world_pos: World3) -> Self {
        TrackedEntity {
            id: id.into(),
            source,
            screen_pos,
            world_pos,
            found: false,
            stale_since: None,
        }
    }

    pub fn model(&self) -> Option<&ColorModel> {
        match &self.source {
            TrackSource::Color { model } => Some(model),
            TrackSource::External { .. } => None,
        }
    }

    /// Apply a tracking observation taken at time `t`. A miss holds the last
    /// position and starts the stale clock.
    pub fn apply(&mut self, result: &TrackResult, camera: &CameraState, plane: &ReferencePlane, t: f64) {
        let hit = if result.found {
            camera.ray_cast_to_plane(plane, result.centroid).ok()
        } else {
            None
        };
        match hit {
            Some(world) => {
                self.screen_pos = result.centroid;
                self.world_pos = world;
                self.found = true;
                self.stale_since = None;
            }
            None => self.mark_lost(t),
        }
    }

    /// Set position from an externally supplied world point.
    pub fn apply_external(&mut self, point: Option<World3>, camera: &CameraState, plane: &ReferencePlane, t: f64) {
        match point {
            Some(p) => {
                self.world_pos = plane.project(&p);
                if let Ok(s) = camera.project_to_screen(&self.world_pos) {
                    self.screen_pos = s;
                }
                self.found = true;
                self.stale_since = None;
            }
            None => self.mark_lost(t),
        }
    }

    fn mark_lost(&mut self, t: f64) {
        self.found = false;
        if self.stale_since.is_none() {
            self.stale_since = Some(t);
        }
    }
}

/// Track `entity` in `frame` and update it in place.
pub fn update_entity(
    entity: &mut TrackedEntity,
    frame: &Frame,
    camera: &CameraState,
    plane: &ReferencePlane,
) -> TrackResult {
    match entity.model().copied() {
        Some(model) => {
            let r = track(frame, &model);
            entity.apply(&r, camera, plane, frame.t);
            r
        }
        None => TrackResult { centroid: entity.screen_pos, pixel_area: 0, found: entity.found },
    }
}

#[cfg(test)]
pub(crate) mod test_frames {
    use super::*;
    use crate::geometry::Intrinsics;

    pub fn down_camera(w: u32, h: u32) -> CameraState {
        CameraState::look_at(
            World3::new(0.0, 0.0, 1.0),
            World3::zeros(),
            World3::y(),
            Intrinsics::synthetic(w, h),
            w,
            h,
        )
        .unwrap()
    }

    pub fn solid(w: u32, h: u32, rgb: [u8; 3]) -> Frame {
        Frame {
            index: 0,
            t: 0.0,
            width: w,
            height: h,
            pixels: rgb.iter().copied().cycle().take((w * h * 3) as usize).collect(),
            camera: down_camera(w, h),
        }
    }

    pub fn put(f: &mut Frame, x: u32, y: u32, rgb: [u8; 3]) {
        let i = ((y * f.width + x) * 3) as usize;
        f.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fill every pixel whose center lies inside the disc.
    pub fn disc(f: &mut Frame, cx: f64, cy: f64, r: f64, rgb: [u8; 3]) {
        for y in 0..f.height {
            for x in 0..f.width {
                let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                    put(f, x, y, rgb);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_frames::*;
    use super::*;
    use proptest::prelude::*;

    const RED: [u8; 3] = [220, 30, 30];
    const WHITE: [u8; 3] = [255, 255, 255];

    #[test]
    fn hsv_reference_colors() {
        assert_eq!(rgb_to_hsv(255, 0, 0), Hsv { h: 0.0, s: 1.0, v: 1.0 });
        let gray = rgb_to_hsv(128, 128, 128);
        assert_eq!(gray.s, 0.0);
        assert_eq!(gray.v, 128.0 / 255.0);
        assert_eq!(rgb_to_hsv(0, 255, 0).h, 120.0);
        assert_eq!(rgb_to_hsv(0, 0, 255).h, 240.0);
        assert_eq!(rgb_to_hsv(255, 0, 255).h, 300.0);
        assert_eq!(rgb_to_hsv(0, 0, 0), Hsv { h: 0.0, s: 0.0, v: 0.0 });
    }

    #[test]
    fn tap_on_solid_disc_picks_its_hue() {
        let mut f = solid(640, 480, WHITE);
        disc(&mut f, 320.0, 240.0, 30.0, [255, 0, 0]);
        let m = select_color_target(&f, Screen2::new(320.0, 240.0)).unwrap();
        assert!(hue_distance(m.center.h, 0.0) < 1e-9);
        assert_eq!(m.hue_tol, 10.0);
    }

    #[test]
    fn tap_outside_frame_fails() {
        let f = solid(64, 48, WHITE);
        assert!(matches!(
            select_color_target(&f, Screen2::new(-1.0, -1.0)),
            Err(TrackError::OutOfBounds { .. })
        ));
        assert!(select_color_target(&f, Screen2::new(64.0, 10.0)).is_err());
    }

    #[test]
    fn tap_on_speckled_disc_stays_within_tolerance() {
        let mut f = solid(200, 200, WHITE);
        let hue_rgb = [40, 200, 60];
        disc(&mut f, 100.0, 100.0, 20.0, hue_rgb);
        // single-pixel speckles of a different color in a checker pattern
        for y in (90..110).step_by(3) {
            for x in (90..110).step_by(3) {
                put(&mut f, x, y, [200, 40, 200]);
            }
        }
        let m = select_color_target(&f, Screen2::new(100.5, 100.5)).unwrap();
        let truth = rgb_to_hsv(40, 200, 60).h;
        assert!(hue_distance(m.center.h, truth) <= m.hue_tol);
    }

    #[test]
    fn centroid_of_disc() {
        let mut f = solid(640, 480, WHITE);
        disc(&mut f, 320.0, 240.0, 30.0, RED);
        let model = ColorModel::new(rgb_to_hsv(RED[0], RED[1], RED[2]));
        let r = track(&f, &model);
        assert!(r.found);
        assert!(r.centroid.distance(&Screen2::new(320.0, 240.0)) < 0.5);
    }

    #[test]
    fn largest_of_two_discs_wins() {
        let mut f = solid(640, 480, WHITE);
        disc(&mut f, 150.0, 200.0, 15.0, RED);
        disc(&mut f, 450.0, 300.0, 30.0, RED);
        let model = ColorModel::new(rgb_to_hsv(RED[0], RED[1], RED[2]));
        let r = track(&f, &model);
        assert!(r.centroid.distance(&Screen2::new(450.0, 300.0)) < 0.5);
    }

    #[test]
    fn equal_components_tie_break_on_smaller_position() {
        let mut f = solid(100, 100, WHITE);
        for y in 10..20 {
            for x in 60..70 {
                put(&mut f, x, y, RED);
                put(&mut f, x - 50, y + 50, RED);
            }
        }
        let model = ColorModel::new(rgb_to_hsv(RED[0], RED[1], RED[2]));
        let r = track(&f, &model);
        assert_eq!(r.centroid, Screen2::new(15.0, 65.0));
    }

    #[test]
    fn no_match_is_not_found() {
        let f = solid(640, 480, WHITE);
        let model = ColorModel::new(rgb_to_hsv(255, 0, 0));
        assert!(!track(&f, &model).found);
    }

    #[test]
    fn speckle_below_minimum_size_is_ignored() {
        let mut f = solid(640, 480, WHITE);
        disc(&mut f, 100.0, 100.0, 2.0, RED);
        let model = ColorModel::new(rgb_to_hsv(RED[0], RED[1], RED[2]));
        assert!(!track(&f, &model).found);
        assert_eq!(min_component_size(640, 480), 30);
        assert_eq!(min_component_size(1280, 960), 120);
        assert_eq!(min_component_size(4, 3), 1);
    }

    #[test]
    fn rectangle_centroid_is_analytic_center() {
        let mut f = solid(320, 240, WHITE);
        for y in 40..71 {
            for x in 100..160 {
                put(&mut f, x, y, RED);
            }
        }
        let model = ColorModel::new(rgb_to_hsv(RED[0], RED[1], RED[2]));
        let r = track(&f, &model);
        assert!(r.centroid.distance(&Screen2::new(130.0, 55.5)) <= 0.5);
        assert_eq!(r.pixel_area, 60 * 31);
    }

    #[test]
    fn hue_wraps_around_zero() {
        let model = ColorModel {
            center: Hsv { h: 359.0, s: 1.0, v: 1.0 },
            hue_tol: 5.0,
            sat_tol: 0.25,
            val_tol: 0.25,
        };
        assert!(model.matches(Hsv { h: 2.0, s: 1.0, v: 1.0 }));
        assert!(!model.matches(Hsv { h: 5.0, s: 1.0, v: 1.0 }));
    }

    #[test]
    fn entity_holds_position_while_lost() {
        let plane = ReferencePlane::xy();
        let mut f = solid(640, 480, WHITE);
        disc(&mut f, 320.0, 240.0, 20.0, RED);
        let model = ColorModel::new(rgb_to_hsv(RED[0], RED[1], RED[2]));
        let mut e = TrackedEntity::new("track1", TrackSource::Color { model }, Screen2::default(), World3::zeros());
        let cam = f.camera;
        update_entity(&mut e, &f, &cam, &plane);
        assert!(e.found);
        assert!(e.world_pos.norm() < 1e-3);
        let held = e.world_pos;

        let blank = solid(640, 480, WHITE);
        for k in 1..=3 {
            let mut b = blank.clone();
            b.t = k as f64 * 0.05;
            update_entity(&mut e, &b, &cam, &plane);
            assert!(!e.found);
            assert_eq!(e.world_pos, held);
            assert_eq!(e.stale_since, Some(0.05));
        }
        let mut again = f.clone();
        again.t = 0.2;
        update_entity(&mut e, &again, &cam, &plane);
        assert!(e.found);
        assert_eq!(e.stale_since, None);
    }

    proptest! {
        #[test]
        fn widening_tolerances_grows_the_mask(
            seed in any::<u64>(),
            h in 0.0f64..360.0, s in 0.0f64..1.0, v in 0.0f64..1.0,
            tol in (1.0f64..30.0, 0.05f64..0.5, 0.05f64..0.5),
            extra in (0.0f64..20.0, 0.0f64..0.3, 0.0f64..0.3),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut f = solid(32, 24, [0, 0, 0]);
            rng.fill(&mut f.pixels[..]);
            let narrow = ColorModel { center: Hsv { h, s, v }, hue_tol: tol.0, sat_tol: tol.1, val_tol: tol.2 };
            let wide = ColorModel {
                hue_tol: tol.0 + extra.0,
                sat_tol: tol.1 + extra.1,
                val_tol: tol.2 + extra.2,
                ..narrow
            };
            let a = color_mask(&f, &narrow);
            let b = color_mask(&f, &wide);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| !*x || *y));
        }
    }
}
