//! Responsive graph plots and motion recordings with stroboscopic playback.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{is_identifier, Env};
use crate::geometry::{Plane2, World3};
use crate::scene::fmt_num;

pub const DEFAULT_WINDOW_SECS: f64 = 10.0;
pub const DEFAULT_STROBE_SPACING: f64 = 0.03;
const Y_PADDING: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VizError {
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("empty axis binding")]
    EmptyAxis,
    #[error("entity `{0}` is already recording")]
    AlreadyRecording(String),
    #[error("entity `{0}` is not recording")]
    NotRecording(String),
}

impl VizError {
    pub fn code(&self) -> &'static str {
        match self {
            VizError::UnknownIdentifier(_) => "UnknownIdentifier",
            VizError::EmptyAxis => "EmptyAxis",
            VizError::AlreadyRecording(_) => "AlreadyRecording",
            VizError::NotRecording(_) => "NotRecording",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "camelCase")]
pub enum XAxis {
    Time,
    Variable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Axis {
    X,
    Y,
}

/// Axis-aligned rectangle on the reference plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRect {
    pub min: Plane2,
    pub max: Plane2,
}

impl PlaneRect {
    pub fn from_corners(p: Plane2, q: Plane2) -> Self {
        PlaneRect {
            min: Plane2::new(p.a.min(q.a), p.b.min(q.b)),
            max: Plane2::new(p.a.max(q.a), p.b.max(q.b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub samples: VecDeque<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GraphPlot {
    pub id: String,
    pub placement: PlaneRect,
    pub x_axis: XAxis,
    pub series: Vec<Series>,
    pub window: f64,
    /// Samples appended since the axes were last bound; survives trimming.
    pub appended: u64,
}

impl GraphPlot {
    pub fn new(id: impl Into<String>, placement: PlaneRect) -> Self {
        GraphPlot {
            id: id.into(),
            placement,
            x_axis: XAxis::Time,
            series: Vec::new(),
            window: DEFAULT_WINDOW_SECS,
            appended: 0,
        }
    }

    pub fn is_bound(&self) -> bool {
        !self.series.is_empty()
    }

    pub fn series_names(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.name.as_str()).collect()
    }

    /// Bind an axis from label text. `y` takes a comma-separated list; `x`
    /// takes one variable name, or `t` / `time` to return to the time axis.
    pub fn bind_axis(&mut self, axis: Axis, text: &str, known: &dyn Fn(&str) -> bool) -> Result<(), VizError> {
        let names: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(VizError::EmptyAxis);
        }
        for n in &names {
            let is_time = axis == Axis::X && (*n == "t" || *n == "time") && !known(n);
            if !is_time && (!is_identifier(n) || !known(n)) {
                return Err(VizError::UnknownIdentifier(n.to_string()));
            }
        }
        match axis {
            Axis::Y => {
                self.series = names
                    .iter()
                    .map(|n| Series { name: n.to_string(), samples: VecDeque::new() })
                    .collect();
            }
            Axis::X => {
                if names.len() != 1 {
                    return Err(VizError::UnknownIdentifier(text.trim().to_string()));
                }
                let n = names[0];
                self.x_axis = if (n == "t" || n == "time") && !known(n) {
                    XAxis::Time
                } else {
                    XAxis::Variable(n.to_string())
                };
            }
        }
        self.clear();
        Ok(())
    }

    pub fn clear(&mut self) {
        for s in &mut self.series {
            s.samples.clear();
        }
        self.appended = 0;
    }

    /// Append one sample per series; in time mode drop samples older than the window.
    pub fn append_samples(&mut self, env: &Env, t: f64) {
        if !self.is_bound() {
            return;
        }
        let x = match &self.x_axis {
            XAxis::Time => t,
            XAxis::Variable(name) => match env.get(name) {
                Some(v) => *v,
                None => return,
            },
        };
        let ys: Option<Vec<f64>> = self.series.iter().map(|s| env.get(&s.name).copied()).collect();
        let Some(ys) = ys else { return };
        for (s, y) in self.series.iter_mut().zip(ys) {
            s.samples.push_back((x, y));
            if self.x_axis == XAxis::Time {
                while s.samples.front().is_some_and(|(x0, _)| *x0 < t - self.window) {
                    s.samples.pop_front();
                }
            }
        }
        self.appended += 1;
    }

    /// y range over all series with 10% padding; `None` when empty.
    pub fn y_range(&self) -> Option<(f64, f64)> {
        let mut it = self.series.iter().flat_map(|s| s.samples.iter().map(|(_, y)| *y));
        let first = it.next()?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), y| (lo.min(y), hi.max(y)));
        let pad = if hi > lo { (hi - lo) * Y_PADDING } else { lo.abs().max(1.0) * Y_PADDING };
        Some((lo - pad, hi + pad))
    }

    /// Long-form CSV: `series,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,x,y\n");
        for s in &self.series {
            for (x, y) in &s.samples {
                out.push_str(&format!("{},{},{}\n", s.name, fmt_num(*x), fmt_num(*y)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MotionRecording {
    pub entity_id: String,
    pub samples: Vec<(f64, World3)>,
    pub active: bool,
}

impl MotionRecording {
    pub fn new(entity_id: impl Into<String>) -> Self {
        MotionRecording { entity_id: entity_id.into(), samples: Vec::new(), active: false }
    }

    pub fn start(&mut self) -> Result<(), VizError> {
        if self.active {
            return Err(VizError::AlreadyRecording(self.entity_id.clone()));
        }
        self.active = true;
        Ok(())
    }

    pub fn stop(&mut self) -> Result<(), VizError> {
        if !self.active {
            return Err(VizError::NotRecording(self.entity_id.clone()));
        }
        self.active = false;
        Ok(())
    }

    /// Record one position; ignored unless active and strictly later than the last sample.
    pub fn push(&mut self, t: f64, p: World3) -> bool {
        if !self.active || self.samples.last().is_some_and(|(t0, _)| t <= *t0) {
            return false;
        }
        self.samples.push((t, p));
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StrobeSet {
    pub markers: Vec<(f64, World3)>,
    pub min_spacing: f64,
}

impl StrobeSet {
    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,z\n");
        for (t, p) in &self.markers {
            out.push_str(&format!("{},{},{},{}\n", fmt_num(*t), fmt_num(p.x), fmt_num(p.y), fmt_num(p.z)));
        }
        out
    }
}

/// Greedy spacing filter: keep the first sample, then every sample at least
/// `min_spacing` from the last kept one.
pub fn strobe_markers(rec: &MotionRecording, min_spacing: f64) -> StrobeSet {
    let spacing = min_spacing.max(0.0);
    let mut markers: Vec<(f64, World3)> = Vec::new();
    for &(t, p) in &rec.samples {
        match markers.last() {
            Some((_, last)) if (p - last).norm() < spacing => {}
            _ => markers.push((t, p)),
        }
    }
    StrobeSet { markers, min_spacing: spacing }
}
