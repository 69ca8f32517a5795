//! Test oracles shared by the integration tests and the acceptance runner.
//! Nothing here calls into the code under test.
#![allow(dead_code)]

use rand::Rng;

use livesketch_core::geometry::{CameraState, Intrinsics, ReferencePlane, World3};

/// Expression tree built by the test generator, kept separate from the
/// library AST so the reference evaluator shares no code with the real one.
#[derive(Debug, Clone)]
pub enum RefExpr {
    Num(f64),
    Var(&'static str),
    Neg(Box<RefExpr>),
    Bin(char, Box<RefExpr>, Box<RefExpr>),
    Cmp(&'static str, Box<RefExpr>, Box<RefExpr>),
    Call(&'static str, Vec<RefExpr>),
}

pub const VARS: [(&str, f64); 5] = [("a", 3.5), ("b", -2.25), ("angle", 40.0), ("length", 0.125), ("dino-size", 7.0)];

/// Outcome class of an evaluation, matched against the library's error codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefOutcome {
    Value(f64),
    DivisionByZero,
    DomainError,
}

impl RefExpr {
    /// Fully parenthesized source text with spaces around binary operators,
    /// so hyphenated names never swallow a minus sign.
    pub fn render(&self) -> String {
        match self {
            // parenthesized so `-2 ^ 2` cannot be read as `-(2 ^ 2)`
            RefExpr::Num(v) if v.is_sign_negative() => format!("({v})"),
            RefExpr::Num(v) => format!("{v}"),
            RefExpr::Var(n) => n.to_string(),
            RefExpr::Neg(e) => format!("(-{})", e.render()),
            RefExpr::Bin(op, l, r) => format!("({} {op} {})", l.render(), r.render()),
            RefExpr::Cmp(op, l, r) => format!("({} {op} {})", l.render(), r.render()),
            RefExpr::Call(f, args) => {
                format!("{f}({})", args.iter().map(RefExpr::render).collect::<Vec<_>>().join(", "))
            }
        }
    }

    pub fn eval(&self) -> RefOutcome {
        use RefOutcome::*;
        macro_rules! val {
            ($e:expr) => {
                match $e.eval() {
                    Value(v) => v,
                    other => return other,
                }
            };
        }
        let finite = |v: f64| if v.is_finite() { Value(v) } else { DomainError };
        match self {
            RefExpr::Num(v) => Value(*v),
            RefExpr::Var(n) => Value(VARS.iter().find(|(k, _)| k == n).unwrap().1),
            RefExpr::Neg(e) => Value(-val!(e)),
            RefExpr::Bin(op, l, r) => {
                let (a, b) = (val!(l), val!(r));
                match op {
                    '+' => finite(a + b),
                    '-' => finite(a - b),
                    '*' => finite(a * b),
                    '/' if b == 0.0 => DivisionByZero,
                    '/' => finite(a / b),
                    '^' => finite(a.powf(b)),
                    _ => unreachable!(),
                }
            }
            RefExpr::Cmp(op, l, r) => {
                let (a, b) = (val!(l), val!(r));
                let t = match *op {
                    ">" => a > b,
                    "<" => a < b,
                    ">=" => a >= b,
                    "<=" => a <= b,
                    "==" => a == b,
                    _ => unreachable!(),
                };
                Value(f64::from(u8::from(t)))
            }
            RefExpr::Call(f, args) => {
                let mut v = Vec::with_capacity(args.len());
                for a in args {
                    v.push(val!(a));
                }
                match *f {
                    "sin" => Value(sin_deg(v[0])),
                    "cos" => Value(sin_deg(v[0] + 90.0)),
                    "tan" => {
                        let c = sin_deg(v[0] + 90.0);
                        if c == 0.0 {
                            DomainError
                        } else {
                            finite((wrap_deg(v[0]) * std::f64::consts::PI / 180.0).tan())
                        }
                    }
                    "sqrt" if v[0] < 0.0 => DomainError,
                    "sqrt" => Value(v[0].sqrt()),
                    "abs" => Value(v[0].abs()),
                    "min" => Value(v.iter().copied().reduce(f64::min).unwrap()),
                    "max" => Value(v.iter().copied().reduce(f64::max).unwrap()),
                    "pow" => finite(v[0].powf(v[1])),
                    _ => unreachable!(),
                }
            }
        }
    }
}

/// Wrap into [-180, 180]. `%` is exact in floating point and small angles
/// are left untouched, so no precision is lost near zero.
fn wrap_deg(x: f64) -> f64 {
    let r = x % 360.0;
    if r > 180.0 {
        r - 360.0
    } else if r < -180.0 {
        r + 360.0
    } else {
        r
    }
}

/// Sine in degrees, exact where the true value is rational (0, 30, 90,
/// 150, ... degrees).
fn sin_deg(x: f64) -> f64 {
    let x = wrap_deg(x);
    let k = x / 30.0;
    if k.fract() == 0.0 && k.abs() < 1e15 {
        match (k as i64).rem_euclid(12) {
            0 | 6 => return 0.0,
            1 | 5 => return 0.5,
            7 | 11 => return -0.5,
            3 => return 1.0,
            9 => return -1.0,
            _ => {}
        }
    }
    (x * std::f64::consts::PI / 180.0).sin()
}

/// Random expression of bounded depth.
pub fn random_expr(rng: &mut impl Rng, depth: u32) -> RefExpr {
    let leaf = depth == 0 || rng.gen_bool(0.25);
    if leaf {
        return if rng.gen_bool(0.6) {
            let v: f64 = rng.gen_range(-50.0..50.0);
            RefExpr::Num((v * 1000.0).round() / 1000.0)
        } else {
            RefExpr::Var(VARS[rng.gen_range(0..VARS.len())].0)
        };
    }
    let sub = |rng: &mut _| Box::new(random_expr(rng, depth - 1));
    match rng.gen_range(0..10) {
        0 => RefExpr::Neg(sub(rng)),
        1..=5 => {
            let op = ['+', '-', '*', '/', '^'][rng.gen_range(0..5)];
            if op == '^' {
                // small integer exponents keep most powers finite
                let e = RefExpr::Num(f64::from(rng.gen_range(0..4)));
                RefExpr::Bin(op, sub(rng), Box::new(e))
            } else {
                RefExpr::Bin(op, sub(rng), sub(rng))
            }
        }
        6 => {
            let op = [">", "<", ">=", "<=", "=="][rng.gen_range(0..5)];
            RefExpr::Cmp(op, sub(rng), sub(rng))
        }
        7 => {
            let f = ["sin", "cos", "tan"][rng.gen_range(0..3)];
            // keep arguments within one turn: beyond that the result is
            // ill-conditioned and last-bit differences get amplified
            let arg = loop {
                let a = sub(rng);
                if matches!(a.eval(), RefOutcome::Value(v) if v.abs() <= 360.0) {
                    break a;
                }
            };
            RefExpr::Call(f, vec![*arg])
        }
        8 => {
            let f = ["sqrt", "abs"][rng.gen_range(0..2)];
            RefExpr::Call(f, vec![*sub(rng)])
        }
        _ => {
            let f = ["min", "max", "pow"][rng.gen_range(0..3)];
            if f == "pow" {
                RefExpr::Call(f, vec![*sub(rng), RefExpr::Num(f64::from(rng.gen_range(0..3)))])
            } else {
                let n = rng.gen_range(1..4);
                RefExpr::Call(f, (0..n).map(|_| *sub(rng)).collect())
            }
        }
    }
}

/// Relative difference with a unit floor on the scale, so results that
/// should be zero are compared absolutely.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// A random camera looking roughly at a random plane from 0.3 to 3 m away.
pub fn random_pose(rng: &mut impl Rng) -> (CameraState, ReferencePlane) {
    let unit = |rng: &mut _| loop {
        let v = World3::new(
            Rng::gen_range(rng, -1.0..1.0),
            Rng::gen_range(rng, -1.0..1.0),
            Rng::gen_range(rng, -1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            break v / n;
        }
    };
    let normal = unit(rng);
    let origin = World3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let plane = ReferencePlane::new(origin, normal, unit(rng)).unwrap();
    // eye on the normal side, tilted up to about 60 degrees off the normal
    let tilt = (unit(rng) * 0.9 + normal).normalize();
    let tilt = if tilt.dot(&normal) < 0.5 { normal } else { tilt };
    let eye = origin + tilt * rng.gen_range(0.3..3.0);
    let target = origin + plane.basis_u * rng.gen_range(-0.2..0.2) + plane.basis_v * rng.gen_range(-0.2..0.2);
    let up = loop {
        let u = unit(rng);
        if u.cross(&(target - eye)).norm() > 0.2 {
            break u;
        }
    };
    let (w, h) = [(640, 480), (1280, 720), (1920, 1440)][rng.gen_range(0..3)];
    let f = rng.gen_range(300.0..1500.0);
    let k = Intrinsics { fx: f, fy: f * rng.gen_range(0.98..1.02), cx: w as f64 / 2.0 + rng.gen_range(-5.0..5.0), cy: h as f64 / 2.0 };
    (CameraState::look_at(eye, target, up, k, w, h).unwrap(), plane)
}

/// Vertices of a random convex polygon in plane coordinates (points on an
/// ellipse at sorted angles), counter-clockwise.
pub fn random_convex_polygon(rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let n = rng.gen_range(3..12);
    let (rx, ry) = (rng.gen_range(0.05..2.0), rng.gen_range(0.05..2.0));
    let (cx, cy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    angles
        .into_iter()
        .map(|a| {
            let (x, y) = (rx * a.cos(), ry * a.sin());
            (cx + x * rot.cos() - y * rot.sin(), cy + x * rot.sin() + y * rot.cos())
        })
        .collect()
}

/// Polygon area as a sum of fan triangles, each measured by Heron's formula.
pub fn triangulated_area(pts: &[(f64, f64)]) -> f64 {
    let d = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
    (1..pts.len() - 1)
        .map(|i| {
            let (a, b, c) = (d(pts[0], pts[i]), d(pts[i], pts[i + 1]), d(pts[i + 1], pts[0]));
            // Kahan's stable arrangement of Heron's formula
            let mut s = [a, b, c];
            s.sort_by(|x, y| y.total_cmp(x));
            let [a, b, c] = s;
            0.25 * ((a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))).max(0.0).sqrt()
        })
        .sum()
}

/// Greedy strobe filter on integer millimetre positions along a line.
pub fn greedy_marker_count(positions_mm: &[i64], spacing_mm: i64) -> usize {
    let mut last: Option<i64> = None;
    let mut count = 0;
    for &p in positions_mm {
        if last.map_or(true, |l| (p - l).abs() >= spacing_mm) {
            last = Some(p);
            count += 1;
        }
    }
    count
}
