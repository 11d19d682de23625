//! Incremental 2-D linear programming over half-planes, as used by ORCA.
//!
//! Constraints are directed lines; the permitted side is to the left of `direction`.
//! Insertion order is the order of the slice, so results are deterministic.

use super::vec2::Vec2;

const EPS: f64 = 1e-12;

/// Half-plane `{ v : det(direction, point − v) ≤ 0 }`, i.e. left of the directed line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    /// unit vector
    pub direction: Vec2,
}

impl HalfPlane {
    /// Outward permitted normal (points into the allowed side).
    pub fn normal(&self) -> Vec2 {
        Vec2::new(-self.direction.y, self.direction.x)
    }

    /// Signed violation; positive when `v` lies outside.
    pub fn violation(&self, v: Vec2) -> f64 {
        self.direction.det(self.point - v)
    }

    pub fn contains(&self, v: Vec2, tol: f64) -> bool {
        self.violation(v) <= tol
    }
}

/// Optimises along line `lines[idx]` subject to lines before it and the speed disc.
fn solve_on_line(
    lines: &[HalfPlane],
    idx: usize,
    radius: f64,
    target: Vec2,
    direction_opt: bool,
) -> Option<Vec2> {
    let line = lines[idx];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..idx] {
        let denom = line.direction.det(other.direction);
        let numer = other.direction.det(line.point - other.point);
        if denom.abs() <= EPS {
            // parallel
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if target.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        line.direction.dot(target - line.point).clamp(t_left, t_right)
    };
    Some(line.point + line.direction * t)
}

/// Returns `(number of lines satisfied before failure, result)`.
fn solve_lines(lines: &[HalfPlane], radius: f64, target: Vec2, direction_opt: bool) -> (usize, Vec2) {
    let mut result = if direction_opt {
        target * radius
    } else if target.norm_sq() > radius * radius {
        target.normalized() * radius
    } else {
        target
    };
    for i in 0..lines.len() {
        if lines[i].violation(result) > 0.0 {
            let prev = result;
            match solve_on_line(lines, i, radius, target, direction_opt) {
                Some(v) => result = v,
                None => return (i, prev),
            }
        }
    }
    (lines.len(), result)
}

/// Fallback for an infeasible program: minimise the maximum violation.
fn solve_min_violation(lines: &[HalfPlane], begin: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if lines[i].violation(result) > distance {
            let mut projected = Vec::with_capacity(i);
            for j in 0..i {
                let det = lines[i].direction.det(lines[j].direction);
                let point = if det.abs() <= EPS {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        // same direction
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction
                            * (lines[j].direction.det(lines[i].point - lines[j].point) / det)
                };
                let direction = (lines[j].direction - lines[i].direction).normalized();
                projected.push(HalfPlane { point, direction });
            }
            let temp = result;
            let (n, r) = solve_lines(&projected, radius, lines[i].normal(), true);
            result = if n < projected.len() { temp } else { r };
            distance = lines[i].violation(result);
        }
    }
    result
}

/// Velocity closest to `preferred` inside every half-plane and the disc `|v| ≤ max_speed`;
/// when infeasible, the velocity minimising the largest violation.
pub fn solve_velocity_lp(constraints: &[HalfPlane], preferred: Vec2, max_speed: f64) -> Vec2 {
    let (n, result) = solve_lines(constraints, max_speed, preferred, false);
    let result = if n < constraints.len() {
        solve_min_violation(constraints, n, max_speed, result)
    } else {
        result
    };
    // roundoff can leave the point a hair outside the disc
    let norm = result.norm();
    if norm > max_speed {
        result * (max_speed / norm)
    } else {
        result
    }
}
