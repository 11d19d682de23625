//! Optimal reciprocal collision avoidance: one half-plane of permitted velocities per neighbour.

use super::lp::HalfPlane;
use super::vec2::Vec2;
use super::{AgentState, EnvConfig};

/// ORCA half-plane that agent `me` must respect with respect to `other`.
///
/// The velocity obstacle is the cone of relative velocities that collide within
/// `time_horizon`, truncated by the disc of radius `combined_radius / time_horizon`. When the
/// agents already overlap, the cone for one `time_step` is used instead. Each agent takes
/// half of the smallest change `u` that leaves the obstacle.
pub fn orca_halfplane(
    me: &AgentState,
    other: &AgentState,
    combined_radius: f64,
    time_horizon: f64,
    time_step: f64,
) -> (HalfPlane, Vec2) {
    let rel_pos = other.position - me.position;
    let rel_vel = me.velocity - other.velocity;
    let dist_sq = rel_pos.norm_sq();
    let r = combined_radius;
    let r_sq = r * r;

    let (direction, u) = if dist_sq > r_sq {
        let inv_tau = 1.0 / time_horizon;
        // from cut-off centre to relative velocity
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > r_sq * w_len_sq {
            // project on the truncation disc
            let w_len = w_len_sq.sqrt();
            let unit_w = w * (1.0 / w_len);
            (
                Vec2::new(unit_w.y, -unit_w.x),
                unit_w * (r * inv_tau - w_len),
            )
        } else {
            // project on a leg of the cone
            let leg = (dist_sq - r_sq).sqrt();
            let dir = if rel_pos.det(w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * r,
                    rel_pos.x * r + rel_pos.y * leg,
                ) * (1.0 / dist_sq)
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * r,
                    -rel_pos.x * r + rel_pos.y * leg,
                ) * (1.0 / dist_sq)
            };
            let dot2 = rel_vel.dot(dir);
            (dir, dir * dot2 - rel_vel)
        }
    } else {
        let inv_dt = 1.0 / time_step;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > 1e-12 {
            w * (1.0 / w_len)
        } else if dist_sq > 0.0 {
            -rel_pos.normalized()
        } else {
            Vec2::new(1.0, 0.0)
        };
        (
            Vec2::new(unit_w.y, -unit_w.x),
            unit_w * (r * inv_dt - w_len),
        )
    };
    (
        HalfPlane {
            point: me.velocity + u * 0.5,
            direction,
        },
        u,
    )
}

/// Constraints for agent `i` from every other agent, in neighbour-index order.
pub fn orca_halfplanes(i: usize, states: &[AgentState], config: &EnvConfig) -> Vec<HalfPlane> {
    let combined = config.combined_radius();
    states
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, other)| {
            orca_halfplane(
                &states[i],
                other,
                combined,
                config.orca_time_horizon,
                config.dt,
            )
            .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::lp::solve_velocity_lp;

    fn state(x: f64, y: f64, vx: f64, vy: f64) -> AgentState {
        AgentState {
            position: Vec2::new(x, y),
            velocity: Vec2::new(vx, vy),
        }
    }

    #[test]
    fn distant_static_pair_leaves_speed_disc_free() {
        let cfg = EnvConfig::default();
        let states = [state(0.0, 0.0, 0.0, 0.0), state(10.0, 0.0, 0.0, 0.0)];
        let lines = orca_halfplanes(0, &states, &cfg);
        assert_eq!(lines.len(), 1);
        // every velocity on the boundary of the (doubled) speed disc is permitted
        for k in 0..64 {
            let a = k as f64 * std::f64::consts::TAU / 64.0;
            let v = Vec2::new(a.cos(), a.sin()) * 2.0;
            assert!(lines[0].contains(v, 1e-12), "{v:?}");
        }
        let pref = Vec2::new(1.0, 0.0);
        assert_eq!(solve_velocity_lp(&lines, pref, 1.0), pref);
    }

    #[test]
    fn head_on_pair_is_reciprocal() {
        let cfg = EnvConfig::default();
        let a = state(-1.0, 0.0, 1.0, 0.0);
        let b = state(1.0, 0.0, -1.0, 0.0);
        let r = cfg.combined_radius();
        let (_, ua) = orca_halfplane(&a, &b, r, cfg.orca_time_horizon, cfg.dt);
        let (_, ub) = orca_halfplane(&b, &a, r, cfg.orca_time_horizon, cfg.dt);
        assert!((ua.x + ub.x).abs() < 1e-12 && (ua.y + ub.y).abs() < 1e-12);
        assert!(ua.norm() > 0.0);
    }

    #[test]
    fn lone_agent_has_no_constraints() {
        let cfg = EnvConfig::default();
        assert!(orca_halfplanes(0, &[state(0.0, 0.0, 0.0, 0.0)], &cfg).is_empty());
    }
}
