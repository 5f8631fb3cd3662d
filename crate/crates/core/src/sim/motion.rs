use serde::{Deserialize, Serialize};

use super::geometry::heading;
use super::house::House;
use crate::policy::Action;

pub const MOVE_STEP: f64 = 0.2;
pub const ROTATE_STEP: f64 = 30.0;
pub const ROTATE_SMALL_STEP: f64 = 6.0;
pub const PITCH_STEP: f64 = 30.0;
pub const PITCH_LIMIT: f64 = 30.0;

/// Gap left between the body and an obstacle after a blocked move.
const CONTACT_GAP: f64 = 1e-4;

/// Agent pose. Yaw in degrees, 0° along +y, clockwise positive; pitch in
/// degrees, positive looks up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub body_radius: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, yaw: f64, body_radius: f64) -> Self {
        Self { x, y, yaw: wrap_yaw(yaw), pitch: 0.0, body_radius }
    }
}

/// Wraps a yaw angle into `[0, 360)`, snapping values within 1e-9 of a full
/// turn back to zero.
pub fn wrap_yaw(yaw: f64) -> f64 {
    let w = yaw.rem_euclid(360.0);
    if (360.0 - w).abs() < 1e-9 || w.abs() < 1e-9 {
        0.0
    } else {
        w
    }
}

/// Applies one action. Translations sweep the body disc along the motion
/// segment and stop just short of the first contact; rotations and pitch
/// changes never collide because the footprint is a disc.
pub fn apply_action(pose: &AgentPose, action: Action, house: &House) -> (AgentPose, bool) {
    let mut next = *pose;
    match action {
        Action::MoveAhead | Action::MoveBack => {
            let sign = if action == Action::MoveAhead { 1.0 } else { -1.0 };
            let (hx, hy) = heading(pose.yaw);
            let (dx, dy) = (sign * hx, sign * hy);
            let travel = match house.sweep(pose.x, pose.y, dx, dy) {
                Some(t) if t < MOVE_STEP => {
                    next.x += dx * (t - CONTACT_GAP).max(0.0);
                    next.y += dy * (t - CONTACT_GAP).max(0.0);
                    return (next, true);
                }
                _ => MOVE_STEP,
            };
            next.x += dx * travel;
            next.y += dy * travel;
        }
        Action::RotateRight => next.yaw = wrap_yaw(pose.yaw + ROTATE_STEP),
        Action::RotateLeft => next.yaw = wrap_yaw(pose.yaw - ROTATE_STEP),
        Action::RotateRightSmall => next.yaw = wrap_yaw(pose.yaw + ROTATE_SMALL_STEP),
        Action::RotateLeftSmall => next.yaw = wrap_yaw(pose.yaw - ROTATE_SMALL_STEP),
        Action::LookUp => next.pitch = (pose.pitch + PITCH_STEP).min(PITCH_LIMIT),
        Action::LookDown => next.pitch = (pose.pitch - PITCH_STEP).max(-PITCH_LIMIT),
        Action::Done => {}
    }
    (next, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::Rect;
    use crate::sim::house::{outer_walls, House};

    fn open() -> House {
        House::open_room(4.0, 4.0, vec![], 5)
    }

    #[test]
    fn move_ahead_in_open_space() {
        let h = open();
        let p = AgentPose::new(1.0, 1.0, 0.0, h.agent_radius);
        let (q, hit) = apply_action(&p, Action::MoveAhead, &h);
        assert!(!hit);
        assert!((q.x - 1.0).abs() < 1e-12 && (q.y - 1.2).abs() < 1e-12);
    }

    #[test]
    fn blocked_move_stops_short() {
        let mut walls = outer_walls(4.0, 4.0, 0.1);
        walls.push(Rect::new(0.0, 1.0 + 0.18 + 0.05, 4.0, 1.4 + 0.18));
        let h = House::from_parts(0, 4.0, 4.0, walls, vec![], vec![], 5, 0.18, 0.05);
        let p = AgentPose::new(1.0, 1.0, 0.0, h.agent_radius);
        let (q, hit) = apply_action(&p, Action::MoveAhead, &h);
        assert!(hit);
        assert!(q.y - p.y < MOVE_STEP && q.y > p.y);
        assert!(!h.disc_overlaps(q.x, q.y, h.agent_radius));
    }

    #[test]
    fn small_rotations_wrap() {
        let h = open();
        let mut p = AgentPose::new(2.0, 2.0, 0.0, h.agent_radius);
        for _ in 0..60 {
            p = apply_action(&p, Action::RotateRightSmall, &h).0;
        }
        assert_eq!(p.yaw, 0.0);
        let q = apply_action(&p, Action::RotateLeft, &h).0;
        assert!((q.yaw - 330.0).abs() < 1e-12);
    }

    #[test]
    fn pitch_is_clamped_and_done_is_noop() {
        let h = open();
        let p = AgentPose::new(2.0, 2.0, 90.0, h.agent_radius);
        let up = apply_action(&apply_action(&p, Action::LookUp, &h).0, Action::LookUp, &h).0;
        assert_eq!(up.pitch, 30.0);
        assert_eq!(apply_action(&p, Action::Done, &h), (p, false));
    }
}
