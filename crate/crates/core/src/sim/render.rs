use serde::{Deserialize, Serialize};

use super::geometry::heading;
use super::house::{Hit, House};
use super::motion::AgentPose;
use crate::policy::{BBox, Detection, Observation};

pub const FLOOR_CHANNEL: usize = 0;
pub const WALL_CHANNEL: usize = 1;
pub const FIRST_CLASS_CHANNEL: usize = 2;

/// Camera model for the ego-centric raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub camera_height: f64,
    pub wall_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 56, height: 56, hfov_deg: 90.0, camera_height: 0.9, wall_height: 2.5 }
    }
}

impl CameraConfig {
    fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// Horizontal angle of a pixel column relative to the optical axis, in
    /// degrees, clockwise positive.
    pub fn column_angle(&self, col: usize) -> f64 {
        let u = col as f64 + 0.5 - self.width as f64 / 2.0;
        (u / self.focal()).atan().to_degrees()
    }

    /// Tangent of the elevation of a pixel row for a given pitch.
    fn row_elevation(&self, row: usize, pitch_deg: f64) -> f64 {
        let v = self.height as f64 / 2.0 - (row as f64 + 0.5);
        ((v / self.focal()).atan() + pitch_deg.to_radians()).tan()
    }
}

/// Rendered raster plus a per-pixel object instance buffer.
#[derive(Clone, Debug)]
pub struct Frame {
    pub observation: Observation,
    pub instances: Vec<Option<u32>>,
}

impl Frame {
    pub fn instance(&self, row: usize, col: usize) -> Option<usize> {
        self.instances[row * self.observation.width() + col].map(|i| i as usize)
    }

    /// Number of pixels showing an instance.
    pub fn instance_pixels(&self, instance: usize) -> usize {
        self.instances.iter().filter(|&&i| i == Some(instance as u32)).count()
    }

    /// Normalized pixel extent of an instance, if it is on screen.
    pub fn instance_bbox(&self, instance: usize) -> Option<BBox> {
        let (w, h) = (self.observation.width(), self.observation.height());
        let mut ext: Option<(usize, usize, usize, usize)> = None;
        for r in 0..h {
            for c in 0..w {
                if self.instances[r * w + c] == Some(instance as u32) {
                    ext = Some(match ext {
                        None => (c, r, c, r),
                        Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
                    });
                }
            }
        }
        let (c0, r0, c1, r1) = ext?;
        let (x1, y1) = (c0 as f64 / w as f64, r0 as f64 / h as f64);
        let (x2, y2) = ((c1 + 1) as f64 / w as f64, (r1 + 1) as f64 / h as f64);
        Some(BBox { x1, y1, x2, y2, area: (x2 - x1) * (y2 - y1) })
    }
}

struct Surface {
    dist: f64,
    top: f64,
    hit: Hit,
}

/// Renders the first-person semantic raster: one ray per column, rows mapped
/// to elevation angles. Floor, wall and object pixels are one-hot in their
/// channels; pixels above the walls stay empty.
pub fn render_frame(pose: &AgentPose, house: &House, cam: &CameraConfig) -> Frame {
    let channels = FIRST_CLASS_CHANNEL + house.num_classes;
    let mut obs = Observation::zeros(cam.height, cam.width, channels);
    let mut instances = vec![None; cam.width * cam.height];
    let elevations: Vec<f64> = (0..cam.height).map(|r| cam.row_elevation(r, pose.pitch)).collect();
    let mut surfaces = Vec::with_capacity(house.objects.len() + 1);
    for col in 0..cam.width {
        let (dx, dy) = heading(pose.yaw + cam.column_angle(col));
        column_surfaces(house, pose.x, pose.y, dx, dy, cam, &mut surfaces);
        for (row, &tan_el) in elevations.iter().enumerate() {
            let floor_dist = if tan_el < 0.0 { cam.camera_height / -tan_el } else { f64::INFINITY };
            let mut px = None;
            for s in &surfaces {
                if floor_dist < s.dist {
                    px = Some((FLOOR_CHANNEL, None));
                    break;
                }
                let z = cam.camera_height + s.dist * tan_el;
                if z <= s.top {
                    px = Some(match s.hit {
                        Hit::Wall => (WALL_CHANNEL, None),
                        Hit::Object(k) => (FIRST_CLASS_CHANNEL + house.objects[k].class_id, Some(k as u32)),
                    });
                    break;
                }
            }
            if let Some((ch, inst)) = px {
                obs.paint(row, col, Some(ch));
                instances[row * cam.width + col] = inst;
            }
        }
    }
    Frame { observation: obs, instances }
}

/// Surfaces along one ray, nearest first, ending at the first wall.
fn column_surfaces(house: &House, ox: f64, oy: f64, dx: f64, dy: f64, cam: &CameraConfig, out: &mut Vec<Surface>) {
    out.clear();
    let wall = house
        .walls
        .iter()
        .filter_map(|w| super::geometry::ray_rect(ox, oy, dx, dy, w))
        .fold(f64::INFINITY, f64::min);
    for (k, o) in house.objects.iter().enumerate() {
        if let Some(t) = super::geometry::ray_circle(ox, oy, dx, dy, o.x, o.y, o.radius) {
            if t < wall {
                out.push(Surface { dist: t, top: o.height, hit: Hit::Object(k) });
            }
        }
    }
    out.sort_by(|a, b| a.dist.total_cmp(&b.dist));
    if wall.is_finite() {
        out.push(Surface { dist: wall, top: cam.wall_height, hit: Hit::Wall });
    }
}

pub fn render_observation(pose: &AgentPose, house: &House, cam: &CameraConfig) -> Observation {
    render_frame(pose, house, cam).observation
}

/// Box of the nearest on-screen instance of `class_id` in an already
/// rendered frame.
pub fn frame_bbox(frame: &Frame, pose: &AgentPose, house: &House, class_id: usize) -> Detection {
    let nearest = house
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.class_id == class_id)
        .map(|(k, o)| (k, (o.x - pose.x).hypot(o.y - pose.y)))
        .filter(|&(k, _)| frame.instances.contains(&Some(k as u32)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match nearest.and_then(|(k, _)| frame.instance_bbox(k)) {
        Some(b) => Detection::Box(b),
        None => Detection::NoDetection,
    }
}

/// Ground-truth detection of `class_id` in the current view.
pub fn project_bbox(pose: &AgentPose, house: &House, class_id: usize, cam: &CameraConfig) -> Detection {
    frame_bbox(&render_frame(pose, house, cam), pose, house, class_id)
}

/// Whether instance `k` covers at least `min_pixels` pixels of the view.
/// Skips rendering when the object is clearly outside the horizontal field
/// of view.
pub fn instance_visible(pose: &AgentPose, house: &House, k: usize, cam: &CameraConfig, min_pixels: usize) -> bool {
    let o = &house.objects[k];
    let (vx, vy) = (o.x - pose.x, o.y - pose.y);
    let dist = vx.hypot(vy);
    if dist > o.radius {
        let bearing = vx.atan2(vy).to_degrees();
        let mut rel = (bearing - pose.yaw).rem_euclid(360.0);
        if rel > 180.0 {
            rel -= 360.0;
        }
        let half_width = (o.radius / dist).asin().to_degrees();
        if rel.abs() > cam.hfov_deg / 2.0 + half_width + 1.0 {
            return false;
        }
    }
    render_frame(pose, house, cam).instance_pixels(k) >= min_pixels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::house::{ObjectInstance, House};

    #[test]
    fn facing_wall_up_close() {
        let h = House::open_room(4.0, 4.0, vec![], 5);
        let p = AgentPose::new(2.0, 3.7, 0.0, h.agent_radius);
        let obs = render_observation(&p, &h, &CameraConfig::default());
        let mid = obs.height() / 2;
        let walls = (0..obs.width()).filter(|&c| obs.argmax(mid, c) == Some(WALL_CHANNEL)).count();
        assert_eq!(walls, obs.width());
        assert!(obs.is_well_formed());
    }

    #[test]
    fn symmetric_room_full_turn() {
        let h = House::open_room(4.0, 4.0, vec![], 5);
        let cam = CameraConfig::default();
        let p = AgentPose::new(2.0, 2.0, 0.0, h.agent_radius);
        let a = render_observation(&p, &h, &cam);
        let mut q = p;
        for _ in 0..12 {
            q = crate::sim::motion::apply_action(&q, crate::policy::Action::RotateRight, &h).0;
        }
        assert_eq!(render_observation(&q, &h, &cam), a);
    }

    #[test]
    fn bbox_covers_object_pixels() {
        let obj = ObjectInstance { class_id: 3, x: 2.0, y: 3.0, radius: 0.35, height: 1.2 };
        let h = House::open_room(4.0, 4.0, vec![obj], 5);
        let cam = CameraConfig::default();
        let p = AgentPose::new(2.0, 1.5, 0.0, h.agent_radius);
        let frame = render_frame(&p, &h, &cam);
        let Detection::Box(b) = frame_bbox(&frame, &p, &h, 3) else { panic!("object should be visible") };
        b.validate().unwrap();
        let obs = &frame.observation;
        for r in 0..obs.height() {
            for c in 0..obs.width() {
                if obs.argmax(r, c) == Some(FIRST_CLASS_CHANNEL + 3) {
                    let (x, y) = ((c as f64 + 0.5) / obs.width() as f64, (r as f64 + 0.5) / obs.height() as f64);
                    assert!(x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2);
                }
            }
        }
        // Centered in view.
        assert!(((b.x1 + b.x2) / 2.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn filling_object_gives_unit_box() {
        let obj = ObjectInstance { class_id: 1, x: 2.0, y: 2.9, radius: 0.6, height: 2.4 };
        let h = House::open_room(4.0, 4.0, vec![obj], 5);
        let p = AgentPose::new(2.0, 2.1, 0.0, h.agent_radius);
        let Detection::Box(b) = project_bbox(&p, &h, 1, &CameraConfig::default()) else { panic!() };
        assert!(b.x1 < 0.05 && b.x2 > 0.95 && b.area > 0.8);
    }
}
