use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        dx.hypot(dy)
    }

    pub fn expand(&self, m: f64) -> Rect {
        Rect { x0: self.x0 - m, y0: self.y0 - m, x1: self.x1 + m, y1: self.y1 + m }
    }
}

/// Entry parameter `t ≥ 0` of the ray `o + t·d` into `r`, if it enters.
/// Returns `Some(0)` when the origin is already inside.
pub fn ray_rect(ox: f64, oy: f64, dx: f64, dy: f64, r: &Rect) -> Option<f64> {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for (o, d, lo, hi) in [(ox, dx, r.x0, r.x1), (oy, dy, r.y0, r.y1)] {
        if d.abs() < 1e-15 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let (mut t0, mut t1) = ((lo - o) / d, (hi - o) / d);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return None;
            }
        }
    }
    Some(tmin)
}

/// Entry parameter of the ray into the disc centered at `(cx, cy)`.
pub fn ray_circle(ox: f64, oy: f64, dx: f64, dy: f64, cx: f64, cy: f64, radius: f64) -> Option<f64> {
    let (fx, fy) = (ox - cx, oy - cy);
    let c = fx * fx + fy * fy - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = dx * dx + dy * dy;
    let b = 2.0 * (fx * dx + fy * dy);
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    Some((-b - disc.sqrt()) / (2.0 * a))
}

/// First contact parameter of a disc of `radius` swept along `o + t·d`
/// against a rectangle (ray against the rounded Minkowski sum).
pub fn sweep_circle_rect(ox: f64, oy: f64, dx: f64, dy: f64, radius: f64, r: &Rect) -> Option<f64> {
    let slabs = [
        Rect { x0: r.x0 - radius, y0: r.y0, x1: r.x1 + radius, y1: r.y1 },
        Rect { x0: r.x0, y0: r.y0 - radius, x1: r.x1, y1: r.y1 + radius },
    ];
    let corners = [(r.x0, r.y0), (r.x0, r.y1), (r.x1, r.y0), (r.x1, r.y1)];
    slabs
        .iter()
        .filter_map(|s| ray_rect(ox, oy, dx, dy, s))
        .chain(corners.iter().filter_map(|&(cx, cy)| ray_circle(ox, oy, dx, dy, cx, cy, radius)))
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
}

/// Heading unit vector for a yaw in degrees (0° = +y, clockwise positive).
pub fn heading(yaw_deg: f64) -> (f64, f64) {
    let r = yaw_deg.to_radians();
    (r.sin(), r.cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_rect_face() {
        let r = Rect::new(1.0, -1.0, 2.0, 1.0);
        assert_eq!(ray_rect(0.0, 0.0, 1.0, 0.0, &r), Some(1.0));
        assert_eq!(ray_rect(0.0, 0.0, -1.0, 0.0, &r), None);
        assert_eq!(ray_rect(1.5, 0.0, 1.0, 0.0, &r), Some(0.0));
    }

    #[test]
    fn ray_hits_circle() {
        let t = ray_circle(0.0, 0.0, 1.0, 0.0, 3.0, 0.0, 1.0).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!(ray_circle(0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 1.0).is_none());
    }

    #[test]
    fn swept_circle_stops_at_contact() {
        let wall = Rect::new(0.0, 1.0, 2.0, 1.1);
        let t = sweep_circle_rect(1.0, 0.0, 0.0, 1.0, 0.2, &wall).unwrap();
        assert!((t - 0.8).abs() < 1e-12);
        // Corner contact.
        let t = sweep_circle_rect(-0.3, 0.0, 0.0, 1.0, 0.2, &wall);
        assert!(t.is_none());
        let t = sweep_circle_rect(-0.1, 0.0, 0.0, 1.0, 0.2, &wall).unwrap();
        let expected = 1.0 - (0.2f64.powi(2) - 0.1f64.powi(2)).sqrt();
        assert!((t - expected).abs() < 1e-12);
    }

    #[test]
    fn heading_convention() {
        let (x, y) = heading(0.0);
        assert!(x.abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
        let (x, y) = heading(90.0);
        assert!((x - 1.0).abs() < 1e-12 && y.abs() < 1e-12);
    }
}
