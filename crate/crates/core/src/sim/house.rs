use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{ray_circle, ray_rect, sweep_circle_rect, Rect};
use crate::binfmt::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const HOUSE_MAGIC: &[u8; 8] = b"NAVHOUSE";
pub const HOUSE_VERSION: u32 = 1;

const LAYOUT_ATTEMPTS: usize = 40;
const FURNISH_ATTEMPTS: usize = 25;
const MIN_ROOM_SIDE: f64 = 1.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoomKind {
    LivingRoom,
    Kitchen,
    Bedroom,
    Office,
    Corridor,
}

impl RoomKind {
    const ALL: [RoomKind; 5] =
        [RoomKind::LivingRoom, RoomKind::Kitchen, RoomKind::Bedroom, RoomKind::Office, RoomKind::Corridor];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        Self::ALL.get(c as usize).copied().ok_or_else(|| Error::format("house", format!("room kind {c}")))
    }
}

/// Shape and placement rules of an object class.
#[derive(Clone, Copy, Debug)]
pub struct ObjectClass {
    pub name: &'static str,
    pub radius: f64,
    pub height: f64,
    pub rooms: &'static [RoomKind],
}

const CATALOG: [ObjectClass; 5] = [
    ObjectClass { name: "Apple", radius: 0.15, height: 0.8, rooms: &[RoomKind::LivingRoom, RoomKind::Kitchen] },
    ObjectClass { name: "Bed", radius: 0.6, height: 0.6, rooms: &[RoomKind::Bedroom] },
    ObjectClass { name: "Sofa", radius: 0.45, height: 0.8, rooms: &[RoomKind::LivingRoom] },
    ObjectClass { name: "Television", radius: 0.35, height: 1.2, rooms: &[RoomKind::LivingRoom] },
    ObjectClass {
        name: "Vase",
        radius: 0.15,
        height: 0.6,
        rooms: &[RoomKind::LivingRoom, RoomKind::Corridor, RoomKind::Office, RoomKind::Kitchen],
    },
];

/// Catalog entry for a class id. Ids past the named classes get a generic
/// shape that may appear in any room.
pub fn object_class(class_id: usize) -> ObjectClass {
    CATALOG.get(class_id).copied().unwrap_or(ObjectClass {
        name: "Object",
        radius: 0.25,
        height: 0.7,
        rooms: &RoomKind::ALL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub rect: Rect,
    pub kind: RoomKind,
}

/// Upright cylinder standing on the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub class_id: usize,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

/// Generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub min_rooms: usize,
    pub max_rooms: usize,
    pub num_classes: usize,
    pub agent_radius: f64,
    pub resolution: f64,
    pub wall_thickness: f64,
    pub door_width: f64,
    /// Every object must have a traversable cell this close to it.
    pub reach_distance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            min_rooms: 2,
            max_rooms: 3,
            num_classes: 5,
            agent_radius: 0.18,
            resolution: 0.05,
            wall_thickness: 0.1,
            door_width: 0.9,
            reach_distance: 0.95,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_rooms < 1 || self.max_rooms > 8 || self.min_rooms > self.max_rooms {
            return Err(Error::Argument(format!(
                "room count range [{}, {}] must lie within [1, 8]",
                self.min_rooms, self.max_rooms
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Argument("at least one object class is required".into()));
        }
        if !(self.resolution > 0.0 && self.agent_radius > 0.0) {
            return Err(Error::Argument("resolution and agent radius must be positive".into()));
        }
        Ok(())
    }
}

/// Boolean raster over the house footprint; cell `(i, j)` covers
/// `[j·res, (j+1)·res) × [i·res, (i+1)·res)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl Grid {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.cols + j]
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((j as f64 + 0.5) * self.resolution, (i as f64 + 0.5) * self.resolution)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (j, i) = ((x / self.resolution).floor(), (y / self.resolution).floor());
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.rows && (j as usize) < self.cols).then(|| (i as usize, j as usize))
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Number of 4-connected components of set cells.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut n = 0;
        for start in 0..self.cells.len() {
            if !self.cells[start] || seen[start] {
                continue;
            }
            n += 1;
            seen[start] = true;
            let mut q = VecDeque::from([start]);
            while let Some(c) = q.pop_front() {
                let (i, j) = (c / self.cols, c % self.cols);
                let mut push = |ni: usize, nj: usize| {
                    let k = ni * self.cols + nj;
                    if self.cells[k] && !seen[k] {
                        seen[k] = true;
                        q.push_back(k);
                    }
                };
                if i > 0 {
                    push(i - 1, j);
                }
                if i + 1 < self.rows {
                    push(i + 1, j);
                }
                if j > 0 {
                    push(i, j - 1);
                }
                if j + 1 < self.cols {
                    push(i, j + 1);
                }
            }
        }
        n
    }
}

/// What a ray struck first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hit {
    Wall,
    Object(usize),
}

/// A procedurally generated (or hand-built) multi-room world. Immutable after
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct House {
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub agent_radius: f64,
    pub num_classes: usize,
    pub walls: Vec<Rect>,
    pub rooms: Vec<Room>,
    pub objects: Vec<ObjectInstance>,
    traversable: Grid,
}

impl House {
    /// Builds a house from explicit geometry. Walls bounding the footprint
    /// `[0, width] × [0, height]` are not added automatically.
    pub fn from_parts(
        seed: u64,
        width: f64,
        height: f64,
        walls: Vec<Rect>,
        rooms: Vec<Room>,
        objects: Vec<ObjectInstance>,
        num_classes: usize,
        agent_radius: f64,
        resolution: f64,
    ) -> Self {
        let mut house = House {
            seed,
            width,
            height,
            agent_radius,
            num_classes,
            walls,
            rooms,
            objects,
            traversable: Grid { resolution, rows: 0, cols: 0, cells: Vec::new() },
        };
        house.traversable = house.compute_traversable(resolution);
        house
    }

    /// Open rectangle surrounded by outer walls.
    pub fn open_room(width: f64, height: f64, objects: Vec<ObjectInstance>, num_classes: usize) -> Self {
        let cfg = WorldConfig::default();
        House::from_parts(
            0,
            width,
            height,
            outer_walls(width, height, cfg.wall_thickness),
            vec![Room { rect: Rect::new(0.0, 0.0, width, height), kind: RoomKind::LivingRoom }],
            objects,
            num_classes,
            cfg.agent_radius,
            cfg.resolution,
        )
    }

    pub fn traversable(&self) -> &Grid {
        &self.traversable
    }

    pub fn resolution(&self) -> f64 {
        self.traversable.resolution
    }

    fn compute_traversable(&self, resolution: f64) -> Grid {
        let cols = (self.width / resolution).ceil() as usize;
        let rows = (self.height / resolution).ceil() as usize;
        let mut cells = vec![false; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let (x, y) = ((j as f64 + 0.5) * resolution, (i as f64 + 0.5) * resolution);
                cells[i * cols + j] = x >= self.agent_radius
                    && y >= self.agent_radius
                    && x <= self.width - self.agent_radius
                    && y <= self.height - self.agent_radius
                    && !self.disc_overlaps(x, y, self.agent_radius);
            }
        }
        Grid { resolution, rows, cols, cells }
    }

    /// Whether a disc intersects any wall or object.
    pub fn disc_overlaps(&self, x: f64, y: f64, r: f64) -> bool {
        self.walls.iter().any(|w| w.distance(x, y) < r)
            || self.objects.iter().any(|o| (o.x - x).hypot(o.y - y) < o.radius + r)
    }

    /// Whether the agent body may stand at `(x, y)`.
    pub fn body_fits(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width && y <= self.height && !self.disc_overlaps(x, y, self.agent_radius)
    }

    /// First contact parameter of the agent disc swept along `o + t·d`.
    pub fn sweep(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let r = self.agent_radius;
        let walls = self.walls.iter().filter_map(|w| sweep_circle_rect(ox, oy, dx, dy, r, w));
        let objs = self.objects.iter().filter_map(|o| ray_circle(ox, oy, dx, dy, o.x, o.y, o.radius + r));
        walls.chain(objs).reduce(f64::min)
    }

    /// Nearest obstacle along a ray with unit direction `(dx, dy)`.
    pub fn raycast(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<(f64, Hit)> {
        let mut best: Option<(f64, Hit)> = None;
        let mut consider = |t: f64, h: Hit| {
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, h));
            }
        };
        for w in &self.walls {
            if let Some(t) = ray_rect(ox, oy, dx, dy, w) {
                consider(t, Hit::Wall);
            }
        }
        for (k, o) in self.objects.iter().enumerate() {
            if let Some(t) = ray_circle(ox, oy, dx, dy, o.x, o.y, o.radius) {
                consider(t, Hit::Object(k));
            }
        }
        best
    }

    /// True if the straight segment between two points crosses no wall.
    /// Objects other than `ignore` also block.
    pub fn line_of_sight(&self, ax: f64, ay: f64, bx: f64, by: f64, ignore: Option<usize>) -> bool {
        let (dx, dy) = (bx - ax, by - ay);
        let len = dx.hypot(dy);
        if len < 1e-12 {
            return true;
        }
        let (ux, uy) = (dx / len, dy / len);
        let walls_clear = self.walls.iter().all(|w| ray_rect(ax, ay, ux, uy, w).map_or(true, |t| t >= len));
        walls_clear
            && self.objects.iter().enumerate().all(|(k, o)| {
                Some(k) == ignore || ray_circle(ax, ay, ux, uy, o.x, o.y, o.radius).map_or(true, |t| t >= len)
            })
    }

    pub fn classes_present(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.objects.iter().map(|o| o.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(HOUSE_MAGIC);
        w.u32(HOUSE_VERSION);
        w.u64(self.seed);
        w.f64(self.width);
        w.f64(self.height);
        w.f64(self.agent_radius);
        w.u32(self.num_classes as u32);
        w.u32(self.walls.len() as u32);
        for r in &self.walls {
            put_rect(&mut w, r);
        }
        w.u32(self.rooms.len() as u32);
        for room in &self.rooms {
            put_rect(&mut w, &room.rect);
            w.u8(room.kind.code());
        }
        w.u32(self.objects.len() as u32);
        for o in &self.objects {
            w.u32(o.class_id as u32);
            for v in [o.x, o.y, o.radius, o.height] {
                w.f64(v);
            }
        }
        let g = &self.traversable;
        w.f64(g.resolution);
        w.u32(g.rows as u32);
        w.u32(g.cols as u32);
        for chunk in g.cells.chunks(8) {
            w.u8(chunk.iter().enumerate().fold(0u8, |acc, (k, &c)| acc | ((c as u8) << k)));
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<House> {
        let mut r = ByteReader::new("house", bytes);
        let version = r.header(HOUSE_MAGIC)?;
        if version != HOUSE_VERSION {
            return Err(Error::Version { found: version, expected: HOUSE_VERSION });
        }
        let seed = r.u64()?;
        let (width, height, agent_radius) = (r.f64()?, r.f64()?, r.f64()?);
        let num_classes = r.u32()? as usize;
        let walls = (0..r.u32()?).map(|_| get_rect(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_rooms = r.u32()?;
        let mut rooms = Vec::with_capacity(n_rooms as usize);
        for _ in 0..n_rooms {
            let rect = get_rect(&mut r)?;
            rooms.push(Room { rect, kind: RoomKind::from_code(r.u8()?)? });
        }
        let n_obj = r.u32()?;
        let mut objects = Vec::with_capacity(n_obj as usize);
        for _ in 0..n_obj {
            let class_id = r.u32()? as usize;
            objects.push(ObjectInstance { class_id, x: r.f64()?, y: r.f64()?, radius: r.f64()?, height: r.f64()? });
        }
        let resolution = r.f64()?;
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let packed = r.take((rows * cols).div_ceil(8))?;
        let cells = (0..rows * cols).map(|k| packed[k / 8] >> (k % 8) & 1 == 1).collect();
        if !r.is_done() {
            return Err(Error::format("house", "trailing bytes"));
        }
        let traversable = Grid { resolution, rows, cols, cells };
        Ok(House { seed, width, height, agent_radius, num_classes, walls, rooms, objects, traversable })
    }
}

fn put_rect(w: &mut ByteWriter, r: &Rect) {
    for v in [r.x0, r.y0, r.x1, r.y1] {
        w.f64(v);
    }
}

fn get_rect(r: &mut ByteReader) -> Result<Rect> {
    Ok(Rect { x0: r.f64()?, y0: r.f64()?, x1: r.f64()?, y1: r.f64()? })
}

pub fn outer_walls(width: f64, height: f64, t: f64) -> Vec<Rect> {
    vec![
        Rect::new(-t, -t, width + t, 0.0),
        Rect::new(-t, height, width + t, height + t),
        Rect::new(-t, 0.0, 0.0, height),
        Rect::new(width, 0.0, width + t, height),
    ]
}

/// Generates a house with the default world parameters and the given room
/// count range.
pub fn generate_house(seed: u64, rooms: (usize, usize)) -> Result<House> {
    let cfg = WorldConfig { min_rooms: rooms.0, max_rooms: rooms.1, ..WorldConfig::default() };
    generate_house_with(seed, &cfg)
}

/// Door opening in an interior wall: the wall runs vertically (`x = at`)
/// or horizontally (`y = at`), with the gap centered at `center`.
#[derive(Clone, Copy)]
struct Door {
    vertical: bool,
    at: f64,
    center: f64,
}

pub fn generate_house_with(seed: u64, cfg: &WorldConfig) -> Result<House> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..LAYOUT_ATTEMPTS {
        let Some((width, height, rooms, walls)) = sample_layout(&mut rng, cfg) else { continue };
        for _ in 0..FURNISH_ATTEMPTS {
            let objects = sample_objects(&mut rng, cfg, &rooms, &walls);
            if objects.is_empty() {
                continue;
            }
            let house = House::from_parts(
                seed,
                width,
                height,
                walls.clone(),
                rooms.clone(),
                objects,
                cfg.num_classes,
                cfg.agent_radius,
                cfg.resolution,
            );
            if house.traversable.components() == 1 && objects_reachable(&house, cfg.reach_distance) {
                return Ok(house);
            }
        }
    }
    Err(Error::Generation { seed, attempts: LAYOUT_ATTEMPTS * FURNISH_ATTEMPTS })
}

type Layout = (f64, f64, Vec<Room>, Vec<Rect>);

fn sample_layout(rng: &mut ChaCha8Rng, cfg: &WorldConfig) -> Option<Layout> {
    let n = rng.gen_range(cfg.min_rooms..=cfg.max_rooms);
    let area = n as f64 * rng.gen_range(8.0..14.0);
    let aspect: f64 = rng.gen_range(0.75..1.35);
    let width = (area * aspect).sqrt();
    let height = area / width;
    let t = cfg.wall_thickness;
    let half_door = cfg.door_width / 2.0;

    let mut rects = vec![Rect::new(0.0, 0.0, width, height)];
    let mut doors: Vec<Door> = Vec::new();
    let mut walls = outer_walls(width, height, t);
    while rects.len() < n {
        let k = (0..rects.len())
            .max_by(|&a, &b| {
                let (ra, rb) = (&rects[a], &rects[b]);
                (ra.width() * ra.height()).total_cmp(&(rb.width() * rb.height()))
            })
            .expect("at least one room");
        let room = rects[k];
        let vertical = room.width() >= room.height();
        let (lo, hi) = if vertical { (room.x0, room.x1) } else { (room.y0, room.y1) };
        if hi - lo < 2.0 * MIN_ROOM_SIDE {
            return None;
        }
        // Split position must keep clear of doors already on the room boundary
        // that the new wall would abut.
        let mut split = None;
        for _ in 0..20 {
            let s = rng.gen_range(lo + MIN_ROOM_SIDE..=hi - MIN_ROOM_SIDE);
            let blocked = doors.iter().any(|d| {
                d.vertical != vertical
                    && (if vertical { (d.at - room.y0).abs() < 1e-9 || (d.at - room.y1).abs() < 1e-9 } else {
                        (d.at - room.x0).abs() < 1e-9 || (d.at - room.x1).abs() < 1e-9
                    })
                    && (d.center - s).abs() < half_door + t + 0.2
            });
            if !blocked {
                split = Some(s);
                break;
            }
        }
        let s = split?;
        let (span_lo, span_hi) = if vertical { (room.y0, room.y1) } else { (room.x0, room.x1) };
        let c = rng.gen_range(span_lo + half_door + 0.15..=span_hi - half_door - 0.15);
        doors.push(Door { vertical, at: s, center: c });
        let segs = [(span_lo, c - half_door), (c + half_door, span_hi)];
        for (a, b) in segs {
            if b - a > 1e-9 {
                walls.push(if vertical {
                    Rect::new(s - t / 2.0, a, s + t / 2.0, b)
                } else {
                    Rect::new(a, s - t / 2.0, b, s + t / 2.0)
                });
            }
        }
        let (r1, r2) = if vertical {
            (Rect::new(room.x0, room.y0, s, room.y1), Rect::new(s, room.y0, room.x1, room.y1))
        } else {
            (Rect::new(room.x0, room.y0, room.x1, s), Rect::new(room.x0, s, room.x1, room.y1))
        };
        rects[k] = r1;
        rects.push(r2);
    }
    let weights = [3u32, 2, 3, 1, 1];
    let rooms = rects
        .into_iter()
        .map(|rect| {
            let pick = RoomKind::ALL
                .iter()
                .zip(weights)
                .collect::<Vec<_>>()
                .choose_weighted(rng, |(_, w)| *w)
                .map(|(k, _)| **k)
                .expect("nonzero weights");
            Room { rect, kind: pick }
        })
        .collect();
    Some((width, height, rooms, walls))
}

fn sample_objects(rng: &mut ChaCha8Rng, cfg: &WorldConfig, rooms: &[Room], walls: &[Rect]) -> Vec<ObjectInstance> {
    let mut objects: Vec<ObjectInstance> = Vec::new();
    for room in rooms {
        let allowed: Vec<usize> =
            (0..cfg.num_classes).filter(|&c| object_class(c).rooms.contains(&room.kind)).collect();
        if allowed.is_empty() {
            continue;
        }
        let area = room.rect.width() * room.rect.height();
        let count = 1 + rng.gen_range(0..=((area / 5.0) as usize).min(2));
        for _ in 0..count {
            let class_id = *allowed.choose(rng).expect("nonempty");
            let cls = object_class(class_id);
            let margin = cls.radius + cfg.wall_thickness / 2.0 + 0.02;
            let (x0, x1) = (room.rect.x0 + margin, room.rect.x1 - margin);
            let (y0, y1) = (room.rect.y0 + margin, room.rect.y1 - margin);
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            for _ in 0..30 {
                let (x, y) = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
                let clear_walls = walls.iter().all(|w| w.distance(x, y) > cls.radius + 0.02);
                let clear_objects =
                    objects.iter().all(|o| (o.x - x).hypot(o.y - y) > o.radius + cls.radius + 0.5);
                if clear_walls && clear_objects {
                    objects.push(ObjectInstance { class_id, x, y, radius: cls.radius, height: cls.height });
                    break;
                }
            }
        }
    }
    objects
}

fn objects_reachable(house: &House, reach: f64) -> bool {
    let g = &house.traversable;
    house.objects.iter().all(|o| {
        let span = (reach / g.resolution).ceil() as isize + 1;
        let Some((ci, cj)) = g.cell_of(o.x, o.y) else { return false };
        (-span..=span).any(|di| {
            (-span..=span).any(|dj| {
                let (i, j) = (ci as isize + di, cj as isize + dj);
                if i < 0 || j < 0 || i as usize >= g.rows || j as usize >= g.cols {
                    return false;
                }
                let (i, j) = (i as usize, j as usize);
                let (x, y) = g.center(i, j);
                g.get(i, j) && (x - o.x).hypot(y - o.y) <= reach
            })
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_house(7, (2, 3)).unwrap();
        let b = generate_house(7, (2, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn single_room_is_connected() {
        let h = generate_house(3, (1, 1)).unwrap();
        assert_eq!(h.rooms.len(), 1);
        assert_eq!(h.traversable().components(), 1);
    }

    #[test]
    fn bad_room_range_rejected() {
        assert!(matches!(generate_house(0, (0, 2)), Err(Error::Argument(_))));
        assert!(matches!(generate_house(0, (2, 9)), Err(Error::Argument(_))));
    }

    #[test]
    fn serialization_roundtrip() {
        let h = generate_house(11, (2, 3)).unwrap();
        let bytes = h.to_bytes();
        assert_eq!(House::from_bytes(&bytes).unwrap(), h);
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(House::from_bytes(&bad), Err(Error::Version { found: 9, .. })));
        assert!(House::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn objects_sit_on_free_space() {
        for seed in 0..20 {
            let h = generate_house(seed, (2, 3)).unwrap();
            for o in &h.objects {
                assert!(h.walls.iter().all(|w| w.distance(o.x, o.y) > o.radius));
            }
        }
    }
}
