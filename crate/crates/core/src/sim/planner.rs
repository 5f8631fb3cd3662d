use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::house::{Grid, House};
use super::motion::{apply_action, AgentPose, MOVE_STEP};
use super::task::{judge_done, TaskSpec};
use crate::policy::Action;

const SQRT2: f64 = std::f64::consts::SQRT_2;
/// Worst-case ratio of 8-connected grid length to Euclidean length.
const OCTILE_STRETCH: f64 = 1.0824;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected neighbors with edge counts `(straight, diagonal)`. Diagonal
/// steps require both adjacent orthogonal cells to be free.
fn neighbors(g: &Grid, cell: usize, mut f: impl FnMut(usize, bool)) {
    let (i, j) = ((cell / g.cols) as isize, (cell % g.cols) as isize);
    let free = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < g.rows && (j as usize) < g.cols && g.get(i as usize, j as usize);
    for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
        let (ni, nj) = (i + di, j + dj);
        if !free(ni, nj) {
            continue;
        }
        let diagonal = di != 0 && dj != 0;
        if diagonal && !(free(i + di, j) && free(i, j + dj)) {
            continue;
        }
        f(ni as usize * g.cols + nj as usize, diagonal);
    }
}

/// Multi-source Dijkstra over the traversable grid. Path lengths are kept as
/// integer `(straight, diagonal)` edge counts so that equal paths produce
/// bit-identical lengths regardless of search direction.
fn dijkstra(g: &Grid, sources: &[usize], stop_at: Option<usize>) -> Vec<f64> {
    let res = g.resolution;
    let mut counts: Vec<Option<(u32, u32)>> = vec![None; g.cells.len()];
    let mut done = vec![false; g.cells.len()];
    let len = |c: (u32, u32)| c.0 as f64 * res + c.1 as f64 * res * SQRT2;
    let mut heap = BinaryHeap::new();
    for &s in sources {
        counts[s] = Some((0, 0));
        heap.push(Entry { cost: 0.0, cell: s });
    }
    while let Some(Entry { cell, .. }) = heap.pop() {
        if done[cell] {
            continue;
        }
        done[cell] = true;
        if Some(cell) == stop_at {
            break;
        }
        let base = counts[cell].expect("popped cells are labeled");
        neighbors(g, cell, |n, diagonal| {
            if done[n] {
                return;
            }
            let cand = if diagonal { (base.0, base.1 + 1) } else { (base.0 + 1, base.1) };
            if counts[n].map_or(true, |c| len(cand) < len(c)) {
                counts[n] = Some(cand);
                heap.push(Entry { cost: len(cand), cell: n });
            }
        });
    }
    counts.into_iter().map(|c| c.map_or(f64::INFINITY, len)).collect()
}

/// Traversable cell containing or adjacent to a point, preferring the
/// nearest cell center.
pub fn snap_cell(g: &Grid, x: f64, y: f64) -> Option<usize> {
    let (i, j) = g.cell_of(x, y)?;
    if g.get(i, j) {
        return Some(i * g.cols + j);
    }
    let mut best: Option<(f64, usize)> = None;
    for di in -1isize..=1 {
        for dj in -1isize..=1 {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni as usize >= g.rows || nj as usize >= g.cols || !g.get(ni as usize, nj as usize) {
                continue;
            }
            let (cx, cy) = g.center(ni as usize, nj as usize);
            let d = (cx - x).hypot(cy - y);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, ni as usize * g.cols + nj as usize));
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Length in meters of a shortest collision-free grid path between two
/// points; `f64::INFINITY` when unreachable.
pub fn shortest_path(house: &House, from: (f64, f64), to: (f64, f64)) -> f64 {
    if from == to {
        return 0.0;
    }
    let g = house.traversable();
    let (Some(a), Some(b)) = (snap_cell(g, from.0, from.1), snap_cell(g, to.0, to.1)) else {
        return f64::INFINITY;
    };
    dijkstra(g, &[a], Some(b))[b]
}

/// Cells from which some instance of the target class is within the success
/// distance and in unobstructed line of sight.
pub fn success_region(task: &TaskSpec) -> Vec<usize> {
    let house = &task.house;
    let g = house.traversable();
    let d = task.success_distance;
    let reach = (d / g.resolution).ceil() as isize + 1;
    let mut cells = HashSet::new();
    for (k, o) in house.objects.iter().enumerate().filter(|(_, o)| o.class_id == task.target_class) {
        let Some((ci, cj)) = g.cell_of(o.x, o.y) else { continue };
        for di in -reach..=reach {
            for dj in -reach..=reach {
                let (i, j) = (ci as isize + di, cj as isize + dj);
                if i < 0 || j < 0 || i as usize >= g.rows || j as usize >= g.cols {
                    continue;
                }
                let (i, j) = (i as usize, j as usize);
                let (x, y) = g.center(i, j);
                if g.get(i, j) && (x - o.x).hypot(y - o.y) <= d && house.line_of_sight(x, y, o.x, o.y, Some(k)) {
                    cells.insert(i * g.cols + j);
                }
            }
        }
    }
    let mut v: Vec<usize> = cells.into_iter().collect();
    v.sort_unstable();
    v
}

/// Geodesic distance (meters) from every traversable cell to the success
/// region of a task.
#[derive(Clone, Debug)]
pub struct DistanceField {
    cols: usize,
    dist: Vec<f64>,
    grid: Grid,
}

impl DistanceField {
    pub fn for_task(task: &TaskSpec) -> Self {
        let grid = task.house.traversable().clone();
        let region = success_region(task);
        let dist = dijkstra(&grid, &region, None);
        Self { cols: grid.cols, dist, grid }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        snap_cell(&self.grid, x, y).map_or(f64::INFINITY, |c| self.dist[c])
    }

    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.cols + j]
    }
}

/// Geodesic distance from the task's start to its success region.
pub fn geodesic_to_target(task: &TaskSpec) -> f64 {
    DistanceField::for_task(task).at(task.start.x, task.start.y)
}

type StateKey = (i64, i64, i64, i64);

fn state_key(p: &AgentPose, res: f64) -> StateKey {
    (
        (p.x / res).round() as i64,
        (p.y / res).round() as i64,
        (p.yaw * 10.0).round() as i64 % 3600,
        (p.pitch * 10.0).round() as i64,
    )
}

#[derive(PartialEq, Eq)]
struct Node {
    f: usize,
    g: usize,
    id: usize,
    goal: bool,
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .cmp(&self.f)
            .then_with(|| self.goal.cmp(&other.goal))
            .then_with(|| self.g.cmp(&other.g))
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum number of actions, including the final `Done`, that reach a
/// success-judged pose from the task's start. A* over the embodiment's
/// discrete actions, with poses merged on a grid-resolution lattice and a
/// geodesic lower bound on the remaining moves; `None` if no such pose is
/// reachable within the step budget.
pub fn expert_steps(task: &TaskSpec) -> Option<usize> {
    let house = &task.house;
    if judge_done(&task.start, task) {
        return Some(1);
    }
    let field = DistanceField::for_task(task);
    // Loosened by one move for lattice snapping.
    let heuristic = |p: &AgentPose| -> Option<usize> {
        let d = field.at(p.x, p.y);
        if !d.is_finite() {
            return None;
        }
        let moves = (d / OCTILE_STRETCH / MOVE_STEP).floor() as usize;
        Some(moves.saturating_sub(1))
    };
    let actions: Vec<Action> = task.embodiment.actions().iter().copied().filter(|&a| a != Action::Done).collect();
    let res = house.resolution();
    let mut poses = vec![task.start];
    let mut best: HashMap<StateKey, usize> = HashMap::from([(state_key(&task.start, res), 0)]);
    let mut heap = BinaryHeap::new();
    heap.push(Node { f: heuristic(&task.start)?, g: 0, id: 0, goal: false });
    while let Some(Node { g, id, goal, .. }) = heap.pop() {
        if goal {
            return Some(g + 1);
        }
        let pose = poses[id];
        if best.get(&state_key(&pose, res)).is_some_and(|&b| b < g) || g + 2 > task.max_steps {
            continue;
        }
        for &a in &actions {
            let (next, _) = apply_action(&pose, a, house);
            let key = state_key(&next, res);
            let ng = g + 1;
            if best.get(&key).is_some_and(|&b| b <= ng) {
                continue;
            }
            best.insert(key, ng);
            poses.push(next);
            let id = poses.len() - 1;
            if judge_done(&next, task) {
                heap.push(Node { f: ng, g: ng, id, goal: true });
            } else if let Some(h) = heuristic(&next) {
                heap.push(Node { f: ng + h, g: ng, id, goal: false });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::policy::Embodiment;
    use crate::sim::geometry::Rect;
    use crate::sim::house::{outer_walls, House, ObjectInstance};

    #[test]
    fn zero_and_symmetric() {
        let h = crate::sim::house::generate_house(5, (2, 3)).unwrap();
        let g = h.traversable();
        let free: Vec<(f64, f64)> =
            (0..g.cells.len()).filter(|&c| g.cells[c]).step_by(997).map(|c| g.center(c / g.cols, c % g.cols)).collect();
        assert_eq!(shortest_path(&h, free[0], free[0]), 0.0);
        for w in free.windows(2) {
            let (a, b) = (shortest_path(&h, w[0], w[1]), shortest_path(&h, w[1], w[0]));
            assert!(a.is_finite());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn straight_corridor() {
        let h = House::open_room(4.0, 1.0, vec![], 5);
        let l = shortest_path(&h, (0.5, 0.5), (3.5, 0.5));
        assert!((l - 3.0).abs() <= 0.05 * SQRT2, "{l}");
    }

    fn approach_task(extra_walls: Vec<Rect>, width: f64) -> TaskSpec {
        let obj = ObjectInstance { class_id: 0, x: 1.0, y: 3.0, radius: 0.15, height: 0.8 };
        let mut walls = outer_walls(width, 4.0, 0.1);
        walls.extend(extra_walls);
        let house = House::from_parts(0, width, 4.0, walls, vec![], vec![obj], 5, 0.18, 0.05);
        TaskSpec::new(Arc::new(house), AgentPose::new(1.0, 1.0, 0.0, 0.18), 0, Embodiment::LoCoBot)
    }

    #[test]
    fn aligned_approach_needs_five_moves() {
        let task = approach_task(vec![], 2.0);
        assert_eq!(expert_steps(&task), Some(6));
    }

    #[test]
    fn unreachable_decoy_room_changes_nothing() {
        let base = approach_task(vec![], 2.0);
        // Sealed room to the east, with its own object of the target class.
        let mut decoy = approach_task(vec![Rect::new(2.0, 0.0, 2.1, 4.0)], 5.0);
        let h = Arc::make_mut(&mut decoy.house);
        h.objects.push(ObjectInstance { class_id: 0, x: 3.5, y: 2.0, radius: 0.15, height: 0.8 });
        let rebuilt = House::from_parts(0, h.width, h.height, h.walls.clone(), vec![], h.objects.clone(), 5, 0.18, 0.05);
        decoy.house = Arc::new(rebuilt);
        assert_eq!(expert_steps(&decoy), expert_steps(&base));
    }

    #[test]
    fn at_goal_needs_only_done() {
        let mut task = approach_task(vec![], 2.0);
        task.start = AgentPose::new(1.0, 2.2, 0.0, 0.18);
        assert_eq!(expert_steps(&task), Some(1));
    }
}
