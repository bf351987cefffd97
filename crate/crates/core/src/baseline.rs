//! A* shortest-path baseline on a rasterized arena, with a uniform-cost
//! Dijkstra oracle sharing the same cost model.
//!
//! Search costs are integers (1000 per orthogonal step, 1414 per diagonal)
//! so the A*/Dijkstra equality check is exact; reported lengths are derived
//! from the step counts in meters.

use crate::geom::Vec2;
use crate::world::ArenaSpec;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

const ORTHO_COST: u64 = 1000;
const DIAG_COST: u64 = 1414;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("grid resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("{label} cell is occupied after inflation")]
    LandmarkBlocked { label: &'static str },
    #[error("cell ({0}, {1}) outside the grid")]
    OutOfGrid(usize, usize),
    #[error("start or goal cell occupied")]
    EndpointOccupied,
    #[error("no path between start and goal")]
    NoPath,
}

/// Boolean occupancy grid over the arena, obstacle cells inflated by the
/// robot radius.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub cols: usize,
    pub rows: usize,
    pub origin: Vec2,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new_empty(cols: usize, rows: usize, resolution: f64) -> Self {
        OccupancyGrid {
            resolution,
            cols,
            rows,
            origin: Vec2::ZERO,
            cells: vec![false; cols * rows],
        }
    }

    pub fn occupied(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cell containing a world point.
    pub fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let col = ((p.x - self.origin.x) / self.resolution).floor() as isize;
        let row = ((p.y - self.origin.y) / self.resolution).floor() as isize;
        (
            col.clamp(0, self.cols as isize - 1) as usize,
            row.clamp(0, self.rows as isize - 1) as usize,
        )
    }

    /// World-space center of a cell.
    pub fn center_of(&self, cell: (usize, usize)) -> Vec2 {
        Vec2::new(
            self.origin.x + (cell.0 as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.1 as f64 + 0.5) * self.resolution,
        )
    }
}

/// Rasterize the arena: a cell is occupied iff its square intersects any
/// obstacle inflated by `robot_radius`. Fails when the nest or goal cell
/// ends up occupied.
pub fn rasterize(
    arena: &ArenaSpec,
    resolution: f64,
    robot_radius: f64,
) -> Result<OccupancyGrid, BaselineError> {
    if resolution <= 0.0 {
        return Err(BaselineError::BadResolution(resolution));
    }
    let cols = (arena.width / resolution).ceil() as usize;
    let rows = (arena.height / resolution).ceil() as usize;
    let mut grid = OccupancyGrid::new_empty(cols, rows, resolution);
    let inflated: Vec<_> = arena
        .obstacles
        .iter()
        .map(|ob| ob.inflated(robot_radius))
        .collect();
    for row in 0..rows {
        for col in 0..cols {
            let cell_rect = crate::geom::Rect::from_bounds(
                col as f64 * resolution,
                row as f64 * resolution,
                (col + 1) as f64 * resolution,
                (row + 1) as f64 * resolution,
            );
            if inflated.iter().any(|ob| ob.intersects_rect(&cell_rect)) {
                grid.set(col, row, true);
            }
        }
    }
    for (label, p) in [("nest", arena.nest.center), ("goal", arena.goal.center)] {
        let (c, r) = grid.cell_of(p);
        if grid.occupied(c, r) {
            return Err(BaselineError::LandmarkBlocked { label });
        }
    }
    Ok(grid)
}

/// Path over grid cells with its cost decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub cells: Vec<(usize, usize)>,
    pub ortho_steps: u64,
    pub diag_steps: u64,
    pub resolution: f64,
}

impl GridPath {
    /// Integer search cost (1000/1414 per step).
    pub fn cost(&self) -> u64 {
        self.ortho_steps * ORTHO_COST + self.diag_steps * DIAG_COST
    }

    /// Metric length: orthogonal steps cost `resolution`, diagonals
    /// `sqrt(2) * resolution`.
    pub fn length_m(&self) -> f64 {
        (self.ortho_steps as f64 + self.diag_steps as f64 * SQRT_2) * self.resolution
    }
}

/// Octile heuristic in integer cost units; admissible because
/// 1414 <= 1000 * sqrt(2).
fn octile(a: (usize, usize), b: (usize, usize)) -> u64 {
    let dx = a.0.abs_diff(b.0) as u64;
    let dy = a.1.abs_diff(b.1) as u64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    lo * DIAG_COST + (hi - lo) * ORTHO_COST
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn neighbors_of(
    grid: &OccupancyGrid,
    cell: (usize, usize),
) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
    NEIGHBORS.iter().filter_map(move |&(dc, dr)| {
        let nc = cell.0 as isize + dc;
        let nr = cell.1 as isize + dr;
        if nc < 0 || nr < 0 || nc >= grid.cols as isize || nr >= grid.rows as isize {
            return None;
        }
        let next = (nc as usize, nr as usize);
        if grid.occupied(next.0, next.1) {
            return None;
        }
        if dc != 0 && dr != 0 {
            // no corner cutting: both orthogonal companions must be free
            if grid.occupied(next.0, cell.1) || grid.occupied(cell.0, next.1) {
                return None;
            }
            Some((next, DIAG_COST))
        } else {
            Some((next, ORTHO_COST))
        }
    })
}

/// Heap key: f-cost, then heuristic, then lexicographic cell order, all
/// minimized, so expansions are deterministic.
type HeapEntry = Reverse<(u64, u64, usize, usize)>;

fn search(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    use_heuristic: bool,
) -> Result<GridPath, BaselineError> {
    for &(c, r) in [&start, &goal] {
        if c >= grid.cols || r >= grid.rows {
            return Err(BaselineError::OutOfGrid(c, r));
        }
        if grid.occupied(c, r) {
            return Err(BaselineError::EndpointOccupied);
        }
    }
    let idx = |cell: (usize, usize)| cell.1 * grid.cols + cell.0;
    let h = |cell: (usize, usize)| if use_heuristic { octile(cell, goal) } else { 0 };

    let mut dist: Vec<u64> = vec![u64::MAX; grid.cols * grid.rows];
    let mut prev: Vec<u32> = vec![u32::MAX; grid.cols * grid.rows];
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    dist[idx(start)] = 0;
    heap.push(Reverse((h(start), h(start), start.0, start.1)));

    while let Some(Reverse((f, _h, c, r))) = heap.pop() {
        let cell = (c, r);
        let g = f - h(cell);
        if g > dist[idx(cell)] {
            continue;
        }
        if cell == goal {
            break;
        }
        for (next, step) in neighbors_of(grid, cell) {
            let ng = g + step;
            if ng < dist[idx(next)] {
                dist[idx(next)] = ng;
                prev[idx(next)] = idx(cell) as u32;
                heap.push(Reverse((ng + h(next), h(next), next.0, next.1)));
            }
        }
    }

    if dist[idx(goal)] == u64::MAX {
        return Err(BaselineError::NoPath);
    }

    // Reconstruct and count step kinds.
    let mut cells = vec![goal];
    let mut cur = idx(goal);
    while cur != idx(start) {
        let p = prev[cur];
        debug_assert!(p != u32::MAX);
        cur = p as usize;
        cells.push((cur % grid.cols, cur / grid.cols));
    }
    cells.reverse();
    let mut ortho = 0;
    let mut diag = 0;
    for w in cells.windows(2) {
        if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
            diag += 1;
        } else {
            ortho += 1;
        }
    }
    let path = GridPath {
        cells,
        ortho_steps: ortho,
        diag_steps: diag,
        resolution: grid.resolution,
    };
    debug_assert_eq!(path.cost(), dist[idx(goal)]);
    Ok(path)
}

/// Minimum-cost 8-connected path under the octile heuristic.
pub fn astar(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<GridPath, BaselineError> {
    search(grid, start, goal, true)
}

/// Heuristic-free uniform-cost search with the identical cost model.
pub fn dijkstra_oracle(
    grid: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<u64, BaselineError> {
    search(grid, start, goal, false).map(|p| p.cost())
}

/// Plan nest-to-goal on an arena and return the path.
pub fn plan_arena_path(
    arena: &ArenaSpec,
    resolution: f64,
    robot_radius: f64,
) -> Result<GridPath, BaselineError> {
    let grid = rasterize(arena, resolution, robot_radius)?;
    let start = grid.cell_of(arena.nest.center);
    let goal = grid.cell_of(arena.goal.center);
    astar(&grid, start, goal)
}

/// Total polyline length of a chain of points (nest, anchors..., goal).
pub fn chain_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Disk;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arena(obstacles: Vec<crate::geom::Rect>) -> ArenaSpec {
        ArenaSpec {
            width: 8.0,
            height: 4.0,
            obstacles,
            nest: Disk {
                center: Vec2::new(1.0, 2.0),
                radius: 0.25,
            },
            goal: Disk {
                center: Vec2::new(6.0, 2.0),
                radius: 0.25,
            },
            light_source: None,
            reference_intensity: 1.0,
        }
    }

    #[test]
    fn rasterize_empty_arena() {
        let grid = rasterize(&arena(vec![]), 0.1, 0.085).unwrap();
        assert_eq!(grid.cols, 80);
        assert_eq!(grid.rows, 40);
        assert_eq!(grid.occupied_count(), 0);
    }

    #[test]
    fn rasterize_rejects_zero_resolution() {
        assert_eq!(
            rasterize(&arena(vec![]), 0.0, 0.085).unwrap_err(),
            BaselineError::BadResolution(0.0)
        );
    }

    #[test]
    fn rasterize_block_matches_cell_oracle() {
        let ob = crate::geom::Rect::from_bounds(3.0, 1.0, 4.0, 2.0);
        let a = arena(vec![ob]);
        let r = 0.085;
        let grid = rasterize(&a, 0.1, r).unwrap();
        let inflated = ob.inflated(r);
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let cell = crate::geom::Rect::from_bounds(
                    col as f64 * 0.1,
                    row as f64 * 0.1,
                    (col + 1) as f64 * 0.1,
                    (row + 1) as f64 * 0.1,
                );
                assert_eq!(
                    grid.occupied(col, row),
                    inflated.intersects_rect(&cell),
                    "cell ({col},{row})"
                );
            }
        }
    }

    #[test]
    fn rasterize_blocked_landmark() {
        let ob = crate::geom::Rect::from_bounds(5.5, 1.5, 6.5, 2.5); // covers goal
        let mut a = arena(vec![]);
        a.obstacles = vec![ob];
        // skip arena validation on purpose: feed the rasterizer directly
        assert!(matches!(
            rasterize(&a, 0.1, 0.085),
            Err(BaselineError::LandmarkBlocked { label: "goal" })
        ));
    }

    #[test]
    fn astar_trivial_and_straight() {
        let grid = OccupancyGrid::new_empty(20, 20, 0.1);
        let p = astar(&grid, (3, 3), (3, 3)).unwrap();
        assert_eq!(p.cells.len(), 1);
        assert_eq!(p.length_m(), 0.0);

        let p = astar(&grid, (2, 5), (12, 5)).unwrap();
        assert_eq!(p.cost(), 10 * ORTHO_COST);
        assert!((p.length_m() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn astar_diagonal() {
        let grid = OccupancyGrid::new_empty(20, 20, 0.1);
        let p = astar(&grid, (2, 2), (7, 7)).unwrap();
        assert_eq!(p.cost(), 5 * DIAG_COST);
        assert!((p.length_m() - 5.0 * SQRT_2 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn astar_no_path() {
        let mut grid = OccupancyGrid::new_empty(10, 10, 0.1);
        for row in 0..10 {
            grid.set(5, row, true);
        }
        assert_eq!(astar(&grid, (1, 1), (8, 8)).unwrap_err(), BaselineError::NoPath);
        assert_eq!(
            dijkstra_oracle(&grid, (1, 1), (8, 8)).unwrap_err(),
            BaselineError::NoPath
        );
    }

    #[test]
    fn astar_rejects_occupied_endpoint() {
        let mut grid = OccupancyGrid::new_empty(10, 10, 0.1);
        grid.set(1, 1, true);
        assert_eq!(
            astar(&grid, (1, 1), (8, 8)).unwrap_err(),
            BaselineError::EndpointOccupied
        );
    }

    #[test]
    fn no_corner_cutting() {
        let mut grid = OccupancyGrid::new_empty(3, 3, 1.0);
        // block the two orthogonal companions of the diagonal move
        grid.set(1, 0, true);
        grid.set(0, 1, true);
        assert_eq!(astar(&grid, (0, 0), (1, 1)).unwrap_err(), BaselineError::NoPath);
    }

    fn random_grid(rng: &mut ChaCha8Rng, cols: usize, rows: usize, density: f64) -> OccupancyGrid {
        let mut grid = OccupancyGrid::new_empty(cols, rows, 0.1);
        for row in 0..rows {
            for col in 0..cols {
                if rng.gen::<f64>() < density {
                    grid.set(col, row, true);
                }
            }
        }
        grid.set(0, 0, false);
        grid.set(cols - 1, rows - 1, false);
        grid
    }

    #[test]
    fn astar_matches_dijkstra_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let grid = random_grid(&mut rng, 20, 20, 0.2);
            let a = astar(&grid, (0, 0), (19, 19));
            let d = dijkstra_oracle(&grid, (0, 0), (19, 19));
            match (a, d) {
                (Ok(p), Ok(cost)) => assert_eq!(p.cost(), cost),
                (Err(BaselineError::NoPath), Err(BaselineError::NoPath)) => {}
                (a, d) => panic!("disagreement: {a:?} vs {d:?}"),
            }
        }
    }

    #[test]
    fn chain_length_examples() {
        // no subgoals, nest-goal distance 5
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)];
        assert!((chain_length(&pts) - 5.0).abs() < 1e-12);
        // collinear equally spaced subgoals: same as direct distance
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(5.0, 0.0),
        ];
        assert!((chain_length(&pts) - 5.0).abs() < 1e-12);
        // right-angle dogleg (3,4): 7 vs direct 5
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(3.0, 4.0)];
        assert!((chain_length(&pts) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn plan_arena_path_open() {
        let p = plan_arena_path(&arena(vec![]), 0.05, 0.085).unwrap();
        // straight 5 m row
        assert!((p.length_m() - 5.0).abs() < 0.1, "{}", p.length_m());
    }

    proptest! {
        /// Path length never beats the octile lower bound.
        #[test]
        fn path_at_least_octile(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = random_grid(&mut rng, 15, 15, 0.15);
            if let Ok(p) = astar(&grid, (0, 0), (14, 14)) {
                let bound = octile((0, 0), (14, 14));
                prop_assert!(p.cost() >= bound);
            }
        }

        /// Adding an obstacle never frees a cell.
        #[test]
        fn rasterization_monotone(x0 in 0.5f64..6.0, y0 in 0.5f64..2.5,
                                  w in 0.2f64..1.5, h in 0.2f64..1.2) {
            let base = arena(vec![]);
            let more = arena(vec![crate::geom::Rect::from_bounds(x0, y0, (x0 + w).min(7.9), (y0 + h).min(3.9))]);
            let g0 = rasterize(&base, 0.1, 0.085).unwrap();
            if let Ok(g1) = rasterize(&more, 0.1, 0.085) {
                for row in 0..g0.rows {
                    for col in 0..g0.cols {
                        prop_assert!(!g0.occupied(col, row) || g1.occupied(col, row));
                    }
                }
            }
        }
    }
}
