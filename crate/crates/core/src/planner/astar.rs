//! Clearance-constrained A* over a voxel grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::esdf::Esdf;
use super::PlanError;
use crate::occupancy::{GridSpec, VoxelGrid};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Minimum clearance (m) a voxel needs to be traversable.
pub const DEFAULT_R_SAFE: f64 = 0.051;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    #[default]
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            6 => Ok(Self::Six),
            26 => Ok(Self::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    /// Neighbour offsets in lexicographic order.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for du in -1..=1i64 {
            for dv in -1..=1i64 {
                for dw in -1..=1i64 {
                    let n = du.abs() + dv.abs() + dw.abs();
                    if n == 0 || (self == Connectivity::Six && n > 1) {
                        continue;
                    }
                    out.push([du, dv, dw]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub r_safe: f64,
    pub connectivity: Connectivity,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            r_safe: DEFAULT_R_SAFE,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.r_safe.is_finite() && self.r_safe > 0.0) {
            return Err(PlanError::InvalidParams(format!("r_safe {}", self.r_safe)));
        }
        Ok(())
    }
}

/// Path cost as counts of axis, face-diagonal and cube-diagonal steps. Equal
/// counts always evaluate to bit-identical costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepCounts {
    pub axis: u32,
    pub face: u32,
    pub cube: u32,
}

impl StepCounts {
    /// Cost in voxel units.
    pub fn cost(&self) -> f64 {
        self.axis as f64 + self.face as f64 * SQRT_2 + self.cube as f64 * SQRT_3
    }

    fn add_step(mut self, offset: [i64; 3]) -> Self {
        match offset.iter().map(|d| d.abs()).sum::<i64>() {
            1 => self.axis += 1,
            2 => self.face += 1,
            _ => self.cube += 1,
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub indices: Vec<[usize; 3]>,
    pub steps: StepCounts,
    /// Path length in meters.
    pub cost: f64,
    pub expanded: usize,
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    h: f64,
    index: usize,
    g: f64,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: reverse everything.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn euclid(a: [usize; 3], b: [usize; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = a[k] as f64 - b[k] as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// A* over the voxels for which `valid` holds. Returns the path and the
/// expanded nodes in expansion order.
pub fn astar_masked(
    spec: &GridSpec,
    valid: impl Fn(usize) -> bool,
    start: [usize; 3],
    goal: [usize; 3],
    connectivity: Connectivity,
) -> Result<(GridPath, Vec<usize>), PlanError> {
    for (which, u) in [("start", start), ("goal", goal)] {
        if !spec.contains(u.map(|x| x as i64)) {
            return Err(PlanError::OutOfBounds(which.into()));
        }
        if !valid(spec.linear(u)) {
            return Err(PlanError::InfeasibleEndpoint(which.into()));
        }
    }
    let n = spec.len();
    let offsets = connectivity.offsets();
    let mut g_counts = vec![StepCounts::default(); n];
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut expanded = Vec::new();

    let s = spec.linear(start);
    let t = spec.linear(goal);
    g[s] = 0.0;
    let h0 = euclid(start, goal);
    heap.push(Open {
        f: h0,
        h: h0,
        index: s,
        g: 0.0,
    });
    while let Some(node) = heap.pop() {
        if node.g > g[node.index] {
            continue;
        }
        if node.index == t {
            break;
        }
        closed[node.index] = true;
        expanded.push(node.index);
        let u = spec.unlinear(node.index);
        for off in &offsets {
            let nu = [u[0] as i64 + off[0], u[1] as i64 + off[1], u[2] as i64 + off[2]];
            if !spec.contains(nu) {
                continue;
            }
            let nu = nu.map(|x| x as usize);
            let ni = spec.linear(nu);
            if !valid(ni) {
                continue;
            }
            let counts = g_counts[node.index].add_step(*off);
            let cand = counts.cost();
            if cand < g[ni] {
                g[ni] = cand;
                g_counts[ni] = counts;
                parent[ni] = node.index;
                // improved nodes are reopened
                closed[ni] = false;
                let h = euclid(nu, goal);
                heap.push(Open {
                    f: cand + h,
                    h,
                    index: ni,
                    g: cand,
                });
            }
        }
    }
    if !g[t].is_finite() {
        return Err(PlanError::NoPath);
    }
    let mut indices = vec![goal];
    let mut cur = t;
    while cur != s {
        cur = parent[cur];
        indices.push(spec.unlinear(cur));
    }
    indices.reverse();
    let steps = g_counts[t];
    Ok((
        GridPath {
            indices,
            steps,
            cost: steps.cost() * spec.resolution,
            expanded: expanded.len(),
        },
        expanded,
    ))
}

/// Shortest path through voxels whose clearance is at least `r_safe`.
pub fn astar(phi: &Esdf, start: [usize; 3], goal: [usize; 3], params: &PlannerParams) -> Result<GridPath, PlanError> {
    params.validate()?;
    let r_safe = params.r_safe;
    astar_masked(
        &phi.spec,
        |i| phi.get_linear(i) >= r_safe,
        start,
        goal,
        params.connectivity,
    )
    .map(|(p, _)| p)
}

/// Plain A* through the free voxels of an occupancy grid.
pub fn astar_free(
    grid: &VoxelGrid,
    start: [usize; 3],
    goal: [usize; 3],
    connectivity: Connectivity,
) -> Result<GridPath, PlanError> {
    let bits = grid.bits();
    astar_masked(&grid.spec, |i| !bits[i], start, goal, connectivity).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::super::esdf::compute_esdf;
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn spec(dims: [usize; 3]) -> GridSpec {
        GridSpec::new(Vector3::zeros(), 0.01, dims).unwrap()
    }

    /// Textbook Dijkstra keyed by step counts, sharing nothing with the A*.
    fn dijkstra(
        s: &GridSpec,
        valid: &dyn Fn(usize) -> bool,
        start: [usize; 3],
        conn: Connectivity,
    ) -> Vec<Option<StepCounts>> {
        let n = s.len();
        let mut dist: Vec<Option<StepCounts>> = vec![None; n];
        let mut done = vec![false; n];
        let si = s.linear(start);
        if !valid(si) {
            return dist;
        }
        dist[si] = Some(StepCounts::default());
        let mut frontier: BTreeSet<(u64, usize)> = BTreeSet::new();
        frontier.insert((0f64.to_bits(), si));
        while let Some((_, i)) = frontier.pop_first() {
            if done[i] {
                continue;
            }
            done[i] = true;
            let u = s.unlinear(i);
            let base = dist[i].unwrap();
            for off in conn.offsets() {
                let nu = [u[0] as i64 + off[0], u[1] as i64 + off[1], u[2] as i64 + off[2]];
                if !s.contains(nu) {
                    continue;
                }
                let ni = s.linear(nu.map(|x| x as usize));
                if !valid(ni) || done[ni] {
                    continue;
                }
                let mut c = base;
                match off.iter().map(|d| d.abs()).sum::<i64>() {
                    1 => c.axis += 1,
                    2 => c.face += 1,
                    _ => c.cube += 1,
                }
                if dist[ni].is_none_or(|d| c.cost() < d.cost()) {
                    dist[ni] = Some(c);
                    // non-negative f64 bit patterns order like the values
                    frontier.insert((c.cost().to_bits(), ni));
                }
            }
        }
        dist
    }

    #[test]
    fn same_start_and_goal() {
        let e = compute_esdf(&VoxelGrid::empty(spec([20, 20, 20])));
        let p = astar(&e, [5, 5, 5], [5, 5, 5], &PlannerParams::default()).unwrap();
        assert_eq!(p.indices, vec![[5, 5, 5]]);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn straight_line_in_free_space() {
        let e = compute_esdf(&VoxelGrid::empty(spec([20, 20, 20])));
        let p = astar(&e, [2, 10, 10], [17, 10, 10], &PlannerParams::default()).unwrap();
        assert_eq!(p.indices.len(), 16);
        assert!(p.indices.iter().all(|u| u[1] == 10 && u[2] == 10));
        assert!((p.cost - 15.0 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn wall_with_gap_matches_dijkstra() {
        let s = spec([30, 30, 30]);
        let mut g = VoxelGrid::empty(s);
        // wall at u = 15 with a 13×13 gap centred at (v, w) = (22, 15)
        g.fill_where(|u| u[0] == 15 && !((16..29).contains(&u[1]) && (9..22).contains(&u[2])));
        let e = compute_esdf(&g);
        let params = PlannerParams::default();
        let start = [5, 8, 15];
        let goal = [25, 8, 15];
        let path = astar(&e, start, goal, &params).unwrap();
        assert!(path.indices.iter().any(|u| u[0] == 15 && (21..=23).contains(&u[1])));
        assert!(path.indices.iter().all(|u| e.get(*u) >= params.r_safe));
        let oracle = dijkstra(&s, &|i| e.get_linear(i) >= params.r_safe, start, params.connectivity);
        assert_eq!(path.cost, oracle[s.linear(goal)].unwrap().cost() * s.resolution);
    }

    #[test]
    fn endpoint_errors() {
        let s = spec([10, 10, 10]);
        let mut g = VoxelGrid::empty(s);
        g.set([5, 5, 5], true);
        let e = compute_esdf(&g);
        let params = PlannerParams::default();
        assert_eq!(
            astar(&e, [0, 0, 0], [5, 5, 5], &params).unwrap_err(),
            PlanError::InfeasibleEndpoint("goal".into())
        );
        let mut wall = VoxelGrid::empty(s);
        wall.fill_where(|u| u[0] == 5);
        assert_eq!(
            astar_free(&wall, [0, 0, 0], [9, 9, 9], Connectivity::TwentySix).unwrap_err(),
            PlanError::NoPath
        );
    }

    fn random_instance(seed: u64) -> (GridSpec, VoxelGrid, [usize; 3], [usize; 3]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spec([16, 16, 16]);
        let mut g = VoxelGrid::empty(s);
        let p = rng.random_range(0.0..0.01);
        g.fill_where(|_| rng.random_bool(p));
        let mut pick = || [0; 3].map(|_| rng.random_range(0..16usize));
        (s, g, pick(), pick())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn optimal_and_admissible(seed in any::<u64>(), six in any::<bool>(), r_safe in 0.005..0.03f64) {
            let (s, g, start, goal) = random_instance(seed);
            let e = compute_esdf(&g);
            let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
            let valid = |i: usize| e.get_linear(i) >= r_safe;
            let result = astar_masked(&s, valid, start, goal, conn);
            let from_goal = dijkstra(&s, &valid, goal, conn);
            let from_start = dijkstra(&s, &valid, start, conn);
            match result {
                Ok((path, expanded)) => {
                    prop_assert_eq!(path.steps.cost(), from_start[s.linear(goal)].unwrap().cost());
                    for w in path.indices.windows(2) {
                        let d: Vec<i64> = (0..3).map(|k| w[1][k] as i64 - w[0][k] as i64).collect();
                        prop_assert!(conn.offsets().iter().any(|o| o.as_slice() == d.as_slice()));
                    }
                    for i in expanded {
                        let h = euclid(s.unlinear(i), goal);
                        let remaining = from_goal[i].unwrap().cost();
                        prop_assert!(h <= remaining + 1e-9);
                    }
                }
                Err(PlanError::InfeasibleEndpoint(_)) => {
                    prop_assert!(!valid(s.linear(start)) || !valid(s.linear(goal)));
                }
                Err(PlanError::NoPath) => prop_assert!(from_start[s.linear(goal)].is_none()),
                Err(e) => prop_assert!(false, "unexpected {e:?}"),
            }
        }

        #[test]
        fn clearance_equals_eroded_free_space(seed in any::<u64>(), r_safe in 0.005..0.04f64) {
            let (s, g, start, goal) = random_instance(seed);
            let e = compute_esdf(&g);
            let params = PlannerParams { r_safe, connectivity: Connectivity::TwentySix };
            let mut eroded = VoxelGrid::empty(s);
            eroded.fill_where(|u| e.get(u) < r_safe);
            let a = astar(&e, start, goal, &params).map(|p| p.cost);
            let b = astar_free(&eroded, start, goal, params.connectivity).map(|p| p.cost);
            prop_assert_eq!(a, b);
        }
    }
}
