//! Single-view conservative volumetric reconstruction.
//!
//! A depth image is back-projected into the base frame, voxelized, closed
//! with a cubic structuring element and finally completed along the gravity
//! axis so that nothing observed from above can float: every voxel beneath an
//! occupied one is treated as occupied too.

mod dump;

use bitvec::prelude::*;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::Pose7;

pub use dump::{read_grid, write_grid, GridHeader, GRID_DUMP_FORMAT, GRID_DUMP_VERSION};

/// Voxel edge length used throughout (m).
pub const DEFAULT_RESOLUTION: f64 = 0.01;

/// Default closing kernel side (voxels).
pub const DEFAULT_KERNEL_SIDE: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OccupancyError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid depth image: {0}")]
    InvalidDepth(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("kernel side must be odd and at least 1, got {0}")]
    InvalidKernel(usize),
    #[error("grid dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), OccupancyError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(OccupancyError::InvalidIntrinsics(format!("{self:?}")))
        }
    }
}

/// Row-major depth image in meters; 0 means no return.
///
/// The camera frame follows the pinhole convention: +z along the optical
/// axis, +x to the right in the image, +y down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub camera_pose: Pose7,
}

impl DepthImage {
    pub fn new(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        intrinsics: Intrinsics,
        camera_pose: Pose7,
    ) -> Result<Self, OccupancyError> {
        if depth.len() != width * height {
            return Err(OccupancyError::InvalidDepth(format!(
                "{} values for a {width}x{height} image",
                depth.len()
            )));
        }
        if let Some(bad) = depth.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(OccupancyError::InvalidDepth(format!("depth value {bad}")));
        }
        intrinsics.validate()?;
        Ok(Self {
            width,
            height,
            depth,
            intrinsics,
            camera_pose,
        })
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

/// Back-projects every pixel with a return into the base frame.
pub fn backproject(img: &DepthImage) -> Result<PointCloud, OccupancyError> {
    let k = img.intrinsics;
    k.validate()?;
    let cam = img.camera_pose.to_transform();
    let mut points = Vec::new();
    for v in 0..img.height {
        for u in 0..img.width {
            let d = img.at(u, v);
            if d > 0.0 {
                let pc = Vector3::new((u as f64 - k.cx) * d / k.fx, (v as f64 - k.cy) * d / k.fy, d);
                points.push(cam.transform_point(&pc));
            }
        }
    }
    Ok(PointCloud { points })
}

/// Placement and size of a voxel grid. Axis `w` (third) points up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Result<Self, OccupancyError> {
        let spec = Self {
            origin,
            resolution,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(OccupancyError::InvalidGrid(format!("resolution {}", self.resolution)));
        }
        if self.dims.iter().any(|d| *d == 0) {
            return Err(OccupancyError::InvalidGrid(format!("dims {:?}", self.dims)));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(OccupancyError::InvalidGrid("non-finite origin".into()));
        }
        Ok(())
    }

    /// Grid covering the axis-aligned box `[lo, hi]`.
    pub fn covering(lo: Vector3<f64>, hi: Vector3<f64>, resolution: f64) -> Result<Self, OccupancyError> {
        let ext = hi - lo;
        let dims = [0, 1, 2].map(|i| ((ext[i] / resolution).ceil().max(1.0)) as usize);
        Self::new(lo, resolution, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear(&self, u: [usize; 3]) -> usize {
        (u[0] * self.dims[1] + u[1]) * self.dims[2] + u[2]
    }

    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let w = i % self.dims[2];
        let rest = i / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], w]
    }

    pub fn contains(&self, u: [i64; 3]) -> bool {
        (0..3).all(|i| u[i] >= 0 && (u[i] as usize) < self.dims[i])
    }

    /// Metric point of index `u`: `r·u + origin`.
    pub fn point(&self, u: [usize; 3]) -> Vector3<f64> {
        Vector3::new(u[0] as f64, u[1] as f64, u[2] as f64) * self.resolution + self.origin
    }

    /// Cell containing `p` under the floor rule, if inside the grid.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let f = (p - self.origin) / self.resolution;
        let u = [0, 1, 2].map(|i| f[i].floor() as i64);
        self.contains(u).then(|| u.map(|x| x as usize))
    }

    /// Index whose point `r·u + origin` is nearest to `p`, if inside the grid.
    pub fn nearest(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let f = (p - self.origin) / self.resolution;
        let u = [0, 1, 2].map(|i| f[i].round() as i64);
        self.contains(u).then(|| u.map(|x| x as usize))
    }

    /// Length of the grid diagonal in meters.
    pub fn diagonal(&self) -> f64 {
        let [h, w, d] = self.dims.map(|x| x as f64);
        self.resolution * (h * h + w * w + d * d).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    occupancy: BitVec,
}

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            occupancy: bitvec![0; spec.len()],
        }
    }

    pub fn from_bits(spec: GridSpec, occupancy: BitVec) -> Result<Self, OccupancyError> {
        spec.validate()?;
        if occupancy.len() != spec.len() {
            return Err(OccupancyError::InvalidGrid(format!(
                "{} bits for dims {:?}",
                occupancy.len(),
                spec.dims
            )));
        }
        Ok(Self { spec, occupancy })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn bits(&self) -> &BitSlice {
        &self.occupancy
    }

    pub fn get(&self, u: [usize; 3]) -> bool {
        self.occupancy[self.spec.linear(u)]
    }

    pub fn set(&mut self, u: [usize; 3], value: bool) {
        let i = self.spec.linear(u);
        self.occupancy.set(i, value);
    }

    pub fn count_occupied(&self) -> usize {
        self.occupancy.count_ones()
    }

    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.occupancy.iter_ones().map(|i| self.spec.unlinear(i))
    }

    /// Whether every occupied voxel of `self` is occupied in `other`.
    pub fn is_subset_of(&self, other: &VoxelGrid) -> bool {
        self.spec.dims == other.spec.dims && self.occupancy.iter_ones().all(|i| other.occupancy[i])
    }

    /// Marks `u` and everything else the predicate selects as occupied.
    pub fn fill_where(&mut self, mut pred: impl FnMut([usize; 3]) -> bool) {
        for i in 0..self.spec.len() {
            if pred(self.spec.unlinear(i)) {
                self.occupancy.set(i, true);
            }
        }
    }
}

/// Odd cubic structuring element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel {
    side: usize,
}

impl Kernel {
    pub fn cube(side: usize) -> Result<Self, OccupancyError> {
        if side == 0 || side % 2 == 0 {
            return Err(OccupancyError::InvalidKernel(side));
        }
        Ok(Self { side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> usize {
        self.side / 2
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            side: DEFAULT_KERNEL_SIDE,
        }
    }
}

/// Voxelization result plus the number of points that fell outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Voxelized {
    pub grid: VoxelGrid,
    pub dropped: usize,
}

/// Marks every cell that contains at least one point.
pub fn voxelize(cloud: &PointCloud, spec: GridSpec) -> Result<Voxelized, OccupancyError> {
    spec.validate()?;
    let mut grid = VoxelGrid::empty(spec);
    let mut dropped = 0;
    for p in &cloud.points {
        match spec.cell_of(p) {
            Some(u) => grid.set(u, true),
            None => dropped += 1,
        }
    }
    Ok(Voxelized { grid, dropped })
}

/// 1-D sliding window along `axis` over a dense occupancy buffer. `any =
/// true` gives max (dilation), `false` gives min (erosion). Windows are
/// clipped at the grid boundary.
fn window_pass(src: &[bool], dims: [usize; 3], axis: usize, radius: usize, any: bool) -> Vec<bool> {
    let n = dims[axis];
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut out = vec![false; src.len()];
    // prefix counts of occupied cells along the line
    let mut prefix = vec![0usize; n + 1];
    let mut line_starts = Vec::with_capacity(src.len() / n.max(1));
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for c in 0..dims[2] {
                let u = [a, b, c];
                if u[axis] == 0 {
                    line_starts.push((a * dims[1] + b) * dims[2] + c);
                }
            }
        }
    }
    for start in line_starts {
        for k in 0..n {
            prefix[k + 1] = prefix[k] + src[start + k * stride] as usize;
        }
        if prefix[n] == 0 {
            continue;
        }
        for k in 0..n {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius).min(n - 1);
            let count = prefix[hi + 1] - prefix[lo];
            out[start + k * stride] = if any { count > 0 } else { count == hi + 1 - lo };
        }
    }
    out
}

fn separable(m: &VoxelGrid, k: Kernel, any: bool) -> VoxelGrid {
    let r = k.radius();
    let dims = m.spec.dims;
    let mut buf: Vec<bool> = m.occupancy.iter().by_vals().collect();
    for axis in 0..3 {
        buf = window_pass(&buf, dims, axis, r, any);
    }
    VoxelGrid {
        spec: m.spec,
        occupancy: buf.into_iter().collect(),
    }
}

pub fn dilate(m: &VoxelGrid, k: Kernel) -> VoxelGrid {
    separable(m, k, true)
}

pub fn erode(m: &VoxelGrid, k: Kernel) -> VoxelGrid {
    separable(m, k, false)
}

/// Dilation followed by erosion. Out-of-grid cells count as free when
/// dilating and occupied when eroding.
pub fn morph_close(m: &VoxelGrid, k: Kernel) -> VoxelGrid {
    erode(&dilate(m, k), k)
}

/// Fills every voxel at or below an occupied one in the same column.
pub fn conservative_complete(m: &VoxelGrid) -> VoxelGrid {
    let spec = m.spec;
    let d = spec.dims[2];
    let mut out = m.clone();
    for col in 0..spec.dims[0] * spec.dims[1] {
        let base = col * d;
        let mut seen = false;
        for w in (0..d).rev() {
            seen |= m.occupancy[base + w];
            if seen {
                out.occupancy.set(base + w, true);
            }
        }
    }
    out
}

/// Every stage of the reconstruction pipeline.
#[derive(Debug, Clone)]
pub struct OccupancyStages {
    pub cloud: PointCloud,
    pub init: VoxelGrid,
    pub closed: VoxelGrid,
    pub completed: VoxelGrid,
    pub dropped: usize,
}

/// Back-projection, voxelization, closing and vertical completion in one go.
pub fn build_occupancy(img: &DepthImage, spec: GridSpec, kernel: Kernel) -> Result<OccupancyStages, OccupancyError> {
    let cloud = backproject(img)?;
    let Voxelized { grid, dropped } = voxelize(&cloud, spec)?;
    let closed = morph_close(&grid, kernel);
    let completed = conservative_complete(&closed);
    Ok(OccupancyStages {
        cloud,
        init: grid,
        closed,
        completed,
        dropped,
    })
}
