//! Exact Euclidean distance transform of an occupancy grid.

use std::io::{BufRead, Write};

use crate::occupancy::{GridSpec, VoxelGrid};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PlanError;

pub const ESDF_DUMP_FORMAT: &str = "unimanip-esdf-f64";
pub const ESDF_DUMP_VERSION: u32 = 1;

/// Header line of an ESDF dump. The body is one little-endian `f64` per voxel
/// in memory order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdfHeader {
    pub format: String,
    pub version: u32,
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
}

/// Distance (m) from every voxel to the nearest occupied voxel, capped at the
/// grid diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Esdf {
    pub spec: GridSpec,
    distances: Vec<f64>,
}

impl Esdf {
    pub fn get(&self, u: [usize; 3]) -> f64 {
        self.distances[self.spec.linear(u)]
    }

    pub fn get_linear(&self, i: usize) -> f64 {
        self.distances[i]
    }

    /// Distance at the voxel nearest to `p`, if `p` is inside the grid.
    pub fn at_point(&self, p: &Vector3<f64>) -> Option<f64> {
        self.spec.nearest(p).map(|u| self.get(u))
    }

    pub fn values(&self) -> &[f64] {
        &self.distances
    }

    pub fn cap(&self) -> f64 {
        self.spec.diagonal()
    }
}

pub fn write_esdf(phi: &Esdf, out: &mut impl Write) -> std::io::Result<()> {
    let header = EsdfHeader {
        format: ESDF_DUMP_FORMAT.into(),
        version: ESDF_DUMP_VERSION,
        origin: phi.spec.origin.into(),
        resolution: phi.spec.resolution,
        dims: phi.spec.dims,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for d in &phi.distances {
        out.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_esdf(input: &mut impl BufRead) -> Result<Esdf, PlanError> {
    let mut line = String::new();
    input.read_line(&mut line).map_err(|e| PlanError::Io(e.to_string()))?;
    let header: EsdfHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| PlanError::Io(format!("esdf header: {e}")))?;
    if header.format != ESDF_DUMP_FORMAT || header.version != ESDF_DUMP_VERSION {
        return Err(PlanError::Io(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let spec = GridSpec::new(header.origin.into(), header.resolution, header.dims)
        .map_err(|e| PlanError::Io(e.to_string()))?;
    let mut distances = Vec::with_capacity(spec.len());
    let mut buf = [0u8; 8];
    for _ in 0..spec.len() {
        input
            .read_exact(&mut buf)
            .map_err(|e| PlanError::Io(format!("esdf data: {e}")))?;
        distances.push(f64::from_le_bytes(buf));
    }
    Ok(Esdf { spec, distances })
}

/// Lower envelope of parabolas over one line (Felzenszwalb–Huttenlocher).
/// `f[q]` is `None` where no site exists; the result is the squared distance
/// to the nearest site, or `None` if the line has none.
fn envelope_1d(f: &[Option<f64>], out: &mut [Option<f64>], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, fq) in f.iter().enumerate() {
        let Some(fq) = *fq else { continue };
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else { break };
            let fp = f[p].expect("site");
            let pf = p as f64;
            let s = ((fq + qf * qf) - (fp + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *z.last().expect("boundary") {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    // z[k] is the left boundary of parabola v[k]
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let d = qf - p as f64;
        *o = Some(d * d + f[p].expect("site"));
    }
}

/// Squared voxel-unit distances along all three axes; `None` for an all-free grid.
fn squared_transform(m: &VoxelGrid) -> Vec<Option<f64>> {
    let spec = m.spec;
    let dims = spec.dims;
    let mut grid: Vec<Option<f64>> = m.bits().iter().by_vals().map(|b| b.then_some(0.0)).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        let stride = match axis {
            0 => dims[1] * dims[2],
            1 => dims[2],
            _ => 1,
        };
        let mut line = vec![None; n];
        let mut out = vec![None; n];
        for start in 0..spec.len() {
            if spec.unlinear(start)[axis] != 0 {
                continue;
            }
            for (k, cell) in line.iter_mut().enumerate() {
                *cell = grid[start + k * stride];
            }
            envelope_1d(&line, &mut out, &mut v, &mut z);
            for (k, cell) in out.iter().enumerate() {
                grid[start + k * stride] = *cell;
            }
        }
    }
    grid
}

pub fn compute_esdf(m: &VoxelGrid) -> Esdf {
    let cap = m.spec.diagonal();
    let r = m.spec.resolution;
    let distances = squared_transform(m)
        .into_iter()
        .map(|d| match d {
            Some(d2) => (d2.sqrt() * r).min(cap),
            None => cap,
        })
        .collect();
    Esdf {
        spec: m.spec,
        distances,
    }
}
