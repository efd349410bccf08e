//! Grid dump format: one JSON header line, then little-endian `u32` run
//! lengths over the occupancy bits in memory order, alternating free /
//! occupied and starting with free (the first run may be zero).

use std::io::{BufRead, Write};

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridSpec, OccupancyError, VoxelGrid};

pub const GRID_DUMP_FORMAT: &str = "unimanip-voxel-rle";
pub const GRID_DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub format: String,
    pub version: u32,
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
    pub runs: usize,
}

fn runs(bits: &BitSlice) -> Vec<u32> {
    let mut out = Vec::new();
    let mut current = false;
    let mut len: u32 = 0;
    for b in bits.iter().by_vals() {
        if b == current {
            len += 1;
        } else {
            out.push(len);
            current = b;
            len = 1;
        }
    }
    out.push(len);
    out
}

pub fn write_grid(grid: &VoxelGrid, out: &mut impl Write) -> std::io::Result<()> {
    let runs = runs(grid.bits());
    let header = GridHeader {
        format: GRID_DUMP_FORMAT.into(),
        version: GRID_DUMP_VERSION,
        origin: grid.spec.origin.into(),
        resolution: grid.spec.resolution,
        dims: grid.spec.dims,
        runs: runs.len(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for r in runs {
        out.write_all(&r.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid(input: &mut impl BufRead) -> Result<VoxelGrid, OccupancyError> {
    let mut line = String::new();
    input
        .read_line(&mut line)
        .map_err(|e| OccupancyError::Dump(e.to_string()))?;
    let header: GridHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| OccupancyError::Dump(format!("header: {e}")))?;
    if header.format != GRID_DUMP_FORMAT || header.version != GRID_DUMP_VERSION {
        return Err(OccupancyError::Dump(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let spec = GridSpec::new(header.origin.into(), header.resolution, header.dims)?;
    let mut bits = BitVec::with_capacity(spec.len());
    let mut buf = [0u8; 4];
    let mut value = false;
    for _ in 0..header.runs {
        input
            .read_exact(&mut buf)
            .map_err(|e| OccupancyError::Dump(format!("run data: {e}")))?;
        let n = u32::from_le_bytes(buf) as usize;
        if bits.len() + n > spec.len() {
            return Err(OccupancyError::Dump("runs exceed grid size".into()));
        }
        bits.resize(bits.len() + n, value);
        value = !value;
    }
    if bits.len() != spec.len() {
        return Err(OccupancyError::Dump(format!(
            "runs cover {} of {} voxels",
            bits.len(),
            spec.len()
        )));
    }
    VoxelGrid::from_bits(spec, bits)
}
