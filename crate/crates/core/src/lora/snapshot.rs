//! Binary snapshot of a [`LoraState`].
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! "ARLS" version=1 layer_count
//! per layer: layer_index out in rank has_base
//!            A (rank × in, row-major) B (out × rank) bias (out) [base (out × in)]
//! ```

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use thiserror::Error;

use super::{AdapterLayer, LoraState};
use crate::Scalar;

pub const MAGIC: [u8; 4] = *b"ARLS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("bad snapshot magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot truncated")]
    Truncated,
    #[error("layer header {found} out of order, expected {expected}")]
    LayerIndex { expected: u32, found: u32 },
    #[error("invalid has_base flag {0}")]
    BadFlag(u32),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for SnapshotError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            SnapshotError::Truncated
        } else {
            SnapshotError::Io(e)
        }
    }
}

fn dim(v: usize) -> io::Result<u32> {
    u32::try_from(v)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))
}

fn write_reals<T: Scalar, W: Write>(w: &mut W, values: impl Iterator<Item = T>) -> io::Result<()> {
    for v in values {
        w.write_f64::<LittleEndian>(v.as_f64())?;
    }
    Ok(())
}

pub fn write_state<T: Scalar, W: Write>(w: &mut W, state: &LoraState<T>) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(dim(state.layers.len())?)?;
    for (i, l) in state.layers.iter().enumerate() {
        for v in [
            i,
            l.output_dim(),
            l.input_dim(),
            l.rank(),
            usize::from(l.base.is_some()),
        ] {
            w.write_u32::<LittleEndian>(dim(v)?)?;
        }
        write_reals(w, l.down.iter().copied())?;
        write_reals(w, l.up.iter().copied())?;
        write_reals(w, l.bias.iter().copied())?;
        if let Some(b) = &l.base {
            write_reals(w, b.iter().copied())?;
        }
    }
    Ok(())
}

fn read_matrix<T: Scalar, R: Read>(
    r: &mut R,
    rows: usize,
    cols: usize,
) -> Result<Array2<T>, SnapshotError> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(T::of(r.read_f64::<LittleEndian>()?));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"))
}

pub fn read_state<T: Scalar, R: Read>(r: &mut R) -> Result<LoraState<T>, SnapshotError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(SnapshotError::BadMagic(magic));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut layers = Vec::with_capacity(count as usize);
    for expected in 0..count {
        let index = r.read_u32::<LittleEndian>()?;
        if index != expected {
            return Err(SnapshotError::LayerIndex {
                expected,
                found: index,
            });
        }
        let out = r.read_u32::<LittleEndian>()? as usize;
        let input = r.read_u32::<LittleEndian>()? as usize;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let has_base = match r.read_u32::<LittleEndian>()? {
            0 => false,
            1 => true,
            other => return Err(SnapshotError::BadFlag(other)),
        };
        let down = read_matrix(r, rank, input)?;
        let up = read_matrix(r, out, rank)?;
        let bias: Array1<T> = read_matrix(r, 1, out)?
            .into_shape_with_order(out)
            .expect("1 × out");
        let base = if has_base {
            Some(read_matrix(r, out, input)?)
        } else {
            None
        };
        layers.push(AdapterLayer {
            down,
            up,
            bias,
            base,
        });
    }
    Ok(LoraState { layers })
}
