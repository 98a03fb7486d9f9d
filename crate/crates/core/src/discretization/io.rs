//! Binary field layout and CSV slices.
//!
//! Field layout, all little-endian:
//!
//! ```text
//! b"NHF1"  u32 dim  u64 sizes[dim]  u32 order  u64 count  f64 values[count]
//! ```
//!
//! `values` is row-major over `[x_1..x_m, t_1..t_k]`, `count` is the product
//! of the sizes.

use std::io::Write;

use super::field::ScalarField;
use super::grid::{Grid, StencilOrder};
use crate::error::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"NHF1";
pub const MAX_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedField {
    pub sizes: Vec<usize>,
    pub order: StencilOrder,
    pub values: Vec<f64>,
}

impl DecodedField {
    /// Checks the header against `grid` and wraps the payload.
    pub fn into_field(self, grid: &Grid) -> Result<ScalarField> {
        if self.sizes != grid.sizes() {
            return Err(Error::ShapeMismatch(format!("stored sizes {:?}, grid sizes {:?}", self.sizes, grid.sizes())));
        }
        ScalarField::from_values(grid, self.values)
    }
}

pub fn encode_field(grid: &Grid, f: &ScalarField) -> Result<Vec<u8>> {
    f.check_shape(grid)?;
    let mut out = Vec::with_capacity(24 + 8 * grid.dim() + 8 * f.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &s in grid.sizes() {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&(grid.order().as_usize() as u32).to_le_bytes());
    out.extend_from_slice(&(f.len() as u64).to_le_bytes());
    for v in &f.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Cursor over a byte slice with bounds-checked little-endian reads.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Decode(format!("truncated input at byte {}", self.pos))),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn read_field(r: &mut Reader<'_>) -> Result<DecodedField> {
    if r.take(4)? != FIELD_MAGIC {
        return Err(Error::Decode("bad field magic".into()));
    }
    let dim = r.u32()? as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Decode(format!("dimension {dim} out of range 1..={MAX_DIM}")));
    }
    let mut sizes = Vec::with_capacity(dim);
    let mut count: u64 = 1;
    for _ in 0..dim {
        let s = r.u64()?;
        if s == 0 {
            return Err(Error::Decode("zero axis size".into()));
        }
        count = count.checked_mul(s).ok_or_else(|| Error::Decode("axis sizes overflow".into()))?;
        sizes.push(usize::try_from(s).map_err(|_| Error::Decode("axis size too large".into()))?);
    }
    let order = match r.u32()? {
        2 => StencilOrder::Two,
        4 => StencilOrder::Four,
        p => return Err(Error::Decode(format!("unsupported stencil order {p}"))),
    };
    let stored = r.u64()?;
    if stored != count {
        return Err(Error::Decode(format!("value count {stored} does not match sizes (expected {count})")));
    }
    if count > (r.remaining() / 8) as u64 {
        return Err(Error::Decode(format!("payload holds {} values, header says {count}", r.remaining() / 8)));
    }
    let mut values = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(Error::Decode("non-finite value in payload".into()));
        }
        values.push(v);
    }
    Ok(DecodedField { sizes, order, values })
}

/// Parses a field written by [`encode_field`]. Trailing bytes are rejected.
pub fn decode_field(bytes: &[u8]) -> Result<DecodedField> {
    let mut r = Reader::new(bytes);
    let f = read_field(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Decode(format!("{} trailing bytes", r.remaining())));
    }
    Ok(f)
}

fn axis_name(grid: &Grid, axis: usize) -> String {
    if axis < grid.m() {
        format!("x{}", axis + 1)
    } else {
        format!("t{}", axis - grid.m() + 1)
    }
}

/// Writes the 2-D slice of `f` spanned by `axes`, the remaining coordinates
/// fixed at the indices in `at` (entries for the slice axes are ignored).
pub fn write_slice_csv<W: Write>(
    grid: &Grid,
    f: &ScalarField,
    axes: (usize, usize),
    at: &[usize],
    out: W,
) -> Result<()> {
    f.check_shape(grid)?;
    let dim = grid.dim();
    let (a, b) = axes;
    if a >= dim || b >= dim || a == b {
        return Err(Error::IndexOutOfRange { index: a.max(b), expected: format!("two distinct axes < {dim}") });
    }
    if at.len() != dim {
        return Err(Error::ShapeMismatch(format!("slice position has {} entries, grid has {dim} axes", at.len())));
    }
    if let Some(j) = (0..dim).find(|&j| j != a && j != b && at[j] >= grid.sizes()[j]) {
        return Err(Error::IndexOutOfRange { index: at[j], expected: format!("< {} on axis {j}", grid.sizes()[j]) });
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([axis_name(grid, a), axis_name(grid, b), "value".to_string()]).map_err(io)?;
    let mut mi = at.to_vec();
    for i in 0..grid.sizes()[a] {
        for j in 0..grid.sizes()[b] {
            mi[a] = i;
            mi[b] = j;
            let v = f.values[grid.flat_index(&mi)];
            w.write_record([
                format!("{}", grid.coord(a, i)),
                format!("{}", grid.coord(b, j)),
                format!("{v:e}"),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
