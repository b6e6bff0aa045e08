//! Tensor snapshot encoding: `u32` rank, `u64` extents, then `f64` payload, all little-endian.

use std::io::{self, Read, Write};

use crate::num::Scalar;

use super::Tensor;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> io::Result<()> {
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> io::Result<Tensor<T>> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let ndim = u32::from_le_bytes(b4) as usize;
    if ndim > 16 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("implausible tensor rank {ndim}"),
        ));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut b8)?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        data.push(T::of(f64::from_le_bytes(b8)));
    }
    Tensor::new(shape, data).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}
