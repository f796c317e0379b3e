use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Scalar type used by volumes and networks.
///
/// `f32` is the production precision; `f64` is the verification mode used by
/// gradient checks and oracle comparisons.
pub trait Real:
    Float + Default + Debug + Display + Sum + Send + Sync + serde::Serialize + 'static
{
    /// Dtype tag written into file headers.
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a * b + beta * c` on row-major matrices, `a` is m×k, `b` is k×n.
    ///
    /// Strides are given per matrix as (row stride, column stride) so transposed
    /// operands can be passed without copying.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

impl Real for f32 {
    const DTYPE: &'static str = "f32le";
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        (rsa, csa): (isize, isize),
        b: &[Self],
        (rsb, csb): (isize, isize),
        beta: Self,
        c: &mut [Self],
    ) {
        check_gemm_bounds(m, k, n, a.len(), (rsa, csa), b.len(), (rsb, csb), c.len());
        // SAFETY: bounds of every operand were checked against the strides above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64le";
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        (rsa, csa): (isize, isize),
        b: &[Self],
        (rsb, csb): (isize, isize),
        beta: Self,
        c: &mut [Self],
    ) {
        check_gemm_bounds(m, k, n, a.len(), (rsa, csa), b.len(), (rsb, csb), c.len());
        // SAFETY: bounds of every operand were checked against the strides above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    (rsa, csa): (isize, isize),
    b_len: usize,
    (rsb, csb): (isize, isize),
    c_len: usize,
) {
    let extent = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(extent(m, k, rsa, csa) <= a_len, "gemm: operand a out of bounds");
    assert!(extent(k, n, rsb, csb) <= b_len, "gemm: operand b out of bounds");
    assert!(m * n <= c_len, "gemm: output out of bounds");
}
