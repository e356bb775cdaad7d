//! Strided single-precision GEMM, row-partitioned across workers.

use crate::exec;

/// Strided view of a matrix stored in a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

/// `c = alpha · a · b + beta · c` with `a: m×k`, `b: k×n` and `c` row-major `m×n`.
///
/// Rows of `c` are split into contiguous blocks computed independently, so the
/// result does not depend on the worker count.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    // Parallelise only when each block carries real work.
    let min_rows = (32_768 / (k * n).max(1)).max(4);
    let rows = exec::row_chunk(m, min_rows);
    exec::for_each_chunk(c, rows * n, |block, c_rows| {
        let r0 = block * rows;
        let mr = c_rows.len() / n;
        // SAFETY: `a.check`/`b.check` bound every element the kernel reads; the
        // block reads rows r0..r0+mr of `a` and writes only its own `c_rows`.
        unsafe {
            matrixmultiply::sgemm(
                mr,
                k,
                n,
                alpha,
                a.data.as_ptr().add(r0 * a.row_stride),
                a.row_stride as isize,
                a.col_stride as isize,
                b.data.as_ptr(),
                b.row_stride as isize,
                b.col_stride as isize,
                beta,
                c_rows.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}
