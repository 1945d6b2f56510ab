//! Dense numeric kernels shared by the graph ops. Everything here works on
//! raw row-major slices; shape validation happens in the callers.

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `cols × rows` buffer.
    pub fn transposed(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: 1,
            cs: rows as isize,
        }
    }

    fn max_offset(&self) -> usize {
        (self.rows - 1) * self.rs as usize + (self.cols - 1) * self.cs as usize
    }
}

/// `c = alpha * a·b + beta * c`, `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm: rhs view out of bounds");
    // SAFETY: every index reachable through the strides was bounds-checked
    // above and the output holds m*n contiguous values.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fills `cols` (`kernel·cin × len`) with the causal im2col expansion of one
/// sample `x` (`cin × len`): row `k·cin + c`, column `t` holds
/// `x[c, t − (kernel − 1) + k]`, zero where that index is negative.
fn im2col_causal(x: &[f64], cin: usize, len: usize, kernel: usize, cols: &mut [f64]) {
    for k in 0..kernel {
        let shift = kernel - 1 - k;
        for c in 0..cin {
            let row = &mut cols[(k * cin + c) * len..(k * cin + c + 1) * len];
            let src = &x[c * len..(c + 1) * len];
            let lead = shift.min(len);
            row[..lead].fill(0.0);
            row[lead..].copy_from_slice(&src[..len - lead]);
        }
    }
}

/// Adds the column-space gradient back onto `dx` (inverse of `im2col_causal`).
fn col2im_causal(dcols: &[f64], cin: usize, len: usize, kernel: usize, dx: &mut [f64]) {
    for k in 0..kernel {
        let shift = kernel - 1 - k;
        if shift >= len {
            continue;
        }
        for c in 0..cin {
            let row = &dcols[(k * cin + c) * len..(k * cin + c + 1) * len];
            let dst = &mut dx[c * len..(c + 1) * len];
            for (d, g) in dst[..len - shift].iter_mut().zip(&row[shift..]) {
                *d += g;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub kernel: usize,
}

/// `x`: (batch, cin, len); `w`: (kernel, cin, cout); `bias`: (cout).
pub(crate) fn conv1d_causal(x: &[f64], w: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        cin,
        cout,
        len,
        kernel,
    } = d;
    let kc = kernel * cin;
    let mut out = vec![0.0; batch * cout * len];
    let mut cols = vec![0.0; kc * len];
    for b in 0..batch {
        im2col_causal(&x[b * cin * len..(b + 1) * cin * len], cin, len, kernel, &mut cols);
        let y = &mut out[b * cout * len..(b + 1) * cout * len];
        for (o, row) in y.chunks_exact_mut(len).enumerate() {
            row.fill(bias[o]);
        }
        gemm(
            1.0,
            MatRef::transposed(w, cout, kc),
            MatRef::row_major(&cols, kc, len),
            1.0,
            y,
        );
    }
    out
}

/// Accumulates gradients of a causal conv into whichever buffers are given.
pub(crate) fn conv1d_causal_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let ConvDims {
        batch,
        cin,
        cout,
        len,
        kernel,
    } = d;
    let kc = kernel * cin;
    let mut cols = vec![0.0; kc * len];
    let mut dcols = vec![0.0; kc * len];
    for b in 0..batch {
        let dyb = &dy[b * cout * len..(b + 1) * cout * len];
        if let Some(db) = db.as_deref_mut() {
            for (o, row) in dyb.chunks_exact(len).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col_causal(&x[b * cin * len..(b + 1) * cin * len], cin, len, kernel, &mut cols);
            gemm(
                1.0,
                MatRef::row_major(&cols, kc, len),
                MatRef::transposed(dyb, len, cout),
                1.0,
                dw,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                1.0,
                MatRef::row_major(w, kc, cout),
                MatRef::row_major(dyb, cout, len),
                0.0,
                &mut dcols,
            );
            col2im_causal(&dcols, cin, len, kernel, &mut dx[b * cin * len..(b + 1) * cin * len]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(1.0, MatRef::row_major(&a, 2, 3), MatRef::row_major(&b, 3, 4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn causal_conv_matches_direct_sum() {
        let d = ConvDims {
            batch: 2,
            cin: 2,
            cout: 3,
            len: 5,
            kernel: 3,
        };
        let x: Vec<f64> = (0..20).map(|v| ((v * 7) % 5) as f64 - 1.5).collect();
        let w: Vec<f64> = (0..18).map(|v| ((v * 3) % 7) as f64 * 0.1 - 0.3).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let y = conv1d_causal(&x, &w, &bias, d);
        for b in 0..2 {
            for o in 0..3 {
                for t in 0..5 {
                    let mut want = bias[o];
                    for k in 0..3 {
                        for c in 0..2 {
                            let s = t as isize - 2 + k as isize;
                            if s >= 0 {
                                want += w[(k * 2 + c) * 3 + o] * x[(b * 2 + c) * 5 + s as usize];
                            }
                        }
                    }
                    assert!((y[(b * 3 + o) * 5 + t] - want).abs() < 1e-12);
                }
            }
        }
    }
}
