//! Dense kernels shared by the tape ops.

/// `c = op(a) · op(b) (+ c if accumulate)`, with `op(a)` of shape `m × k`
/// and `op(b)` of shape `k × n`. A transposed operand is stored in its
/// untransposed row-major form.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    c: &mut [f64],
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are checked on entry.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// Output length of a strided, zero-padded convolution.
pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= kernel && stride >= 1).then(|| (padded - kernel) / stride + 1)
}

/// Prefix offsets of a list of lengths.
pub(crate) fn offsets(lens: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(lens.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &l in lens {
        acc += l;
        out.push(acc);
    }
    out
}

/// Builds the `rows_out × (kernel·cin)` patch matrix of a segmented
/// convolution. Column `j·cin + c` holds input channel `c` at tap `j`.
pub(crate) fn im2col(
    x: &[f64],
    cin: usize,
    lens: &[usize],
    out_lens: &[usize],
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let in_off = offsets(lens);
    let total_out: usize = out_lens.iter().sum();
    let width = kernel * cin;
    let mut cols = vec![0.0; total_out * width];
    let mut row = 0;
    for (s, &lo) in out_lens.iter().enumerate() {
        let (start, len) = (in_off[s], lens[s]);
        for t in 0..lo {
            let dst = &mut cols[row * width..(row + 1) * width];
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    let src = (start + pos as usize) * cin;
                    dst[j * cin..(j + 1) * cin].copy_from_slice(&x[src..src + cin]);
                }
            }
            row += 1;
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(
    dcols: &[f64],
    dx: &mut [f64],
    cin: usize,
    lens: &[usize],
    out_lens: &[usize],
    kernel: usize,
    stride: usize,
    pad: usize,
) {
    let in_off = offsets(lens);
    let width = kernel * cin;
    let mut row = 0;
    for (s, &lo) in out_lens.iter().enumerate() {
        let (start, len) = (in_off[s], lens[s]);
        for t in 0..lo {
            let src = &dcols[row * width..(row + 1) * width];
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    let d = (start + pos as usize) * cin;
                    for (a, b) in dx[d..d + cin].iter_mut().zip(&src[j * cin..(j + 1) * cin]) {
                        *a += b;
                    }
                }
            }
            row += 1;
        }
    }
}
