// Raw numeric kernels shared by the tape's forward and backward rules.

/// Splits `shape` around `axis` into `(outer, len, inner)` so that element
/// `(o, k, i)` lives at `o * len * inner + k * inner + i`.
pub(crate) fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// `c = a · b` with `a: [m, k]`, `b: [k, n]`, overwriting `c: [m, n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(a, (k, 1), b, (n, 1), c, m, k, n, 0.0);
}

/// `c += aᵀ · b` with `a: [k, m]`, `b: [k, n]`, `c: [m, n]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(a, (1, m), b, (n, 1), c, m, k, n, 1.0);
}

/// `c += a · bᵀ` with `a: [m, k]`, `b: [n, k]`, `c: [m, n]`.
pub(crate) fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(a, (k, 1), b, (1, k), c, m, k, n, 1.0);
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given strides,
    // as checked by the assertion above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Softmax along the middle axis of an `(outer, len, inner)` layout.
pub(crate) fn softmax_lanes(x: &[f64], out: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(x[base + k * inner + i]);
            }
            let mut sum = 0.0;
            for k in 0..len {
                let e = (x[base + k * inner + i] - max).exp();
                out[base + k * inner + i] = e;
                sum += e;
            }
            for k in 0..len {
                out[base + k * inner + i] /= sum;
            }
        }
    }
}

/// Sum along the middle axis, accumulating neighbours in index order.
pub(crate) fn sum_lanes(x: &[f64], out: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        dst.fill(0.0);
        for k in 0..len {
            let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// Max along the middle axis; records the first maximal position per lane.
pub(crate) fn max_lanes(
    x: &[f64],
    out: &mut [f64],
    argmax: &mut [usize],
    outer: usize,
    len: usize,
    inner: usize,
) {
    for o in 0..outer {
        for i in 0..inner {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            for k in 0..len {
                let v = x[(o * len + k) * inner + i];
                if v > best || k == 0 {
                    best = v;
                    best_k = k;
                }
            }
            out[o * inner + i] = best;
            argmax[o * inner + i] = best_k;
        }
    }
}

pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}
