//! Dense kernels over row-major `f64` slices.

/// `out (t x n) = beta * out + x (t x k) * w^T`, with `w` stored `n x k`.
pub fn matmul_nt(t: usize, k: usize, n: usize, x: &[f64], w: &[f64], out: &mut [f64], beta: f64) {
    debug_assert!(x.len() >= t * k && w.len() >= n * k && out.len() >= t * n);
    // SAFETY: bounds checked above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            t, k, n, 1.0,
            x.as_ptr(), k as isize, 1,
            w.as_ptr(), 1, k as isize,
            beta,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out (t x k) = beta * out + dy (t x n) * w (n x k)`.
pub fn matmul_nn(t: usize, n: usize, k: usize, dy: &[f64], w: &[f64], out: &mut [f64], beta: f64) {
    debug_assert!(dy.len() >= t * n && w.len() >= n * k && out.len() >= t * k);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            t, n, k, 1.0,
            dy.as_ptr(), n as isize, 1,
            w.as_ptr(), k as isize, 1,
            beta,
            out.as_mut_ptr(), k as isize, 1,
        );
    }
}

/// `out (n x k) += dy^T (n x t) * x (t x k)`.
pub fn matmul_tn_acc(t: usize, n: usize, k: usize, dy: &[f64], x: &[f64], out: &mut [f64]) {
    debug_assert!(dy.len() >= t * n && x.len() >= t * k && out.len() >= n * k);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            n, t, k, 1.0,
            dy.as_ptr(), 1, n as isize,
            x.as_ptr(), k as isize, 1,
            1.0,
            out.as_mut_ptr(), k as isize, 1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += c * x`.
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// Adds each row of a `t x n` matrix into `acc`.
pub fn sum_rows(m: &[f64], n: usize, acc: &mut [f64]) {
    for row in m.chunks_exact(n) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
