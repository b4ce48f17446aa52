//! Row-major GEMM wrappers used by every layer.
//!
//! Weight matrices are stored `out × in`, activations `rows × width`.

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices whose lengths cover the strided extents
    // (checked by the debug assertions in the public wrappers below).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[rows×n] (+)= x[rows×k] · w[n×k]ᵀ`
pub fn x_wt(x: &[f64], rows: usize, k: usize, w: &[f64], n: usize, out: &mut [f64], accumulate: bool) {
    assert!(x.len() >= rows * k && w.len() >= n * k && out.len() >= rows * n);
    gemm(rows, k, n, (x, k as isize, 1), (w, 1, k as isize), out, accumulate);
}

/// `dx[rows×k] (+)= dy[rows×n] · w[n×k]`
pub fn dy_w(dy: &[f64], rows: usize, n: usize, w: &[f64], k: usize, dx: &mut [f64], accumulate: bool) {
    assert!(dy.len() >= rows * n && w.len() >= n * k && dx.len() >= rows * k);
    gemm(rows, n, k, (dy, n as isize, 1), (w, k as isize, 1), dx, accumulate);
}

/// `dw[n×k] += dy[rows×n]ᵀ · x[rows×k]`
pub fn dyt_x(dy: &[f64], rows: usize, n: usize, x: &[f64], k: usize, dw: &mut [f64]) {
    assert!(dy.len() >= rows * n && x.len() >= rows * k && dw.len() >= n * k);
    gemm(n, rows, k, (dy, 1, n as isize), (x, k as isize, 1), dw, true);
}

/// `db[n] += Σ_rows dy[rows×n]`
pub fn col_sums(dy: &[f64], rows: usize, n: usize, db: &mut [f64]) {
    for r in 0..rows {
        for (acc, v) in db.iter_mut().zip(&dy[r * n..(r + 1) * n]) {
            *acc += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_naive_loops() {
        let (rows, k, n) = (3, 4, 2);
        let x: Vec<f64> = (0..rows * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let mut out = vec![0.0; rows * n];
        x_wt(&x, rows, k, &w, n, &mut out, false);
        for r in 0..rows {
            for j in 0..n {
                let want: f64 = (0..k).map(|c| x[r * k + c] * w[j * k + c]).sum();
                assert!((out[r * n + j] - want).abs() < 1e-12);
            }
        }
        let mut dx = vec![0.0; rows * k];
        dy_w(&out, rows, n, &w, k, &mut dx, false);
        for r in 0..rows {
            for c in 0..k {
                let want: f64 = (0..n).map(|j| out[r * n + j] * w[j * k + c]).sum();
                assert!((dx[r * k + c] - want).abs() < 1e-12);
            }
        }
        let mut dw = vec![0.0; n * k];
        dyt_x(&out, rows, n, &x, k, &mut dw);
        for j in 0..n {
            for c in 0..k {
                let want: f64 = (0..rows).map(|r| out[r * n + j] * x[r * k + c]).sum();
                assert!((dw[j * k + c] - want).abs() < 1e-12);
            }
        }
    }
}
