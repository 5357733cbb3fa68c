//! Dense kernels: GEMM, 3×3 im2col/col2im and 2×2 average pooling.

/// `C = op(A)·op(B) + beta·C` on row-major storage; `A` is `m×k` after `op`,
/// `B` is `k×n`, `C` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, n: usize, k: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Column matrix of a `c×h×w` image for a 3×3 kernel with zero padding 1.
/// Row `ci·9 + ky·3 + kx`, column `y·w + x`.
pub fn im2col3(input: &[f64], c: usize, h: usize, w: usize, cols: &mut Vec<f64>) {
    let hw = h * w;
    cols.clear();
    cols.resize(c * 9 * hw, 0.0);
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates columns back into a `c×h×w` image.
pub fn col2im3(cols: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// 2×2 average pooling with stride 2; a trailing odd row or column is dropped.
pub fn avg_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h2 * w2];
    for ci in 0..c {
        let plane = &input[ci * h * w..];
        for y in 0..h2 {
            let (r0, r1) = (&plane[2 * y * w..], &plane[(2 * y + 1) * w..]);
            let dst = &mut out[(ci * h2 + y) * w2..][..w2];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    out
}

/// Gradient of [`avg_pool2`] with respect to its input.
pub fn avg_pool2_backward(grad: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h2 {
            let src = &grad[(ci * h2 + y) * w2..][..w2];
            for dy in 0..2 {
                let dst = &mut out[(ci * h + 2 * y + dy) * w..][..w];
                for (x, &g) in src.iter().enumerate() {
                    dst[2 * x] = 0.25 * g;
                    dst[2 * x + 1] = 0.25 * g;
                }
            }
        }
    }
    out
}
