//! Row-major matrix kernels backing the convolution ops.
//!
//! The inner loops run over contiguous slices so LLVM can vectorize them;
//! accumulation order is fixed, keeping results bit-reproducible.

/// C[m,n] += A[m,k] · B[k,n]
pub(crate) fn gemm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// C[m,n] += Aᵀ · B where A is [k,m], B is [k,n]
pub(crate) fn gemm_at_b_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

/// C[m,n] += A · Bᵀ where A is [m,k], B is [n,k]
pub(crate) fn gemm_a_bt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// Unfolds one image [C,H,W] into columns [C·kh·kw, oh·ow] for a stride-1
/// cross-correlation with top/left padding `pad`.
pub(crate) fn im2col(
    img: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    col.fill(0.0);
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((ch * kh + ki) * kw + kj) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    // valid ox range: 0 <= ox + kj - pad < w
                    let x_lo = pad.saturating_sub(kj);
                    let x_hi = (w + pad - kj).min(ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src = &plane[iy * w + x_lo + kj - pad..][..x_hi - x_lo];
                    row[oy * ow + x_lo..oy * ow + x_hi].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into the image.
pub(crate) fn col2im_acc(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [f64],
) {
    debug_assert_eq!(img.len(), c * h * w);
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((ch * kh + ki) * kw + kj) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let x_lo = pad.saturating_sub(kj);
                    let x_hi = (w + pad - kj).min(ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let dst = &mut plane[iy * w + x_lo + kj - pad..][..x_hi - x_lo];
                    for (d, &s) in dst.iter_mut().zip(&row[oy * ow + x_lo..oy * ow + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}
