//! Differentiable operations: convolutions, pooling, activations and the
//! small elementwise/reduction set the losses are composed from.
//!
//! Backward rules are hand-derived per op and checked against central
//! finite differences by the gradient-check suite.

use rayon::prelude::*;

use super::linalg::{col2im_acc, im2col};
use super::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor, TensorError};

/// Zero-padding mode for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial extent; requires odd kernels.
    Same,
    /// No padding; output shrinks by `k - 1` per axis.
    Valid,
}

fn rank4(t: &Tensor, op: &'static str) -> Result<[usize; 4], TensorError> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(TensorError::RankMismatch {
            op,
            expected: 4,
            shape: s,
        });
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Direct same-padding cross-correlation of one image, accumulating into
/// `out` (which must be pre-filled with the bias). Inner loops run over
/// contiguous row segments.
#[allow(clippy::too_many_arguments)]
fn conv_same_image(
    x: &[f64],
    k: &[f64],
    out: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) {
    for oc in 0..cout {
        let out_plane = &mut out[oc * h * w..(oc + 1) * h * w];
        for ic in 0..cin {
            let in_plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let weight = k[((oc * cin + ic) * kh + ky) * kw + kx];
                    if weight == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y_lo = (-dy).max(0) as usize;
                    let y_hi = ((h as isize - dy).min(h as isize)) as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize + dy) as usize;
                        let src = &in_plane[iy * w + ((x_lo as isize + dx) as usize)..][..x_hi - x_lo];
                        let dst = &mut out_plane[oy * w + x_lo..oy * w + x_hi];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += weight * s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_same_image`] with respect to the input.
#[allow(clippy::too_many_arguments)]
fn conv_same_image_dinput(
    g: &[f64],
    k: &[f64],
    dx_out: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) {
    for oc in 0..cout {
        let g_plane = &g[oc * h * w..(oc + 1) * h * w];
        for ic in 0..cin {
            let dx_plane = &mut dx_out[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let weight = k[((oc * cin + ic) * kh + ky) * kw + kx];
                    if weight == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y_lo = (-dy).max(0) as usize;
                    let y_hi = ((h as isize - dy).min(h as isize)) as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize + dy) as usize;
                        let dst =
                            &mut dx_plane[iy * w + ((x_lo as isize + dx) as usize)..][..x_hi - x_lo];
                        let src = &g_plane[oy * w + x_lo..oy * w + x_hi];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += weight * s;
                        }
                    }
                }
            }
        }
    }
}

/// Kernel gradient of [`conv_same_image`] for one image.
#[allow(clippy::too_many_arguments)]
fn conv_same_image_dkernel(
    x: &[f64],
    g: &[f64],
    dk: &mut [f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) {
    for oc in 0..cout {
        let g_plane = &g[oc * h * w..(oc + 1) * h * w];
        for ic in 0..cin {
            let in_plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y_lo = (-dy).max(0) as usize;
                    let y_hi = ((h as isize - dy).min(h as isize)) as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize + dy) as usize;
                        let src = &in_plane[iy * w + ((x_lo as isize + dx) as usize)..][..x_hi - x_lo];
                        let grd = &g_plane[oy * w + x_lo..oy * w + x_hi];
                        for (&s, &gv) in src.iter().zip(grd) {
                            acc += s * gv;
                        }
                    }
                    dk[((oc * cin + ic) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
}

/// Stride-1 cross-correlation with per-output-channel bias.
///
/// `input` is `[N,Cin,H,W]`, `kernel` `[Cout,Cin,kh,kw]`, `bias` `[Cout]`.
/// Differentiable with respect to all three.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<Tensor, TensorError> {
    let [n, cin, h, w] = rank4(input, "conv2d")?;
    let [cout, kcin, kh, kw] = rank4(kernel, "conv2d")?;
    if n * cin * h * w == 0 || cout * kcin * kh * kw == 0 {
        return Err(TensorError::EmptyExtent {
            op: "conv2d",
            shape: input.shape(),
        });
    }
    if kcin != cin {
        return Err(TensorError::AxisMismatch {
            op: "conv2d",
            axis: "input channel",
            expected: cin,
            got: kcin,
        });
    }
    if bias.len() != cout {
        return Err(TensorError::AxisMismatch {
            op: "conv2d",
            axis: "bias channel",
            expected: cout,
            got: bias.len(),
        });
    }
    let (pad, oh, ow) = match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(TensorError::EvenKernel {
                    op: "conv2d",
                    kh,
                    kw,
                });
            }
            (kh / 2, h, w)
        }
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(TensorError::AxisMismatch {
                    op: "conv2d",
                    axis: "spatial",
                    expected: kh.max(kw),
                    got: h.min(w),
                });
            }
            (0, h - kh + 1, w - kw + 1)
        }
    };

    let ckk = cin * kh * kw;
    let img_len = cin * h * w;
    let out_img_len = cout * oh * ow;
    let same = padding == Padding::Same;

    let out_values: Vec<f64> = input.with_values(|x| {
        kernel.with_values(|k| {
            bias.with_values(|b| {
                let mut out = vec![0.0; n * out_img_len];
                out.par_chunks_exact_mut(out_img_len)
                    .enumerate()
                    .for_each(|(img, out_img)| {
                        for (oc, chunk) in out_img.chunks_exact_mut(oh * ow).enumerate() {
                            chunk.fill(b[oc]);
                        }
                        let x_img = &x[img * img_len..(img + 1) * img_len];
                        if same {
                            conv_same_image(x_img, k, out_img, cin, cout, h, w, kh, kw, pad);
                        } else {
                            let mut col = vec![0.0; ckk * oh * ow];
                            im2col(x_img, cin, h, w, kh, kw, pad, oh, ow, &mut col);
                            gemm_acc(out_img, k, &col, cout, ckk, oh * ow);
                        }
                    });
                out
            })
        })
    });

    let (xi, ki, bi) = (input.clone(), kernel.clone(), bias.clone());
    let (need_x, need_k, need_b) = (
        xi.requires_grad_flag(),
        ki.requires_grad_flag(),
        bi.requires_grad_flag(),
    );
    let backward = move |g: &[f64]| {
        // dinput in place per image; per-image dkernel reduced in image
        // order for determinism
        let mut dx_all = if need_x { vec![0.0; n * img_len] } else { Vec::new() };
        let dk_parts: Vec<Vec<f64>> = xi.with_values(|x| {
            ki.with_values(|k| {
                let mut dx_slots: Vec<&mut [f64]> = if need_x {
                    dx_all.chunks_exact_mut(img_len).collect()
                } else {
                    Vec::new()
                };
                let work = |img: usize, dx_slot: Option<&mut &mut [f64]>| -> Vec<f64> {
                    let g_img = &g[img * out_img_len..(img + 1) * out_img_len];
                    let x_img = &x[img * img_len..(img + 1) * img_len];
                    let mut dk = vec![0.0; if need_k { cout * ckk } else { 0 }];
                    if same {
                        if need_k {
                            conv_same_image_dkernel(x_img, g_img, &mut dk, cin, cout, h, w, kh, kw, pad);
                        }
                        if let Some(dx) = dx_slot {
                            conv_same_image_dinput(g_img, k, dx, cin, cout, h, w, kh, kw, pad);
                        }
                    } else {
                        let mut col = vec![0.0; ckk * oh * ow];
                        im2col(x_img, cin, h, w, kh, kw, pad, oh, ow, &mut col);
                        if need_k {
                            gemm_a_bt_acc(&mut dk, g_img, &col, cout, oh * ow, ckk);
                        }
                        if let Some(dx) = dx_slot {
                            let mut dcol = vec![0.0; ckk * oh * ow];
                            gemm_at_b_acc(&mut dcol, k, g_img, ckk, cout, oh * ow);
                            col2im_acc(&dcol, cin, h, w, kh, kw, pad, oh, ow, dx);
                        }
                    }
                    dk
                };
                if need_x {
                    dx_slots
                        .par_iter_mut()
                        .enumerate()
                        .map(|(img, dx)| work(img, Some(dx)))
                        .collect()
                } else {
                    (0..n).into_par_iter().map(|img| work(img, None)).collect()
                }
            })
        });
        if need_x {
            xi.accumulate_grad_owned(dx_all);
        }
        if need_k {
            let mut dk_total = vec![0.0; cout * ckk];
            for dk in &dk_parts {
                for (a, &b) in dk_total.iter_mut().zip(dk) {
                    *a += b;
                }
            }
            ki.accumulate_grad_owned(dk_total);
        }
        if need_b {
            let mut db = vec![0.0; cout];
            for img in 0..n {
                let g_img = &g[img * out_img_len..(img + 1) * out_img_len];
                for (oc, db_c) in db.iter_mut().enumerate() {
                    *db_c += g_img[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
                }
            }
            bi.accumulate_grad_owned(db);
        }
    };

    Ok(Tensor::from_op(
        vec![n, cout, oh, ow],
        out_values,
        vec![input.clone(), kernel.clone(), bias.clone()],
        Box::new(backward),
    ))
}

/// Stride-2 transposed convolution, the exact adjoint of a stride-2 valid
/// cross-correlation. `input` is `[N,C,H,W]`, `kernel` `[C,Cout,2,2]`;
/// output is `[N,Cout,2H,2W]`.
pub fn transposed_conv2d(input: &Tensor, kernel: &Tensor) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = rank4(input, "transposed_conv2d")?;
    let [kc, cout, kh, kw] = rank4(kernel, "transposed_conv2d")?;
    if n * c * h * w == 0 || cout == 0 {
        return Err(TensorError::EmptyExtent {
            op: "transposed_conv2d",
            shape: input.shape(),
        });
    }
    if kc != c {
        return Err(TensorError::AxisMismatch {
            op: "transposed_conv2d",
            axis: "input channel",
            expected: c,
            got: kc,
        });
    }
    if kh != 2 || kw != 2 {
        return Err(TensorError::AxisMismatch {
            op: "transposed_conv2d",
            axis: "kernel",
            expected: 2,
            got: kh.max(kw),
        });
    }
    let (oh, ow) = (2 * h, 2 * w);
    let img_len = c * h * w;
    let out_img_len = cout * oh * ow;

    let out_values: Vec<f64> = input.with_values(|x| {
        kernel.with_values(|k| {
            let per_image: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|img| {
                    let x_img = &x[img * img_len..(img + 1) * img_len];
                    let mut out = vec![0.0; out_img_len];
                    for ic in 0..c {
                        let plane = &x_img[ic * h * w..(ic + 1) * h * w];
                        for oc in 0..cout {
                            let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
                            for di in 0..2 {
                                for dj in 0..2 {
                                    let kv = k[((ic * cout + oc) * 2 + di) * 2 + dj];
                                    if kv == 0.0 {
                                        continue;
                                    }
                                    for i in 0..h {
                                        let dst_row = (2 * i + di) * ow;
                                        let src_row = i * w;
                                        for j in 0..w {
                                            out_plane[dst_row + 2 * j + dj] +=
                                                kv * plane[src_row + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    out
                })
                .collect();
            per_image.concat()
        })
    });

    let (xi, ki) = (input.clone(), kernel.clone());
    let (need_x, need_k) = (xi.requires_grad_flag(), ki.requires_grad_flag());
    let backward = move |g: &[f64]| {
        let parts: Vec<(Vec<f64>, Vec<f64>)> = xi.with_values(|x| {
            ki.with_values(|k| {
                (0..n)
                    .into_par_iter()
                    .map(|img| {
                        let x_img = &x[img * img_len..(img + 1) * img_len];
                        let g_img = &g[img * out_img_len..(img + 1) * out_img_len];
                        let mut dx = vec![0.0; img_len];
                        let mut dk = vec![0.0; c * cout * 4];
                        for ic in 0..c {
                            let x_plane = &x_img[ic * h * w..(ic + 1) * h * w];
                            let dx_plane = &mut dx[ic * h * w..(ic + 1) * h * w];
                            for oc in 0..cout {
                                let g_plane = &g_img[oc * oh * ow..(oc + 1) * oh * ow];
                                for di in 0..2 {
                                    for dj in 0..2 {
                                        let kidx = ((ic * cout + oc) * 2 + di) * 2 + dj;
                                        let kv = k[kidx];
                                        let mut dk_acc = 0.0;
                                        for i in 0..h {
                                            let g_row = (2 * i + di) * ow;
                                            let x_row = i * w;
                                            for j in 0..w {
                                                let gv = g_plane[g_row + 2 * j + dj];
                                                if need_x {
                                                    dx_plane[x_row + j] += kv * gv;
                                                }
                                                dk_acc += x_plane[x_row + j] * gv;
                                            }
                                        }
                                        dk[kidx] += dk_acc;
                                    }
                                }
                            }
                        }
                        (dx, dk)
                    })
                    .collect()
            })
        });
        if need_x {
            let mut dx_all = vec![0.0; n * img_len];
            for (img, (dx, _)) in parts.iter().enumerate() {
                dx_all[img * img_len..(img + 1) * img_len].copy_from_slice(dx);
            }
            xi.accumulate_grad_owned(dx_all);
        }
        if need_k {
            let mut dk_total = vec![0.0; c * cout * 4];
            for (_, dk) in &parts {
                for (a, &b) in dk_total.iter_mut().zip(dk) {
                    *a += b;
                }
            }
            ki.accumulate_grad_owned(dk_total);
        }
    };

    Ok(Tensor::from_op(
        vec![n, cout, oh, ow],
        out_values,
        vec![input.clone(), kernel.clone()],
        Box::new(backward),
    ))
}

/// 2×2 max pooling with stride 2. Gradient routes to the first maximal
/// element of each window in row-major order.
pub fn maxpool2d(input: &Tensor) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = rank4(input, "maxpool2d")?;
    if h % 2 != 0 {
        return Err(TensorError::OddExtent {
            op: "maxpool2d",
            axis: "height",
            got: h,
        });
    }
    if w % 2 != 0 {
        return Err(TensorError::OddExtent {
            op: "maxpool2d",
            axis: "width",
            got: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut argmax: Vec<u32> = vec![0; n * c * oh * ow];
    let out_values: Vec<f64> = input.with_values(|x| {
        let mut out = vec![0.0; n * c * oh * ow];
        for plane_idx in 0..n * c {
            let plane = &x[plane_idx * h * w..(plane_idx + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * w + 2 * ox;
                    // Row-major window scan; strict > keeps the first max.
                    let mut best = plane[base];
                    let mut best_at = base;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + di * w + dj;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_at = idx;
                        }
                    }
                    let o = oy * ow + ox;
                    out[plane_idx * oh * ow + o] = best;
                    argmax[plane_idx * oh * ow + o] = (plane_idx * h * w + best_at) as u32;
                }
            }
        }
        out
    });

    let xi = input.clone();
    let in_len = n * c * h * w;
    let backward = move |g: &[f64]| {
        let mut dx = vec![0.0; in_len];
        for (o, &src) in argmax.iter().enumerate() {
            dx[src as usize] += g[o];
        }
        xi.accumulate_grad_owned(dx);
    };

    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out_values,
        vec![input.clone()],
        Box::new(backward),
    ))
}

/// Elementwise max(0, x); gradient is 0 at x <= 0.
pub fn relu(input: &Tensor) -> Tensor {
    let out_values: Vec<f64> =
        input.with_values(|x| x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect());
    let xi = input.clone();
    let backward = move |g: &[f64]| {
        let dx: Vec<f64> = xi.with_values(|x| {
            x.iter()
                .zip(g)
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect()
        });
        xi.accumulate_grad_owned(dx);
    };
    Tensor::from_op(
        input.shape(),
        out_values,
        vec![input.clone()],
        Box::new(backward),
    )
}

/// Per-pixel softmax over the channel axis of `[N,C,H,W]`, with
/// max-subtraction for stability.
pub fn softmax_channels(input: &Tensor) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = rank4(input, "softmax_channels")?;
    let hw = h * w;
    let out_values: Vec<f64> = input.with_values(|x| {
        let mut out = vec![0.0; x.len()];
        for img in 0..n {
            let base = img * c * hw;
            for p in 0..hw {
                let mut m = f64::NEG_INFINITY;
                for ch in 0..c {
                    m = m.max(x[base + ch * hw + p]);
                }
                let mut z = 0.0;
                for ch in 0..c {
                    let e = (x[base + ch * hw + p] - m).exp();
                    out[base + ch * hw + p] = e;
                    z += e;
                }
                for ch in 0..c {
                    out[base + ch * hw + p] /= z;
                }
            }
        }
        out
    });

    let xi = input.clone();
    let saved = out_values.clone();
    let backward = move |g: &[f64]| {
        let mut dx = vec![0.0; saved.len()];
        for img in 0..n {
            let base = img * c * hw;
            for p in 0..hw {
                let mut dot = 0.0;
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    dot += g[i] * saved[i];
                }
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    dx[i] = saved[i] * (g[i] - dot);
                }
            }
        }
        xi.accumulate_grad_owned(dx);
    };

    Ok(Tensor::from_op(
        vec![n, c, h, w],
        out_values,
        vec![input.clone()],
        Box::new(backward),
    ))
}

/// Spatial maximum per channel: `[N,C,H,W] -> [N,C]`. Gradient routes to
/// the first maximal element in row-major order.
pub fn global_max_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = rank4(input, "global_max_pool")?;
    let hw = h * w;
    let mut argmax: Vec<u32> = vec![0; n * c];
    let out_values: Vec<f64> = input.with_values(|x| {
        let mut out = vec![0.0; n * c];
        for plane_idx in 0..n * c {
            let plane = &x[plane_idx * hw..(plane_idx + 1) * hw];
            let mut best = plane[0];
            let mut best_at = 0;
            for (i, &v) in plane.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_at = i;
                }
            }
            out[plane_idx] = best;
            argmax[plane_idx] = (plane_idx * hw + best_at) as u32;
        }
        out
    });

    let xi = input.clone();
    let in_len = n * c * hw;
    let backward = move |g: &[f64]| {
        let mut dx = vec![0.0; in_len];
        for (o, &src) in argmax.iter().enumerate() {
            dx[src as usize] += g[o];
        }
        xi.accumulate_grad_owned(dx);
    };

    Ok(Tensor::from_op(
        vec![n, c],
        out_values,
        vec![input.clone()],
        Box::new(backward),
    ))
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::AxisMismatch {
            op: "add",
            axis: "element",
            expected: a.len(),
            got: b.len(),
        });
    }
    let out = a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x + y).collect()));
    let (ai, bi) = (a.clone(), b.clone());
    let backward = move |g: &[f64]| {
        if ai.requires_grad_flag() {
            ai.accumulate_grad(g);
        }
        if bi.requires_grad_flag() {
            bi.accumulate_grad(g);
        }
    };
    Ok(Tensor::from_op(
        a.shape(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(backward),
    ))
}

/// Elementwise product of two same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::AxisMismatch {
            op: "mul",
            axis: "element",
            expected: a.len(),
            got: b.len(),
        });
    }
    let out = a.with_values(|av| b.with_values(|bv| av.iter().zip(bv).map(|(x, y)| x * y).collect()));
    let (ai, bi) = (a.clone(), b.clone());
    let backward = move |g: &[f64]| {
        if ai.requires_grad_flag() {
            let da: Vec<f64> = bi.with_values(|bv| bv.iter().zip(g).map(|(y, gv)| y * gv).collect());
            ai.accumulate_grad_owned(da);
        }
        if bi.requires_grad_flag() {
            let db: Vec<f64> = ai.with_values(|av| av.iter().zip(g).map(|(x, gv)| x * gv).collect());
            bi.accumulate_grad_owned(db);
        }
    };
    Ok(Tensor::from_op(
        a.shape(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(backward),
    ))
}

pub fn mul_scalar(a: &Tensor, s: f64) -> Tensor {
    let out = a.with_values(|av| av.iter().map(|x| x * s).collect());
    let ai = a.clone();
    let backward = move |g: &[f64]| {
        let da: Vec<f64> = g.iter().map(|gv| gv * s).collect();
        ai.accumulate_grad_owned(da);
    };
    Tensor::from_op(a.shape(), out, vec![a.clone()], Box::new(backward))
}

/// Sum of all elements, as a scalar tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    let total = a.with_values(|av| av.iter().sum());
    let ai = a.clone();
    let len = a.len();
    let backward = move |g: &[f64]| {
        ai.accumulate_grad_owned(vec![g[0]; len]);
    };
    Tensor::from_op(vec![1], vec![total], vec![a.clone()], Box::new(backward))
}

/// Concatenates `[N,C_i,H,W]` tensors along the channel axis.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor, TensorError> {
    assert!(!parts.is_empty(), "concat_channels on empty list");
    let [n, _, h, w] = rank4(&parts[0], "concat_channels")?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = rank4(p, "concat_channels")?;
        if pn != n || ph != h || pw != w {
            return Err(TensorError::AxisMismatch {
                op: "concat_channels",
                axis: "batch/spatial",
                expected: n * h * w,
                got: pn * ph * pw,
            });
        }
        channels.push(pc);
    }
    let c_total: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = vec![0.0; n * c_total * hw];
    for img in 0..n {
        let mut c_off = 0;
        for (p, &pc) in parts.iter().zip(&channels) {
            p.with_values(|v| {
                let src = &v[img * pc * hw..(img + 1) * pc * hw];
                out[(img * c_total + c_off) * hw..(img * c_total + c_off + pc) * hw]
                    .copy_from_slice(src);
            });
            c_off += pc;
        }
    }

    let handles: Vec<Tensor> = parts.to_vec();
    let chs = channels.clone();
    let backward = move |g: &[f64]| {
        let mut c_off = 0;
        for (p, &pc) in handles.iter().zip(&chs) {
            if p.requires_grad_flag() {
                let mut dp = vec![0.0; n * pc * hw];
                for img in 0..n {
                    let src = &g[(img * c_total + c_off) * hw..(img * c_total + c_off + pc) * hw];
                    dp[img * pc * hw..(img + 1) * pc * hw].copy_from_slice(src);
                }
                p.accumulate_grad_owned(dp);
            }
            c_off += pc;
        }
    };

    Ok(Tensor::from_op(
        vec![n, c_total, h, w],
        out,
        parts.to_vec(),
        Box::new(backward),
    ))
}

/// Stacks `[n_i, D]` matrices into `[sum(n_i), D]`.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, TensorError> {
    assert!(!parts.is_empty(), "concat_rows on empty list");
    let d = {
        let s = parts[0].shape();
        if s.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "concat_rows",
                expected: 2,
                shape: s,
            });
        }
        s[1]
    };
    let mut rows = Vec::with_capacity(parts.len());
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != 2 || s[1] != d {
            return Err(TensorError::AxisMismatch {
                op: "concat_rows",
                axis: "feature",
                expected: d,
                got: *s.last().unwrap_or(&0),
            });
        }
        rows.push(s[0]);
        total += s[0];
    }
    let mut out = Vec::with_capacity(total * d);
    for p in parts {
        p.with_values(|v| out.extend_from_slice(v));
    }

    let handles: Vec<Tensor> = parts.to_vec();
    let row_counts = rows.clone();
    let backward = move |g: &[f64]| {
        let mut off = 0;
        for (p, &r) in handles.iter().zip(&row_counts) {
            if p.requires_grad_flag() {
                p.accumulate_grad(&g[off * d..(off + r) * d]);
            }
            off += r;
        }
    };

    Ok(Tensor::from_op(
        vec![total, d],
        out,
        parts.to_vec(),
        Box::new(backward),
    ))
}

/// Selects a channel subset of a probability map `[N,C,H,W]` and
/// renormalizes so the selected channels sum to one per pixel.
pub fn select_channels_renorm(probs: &Tensor, indices: &[usize]) -> Result<Tensor, TensorError> {
    let [n, c, h, w] = rank4(probs, "select_channels_renorm")?;
    for &idx in indices {
        if idx >= c {
            return Err(TensorError::AxisMismatch {
                op: "select_channels_renorm",
                axis: "channel",
                expected: c,
                got: idx,
            });
        }
    }
    let cs = indices.len();
    let hw = h * w;
    let mut out = vec![0.0; n * cs * hw];
    let mut totals = vec![0.0; n * hw];
    probs.with_values(|x| {
        for img in 0..n {
            for p in 0..hw {
                let mut t = 0.0;
                for &idx in indices {
                    t += x[(img * c + idx) * hw + p];
                }
                totals[img * hw + p] = t;
                for (oc, &idx) in indices.iter().enumerate() {
                    out[(img * cs + oc) * hw + p] = x[(img * c + idx) * hw + p] / t;
                }
            }
        }
    });

    let xi = probs.clone();
    let idxs = indices.to_vec();
    let saved = out.clone();
    let backward = move |g: &[f64]| {
        let mut dx = vec![0.0; n * c * hw];
        for img in 0..n {
            for p in 0..hw {
                let t = totals[img * hw + p];
                let mut dot = 0.0;
                for oc in 0..cs {
                    let i = (img * cs + oc) * hw + p;
                    dot += g[i] * saved[i];
                }
                for (oc, &idx) in idxs.iter().enumerate() {
                    let i = (img * cs + oc) * hw + p;
                    dx[(img * c + idx) * hw + p] = (g[i] - dot) / t;
                }
            }
        }
        xi.accumulate_grad_owned(dx);
    };

    Ok(Tensor::from_op(
        vec![n, cs, h, w],
        out,
        vec![probs.clone()],
        Box::new(backward),
    ))
}
