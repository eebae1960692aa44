//! im2col convolution kernels shared by the conv2d op.
//!
//! Stride is always 1 and padding always preserves spatial size. The 1x1
//! case skips im2col entirely (the input already is the column matrix).
//! Batch images are processed in parallel; all cross-image reductions run
//! in a fixed order so results do not depend on thread scheduling.

use super::Elem;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, ArrayView2, Ix1, Ix4};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Out-of-range taps read zero.
    Zero,
    /// Out-of-range taps reflect around the border pixel (edge not repeated).
    Reflect,
}

/// Source index for tap offset `d` from position `i`, or None for a zero tap.
fn pad_index(i: usize, d: isize, len: usize, pad: PadMode) -> Option<usize> {
    let j = i as isize + d;
    if j >= 0 && (j as usize) < len {
        return Some(j as usize);
    }
    match pad {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let j = if j < 0 { -j } else { 2 * (len as isize - 1) - j };
            Some(j as usize)
        }
    }
}

/// Per-axis tap maps: `maps[tap][position] -> Option<source>`.
fn tap_maps(len: usize, k: usize, pad: PadMode) -> Vec<Vec<Option<usize>>> {
    let half = (k / 2) as isize;
    (0..k)
        .map(|t| (0..len).map(|i| pad_index(i, t as isize - half, len, pad)).collect())
        .collect()
}

/// The x-range whose source column `x + dx` stays in bounds, so the
/// per-row copy is one contiguous slice; columns outside it go through
/// the padding rule one by one.
fn interior(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx.max(0)) as usize;
    (lo, hi.max(lo))
}

fn im2col<E: Elem>(
    img: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: PadMode,
    map_y: &[Vec<Option<usize>>],
) -> Array2<E> {
    let half = (k / 2) as isize;
    let mut col = Array2::<E>::zeros((cin * k * k, h * w));
    let colw = col.as_slice_mut().unwrap();
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let dx = kx as isize - half;
                let (lo, hi) = interior(w, dx);
                let row_base = ((ci * k + ky) * k + kx) * (h * w);
                for y in 0..h {
                    let Some(sy) = map_y[ky][y] else { continue };
                    let src_base = (ci * h + sy) * w;
                    let dst_base = row_base + y * w;
                    if hi > lo {
                        let s = (src_base as isize + lo as isize + dx) as usize;
                        colw[dst_base + lo..dst_base + hi]
                            .copy_from_slice(&img[s..s + hi - lo]);
                    }
                    for x in (0..lo).chain(hi..w) {
                        if let Some(sx) = pad_index(x, dx, w, pad) {
                            colw[dst_base + x] = img[src_base + sx];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Elem>(
    colgrad: &Array2<E>,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: PadMode,
    map_y: &[Vec<Option<usize>>],
    out: &mut [E],
) {
    let half = (k / 2) as isize;
    let cg = colgrad.as_slice().unwrap();
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let dx = kx as isize - half;
                let (lo, hi) = interior(w, dx);
                let row_base = ((ci * k + ky) * k + kx) * (h * w);
                for y in 0..h {
                    let Some(sy) = map_y[ky][y] else { continue };
                    let src_base = row_base + y * w;
                    let dst_base = (ci * h + sy) * w;
                    if hi > lo {
                        let d0 = (dst_base as isize + lo as isize + dx) as usize;
                        let (dst, src) = (&mut out[d0..d0 + hi - lo], &cg[src_base + lo..src_base + hi]);
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += *v;
                        }
                    }
                    for x in (0..lo).chain(hi..w) {
                        if let Some(sx) = pad_index(x, dx, w, pad) {
                            out[dst_base + sx] += cg[src_base + x];
                        }
                    }
                }
            }
        }
    }
}

const DOT_LANES: usize = 8;

#[inline]
fn dot_tile<E: Elem, const IB: usize, const JB: usize>(
    ar: &[&[E]; IB],
    br: &[&[E]; JB],
    kk: usize,
    out: &mut [[E; JB]; IB],
) {
    let kw = kk - kk % DOT_LANES;
    let mut acc = [[[E::zero(); DOT_LANES]; JB]; IB];
    for kb in (0..kw).step_by(DOT_LANES) {
        let mut av = [[E::zero(); DOT_LANES]; IB];
        let mut bv = [[E::zero(); DOT_LANES]; JB];
        for (ii, row) in ar.iter().enumerate() {
            av[ii].copy_from_slice(&row[kb..kb + DOT_LANES]);
        }
        for (jj, row) in br.iter().enumerate() {
            bv[jj].copy_from_slice(&row[kb..kb + DOT_LANES]);
        }
        for ii in 0..IB {
            for jj in 0..JB {
                for l in 0..DOT_LANES {
                    acc[ii][jj][l] += av[ii][l] * bv[jj][l];
                }
            }
        }
    }
    for kx in kw..kk {
        for ii in 0..IB {
            for jj in 0..JB {
                acc[ii][jj][0] += ar[ii][kx] * br[jj][kx];
            }
        }
    }
    for ii in 0..IB {
        for jj in 0..JB {
            let mut s = E::zero();
            for l in 0..DOT_LANES {
                s += acc[ii][jj][l];
            }
            out[ii][jj] = s;
        }
    }
}

#[inline]
fn dot_block<E: Elem, const IB: usize, const JB: usize>(
    a: &[E],
    b: &[E],
    kk: usize,
    i0: usize,
    j0: usize,
    c: &mut Array2<E>,
) {
    let ar: [&[E]; IB] = std::array::from_fn(|ii| &a[(i0 + ii) * kk..(i0 + ii + 1) * kk]);
    let br: [&[E]; JB] = std::array::from_fn(|jj| &b[(j0 + jj) * kk..(j0 + jj + 1) * kk]);
    let mut out = [[E::zero(); JB]; IB];
    dot_tile(&ar, &br, kk, &mut out);
    for ii in 0..IB {
        for jj in 0..JB {
            c[(i0 + ii, j0 + jj)] += out[ii][jj];
        }
    }
}

/// `c[i, j] += dot(a row i, b row j)` for row-major `a` (m, k) and `b` (n, k).
///
/// This is the weight-gradient shape: a tiny output against a very long
/// shared axis. A packing GEMM spends as long repacking the operands as
/// multiplying them here, so registered-tiled dots over the contiguous k
/// axis win by about 4x. The j loop is outermost to keep each b tile
/// resident while the much smaller a streams past.
fn dot_gemm_acc<E: Elem>(a: &ArrayView2<E>, b: &ArrayView2<E>, c: &mut Array2<E>) {
    let (m, kk) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    debug_assert_eq!(kk, b.shape()[1]);
    debug_assert_eq!((m, n), (c.shape()[0], c.shape()[1]));
    let a = a.to_slice().expect("dot_gemm_acc: a not contiguous");
    let b = b.to_slice().expect("dot_gemm_acc: b not contiguous");
    let mut j0 = 0;
    while j0 < n {
        let jb = (n - j0).min(4);
        let mut i0 = 0;
        while i0 < m {
            let ib = (m - i0).min(2);
            match (ib, jb) {
                (2, 4) => dot_block::<E, 2, 4>(a, b, kk, i0, j0, c),
                (2, 3) => dot_block::<E, 2, 3>(a, b, kk, i0, j0, c),
                (2, 2) => dot_block::<E, 2, 2>(a, b, kk, i0, j0, c),
                (2, 1) => dot_block::<E, 2, 1>(a, b, kk, i0, j0, c),
                (1, 4) => dot_block::<E, 1, 4>(a, b, kk, i0, j0, c),
                (1, 3) => dot_block::<E, 1, 3>(a, b, kk, i0, j0, c),
                (1, 2) => dot_block::<E, 1, 2>(a, b, kk, i0, j0, c),
                _ => dot_block::<E, 1, 1>(a, b, kk, i0, j0, c),
            }
            i0 += ib;
        }
        j0 += jb;
    }
}

fn weight_matrix<E: Elem>(w: &ArrayD<E>) -> (ArrayView2<'_, E>, usize, usize, usize) {
    let (cout, cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let wm = w.view().into_shape_with_order((cout, cin * k * k)).unwrap();
    (wm, cout, cin, k)
}

pub(crate) fn conv2d_forward<E: Elem>(
    x: &ArrayD<E>,
    w: &ArrayD<E>,
    b: &ArrayD<E>,
    pad: PadMode,
) -> ArrayD<E> {
    let xv = x.view().into_dimensionality::<Ix4>().unwrap();
    let (wm, cout, cin, k) = weight_matrix(w);
    let bv = b.view().into_dimensionality::<Ix1>().unwrap();
    let (bsz, h, wd) = (xv.shape()[0], xv.shape()[2], xv.shape()[3]);
    let map_y = tap_maps(h, k, pad);
    let images: Vec<Array2<E>> = (0..bsz)
        .into_par_iter()
        .map(|n| {
            let img = xv.index_axis(ndarray::Axis(0), n);
            let mut out = Array2::<E>::zeros((cout, h * wd));
            if k == 1 {
                let col = img.into_shape_with_order((cin, h * wd)).unwrap();
                general_mat_mul(E::one(), &wm, &col, E::zero(), &mut out);
            } else {
                let col = im2col(img.to_slice().unwrap(), cin, h, wd, k, pad, &map_y);
                general_mat_mul(E::one(), &wm, &col.view(), E::zero(), &mut out);
            }
            for co in 0..cout {
                let bias = bv[co];
                out.row_mut(co).mapv_inplace(|v| v + bias);
            }
            out
        })
        .collect();
    let mut out = Array4::<E>::zeros((bsz, cout, h, wd));
    for (n, img) in images.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), n)
            .assign(&img.into_shape_with_order((cout, h, wd)).unwrap());
    }
    out.into_dyn()
}

pub(crate) fn conv2d_backward<E: Elem>(
    x: &ArrayD<E>,
    w: &ArrayD<E>,
    gout: &ArrayD<E>,
    pad: PadMode,
    need_dx: bool,
) -> (Option<ArrayD<E>>, ArrayD<E>, ArrayD<E>) {
    let xv = x.view().into_dimensionality::<Ix4>().unwrap();
    let gv = gout.view().into_dimensionality::<Ix4>().unwrap();
    let (wm, cout, cin, k) = weight_matrix(w);
    let (bsz, h, wd) = (xv.shape()[0], xv.shape()[2], xv.shape()[3]);
    let map_y = tap_maps(h, k, pad);

    let mut db = vec![0.0f64; cout];
    for n in 0..bsz {
        for co in 0..cout {
            let mut acc = 0.0;
            for y in 0..h {
                for xj in 0..wd {
                    acc += gv[(n, co, y, xj)].as_f64();
                }
            }
            db[co] += acc;
        }
    }
    let db = ndarray::Array1::from_iter(db.into_iter().map(E::from_f64)).into_dyn();

    let per_image: Vec<(Array2<E>, Option<Array2<E>>)> = (0..bsz)
        .into_par_iter()
        .map(|n| {
            let img = xv.index_axis(ndarray::Axis(0), n);
            let gimg = gv.index_axis(ndarray::Axis(0), n);
            let gm = gimg.into_shape_with_order((cout, h * wd)).unwrap();
            let mut dw_n = Array2::<E>::zeros((cout, cin * k * k));
            let colgrad = if k == 1 {
                let col = img.into_shape_with_order((cin, h * wd)).unwrap();
                dot_gemm_acc(&gm, &col, &mut dw_n);
                if need_dx {
                    let mut cg = Array2::<E>::zeros((cin, h * wd));
                    general_mat_mul(E::one(), &wm.t(), &gm, E::zero(), &mut cg);
                    Some(cg)
                } else {
                    None
                }
            } else {
                let col = im2col(img.to_slice().unwrap(), cin, h, wd, k, pad, &map_y);
                dot_gemm_acc(&gm, &col.view(), &mut dw_n);
                if need_dx {
                    let mut cg = Array2::<E>::zeros((cin * k * k, h * wd));
                    general_mat_mul(E::one(), &wm.t(), &gm, E::zero(), &mut cg);
                    Some(cg)
                } else {
                    None
                }
            };
            (dw_n, colgrad)
        })
        .collect();

    let mut dw = Array2::<E>::zeros((cout, cin * k * k));
    let mut dx = if need_dx { Some(Array4::<E>::zeros((bsz, cin, h, wd))) } else { None };
    for (n, (dw_n, colgrad)) in per_image.into_iter().enumerate() {
        dw += &dw_n;
        if let (Some(dx), Some(cg)) = (dx.as_mut(), colgrad) {
            let mut slot = dx.index_axis_mut(ndarray::Axis(0), n);
            if k == 1 {
                slot.assign(&cg.into_shape_with_order((cin, h, wd)).unwrap());
            } else {
                col2im_add(&cg, cin, h, wd, k, pad, &map_y, slot.as_slice_mut().unwrap());
            }
        }
    }
    let dw = dw.into_shape_with_order((cout, cin, k, k)).unwrap().into_dyn();
    (dx.map(|d| d.into_dyn()), dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as the oracle.
    fn conv_oracle(
        x: &ArrayD<f64>,
        w: &ArrayD<f64>,
        b: &ArrayD<f64>,
        pad: PadMode,
    ) -> ArrayD<f64> {
        let (bsz, cin, h, wd) =
            (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let half = (k / 2) as isize;
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[bsz, cout, h, wd]));
        for n in 0..bsz {
            for co in 0..cout {
                for y in 0..h {
                    for xj in 0..wd {
                        let mut acc = b[[co]];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = pad_index(y, ky as isize - half, h, pad);
                                    let sx = pad_index(xj, kx as isize - half, wd, pad);
                                    if let (Some(sy), Some(sx)) = (sy, sx) {
                                        acc += x[[n, ci, sy, sx]] * w[[co, ci, ky, kx]];
                                    }
                                }
                            }
                        }
                        out[[n, co, y, xj]] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pad in [PadMode::Zero, PadMode::Reflect] {
            for k in [1usize, 3] {
                let x = random(&[2, 3, 5, 6], &mut rng);
                let w = random(&[4, 3, k, k], &mut rng);
                let b = random(&[4], &mut rng);
                let got = conv2d_forward(&x, &w, &b, pad);
                let want = conv_oracle(&x, &w, &b, pad);
                for (g, t) in got.iter().zip(want.iter()) {
                    assert!((g - t).abs() < 1e-10, "pad {pad:?} k {k}: {g} vs {t}");
                }
            }
        }
    }

    #[test]
    fn reflect_padding_keeps_constant_input_constant() {
        let x = ArrayD::from_elem(IxDyn(&[1, 2, 4, 4]), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = ArrayD::zeros(IxDyn(&[3]));
        let out = conv2d_forward(&x, &w, &b, PadMode::Reflect);
        for co in 0..3 {
            let first = out[[0, co, 0, 0]];
            for v in out.index_axis(ndarray::Axis(0), 0).index_axis(ndarray::Axis(0), co) {
                assert!((v - first).abs() < 1e-12);
            }
        }
    }
}
