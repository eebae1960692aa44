//! Forward construction and backward rules for every tape op.

use super::conv::{self, PadMode};
use super::{AutodiffError, Elem, Graph, Op, Var};
use ndarray::{ArrayD, Axis, Ix1, Ix2, Ix4, IxDyn};

pub(crate) const NORM_EPS: f64 = 1e-12;
pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape<E: Elem>(
    op: &'static str,
    g: &Graph<E>,
    a: Var,
    b: Var,
) -> Result<(), AutodiffError> {
    if g.shape(a) != g.shape(b) {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    Ok(())
}

impl<E: Elem> Graph<E> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("add", self, a, b)?;
        let data = &self.datas[a.0] + &self.datas[b.0];
        Ok(self.push(data, Op::Add(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("sub", self, a, b)?;
        let data = &self.datas[a.0] - &self.datas[b.0];
        Ok(self.push(data, Op::Sub(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("mul", self, a, b)?;
        let data = &self.datas[a.0] * &self.datas[b.0];
        Ok(self.push(data, Op::Mul(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("div", self, a, b)?;
        let data = &self.datas[a.0] / &self.datas[b.0];
        Ok(self.push(data, Op::Div(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = E::from_f64(c);
        let data = self.datas[x.0].mapv(|v| v + c);
        let needs = self.needs(x);
        self.push(data, Op::AddScalar(x), needs)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = E::from_f64(c);
        let data = self.datas[x.0].mapv(|v| v * c);
        let needs = self.needs(x);
        self.push(data, Op::MulScalar(x, c), needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let a2 = self.datas[a.0].view().into_dimensionality::<Ix2>().unwrap();
        let b2 = self.datas[b.0].view().into_dimensionality::<Ix2>().unwrap();
        let data = a2.dot(&b2).into_dyn();
        Ok(self.push(data, Op::MatMul(a, b), self.needs(a) || self.needs(b)))
    }

    /// 2D convolution, stride 1, size-preserving padding, odd square kernel.
    /// `x`: (B, Cin, H, W); `w`: (Cout, Cin, K, K); `b`: (Cout).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: PadMode) -> Result<Var, AutodiffError> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(AutodiffError::BadShape {
                op: "conv2d",
                expected: "x (B,Cin,H,W), w (Cout,Cin,K,K) with K odd".into(),
                got: if sx.len() != 4 { sx } else { sw },
            });
        }
        if sw[1] != sx[1] || sb.len() != 1 || sb[0] != sw[0] {
            return Err(AutodiffError::ShapeMismatch { op: "conv2d", lhs: sx, rhs: sw });
        }
        let half = sw[2] / 2;
        if pad == PadMode::Reflect && (sx[2] <= half || sx[3] <= half) {
            return Err(AutodiffError::BadShape {
                op: "conv2d",
                expected: "spatial dims larger than kernel half-width for reflect padding".into(),
                got: sx,
            });
        }
        let data = conv::conv2d_forward(&self.datas[x.0], &self.datas[w.0], &self.datas[b.0], pad);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(data, Op::Conv2d { x, w, b, pad }, needs))
    }

    /// 2x2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(AutodiffError::BadShape {
                op: "avg_pool2",
                expected: "(B,C,H,W) with H, W even".into(),
                got: s,
            });
        }
        let xin = self.datas[x.0].view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = (s[0], s[1], s[2] / 2, s[3] / 2);
        let mut out = ndarray::Array4::<E>::zeros((b, c, h, w));
        let quarter = E::from_f64(0.25);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for xj in 0..w {
                        let s00 = xin[(bi, ci, 2 * y, 2 * xj)];
                        let s01 = xin[(bi, ci, 2 * y, 2 * xj + 1)];
                        let s10 = xin[(bi, ci, 2 * y + 1, 2 * xj)];
                        let s11 = xin[(bi, ci, 2 * y + 1, 2 * xj + 1)];
                        out[(bi, ci, y, xj)] = (s00 + s01 + s10 + s11) * quarter;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out.into_dyn(), Op::AvgPool2(x), needs))
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(AutodiffError::BadShape {
                op: "upsample_bilinear",
                expected: "(B,C,H,W) and factor >= 1".into(),
                got: s,
            });
        }
        let xin = self.datas[x.0].view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ty = bilerp_table(h, factor);
        let tx = bilerp_table(w, factor);
        let mut out = ndarray::Array4::<E>::zeros((b, c, h * factor, w * factor));
        for bi in 0..b {
            for ci in 0..c {
                for (yd, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (xd, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let v00 = xin[(bi, ci, y0, x0)].as_f64();
                        let v01 = xin[(bi, ci, y0, x1)].as_f64();
                        let v10 = xin[(bi, ci, y1, x0)].as_f64();
                        let v11 = xin[(bi, ci, y1, x1)].as_f64();
                        let top = v00 * (1.0 - wx) + v01 * wx;
                        let bot = v10 * (1.0 - wx) + v11 * wx;
                        out[(bi, ci, yd, xd)] = E::from_f64(top * (1.0 - wy) + bot * wy);
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out.into_dyn(), Op::UpsampleBilinear { x, factor }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let z = E::zero();
        let data = self.datas[x.0].mapv(|v| if v > z { v } else { z });
        let needs = self.needs(x);
        self.push(data, Op::Relu(x), needs)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data = self.datas[x.0].mapv(|v| {
            let xf = v.as_f64();
            E::from_f64(xf * sigmoid(xf))
        });
        let needs = self.needs(x);
        self.push(data, Op::Silu(x), needs)
    }

    /// Temperature sigmoid sigma(x / tau), computed overflow-safe.
    pub fn sigmoid_tau(&mut self, x: Var, tau: f64) -> Var {
        let data = self.datas[x.0].mapv(|v| E::from_f64(sigmoid(v.as_f64() / tau)));
        let needs = self.needs(x);
        self.push(data, Op::SigmoidTau { x, tau }, needs)
    }

    /// Group normalization over (B, C, H, W) with per-channel affine.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
    ) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || groups == 0 || s[1] % groups != 0 {
            return Err(AutodiffError::BadShape {
                op: "group_norm",
                expected: format!("(B,C,H,W) with C divisible by {groups} groups"),
                got: s,
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        for affine in [gamma, beta] {
            let sa = self.shape(affine).to_vec();
            if sa != [c] {
                return Err(AutodiffError::ShapeMismatch { op: "group_norm", lhs: s, rhs: sa });
            }
        }
        let xin = self.datas[x.0].view().into_dimensionality::<Ix4>().unwrap();
        let ga = self.datas[gamma.0].view().into_dimensionality::<Ix1>().unwrap();
        let be = self.datas[beta.0].view().into_dimensionality::<Ix1>().unwrap();
        let cg = c / groups;
        let m = (cg * h * w) as f64;
        let mut mean = ndarray::Array2::<f64>::zeros((b, groups));
        let mut inv_std = ndarray::Array2::<f64>::zeros((b, groups));
        let mut out = ndarray::Array4::<E>::zeros((b, c, h, w));
        for bi in 0..b {
            for gi in 0..groups {
                let mut acc = 0.0;
                let mut acc2 = 0.0;
                for ci in gi * cg..(gi + 1) * cg {
                    for y in 0..h {
                        for xj in 0..w {
                            let v = xin[(bi, ci, y, xj)].as_f64();
                            acc += v;
                            acc2 += v * v;
                        }
                    }
                }
                let mu = acc / m;
                let var = (acc2 / m - mu * mu).max(0.0);
                let inv = 1.0 / (var + GROUP_NORM_EPS).sqrt();
                mean[(bi, gi)] = mu;
                inv_std[(bi, gi)] = inv;
                for ci in gi * cg..(gi + 1) * cg {
                    let (gc, bc) = (ga[ci].as_f64(), be[ci].as_f64());
                    for y in 0..h {
                        for xj in 0..w {
                            let v = xin[(bi, ci, y, xj)].as_f64();
                            out[(bi, ci, y, xj)] = E::from_f64((v - mu) * inv * gc + bc);
                        }
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out.into_dyn(),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean: mean.into_dyn(),
                inv_std: inv_std.into_dyn(),
            },
            needs,
        ))
    }

    /// Per-pixel softmax attention across the frame axis. Inputs are
    /// (B*frames, C, H, W); attention mixes the same pixel across frames.
    pub fn temporal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        frames: usize,
    ) -> Result<Var, AutodiffError> {
        same_shape("temporal_attention", self, q, k)?;
        same_shape("temporal_attention", self, k, v)?;
        let s = self.shape(q).to_vec();
        if s.len() != 4 || frames == 0 || s[0] % frames != 0 {
            return Err(AutodiffError::BadShape {
                op: "temporal_attention",
                expected: format!("(B*frames, C, H, W) with batch divisible by frames={frames}"),
                got: s,
            });
        }
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let b = bn / frames;
        let hw = h * w;
        let scale = 1.0 / (c as f64).sqrt();
        let qv = self.datas[q.0].view().into_dimensionality::<Ix4>().unwrap();
        let kv = self.datas[k.0].view().into_dimensionality::<Ix4>().unwrap();
        let vv = self.datas[v.0].view().into_dimensionality::<Ix4>().unwrap();
        let mut out = ndarray::Array4::<E>::zeros((bn, c, h, w));
        let mut attn = ndarray::Array4::<f64>::zeros((b, hw, frames, frames));
        let mut qb = vec![0.0f64; frames * c];
        let mut kb = vec![0.0f64; frames * c];
        let mut vb = vec![0.0f64; frames * c];
        let mut scores = vec![0.0f64; frames * frames];
        for bi in 0..b {
            for y in 0..h {
                for xj in 0..w {
                    for f in 0..frames {
                        for ci in 0..c {
                            qb[f * c + ci] = qv[(bi * frames + f, ci, y, xj)].as_f64();
                            kb[f * c + ci] = kv[(bi * frames + f, ci, y, xj)].as_f64();
                            vb[f * c + ci] = vv[(bi * frames + f, ci, y, xj)].as_f64();
                        }
                    }
                    for f in 0..frames {
                        let mut row_max = f64::NEG_INFINITY;
                        for n in 0..frames {
                            let mut dot = 0.0;
                            for ci in 0..c {
                                dot += qb[f * c + ci] * kb[n * c + ci];
                            }
                            let sc = dot * scale;
                            scores[f * frames + n] = sc;
                            row_max = row_max.max(sc);
                        }
                        let mut denom = 0.0;
                        for n in 0..frames {
                            let e = (scores[f * frames + n] - row_max).exp();
                            scores[f * frames + n] = e;
                            denom += e;
                        }
                        for n in 0..frames {
                            attn[(bi, y * w + xj, f, n)] = scores[f * frames + n] / denom;
                        }
                        for ci in 0..c {
                            let mut acc = 0.0;
                            for n in 0..frames {
                                acc += attn[(bi, y * w + xj, f, n)] * vb[n * c + ci];
                            }
                            out[(bi * frames + f, ci, y, xj)] = E::from_f64(acc);
                        }
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            out.into_dyn(),
            Op::TemporalAttention { q, k, v, frames, attn: attn.into_dyn() },
            needs,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.datas[x.0].len() as f64;
        let s: f64 = self.datas[x.0].iter().map(|v| v.as_f64()).sum();
        let data = ArrayD::from_elem(IxDyn(&[]), E::from_f64(s / n));
        let needs = self.needs(x);
        self.push(data, Op::Mean(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.datas[x.0].iter().map(|v| v.as_f64()).sum();
        let data = ArrayD::from_elem(IxDyn(&[]), E::from_f64(s));
        let needs = self.needs(x);
        self.push(data, Op::Sum(x), needs)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(AutodiffError::IndexOutOfBounds { op: "sum_axis", index: axis, len: s.len() });
        }
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let mut out = ArrayD::<E>::zeros(IxDyn(&out_shape));
        let lanes = self.datas[x.0].lanes(Axis(axis));
        for (slot, lane) in out.iter_mut().zip(lanes) {
            let acc: f64 = lane.iter().map(|v| v.as_f64()).sum();
            *slot = E::from_f64(acc);
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::SumAxis(x, axis), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let len: usize = shape.iter().product();
        if len != self.datas[x.0].len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.datas[x.0].clone().into_shape_with_order(IxDyn(shape)).unwrap();
        let needs = self.needs(x);
        Ok(self.push(data, Op::Reshape(x), needs))
    }

    /// Identity forward; gradients do not flow back through it.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let data = self.datas[x.0].clone();
        self.push(data, Op::StopGradient(x), false)
    }

    /// Select rows of a 2D node; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::BadShape {
                op: "gather_rows",
                expected: "2D (rows, cols)".into(),
                got: s,
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(AutodiffError::IndexOutOfBounds { op: "gather_rows", index: bad, len: s[0] });
        }
        let xv = self.datas[x.0].view().into_dimensionality::<Ix2>().unwrap();
        let mut out = ndarray::Array2::<E>::zeros((idx.len(), s[1]));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&xv.row(i));
        }
        let needs = self.needs(x);
        Ok(self.push(out.into_dyn(), Op::GatherRows { x, idx }, needs))
    }

    /// Pull per-pixel feature vectors out of one frame of a (F, C, H, W)
    /// volume: result row q is `x[frame, :, pixels[q].0, pixels[q].1]`.
    pub fn gather_pixels(
        &mut self,
        x: Var,
        frame: usize,
        pixels: &[(usize, usize)],
    ) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(AutodiffError::BadShape {
                op: "gather_pixels",
                expected: "4D (F, C, H, W)".into(),
                got: s,
            });
        }
        if frame >= s[0] {
            return Err(AutodiffError::IndexOutOfBounds { op: "gather_pixels", index: frame, len: s[0] });
        }
        if let Some(&(r, c)) = pixels.iter().find(|&&(r, c)| r >= s[2] || c >= s[3]) {
            return Err(AutodiffError::IndexOutOfBounds {
                op: "gather_pixels",
                index: r.max(c),
                len: s[2].min(s[3]),
            });
        }
        let xv = self.datas[x.0].view().into_dimensionality::<Ix4>().unwrap();
        let mut out = ndarray::Array2::<E>::zeros((pixels.len(), s[1]));
        for (q, &(r, c)) in pixels.iter().enumerate() {
            for ci in 0..s[1] {
                out[(q, ci)] = xv[(frame, ci, r, c)];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out.into_dyn(), Op::GatherPixels { x, frame, pixels: pixels.to_vec() }, needs))
    }

    /// Normalize each row of a 2D node to (near) unit length. The norm is
    /// smoothed as sqrt(|x|^2 + eps^2) so the op stays differentiable at 0.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::BadShape {
                op: "l2_normalize_rows",
                expected: "2D (rows, cols)".into(),
                got: s,
            });
        }
        let xv = self.datas[x.0].view().into_dimensionality::<Ix2>().unwrap();
        let mut out = ndarray::Array2::<E>::zeros((s[0], s[1]));
        for r in 0..s[0] {
            let n = row_norm(&xv, r);
            for c in 0..s[1] {
                out[(r, c)] = E::from_f64(xv[(r, c)].as_f64() / n);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out.into_dyn(), Op::L2NormalizeRows(x), needs))
    }

    /// Row-wise cosine similarity of two 2D nodes; result is 1D.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("cosine_rows", self, a, b)?;
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::BadShape {
                op: "cosine_rows",
                expected: "2D (rows, cols)".into(),
                got: s,
            });
        }
        let av = self.datas[a.0].view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.datas[b.0].view().into_dimensionality::<Ix2>().unwrap();
        let mut out = ndarray::Array1::<E>::zeros(s[0]);
        for r in 0..s[0] {
            let (na, nb) = (row_norm(&av, r), row_norm(&bv, r));
            let dot: f64 = (0..s[1]).map(|c| av[(r, c)].as_f64() * bv[(r, c)].as_f64()).sum();
            out[r] = E::from_f64(dot / (na * nb));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out.into_dyn(), Op::CosineRows(a, b), needs))
    }
}

fn row_norm<E: Elem>(m: &ndarray::ArrayView2<E>, r: usize) -> f64 {
    let sq: f64 = m.row(r).iter().map(|v| {
        let f = v.as_f64();
        f * f
    }).sum();
    (sq + NORM_EPS * NORM_EPS).sqrt()
}

/// (i0, i1, weight of i1) per destination index for 1D bilinear resampling
/// with half-pixel centers.
fn bilerp_table(src: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..src * factor)
        .map(|xd| {
            let xs = ((xd as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = xs.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, xs - i0 as f64)
        })
        .collect()
}

pub(crate) fn backward_node<E: Elem>(g: &mut Graph<E>, id: usize) -> Result<(), AutodiffError> {
    let op = std::mem::replace(&mut g.ops[id], Op::Leaf);
    let gout = g.grads[id].take().expect("backward_node called without output grad");
    match &op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            g.accum_grad(*a, gout.clone());
            g.accum_grad(*b, gout.clone());
        }
        Op::Sub(a, b) => {
            g.accum_grad(*a, gout.clone());
            g.accum_grad(*b, gout.mapv(|v| E::zero() - v));
        }
        Op::Mul(a, b) => {
            if g.needs(*a) {
                let da = &gout * &g.datas[b.0];
                g.accum_grad(*a, da);
            }
            if g.needs(*b) {
                let db = &gout * &g.datas[a.0];
                g.accum_grad(*b, db);
            }
        }
        Op::Div(a, b) => {
            if g.needs(*a) {
                let da = &gout / &g.datas[b.0];
                g.accum_grad(*a, da);
            }
            if g.needs(*b) {
                let bb = &g.datas[b.0] * &g.datas[b.0];
                let db = -(&gout * &g.datas[a.0]) / bb;
                g.accum_grad(*b, db);
            }
        }
        Op::AddScalar(x) => {
            g.accum_grad(*x, gout.clone());
        }
        Op::MulScalar(x, c) => {
            let c = *c;
            g.accum_grad(*x, gout.mapv(|v| v * c));
        }
        Op::MatMul(a, b) => {
            let g2 = gout.view().into_dimensionality::<Ix2>().unwrap();
            if g.needs(*a) {
                let b2 = g.datas[b.0].view().into_dimensionality::<Ix2>().unwrap();
                let da = g2.dot(&b2.t()).into_dyn();
                g.accum_grad(*a, da);
            }
            if g.needs(*b) {
                let a2 = g.datas[a.0].view().into_dimensionality::<Ix2>().unwrap();
                let db = a2.t().dot(&g2).into_dyn();
                g.accum_grad(*b, db);
            }
        }
        Op::Conv2d { x, w, b, pad } => {
            let (dx, dw, db) = conv::conv2d_backward(
                &g.datas[x.0],
                &g.datas[w.0],
                &gout,
                *pad,
                g.needs(*x),
            );
            if let Some(dx) = dx {
                g.accum_grad(*x, dx);
            }
            g.accum_grad(*w, dw);
            g.accum_grad(*b, db);
        }
        Op::AvgPool2(x) => {
            let s = g.shape(*x).to_vec();
            let go = gout.view().into_dimensionality::<Ix4>().unwrap();
            let mut dx = ndarray::Array4::<E>::zeros((s[0], s[1], s[2], s[3]));
            let quarter = E::from_f64(0.25);
            for bi in 0..s[0] {
                for ci in 0..s[1] {
                    for y in 0..s[2] / 2 {
                        for xj in 0..s[3] / 2 {
                            let gv = go[(bi, ci, y, xj)] * quarter;
                            dx[(bi, ci, 2 * y, 2 * xj)] = gv;
                            dx[(bi, ci, 2 * y, 2 * xj + 1)] = gv;
                            dx[(bi, ci, 2 * y + 1, 2 * xj)] = gv;
                            dx[(bi, ci, 2 * y + 1, 2 * xj + 1)] = gv;
                        }
                    }
                }
            }
            g.accum_grad(*x, dx.into_dyn());
        }
        Op::UpsampleBilinear { x, factor } => {
            let s = g.shape(*x).to_vec();
            let go = gout.view().into_dimensionality::<Ix4>().unwrap();
            let ty = bilerp_table(s[2], *factor);
            let tx = bilerp_table(s[3], *factor);
            let mut dx = ndarray::Array4::<f64>::zeros((s[0], s[1], s[2], s[3]));
            for bi in 0..s[0] {
                for ci in 0..s[1] {
                    for (yd, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (xd, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let gv = go[(bi, ci, yd, xd)].as_f64();
                            dx[(bi, ci, y0, x0)] += gv * (1.0 - wy) * (1.0 - wx);
                            dx[(bi, ci, y0, x1)] += gv * (1.0 - wy) * wx;
                            dx[(bi, ci, y1, x0)] += gv * wy * (1.0 - wx);
                            dx[(bi, ci, y1, x1)] += gv * wy * wx;
                        }
                    }
                }
            }
            g.accum_grad(*x, dx.mapv(E::from_f64).into_dyn());
        }
        Op::Relu(x) => {
            let z = E::zero();
            let mut dx = gout.clone();
            ndarray::Zip::from(&mut dx).and(&g.datas[x.0]).for_each(|d, &v| {
                if v <= z {
                    *d = z;
                }
            });
            g.accum_grad(*x, dx);
        }
        Op::Silu(x) => {
            let mut dx = gout.clone();
            ndarray::Zip::from(&mut dx).and(&g.datas[x.0]).for_each(|d, &v| {
                let xf = v.as_f64();
                let s = sigmoid(xf);
                *d = E::from_f64(d.as_f64() * s * (1.0 + xf * (1.0 - s)));
            });
            g.accum_grad(*x, dx);
        }
        Op::SigmoidTau { x, tau } => {
            let tau = *tau;
            let mut dx = gout.clone();
            ndarray::Zip::from(&mut dx).and(&g.datas[id]).for_each(|d, &y| {
                let s = y.as_f64();
                *d = E::from_f64(d.as_f64() * s * (1.0 - s) / tau);
            });
            g.accum_grad(*x, dx);
        }
        Op::GroupNorm { x, gamma, beta, groups, mean, inv_std } => {
            backward_group_norm(g, &gout, *x, *gamma, *beta, *groups, mean, inv_std);
        }
        Op::TemporalAttention { q, k, v, frames, attn } => {
            backward_attention(g, &gout, *q, *k, *v, *frames, attn);
        }
        Op::Mean(x) => {
            let n = g.datas[x.0].len() as f64;
            let gv = gout.iter().next().unwrap().as_f64();
            let dx = ArrayD::from_elem(g.datas[x.0].raw_dim(), E::from_f64(gv / n));
            g.accum_grad(*x, dx);
        }
        Op::Sum(x) => {
            let gv = *gout.iter().next().unwrap();
            let dx = ArrayD::from_elem(g.datas[x.0].raw_dim(), gv);
            g.accum_grad(*x, dx);
        }
        Op::SumAxis(x, axis) => {
            let dx = gout
                .clone()
                .insert_axis(Axis(*axis))
                .broadcast(g.datas[x.0].raw_dim())
                .unwrap()
                .to_owned();
            g.accum_grad(*x, dx);
        }
        Op::Reshape(x) => {
            let dx = gout.clone().into_shape_with_order(g.datas[x.0].raw_dim()).unwrap();
            g.accum_grad(*x, dx);
        }
        Op::StopGradient(_) => {}
        Op::GatherRows { x, idx } => {
            let go = gout.view().into_dimensionality::<Ix2>().unwrap();
            let s = g.shape(*x).to_vec();
            let mut dx = ndarray::Array2::<E>::zeros((s[0], s[1]));
            for (r, &i) in idx.iter().enumerate() {
                let mut row = dx.row_mut(i);
                row += &go.row(r);
            }
            g.accum_grad(*x, dx.into_dyn());
        }
        Op::GatherPixels { x, frame, pixels } => {
            let go = gout.view().into_dimensionality::<Ix2>().unwrap();
            let s = g.shape(*x).to_vec();
            let mut dx = ndarray::Array4::<E>::zeros((s[0], s[1], s[2], s[3]));
            for (qi, &(r, c)) in pixels.iter().enumerate() {
                for ci in 0..s[1] {
                    dx[(*frame, ci, r, c)] = dx[(*frame, ci, r, c)] + go[(qi, ci)];
                }
            }
            g.accum_grad(*x, dx.into_dyn());
        }
        Op::L2NormalizeRows(x) => {
            let xv = g.datas[x.0].view().into_dimensionality::<Ix2>().unwrap();
            let go = gout.view().into_dimensionality::<Ix2>().unwrap();
            let (rows, cols) = (xv.nrows(), xv.ncols());
            let mut dx = ndarray::Array2::<E>::zeros((rows, cols));
            for r in 0..rows {
                let n = row_norm(&xv, r);
                let dot: f64 =
                    (0..cols).map(|c| go[(r, c)].as_f64() * xv[(r, c)].as_f64()).sum();
                for c in 0..cols {
                    let gv = go[(r, c)].as_f64();
                    let xf = xv[(r, c)].as_f64();
                    dx[(r, c)] = E::from_f64(gv / n - xf * dot / (n * n * n));
                }
            }
            g.accum_grad(*x, dx.into_dyn());
        }
        Op::CosineRows(a, b) => {
            let av = g.datas[a.0].view().into_dimensionality::<Ix2>().unwrap();
            let bv = g.datas[b.0].view().into_dimensionality::<Ix2>().unwrap();
            let go = gout.view().into_dimensionality::<Ix1>().unwrap();
            let (rows, cols) = (av.nrows(), av.ncols());
            let mut da = ndarray::Array2::<E>::zeros((rows, cols));
            let mut db = ndarray::Array2::<E>::zeros((rows, cols));
            for r in 0..rows {
                let (na, nb) = (row_norm(&av, r), row_norm(&bv, r));
                let dot: f64 =
                    (0..cols).map(|c| av[(r, c)].as_f64() * bv[(r, c)].as_f64()).sum();
                let gv = go[r].as_f64();
                for c in 0..cols {
                    let af = av[(r, c)].as_f64();
                    let bf = bv[(r, c)].as_f64();
                    da[(r, c)] = E::from_f64(gv * (bf - af * dot / (na * na)) / (na * nb));
                    db[(r, c)] = E::from_f64(gv * (af - bf * dot / (nb * nb)) / (na * nb));
                }
            }
            if g.needs(*a) {
                g.accum_grad(*a, da.into_dyn());
            }
            if g.needs(*b) {
                g.accum_grad(*b, db.into_dyn());
            }
        }
    }
    g.ops[id] = op;
    g.grads[id] = Some(gout);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn backward_group_norm<E: Elem>(
    g: &mut Graph<E>,
    gout: &ArrayD<E>,
    x: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    mean: &ArrayD<f64>,
    inv_std: &ArrayD<f64>,
) {
    let s = g.shape(x).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let cg = c / groups;
    let m = (cg * h * w) as f64;
    let xv = g.datas[x.0].view().into_dimensionality::<Ix4>().unwrap();
    let ga = g.datas[gamma.0].view().into_dimensionality::<Ix1>().unwrap();
    let go = gout.view().into_dimensionality::<Ix4>().unwrap();
    let mean = mean.view().into_dimensionality::<Ix2>().unwrap();
    let inv_std = inv_std.view().into_dimensionality::<Ix2>().unwrap();
    let mut dx = ndarray::Array4::<E>::zeros((b, c, h, w));
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for bi in 0..b {
        for gi in 0..groups {
            let (mu, inv) = (mean[(bi, gi)], inv_std[(bi, gi)]);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for ci in gi * cg..(gi + 1) * cg {
                let gc = ga[ci].as_f64();
                for y in 0..h {
                    for xj in 0..w {
                        let xhat = (xv[(bi, ci, y, xj)].as_f64() - mu) * inv;
                        let gv = go[(bi, ci, y, xj)].as_f64();
                        dgamma[ci] += gv * xhat;
                        dbeta[ci] += gv;
                        let ge = gv * gc;
                        sum_g += ge;
                        sum_gx += ge * xhat;
                    }
                }
            }
            let (mg, mgx) = (sum_g / m, sum_gx / m);
            if g.needs(x) {
                for ci in gi * cg..(gi + 1) * cg {
                    let gc = ga[ci].as_f64();
                    for y in 0..h {
                        for xj in 0..w {
                            let xhat = (xv[(bi, ci, y, xj)].as_f64() - mu) * inv;
                            let ge = go[(bi, ci, y, xj)].as_f64() * gc;
                            dx[(bi, ci, y, xj)] = E::from_f64(
                                dx[(bi, ci, y, xj)].as_f64() + inv * (ge - mg - xhat * mgx),
                            );
                        }
                    }
                }
            }
        }
    }
    if g.needs(x) {
        g.accum_grad(x, dx.into_dyn());
    }
    let dgamma = ndarray::Array1::from_iter(dgamma.into_iter().map(E::from_f64)).into_dyn();
    let dbeta = ndarray::Array1::from_iter(dbeta.into_iter().map(E::from_f64)).into_dyn();
    g.accum_grad(gamma, dgamma);
    g.accum_grad(beta, dbeta);
}

fn backward_attention<E: Elem>(
    g: &mut Graph<E>,
    gout: &ArrayD<E>,
    q: Var,
    k: Var,
    v: Var,
    frames: usize,
    attn: &ArrayD<f64>,
) {
    let s = g.shape(q).to_vec();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let b = bn / frames;
    let scale = 1.0 / (c as f64).sqrt();
    let qv = g.datas[q.0].view().into_dimensionality::<Ix4>().unwrap();
    let kv = g.datas[k.0].view().into_dimensionality::<Ix4>().unwrap();
    let vv = g.datas[v.0].view().into_dimensionality::<Ix4>().unwrap();
    let go = gout.view().into_dimensionality::<Ix4>().unwrap();
    let at = attn.view().into_dimensionality::<Ix4>().unwrap();
    let mut dq = ndarray::Array4::<f64>::zeros((bn, c, h, w));
    let mut dk = ndarray::Array4::<f64>::zeros((bn, c, h, w));
    let mut dv = ndarray::Array4::<f64>::zeros((bn, c, h, w));
    let mut qb = vec![0.0f64; frames * c];
    let mut kb = vec![0.0f64; frames * c];
    let mut vb = vec![0.0f64; frames * c];
    let mut gb = vec![0.0f64; frames * c];
    let mut d_attn = vec![0.0f64; frames * frames];
    let mut d_scores = vec![0.0f64; frames * frames];
    for bi in 0..b {
        for y in 0..h {
            for xj in 0..w {
                let pix = y * w + xj;
                for f in 0..frames {
                    for ci in 0..c {
                        qb[f * c + ci] = qv[(bi * frames + f, ci, y, xj)].as_f64();
                        kb[f * c + ci] = kv[(bi * frames + f, ci, y, xj)].as_f64();
                        vb[f * c + ci] = vv[(bi * frames + f, ci, y, xj)].as_f64();
                        gb[f * c + ci] = go[(bi * frames + f, ci, y, xj)].as_f64();
                    }
                }
                for f in 0..frames {
                    for n in 0..frames {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            acc += gb[f * c + ci] * vb[n * c + ci];
                        }
                        d_attn[f * frames + n] = acc;
                    }
                }
                for f in 0..frames {
                    let mut dot = 0.0;
                    for n in 0..frames {
                        dot += at[(bi, pix, f, n)] * d_attn[f * frames + n];
                    }
                    for n in 0..frames {
                        d_scores[f * frames + n] =
                            at[(bi, pix, f, n)] * (d_attn[f * frames + n] - dot);
                    }
                }
                for f in 0..frames {
                    for ci in 0..c {
                        let mut acc_q = 0.0;
                        let mut acc_k = 0.0;
                        let mut acc_v = 0.0;
                        for n in 0..frames {
                            acc_q += d_scores[f * frames + n] * kb[n * c + ci];
                            acc_k += d_scores[n * frames + f] * qb[n * c + ci];
                            acc_v += at[(bi, pix, n, f)] * gb[n * c + ci];
                        }
                        dq[(bi * frames + f, ci, y, xj)] += acc_q * scale;
                        dk[(bi * frames + f, ci, y, xj)] += acc_k * scale;
                        dv[(bi * frames + f, ci, y, xj)] += acc_v;
                    }
                }
            }
        }
    }
    if g.needs(q) {
        g.accum_grad(q, dq.mapv(E::from_f64).into_dyn());
    }
    if g.needs(k) {
        g.accum_grad(k, dk.mapv(E::from_f64).into_dyn());
    }
    if g.needs(v) {
        g.accum_grad(v, dv.mapv(E::from_f64).into_dyn());
    }
}
