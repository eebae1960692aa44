//! Edge-biased keypoint sampling, 3D correspondence mining between frame
//! pairs, and a differentiable ranking loss scoring how consistently
//! features identify the same world point across views.
//!
//! The loss is a smoothed average precision. For each query keypoint the
//! positive set is the query itself plus its 3D nearest neighbour in the
//! other frame, the negatives are keypoints farther than a distance
//! threshold, and every pairwise similarity difference passes through a
//! temperature sigmoid so the ranking stays differentiable.

use crate::autodiff::{AutodiffError, Elem, Graph, Var};
use crate::geometry::{pairwise_sq_dist, PointMap, Vec3};
use crate::rng;
use ndarray::{Array1, Array2, ArrayView3};
use serde::{Deserialize, Serialize};
use thiserror::Error;


#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("{requested} keypoints requested but only {valid} pixels are valid")]
    TooFewValidPixels { valid: usize, requested: usize },
    #[error("frame is {frame_h}x{frame_w} but the point map is {map_h}x{map_w}")]
    FrameShape { frame_h: usize, frame_w: usize, map_h: usize, map_w: usize },
    #[error("bad loss config: {what} = {got}")]
    BadConfig { what: &'static str, got: f64 },
    #[error("a positive and a negative share similarity {sim}; resample the instance")]
    TiedSimilarity { sim: f64 },
    #[error("average precision needs at least one positive")]
    NoPositives,
}

/// Knobs for keypoint sampling, correspondence mining and the ranking loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Sigmoid temperature.
    pub tau: f64,
    /// A query is dropped when its 3D nearest neighbour in the other frame
    /// is farther than this.
    pub t_pos: f64,
    /// Keypoints farther than this from the query are negative candidates.
    pub t_neg: f64,
    /// Keypoints sampled per frame.
    pub keypoints: usize,
    /// Cap on negatives kept per query.
    pub max_negatives: usize,
    /// Fraction of keypoints drawn from the top edge-magnitude quartile.
    pub edge_bias: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            t_pos: 0.005,
            t_neg: 0.1,
            keypoints: 512,
            max_negatives: 64,
            edge_bias: 0.7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ConsistencyError> {
        if !(self.tau > 0.0) {
            return Err(ConsistencyError::BadConfig { what: "tau", got: self.tau });
        }
        if !(self.t_pos > 0.0) {
            return Err(ConsistencyError::BadConfig { what: "t_pos", got: self.t_pos });
        }
        if !(self.t_neg > self.t_pos) {
            return Err(ConsistencyError::BadConfig { what: "t_neg", got: self.t_neg });
        }
        if self.keypoints == 0 {
            return Err(ConsistencyError::BadConfig { what: "keypoints", got: 0.0 });
        }
        if self.max_negatives == 0 {
            return Err(ConsistencyError::BadConfig { what: "max_negatives", got: 0.0 });
        }
        if !(0.0..=1.0).contains(&self.edge_bias) {
            return Err(ConsistencyError::BadConfig { what: "edge_bias", got: self.edge_bias });
        }
        Ok(())
    }
}

/// Pixel locations sampled in one frame along with their world points.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    /// (row, col) pixel coordinates.
    pub pixels: Vec<(usize, usize)>,
    /// World point under each pixel; meaningless where `valid` is false.
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// One query keypoint with its mined positive and negatives. Indices point
/// into the two [`KeypointSet`]s the correspondence was mined from: `query`
/// into the first, `positive` and `negatives` into the second.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryCorrespondence {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    /// 3D distance between the query and its positive.
    pub d_pos: f64,
}

/// Overflow-safe sigmoid with temperature, `1 / (1 + exp(-x / tau))`.
pub fn sigmoid_tau(x: f64, tau: f64) -> f64 {
    let z = x / tau;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mirror reflection without repeating the border sample, clamped so a
/// one-pixel axis stays in bounds.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j.clamp(0, n - 1) as usize
}

/// Gradient magnitude `sqrt(Gx^2 + Gy^2)` of the luma image under the
/// standard 3x3 Sobel kernels with reflect padding. `frame` is (3, H, W).
pub fn sobel_edge_map(frame: ArrayView3<f32>) -> Array2<f64> {
    let (c, h, w) = frame.dim();
    assert_eq!(c, 3, "sobel_edge_map expects an RGB frame");
    let mut gray = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for cl in 0..w {
            gray[(r, cl)] = 0.299 * frame[(0, r, cl)] as f64
                + 0.587 * frame[(1, r, cl)] as f64
                + 0.114 * frame[(2, r, cl)] as f64;
        }
    }
    // Separable form: a (1, 2, 1) smoothing sum on each side of the pixel,
    // then one subtraction. Both sides of a constant region run the same
    // float operations, so flat areas come out exactly zero.
    let mut out = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        let rm = mirror(r as isize - 1, h);
        let rp = mirror(r as isize + 1, h);
        for cl in 0..w {
            let cm = mirror(cl as isize - 1, w);
            let cp = mirror(cl as isize + 1, w);
            let col = |c: usize| gray[(rm, c)] + 2.0 * gray[(r, c)] + gray[(rp, c)];
            let row = |rr: usize| gray[(rr, cm)] + 2.0 * gray[(rr, cl)] + gray[(rr, cp)];
            let gx = col(cp) - col(cm);
            let gy = row(rp) - row(rm);
            out[(r, cl)] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Draw `k` distinct valid pixels, `ceil(edge_bias * k)` of them uniform
/// over the top quartile of Sobel edge magnitudes (ties at the quartile
/// boundary included) and the rest uniform over the remaining valid pixels.
/// When the quartile holds fewer pixels than the biased stage wants, the
/// shortfall moves to the uniform stage so the set still has `k` members.
pub fn sample_keypoints(
    frame: ArrayView3<f32>,
    pointmap: &PointMap,
    k: usize,
    edge_bias: f64,
    seed: u64,
) -> Result<KeypointSet, ConsistencyError> {
    let (h, w) = (pointmap.height(), pointmap.width());
    if frame.dim().1 != h || frame.dim().2 != w {
        return Err(ConsistencyError::FrameShape {
            frame_h: frame.dim().1,
            frame_w: frame.dim().2,
            map_h: h,
            map_w: w,
        });
    }
    if !(0.0..=1.0).contains(&edge_bias) {
        return Err(ConsistencyError::BadConfig { what: "edge_bias", got: edge_bias });
    }
    let valid_px: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |cl| (r, cl)))
        .filter(|&(r, cl)| pointmap.valid[(r, cl)])
        .collect();
    if valid_px.len() < k {
        return Err(ConsistencyError::TooFewValidPixels { valid: valid_px.len(), requested: k });
    }
    if k == 0 {
        return Ok(KeypointSet { pixels: Vec::new(), points: Vec::new(), valid: Vec::new() });
    }

    let mags = sobel_edge_map(frame);
    let mut sorted: Vec<f64> = valid_px.iter().map(|&(r, cl)| mags[(r, cl)]).collect();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[3 * sorted.len() / 4];
    let edge_px: Vec<usize> = (0..valid_px.len())
        .filter(|&i| mags[valid_px[i]] >= threshold)
        .collect();

    let want_edge = (edge_bias * k as f64).ceil() as usize;
    let n_edge = want_edge.min(edge_px.len()).min(k);

    let mut taken = vec![false; valid_px.len()];
    let mut pixels = Vec::with_capacity(k);
    let mut rng_edge = rng::stream(seed, "keypoint-edge", &[]);
    for i in rand::seq::index::sample(&mut rng_edge, edge_px.len(), n_edge) {
        taken[edge_px[i]] = true;
        pixels.push(valid_px[edge_px[i]]);
    }
    let rest: Vec<usize> = (0..valid_px.len()).filter(|&i| !taken[i]).collect();
    let mut rng_fill = rng::stream(seed, "keypoint-fill", &[]);
    for i in rand::seq::index::sample(&mut rng_fill, rest.len(), k - n_edge) {
        pixels.push(valid_px[rest[i]]);
    }

    let points = pixels
        .iter()
        .map(|&(r, cl)| pointmap.get(r, cl).expect("sampled pixel is valid"))
        .collect();
    Ok(KeypointSet { pixels, points, valid: vec![true; k] })
}

/// Mine one correspondence per query keypoint of `a`: the positive is the
/// 3D nearest neighbour in `b` (queries farther than `t_pos` from it are
/// dropped), the negatives are up to `max_negatives` keypoints of `b`
/// farther than `t_neg`, drawn uniformly without replacement. Queries with
/// no eligible negative are kept with an empty negative list.
pub fn mine_correspondences(
    a: &KeypointSet,
    b: &KeypointSet,
    cfg: &LossConfig,
    seed: u64,
) -> Vec<QueryCorrespondence> {
    let mut out = Vec::new();
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let d2 = pairwise_sq_dist(&a.points, &b.points);
    let t_pos2 = cfg.t_pos * cfg.t_pos;
    let t_neg2 = cfg.t_neg * cfg.t_neg;
    for q in 0..a.len() {
        if !a.valid[q] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..b.len() {
            if !b.valid[j] {
                continue;
            }
            let d = d2[(q, j)];
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let Some((positive, best_d2)) = best else { continue };
        if best_d2 > t_pos2 {
            continue;
        }
        // The positive sits within t_pos < t_neg of the query, so it can
        // never appear among the negatives.
        let eligible: Vec<usize> = (0..b.len())
            .filter(|&j| b.valid[j] && d2[(q, j)] > t_neg2)
            .collect();
        let negatives = if eligible.len() <= cfg.max_negatives {
            eligible
        } else {
            let mut r = rng::stream(seed, "negative-picks", &[q as u64]);
            rand::seq::index::sample(&mut r, eligible.len(), cfg.max_negatives)
                .iter()
                .map(|i| eligible[i])
                .collect()
        };
        out.push(QueryCorrespondence { query: q, positive, negatives, d_pos: best_d2.sqrt() });
    }
    out
}

/// Batch ranking loss value plus how many queries contributed.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub loss: Var,
    pub queries: usize,
}

fn row_dot<E: Elem>(g: &mut Graph<E>, a: Var, b: Var) -> Result<Var, AutodiffError> {
    let prod = g.mul(a, b)?;
    g.sum_axis(prod, 1)
}

/// Mean smoothed-average-precision loss over mined queries.
///
/// `feats_a` and `feats_b` are (K, C) keypoint feature rows for the two
/// frames; rows are l2-normalized internally, so positive rescaling of
/// either input leaves the value unchanged. Query features are read from
/// `feats_a`, positive and negative features from `feats_b`. With no
/// queries the result is a constant zero flagged by `queries == 0`.
///
/// Per query, with s(x) the cosine similarity of x to the query and the
/// positive set {query, positive}, the retained fraction is the mean over
/// i in the positive set of
///   (1 + sum_{j positive, j != i} sig((s_j - s_i)/tau)) /
///   (same numerator + sum_{j negative} sig((s_j - s_i)/tau))
/// and the loss is one minus that fraction.
pub fn smooth_ap_loss<E: Elem>(
    g: &mut Graph<E>,
    feats_a: Var,
    feats_b: Var,
    corrs: &[QueryCorrespondence],
    tau: f64,
) -> Result<BatchLoss, AutodiffError> {
    if corrs.is_empty() {
        let loss = g.leaf(ndarray::arr0(E::zero()).into_dyn());
        return Ok(BatchLoss { loss, queries: 0 });
    }
    let nq = corrs.len();
    let na = g.l2_normalize_rows(feats_a)?;
    let nb = g.l2_normalize_rows(feats_b)?;
    let fq = g.gather_rows(na, corrs.iter().map(|c| c.query).collect())?;
    let fp = g.gather_rows(nb, corrs.iter().map(|c| c.positive).collect())?;
    let s_self = row_dot(g, fq, fq)?;
    let s_pos = row_dot(g, fq, fp)?;

    // Terms for i = query (the positive ranked against it) and i = positive
    // (the query ranked against it).
    let d_pq = g.sub(s_pos, s_self)?;
    let sig_pq = g.sigmoid_tau(d_pq, tau);
    let num_q = g.add_scalar(sig_pq, 1.0);
    let d_qp = g.sub(s_self, s_pos)?;
    let sig_qp = g.sigmoid_tau(d_qp, tau);
    let num_p = g.add_scalar(sig_qp, 1.0);

    let m = corrs.iter().map(|c| c.negatives.len()).max().unwrap_or(0);
    let (den_q, den_p) = if m == 0 {
        (num_q, num_p)
    } else {
        // Negatives padded to a rectangle; padding rows alias the positive
        // and are zeroed by the mask, so they contribute exactly nothing.
        let mut rows = Vec::with_capacity(nq * m);
        let mut qrep = Vec::with_capacity(nq * m);
        let mut mask = Array1::<E>::zeros(nq * m);
        for (qi, c) in corrs.iter().enumerate() {
            for j in 0..m {
                let (row, on) = match c.negatives.get(j) {
                    Some(&n) => (n, E::one()),
                    None => (c.positive, E::zero()),
                };
                rows.push(row);
                qrep.push(qi);
                mask[qi * m + j] = on;
            }
        }
        let mask = g.leaf(mask.into_dyn());
        let f_neg = g.gather_rows(nb, rows)?;
        let fq_rep = g.gather_rows(fq, qrep.clone())?;
        let s_neg = row_dot(g, fq_rep, f_neg)?;

        let mut branch = |g: &mut Graph<E>, anchor: Var, num: Var| -> Result<Var, AutodiffError> {
            let col = g.reshape(anchor, &[nq, 1])?;
            let rep = g.gather_rows(col, qrep.clone())?;
            let rep = g.reshape(rep, &[nq * m])?;
            let d = g.sub(s_neg, rep)?;
            let sig = g.sigmoid_tau(d, tau);
            let masked = g.mul(sig, mask)?;
            let grid = g.reshape(masked, &[nq, m])?;
            let per_query = g.sum_axis(grid, 1)?;
            g.add(num, per_query)
        };
        (branch(g, s_self, num_q)?, branch(g, s_pos, num_p)?)
    };

    let r_q = g.div(num_q, den_q)?;
    let r_p = g.div(num_p, den_p)?;
    let r_sum = g.add(r_q, r_p)?;
    let mean_r = g.mean(r_sum);
    let scaled = g.mul_scalar(mean_r, -0.5);
    let loss = g.add_scalar(scaled, 1.0);
    Ok(BatchLoss { loss, queries: nq })
}

/// Average precision of the positives ranked among the negatives by
/// descending similarity. Exact ties between a positive and a negative
/// make the ranking ambiguous and are reported as an error so the caller
/// can resample.
pub fn exact_average_precision(
    pos_sims: &[f64],
    neg_sims: &[f64],
) -> Result<f64, ConsistencyError> {
    if pos_sims.is_empty() {
        return Err(ConsistencyError::NoPositives);
    }
    for &p in pos_sims {
        if neg_sims.contains(&p) {
            return Err(ConsistencyError::TiedSimilarity { sim: p });
        }
    }
    let mut ranked: Vec<(f64, bool)> = pos_sims
        .iter()
        .map(|&s| (s, true))
        .chain(neg_sims.iter().map(|&s| (s, false)))
        .collect();
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &(_, is_pos)) in ranked.iter().enumerate() {
        if is_pos {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / pos_sims.len() as f64)
}
