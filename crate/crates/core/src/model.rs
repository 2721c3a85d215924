//! The deformation regressor: a per-point encoder with one self-attention
//! block and a global max-pool, conditioned on the diffusion timestep via
//! learned scale-shift pairs. Offsets are predicted residually, so a fresh
//! model (zero-initialized output layer) is the identity map.
//!
//! Everything runs in f64 with a hand-written exact reverse-mode backward
//! pass; training uses decoupled weight decay with adaptive moments and an
//! optional cosine learning-rate schedule.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{DiffusionSchedule, Trajectory};
use crate::rng::normal;
use crate::shape::{Shape, Vec3};

pub const MODEL_VERSION: u32 = 1;

/// Architecture hyperparameters. The parameter layout is fully determined
/// by these fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelHyper {
    /// Feature width of the encoder, attention block, and decoder.
    pub width: usize,
    /// Raw sinusoidal time-feature dimension (even).
    pub embed_dim: usize,
    /// Attention heads; must divide `width`.
    pub heads: usize,
    /// Apply learned time scale-shift conditioning.
    pub time_conditioning: bool,
    /// Concatenate a per-shape latent code to the time features.
    pub latent_conditioning: bool,
}

impl ModelHyper {
    /// Desk-scale default: ~30k parameters.
    pub fn desk() -> Self {
        ModelHyper {
            width: 64,
            embed_dim: 64,
            heads: 1,
            time_conditioning: true,
            latent_conditioning: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "model width, heads, and embedding dimension must be positive".into(),
            ));
        }
        if self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embedding dimension must be even, got {}",
                self.embed_dim
            )));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide width ({})",
                self.heads, self.width
            )));
        }
        if self.latent_conditioning && !self.time_conditioning {
            return Err(Error::Config(
                "latent conditioning requires time conditioning".into(),
            ));
        }
        Ok(())
    }

    /// Conditioning input size: time features plus the optional latent code.
    fn cond_dim(&self) -> usize {
        self.embed_dim + if self.latent_conditioning { self.width } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Offsets of every named parameter segment inside the flat vector.
#[derive(Debug, Clone)]
struct Layout {
    tw: Range<usize>,
    tb: Range<usize>,
    e1w: Range<usize>,
    e1b: Range<usize>,
    e2w: Range<usize>,
    e2b: Range<usize>,
    qw: Range<usize>,
    kw: Range<usize>,
    vw: Range<usize>,
    ow: Range<usize>,
    d1w: Range<usize>,
    d1b: Range<usize>,
    d2w: Range<usize>,
    d2b: Range<usize>,
    d3w: Range<usize>,
    d3b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(h: &ModelHyper) -> Self {
        let w = h.width;
        let mut cursor = 0usize;
        let mut seg = |len: usize| {
            let r = cursor..cursor + len;
            cursor += len;
            r
        };
        let (tw, tb) = if h.time_conditioning {
            (seg(4 * w * h.cond_dim()), seg(4 * w))
        } else {
            (seg(0), seg(0))
        };
        let e1w = seg(w * 3);
        let e1b = seg(w);
        let e2w = seg(w * w);
        let e2b = seg(w);
        let qw = seg(w * w);
        let kw = seg(w * w);
        let vw = seg(w * w);
        let ow = seg(w * w);
        let d1w = seg(w * 2 * w);
        let d1b = seg(w);
        let d2w = seg(w * w);
        let d2b = seg(w);
        let d3w = seg(3 * w);
        let d3b = seg(3);
        Layout {
            tw,
            tb,
            e1w,
            e1b,
            e2w,
            e2b,
            qw,
            kw,
            vw,
            ow,
            d1w,
            d1b,
            d2w,
            d2b,
            d3w,
            d3b,
            total: cursor,
        }
    }
}

/// The regressor: hyperparameters plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub hyper: ModelHyper,
    pub theta: Vec<f64>,
    pub version: u32,
}

impl RegressorModel {
    /// Random initialization scaled by fan-in; the final decoder layer is
    /// zero so the fresh model predicts zero offsets.
    pub fn new(hyper: ModelHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        let mut theta = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |r: &Range<usize>, fan_in: usize, theta: &mut [f64]| {
            let scale = (1.0 / fan_in.max(1) as f64).sqrt();
            for v in &mut theta[r.clone()] {
                *v = normal(&mut rng) * scale;
            }
        };
        let w = hyper.width;
        if hyper.time_conditioning {
            init(&layout.tw, hyper.cond_dim(), &mut theta);
        }
        init(&layout.e1w, 3, &mut theta);
        init(&layout.e2w, w, &mut theta);
        init(&layout.qw, w, &mut theta);
        init(&layout.kw, w, &mut theta);
        init(&layout.vw, w, &mut theta);
        init(&layout.ow, w, &mut theta);
        init(&layout.d1w, 2 * w, &mut theta);
        init(&layout.d2w, w, &mut theta);
        // biases, time shift, and the output layer stay zero
        Ok(RegressorModel {
            hyper,
            theta,
            version: MODEL_VERSION,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.hyper)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.theta.len() != self.hyper.param_count() {
            return Err(Error::ModelMismatch(format!(
                "parameter vector has {} entries, hyperparameters imply {}",
                self.theta.len(),
                self.hyper.param_count()
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelMismatch("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Raw sinusoidal features of t/T: interleaved (sin, cos) at dim/2
/// geometric frequencies from pi to 1000 pi. Injective over t = 0..=T
/// thanks to the lowest-frequency cosine.
pub fn time_features(t: usize, big_t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "time feature dimension must be positive and even, got {dim}"
        )));
    }
    if big_t == 0 || t > big_t {
        return Err(Error::Config(format!(
            "timestep {t} outside schedule range 0..={big_t}"
        )));
    }
    let f = t as f64 / big_t as f64;
    let half = dim / 2;
    let growth = if half > 1 {
        1000f64.powf(1.0 / (half - 1) as f64)
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(dim);
    let mut omega = std::f64::consts::PI;
    for _ in 0..half {
        out.push((omega * f).sin());
        out.push((omega * f).cos());
        omega *= growth;
    }
    Ok(out)
}

/// Per-shape global feature: the per-point encoder (without time shifts)
/// followed by a coordinate-wise max-pool. Treated as a constant during
/// backpropagation, so the latent path carries no gradient.
pub fn latent_code(model: &RegressorModel, shape: &Shape) -> Result<Vec<f64>> {
    if shape.is_empty() {
        return Err(Error::EmptyShape);
    }
    model.validate()?;
    let l = model.layout();
    let w = model.hyper.width;
    let th = &model.theta;
    let mut pooled = vec![f64::NEG_INFINITY; w];
    let mut h1 = vec![0.0; w];
    let mut h2 = vec![0.0; w];
    for p in &shape.vertices {
        let x = [p.x, p.y, p.z];
        matvec(&th[l.e1w.clone()], w, 3, &x, &mut h1);
        for (v, b) in h1.iter_mut().zip(&th[l.e1b.clone()]) {
            *v = (*v + b).tanh();
        }
        matvec(&th[l.e2w.clone()], w, w, &h1, &mut h2);
        for ((v, b), m) in h2.iter_mut().zip(&th[l.e2b.clone()]).zip(&mut pooled) {
            *v = (*v + b).tanh();
            if *v > *m {
                *m = *v;
            }
        }
    }
    Ok(pooled)
}

// y = W x, row-major W of shape (rows, cols)
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        y[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

// y += W^T x (x has len rows, y has len cols)
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let xv = x[r];
        for (yc, wc) in y.iter_mut().zip(row) {
            *yc += wc * xv;
        }
    }
}

// g += a (outer) b, g row-major (rows=len a, cols=len b)
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, av) in a.iter().enumerate() {
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gc, bv) in row.iter_mut().zip(b) {
            *gc += av * bv;
        }
    }
}

fn acc(g: &mut [f64], a: &[f64]) {
    for (gv, av) in g.iter_mut().zip(a) {
        *gv += av;
    }
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    n: usize,
    cond: Vec<f64>,
    gam1: Vec<f64>,
    gam2: Vec<f64>,
    x: Vec<f64>,    // n x 3
    a1: Vec<f64>,   // n x w, post-tanh pre-shift
    h1: Vec<f64>,   // n x w
    a2: Vec<f64>,   // n x w
    h2: Vec<f64>,   // n x w
    q: Vec<f64>,    // n x w
    k: Vec<f64>,    // n x w
    v: Vec<f64>,    // n x w
    attn: Vec<Vec<f64>>, // per head, n x n softmax rows
    att: Vec<f64>,  // n x w, pre output-projection
    h3: Vec<f64>,   // n x w
    g: Vec<f64>,    // w
    argmax: Vec<usize>,
    a4: Vec<f64>,   // n x w
    a5: Vec<f64>,   // n x w
    out: Vec<f64>,  // n x 3
}

fn forward_cache(
    model: &RegressorModel,
    vertices: &[Vec3],
    t: usize,
    big_t: usize,
    latent: Option<&[f64]>,
) -> Result<ForwardCache> {
    let h = &model.hyper;
    let w = h.width;
    let n = vertices.len();
    if n == 0 {
        return Err(Error::EmptyShape);
    }
    let l = model.layout();
    let th = &model.theta;

    let mut cond = Vec::new();
    let (mut gam1, mut shf1, mut gam2, mut shf2) =
        (vec![0.0; w], vec![0.0; w], vec![0.0; w], vec![0.0; w]);
    if h.time_conditioning {
        cond = time_features(t, big_t, h.embed_dim)?;
        match (h.latent_conditioning, latent) {
            (true, Some(code)) => {
                if code.len() != w {
                    return Err(Error::ModelMismatch(format!(
                        "latent code length {} does not match width {w}",
                        code.len()
                    )));
                }
                cond.extend_from_slice(code);
            }
            (true, None) => {
                return Err(Error::ModelMismatch(
                    "model is latent-conditioned but no latent code was supplied".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::ModelMismatch(
                    "latent code supplied to an unconditioned model".into(),
                ))
            }
            (false, None) => {}
        }
        let mut p = vec![0.0; 4 * w];
        matvec(&th[l.tw.clone()], 4 * w, h.cond_dim(), &cond, &mut p);
        for (pv, b) in p.iter_mut().zip(&th[l.tb.clone()]) {
            *pv += b;
        }
        gam1.copy_from_slice(&p[0..w]);
        shf1.copy_from_slice(&p[w..2 * w]);
        gam2.copy_from_slice(&p[2 * w..3 * w]);
        shf2.copy_from_slice(&p[3 * w..4 * w]);
    } else if latent.is_some() {
        return Err(Error::ModelMismatch(
            "latent code supplied to an unconditioned model".into(),
        ));
    }

    let x: Vec<f64> = vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mut a1 = vec![0.0; n * w];
    let mut h1 = vec![0.0; n * w];
    let mut a2 = vec![0.0; n * w];
    let mut h2 = vec![0.0; n * w];
    for i in 0..n {
        let xi = &x[i * 3..i * 3 + 3];
        let (za, ha) = (&mut a1[i * w..(i + 1) * w], &mut h1[i * w..(i + 1) * w]);
        matvec(&th[l.e1w.clone()], w, 3, xi, za);
        for r in 0..w {
            za[r] = (za[r] + th[l.e1b.clone()][r]).tanh();
            ha[r] = za[r] * (1.0 + gam1[r]) + shf1[r];
        }
        let h1i: Vec<f64> = ha.to_vec();
        let (zb, hb) = (&mut a2[i * w..(i + 1) * w], &mut h2[i * w..(i + 1) * w]);
        matvec(&th[l.e2w.clone()], w, w, &h1i, zb);
        for r in 0..w {
            zb[r] = (zb[r] + th[l.e2b.clone()][r]).tanh();
            hb[r] = zb[r] * (1.0 + gam2[r]) + shf2[r];
        }
    }

    // self-attention over all points
    let mut q = vec![0.0; n * w];
    let mut k = vec![0.0; n * w];
    let mut v = vec![0.0; n * w];
    for i in 0..n {
        let h2i = &h2[i * w..(i + 1) * w];
        matvec(&th[l.qw.clone()], w, w, h2i, &mut q[i * w..(i + 1) * w]);
        matvec(&th[l.kw.clone()], w, w, h2i, &mut k[i * w..(i + 1) * w]);
        matvec(&th[l.vw.clone()], w, w, h2i, &mut v[i * w..(i + 1) * w]);
    }
    let dh = w / h.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = Vec::with_capacity(h.heads);
    let mut att = vec![0.0; n * w];
    for m in 0..h.heads {
        let c0 = m * dh;
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            let qi = &q[i * w + c0..i * w + c0 + dh];
            let row = &mut rows[i * n..(i + 1) * n];
            let mut maxv = f64::NEG_INFINITY;
            for j in 0..n {
                let kj = &k[j * w + c0..j * w + c0 + dh];
                let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                row[j] = s;
                if s > maxv {
                    maxv = s;
                }
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - maxv).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
            let ai = &mut att[i * w + c0..i * w + c0 + dh];
            for j in 0..n {
                let vj = &v[j * w + c0..j * w + c0 + dh];
                let aij = row[j];
                for d in 0..dh {
                    ai[d] += aij * vj[d];
                }
            }
        }
        attn.push(rows);
    }
    let mut h3 = vec![0.0; n * w];
    for i in 0..n {
        let out = &mut h3[i * w..(i + 1) * w];
        matvec(&th[l.ow.clone()], w, w, &att[i * w..(i + 1) * w], out);
        for r in 0..w {
            out[r] += h2[i * w + r];
        }
    }

    // global max-pool, first-maximum tie break
    let mut g = vec![f64::NEG_INFINITY; w];
    let mut argmax = vec![0usize; w];
    for i in 0..n {
        for r in 0..w {
            let val = h3[i * w + r];
            if val > g[r] {
                g[r] = val;
                argmax[r] = i;
            }
        }
    }

    let mut a4 = vec![0.0; n * w];
    let mut a5 = vec![0.0; n * w];
    let mut out = vec![0.0; n * 3];
    let mut cbuf = vec![0.0; 2 * w];
    for i in 0..n {
        cbuf[..w].copy_from_slice(&h3[i * w..(i + 1) * w]);
        cbuf[w..].copy_from_slice(&g);
        let z4 = &mut a4[i * w..(i + 1) * w];
        matvec(&th[l.d1w.clone()], w, 2 * w, &cbuf, z4);
        for r in 0..w {
            z4[r] = (z4[r] + th[l.d1b.clone()][r]).tanh();
        }
        let z4v: Vec<f64> = z4.to_vec();
        let z5 = &mut a5[i * w..(i + 1) * w];
        matvec(&th[l.d2w.clone()], w, w, &z4v, z5);
        for r in 0..w {
            z5[r] = (z5[r] + th[l.d2b.clone()][r]).tanh();
        }
        let z5v: Vec<f64> = z5.to_vec();
        let oi = &mut out[i * 3..(i + 1) * 3];
        matvec(&th[l.d3w.clone()], 3, w, &z5v, oi);
        for r in 0..3 {
            oi[r] += th[l.d3b.clone()][r];
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteOutput);
    }

    Ok(ForwardCache {
        n,
        cond,
        gam1,
        gam2,
        x,
        a1,
        h1,
        a2,
        h2,
        q,
        k,
        v,
        attn,
        att,
        h3,
        g,
        argmax,
        a4,
        a5,
        out,
    })
}

/// Per-vertex 3D offsets; the predicted next shape is the input plus these.
pub fn model_forward(
    model: &RegressorModel,
    shape: &Shape,
    t: usize,
    big_t: usize,
    latent: Option<&[f64]>,
) -> Result<Vec<Vec3>> {
    model.validate()?;
    let cache = forward_cache(model, &shape.vertices, t, big_t, latent)?;
    Ok((0..cache.n)
        .map(|i| Vec3::new(cache.out[i * 3], cache.out[i * 3 + 1], cache.out[i * 3 + 2]))
        .collect())
}

/// Exact reverse-mode gradient of a scalar loss with adjoint `dout` on the
/// offsets; returns d loss / d theta.
fn backward(model: &RegressorModel, cache: &ForwardCache, dout: &[f64]) -> Vec<f64> {
    let h = &model.hyper;
    let w = h.width;
    let n = cache.n;
    let l = model.layout();
    let th = &model.theta;
    let mut grad = vec![0.0; th.len()];

    // decoder
    let mut dh3 = vec![0.0; n * w];
    let mut dg = vec![0.0; w];
    let mut cbuf = vec![0.0; 2 * w];
    let mut dz5 = vec![0.0; w];
    let mut dz4 = vec![0.0; w];
    let mut da5 = vec![0.0; w];
    let mut da4 = vec![0.0; w];
    let mut dc = vec![0.0; 2 * w];
    for i in 0..n {
        let doi = &dout[i * 3..(i + 1) * 3];
        let a5i = &cache.a5[i * w..(i + 1) * w];
        let a4i = &cache.a4[i * w..(i + 1) * w];
        outer_acc(&mut grad[l.d3w.clone()], doi, a5i);
        acc(&mut grad[l.d3b.clone()], doi);
        da5.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&th[l.d3w.clone()], 3, w, doi, &mut da5);
        for r in 0..w {
            dz5[r] = da5[r] * (1.0 - a5i[r] * a5i[r]);
        }
        outer_acc(&mut grad[l.d2w.clone()], &dz5, a4i);
        acc(&mut grad[l.d2b.clone()], &dz5);
        da4.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&th[l.d2w.clone()], w, w, &dz5, &mut da4);
        for r in 0..w {
            dz4[r] = da4[r] * (1.0 - a4i[r] * a4i[r]);
        }
        cbuf[..w].copy_from_slice(&cache.h3[i * w..(i + 1) * w]);
        cbuf[w..].copy_from_slice(&cache.g);
        outer_acc(&mut grad[l.d1w.clone()], &dz4, &cbuf);
        acc(&mut grad[l.d1b.clone()], &dz4);
        dc.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&th[l.d1w.clone()], w, 2 * w, &dz4, &mut dc);
        acc(&mut dh3[i * w..(i + 1) * w], &dc[..w]);
        acc(&mut dg, &dc[w..]);
    }
    // route the pooled gradient to each coordinate's argmax point
    for r in 0..w {
        dh3[cache.argmax[r] * w + r] += dg[r];
    }

    // attention block (residual)
    let mut dh2 = vec![0.0; n * w];
    let mut datt = vec![0.0; n * w];
    for i in 0..n {
        let dh3i = &dh3[i * w..(i + 1) * w];
        outer_acc(&mut grad[l.ow.clone()], dh3i, &cache.att[i * w..(i + 1) * w]);
        matvec_t_acc(&th[l.ow.clone()], w, w, dh3i, &mut datt[i * w..(i + 1) * w]);
        acc(&mut dh2[i * w..(i + 1) * w], dh3i);
    }
    let dhd = w / h.heads;
    let scale = 1.0 / (dhd as f64).sqrt();
    let mut dq = vec![0.0; n * w];
    let mut dk = vec![0.0; n * w];
    let mut dv = vec![0.0; n * w];
    let mut da = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for m in 0..h.heads {
        let c0 = m * dhd;
        let rows = &cache.attn[m];
        for i in 0..n {
            let row = &rows[i * n..(i + 1) * n];
            let datti = &datt[i * w + c0..i * w + c0 + dhd];
            let mut inner = 0.0;
            for j in 0..n {
                let vj = &cache.v[j * w + c0..j * w + c0 + dhd];
                let d: f64 = datti.iter().zip(vj).map(|(a, b)| a * b).sum();
                da[j] = d;
                inner += row[j] * d;
                let dvj = &mut dv[j * w + c0..j * w + c0 + dhd];
                for dd in 0..dhd {
                    dvj[dd] += row[j] * datti[dd];
                }
            }
            let qi: Vec<f64> = cache.q[i * w + c0..i * w + c0 + dhd].to_vec();
            let dqi = &mut dq[i * w + c0..i * w + c0 + dhd];
            for j in 0..n {
                ds[j] = row[j] * (da[j] - inner) * scale;
                let kj = &cache.k[j * w + c0..j * w + c0 + dhd];
                for dd in 0..dhd {
                    dqi[dd] += ds[j] * kj[dd];
                }
                let dkj = &mut dk[j * w + c0..j * w + c0 + dhd];
                for dd in 0..dhd {
                    dkj[dd] += ds[j] * qi[dd];
                }
            }
        }
    }
    for i in 0..n {
        let h2i = &cache.h2[i * w..(i + 1) * w];
        let dqi = &dq[i * w..(i + 1) * w];
        let dki = &dk[i * w..(i + 1) * w];
        let dvi = &dv[i * w..(i + 1) * w];
        outer_acc(&mut grad[l.qw.clone()], dqi, h2i);
        outer_acc(&mut grad[l.kw.clone()], dki, h2i);
        outer_acc(&mut grad[l.vw.clone()], dvi, h2i);
        let dh2i = &mut dh2[i * w..(i + 1) * w];
        matvec_t_acc(&th[l.qw.clone()], w, w, dqi, dh2i);
        matvec_t_acc(&th[l.kw.clone()], w, w, dki, dh2i);
        matvec_t_acc(&th[l.vw.clone()], w, w, dvi, dh2i);
    }

    // encoder with time scale-shift
    let mut dgam1 = vec![0.0; w];
    let mut dshf1 = vec![0.0; w];
    let mut dgam2 = vec![0.0; w];
    let mut dshf2 = vec![0.0; w];
    let mut dz2 = vec![0.0; w];
    let mut dz1 = vec![0.0; w];
    let mut dh1 = vec![0.0; w];
    for i in 0..n {
        let dh2i = &dh2[i * w..(i + 1) * w];
        let a2i = &cache.a2[i * w..(i + 1) * w];
        let h1i = &cache.h1[i * w..(i + 1) * w];
        let a1i = &cache.a1[i * w..(i + 1) * w];
        let xi = &cache.x[i * 3..(i + 1) * 3];
        for r in 0..w {
            dgam2[r] += dh2i[r] * a2i[r];
            dshf2[r] += dh2i[r];
            dz2[r] = dh2i[r] * (1.0 + cache.gam2[r]) * (1.0 - a2i[r] * a2i[r]);
        }
        outer_acc(&mut grad[l.e2w.clone()], &dz2, h1i);
        acc(&mut grad[l.e2b.clone()], &dz2);
        dh1.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&th[l.e2w.clone()], w, w, &dz2, &mut dh1);
        for r in 0..w {
            dgam1[r] += dh1[r] * a1i[r];
            dshf1[r] += dh1[r];
            dz1[r] = dh1[r] * (1.0 + cache.gam1[r]) * (1.0 - a1i[r] * a1i[r]);
        }
        outer_acc(&mut grad[l.e1w.clone()], &dz1, xi);
        acc(&mut grad[l.e1b.clone()], &dz1);
    }

    if h.time_conditioning {
        let mut dp = Vec::with_capacity(4 * w);
        dp.extend_from_slice(&dgam1);
        dp.extend_from_slice(&dshf1);
        dp.extend_from_slice(&dgam2);
        dp.extend_from_slice(&dshf2);
        outer_acc(&mut grad[l.tw.clone()], &dp, &cache.cond);
        acc(&mut grad[l.tb.clone()], &dp);
    }

    grad
}

/// Squared-error imitation loss between the predicted next shape and the
/// target frame, with its exact parameter gradient.
pub fn training_loss(
    model: &RegressorModel,
    from: &Shape,
    to: &Shape,
    t: usize,
    big_t: usize,
    latent: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    if from.len() != to.len() {
        return Err(Error::VertexCountMismatch(from.len(), to.len()));
    }
    let cache = forward_cache(model, &from.vertices, t, big_t, latent)?;
    let n = cache.n;
    let mut loss = 0.0;
    let mut dout = vec![0.0; n * 3];
    for i in 0..n {
        for a in 0..3 {
            let pred = from.vertices[i][a] + cache.out[i * 3 + a];
            let diff = pred - to.vertices[i][a];
            loss += diff * diff;
            dout[i * 3 + a] = 2.0 * diff;
        }
    }
    Ok((loss, backward(model, &cache, &dout)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LrSchedule {
    Cosine,
    Constant,
}

/// Optimizer and loop settings for imitation training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Reference profile: 100k iterations, batch 32, lr 2e-4, decoupled
    /// weight decay 1e-6, cosine decay.
    pub fn reference() -> Self {
        TrainConfig {
            iterations: 100_000,
            batch_size: 32,
            lr: 2e-4,
            weight_decay: 1e-6,
            schedule: LrSchedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Adam-style optimizer state, exposed so checkpoints can resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        OptimizerState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// Trains the model to map each equispaced frame at time t to the frame at
/// t - i (the sampling direction). Returns the per-iteration batch loss.
pub fn train(
    model: &mut RegressorModel,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut opt = OptimizerState::new(model.theta.len());
    train_resumable(model, trajectories, cfg, &mut opt)
}

/// Training loop against explicit optimizer state, for checkpoint resume.
pub fn train_resumable(
    model: &mut RegressorModel,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    model.validate()?;
    if trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let interval = trajectories[0].schedule.interval;
    for traj in trajectories {
        if traj.schedule.interval != interval {
            return Err(Error::IntervalMismatch(interval, traj.schedule.interval));
        }
    }
    // adjacent equispaced pairs (trajectory, t): frame[t] -> frame[t - i]
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (ti, traj) in trajectories.iter().enumerate() {
        let big_t = traj.schedule.steps;
        for t in (interval..=big_t).step_by(interval) {
            let (from, to) = (&traj.frames[t], &traj.frames[t - interval]);
            if from.len() != to.len() {
                return Err(Error::VertexCountMismatch(from.len(), to.len()));
            }
            pairs.push((ti, t));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    let mut grad_sum = vec![0.0; model.theta.len()];
    for iter in 0..cfg.iterations {
        let lr = match cfg.schedule {
            LrSchedule::Constant => cfg.lr,
            LrSchedule::Cosine => {
                let frac = iter as f64 / cfg.iterations as f64;
                cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        };
        grad_sum.iter_mut().for_each(|v| *v = 0.0);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let (ti, t) = pairs[rng.gen_range(0..pairs.len())];
            let traj = &trajectories[ti];
            let latent = if model.hyper.latent_conditioning {
                Some(latent_code(model, &traj.frames[0])?)
            } else {
                None
            };
            let (loss, grad) = training_loss(
                model,
                &traj.frames[t],
                &traj.frames[t - interval],
                t,
                traj.schedule.steps,
                latent.as_deref(),
            )?;
            loss_sum += loss;
            acc(&mut grad_sum, &grad);
        }
        let inv_b = 1.0 / cfg.batch_size as f64;
        let batch_loss = loss_sum * inv_b;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss(iter));
        }
        opt.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(opt.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(opt.step as i32);
        for p in 0..model.theta.len() {
            let g = grad_sum[p] * inv_b;
            opt.m[p] = cfg.beta1 * opt.m[p] + (1.0 - cfg.beta1) * g;
            opt.v[p] = cfg.beta2 * opt.v[p] + (1.0 - cfg.beta2) * g * g;
            let mhat = opt.m[p] / bc1;
            let vhat = opt.v[p] / bc2;
            model.theta[p] -= lr * (mhat / (vhat.sqrt() + cfg.eps)
                + cfg.weight_decay * model.theta[p]);
        }
        history.push(batch_loss);
    }
    Ok(history)
}

/// Reverse sampling: starting at the template, apply the regressor at
/// t = T, T-i, ..., i, adding fresh noise of variance beta_t before each
/// application. Returns all T/i + 1 states, last one being the generated
/// shape.
pub fn sample<R: Rng>(
    model: &RegressorModel,
    template: &Shape,
    schedule: &DiffusionSchedule,
    latent: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<Shape>> {
    model.validate()?;
    schedule.validate()?;
    if template.is_empty() {
        return Err(Error::EmptyShape);
    }
    let big_t = schedule.steps;
    let i = schedule.interval;
    let mut x = template.clone();
    let mut states = Vec::with_capacity(big_t / i + 1);
    states.push(x.clone());
    let mut t = big_t;
    while t >= i {
        let std = schedule.beta[t - 1].sqrt();
        let noised: Vec<Vec3> = x
            .vertices
            .iter()
            .map(|p| p + Vec3::new(normal(rng), normal(rng), normal(rng)) * std)
            .collect();
        let noised = x.with_vertices(noised);
        let offsets = model_forward(model, &noised, t, big_t, latent)?;
        let next: Vec<Vec3> = noised
            .vertices
            .iter()
            .zip(&offsets)
            .map(|(p, o)| p + o)
            .collect();
        if next.iter().any(|p| !p.x.is_finite() || !p.y.is_finite() || !p.z.is_finite()) {
            return Err(Error::NonFiniteOutput);
        }
        x = noised.with_vertices(next);
        states.push(x.clone());
        t -= i;
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::RegularizerWeights;
    use crate::kernel::{run_trajectory, TrajectoryMode};
    use crate::primitives::sample_ellipsoid;

    fn tiny_hyper() -> ModelHyper {
        ModelHyper {
            width: 8,
            embed_dim: 8,
            heads: 2,
            time_conditioning: true,
            latent_conditioning: false,
        }
    }

    fn cloud(n: usize, seed: u64) -> Shape {
        sample_ellipsoid(n, Vec3::new(1.0, 0.7, 0.5), seed)
    }

    #[test]
    fn time_feature_contract() {
        let f = time_features(0, 500, 8).unwrap();
        assert_eq!(f, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(time_features(1, 500, 7).is_err());
        assert!(time_features(501, 500, 8).is_err());

        // pairwise distinct across the whole schedule
        let feats: Vec<Vec<f64>> = (0..=500).map(|t| time_features(t, 500, 64).unwrap()).collect();
        for a in 0..feats.len() {
            for b in a + 1..feats.len() {
                assert_ne!(feats[a], feats[b], "t={a} and t={b} collide");
            }
        }
    }

    #[test]
    fn param_count_and_zero_init_identity() {
        let model = RegressorModel::new(tiny_hyper(), 1).unwrap();
        assert_eq!(model.theta.len(), model.hyper.param_count());
        let x = cloud(12, 2);
        let offsets = model_forward(&model, &x, 250, 500, None).unwrap();
        assert!(offsets.iter().all(|o| o.norm() == 0.0));
    }

    #[test]
    fn hyper_validation() {
        let mut h = tiny_hyper();
        h.heads = 3;
        assert!(h.validate().is_err());
        let mut h = tiny_hyper();
        h.embed_dim = 7;
        assert!(h.validate().is_err());
        let mut h = tiny_hyper();
        h.latent_conditioning = true;
        h.time_conditioning = false;
        assert!(h.validate().is_err());
    }

    fn randomize(model: &mut RegressorModel, seed: u64) {
        // fills the zero-initialized segments too, so tests exercise every path
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut model.theta {
            *v += normal(&mut rng) * 0.3;
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut model = RegressorModel::new(tiny_hyper(), 3).unwrap();
        randomize(&mut model, 4);
        let x = cloud(17, 5);
        let base = model_forward(&model, &x, 100, 500, None).unwrap();

        let perm: Vec<usize> = (0..17).map(|i| (i * 5 + 3) % 17).collect();
        let px = x.with_vertices(perm.iter().map(|&i| x.vertices[i]).collect());
        let pout = model_forward(&model, &px, 100, 500, None).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            let d = (pout[slot] - base[src]).norm();
            assert!(d < 1e-12, "vertex {src} moved by {d} under permutation");
        }
    }

    /// Straight-line re-implementation of the forward pass, written
    /// independently of the cached production version.
    fn naive_forward(model: &RegressorModel, x: &Shape, t: usize, big_t: usize) -> Vec<Vec3> {
        let h = model.hyper;
        let w = h.width;
        let n = x.len();
        let l = model.layout();
        let th = &model.theta;
        let get = |r: &Range<usize>| th[r.clone()].to_vec();
        let mv = |wm: &[f64], xin: &[f64]| -> Vec<f64> {
            let cols = xin.len();
            (0..wm.len() / cols)
                .map(|r| (0..cols).map(|c| wm[r * cols + c] * xin[c]).sum())
                .collect()
        };
        let feats = time_features(t, big_t, h.embed_dim).unwrap();
        let p: Vec<f64> = mv(&get(&l.tw), &feats)
            .iter()
            .zip(&get(&l.tb))
            .map(|(a, b)| a + b)
            .collect();
        let (g1, s1, g2, s2) = (&p[..w], &p[w..2 * w], &p[2 * w..3 * w], &p[3 * w..]);

        let mut h2all: Vec<Vec<f64>> = Vec::new();
        for pnt in &x.vertices {
            let h1: Vec<f64> = mv(&get(&l.e1w), &[pnt.x, pnt.y, pnt.z])
                .iter()
                .enumerate()
                .map(|(r, v)| (v + get(&l.e1b)[r]).tanh() * (1.0 + g1[r]) + s1[r])
                .collect();
            let h2: Vec<f64> = mv(&get(&l.e2w), &h1)
                .iter()
                .enumerate()
                .map(|(r, v)| (v + get(&l.e2b)[r]).tanh() * (1.0 + g2[r]) + s2[r])
                .collect();
            h2all.push(h2);
        }
        let q: Vec<Vec<f64>> = h2all.iter().map(|h2| mv(&get(&l.qw), h2)).collect();
        let k: Vec<Vec<f64>> = h2all.iter().map(|h2| mv(&get(&l.kw), h2)).collect();
        let v: Vec<Vec<f64>> = h2all.iter().map(|h2| mv(&get(&l.vw), h2)).collect();
        let dh = w / h.heads;
        let mut h3all: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            let mut att = vec![0.0; w];
            for m in 0..h.heads {
                let c0 = m * dh;
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh).map(|d| q[i][c0 + d] * k[j][c0 + d]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..n {
                    for d in 0..dh {
                        att[c0 + d] += exps[j] / z * v[j][c0 + d];
                    }
                }
            }
            let proj = mv(&get(&l.ow), &att);
            h3all.push((0..w).map(|r| h2all[i][r] + proj[r]).collect());
        }
        let pool: Vec<f64> = (0..w)
            .map(|r| h3all.iter().map(|h3| h3[r]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut out = Vec::new();
        for h3 in &h3all {
            let mut c = h3.clone();
            c.extend_from_slice(&pool);
            let a4: Vec<f64> = mv(&get(&l.d1w), &c)
                .iter()
                .enumerate()
                .map(|(r, v)| (v + get(&l.d1b)[r]).tanh())
                .collect();
            let a5: Vec<f64> = mv(&get(&l.d2w), &a4)
                .iter()
                .enumerate()
                .map(|(r, v)| (v + get(&l.d2b)[r]).tanh())
                .collect();
            let o = mv(&get(&l.d3w), &a5);
            out.push(Vec3::new(
                o[0] + get(&l.d3b)[0],
                o[1] + get(&l.d3b)[1],
                o[2] + get(&l.d3b)[2],
            ));
        }
        out
    }

    #[test]
    fn forward_matches_independent_evaluator() {
        let mut model = RegressorModel::new(tiny_hyper(), 6).unwrap();
        randomize(&mut model, 7);
        let x = cloud(5, 8);
        let fast = model_forward(&model, &x, 120, 500, None).unwrap();
        let slow = naive_forward(&model, &x, 120, 500);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn loss_trivial_cases() {
        let model = RegressorModel::new(tiny_hyper(), 9).unwrap();
        let x = cloud(10, 10);
        // zero-init model, target = input: exact zero loss and gradient
        let (loss, grad) = training_loss(&model, &x, &x, 50, 100, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));

        let y = cloud(11, 10);
        assert!(matches!(
            training_loss(&model, &x, &y, 50, 100, None),
            Err(Error::VertexCountMismatch(10, 11))
        ));
    }

    #[test]
    fn loss_invariant_under_joint_permutation() {
        let mut model = RegressorModel::new(tiny_hyper(), 11).unwrap();
        randomize(&mut model, 12);
        let from = cloud(13, 13);
        let to = cloud(13, 14);
        let (l0, _) = training_loss(&model, &from, &to, 40, 100, None).unwrap();
        let perm: Vec<usize> = (0..13).map(|i| (i * 6 + 1) % 13).collect();
        let pf = from.with_vertices(perm.iter().map(|&i| from.vertices[i]).collect());
        let pt = to.with_vertices(perm.iter().map(|&i| to.vertices[i]).collect());
        let (l1, _) = training_loss(&model, &pf, &pt, 40, 100, None).unwrap();
        assert!((l0 - l1).abs() < 1e-10 * l0.max(1.0));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut model = RegressorModel::new(tiny_hyper(), 15).unwrap();
        randomize(&mut model, 16);
        let from = cloud(5, 17);
        let to = cloud(5, 18);
        let (_, grad) = training_loss(&model, &from, &to, 30, 100, None).unwrap();
        let h = 1e-4;
        let gscale = grad.iter().map(|g| g.abs()).sum::<f64>() / grad.len() as f64;
        for p in 0..model.theta.len() {
            let orig = model.theta[p];
            model.theta[p] = orig + h;
            let (lp, _) = training_loss(&model, &from, &to, 30, 100, None).unwrap();
            model.theta[p] = orig - h;
            let (lm, _) = training_loss(&model, &from, &to, 30, 100, None).unwrap();
            model.theta[p] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (grad[p] - fd).abs() / grad[p].abs().max(fd.abs()).max(1e-3 * gscale + 1e-10);
            assert!(err < 1e-3, "param {p}: analytic {} vs fd {fd}", grad[p]);
        }
    }

    #[test]
    fn latent_conditioning_contract() {
        let hyper = ModelHyper {
            latent_conditioning: true,
            ..tiny_hyper()
        };
        let mut model = RegressorModel::new(hyper, 19).unwrap();
        randomize(&mut model, 20);
        let x = cloud(9, 21);
        let code = latent_code(&model, &x).unwrap();
        assert_eq!(code.len(), model.hyper.width);
        assert!(model_forward(&model, &x, 10, 100, Some(&code)).is_ok());
        assert!(model_forward(&model, &x, 10, 100, None).is_err());

        // unconditioned model rejects a latent code
        let plain = RegressorModel::new(tiny_hyper(), 22).unwrap();
        assert!(model_forward(&plain, &x, 10, 100, Some(&code)).is_err());

        // different shapes give different codes
        let other = latent_code(&model, &cloud(9, 23)).unwrap();
        assert_ne!(code, other);
    }

    fn tiny_trajectory(seed: u64, steps: usize, interval: usize) -> Trajectory {
        let source = cloud(16, seed);
        let w = RegularizerWeights::point_cloud();
        let sched =
            DiffusionSchedule::constant(steps, 0.01, interval, TrajectoryMode::AnchoredDrift, seed)
                .unwrap();
        run_trajectory(&source, &source, &w, &sched).unwrap()
    }

    #[test]
    fn train_input_validation() {
        let mut model = RegressorModel::new(tiny_hyper(), 24).unwrap();
        let cfg = TrainConfig {
            iterations: 1,
            batch_size: 1,
            seed: 1,
            ..TrainConfig::reference()
        };
        assert!(matches!(
            train(&mut model, &[], &cfg),
            Err(Error::EmptyDataset)
        ));
        let a = tiny_trajectory(1, 4, 2);
        let b = tiny_trajectory(2, 4, 4);
        assert!(matches!(
            train(&mut model, &[a, b], &cfg),
            Err(Error::IntervalMismatch(2, 4))
        ));
    }

    #[test]
    fn overfit_single_pair() {
        let hyper = ModelHyper {
            width: 16,
            embed_dim: 16,
            heads: 1,
            time_conditioning: true,
            latent_conditioning: false,
        };
        let mut model = RegressorModel::new(hyper, 25).unwrap();
        let traj = tiny_trajectory(3, 2, 2);
        let cfg = TrainConfig {
            iterations: 2000,
            batch_size: 1,
            lr: 3e-3,
            schedule: LrSchedule::Cosine,
            seed: 2,
            ..TrainConfig::reference()
        };
        let history = train(&mut model, std::slice::from_ref(&traj), &cfg).unwrap();
        assert_eq!(history.len(), 2000);
        assert!(history.iter().all(|l| l.is_finite()));
        let initial = history[0];
        let fin = *history.last().unwrap();
        assert!(
            fin < 1e-3 * initial,
            "failed to overfit: initial {initial}, final {fin}"
        );
    }

    #[test]
    fn sample_identity_counts_and_replay() {
        let model = RegressorModel::new(tiny_hyper(), 26).unwrap();
        let template = cloud(14, 27);
        let sched = DiffusionSchedule::constant(
            500,
            0.0,
            50,
            TrajectoryMode::TemplateDescent,
            5,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states = sample(&model, &template, &sched, None, &mut rng).unwrap();
        // 10 network applications plus the template itself
        assert_eq!(states.len(), 11);
        // untrained identity model with noise off returns the template
        assert_eq!(states.last().unwrap().vertices, template.vertices);

        let noisy = DiffusionSchedule::constant(
            500,
            0.01,
            50,
            TrajectoryMode::TemplateDescent,
            5,
        )
        .unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let s1 = sample(&model, &template, &noisy, None, &mut r1).unwrap();
        let s2 = sample(&model, &template, &noisy, None, &mut r2).unwrap();
        assert_eq!(
            s1.last().unwrap().vertices,
            s2.last().unwrap().vertices
        );
        assert_ne!(s1.last().unwrap().vertices, template.vertices);
    }

    #[test]
    fn train_then_sample_reproduces_target() {
        // one noiseless descent trajectory; the composed sampler should land
        // near frame 0
        let template = cloud(24, 30);
        let source = template.with_vertices(
            template
                .vertices
                .iter()
                .map(|p| Vec3::new(p.x * 0.8, p.y * 1.2, p.z * 0.9))
                .collect(),
        );
        let w = RegularizerWeights::point_cloud();
        let sched =
            DiffusionSchedule::constant(40, 0.0, 10, TrajectoryMode::TemplateDescent, 31).unwrap();
        let traj = run_trajectory(&source, &template, &w, &sched).unwrap();

        let hyper = ModelHyper {
            width: 16,
            embed_dim: 16,
            heads: 1,
            time_conditioning: true,
            latent_conditioning: false,
        };
        let mut model = RegressorModel::new(hyper, 32).unwrap();
        let cfg = TrainConfig {
            iterations: 3000,
            batch_size: 4,
            lr: 3e-3,
            seed: 3,
            ..TrainConfig::reference()
        };
        train(&mut model, std::slice::from_ref(&traj), &cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let states = sample(&model, &template, &sched, None, &mut rng).unwrap();
        let generated = states.last().unwrap();
        let d = crate::energy::chamfer(generated, &traj.frames[0]).unwrap();
        let baseline = crate::energy::chamfer(&template, &traj.frames[0]).unwrap();
        assert!(
            d < 0.1 * baseline,
            "generated chamfer {d} not below 10% of template baseline {baseline}"
        );
    }
}
