//! Set-level generation metrics: Chamfer and earth-mover distances between
//! individual clouds, and MMD / coverage / 1-NNA / JSD between sets.
//!
//! Stored values are unscaled; the presentation-layer scalings (CD x10^3,
//! EMD x10, JSD x10^2) are applied only when formatting reports.

use crate::assignment::min_cost_assignment;
use crate::energy::chamfer;
use crate::error::{Error, Result};
use crate::shape::Shape;

/// Largest cloud the exact assignment solver accepts.
pub const EMD_CAP: usize = 1024;

/// Default occupancy-grid resolution per axis for JSD.
pub const JSD_RESOLUTION: usize = 28;

/// Earth mover's distance: minimum over perfect matchings of the mean
/// Euclidean distance between matched points, solved exactly.
pub fn emd(p: &Shape, q: &Shape) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyShape);
    }
    if p.len() != q.len() {
        return Err(Error::EmdCountMismatch(p.len(), q.len()));
    }
    let n = p.len();
    if n > EMD_CAP {
        return Err(Error::EmdTooLarge(n, EMD_CAP));
    }
    let mut cost = vec![0.0; n * n];
    for (i, a) in p.vertices.iter().enumerate() {
        for (j, b) in q.vertices.iter().enumerate() {
            cost[i * n + j] = (a - b).norm();
        }
    }
    let (_, total) = min_cost_assignment(&cost, n);
    Ok(total / n as f64)
}

/// Which per-pair distance underlies a set metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SetMetric {
    /// Symmetric sum of squared nearest-neighbor distances.
    Cd,
    /// Mean matched Euclidean distance.
    Emd,
}

fn pair_distance(a: &Shape, b: &Shape, metric: SetMetric) -> Result<f64> {
    match metric {
        SetMetric::Cd => chamfer(a, b),
        SetMetric::Emd => emd(a, b),
    }
}

/// D[a][b] = distance between A[a] and B[b].
pub fn pairwise_distance_matrix(
    a: &[Shape],
    b: &[Shape],
    metric: SetMetric,
) -> Result<Vec<Vec<f64>>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset);
    }
    a.iter()
        .map(|sa| b.iter().map(|sb| pair_distance(sa, sb, metric)).collect())
        .collect()
}

/// Minimum matching distance and coverage.
///
/// MMD: mean over the reference set of the distance to the closest
/// generated sample. COV: fraction of reference shapes that are the nearest
/// reference neighbor of at least one generated shape (ties toward the
/// lower reference index).
pub fn mmd_cov(
    generated: &[Shape],
    reference: &[Shape],
    metric: SetMetric,
) -> Result<(f64, f64)> {
    let d = pairwise_distance_matrix(generated, reference, metric)?;
    let r = reference.len();
    let mut mmd_sum = 0.0;
    for j in 0..r {
        let mut best = f64::INFINITY;
        for row in d.iter() {
            if row[j] < best {
                best = row[j];
            }
        }
        mmd_sum += best;
    }
    let mut covered = vec![false; r];
    for row in d.iter() {
        let mut best = (0usize, f64::INFINITY);
        for (j, &dist) in row.iter().enumerate() {
            if dist < best.1 {
                best = (j, dist);
            }
        }
        covered[best.0] = true;
    }
    let cov = covered.iter().filter(|c| **c).count() as f64 / r as f64;
    Ok((mmd_sum / r as f64, cov))
}

/// Leave-one-out 1-nearest-neighbor two-sample accuracy over the pooled
/// set (generated first, then reference); ties broken toward the lower
/// pooled index. Near 0.5 means the sets are statistically alike.
pub fn one_nna(generated: &[Shape], reference: &[Shape], metric: SetMetric) -> Result<f64> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(Error::MetricSetsTooSmall);
    }
    let pool: Vec<&Shape> = generated.iter().chain(reference.iter()).collect();
    let n = pool.len();
    let g = generated.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pair_distance(pool[i], pool[j], metric)?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut correct = 0usize;
    for i in 0..n {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = dist[i * n + j];
            if d < best.1 || (d == best.1 && j < best.0) {
                best = (j, d);
            }
        }
        if (i < g) == (best.0 < g) {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Jensen-Shannon divergence (natural log) between the two normalized
/// histograms, with 0 ln 0 taken as 0.
pub(crate) fn jsd_of_histograms(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                if x == 0.0 {
                    0.0
                } else {
                    x * (x / (0.5 * (x + y))).ln()
                }
            })
            .sum()
    };
    0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)
}

/// Pools each set's points, normalizes into the union bounding box, and
/// compares occupancy histograms on a resolution^3 grid.
pub fn jsd(generated: &[Shape], reference: &[Shape], resolution: usize) -> Result<f64> {
    if resolution < 2 {
        return Err(Error::BadResolution);
    }
    if generated.is_empty()
        || reference.is_empty()
        || generated.iter().any(Shape::is_empty)
        || reference.iter().any(Shape::is_empty)
    {
        return Err(Error::EmptyDataset);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in generated.iter().chain(reference) {
        for p in &s.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let cells = resolution * resolution * resolution;
    let histogram = |set: &[Shape]| -> Vec<f64> {
        let mut h = vec![0.0; cells];
        let mut count = 0usize;
        for s in set {
            for p in &s.vertices {
                let mut idx = 0usize;
                for a in 0..3 {
                    let extent = hi[a] - lo[a];
                    let frac = if extent > 0.0 {
                        (p[a] - lo[a]) / extent
                    } else {
                        0.0
                    };
                    let cell = ((frac * resolution as f64) as usize).min(resolution - 1);
                    idx = idx * resolution + cell;
                }
                h[idx] += 1.0;
                count += 1;
            }
        }
        for v in &mut h {
            *v /= count as f64;
        }
        h
    };
    Ok(jsd_of_histograms(&histogram(generated), &histogram(reference)))
}

/// Full set-evaluation result with configuration echo.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub mmd_cd: f64,
    pub mmd_emd: f64,
    pub cov_cd: f64,
    pub cov_emd: f64,
    pub one_nna_cd: f64,
    pub one_nna_emd: f64,
    pub jsd: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub jsd_resolution: usize,
    pub emd_cap: usize,
}

impl MetricReport {
    /// Presentation-layer scalings: CD-backed values x10^3, EMD-backed
    /// values x10, JSD x10^2. Fractions (COV, 1-NNA) are reported as-is.
    pub fn table_lines(&self) -> Vec<String> {
        vec![
            format!("MMD-CD (x1e3)   {:.6}", self.mmd_cd * 1e3),
            format!("MMD-EMD (x1e1)  {:.6}", self.mmd_emd * 1e1),
            format!("COV-CD          {:.6}", self.cov_cd),
            format!("COV-EMD         {:.6}", self.cov_emd),
            format!("1-NNA-CD        {:.6}", self.one_nna_cd),
            format!("1-NNA-EMD       {:.6}", self.one_nna_emd),
            format!("JSD (x1e2)      {:.6}", self.jsd * 1e2),
        ]
    }
}

/// Computes every metric between the two sets.
pub fn evaluate_sets(
    generated: &[Shape],
    reference: &[Shape],
    resolution: usize,
) -> Result<MetricReport> {
    let (mmd_cd, cov_cd) = mmd_cov(generated, reference, SetMetric::Cd)?;
    let (mmd_emd, cov_emd) = mmd_cov(generated, reference, SetMetric::Emd)?;
    let one_nna_cd = one_nna(generated, reference, SetMetric::Cd)?;
    let one_nna_emd = one_nna(generated, reference, SetMetric::Emd)?;
    let jsd_v = jsd(generated, reference, resolution)?;
    Ok(MetricReport {
        mmd_cd,
        mmd_emd,
        cov_cd,
        cov_emd,
        one_nna_cd,
        one_nna_emd,
        jsd: jsd_v,
        n_generated: generated.len(),
        n_reference: reference.len(),
        jsd_resolution: resolution,
        emd_cap: EMD_CAP,
    })
}
