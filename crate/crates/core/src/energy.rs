//! The five shape-regularization energies, the combined deformation
//! objective, and its exact analytic gradient with respect to vertex
//! positions.
//!
//! All terms are sums, not means; the weights absorb scale. Gradients follow
//! the semi-gradient convention: nearest-neighbor correspondences, neighbor
//! lists, per-vertex normals, and the pre-step Laplacian coordinates are
//! frozen in an [`EnergyContext`] for the duration of one evaluation and
//! refreshed between steps. Finite-difference checks must use the same
//! frozen context (and frozen Chamfer assignments) to agree.

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::shape::{
    build_neighborhood, compute_normals, laplacian_coordinates, Neighborhood, NeighborhoodMode,
    Shape, ShapeKind, Vec3,
};

/// The λ vector, λ_c, and the deformation step size η.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegularizerWeights {
    pub lambda_n: f64,
    pub lambda_l: f64,
    pub lambda_e: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub eta: f64,
}

impl RegularizerWeights {
    /// Point-cloud profile: supervised Chamfer plus the anti-clustering term.
    pub fn point_cloud() -> Self {
        RegularizerWeights {
            lambda_n: 0.0,
            lambda_l: 0.0,
            lambda_e: 0.0,
            lambda_p: 0.01,
            lambda_c: 1.0,
            eta: 1.0,
        }
    }

    /// Mesh profile: all five terms active.
    pub fn mesh() -> Self {
        RegularizerWeights {
            lambda_n: 0.01,
            lambda_l: 0.15,
            lambda_e: 0.8,
            lambda_p: 0.01,
            lambda_c: 1.0,
            eta: 1.0,
        }
    }

    /// Face profile: mesh weights with a smaller step size.
    pub fn face() -> Self {
        RegularizerWeights {
            eta: 0.1,
            ..Self::mesh()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda_n", self.lambda_n),
            ("lambda_l", self.lambda_l),
            ("lambda_e", self.lambda_e),
            ("lambda_p", self.lambda_p),
            ("lambda_c", self.lambda_c),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::InvalidWeights(format!(
                "eta must be finite and > 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Per-term energy values and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    pub chamfer: f64,
    pub normal: f64,
    pub laplacian: f64,
    pub edge: f64,
    pub potential: f64,
}

impl EnergyReport {
    pub fn zero() -> Self {
        EnergyReport {
            total: 0.0,
            chamfer: 0.0,
            normal: 0.0,
            laplacian: 0.0,
            edge: 0.0,
            potential: 0.0,
        }
    }
}

/// Frozen Chamfer correspondences: `fwd[i]` is the nearest anchor point of
/// vertex i, `rev[j]` the nearest vertex of anchor point j.
#[derive(Debug, Clone)]
pub struct ChamferAssignments {
    pub fwd: Vec<usize>,
    pub rev: Vec<usize>,
}

pub fn chamfer_assignments(p: &Shape, q: &Shape) -> Result<ChamferAssignments> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyShape);
    }
    let tree_q = KdTree::build(&q.vertices);
    let tree_p = KdTree::build(&p.vertices);
    Ok(ChamferAssignments {
        fwd: p.vertices.iter().map(|&v| tree_q.nearest(v).0).collect(),
        rev: q.vertices.iter().map(|&v| tree_p.nearest(v).0).collect(),
    })
}

/// Symmetric sum of squared nearest-neighbor distances.
pub fn chamfer(p: &Shape, q: &Shape) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyShape);
    }
    let tree_q = KdTree::build(&q.vertices);
    let tree_p = KdTree::build(&p.vertices);
    let fwd: f64 = p.vertices.iter().map(|&v| tree_q.nearest(v).1).sum();
    let rev: f64 = q.vertices.iter().map(|&v| tree_p.nearest(v).1).sum();
    Ok(fwd + rev)
}

/// Chamfer value under frozen correspondences.
pub fn chamfer_frozen(p: &Shape, q: &Shape, assign: &ChamferAssignments) -> f64 {
    let fwd: f64 = p
        .vertices
        .iter()
        .zip(&assign.fwd)
        .map(|(&v, &j)| (v - q.vertices[j]).norm_squared())
        .sum();
    let rev: f64 = q
        .vertices
        .iter()
        .zip(&assign.rev)
        .map(|(&v, &i)| (p.vertices[i] - v).norm_squared())
        .sum();
    fwd + rev
}

/// Normal consistency: squared projections of neighbor offsets onto the
/// (frozen) vertex normal. Zero only on planar patches.
pub fn normal_consistency(
    shape: &Shape,
    neighborhood: &Neighborhood,
    normals: &[Vec3],
) -> Result<f64> {
    if normals.len() != shape.len() {
        return Err(Error::MissingNormals);
    }
    let mut total = 0.0;
    for (i, nbrs) in neighborhood.lists.iter().enumerate() {
        for &k in nbrs {
            let dot = (shape.vertices[i] - shape.vertices[k]).dot(&normals[i]);
            total += dot * dot;
        }
    }
    Ok(total)
}

/// Laplacian regularization: squared change of the Laplacian coordinates
/// relative to `deltas_before` (computed on the pre-step shape with the same
/// neighborhood).
pub fn laplacian_reg(
    after: &Shape,
    deltas_before: &[Vec3],
    neighborhood: &Neighborhood,
) -> Result<f64> {
    if deltas_before.len() != after.len() {
        return Err(Error::VertexCountMismatch(deltas_before.len(), after.len()));
    }
    let deltas_after = laplacian_coordinates(after, neighborhood)?;
    Ok(deltas_after
        .iter()
        .zip(deltas_before)
        .map(|(a, b)| (a - b).norm_squared())
        .sum())
}

/// Convenience wrapper taking the pre-step shape directly.
pub fn laplacian_reg_between(
    before: &Shape,
    after: &Shape,
    neighborhood: &Neighborhood,
) -> Result<f64> {
    if before.len() != after.len() {
        return Err(Error::VertexCountMismatch(before.len(), after.len()));
    }
    let deltas = laplacian_coordinates(before, neighborhood)?;
    laplacian_reg(after, &deltas, neighborhood)
}

/// Edge length regularization over edge-connected neighbors; each undirected
/// edge is counted from both endpoints, as the double sum implies.
pub fn edge_length_reg(shape: &Shape, neighborhood: &Neighborhood) -> Result<f64> {
    if neighborhood.mode != NeighborhoodMode::EdgeConnected {
        return Err(Error::NoEdges);
    }
    let mut total = 0.0;
    for (i, nbrs) in neighborhood.lists.iter().enumerate() {
        for &k in nbrs {
            total += (shape.vertices[i] - shape.vertices[k]).norm_squared();
        }
    }
    Ok(total)
}

/// Potential energy regularization: 1/(1+d^2) summed over ordered neighbor
/// pairs. Penalizes clustering; applies to k-nearest neighborhoods whether
/// or not the shape has edges.
pub fn potential_energy_reg(shape: &Shape, neighborhood: &Neighborhood) -> Result<f64> {
    let mut total = 0.0;
    for (i, nbrs) in neighborhood.lists.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::EmptyNeighborList(i));
        }
        for &k in nbrs {
            total += 1.0 / (1.0 + (shape.vertices[i] - shape.vertices[k]).norm_squared());
        }
    }
    Ok(total)
}

/// Frozen evaluation context for one deformation step: the neighbor lists,
/// normals, and pre-step Laplacian coordinates the semi-gradient holds
/// constant. Only what the nonzero weights need is built.
#[derive(Debug, Clone)]
pub struct EnergyContext {
    /// Neighborhood for the normal and Laplacian terms: edge-connected on
    /// meshes, k-nearest on point clouds.
    pub reg_neighborhood: Option<Neighborhood>,
    /// Edge-connected neighborhood for the edge-length term.
    pub edge_neighborhood: Option<Neighborhood>,
    /// k-nearest neighborhood for the potential term (also on meshes).
    pub knn_neighborhood: Option<Neighborhood>,
    pub normals: Option<Vec<Vec3>>,
    pub deltas: Option<Vec<Vec3>>,
}

impl EnergyContext {
    /// Freezes neighborhoods, normals, and Laplacian coordinates of `shape`
    /// as required by the nonzero weights. `k` is the k-nearest size.
    pub fn build(shape: &Shape, weights: &RegularizerWeights, k: usize) -> Result<Self> {
        let is_mesh = shape.kind == ShapeKind::Mesh && shape.edges.is_some();
        let needs_knn = weights.lambda_p > 0.0
            || (!is_mesh && (weights.lambda_n > 0.0 || weights.lambda_l > 0.0));
        let needs_edge =
            weights.lambda_e > 0.0 || (is_mesh && (weights.lambda_n > 0.0 || weights.lambda_l > 0.0));

        let knn = if needs_knn {
            Some(build_neighborhood(shape, NeighborhoodMode::KNearest(k))?)
        } else {
            None
        };
        let edge = if needs_edge {
            Some(build_neighborhood(shape, NeighborhoodMode::EdgeConnected)?)
        } else {
            None
        };
        let reg = if is_mesh { edge.clone() } else { knn.clone() };

        let mut ctx = EnergyContext {
            reg_neighborhood: reg,
            edge_neighborhood: edge,
            knn_neighborhood: knn,
            normals: None,
            deltas: None,
        };
        ctx.refresh(shape, weights)?;
        Ok(ctx)
    }

    /// Refreshes the frozen normals and pre-step Laplacian coordinates for a
    /// new step without rebuilding the neighbor lists.
    pub fn refresh(&mut self, shape: &Shape, weights: &RegularizerWeights) -> Result<()> {
        self.normals = if weights.lambda_n > 0.0 {
            let nb = self
                .reg_neighborhood
                .as_ref()
                .ok_or(Error::MissingNormals)?;
            Some(compute_normals(shape, nb)?)
        } else {
            None
        };
        self.deltas = if weights.lambda_l > 0.0 {
            let nb = self
                .reg_neighborhood
                .as_ref()
                .ok_or(Error::EmptyNeighborList(0))?;
            Some(laplacian_coordinates(shape, nb)?)
        } else {
            None
        };
        Ok(())
    }
}

/// Combined deformation objective at `x` against the frozen context.
/// Chamfer is evaluated with fresh nearest neighbors; see
/// [`total_energy_frozen`] for the assignment-frozen variant the gradient
/// differentiates.
pub fn total_energy(
    x: &Shape,
    anchor: &Shape,
    weights: &RegularizerWeights,
    ctx: &EnergyContext,
) -> Result<EnergyReport> {
    let assign = if weights.lambda_c > 0.0 {
        Some(chamfer_assignments(x, anchor)?)
    } else {
        None
    };
    energy_with(x, anchor, weights, ctx, assign.as_ref())
}

/// Combined objective with Chamfer correspondences frozen to `assign`.
pub fn total_energy_frozen(
    x: &Shape,
    anchor: &Shape,
    weights: &RegularizerWeights,
    ctx: &EnergyContext,
    assign: &ChamferAssignments,
) -> Result<EnergyReport> {
    energy_with(x, anchor, weights, ctx, Some(assign))
}

fn energy_with(
    x: &Shape,
    anchor: &Shape,
    weights: &RegularizerWeights,
    ctx: &EnergyContext,
    assign: Option<&ChamferAssignments>,
) -> Result<EnergyReport> {
    let mut report = EnergyReport::zero();
    if weights.lambda_c > 0.0 {
        report.chamfer = match assign {
            Some(a) => chamfer_frozen(x, anchor, a),
            None => chamfer(x, anchor)?,
        };
    }
    if weights.lambda_n > 0.0 {
        let nb = ctx.reg_neighborhood.as_ref().ok_or(Error::MissingNormals)?;
        let normals = ctx.normals.as_ref().ok_or(Error::MissingNormals)?;
        report.normal = normal_consistency(x, nb, normals)?;
    }
    if weights.lambda_l > 0.0 {
        let nb = ctx
            .reg_neighborhood
            .as_ref()
            .ok_or(Error::EmptyNeighborList(0))?;
        let deltas = ctx.deltas.as_ref().ok_or(Error::EmptyNeighborList(0))?;
        report.laplacian = laplacian_reg(x, deltas, nb)?;
    }
    if weights.lambda_e > 0.0 {
        let nb = ctx.edge_neighborhood.as_ref().ok_or(Error::NoEdges)?;
        report.edge = edge_length_reg(x, nb)?;
    }
    if weights.lambda_p > 0.0 {
        let nb = ctx
            .knn_neighborhood
            .as_ref()
            .ok_or(Error::EmptyNeighborList(0))?;
        report.potential = potential_energy_reg(x, nb)?;
    }
    report.total = weights.lambda_n * report.normal
        + weights.lambda_l * report.laplacian
        + weights.lambda_e * report.edge
        + weights.lambda_p * report.potential
        + weights.lambda_c * report.chamfer;
    Ok(report)
}

/// Exact analytic gradient of the combined objective with respect to every
/// vertex of `x`, under the frozen context and frozen Chamfer assignments.
pub fn total_gradient(
    x: &Shape,
    anchor: &Shape,
    weights: &RegularizerWeights,
    ctx: &EnergyContext,
    assign: Option<&ChamferAssignments>,
) -> Result<Vec<Vec3>> {
    let n = x.len();
    let mut grad = vec![Vec3::zeros(); n];

    if weights.lambda_c > 0.0 {
        let owned;
        let a = match assign {
            Some(a) => a,
            None => {
                owned = chamfer_assignments(x, anchor)?;
                &owned
            }
        };
        let w = weights.lambda_c;
        for (i, &j) in a.fwd.iter().enumerate() {
            grad[i] += w * 2.0 * (x.vertices[i] - anchor.vertices[j]);
        }
        for (j, &i) in a.rev.iter().enumerate() {
            grad[i] += w * 2.0 * (x.vertices[i] - anchor.vertices[j]);
        }
    }

    if weights.lambda_n > 0.0 {
        let nb = ctx.reg_neighborhood.as_ref().ok_or(Error::MissingNormals)?;
        let normals = ctx.normals.as_ref().ok_or(Error::MissingNormals)?;
        let w = weights.lambda_n;
        for (i, nbrs) in nb.lists.iter().enumerate() {
            for &k in nbrs {
                let dot = (x.vertices[i] - x.vertices[k]).dot(&normals[i]);
                let g = w * 2.0 * dot * normals[i];
                grad[i] += g;
                grad[k] -= g;
            }
        }
    }

    if weights.lambda_l > 0.0 {
        let nb = ctx
            .reg_neighborhood
            .as_ref()
            .ok_or(Error::EmptyNeighborList(0))?;
        let deltas0 = ctx.deltas.as_ref().ok_or(Error::EmptyNeighborList(0))?;
        let deltas1 = laplacian_coordinates(x, nb)?;
        let w = weights.lambda_l;
        for (i, nbrs) in nb.lists.iter().enumerate() {
            let diff = w * 2.0 * (deltas1[i] - deltas0[i]);
            grad[i] += diff;
            let share = diff / nbrs.len() as f64;
            for &k in nbrs {
                grad[k] -= share;
            }
        }
    }

    if weights.lambda_e > 0.0 {
        let nb = ctx.edge_neighborhood.as_ref().ok_or(Error::NoEdges)?;
        let w = weights.lambda_e;
        for (i, nbrs) in nb.lists.iter().enumerate() {
            for &k in nbrs {
                let g = w * 2.0 * (x.vertices[i] - x.vertices[k]);
                grad[i] += g;
                grad[k] -= g;
            }
        }
    }

    if weights.lambda_p > 0.0 {
        let nb = ctx
            .knn_neighborhood
            .as_ref()
            .ok_or(Error::EmptyNeighborList(0))?;
        let w = weights.lambda_p;
        for (i, nbrs) in nb.lists.iter().enumerate() {
            for &k in nbrs {
                let d = x.vertices[i] - x.vertices[k];
                let denom = 1.0 + d.norm_squared();
                let g = w * (-2.0 / (denom * denom)) * d;
                grad[i] += g;
                grad[k] -= g;
            }
        }
    }

    Ok(grad)
}
