//! Shapes, neighborhoods, normals, and Laplacian coordinates.
//!
//! A [`Shape`] is a vertex set with optional triangle faces. Mesh edge
//! connectivity is derived from faces once and then frozen; point-cloud
//! neighborhoods are recomputed from positions on demand.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShapeKind {
    PointCloud,
    Mesh,
}

#[derive(Debug, Clone)]
pub struct Shape {
    pub vertices: Vec<Vec3>,
    pub faces: Option<Vec<[usize; 3]>>,
    pub edges: Option<Vec<[usize; 2]>>,
    pub normals: Option<Vec<Vec3>>,
    pub kind: ShapeKind,
}

impl Shape {
    pub fn point_cloud(vertices: Vec<Vec3>) -> Self {
        Shape {
            vertices,
            faces: None,
            edges: None,
            normals: None,
            kind: ShapeKind::PointCloud,
        }
    }

    /// Builds a mesh, validating face indices and deriving the unique
    /// undirected edge set.
    pub fn mesh(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::InvalidShape(format!(
                        "face {fi} references vertex {v} out of range [0, {n})"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidShape(format!(
                    "face {fi} repeats a vertex index"
                )));
            }
        }
        let edges = derive_edges(&faces);
        Ok(Shape {
            vertices,
            faces: Some(faces),
            edges: Some(edges),
            normals: None,
            kind: ShapeKind::Mesh,
        })
    }

    /// Same vertices replaced, connectivity and kind preserved. Stored
    /// normals are dropped since they refer to the old positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        Shape {
            vertices,
            faces: self.faces.clone(),
            edges: self.edges.clone(),
            normals: None,
            kind: self.kind,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Axis-aligned bounding box as (min, max); `None` when empty.
    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        bbox_of(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }
}

pub fn bbox_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    let mut lo = first;
    let mut hi = first;
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

fn derive_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut set = BTreeSet::new();
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            set.insert([a.min(b), a.max(b)]);
        }
    }
    set.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborhoodMode {
    EdgeConnected,
    KNearest(usize),
}

/// Per-vertex neighbor index lists.
///
/// Edge-connected lists are symmetric and sorted by index; k-nearest lists
/// are sorted by ascending distance with ties broken by lower vertex index.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub lists: Vec<Vec<usize>>,
    pub mode: NeighborhoodMode,
}

pub fn build_neighborhood(shape: &Shape, mode: NeighborhoodMode) -> Result<Neighborhood> {
    let n = shape.len();
    if n < 2 {
        return Err(Error::InvalidShape(
            "need at least 2 vertices to build a neighborhood".into(),
        ));
    }
    match mode {
        NeighborhoodMode::EdgeConnected => {
            let edges = shape.edges.as_ref().ok_or(Error::NoEdges)?;
            let mut lists = vec![BTreeSet::new(); n];
            for e in edges {
                lists[e[0]].insert(e[1]);
                lists[e[1]].insert(e[0]);
            }
            Ok(Neighborhood {
                lists: lists.into_iter().map(|s| s.into_iter().collect()).collect(),
                mode,
            })
        }
        NeighborhoodMode::KNearest(k) => {
            if k == 0 {
                return Err(Error::BadK);
            }
            let tree = KdTree::build(&shape.vertices);
            let lists = (0..n)
                .map(|i| tree.knn_excluding(shape.vertices[i], k, i))
                .collect();
            Ok(Neighborhood { lists, mode })
        }
    }
}

/// Per-vertex unit normals.
///
/// Meshes use the area-weighted average of incident face normals
/// (degenerate faces contribute zero weight). Point clouds use the
/// least-variance direction of the neighbor covariance, with the sign
/// matched to the previously stored normal when available, otherwise
/// oriented toward the +z hemisphere.
pub fn compute_normals(shape: &Shape, neighborhood: &Neighborhood) -> Result<Vec<Vec3>> {
    match (shape.kind, shape.faces.as_ref()) {
        (ShapeKind::Mesh, Some(faces)) => mesh_normals(shape, faces),
        _ => point_cloud_normals(shape, neighborhood),
    }
}

fn mesh_normals(shape: &Shape, faces: &[[usize; 3]]) -> Result<Vec<Vec3>> {
    let n = shape.len();
    let mut acc = vec![Vec3::zeros(); n];
    let mut incident = vec![0usize; n];
    for f in faces {
        let [a, b, c] = *f;
        // cross product length is twice the face area, so summing raw
        // cross products is the area weighting
        let fnorm = (shape.vertices[b] - shape.vertices[a])
            .cross(&(shape.vertices[c] - shape.vertices[a]));
        for &v in f {
            acc[v] += fnorm;
            incident[v] += 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if incident[i] == 0 {
            return Err(Error::InvalidShape(format!(
                "vertex {i} belongs to no face"
            )));
        }
        let len = acc[i].norm();
        if len == 0.0 {
            return Err(Error::DegenerateNeighbors(i));
        }
        out.push(acc[i] / len);
    }
    Ok(out)
}

fn point_cloud_normals(shape: &Shape, neighborhood: &Neighborhood) -> Result<Vec<Vec3>> {
    let n = shape.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let nbrs = &neighborhood.lists[i];
        if nbrs.len() < 3 {
            return Err(Error::InvalidShape(format!(
                "vertex {i} has {} neighbors, point-cloud normals need >= 3",
                nbrs.len()
            )));
        }
        let mean = nbrs.iter().map(|&j| shape.vertices[j]).sum::<Vec3>() / nbrs.len() as f64;
        let mut cov = Matrix3::zeros();
        for &j in nbrs {
            let d = shape.vertices[j] - mean;
            cov += d * d.transpose();
        }
        if cov.norm() == 0.0 {
            return Err(Error::DegenerateNeighbors(i));
        }
        let eig = cov.symmetric_eigen();
        let mut min_idx = 0;
        for a in 1..3 {
            if eig.eigenvalues[a] < eig.eigenvalues[min_idx] {
                min_idx = a;
            }
        }
        let mut normal: Vec3 = eig.eigenvectors.column(min_idx).into();
        normal /= normal.norm();
        let flip = match shape.normals.as_ref().map(|ns| ns[i]) {
            Some(prev) if prev.norm() > 0.0 => normal.dot(&prev) < 0.0,
            _ => hemisphere_flip(&normal),
        };
        if flip {
            normal = -normal;
        }
        out.push(normal);
    }
    Ok(out)
}

fn hemisphere_flip(normal: &Vec3) -> bool {
    if normal.z != 0.0 {
        normal.z < 0.0
    } else if normal.x != 0.0 {
        normal.x < 0.0
    } else {
        normal.y < 0.0
    }
}

/// Laplacian coordinate of each vertex: its position minus the mean of its
/// neighbors.
pub fn laplacian_coordinates(shape: &Shape, neighborhood: &Neighborhood) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(shape.len());
    for (i, nbrs) in neighborhood.lists.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::EmptyNeighborList(i));
        }
        let mean = nbrs.iter().map(|&j| shape.vertices[j]).sum::<Vec3>() / nbrs.len() as f64;
        out.push(shape.vertices[i] - mean);
    }
    Ok(out)
}
