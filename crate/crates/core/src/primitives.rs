//! Template and synthetic shape construction: icospheres plus a few
//! deterministic surface samplers used by the CLI and the test suite.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::normal;
use crate::shape::{Shape, Vec3};

pub const MAX_ICOSPHERE_LEVEL: u32 = 7;

/// Unit-radius icosphere: an icosahedron with `level` rounds of midpoint
/// subdivision, vertices re-normalized onto the sphere. Vertex count is
/// `10 * 4^level + 2`.
pub fn icosphere(level: u32) -> Result<Shape> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(Error::LevelTooHigh(level, MAX_ICOSPHERE_LEVEL));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let [a, b, c] = *f;
            let ab = midpoint(&mut vertices, &mut midpoints, a, b);
            let bc = midpoint(&mut vertices, &mut midpoints, b, c);
            let ca = midpoint(&mut vertices, &mut midpoints, c, a);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    Shape::mesh(vertices, faces)
}

fn midpoint(
    vertices: &mut Vec<Vec3>,
    cache: &mut HashMap<(usize, usize), usize>,
    a: usize,
    b: usize,
) -> usize {
    let key = (a.min(b), a.max(b));
    *cache.entry(key).or_insert_with(|| {
        let m = ((vertices[a] + vertices[b]) / 2.0).normalize();
        vertices.push(m);
        vertices.len() - 1
    })
}

/// Area-uniform random samples on an axis-aligned ellipsoid surface, via
/// rejection from the direction-uniform distribution.
pub fn sample_ellipsoid(n: usize, axes: Vec3, seed: u64) -> Shape {
    let (a, b, c) = (axes.x, axes.y, axes.z);
    let wmax = (a * b).max(b * c).max(a * c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let u = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
        if u.norm() == 0.0 {
            continue;
        }
        let u = u.normalize();
        // surface stretch of the sphere->ellipsoid map along direction u
        let w = ((b * c * u.x).powi(2) + (a * c * u.y).powi(2) + (a * b * u.z).powi(2)).sqrt();
        if rng.gen::<f64>() <= w / wmax {
            pts.push(Vec3::new(a * u.x, b * u.y, c * u.z));
        }
    }
    Shape::point_cloud(pts)
}

/// Area-uniform random samples on the surface of an axis-aligned box
/// centered at the origin with half-extents `half`.
pub fn sample_box(n: usize, half: Vec3, seed: u64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas = [
        half.y * half.z, // +-x faces
        half.x * half.z,
        half.x * half.y,
    ];
    let total: f64 = areas.iter().sum();
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let axis = if r < areas[0] {
            0
        } else if r < areas[0] + areas[1] {
            1
        } else {
            2
        };
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mut p = Vec3::new(
            (rng.gen::<f64>() * 2.0 - 1.0) * half.x,
            (rng.gen::<f64>() * 2.0 - 1.0) * half.y,
            (rng.gen::<f64>() * 2.0 - 1.0) * half.z,
        );
        p[axis] = sign * half[axis];
        pts.push(p);
    }
    Shape::point_cloud(pts)
}

/// Area-uniform random samples on a torus with major radius `major` and
/// minor radius `minor`, lying in the xy plane.
pub fn sample_torus(n: usize, major: f64, minor: f64, seed: u64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let u = rng.gen::<f64>() * std::f64::consts::TAU;
        let v = rng.gen::<f64>() * std::f64::consts::TAU;
        // area element is proportional to (major + minor cos v)
        let w = (major + minor * v.cos()) / (major + minor);
        if rng.gen::<f64>() <= w {
            let r = major + minor * v.cos();
            pts.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    Shape::point_cloud(pts)
}

/// Random smooth star-shaped surface: directions drawn uniformly on the
/// sphere, radius modulated by a random quadratic form. Used as the
/// "randomized smooth shape" family in tests.
pub fn sample_smooth_blob(n: usize, seed: u64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = [[0.0f64; 3]; 3];
    for row in &mut q {
        for entry in row.iter_mut() {
            *entry = normal(&mut rng) * 0.15;
        }
    }
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let d = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
        if d.norm() == 0.0 {
            continue;
        }
        let d = d.normalize();
        let mut quad = 0.0;
        for (i, row) in q.iter().enumerate() {
            for (j, &entry) in row.iter().enumerate() {
                quad += d[i] * entry * d[j];
            }
        }
        pts.push(d * (1.0 + quad));
    }
    Shape::point_cloud(pts)
}

/// Deterministic quasi-uniform sphere cloud (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Shape {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let pts = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = std::f64::consts::TAU * (i as f64 / golden).fract();
            Vec3::new(r * theta.cos(), r * theta.sin(), z)
        })
        .collect();
    Shape::point_cloud(pts)
}

/// Isotropic Gaussian cloud with the given per-axis standard deviation.
pub fn gaussian_cloud(n: usize, sigma: f64, seed: u64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Shape::point_cloud(
        (0..n)
            .map(|_| Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * sigma)
            .collect(),
    )
}
