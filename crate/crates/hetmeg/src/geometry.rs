//! Synthetic cortical geometry.
//!
//! The cortex is generated as a radial deformation of an icosphere, so the
//! sphere↔cortex correspondence is the identity on vertex indices: node `i`
//! on the cortex maps to sphere vertex `i`. That makes the spherical
//! parameterization of a patch exact and testable without any surface
//! registration machinery.

use std::collections::{BTreeSet, HashMap};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Golden angle in radians, used for Fibonacci point sets.
pub(crate) const GOLDEN_ANGLE: f64 = 2.399963229728653;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("subdivisions must be >= 2 (got {0})")]
    TooCoarse(u32),
    #[error("wrinkle amplitude {amp} out of range [0, {max}) for base radius {radius}")]
    AmplitudeOutOfRange { amp: f64, max: f64, radius: f64 },
    #[error("wrinkle frequency must be >= 1")]
    ZeroFrequency,
    #[error("perturbed radius is non-positive at vertex {vertex} (r = {radius})")]
    SelfIntersecting { vertex: usize, radius: f64 },
    #[error("mesh invariant violated: {0}")]
    InvalidMesh(String),
}

/// Triangulated unit sphere: the parameter domain `S` of the patch model.
#[derive(Debug, Clone)]
pub struct SphereMesh {
    /// Unit vectors, one per vertex.
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise (outward) vertex index triples.
    pub triangles: Vec<[u32; 3]>,
    /// Mean over undirected edges of the arc length `acos(vi . vj)`.
    pub mean_edge_arc: f64,
}

impl SphereMesh {
    /// Undirected edge list, each pair ordered `(lo, hi)`, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut set = BTreeSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Structural invariants: unit vertices, index bounds, closed orientable
    /// surface (every undirected edge shared by exactly two triangles with
    /// opposite orientation).
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len() as u32;
        for (i, v) in self.vertices.iter().enumerate() {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(GeometryError::InvalidMesh(format!(
                    "vertex {i} norm {} not unit",
                    v.norm()
                )));
            }
        }
        let mut directed = BTreeSet::new();
        for t in &self.triangles {
            for &i in t {
                if i >= n {
                    return Err(GeometryError::InvalidMesh(format!("index {i} out of range")));
                }
            }
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if !directed.insert((a, b)) {
                    return Err(GeometryError::InvalidMesh(format!(
                        "directed edge ({a},{b}) repeated; mesh not orientable"
                    )));
                }
            }
        }
        for &(a, b) in &directed {
            if !directed.contains(&(b, a)) {
                return Err(GeometryError::InvalidMesh(format!(
                    "edge ({a},{b}) lacks its opposite; mesh not closed"
                )));
            }
        }
        Ok(())
    }
}

/// Cortical surface mesh with its spherical parameterization.
///
/// `positions[i]` is the node on the cortex, `sphere.vertices[i]` its image
/// on the unit sphere. Normals are the analytic outward normals of the
/// perturbed surface, not the radial directions: inside a spherical
/// conductor a radial dipole is magnetically silent, so radial normals
/// would make every source invisible.
#[derive(Debug, Clone)]
pub struct CorticalMesh {
    pub sphere: SphereMesh,
    /// Node positions in meters.
    pub positions: Vec<Vec3>,
    /// Outward unit surface normals.
    pub normals: Vec<Vec3>,
    /// Barycentric (one-third triangle) node areas in m^2.
    pub node_areas: Vec<f64>,
    /// Conductor sphere center in meters.
    pub center: Vec3,
}

impl CorticalMesh {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn total_area(&self) -> f64 {
        self.node_areas.iter().sum()
    }

    pub fn mean_node_area(&self) -> f64 {
        self.total_area() / self.n_nodes() as f64
    }

    /// Radius of the smallest center-anchored sphere enclosing all nodes.
    pub fn enclosing_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| (p - self.center).norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.sphere.validate()?;
        let m = self.sphere.vertices.len();
        if self.positions.len() != m || self.normals.len() != m || self.node_areas.len() != m {
            return Err(GeometryError::InvalidMesh(format!(
                "field lengths differ: {} positions, {} normals, {} areas, {} sphere vertices",
                self.positions.len(),
                self.normals.len(),
                self.node_areas.len(),
                m
            )));
        }
        for (i, n) in self.normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-12 {
                return Err(GeometryError::InvalidMesh(format!("normal {i} not unit")));
            }
        }
        if let Some(i) = self.node_areas.iter().position(|&a| !(a > 0.0)) {
            return Err(GeometryError::InvalidMesh(format!(
                "node area {i} not positive: {}",
                self.node_areas[i]
            )));
        }
        let tri_area: f64 = self
            .sphere
            .triangles
            .iter()
            .map(|t| triangle_area(&self.positions, t))
            .sum();
        let node_sum = self.total_area();
        if (tri_area - node_sum).abs() > 1e-9 * tri_area.max(f64::MIN_POSITIVE) {
            return Err(GeometryError::InvalidMesh(format!(
                "node area sum {node_sum} differs from triangle area {tri_area}"
            )));
        }
        Ok(())
    }
}

fn triangle_area(positions: &[Vec3], t: &[u32; 3]) -> f64 {
    let p0 = positions[t[0] as usize];
    let e1 = positions[t[1] as usize] - p0;
    let e2 = positions[t[2] as usize] - p0;
    0.5 * e1.cross(&e2).norm()
}

/// Geodesic distance on the unit sphere, `acos(a . b)`, clamped against
/// roundoff. Symmetric, in `[0, pi]`.
pub fn geodesic_dist_on_sphere(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Cartesian point of spherical coordinates
/// `(sin t cos p, sin t sin p, cos t)`.
pub fn sphere_point(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

/// Icosphere: regular icosahedron with each triangle 4-way subdivided
/// `subdivisions` times, midpoints projected back to the sphere.
/// Vertex count is `10 * 4^s + 2`.
pub fn icosphere(subdivisions: u32) -> SphereMesh {
    let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ];
    let mut vertices: Vec<Vec3> = raw
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
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

    for _ in 0..subdivisions {
        let mut midpoint_cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let mid = |cache: &mut HashMap<(u32, u32), u32>, verts: &mut Vec<Vec3>, a: u32, b: u32| {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let m = (verts[a as usize] + verts[b as usize]).normalize();
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            let [a, b, c] = *tri;
            let ab = mid(&mut midpoint_cache, &mut vertices, a, b);
            let bc = mid(&mut midpoint_cache, &mut vertices, b, c);
            let ca = mid(&mut midpoint_cache, &mut vertices, c, a);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }

    let mut mesh = SphereMesh {
        vertices,
        triangles,
        mean_edge_arc: 0.0,
    };
    let edges = mesh.edges();
    let sum: f64 = edges
        .iter()
        .map(|&(a, b)| geodesic_dist_on_sphere(&mesh.vertices[a as usize], &mesh.vertices[b as usize]))
        .sum();
    mesh.mean_edge_arc = sum / edges.len() as f64;
    mesh
}

/// Band-limited radial perturbation of the sphere: a deterministic sum of
/// plane-wave lobes `a_k cos(w_k (v . u_k) + p_k)` with frequencies
/// `1..=n_lobes` and seeded directions, amplitudes and phases. Evaluable
/// together with its gradient anywhere on the sphere, so true surface
/// normals of the perturbed cortex are available in closed form.
#[derive(Debug, Clone)]
pub struct WrinkleField {
    lobes: Vec<Lobe>,
    scale: f64,
}

#[derive(Debug, Clone)]
struct Lobe {
    dir: Vec3,
    omega: f64,
    amp: f64,
    phase: f64,
}

impl WrinkleField {
    /// Lobes from `seed`, scaled so the peak of `rho` over a dense
    /// subdivision-independent Fibonacci sample equals `peak_amp`.
    pub fn from_seed(seed: u64, n_lobes: u32, peak_amp: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lobes = Vec::with_capacity(n_lobes as usize);
        for k in 1..=n_lobes {
            let dir = loop {
                let v = Vec3::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                );
                if v.norm() > 1e-6 {
                    break v.normalize();
                }
            };
            // 1/k amplitude falloff keeps the slope roughly flat across lobes.
            let amp = rng.gen_range(-1.0..1.0) / k as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            lobes.push(Lobe {
                dir,
                omega: k as f64,
                amp,
                phase,
            });
        }
        let mut field = WrinkleField { lobes, scale: 1.0 };
        let peak = fibonacci_sphere(4096)
            .into_iter()
            .map(|v| field.rho(&v).abs())
            .fold(0.0, f64::max);
        field.scale = if peak > 1e-300 { peak_amp / peak } else { 0.0 };
        field
    }

    /// Radial displacement at unit direction `v`.
    pub fn rho(&self, v: &Vec3) -> f64 {
        self.scale
            * self
                .lobes
                .iter()
                .map(|l| l.amp * (l.omega * v.dot(&l.dir) + l.phase).cos())
                .sum::<f64>()
    }

    /// Ambient gradient of `rho`; project out the radial component to get
    /// the surface gradient on the unit sphere.
    pub fn gradient(&self, v: &Vec3) -> Vec3 {
        self.scale
            * self
                .lobes
                .iter()
                .map(|l| -l.amp * l.omega * (l.omega * v.dot(&l.dir) + l.phase).sin() * l.dir)
                .sum::<Vec3>()
    }
}

/// Deterministic Fibonacci point set on the unit sphere.
pub(crate) fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Synthetic wrinkled-sphere cortex centered at the origin.
///
/// Node `i` sits at `(base_radius + rho(v_i)) * v_i` for sphere vertex
/// `v_i`; normals come from the radial-graph formula
/// `n ∝ f v - grad_S rho`, and node areas from one-third triangle-area
/// accumulation on the perturbed surface.
pub fn make_wrinkled_cortex(
    subdivisions: u32,
    base_radius: f64,
    wrinkle_amp: f64,
    wrinkle_freq: u32,
    seed: u64,
) -> Result<CorticalMesh, GeometryError> {
    if subdivisions < 2 {
        return Err(GeometryError::TooCoarse(subdivisions));
    }
    if !(0.0..0.3 * base_radius).contains(&wrinkle_amp) {
        return Err(GeometryError::AmplitudeOutOfRange {
            amp: wrinkle_amp,
            max: 0.3 * base_radius,
            radius: base_radius,
        });
    }
    if wrinkle_freq < 1 {
        return Err(GeometryError::ZeroFrequency);
    }

    let sphere = icosphere(subdivisions);
    let field = WrinkleField::from_seed(seed, wrinkle_freq, wrinkle_amp);
    let center = Vec3::zeros();

    let mut positions = Vec::with_capacity(sphere.vertices.len());
    let mut normals = Vec::with_capacity(sphere.vertices.len());
    for (i, v) in sphere.vertices.iter().enumerate() {
        let f = base_radius + field.rho(v);
        if f <= 0.0 {
            return Err(GeometryError::SelfIntersecting {
                vertex: i,
                radius: f,
            });
        }
        positions.push(center + f * v);
        let grad = field.gradient(v);
        let surf_grad = grad - v.dot(&grad) * v;
        normals.push((f * v - surf_grad).normalize());
    }

    let mut node_areas = vec![0.0; positions.len()];
    for t in &sphere.triangles {
        let third = triangle_area(&positions, t) / 3.0;
        for &i in t {
            node_areas[i as usize] += third;
        }
    }

    let mesh = CorticalMesh {
        sphere,
        positions,
        normals,
        node_areas,
        center,
    };
    mesh.validate()?;
    Ok(mesh)
}
