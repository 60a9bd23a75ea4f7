//! Recovery quality metrics. The paper-style figure comparison is made
//! quantitative: geodesic center error on the sphere, radius and
//! amplitude errors, Dice overlap of patch node sets, Pearson correlation
//! of the background estimate, and the relative data residual.

use nalgebra::DVector;

use crate::geometry::{geodesic_dist_on_sphere, CorticalMesh, Vec3};

/// Quantitative recovery scores; fields that do not apply to a method
/// (e.g. radius error for the imaging baseline) are NaN.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    /// Geodesic distance on the sphere between true and estimated centers,
    /// radians.
    pub center_error: f64,
    /// |r0_hat - r0|, radians.
    pub radius_error: f64,
    /// |j0_hat - j0| / |j0|.
    pub amplitude_rel_error: f64,
    /// 2 |A ∩ B| / (|A| + |B|) over patch node sets.
    pub dice: f64,
    /// Pearson correlation between estimated and true background.
    pub background_corr: f64,
    /// ||d - L J_hat|| / ||d||.
    pub residual_rel: f64,
}

impl Metrics {
    pub const CSV_FIELDS: [&'static str; 6] = [
        "center_error",
        "radius_error",
        "amplitude_rel_error",
        "dice",
        "background_corr",
        "residual_rel",
    ];

    pub fn csv_values(&self) -> Vec<String> {
        vec![
            format!("{}", self.center_error),
            format!("{}", self.radius_error),
            format!("{}", self.amplitude_rel_error),
            format!("{}", self.dice),
            format!("{}", self.background_corr),
            format!("{}", self.residual_rel),
        ]
    }
}

/// Nodes inside the spherical cap: smeared indicator above 1/2, i.e.
/// sphere-side distance strictly below the radius.
pub fn patch_node_set(mesh: &CorticalMesh, s0: &Vec3, r0: f64) -> Vec<usize> {
    mesh.sphere
        .vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| geodesic_dist_on_sphere(v, s0) < r0)
        .map(|(i, _)| i)
        .collect()
}

/// Imaging patch extraction rule: nodes whose amplitude exceeds half the
/// 95th-percentile magnitude. Deterministic and recorded so Dice is
/// comparable across methods.
pub fn imaging_node_set(amplitudes: &DVector<f64>) -> Vec<usize> {
    let m = amplitudes.len();
    if m == 0 {
        return Vec::new();
    }
    let mut mags: Vec<f64> = amplitudes.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.95 * m as f64).ceil() as usize).clamp(1, m) - 1;
    let q95 = mags[idx];
    if q95 == 0.0 {
        return Vec::new();
    }
    let threshold = 0.5 * q95;
    amplitudes
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Dice set-overlap score; zero when both sets are empty.
pub fn dice(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let set: std::collections::HashSet<usize> = a.iter().copied().collect();
    let inter = b.iter().filter(|i| set.contains(i)).count();
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return f64::NAN;
    }
    let ma = a.rows(0, n).mean();
    let mb = b.rows(0, n).mean();
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    num / (va.sqrt() * vb.sqrt())
}

/// Spherical centroid of a node set (on the parameter sphere); None when
/// the set is empty or degenerate.
pub fn sphere_centroid(mesh: &CorticalMesh, nodes: &[usize]) -> Option<Vec3> {
    if nodes.is_empty() {
        return None;
    }
    let sum: Vec3 = nodes.iter().map(|&i| mesh.sphere.vertices[i]).sum();
    let norm = sum.norm();
    (norm > 1e-12).then(|| sum / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_wrinkled_cortex, sphere_point};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dice_identity_and_disjoint() {
        assert_eq!(dice(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(dice(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(dice(&[], &[]), 0.0);
        assert_relative_eq!(dice(&[1, 2, 3], &[2, 3, 4]), 2.0 * 2.0 / 6.0);
    }

    #[test]
    fn pearson_basic_properties() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let b = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        assert_relative_eq!(pearson(&a, &b), 1.0, epsilon = 1e-12);
        let c = DVector::from_vec(vec![-1.0, -2.0, -3.0, -4.0]);
        assert_relative_eq!(pearson(&a, &c), -1.0, epsilon = 1e-12);
        let flat = DVector::from_element(4, 3.3);
        assert!(pearson(&a, &flat).is_nan());
    }

    #[test]
    fn independent_vectors_are_uncorrelated() {
        // Null-correlation statistics at M = 10^4.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = DVector::from_fn(10_000, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(10_000, |_, _| rng.gen_range(-1.0..1.0));
        assert!(pearson(&a, &b).abs() < 0.05);
    }

    #[test]
    fn imaging_set_rule_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = DVector::from_fn(500, |_, _| rng.gen_range(-1.0..1.0));
        let s1 = imaging_node_set(&j);
        let s2 = imaging_node_set(&(&j * 1e-8));
        assert_eq!(s1, s2);
        assert!(imaging_node_set(&DVector::zeros(100)).is_empty());
    }

    #[test]
    fn patch_set_matches_indicator_threshold() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.008, 4, 7).unwrap();
        let s0 = sphere_point(0.4, -0.58);
        let set = patch_node_set(&mesh, &s0, 0.1);
        let eps = mesh.sphere.mean_edge_arc;
        let ind = crate::source_model::patch_indicator(&mesh, &s0, 0.1, eps);
        let by_ind: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| ind[i] > 0.5).collect();
        assert_eq!(set, by_ind);
    }

    #[test]
    fn centroid_of_tight_set_is_near_its_nodes() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.008, 4, 7).unwrap();
        let s0 = sphere_point(0.4, -0.58);
        let set = patch_node_set(&mesh, &s0, 0.3);
        let c = sphere_centroid(&mesh, &set).unwrap();
        assert!(geodesic_dist_on_sphere(&c, &s0) < 0.15);
        assert!(sphere_centroid(&mesh, &[]).is_none());
    }
}
