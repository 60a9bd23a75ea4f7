//! Forward model: sensor geometry and the leadfield matrix.
//!
//! The magnetic field of a current dipole inside a spherically symmetric
//! conductor has the closed form derived by Sarvas; volume currents are
//! accounted for analytically, and purely radial dipoles are silent. Each
//! leadfield column is the response to a unit dipole along the cortical
//! surface normal at one node.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{fibonacci_sphere, CorticalMesh, Vec3, GOLDEN_ANGLE};

/// Vacuum permeability, T·m/A.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("sensor {sensor} lies inside the conductor sphere (|r| = {radius}, conductor {conductor})")]
    SensorInsideConductor {
        sensor: usize,
        radius: f64,
        conductor: f64,
    },
    #[error("degenerate geometry for node {node}, sensor {sensor}: |F| = {f_value}")]
    DegenerateGeometry {
        node: usize,
        sensor: usize,
        f_value: f64,
    },
    #[error("dipole at node {node} lies outside the conductor model")]
    DipoleOutsideConductor { node: usize },
    #[error("helmet radius {helmet} does not enclose the cortex (max node radius {cortex})")]
    HelmetTooSmall { helmet: f64, cortex: f64 },
    #[error("cap angle {0} out of range (0, pi]")]
    BadCapAngle(f64),
    #[error("sensor count must be >= 1")]
    NoSensors,
}

/// Helmet-cap magnetometer array.
#[derive(Debug, Clone)]
pub struct SensorArray {
    /// Sensor positions in meters.
    pub positions: Vec<Vec3>,
    /// Unit measurement directions (radial for the synthetic helmet).
    pub orientations: Vec<Vec3>,
}

impl SensorArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Dense N x M map from per-node dipole moments (A·m) to sensor readings
/// (tesla). Column `j` is the response to a unit dipole along the surface
/// normal at node `j`.
#[derive(Debug, Clone)]
pub struct LeadField {
    pub matrix: DMatrix<f64>,
}

impl LeadField {
    pub fn n_sensors(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Fibonacci-spiral sensor placement on the spherical cap of half-angle
/// `cap_angle` about +z, at distance `helmet_radius` from `center`. The
/// first sensor sits exactly on the +z axis; orientations are radial.
pub fn make_helmet_array(
    n_sensors: usize,
    helmet_radius: f64,
    cap_angle: f64,
    center: Vec3,
) -> Result<SensorArray, ForwardError> {
    if n_sensors == 0 {
        return Err(ForwardError::NoSensors);
    }
    if !(cap_angle > 0.0 && cap_angle <= std::f64::consts::PI) {
        return Err(ForwardError::BadCapAngle(cap_angle));
    }
    let z_min = cap_angle.cos();
    let mut positions = Vec::with_capacity(n_sensors);
    let mut orientations = Vec::with_capacity(n_sensors);
    for i in 0..n_sensors {
        // Area-uniform spiral; a lone sensor sits exactly on the axis.
        let z = if n_sensors == 1 {
            1.0
        } else {
            1.0 - (1.0 - z_min) * (i as f64 + 0.5) / n_sensors as f64
        };
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = i as f64 * GOLDEN_ANGLE;
        let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
        positions.push(center + helmet_radius * dir);
        orientations.push(dir);
    }
    Ok(SensorArray {
        positions,
        orientations,
    })
}

/// Magnetic field (tesla) at `sensor_pos` of a current dipole with moment
/// `dipole_moment` (A·m) at `dipole_pos` inside a spherically symmetric
/// conductor centered at `conductor_center`:
///
/// with r = sensor - center, r0 = dipole - center, a = r - r0,
///   F      = a (r a + r^2 - r0·r)
///   grad F = (a^2/r + a·r/a + 2a + 2r) r - (a + 2r + a·r/a) r0
///   B      = mu0 / (4 pi F^2) * (F (Q x r0) - ((Q x r0)·r) grad F)
///
/// Exactly linear in the moment; radial dipoles produce zero field.
pub fn dipole_field_sarvas(
    dipole_pos: &Vec3,
    dipole_moment: &Vec3,
    sensor_pos: &Vec3,
    conductor_center: &Vec3,
) -> Result<Vec3, ForwardError> {
    let r = sensor_pos - conductor_center;
    let r0 = dipole_pos - conductor_center;
    let a_vec = r - r0;
    let a = a_vec.norm();
    let r_norm = r.norm();

    let f = a * (r_norm * a + r_norm * r_norm - r0.dot(&r));
    if f.abs() < 1e-30 {
        return Err(ForwardError::DegenerateGeometry {
            node: 0,
            sensor: 0,
            f_value: f,
        });
    }
    let a_dot_r = a_vec.dot(&r);
    let grad_f = (a * a / r_norm + a_dot_r / a + 2.0 * a + 2.0 * r_norm) * r
        - (a + 2.0 * r_norm + a_dot_r / a) * r0;
    let q_cross_r0 = dipole_moment.cross(&r0);
    let b = (MU_0 / (4.0 * std::f64::consts::PI * f * f))
        * (f * q_cross_r0 - q_cross_r0.dot(&r) * grad_f);
    Ok(b)
}

/// Assemble the leadfield: entry (i, j) is the field component along
/// sensor i's orientation produced by a unit dipole (1 A·m) along the
/// surface normal at node j. Rows are filled independently, each by the
/// same fixed-order arithmetic, so the result is identical for any thread
/// count.
pub fn build_leadfield(mesh: &CorticalMesh, sensors: &SensorArray) -> Result<LeadField, ForwardError> {
    let conductor = mesh.enclosing_radius();
    for (i, p) in sensors.positions.iter().enumerate() {
        let radius = (p - mesh.center).norm();
        if radius <= conductor {
            return Err(ForwardError::SensorInsideConductor {
                sensor: i,
                radius,
                conductor,
            });
        }
    }

    let n = sensors.len();
    let m = mesh.n_nodes();
    let rows: Vec<Result<Vec<f64>, ForwardError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; m];
            for (j, item) in row.iter_mut().enumerate() {
                let b = dipole_field_sarvas(
                    &mesh.positions[j],
                    &mesh.normals[j],
                    &sensors.positions[i],
                    &mesh.center,
                )
                .map_err(|e| match e {
                    ForwardError::DegenerateGeometry { f_value, .. } => {
                        ForwardError::DegenerateGeometry {
                            node: j,
                            sensor: i,
                            f_value,
                        }
                    }
                    other => other,
                })?;
                *item = sensors.orientations[i].dot(&b);
            }
            Ok(row)
        })
        .collect();

    let mut matrix = DMatrix::zeros(n, m);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(LeadField { matrix })
}

/// Uniformly spread interior evaluation points for forward-model checks:
/// Fibonacci directions at a fixed fraction of the conductor radius.
pub fn interior_probe_points(mesh: &CorticalMesh, n: usize) -> Vec<Vec3> {
    let r = 0.7 * mesh.enclosing_radius();
    fibonacci_sphere(n)
        .into_iter()
        .map(|v| mesh.center + r * v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_wrinkled_cortex;
    use approx::assert_relative_eq;

    #[test]
    fn single_sensor_sits_on_axis() {
        let arr = make_helmet_array(1, 0.12, 1.3, Vec3::zeros()).unwrap();
        assert_eq!(arr.len(), 1);
        assert_relative_eq!(arr.positions[0].z, 0.12, max_relative = 1e-15);
        assert!(arr.positions[0].x.abs() < 1e-15);
        assert!(arr.positions[0].y.abs() < 1e-15);
    }

    #[test]
    fn helmet_separation_near_uniform() {
        // Oracle: exhaustive pairwise check against the hex-packing scale
        // sqrt(cap solid angle / n).
        let n = 128;
        let cap = 2.0;
        let arr = make_helmet_array(n, 1.0, cap, Vec3::zeros()).unwrap();
        let mut min_sep = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = crate::geometry::geodesic_dist_on_sphere(
                    &arr.positions[i].normalize(),
                    &arr.positions[j].normalize(),
                );
                min_sep = min_sep.min(d);
            }
        }
        let solid_angle = 2.0 * std::f64::consts::PI * (1.0 - cap.cos());
        let expected = (solid_angle / n as f64).sqrt();
        assert!(
            min_sep > 0.8 * expected,
            "min separation {min_sep} below 0.8 * {expected}"
        );
    }

    #[test]
    fn full_cap_covers_sphere() {
        let n = 256;
        let arr = make_helmet_array(n, 1.0, std::f64::consts::PI, Vec3::zeros()).unwrap();
        let mean: Vec3 = arr.positions.iter().sum::<Vec3>() / n as f64;
        assert!(mean.norm() < 0.02, "mean offset {} too large", mean.norm());
        let min_z = arr.positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!(min_z < -0.99, "south pole not reached: {min_z}");
    }

    #[test]
    fn radial_dipole_is_silent() {
        let center = Vec3::zeros();
        let r0 = Vec3::new(0.02, -0.03, 0.05);
        let q = 2.5 * r0;
        let sensor = Vec3::new(0.0, 0.05, 0.12);
        let b = dipole_field_sarvas(&r0, &q, &sensor, &center).unwrap();
        assert!(b.norm() < 1e-18, "radial dipole field {}", b.norm());
    }

    #[test]
    fn field_linear_in_moment() {
        let center = Vec3::zeros();
        let r0 = Vec3::new(0.01, 0.02, 0.06);
        let q = Vec3::new(1e-8, -2e-8, 0.5e-8);
        let sensor = Vec3::new(0.03, -0.04, 0.11);
        let b1 = dipole_field_sarvas(&r0, &q, &sensor, &center).unwrap();
        let b2 = dipole_field_sarvas(&r0, &(2.0 * q), &sensor, &center).unwrap();
        assert_relative_eq!(2.0 * b1.x, b2.x, max_relative = 1e-14);
        assert_relative_eq!(2.0 * b1.y, b2.y, max_relative = 1e-14);
        assert_relative_eq!(2.0 * b1.z, b2.z, max_relative = 1e-14);
    }

    /// Oracle 1: B is the gradient of the scalar potential
    /// phi(r) = mu0/(4 pi) * (Q x r0)·r / F(r); central differences of phi
    /// validate the closed-form grad F algebra.
    #[test]
    fn field_matches_potential_gradient() {
        let center = Vec3::zeros();
        let sarvas_potential = |r0: &Vec3, q: &Vec3, r: &Vec3| {
            let a_vec = r - r0;
            let a = a_vec.norm();
            let rn = r.norm();
            let f = a * (rn * a + rn * rn - r0.dot(r));
            MU_0 / (4.0 * std::f64::consts::PI) * q.cross(r0).dot(r) / f
        };
        let cases = [
            (Vec3::new(0.0, 0.0, 0.07), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.12)),
            (Vec3::new(0.03, 0.01, 0.05), Vec3::new(0.0, 1.0, 0.3), Vec3::new(0.08, -0.02, 0.10)),
            (Vec3::new(-0.02, 0.04, 0.03), Vec3::new(0.7, -0.7, 0.1), Vec3::new(-0.05, 0.09, 0.09)),
        ];
        let h = 1e-6;
        for (r0, q, sensor) in cases {
            let b = dipole_field_sarvas(&r0, &q, &sensor, &center).unwrap();
            for axis in 0..3 {
                let mut e = Vec3::zeros();
                e[axis] = h;
                let fd = (sarvas_potential(&r0, &q, &(sensor + e))
                    - sarvas_potential(&r0, &q, &(sensor - e)))
                    / (2.0 * h);
                assert_relative_eq!(b[axis], fd, max_relative = 1e-3, epsilon = 1e-18);
            }
        }
    }

    /// Oracle 2: outside a spherical conductor the radial field component
    /// equals the Biot-Savart field of the primary dipole alone (volume
    /// currents are radially silent).
    #[test]
    fn radial_component_matches_biot_savart() {
        let center = Vec3::zeros();
        let cases = [
            (Vec3::new(0.0, 0.0, 0.07), Vec3::new(1e-8, 0.0, 0.0), Vec3::new(0.05, 0.02, 0.11)),
            (Vec3::new(0.02, -0.03, 0.05), Vec3::new(0.0, 1e-8, 1e-9), Vec3::new(-0.07, 0.04, 0.09)),
        ];
        for (r0, q, sensor) in cases {
            let b = dipole_field_sarvas(&r0, &q, &sensor, &center).unwrap();
            let rel = sensor - r0;
            let primary = MU_0 / (4.0 * std::f64::consts::PI) * q.cross(&rel) / rel.norm().powi(3);
            let r_hat = sensor.normalize();
            assert_relative_eq!(
                b.dot(&r_hat),
                primary.dot(&r_hat),
                max_relative = 1e-10,
                epsilon = 1e-25
            );
        }
    }

    #[test]
    fn perfect_sphere_leadfield_is_zero() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.0, 3, 1).unwrap();
        let sensors = make_helmet_array(16, 0.12, 2.0, mesh.center).unwrap();
        let lf = build_leadfield(&mesh, &sensors).unwrap();
        let max = lf.matrix.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        assert!(max < 1e-20, "radial-normal leadfield max entry {max}");
    }

    #[test]
    fn wrinkled_leadfield_columns_mostly_active() {
        let mesh = make_wrinkled_cortex(3, 0.08, 0.008, 6, 7).unwrap();
        let sensors = make_helmet_array(64, 0.12, 2.0, mesh.center).unwrap();
        let lf = build_leadfield(&mesh, &sensors).unwrap();
        let active = (0..lf.n_nodes())
            .filter(|&j| lf.matrix.column(j).norm() > 0.0)
            .count();
        assert!(
            active as f64 >= 0.99 * lf.n_nodes() as f64,
            "only {active}/{} columns active",
            lf.n_nodes()
        );
    }

    #[test]
    fn leadfield_linear_in_source() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.008, 4, 3).unwrap();
        let sensors = make_helmet_array(8, 0.12, 2.0, mesh.center).unwrap();
        let lf = build_leadfield(&mesh, &sensors).unwrap();
        let j = nalgebra::DVector::from_fn(mesh.n_nodes(), |i, _| (i as f64 * 0.37).sin());
        let d1 = &lf.matrix * &j;
        let d2 = &lf.matrix * (2.0 * &j);
        for i in 0..d1.len() {
            assert_relative_eq!(2.0 * d1[i], d2[i], max_relative = 1e-14);
        }
    }

    #[test]
    fn deeper_nodes_have_weaker_columns() {
        // Spearman rank correlation between column norm and distance to the
        // nearest sensor must be negative.
        let mesh = make_wrinkled_cortex(3, 0.08, 0.008, 6, 7).unwrap();
        let sensors = make_helmet_array(64, 0.12, 2.0, mesh.center).unwrap();
        let lf = build_leadfield(&mesh, &sensors).unwrap();
        let norms: Vec<f64> = (0..lf.n_nodes()).map(|j| lf.matrix.column(j).norm()).collect();
        let depth: Vec<f64> = mesh
            .positions
            .iter()
            .map(|p| {
                sensors
                    .positions
                    .iter()
                    .map(|s| (p - s).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let rho = spearman(&norms, &depth);
        assert!(rho < 0.0, "Spearman correlation {rho} not negative");
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let ra = ranks(a);
        let rb = ranks(b);
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..a.len() {
            num += (ra[i] - mean) * (rb[i] - mean);
            da += (ra[i] - mean).powi(2);
            db += (rb[i] - mean).powi(2);
        }
        num / (da.sqrt() * db.sqrt())
    }

    #[test]
    fn leadfield_is_thread_count_invariant() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.008, 4, 5).unwrap();
        let sensors = make_helmet_array(16, 0.12, 2.0, mesh.center).unwrap();
        let parallel = build_leadfield(&mesh, &sensors).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| build_leadfield(&mesh, &sensors).unwrap());
        assert_eq!(
            parallel.matrix.as_slice(),
            serial.matrix.as_slice(),
            "leadfield differs between thread counts"
        );
    }

    #[test]
    fn rejects_sensor_inside_conductor() {
        let mesh = make_wrinkled_cortex(2, 0.08, 0.008, 4, 5).unwrap();
        let sensors = make_helmet_array(4, 0.05, 2.0, mesh.center).unwrap();
        assert!(matches!(
            build_leadfield(&mesh, &sensors),
            Err(ForwardError::SensorInsideConductor { .. })
        ));
    }
}
