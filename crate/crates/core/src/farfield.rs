//! Normalized far-field cuts radiated by solved segment currents.
//!
//! Each segment is a current moment `I_m l_m` at its midpoint, so
//! `E(r) ~ sum I_m l_m [l_m - (r.l_m) r] exp(+j k r.r_m)`. The spherical
//! spreading factor and the `-j w mu0 / 4 pi` prefactor are common to every
//! direction and dropped. Angles: theta from +z, phi from +x toward +y.

use nalgebra::{DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec3, WireMesh};

/// Samples whose power is within this relative distance of the maximum count as peaks.
pub const PEAK_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// phi sweeps [0, 360) at fixed theta.
    Phi,
    /// theta sweeps [0, 180] at fixed phi.
    Theta,
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi" => Ok(Plane::Phi),
            "theta" => Ok(Plane::Theta),
            other => Err(Error::Config {
                key: "plane".into(),
                message: format!("expected phi or theta, got {other:?}"),
            }),
        }
    }
}

/// Unit vector for spherical angles in degrees.
pub fn direction(theta_deg: f64, phi_deg: f64) -> Vec3 {
    let (st, ct) = theta_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

/// Far field of the segments in `subset` toward the unit vector `dir`.
pub fn far_field(
    currents: &DVector<Complex64>,
    mesh: &WireMesh,
    subset: &[usize],
    dir: &Vec3,
    k: f64,
) -> Result<Vector3<Complex64>> {
    if currents.len() != mesh.num_segments() {
        return Err(Error::Dimension(format!(
            "{} currents for {} segments",
            currents.len(),
            mesh.num_segments()
        )));
    }
    if !((dir.norm() - 1.0).abs() <= 1e-12) {
        return Err(Error::Geometry(format!(
            "far-field direction must be a unit vector, |r| = {}",
            dir.norm()
        )));
    }
    let mut e = Vector3::<Complex64>::zeros();
    for &m in subset {
        let seg = mesh.segments.get(m).ok_or_else(|| {
            Error::Dimension(format!("segment {m} out of range"))
        })?;
        let l = seg.direction;
        let transverse = l - dir * dir.dot(&l);
        let phase = Complex64::from_polar(1.0, k * dir.dot(&seg.midpoint()));
        let moment = currents[m] * seg.length * phase;
        e += transverse.map(|v| moment * v);
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSample {
    pub angle: f64,
    pub e: Vector3<Complex64>,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternCut {
    pub plane: Plane,
    pub fixed_angle: f64,
    pub samples: Vec<PatternSample>,
    /// Peak `|E|^2` the gains are referred to.
    pub normalization: f64,
}

impl PatternCut {
    /// Angle of the strongest sample; near-ties go to the smallest angle.
    pub fn peak_angle(&self) -> f64 {
        let floor = self.normalization * (1.0 - PEAK_TIE_TOLERANCE);
        self.samples
            .iter()
            .find(|s| s.e.norm_squared() >= floor)
            .map(|s| s.angle)
            .unwrap_or(f64::NAN)
    }

    pub fn angles(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.angle).collect()
    }
}

/// Sample angles of a cut with `n_points` points.
pub fn cut_angles(plane: Plane, n_points: usize) -> Vec<f64> {
    match plane {
        Plane::Phi => (0..n_points).map(|i| 360.0 * i as f64 / n_points as f64).collect(),
        Plane::Theta => (0..n_points)
            .map(|i| 180.0 * i as f64 / (n_points - 1) as f64)
            .collect(),
    }
}

/// Uniformly sampled cut, normalized to its own peak.
pub fn pattern_cut(
    currents: &DVector<Complex64>,
    mesh: &WireMesh,
    subset: &[usize],
    k: f64,
    plane: Plane,
    fixed_angle: f64,
    n_points: usize,
) -> Result<PatternCut> {
    if n_points < 2 {
        return Err(Error::Config {
            key: "points".into(),
            message: format!("need at least 2 samples, got {n_points}"),
        });
    }
    let fields = cut_angles(plane, n_points)
        .into_par_iter()
        .map(|angle| {
            let dir = match plane {
                Plane::Phi => direction(fixed_angle, angle),
                Plane::Theta => direction(angle, fixed_angle),
            };
            far_field(currents, mesh, subset, &dir, k).map(|e| (angle, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let peak = fields
        .iter()
        .map(|(_, e)| e.norm_squared())
        .fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Degenerate(format!(
            "far field vanishes or is not finite over the cut (peak |E|^2 = {peak:e})"
        )));
    }
    let samples = fields
        .into_iter()
        .map(|(angle, e)| PatternSample {
            angle,
            gain_db: 10.0 * (e.norm_squared() / peak).log10(),
            e,
        })
        .collect();
    Ok(PatternCut {
        plane,
        fixed_angle,
        samples,
        normalization: peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::wavelength;
    use crate::geometry::{mesh_dipole, Dipole, Role};
    use approx::assert_relative_eq;

    fn short_dipole() -> (WireMesh, f64) {
        let lambda = wavelength(28e9);
        let d = Dipole::z_directed(Vec3::zeros(), lambda / 50.0, Role::Ris, 0).unwrap();
        (mesh_dipole(&d, 3, lambda / 2000.0, 0).unwrap(), 2.0 * std::f64::consts::PI / lambda)
    }

    fn unit_currents(n: usize) -> DVector<Complex64> {
        DVector::from_element(n, Complex64::new(1.0, 0.0))
    }

    #[test]
    fn direction_is_unit() {
        for (t, p) in [(0.0, 0.0), (90.0, 60.0), (104.05, 359.0)] {
            assert_relative_eq!(direction(t, p).norm(), 1.0, epsilon = 1e-15);
        }
        assert_relative_eq!(direction(90.0, 90.0).y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn non_unit_direction_rejected() {
        let (mesh, k) = short_dipole();
        let i = unit_currents(3);
        let all: Vec<usize> = (0..3).collect();
        assert!(far_field(&i, &mesh, &all, &Vec3::new(1.0, 1.0, 0.0), k).is_err());
    }

    #[test]
    fn axial_null_of_z_dipole() {
        let (mesh, k) = short_dipole();
        let i = unit_currents(3);
        let all: Vec<usize> = (0..3).collect();
        let e = far_field(&i, &mesh, &all, &Vec3::z(), k).unwrap();
        assert!(e.norm() < 1e-12);
    }

    #[test]
    fn transversality() {
        let (mesh, k) = short_dipole();
        let i = DVector::from_fn(3, |m, _| Complex64::new(1.0 + m as f64, -0.3 * m as f64));
        let all: Vec<usize> = (0..3).collect();
        for t in (0..=180).step_by(15) {
            for p in (0..360).step_by(30) {
                let r = direction(t as f64, p as f64);
                let e = far_field(&i, &mesh, &all, &r, k).unwrap();
                let radial = e.x * r.x + e.y * r.y + e.z * r.z;
                assert!(radial.norm() <= 1e-12 * e.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn phi_sampling_excludes_endpoint() {
        let a = cut_angles(Plane::Phi, 361);
        assert_eq!(a.len(), 361);
        assert_eq!(a[0], 0.0);
        assert_relative_eq!(a[1], 360.0 / 361.0);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        let b = cut_angles(Plane::Phi, 360);
        assert_eq!(b[90], 90.0);
        let t = cut_angles(Plane::Theta, 181);
        assert_eq!((t[0], t[180]), (0.0, 180.0));
    }

    #[test]
    fn normalized_peak_is_zero_db() {
        let (mesh, k) = short_dipole();
        let cut = pattern_cut(&unit_currents(3), &mesh, &[0, 1, 2], k, Plane::Theta, 0.0, 181).unwrap();
        let max = cut.samples.iter().map(|s| s.gain_db).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 0.0);
        assert!(cut.samples.iter().all(|s| s.gain_db <= 0.0));
        assert_eq!(cut.peak_angle(), 90.0);
    }

    #[test]
    fn too_few_points_rejected() {
        let (mesh, k) = short_dipole();
        assert!(pattern_cut(&unit_currents(3), &mesh, &[0], k, Plane::Phi, 90.0, 1).is_err());
    }

    #[test]
    fn empty_subset_is_degenerate() {
        let (mesh, k) = short_dipole();
        assert!(matches!(
            pattern_cut(&unit_currents(3), &mesh, &[], k, Plane::Phi, 90.0, 8),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn plane_parses() {
        assert_eq!("phi".parse::<Plane>().unwrap(), Plane::Phi);
        assert_eq!("theta".parse::<Plane>().unwrap(), Plane::Theta);
        assert!("rho".parse::<Plane>().is_err());
    }
}
