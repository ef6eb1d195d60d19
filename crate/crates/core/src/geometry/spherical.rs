use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction in the sensor frame (x forward, y left, z up).
///
/// Azimuth is measured from +x toward +y in `[-π, π)`; elevation from the
/// xy-plane toward +z in `[-π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalDirection {
    pub azimuth: f64,
    pub elevation: f64,
    pub depth: Option<f64>,
}

impl SphericalDirection {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        let d = Self {
            azimuth,
            elevation,
            depth: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::{FRAC_PI_2, PI};
        if !(-PI..PI).contains(&self.azimuth) {
            return Err(Error::invalid("direction", format!("azimuth {} outside [-pi, pi)", self.azimuth)));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&self.elevation) {
            return Err(Error::invalid(
                "direction",
                format!("elevation {} outside [-pi/2, pi/2]", self.elevation),
            ));
        }
        if let Some(d) = self.depth {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::invalid("direction", format!("depth {d} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Unit vector along the direction.
    pub fn unit_vector(&self) -> Vector3<f64> {
        let (sl, cl) = self.azimuth.sin_cos();
        let (sp, cp) = self.elevation.sin_cos();
        Vector3::new(cp * cl, cp * sl, sp)
    }
}

/// `d = |p|`, `λ = atan2(y, x)`, `φ = asin(z / d)`.
pub fn cartesian_to_spherical(p: &Vector3<f64>) -> Result<SphericalDirection> {
    let d = p.norm();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!(
            "spherical coordinates undefined for {:?}",
            p.as_slice()
        )));
    }
    let mut azimuth = p.y.atan2(p.x);
    // atan2 returns +π for (-x, +0); the convention is a half-open range.
    if azimuth >= std::f64::consts::PI {
        azimuth = -std::f64::consts::PI;
    }
    Ok(SphericalDirection {
        azimuth,
        elevation: (p.z / d).clamp(-1.0, 1.0).asin(),
        depth: Some(d),
    })
}

/// Inverse of [`cartesian_to_spherical`]; a missing depth is treated as 1.
pub fn spherical_to_cartesian(dir: &SphericalDirection) -> Vector3<f64> {
    dir.unit_vector() * dir.depth.unwrap_or(1.0)
}

/// Ground footprint length of one range-image pixel: `(h² + l²) δ / h`.
///
/// `h` is the sensor height, `l` the horizontal distance and `δ` the
/// elevation extent of the pixel.
pub fn ground_pixel_width(h: f64, l: f64, delta: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("sensor height must be positive, got {h}")));
    }
    if !(l >= 0.0) || !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "need l >= 0 and delta > 0, got l = {l}, delta = {delta}"
        )));
    }
    Ok((h * h + l * l) * delta / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn three_four_five() {
        let s = cartesian_to_spherical(&Vector3::new(3.0, 4.0, 0.0)).unwrap();
        assert_eq!(s.depth, Some(5.0));
        assert_eq!(s.azimuth, 4.0f64.atan2(3.0));
        assert_eq!(s.elevation, 0.0);
    }

    #[test]
    fn pole() {
        let s = cartesian_to_spherical(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.depth, Some(1.0));
        assert_eq!(s.elevation, FRAC_PI_2);
    }

    #[test]
    fn zero_vector_is_domain_error() {
        assert!(matches!(cartesian_to_spherical(&Vector3::zeros()), Err(Error::Domain(_))));
    }

    #[test]
    fn negative_x_axis_maps_into_half_open_range() {
        let s = cartesian_to_spherical(&Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        assert!(s.validate().is_ok());
    }

    #[test]
    fn round_trip_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..10_000 {
            // Stay away from the poles where azimuth is degenerate.
            let dir = SphericalDirection {
                azimuth: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                elevation: rng.random_range(-1.5..1.5),
                depth: Some(rng.random_range(0.5..200.0)),
            };
            let back = cartesian_to_spherical(&spherical_to_cartesian(&dir)).unwrap();
            let daz = crate::geometry::normalize_angle(back.azimuth - dir.azimuth).abs();
            max_err = max_err
                .max(daz)
                .max((back.elevation - dir.elevation).abs())
                .max((back.depth.unwrap() - dir.depth.unwrap()).abs());
        }
        assert!(max_err < 1e-9, "max round-trip error {max_err}");
    }

    #[test]
    fn ground_width_reproduces_reference_footprint() {
        // 2 m mount height, 30 m out: footprint of about 2.6 m.
        let w = ground_pixel_width(2.0, 30.0, 0.005752).unwrap();
        assert!((w - 2.60).abs() < 0.005, "w = {w}");
    }

    #[test]
    fn ground_width_directly_below_and_linearity() {
        assert_eq!(ground_pixel_width(2.0, 0.0, 0.01).unwrap(), 2.0 * 0.01);
        let a = ground_pixel_width(1.7, 12.0, 0.003).unwrap();
        let b = ground_pixel_width(1.7, 12.0, 0.006).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(ground_pixel_width(0.0, 1.0, 0.1).is_err());
        assert!(ground_pixel_width(-1.0, 1.0, 0.1).is_err());
    }
}
