//! Electrostatics of planar electrodes in the gapless-plane approximation.
//!
//! With the whole plane `z = 0` covered by electrodes (the remainder being
//! grounded), the potential of a patch held at 1 V is the solid angle it
//! subtends divided by 2π. Fields follow in closed form from a boundary line
//! integral over the patch edges; Hessians are central differences of the
//! closed-form field.
//!
//! All positions here are SI metres. Polygons are stored in micrometres and
//! converted when a [`FieldModel`] is built.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::constants::MICRON;
use crate::layout::{ElectrodeLayout, Polygon};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Electrode id → applied voltage. Electrodes not listed are at 0 V.
pub type Voltages = BTreeMap<String, f64>;

/// Evaluation points must sit at least this far above the plane.
pub const Z_MIN: f64 = 1e-9;

/// Closest allowed approach to an electrode edge.
pub const EDGE_GUARD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("evaluation point z = {z:e} m is not above the plane (z_min = {Z_MIN:e} m)")]
    BelowPlane { z: f64 },
    #[error("polygon has zero area")]
    DegeneratePolygon,
    #[error("unknown electrode '{0}'")]
    UnknownElectrode(String),
    #[error("evaluation point is within {EDGE_GUARD:e} m of an electrode edge")]
    Singular,
    #[error("non-finite evaluation point")]
    NonFinite,
}

/// Potential, field and Hessian of one electrode at 1 V.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisEvaluation {
    /// Dimensionless potential per volt, in (0, 1) above the plane.
    pub potential: f64,
    /// Field per volt applied (1/m).
    pub field: Vec3,
    /// Second derivatives of the potential per volt (1/m²).
    pub hessian: Mat3,
}

fn check_point(r: &Vec3) -> Result<(), FieldError> {
    if !(r.x.is_finite() && r.y.is_finite() && r.z.is_finite()) {
        return Err(FieldError::NonFinite);
    }
    if r.z <= Z_MIN {
        return Err(FieldError::BelowPlane { z: r.z });
    }
    Ok(())
}

/// Solid angle of one triangle seen from the origin (Van Oosterom & Strackee).
///
/// The sign follows the orientation of `(a, b, c)`.
pub fn triangle_solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let numerator = a.dot(&b.cross(c));
    let denominator = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
    2.0 * numerator.atan2(denominator)
}

/// One ring in SI coordinates, ready for evaluation.
#[derive(Clone, Debug)]
struct Ring {
    vertices: Vec<Vec3>,
}

impl Ring {
    fn from_polygon(poly: &Polygon) -> Self {
        Self {
            vertices: poly
                .vertices
                .iter()
                .map(|v| Vec3::new(v[0] * MICRON, v[1] * MICRON, 0.0))
                .collect(),
        }
    }

    fn edges(&self) -> impl Iterator<Item = (&Vec3, &Vec3)> {
        let n = self.vertices.len();
        (0..n).map(move |i| (&self.vertices[i], &self.vertices[(i + 1) % n]))
    }

    /// Signed solid angle: positive for counter-clockwise rings seen from above.
    ///
    /// Fan decomposition about the foot point of `r` in the plane.
    fn solid_angle(&self, r: &Vec3) -> f64 {
        let apex = Vec3::new(0.0, 0.0, -r.z);
        self.edges()
            .map(|(p, q)| triangle_solid_angle(&apex, &(q - r), &(p - r)))
            .sum()
    }

    /// Field per volt of a patch bounded by this ring, `-∇(Ω/2π)`.
    ///
    /// Each straight edge contributes `(û × R_a)(R_a·û/|R_a| − R_b·û/|R_b|)/ρ²`,
    /// the Biot–Savart integral of a finite segment.
    fn field(&self, r: &Vec3) -> Result<Vec3, FieldError> {
        let mut sum = Vec3::zeros();
        for (a, b) in self.edges() {
            let ab = b - a;
            let len = ab.norm();
            if len == 0.0 {
                continue;
            }
            let u = ab / len;
            let ra = r - a;
            let rb = r - b;
            let s = ra.dot(&u);
            let rho2 = (ra.norm_squared() - s * s).max(0.0);
            if rho2 < EDGE_GUARD * EDGE_GUARD {
                return Err(FieldError::Singular);
            }
            let k = (s / ra.norm() - rb.dot(&u) / rb.norm()) / rho2;
            sum += u.cross(&ra) * k;
        }
        Ok(sum / (2.0 * PI))
    }
}

#[derive(Clone, Debug)]
struct Electrode {
    id: String,
    rings: Vec<Ring>,
}

/// Planar polygon solid angle (steradians) as seen from `r` (metres).
///
/// The polygon is in layout units (μm). The result is in `[0, 2π]`
/// regardless of the ring's winding.
pub fn solid_angle(polygon: &Polygon, r: &Vec3) -> Result<f64, FieldError> {
    check_point(r)?;
    let area = polygon.signed_area();
    if polygon.len() < 3 || area == 0.0 || !area.is_finite() {
        return Err(FieldError::DegeneratePolygon);
    }
    Ok(Ring::from_polygon(polygon).solid_angle(r).abs())
}

/// Basis functions for every patch of a layout, in SI units.
///
/// Construction converts all rings once; evaluation is pure and may be
/// shared across threads.
#[derive(Clone, Debug)]
pub struct FieldModel {
    electrodes: Vec<Electrode>,
}

impl FieldModel {
    pub fn new(layout: &ElectrodeLayout) -> Self {
        let electrodes = layout
            .patches
            .iter()
            .map(|p| Electrode {
                id: p.id.clone(),
                rings: p.rings().map(Ring::from_polygon).collect(),
            })
            .collect();
        Self { electrodes }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.electrodes.iter().map(|e| e.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Result<usize, FieldError> {
        self.electrodes
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| FieldError::UnknownElectrode(id.to_string()))
    }

    pub fn potential_at(&self, index: usize, r: &Vec3) -> Result<f64, FieldError> {
        check_point(r)?;
        let omega: f64 = self.electrodes[index]
            .rings
            .iter()
            .map(|ring| ring.solid_angle(r))
            .sum();
        Ok(omega / (2.0 * PI))
    }

    pub fn field_at(&self, index: usize, r: &Vec3) -> Result<Vec3, FieldError> {
        check_point(r)?;
        let mut e = Vec3::zeros();
        for ring in &self.electrodes[index].rings {
            e += ring.field(r)?;
        }
        Ok(e)
    }

    /// Hessian of the potential, `∂²φ/∂xᵢ∂xⱼ = −∂Eⱼ/∂xᵢ`, by central
    /// differences of the closed-form field with step `max(1 nm, 1e-4·z)`.
    pub fn hessian_at(&self, index: usize, r: &Vec3) -> Result<Mat3, FieldError> {
        check_point(r)?;
        let h = hessian_step(r);
        let mut m = Mat3::zeros();
        for i in 0..3 {
            let mut dr = Vec3::zeros();
            dr[i] = h;
            let ep = self.field_at(index, &(r + dr))?;
            let em = self.field_at(index, &(r - dr))?;
            let col = -(ep - em) / (2.0 * h);
            m.set_row(i, &col.transpose());
        }
        Ok(symmetrize(&m))
    }

    pub fn evaluate(&self, index: usize, r: &Vec3) -> Result<BasisEvaluation, FieldError> {
        Ok(BasisEvaluation {
            potential: self.potential_at(index, r)?,
            field: self.field_at(index, r)?,
            hessian: self.hessian_at(index, r)?,
        })
    }

    pub fn basis_potential(&self, id: &str, r: &Vec3) -> Result<f64, FieldError> {
        self.potential_at(self.index_of(id)?, r)
    }

    pub fn basis_field(&self, id: &str, r: &Vec3) -> Result<Vec3, FieldError> {
        self.field_at(self.index_of(id)?, r)
    }

    pub fn basis_hessian(&self, id: &str, r: &Vec3) -> Result<Mat3, FieldError> {
        self.hessian_at(self.index_of(id)?, r)
    }

    fn weighted(&self, voltages: &Voltages) -> Result<Vec<(usize, f64)>, FieldError> {
        voltages
            .iter()
            .map(|(id, &v)| Ok((self.index_of(id)?, v)))
            .collect()
    }

    /// Superposed potential (V).
    pub fn potential(&self, voltages: &Voltages, r: &Vec3) -> Result<f64, FieldError> {
        check_point(r)?;
        let mut sum = 0.0;
        for (i, v) in self.weighted(voltages)? {
            sum += v * self.potential_at(i, r)?;
        }
        Ok(sum)
    }

    /// Superposed field (V/m).
    pub fn field(&self, voltages: &Voltages, r: &Vec3) -> Result<Vec3, FieldError> {
        check_point(r)?;
        let mut sum = Vec3::zeros();
        for (i, v) in self.weighted(voltages)? {
            sum += v * self.field_at(i, r)?;
        }
        Ok(sum)
    }

    /// Superposed Hessian of the potential (V/m²).
    pub fn hessian(&self, voltages: &Voltages, r: &Vec3) -> Result<Mat3, FieldError> {
        check_point(r)?;
        let mut sum = Mat3::zeros();
        for (i, v) in self.weighted(voltages)? {
            sum += v * self.hessian_at(i, r)?;
        }
        Ok(sum)
    }
}

pub(crate) fn hessian_step(r: &Vec3) -> f64 {
    (1e-4 * r.z).max(1e-9)
}

pub(crate) fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Convenience wrappers over a layout, building the model on each call.
pub fn basis_potential(layout: &ElectrodeLayout, id: &str, r: &Vec3) -> Result<f64, FieldError> {
    FieldModel::new(layout).basis_potential(id, r)
}

pub fn basis_field(layout: &ElectrodeLayout, id: &str, r: &Vec3) -> Result<Vec3, FieldError> {
    FieldModel::new(layout).basis_field(id, r)
}

pub fn basis_hessian(layout: &ElectrodeLayout, id: &str, r: &Vec3) -> Result<Mat3, FieldError> {
    FieldModel::new(layout).basis_hessian(id, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{ElectrodePatch, RingKind, Role};
    use approx::assert_relative_eq;

    fn um(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z) * MICRON
    }

    fn square(half: f64) -> Polygon {
        Polygon::rectangle(-half, -half, half, half, RingKind::Outer)
    }

    fn one_patch(poly: Polygon) -> ElectrodeLayout {
        ElectrodeLayout {
            name: "t".into(),
            description: String::new(),
            patches: vec![ElectrodePatch::new("a", Role::RfInner, poly, vec![])],
        }
    }

    #[test]
    fn square_solid_angle_closed_form() {
        let l = 37.0;
        let omega = solid_angle(&square(l), &um(0.0, 0.0, l)).unwrap();
        assert_relative_eq!(omega, 2.0 * PI / 3.0, max_relative = 1e-12);
        let cw = Polygon::rectangle(-l, -l, l, l, RingKind::Hole);
        assert_relative_eq!(solid_angle(&cw, &um(0.0, 0.0, l)).unwrap(), 2.0 * PI / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn solid_angle_decays_with_height() {
        let poly = Polygon::outer(vec![[0.0, 0.0], [40.0, 5.0], [55.0, 30.0], [10.0, 45.0], [-12.0, 20.0]]);
        let mut last = f64::INFINITY;
        for k in 0..30 {
            let z = 10.0 * 1.6f64.powi(k);
            let w = solid_angle(&poly, &um(8.0, 3.0, z)).unwrap();
            assert!(w < last && w > 0.0);
            last = w;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn solid_angle_rejects_bad_input() {
        let flat = Polygon::outer(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(solid_angle(&flat, &um(0.0, 0.0, 1.0)), Err(FieldError::DegeneratePolygon));
        assert!(matches!(
            solid_angle(&square(1.0), &Vec3::new(0.0, 0.0, 5e-10)),
            Err(FieldError::BelowPlane { .. })
        ));
    }

    #[test]
    fn potential_approaches_one_on_the_patch() {
        let model = FieldModel::new(&one_patch(square(100.0)));
        let phi = model.basis_potential("a", &um(3.0, -2.0, 5e-3)).unwrap();
        assert!(phi < 1.0 && (1.0 - phi) < 1e-4);
    }

    #[test]
    fn far_field_matches_dipole_asymptote() {
        let poly = Polygon::outer(vec![[0.0, 0.0], [40.0, 5.0], [55.0, 30.0], [10.0, 45.0], [-12.0, 20.0]]);
        let c = poly.centroid();
        let area = poly.signed_area() * MICRON * MICRON;
        let model = FieldModel::new(&one_patch(poly));
        let r = um(c[0] + 3000.0, c[1] - 4000.0, 20000.0);
        let rel = r - Vec3::new(c[0], c[1], 0.0) * MICRON;
        let expected = area * rel.z / (2.0 * PI * rel.norm().powi(3));
        let phi = model.basis_potential("a", &r).unwrap();
        assert_relative_eq!(phi, expected, max_relative = 1e-4);
    }

    #[test]
    fn field_is_vertical_above_symmetric_patch() {
        let model = FieldModel::new(&one_patch(square(30.0)));
        let e = model.basis_field("a", &um(0.0, 0.0, 25.0)).unwrap();
        assert!(e.x.abs() < 1e-12 * e.z.abs() && e.y.abs() < 1e-12 * e.z.abs());
        // Potential decreases upwards, so the field points up.
        assert!(e.z > 0.0);
    }

    #[test]
    fn hole_ring_subtracts() {
        let hole = Polygon::regular([0.0, 0.0], 25.0, 64, RingKind::Hole);
        let with_hole = ElectrodeLayout {
            name: "t".into(),
            description: String::new(),
            patches: vec![ElectrodePatch::new("a", Role::DcCenter, square(80.0), vec![hole.clone()])],
        };
        let r = um(4.0, 1.0, 30.0);
        let full = basis_potential(&one_patch(square(80.0)), "a", &r).unwrap();
        let disk = solid_angle(&hole, &r).unwrap() / (2.0 * PI);
        let net = basis_potential(&with_hole, "a", &r).unwrap();
        assert_relative_eq!(net, full - disk, max_relative = 1e-12);
    }

    #[test]
    fn unknown_id_is_an_error() {
        let model = FieldModel::new(&one_patch(square(1.0)));
        assert_eq!(
            model.basis_field("nope", &um(0.0, 0.0, 1.0)),
            Err(FieldError::UnknownElectrode("nope".into()))
        );
        let mut v = Voltages::new();
        v.insert("zzz".into(), 1.0);
        assert!(model.potential(&v, &um(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn hessian_is_symmetric_and_traceless() {
        let poly = Polygon::outer(vec![[0.0, 0.0], [40.0, 5.0], [55.0, 30.0], [10.0, 45.0], [-12.0, 20.0]]);
        let model = FieldModel::new(&one_patch(poly));
        let h = model.basis_hessian("a", &um(17.0, 9.0, 22.0)).unwrap();
        assert!((h - h.transpose()).norm() <= 1e-9 * h.norm());
        assert!(h.trace().abs() < 1e-6 * h.norm());
    }
}
