//! rf pseudopotential trap: null finding, secular modes and trap depth.

use nalgebra::SymmetricEigen;
use serde::Serialize;
use thiserror::Error;

use crate::constants::{
    ATOMIC_MASS_UNIT, BOLTZMANN, ELECTRON_MASS, ELEMENTARY_CHARGE, MG24_ATOMIC_MASS_U, MICRON, TWO_PI,
};
use crate::fields::{hessian_step, symmetrize, FieldError, FieldModel, Mat3, Vec3, Voltages, Z_MIN};
use crate::layout::{ElectrodeLayout, Role};

/// Null residual accepted by [`RfTrap::find_rf_null`] (V/m).
pub const NULL_TOLERANCE: f64 = 1e-3;
/// Central-difference step for the pseudopotential Hessian.
pub const PSEUDO_HESSIAN_STEP: f64 = 10e-9;
/// Escape search gives up beyond this height above the null.
pub const MAX_ESCAPE_RANGE: f64 = 2e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("layout has no rf_inner electrode")]
    MissingRfInner,
    #[error("drive requires an rf_outer electrode but the layout has none")]
    MissingRfOuter,
    #[error("invalid rf drive: {0}")]
    InvalidDrive(&'static str),
    #[error("rf null search did not converge (best residual {best_residual:.3e} V/m at z = {best_height:.3e} m)")]
    NoConvergence { best_residual: f64, best_height: f64 },
    #[error("unstable configuration: curvature {curvature:.3e} J/m² along axis ({:.3}, {:.3}, {:.3})", axis.x, axis.y, axis.z)]
    Unstable { axis: Vec3, curvature: f64 },
    #[error("no escape saddle found within {MAX_ESCAPE_RANGE:e} m above the null (unbounded direction)")]
    UnboundedDirection,
    #[error("escape point has Hessian signature ({positive} positive, {negative} negative), not a saddle")]
    NotASaddle { positive: usize, negative: usize },
}

/// Trapped-ion species.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    /// Cooling transition wavelength (m).
    pub wavelength: f64,
    /// Natural linewidth Γ (rad/s).
    pub gamma: f64,
}

impl IonSpecies {
    /// ²⁴Mg⁺ on the 280 nm S–P line with Γ = 2π·40 MHz.
    pub fn mg24() -> Self {
        Self {
            mass: MG24_ATOMIC_MASS_U * ATOMIC_MASS_UNIT - ELECTRON_MASS,
            charge: ELEMENTARY_CHARGE,
            wavelength: 280e-9,
            gamma: TWO_PI * 40e6,
        }
    }

    pub fn wavenumber(&self) -> f64 {
        TWO_PI / self.wavelength
    }
}

/// rf drive applied to the two rf electrodes (same phase and frequency).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RfDrive {
    /// rad/s
    pub omega_rf: f64,
    /// Amplitude on the inner electrode (V).
    pub v_inner: f64,
    /// Outer/inner amplitude ratio.
    pub alpha: f64,
    /// Inner electrode grounded, outer driven at `v_inner`.
    pub inner_grounded: bool,
}

impl RfDrive {
    pub fn new(freq_hz: f64, v_inner: f64, alpha: f64) -> Self {
        Self {
            omega_rf: TWO_PI * freq_hz,
            v_inner,
            alpha,
            inner_grounded: false,
        }
    }

    /// Only the outer electrode driven, with amplitude `v_rf`.
    pub fn outer_only(freq_hz: f64, v_rf: f64) -> Self {
        Self {
            omega_rf: TWO_PI * freq_hz,
            v_inner: v_rf,
            alpha: 0.0,
            inner_grounded: true,
        }
    }

    /// 45 MHz, 50 V amplitude.
    pub fn reference(alpha: f64) -> Self {
        Self::new(45e6, 50.0, alpha)
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self {
            alpha,
            inner_grounded: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), TrapError> {
        if !(self.omega_rf > 0.0 && self.omega_rf.is_finite()) {
            return Err(TrapError::InvalidDrive("omega_rf must be positive"));
        }
        if !(self.v_inner >= 0.0 && self.v_inner.is_finite()) {
            return Err(TrapError::InvalidDrive("v_inner must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrapError::InvalidDrive("alpha must lie in [0, 1]"));
        }
        Ok(())
    }

    fn needs_outer(&self) -> bool {
        self.inner_grounded || self.alpha > 0.0
    }

    /// (inner, outer) amplitudes in volts.
    fn amplitudes(&self) -> (f64, f64) {
        if self.inner_grounded {
            (0.0, self.v_inner)
        } else {
            (self.v_inner, self.alpha * self.v_inner)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecularMode {
    pub frequency_hz: f64,
    /// Unit principal axis, sign chosen so its largest component is positive.
    pub axis: [f64; 3],
}

impl SecularMode {
    pub fn axis(&self) -> Vec3 {
        Vec3::from(self.axis)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrapDepth {
    /// J
    pub depth: f64,
    pub saddle: [f64; 3],
}

impl TrapDepth {
    pub fn kelvin(&self) -> f64 {
        self.depth / BOLTZMANN
    }

    pub fn electron_volts(&self) -> f64 {
        self.depth / ELEMENTARY_CHARGE
    }

    pub fn saddle(&self) -> Vec3 {
        Vec3::from(self.saddle)
    }
}

/// Everything known about one trapping configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrapSolution {
    pub null_position: [f64; 3],
    /// |E_rf| left at the reported null (V/m).
    pub residual_field: f64,
    /// Ascending in frequency.
    pub secular: [SecularMode; 3],
    pub depth: TrapDepth,
}

impl TrapSolution {
    pub fn null(&self) -> Vec3 {
        Vec3::from(self.null_position)
    }
}

/// An electrode layout driven by a given rf drive, trapping a given species.
#[derive(Clone, Debug)]
pub struct RfTrap {
    model: FieldModel,
    inner: usize,
    outer: Option<usize>,
    inner_centroid: [f64; 2],
    pub drive: RfDrive,
    pub species: IonSpecies,
}

impl RfTrap {
    pub fn new(layout: &ElectrodeLayout, drive: RfDrive, species: IonSpecies) -> Result<Self, TrapError> {
        drive.validate()?;
        let model = FieldModel::new(layout);
        let inner_patch = layout.rf_inner().ok_or(TrapError::MissingRfInner)?;
        let inner = model.index_of(&inner_patch.id)?;
        let outer = match layout.by_role(Role::RfOuter).next() {
            Some(p) => Some(model.index_of(&p.id)?),
            None => None,
        };
        if drive.needs_outer() && outer.is_none() {
            return Err(TrapError::MissingRfOuter);
        }
        Ok(Self {
            model,
            inner,
            outer,
            inner_centroid: inner_patch.centroid(),
            drive,
            species,
        })
    }

    pub fn field_model(&self) -> &FieldModel {
        &self.model
    }

    pub fn with_drive(&self, drive: RfDrive) -> Result<Self, TrapError> {
        drive.validate()?;
        if drive.needs_outer() && self.outer.is_none() {
            return Err(TrapError::MissingRfOuter);
        }
        Ok(Self { drive, ..self.clone() })
    }

    fn rf_terms(&self) -> impl Iterator<Item = (usize, f64)> {
        let (vi, vo) = self.drive.amplitudes();
        let inner = (vi != 0.0).then_some((self.inner, vi));
        let outer = self.outer.filter(|_| vo != 0.0).map(|o| (o, vo));
        inner.into_iter().chain(outer)
    }

    /// rf field amplitude (V/m).
    pub fn rf_field(&self, r: &Vec3) -> Result<Vec3, TrapError> {
        let mut e = Vec3::zeros();
        for (i, v) in self.rf_terms() {
            e += v * self.model.field_at(i, r)?;
        }
        Ok(e)
    }

    /// Jacobian `∂E_rf/∂r` (symmetric, V/m²).
    pub fn rf_jacobian(&self, r: &Vec3) -> Result<Mat3, TrapError> {
        let mut h = Mat3::zeros();
        for (i, v) in self.rf_terms() {
            h -= v * self.model.hessian_at(i, r)?;
        }
        Ok(h)
    }

    fn pseudo_prefactor(&self) -> f64 {
        let q = self.species.charge;
        q * q / (4.0 * self.species.mass * self.drive.omega_rf * self.drive.omega_rf)
    }

    /// Time-averaged pseudopotential energy `q²|E|²/(4mΩ²)` (J).
    pub fn pseudopotential(&self, r: &Vec3) -> Result<f64, TrapError> {
        Ok(self.pseudo_prefactor() * self.rf_field(r)?.norm_squared())
    }

    /// Analytic gradient of the pseudopotential, `(q²/2mΩ²) Jᵀ E` (N).
    pub fn pseudopotential_gradient(&self, r: &Vec3) -> Result<Vec3, TrapError> {
        let e = self.rf_field(r)?;
        let j = self.rf_jacobian(r)?;
        Ok(2.0 * self.pseudo_prefactor() * j.transpose() * e)
    }

    /// Hessian of the pseudopotential by central differences with a 10 nm step.
    pub fn pseudopotential_hessian(&self, r: &Vec3) -> Result<Mat3, TrapError> {
        let h = PSEUDO_HESSIAN_STEP;
        let mut m = Mat3::zeros();
        let f = |d: Vec3| self.pseudopotential(&(r + d));
        let f0 = f(Vec3::zeros())?;
        for i in 0..3 {
            let ei = unit(i) * h;
            m[(i, i)] = (f(ei)? - 2.0 * f0 + f(-ei)?) / (h * h);
            for j in (i + 1)..3 {
                let ej = unit(j) * h;
                let v = (f(ei + ej)? - f(ei - ej)? - f(ej - ei)? + f(-ei - ej)?) / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Starting points: the caller's guess, then heights 10…80 μm above the
    /// rf_inner centroid.
    fn null_starts(&self, guess: &Vec3) -> Vec<Vec3> {
        let [cx, cy] = self.inner_centroid;
        std::iter::once(*guess)
            .chain((1..=8).map(|k| Vec3::new(cx, cy, 10.0 * k as f64) * MICRON))
            .collect()
    }

    /// Locate the rf null by a trust-region Gauss–Newton solve of `E_rf(r) = 0`.
    pub fn find_rf_null(&self, guess: &Vec3) -> Result<Vec3, TrapError> {
        let mut best = (f64::INFINITY, guess.z);
        for start in self.null_starts(guess) {
            if start.z <= Z_MIN {
                continue;
            }
            match self.null_from(start) {
                Ok((r, res)) if res < NULL_TOLERANCE => return Ok(r),
                Ok((r, res)) => {
                    if res < best.0 {
                        best = (res, r.z);
                    }
                }
                Err(TrapError::Field(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(TrapError::NoConvergence {
            best_residual: best.0,
            best_height: best.1,
        })
    }

    fn null_from(&self, start: Vec3) -> Result<(Vec3, f64), TrapError> {
        let mut r = start;
        let mut e = self.rf_field(&r)?;
        let mut res = e.norm();
        // Trust radius, in metres.
        let mut radius = 0.25 * r.z;
        for _ in 0..200 {
            if res < NULL_TOLERANCE {
                break;
            }
            let j = self.rf_jacobian(&r)?;
            let newton = j.lu().solve(&(-e)).unwrap_or_else(|| -j.transpose() * e * 1e-20);
            let step = if newton.norm() > radius {
                newton * (radius / newton.norm())
            } else {
                newton
            };
            let mut trial = r + step;
            if trial.z <= 2.0 * Z_MIN {
                trial.z = 0.5 * r.z;
            }
            let (accepted, e_trial) = match self.rf_field(&trial) {
                Ok(et) if et.norm() < res => (true, et),
                Ok(et) => (false, et),
                Err(TrapError::Field(FieldError::Singular)) => (false, e),
                Err(err) => return Err(err),
            };
            if accepted {
                let predicted = (e + j * step).norm();
                let actual_gain = res - e_trial.norm();
                let predicted_gain = (res - predicted).max(f64::MIN_POSITIVE);
                if actual_gain > 0.75 * predicted_gain && step.norm() >= 0.99 * radius {
                    radius *= 2.0;
                } else if actual_gain < 0.25 * predicted_gain {
                    radius *= 0.5;
                }
                r = trial;
                e = e_trial;
                res = e.norm();
            } else {
                radius *= 0.25;
                if radius < 1e-16 {
                    break;
                }
            }
        }
        Ok((r, res))
    }

    /// Secular modes at a converged null, with optional dc voltages.
    ///
    /// The total curvature is `q·H_dc + H_pseudo`; frequencies come out
    /// ascending with unit principal axes.
    pub fn secular_modes(&self, dc: &Voltages, null: &Vec3) -> Result<[SecularMode; 3], TrapError> {
        let k = self.total_curvature(dc, null)?;
        let eig = SymmetricEigen::new(k);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut modes = [SecularMode {
            frequency_hz: 0.0,
            axis: [0.0; 3],
        }; 3];
        for (slot, &idx) in order.iter().enumerate() {
            let lambda = eig.eigenvalues[idx];
            let axis = canonical_sign(eig.eigenvectors.column(idx).into_owned());
            if lambda <= 0.0 {
                return Err(TrapError::Unstable { axis, curvature: lambda });
            }
            modes[slot] = SecularMode {
                frequency_hz: (lambda / self.species.mass).sqrt() / TWO_PI,
                axis: axis.into(),
            };
        }
        Ok(modes)
    }

    /// `q·H_dc + H_pseudo` at `r` (J/m²).
    pub fn total_curvature(&self, dc: &Voltages, r: &Vec3) -> Result<Mat3, TrapError> {
        let mut k = self.pseudopotential_hessian(r)?;
        if !dc.is_empty() {
            k += self.species.charge * self.model.hessian(dc, r)?;
        }
        Ok(symmetrize(&k))
    }

    /// Lowest escape barrier above the null.
    ///
    /// Marches up from the null until the pseudopotential turns over, then
    /// refines the saddle with Newton steps on `∇Φ = 0` and checks that the
    /// Hessian there has one negative direction.
    pub fn trap_depth(&self, null: &Vec3) -> Result<TrapDepth, TrapError> {
        let phi0 = self.pseudopotential(null)?;
        let dz = 0.005 * null.z.max(1e-6);
        let mut prev = phi0;
        let mut z = null.z;
        let mut turnover = None;
        while z - null.z < MAX_ESCAPE_RANGE {
            z += dz;
            let p = self.pseudopotential(&Vec3::new(null.x, null.y, z))?;
            if p < prev {
                turnover = Some(z - dz);
                break;
            }
            prev = p;
        }
        let z_top = turnover.ok_or(TrapError::UnboundedDirection)?;
        let saddle = self.refine_saddle(Vec3::new(null.x, null.y, z_top))?;
        let h = self.pseudo_hessian_by_gradient(&saddle)?;
        let eig = SymmetricEigen::new(h).eigenvalues;
        let scale = eig.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let positive = eig.iter().filter(|&&v| v > 1e-9 * scale).count();
        let negative = eig.iter().filter(|&&v| v < -1e-9 * scale).count();
        if positive != 2 || negative != 1 {
            return Err(TrapError::NotASaddle { positive, negative });
        }
        let depth = self.pseudopotential(&saddle)? - phi0;
        Ok(TrapDepth {
            depth: depth.max(0.0),
            saddle: saddle.into(),
        })
    }

    fn pseudo_hessian_by_gradient(&self, r: &Vec3) -> Result<Mat3, TrapError> {
        let h = 10.0 * hessian_step(r);
        let mut m = Mat3::zeros();
        for i in 0..3 {
            let d = unit(i) * h;
            let gp = self.pseudopotential_gradient(&(r + d))?;
            let gm = self.pseudopotential_gradient(&(r - d))?;
            m.set_column(i, &((gp - gm) / (2.0 * h)));
        }
        Ok(symmetrize(&m))
    }

    fn refine_saddle(&self, start: Vec3) -> Result<Vec3, TrapError> {
        let mut r = start;
        let mut g = self.pseudopotential_gradient(&r)?;
        for _ in 0..100 {
            let h = self.pseudo_hessian_by_gradient(&r)?;
            let Some(step) = h.lu().solve(&(-g)) else { break };
            // Backtrack on |∇Φ|, keeping steps small compared with the height.
            let mut t = (0.2 * r.z / step.norm()).min(1.0);
            let mut moved = false;
            for _ in 0..30 {
                let trial = r + step * t;
                if trial.z > Z_MIN {
                    let gt = self.pseudopotential_gradient(&trial)?;
                    if gt.norm() < g.norm() {
                        r = trial;
                        g = gt;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved || (step * t).norm() < 1e-14 {
                break;
            }
        }
        Ok(r)
    }

    /// Null, secular modes (dc grounded unless given) and depth in one call.
    pub fn solve(&self, guess: &Vec3, dc: &Voltages) -> Result<TrapSolution, TrapError> {
        let null = self.find_rf_null(guess)?;
        let residual_field = self.rf_field(&null)?.norm();
        let secular = self.secular_modes(dc, &null)?;
        let depth = self.trap_depth(&null)?;
        Ok(TrapSolution {
            null_position: null.into(),
            residual_field,
            secular,
            depth,
        })
    }

    /// Default null guess: 40 μm above the rf_inner centroid.
    pub fn default_guess(&self) -> Vec3 {
        let [cx, cy] = self.inner_centroid;
        Vec3::new(cx, cy, 40.0) * MICRON
    }
}

/// Null height (m) for each outer/inner ratio, continuing from the previous null.
pub fn null_height_curve(
    layout: &ElectrodeLayout,
    drive: RfDrive,
    species: IonSpecies,
    alphas: &[f64],
) -> Result<Vec<(f64, f64)>, TrapError> {
    let base = RfTrap::new(layout, drive.with_alpha(0.0), species)?;
    let mut guess = base.default_guess();
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let trap = base.with_drive(drive.with_alpha(alpha))?;
        let null = trap.find_rf_null(&guess)?;
        guess = null;
        out.push((alpha, null.z));
    }
    Ok(out)
}

/// Rotation of an axis about x̂, measured from −ŷ towards +ẑ (degrees).
pub fn tilt_from_minus_y(axis: &Vec3) -> f64 {
    let a = if axis.y > 0.0 { -axis } else { *axis };
    a.z.atan2(-a.y).to_degrees()
}

fn unit(i: usize) -> Vec3 {
    let mut v = Vec3::zeros();
    v[i] = 1.0;
    v
}

fn canonical_sign(v: Vec3) -> Vec3 {
    let n = v.normalize();
    let k = n.iamax();
    if n[k] < 0.0 {
        -n
    } else {
        n
    }
}
