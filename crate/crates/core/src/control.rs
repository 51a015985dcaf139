//! dc voltage solutions: displacing-field shim sets, stray-field compensation
//! and micromotion at a displaced ion.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::fields::{FieldError, FieldModel, Vec3, Z_MIN};
use crate::layout::ElectrodeLayout;
use crate::lp::{LinearProgram, LpError};
use crate::trap::{RfTrap, TrapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("layout has no dc electrodes")]
    NoDcElectrodes,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error("direction must be a unit vector")]
    InvalidDirection,
    #[error("voltage bound must be positive and finite")]
    InvalidBound,
    #[error("stray field must be finite")]
    InvalidField,
    #[error("target field is not reachable with the dc electrodes")]
    Unreachable,
    #[error("no nonzero displacing field along the requested direction (degenerate)")]
    Degenerate,
    #[error("compensation needs |V| up to {required:.6} V, above the {bound} V bound")]
    ExceedsBound { required: f64, bound: f64 },
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
}

/// Fields per volt of each dc electrode at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShimBasis {
    pub ids: Vec<String>,
    /// One column per electrode (V/m per V).
    pub columns: Vec<[f64; 3]>,
    pub position: [f64; 3],
}

impl ShimBasis {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, i: usize) -> Vec3 {
        Vec3::from(self.columns[i])
    }

    /// `Σ V_i E_i`.
    pub fn field(&self, v: &[f64]) -> Vec3 {
        v.iter().enumerate().map(|(i, &vi)| vi * self.column(i)).sum()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(3, self.len(), |r, c| self.columns[c][r])
    }

    fn voltage_set(&self, v: &[f64], objective: f64) -> VoltageSet {
        VoltageSet {
            voltages: self.ids.iter().cloned().zip(v.iter().copied()).collect(),
            achieved_field: self.field(v).into(),
            objective,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoltageSet {
    pub voltages: BTreeMap<String, f64>,
    /// V/m
    pub achieved_field: [f64; 3],
    pub objective: f64,
}

impl VoltageSet {
    pub fn max_abs(&self) -> f64 {
        self.voltages.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn achieved_field(&self) -> Vec3 {
        Vec3::from(self.achieved_field)
    }
}

pub fn shim_basis(layout: &ElectrodeLayout, r0: &Vec3) -> Result<ShimBasis, ControlError> {
    let ids = layout.dc_ids();
    if ids.is_empty() {
        return Err(ControlError::NoDcElectrodes);
    }
    let model = FieldModel::new(layout);
    let columns = ids
        .iter()
        .map(|id| model.basis_field(id, r0).map(Into::into))
        .collect::<Result<Vec<[f64; 3]>, _>>()?;
    Ok(ShimBasis {
        ids,
        columns,
        position: (*r0).into(),
    })
}

fn check_bound(bound: f64) -> Result<(), ControlError> {
    if bound > 0.0 && bound.is_finite() {
        Ok(())
    } else {
        Err(ControlError::InvalidBound)
    }
}

/// Two unit vectors completing `d` to an orthonormal frame.
fn orthogonal_pair(d: &Vec3) -> (Vec3, Vec3) {
    let seed = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = (seed - d * d.dot(&seed)).normalize();
    (a, d.cross(&a))
}

fn projected_row(basis: &ShimBasis, axis: &Vec3) -> Vec<f64> {
    (0..basis.len()).map(|i| axis.dot(&basis.column(i))).collect()
}

/// Largest field along `direction` with the orthogonal components held at
/// zero and every `|V_i| ≤ bound`.
///
/// Among optimal vertices the lexicographically smallest voltage vector wins.
pub fn max_displacing_set(basis: &ShimBasis, direction: &Vec3, bound: f64) -> Result<VoltageSet, ControlError> {
    check_bound(bound)?;
    if basis.is_empty() {
        return Err(ControlError::NoDcElectrodes);
    }
    if !direction.iter().all(|c| c.is_finite()) || (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(ControlError::InvalidDirection);
    }
    let n = basis.len();
    let (a, b) = orthogonal_pair(direction);
    let c = projected_row(basis, direction);
    let base = LinearProgram::new(c.clone(), vec![-bound; n], vec![bound; n])
        .with_equality(projected_row(basis, &a), 0.0)
        .with_equality(projected_row(basis, &b), 0.0);
    let best = base.solve()?;
    let scale = bound * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(best.objective > 1e-9 * scale) {
        return Err(ControlError::Degenerate);
    }

    // Lexicographic tie-break: pin the optimum, then minimize V_0, V_1, … in turn.
    let mut lp = base.with_equality(c.clone(), best.objective);
    let mut x = best.x;
    for k in 0..n {
        let mut obj = vec![0.0; n];
        obj[k] = -1.0;
        lp.objective = obj;
        let Ok(s) = lp.solve() else { break };
        x = s.x;
        let mut pin = vec![0.0; n];
        pin[k] = 1.0;
        lp = lp.with_equality(pin, x[k]);
    }
    let objective = direction.dot(&basis.field(&x));
    Ok(basis.voltage_set(&x, objective))
}

/// Voltages cancelling `e_stray` with the smallest peak `|V_i|`, ties broken by
/// minimum Euclidean norm.
pub fn stray_compensation(basis: &ShimBasis, e_stray: &Vec3, bound: f64) -> Result<VoltageSet, ControlError> {
    check_bound(bound)?;
    if basis.is_empty() {
        return Err(ControlError::NoDcElectrodes);
    }
    if !e_stray.iter().all(|c| c.is_finite()) {
        return Err(ControlError::InvalidField);
    }
    let n = basis.len();
    if e_stray.norm() == 0.0 {
        return Ok(basis.voltage_set(&vec![0.0; n], 0.0));
    }
    let a = basis.matrix();
    let target = DVector::from_column_slice((-e_stray).as_slice());
    let pinv = a.clone().pseudo_inverse(1e-12 * a.norm()).map_err(|_| ControlError::Unreachable)?;
    let v_ls = &pinv * &target;
    if (&a * &v_ls - &target).norm() > 1e-9 * e_stray.norm() {
        return Err(ControlError::Unreachable);
    }

    // Min-max LP over (V, t, s, s'):  V_i + s_i = t,  −V_i + s'_i = t.
    let big = 2.0 * v_ls.amax() + f64::MIN_POSITIVE;
    let nv = 3 * n + 1;
    let mut obj = vec![0.0; nv];
    obj[n] = -1.0;
    let mut lower = vec![-big; n];
    lower.extend(std::iter::repeat_n(0.0, 2 * n + 1));
    let mut upper = vec![big; n + 1];
    upper.extend(std::iter::repeat_n(2.0 * big, 2 * n));
    let mut lp = LinearProgram::new(obj, lower, upper);
    for r in 0..3 {
        let mut row = vec![0.0; nv];
        for i in 0..n {
            row[i] = a[(r, i)];
        }
        lp = lp.with_equality(row, target[r]);
    }
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; nv];
            row[i] = sign;
            row[n] = -1.0;
            row[n + 1 + i + if sign > 0.0 { 0 } else { n }] = 1.0;
            lp = lp.with_equality(row, 0.0);
        }
    }
    let s = lp.solve()?;
    let t_star = s.x[n];
    if t_star > bound * (1.0 + 1e-12) {
        return Err(ControlError::ExceedsBound { required: t_star, bound });
    }
    let limit = (t_star * (1.0 + 1e-9)).min(bound);
    let start: Vec<f64> = s.x[..n].iter().map(|v| v.clamp(-limit, limit)).collect();
    let v = min_norm_in_box(&a, &target, DVector::from_vec(start), limit);
    let peak = v.amax();
    Ok(basis.voltage_set(v.as_slice(), peak))
}

/// Primal active-set solve of `min ‖v‖² s.t. A v = c, |v_i| ≤ limit`, from a
/// feasible start.
fn min_norm_in_box(a: &DMatrix<f64>, c: &DVector<f64>, start: DVector<f64>, limit: f64) -> DVector<f64> {
    let n = start.len();
    let mut x = start;
    // Working set: Some(+1) at upper, Some(−1) at lower.
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let tol = 1e-12 * limit.max(f64::MIN_POSITIVE);

    let correct = |x: &mut DVector<f64>, fixed: &[Option<f64>]| {
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        if free.is_empty() {
            return;
        }
        let af = a.select_columns(&free);
        let r = c - a * &*x;
        if let Ok(p) = af.clone().pseudo_inverse(1e-12 * af.norm().max(f64::MIN_POSITIVE)) {
            let dx = p * r;
            for (k, &i) in free.iter().enumerate() {
                x[i] = (x[i] + dx[k]).clamp(-limit, limit);
            }
        }
    };
    correct(&mut x, &fixed);

    for _ in 0..(10 * n + 20) {
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let af = a.select_columns(&free);
        let xf = DVector::from_iterator(free.len(), free.iter().map(|&i| x[i]));
        // Step to the minimizer over the current face: p_F = −(I − P_row) x_F.
        let lambda = if free.is_empty() {
            DVector::zeros(a.nrows())
        } else {
            af.transpose()
                .pseudo_inverse(1e-12 * af.norm().max(f64::MIN_POSITIVE))
                .map(|p| p * &xf)
                .unwrap_or_else(|_| DVector::zeros(a.nrows()))
        };
        let pf = if free.is_empty() {
            DVector::zeros(0)
        } else {
            af.transpose() * &lambda - &xf
        };

        if pf.amax() <= tol {
            // Multipliers of the fixed bounds.
            let r = &x - a.transpose() * &lambda;
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if let Some(side) = fixed[i] {
                    let violation = side * r[i];
                    if violation > tol && worst.is_none_or(|(_, w)| violation > w) {
                        worst = Some((i, violation));
                    }
                }
            }
            match worst {
                Some((i, _)) => fixed[i] = None,
                None => break,
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut block = None;
        for (k, &i) in free.iter().enumerate() {
            let p = pf[k];
            let room = if p > 0.0 { limit - x[i] } else { -limit - x[i] };
            if p.abs() > 0.0 {
                let t = (room / p).max(0.0);
                if t < alpha {
                    alpha = t;
                    block = Some((i, p.signum()));
                }
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] += alpha * pf[k];
        }
        if let Some((i, side)) = block {
            x[i] = side * limit;
            fixed[i] = Some(side);
        }
    }
    correct(&mut x, &fixed);
    x
}

/// Driven micromotion at `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Micromotion {
    /// Amplitude vector (m).
    pub u: [f64; 3],
    /// Modulation index along the probe.
    pub beta: f64,
}

/// Default probe wavevector direction `(x̂ + ŷ)/√2`.
pub fn default_probe_direction() -> Vec3 {
    Vec3::new(1.0, 1.0, 0.0).normalize()
}

/// `u = q E_rf / (m Ω²)` and `β = |k·u|` for the default probe direction.
pub fn micromotion_amplitude(trap: &RfTrap, r: &Vec3) -> Result<Micromotion, ControlError> {
    micromotion_along(trap, r, &default_probe_direction())
}

pub fn micromotion_along(trap: &RfTrap, r: &Vec3, probe: &Vec3) -> Result<Micromotion, ControlError> {
    if r.z <= Z_MIN {
        return Err(FieldError::BelowPlane { z: r.z }.into());
    }
    let e = trap.rf_field(r)?;
    let s = trap.species;
    let u = s.charge * e / (s.mass * trap.drive.omega_rf * trap.drive.omega_rf);
    let k = s.wavenumber() * probe.normalize();
    Ok(Micromotion {
        u: u.into(),
        beta: k.dot(&u).abs(),
    })
}
