#![allow(dead_code)]

use fibertrap::control::ShimBasis;
use fibertrap::fields::Vec3;

/// Best `direction · Σ V_i E_i` over vertices of the box with the two
/// orthogonal field components pinned at zero.
///
/// Every vertex of `{A V = 0, |V_i| ≤ b}` with two equality rows has at most
/// two coordinates strictly inside the box, so enumerate the free pair and the
/// signs of the rest, solving the 2×2 system exactly.
pub fn vertex_oracle(basis: &ShimBasis, direction: &Vec3, bound: f64) -> f64 {
    let n = basis.len();
    let d = direction.normalize();
    let seed = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = (seed - d * d.dot(&seed)).normalize();
    let b = d.cross(&a);
    let cols: Vec<Vec3> = (0..n).map(|i| basis.column(i)).collect();
    let row_a: Vec<f64> = cols.iter().map(|c| a.dot(c)).collect();
    let row_b: Vec<f64> = cols.iter().map(|c| b.dot(c)).collect();
    let obj: Vec<f64> = cols.iter().map(|c| d.dot(c)).collect();

    let mut best = f64::NEG_INFINITY;
    let mut consider = |v: &[f64]| {
        let ra: f64 = v.iter().zip(&row_a).map(|(x, r)| x * r).sum();
        let rb: f64 = v.iter().zip(&row_b).map(|(x, r)| x * r).sum();
        let scale = bound * row_a.iter().chain(&row_b).fold(0.0f64, |m, r| m.max(r.abs()));
        if ra.abs() <= 1e-9 * scale && rb.abs() <= 1e-9 * scale {
            let f: f64 = v.iter().zip(&obj).map(|(x, c)| x * c).sum();
            best = best.max(f);
        }
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
            for mask in 0..(1u32 << others.len()) {
                let mut v = vec![0.0; n];
                for (bit, &k) in others.iter().enumerate() {
                    v[k] = if mask & (1 << bit) != 0 { bound } else { -bound };
                }
                let ra: f64 = others.iter().map(|&k| row_a[k] * v[k]).sum();
                let rb: f64 = others.iter().map(|&k| row_b[k] * v[k]).sum();
                let det = row_a[i] * row_b[j] - row_a[j] * row_b[i];
                if det.abs() < 1e-14 * (row_a[i].abs() + row_a[j].abs()) * (row_b[i].abs() + row_b[j].abs()) {
                    continue;
                }
                v[i] = (-ra * row_b[j] + rb * row_a[j]) / det;
                v[j] = (-rb * row_a[i] + ra * row_b[i]) / det;
                if v[i].abs() <= bound * (1.0 + 1e-12) && v[j].abs() <= bound * (1.0 + 1e-12) {
                    consider(&v);
                }
            }
        }
    }
    best
}

pub fn basis_from(cols: &[[f64; 3]]) -> ShimBasis {
    ShimBasis {
        ids: (0..cols.len()).map(|i| format!("e{i}")).collect(),
        columns: cols.to_vec(),
        position: [0.0, 0.0, 50e-6],
    }
}
