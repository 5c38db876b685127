#![allow(dead_code)]

use opmag_core::physics::GAMMA_CS;
use opmag_core::{Axis, FieldWaveform};

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Lab-frame Bloch equations, dJ/dt = γ B × J with transverse decay Γ and
/// the bias along x, integrated with classical RK4. The field is held
/// constant over each waveform interval, matching the waveform's
/// piecewise-constant meaning. Returns J = (J_x, J_y, J_z) at every
/// interval boundary.
pub fn lab_rk4(
    omega: f64,
    gamma_rel: f64,
    w: &FieldWaveform,
    j0: [f64; 3],
    substeps: usize,
) -> Vec<[f64; 3]> {
    let bx = omega / GAMMA_CS;
    let rhs = |j: [f64; 3], by: f64, bz: f64| -> [f64; 3] {
        let [jx, jy, jz] = j;
        [
            GAMMA_CS * (by * jz - bz * jy),
            GAMMA_CS * (bz * jx - bx * jz) - gamma_rel * jy,
            GAMMA_CS * (bx * jy - by * jx) - gamma_rel * jz,
        ]
    };
    let h = w.dt() / substeps as f64;
    let mut j = j0;
    let mut out = Vec::with_capacity(w.len() + 1);
    out.push(j);
    for &b in w.samples() {
        let (by, bz) = match w.axis() {
            Axis::Y => (b, 0.0),
            Axis::Z => (0.0, b),
        };
        for _ in 0..substeps {
            let k1 = rhs(j, by, bz);
            let k2 = rhs(add(j, k1, 0.5 * h), by, bz);
            let k3 = rhs(add(j, k2, 0.5 * h), by, bz);
            let k4 = rhs(add(j, k3, h), by, bz);
            for i in 0..3 {
                j[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.push(j);
    }
    out
}

fn add(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}
