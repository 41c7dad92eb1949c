//! Real orthonormal spherical harmonics (Condon-Shortley-free).
//!
//! Basis ordering is band-major: index `l^2 + l + m` for band `l` and
//! `m ∈ [-l, l]`. Negative m pairs with sin(|m| φ), positive with cos(m φ).

use crate::geometry::Vec3;

/// Flat index of `(l, m)` in a band-major coefficient vector.
pub fn sh_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    (l * l) as usize + (l as i64 + m) as usize
}

pub fn basis_len(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Associated Legendre values P_l^m(x) for all 0 <= m <= l <= lmax, without
/// the Condon-Shortley phase. Indexed by `l (l + 1) / 2 + m`.
fn legendre_table(lmax: usize, x: f64, out: &mut [f64]) {
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let s = (1.0 - x * x).max(0.0).sqrt();
    out[0] = 1.0;
    for m in 1..=lmax {
        // P_m^m = (2m - 1)!! s^m, built incrementally.
        out[idx(m, m)] = out[idx(m - 1, m - 1)] * (2 * m - 1) as f64 * s;
    }
    for m in 0..lmax {
        // P_{m+1}^m = x (2m + 1) P_m^m
        out[idx(m + 1, m)] = x * (2 * m + 1) as f64 * out[idx(m, m)];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            out[idx(l, m)] = (x * (2 * l - 1) as f64 * out[idx(l - 1, m)]
                - (l + m - 1) as f64 * out[idx(l - 2, m)])
                / (l - m) as f64;
        }
    }
}

/// Orthonormalization constant sqrt((2l+1)/(4π) (l-m)!/(l+m)!).
fn normalization(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0f64; // (l-m)!/(l+m)!
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}

/// All basis values at one direction, bands 0..=order.
pub fn eval_basis(order: usize, dir: Vec3, out: &mut [f64]) {
    debug_assert_eq!(out.len(), basis_len(order));
    let ct = dir.z.clamp(-1.0, 1.0);
    let phi = dir.y.atan2(dir.x);

    let mut leg = [0.0f64; 121]; // supports order <= 14 on the stack
    let lt = &mut leg[..(order + 1) * (order + 2) / 2];
    legendre_table(order, ct, lt);
    let lidx = |l: usize, m: usize| l * (l + 1) / 2 + m;

    let sqrt2 = std::f64::consts::SQRT_2;
    for l in 0..=order {
        out[sh_index(l, 0)] = normalization(l, 0) * lt[lidx(l, 0)];
        for m in 1..=l {
            let base = sqrt2 * normalization(l, m) * lt[lidx(l, m)];
            let mf = m as f64;
            out[sh_index(l, m as i64)] = base * (mf * phi).cos();
            out[sh_index(l, -(m as i64))] = base * (mf * phi).sin();
        }
    }
}

/// Single basis value Y_l^m(dir).
pub fn sh_basis(l: usize, m: i64, dir: Vec3) -> f64 {
    assert!(m.unsigned_abs() as usize <= l, "|m| must not exceed l");
    let mut buf = vec![0.0; basis_len(l)];
    eval_basis(l, dir, &mut buf);
    buf[sh_index(l, m)]
}
