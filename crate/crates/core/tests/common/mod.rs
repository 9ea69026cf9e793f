//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use peec_ris::geometry::Role;
use peec_ris::mna::PortNetwork;
use rand::Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Composite Simpson rule on [0, b].
fn simpson(g: impl Fn(f64) -> f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = b / n as f64;
    let mut acc = g(0.0) + g(b);
    for i in 1..n {
        acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Induced-EMF input impedance of an infinitely thin half-wave dipole:
/// `eta/(4 pi) * (Cin(2 pi) + j Si(2 pi))`, with the sine and cosine integrals
/// evaluated by quadrature of their defining integrands.
pub fn induced_emf_half_wave() -> Complex64 {
    let x = 2.0 * std::f64::consts::PI;
    let si = simpson(|t| if t == 0.0 { 1.0 } else { t.sin() / t }, x, 40_000);
    let cin = simpson(|t| if t == 0.0 { 0.0 } else { (1.0 - t.cos()) / t }, x, 40_000);
    // free-space wave impedance from the SI defining constants
    let eta = (1.25663706212e-6f64 / 8.8541878128e-12).sqrt();
    c(cin, si) * (eta / (4.0 * std::f64::consts::PI))
}

/// Reciprocal 1 Tx + 1 Rx + `n_ris` network resembling resonant dipoles with
/// weak mutual coupling.
pub fn toy_network<R: Rng>(n_ris: usize, rng: &mut R) -> PortNetwork {
    let np = n_ris + 2;
    let mut z = DMatrix::zeros(np, np);
    for i in 0..np {
        z[(i, i)] = c(73.0 + rng.gen_range(0.0..10.0), rng.gen_range(-50.0..50.0));
        for j in 0..i {
            let v = c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    let mut roles = vec![Role::Tx, Role::Rx];
    roles.extend(std::iter::repeat(Role::Ris).take(n_ris));
    PortNetwork {
        z,
        roles,
        dipoles: (0..np).collect(),
        branches: (0..np).collect(),
    }
}

/// Dense two-port gain with the RIS ports eliminated by a full inverse.
pub fn brute_gain(net: &PortNetwork, loads: &[Complex64], zg: Complex64, zr: Complex64) -> Complex64 {
    let n = loads.len();
    let mut zss = net.z.view((2, 2), (n, n)).into_owned();
    for (i, z) in loads.iter().enumerate() {
        zss[(i, i)] += z;
    }
    let zas = net.z.view((0, 2), (2, n)).into_owned();
    let zsa = net.z.view((2, 0), (n, 2)).into_owned();
    let e = net.z.view((0, 0), (2, 2)).into_owned() - zas * zss.try_inverse().expect("invertible") * zsa;
    zr * e[(1, 0)] / ((e[(0, 0)] + zg) * (e[(1, 1)] + zr) - e[(1, 0)] * e[(0, 1)])
}
