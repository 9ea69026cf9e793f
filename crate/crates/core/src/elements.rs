//! Retarded partial elements of a thin-wire mesh.
//!
//! Both partial inductances and coefficients of potential reduce to the same
//! double line integral of the retarded kernel `exp(-jkR)/R` between two
//! straight cells, with the radius-regularized distance `R = sqrt(d^2 + a^2)`.
//! Time convention is `exp(+jwt)`.
//!
//! Near parallel pairs (which include every self and adjacent term) are split
//! into a closed-form part, `1/R - jk - (k^2/2) R`, and a smooth remainder that
//! is integrated with Gauss-Legendre. All other pairs use a tensor-product
//! Gauss rule, subdivided when two non-parallel cells come close.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::constants::{INV_4PI_EPS0, MU0_OVER_4PI};
use crate::error::{Error, Result};
use crate::geometry::{Node, Segment, Vec3, WireMesh};
use crate::quadrature::GaussLegendre;

pub const DEFAULT_GAUSS_ORDER: usize = 6;

/// Pairs whose centers are closer than this many cell lengths are "near".
const NEAR_FACTOR: f64 = 4.0;

const PARALLEL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Conductor {
    #[default]
    Pec,
    /// Finite conductivity in S/m.
    Conductivity(f64),
}

/// A straight cell of the kernel integral: a segment axis or a node's charge support.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
}

impl Cell {
    fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }
}

impl From<&Segment> for Cell {
    fn from(s: &Segment) -> Self {
        Cell {
            start: s.start,
            end: s.end,
            radius: s.radius,
        }
    }
}

impl From<&Node> for Cell {
    fn from(n: &Node) -> Self {
        Cell {
            start: n.support_start,
            end: n.support_end,
            radius: n.radius,
        }
    }
}

/// Why a kernel integral could not be formed.
#[derive(Debug)]
enum KernelFault {
    ZeroLength,
    Coincident,
}

/// `int_a int_b exp(-jkR)/R dl dl'` with `R = sqrt(d^2 + a^2)`, `a` the mean radius.
fn kernel_integral(a: &Cell, b: &Cell, k: f64, rule: &GaussLegendre) -> std::result::Result<Complex64, KernelFault> {
    let la = a.length();
    let lb = b.length();
    if la == 0.0 || lb == 0.0 {
        return Err(KernelFault::ZeroLength);
    }
    let radius = 0.5 * (a.radius + b.radius);
    let ta = (a.end - a.start) / la;
    let tb = (b.end - b.start) / lb;
    let center_dist = (0.5 * (a.start + a.end) - 0.5 * (b.start + b.end)).norm();
    let near = center_dist < NEAR_FACTOR * la.max(lb);
    let parallel = ta.cross(&tb).norm() < PARALLEL_TOL;

    if near && parallel {
        // Common axis along `a`.
        let rel0 = b.start - a.start;
        let s0 = rel0.dot(&ta);
        let s1 = (b.end - a.start).dot(&ta);
        let (x3, x4) = if s0 <= s1 { (s0, s1) } else { (s1, s0) };
        let rho2 = (rel0 - s0 * ta).norm_squared();
        let b2 = rho2 + radius * radius;
        let overlapping = x3 <= la && x4 >= 0.0;
        if b2 == 0.0 {
            if overlapping {
                return Err(KernelFault::Coincident);
            }
        } else {
            let bb = b2.sqrt();
            let four = |f: &dyn Fn(f64) -> f64| f(la - x3) - f(la - x4) - f(-x3) + f(-x4);
            let inv_r = four(&|u| u * (u / bb).asinh() - (u * u + b2).sqrt());
            let r = four(&|u| {
                let q = (u * u + b2).sqrt();
                q * q * q / 6.0 + 0.5 * b2 * (u * (u / bb).asinh() - q)
            });
            let analytic = Complex64::new(inv_r - 0.5 * k * k * r, -k * la * lb);
            let remainder = gauss_pair(a, b, la, lb, radius, 1, rule, smooth_remainder(k));
            return Ok(analytic + remainder);
        }
    }

    if radius == 0.0 && segment_distance(a, b) == 0.0 {
        return Err(KernelFault::Coincident);
    }
    let subdivisions = if near {
        let gap = segment_distance(a, b).max(radius);
        ((2.0 * la.max(lb) / gap).ceil() as usize).clamp(1, 64)
    } else {
        1
    };
    Ok(gauss_pair(a, b, la, lb, radius, subdivisions, rule, move |r| {
        Complex64::from_polar(1.0 / r, -k * r)
    }))
}

/// `exp(-jkR)/R - 1/R + jk + (k^2/2) R`, starting at order `(kR)^3 / R`.
fn smooth_remainder(k: f64) -> impl Fn(f64) -> Complex64 {
    move |r: f64| {
        let x = k * r;
        if x < 0.5 {
            // sum_{n>=3} (-jx)^n / n!, divided by R
            let mut term = Complex64::new(0.0, -x).powi(3) / 6.0;
            let mut sum = term;
            for n in 4..30 {
                term *= Complex64::new(0.0, -x) / n as f64;
                sum += term;
                if term.norm() < 1e-18 * sum.norm() {
                    break;
                }
            }
            sum / r
        } else {
            Complex64::from_polar(1.0 / r, -x) - 1.0 / r + Complex64::new(0.5 * k * x, k)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gauss_pair(
    a: &Cell,
    b: &Cell,
    la: f64,
    lb: f64,
    radius: f64,
    subdivisions: usize,
    rule: &GaussLegendre,
    kernel: impl Fn(f64) -> Complex64,
) -> Complex64 {
    let ta = (a.end - a.start) / la;
    let tb = (b.end - b.start) / lb;
    let ha = la / subdivisions as f64;
    let hb = lb / subdivisions as f64;
    let a2 = radius * radius;
    let mut sum = Complex64::new(0.0, 0.0);
    for pa in 0..subdivisions {
        for (ua, wa) in rule.on_interval(ha) {
            let xa = a.start + ta * (pa as f64 * ha + ua);
            for pb in 0..subdivisions {
                for (ub, wb) in rule.on_interval(hb) {
                    let xb = b.start + tb * (pb as f64 * hb + ub);
                    let r = ((xa - xb).norm_squared() + a2).sqrt();
                    sum += kernel(r) * (wa * wb);
                }
            }
        }
    }
    sum
}

/// Minimum distance between two straight cells.
fn segment_distance(a: &Cell, b: &Cell) -> f64 {
    let d1 = a.end - a.start;
    let d2 = b.end - b.start;
    let r = a.start - b.start;
    let aa = d1.dot(&d1);
    let ee = d2.dot(&d2);
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let bb = d1.dot(&d2);
    let denom = aa * ee - bb * bb;
    let mut s = if denom > 1e-14 * aa * ee {
        ((bb * f - c * ee) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (bb * s + f) / ee;
    if t < 0.0 {
        t = 0.0;
        s = (-c / aa).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((bb - c) / aa).clamp(0.0, 1.0);
    }
    ((a.start + d1 * s) - (b.start + d2 * t)).norm()
}

/// Partial inductance between two segments (H), default quadrature order.
pub fn partial_inductance(seg_m: &Segment, seg_n: &Segment, k: f64) -> Result<Complex64> {
    partial_inductance_with(seg_m, seg_n, k, &GaussLegendre::new(DEFAULT_GAUSS_ORDER), (0, 0))
}

fn partial_inductance_with(
    seg_m: &Segment,
    seg_n: &Segment,
    k: f64,
    rule: &GaussLegendre,
    ids: (usize, usize),
) -> Result<Complex64> {
    let dot = seg_m.direction.dot(&seg_n.direction);
    if dot.abs() < 1e-14 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let integral = kernel_integral(&seg_m.into(), &seg_n.into(), k, rule).map_err(|fault| {
        Error::SingularKernel {
            a: ids.0,
            b: ids.1,
            reason: match fault {
                KernelFault::ZeroLength => "zero-length segment".into(),
                KernelFault::Coincident => "coincident filaments with zero radius".into(),
            },
        }
    })?;
    Ok(integral * (MU0_OVER_4PI * dot))
}

/// Coefficient of potential between two nodes (1/F), default quadrature order.
pub fn potential_coefficient(node_i: &Node, node_j: &Node, k: f64) -> Result<Complex64> {
    potential_coefficient_with(node_i, node_j, k, &GaussLegendre::new(DEFAULT_GAUSS_ORDER), (0, 0))
}

fn potential_coefficient_with(
    node_i: &Node,
    node_j: &Node,
    k: f64,
    rule: &GaussLegendre,
    ids: (usize, usize),
) -> Result<Complex64> {
    if node_i.half_lengths <= 0.0 || node_j.half_lengths <= 0.0 {
        return Err(Error::SingularKernel {
            a: ids.0,
            b: ids.1,
            reason: "zero-length charge support".into(),
        });
    }
    let integral = kernel_integral(&node_i.into(), &node_j.into(), k, rule).map_err(|fault| {
        Error::SingularKernel {
            a: ids.0,
            b: ids.1,
            reason: match fault {
                KernelFault::ZeroLength => "zero-length charge support".into(),
                KernelFault::Coincident => "coincident charge supports with zero radius".into(),
            },
        }
    })?;
    Ok(integral * (INV_4PI_EPS0 / (node_i.half_lengths * node_j.half_lengths)))
}

/// Series impedance of a volume cell (ohm). DC resistance for finite conductivity.
pub fn volume_impedance(segment: &Segment, conductor: Conductor, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) {
        return Err(Error::Material(format!("angular frequency must be positive, got {omega}")));
    }
    match conductor {
        Conductor::Pec => Ok(Complex64::new(0.0, 0.0)),
        Conductor::Conductivity(sigma) if sigma > 0.0 && sigma.is_finite() => {
            let area = std::f64::consts::PI * segment.radius * segment.radius;
            Ok(Complex64::new(segment.length / (sigma * area), 0.0))
        }
        Conductor::Conductivity(sigma) => Err(Error::Material(format!(
            "conductivity must be positive, got {sigma}"
        ))),
    }
}

/// Partial elements of one mesh at one frequency.
#[derive(Debug, Clone)]
pub struct PartialElements {
    pub lp: DMatrix<Complex64>,
    pub p: DMatrix<Complex64>,
    pub zvol: DVector<Complex64>,
    /// Free-space wavenumber (rad/m).
    pub k: f64,
    /// Complex frequency j*omega.
    pub s: Complex64,
}

impl PartialElements {
    pub fn omega(&self) -> f64 {
        self.s.im
    }
}

pub fn assemble_partial_elements(mesh: &WireMesh, frequency: f64, conductor: Conductor) -> Result<PartialElements> {
    assemble_partial_elements_with_order(mesh, frequency, conductor, DEFAULT_GAUSS_ORDER)
}

pub fn assemble_partial_elements_with_order(
    mesh: &WireMesh,
    frequency: f64,
    conductor: Conductor,
    order: usize,
) -> Result<PartialElements> {
    if !(frequency > 0.0) {
        return Err(Error::Material(format!("frequency must be positive, got {frequency}")));
    }
    let omega = 2.0 * std::f64::consts::PI * frequency;
    let k = crate::constants::wavenumber(frequency);
    let rule = GaussLegendre::new(order);

    let lp = symmetric_fill(mesh.segments.len(), |m, n| {
        partial_inductance_with(&mesh.segments[m], &mesh.segments[n], k, &rule, (m, n))
    })?;
    let p = symmetric_fill(mesh.nodes.len(), |i, j| {
        potential_coefficient_with(&mesh.nodes[i], &mesh.nodes[j], k, &rule, (i, j))
    })?;
    let zvol = mesh
        .segments
        .iter()
        .map(|s| volume_impedance(s, conductor, omega))
        .collect::<Result<Vec<_>>>()?;

    Ok(PartialElements {
        lp,
        p,
        zvol: DVector::from_vec(zvol),
        k,
        s: Complex64::new(0.0, omega),
    })
}

/// Fills the upper triangle in parallel and mirrors it.
fn symmetric_fill<F>(n: usize, entry: F) -> Result<DMatrix<Complex64>>
where
    F: Fn(usize, usize) -> Result<Complex64> + Sync,
{
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| entry(i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    Ok(m)
}

/// Debug dump as `row,col,re,im`.
pub fn write_matrix_csv(matrix: &DMatrix<Complex64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "re", "im"])?;
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            let v = matrix[(i, j)];
            w.write_record(&[i.to_string(), j.to_string(), format!("{:e}", v.re), format!("{:e}", v.im)])?;
        }
    }
    w.flush()?;
    Ok(())
}
