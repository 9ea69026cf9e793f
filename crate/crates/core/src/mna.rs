//! Frequency-domain modified nodal analysis of the PEEC circuit.
//!
//! Unknowns are ordered `[I; Phi]` (branch currents, then node potentials) and
//! the system matrix has the block layout
//!
//! ```text
//! | Zvol + s Lp     -A^T           |
//! | A               s P^-1 + Y_le  |
//! ```
//!
//! Ports are delta gaps in series with the center segment of each dipole:
//! a port load adds to that branch's `Zvol` entry and a port source is an
//! entry of `V_s` on that branch row.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elements::PartialElements;
use crate::error::{Error, Result};
use crate::geometry::{Role, Scenario, WireMesh};

/// Relative residual every accepted solve must reach.
pub const RESIDUAL_LIMIT: f64 = 1e-10;

/// Relative asymmetry tolerated in an extracted impedance matrix.
pub const RECIPROCITY_LIMIT: f64 = 1e-8;

const REFINEMENT_STEPS: usize = 3;

/// Series impedances keyed by branch (segment) index.
pub type BranchLoads = BTreeMap<usize, Complex64>;

/// Shunt admittances to the reference keyed by node index.
pub type NodeAdmittances = BTreeMap<usize, Complex64>;

#[derive(Debug, Clone)]
pub struct MnaSystem {
    pub matrix: DMatrix<Complex64>,
    /// Branch count.
    pub nb: usize,
    /// Node count.
    pub nn: usize,
}

impl MnaSystem {
    pub fn dim(&self) -> usize {
        self.nb + self.nn
    }

    pub fn factorize(&self) -> Result<MnaFactorization<'_>> {
        let lu = self.matrix.clone().lu();
        let pivot_ratio = pivot_ratio(&lu);
        if !(pivot_ratio > 1e-15) {
            return Err(Error::Singular {
                context: format!("MNA system of order {}", self.dim()),
                pivot_ratio,
            });
        }
        Ok(MnaFactorization { system: self, lu })
    }
}

fn pivot_ratio(lu: &LU<Complex64, Dyn, Dyn>) -> f64 {
    let u = lu.u();
    let (lo, hi) = u
        .diagonal()
        .iter()
        .map(|v| v.norm())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// LU factors of an assembled system, reusable across right-hand sides.
pub struct MnaFactorization<'a> {
    system: &'a MnaSystem,
    lu: LU<Complex64, Dyn, Dyn>,
}

impl MnaFactorization<'_> {
    /// Solves for several right-hand sides (columns of `rhs`). Returns the
    /// solutions and the relative residual of each column.
    pub fn solve_many(&self, rhs: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
        let m = &self.system.matrix;
        let mut x = self.lu.solve(rhs).ok_or_else(|| Error::Singular {
            context: "MNA back-substitution".into(),
            pivot_ratio: 0.0,
        })?;
        let rhs_norms: Vec<f64> = rhs.column_iter().map(|c| c.norm()).collect();
        let mut residuals = relative_residuals(m, &x, rhs, &rhs_norms);
        for _ in 0..REFINEMENT_STEPS {
            if residuals.iter().all(|r| *r < 0.01 * RESIDUAL_LIMIT) {
                break;
            }
            let r = rhs - m * &x;
            if let Some(dx) = self.lu.solve(&r) {
                x += dx;
            }
            residuals = relative_residuals(m, &x, rhs, &rhs_norms);
        }
        if let Some((col, worst)) = residuals
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            if !(worst < RESIDUAL_LIMIT) {
                return Err(Error::Residual {
                    context: format!("right-hand side {col}"),
                    residual: worst,
                    limit: RESIDUAL_LIMIT,
                });
            }
        }
        Ok((x, residuals))
    }

    pub fn solve(&self, rhs: &DVector<Complex64>) -> Result<(DVector<Complex64>, f64)> {
        let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        let (x, res) = self.solve_many(&b)?;
        Ok((x.column(0).into_owned(), res[0]))
    }
}

fn relative_residuals(
    m: &DMatrix<Complex64>,
    x: &DMatrix<Complex64>,
    rhs: &DMatrix<Complex64>,
    rhs_norms: &[f64],
) -> Vec<f64> {
    let r = rhs - m * x;
    r.column_iter()
        .zip(rhs_norms)
        .map(|(c, &n)| if n == 0.0 { c.norm() } else { c.norm() / n })
        .collect()
}

/// The PEEC circuit of one mesh at one frequency, with `s P^-1` precomputed.
pub struct Circuit<'a> {
    pub pe: &'a PartialElements,
    pub mesh: &'a WireMesh,
    s_p_inv: DMatrix<Complex64>,
}

impl<'a> Circuit<'a> {
    pub fn new(pe: &'a PartialElements, mesh: &'a WireMesh) -> Result<Self> {
        let nb = mesh.num_segments();
        let nn = mesh.num_nodes();
        if pe.lp.shape() != (nb, nb) || pe.p.shape() != (nn, nn) || pe.zvol.len() != nb {
            return Err(Error::Dimension(format!(
                "partial elements (Lp {:?}, P {:?}) do not match mesh ({nb} branches, {nn} nodes)",
                pe.lp.shape(),
                pe.p.shape()
            )));
        }
        if mesh.incidence.shape() != (nn, nb) {
            return Err(Error::Dimension(format!(
                "incidence {:?} does not match mesh ({nn} x {nb})",
                mesh.incidence.shape()
            )));
        }
        let lu = pe.p.clone().lu();
        let p_inv = lu.try_inverse().ok_or_else(|| Error::Singular {
            context: "coefficient-of-potential matrix".into(),
            pivot_ratio: 0.0,
        })?;
        Ok(Circuit {
            pe,
            mesh,
            s_p_inv: p_inv * pe.s,
        })
    }

    pub fn assemble(&self, loads: &BranchLoads, shunts: &NodeAdmittances) -> Result<MnaSystem> {
        let nb = self.mesh.num_segments();
        let nn = self.mesh.num_nodes();
        if let Some(&b) = loads.keys().find(|&&b| b >= nb) {
            return Err(Error::Dimension(format!("load on branch {b}, mesh has {nb}")));
        }
        if let Some(&n) = shunts.keys().find(|&&n| n >= nn) {
            return Err(Error::Dimension(format!("shunt on node {n}, mesh has {nn}")));
        }
        let s = self.pe.s;
        let mut m = DMatrix::<Complex64>::zeros(nb + nn, nb + nn);
        m.view_mut((0, 0), (nb, nb)).copy_from(&self.pe.lp.map(|v| v * s));
        for b in 0..nb {
            m[(b, b)] += self.pe.zvol[b];
        }
        for (&b, &z) in loads {
            m[(b, b)] += z;
        }
        let a = self.mesh.incidence.map(|v| Complex64::new(v, 0.0));
        m.view_mut((0, nb), (nb, nn)).copy_from(&(-a.transpose()));
        m.view_mut((nb, 0), (nn, nb)).copy_from(&a);
        m.view_mut((nb, nb), (nn, nn)).copy_from(&self.s_p_inv);
        for (&n, &y) in shunts {
            m[(nb + n, nb + n)] += y;
        }
        Ok(MnaSystem { matrix: m, nb, nn })
    }
}

/// Builds the MNA system with series branch loads and no shunt admittances.
pub fn assemble_mna(pe: &PartialElements, mesh: &WireMesh, loads: &BranchLoads) -> Result<MnaSystem> {
    Circuit::new(pe, mesh)?.assemble(loads, &NodeAdmittances::new())
}

#[derive(Debug, Clone)]
pub struct MnaSolution {
    /// Branch currents (A).
    pub currents: DVector<Complex64>,
    /// Node potentials (V).
    pub potentials: DVector<Complex64>,
    pub residual: f64,
}

pub fn solve_mna(sys: &MnaSystem, vs: &DVector<Complex64>, is: &DVector<Complex64>) -> Result<MnaSolution> {
    if vs.len() != sys.nb || is.len() != sys.nn {
        return Err(Error::Dimension(format!(
            "sources ({}, {}) do not match system ({}, {})",
            vs.len(),
            is.len(),
            sys.nb,
            sys.nn
        )));
    }
    let mut rhs = DVector::zeros(sys.dim());
    rhs.rows_mut(0, sys.nb).copy_from(vs);
    rhs.rows_mut(sys.nb, sys.nn).copy_from(is);
    if rhs.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Ok(MnaSolution {
            currents: DVector::zeros(sys.nb),
            potentials: DVector::zeros(sys.nn),
            residual: 0.0,
        });
    }
    let (x, residual) = sys.factorize()?.solve(&rhs)?;
    Ok(MnaSolution {
        currents: x.rows(0, sys.nb).into_owned(),
        potentials: x.rows(sys.nb, sys.nn).into_owned(),
        residual,
    })
}

/// Multiport impedance matrix of the whole link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortNetwork {
    pub z: DMatrix<Complex64>,
    pub roles: Vec<Role>,
    /// Scenario dipole behind each port.
    pub dipoles: Vec<usize>,
    /// Mesh branch carrying each port.
    pub branches: Vec<usize>,
}

impl PortNetwork {
    pub fn num_ports(&self) -> usize {
        self.roles.len()
    }

    pub fn ports_with(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len()).filter(|&p| self.roles[p] == role).collect()
    }

    /// `max|Z - Z^T| / max|Z|`, infinity norms.
    pub fn asymmetry(&self) -> f64 {
        relative_asymmetry(&self.z)
    }
}

pub fn relative_asymmetry(z: &DMatrix<Complex64>) -> f64 {
    let diff = z - z.transpose();
    inf_norm(&diff) / inf_norm(z)
}

fn inf_norm(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Result of a short-circuit port extraction.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub network: PortNetwork,
    /// Relative residual of every port excitation.
    pub residuals: Vec<f64>,
    /// Asymmetry measured before symmetrization.
    pub asymmetry: f64,
}

/// Short-circuit extraction: drive each port with 1 V in turn, read every port
/// current into the admittance matrix, invert it.
pub fn extract_zsys(pe: &PartialElements, mesh: &WireMesh, scenario: &Scenario) -> Result<Extraction> {
    if mesh.dipole_ports.len() != scenario.dipoles.len() {
        return Err(Error::Dimension(format!(
            "mesh has {} port branches for {} dipoles",
            mesh.dipole_ports.len(),
            scenario.dipoles.len()
        )));
    }
    let order = scenario.port_order();
    let branches: Vec<usize> = order.iter().map(|&d| mesh.dipole_ports[d]).collect();
    let roles: Vec<Role> = order.iter().map(|&d| scenario.dipoles[d].role).collect();
    let np = branches.len();

    let sys = assemble_mna(pe, mesh, &BranchLoads::new())?;
    let factors = sys.factorize()?;
    let mut rhs = DMatrix::zeros(sys.dim(), np);
    for (p, &b) in branches.iter().enumerate() {
        rhs[(b, p)] = Complex64::new(1.0, 0.0);
    }
    // Column blocks share the read-only factors.
    let chunk = np.div_ceil(rayon::current_num_threads().max(1)).max(1);
    let blocks: Vec<(usize, DMatrix<Complex64>, Vec<f64>)> = (0..np)
        .step_by(chunk)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|c0| {
            let w = chunk.min(np - c0);
            let (x, r) = factors.solve_many(&rhs.columns(c0, w).into_owned())?;
            Ok((c0, x, r))
        })
        .collect::<Result<_>>()?;

    let mut y = DMatrix::<Complex64>::zeros(np, np);
    let mut residuals = vec![0.0; np];
    for (c0, x, r) in blocks {
        for (j, res) in r.into_iter().enumerate() {
            residuals[c0 + j] = res;
            for (q, &b) in branches.iter().enumerate() {
                y[(q, c0 + j)] = x[(b, j)];
            }
        }
    }

    let y_lu = y.lu();
    let ratio = pivot_ratio(&y_lu);
    let z = match y_lu.try_inverse() {
        Some(z) if ratio > 1e-14 => z,
        _ => {
            return Err(Error::Degenerate(format!(
                "port admittance matrix is numerically singular (pivot ratio {ratio:.2e})"
            )))
        }
    };
    let asymmetry = relative_asymmetry(&z);
    if !(asymmetry < RECIPROCITY_LIMIT) {
        return Err(Error::NonReciprocal(asymmetry));
    }
    let z = (&z + z.transpose()) * Complex64::new(0.5, 0.0);
    Ok(Extraction {
        network: PortNetwork {
            z,
            roles,
            dipoles: order,
            branches,
        },
        residuals,
        asymmetry,
    })
}

/// Receiver-load voltage per unit source emf of the two-port
/// `[[z_tt, z_tr], [z_rt, z_rr]]` driven through `zg` and terminated in `zr`.
pub fn two_port_gain(
    z_tt: Complex64,
    z_tr: Complex64,
    z_rt: Complex64,
    z_rr: Complex64,
    zg: Complex64,
    zr: Complex64,
) -> Result<Complex64> {
    let a = (z_tt + zg) * (z_rr + zr);
    let b = z_rt * z_tr;
    let den = a - b;
    if den.norm() <= 1e-14 * (a.norm() + b.norm()) || den.norm() == 0.0 {
        return Err(Error::Degenerate(format!(
            "two-port gain denominator vanishes ({den:e}); resonance degeneracy"
        )));
    }
    Ok(zr * z_rt / den)
}

/// End-to-end gain of a network that contains exactly one Tx and one Rx port.
pub fn direct_link_gain(net: &PortNetwork, zg: Complex64, zr: Complex64) -> Result<Complex64> {
    let tx = net.ports_with(Role::Tx);
    let rx = net.ports_with(Role::Rx);
    if tx.len() != 1 || rx.len() != 1 || net.num_ports() != 2 {
        return Err(Error::Degenerate(format!(
            "direct link gain needs exactly one Tx and one Rx port and nothing else, got {:?}",
            net.roles
        )));
    }
    let (t, r) = (tx[0], rx[0]);
    two_port_gain(net.z[(t, t)], net.z[(t, r)], net.z[(r, t)], net.z[(r, r)], zg, zr)
}
