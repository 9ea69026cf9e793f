//! Thin-wire dipole scenarios and their PEEC discretization.
//!
//! A dipole of length `L` is cut into `n` equal straight segments. Segments are
//! the current-carrying volume cells (branches of the equivalent circuit); the
//! `n + 1` junction and end points are the charge-carrying nodes. Each node owns
//! the half-segments adjacent to it, so end nodes own a single half-segment.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Which part of the link a dipole belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tx,
    Rx,
    Ris,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Tx => "tx",
            Role::Rx => "rx",
            Role::Ris => "ris",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub center: Vec3,
    /// Unit vector along the wire.
    pub axis: Vec3,
    pub length: f64,
    pub role: Role,
    pub port_index: usize,
}

impl Dipole {
    pub fn new(center: Vec3, axis: Vec3, length: f64, role: Role, port_index: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Geometry(format!("dipole length must be positive, got {length}")));
        }
        if (axis.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Geometry(format!(
                "dipole axis must be a unit vector, |axis| = {}",
                axis.norm()
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Geometry("dipole center must be finite".into()));
        }
        Ok(Dipole {
            center,
            axis,
            length,
            role,
            port_index,
        })
    }

    /// Dipole along +z.
    pub fn z_directed(center: Vec3, length: f64, role: Role, port_index: usize) -> Result<Self> {
        Self::new(center, Vec3::z(), length, role, port_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub frequency: f64,
    pub wire_radius: f64,
    pub segments_per_dipole: usize,
    pub dipoles: Vec<Dipole>,
}

impl Scenario {
    pub fn new(
        frequency: f64,
        wire_radius: f64,
        segments_per_dipole: usize,
        dipoles: Vec<Dipole>,
    ) -> Result<Self> {
        let scenario = Scenario {
            frequency,
            wire_radius,
            segments_per_dipole,
            dipoles,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(Error::Geometry(format!("frequency must be positive, got {}", self.frequency)));
        }
        check_segment_count(self.segments_per_dipole)?;
        if self.dipoles.is_empty() {
            return Err(Error::Geometry("scenario has no dipoles".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.dipoles {
            if !seen.insert(d.port_index) {
                return Err(Error::Geometry(format!("duplicate port index {}", d.port_index)));
            }
        }
        let shortest = self
            .dipoles
            .iter()
            .map(|d| d.length)
            .fold(f64::INFINITY, f64::min);
        let limit = shortest / (2.0 * self.segments_per_dipole as f64);
        if !(self.wire_radius > 0.0) || self.wire_radius >= limit {
            return Err(Error::Geometry(format!(
                "wire radius {} outside thin-wire range (0, {limit})",
                self.wire_radius
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        constants::wavelength(self.frequency)
    }

    pub fn wavenumber(&self) -> f64 {
        constants::wavenumber(self.frequency)
    }

    /// Dipole indices in port order: Tx first, then Rx, then RIS, each group in
    /// scenario order.
    pub fn port_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dipoles.len()).collect();
        // stable sort keeps scenario order within a role
        order.sort_by_key(|&i| self.dipoles[i].role);
        order
    }

    pub fn count(&self, role: Role) -> usize {
        self.dipoles.iter().filter(|d| d.role == role).count()
    }

    /// Centroid of the RIS elements, if there are any.
    pub fn ris_center(&self) -> Option<Vec3> {
        let ris: Vec<&Dipole> = self.dipoles.iter().filter(|d| d.role == Role::Ris).collect();
        if ris.is_empty() {
            return None;
        }
        let sum = ris.iter().fold(Vec3::zeros(), |acc, d| acc + d.center);
        Some(sum / ris.len() as f64)
    }

    /// First dipole with the given role.
    pub fn first(&self, role: Role) -> Option<&Dipole> {
        self.dipoles.iter().find(|d| d.role == role)
    }
}

fn check_segment_count(n_seg: usize) -> Result<()> {
    if n_seg % 2 == 0 {
        return Err(Error::Geometry("segments_per_dipole must be odd".into()));
    }
    if n_seg < 3 {
        return Err(Error::Geometry("segments_per_dipole must be at least 3".into()));
    }
    Ok(())
}

/// Rectangular RIS layout on the yz-plane: columns along y, rows along z.
///
/// Elements are emitted row-major: z-rows outer, y-columns inner.
#[derive(Debug, Clone, PartialEq)]
pub struct RisArray {
    pub center: Vec3,
    pub rows: usize,
    pub cols: usize,
    /// Column spacing along y (m).
    pub dy: f64,
    /// Row spacing along z (m).
    pub dz: f64,
    pub element_length: f64,
}

impl RisArray {
    /// Expands the array into z-directed RIS dipoles on the yz-plane, numbering
    /// ports from `first_port`.
    pub fn expand(&self, first_port: usize) -> Result<Vec<Dipole>> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        let row_mid = (self.rows as f64 - 1.0) / 2.0;
        let col_mid = (self.cols as f64 - 1.0) / 2.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let offset = Vec3::new(
                    0.0,
                    (c as f64 - col_mid) * self.dy,
                    (r as f64 - row_mid) * self.dz,
                );
                let port = first_port + out.len();
                out.push(Dipole::z_directed(
                    self.center + offset,
                    self.element_length,
                    Role::Ris,
                    port,
                )?);
            }
        }
        Ok(out)
    }
}

/// Default wire radius for a given wavelength: lambda/1000, which keeps the
/// default lambda/22 cells about 45 radii long.
pub fn default_wire_radius(wavelength: f64) -> f64 {
    wavelength / 1000.0
}

pub const DEFAULT_SEGMENTS_PER_DIPOLE: usize = 11;

pub const PAPER_FREQUENCY: f64 = 28.0e9;

/// The reference link: a Tx and an Rx half-wave dipole and a 2 x 32 RIS of
/// half-wave dipoles on the yz-plane, all at 28 GHz and all z-directed.
pub fn paper_scenario() -> Scenario {
    let lambda = constants::wavelength(PAPER_FREQUENCY);
    let half = 0.5 * lambda;
    let mut dipoles = vec![
        Dipole::z_directed(Vec3::new(4.0, 0.0, 3.0), half, Role::Tx, 0).unwrap(),
        Dipole::z_directed(Vec3::new(2.0, 3.46, 1.0), half, Role::Rx, 1).unwrap(),
    ];
    let array = RisArray {
        center: Vec3::new(0.0, 0.0, 2.0),
        rows: 2,
        cols: 32,
        dy: 0.125 * lambda,
        dz: 0.75 * lambda,
        element_length: half,
    };
    dipoles.extend(array.expand(2).unwrap());
    Scenario::new(
        PAPER_FREQUENCY,
        default_wire_radius(lambda),
        DEFAULT_SEGMENTS_PER_DIPOLE,
        dipoles,
    )
    .expect("reference scenario is valid")
}

/// Spherical angles (theta from +z, phi from +x toward +y) of `to - from`, in degrees.
/// Phi is reported in [0, 360).
pub fn direction_angles_deg(from: &Vec3, to: &Vec3) -> (f64, f64) {
    let r = to - from;
    let theta = (r.z / r.norm()).acos().to_degrees();
    let phi = r.y.atan2(r.x).to_degrees().rem_euclid(360.0);
    (theta, phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
    pub direction: Vec3,
    pub length: f64,
    pub radius: f64,
    pub parent_dipole: usize,
    /// Node the branch leaves.
    pub from_node: usize,
    /// Node the branch enters.
    pub to_node: usize,
}

impl Segment {
    pub fn midpoint(&self) -> Vec3 {
        0.5 * (self.start + self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub position: Vec3,
    /// Total length of the half-segments owned by this node.
    pub half_lengths: f64,
    /// Straight charge support owned by the node.
    pub support_start: Vec3,
    pub support_end: Vec3,
    pub radius: f64,
    pub parent_dipole: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMesh {
    pub segments: Vec<Segment>,
    pub nodes: Vec<Node>,
    /// Node-by-branch incidence, entries in {-1, 0, +1}.
    pub incidence: DMatrix<f64>,
    /// Center (port) segment of each dipole, indexed like the dipole list.
    pub dipole_ports: Vec<usize>,
    pub port_branches: BTreeMap<Role, Vec<usize>>,
}

impl WireMesh {
    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Segment indices belonging to dipoles with the given role.
    pub fn segments_with_role(&self, scenario: &Scenario, role: Role) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| scenario.dipoles[s.parent_dipole].role == role)
            .map(|(i, _)| i)
            .collect()
    }

    fn append(&mut self, other: WireMesh, roles: Role) {
        let seg_offset = self.segments.len();
        let node_offset = self.nodes.len();
        for mut s in other.segments {
            s.from_node += node_offset;
            s.to_node += node_offset;
            self.segments.push(s);
        }
        self.nodes.extend(other.nodes);
        for p in other.dipole_ports {
            self.dipole_ports.push(p + seg_offset);
            self.port_branches.entry(roles).or_default().push(p + seg_offset);
        }
    }
}

/// Cuts one dipole into `n_seg` equal collinear segments.
///
/// `dipole_index` is recorded as the parent of every produced cell. The
/// returned mesh has its own incidence matrix and a single port branch, the
/// middle segment.
pub fn mesh_dipole(dipole: &Dipole, n_seg: usize, radius: f64, dipole_index: usize) -> Result<WireMesh> {
    check_segment_count(n_seg)?;
    if !(dipole.length > 0.0) {
        return Err(Error::Geometry(format!(
            "dipole length must be positive, got {}",
            dipole.length
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Geometry(format!("wire radius must be positive, got {radius}")));
    }

    let n = n_seg as f64;
    let seg_len = dipole.length / n;
    let point = |t: f64| dipole.center + dipole.axis * (dipole.length * (t / n - 0.5));

    let segments = (0..n_seg)
        .map(|i| Segment {
            start: point(i as f64),
            end: point(i as f64 + 1.0),
            direction: dipole.axis,
            length: seg_len,
            radius,
            parent_dipole: dipole_index,
            from_node: i,
            to_node: i + 1,
        })
        .collect();

    let nodes = (0..=n_seg)
        .map(|i| {
            let lo = (i as f64 - 0.5).max(0.0);
            let hi = (i as f64 + 0.5).min(n);
            Node {
                position: point(i as f64),
                half_lengths: (hi - lo) * seg_len,
                support_start: point(lo),
                support_end: point(hi),
                radius,
                parent_dipole: dipole_index,
            }
        })
        .collect();

    let mut mesh = WireMesh {
        segments,
        nodes,
        incidence: DMatrix::zeros(0, 0),
        dipole_ports: vec![n_seg / 2],
        port_branches: BTreeMap::from([(dipole.role, vec![n_seg / 2])]),
    };
    mesh.incidence = build_incidence(&mesh)?;
    Ok(mesh)
}

/// Meshes every dipole of the scenario, in scenario order.
pub fn mesh_scenario(scenario: &Scenario) -> Result<WireMesh> {
    scenario.validate()?;
    let mut mesh = WireMesh {
        segments: Vec::new(),
        nodes: Vec::new(),
        incidence: DMatrix::zeros(0, 0),
        dipole_ports: Vec::new(),
        port_branches: BTreeMap::new(),
    };
    for (i, d) in scenario.dipoles.iter().enumerate() {
        let part = mesh_dipole(d, scenario.segments_per_dipole, scenario.wire_radius, i)?;
        mesh.append(part, d.role);
    }
    mesh.incidence = build_incidence(&mesh)?;
    Ok(mesh)
}

/// `A[i][m]` is +1 when branch `m` leaves node `i`, -1 when it enters it.
pub fn build_incidence(mesh: &WireMesh) -> Result<DMatrix<f64>> {
    let nn = mesh.nodes.len();
    let mut a = DMatrix::zeros(nn, mesh.segments.len());
    for (m, s) in mesh.segments.iter().enumerate() {
        if s.from_node >= nn || s.to_node >= nn {
            return Err(Error::Structure(format!(
                "segment {m} references node {} but the mesh has {nn} nodes",
                s.from_node.max(s.to_node)
            )));
        }
        if s.from_node == s.to_node {
            return Err(Error::Structure(format!("segment {m} is a self-loop")));
        }
        a[(s.from_node, m)] = 1.0;
        a[(s.to_node, m)] = -1.0;
    }
    Ok(a)
}
