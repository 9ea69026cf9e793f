//! A meshed scenario with its partial elements, ready for driven solves and
//! port extraction.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::elements::{assemble_partial_elements, Conductor, PartialElements};
use crate::error::{Error, Result};
use crate::geometry::{mesh_scenario, Role, Scenario, WireMesh};
use crate::mna::{assemble_mna, extract_zsys, solve_mna, BranchLoads, Extraction, MnaSolution};

#[derive(Debug, Clone)]
pub struct Link {
    pub scenario: Scenario,
    pub mesh: WireMesh,
    pub elements: PartialElements,
}

/// Full-wave solution with the Tx driven, the Rx terminated and the RIS loaded.
#[derive(Debug, Clone)]
pub struct DrivenSolution {
    pub solution: MnaSolution,
    /// Voltage across the Rx load per unit source emf.
    pub h: Complex64,
}

impl Link {
    pub fn build(scenario: Scenario) -> Result<Self> {
        let mesh = mesh_scenario(&scenario).map_err(|e| e.in_stage("mesh"))?;
        let elements = assemble_partial_elements(&mesh, scenario.frequency, Conductor::Pec)
            .map_err(|e| e.in_stage("elements"))?;
        Ok(Link {
            scenario,
            mesh,
            elements,
        })
    }

    pub fn extract(&self) -> Result<Extraction> {
        extract_zsys(&self.elements, &self.mesh, &self.scenario).map_err(|e| e.in_stage("zsys"))
    }

    pub fn wavenumber(&self) -> f64 {
        self.scenario.wavenumber()
    }

    /// Segments of the RIS dipoles.
    pub fn ris_segments(&self) -> Vec<usize> {
        self.mesh.segments_with_role(&self.scenario, Role::Ris)
    }

    /// Port branches of one role, in port order.
    fn role_branches(&self, role: Role) -> Vec<usize> {
        self.scenario
            .port_order()
            .into_iter()
            .filter(|&d| self.scenario.dipoles[d].role == role)
            .map(|d| self.mesh.dipole_ports[d])
            .collect()
    }

    /// Drives the Tx port with `emf` behind `zg`, terminates the Rx port in
    /// `zr` and loads the RIS ports (in port order) with `ris_loads`.
    pub fn solve_driven(
        &self,
        ris_loads: &[Complex64],
        zg: Complex64,
        zr: Complex64,
        emf: f64,
    ) -> Result<DrivenSolution> {
        let tx = self.role_branches(Role::Tx);
        let rx = self.role_branches(Role::Rx);
        let ris = self.role_branches(Role::Ris);
        if tx.len() != 1 || rx.len() != 1 {
            return Err(Error::Degenerate(format!(
                "driven solve needs one Tx and one Rx port, got {} and {}",
                tx.len(),
                rx.len()
            )));
        }
        if ris_loads.len() != ris.len() {
            return Err(Error::Dimension(format!(
                "{} RIS loads for {} RIS ports",
                ris_loads.len(),
                ris.len()
            )));
        }
        let mut loads = BranchLoads::new();
        loads.insert(tx[0], zg);
        loads.insert(rx[0], zr);
        for (&b, &z) in ris.iter().zip(ris_loads) {
            loads.insert(b, z);
        }
        let sys = assemble_mna(&self.elements, &self.mesh, &loads).map_err(|e| e.in_stage("mna"))?;
        let mut vs = DVector::zeros(sys.nb);
        vs[tx[0]] = Complex64::new(emf, 0.0);
        let is = DVector::zeros(sys.nn);
        let solution = solve_mna(&sys, &vs, &is).map_err(|e| e.in_stage("mna"))?;
        let h = -zr * solution.currents[rx[0]] / emf;
        Ok(DrivenSolution { solution, h })
    }
}
