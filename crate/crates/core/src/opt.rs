//! Per-load RIS optimization by cyclic coordinate ascent.
//!
//! With the RIS ports eliminated, the Tx/Rx two-port is
//! `Z_eff = Z_AA - Z_AS (Z_SS + Z_L)^-1 Z_SA` (A = {Tx, Rx}, S = RIS). Changing
//! one load is a rank-1 change of `Z_SS + Z_L`, so by Sherman-Morrison the
//! end-to-end gain is a linear-fractional function of that load,
//! `h(z) = (a0 + a1 z) / (g0 + g1 z)`. For a reactance `z = jx` the maximizer of
//! `|h|^2` follows from a real quadratic, which is what [`best_load`] solves.

use nalgebra::{DMatrix, DVector, Matrix2, RowDVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Role;
use crate::mna::{two_port_gain, PortNetwork};

/// Reactance standing in for an open circuit (ohm).
pub const OPEN_CIRCUIT_REACTANCE: f64 = 1e9;

/// Largest reactance magnitude the optimizer will return (ohm).
pub const MAX_REACTANCE: f64 = OPEN_CIRCUIT_REACTANCE;

const REFACTOR_DENOMINATOR: f64 = 1e-14;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadConstraint {
    /// `z = jx`, x real.
    Reactive,
    /// `Re z >= 0`.
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Short,
    Open,
    /// Uniform reactances in [-500, 500] ohm from the given seed.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptParams {
    pub constraint: LoadConstraint,
    pub max_sweeps: usize,
    /// Relative objective improvement per sweep below which the ascent stops.
    pub tol: f64,
    pub zg: Complex64,
    pub zr: Complex64,
    pub noise_power_ratio: f64,
    /// Source emf (V); scales the objective only.
    pub emf: f64,
    pub init: Init,
    /// Restrict reactances to these values (ohm), if set.
    pub grid: Option<Vec<f64>>,
}

impl Default for OptParams {
    fn default() -> Self {
        OptParams {
            constraint: LoadConstraint::Reactive,
            max_sweeps: 20,
            tol: 1e-6,
            zg: c(50.0, 0.0),
            zr: c(50.0, 0.0),
            noise_power_ratio: 1.0,
            emf: 1.0,
            init: Init::Short,
            grid: None,
        }
    }
}

impl OptParams {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Optimizer(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Optimizer("max_sweeps must be at least 1".into()));
        }
        if !(self.noise_power_ratio >= 0.0) {
            return Err(Error::Optimizer("noise_power_ratio must be non-negative".into()));
        }
        if matches!(&self.grid, Some(g) if g.is_empty()) {
            return Err(Error::Optimizer("reactance grid is empty".into()));
        }
        Ok(())
    }
}

/// `Z_sys` split by role for a single Tx and a single Rx.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub z_tt: Complex64,
    pub z_tr: Complex64,
    pub z_rt: Complex64,
    pub z_rr: Complex64,
    pub z_ts: RowDVector<Complex64>,
    pub z_rs: RowDVector<Complex64>,
    pub z_st: DVector<Complex64>,
    pub z_sr: DVector<Complex64>,
    pub z_ss: DMatrix<Complex64>,
}

impl Blocks {
    pub fn num_ris(&self) -> usize {
        self.z_ss.nrows()
    }

    fn z_aa(&self) -> Matrix2<Complex64> {
        Matrix2::new(self.z_tt, self.z_tr, self.z_rt, self.z_rr)
    }
}

pub fn partition(net: &PortNetwork) -> Result<Blocks> {
    let tx = net.ports_with(Role::Tx);
    let rx = net.ports_with(Role::Rx);
    let ris = net.ports_with(Role::Ris);
    if tx.len() != 1 {
        return Err(Error::Optimizer(format!("need exactly one Tx port, found {}", tx.len())));
    }
    if rx.len() != 1 {
        return Err(Error::Optimizer(format!("need exactly one Rx port, found {}", rx.len())));
    }
    if ris.is_empty() {
        return Err(Error::Optimizer("no RIS ports".into()));
    }
    let z = &net.z;
    let (t, r) = (tx[0], rx[0]);
    let n = ris.len();
    Ok(Blocks {
        z_tt: z[(t, t)],
        z_tr: z[(t, r)],
        z_rt: z[(r, t)],
        z_rr: z[(r, r)],
        z_ts: RowDVector::from_fn(n, |_, j| z[(t, ris[j])]),
        z_rs: RowDVector::from_fn(n, |_, j| z[(r, ris[j])]),
        z_st: DVector::from_fn(n, |i, _| z[(ris[i], t)]),
        z_sr: DVector::from_fn(n, |i, _| z[(ris[i], r)]),
        z_ss: DMatrix::from_fn(n, n, |i, j| z[(ris[i], ris[j])]),
    })
}

/// Optimizer state: loads, the cached inverse of `Z_SS + diag(loads)` and the
/// eliminated two-port.
#[derive(Debug, Clone)]
pub struct OptState {
    pub blocks: Blocks,
    pub loads: DVector<Complex64>,
    pub minv: DMatrix<Complex64>,
    /// Effective Tx/Rx two-port with the RIS eliminated.
    pub z_eff: Matrix2<Complex64>,
    pub zg: Complex64,
    pub zr: Complex64,
    /// Current end-to-end gain.
    pub h: Complex64,
}

impl OptState {
    pub fn new(blocks: Blocks, loads: DVector<Complex64>, zg: Complex64, zr: Complex64) -> Result<Self> {
        if loads.len() != blocks.num_ris() {
            return Err(Error::Dimension(format!(
                "{} loads for {} RIS ports",
                loads.len(),
                blocks.num_ris()
            )));
        }
        let mut state = OptState {
            minv: DMatrix::zeros(loads.len(), loads.len()),
            blocks,
            loads,
            z_eff: Matrix2::zeros(),
            zg,
            zr,
            h: c(0.0, 0.0),
        };
        state.refactorize()?;
        Ok(state)
    }

    /// Recomputes the inverse and everything derived from it from scratch.
    pub fn refactorize(&mut self) -> Result<()> {
        self.minv = fresh_inverse(&self.blocks, &self.loads)?;
        self.z_eff = eliminate(&self.blocks, &self.minv);
        self.h = gain_of(&self.z_eff, self.zg, self.zr)?;
        Ok(())
    }

    /// Gain recomputed from a fresh inversion, leaving the state untouched.
    pub fn fresh_channel(&self) -> Result<Complex64> {
        let minv = fresh_inverse(&self.blocks, &self.loads)?;
        gain_of(&eliminate(&self.blocks, &minv), self.zg, self.zr)
    }

    /// `max |Minv (Z_SS + Z_L) - I|` entry.
    pub fn inverse_defect(&self) -> f64 {
        let n = self.loads.len();
        let m = loaded(&self.blocks, &self.loads);
        (&self.minv * m - DMatrix::<Complex64>::identity(n, n))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Linear-fractional form of the gain as a function of load `n`.
    pub fn channel_in_load(&self, n: usize) -> Result<LinearFractional> {
        if n >= self.loads.len() {
            return Err(Error::Dimension(format!("load index {n} out of range")));
        }
        let m = self.minv[(n, n)];
        let u = self.minv.column(n);
        let v = self.minv.row(n);
        let w = [(&self.blocks.z_ts * u)[0], (&self.blocks.z_rs * u)[0]];
        let q = [(v * &self.blocks.z_st)[0], (v * &self.blocks.z_sr)[0]];
        let e = &self.z_eff;
        let att = e[(0, 0)] + self.zg;
        let arr = e[(1, 1)] + self.zr;

        let n0 = self.zr * e[(1, 0)];
        let n1 = self.zr * w[1] * q[0];
        let d0 = att * arr - e[(1, 0)] * e[(0, 1)];
        let d1 = att * w[1] * q[1] + arr * w[0] * q[0] - e[(1, 0)] * w[0] * q[1] - e[(0, 1)] * w[1] * q[0];

        let z_old = self.loads[n];
        Ok(LinearFractional {
            a0: n0 * (1.0 - z_old * m) - n1 * z_old,
            a1: n0 * m + n1,
            g0: d0 * (1.0 - z_old * m) - d1 * z_old,
            g1: d0 * m + d1,
        })
    }
}

fn loaded(blocks: &Blocks, loads: &DVector<Complex64>) -> DMatrix<Complex64> {
    let mut m = blocks.z_ss.clone();
    for (i, z) in loads.iter().enumerate() {
        m[(i, i)] += z;
    }
    m
}

fn fresh_inverse(blocks: &Blocks, loads: &DVector<Complex64>) -> Result<DMatrix<Complex64>> {
    loaded(blocks, loads).try_inverse().ok_or_else(|| {
        Error::Optimizer("Z_SS + Z_L is singular; perturb the loads and retry".into())
    })
}

fn eliminate(blocks: &Blocks, minv: &DMatrix<Complex64>) -> Matrix2<Complex64> {
    let ms = minv * &blocks.z_st;
    let mr = minv * &blocks.z_sr;
    let corr = Matrix2::new(
        (&blocks.z_ts * &ms)[0],
        (&blocks.z_ts * &mr)[0],
        (&blocks.z_rs * &ms)[0],
        (&blocks.z_rs * &mr)[0],
    );
    blocks.z_aa() - corr
}

fn gain_of(z: &Matrix2<Complex64>, zg: Complex64, zr: Complex64) -> Result<Complex64> {
    two_port_gain(z[(0, 0)], z[(0, 1)], z[(1, 0)], z[(1, 1)], zg, zr)
}

/// End-to-end gain of the current state (RIS ports eliminated through the cached inverse).
pub fn effective_channel(state: &OptState, zg: Complex64, zr: Complex64) -> Result<Complex64> {
    gain_of(&state.z_eff, zg, zr)
}

/// Sherman-Morrison retune of load `n` to `z_new`.
///
/// On a near-zero denominator the state is left untouched and
/// [`Error::RefactorNeeded`] is returned.
pub fn rank1_retune(state: &mut OptState, n: usize, z_new: Complex64) -> Result<()> {
    if n >= state.loads.len() {
        return Err(Error::Dimension(format!("load index {n} out of range")));
    }
    let delta = z_new - state.loads[n];
    if delta == c(0.0, 0.0) {
        return Ok(());
    }
    let denom = 1.0 + delta * state.minv[(n, n)];
    if denom.norm() < REFACTOR_DENOMINATOR {
        return Err(Error::RefactorNeeded {
            index: n,
            denominator: denom.norm(),
        });
    }
    let u = state.minv.column(n).into_owned();
    let v = state.minv.row(n).into_owned();
    let t = delta / denom;

    let w = [(&state.blocks.z_ts * &u)[0], (&state.blocks.z_rs * &u)[0]];
    let q = [(&v * &state.blocks.z_st)[0], (&v * &state.blocks.z_sr)[0]];
    let z_eff = state.z_eff + Matrix2::new(w[0] * q[0], w[0] * q[1], w[1] * q[0], w[1] * q[1]) * t;
    let h = gain_of(&z_eff, state.zg, state.zr)?;

    state.minv.ger(-t, &u, &v.transpose(), c(1.0, 0.0));
    state.loads[n] = z_new;
    state.z_eff = z_eff;
    state.h = h;
    Ok(())
}

/// `h(z) = (a0 + a1 z) / (g0 + g1 z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFractional {
    pub a0: Complex64,
    pub a1: Complex64,
    pub g0: Complex64,
    pub g1: Complex64,
}

impl LinearFractional {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        (self.a0 + self.a1 * z) / (self.g0 + self.g1 * z)
    }

    /// `|h(jx)|^2`; the `x -> +-inf` limit for infinite `x`.
    pub fn power_at_reactance(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return if self.g1.norm_sqr() == 0.0 {
                f64::INFINITY
            } else {
                self.a1.norm_sqr() / self.g1.norm_sqr()
            };
        }
        self.eval(c(0.0, x)).norm_sqr()
    }

    /// True when `h` does not depend on the load.
    pub fn is_flat(&self) -> bool {
        let cross = self.a0 * self.g1 - self.a1 * self.g0;
        cross.norm() <= 1e-14 * (self.a0.norm() * self.g1.norm() + self.a1.norm() * self.g0.norm())
    }

    /// Stationary points of `|h(jx)|^2` over real x.
    pub fn stationary_reactances(&self) -> Vec<f64> {
        // h(jx) = (alpha + beta x) / (gamma + delta x)
        let (alpha, beta) = (self.a0, self.a1 * c(0.0, 1.0));
        let (gamma, delta) = (self.g0, self.g1 * c(0.0, 1.0));
        let (n2, n1, n0) = (beta.norm_sqr(), 2.0 * (alpha * beta.conj()).re, alpha.norm_sqr());
        let (d2, d1, d0) = (delta.norm_sqr(), 2.0 * (gamma * delta.conj()).re, gamma.norm_sqr());
        // N'D - ND' = 0; the cubic terms cancel
        let qa = n2 * d1 - n1 * d2;
        let qb = 2.0 * (n2 * d0 - n0 * d2);
        let qc = n1 * d0 - n0 * d1;
        let scale = qa.abs().max(qb.abs()).max(qc.abs());
        if scale == 0.0 {
            return Vec::new();
        }
        if qa.abs() <= 1e-14 * scale {
            return if qb.abs() > 1e-14 * scale { vec![-qc / qb] } else { Vec::new() };
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Vec::new();
        }
        // numerically stable pair
        let sq = disc.sqrt();
        let qq = -0.5 * (qb + qb.signum() * sq);
        let mut roots = Vec::with_capacity(2);
        if qq != 0.0 {
            roots.push(qq / qa);
            roots.push(qc / qq);
        } else {
            roots.push(0.0);
        }
        roots
    }
}

/// Optimal value of load `n` with the other loads held fixed.
///
/// Reactive: candidates are the stationary points of `|h(jx)|^2`, the
/// open-circuit end and the current load; ties keep the current load. A
/// load-independent gain returns `j0`. Passive: `h` is analytic in the load
/// away from its pole, so when the pole lies in `Re z < 0` the maximum over
/// the closed right half-plane sits on the imaginary axis and the reactive
/// optimum is returned.
pub fn best_load(state: &OptState, n: usize, constraint: LoadConstraint) -> Result<Complex64> {
    let lf = state.channel_in_load(n)?;
    if lf.is_flat() {
        return Ok(c(0.0, 0.0));
    }
    if constraint == LoadConstraint::Passive && lf.g1 != c(0.0, 0.0) {
        let pole = -lf.g0 / lf.g1;
        if pole.re >= 0.0 {
            return Err(Error::Optimizer(format!(
                "gain of load {n} has a pole at {pole} inside the passive region"
            )));
        }
    }
    let current = state.loads[n];
    let admissible = match constraint {
        LoadConstraint::Reactive => current.re == 0.0,
        LoadConstraint::Passive => current.re >= 0.0,
    };
    let mut best = admissible
        .then(|| (current, lf.eval(current).norm_sqr()))
        .filter(|(_, p)| p.is_finite());

    let candidates = lf
        .stationary_reactances()
        .into_iter()
        .filter(|x| x.is_finite())
        .map(|x| x.clamp(-MAX_REACTANCE, MAX_REACTANCE))
        .chain([MAX_REACTANCE, -MAX_REACTANCE]);
    for x in candidates {
        let p = lf.power_at_reactance(x);
        if p.is_finite() && best.is_none_or(|(_, bp)| p > bp) {
            best = Some((c(0.0, x), p));
        }
    }
    best.map(|(z, _)| z)
        .ok_or_else(|| Error::Optimizer(format!("no finite candidate for load {n}")))
}

/// Best reactance for load `n` among `grid` (ohm); keeps the current load on ties.
pub fn best_load_on_grid(state: &OptState, n: usize, grid: &[f64]) -> Result<Complex64> {
    let lf = state.channel_in_load(n)?;
    let current = state.loads[n];
    let on_grid = current.re == 0.0 && grid.contains(&current.im);
    let mut best = if on_grid {
        Some((current, lf.eval(current).norm_sqr()))
    } else {
        None
    };
    for &x in grid {
        let z = c(0.0, x);
        let p = lf.eval(z).norm_sqr();
        if p.is_finite() && best.is_none_or(|(_, bp)| p > bp) {
            best = Some((z, p));
        }
    }
    best.map(|(z, _)| z)
        .ok_or_else(|| Error::Optimizer(format!("no finite grid candidate for load {n}")))
}

/// `log2(1 + |h|^2 * noise_power_ratio)` (bit/s/Hz).
pub fn achievable_rate(h: Complex64, noise_power_ratio: f64) -> f64 {
    (1.0 + h.norm_sqr() * noise_power_ratio).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub sweep: usize,
    pub ris_index: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct OptOutcome {
    pub loads: DVector<Complex64>,
    pub h: Complex64,
    pub objective: f64,
    pub objective_before: f64,
    pub rate: f64,
    pub sweeps: usize,
    pub trace: Vec<TraceEntry>,
    pub init: Init,
    /// Gain recomputed from a fresh inversion at the returned loads.
    pub h_fresh: Complex64,
}

pub fn initial_loads(n: usize, init: Init) -> DVector<Complex64> {
    match init {
        Init::Short => DVector::zeros(n),
        Init::Open => DVector::from_element(n, c(0.0, OPEN_CIRCUIT_REACTANCE)),
        Init::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DVector::from_fn(n, |_, _| c(0.0, rng.gen_range(-500.0..=500.0)))
        }
    }
}

/// Cyclic coordinate ascent over the RIS loads.
pub fn optimize(net: &PortNetwork, params: &OptParams) -> Result<OptOutcome> {
    params.validate()?;
    let blocks = partition(net)?;
    let n_ris = blocks.num_ris();
    let mut loads = initial_loads(n_ris, params.init);
    if let Some(grid) = &params.grid {
        // snap to the nearest grid value so every state is admissible
        for z in loads.iter_mut() {
            let x = grid
                .iter()
                .copied()
                .min_by(|a, b| (a - z.im).abs().total_cmp(&(b - z.im).abs()))
                .unwrap_or(0.0);
            *z = c(0.0, x);
        }
    }
    let mut state = OptState::new(blocks, loads, params.zg, params.zr)?;
    let scale = params.emf * params.emf;
    let objective = |s: &OptState| s.h.norm_sqr() * scale;

    let objective_before = objective(&state);
    let mut current = objective_before;
    let mut trace = Vec::with_capacity(n_ris * params.max_sweeps);
    let mut sweeps = 0;
    for sweep in 1..=params.max_sweeps {
        sweeps = sweep;
        let sweep_start = current;
        for n in 0..n_ris {
            let z = match &params.grid {
                Some(grid) => best_load_on_grid(&state, n, grid)?,
                None => best_load(&state, n, params.constraint)?,
            };
            if z != state.loads[n] {
                let backup = state.clone();
                match rank1_retune(&mut state, n, z) {
                    Ok(()) => {}
                    Err(Error::RefactorNeeded { .. }) => {
                        state.loads[n] = z;
                        state.refactorize()?;
                    }
                    Err(e) => return Err(e),
                }
                let value = objective(&state);
                if value > current {
                    current = value;
                } else {
                    // no strict gain: keep the previous configuration
                    state = backup;
                }
            }
            trace.push(TraceEntry {
                step: trace.len() + 1,
                sweep,
                ris_index: n,
                objective: current,
            });
        }
        // bound accumulated rank-1 drift
        state.refactorize()?;
        if current - sweep_start <= params.tol * sweep_start.abs() {
            break;
        }
    }

    let h_fresh = state.fresh_channel()?;
    Ok(OptOutcome {
        loads: state.loads.clone(),
        h: state.h,
        objective: current,
        objective_before,
        rate: achievable_rate(state.h * params.emf, params.noise_power_ratio),
        sweeps,
        trace,
        init: params.init,
        h_fresh,
    })
}

/// Objective `|h|^2` of `samples` uniformly random reactive configurations with
/// reactances in `[-x_max, x_max]`.
pub fn random_reactive_objectives(
    net: &PortNetwork,
    zg: Complex64,
    zr: Complex64,
    samples: usize,
    x_max: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let blocks = partition(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let loads = DVector::from_fn(blocks.num_ris(), |_, _| c(0.0, rng.gen_range(-x_max..=x_max)));
            let state = OptState::new(blocks.clone(), loads, zg, zr)?;
            Ok(state.h.norm_sqr())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Reciprocal toy network shaped like a small dipole link.
    pub(crate) fn toy_network(n_ris: usize, seed: u64) -> PortNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

    fn state_of(net: &PortNetwork, loads: DVector<Complex64>) -> OptState {
        OptState::new(partition(net).unwrap(), loads, c(50.0, 0.0), c(50.0, 0.0)).unwrap()
    }

    /// Full 4-port elimination by dense algebra.
    fn brute_gain(net: &PortNetwork, loads: &DVector<Complex64>) -> Complex64 {
        let n = loads.len();
        let mut zss = net.z.view((2, 2), (n, n)).into_owned();
        for i in 0..n {
            zss[(i, i)] += loads[i];
        }
        let zas = net.z.view((0, 2), (2, n)).into_owned();
        let zsa = net.z.view((2, 0), (n, 2)).into_owned();
        let zeff = net.z.view((0, 0), (2, 2)).into_owned() - zas * zss.try_inverse().unwrap() * zsa;
        let zg = c(50.0, 0.0);
        zg * zeff[(1, 0)] / ((zeff[(0, 0)] + zg) * (zeff[(1, 1)] + zg) - zeff[(1, 0)] * zeff[(0, 1)])
    }

    #[test]
    fn partition_dimensions() {
        let net = toy_network(1, 3);
        let b = partition(&net).unwrap();
        assert_eq!(b.z_ss.shape(), (1, 1));
        assert_eq!(b.z_ts.len(), 1);
        assert_eq!(b.z_ss[(0, 0)], net.z[(2, 2)]);
    }

    #[test]
    fn partition_needs_every_role() {
        let mut net = toy_network(2, 3);
        net.roles[1] = Role::Ris;
        assert!(partition(&net).is_err());
    }

    #[test]
    fn decoupled_ris_gives_direct_gain() {
        let mut net = toy_network(3, 5);
        for s in 2..5 {
            for a in 0..2 {
                net.z[(a, s)] = c(0.0, 0.0);
                net.z[(s, a)] = c(0.0, 0.0);
            }
        }
        let state = state_of(&net, DVector::from_element(3, c(0.0, 17.0)));
        let z0 = c(50.0, 0.0);
        let direct = two_port_gain(net.z[(0, 0)], net.z[(0, 1)], net.z[(1, 0)], net.z[(1, 1)], z0, z0).unwrap();
        assert_eq!(effective_channel(&state, z0, z0).unwrap(), direct);
    }

    #[test]
    fn open_circuit_limit() {
        let net = toy_network(3, 9);
        let state = state_of(&net, DVector::from_element(3, c(0.0, 1e9)));
        let z0 = c(50.0, 0.0);
        let direct = two_port_gain(net.z[(0, 0)], net.z[(0, 1)], net.z[(1, 0)], net.z[(1, 1)], z0, z0).unwrap();
        assert!((state.h - direct).norm() / direct.norm() < 1e-6);
    }

    #[test]
    fn two_load_elimination_matches_brute_force() {
        for seed in 0..10 {
            let net = toy_network(2, seed);
            let loads = DVector::from_vec(vec![c(0.0, 30.0), c(0.0, -80.0)]);
            let state = state_of(&net, loads.clone());
            let oracle = brute_gain(&net, &loads);
            assert!((state.h - oracle).norm() <= 1e-12 * oracle.norm());
        }
    }

    #[test]
    fn zero_delta_is_identity() {
        let net = toy_network(4, 1);
        let mut state = state_of(&net, DVector::from_element(4, c(0.0, 10.0)));
        let before = state.clone();
        rank1_retune(&mut state, 2, c(0.0, 10.0)).unwrap();
        assert_eq!(state.minv, before.minv);
        assert_eq!(state.h, before.h);
        assert_eq!(state.loads, before.loads);
    }

    #[test]
    fn retune_matches_fresh_inverse() {
        let net = toy_network(16, 2);
        let mut state = state_of(&net, DVector::zeros(16));
        rank1_retune(&mut state, 5, c(0.0, 120.0)).unwrap();
        let fresh = fresh_inverse(&state.blocks, &state.loads).unwrap();
        let err = (&state.minv - &fresh).norm() / fresh.norm();
        assert!(err < 1e-10);
        assert!((state.h - state.fresh_channel().unwrap()).norm() < 1e-10 * state.h.norm());
    }

    #[test]
    fn distinct_retunes_commute() {
        let net = toy_network(8, 4);
        let mut a = state_of(&net, DVector::zeros(8));
        let mut b = a.clone();
        rank1_retune(&mut a, 1, c(0.0, 40.0)).unwrap();
        rank1_retune(&mut a, 6, c(0.0, -90.0)).unwrap();
        rank1_retune(&mut b, 6, c(0.0, -90.0)).unwrap();
        rank1_retune(&mut b, 1, c(0.0, 40.0)).unwrap();
        assert!((&a.minv - &b.minv).norm() / a.minv.norm() < 1e-10);
    }

    #[test]
    fn tiny_denominator_refused() {
        let net = toy_network(2, 4);
        let mut state = state_of(&net, DVector::zeros(2));
        let m = state.minv[(0, 0)];
        // 1 + delta*m = 0
        let z = -c(1.0, 0.0) / m;
        let before = state.clone();
        assert!(matches!(rank1_retune(&mut state, 0, z), Err(Error::RefactorNeeded { index: 0, .. })));
        assert_eq!(state.loads, before.loads);
    }

    #[test]
    fn linear_fractional_matches_state() {
        let net = toy_network(5, 11);
        let state = state_of(&net, DVector::from_element(5, c(0.0, -20.0)));
        let lf = state.channel_in_load(3).unwrap();
        for x in [-300.0, -5.0, 0.0, 42.0, 900.0] {
            let mut loads = state.loads.clone();
            loads[3] = c(0.0, x);
            let oracle = brute_gain_general(&net, &loads);
            let got = lf.eval(c(0.0, x));
            assert!((got - oracle).norm() <= 1e-10 * oracle.norm(), "x = {x}");
        }
    }

    fn brute_gain_general(net: &PortNetwork, loads: &DVector<Complex64>) -> Complex64 {
        state_of(net, loads.clone()).h
    }

    #[test]
    fn flat_objective_returns_zero() {
        let net = toy_network(3, 8);
        let mut state = state_of(&net, DVector::from_element(3, c(0.0, 33.0)));
        // decouple load 1 from everything
        state.blocks.z_ts[1] = c(0.0, 0.0);
        state.blocks.z_rs[1] = c(0.0, 0.0);
        state.blocks.z_st[1] = c(0.0, 0.0);
        state.blocks.z_sr[1] = c(0.0, 0.0);
        for j in 0..3 {
            if j != 1 {
                state.blocks.z_ss[(1, j)] = c(0.0, 0.0);
                state.blocks.z_ss[(j, 1)] = c(0.0, 0.0);
            }
        }
        state.refactorize().unwrap();
        assert!(state.channel_in_load(1).unwrap().is_flat());
        assert_eq!(best_load(&state, 1, LoadConstraint::Reactive).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn best_load_never_worse_than_current() {
        for seed in 0..20 {
            let net = toy_network(4, seed);
            let state = state_of(&net, initial_loads(4, Init::Random(seed)));
            for n in 0..4 {
                let lf = state.channel_in_load(n).unwrap();
                let z = best_load(&state, n, LoadConstraint::Reactive).unwrap();
                assert_eq!(z.re, 0.0);
                assert!(lf.eval(z).norm_sqr() >= lf.eval(state.loads[n]).norm_sqr());
            }
        }
    }

    #[test]
    fn passive_best_beats_half_plane_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..10 {
            let net = toy_network(3, seed);
            let state = state_of(&net, DVector::zeros(3));
            let lf = state.channel_in_load(0).unwrap();
            let z = best_load(&state, 0, LoadConstraint::Passive).unwrap();
            assert!(z.re >= 0.0);
            let best = lf.eval(z).norm_sqr();
            for _ in 0..2000 {
                let s = c(rng.gen_range(0.0..500.0), rng.gen_range(-1000.0..1000.0));
                assert!(lf.eval(s).norm_sqr() <= best * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn optimize_is_monotone_and_consistent() {
        for seed in 0..5 {
            let net = toy_network(12, seed);
            let out = optimize(&net, &OptParams::default()).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1].objective >= w[0].objective));
            assert!(out.trace[0].objective >= out.objective_before);
            assert!(out.objective >= out.objective_before);
            assert!(out.loads.iter().all(|z| z.re == 0.0));
            assert!((out.h - out.h_fresh).norm() <= 1e-8 * out.h_fresh.norm());
        }
    }

    #[test]
    fn emf_scaling_keeps_argmax() {
        let net = toy_network(6, 21);
        let base = optimize(&net, &OptParams::default()).unwrap();
        let scaled = optimize(&net, &OptParams { emf: 3.0, ..OptParams::default() }).unwrap();
        assert_eq!(base.loads, scaled.loads);
        assert_relative_eq!(scaled.objective, 9.0 * base.objective, max_relative = 1e-12);
    }

    #[test]
    fn rate_values() {
        assert_eq!(achievable_rate(c(0.0, 0.0), 5.0), 0.0);
        assert_eq!(achievable_rate(c(1.0, 0.0), 1.0), 1.0);
        assert_relative_eq!(achievable_rate(c(0.0, 3f64.sqrt()), 1.0), 2.0, max_relative = 1e-15);
        assert_eq!(achievable_rate(c(0.5, 0.0), 12.0), 2.0);
    }

    #[test]
    fn params_validated() {
        let net = toy_network(2, 0);
        assert!(optimize(&net, &OptParams { tol: 0.0, ..OptParams::default() }).is_err());
        assert!(optimize(&net, &OptParams { max_sweeps: 0, ..OptParams::default() }).is_err());
    }
}
