//! Newton-Raphson AC power flow in polar form.
//!
//! Unknowns are the angles of every non-slack bus and the voltage magnitudes
//! of every PQ bus. The linear system solved each iteration is
//!
//! ```text
//! [ J11 J12 ] [ Δδ      ]   [ ΔP ]
//! [ J21 J22 ] [ Δ|V|/|V| ] = [ ΔQ ]
//! ```
//!
//! where the blocks are derivatives of the *calculated* injections (so that a
//! positive mismatch `P_sch - P_calc` produces the correction that raises
//! `P_calc`). The |V| columns are scaled by |V_j|.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{BusKind, NetworkModel};
use crate::linalg::lu_solve;
use crate::{Error, Result};

/// Per-bus voltage magnitudes (pu) and angles (radians), including the fixed
/// values of slack and PV buses.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub v_mag: Vec<f64>,
    pub delta: Vec<f64>,
}

impl StateVector {
    /// |V| = 1, δ = 0 on unknowns; slack and PV magnitudes and the slack angle
    /// come from the bus records.
    pub fn flat_start(net: &NetworkModel) -> Self {
        let mut v_mag = vec![1.0; net.n()];
        let mut delta = vec![0.0; net.n()];
        for (i, bus) in net.buses().iter().enumerate() {
            match bus.kind {
                BusKind::Slack => {
                    v_mag[i] = bus.v_mag;
                    delta[i] = bus.v_angle_rad();
                }
                BusKind::PV => v_mag[i] = bus.v_mag,
                BusKind::PQ => {}
            }
        }
        Self { v_mag, delta }
    }

    /// Initial guess taken verbatim from the bus records.
    pub fn from_records(net: &NetworkModel) -> Self {
        Self {
            v_mag: net.buses().iter().map(|b| b.v_mag).collect(),
            delta: net.buses().iter().map(|b| b.v_angle_rad()).collect(),
        }
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.delta)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    fn check(&self, net: &NetworkModel) -> Result<()> {
        for len in [self.v_mag.len(), self.delta.len()] {
            if len != net.n() {
                return Err(Error::DimensionMismatch {
                    expected: net.n(),
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// Stacked `[ΔP over non-slack buses, ΔQ over PQ buses]`, each block in
/// ascending bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchVector {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

impl MismatchVector {
    pub fn len(&self) -> usize {
        self.dp.len() + self.dq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.dp.iter().chain(&self.dq).copied())
    }

    pub fn inf_norm(&self) -> f64 {
        self.dp
            .iter()
            .chain(&self.dq)
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    /// ∂P/∂δ
    pub j11: DMatrix<f64>,
    /// |V|·∂P/∂|V|
    pub j12: DMatrix<f64>,
    /// ∂Q/∂δ
    pub j21: DMatrix<f64>,
    /// |V|·∂Q/∂|V|
    pub j22: DMatrix<f64>,
}

impl JacobianBlocks {
    pub fn assembled(&self) -> DMatrix<f64> {
        let (na, nv) = (self.j11.nrows(), self.j22.nrows());
        let mut m = DMatrix::zeros(na + nv, na + nv);
        m.view_mut((0, 0), (na, na)).copy_from(&self.j11);
        m.view_mut((0, na), (na, nv)).copy_from(&self.j12);
        m.view_mut((na, 0), (nv, na)).copy_from(&self.j21);
        m.view_mut((na, na), (nv, nv)).copy_from(&self.j22);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Infinity-norm threshold on the stacked mismatch, per-unit.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from |V| = 1∠0 instead of the bus records.
    pub flat_start: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            flat_start: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Validation(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter < 1 {
            return Err(Error::Validation("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    /// Radians.
    pub delta: Vec<f64>,
    pub p_calc: Vec<f64>,
    pub q_calc: Vec<f64>,
    /// Number of state updates performed.
    pub iterations: usize,
    /// Mismatch infinity-norm before the first update.
    pub initial_mismatch: f64,
    /// Mismatch infinity-norm after each update (Gauss-Seidel: largest
    /// voltage change per sweep).
    pub mismatch_history: Vec<f64>,
    pub converged: bool,
}

impl PowerFlowSolution {
    pub fn state(&self) -> StateVector {
        StateVector {
            v_mag: self.v_mag.clone(),
            delta: self.delta.clone(),
        }
    }

    pub fn final_mismatch(&self) -> f64 {
        self.mismatch_history
            .last()
            .copied()
            .unwrap_or(self.initial_mismatch)
    }

    /// Sum of calculated real injections, i.e. real line losses.
    pub fn total_loss(&self) -> f64 {
        self.p_calc.iter().sum()
    }
}

/// Calculated injections `(P_i, Q_i)` in per-unit from the polar sums.
pub fn calc_injections(state: &StateVector, net: &NetworkModel) -> Result<(Vec<f64>, Vec<f64>)> {
    state.check(net)?;
    let y = net.ybus();
    let n = net.n();
    let (v, d) = (&state.v_mag, &state.delta);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = v[i] * v[i] * y.g(i, i);
        let mut qi = -v[i] * v[i] * y.b(i, i);
        for k in (0..n).filter(|&k| k != i) {
            let ymag = y.magnitude(i, k);
            if ymag == 0.0 {
                continue;
            }
            let arg = y.angle(i, k) + d[k] - d[i];
            let vvy = v[i] * v[k] * ymag;
            pi += vvy * arg.cos();
            qi -= vvy * arg.sin();
        }
        p[i] = pi;
        q[i] = qi;
    }
    Ok((p, q))
}

pub fn mismatch(state: &StateVector, net: &NetworkModel) -> Result<MismatchVector> {
    let (p, q) = calc_injections(state, net)?;
    let sched = net.scheduled_injections();
    let dp = net
        .non_slack()
        .into_iter()
        .map(|i| sched[i].p.expect("non-slack P is scheduled") - p[i])
        .collect();
    let dq = net
        .indices_of(BusKind::PQ)
        .into_iter()
        .map(|i| sched[i].q.expect("PQ Q is scheduled") - q[i])
        .collect();
    Ok(MismatchVector { dp, dq })
}

pub fn jacobian(state: &StateVector, net: &NetworkModel) -> Result<JacobianBlocks> {
    state.check(net)?;
    let y = net.ybus();
    let n = net.n();
    let (v, d) = (&state.v_mag, &state.delta);

    // Full n×n matrices; M_ij = -|V_i V_j Y_ij| sin(θ_ij + δ_j - δ_i) and
    // N_ij = -|V_i V_j Y_ij| cos(θ_ij + δ_j - δ_i) off the diagonal.
    let mut dp_dd = DMatrix::zeros(n, n);
    let mut dp_dv = DMatrix::zeros(n, n);
    let mut dq_dd = DMatrix::zeros(n, n);
    let mut dq_dv = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut sum_m = 0.0;
        let mut sum_n = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let ymag = y.magnitude(i, j);
            if ymag == 0.0 {
                continue;
            }
            let arg = y.angle(i, j) + d[j] - d[i];
            let vvy = v[i] * v[j] * ymag;
            let m = -vvy * arg.sin();
            let nn = -vvy * arg.cos();
            dp_dd[(i, j)] = m;
            dp_dv[(i, j)] = -nn;
            dq_dd[(i, j)] = nn;
            dq_dv[(i, j)] = m;
            sum_m += m;
            sum_n += nn;
        }
        let v2 = v[i] * v[i];
        dp_dd[(i, i)] = -sum_m;
        dp_dv[(i, i)] = -sum_n + 2.0 * v2 * y.g(i, i);
        dq_dd[(i, i)] = -sum_n;
        dq_dv[(i, i)] = sum_m - 2.0 * v2 * y.b(i, i);
    }

    let angles = net.non_slack();
    let mags = net.indices_of(BusKind::PQ);
    let select = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
    };
    Ok(JacobianBlocks {
        j11: select(&dp_dd, &angles, &angles),
        j12: select(&dp_dv, &angles, &mags),
        j21: select(&dq_dd, &mags, &angles),
        j22: select(&dq_dv, &mags, &mags),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrStep {
    pub state: StateVector,
    /// Mismatch infinity-norm at the input state.
    pub mismatch_norm: f64,
    /// Infinity-norm of `[Δδ; Δ|V|/|V|]`.
    pub correction_norm: f64,
}

/// Solves `jac · x = rhs` and applies `x` as `[Δδ; Δ|V|/|V|]` to `state`.
pub fn apply_correction(
    state: &StateVector,
    net: &NetworkModel,
    jac: &DMatrix<f64>,
    rhs: &MismatchVector,
) -> Result<(StateVector, f64)> {
    let dx = lu_solve(jac, &rhs.stacked())?;
    let angles = net.non_slack();
    let mags = net.indices_of(BusKind::PQ);
    let mut next = state.clone();
    for (k, &i) in angles.iter().enumerate() {
        next.delta[i] += dx[k];
    }
    for (k, &i) in mags.iter().enumerate() {
        next.v_mag[i] *= 1.0 + dx[angles.len() + k];
    }
    Ok((next, dx.amax()))
}

/// One Newton-Raphson update.
pub fn nr_step(state: &StateVector, net: &NetworkModel) -> Result<NrStep> {
    let mis = mismatch(state, net)?;
    let jac = jacobian(state, net)?.assembled();
    let (next, correction_norm) = apply_correction(state, net, &jac, &mis)?;
    Ok(NrStep {
        state: next,
        mismatch_norm: mis.inf_norm(),
        correction_norm,
    })
}

fn finish(
    net: &NetworkModel,
    state: StateVector,
    iterations: usize,
    initial_mismatch: f64,
    history: Vec<f64>,
    converged: bool,
) -> Result<PowerFlowSolution> {
    let (p_calc, q_calc) = calc_injections(&state, net)?;
    Ok(PowerFlowSolution {
        v_mag: state.v_mag,
        delta: state.delta,
        p_calc,
        q_calc,
        iterations,
        initial_mismatch,
        mismatch_history: history,
        converged,
    })
}

/// Newton-Raphson power flow.
///
/// Fails with [`Error::NotConverged`] (carrying the mismatch history) if the
/// tolerance is not met within `max_iter` updates.
pub fn solve(net: &NetworkModel, opts: &SolveOptions) -> Result<PowerFlowSolution> {
    opts.validate()?;
    let mut state = if opts.flat_start {
        StateVector::flat_start(net)
    } else {
        StateVector::from_records(net)
    };
    let mut mis = mismatch(&state, net)?;
    let initial = mis.inf_norm();
    let mut history = Vec::new();
    let mut norm = initial;
    let mut iterations = 0;
    while norm >= opts.tol || !norm.is_finite() {
        if iterations == opts.max_iter || !norm.is_finite() {
            return Err(Error::NotConverged {
                iterations,
                last: norm,
                history,
            });
        }
        let jac = jacobian(&state, net)?.assembled();
        state = apply_correction(&state, net, &jac, &mis)?.0;
        iterations += 1;
        mis = mismatch(&state, net)?;
        norm = mis.inf_norm();
        history.push(norm);
    }
    finish(net, state, iterations, initial, history, true)
}

/// Gauss-Seidel reference solver, used to cross-validate [`solve`].
///
/// Classic in-place sweep over buses in ascending order. PQ buses use the
/// scheduled `P - jQ`; PV buses recompute Q from the current voltages, update,
/// then restore the scheduled magnitude. Stops when the largest voltage
/// change in a sweep drops below `tol`.
pub fn gauss_seidel_oracle(
    net: &NetworkModel,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    let y = net.ybus();
    let n = net.n();
    let sched = net.scheduled_injections();
    let state0 = StateVector::flat_start(net);
    let mut v = state0.phasors();
    let initial = mismatch(&state0, net)?.inf_norm();
    let mut history = Vec::new();

    for sweep in 1..=max_iter {
        let mut largest = 0.0f64;
        for i in 0..n {
            let kind = net.buses()[i].kind;
            if kind == BusKind::Slack {
                continue;
            }
            let coupled: Complex64 = (0..n).filter(|&k| k != i).map(|k| y.get(i, k) * v[k]).sum();
            let p = sched[i].p.expect("scheduled P");
            let q = match kind {
                BusKind::PQ => sched[i].q.expect("scheduled Q"),
                _ => {
                    let total = coupled + y.get(i, i) * v[i];
                    -(v[i].conj() * total).im
                }
            };
            let mut vi = (Complex64::new(p, -q) / v[i].conj() - coupled) / y.get(i, i);
            if kind == BusKind::PV {
                vi = Complex64::from_polar(net.buses()[i].v_mag, vi.arg());
            }
            largest = largest.max((vi - v[i]).norm());
            v[i] = vi;
        }
        history.push(largest);
        if !largest.is_finite() {
            break;
        }
        if largest < tol {
            let state = StateVector {
                v_mag: v.iter().map(|x| x.norm()).collect(),
                delta: v.iter().map(|x| x.arg()).collect(),
            };
            return finish(net, state, sweep, initial, history, true);
        }
    }
    Err(Error::NotConverged {
        iterations: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Serializable solution report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub buses: Vec<BusResult>,
    pub convergence: ConvergenceRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusResult {
    pub bus: usize,
    pub v_mag_pu: f64,
    pub delta_deg: f64,
    pub p_pu: f64,
    pub q_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iterations: usize,
    pub converged: bool,
    pub initial_mismatch: f64,
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn document(&self) -> SolutionDocument {
        SolutionDocument {
            buses: (0..self.v_mag.len())
                .map(|i| BusResult {
                    bus: i + 1,
                    v_mag_pu: self.v_mag[i],
                    delta_deg: self.delta[i].to_degrees(),
                    p_pu: self.p_calc[i],
                    q_pu: self.q_calc[i],
                })
                .collect(),
            convergence: ConvergenceRecord {
                iterations: self.iterations,
                converged: self.converged,
                initial_mismatch: self.initial_mismatch,
                mismatch_history: self.mismatch_history.clone(),
            },
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bus,v_mag_pu,delta_deg,p_pu,q_pu\n");
        for b in self.document().buses {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                b.bus, b.v_mag_pu, b.delta_deg, b.p_pu, b.q_pu
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{builtin_4bus, AdmittanceMatrix, BusRecord, PerUnitBase};

    /// S_i = V_i (Σ_k Y_ik V_k)^* in rectangular form.
    fn rectangular_injections(state: &StateVector, net: &NetworkModel) -> (Vec<f64>, Vec<f64>) {
        let v = state.phasors();
        let y = net.ybus();
        let n = net.n();
        let s: Vec<Complex64> = (0..n)
            .map(|i| {
                let current: Complex64 = (0..n).map(|k| y.get(i, k) * v[k]).sum();
                v[i] * current.conj()
            })
            .collect();
        (
            s.iter().map(|x| x.re).collect(),
            s.iter().map(|x| x.im).collect(),
        )
    }

    /// Four-bus topology without line charging (rows sum to zero), no load or
    /// generation, all set-points 1.0 pu.
    fn zero_injection_net() -> NetworkModel {
        let base = builtin_4bus();
        let mut y = base.ybus().clone();
        for i in 0..4 {
            let off: Complex64 = (0..4).filter(|&k| k != i).map(|k| y.get(i, k)).sum();
            y.set(i, i, -off);
        }
        let buses: Vec<BusRecord> = base
            .buses()
            .iter()
            .map(|b| BusRecord {
                p_load: 0.0,
                q_load: 0.0,
                p_gen: b.p_gen.map(|_| 0.0),
                q_gen: b.q_gen.map(|_| 0.0),
                v_mag: 1.0,
                ..b.clone()
            })
            .collect();
        NetworkModel::new(buses, y, PerUnitBase::default()).unwrap()
    }

    fn diagonal_only_net() -> NetworkModel {
        let base = builtin_4bus();
        let mut y = AdmittanceMatrix::zeros(4);
        for i in 0..4 {
            y.set(i, i, base.ybus().get(i, i));
        }
        NetworkModel::new(base.buses().to_vec(), y, PerUnitBase::default()).unwrap()
    }

    #[test]
    fn diagonal_only_injections() {
        let net = diagonal_only_net();
        let state = StateVector {
            v_mag: vec![1.0; 4],
            delta: vec![0.3, -0.2, 0.1, 0.7],
        };
        let (p, q) = calc_injections(&state, &net).unwrap();
        for i in 0..4 {
            assert_eq!(p[i], net.ybus().g(i, i));
            assert_eq!(q[i], -net.ybus().b(i, i));
        }
    }

    #[test]
    fn zero_matrix_gives_zero_injections() {
        let net = NetworkModel::new(
            builtin_4bus().buses().to_vec(),
            AdmittanceMatrix::zeros(4),
            PerUnitBase::default(),
        )
        .unwrap();
        let (p, q) = calc_injections(&StateVector::flat_start(&net), &net).unwrap();
        assert!(p.iter().chain(&q).all(|&x| x == 0.0));
    }

    #[test]
    fn polar_matches_rectangular_at_flat_start() {
        let net = builtin_4bus();
        let state = StateVector::flat_start(&net);
        let (p, q) = calc_injections(&state, &net).unwrap();
        let (pr, qr) = rectangular_injections(&state, &net);
        for i in 0..4 {
            assert!((p[i] - pr[i]).abs() < 1e-10, "P{i}");
            assert!((q[i] - qr[i]).abs() < 1e-10, "Q{i}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = builtin_4bus();
        let state = StateVector {
            v_mag: vec![1.0; 3],
            delta: vec![0.0; 3],
        };
        assert!(matches!(
            calc_injections(&state, &net),
            Err(Error::DimensionMismatch {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn mismatch_at_flat_start_uses_scheduled_minus_calculated() {
        let net = builtin_4bus();
        let state = StateVector::flat_start(&net);
        let mis = mismatch(&state, &net).unwrap();
        assert_eq!(mis.dp.len(), 3);
        assert_eq!(mis.dq.len(), 2);
        let (pr, qr) = rectangular_injections(&state, &net);
        let expected_dp = [-1.70 - pr[1], -2.00 - pr[2], 2.38 - pr[3]];
        let expected_dq = [-1.0535 - qr[1], -1.2394 - qr[2]];
        for (a, b) in mis.dp.iter().zip(expected_dp) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in mis.dq.iter().zip(expected_dq) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_injection_network_flat_is_solution() {
        let net = zero_injection_net();
        let mis = mismatch(&StateVector::flat_start(&net), &net).unwrap();
        assert!(mis.inf_norm() < 1e-12);
        let sol = solve(&net, &SolveOptions::default()).unwrap();
        assert!(sol.iterations <= 1);
        assert!(sol.converged);
    }

    #[test]
    fn diagonal_only_has_no_angle_coupling() {
        let net = diagonal_only_net();
        let state = StateVector {
            v_mag: vec![1.0, 0.97, 1.03, 1.02],
            delta: vec![0.0, -0.1, 0.05, 0.2],
        };
        let jac = jacobian(&state, &net).unwrap();
        assert!(jac.j11.iter().all(|&x| x == 0.0));
        assert!(jac.j21.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_bus_jacobian_closed_form() {
        // slack + PQ joined by one line y = g + jb; Y = [[y, -y], [-y, y]].
        let (g, b) = (2.0, -10.0);
        let y = Complex64::new(g, b);
        let ybus = AdmittanceMatrix::from_rows(vec![vec![y, -y], vec![-y, y]]).unwrap();
        let buses = vec![
            BusRecord {
                id: 1,
                kind: BusKind::Slack,
                p_load: 0.0,
                q_load: 0.0,
                p_gen: None,
                q_gen: None,
                v_mag: 1.0,
                v_angle: 0.0,
            },
            BusRecord {
                id: 2,
                kind: BusKind::PQ,
                p_load: 50.0,
                q_load: 20.0,
                p_gen: Some(0.0),
                q_gen: Some(0.0),
                v_mag: 1.0,
                v_angle: 0.0,
            },
        ];
        let net = NetworkModel::new(buses, ybus, PerUnitBase::default()).unwrap();
        let (v2, d2) = (0.95_f64, -0.1_f64);
        let state = StateVector {
            v_mag: vec![1.0, v2],
            delta: vec![0.0, d2],
        };
        // With Y21 = gm + j·bm = -y:
        //   P2 = V2² g + V2 (gm cos d2 + bm sin d2)
        //   Q2 = -V2² b - V2 (bm cos d2 - gm sin d2)
        let (gm, bm) = (-g, -b);
        let dp_dd = v2 * (bm * d2.cos() - gm * d2.sin());
        let v_dp_dv = 2.0 * v2 * v2 * g + v2 * (gm * d2.cos() + bm * d2.sin());
        let dq_dd = v2 * (gm * d2.cos() + bm * d2.sin());
        let v_dq_dv = -2.0 * v2 * v2 * b + v2 * (gm * d2.sin() - bm * d2.cos());
        let jac = jacobian(&state, &net).unwrap().assembled();
        let expected = DMatrix::from_row_slice(2, 2, &[dp_dd, v_dp_dv, dq_dd, v_dq_dv]);
        assert!((jac - expected).amax() < 1e-14);
    }

    #[test]
    fn step_at_solution_is_fixed_point() {
        let net = builtin_4bus();
        let sol = solve(
            &net,
            &SolveOptions {
                tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        let step = nr_step(&sol.state(), &net).unwrap();
        assert!(step.correction_norm < 1e-10);
        for i in 0..4 {
            assert!((step.state.v_mag[i] - sol.v_mag[i]).abs() < 1e-9);
            assert!((step.state.delta[i] - sol.delta[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_reduces_mismatch() {
        let net = builtin_4bus();
        let s0 = StateVector::flat_start(&net);
        let step = nr_step(&s0, &net).unwrap();
        let after = mismatch(&step.state, &net).unwrap().inf_norm();
        assert!(after < step.mismatch_norm);
    }

    #[test]
    fn singular_jacobian_detected() {
        let net = builtin_4bus();
        let s0 = StateVector::flat_start(&net);
        let mis = mismatch(&s0, &net).unwrap();
        let singular = DMatrix::from_element(5, 5, 1.0);
        assert!(matches!(
            apply_correction(&s0, &net, &singular, &mis),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn max_iter_one_not_converged() {
        let opts = SolveOptions {
            tol: 1e-12,
            max_iter: 1,
            flat_start: true,
        };
        match solve(&builtin_4bus(), &opts) {
            Err(Error::NotConverged {
                history,
                iterations,
                ..
            }) => {
                assert_eq!(history.len(), 1);
                assert_eq!(iterations, 1);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn invalid_options_rejected() {
        let opts = SolveOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            solve(&builtin_4bus(), &opts),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn quadratic_convergence() {
        let sol = solve(
            &builtin_4bus(),
            &SolveOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        let mut norms = vec![sol.initial_mismatch];
        norms.extend(&sol.mismatch_history);
        for w in norms.windows(2) {
            // skip pairs where round-off dominates
            if w[0] < 1e-2 && w[0] > 1e-7 {
                assert!(w[1] < 10.0 * w[0] * w[0], "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn losses_nonnegative() {
        let sol = solve(&builtin_4bus(), &SolveOptions::default()).unwrap();
        assert!(sol.total_loss() >= 0.0);
    }

    #[test]
    fn gauss_seidel_zero_injection_is_flat() {
        let net = zero_injection_net();
        let sol = gauss_seidel_oracle(&net, 1e-12, 100).unwrap();
        for i in 0..4 {
            assert!((sol.v_mag[i] - 1.0).abs() < 1e-12);
            assert!(sol.delta[i].abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_seidel_agrees_with_newton() {
        let net = builtin_4bus();
        let gs = gauss_seidel_oracle(&net, 1e-12, 10_000).unwrap();
        assert!(gs.converged);
        let nr = solve(&net, &SolveOptions::default()).unwrap();
        for i in 0..4 {
            assert!((gs.v_mag[i] - nr.v_mag[i]).abs() < 1e-6);
            assert!((gs.delta[i] - nr.delta[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn document_and_csv() {
        let sol = solve(&builtin_4bus(), &SolveOptions::default()).unwrap();
        let doc = sol.document();
        assert_eq!(doc.buses.len(), 4);
        assert_eq!(doc.convergence.iterations, sol.iterations);
        let csv = sol.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("bus,v_mag_pu,delta_deg,p_pu,q_pu"));
    }
}
