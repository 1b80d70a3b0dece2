use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spin::{spin_ladder, Spin};
use super::state::{coherent_ket, DensityMatrix, ReservoirSpec};
use crate::activation::{ActivationCurve, Provenance};
use crate::par::Execution;
use crate::{seeding, Error, Result};

/// Change in `<σ_z>` across one full schedule cycle below which the probe
/// is considered stationary.
pub const STEADY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PropagatorMode {
    /// `exp(-i H tau)` through the spectral decomposition of `H`.
    #[default]
    ExactExponential,
    /// `1 - i H tau - (H tau)^2 / 2`. Not exactly unitary, so the probe is
    /// renormalized to unit trace after every collision.
    SecondOrderTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    /// Interaction time per collision, in units of the resonator period.
    pub tau: f64,
    /// Upper bound on the number of collisions.
    pub n_collisions: usize,
    /// Probe amplitude-damping rate.
    pub gamma: f64,
    pub mode: PropagatorMode,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self {
            tau: 3.0,
            n_collisions: 20_000,
            gamma: 2e-5,
            mode: PropagatorMode::ExactExponential,
        }
    }
}

impl CollisionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Validation(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.n_collisions < 1 {
            return Err(Error::Validation("n_collisions must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Excited-state decay probability accumulated over one collision.
    pub fn damping_probability(&self) -> f64 {
        -(-self.gamma * self.tau).exp_m1()
    }
}

fn qubit_op(a: f64, b: f64, c: f64, d: f64) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(2, 2, &[a, b, c, d].map(|x| Complex64::new(x, 0.0)))
}

/// `σ⁺ ⊗ J⁻ + σ⁻ ⊗ J⁺` on probe ⊗ unit (probe index major). Real symmetric.
fn exchange_operator(spin: Spin) -> DMatrix<Complex64> {
    let ops = spin_ladder(spin);
    let sigma_plus = qubit_op(0.0, 1.0, 0.0, 0.0);
    let sigma_minus = qubit_op(0.0, 0.0, 1.0, 0.0);
    sigma_plus.kronecker(&ops.j_minus) + sigma_minus.kronecker(&ops.j_plus)
}

/// Propagator of one collision on the probe ⊗ unit space.
pub fn collision_unitary(spec: &ReservoirSpec, params: &CollisionParams) -> DMatrix<Complex64> {
    let k = exchange_operator(spec.spin);
    let dim = k.nrows();
    let theta = spec.g * params.tau;
    match params.mode {
        PropagatorMode::ExactExponential => {
            let real = k.map(|c| c.re);
            let eig = real.symmetric_eigen();
            let vecs = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
            let phases = DMatrix::from_diagonal(
                &eig.eigenvalues
                    .map(|l| Complex64::from_polar(1.0, -l * theta)),
            );
            &vecs * phases * vecs.adjoint()
        }
        PropagatorMode::SecondOrderTruncation => {
            let id = DMatrix::<Complex64>::identity(dim, dim);
            let k2 = &k * &k;
            id - k.map(|c| c * Complex64::new(0.0, theta)) - k2.map(|c| c * (theta * theta / 2.0))
        }
    }
}

fn amplitude_damp(rho: &Matrix2<Complex64>, p: f64) -> Matrix2<Complex64> {
    if p == 0.0 {
        return *rho;
    }
    let keep = (1.0 - p).sqrt();
    let (ee, eg, ge, gg) = (rho[(0, 0)], rho[(0, 1)], rho[(1, 0)], rho[(1, 1)]);
    Matrix2::new(ee * (1.0 - p), eg * keep, ge * keep, gg + ee * p)
}

fn renormalize(rho: &mut Matrix2<Complex64>) {
    let tr = rho.trace();
    *rho /= tr;
}

/// One collision computed literally: `tr_unit[U (ρ ⊗ ρ_unit) U†]`, followed
/// by probe amplitude damping over `tau`.
pub fn collide_once(
    probe: &DensityMatrix,
    spec: &ReservoirSpec,
    unitary: &DMatrix<Complex64>,
    params: &CollisionParams,
) -> DensityMatrix {
    let unit = super::state::reservoir_unit_state(spec);
    let d = unit.dim();
    let joint = probe.0.kronecker(&unit.0);
    let evolved = unitary * joint * unitary.adjoint();
    let mut reduced = Matrix2::zeros();
    for a in 0..2 {
        for b in 0..2 {
            reduced[(a, b)] = (0..d).map(|k| evolved[(a * d + k, b * d + k)]).sum();
        }
    }
    if params.mode == PropagatorMode::SecondOrderTruncation {
        renormalize(&mut reduced);
    }
    let damped = amplitude_damp(&reduced, params.damping_probability());
    DensityMatrix::from_matrix2(&damped)
}

/// The probe channel induced by one collision with a fresh pure unit, in
/// Kraus form: `K_k = <k| U |ψ_unit>`. Equivalent to [`collide_once`] but
/// avoids building the joint state on every step.
#[derive(Debug, Clone)]
pub struct CollisionChannel {
    kraus: Vec<Matrix2<Complex64>>,
    damping: f64,
    renormalize: bool,
}

impl CollisionChannel {
    pub fn new(spec: &ReservoirSpec, params: &CollisionParams) -> Self {
        let u = collision_unitary(spec, params);
        let psi = coherent_ket(spec.spin, spec.theta, spec.phi);
        let d = psi.len();
        let kraus = (0..d)
            .map(|k| {
                Matrix2::from_fn(|a, b| (0..d).map(|l| u[(a * d + k, b * d + l)] * psi[l]).sum())
            })
            .collect();
        Self {
            kraus,
            damping: params.damping_probability(),
            renormalize: params.mode == PropagatorMode::SecondOrderTruncation,
        }
    }

    pub fn apply(&self, rho: &Matrix2<Complex64>) -> Matrix2<Complex64> {
        let mut out = Matrix2::zeros();
        for k in &self.kraus {
            out += k * rho * k.adjoint();
        }
        if self.renormalize {
            renormalize(&mut out);
        }
        amplitude_damp(&out, self.damping)
    }

    pub fn apply_to(&self, rho: &DensityMatrix) -> DensityMatrix {
        DensityMatrix::from_matrix2(&self.apply(&rho.to_matrix2()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Cycle through the reservoirs in order.
    RoundRobin,
    /// Draw reservoir `i` with probability `g_i² / Σ g_k²` each collision.
    /// The drawn unit couples with the total strength `sqrt(Σ g_k²)`, so the
    /// averaged map is the `g²`-weighted mixture of single-reservoir maps.
    WeightedRandom { seed: u64, stream: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateResult {
    /// Stationary `<σ_z>`: the mean over the final schedule cycle for
    /// round-robin runs, the mean over the second half of the trajectory for
    /// random schedules.
    pub sigma_z: f64,
    /// Probe state after the last collision.
    pub rho: DensityMatrix,
    pub collisions_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub result: SteadyStateResult,
    /// `<σ_z>` after each collision.
    pub trajectory: Vec<f64>,
}

fn total_coupling_sq(reservoirs: &[ReservoirSpec]) -> f64 {
    reservoirs.iter().map(|r| r.g * r.g).sum()
}

/// Repeated collisions until the cycle-to-cycle change in `<σ_z>` drops below
/// [`STEADY_THRESHOLD`] or `params.n_collisions` is reached.
pub fn evolve_collisions(
    probe: &DensityMatrix,
    reservoirs: &[ReservoirSpec],
    params: &CollisionParams,
    schedule: Schedule,
) -> Result<Evolution> {
    params.validate()?;
    for r in reservoirs {
        r.validate()?;
    }
    let total = total_coupling_sq(reservoirs);
    if !(total > 0.0) {
        return Err(Error::NoCoupling);
    }
    if probe.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: probe.dim(),
        });
    }

    let cycle = reservoirs.len();
    let mut rho = probe.to_matrix2();
    let mut trajectory = Vec::with_capacity(params.n_collisions.min(1 << 16));
    let sz = |m: &Matrix2<Complex64>| m[(0, 0)].re - m[(1, 1)].re;
    let mut last_cycle_end = sz(&rho);
    let mut converged = false;

    match schedule {
        Schedule::RoundRobin => {
            let channels: Vec<_> = reservoirs
                .iter()
                .map(|r| CollisionChannel::new(r, params))
                .collect();
            for n in 0..params.n_collisions {
                rho = channels[n % cycle].apply(&rho);
                trajectory.push(sz(&rho));
                if (n + 1) % cycle == 0 {
                    let now = sz(&rho);
                    if (now - last_cycle_end).abs() < STEADY_THRESHOLD {
                        converged = true;
                        break;
                    }
                    last_cycle_end = now;
                }
            }
        }
        Schedule::WeightedRandom { seed, stream } => {
            let g_tot = total.sqrt();
            let channels: Vec<_> = reservoirs
                .iter()
                .map(|r| CollisionChannel::new(&ReservoirSpec { g: g_tot, ..*r }, params))
                .collect();
            let cumulative: Vec<f64> = reservoirs
                .iter()
                .scan(0.0, |acc, r| {
                    *acc += r.g * r.g / total;
                    Some(*acc)
                })
                .collect();
            let mut rng = seeding::rng_for(seed, stream);
            for n in 0..params.n_collisions {
                let x: f64 = rng.random();
                let pick = cumulative.iter().position(|&c| x < c).unwrap_or(cycle - 1);
                rho = channels[pick].apply(&rho);
                trajectory.push(sz(&rho));
                if (n + 1) % cycle == 0 {
                    let now = sz(&rho);
                    if (now - last_cycle_end).abs() < STEADY_THRESHOLD {
                        converged = true;
                        break;
                    }
                    last_cycle_end = now;
                }
            }
        }
    }

    let window = match schedule {
        Schedule::RoundRobin => cycle.min(trajectory.len()),
        Schedule::WeightedRandom { .. } => (trajectory.len() / 2).max(1),
    };
    let tail = &trajectory[trajectory.len() - window..];
    let sigma_z = tail.iter().sum::<f64>() / window as f64;

    Ok(Evolution {
        result: SteadyStateResult {
            sigma_z,
            rho: DensityMatrix::from_matrix2(&rho),
            collisions_used: trajectory.len(),
            converged,
        },
        trajectory,
    })
}

/// Weak-coupling steady state `Σ g_i² m_i / Σ g_i²`, with `m_i` the
/// normalized magnetization of reservoir `i`.
pub fn steady_state_closed_form(reservoirs: &[ReservoirSpec]) -> Result<f64> {
    let total = total_coupling_sq(reservoirs);
    if !(total > 0.0) {
        return Err(Error::NoCoupling);
    }
    Ok(reservoirs
        .iter()
        .map(|r| r.g * r.g * r.magnetization())
        .sum::<f64>()
        / total)
}

/// Settings for sweeping the two-reservoir transfer curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Total coupling; the two reservoirs share `g²` as `(1 ± u)/2`.
    pub g: f64,
    pub params: CollisionParams,
    pub n_points: usize,
    /// `None` runs round-robin; `Some(seed)` uses the weighted-random
    /// schedule with one stream per sweep point.
    pub seed: Option<u64>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            g: 0.01,
            params: CollisionParams::default(),
            n_points: 41,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferPoint {
    pub u: f64,
    pub sigma_z: f64,
    pub collisions_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCurve {
    pub spin: Spin,
    pub config: TransferConfig,
    pub points: Vec<TransferPoint>,
}

impl TransferCurve {
    pub fn activation_curve(&self) -> ActivationCurve {
        ActivationCurve {
            points: self.points.iter().map(|p| (p.u, p.sigma_z)).collect(),
            provenance: Provenance {
                source: "transfer_curve".into(),
                spin: Some(self.spin),
                seed: self.config.seed,
                g: Some(self.config.g),
                tau: Some(self.config.params.tau),
                gamma: Some(self.config.params.gamma),
            },
        }
    }

    /// Rows `u,sigma_z,collisions_used,converged`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,sigma_z,collisions_used,converged\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                p.u, p.sigma_z, p.collisions_used, p.converged
            ));
        }
        s
    }
}

/// Sweeps `u` over `n_points` equally spaced values in `[-1, 1]`. At each
/// point the probe starts in `|+>` and collides with reservoirs at
/// `theta = 0` and `theta = pi` whose squared couplings are
/// `g² (1 + u) / 2` and `g² (1 - u) / 2`.
pub fn transfer_curve(
    spin: Spin,
    config: &TransferConfig,
    exec: Execution,
) -> Result<TransferCurve> {
    let n = config.n_points;
    if n < 5 || n.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "n_points must be odd and at least 5, got {n}"
        )));
    }
    if !(config.g > 0.0) {
        return Err(Error::NoCoupling);
    }
    config.params.validate()?;
    let points = exec.try_map(n, |k| {
        // exact zero at the midpoint
        let u = if 2 * k + 1 == n {
            0.0
        } else {
            -1.0 + 2.0 * k as f64 / (n - 1) as f64
        };
        let g_up = config.g * ((1.0 + u) / 2.0).max(0.0).sqrt();
        let g_down = config.g * ((1.0 - u) / 2.0).max(0.0).sqrt();
        let reservoirs = [
            ReservoirSpec::new(0.0, 0.0, spin, g_up)?,
            ReservoirSpec::new(std::f64::consts::PI, 0.0, spin, g_down)?,
        ];
        let schedule = match config.seed {
            None => Schedule::RoundRobin,
            Some(seed) => Schedule::WeightedRandom {
                seed,
                stream: k as u64,
            },
        };
        let evo = evolve_collisions(
            &DensityMatrix::plus(),
            &reservoirs,
            &config.params,
            schedule,
        )?;
        Ok(TransferPoint {
            u,
            sigma_z: evo.result.sigma_z,
            collisions_used: evo.result.collisions_used,
            converged: evo.result.converged,
        })
    })?;
    Ok(TransferCurve {
        spin,
        config: *config,
        points,
    })
}
