use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spin::{spin_ladder, Spin};
use crate::{Error, Result};

/// One information-reservoir: every unit is the spin-`spin` coherent state
/// at Bloch angles `(theta, phi)`, coupled to the probe with strength `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub theta: f64,
    pub phi: f64,
    pub spin: Spin,
    pub g: f64,
}

impl ReservoirSpec {
    pub fn new(theta: f64, phi: f64, spin: Spin, g: f64) -> Result<Self> {
        let spec = Self {
            theta,
            phi,
            spin,
            g,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::Validation(format!(
                "coupling g must be >= 0, got {}",
                self.g
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta) || !self.phi.is_finite() {
            return Err(Error::Validation(format!(
                "theta must lie in [0, pi], got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Normalized magnetization `<J_z>/J` of a unit, equal to `cos(theta)`.
    pub fn magnetization(&self) -> f64 {
        let rho = reservoir_unit_state(self);
        let jz = spin_ladder(self.spin).j_z;
        rho.expect(&jz) / self.spin.value()
    }
}

/// Density matrix wrapper with the physical checks used by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(pub DMatrix<Complex64>);

impl DensityMatrix {
    pub fn from_ket(psi: &DVector<Complex64>) -> Self {
        DensityMatrix(psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Largest |ρ_ij - conj(ρ_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint())
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.norm()))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.0 + self.0.adjoint()).scale(0.5);
        h.symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, &x| acc.min(x))
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    /// tr(ρ O), real part.
    pub fn expect(&self, op: &DMatrix<Complex64>) -> f64 {
        (&self.0 * op).trace().re
    }

    /// `<σ_z>` of a qubit in the `{|e>, |g>}` basis.
    pub fn sigma_z(&self) -> f64 {
        self.0[(0, 0)].re - self.0[(1, 1)].re
    }

    /// Checks unit trace, Hermiticity and positivity within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        (self.trace() - Complex64::new(1.0, 0.0)).norm() < tol
            && self.hermiticity_error() < tol
            && self.min_eigenvalue() >= -tol
    }

    pub(crate) fn to_matrix2(&self) -> Matrix2<Complex64> {
        assert_eq!(self.dim(), 2, "probe must be a qubit");
        Matrix2::new(
            self.0[(0, 0)],
            self.0[(0, 1)],
            self.0[(1, 0)],
            self.0[(1, 1)],
        )
    }

    pub(crate) fn from_matrix2(m: &Matrix2<Complex64>) -> Self {
        DensityMatrix(DMatrix::from_fn(2, 2, |r, c| m[(r, c)]))
    }

    pub fn excited() -> Self {
        Self::qubit_pure(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    pub fn ground() -> Self {
        Self::qubit_pure(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
    }

    /// `(|e> + |g>)/√2`
    pub fn plus() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::qubit_pure(a, a)
    }

    fn qubit_pure(e: Complex64, g: Complex64) -> Self {
        Self::from_ket(&DVector::from_vec(vec![e, g]))
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Spin-coherent ket `|J; theta, phi>` in the descending-`m` basis. For
/// J = 1/2 this is `cos(theta/2)|e> + e^{i phi} sin(theta/2)|g>`.
pub fn coherent_ket(spin: Spin, theta: f64, phi: f64) -> DVector<Complex64> {
    let n = spin.twice();
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    DVector::from_fn(spin.dim(), |k, _| {
        // k = J - m flips down from the top state
        let k = k as u32;
        let amp = binomial(n, k).sqrt() * c.powi((n - k) as i32) * s.powi(k as i32);
        Complex64::from_polar(amp, k as f64 * phi)
    })
}

pub fn reservoir_unit_state(spec: &ReservoirSpec) -> DensityMatrix {
    DensityMatrix::from_ket(&coherent_ket(spec.spin, spec.theta, spec.phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit(theta: f64, phi: f64, spin: Spin) -> DensityMatrix {
        reservoir_unit_state(&ReservoirSpec::new(theta, phi, spin, 0.01).unwrap())
    }

    #[test]
    fn poles_and_equator() {
        let up = unit(0.0, 0.0, Spin::HALF);
        assert!((up.0[(0, 0)].re - 1.0).abs() < 1e-15 && up.0[(1, 1)].norm() < 1e-15);
        assert!((up.sigma_z() - 1.0).abs() < 1e-15);

        let down = unit(PI, 0.0, Spin::HALF);
        assert!((down.0[(1, 1)].re - 1.0).abs() < 1e-15 && down.0[(0, 0)].norm() < 1e-15);
        assert!((down.sigma_z() + 1.0).abs() < 1e-15);

        let eq = unit(PI / 2.0, 0.0, Spin::HALF);
        for c in eq.0.iter() {
            assert!((c - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
        assert!((eq.purity() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coherent_states_are_normalized_with_cos_theta_magnetization() {
        for twice in 1..=6 {
            let spin = Spin::from_twice(twice).unwrap();
            for &theta in &[0.0, 0.3, 1.2, PI / 2.0, 2.5, PI] {
                let spec = ReservoirSpec::new(theta, 0.7, spin, 0.01).unwrap();
                let rho = reservoir_unit_state(&spec);
                assert!(rho.is_valid(1e-12));
                assert!((rho.purity() - 1.0).abs() < 1e-12);
                assert!((spec.magnetization() - theta.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(ReservoirSpec::new(0.0, 0.0, Spin::HALF, -1.0).is_err());
        assert!(ReservoirSpec::new(4.0, 0.0, Spin::HALF, 0.1).is_err());
    }

    #[test]
    fn probe_presets() {
        assert_eq!(DensityMatrix::excited().sigma_z(), 1.0);
        assert_eq!(DensityMatrix::ground().sigma_z(), -1.0);
        assert!(DensityMatrix::plus().sigma_z().abs() < 1e-15);
        assert!(DensityMatrix::plus().is_valid(1e-12));
    }
}
