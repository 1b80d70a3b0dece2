//! The `tanh(beta * x)` activation and the fit that extracts `beta` from a
//! simulated transfer curve.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::qsim::Spin;
use crate::{Error, Result};

/// Search interval for the steepness fit.
pub const BETA_MIN: f64 = 1e-3;
pub const BETA_MAX: f64 = 100.0;
/// Bracket width at which the golden-section search stops.
pub const BETA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub source: String,
    pub spin: Option<Spin>,
    pub seed: Option<u64>,
    pub g: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
}

/// Sampled `(u, y)` pairs with strictly increasing `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationCurve {
    pub points: Vec<(f64, f64)>,
    pub provenance: Provenance,
}

impl ActivationCurve {
    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Validation(
                "curve inputs must be strictly increasing".into(),
            ));
        }
        if let Some(&(u, y)) = self.points.iter().find(|(_, y)| !(y.abs() <= 1.0 + 1e-9)) {
            return Err(Error::Validation(format!(
                "curve output {y} at u = {u} outside [-1, 1]"
            )));
        }
        Ok(())
    }

    /// Reads the first two columns of a `u,sigma_z,...` CSV with header.
    pub fn from_csv(text: &str, provenance: Provenance) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || -> Result<f64> {
                cols.next()
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: expected numeric u,y", n + 1)))
            };
            let u = next()?;
            let y = next()?;
            points.push((u, y));
        }
        let curve = Self { points, provenance };
        curve.validate()?;
        Ok(curve)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(
            &text,
            Provenance {
                source: path.display().to_string(),
                ..Default::default()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub rss: f64,
    pub n_points: usize,
    pub provenance: Provenance,
}

fn rss(points: &[(f64, f64)], beta: f64) -> f64 {
    points
        .iter()
        .map(|&(u, y)| {
            let r = y - (beta * u).tanh();
            r * r
        })
        .sum()
}

/// Least-squares `beta` for `y ≈ tanh(beta * u)`.
///
/// A log-spaced scan over `[BETA_MIN, BETA_MAX]` brackets the global
/// minimum, then golden-section search narrows the bracket to `BETA_TOL`.
pub fn fit_beta(curve: &ActivationCurve) -> Result<BetaFit> {
    let pts = &curve.points;
    if pts.len() < 5 {
        return Err(Error::DegenerateCurve(format!(
            "need at least 5 points, got {}",
            pts.len()
        )));
    }
    if !(pts.iter().any(|p| p.0 < 0.0) && pts.iter().any(|p| p.0 > 0.0)) {
        return Err(Error::DegenerateCurve(
            "inputs do not span both signs".into(),
        ));
    }
    let y0 = pts[0].1;
    if pts.iter().all(|p| p.1 == y0) {
        return Err(Error::DegenerateCurve("all outputs are equal".into()));
    }

    const GRID: usize = 400;
    let (lo_ln, hi_ln) = (BETA_MIN.ln(), BETA_MAX.ln());
    let grid: Vec<f64> = (0..=GRID)
        .map(|k| (lo_ln + (hi_ln - lo_ln) * k as f64 / GRID as f64).exp())
        .collect();
    let best = (0..=GRID)
        .min_by(|&a, &b| rss(pts, grid[a]).total_cmp(&rss(pts, grid[b])))
        .expect("grid is non-empty");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (rss(pts, c), rss(pts, d));
    while (b - a).abs() > BETA_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rss(pts, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rss(pts, d);
        }
    }
    let beta = 0.5 * (a + b);
    Ok(BetaFit {
        beta,
        rss: rss(pts, beta),
        n_points: pts.len(),
        provenance: curve.provenance.clone(),
    })
}

/// Published steepness values per reservoir spin.
pub fn beta_table() -> BTreeMap<Spin, f64> {
    BTreeMap::from([
        (Spin::HALF, 2.22),
        (Spin::ONE, 2.78),
        (Spin::THREE_HALVES, 3.33),
        (Spin::FIVE_HALVES, 4.1),
    ])
}

pub fn beta_for_spin(spin: Spin) -> Result<f64> {
    beta_table()
        .get(&spin)
        .copied()
        .ok_or_else(|| Error::UnknownSpin(spin.to_string()))
}

/// Steepness of the `tanh(beta * x)` activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ActivationSpec {
    beta: f64,
}

impl ActivationSpec {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Validation(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn beta(self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn activate(self, x: f64) -> f64 {
        (self.beta * x).tanh()
    }

    #[inline]
    pub fn activate_deriv(self, x: f64) -> f64 {
        let t = (self.beta * x).tanh();
        self.beta * (1.0 - t * t)
    }
}

impl TryFrom<f64> for ActivationSpec {
    type Error = Error;
    fn try_from(beta: f64) -> Result<Self> {
        Self::new(beta)
    }
}

impl From<ActivationSpec> for f64 {
    fn from(s: ActivationSpec) -> f64 {
        s.beta
    }
}

pub fn activate(spec: ActivationSpec, x: f64) -> f64 {
    spec.activate(x)
}

pub fn activate_deriv(spec: ActivationSpec, x: f64) -> f64 {
    spec.activate_deriv(x)
}
