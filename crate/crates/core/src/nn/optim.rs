use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MLPParams;
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Adamax { beta1: f64, beta2: f64, eps: f64 },
    Nadam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }

    pub fn adamax() -> Self {
        OptimizerKind::Adamax {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }

    pub fn nadam() -> Self {
        OptimizerKind::Nadam {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.01,
            _ => 0.001,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Adamax { .. } => "adamax",
            OptimizerKind::Nadam { .. } => "nadam",
        }
    }

    fn moments(self) -> Option<(f64, f64, f64)> {
        match self {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam { beta1, beta2, eps }
            | OptimizerKind::Adamax { beta1, beta2, eps }
            | OptimizerKind::Nadam { beta1, beta2, eps } => Some((beta1, beta2, eps)),
        }
    }

    pub fn validate(self) -> Result<()> {
        if let Some((b1, b2, eps)) = self.moments() {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(b1) || !unit(b2) || !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Validation(format!(
                    "{}: need 0 <= beta1, beta2 < 1 and eps > 0",
                    self.name()
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(Self::adam()),
            "adamax" => Ok(Self::adamax()),
            "nadam" => Ok(Self::nadam()),
            other => Err(Error::Parse(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Moment buffers for one parameter set. `t` counts completed steps.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &MLPParams) -> Result<Self> {
        kind.validate()?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let zeros: Vec<Vec<f64>> = params.blocks().map(|b| vec![0.0; b.len()]).collect();
        Ok(Self {
            kind,
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut MLPParams, grads: &MLPParams) {
        self.t += 1;
        let t = self.t as i32;
        let lr = self.lr;
        let kind = self.kind;
        let blocks = params
            .blocks_mut()
            .zip(grads.blocks())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for ((w, g), (m, v)) in blocks {
            match kind {
                OptimizerKind::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::Adamax { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = (beta2 * v[i]).max(g[i].abs());
                        w[i] -= (lr / c1) * m[i] / (v[i] + eps);
                    }
                }
                OptimizerKind::Nadam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c1_next = 1.0 - beta1.powi(t + 1);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let nesterov = beta1 * m[i] / c1_next + (1.0 - beta1) * g[i] / c1;
                        w[i] -= lr * nesterov / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerTopology;

    fn single_weight(w: f64) -> (MLPParams, MLPParams) {
        let topo = LayerTopology::new(vec![1, 1], 1.0).unwrap();
        let mut p = MLPParams::zeros(&topo);
        p.weights[0][(0, 0)] = w;
        (p.clone(), p.zeros_like())
    }

    fn all_kinds() -> [OptimizerKind; 4] {
        [
            OptimizerKind::Sgd,
            OptimizerKind::adam(),
            OptimizerKind::adamax(),
            OptimizerKind::nadam(),
        ]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in all_kinds() {
            let (mut p, g) = single_weight(0.7);
            let before = p.clone();
            let mut st = OptimizerState::new(kind, 0.1, &p).unwrap();
            for _ in 0..5 {
                st.step(&mut p, &g);
            }
            assert_eq!(p, before, "{kind}");
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let (mut p, mut g) = single_weight(1.0);
        g.weights[0][(0, 0)] = 2.0;
        let mut st = OptimizerState::new(OptimizerKind::Sgd, 0.1, &p).unwrap();
        st.step(&mut p, &g);
        assert!((p.weights[0][(0, 0)] - 0.8).abs() < 1e-15);
    }

    /// First Adam step: m̂ = g, v̂ = g², so the move is lr·|g|/(|g|+eps).
    #[test]
    fn adam_first_step_magnitude() {
        for gval in [1e-3, -0.5, 3.0, 1e4] {
            let (mut p, mut g) = single_weight(0.0);
            g.weights[0][(0, 0)] = gval;
            let lr = 0.001;
            let mut st = OptimizerState::new(OptimizerKind::adam(), lr, &p).unwrap();
            st.step(&mut p, &g);
            let moved = p.weights[0][(0, 0)];
            let expected = -lr * gval / (gval.abs() + EPS);
            assert!((moved - expected).abs() < 1e-15);
            assert!((moved.abs() - lr).abs() < 1e-6);
            assert_eq!(moved.signum(), -gval.signum());
        }
    }

    #[test]
    fn adamax_and_nadam_first_steps() {
        let gval = 0.25;
        let lr = 0.002;
        let (mut p, mut g) = single_weight(0.0);
        g.weights[0][(0, 0)] = gval;
        let mut st = OptimizerState::new(OptimizerKind::adamax(), lr, &p).unwrap();
        st.step(&mut p, &g);
        // m = 0.1 g, u = |g|, correction 1/(1-0.9)
        let expected = -lr * gval / (gval + EPS);
        assert!((p.weights[0][(0, 0)] - expected).abs() < 1e-15);

        let (mut p, _) = single_weight(0.0);
        let mut st = OptimizerState::new(OptimizerKind::nadam(), lr, &p).unwrap();
        st.step(&mut p, &g);
        let m = 0.1 * gval;
        let mhat = 0.9 * m / (1.0 - 0.81) + 0.1 * gval / 0.1;
        let vhat = gval * gval;
        let expected = -lr * mhat / (vhat.sqrt() + EPS);
        assert!((p.weights[0][(0, 0)] - expected).abs() < 1e-15);
    }

    /// Minimizing (w-3)² drives every optimizer to the minimum.
    #[test]
    fn quadratic_descent() {
        for kind in all_kinds() {
            let (mut p, mut g) = single_weight(0.0);
            let mut st = OptimizerState::new(kind, 0.05, &p).unwrap();
            for _ in 0..4000 {
                g.weights[0][(0, 0)] = 2.0 * (p.weights[0][(0, 0)] - 3.0);
                st.step(&mut p, &g);
            }
            assert!(
                (p.weights[0][(0, 0)] - 3.0).abs() < 1e-2,
                "{kind}: {}",
                p.weights[0][(0, 0)]
            );
        }
    }

    #[test]
    fn parse_and_validate() {
        assert_eq!(
            "Adamax".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::adamax()
        );
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
        let bad = OptimizerKind::Adam {
            beta1: 1.0,
            beta2: 0.999,
            eps: 1e-8,
        };
        assert!(bad.validate().is_err());
        let (p, _) = single_weight(0.0);
        assert!(OptimizerState::new(OptimizerKind::Sgd, 0.0, &p).is_err());
    }
}
