use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    batch_gradient, glorot_init, mse, predict, LayerTopology, MLPParams, OptimizerKind,
    OptimizerState, Regularization,
};
use crate::activation::ActivationSpec;
use crate::par::Execution;
use crate::{seeding, Error, Result};

const SHUFFLE_STREAM: u64 = 1;

/// Row-per-sample inputs and targets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self, topology: &LayerTopology) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} target rows",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let bad_in = self.inputs.iter().any(|r| r.len() != topology.n_inputs());
        let bad_out = self.targets.iter().any(|r| r.len() != topology.n_outputs());
        if bad_in || bad_out {
            return Err(Error::ShapeMismatch(format!(
                "rows do not match network widths {} -> {}",
                topology.n_inputs(),
                topology.n_outputs()
            )));
        }
        Ok(())
    }

    pub fn predictions(
        &self,
        params: &MLPParams,
        topology: &LayerTopology,
        exec: Execution,
    ) -> Result<Vec<Vec<f64>>> {
        exec.try_map(self.len(), |i| predict(params, topology, &self.inputs[i]))
    }

    pub fn mse(
        &self,
        params: &MLPParams,
        topology: &LayerTopology,
        exec: Execution,
    ) -> Result<f64> {
        mse(&self.predictions(params, topology, exec)?, &self.targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Table3,
    Table4,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table3" => Ok(Preset::Table3),
            "table4" => Ok(Preset::Table4),
            other => Err(Error::Parse(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// `None` selects the optimizer's default step size.
    pub learning_rate: Option<f64>,
    pub l1: f64,
    pub l2: f64,
    pub seed: u64,
    pub beta: f64,
    pub use_bias: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::preset(Preset::Table3)
    }
}

impl Hyperparams {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Table3 => Self {
                hidden_layers: 7,
                hidden_size: 10,
                epochs: 50,
                batch_size: 50,
                optimizer: OptimizerKind::adam(),
                learning_rate: None,
                l1: 0.0,
                l2: 0.0,
                seed: 0,
                beta: 4.1,
                use_bias: true,
            },
            Preset::Table4 => Self {
                hidden_layers: 10,
                hidden_size: 50,
                epochs: 600,
                batch_size: 50,
                optimizer: OptimizerKind::adamax(),
                learning_rate: None,
                l1: 1e-4,
                l2: 1e-4,
                seed: 0,
                beta: 8.0,
                use_bias: true,
            },
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            l1: self.l1,
            l2: self.l2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.hidden_layers > 0 && self.hidden_size < 1 {
            return fail("hidden_size must be at least 1".into());
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return fail(format!("learning_rate must be positive, got {lr}"));
        }
        for (name, v) in [("l1", self.l1), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        ActivationSpec::new(self.beta)?;
        self.optimizer.validate()
    }

    /// `[n_in, hidden_size × hidden_layers, n_out]` with a linear output.
    pub fn topology(&self, n_in: usize, n_out: usize) -> Result<LayerTopology> {
        let mut sizes = vec![n_in];
        sizes.extend(std::iter::repeat_n(self.hidden_size, self.hidden_layers));
        sizes.push(n_out);
        let mut t = LayerTopology::new(sizes, self.beta)?;
        t.use_bias = self.use_bias;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub optimizer: String,
    pub beta: f64,
    /// Training MSE before the first update.
    pub initial_train_mse: f64,
    /// Training MSE after each epoch.
    pub train_mse: Vec<f64>,
    pub val_mse: Option<Vec<f64>>,
    pub test_mse: Option<f64>,
    pub test_mape: Option<Vec<f64>>,
    pub wall_time_s: f64,
    /// Batch gradients are reduced in a fixed order, so a run does not
    /// depend on thread count.
    pub deterministic: bool,
}

impl TrainReport {
    pub fn final_train_mse(&self) -> f64 {
        self.train_mse
            .last()
            .copied()
            .unwrap_or(self.initial_train_mse)
    }
}

/// `epoch,train_mse,val_mse` with epoch 0 holding the pre-training loss.
pub fn epoch_log_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    writeln!(out, "0,{},", report.initial_train_mse).unwrap();
    for (e, m) in report.train_mse.iter().enumerate() {
        write!(out, "{},{m},", e + 1).unwrap();
        if let Some(v) = report.val_mse.as_ref().and_then(|v| v.get(e)) {
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Mini-batch training from a Glorot initialization.
///
/// Each epoch reshuffles the training rows with the run seed and applies one
/// optimizer step per batch.
pub fn train(
    data: &TrainingSet,
    validation: Option<&TrainingSet>,
    topology: &LayerTopology,
    hyper: &Hyperparams,
    exec: Execution,
) -> Result<(MLPParams, TrainReport)> {
    hyper.validate()?;
    topology.validate()?;
    data.validate(topology)?;
    if let Some(v) = validation {
        v.validate(topology)?;
    }
    if data.is_empty() || hyper.batch_size > data.len() {
        return Err(Error::Validation(format!(
            "batch_size {} exceeds training-set size {}",
            hyper.batch_size,
            data.len()
        )));
    }
    let start = Instant::now();
    let reg = hyper.regularization();
    let mut params = glorot_init(topology, hyper.seed);
    let mut opt = OptimizerState::new(hyper.optimizer, hyper.learning_rate(), &params)?;
    let mut rng = seeding::rng_for(hyper.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let initial = data.mse(&params, topology, exec)?;
    let mut train_mse = Vec::with_capacity(hyper.epochs);
    let mut val_mse = validation.map(|_| Vec::with_capacity(hyper.epochs));
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.inputs[i].as_slice()).collect();
            let ys: Vec<&[f64]> = batch.iter().map(|&i| data.targets[i].as_slice()).collect();
            let g = batch_gradient(&params, topology, &xs, &ys, reg, exec)?;
            opt.step(&mut params, &g);
        }
        let m = data.mse(&params, topology, exec)?;
        if !m.is_finite() {
            return Err(Error::NonFinite { epoch });
        }
        train_mse.push(m);
        if let (Some(v), Some(log)) = (validation, val_mse.as_mut()) {
            log.push(v.mse(&params, topology, exec)?);
        }
    }
    let report = TrainReport {
        seed: hyper.seed,
        optimizer: hyper.optimizer.name().to_string(),
        beta: hyper.beta,
        initial_train_mse: initial,
        train_mse,
        val_mse,
        test_mse: None,
        test_mape: None,
        wall_time_s: start.elapsed().as_secs_f64(),
        deterministic: true,
    };
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// `y = A x` with a fixed small `A`.
    fn linear_toy(n: usize, seed: u64) -> TrainingSet {
        let a = [[0.5, -0.3, 0.2], [0.1, 0.4, -0.25]];
        let mut rng = seeding::rng_for(seed, 5);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets = inputs
            .iter()
            .map(|x| {
                a.iter()
                    .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
                    .collect()
            })
            .collect();
        TrainingSet { inputs, targets }
    }

    fn toy_hyper(optimizer: OptimizerKind, epochs: usize) -> Hyperparams {
        Hyperparams {
            hidden_layers: 1,
            hidden_size: 8,
            epochs,
            batch_size: 10,
            optimizer,
            learning_rate: None,
            l1: 0.0,
            l2: 0.0,
            seed: 3,
            beta: 1.0,
            use_bias: true,
        }
    }

    #[test]
    fn sgd_fits_linear_toy() {
        let data = linear_toy(200, 1);
        let hyper = Hyperparams {
            learning_rate: Some(0.05),
            ..toy_hyper(OptimizerKind::Sgd, 200)
        };
        let topo = hyper.topology(3, 2).unwrap();
        let (_, rep) = train(&data, None, &topo, &hyper, Execution::Serial).unwrap();
        let last = rep.final_train_mse();
        assert!(last < 1e-3, "{last}");
        assert!(last < rep.initial_train_mse / 100.0);
        assert_eq!(rep.train_mse.len(), 200);
    }

    #[test]
    fn same_seed_same_history_any_execution() {
        let data = linear_toy(60, 2);
        let hyper = toy_hyper(OptimizerKind::adam(), 5);
        let topo = hyper.topology(3, 2).unwrap();
        let (p1, a) = train(&data, Some(&data), &topo, &hyper, Execution::Serial).unwrap();
        let (p2, b) = train(&data, Some(&data), &topo, &hyper, Execution::Serial).unwrap();
        let (p3, c) = train(&data, Some(&data), &topo, &hyper, Execution::Parallel).unwrap();
        assert_eq!(a.train_mse, b.train_mse);
        assert_eq!(a.train_mse, c.train_mse);
        assert_eq!(p1, p2);
        assert_eq!(p1, p3);
        assert_eq!(epoch_log_csv(&a), epoch_log_csv(&c));
        assert_eq!(a.val_mse.as_ref().unwrap(), &a.train_mse);
    }

    #[test]
    fn hyperparam_validation() {
        let bad = [
            Hyperparams {
                epochs: 0,
                ..Default::default()
            },
            Hyperparams {
                batch_size: 0,
                ..Default::default()
            },
            Hyperparams {
                l2: -1.0,
                ..Default::default()
            },
            Hyperparams {
                learning_rate: Some(0.0),
                ..Default::default()
            },
        ];
        for h in bad {
            assert!(h.validate().is_err());
        }
        let data = linear_toy(5, 0);
        let h = toy_hyper(OptimizerKind::Sgd, 1);
        let topo = h.topology(3, 2).unwrap();
        assert!(train(&data, None, &topo, &h, Execution::Serial).is_err());
    }

    #[test]
    fn presets() {
        let t3 = Hyperparams::preset(Preset::Table3);
        assert_eq!(
            (t3.hidden_layers, t3.hidden_size, t3.epochs, t3.batch_size),
            (7, 10, 50, 50)
        );
        assert_eq!(t3.learning_rate(), 0.001);
        let t4 = Hyperparams::preset(Preset::Table4);
        assert_eq!((t4.hidden_layers, t4.hidden_size, t4.epochs), (10, 50, 600));
        assert_eq!((t4.l1, t4.l2), (1e-4, 1e-4));
        assert_eq!(t4.optimizer, OptimizerKind::adamax());
        assert_eq!(t3.topology(10, 5).unwrap().sizes.len(), 9);
        assert_eq!("TABLE4".parse::<Preset>().unwrap(), Preset::Table4);
    }

    #[test]
    fn divergent_step_reports_non_finite() {
        let mut data = linear_toy(20, 4);
        for t in &mut data.targets {
            t.iter_mut().for_each(|v| *v *= 1e150);
        }
        let hyper = Hyperparams {
            learning_rate: Some(1e10),
            ..toy_hyper(OptimizerKind::Sgd, 3)
        };
        let topo = hyper.topology(3, 2).unwrap();
        let err = train(&data, None, &topo, &hyper, Execution::Serial).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn epoch_log_layout() {
        let data = linear_toy(20, 4);
        let hyper = toy_hyper(OptimizerKind::nadam(), 2);
        let topo = hyper.topology(3, 2).unwrap();
        let (_, rep) = train(&data, None, &topo, &hyper, Execution::Serial).unwrap();
        let log = epoch_log_csv(&rep);
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "epoch,train_mse,val_mse");
        assert!(lines[2].starts_with("1,") && lines[2].ends_with(','));
    }
}
