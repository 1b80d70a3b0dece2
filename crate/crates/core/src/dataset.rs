//! Supervised samples from randomized load flows.
//!
//! Each sample scales bus loads by uniform multipliers, solves the power
//! flow, and records `inputs = [p_load (pu) per bus, q_load (pu) per bus,
//! |V| of slack and PV buses]` against `targets = [|V| of PQ buses, δ of
//! non-slack buses (rad)]`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{BusKind, NetworkModel};
use crate::nn::TrainingSet;
use crate::par::Execution;
use crate::powerflow::{self, SolveOptions, StateVector};
use crate::{seeding, Error, Result};

/// Minimum fraction of requested samples that must converge.
pub const MIN_CONVERGED_FRACTION: f64 = 0.9;

const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct LoadRange {
    low: f64,
    high: f64,
}

impl LoadRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && low.is_finite() && high.is_finite() && low <= high) {
            return Err(Error::Validation(format!(
                "load range must satisfy 0 < low <= high, got [{low}, {high}]"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn low(self) -> f64 {
        self.low
    }

    pub fn high(self) -> f64 {
        self.high
    }

    fn draw(self, rng: &mut impl Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

impl Default for LoadRange {
    fn default() -> Self {
        Self {
            low: 0.8,
            high: 1.2,
        }
    }
}

impl From<LoadRange> for [f64; 2] {
    fn from(r: LoadRange) -> Self {
        [r.low, r.high]
    }
}

impl TryFrom<[f64; 2]> for LoadRange {
    type Error = Error;

    fn try_from([low, high]: [f64; 2]) -> Result<Self> {
        Self::new(low, high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub range: LoadRange,
    /// One multiplier per bus shared by P and Q.
    pub coupled: bool,
    /// Perturb every bus instead of only PQ buses.
    pub perturb_all_loads: bool,
    pub split_ratio: f64,
    pub solve: SolveOptions,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            range: LoadRange::default(),
            coupled: false,
            perturb_all_loads: false,
            split_ratio: 0.8,
            solve: SolveOptions::default(),
        }
    }
}

impl GenerateOptions {
    pub fn validate(&self) -> Result<()> {
        LoadRange::new(self.range.low, self.range.high)?;
        validate_ratio(self.split_ratio)?;
        self.solve.validate()
    }
}

fn validate_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub scale_factors: Vec<f64>,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_requested: usize,
    pub n_converged: usize,
    pub range: LoadRange,
    pub split_ratio: f64,
    pub network_fingerprint: String,
    pub coupled: bool,
    pub perturb_all_loads: bool,
    pub multiplier_names: Vec<String>,
    pub input_names: Vec<String>,
    pub target_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalers: Option<ScalerPair>,
}

/// Column layout derived from the network's bus types.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    perturbed: Vec<usize>,
    setpoints: Vec<usize>,
    pq: Vec<usize>,
    non_slack: Vec<usize>,
    coupled: bool,
    n: usize,
}

impl Layout {
    pub fn new(net: &NetworkModel, opts: &GenerateOptions) -> Self {
        let perturbed = if opts.perturb_all_loads {
            (0..net.n()).collect()
        } else {
            net.indices_of(BusKind::PQ)
        };
        let mut setpoints = vec![net.slack()];
        setpoints.extend(net.indices_of(BusKind::PV));
        Self {
            perturbed,
            setpoints,
            pq: net.indices_of(BusKind::PQ),
            non_slack: net.non_slack(),
            coupled: opts.coupled,
            n: net.n(),
        }
    }

    fn bus_id(i: usize) -> usize {
        i + 1
    }

    pub fn multiplier_names(&self) -> Vec<String> {
        let p = self
            .perturbed
            .iter()
            .map(|&i| format!("mult_p_{}", Self::bus_id(i)));
        let q = self
            .perturbed
            .iter()
            .map(|&i| format!("mult_q_{}", Self::bus_id(i)));
        p.chain(q).collect()
    }

    pub fn input_names(&self) -> Vec<String> {
        let p = (0..self.n).map(|i| format!("p_load_{}", Self::bus_id(i)));
        let q = (0..self.n).map(|i| format!("q_load_{}", Self::bus_id(i)));
        let v = self
            .setpoints
            .iter()
            .map(|&i| format!("v_set_{}", Self::bus_id(i)));
        p.chain(q).chain(v).collect()
    }

    /// Target names; angles carry a `_deg` suffix because exports use degrees.
    pub fn target_names(&self) -> Vec<String> {
        let v = self.pq.iter().map(|&i| format!("v_{}", Self::bus_id(i)));
        let d = self
            .non_slack
            .iter()
            .map(|&i| format!("delta_{}_deg", Self::bus_id(i)));
        v.chain(d).collect()
    }

    pub fn n_inputs(&self) -> usize {
        2 * self.n + self.setpoints.len()
    }

    pub fn n_targets(&self) -> usize {
        self.pq.len() + self.non_slack.len()
    }

    pub fn n_multipliers(&self) -> usize {
        2 * self.perturbed.len()
    }

    /// Index of the first angle in the target vector.
    pub fn angle_offset(&self) -> usize {
        self.pq.len()
    }
}

/// Draws multipliers for sample `index`: all P multipliers in bus order,
/// then all Q multipliers (copies of P when coupled).
fn draw_multipliers(layout: &Layout, range: LoadRange, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = seeding::rng_for(seed, index as u64);
    let k = layout.perturbed.len();
    let mut p = Vec::with_capacity(k);
    let mut q = Vec::with_capacity(k);
    for _ in 0..k {
        let mp = range.draw(&mut rng);
        let mq = if layout.coupled {
            mp
        } else {
            range.draw(&mut rng)
        };
        p.push(mp);
        q.push(mq);
    }
    p.extend(q);
    p
}

fn make_sample(
    net: &NetworkModel,
    layout: &Layout,
    opts: &GenerateOptions,
    seed: u64,
    index: usize,
) -> Result<SampleRecord> {
    let mult = draw_multipliers(layout, opts.range, seed, index);
    let mut p_load: Vec<f64> = net.buses().iter().map(|b| b.p_load).collect();
    let mut q_load: Vec<f64> = net.buses().iter().map(|b| b.q_load).collect();
    let k = layout.perturbed.len();
    for (j, &bus) in layout.perturbed.iter().enumerate() {
        p_load[bus] *= mult[j];
        q_load[bus] *= mult[k + j];
    }
    let perturbed = net.with_loads(&p_load, &q_load)?;
    let s = net.base().s_base();
    let mut inputs: Vec<f64> = p_load.iter().chain(&q_load).map(|x| x / s).collect();
    inputs.extend(layout.setpoints.iter().map(|&i| net.buses()[i].v_mag));

    match powerflow::solve(&perturbed, &opts.solve) {
        Ok(sol) => {
            let mut targets: Vec<f64> = layout.pq.iter().map(|&i| sol.v_mag[i]).collect();
            targets.extend(layout.non_slack.iter().map(|&i| sol.delta[i]));
            Ok(SampleRecord {
                sample_id: index,
                scale_factors: mult,
                inputs,
                targets,
                converged: true,
            })
        }
        Err(Error::NotConverged { .. } | Error::SingularJacobian { .. }) => Ok(SampleRecord {
            sample_id: index,
            scale_factors: mult,
            inputs,
            targets: vec![f64::NAN; layout.n_targets()],
            converged: false,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Converged samples in ascending `sample_id` order.
    pub samples: Vec<SampleRecord>,
    pub meta: DatasetMeta,
}

/// Generates `n` samples. Sample `i` draws from its own generator seeded by
/// `(seed, i)`, so the result does not depend on `exec`.
pub fn generate(
    net: &NetworkModel,
    n: usize,
    seed: u64,
    opts: &GenerateOptions,
    exec: Execution,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    opts.validate()?;
    let layout = Layout::new(net, opts);
    let all = exec.try_map(n, |i| make_sample(net, &layout, opts, seed, i))?;
    let samples: Vec<SampleRecord> = all.into_iter().filter(|s| s.converged).collect();
    if (samples.len() as f64) < MIN_CONVERGED_FRACTION * n as f64 {
        return Err(Error::TooFewConverged {
            requested: n,
            converged: samples.len(),
        });
    }
    let meta = DatasetMeta {
        seed,
        n_requested: n,
        n_converged: samples.len(),
        range: opts.range,
        split_ratio: opts.split_ratio,
        network_fingerprint: net.fingerprint(),
        coupled: opts.coupled,
        perturb_all_loads: opts.perturb_all_loads,
        multiplier_names: layout.multiplier_names(),
        input_names: layout.input_names(),
        target_names: layout.target_names(),
        scalers: None,
    };
    Ok(Dataset { samples, meta })
}

/// Seeded shuffle, then the first `⌊n·ratio⌋` items train and the rest test.
pub fn split<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    validate_ratio(ratio)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seeding::rng_for(seed, SPLIT_STREAM));
    let n_train = (items.len() as f64 * ratio).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Infinity-norm power mismatch of a sample's targets, evaluated on the
/// network with the sample's loads and voltage setpoints.
pub fn sample_mismatch(net: &NetworkModel, sample: &SampleRecord) -> Result<f64> {
    let n = net.n();
    let layout = Layout::new(net, &GenerateOptions::default());
    if sample.inputs.len() != layout.n_inputs() || sample.targets.len() != layout.n_targets() {
        return Err(Error::ShapeMismatch(format!(
            "sample has {} inputs and {} targets, network layout needs {} and {}",
            sample.inputs.len(),
            sample.targets.len(),
            layout.n_inputs(),
            layout.n_targets()
        )));
    }
    let s = net.base().s_base();
    let p_load: Vec<f64> = sample.inputs[..n].iter().map(|x| x * s).collect();
    let q_load: Vec<f64> = sample.inputs[n..2 * n].iter().map(|x| x * s).collect();
    let loaded = net.with_loads(&p_load, &q_load)?;
    let mut state = StateVector::flat_start(net);
    for (k, &i) in layout.setpoints.iter().enumerate() {
        state.v_mag[i] = sample.inputs[2 * n + k];
    }
    for (k, &i) in layout.pq.iter().enumerate() {
        state.v_mag[i] = sample.targets[k];
    }
    for (k, &i) in layout.non_slack.iter().enumerate() {
        state.delta[i] = sample.targets[layout.angle_offset() + k];
    }
    Ok(powerflow::mismatch(&state, &loaded)?.inf_norm())
}

impl Dataset {
    /// Header `sample_id, multipliers, inputs, targets, converged`; angles in
    /// degrees.
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = String::from("sample_id");
        for name in m
            .multiplier_names
            .iter()
            .chain(&m.input_names)
            .chain(&m.target_names)
        {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",converged\n");
        let angle_start = angle_offset(&m.target_names);
        for s in &self.samples {
            write!(out, "{}", s.sample_id).unwrap();
            for x in s.scale_factors.iter().chain(&s.inputs) {
                write!(out, ",{x}").unwrap();
            }
            for (k, t) in s.targets.iter().enumerate() {
                let v = if k >= angle_start { t.to_degrees() } else { *t };
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", s.converged).unwrap();
        }
        out
    }

    pub fn meta_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        s.push('\n');
        s
    }

    /// Parses a CSV written by [`Dataset::to_csv`] together with its metadata.
    pub fn from_csv(csv: &str, meta: DatasetMeta) -> Result<Self> {
        let mut lines = csv.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let n_mult = meta.multiplier_names.len();
        let n_in = meta.input_names.len();
        let n_tgt = meta.target_names.len();
        let expected = 2 + n_mult + n_in + n_tgt;
        if header.split(',').count() != expected {
            return Err(Error::Parse(format!(
                "dataset header has {} columns, metadata implies {expected}",
                header.split(',').count()
            )));
        }
        let angle_start = angle_offset(&meta.target_names);
        let mut samples = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != expected {
                return Err(Error::Parse(format!(
                    "row {} has {} columns",
                    row + 1,
                    cols.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{s}`: {e}", row + 1)))
            };
            let sample_id = cols[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("row {}: sample_id: {e}", row + 1)))?;
            let nums = cols[1..expected - 1]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            let converged = match cols[expected - 1].trim() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(Error::Parse(format!(
                        "row {}: converged `{other}`",
                        row + 1
                    )))
                }
            };
            let targets = nums[n_mult + n_in..]
                .iter()
                .enumerate()
                .map(|(k, &t)| if k >= angle_start { t.to_radians() } else { t })
                .collect();
            samples.push(SampleRecord {
                sample_id,
                scale_factors: nums[..n_mult].to_vec(),
                inputs: nums[n_mult..n_mult + n_in].to_vec(),
                targets,
                converged,
            });
        }
        Ok(Self { samples, meta })
    }

    /// Writes `<stem>.csv` and `<stem>.meta.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let meta = dir.join(format!("{stem}.meta.json"));
        std::fs::write(&meta, self.meta_json()).map_err(|e| Error::io(&meta, e))
    }

    /// Loads a dataset CSV and its `.meta.json` companion.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta_path = csv_path.with_extension("meta.json");
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::Parse(e.to_string()))?;
        let csv = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::from_csv(&csv, meta)
    }

    /// Train/test split of the samples with the metadata's ratio.
    pub fn split(&self, seed: u64) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
        split(&self.samples, self.meta.split_ratio, seed)
    }
}

fn angle_offset(target_names: &[String]) -> usize {
    target_names
        .iter()
        .position(|n| n.starts_with("delta_"))
        .unwrap_or(target_names.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MinMax,
    #[default]
    Standard,
}

impl std::str::FromStr for ScalerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "minmax" | "min_max" => Ok(ScalerKind::MinMax),
            "standard" => Ok(ScalerKind::Standard),
            other => Err(Error::Parse(format!("unknown scaler `{other}`"))),
        }
    }
}

/// Per-feature affine map `(x - offset) / scale`. Constant features are
/// left untouched and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>], kind: ScalerKind) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::ShapeMismatch("cannot fit a scaler on zero rows".into()))?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("rows differ in width".into()));
        }
        let n = rows.len() as f64;
        let mut offset = Vec::with_capacity(width);
        let mut scale = Vec::with_capacity(width);
        let mut constant = Vec::with_capacity(width);
        for j in 0..width {
            let col = rows.iter().map(|r| r[j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.clone().fold(f64::NEG_INFINITY, f64::max);
            let is_const = hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            let (o, s) = match kind {
                ScalerKind::MinMax => (lo, hi - lo),
                ScalerKind::Standard => {
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            constant.push(is_const);
            offset.push(if is_const { 0.0 } else { o });
            scale.push(if is_const { 1.0 } else { s });
        }
        Ok(Self {
            kind,
            offset,
            scale,
            constant,
        })
    }

    pub fn width(&self) -> usize {
        self.offset.len()
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::ShapeMismatch(format!(
                "row has {} features, scaler expects {}",
                row.len(),
                self.width()
            )));
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.constant[j] {
                    x
                } else {
                    (x - self.offset[j]) / self.scale[j]
                }
            })
            .collect())
    }

    pub fn invert_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.constant[j] {
                    x
                } else {
                    x * self.scale[j] + self.offset[j]
                }
            })
            .collect())
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }

    pub fn invert(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.invert_row(r)).collect()
    }
}

/// Input and target scalers fitted on one training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerPair {
    pub input: Scaler,
    pub target: Scaler,
}

impl ScalerPair {
    pub fn fit(train: &[SampleRecord], kind: ScalerKind) -> Result<Self> {
        let set = raw_set(train);
        Ok(Self {
            input: Scaler::fit(&set.inputs, kind)?,
            target: Scaler::fit(&set.targets, kind)?,
        })
    }

    pub fn apply(&self, samples: &[SampleRecord]) -> Result<TrainingSet> {
        let set = raw_set(samples);
        Ok(TrainingSet {
            inputs: self.input.apply(&set.inputs)?,
            targets: self.target.apply(&set.targets)?,
        })
    }
}

/// Unscaled inputs and targets.
pub fn raw_set(samples: &[SampleRecord]) -> TrainingSet {
    TrainingSet {
        inputs: samples.iter().map(|s| s.inputs.clone()).collect(),
        targets: samples.iter().map(|s| s.targets.clone()).collect(),
    }
}
