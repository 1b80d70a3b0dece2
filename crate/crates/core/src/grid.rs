//! Power network model: bus records, the bus admittance matrix and the
//! system base.
//!
//! Networks are stored as JSON documents:
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "buses": [
//!     { "id": 1, "kind": "Slack", "p_load": 50.0, "q_load": 30.99,
//!       "p_gen": null, "q_gen": null, "v_mag": 1.0, "v_angle": 0.0 }
//!   ],
//!   "ybus": [[[8.98519, -44.835953], [0.0, 0.0]]]
//! }
//! ```
//!
//! Powers are in MW / Mvar, `v_mag` in per-unit and `v_angle` in degrees.
//! Quantities that are solved for rather than specified (slack `p_gen` and
//! `q_gen`, PV `q_gen`) must be `null`.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Maximum |Y_ij - Y_ji| accepted at load.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub kind: BusKind,
    /// MW
    pub p_load: f64,
    /// Mvar
    pub q_load: f64,
    /// MW, `None` on the slack bus.
    pub p_gen: Option<f64>,
    /// Mvar, `None` on slack and PV buses.
    pub q_gen: Option<f64>,
    /// Per-unit. Fixed for slack and PV buses, initial guess for PQ.
    pub v_mag: f64,
    /// Degrees.
    pub v_angle: f64,
}

impl BusRecord {
    pub fn v_angle_rad(&self) -> f64 {
        self.v_angle.to_radians()
    }
}

/// Dense complex bus admittance matrix in per-unit, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    entries: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "ybus row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            entries.extend(row);
        }
        Ok(Self { n, entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, y: Complex64) {
        self.entries[i * self.n + j] = y;
    }

    /// Conductance G_ij.
    #[inline]
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).re
    }

    /// Susceptance B_ij.
    #[inline]
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).im
    }

    /// |Y_ij|
    #[inline]
    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).norm()
    }

    /// Θ_ij in radians.
    #[inline]
    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).arg()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Complex64]> {
        self.entries.chunks(self.n.max(1)).take(self.n)
    }

    /// Largest |Y_ij - Y_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).norm());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    s_base: f64,
}

impl PerUnitBase {
    pub fn new(s_base: f64) -> Result<Self> {
        if !(s_base > 0.0 && s_base.is_finite()) {
            return Err(Error::Validation(format!(
                "system base must be positive, got {s_base}"
            )));
        }
        Ok(Self { s_base })
    }

    /// MVA
    pub fn s_base(&self) -> f64 {
        self.s_base
    }
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self { s_base: 100.0 }
    }
}

/// Scheduled injection at a bus in per-unit. `None` marks a quantity that
/// is not specified for the bus type and is solved for instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledInjection {
    pub p: Option<f64>,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    buses: Vec<BusRecord>,
    ybus: AdmittanceMatrix,
    base: PerUnitBase,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    base_mva: f64,
    buses: Vec<BusRecord>,
    ybus: Vec<Vec<[f64; 2]>>,
}

impl NetworkModel {
    /// Builds a validated network.
    pub fn new(buses: Vec<BusRecord>, ybus: AdmittanceMatrix, base: PerUnitBase) -> Result<Self> {
        let net = Self { buses, ybus, base };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::Validation("network has no buses".into()));
        }
        if self.ybus.n() != n {
            return Err(Error::Validation(format!(
                "ybus is {0}x{0} but there are {n} buses",
                self.ybus.n()
            )));
        }
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack_count != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {slack_count}"
            )));
        }
        for (idx, bus) in self.buses.iter().enumerate() {
            if bus.id != idx + 1 {
                return Err(Error::Validation(format!(
                    "bus ids must be 1..n in order; position {} has id {}",
                    idx + 1,
                    bus.id
                )));
            }
            let finite = [bus.p_load, bus.q_load, bus.v_mag, bus.v_angle]
                .iter()
                .chain(bus.p_gen.iter())
                .chain(bus.q_gen.iter())
                .all(|x| x.is_finite());
            if !finite {
                return Err(Error::Validation(format!(
                    "bus {} has non-finite data",
                    bus.id
                )));
            }
            if !(bus.v_mag > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {} has non-positive voltage magnitude {}",
                    bus.id, bus.v_mag
                )));
            }
            let ok = match bus.kind {
                BusKind::Slack => bus.p_gen.is_none() && bus.q_gen.is_none(),
                BusKind::PV => bus.p_gen.is_some() && bus.q_gen.is_none(),
                BusKind::PQ => bus.p_gen.is_some() && bus.q_gen.is_some(),
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "bus {} ({:?}): generation must be null exactly where it is unspecified",
                    bus.id, bus.kind
                )));
            }
        }
        if self
            .ybus
            .entries
            .iter()
            .any(|y| !y.re.is_finite() || !y.im.is_finite())
        {
            return Err(Error::Validation("ybus has non-finite entries".into()));
        }
        let asym = self.ybus.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::Validation(format!(
                "ybus is not symmetric (max |Yij - Yji| = {asym:e})"
            )));
        }
        Ok(())
    }

    pub fn buses(&self) -> &[BusRecord] {
        &self.buses
    }

    pub fn ybus(&self) -> &AdmittanceMatrix {
        &self.ybus
    }

    pub fn base(&self) -> PerUnitBase {
        self.base
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Zero-based index of the slack bus.
    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Zero-based indices of buses of the given kind, ascending.
    pub fn indices_of(&self, kind: BusKind) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Zero-based indices of every bus except the slack, ascending.
    pub fn non_slack(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind != BusKind::Slack)
            .map(|(i, _)| i)
            .collect()
    }

    /// Returns a copy with bus loads replaced. Loads are in MW / Mvar.
    pub fn with_loads(&self, p_load: &[f64], q_load: &[f64]) -> Result<Self> {
        let n = self.n();
        for len in [p_load.len(), q_load.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let mut out = self.clone();
        for (bus, (&p, &q)) in out.buses.iter_mut().zip(p_load.iter().zip(q_load)) {
            bus.p_load = p;
            bus.q_load = q;
        }
        out.validate()?;
        Ok(out)
    }

    /// Scheduled injections `(gen - load) / s_base` per bus.
    pub fn scheduled_injections(&self) -> Vec<ScheduledInjection> {
        let s = self.base.s_base();
        self.buses
            .iter()
            .map(|b| {
                let p = b.p_gen.map(|g| (g - b.p_load) / s);
                let q = match b.kind {
                    BusKind::PQ => b.q_gen.map(|g| (g - b.q_load) / s),
                    _ => None,
                };
                ScheduledInjection { p, q }
            })
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let rows = file
            .ybus
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|[re, im]| Complex64::new(re, im))
                    .collect()
            })
            .collect();
        let ybus = AdmittanceMatrix::from_rows(rows)?;
        Self::new(file.buses, ybus, PerUnitBase::new(file.base_mva)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            base_mva: self.base.s_base(),
            buses: self.buses.clone(),
            ybus: self
                .ybus
                .rows()
                .map(|row| row.iter().map(|y| [y.re, y.im]).collect())
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("network serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolves `path`, falling back to `path.json` when the bare path does not
/// exist (so `networks/four_bus` finds `networks/four_bus.json`).
pub fn resolve_network_path(path: &Path) -> std::path::PathBuf {
    if !path.exists() && path.extension().is_none() {
        let with_ext = path.with_extension("json");
        if with_ext.exists() {
            return with_ext;
        }
    }
    path.to_path_buf()
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = resolve_network_path(path.as_ref());
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    NetworkModel::from_json_str(&text)
}

pub fn save_network(net: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, net.to_json_string()).map_err(|e| Error::io(path, e))
}

/// The 4-bus network used throughout the crate's experiments, identical to
/// the shipped `networks/four_bus.json`.
pub fn builtin_4bus() -> NetworkModel {
    let c = Complex64::new;
    let z = c(0.0, 0.0);
    let y_d1 = c(8.985190, -44.835953);
    let y_d3 = c(8.193267, -40.863838);
    let y12 = c(-3.815629, 19.078144);
    let y13 = c(-5.169561, 25.847809);
    let y24 = c(-5.169561, 25.847809);
    let y34 = c(-3.023705, 15.118528);
    let ybus = AdmittanceMatrix::from_rows(vec![
        vec![y_d1, y12, y13, z],
        vec![y12, y_d1, z, y24],
        vec![y13, z, y_d3, y34],
        vec![z, y24, y34, y_d3],
    ])
    .expect("square");
    let bus = |id, kind, p_load, q_load, p_gen, q_gen, v_mag| BusRecord {
        id,
        kind,
        p_load,
        q_load,
        p_gen,
        q_gen,
        v_mag,
        v_angle: 0.0,
    };
    let buses = vec![
        bus(1, BusKind::Slack, 50.0, 30.99, None, None, 1.00),
        bus(2, BusKind::PQ, 170.0, 105.35, Some(0.0), Some(0.0), 1.00),
        bus(3, BusKind::PQ, 200.0, 123.94, Some(0.0), Some(0.0), 1.00),
        bus(4, BusKind::PV, 80.0, 49.58, Some(318.0), None, 1.02),
    ];
    NetworkModel::new(buses, ybus, PerUnitBase::default()).expect("built-in network is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shipped() -> NetworkModel {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../networks/four_bus");
        load_network(path).unwrap()
    }

    #[test]
    fn shipped_file_matches_builtin() {
        assert_eq!(shipped(), builtin_4bus());
    }

    #[test]
    fn shipped_ybus_entries() {
        let net = shipped();
        let y = net.ybus();
        assert_eq!(y.get(0, 0), Complex64::new(8.985190, -44.835953));
        assert_eq!(y.get(0, 3), Complex64::new(0.0, 0.0));
        assert_eq!(y.get(2, 3), Complex64::new(-3.023705, 15.118528));
    }

    #[test]
    fn polar_decomposition_consistent() {
        let y = builtin_4bus().ybus().clone();
        for i in 0..4 {
            for j in 0..4 {
                let (m, a) = (y.magnitude(i, j), y.angle(i, j));
                assert!((m * a.cos() - y.g(i, j)).abs() < 1e-12);
                assert!((m * a.sin() - y.b(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn off_diagonals_are_negated_line_admittances() {
        let net = builtin_4bus();
        let y = net.ybus();
        for i in 0..4 {
            let nonzero: Vec<_> = (0..4)
                .filter(|&j| j != i && y.get(i, j).norm() > 0.0)
                .collect();
            assert_eq!(nonzero.len(), 2);
            for j in (0..4).filter(|&j| j != i) {
                assert!(y.g(i, j) <= 0.0 && y.b(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn scheduled_injections_four_bus() {
        let inj = builtin_4bus().scheduled_injections();
        assert_eq!(inj[0], ScheduledInjection { p: None, q: None });
        assert!((inj[1].p.unwrap() + 1.70).abs() < 1e-12);
        assert!((inj[1].q.unwrap() + 1.0535).abs() < 1e-12);
        assert!((inj[3].p.unwrap() - 2.38).abs() < 1e-12);
        assert_eq!(inj[3].q, None);
    }

    #[test]
    fn zero_network_has_zero_injections() {
        let mut buses = builtin_4bus().buses().to_vec();
        for b in &mut buses {
            b.p_load = 0.0;
            b.q_load = 0.0;
            b.p_gen = b.p_gen.map(|_| 0.0);
            b.q_gen = b.q_gen.map(|_| 0.0);
        }
        let net = NetworkModel::new(buses, builtin_4bus().ybus().clone(), PerUnitBase::default())
            .unwrap();
        for inj in net.scheduled_injections() {
            assert!(inj.p.unwrap_or(0.0) == 0.0 && inj.q.unwrap_or(0.0) == 0.0);
        }
    }

    #[test]
    fn two_slack_buses_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&builtin_4bus().to_json_string()).unwrap();
        let bus2 = &mut doc["buses"][1];
        bus2["kind"] = "Slack".into();
        bus2["p_gen"] = serde_json::Value::Null;
        bus2["q_gen"] = serde_json::Value::Null;
        let text = doc.to_string();
        assert!(matches!(
            NetworkModel::from_json_str(&text),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn asymmetric_ybus_rejected() {
        let net = builtin_4bus();
        let mut y = net.ybus().clone();
        y.set(0, 1, y.get(0, 1) + Complex64::new(1e-6, 0.0));
        let err = NetworkModel::new(net.buses().to_vec(), y, net.base()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = builtin_4bus();
        let err = NetworkModel::new(net.buses().to_vec(), AdmittanceMatrix::zeros(3), net.base())
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(
            NetworkModel::from_json_str("{ \"base_mva\": "),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_network("/nonexistent/net.json"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = builtin_4bus();
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json_string(), net.to_json_string());
    }
}
