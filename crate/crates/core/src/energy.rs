//! Per-inference energy and latency models for all-optical, electronic and
//! optical-electronic hybrid AlexNet implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_significant;

/// One layer: kernel size `k·k·c`, number of input patches, and number of
/// kernels (equivalently, nonlinearity units).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchRow {
    pub name: String,
    pub kernel_size: u64,
    pub patches: u64,
    pub units: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ArchRow>", into = "Vec<ArchRow>")]
pub struct ArchTable(Vec<ArchRow>);

impl ArchTable {
    pub fn new(rows: Vec<ArchRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("architecture table is empty".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.kernel_size == 0 || r.patches == 0 || r.units == 0) {
            return Err(Error::InvalidParameter(format!("row '{}' has a zero entry", r.name)));
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> &[ArchRow] {
        &self.0
    }

    pub fn total_patches(&self) -> u64 {
        self.0.iter().map(|r| r.patches).sum()
    }
}

impl TryFrom<Vec<ArchRow>> for ArchTable {
    type Error = Error;

    fn try_from(rows: Vec<ArchRow>) -> Result<Self> {
        ArchTable::new(rows)
    }
}

impl From<ArchTable> for Vec<ArchRow> {
    fn from(t: ArchTable) -> Self {
        t.0
    }
}

fn row(name: &str, kernel_size: u64, patches: u64, units: u64) -> ArchRow {
    ArchRow { name: name.into(), kernel_size, patches, units }
}

/// AlexNet with the true patch counts of every layer.
pub fn alexnet() -> ArchTable {
    ArchTable::new(vec![
        row("conv1", 11 * 11 * 3, 55 * 55, 96),
        row("conv2", 5 * 5 * 96, 27 * 27, 256),
        row("conv3", 3 * 3 * 256, 13 * 13, 384),
        row("conv4", 3 * 3 * 384, 13 * 13, 384),
        row("conv5", 3 * 3 * 384, 13 * 13, 256),
        row("fc1", 13 * 13 * 256, 1, 4096),
        row("fc2", 4096, 1, 4096),
        row("fc3", 4096, 1, 1000),
    ])
    .expect("preset is valid")
}

/// The all-optical tabulation: every convolution is fed the full 55×55
/// stream (invalid sampling times still carry light), dense layers get one
/// re-emitted patch.
pub fn alexnet_optical() -> ArchTable {
    let mut rows = alexnet().0;
    for r in rows.iter_mut().filter(|r| r.name.starts_with("conv")) {
        r.patches = 55 * 55;
    }
    ArchTable(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalEnergyParams {
    /// Power needed to trigger the saturable absorber, per waveguide (W).
    pub p0: f64,
    /// Feed rate (Hz).
    pub f: f64,
    pub amplifier_wall_plug: f64,
    pub pulses_per_waveguide: u64,
    /// Round the per-waveguide energy to this many significant digits
    /// before multiplying out the table. `None` keeps it exact.
    pub round_waveguide_energy: Option<u32>,
}

impl OpticalEnergyParams {
    /// 0.05 mW at 3 GHz, 10% amplifier efficiency, 3025 pulses, and the
    /// per-waveguide energy rounded to one digit as in the published table.
    pub fn published() -> Self {
        Self { p0: 0.05e-3, f: 3e9, amplifier_wall_plug: 0.1, pulses_per_waveguide: 3025, round_waveguide_energy: Some(1) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p0 >= 0.0 && self.p0.is_finite()) {
            return Err(Error::InvalidParameter(format!("p0 must be >= 0, got {}", self.p0)));
        }
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::InvalidParameter(format!("f must be > 0, got {}", self.f)));
        }
        if !(self.amplifier_wall_plug > 0.0 && self.amplifier_wall_plug <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "wall-plug efficiency must lie in (0, 1], got {}",
                self.amplifier_wall_plug
            )));
        }
        if self.round_waveguide_energy == Some(0) {
            return Err(Error::InvalidParameter("rounding needs at least one significant digit".into()));
        }
        Ok(())
    }

    /// `pulses · p0 / (efficiency · f)`, unrounded.
    pub fn waveguide_energy(&self) -> f64 {
        self.pulses_per_waveguide as f64 * self.p0 / (self.amplifier_wall_plug * self.f)
    }
}

impl Default for OpticalEnergyParams {
    fn default() -> Self {
        Self::published()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronicParams {
    pub rate_flops_per_s: f64,
    pub power_w: f64,
    /// Feed rate of the optical system being compared against (Hz).
    pub optical_f: f64,
}

impl ElectronicParams {
    /// 112 TFLOP/s at 250 W against a 3 GHz optical feed.
    pub fn published() -> Self {
        Self { rate_flops_per_s: 112e12, power_w: 250.0, optical_f: 3e9 }
    }
}

impl Default for ElectronicParams {
    fn default() -> Self {
        Self::published()
    }
}

/// Capacitor bank storing one analog sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalogMemory {
    pub capacitance_f: f64,
    pub voltage_v: f64,
    pub capacitors: u64,
}

impl AnalogMemory {
    /// `C·V²·n` in joules.
    pub fn energy_per_sample(&self) -> f64 {
        self.capacitance_f * self.voltage_v * self.voltage_v * self.capacitors as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridParams {
    pub tia_pj: f64,
    pub modulator_driver_pj: f64,
    pub analog_memory: AnalogMemory,
    pub laser_power_w: f64,
    pub modulation_hz: f64,
    pub monolithic_pj_per_sample: f64,
}

impl HybridParams {
    /// Off-the-shelf TIA (20 pJ) and driver (100 pJ), 1000 × 100 fF at 1 V,
    /// a 2 W laser at 1 GHz, and 5 fJ monolithic modulators.
    pub fn published() -> Self {
        Self {
            tia_pj: 20.0,
            modulator_driver_pj: 100.0,
            analog_memory: AnalogMemory { capacitance_f: 100e-15, voltage_v: 1.0, capacitors: 1000 },
            laser_power_w: 2.0,
            modulation_hz: 1e9,
            monolithic_pj_per_sample: 5e-3,
        }
    }

    /// Total analog cost per sample (J).
    pub fn per_sample_energy(&self) -> f64 {
        (self.tia_pj + self.modulator_driver_pj) * 1e-12 + self.analog_memory.energy_per_sample()
    }
}

impl Default for HybridParams {
    fn default() -> Self {
        Self::published()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub count: u64,
    pub energy_j: f64,
}

/// Per-layer counts and energies with their totals and derived figures.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub model: String,
    /// What `count` measures in each row.
    pub count_label: String,
    pub rows: Vec<ReportRow>,
    pub total_count: u64,
    pub total_energy_j: f64,
    pub metrics: BTreeMap<String, f64>,
    /// Places where a computed figure departs from a published one.
    pub notes: Vec<String>,
}

impl EnergyReport {
    fn new(model: &str, count_label: &str, rows: Vec<ReportRow>) -> Self {
        let total_count = rows.iter().map(|r| r.count).sum();
        let total_energy_j = rows.iter().map(|r| r.energy_j).sum();
        Self {
            model: model.into(),
            count_label: count_label.into(),
            rows,
            total_count,
            total_energy_j,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// One line per layer plus a TOTAL line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("layer,{},energy_j\n", self.count_label);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.name, r.count, format_significant(r.energy_j, 10));
        }
        let _ = writeln!(out, "TOTAL,{},{}", self.total_count, format_significant(self.total_energy_j, 10));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn round_significant(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits as i32 - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

/// Layer energy = units × patches × per-waveguide energy.
///
/// Also reports the closed form `C·Δt·P0` with `Δt = 1/f`, where `C` is
/// the table's waveguide-signal count times the pulses per waveguide over
/// the amplifier efficiency.
pub fn optical_energy(arch: &ArchTable, p: &OpticalEnergyParams) -> Result<EnergyReport> {
    p.validate()?;
    let exact = p.waveguide_energy();
    let e = p.round_waveguide_energy.map_or(exact, |d| round_significant(exact, d));
    let rows = arch
        .rows()
        .iter()
        .map(|r| {
            let count = r.units * r.patches;
            ReportRow { name: r.name.clone(), count, energy_j: count as f64 * e }
        })
        .collect();
    let mut report = EnergyReport::new("optical", "waveguide_signals", rows);
    let coefficient = report.total_count as f64 * p.pulses_per_waveguide as f64 / p.amplifier_wall_plug;
    let m = &mut report.metrics;
    m.insert("waveguide_energy_j".into(), e);
    m.insert("waveguide_energy_unrounded_j".into(), exact);
    m.insert("total_energy_unrounded_j".into(), report.total_count as f64 * exact);
    m.insert("closed_form_coefficient".into(), coefficient);
    m.insert("closed_form_energy_j".into(), coefficient * p.p0 / p.f);
    if e != exact {
        report.notes.push(format!(
            "per-waveguide energy rounded from {} J to {} J before multiplying",
            format_significant(exact, 5),
            format_significant(e, 5)
        ));
    }
    Ok(report)
}

/// FLOPs per layer = kernel size × patches × kernels × 2.
pub fn electronic_energy(arch: &ArchTable, rate_flops_per_s: f64, power_w: f64) -> Result<EnergyReport> {
    if !(rate_flops_per_s > 0.0 && rate_flops_per_s.is_finite()) || !(power_w >= 0.0 && power_w.is_finite()) {
        return Err(Error::InvalidParameter("rate must be > 0 and power >= 0".into()));
    }
    let per_flop = power_w / rate_flops_per_s;
    let rows = arch
        .rows()
        .iter()
        .map(|r| {
            let count = r.kernel_size * r.patches * r.units * 2;
            ReportRow { name: r.name.clone(), count, energy_j: count as f64 * per_flop }
        })
        .collect();
    let mut report = EnergyReport::new("electronic", "flops", rows);
    let time = report.total_count as f64 / rate_flops_per_s;
    report.metrics.insert("time_per_image_s".into(), time);
    Ok(report)
}

/// Published speedup of the optical system over the electronic baseline.
pub const PUBLISHED_SPEEDUP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OpticalTiming {
    pub optical_time_s: f64,
    pub electronic_time_s: f64,
    pub speedup: f64,
    /// Whether the computed speedup is within 1% of [`PUBLISHED_SPEEDUP`].
    pub matches_published: bool,
}

/// Streaming the first layer's patches at `f` bounds one inference.
pub fn optical_time(first_layer_patches: u64, f: f64, electronic_time_s: f64) -> Result<OpticalTiming> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::InvalidParameter(format!("f must be > 0, got {f}")));
    }
    let optical_time_s = first_layer_patches as f64 / f;
    let speedup = electronic_time_s / optical_time_s;
    Ok(OpticalTiming {
        optical_time_s,
        electronic_time_s,
        speedup,
        matches_published: ((speedup - PUBLISHED_SPEEDUP) / PUBLISHED_SPEEDUP).abs() <= 0.01,
    })
}

/// Electronic report plus the optical timing comparison.
pub fn electronic_report(arch: &ArchTable, p: &ElectronicParams) -> Result<EnergyReport> {
    let mut report = electronic_energy(arch, p.rate_flops_per_s, p.power_w)?;
    let first = arch.rows()[0].patches;
    let t = optical_time(first, p.optical_f, report.metrics["time_per_image_s"])?;
    report.metrics.insert("optical_time_s".into(), t.optical_time_s);
    report.metrics.insert("speedup".into(), t.speedup);
    report.metrics.insert("published_speedup".into(), PUBLISHED_SPEEDUP);
    if !t.matches_published {
        report.notes.push(format!(
            "computed speedup {} differs from the published {PUBLISHED_SPEEDUP}",
            format_significant(t.speedup, 4)
        ));
    }
    Ok(report)
}

/// Analog ops per layer = kernel size × patches × 2; each op costs the sum
/// of the per-sample TIA, driver and memory energies.
pub fn hybrid_energy(arch: &ArchTable, p: &HybridParams) -> Result<EnergyReport> {
    if !(p.modulation_hz > 0.0 && p.modulation_hz.is_finite()) {
        return Err(Error::InvalidParameter(format!("modulation rate must be > 0, got {}", p.modulation_hz)));
    }
    let per_sample = p.per_sample_energy();
    let rows = arch
        .rows()
        .iter()
        .map(|r| {
            let count = r.kernel_size * r.patches * 2;
            ReportRow { name: r.name.clone(), count, energy_j: count as f64 * per_sample }
        })
        .collect();
    let mut report = EnergyReport::new("hybrid", "analog_ops", rows);
    let patches = arch.total_patches();
    let m = &mut report.metrics;
    m.insert("per_sample_energy_j".into(), per_sample);
    m.insert("analog_memory_energy_j".into(), p.analog_memory.energy_per_sample());
    m.insert("total_patches".into(), patches as f64);
    m.insert("laser_energy_j".into(), p.laser_power_w * patches as f64 / p.modulation_hz);
    m.insert("monolithic_energy_j".into(), report.total_count as f64 * p.monolithic_pj_per_sample * 1e-12);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn optical_rows_match_published_table() {
        let r = optical_energy(&alexnet_optical(), &OpticalEnergyParams::published()).unwrap();
        let published = [1452000.0, 3872000.0, 5808000.0, 5808000.0, 3872000.0, 20480.0, 20480.0, 5000.0];
        for (row, want) in r.rows.iter().zip(published) {
            assert!(rel(row.energy_j, want * 1e-10) < 1e-12, "{}: {}", row.name, row.energy_j);
        }
        assert!(rel(r.total_energy_j, 20_857_960e-10) < 1e-12);
        assert!(rel(r.metric("closed_form_coefficient").unwrap(), 1.26e11) < 0.01);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn unrounded_energy() {
        let p = OpticalEnergyParams { round_waveguide_energy: None, ..OpticalEnergyParams::published() };
        assert!(rel(p.waveguide_energy(), 5.0417e-10) < 1e-4);
        let r = optical_energy(&alexnet_optical(), &p).unwrap();
        assert!(rel(r.total_energy_j, 2.1032e-3) < 1e-4);
        assert!(rel(r.total_energy_j, r.metric("total_energy_unrounded_j").unwrap()) < 1e-12);
        assert!(r.notes.is_empty());
    }

    #[test]
    fn zero_power_is_zero_energy() {
        let p = OpticalEnergyParams { p0: 0.0, ..OpticalEnergyParams::published() };
        let r = optical_energy(&alexnet_optical(), &p).unwrap();
        assert!(r.rows.iter().all(|r| r.energy_j == 0.0) && r.total_energy_j == 0.0);
    }

    #[test]
    fn flops_table() {
        let r = electronic_energy(&alexnet(), 112e12, 250.0).unwrap();
        let published =
            [105415200u64, 447897600, 149520384, 224280576, 149520384, 177209344, 16777216, 4096000].map(|x| x * 2);
        assert_eq!(r.rows.iter().map(|r| r.count).collect::<Vec<_>>(), published);
        assert_eq!(r.total_count, 2_549_433_408);
        assert!(rel(r.total_energy_j, 5.7e-3) < 0.01);
        assert!(rel(r.metric("time_per_image_s").unwrap(), 2.28e-5) < 0.01);
    }

    #[test]
    fn trivial_flops() {
        let t = ArchTable::new(vec![row("x", 1, 1, 1)]).unwrap();
        assert_eq!(electronic_energy(&t, 1.0, 1.0).unwrap().total_count, 2);
    }

    #[test]
    fn timing_comparison() {
        let r = electronic_report(&alexnet(), &ElectronicParams::published()).unwrap();
        assert!(rel(r.metric("optical_time_s").unwrap(), 1.008e-6) < 1e-3);
        assert!(rel(r.metric("speedup").unwrap(), 22.6) < 1e-2);
        assert_eq!(r.metric("published_speedup"), Some(30.0));
        assert_eq!(r.notes.len(), 1);
        let t = optical_time(1, 1.0, 1.0).unwrap();
        assert_eq!(t.optical_time_s, 1.0);
        assert!(optical_time(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn hybrid_components() {
        let p = HybridParams::published();
        assert!(rel(p.analog_memory.energy_per_sample(), 100e-12) < 1e-12);
        let r = hybrid_energy(&alexnet(), &p).unwrap();
        let ops: Vec<u64> = r.rows.iter().map(|r| r.count / 2).collect();
        assert_eq!(ops, [1_098_075, 1_749_600, 389_376, 584_064, 584_064, 43_264, 4096, 4096]);
        assert_eq!(r.total_count, 8_913_270);
        assert_eq!(r.metric("total_patches"), Some(4264.0));
        assert!(rel(r.metric("laser_energy_j").unwrap(), 8.528e-6) < 1e-9);
        assert!(rel(r.metric("monolithic_energy_j").unwrap(), 44.56635e-9) < 1e-9);
    }

    #[test]
    fn csv_has_total_row() {
        let r = electronic_energy(&alexnet(), 112e12, 250.0).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,flops,energy_j\nconv1,210830400,"));
        assert!(csv.lines().last().unwrap().starts_with("TOTAL,2549433408,"));
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["total_count"], 2_549_433_408u64);
    }

    #[test]
    fn invalid_tables_and_params() {
        assert!(ArchTable::new(vec![]).is_err());
        assert!(ArchTable::new(vec![row("x", 0, 1, 1)]).is_err());
        let bad = OpticalEnergyParams { amplifier_wall_plug: 0.0, ..OpticalEnergyParams::published() };
        assert!(optical_energy(&alexnet_optical(), &bad).is_err());
        let bad = OpticalEnergyParams { round_waveguide_energy: Some(0), ..OpticalEnergyParams::published() };
        assert!(optical_energy(&alexnet_optical(), &bad).is_err());
        assert!(electronic_energy(&alexnet(), 0.0, 1.0).is_err());
    }

    #[test]
    fn params_round_trip_json() {
        let p = HybridParams::published();
        let back: HybridParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let t: ArchTable = serde_json::from_str(&serde_json::to_string(&alexnet()).unwrap()).unwrap();
        assert_eq!(t, alexnet());
    }

    proptest! {
        #[test]
        fn optical_linear_in_power_and_period(scale in 0.01f64..100.0) {
            let base = OpticalEnergyParams { round_waveguide_energy: None, ..OpticalEnergyParams::published() };
            let e0 = optical_energy(&alexnet_optical(), &base).unwrap().total_energy_j;
            let p = OpticalEnergyParams { p0: base.p0 * scale, ..base };
            prop_assert!(rel(optical_energy(&alexnet_optical(), &p).unwrap().total_energy_j, e0 * scale) < 1e-12);
            let p = OpticalEnergyParams { f: base.f / scale, ..base };
            prop_assert!(rel(optical_energy(&alexnet_optical(), &p).unwrap().total_energy_j, e0 * scale) < 1e-12);
        }

        #[test]
        fn totals_are_row_sums(k in 1u64..1000, n in 1u64..1000, u in 1u64..1000) {
            let t = ArchTable::new(vec![row("a", k, n, u), row("b", u, k, n)]).unwrap();
            let r = electronic_energy(&t, 1e12, 100.0).unwrap();
            prop_assert_eq!(r.total_count, r.rows.iter().map(|r| r.count).sum::<u64>());
            prop_assert_eq!(r.total_energy_j, r.rows.iter().map(|r| r.energy_j).sum::<f64>());
        }
    }
}
