//! Tile/chip planning and the area, programming-energy, ADC and
//! compute-density model.
//!
//! Every conv layer, and the classifier (costed on the last conv layer's
//! device and ADC precision), is tiled onto fixed-size crossbars; arrays
//! are grouped into tiles of `pes_per_tile` and a tile never holds two
//! layers. Silicon area counts every fabricated cell including padding;
//! programming energy counts only programmed cells. All figures are meant
//! for comparisons between configurations on the same topology.

mod config;
mod report;

pub use config::{assign_adc_bits, AdcPolicy, HybridConfig, Profile};
pub use report::{CostReport, LayerCost, CSV_SCHEMA};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::devlib::{find_device, DeviceSpec};
use crate::topology::Topology;
use crate::xbar::CrossbarConfig;
use crate::{invalid, Error, Result};

pub const DEFAULT_PES_PER_TILE: usize = 64;
pub const DEFAULT_FEATURE_NM: f64 = 32.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// `L1`.. for conv layers, `FC` for the classifier.
    pub name: String,
    pub device: String,
    pub adc_bits: u32,
    /// Unrolled rows and physical columns.
    pub rows: usize,
    pub cols: usize,
    pub crossbars: usize,
    pub tiles: usize,
    /// First tile index owned by the layer.
    pub first_tile: usize,
    pub active_cells: u64,
    pub padded_cells: u64,
    /// Crossbar input vectors per image.
    pub vectors: u64,
    pub macs: u64,
}

impl LayerPlan {
    pub fn row_blocks(&self, xbar: &CrossbarConfig) -> usize {
        self.rows.div_ceil(xbar.rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChipPlan {
    pub layers: Vec<LayerPlan>,
    pub xbar: CrossbarConfig,
    pub pes_per_tile: usize,
    pub total_crossbars: usize,
    pub total_tiles: usize,
}

impl ChipPlan {
    /// Tile counts per device name.
    pub fn tiles_by_device(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for l in &self.layers {
            *m.entry(l.device.clone()).or_insert(0) += l.tiles;
        }
        m
    }
}

fn plan_layer(
    name: String,
    dev: &DeviceSpec,
    adc_bits: u32,
    rows: usize,
    outputs: usize,
    vectors: u64,
    xbar: &CrossbarConfig,
    pes_per_tile: usize,
    first_tile: usize,
) -> LayerPlan {
    let cols = outputs * dev.cells_per_weight as usize;
    let crossbars = xbar.crossbars_for(rows, cols);
    LayerPlan {
        name,
        device: dev.name.clone(),
        adc_bits,
        rows,
        cols,
        crossbars,
        tiles: crossbars.div_ceil(pes_per_tile),
        first_tile,
        active_cells: (rows * cols) as u64,
        padded_cells: (crossbars * xbar.rows * xbar.cols) as u64,
        vectors,
        macs: vectors * (rows * outputs) as u64,
    }
}

/// Allocate crossbars and tiles for every layer of `topology` under `cfg`.
pub fn plan_chip(
    topology: &Topology,
    cfg: &HybridConfig,
    devices: &[DeviceSpec],
    xbar: &CrossbarConfig,
    pes_per_tile: usize,
) -> Result<ChipPlan> {
    xbar.validate()?;
    if pes_per_tile == 0 {
        return invalid("pes_per_tile must be at least 1");
    }
    let (geoms, fc_in) = topology.geometry()?;
    cfg.validate(geoms.len(), devices)?;
    let mut layers = Vec::with_capacity(geoms.len() + 1);
    let mut next_tile = 0;
    for (i, g) in geoms.iter().enumerate() {
        let dev = find_device(devices, &cfg.devices[i])?;
        let l = plan_layer(
            format!("L{}", i + 1),
            dev,
            cfg.adc_bits[i],
            g.spec.unrolled_rows(),
            g.spec.out_channels,
            g.positions() as u64,
            xbar,
            pes_per_tile,
            next_tile,
        );
        next_tile += l.tiles;
        layers.push(l);
    }
    if let (Some(last_dev), Some(&bits)) = (cfg.devices.last(), cfg.adc_bits.last()) {
        let dev = find_device(devices, last_dev)?;
        let l = plan_layer("FC".into(), dev, bits, fc_in, topology.classes, 1, xbar, pes_per_tile, next_tile);
        next_tile += l.tiles;
        layers.push(l);
    }
    Ok(ChipPlan {
        total_crossbars: layers.iter().map(|l| l.crossbars).sum(),
        total_tiles: next_tile,
        layers,
        xbar: *xbar,
        pes_per_tile,
    })
}

/// Area of one F² at `feature_nm`, in mm².
pub fn f2_mm2(feature_nm: f64) -> f64 {
    let f_mm = feature_nm * 1e-6;
    f_mm * f_mm
}

/// Per-layer IMC area in mm²: fabricated cells × cell footprint × F².
pub fn imc_area(plan: &ChipPlan, devices: &[DeviceSpec], feature_nm: f64) -> Result<Vec<f64>> {
    let f2 = f2_mm2(feature_nm);
    plan.layers
        .iter()
        .map(|l| Ok(l.padded_cells as f64 * find_device(devices, &l.device)?.cell_area_f2() * f2))
        .collect()
}

/// Default pulses per programmed cell: the mean level index 2^(bits−1).
pub fn default_pulses(dev: &DeviceSpec) -> f64 {
    f64::from(1u32 << (dev.precision_bits - 1))
}

/// Per-layer programming energy in joules: programmed cells × pulses × energy per level.
/// `pulses = None` uses [`default_pulses`] per device.
pub fn prog_energy(plan: &ChipPlan, devices: &[DeviceSpec], pulses: Option<f64>) -> Result<Vec<f64>> {
    if let Some(p) = pulses {
        if !(p >= 1.0) {
            return invalid(format!("pulses per device must be at least 1, got {p}"));
        }
    }
    plan.layers
        .iter()
        .map(|l| {
            let d = find_device(devices, &l.device)?;
            Ok(l.active_cells as f64 * pulses.unwrap_or_else(|| default_pulses(d)) * d.prog_energy_per_level)
        })
        .collect()
}

/// Area and energy per conversion for each supported ADC precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    /// bits -> (area mm², energy per conversion J)
    pub table: BTreeMap<u32, (f64, f64)>,
    /// Columns sharing one ADC.
    pub mux: usize,
}

impl Default for AdcSpec {
    fn default() -> Self {
        AdcSpec::sar(2.0e-4, 0.5e-12, 10, 8)
    }
}

impl AdcSpec {
    /// Area and energy ∝ 2^b, anchored at the given 4-bit figures, for 1..=max_bits.
    pub fn sar(area_4bit_mm2: f64, energy_4bit_j: f64, max_bits: u32, mux: usize) -> Self {
        let table = (1..=max_bits)
            .map(|b| {
                let k = 2f64.powi(b as i32 - 4);
                (b, (area_4bit_mm2 * k, energy_4bit_j * k))
            })
            .collect();
        AdcSpec { table, mux }
    }

    /// Area and energy ∝ b, anchored at the given 4-bit figures.
    pub fn linear(area_4bit_mm2: f64, energy_4bit_j: f64, max_bits: u32, mux: usize) -> Self {
        let table = (1..=max_bits)
            .map(|b| {
                let k = f64::from(b) / 4.0;
                (b, (area_4bit_mm2 * k, energy_4bit_j * k))
            })
            .collect();
        AdcSpec { table, mux }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mux == 0 {
            return invalid("ADC mux ratio must be at least 1");
        }
        let rows: Vec<_> = self.table.iter().collect();
        if rows.is_empty() {
            return invalid("ADC table is empty");
        }
        for w in rows.windows(2) {
            let ((_, (a0, e0)), (b, (a1, e1))) = (w[0], w[1]);
            if !(a1 > a0 && e1 > e0) {
                return invalid(format!("ADC area and energy must increase with bits (at {b} bits)"));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, bits: u32) -> Result<(f64, f64)> {
        self.table
            .get(&bits)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("no {bits}-bit entry in the ADC table")))
    }
}

/// Per-layer ADC area (mm²) and energy per image (J).
#[derive(Clone, Debug, PartialEq)]
pub struct AdcCosts {
    pub area: Vec<f64>,
    pub energy: Vec<f64>,
}

/// `adc_bits` and `vectors` are per plan layer (classifier included).
pub fn adc_costs(plan: &ChipPlan, adc_bits: &[u32], adc: &AdcSpec, vectors: &[u64]) -> Result<AdcCosts> {
    adc.validate()?;
    if adc_bits.len() != plan.layers.len() || vectors.len() != plan.layers.len() {
        return invalid("ADC bits and workload must cover every planned layer");
    }
    let mut area = Vec::with_capacity(plan.layers.len());
    let mut energy = Vec::with_capacity(plan.layers.len());
    for ((l, &bits), &n) in plan.layers.iter().zip(adc_bits).zip(vectors) {
        let (a, e) = adc.lookup(bits)?;
        let columns = (l.crossbars * plan.xbar.cols) as f64;
        area.push(columns * a / adc.mux as f64);
        let conversions = n as f64 * (l.row_blocks(&plan.xbar) * l.cols) as f64;
        energy.push(conversions * e);
    }
    Ok(AdcCosts { area, energy })
}

/// Array read and ADC timing plus the read-energy constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    /// Analog settle time of one crossbar read, seconds.
    pub t_read: f64,
    /// SAR conversion time per bit, seconds.
    pub t_bit: f64,
    /// Read voltage across a cell, volts.
    pub v_read: f64,
    /// Area multiplier standing in for buffers and interconnect.
    pub digital_overhead: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            t_read: 10e-9,
            t_bit: 1e-9,
            v_read: 0.2,
            digital_overhead: 1.3,
        }
    }
}

/// Latency of one image in seconds: layers run one after another; within a
/// layer all arrays read in parallel and each array's columns are converted
/// `mux` at a time by one SAR ADC.
pub fn latency(plan: &ChipPlan, timing: &TimingModel, adc: &AdcSpec) -> f64 {
    plan.layers
        .iter()
        .map(|l| l.vectors as f64 * (timing.t_read + adc.mux as f64 * f64::from(l.adc_bits) * timing.t_bit))
        .sum()
}

/// Tera-operations per second per mm² with ops = 2 × MACs.
pub fn compute_density(plan: &ChipPlan, cost: &CostReport, timing: &TimingModel, adc: &AdcSpec) -> Result<f64> {
    let area = (cost.imc_area_mm2 + cost.adc_area_mm2) * timing.digital_overhead;
    let lat = latency(plan, timing, adc);
    if !(area > 0.0) || !(lat > 0.0) {
        return Err(Error::InvalidModel(format!(
            "compute density needs positive area and latency (area {area} mm², latency {lat} s)"
        )));
    }
    let ops: f64 = plan.layers.iter().map(|l| 2.0 * l.macs as f64).sum();
    Ok(ops / lat / 1e12 / area)
}

/// All cost-model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub xbar: CrossbarConfig,
    pub pes_per_tile: usize,
    pub feature_nm: f64,
    /// Programming pulses per cell; `None` means 2^(bits−1).
    pub pulses: Option<f64>,
    pub adc: AdcSpec,
    pub timing: TimingModel,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            xbar: CrossbarConfig::default(),
            pes_per_tile: DEFAULT_PES_PER_TILE,
            feature_nm: DEFAULT_FEATURE_NM,
            pulses: None,
            adc: AdcSpec::default(),
            timing: TimingModel::default(),
        }
    }
}

impl CostModel {
    pub fn plan(&self, topology: &Topology, cfg: &HybridConfig, devices: &[DeviceSpec]) -> Result<ChipPlan> {
        plan_chip(topology, cfg, devices, &self.xbar, self.pes_per_tile)
    }

    /// Full per-layer report for one configuration.
    pub fn evaluate(&self, topology: &Topology, cfg: &HybridConfig, devices: &[DeviceSpec]) -> Result<CostReport> {
        let plan = self.plan(topology, cfg, devices)?;
        let area = imc_area(&plan, devices, self.feature_nm)?;
        let prog = prog_energy(&plan, devices, self.pulses)?;
        let bits: Vec<u32> = plan.layers.iter().map(|l| l.adc_bits).collect();
        let vectors: Vec<u64> = plan.layers.iter().map(|l| l.vectors).collect();
        let adc = adc_costs(&plan, &bits, &self.adc, &vectors)?;
        let mut layers = Vec::with_capacity(plan.layers.len());
        for (i, l) in plan.layers.iter().enumerate() {
            let d = find_device(devices, &l.device)?;
            // Mid-range conductance read for t_read at v_read, per programmed cell and vector.
            let g_mid = 0.5 * (d.g_min_us() + d.g_max_us()) * 1e-6;
            let read = l.vectors as f64 * l.active_cells as f64 * self.timing.v_read.powi(2) * g_mid * self.timing.t_read;
            layers.push(LayerCost {
                name: l.name.clone(),
                device: l.device.clone(),
                adc_bits: l.adc_bits,
                crossbars: l.crossbars,
                tiles: l.tiles,
                imc_area_mm2: area[i],
                prog_energy_j: prog[i],
                adc_area_mm2: adc.area[i],
                adc_energy_j: adc.energy[i],
                inference_energy_j: adc.energy[i] + read,
            });
        }
        let mut report = CostReport::from_layers(layers);
        report.tops_per_mm2 = compute_density(&plan, &report, &self.timing, &self.adc)?;
        Ok(report)
    }
}

/// Raw per-layer cost of each conv layer on each device, with the
/// classifier excluded: `area[i][j]` mm², `energy[i][j]` J.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCostTable {
    pub area: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
}

impl LayerCostTable {
    pub fn build(topology: &Topology, devices: &[DeviceSpec], model: &CostModel) -> Result<Self> {
        let (geoms, _) = topology.geometry()?;
        let mut area = Vec::with_capacity(geoms.len());
        let mut energy = Vec::with_capacity(geoms.len());
        for (i, g) in geoms.iter().enumerate() {
            let mut a_row = Vec::with_capacity(devices.len());
            let mut e_row = Vec::with_capacity(devices.len());
            for d in devices {
                let l = plan_layer(
                    format!("L{}", i + 1),
                    d,
                    1,
                    g.spec.unrolled_rows(),
                    g.spec.out_channels,
                    g.positions() as u64,
                    &model.xbar,
                    model.pes_per_tile,
                    0,
                );
                a_row.push(l.padded_cells as f64 * d.cell_area_f2() * f2_mm2(model.feature_nm));
                e_row.push(l.active_cells as f64 * model.pulses.unwrap_or_else(|| default_pulses(d)) * d.prog_energy_per_level);
            }
            area.push(a_row);
            energy.push(e_row);
        }
        Ok(LayerCostTable { area, energy })
    }

    /// Divide each layer's costs by that layer's cost on device `reference`.
    pub fn normalized(&self, reference: usize) -> Result<Self> {
        let norm = |m: &Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
            m.iter()
                .map(|row| {
                    let r = *row
                        .get(reference)
                        .ok_or_else(|| Error::InvalidInput(format!("no device {reference}")))?;
                    if !(r > 0.0) {
                        return invalid("reference cost must be positive");
                    }
                    Ok(row.iter().map(|v| v / r).collect())
                })
                .collect()
        };
        Ok(LayerCostTable {
            area: norm(&self.area)?,
            energy: norm(&self.energy)?,
        })
    }
}

/// Expected per-layer area and energy under device probabilities `p`.
/// The gradient with respect to `p[i][j]` is `(table.area[i][j], table.energy[i][j])`.
pub fn expected_costs(table: &LayerCostTable, p: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != table.area.len() {
        return invalid(format!("{} probability rows for {} layers", p.len(), table.area.len()));
    }
    let mut ea = Vec::with_capacity(p.len());
    let mut ee = Vec::with_capacity(p.len());
    for (i, row) in p.iter().enumerate() {
        if row.len() != table.area[i].len() {
            return invalid(format!("layer {} has {} probabilities for {} devices", i + 1, row.len(), table.area[i].len()));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&x| x < 0.0) {
            return invalid(format!("layer {} probabilities are not normalized (sum {s})", i + 1));
        }
        ea.push(row.iter().zip(&table.area[i]).map(|(a, b)| a * b).sum());
        ee.push(row.iter().zip(&table.energy[i]).map(|(a, b)| a * b).sum());
    }
    Ok((ea, ee))
}

#[cfg(test)]
mod tests;
