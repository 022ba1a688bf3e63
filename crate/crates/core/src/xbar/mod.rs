//! Crossbar-level simulation: tiling a layer onto fixed-size arrays,
//! ideal and noisy matrix-vector products with ADCs in the loop, and an
//! IR-drop nodal solver.
//!
//! The unrolled weight matrix has one row per input (k·k·C_in) and one
//! column per output channel. Each weight occupies `cells_per_weight`
//! adjacent physical columns; multi-cell devices hold one digit of the
//! weight's programmed level per cell, least significant first.
//! Conductances are in µS, voltages in V, currents in µA.

mod analysis;
mod irdrop;

pub use analysis::{adc_mse_sweep, irdrop_deviation, AdcSweepPoint};
pub use irdrop::{irdrop_effective, irdrop_mvm, BlockSolution, NodalSolver};

use serde::{Deserialize, Serialize};

use crate::devlib::{quantize_conductance, weights_to_conductance, ConductanceTensor, DeviceSpec};
use crate::nn::quantize_in_place;
use crate::rng::NoiseStream;
use crate::topology::ConvLayerSpec;
use crate::{invalid, par, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    /// Ohms per wordline/bitline segment between adjacent cells.
    pub wire_r: f64,
    /// Ohms between each row driver and its wordline.
    pub source_r: f64,
    /// Ohms between each bitline and its sense node; `inf` leaves it open.
    pub sink_r: f64,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        CrossbarConfig {
            rows: 128,
            cols: 128,
            wire_r: 2.5,
            source_r: 1.0e3,
            sink_r: 1.0e3,
        }
    }
}

impl CrossbarConfig {
    pub fn square(size: usize) -> Self {
        CrossbarConfig {
            rows: size,
            cols: size,
            ..Default::default()
        }
    }

    pub fn ideal(rows: usize, cols: usize) -> Self {
        CrossbarConfig {
            rows,
            cols,
            wire_r: 0.0,
            source_r: 0.0,
            sink_r: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return invalid("crossbar rows and cols must be at least 1");
        }
        for (name, r) in [("wire_r", self.wire_r), ("source_r", self.source_r), ("sink_r", self.sink_r)] {
            if !(r >= 0.0) {
                return invalid(format!("{name} must be non-negative, got {r}"));
            }
        }
        Ok(())
    }

    /// Arrays needed for an unrolled `rows × cols` matrix (physical columns).
    pub fn crossbars_for(&self, rows: usize, cols: usize) -> usize {
        rows.div_ceil(self.rows) * cols.div_ceil(self.cols)
    }
}

/// One physical array. `g` covers the whole array, row-major; cells
/// outside `rows_used × cols_used` are padding programmed to g_min.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossbarBlock {
    pub row0: usize,
    pub col0: usize,
    pub rows_used: usize,
    pub cols_used: usize,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedLayer {
    pub layer: usize,
    pub device: String,
    /// Unrolled input rows.
    pub rows: usize,
    /// Weight columns (output channels).
    pub weight_cols: usize,
    pub cells_per_weight: usize,
    pub precision_bits: u32,
    pub xbar_rows: usize,
    pub xbar_cols: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
    /// Row-block major.
    pub blocks: Vec<CrossbarBlock>,
    pub layer_scale: f64,
    pub g_min: f64,
    pub g_max: f64,
    /// Weight signs, `[rows][weight_cols]`.
    pub signs: Vec<i8>,
}

impl MappedLayer {
    /// Physical columns: weight columns × cells per weight.
    pub fn cols(&self) -> usize {
        self.weight_cols * self.cells_per_weight
    }

    pub fn crossbars(&self) -> usize {
        self.blocks.len()
    }

    /// Programmed cells, excluding padding.
    pub fn active_cells(&self) -> usize {
        self.rows * self.cols()
    }

    /// Fabricated cells, including padding.
    pub fn padded_cells(&self) -> usize {
        self.blocks.len() * self.xbar_rows * self.xbar_cols
    }

    pub fn block(&self, rb: usize, cb: usize) -> &CrossbarBlock {
        &self.blocks[rb * self.col_blocks + cb]
    }

    /// The full unrolled conductance matrix `[rows][cols]` rebuilt from the blocks.
    pub fn dense_conductance(&self) -> Vec<f64> {
        let cols = self.cols();
        let mut m = vec![0.0; self.rows * cols];
        for b in &self.blocks {
            for r in 0..b.rows_used {
                for c in 0..b.cols_used {
                    m[(b.row0 + r) * cols + b.col0 + c] = b.g[r * self.xbar_cols + c];
                }
            }
        }
        m
    }

    /// Weight of each cell digit relative to the layer scale: a weight is
    /// sign·s·Σ_d coef_d·(G_d − g_min)/(g_max − g_min).
    pub fn digit_coefficients(&self) -> Vec<f64> {
        let m = self.cells_per_weight as u32;
        let per_cell = self.precision_bits / m;
        let base = f64::from(1u32 << per_cell);
        let cell_max = base - 1.0;
        let total = f64::from((1u32 << self.precision_bits) - 1);
        (0..m).map(|d| base.powi(d as i32) * cell_max / total).collect()
    }

    /// Signed weights `[weight_cols][rows]` (conv layout) implied by the
    /// current conductances.
    pub fn effective_weights(&self) -> Vec<f64> {
        let cols = self.cols();
        let dense = self.dense_conductance();
        let coef = self.digit_coefficients();
        let k = self.layer_scale / (self.g_max - self.g_min);
        let mut w = vec![0.0; self.weight_cols * self.rows];
        for r in 0..self.rows {
            for c in 0..self.weight_cols {
                let mut acc = 0.0;
                for (d, cd) in coef.iter().enumerate() {
                    acc += cd * (dense[r * cols + c * self.cells_per_weight + d] - self.g_min);
                }
                w[c * self.rows + r] = f64::from(self.signs[r * self.weight_cols + c]) * k * acc;
            }
        }
        w
    }
}

/// Map a conv layer's weights `[C_out, C_in, k, k]` onto crossbars.
/// Conductances are programmed to the device's quantized levels.
pub fn map_layer(w: &[f64], spec: &ConvLayerSpec, dev: &DeviceSpec, xbar: &CrossbarConfig) -> Result<MappedLayer> {
    spec.validate()?;
    if w.len() != spec.weight_len() {
        return invalid(format!("{} weights for a layer of {}", w.len(), spec.weight_len()));
    }
    map_matrix(w, spec.out_channels, spec.unrolled_rows(), dev, xbar)
}

/// Map a `[out][inputs]` weight matrix (row per output) onto crossbars.
pub fn map_matrix(w: &[f64], outputs: usize, inputs: usize, dev: &DeviceSpec, xbar: &CrossbarConfig) -> Result<MappedLayer> {
    xbar.validate()?;
    dev.validate()?;
    if w.len() != outputs * inputs || outputs == 0 || inputs == 0 {
        return invalid(format!("{} weights do not form a {outputs}x{inputs} matrix", w.len()));
    }
    // Transpose to [inputs][outputs] so rows are crossbar rows.
    let mut wt = vec![0.0; w.len()];
    for o in 0..outputs {
        for i in 0..inputs {
            wt[i * outputs + o] = w[o * inputs + i];
        }
    }
    let g = quantize_conductance(weights_to_conductance(&wt, dev)?, dev);
    let m = dev.cells_per_weight as usize;
    let per_cell = dev.precision_bits / dev.cells_per_weight;
    let base = 1usize << per_cell;
    let top = f64::from(dev.levels() - 1);
    let range = g.g_max - g.g_min;
    let cols = outputs * m;
    let mut dense = vec![0.0; inputs * cols];
    for (idx, &gv) in g.values.iter().enumerate() {
        let (r, c) = (idx / outputs, idx % outputs);
        let mut level = ((gv - g.g_min) / range * top).round() as usize;
        for d in 0..m {
            let digit = level % base;
            level /= base;
            dense[r * cols + c * m + d] = if m == 1 {
                gv
            } else {
                g.g_min + digit as f64 / (base - 1) as f64 * range
            };
        }
    }
    let row_blocks = inputs.div_ceil(xbar.rows);
    let col_blocks = cols.div_ceil(xbar.cols);
    let mut blocks = Vec::with_capacity(row_blocks * col_blocks);
    for rb in 0..row_blocks {
        for cb in 0..col_blocks {
            let (row0, col0) = (rb * xbar.rows, cb * xbar.cols);
            let rows_used = xbar.rows.min(inputs - row0);
            let cols_used = xbar.cols.min(cols - col0);
            let mut bg = vec![g.g_min; xbar.rows * xbar.cols];
            for r in 0..rows_used {
                let src = &dense[(row0 + r) * cols + col0..(row0 + r) * cols + col0 + cols_used];
                bg[r * xbar.cols..r * xbar.cols + cols_used].copy_from_slice(src);
            }
            blocks.push(CrossbarBlock {
                row0,
                col0,
                rows_used,
                cols_used,
                g: bg,
            });
        }
    }
    Ok(MappedLayer {
        layer: 0,
        device: dev.name.clone(),
        rows: inputs,
        weight_cols: outputs,
        cells_per_weight: m,
        precision_bits: dev.precision_bits,
        xbar_rows: xbar.rows,
        xbar_cols: xbar.cols,
        row_blocks,
        col_blocks,
        blocks,
        layer_scale: g.layer_scale,
        g_min: g.g_min,
        g_max: g.g_max,
        signs: g.signs,
    })
}

fn check_input(mapped: &MappedLayer, v: &[f64]) -> Result<()> {
    if v.len() != mapped.rows {
        return invalid(format!("input has {} entries, layer has {} rows", v.len(), mapped.rows));
    }
    Ok(())
}

/// Column currents I_j = Σ_i G_ij·V_i per physical column, summed over row blocks.
pub fn ideal_mvm(mapped: &MappedLayer, v: &[f64]) -> Result<Vec<f64>> {
    check_input(mapped, v)?;
    let mut out = vec![0.0; mapped.cols()];
    for b in &mapped.blocks {
        for r in 0..b.rows_used {
            let vi = v[b.row0 + r];
            let row = &b.g[r * mapped.xbar_cols..r * mapped.xbar_cols + b.cols_used];
            for (c, g) in row.iter().enumerate() {
                out[b.col0 + c] += g * vi;
            }
        }
    }
    Ok(out)
}

/// Signed partial sums per weight column and row block, `[row_blocks][weight_cols]`.
/// Noise-free mapping gives exactly the unrolled weights times `v`.
pub fn block_partial_sums(mapped: &MappedLayer, v: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_input(mapped, v)?;
    let coef = mapped.digit_coefficients();
    let k = mapped.layer_scale / (mapped.g_max - mapped.g_min);
    let m = mapped.cells_per_weight;
    let wc = mapped.weight_cols;
    let mut out = vec![vec![0.0; wc]; mapped.row_blocks];
    for (bi, b) in mapped.blocks.iter().enumerate() {
        let rb = bi / mapped.col_blocks;
        let acc = &mut out[rb];
        for r in 0..b.rows_used {
            let gr = b.row0 + r;
            let vi = v[gr];
            for c in 0..b.cols_used {
                let pc = b.col0 + c;
                let (wcol, d) = (pc / m, pc % m);
                let s = f64::from(mapped.signs[gr * wc + wcol]);
                acc[wcol] += s * k * coef[d] * (b.g[r * mapped.xbar_cols + c] - mapped.g_min) * vi;
            }
        }
    }
    Ok(out)
}

/// Partial sums per row block, each optionally quantized by an ADC
/// `(bits, range)`, then added across blocks.
pub fn partial_sums(mapped: &MappedLayer, v: &[f64], adc: Option<(u32, f64)>) -> Result<Vec<f64>> {
    let blocks = block_partial_sums(mapped, v)?;
    let mut out = vec![0.0; mapped.weight_cols];
    for mut b in blocks {
        if let Some((bits, range)) = adc {
            quantize_in_place(&mut b, bits, range);
        }
        out.iter_mut().zip(&b).for_each(|(o, x)| *o += x);
    }
    Ok(out)
}

/// Noise-free signed outputs of the mapped layer.
pub fn ideal_partial_sums(mapped: &MappedLayer, v: &[f64]) -> Result<Vec<f64>> {
    partial_sums(mapped, v, None)
}

/// Largest |row-block partial sum| over a set of inputs; the ADC range calibration.
pub fn calibrate_adc_range(mapped: &MappedLayer, inputs: &[Vec<f64>]) -> Result<f64> {
    let maxes = par::map_indexed(inputs.len(), |i| {
        block_partial_sums(mapped, &inputs[i]).map(|b| b.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())))
    });
    let mut best = 0.0f64;
    for m in maxes {
        best = best.max(m?);
    }
    Ok(best)
}

/// Apply drift at `t` (skipped for `t == 0`) and read noise to every array.
/// Array `i` draws from `stream.derive(i)`.
pub fn perturb_mapped(mapped: &MappedLayer, dev: &DeviceSpec, t: f64, stream: &NoiseStream) -> Result<MappedLayer> {
    if t < 0.0 {
        return invalid(format!("inference time must be non-negative, got {t}"));
    }
    let factor = if t > 0.0 { dev.drift_factor(t)? } else { 1.0 };
    let mut out = mapped.clone();
    let blocks: Vec<Vec<f64>> = par::map_indexed(mapped.blocks.len(), |i| {
        let b = &mapped.blocks[i];
        let n = b.g.len();
        let mut ct = ConductanceTensor {
            values: b.g.clone(),
            layer_scale: 1.0,
            signs: vec![1; n],
            g_min: mapped.g_min,
            g_max: mapped.g_max,
        };
        if factor != 1.0 {
            ct.values.iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, mapped.g_max));
        }
        crate::devlib::apply_read_noise(ct, dev, &stream.derive(i as u64)).values
    });
    for (b, g) in out.blocks.iter_mut().zip(blocks) {
        b.g = g;
    }
    Ok(out)
}

/// Drift + read noise on the arrays, then signed partial sums through ADCs.
pub fn noisy_mvm(
    mapped: &MappedLayer,
    v: &[f64],
    dev: &DeviceSpec,
    t: f64,
    stream: &NoiseStream,
    adc: Option<(u32, f64)>,
) -> Result<Vec<f64>> {
    partial_sums(&perturb_mapped(mapped, dev, t, stream)?, v, adc)
}

/// Debug dump of a mapped layer and, optionally, solved node voltages.
#[derive(Serialize)]
pub struct CrossbarDump<'a> {
    pub layer: &'a MappedLayer,
    pub config: CrossbarConfig,
    pub solutions: Vec<BlockSolution>,
}

pub fn dump_json(mapped: &MappedLayer, xbar: &CrossbarConfig, v: Option<&[f64]>) -> Result<String> {
    let solutions = match v {
        Some(v) => {
            check_input(mapped, v)?;
            let mut out = Vec::new();
            for (i, b) in mapped.blocks.iter().enumerate() {
                let solver = NodalSolver::new(b, mapped.xbar_rows, mapped.xbar_cols, xbar)?;
                let mut vb = vec![0.0; mapped.xbar_rows];
                vb[..b.rows_used].copy_from_slice(&v[b.row0..b.row0 + b.rows_used]);
                let mut s = solver.solve(&vb)?;
                s.block = i;
                out.push(s);
            }
            out
        }
        None => Vec::new(),
    };
    serde_json::to_string_pretty(&CrossbarDump {
        layer: mapped,
        config: *xbar,
        solutions,
    })
    .map_err(|e| crate::Error::Format(e.to_string()))
}
