use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CSV_SCHEMA: &str = "# schema: cost-report v1";
const CSV_HEADER: &str =
    "layer,device,adc_bits,crossbars,tiles,imc_area_mm2,prog_energy_j,adc_area_mm2,adc_energy_j,inference_energy_j";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub device: String,
    pub adc_bits: u32,
    pub crossbars: usize,
    pub tiles: usize,
    pub imc_area_mm2: f64,
    pub prog_energy_j: f64,
    pub adc_area_mm2: f64,
    /// Per image.
    pub adc_energy_j: f64,
    /// ADC plus array read energy per image.
    pub inference_energy_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub imc_area_mm2: f64,
    pub prog_energy_j: f64,
    pub adc_area_mm2: f64,
    pub adc_energy_j: f64,
    pub inference_energy_j: f64,
    pub tops_per_mm2: f64,
}

impl CostReport {
    /// Totals are the sums of the layer rows; density is left at 0.
    pub fn from_layers(layers: Vec<LayerCost>) -> Self {
        let sum = |f: fn(&LayerCost) -> f64| layers.iter().map(f).sum();
        CostReport {
            imc_area_mm2: sum(|l| l.imc_area_mm2),
            prog_energy_j: sum(|l| l.prog_energy_j),
            adc_area_mm2: sum(|l| l.adc_area_mm2),
            adc_energy_j: sum(|l| l.adc_energy_j),
            inference_energy_j: sum(|l| l.inference_energy_j),
            tops_per_mm2: 0.0,
            layers,
        }
    }

    /// Schema line, header, one row per layer, then a `total` row whose
    /// `tiles` column holds the chip tile count and whose `device` column
    /// holds the density in TOPS/mm².
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_SCHEMA}\n{CSV_HEADER}\n");
        for l in &self.layers {
            s.push_str(&format!(
                "{},{},{},{},{},{:e},{:e},{:e},{:e},{:e}\n",
                l.name,
                l.device,
                l.adc_bits,
                l.crossbars,
                l.tiles,
                l.imc_area_mm2,
                l.prog_energy_j,
                l.adc_area_mm2,
                l.adc_energy_j,
                l.inference_energy_j
            ));
        }
        s.push_str(&format!(
            "total,{:e},,{},{},{:e},{:e},{:e},{:e},{:e}\n",
            self.tops_per_mm2,
            self.layers.iter().map(|l| l.crossbars).sum::<usize>(),
            self.layers.iter().map(|l| l.tiles).sum::<usize>(),
            self.imc_area_mm2,
            self.prog_energy_j,
            self.adc_area_mm2,
            self.adc_energy_j,
            self.inference_energy_j
        ));
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_SCHEMA) {
            return Err(Error::Format("cost report: missing schema line".into()));
        }
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format("cost report: unexpected header".into()));
        }
        let bad = |n: usize| Error::Format(format!("cost report: malformed row {n}"));
        let mut layers = Vec::new();
        let mut density = None;
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(bad(n + 3));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(n + 3));
            if f[0] == "total" {
                density = Some(num(1)?);
                continue;
            }
            layers.push(LayerCost {
                name: f[0].into(),
                device: f[1].into(),
                adc_bits: f[2].parse().map_err(|_| bad(n + 3))?,
                crossbars: f[3].parse().map_err(|_| bad(n + 3))?,
                tiles: f[4].parse().map_err(|_| bad(n + 3))?,
                imc_area_mm2: num(5)?,
                prog_energy_j: num(6)?,
                adc_area_mm2: num(7)?,
                adc_energy_j: num(8)?,
                inference_energy_j: num(9)?,
            });
        }
        let mut r = CostReport::from_layers(layers);
        r.tops_per_mm2 = density.ok_or_else(|| Error::Format("cost report: missing total row".into()))?;
        Ok(r)
    }

    /// One-line summary in the column order area, programming energy, ADC energy, density.
    pub fn summary_line(&self, label: &str, letters: &str) -> String {
        format!(
            "{label:<14} {letters:<30} area {:>10.4} mm²  prog {:>10.4} µJ  ADC {:>10.4} µJ  {:>8.3} TOPS/mm²",
            self.imc_area_mm2,
            self.prog_energy_j * 1e6,
            self.adc_energy_j * 1e6,
            self.tops_per_mm2
        )
    }
}
