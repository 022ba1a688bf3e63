//! Resistive-parasitic crossbar solver.
//!
//! Every array is a grid of wordline nodes WL(i,j) and bitline nodes
//! BL(i,j). WL(i,j) and WL(i,j+1) are joined by `wire_r`, as are BL(i,j)
//! and BL(i+1,j); cell (i,j) joins WL(i,j) to BL(i,j). Row i is driven
//! from a source at V_i through `source_r` into WL(i,0); column j is
//! sensed at a virtual-ground node through `sink_r` from BL(rows−1,j).
//!
//! Zero resistances merge nodes (union-find); the remaining unknown node
//! potentials solve a symmetric positive definite system that is banded
//! under the row-interleaved ordering, factorized once per array with a
//! banded Cholesky and reused for every input vector.

use serde::Serialize;

use super::{CrossbarBlock, CrossbarConfig, MappedLayer};
use crate::{invalid, par, Error, Result};

/// Ohms to µS.
fn siemens_us(r: f64) -> f64 {
    1.0e6 / r
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller id as root so ordering follows the lowest member.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pot {
    /// Driver of row i.
    Source(usize),
    Ground,
    Unknown(usize),
}

/// Factorized nodal system of one array.
pub struct NodalSolver {
    rows: usize,
    cols: usize,
    /// Potential class of every original node.
    pot: Vec<Pot>,
    n: usize,
    band: usize,
    /// Lower band of the Cholesky factor, row i holds columns i−band..=i.
    chol: Vec<f64>,
    /// Per unknown: (driver row, conductance) couplings for the right-hand side.
    rhs_terms: Vec<Vec<(usize, f64)>>,
    /// Edges touching each sense node's merged set: (other node, conductance).
    sense_edges: Vec<Vec<(usize, f64)>>,
}

/// Solved potentials (V) and sensed column currents (µA) of one array.
#[derive(Clone, Debug, Serialize)]
pub struct BlockSolution {
    pub block: usize,
    /// `[rows][cols]` wordline potentials.
    pub wordline: Vec<f64>,
    /// `[rows][cols]` bitline potentials.
    pub bitline: Vec<f64>,
    pub currents: Vec<f64>,
}

impl NodalSolver {
    /// Build and factorize the network for one array of `rows × cols` cells
    /// with conductances `block.g` (µS, row-major).
    pub fn new(block: &CrossbarBlock, rows: usize, cols: usize, cfg: &CrossbarConfig) -> Result<Self> {
        Self::from_conductances(&block.g, rows, cols, cfg)
    }

    pub fn from_conductances(g: &[f64], rows: usize, cols: usize, cfg: &CrossbarConfig) -> Result<Self> {
        cfg.validate()?;
        if g.len() != rows * cols || rows == 0 || cols == 0 {
            return invalid("conductance matrix does not match the array size");
        }
        // Node ids: drivers, sense nodes, then per row the wordline and bitline nodes.
        let drv = |i: usize| i;
        let sense = |j: usize| rows + j;
        let wl = |i: usize, j: usize| rows + cols + i * 2 * cols + j;
        let bl = |i: usize, j: usize| rows + cols + i * 2 * cols + cols + j;
        let total = rows + cols + 2 * rows * cols;

        // (a, b, resistance in ohms)
        let mut resistors: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * rows * cols);
        for i in 0..rows {
            resistors.push((drv(i), wl(i, 0), cfg.source_r));
            for j in 0..cols {
                if j + 1 < cols {
                    resistors.push((wl(i, j), wl(i, j + 1), cfg.wire_r));
                }
                if i + 1 < rows {
                    resistors.push((bl(i, j), bl(i + 1, j), cfg.wire_r));
                }
            }
        }
        for j in 0..cols {
            resistors.push((bl(rows - 1, j), sense(j), cfg.sink_r));
        }

        let mut dsu = Dsu((0..total).collect());
        for &(a, b, r) in &resistors {
            if r == 0.0 {
                dsu.union(a, b);
            }
        }
        // (a, b, conductance µS) for every finite, non-zero element.
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(resistors.len() + rows * cols);
        for &(a, b, r) in &resistors {
            if r > 0.0 && r.is_finite() {
                edges.push((a, b, siemens_us(r)));
            }
        }
        for i in 0..rows {
            for j in 0..cols {
                let gij = g[i * cols + j];
                if !(gij >= 0.0 && gij.is_finite()) {
                    return invalid(format!("cell ({i},{j}) conductance {gij} is not valid"));
                }
                if gij > 0.0 {
                    edges.push((wl(i, j), bl(i, j), gij));
                }
            }
        }

        // Classify merged sets.
        let mut root_pot: Vec<Option<Pot>> = vec![None; total];
        for i in 0..rows {
            let r = dsu.find(drv(i));
            if root_pot[r].is_some() {
                return Err(Error::Singular(format!("driver {i} is shorted to another fixed node")));
            }
            root_pot[r] = Some(Pot::Source(i));
        }
        for j in 0..cols {
            let r = dsu.find(sense(j));
            match root_pot[r] {
                Some(Pot::Source(i)) => {
                    return Err(Error::Singular(format!("driver {i} is shorted to sense node {j}")));
                }
                _ => root_pot[r] = Some(Pot::Ground),
            }
        }
        // Unknowns numbered by their root id, which is the lowest member id.
        let mut n = 0;
        for node in 0..total {
            let r = dsu.find(node);
            if r == node && root_pot[r].is_none() {
                root_pot[r] = Some(Pot::Unknown(n));
                n += 1;
            }
        }
        let pot: Vec<Pot> = (0..total)
            .map(|node| {
                let r = dsu.find(node);
                root_pot[r].expect("every set classified")
            })
            .collect();

        // Every unknown set must reach a fixed potential through conducting elements.
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut anchored = vec![false; n];
        let mut band = 0;
        for &(a, b, _) in &edges {
            match (pot[a], pot[b]) {
                (Pot::Unknown(x), Pot::Unknown(y)) if x != y => {
                    adj[x].push(y);
                    adj[y].push(x);
                    band = band.max(x.abs_diff(y));
                }
                (Pot::Unknown(x), Pot::Source(_) | Pot::Ground) | (Pot::Source(_) | Pot::Ground, Pot::Unknown(x)) => {
                    anchored[x] = true;
                }
                _ => {}
            }
        }
        let mut seen = anchored.clone();
        let mut stack: Vec<usize> = (0..n).filter(|&x| anchored[x]).collect();
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        if let Some(x) = seen.iter().position(|s| !s) {
            return Err(Error::Singular(format!(
                "node group {x} is not connected to any driver or sense node"
            )));
        }

        let w = band + 1;
        let mut a = vec![0.0; n * w];
        let mut rhs_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut sense_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cols];
        let sense_root: Vec<usize> = (0..cols).map(|j| dsu.find(sense(j))).collect();
        for &(p, q, gv) in &edges {
            let (rp, rq) = (dsu.find(p), dsu.find(q));
            if rp == rq {
                continue;
            }
            for j in 0..cols {
                if rp == sense_root[j] {
                    sense_edges[j].push((q, gv));
                } else if rq == sense_root[j] {
                    sense_edges[j].push((p, gv));
                }
            }
            match (pot[p], pot[q]) {
                (Pot::Unknown(x), Pot::Unknown(y)) => {
                    a[x * w + band] += gv;
                    a[y * w + band] += gv;
                    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
                    a[hi * w + band - (hi - lo)] -= gv;
                }
                (Pot::Unknown(x), other) | (other, Pot::Unknown(x)) => {
                    a[x * w + band] += gv;
                    if let Pot::Source(i) = other {
                        rhs_terms[x].push((i, gv));
                    }
                }
                _ => {}
            }
        }
        banded_cholesky(&mut a, n, band)?;
        Ok(NodalSolver {
            rows,
            cols,
            pot,
            n,
            band,
            chol: a,
            rhs_terms,
            sense_edges,
        })
    }

    fn potential(&self, x: &[f64], v: &[f64], node: usize) -> f64 {
        match self.pot[node] {
            Pot::Source(i) => v[i],
            Pot::Ground => 0.0,
            Pot::Unknown(k) => x[k],
        }
    }

    /// Solve for driver voltages `v` (one per array row).
    pub fn solve(&self, v: &[f64]) -> Result<BlockSolution> {
        if v.len() != self.rows {
            return invalid(format!("{} drive voltages for {} rows", v.len(), self.rows));
        }
        let mut x: Vec<f64> = self
            .rhs_terms
            .iter()
            .map(|t| t.iter().map(|&(i, gv)| gv * v[i]).sum())
            .collect();
        banded_solve(&self.chol, self.n, self.band, &mut x);
        let (rows, cols) = (self.rows, self.cols);
        let base = rows + cols;
        let mut wordline = vec![0.0; rows * cols];
        let mut bitline = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                wordline[i * cols + j] = self.potential(&x, v, base + i * 2 * cols + j);
                bitline[i * cols + j] = self.potential(&x, v, base + i * 2 * cols + cols + j);
            }
        }
        let currents = self
            .sense_edges
            .iter()
            .map(|es| es.iter().map(|&(other, gv)| gv * self.potential(&x, v, other)).sum())
            .collect();
        Ok(BlockSolution {
            block: 0,
            wordline,
            bitline,
            currents,
        })
    }

    /// Column currents only.
    pub fn currents(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve(v)?.currents)
    }
}

/// In-place Cholesky of a symmetric banded matrix stored as lower band rows.
fn banded_cholesky(a: &mut [f64], n: usize, band: usize) -> Result<()> {
    let w = band + 1;
    for i in 0..n {
        let j0 = i.saturating_sub(band);
        for j in j0..=i {
            let mut s = a[i * w + band - (i - j)];
            let k0 = j0.max(j.saturating_sub(band));
            for k in k0..j {
                s -= a[i * w + band - (i - k)] * a[j * w + band - (j - k)];
            }
            if j == i {
                if !(s > 0.0) {
                    return Err(Error::Singular(format!("non-positive pivot at unknown {i}")));
                }
                a[i * w + band] = s.sqrt();
            } else {
                a[i * w + band - (i - j)] = s / a[j * w + band];
            }
        }
    }
    Ok(())
}

fn banded_solve(l: &[f64], n: usize, band: usize, x: &mut [f64]) {
    let w = band + 1;
    for i in 0..n {
        let mut s = x[i];
        for k in i.saturating_sub(band)..i {
            s -= l[i * w + band - (i - k)] * x[k];
        }
        x[i] = s / l[i * w + band];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..(i + band + 1).min(n) {
            s -= l[k * w + band - (k - i)] * x[k];
        }
        x[i] = s / l[i * w + band];
    }
}

fn block_drive(mapped: &MappedLayer, b: &CrossbarBlock, v: &[f64]) -> Vec<f64> {
    let mut vb = vec![0.0; mapped.xbar_rows];
    vb[..b.rows_used].copy_from_slice(&v[b.row0..b.row0 + b.rows_used]);
    vb
}

/// Column currents with wire, driver and sense resistances, per physical
/// column and summed over row blocks. Padding cells and rows (driven at 0 V)
/// are part of each simulated array.
pub fn irdrop_mvm(mapped: &MappedLayer, v: &[f64], xbar: &CrossbarConfig) -> Result<Vec<f64>> {
    if v.len() != mapped.rows {
        return invalid(format!("input has {} entries, layer has {} rows", v.len(), mapped.rows));
    }
    let per_block = par::map_indexed(mapped.blocks.len(), |i| {
        let b = &mapped.blocks[i];
        NodalSolver::new(b, mapped.xbar_rows, mapped.xbar_cols, xbar)?.currents(&block_drive(mapped, b, v))
    });
    let mut out = vec![0.0; mapped.cols()];
    for (b, cur) in mapped.blocks.iter().zip(per_block) {
        let cur = cur?;
        for c in 0..b.cols_used {
            out[b.col0 + c] += cur[c];
        }
    }
    Ok(out)
}

/// The layer with each array's conductances replaced by the linear map the
/// parasitic network actually applies: G_eff(i,j) is column j's current for
/// a unit drive on row i alone.
pub fn irdrop_effective(mapped: &MappedLayer, xbar: &CrossbarConfig) -> Result<MappedLayer> {
    let (xr, xc) = (mapped.xbar_rows, mapped.xbar_cols);
    let per_block = par::map_indexed(mapped.blocks.len(), |bi| -> Result<Vec<f64>> {
        let b = &mapped.blocks[bi];
        let solver = NodalSolver::new(b, xr, xc, xbar)?;
        let mut g = b.g.clone();
        let mut drive = vec![0.0; xr];
        for i in 0..b.rows_used {
            drive[i] = 1.0;
            let cur = solver.currents(&drive)?;
            drive[i] = 0.0;
            g[i * xc..i * xc + b.cols_used].copy_from_slice(&cur[..b.cols_used]);
        }
        Ok(g)
    });
    let mut out = mapped.clone();
    for (b, g) in out.blocks.iter_mut().zip(per_block) {
        b.g = g?;
    }
    Ok(out)
}
