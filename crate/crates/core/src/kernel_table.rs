//! Tabulated kernels on a θ grid, with interpolation and CSV round-trip.

use crate::error::{Error, Result};
use crate::kernels::{CoefficientLaw, GammaQuadrature, Kernel, DEFAULT_EPS_END};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

/// Metadata written as the JSON first line of a table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableHeader {
    pub d: usize,
    pub l_max: usize,
    pub law: CoefficientLaw,
    pub nu: f64,
    pub quadrature_order: usize,
    pub tail_bound: f64,
    pub n_uniform: usize,
    pub n_log: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub header: TableHeader,
    pub theta: Vec<f64>,
    pub g: Vec<f64>,
    pub g_prime: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// `gamma[i][ℓ-1] = γ_ℓ(cos θ_i)` by quadrature.
    pub gamma: Vec<Vec<f64>>,
    pub gamma_prime: Vec<Vec<f64>>,
}

/// Uniform grid of `n_uniform` points on `[0, π]` merged with `n_log`
/// log-spaced points in `[1e-6, π/n_uniform)`.
pub fn theta_grid(n_uniform: usize, n_log: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..n_uniform)
        .map(|i| PI * i as f64 / (n_uniform - 1) as f64)
        .collect();
    if n_log > 0 {
        let lo = 1e-6f64.ln();
        let hi = (PI / n_uniform as f64).ln();
        grid.extend((0..n_log).map(|i| (lo + (hi - lo) * i as f64 / n_log as f64).exp()));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

struct Row {
    g: f64,
    gp: f64,
    g1: f64,
    g2: f64,
    phi: f64,
    psi: f64,
    gamma: Vec<f64>,
    gamma_prime: Vec<f64>,
}

impl KernelTable {
    pub fn build(kernel: &Kernel, n_uniform: usize, n_log: usize) -> Result<Self> {
        if n_uniform < 8 {
            return Err(Error::InvalidConfig(
                "kernel table needs >= 8 uniform points".into(),
            ));
        }
        let spec = kernel.spectrum();
        let l = spec.l_max();
        let gq = GammaQuadrature::new(spec.d(), l);
        let theta = theta_grid(n_uniform, n_log);
        let rows: Vec<Row> = theta
            .par_iter()
            .map(|&th| {
                let p = kernel.g_pair(th);
                let (phi, psi) = kernel.phi_psi(th);
                let t = th.cos();
                Row {
                    g: p.g,
                    gp: p.g_prime,
                    g1: kernel.g1_from(th, p),
                    g2: 2.0 * th.sin().powi(2) * (kernel.g0() - p.g),
                    phi,
                    psi,
                    gamma: gq.gamma_all(l, t),
                    gamma_prime: gq.gamma_prime_all(l, t, DEFAULT_EPS_END),
                }
            })
            .collect();
        let header = TableHeader {
            d: spec.d(),
            l_max: l,
            law: spec.config().law.clone(),
            nu: spec.nu(),
            quadrature_order: gq.order(),
            tail_bound: spec.tail_bound(),
            n_uniform,
            n_log,
        };
        let mut t = KernelTable {
            header,
            theta,
            g: Vec::with_capacity(rows.len()),
            g_prime: Vec::with_capacity(rows.len()),
            g1: Vec::with_capacity(rows.len()),
            g2: Vec::with_capacity(rows.len()),
            phi: Vec::with_capacity(rows.len()),
            psi: Vec::with_capacity(rows.len()),
            gamma: Vec::with_capacity(rows.len()),
            gamma_prime: Vec::with_capacity(rows.len()),
        };
        for r in rows {
            t.g.push(r.g);
            t.g_prime.push(r.gp);
            t.g1.push(r.g1);
            t.g2.push(r.g2);
            t.phi.push(r.phi);
            t.psi.push(r.psi);
            t.gamma.push(r.gamma);
            t.gamma_prime.push(r.gamma_prime);
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Violations of the table invariants: `G(0) = 2c`, `|γ_ℓ| <= 1`,
    /// `G(0) - G(θ) >= 0`. Returns human-readable findings; empty when clean.
    pub fn check_invariants(&self, c: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.theta[0] == 0.0 && (self.g[0] - 2.0 * c).abs() > 1e-12 * (1.0 + 2.0 * c) {
            out.push(format!(
                "G(0) = {} differs from 2c = {}",
                self.g[0],
                2.0 * c
            ));
        }
        for (i, row) in self.gamma.iter().enumerate() {
            if let Some((l, v)) = row.iter().enumerate().find(|(_, v)| v.abs() > 1.0 + 1e-12) {
                out.push(format!(
                    "|gamma_{}| = {} at theta = {}",
                    l + 1,
                    v.abs(),
                    self.theta[i]
                ));
            }
        }
        let g0 = self.g[0];
        for (th, g) in self.theta.iter().zip(&self.g) {
            if g0 - g < -1e-12 * g0.abs() {
                out.push(format!("G(0) - G({th}) = {} < 0", g0 - g));
            }
        }
        out
    }

    /// Six-point Lagrange interpolation of one column at `theta`.
    pub fn interpolate(&self, column: &[f64], theta: f64) -> f64 {
        let n = self.theta.len();
        let idx = self.theta.partition_point(|&t| t < theta);
        let lo = idx.saturating_sub(3).min(n.saturating_sub(6));
        let hi = (lo + 6).min(n);
        let xs = &self.theta[lo..hi];
        let ys = &column[lo..hi];
        let mut acc = 0.0;
        for i in 0..xs.len() {
            let mut w = 1.0;
            for j in 0..xs.len() {
                if i != j {
                    w *= (theta - xs[j]) / (xs[i] - xs[j]);
                }
            }
            acc += w * ys[i];
        }
        acc
    }

    pub fn g_at(&self, theta: f64) -> f64 {
        self.interpolate(&self.g, theta)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", serde_json::to_string(&self.header)?)?;
        let l = self.header.l_max;
        let mut line = String::from("theta,G,G_prime,G1,G2,phi,psi");
        for ell in 1..=l {
            write!(line, ",gamma_{ell}").unwrap();
        }
        for ell in 1..=l {
            write!(line, ",gamma_prime_{ell}").unwrap();
        }
        writeln!(w, "{line}")?;
        for i in 0..self.len() {
            line.clear();
            let cols = [
                self.theta[i],
                self.g[i],
                self.g_prime[i],
                self.g1[i],
                self.g2[i],
                self.phi[i],
                self.psi[i],
            ];
            for (j, v) in cols
                .iter()
                .chain(&self.gamma[i])
                .chain(&self.gamma_prime[i])
                .enumerate()
            {
                if j > 0 {
                    line.push(',');
                }
                write!(line, "{v:.16e}").unwrap();
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty kernel table".into()))??;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing JSON header line".into()))?;
        let header: TableHeader = serde_json::from_str(json)?;
        let _columns = lines
            .next()
            .ok_or_else(|| Error::Parse("missing column line".into()))??;
        let l = header.l_max;
        let width = 7 + 2 * l;
        let mut t = KernelTable {
            header,
            theta: vec![],
            g: vec![],
            g_prime: vec![],
            g1: vec![],
            g2: vec![],
            phi: vec![],
            psi: vec![],
            gamma: vec![],
            gamma_prime: vec![],
        };
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {row}: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != width {
                return Err(Error::Parse(format!(
                    "row {row}: expected {width} columns, found {}",
                    vals.len()
                )));
            }
            t.theta.push(vals[0]);
            t.g.push(vals[1]);
            t.g_prime.push(vals[2]);
            t.g1.push(vals[3]);
            t.g2.push(vals[4]);
            t.phi.push(vals[5]);
            t.psi.push(vals[6]);
            t.gamma.push(vals[7..7 + l].to_vec());
            t.gamma_prime.push(vals[7 + l..].to_vec());
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Spectrum;

    fn table() -> (Kernel, KernelTable) {
        let k = Kernel::new(Spectrum::power(2, 8, 3.0, 1.0, 0.1).unwrap());
        let t = KernelTable::build(&k, 2048, 64).unwrap();
        (k, t)
    }

    #[test]
    fn invariants_hold() {
        let (k, t) = table();
        assert_eq!(t.len(), 2048 + 64);
        assert!(t.check_invariants(k.c()).is_empty());
        assert!((t.g[0] - 2.0 * k.c()).abs() <= 1e-12);
    }

    #[test]
    fn interpolation_matches_direct_evaluation() {
        let (k, t) = table();
        for i in 0..200 {
            let th = 1e-4 + (PI - 2e-4) * (i as f64 + 0.37) / 200.0;
            let p = k.g_pair(th);
            let (phi, psi) = k.phi_psi(th);
            assert!((t.interpolate(&t.g, th) - p.g).abs() <= 1e-9);
            assert!((t.interpolate(&t.g_prime, th) - p.g_prime).abs() <= 1e-9);
            assert!((t.interpolate(&t.g1, th) - k.g1(th)).abs() <= 1e-9);
            assert!((t.interpolate(&t.g2, th) - k.g2(th)).abs() <= 1e-9);
            assert!((t.interpolate(&t.phi, th) - phi).abs() <= 1e-9);
            assert!((t.interpolate(&t.psi, th) - psi).abs() <= 1e-9);
        }
    }

    #[test]
    fn table_gamma_columns_match_recurrence() {
        let (k, t) = table();
        for i in (0..t.len()).step_by(97) {
            let sum: f64 = (1..=8).map(|l| k.spectrum().b(l) * t.gamma[i][l - 1]).sum();
            assert!((sum - t.g[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let k = Kernel::new(Spectrum::power(2, 5, 3.0, 1.0, 0.1).unwrap());
        let t = KernelTable::build(&k, 64, 8).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = KernelTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(KernelTable::read_csv(&b""[..]).is_err());
        assert!(KernelTable::read_csv(&b"theta\n1\n"[..]).is_err());
    }
}
