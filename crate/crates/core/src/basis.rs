//! Divergence-free eigenfields of the vector Laplacian on `S^2`.
//!
//! Every field is `A = ∇H × x / √(n(n+1))` for a real solid harmonic `H` of
//! degree `n`, normalized so that `∫|H|² = 1` against the probability measure
//! on the sphere. The fields are evaluated through their homogeneous
//! extension to `R^3`, which finite-difference oracles differentiate freely.

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, project_raw, scaled, sub, S2Point, TangentVector, Vec3};
use crate::kernels::GammaQuadrature;
use crate::quadrature::SphereQuadrature;
use crate::rng::CounterRng;
use nalgebra::DMatrix;

/// Largest degree the registry will build; the normalization constants are
/// formed from factorial ratios that underflow beyond it.
pub const MAX_DEGREE: usize = 80;

/// `(ℓ, k)` with `1 <= k <= D_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EigenfieldIndex {
    pub ell: usize,
    pub k: usize,
}

impl EigenfieldIndex {
    pub fn new(ell: usize, k: usize) -> Result<Self> {
        if ell == 0 || k == 0 || k > 2 * ell + 1 {
            return Err(Error::Unsupported(format!("eigenfield index ({ell}, {k})")));
        }
        Ok(Self { ell, k })
    }
}

/// Dimension of the divergence-free eigenspace at index `ell` on `S^d`.
/// Only `d = 2` has an explicit basis here.
pub fn dim_eigenspace(d: usize, ell: usize) -> Result<usize> {
    if d != 2 {
        return Err(Error::Unsupported(format!(
            "explicit basis only on S^2, got d = {d}"
        )));
    }
    if ell == 0 {
        return Err(Error::Unsupported("eigenspace index starts at 1".into()));
    }
    Ok(2 * ell + 1)
}

/// Number of fields with index `< ell`: `Σ_{j<ℓ} (2j+1) = ℓ² - 1`.
#[inline]
pub fn packed_offset(ell: usize) -> usize {
    ell * ell - 1
}

/// Total number of modes up to and including `l_max`.
#[inline]
pub fn mode_count(l_max: usize) -> usize {
    packed_offset(l_max + 1)
}

/// Ambient gradients of all normalized real solid harmonics of degree
/// `1..=n_max` at `p`, appended per degree in the order
/// `m=1 cos, m=1 sin, m=0, m=2 cos, m=2 sin, ..., m=n cos, m=n sin`.
///
/// `H_{n,m} = N_{nm} Re/Im[(x+iy)^m] Π_n^m(z, r²)` where
/// `Π_n^m = r^{n-m} P_n^{(m)}(z/r)` is carried as a polynomial in `(z, ρ = r²)`.
fn solid_gradients(p: &Vec3, n_max: usize, norms: &[Vec<f64>], out: &mut Vec<Vec3>) {
    out.clear();
    let [x, y, z] = *p;
    let rho = x * x + y * y + z * z;
    let stride = n_max + 1;
    // pi[n*stride + m], with partials in z and rho
    let mut pi = vec![0.0; stride * stride];
    let mut pz = vec![0.0; stride * stride];
    let mut pr = vec![0.0; stride * stride];
    let mut dfact = 1.0; // (2m-1)!!
    for m in 0..=n_max {
        if m > 0 {
            dfact *= (2 * m - 1) as f64;
        }
        let at = |n: usize| n * stride + m;
        pi[at(m)] = dfact;
        if m < n_max {
            let c = (2 * m + 1) as f64;
            pi[at(m + 1)] = c * z * dfact;
            pz[at(m + 1)] = c * dfact;
        }
        for n in (m + 2)..=n_max {
            let a = (2 * n - 1) as f64;
            let b = (n + m - 1) as f64;
            let inv = 1.0 / (n - m) as f64;
            let (p1, p2) = (pi[at(n - 1)], pi[at(n - 2)]);
            pi[at(n)] = (a * z * p1 - b * rho * p2) * inv;
            pz[at(n)] = (a * (p1 + z * pz[at(n - 1)]) - b * rho * pz[at(n - 2)]) * inv;
            pr[at(n)] = (a * z * pr[at(n - 1)] - b * (p2 + rho * pr[at(n - 2)])) * inv;
        }
    }
    // w^m = (x+iy)^m for m = 0..=n_max
    let mut wre = vec![1.0; stride];
    let mut wim = vec![0.0; stride];
    for m in 1..=n_max {
        wre[m] = wre[m - 1] * x - wim[m - 1] * y;
        wim[m] = wre[m - 1] * y + wim[m - 1] * x;
    }
    for n in 1..=n_max {
        let grad_pi = |m: usize| -> Vec3 {
            let i = n * stride + m;
            let r2 = 2.0 * pr[i];
            [r2 * x, r2 * y, pz[i] + r2 * z]
        };
        let push = |m: usize, cos: bool, scale: f64, out: &mut Vec<Vec3>| {
            let i = n * stride + m;
            let (w, dwx, dwy) = if m == 0 {
                (1.0, 0.0, 0.0)
            } else if cos {
                let mf = m as f64;
                (wre[m], mf * wre[m - 1], -mf * wim[m - 1])
            } else {
                let mf = m as f64;
                (wim[m], mf * wim[m - 1], mf * wre[m - 1])
            };
            let g = grad_pi(m);
            let v = pi[i];
            out.push([
                scale * (dwx * v + w * g[0]),
                scale * (dwy * v + w * g[1]),
                scale * (w * g[2]),
            ]);
        };
        let nm = &norms[n];
        push(1, true, nm[1], out);
        push(1, false, nm[1], out);
        push(0, true, nm[0], out);
        for m in 2..=n {
            push(m, true, nm[m], out);
            push(m, false, nm[m], out);
        }
    }
}

/// Slot of `(m, cos)` within a degree block.
fn slot(m: usize, cos: bool) -> usize {
    match (m, cos) {
        (0, _) => 2,
        (1, true) => 0,
        (1, false) => 1,
        (m, true) => 2 * m - 1,
        (m, false) => 2 * m,
    }
}

/// Fields of every degree `1..=n_max` written straight into `out`, which must
/// hold `mode_count(n_max)` entries. `fnorm[n*(n_max+1)+m] = N_{nm}/√(n(n+1))`.
/// Same recurrence as [`solid_gradients`], iterated over `n` for each fixed
/// `m` with rolling state.
fn fields_direct(p: &Vec3, n_max: usize, fnorm: &[f64], stride: usize, out: &mut [Vec3]) {
    let [x, y, z] = *p;
    let rho = x * x + y * y + z * z;
    let (mut wre, mut wim) = (1.0, 0.0); // (x+iy)^m
    let (mut pre, mut pim) = (0.0, 0.0); // (x+iy)^{m-1}
    let mut dfact = 1.0;
    for m in 0..=n_max {
        if m > 0 {
            dfact *= (2 * m - 1) as f64;
            pre = wre;
            pim = wim;
            let r = wre * x - wim * y;
            wim = wre * y + wim * x;
            wre = r;
        }
        let mf = m as f64;
        // (value, ∂z, ∂ρ) at n-1 and n-2
        let (mut v1, mut z1, mut r1) = (0.0, 0.0, 0.0);
        let (mut v2, mut z2, mut r2) = (0.0, 0.0, 0.0);
        for n in m..=n_max {
            let (v, vz, vr) = if n == m {
                (dfact, 0.0, 0.0)
            } else if n == m + 1 {
                let c = (2 * m + 1) as f64;
                (c * z * dfact, c * dfact, 0.0)
            } else {
                let a = (2 * n - 1) as f64;
                let b = (n + m - 1) as f64;
                let inv = 1.0 / (n - m) as f64;
                (
                    (a * z * v1 - b * rho * v2) * inv,
                    (a * (v1 + z * z1) - b * rho * z2) * inv,
                    (a * z * r1 - b * (v2 + rho * r2)) * inv,
                )
            };
            v2 = v1;
            z2 = z1;
            r2 = r1;
            v1 = v;
            z1 = vz;
            r1 = vr;
            if n == 0 {
                continue;
            }
            let s = fnorm[n * stride + m];
            let gp = [2.0 * vr * x, 2.0 * vr * y, vz + 2.0 * vr * z];
            let base = n * n - 1;
            let mut emit = |w: f64, dwx: f64, dwy: f64, k: usize| {
                let g = [
                    s * (dwx * v + w * gp[0]),
                    s * (dwy * v + w * gp[1]),
                    s * w * gp[2],
                ];
                out[base + k] = cross(&g, p);
            };
            if m == 0 {
                emit(1.0, 0.0, 0.0, slot(0, true));
            } else {
                emit(wre, mf * pre, -mf * pim, slot(m, true));
                emit(wim, mf * pim, mf * pre, slot(m, false));
            }
        }
    }
}

/// `N_{nm} = √((2n+1)(2-δ_{m0})(n-m)!/(n+m)!)`.
fn harmonic_norms(n_max: usize) -> Vec<Vec<f64>> {
    (0..=n_max)
        .map(|n| {
            (0..=n)
                .map(|m| {
                    let mut ratio = 1.0;
                    for j in (n - m + 1)..=(n + m) {
                        ratio /= j as f64;
                    }
                    let two = if m == 0 { 1.0 } else { 2.0 };
                    ((2 * n + 1) as f64 * two * ratio).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Brute-force sums of the degree-wise sum identities at one degree:
/// `s_a = (2/D) Σ <A(x),A(y)>`, `s_b = (2/D) Σ <A(x),y>²`,
/// `s_c = (2/D) Σ (<A(x),y> + <A(y),x>)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSums {
    pub s_a: f64,
    pub s_b: f64,
    pub s_c: f64,
}

/// Explicit orthonormal basis `{A_{ℓ,k}}` of divergence-free fields on `S^2`
/// up to `l_max`, with the eigen-index to harmonic-degree map calibrated at
/// construction.
#[derive(Debug, Clone)]
pub struct BasisRegistry {
    l_max: usize,
    /// `degrees[ℓ]` is the scalar harmonic degree behind eigen-index `ℓ`.
    degrees: Vec<usize>,
    max_degree: usize,
    norms: Vec<Vec<f64>>,
    /// `N_{nm}/√(n(n+1))` flattened with stride `max_degree + 1`.
    fnorm: Vec<f64>,
    identity_degrees: bool,
}

fn field_norms(norms: &[Vec<f64>]) -> Vec<f64> {
    let stride = norms.len();
    let mut f = vec![0.0; stride * stride];
    for (n, row) in norms.iter().enumerate().skip(1) {
        for (m, v) in row.iter().enumerate() {
            f[n * stride + m] = v / ((n * (n + 1)) as f64).sqrt();
        }
    }
    f
}

impl BasisRegistry {
    /// Builds the basis and calibrates the degree map: for each `ℓ`, the first
    /// degree `n <= l_max + 2` whose brute-force `s_a` matches
    /// `2t γ_ℓ(t) - (1-t²) γ'_ℓ(t)` within 1e-6 on a fixed set of pairs.
    pub fn new(l_max: usize) -> Result<Self> {
        if l_max == 0 || l_max + 2 > MAX_DEGREE {
            return Err(Error::Unsupported(format!(
                "basis truncation l_max = {l_max} must be in 1..={}",
                MAX_DEGREE - 2
            )));
        }
        let cand_max = l_max + 2;
        let norms = harmonic_norms(cand_max);
        let probe = Self {
            l_max: cand_max,
            degrees: (0..=cand_max).collect(),
            max_degree: cand_max,
            fnorm: field_norms(&norms),
            norms,
            identity_degrees: false,
        };
        let gq = GammaQuadrature::new(2, l_max);
        let mut rng = CounterRng::new(0x5eed_ca1b, 0);
        let pairs: Vec<(S2Point, S2Point)> = (0..4)
            .map(|_| {
                let mut pt = || S2Point::new([rng.normal(), rng.normal(), rng.normal()]).unwrap();
                (pt(), pt())
            })
            .collect();
        let mut degrees = vec![0];
        for ell in 1..=l_max {
            let found = (1..=cand_max).find(|&n| {
                pairs.iter().all(|(x, y)| {
                    let t = dot(x.coords(), y.coords());
                    let g = gq.gamma_all(ell, t)[ell - 1];
                    let gp = gq.gamma_prime_all(ell, t, 1e-8)[ell - 1];
                    let closed = 2.0 * t * g - (1.0 - t * t) * gp;
                    let s = probe.pair_sums_degree(n, x.coords(), y.coords());
                    (s.s_a - closed).abs() <= 1e-6
                })
            });
            match found {
                Some(n) => degrees.push(n),
                None => {
                    return Err(Error::Calibration(format!(
                        "no harmonic degree <= {cand_max} reproduces eigen-index {ell}"
                    )))
                }
            }
        }
        let max_degree = *degrees.iter().max().unwrap();
        let norms = harmonic_norms(max_degree);
        Ok(Self {
            l_max,
            identity_degrees: degrees.iter().enumerate().all(|(l, &n)| l == n),
            degrees,
            max_degree,
            fnorm: field_norms(&norms),
            norms,
        })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Calibrated harmonic degree for eigen-index `ell`.
    pub fn degree(&self, ell: usize) -> usize {
        self.degrees[ell]
    }

    /// The calibrated map `ℓ -> n` for `ℓ = 1..=l_max`.
    pub fn degree_map(&self) -> &[usize] {
        &self.degrees[1..]
    }

    /// Normalization constant of `A_{ℓ,k}`: `N_{nm}/√(n(n+1))`.
    pub fn normalization(&self, idx: EigenfieldIndex) -> f64 {
        let n = self.degrees[idx.ell];
        let m = match idx.k {
            1 | 2 => 1,
            3 => 0,
            k => (k - 2) / 2 + 1,
        };
        self.norms[n][m] / ((n * (n + 1)) as f64).sqrt()
    }

    pub fn dim_eigenspace(&self, ell: usize) -> usize {
        2 * self.degrees[ell] + 1
    }

    pub fn mode_count(&self) -> usize {
        (1..=self.l_max).map(|l| self.dim_eigenspace(l)).sum()
    }

    /// All fields of degree `n` at an arbitrary `p ∈ R^3` (homogeneous extension).
    fn degree_fields_raw(&self, n: usize, p: &Vec3) -> Vec<Vec3> {
        let mut grads = Vec::new();
        solid_gradients(p, n, &self.norms, &mut grads);
        let start = n * n - 1;
        let s = 1.0 / ((n * (n + 1)) as f64).sqrt();
        grads[start..start + 2 * n + 1]
            .iter()
            .map(|g| scaled(s, &cross(g, p)))
            .collect()
    }

    /// `A_{ℓ,1..D_ℓ}(p)` for an arbitrary `p ∈ R^3`.
    pub fn fields_raw(&self, ell: usize, p: &Vec3) -> Vec<Vec3> {
        self.degree_fields_raw(self.degrees[ell], p)
    }

    /// Every field with index `ℓ <= n_max` at `p`, packed as
    /// `[A_{1,1..3}, A_{2,1..5}, ...]` into `out`.
    pub fn all_fields_into(&self, p: &Vec3, n_max: usize, out: &mut Vec<Vec3>) {
        let n_max = n_max.min(self.l_max);
        if self.identity_degrees {
            out.clear();
            out.resize(mode_count(n_max), [0.0; 3]);
            fields_direct(p, n_max, &self.fnorm, self.max_degree + 1, out);
            return;
        }
        let deg_max = self.degrees[1..=n_max].iter().copied().max().unwrap_or(0);
        let mut grads = Vec::with_capacity(mode_count(deg_max));
        solid_gradients(p, deg_max, &self.norms, &mut grads);
        out.clear();
        for ell in 1..=n_max {
            let n = self.degrees[ell];
            let start = n * n - 1;
            let s = 1.0 / ((n * (n + 1)) as f64).sqrt();
            out.extend(
                grads[start..start + 2 * n + 1]
                    .iter()
                    .map(|g| scaled(s, &cross(g, p))),
            );
        }
    }

    pub fn field_raw(&self, idx: EigenfieldIndex, p: &Vec3) -> Vec3 {
        self.fields_raw(idx.ell, p)[idx.k - 1]
    }

    pub fn eval_eigenfield(&self, idx: EigenfieldIndex, x: &S2Point) -> Result<TangentVector<3>> {
        if idx.ell > self.l_max || idx.k > self.dim_eigenspace(idx.ell) {
            return Err(Error::Unsupported(format!(
                "index ({}, {}) beyond truncation {}",
                idx.ell, idx.k, self.l_max
            )));
        }
        Ok(TangentVector::new_unchecked(
            *x,
            self.field_raw(idx, x.coords()),
        ))
    }

    fn pair_sums_degree(&self, n: usize, x: &Vec3, y: &Vec3) -> PairSums {
        let ax = self.degree_fields_raw(n, x);
        let ay = self.degree_fields_raw(n, y);
        let f = 2.0 / (2 * n + 1) as f64;
        let mut s = PairSums {
            s_a: 0.0,
            s_b: 0.0,
            s_c: 0.0,
        };
        for (a, b) in ax.iter().zip(&ay) {
            s.s_a += dot(a, b);
            let ay_ = dot(a, y);
            s.s_b += ay_ * ay_;
            let c = ay_ + dot(b, x);
            s.s_c += c * c;
        }
        s.s_a *= f;
        s.s_b *= f;
        s.s_c *= f;
        s
    }

    /// Brute-force `(s_a, s_b, s_c)` at index `ell`.
    pub fn spectral_pair_sums(&self, ell: usize, x: &S2Point, y: &S2Point) -> PairSums {
        self.pair_sums_degree(self.degrees[ell], x.coords(), y.coords())
    }

    /// Max Gram error `|∫<A_i, A_j> - δ_ij|` over all fields with `ℓ <= l`,
    /// under a product rule of order `>= 4 l_max`.
    pub fn verify_orthonormality(&self, l: usize) -> f64 {
        let l = l.min(self.l_max);
        let g = self.gram_matrix(1, l);
        let mut err: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g[(i, j)] - target).abs());
            }
        }
        err
    }

    fn quadrature(&self) -> SphereQuadrature {
        let o = 4 * self.max_degree.max(1);
        SphereQuadrature::product(o / 2 + 2, o + 4)
    }

    fn gram_matrix(&self, lo: usize, hi: usize) -> DMatrix<f64> {
        let q = self.quadrature();
        let count = packed_offset(hi + 1) - packed_offset(lo);
        let mut g = DMatrix::zeros(count, count);
        let mut buf = Vec::new();
        for (p, w) in q.points.iter().zip(&q.weights) {
            self.all_fields_into(p.coords(), hi, &mut buf);
            let f = &buf[packed_offset(lo)..];
            for i in 0..count {
                for j in i..count {
                    let v = w * dot(&f[i], &f[j]);
                    g[(i, j)] += v;
                }
            }
        }
        for i in 0..count {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    /// Numerical rank of the Gram matrix of the fields at index `ell`.
    pub fn gram_rank(&self, ell: usize) -> usize {
        let g = self.gram_matrix(ell, ell);
        let sv = g.singular_values();
        let top = sv.max();
        sv.iter().filter(|s| **s > 1e-8 * top).count()
    }

    /// Single summand `∇_A A(x)` by central differences of the extension along
    /// `A(x)`, projected to `T_x`.
    pub fn covariant_self_derivative(&self, idx: EigenfieldIndex, x: &S2Point, h: f64) -> Vec3 {
        let xc = x.coords();
        let a = self.field_raw(idx, xc);
        let fwd = self.field_raw(idx, &std::array::from_fn(|i| xc[i] + h * a[i]));
        let bwd = self.field_raw(idx, &std::array::from_fn(|i| xc[i] - h * a[i]));
        project_raw(xc, &scaled(0.5 / h, &sub(&fwd, &bwd)))
    }

    /// Residual of `Σ_k ∇_{A_{ℓ,k}} A_{ℓ,k}(x) = 0` with finite-difference step `h`.
    pub fn sum_gradient_identity(&self, ell: usize, x: &S2Point, h: f64) -> Vec3 {
        let mut acc = [0.0; 3];
        for k in 1..=self.dim_eigenspace(ell) {
            let t = self.covariant_self_derivative(EigenfieldIndex { ell, k }, x, h);
            for i in 0..3 {
                acc[i] += t[i];
            }
        }
        acc
    }

    /// Surface divergence by central differences along an orthonormal
    /// tangent basis.
    pub fn divergence_fd(&self, idx: EigenfieldIndex, x: &S2Point, h: f64) -> f64 {
        let xc = x.coords();
        tangent_basis(xc)
            .iter()
            .map(|t| {
                let fwd = self.field_raw(idx, &std::array::from_fn(|i| xc[i] + h * t[i]));
                let bwd = self.field_raw(idx, &std::array::from_fn(|i| xc[i] - h * t[i]));
                dot(t, &sub(&fwd, &bwd)) / (2.0 * h)
            })
            .sum()
    }

    /// Vorticity `x̂ · curl A` of the extension at `p`.
    fn vorticity_fd(&self, idx: EigenfieldIndex, p: &Vec3, h: f64) -> f64 {
        let mut jac = [[0.0; 3]; 3]; // jac[i][j] = ∂_j A_i
        for j in 0..3 {
            let mut fp = *p;
            let mut bp = *p;
            fp[j] += h;
            bp[j] -= h;
            let d = sub(&self.field_raw(idx, &fp), &self.field_raw(idx, &bp));
            for i in 0..3 {
                jac[i][j] = d[i] / (2.0 * h);
            }
        }
        let curl = [
            jac[2][1] - jac[1][2],
            jac[0][2] - jac[2][0],
            jac[1][0] - jac[0][1],
        ];
        dot(&curl, p) / norm(p)
    }

    /// Hodge Laplacian of a divergence-free field by nested differences:
    /// `Δ A = -(∇_S ω) × x` with `ω` the vorticity. Inner step `h1`, outer `h2`.
    pub fn hodge_laplacian_fd(&self, idx: EigenfieldIndex, x: &S2Point, h1: f64, h2: f64) -> Vec3 {
        let xc = x.coords();
        let mut grad = [0.0; 3];
        for t in tangent_basis(xc) {
            let fp = std::array::from_fn(|i| xc[i] + h2 * t[i]);
            let bp = std::array::from_fn(|i| xc[i] - h2 * t[i]);
            let d =
                (self.vorticity_fd(idx, &fp, h1) - self.vorticity_fd(idx, &bp, h1)) / (2.0 * h2);
            for i in 0..3 {
                grad[i] += d * t[i];
            }
        }
        scaled(-1.0, &cross(&grad, xc))
    }
}

/// An orthonormal basis of `T_x S^2`.
pub fn tangent_basis(x: &Vec3) -> [Vec3; 2] {
    let pick = if x[0].abs() < 0.6 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let t1 = project_raw(x, &pick);
    let t1 = scaled(1.0 / norm(&t1), &t1);
    let t2 = cross(x, &t1);
    [t1, t2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_evaluation_matches_gradient_route() {
        let r = BasisRegistry::new(12).unwrap();
        let mut rng = CounterRng::new(77, 0);
        let mut fast = Vec::new();
        for _ in 0..20 {
            let p = *S2Point::new([rng.normal(), rng.normal(), rng.normal()])
                .unwrap()
                .coords();
            r.all_fields_into(&p, 12, &mut fast);
            let mut slow = Vec::new();
            for ell in 1..=12 {
                slow.extend(r.fields_raw(ell, &p));
            }
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                for i in 0..3 {
                    assert!((a[i] - b[i]).abs() <= 1e-12, "{} vs {}", a[i], b[i]);
                }
            }
        }
    }
    use crate::kernels::{gamma_ell, gamma_ell_prime};
    use approx::assert_abs_diff_eq;

    fn random_point(rng: &mut CounterRng) -> S2Point {
        S2Point::new([rng.normal(), rng.normal(), rng.normal()]).unwrap()
    }

    #[test]
    fn dimension_and_index_rules() {
        assert_eq!(dim_eigenspace(2, 1).unwrap(), 3);
        assert_eq!(dim_eigenspace(2, 2).unwrap(), 5);
        assert!(matches!(dim_eigenspace(3, 2), Err(Error::Unsupported(_))));
        for ell in 1..40 {
            assert!(dim_eigenspace(2, ell).unwrap() as f64 / ell as f64 <= 3.0);
        }
        assert!(EigenfieldIndex::new(1, 4).is_err());
        assert!(EigenfieldIndex::new(2, 5).is_ok());
        assert_eq!(packed_offset(1), 0);
        assert_eq!(packed_offset(3), 8);
        assert_eq!(mode_count(8), 80);
    }

    #[test]
    fn degree_map_is_identity() {
        let reg = BasisRegistry::new(6).unwrap();
        assert_eq!(reg.degree_map(), &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn gram_rank_matches_dimension() {
        let reg = BasisRegistry::new(3).unwrap();
        assert_eq!(reg.gram_rank(1), 3);
        assert_eq!(reg.gram_rank(2), 5);
        assert_eq!(reg.gram_rank(3), 7);
    }

    #[test]
    fn degree_one_fields_are_rotations() {
        let reg = BasisRegistry::new(2).unwrap();
        let mut rng = CounterRng::new(3, 0);
        let s = 1.5f64.sqrt();
        for _ in 0..20 {
            let x = random_point(&mut rng);
            let mut total = 0.0;
            for i in 0..3 {
                let a = reg
                    .eval_eigenfield(EigenfieldIndex::new(1, i + 1).unwrap(), &x)
                    .unwrap();
                let axis = S2Point::axis(i);
                let expect = scaled(s, &cross(axis.coords(), x.coords()));
                for j in 0..3 {
                    assert_abs_diff_eq!(a.vec()[j], expect[j], epsilon = 1e-14);
                }
                total += dot(a.vec(), a.vec());
            }
            assert_abs_diff_eq!(total, 3.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn orthonormality() {
        let reg = BasisRegistry::new(5).unwrap();
        assert!(reg.verify_orthonormality(1) <= 1e-10);
        assert!(reg.verify_orthonormality(5) <= 1e-8);
        let q = reg.quadrature();
        let idx = EigenfieldIndex::new(1, 1).unwrap();
        let self_ip = q.integrate(|p| {
            let a = reg.field_raw(idx, p.coords());
            dot(&a, &a)
        });
        assert_abs_diff_eq!(self_ip, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn fields_are_tangent_and_divergence_free() {
        let reg = BasisRegistry::new(5).unwrap();
        let mut rng = CounterRng::new(5, 0);
        for _ in 0..100 {
            let x = random_point(&mut rng);
            for ell in 1..=5 {
                for (k, a) in reg.fields_raw(ell, x.coords()).iter().enumerate() {
                    assert!(dot(a, x.coords()).abs() <= 1e-12);
                    let idx = EigenfieldIndex { ell, k: k + 1 };
                    assert!(reg.divergence_fd(idx, &x, 1e-4).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn hodge_laplacian_eigenvalue() {
        let reg = BasisRegistry::new(4).unwrap();
        let mut rng = CounterRng::new(6, 0);
        for _ in 0..10 {
            let x = random_point(&mut rng);
            for ell in 1..=4 {
                let c = (ell * (ell + 1)) as f64;
                for k in 1..=2 * ell + 1 {
                    let idx = EigenfieldIndex { ell, k };
                    let a = reg.field_raw(idx, x.coords());
                    let lap = reg.hodge_laplacian_fd(idx, &x, 1e-4, 1e-3);
                    for i in 0..3 {
                        assert!((lap[i] + c * a[i]).abs() <= 1e-4 * c, "ell={ell} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn sum_of_self_derivatives_vanishes() {
        let reg = BasisRegistry::new(3).unwrap();
        let mut rng = CounterRng::new(7, 0);
        let x = random_point(&mut rng);
        assert!(norm(&reg.sum_gradient_identity(1, &x, 1e-4)) <= 1e-6);
        for _ in 0..20 {
            let x = random_point(&mut rng);
            assert!(norm(&reg.sum_gradient_identity(3, &x, 1e-4)) <= 1e-5);
        }
        let term = reg.covariant_self_derivative(EigenfieldIndex::new(3, 1).unwrap(), &x, 1e-4);
        assert!(norm(&term) > 1e-3);
    }

    #[test]
    fn pair_sums_match_closed_forms() {
        let reg = BasisRegistry::new(5).unwrap();
        let mut rng = CounterRng::new(8, 0);
        for _ in 0..20 {
            let x = random_point(&mut rng);
            let y = random_point(&mut rng);
            let t = dot(x.coords(), y.coords());
            for ell in 1..=5 {
                let s = reg.spectral_pair_sums(ell, &x, &y);
                let g = gamma_ell(2, ell, t);
                let gp = gamma_ell_prime(2, ell, t);
                assert_abs_diff_eq!(s.s_a, 2.0 * t * g - (1.0 - t * t) * gp, epsilon = 1e-8);
                assert_abs_diff_eq!(s.s_b, 1.0 - t * t, epsilon = 1e-8);
                assert_abs_diff_eq!(s.s_c, 2.0 * (1.0 - t * t) * (1.0 - g), epsilon = 1e-7);
            }
            let same = reg.spectral_pair_sums(3, &x, &x);
            assert_abs_diff_eq!(same.s_b, 0.0, epsilon = 1e-24);
        }
    }

    #[test]
    fn pair_sums_are_isotropic() {
        let reg = BasisRegistry::new(4).unwrap();
        let mut rng = CounterRng::new(9, 0);
        let theta = 0.8;
        let mut first: Option<PairSums> = None;
        for _ in 0..10 {
            let x = random_point(&mut rng);
            let dir = random_point(&mut rng);
            let y = crate::geometry::point_at_distance(&x, dir.coords(), theta);
            let s = reg.spectral_pair_sums(4, &x, &y);
            if let Some(f) = first {
                assert_abs_diff_eq!(s.s_a, f.s_a, epsilon = 1e-8);
                assert_abs_diff_eq!(s.s_b, f.s_b, epsilon = 1e-8);
                assert_abs_diff_eq!(s.s_c, f.s_c, epsilon = 1e-8);
            } else {
                first = Some(s);
            }
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let reg = BasisRegistry::new(2).unwrap();
        let x = S2Point::axis(2);
        assert!(reg
            .eval_eigenfield(EigenfieldIndex { ell: 3, k: 1 }, &x)
            .is_err());
        assert!(BasisRegistry::new(0).is_err());
    }
}
