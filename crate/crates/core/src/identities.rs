//! Brute-force spectral sums against their closed forms, on random pairs and frames.

use crate::basis::{tangent_basis, BasisRegistry};
use crate::error::{Error, Result};
use crate::geometry::{
    dot, geodesic_frame, norm, point_at_distance, sub, S2Point, Vec3, DEFAULT_EPS_CUT,
};
use crate::kernels::{gamma_ell, gamma_ell_prime, Kernel};
use crate::rng::CounterRng;
use crate::rotation::{frame_sums, RotationOracle};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

fn random_point(rng: &mut CounterRng) -> S2Point {
    loop {
        if let Ok(p) = S2Point::new([rng.normal(), rng.normal(), rng.normal()]) {
            return p;
        }
    }
}

/// Random pair whose angle stays away from `0` and `π`, where closed forms
/// divide by `sin θ`.
fn random_pair(rng: &mut CounterRng) -> (S2Point, S2Point) {
    loop {
        let (x, y) = (random_point(rng), random_point(rng));
        let t = dot(x.coords(), y.coords());
        if t.abs() < 1.0 - 1e-6 {
            return (x, y);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisIdentityReport {
    pub l_max: usize,
    pub pairs: usize,
    /// Largest `|Σ_k ∇_{A_k} A_k|` by finite differences.
    pub max_self_derivative: f64,
    /// Largest error of `(2/D) Σ <A(x),A(y)>` against its closed form.
    pub max_inner_err: f64,
    /// Largest error of `(2/D) Σ <A(x),y>² = sin²θ`.
    pub max_normal_err: f64,
    /// Largest error of `(2/D) Σ (<A(x),y> + <A(y),x>)²`.
    pub max_symmetric_err: f64,
}

pub fn basis_identities(
    registry: &BasisRegistry,
    l_max: usize,
    pairs: usize,
    seed: u64,
) -> Result<BasisIdentityReport> {
    if l_max > registry.l_max() {
        return Err(Error::InvalidConfig(format!(
            "identity degree {l_max} above basis truncation {}",
            registry.l_max()
        )));
    }
    let mut rng = CounterRng::new(seed, 21);
    let mut r = BasisIdentityReport {
        l_max,
        pairs,
        max_self_derivative: 0.0,
        max_inner_err: 0.0,
        max_normal_err: 0.0,
        max_symmetric_err: 0.0,
    };
    for _ in 0..pairs {
        let (x, y) = random_pair(&mut rng);
        let t = dot(x.coords(), y.coords());
        let s2 = 1.0 - t * t;
        for ell in 1..=l_max {
            r.max_self_derivative = r
                .max_self_derivative
                .max(norm(&registry.sum_gradient_identity(ell, &x, 1e-4)));
            let s = registry.spectral_pair_sums(ell, &x, &y);
            let g = gamma_ell(2, ell, t);
            let gp = gamma_ell_prime(2, ell, t);
            r.max_inner_err = r.max_inner_err.max((s.s_a - (2.0 * t * g - s2 * gp)).abs());
            r.max_normal_err = r.max_normal_err.max((s.s_b - s2).abs());
            r.max_symmetric_err = r
                .max_symmetric_err
                .max((s.s_c - 2.0 * s2 * (1.0 - g)).abs());
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelIdentityReport {
    pub pairs: usize,
    pub max_g1_err: f64,
    pub max_g2_err: f64,
    pub g1_at_zero: f64,
    pub g2_at_zero: f64,
}

fn check_matched(kernel: &Kernel, registry: &BasisRegistry) -> Result<usize> {
    let l = kernel.spectrum().l_max();
    if kernel.d() != 2 || l > registry.l_max() {
        return Err(Error::InvalidConfig(format!(
            "kernel truncation {l} needs a basis of at least that degree on S^2"
        )));
    }
    Ok(l)
}

/// `Σ_ℓ (2b_ℓ/D_ℓ) Σ_k |A(x)-A(y)|²` and `... <x-y, A(x)-A(y)>²`.
pub fn spectral_g1_g2(kernel: &Kernel, registry: &BasisRegistry, x: &Vec3, y: &Vec3) -> (f64, f64) {
    let sp = kernel.spectrum();
    let d = sub(x, y);
    let (mut g1, mut g2) = (0.0, 0.0);
    for ell in 1..=sp.l_max() {
        let w = 2.0 * sp.b(ell) / registry.dim_eigenspace(ell) as f64;
        for (a, b) in registry
            .fields_raw(ell, x)
            .iter()
            .zip(registry.fields_raw(ell, y).iter())
        {
            let da = sub(a, b);
            g1 += w * dot(&da, &da);
            g2 += w * dot(&d, &da).powi(2);
        }
    }
    (g1, g2)
}

pub fn kernel_identities(
    kernel: &Kernel,
    registry: &BasisRegistry,
    pairs: usize,
    seed: u64,
) -> Result<KernelIdentityReport> {
    check_matched(kernel, registry)?;
    let mut rng = CounterRng::new(seed, 22);
    let (mut e1, mut e2): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let (x, y) = random_pair(&mut rng);
        let th = crate::geometry::geodesic_distance(&x, &y);
        let (s1, s2) = spectral_g1_g2(kernel, registry, x.coords(), y.coords());
        e1 = e1.max((s1 - kernel.g1(th)).abs());
        e2 = e2.max((s2 - kernel.g2(th)).abs());
    }
    Ok(KernelIdentityReport {
        pairs,
        max_g1_err: e1,
        max_g2_err: e2,
        g1_at_zero: kernel.g1(0.0),
        g2_at_zero: kernel.g2(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub pairs: usize,
    pub gram_points: usize,
    /// Largest error of `φ<u,v> + ψ<y,u><x,v>` against the spectral sum.
    pub max_err: f64,
    /// Smallest eigenvalue of the covariance Gram matrix on tangent frames.
    pub min_eigenvalue: f64,
}

fn spectral_covariance(
    kernel: &Kernel,
    registry: &BasisRegistry,
    x: &Vec3,
    u: &Vec3,
    y: &Vec3,
    v: &Vec3,
) -> f64 {
    let sp = kernel.spectrum();
    let mut acc = 0.0;
    for ell in 1..=sp.l_max() {
        let w = 2.0 * sp.b(ell) / registry.dim_eigenspace(ell) as f64;
        for (a, b) in registry
            .fields_raw(ell, x)
            .iter()
            .zip(registry.fields_raw(ell, y).iter())
        {
            acc += w * dot(a, u) * dot(b, v);
        }
    }
    acc
}

pub fn covariance_identities(
    kernel: &Kernel,
    registry: &BasisRegistry,
    pairs: usize,
    gram_points: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    check_matched(kernel, registry)?;
    let mut rng = CounterRng::new(seed, 23);
    let mut max_err: f64 = 0.0;
    for _ in 0..pairs {
        let (x, y) = random_pair(&mut rng);
        let (bx, by) = (tangent_basis(x.coords()), tangent_basis(y.coords()));
        let (cu, cv) = ([rng.normal(), rng.normal()], [rng.normal(), rng.normal()]);
        let u: Vec3 = std::array::from_fn(|i| cu[0] * bx[0][i] + cu[1] * bx[1][i]);
        let v: Vec3 = std::array::from_fn(|i| cv[0] * by[0][i] + cv[1] * by[1][i]);
        let closed = kernel.covariance(&x, &u, &y, &v)?;
        let brute = spectral_covariance(kernel, registry, x.coords(), &u, y.coords(), &v);
        max_err = max_err.max((closed - brute).abs());
    }
    let pts: Vec<S2Point> = (0..gram_points).map(|_| random_point(&mut rng)).collect();
    let frames: Vec<(S2Point, Vec3)> = pts
        .iter()
        .flat_map(|p| tangent_basis(p.coords()).into_iter().map(move |e| (*p, e)))
        .collect();
    let n = frames.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (x, u) = &frames[i];
            let (y, v) = &frames[j];
            let c = if dot(x.coords(), y.coords()) > 1.0 - 1e-15 {
                // coincident points: φ(0) <u,v>
                kernel.phi_psi(0.0).0 * dot(u, v)
            } else {
                kernel.covariance(x, u, y, v)?
            };
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    let min_eigenvalue = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(CovarianceReport {
        pairs,
        gram_points,
        max_err,
        min_eigenvalue,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationIdentityReport {
    pub frames: usize,
    pub l_max: usize,
    /// Largest `|s_1 - 1|`, `|s_2 - 1|`.
    pub max_unit_err: f64,
    /// Largest error of the mixed sum.
    pub max_mixed_err: f64,
    /// Largest curvature-drift normal coefficient, and the bound `ν`.
    pub max_normal_coeff: f64,
    pub nu: f64,
    /// Largest closed-form vs brute-force rate difference.
    pub max_rate_err: f64,
    /// `(ρ, closed, brute)` for the Jacobi energy.
    pub energy: Vec<(f64, f64, f64)>,
}

impl RotationIdentityReport {
    pub fn max_energy_err(&self) -> f64 {
        self.energy
            .iter()
            .map(|(_, a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Frame sums on `frames` random frames up to degree `l_max`, the
/// curvature-drift bound on the same frames, and the rate and energy closed
/// forms against brute force at `rhos`.
pub fn rotation_identities(
    oracle: &RotationOracle,
    l_max: usize,
    frames: usize,
    rhos: &[f64],
    seed: u64,
) -> Result<RotationIdentityReport> {
    let mut rng = CounterRng::new(seed, 24);
    let nu = oracle.kernel().nu();
    let mut rep = RotationIdentityReport {
        frames,
        l_max,
        max_unit_err: 0.0,
        max_mixed_err: 0.0,
        max_normal_coeff: f64::NEG_INFINITY,
        nu,
        max_rate_err: 0.0,
        energy: Vec::new(),
    };
    for _ in 0..frames {
        let (x, y) = random_pair(&mut rng);
        let f = geodesic_frame(&x, &y, DEFAULT_EPS_CUT)?;
        for ell in 1..=l_max.min(oracle.registry().l_max()) {
            let s = frame_sums(oracle.registry(), ell, &f);
            rep.max_unit_err = rep
                .max_unit_err
                .max((s.s1 - 1.0).abs())
                .max((s.s2 - 1.0).abs());
            rep.max_mixed_err = rep.max_mixed_err.max((s.s3 - s.s3_closed).abs());
        }
        rep.max_normal_coeff = rep.max_normal_coeff.max(oracle.curvature_drift(&f).n_coeff);
    }
    for &rho in rhos {
        let x = random_point(&mut rng);
        let y = point_at_distance(&x, &[rng.normal(), rng.normal(), rng.normal()], rho);
        let f = geodesic_frame(&x, &y, DEFAULT_EPS_CUT)?;
        rep.max_rate_err = rep
            .max_rate_err
            .max((oracle.qv_rate(rho) - oracle.qv_rate_bruteforce(&f)).abs());
        rep.energy.push((
            rho,
            oracle.jacobi_energy_value(rho),
            oracle.jacobi_energy_bruteforce(&f)?,
        ));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Spectrum;

    fn setup() -> (Kernel, BasisRegistry) {
        let sp = Spectrum::power(2, 5, 3.0, 1.0, 0.1).unwrap();
        (Kernel::new(sp), BasisRegistry::new(5).unwrap())
    }

    #[test]
    fn basis_sums() {
        let (_, reg) = setup();
        let r = basis_identities(&reg, 5, 10, 1).unwrap();
        assert!(r.max_self_derivative <= 1e-5, "{r:?}");
        assert!(
            r.max_inner_err <= 1e-7 && r.max_normal_err <= 1e-7 && r.max_symmetric_err <= 1e-7,
            "{r:?}"
        );
        assert!(basis_identities(&reg, 6, 1, 1).is_err());
    }

    #[test]
    fn kernel_sums() {
        let (k, reg) = setup();
        let r = kernel_identities(&k, &reg, 10, 2).unwrap();
        assert!(r.max_g1_err <= 1e-6 && r.max_g2_err <= 1e-6, "{r:?}");
        assert_eq!(r.g1_at_zero, 0.0);
        assert_eq!(r.g2_at_zero, 0.0);
    }

    #[test]
    fn covariance_sums_and_gram() {
        let (k, reg) = setup();
        let r = covariance_identities(&k, &reg, 10, 12, 3).unwrap();
        assert!(r.max_err <= 1e-6, "{r:?}");
        assert!(r.min_eigenvalue >= -1e-8, "{r:?}");
    }

    #[test]
    fn rotation_sums() {
        let o = RotationOracle::new(Spectrum::power(2, 5, 3.0, 1.0, 0.1).unwrap()).unwrap();
        let r = rotation_identities(&o, 5, 10, &[0.1, 1.0], 4).unwrap();
        assert!(r.max_unit_err <= 1e-8 && r.max_mixed_err <= 1e-7, "{r:?}");
        assert!(r.max_normal_coeff <= r.nu);
        assert!(r.max_energy_err() <= 1e-6);
        assert!(r.max_rate_err <= 1e-6);
    }
}
