//! Embedded geometry of the unit sphere `S^d ⊂ R^{d+1}`.
//!
//! Points are always stored in ambient coordinates; no charts are used.
//! The dimension is a const generic `N = d + 1`, so the hot simulation loop
//! on `S^2` works on stack arrays.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Default distance from 0 and pi below which a geodesic frame is refused.
pub const DEFAULT_EPS_CUT: f64 = 1e-6;

#[inline]
pub fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm<const N: usize>(a: &[f64; N]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn axpy<const N: usize>(alpha: f64, x: &[f64; N], y: &mut [f64; N]) {
    for i in 0..N {
        y[i] += alpha * x[i];
    }
}

#[inline]
pub fn scaled<const N: usize>(alpha: f64, x: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for v in out.iter_mut() {
        *v *= alpha;
    }
    out
}

#[inline]
pub fn sub<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    let mut out = *a;
    for i in 0..N {
        out[i] -= b[i];
    }
    out
}

#[inline]
pub fn add<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    let mut out = *a;
    for i in 0..N {
        out[i] += b[i];
    }
    out
}

/// A point of `S^{N-1}` in ambient coordinates, unit norm to 1e-12.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint<const N: usize> {
    coords: [f64; N],
}

pub type S2Point = SpherePoint<3>;

impl<const N: usize> SpherePoint<N> {
    /// Normalizes `coords` onto the sphere.
    pub fn new(coords: [f64; N]) -> Result<Self> {
        let n = norm(&coords);
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidPoint(format!("cannot normalize {coords:?}")));
        }
        Ok(Self::normalized(coords))
    }

    /// Renormalizes without error checks; the caller guarantees a nonzero finite vector.
    #[inline]
    pub(crate) fn normalized(mut coords: [f64; N]) -> Self {
        let n = norm(&coords);
        for c in coords.iter_mut() {
            *c /= n;
        }
        Self { coords }
    }

    /// The `i`-th coordinate axis.
    pub fn axis(i: usize) -> Self {
        let mut coords = [0.0; N];
        coords[i] = 1.0;
        Self { coords }
    }

    #[inline]
    pub fn coords(&self) -> &[f64; N] {
        &self.coords
    }

    /// Intrinsic dimension `d`.
    pub const fn dim(&self) -> usize {
        N - 1
    }

    pub fn antipode(&self) -> Self {
        Self {
            coords: scaled(-1.0, &self.coords),
        }
    }
}

/// A tangent vector `vec ∈ T_base S^{N-1}` stored in ambient coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector<const N: usize> {
    base: SpherePoint<N>,
    vec: [f64; N],
}

impl<const N: usize> TangentVector<N> {
    /// Checks `|<vec, base>| <= 1e-10 |vec|`.
    pub fn new(base: SpherePoint<N>, vec: [f64; N]) -> Result<Self> {
        let inner = dot(&vec, base.coords());
        let n = norm(&vec);
        if inner.abs() > 1e-10 * n.max(1e-300) && inner.abs() > 1e-300 {
            return Err(Error::NonTangent { inner, norm: n });
        }
        Ok(Self { base, vec })
    }

    #[inline]
    pub(crate) fn new_unchecked(base: SpherePoint<N>, vec: [f64; N]) -> Self {
        Self { base, vec }
    }

    pub fn zero(base: SpherePoint<N>) -> Self {
        Self {
            base,
            vec: [0.0; N],
        }
    }

    #[inline]
    pub fn base(&self) -> &SpherePoint<N> {
        &self.base
    }

    #[inline]
    pub fn vec(&self) -> &[f64; N] {
        &self.vec
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vec)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            base: self.base,
            vec: scaled(alpha, &self.vec),
        }
    }
}

/// Angle between `x` and `y`; the inner product is clamped before `acos`.
pub fn geodesic_distance<const N: usize>(x: &SpherePoint<N>, y: &SpherePoint<N>) -> f64 {
    angle_between(x.coords(), y.coords())
}

/// Angle between two unit vectors given as raw arrays.
#[inline]
pub fn angle_between<const N: usize>(x: &[f64; N], y: &[f64; N]) -> f64 {
    // acos loses half the digits near 0 and pi; atan2 of |x-y| and |x+y| does not.
    let d = norm(&sub(x, y));
    let s = norm(&add(x, y));
    if d <= s {
        2.0 * (0.5 * d).clamp(-1.0, 1.0).asin()
    } else {
        dot(x, y).clamp(-1.0, 1.0).acos()
    }
}

/// Orthogonal projection `Q_x w = w - <w,x> x` onto `T_x`.
pub fn project_tangent<const N: usize>(x: &SpherePoint<N>, w: &[f64; N]) -> TangentVector<N> {
    TangentVector::new_unchecked(*x, project_raw(x.coords(), w))
}

#[inline]
pub fn project_raw<const N: usize>(x: &[f64; N], w: &[f64; N]) -> [f64; N] {
    let mut out = *w;
    axpy(-dot(w, x), x, &mut out);
    out
}

/// `cos|v| x + sin|v| v/|v|`, renormalized.
pub fn exp_map<const N: usize>(v: &TangentVector<N>) -> SpherePoint<N> {
    SpherePoint::normalized(exp_raw(v.base().coords(), v.vec()))
}

#[inline]
pub fn exp_raw<const N: usize>(x: &[f64; N], v: &[f64; N]) -> [f64; N] {
    let n = norm(v);
    if n == 0.0 {
        return *x;
    }
    let mut out = scaled(n.cos(), x);
    axpy(n.sin() / n, v, &mut out);
    let m = norm(&out);
    for c in out.iter_mut() {
        *c /= m;
    }
    out
}

/// Geodesic data between two non-antipodal, distinct points of `S^2`.
///
/// `e0` and `e1` are the unit tangents of the minimal geodesic at `x` and
/// `y`, and `normal = x × y / sin θ` is the constant unit normal along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicFrame {
    pub x: S2Point,
    pub y: S2Point,
    pub theta: f64,
    pub e0: TangentVector<3>,
    pub e1: TangentVector<3>,
    pub normal: TangentVector<3>,
}

pub fn geodesic_frame(x: &S2Point, y: &S2Point, eps_cut: f64) -> Result<GeodesicFrame> {
    let theta = geodesic_distance(x, y);
    if theta <= eps_cut || theta >= std::f64::consts::PI - eps_cut {
        return Err(Error::DegenerateGeodesic { theta, eps_cut });
    }
    let (s, c) = theta.sin_cos();
    let xc = x.coords();
    let yc = y.coords();
    // Gram-Schmidt of y against x is better conditioned than (y - cos θ x)/sin θ
    // when θ is small; both agree to rounding.
    let mut e0 = project_raw(xc, yc);
    let n0 = norm(&e0);
    e0 = scaled(1.0 / n0, &e0);
    let mut e1 = project_raw(yc, &scaled(-1.0, xc));
    let n1 = norm(&e1);
    e1 = scaled(1.0 / n1, &e1);
    let mut nrm = cross(xc, yc);
    let nn = norm(&nrm);
    nrm = scaled(1.0 / nn, &nrm);
    debug_assert!((dot(&e0, &e1) - c).abs() < 1e-9 || s < 1e-4);
    Ok(GeodesicFrame {
        x: *x,
        y: *y,
        theta,
        e0: TangentVector::new_unchecked(*x, e0),
        e1: TangentVector::new_unchecked(*y, e1),
        normal: TangentVector::new_unchecked(*x, nrm),
    })
}

impl GeodesicFrame {
    /// `γ(a) = cos(aθ) x + sin(aθ) e0`.
    pub fn point_at(&self, a: f64) -> S2Point {
        let (s, c) = (a * self.theta).sin_cos();
        let mut p = scaled(c, self.x.coords());
        axpy(s, self.e0.vec(), &mut p);
        SpherePoint::normalized(p)
    }

    /// Unit tangent `e(a) = γ̇(a)/θ`.
    pub fn tangent_at(&self, a: f64) -> Vec3 {
        let (s, c) = (a * self.theta).sin_cos();
        let mut t = scaled(-s, self.x.coords());
        axpy(c, self.e0.vec(), &mut t);
        t
    }

    /// Frame seen from `y`: swaps the endpoints, which flips the normal.
    pub fn reversed(&self) -> GeodesicFrame {
        GeodesicFrame {
            x: self.y,
            y: self.x,
            theta: self.theta,
            e0: self.e1.scale(-1.0),
            e1: self.e0.scale(-1.0),
            normal: TangentVector::new_unchecked(self.y, scaled(-1.0, self.normal.vec())),
        }
    }
}

/// Point at angle `theta` from `x` along the unit tangent direction `dir`.
pub fn point_at_distance(x: &S2Point, dir: &Vec3, theta: f64) -> S2Point {
    let t = project_raw(x.coords(), dir);
    let t = scaled(1.0 / norm(&t), &t);
    let (s, c) = theta.sin_cos();
    let mut p = scaled(c, x.coords());
    axpy(s, &t, &mut p);
    SpherePoint::normalized(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use std::f64::consts::PI;

    fn random_point(rng: &mut CounterRng) -> S2Point {
        SpherePoint::new([rng.normal(), rng.normal(), rng.normal()]).unwrap()
    }

    #[test]
    fn distance_special_cases() {
        let x = S2Point::axis(0);
        let y = S2Point::axis(1);
        assert_eq!(geodesic_distance(&x, &x), 0.0);
        assert!((geodesic_distance(&x, &x.antipode()) - PI).abs() < 1e-15);
        assert!((geodesic_distance(&x, &y) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn distance_comparison_with_chord() {
        let mut rng = CounterRng::new(11, 0);
        for _ in 0..10_000 {
            let x = random_point(&mut rng);
            let y = random_point(&mut rng);
            let chord = norm(&sub(x.coords(), y.coords()));
            let theta = geodesic_distance(&x, &y);
            assert!(chord <= theta + 1e-15);
            assert!(theta <= PI / 2.0 * chord + 1e-15);
        }
    }

    #[test]
    fn projection() {
        let x = S2Point::axis(0);
        assert_eq!(project_tangent(&x, &[1.0, 0.0, 0.0]).norm(), 0.0);
        assert_eq!(
            *project_tangent(&x, &[0.0, 2.0, -1.0]).vec(),
            [0.0, 2.0, -1.0]
        );
        assert_eq!(
            *project_tangent(&x, &[1.0, 1.0, 0.0]).vec(),
            [0.0, 1.0, 0.0]
        );
        let w = [0.3, -1.2, 0.7];
        let p = project_tangent(&x, &w);
        let pp = project_tangent(&x, p.vec());
        assert_eq!(p.vec(), pp.vec());
    }

    #[test]
    fn frame_at_orthogonal_axes() {
        let f = geodesic_frame(&S2Point::axis(0), &S2Point::axis(1), DEFAULT_EPS_CUT).unwrap();
        assert!((f.theta - PI / 2.0).abs() < 1e-15);
        let close = |a: &Vec3, b: &Vec3| norm(&sub(a, b)) < 1e-15;
        assert!(close(f.e0.vec(), &[0.0, 1.0, 0.0]));
        assert!(close(f.e1.vec(), &[-1.0, 0.0, 0.0]));
        assert!(close(f.normal.vec(), &[0.0, 0.0, 1.0]));
    }

    #[test]
    fn frame_invariants_random() {
        let mut rng = CounterRng::new(5, 1);
        for _ in 0..100 {
            let x = random_point(&mut rng);
            let y = random_point(&mut rng);
            let f = geodesic_frame(&x, &y, DEFAULT_EPS_CUT).unwrap();
            assert!((dot(f.e0.vec(), f.e1.vec()) - f.theta.cos()).abs() < 1e-10);
            for v in [f.e0.vec(), f.e1.vec(), f.normal.vec()] {
                assert!((norm(v) - 1.0).abs() < 1e-12);
            }
            assert!(dot(f.normal.vec(), x.coords()).abs() < 1e-10);
            assert!(dot(f.normal.vec(), y.coords()).abs() < 1e-10);
            assert!(dot(f.normal.vec(), f.e0.vec()).abs() < 1e-10);
            assert!(dot(f.normal.vec(), f.e1.vec()).abs() < 1e-10);
            let end = f.point_at(1.0);
            assert!(norm(&sub(end.coords(), y.coords())) < 1e-10);
            let t1 = f.tangent_at(1.0);
            assert!(norm(&sub(&t1, f.e1.vec())) < 1e-10);
        }
    }

    #[test]
    fn frame_rejects_degenerate_pairs() {
        let x = S2Point::axis(2);
        assert!(matches!(
            geodesic_frame(&x, &x, DEFAULT_EPS_CUT),
            Err(Error::DegenerateGeodesic { .. })
        ));
        assert!(geodesic_frame(&x, &x.antipode(), DEFAULT_EPS_CUT).is_err());
    }

    #[test]
    fn exp_map_cases() {
        let x = S2Point::axis(0);
        assert_eq!(exp_map(&TangentVector::zero(x)), x);
        let v = TangentVector::new(x, [0.0, PI / 2.0, 0.0]).unwrap();
        let p = exp_map(&v);
        assert!(norm(&sub(p.coords(), &[0.0, 1.0, 0.0])) < 1e-15);

        let mut rng = CounterRng::new(3, 3);
        for _ in 0..100 {
            let x = random_point(&mut rng);
            let w = [rng.normal(), rng.normal(), rng.normal()];
            let t = project_tangent(&x, &w);
            let len = 3.0 * rng.uniform();
            let v = t.scale(len / t.norm());
            let y = exp_map(&v);
            assert!((geodesic_distance(&x, &y) - len).abs() < 1e-12);
            assert!((norm(y.coords()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_vector_rejects_radial() {
        let x = S2Point::axis(1);
        assert!(matches!(
            TangentVector::new(x, [0.0, 1.0, 0.0]),
            Err(Error::NonTangent { .. })
        ));
    }

    #[test]
    fn reversed_frame_flips_normal() {
        let x = SpherePoint::new([1.0, 0.2, 0.1]).unwrap();
        let y = SpherePoint::new([0.1, 1.0, -0.3]).unwrap();
        let f = geodesic_frame(&x, &y, DEFAULT_EPS_CUT).unwrap();
        let r = f.reversed();
        let g = geodesic_frame(&y, &x, DEFAULT_EPS_CUT).unwrap();
        assert!(norm(&sub(r.normal.vec(), g.normal.vec())) < 1e-12);
        assert!(norm(&sub(r.e0.vec(), g.e0.vec())) < 1e-12);
        assert!(norm(&sub(r.e1.vec(), g.e1.vec())) < 1e-12);
    }
}
