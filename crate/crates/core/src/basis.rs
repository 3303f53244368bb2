//! Orthonormal bases of `L²[0,1]`: the trigonometric basis and the periodized
//! Haar wavelet basis, both indexed by a single `λ ≥ 0` with `φ₀ ≡ 1`.
//!
//! Fourier: `φ_{2m−1}(x) = √2 sin(2πmx)`, `φ_{2m}(x) = √2 cos(2πmx)`.
//! Haar: `λ = 2^j + m` with `0 ≤ m < 2^j` maps to `Ψ_{jm}(x) = 2^{j/2} Ψ(2^j x − m)`,
//! periodized, where `Ψ = 1` on `[0, ½)` and `−1` on `[½, 1)`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Fourier,
    Haar,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Fourier => "fourier",
            BasisKind::Haar => "haar",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fourier" => Ok(BasisKind::Fourier),
            "haar" | "wavelet" => Ok(BasisKind::Haar),
            other => Err(invalid(format!("unknown basis kind `{other}` (expected fourier or haar)"))),
        }
    }
}

/// A basis truncated at `max_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Basis {
    kind: BasisKind,
    max_index: usize,
}

impl Basis {
    pub fn new(kind: BasisKind, max_index: usize) -> Self {
        Self { kind, max_index }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn max_index(&self) -> usize {
        self.max_index
    }

    /// `φ_λ(x)` with range checks on both arguments.
    pub fn eval(&self, index: usize, x: f64) -> Result<f64> {
        if index > self.max_index {
            return Err(Error::IndexOutOfRange { index, max: self.max_index });
        }
        check_point(x)?;
        Ok(phi(self.kind, index, x))
    }

    /// `Σ_{λ=1..k} θ_λ φ_λ(x)`.
    pub fn expansion(&self, theta: &[f64], x: f64) -> Result<f64> {
        if theta.len() > self.max_index {
            return Err(Error::LengthMismatch { len: theta.len(), max: self.max_index });
        }
        check_point(x)?;
        Ok(expansion_unchecked(self.kind, theta, x))
    }

    /// Constant `c₁` with `‖Σ_{λ≤k} θ_λφ_λ‖_∞ ≤ c₁ √k ‖θ‖₂`.
    ///
    /// Both bases give `√2`: for Fourier `|φ_λ| ≤ √2`; for Haar exactly one
    /// wavelet per level is active at any `x`, so the bound follows from
    /// Cauchy–Schwarz with `Σ_{j≤J} 2^j < 2k`.
    pub fn sup_norm_constant(&self) -> f64 {
        SQRT_2
    }

    pub fn sup_norm_bound(&self, theta: &[f64]) -> f64 {
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        self.sup_norm_constant() * (theta.len() as f64).sqrt() * norm
    }
}

fn check_point(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain(x))
    }
}

/// `φ_λ(x)` without range checks. `x` is read modulo 1 for Haar.
pub fn phi(kind: BasisKind, index: usize, x: f64) -> f64 {
    if index == 0 {
        return 1.0;
    }
    match kind {
        BasisKind::Fourier => {
            let m = index.div_ceil(2) as f64;
            let arg = 2.0 * PI * m * x;
            if index % 2 == 1 {
                SQRT_2 * arg.sin()
            } else {
                SQRT_2 * arg.cos()
            }
        }
        BasisKind::Haar => {
            let (level, shift) = haar_level_shift(index);
            let x = if x >= 1.0 { 0.0 } else { x };
            let scale = (1u64 << level) as f64;
            let u = scale * x - shift as f64;
            let amp = scale.sqrt();
            if (0.0..0.5).contains(&u) {
                amp
            } else if (0.5..1.0).contains(&u) {
                -amp
            } else {
                0.0
            }
        }
    }
}

/// `(j, m)` with `λ = 2^j + m`.
pub fn haar_level_shift(index: usize) -> (u32, usize) {
    debug_assert!(index >= 1);
    let level = usize::BITS - 1 - index.leading_zeros();
    (level, index - (1usize << level))
}

/// Writes `φ_1(x), …, φ_len(x)` into `out`.
pub fn fill(kind: BasisKind, x: f64, out: &mut [f64]) {
    let k = out.len();
    if k == 0 {
        return;
    }
    match kind {
        BasisKind::Fourier => {
            let m_max = k.div_ceil(2);
            let (s1, c1) = (2.0 * PI * x).sin_cos();
            let (mut s, mut c) = (s1, c1);
            for m in 1..=m_max {
                if m > 1 {
                    if m % 64 == 0 {
                        // Re-anchor the rotation to keep rounding drift bounded.
                        let (sa, ca) = (2.0 * PI * m as f64 * x).sin_cos();
                        s = sa;
                        c = ca;
                    } else {
                        let ns = s * c1 + c * s1;
                        c = c * c1 - s * s1;
                        s = ns;
                    }
                }
                out[2 * m - 2] = SQRT_2 * s;
                if 2 * m - 1 < k {
                    out[2 * m - 1] = SQRT_2 * c;
                }
            }
        }
        BasisKind::Haar => {
            out.fill(0.0);
            let x = if x >= 1.0 { 0.0 } else { x };
            let mut level = 0u32;
            loop {
                let start = 1usize << level;
                if start > k {
                    break;
                }
                let scale = start as f64;
                let pos = scale * x;
                let shift = (pos.floor() as usize).min(start - 1);
                let index = start + shift;
                if index <= k {
                    let u = pos - shift as f64;
                    let amp = scale.sqrt();
                    out[index - 1] = if u < 0.5 { amp } else { -amp };
                }
                level += 1;
            }
        }
    }
}

pub fn expansion_unchecked(kind: BasisKind, theta: &[f64], x: f64) -> f64 {
    if theta.is_empty() {
        return 0.0;
    }
    let mut buf = vec![0.0; theta.len()];
    fill(kind, x, &mut buf);
    buf.iter().zip(theta).map(|(p, t)| p * t).sum()
}

/// A Sobolev (Fourier) or Besov (wavelet) ball `{‖f‖_{γ,p,q} ≤ R}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessBall {
    pub gamma: f64,
    pub radius: f64,
    pub p: f64,
    /// `f64::INFINITY` selects the `q = ∞` (sup over levels) norm.
    pub q: f64,
}

impl SmoothnessBall {
    pub fn sobolev(gamma: f64, radius: f64) -> Self {
        Self { gamma, radius, p: 2.0, q: 2.0 }
    }

    pub fn besov(gamma: f64, radius: f64, p: f64, q: f64) -> Self {
        Self { gamma, radius, p, q }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.radius > 0.0) {
            return Err(invalid("smoothness and radius must be positive"));
        }
        if !(self.p >= 2.0) || !(self.q >= 1.0) {
            return Err(invalid("Besov indices need p >= 2 and q >= 1"));
        }
        Ok(())
    }
}

/// Tail bounds for `θ` in a smoothness ball, beyond the cut index `k`:
/// `Σ_{λ>k} θ_λ² ≤ l2_sq` and `‖Σ_{λ>k} θ_λφ_λ‖_∞ ≤ sup`.
///
/// `c2` and `c3` are the constants in `l2_sq = c2 R² k^{−2γ}` and
/// `sup = c3 R k^{1/2−γ}` at this `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBounds {
    pub l2_sq: f64,
    pub sup: f64,
    pub c2: f64,
    pub c3: f64,
}

pub fn tail_bounds(kind: BasisKind, ball: &SmoothnessBall, k: usize) -> Result<TailBounds> {
    ball.validate()?;
    if k == 0 {
        return Err(invalid("tail bounds need a cut index k >= 1"));
    }
    let SmoothnessBall { gamma, radius: r, p, .. } = *ball;
    let kf = k as f64;
    let (l2_sq, sup) = match kind {
        BasisKind::Fourier => {
            if kind == BasisKind::Fourier && (p != 2.0 || ball.q != 2.0) {
                return Err(invalid("Fourier balls are Sobolev balls (p = q = 2)"));
            }
            if gamma <= 0.5 {
                return Err(invalid("sup-norm tail bound needs gamma > 1/2"));
            }
            // λ^{2γ} ≥ k^{2γ} on the tail; |φ_λ| ≤ √2 and Σ_{λ>k} λ^{−2γ} ≤ k^{1−2γ}/(2γ−1).
            let l2 = r * r * kf.powf(-2.0 * gamma);
            let sup = (2.0 / (2.0 * gamma - 1.0)).sqrt() * r * kf.powf(0.5 - gamma);
            (l2, sup)
        }
        BasisKind::Haar => {
            let rate = gamma - 1.0 / p;
            if rate <= 0.0 {
                return Err(invalid("sup-norm tail bound needs gamma > 1/p"));
            }
            // The first index beyond k sits on level J = ⌊log₂(k+1)⌋; each level j
            // carries at most R² 2^{−2jγ} of ℓ² mass and sup-norm R 2^{−j(γ−1/p)}.
            let level = (usize::BITS - 1 - (k + 1).leading_zeros()) as i32;
            let l2 = r * r * 2f64.powf(-2.0 * gamma * level as f64) / (1.0 - 2f64.powf(-2.0 * gamma));
            let sup = r * 2f64.powf(-rate * level as f64) / (1.0 - 2f64.powf(-rate));
            (l2, sup)
        }
    };
    Ok(TailBounds {
        l2_sq,
        sup,
        c2: l2_sq / (r * r * kf.powf(-2.0 * gamma)),
        c3: sup / (r * kf.powf(0.5 - gamma)),
    })
}

/// Sobolev norm `(θ₀² + Σ λ^{2γ} θ_λ²)^{1/2}` for Fourier, Besov `(γ,p,q)`
/// norm for Haar. `constant` is the coefficient on `φ₀`.
pub fn smoothness_norm(kind: BasisKind, constant: f64, theta: &[f64], ball: &SmoothnessBall) -> Result<f64> {
    ball.validate()?;
    let gamma = ball.gamma;
    let norm = match kind {
        BasisKind::Fourier => {
            let s: f64 = theta
                .iter()
                .enumerate()
                .map(|(i, t)| ((i + 1) as f64).powf(2.0 * gamma) * t * t)
                .sum();
            (constant * constant + s).sqrt()
        }
        BasisKind::Haar => {
            let (p, q) = (ball.p, ball.q);
            let mut level_terms = Vec::new();
            let mut level = 0u32;
            loop {
                let start = 1usize << level;
                if start > theta.len() {
                    break;
                }
                let end = (2 * start - 1).min(theta.len());
                let lp: f64 = theta[start - 1..end].iter().map(|t| t.abs().powf(p)).sum::<f64>().powf(1.0 / p);
                let weight = 2f64.powf(level as f64 * (gamma + 0.5 - 1.0 / p));
                level_terms.push(weight * lp);
                level += 1;
            }
            let tail = if q.is_infinite() {
                level_terms.iter().cloned().fold(0.0, f64::max)
            } else {
                level_terms.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
            };
            constant.abs() + tail
        }
    };
    if norm.is_finite() {
        Ok(norm)
    } else {
        Err(Error::Numerical("smoothness norm diverges: sequence is not in the ball".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_examples() {
        let f = Basis::new(BasisKind::Fourier, 4);
        assert_eq!(f.eval(0, 0.37).unwrap(), 1.0);
        assert!((f.eval(2, 0.0).unwrap() - SQRT_2).abs() < 1e-15);
        let h = Basis::new(BasisKind::Haar, 4);
        assert_eq!(h.eval(1, 0.25).unwrap(), 1.0);
        assert_eq!(h.eval(1, 0.75).unwrap(), -1.0);
        assert!(matches!(f.eval(5, 0.1), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(f.eval(1, 1.5), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn haar_values_are_dyadic() {
        let h = Basis::new(BasisKind::Haar, 15);
        for i in 0..=64 {
            let x = i as f64 / 64.0;
            for lam in 1..=15 {
                let v = h.eval(lam, x).unwrap();
                let (j, _) = haar_level_shift(lam);
                let amp = 2f64.powf(j as f64 / 2.0);
                assert!(v == 0.0 || v == amp || v == -amp);
            }
        }
        // periodic at the right endpoint
        assert_eq!(h.eval(1, 1.0).unwrap(), h.eval(1, 0.0).unwrap());
    }

    #[test]
    fn fill_matches_pointwise_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [BasisKind::Fourier, BasisKind::Haar] {
            let mut buf = vec![0.0; 300];
            for _ in 0..50 {
                let x: f64 = rng.random();
                fill(kind, x, &mut buf);
                for (i, v) in buf.iter().enumerate() {
                    assert!((v - phi(kind, i + 1, x)).abs() < 1e-11, "{kind:?} λ={} x={x}", i + 1);
                }
            }
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        for kind in [BasisKind::Fourier, BasisKind::Haar] {
            let basis = Basis::new(kind, 16);
            let grid = QuadratureGrid::for_basis(&basis);
            for a in 0..=16 {
                for b in 0..=16 {
                    let v = grid.integrate(|x| phi(kind, a, x) * phi(kind, b, x));
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-10, "{kind:?} ({a},{b}) = {v}");
                }
            }
        }
    }

    #[test]
    fn expansion_examples() {
        let f = Basis::new(BasisKind::Fourier, 4);
        assert_eq!(f.expansion(&[], 0.3).unwrap(), 0.0);
        assert!((f.expansion(&[0.0, 1.0], 0.0).unwrap() - SQRT_2).abs() < 1e-15);
        assert!(matches!(f.expansion(&[0.0; 5], 0.1), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn sup_norm_bound_dominates_grid_sup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (kind, k) in [(BasisKind::Fourier, 8), (BasisKind::Haar, 4)] {
            let basis = Basis::new(kind, k);
            for _ in 0..20 {
                let theta: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                let grid_sup = (0..10_000)
                    .map(|i| basis.expansion(&theta, i as f64 / 9_999.0).unwrap().abs())
                    .fold(0.0, f64::max);
                assert!(grid_sup <= basis.sup_norm_bound(&theta) + 1e-12);
            }
        }
        let f = Basis::new(BasisKind::Fourier, 1);
        assert_eq!(f.sup_norm_bound(&[]), 0.0);
        assert!((f.sup_norm_bound(&[1.0]) - SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn tail_bounds_shrink_with_k() {
        for kind in [BasisKind::Fourier, BasisKind::Haar] {
            let ball = SmoothnessBall::sobolev(1.3, 2.0);
            let mut prev = tail_bounds(kind, &ball, 1).unwrap();
            for k in 2..200 {
                let t = tail_bounds(kind, &ball, k).unwrap();
                assert!(t.l2_sq <= prev.l2_sq && t.sup <= prev.sup);
                prev = t;
            }
            assert!(prev.l2_sq < 1e-3);
        }
    }

    #[test]
    fn wavelet_l2_tail_at_power_of_two() {
        let ball = SmoothnessBall::sobolev(1.0, 1.0);
        let t = tail_bounds(BasisKind::Haar, &ball, 16).unwrap();
        assert!((t.l2_sq - 1.0 / (0.75 * 256.0)).abs() < 1e-15);
        assert!((t.c2 - 4.0 / 3.0).abs() < 1e-12);
        // direct sum of the level-extremal sequence: R² 2^{-2jγ} per level from j = 4
        let direct: f64 = (4..60).map(|j| 2f64.powi(-2 * j)).sum();
        assert!(direct <= t.l2_sq + 1e-15);
    }

    #[test]
    fn tail_bounds_reject_rough_balls() {
        let ball = SmoothnessBall::sobolev(0.5, 1.0);
        assert!(tail_bounds(BasisKind::Fourier, &ball, 4).is_err());
        assert!(tail_bounds(BasisKind::Fourier, &SmoothnessBall::sobolev(1.0, 1.0), 0).is_err());
    }

    #[test]
    fn smoothness_norm_examples() {
        let ball = SmoothnessBall::sobolev(1.5, 1.0);
        assert_eq!(smoothness_norm(BasisKind::Fourier, 0.0, &[0.0; 6], &ball).unwrap(), 0.0);
        let mut theta = vec![0.0; 6];
        theta[4] = -0.3;
        let v = smoothness_norm(BasisKind::Fourier, 0.0, &theta, &ball).unwrap();
        assert!((v - 5f64.powf(1.5) * 0.3).abs() < 1e-12);
        let besov = SmoothnessBall::besov(1.0, 1.0, 2.0, f64::INFINITY);
        let v = smoothness_norm(BasisKind::Haar, 0.5, &[1.0, 0.0, 0.0], &besov).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
        let inf = [f64::INFINITY];
        assert!(smoothness_norm(BasisKind::Fourier, 0.0, &inf, &ball).is_err());
    }
}
