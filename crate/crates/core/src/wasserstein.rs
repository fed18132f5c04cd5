//! One-dimensional first-order Wasserstein distances.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::{norm_cdf, norm_pdf, norm_quantile, Scalar};

/// Finitely supported probability measure on ℝ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmpiricalDist<S: Scalar = f64> {
    atoms: Vec<S>,
    weights: Vec<S>,
}

impl<S: Scalar> EmpiricalDist<S> {
    /// Uniform weights over `atoms`.
    pub fn uniform(atoms: Vec<S>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(domain("empirical distribution needs at least one atom"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(domain("atoms must be finite"));
        }
        let w = S::one() / S::from_usize_lossy(atoms.len());
        let weights = vec![w; atoms.len()];
        Ok(Self { atoms, weights })
    }

    /// Weighted atoms; weights must be positive and sum to one within `1e-12`
    /// (relative to the working precision for `f32`). They are renormalized.
    pub fn weighted(atoms: Vec<S>, weights: Vec<S>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(domain("atoms and weights must be nonempty and of equal length"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(domain("atoms must be finite"));
        }
        if weights.iter().any(|w| !(*w > S::zero())) {
            return Err(domain("weights must be positive"));
        }
        let total: S = weights.iter().copied().sum();
        let tol = S::lit(1e-12).max(S::epsilon() * S::lit(64.0));
        if (total - S::one()).abs() > tol {
            return Err(domain(format!("weights sum to {total}, expected 1")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { atoms, weights })
    }

    pub fn atoms(&self) -> &[S] {
        &self.atoms
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> S {
        self.atoms.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum()
    }

    /// `(atom, weight)` pairs sorted by atom, equal atoms merged.
    fn sorted(&self) -> Vec<(S, S)> {
        let mut pairs: Vec<(S, S)> = self.atoms.iter().copied().zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite atoms"));
        let mut merged: Vec<(S, S)> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == a => last.1 = last.1 + w,
                _ => merged.push((a, w)),
            }
        }
        merged
    }

    pub fn shifted(&self, c: S) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&a| a + c).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// `W₁(a, b) = ∫ |F_a − F_b|`, integrated exactly over the merged breakpoints.
pub fn w1_empirical<S: Scalar>(a: &EmpiricalDist<S>, b: &EmpiricalDist<S>) -> Result<S> {
    if a.is_empty() || b.is_empty() {
        return Err(domain("w1_empirical needs nonempty inputs"));
    }
    // Equal-size uniform samples: mean absolute difference of order statistics.
    if a.len() == b.len() && a.weights.iter().chain(&b.weights).all(|&w| w == a.weights[0]) {
        let mut xs = a.atoms.clone();
        let mut ys = b.atoms.clone();
        xs.sort_by(|p, q| p.partial_cmp(q).expect("finite atoms"));
        ys.sort_by(|p, q| p.partial_cmp(q).expect("finite atoms"));
        let diffs: Vec<S> = xs.iter().zip(&ys).map(|(&x, &y)| (x - y).abs()).collect();
        return Ok(crate::scalar::pairwise_sum(&diffs) / S::from_usize_lossy(diffs.len()));
    }
    let pa = a.sorted();
    let pb = b.sorted();
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (S::zero(), S::zero());
    let mut prev: Option<S> = None;
    let mut total = S::zero();
    while i < pa.len() || j < pb.len() {
        let next = match (pa.get(i), pb.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total = total + (fa - fb).abs() * (next - p);
        }
        while i < pa.len() && pa[i].0 == next {
            fa = fa + pa[i].1;
            i += 1;
        }
        while j < pb.len() && pb[j].0 == next {
            fb = fb + pb[j].1;
            j += 1;
        }
        prev = Some(next);
    }
    Ok(total)
}

/// `E|m + s Z|` for `Z ~ N(0, 1)`.
pub fn folded_normal_mean<S: Scalar>(m: S, s: S) -> Result<S> {
    if !(s > S::zero()) {
        return Err(domain(format!("folded_normal_mean needs s > 0, got {s}")));
    }
    let am = m.abs();
    let r = am / s;
    let two = S::lit(2.0);
    // 2Φ(r) − 1 = 1 − 2Φ(−r), which keeps precision for large r.
    let central = S::one() - two * norm_cdf(-r);
    Ok(s * (two / S::PI()).sqrt() * (-(r * r) / two).exp() + am * central)
}

/// `W₁(N(m1, s1²), N(m2, s2²))`, the comonotone-coupling mean `E|Δm + Δs Z|`.
pub fn w1_gaussian<S: Scalar>(m1: S, s1: S, m2: S, s2: S) -> Result<S> {
    if s1 < S::zero() || s2 < S::zero() {
        return Err(domain("standard deviations must be nonnegative"));
    }
    let dm = m1 - m2;
    let ds = (s1 - s2).abs();
    if ds == S::zero() {
        return Ok(dm.abs());
    }
    folded_normal_mean(dm, ds)
}

/// Exact `W₁` between a finitely supported measure and `N(mean, sd²)`.
///
/// Between consecutive atoms the empirical CDF is a constant `c`, and
/// `∫ |c − Φ((t − m)/s)| dt` has a closed form through the antiderivative
/// `s·(zΦ(z) + φ(z))`, split at the crossing point `m + sΦ⁻¹(c)`.
pub fn w1_empirical_vs_gaussian<S: Scalar>(a: &EmpiricalDist<S>, mean: S, sd: S) -> Result<S> {
    if a.is_empty() {
        return Err(domain("empty empirical distribution"));
    }
    if sd < S::zero() {
        return Err(domain("sd must be nonnegative"));
    }
    if sd == S::zero() {
        let point = EmpiricalDist::uniform(vec![mean])?;
        return w1_empirical(a, &point);
    }
    // G(t) = ∫_{-∞}^t Φ((u − m)/s) du, and ∫_{-∞}^t (1 − Φ) analogously.
    let big_g = |t: S| -> S {
        if t == S::infinity() {
            return S::infinity();
        }
        if t == S::neg_infinity() {
            return S::zero();
        }
        let z = (t - mean) / sd;
        sd * (z * norm_cdf(z) + norm_pdf(z))
    };
    let big_h = |t: S| -> S {
        // ∫_t^∞ (1 − Φ((u − m)/s)) du
        if t == S::infinity() {
            return S::zero();
        }
        if t == S::neg_infinity() {
            return S::infinity();
        }
        let z = (t - mean) / sd;
        sd * (norm_pdf(z) - z * norm_cdf(-z))
    };
    // ∫_l^r |c − Φ| over one segment where the empirical CDF equals c.
    let segment = |l: S, r: S, c: S| -> S {
        if c <= S::zero() {
            return big_g(r) - big_g(l);
        }
        if c >= S::one() {
            return big_h(l) - big_h(r);
        }
        let cross = mean + sd * norm_quantile(c);
        let mid = cross.max(l).min(r);
        // Φ < c left of the crossing, Φ > c right of it.
        let left = if mid > l { c * (mid - l) - (big_g(mid) - big_g(l)) } else { S::zero() };
        let right = if r > mid { (S::one() - c) * (r - mid) - (big_h(mid) - big_h(r)) } else { S::zero() };
        left + right
    };
    let pts = a.sorted();
    let mut total = segment(S::neg_infinity(), pts[0].0, S::zero());
    let mut c = S::zero();
    for w in 0..pts.len() {
        c = c + pts[w].1;
        let r = if w + 1 < pts.len() { pts[w + 1].0 } else { S::infinity() };
        let c_seg = if w + 1 == pts.len() { S::one() } else { c };
        total = total + segment(pts[w].0, r, c_seg);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use proptest::prelude::*;

    fn emp(xs: &[f64]) -> EmpiricalDist<f64> {
        EmpiricalDist::uniform(xs.to_vec()).unwrap()
    }

    /// Brute-force W₁ for equal-size uniform samples: the optimal coupling is a
    /// permutation, so enumerate all of them.
    fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
        fn permute(idx: &mut Vec<usize>, k: usize, a: &[f64], b: &[f64], best: &mut f64) {
            if k == idx.len() {
                let c: f64 = idx.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum();
                *best = best.min(c / a.len() as f64);
                return;
            }
            for i in k..idx.len() {
                idx.swap(k, i);
                permute(idx, k + 1, a, b, best);
                idx.swap(k, i);
            }
        }
        let mut idx: Vec<usize> = (0..b.len()).collect();
        let mut best = f64::INFINITY;
        permute(&mut idx, 0, a, b, &mut best);
        best
    }

    #[test]
    fn examples() {
        let a = emp(&[0.3, -1.2, 4.0]);
        assert_eq!(w1_empirical(&a, &a).unwrap(), 0.0);
        assert_eq!(w1_empirical(&emp(&[0.0]), &emp(&[1.0])).unwrap(), 1.0);
        let v = w1_empirical(&emp(&[0.0, 2.0]), &emp(&[1.0, 3.0])).unwrap();
        assert_eq!(v, brute_force_w1(&[0.0, 2.0], &[1.0, 3.0]));
        assert_eq!(v, 1.0);
    }

    #[test]
    fn empty_input_is_a_domain_error() {
        assert!(EmpiricalDist::<f64>::uniform(vec![]).is_err());
    }

    #[test]
    fn unequal_sizes_use_cdf_integral() {
        // {0} vs uniform {0, 1}: half the mass travels distance 1.
        let v = w1_empirical(&emp(&[0.0]), &emp(&[0.0, 1.0])).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let w = EmpiricalDist::weighted(vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        assert!((w1_empirical(&emp(&[1.0]), &w).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_examples() {
        let sqrt_2_pi = (2.0 / std::f64::consts::PI).sqrt();
        assert!((w1_gaussian(0.0f64, 2.0, 0.0, 1.0).unwrap() - 0.797_884_560_8).abs() < 1e-10);
        assert!((w1_gaussian(0.0, 2.0, 0.0, 1.0).unwrap() - sqrt_2_pi).abs() < 1e-15);
        assert_eq!(w1_gaussian(1.0, 1.0, 0.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_matches_quantile_quadrature() {
        // Oracle: ∫₀¹ |F₁⁻¹(u) − F₂⁻¹(u)| du by quadrature on the quantile functions.
        let cases = [(1.0, 2.0, 0.0, 1.0), (0.3, 0.5, -0.2, 1.7), (-2.0, 0.1, 0.0, 0.1)];
        for &(m1, s1, m2, s2) in &cases {
            // Split at the kink u* where the coupled difference changes sign;
            // quantiles are taken from the distance to 0 or 1 to avoid Φ⁻¹ = ±∞.
            let integrand = |u_lo: f64, u_hi: f64| {
                move |n: crate::quad::Node<f64>| {
                    let from0 = u_lo + n.from_left;
                    let from1 = (1.0 - u_hi) + n.from_right;
                    let z: f64 = if from0 < 0.5 { norm_quantile(from0) } else { -norm_quantile(from1) };
                    ((m1 + s1 * z) - (m2 + s2 * z)).abs()
                }
            };
            let kink: f64 = norm_cdf(-(m1 - m2) / (s1 - s2));
            let mut oracle = 0.0;
            for (a, b) in [(0.0, kink), (kink, 1.0)] {
                if b > a {
                    oracle += crate::quad::tanh_sinh(integrand(a, b), a, b, 1e-12).unwrap().value;
                }
            }
            let v = w1_gaussian(m1, s1, m2, s2).unwrap();
            assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
        }
    }

    #[test]
    fn folded_normal_examples() {
        let sqrt_2_pi = (2.0 / std::f64::consts::PI).sqrt();
        assert!((folded_normal_mean(0.0, 1.0).unwrap() - sqrt_2_pi).abs() < 1e-15);
        assert!((folded_normal_mean(10.0f64, 0.001).unwrap() - 10.0).abs() < 1e-9);
        assert!(folded_normal_mean(1.0, 0.0).is_err());
    }

    #[test]
    fn folded_normal_monte_carlo() {
        let mut rng = crate::rng::derive_stream(17, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| (1.0 + rng.normal::<f64>()).abs()).collect();
        let ms = crate::scalar::MeanStderr::from_samples(&xs);
        let exact = folded_normal_mean(1.0, 1.0).unwrap();
        assert!((ms.mean - exact).abs() < 3.0 * ms.stderr, "{} vs {exact}", ms.mean);
    }

    #[test]
    fn f32_instantiation() {
        let v = w1_gaussian(0.0f32, 2.0, 0.0, 1.0).unwrap();
        assert!((v - 0.797_884_6).abs() < 1e-6);
        let a = EmpiricalDist::<f32>::uniform(vec![0.0, 2.0]).unwrap();
        let b = EmpiricalDist::<f32>::uniform(vec![1.0, 3.0]).unwrap();
        assert_eq!(w1_empirical(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn empirical_converges_to_gaussian() {
        let n = 100_000;
        let mut r1 = crate::rng::derive_stream(99, 1);
        let mut r2 = crate::rng::derive_stream(99, 2);
        let a = EmpiricalDist::uniform((0..n).map(|_| 2.0 * r1.normal::<f64>()).collect()).unwrap();
        let b = EmpiricalDist::uniform((0..n).map(|_| r2.normal::<f64>()).collect()).unwrap();
        let gap = (w1_empirical(&a, &b).unwrap() - w1_gaussian(0.0, 2.0, 0.0, 1.0).unwrap()).abs();
        assert!(gap < 0.01, "gap {gap}");
    }

    #[test]
    fn w1_gaussian_shrinks_to_zero() {
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let eps = 0.5f64.powi(k);
            let v = w1_gaussian(0.3, 1.2, 0.3 + eps, 1.2 + 0.5 * eps).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn discrete_vs_gaussian_matches_quadrature() {
        let a = EmpiricalDist::weighted(vec![-0.4, 0.1, 1.3], vec![0.2, 0.5, 0.3]).unwrap();
        let (m, s) = (0.2, 0.7);
        let cdf_a = |t: f64| -> f64 {
            a.atoms().iter().zip(a.weights()).filter(|(x, _)| **x <= t).map(|(_, w)| *w).sum()
        };
        // Split at the atoms and at the points where Φ crosses each CDF level,
        // so every piece is smooth.
        let mut cuts = vec![-12.0, -0.4, 0.1, 1.3, 12.0];
        for c in [0.2, 0.7] {
            cuts.push(m + s * norm_quantile(c));
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut oracle = 0.0;
        for w in cuts.windows(2) {
            oracle += integrate(|t: f64| (cdf_a(t) - norm_cdf((t - m) / s)).abs(), w[0], w[1], 1e-12)
                .unwrap();
        }
        let v = w1_empirical_vs_gaussian(&a, m, s).unwrap();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
        // Degenerate Gaussian reduces to the discrete distance.
        let d = w1_empirical_vs_gaussian(&a, m, 0.0).unwrap();
        assert!((d - w1_empirical(&a, &emp(&[m])).unwrap()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn symmetric_and_translation_invariant(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..6),
            ys in proptest::collection::vec(-5.0f64..5.0, 1..6),
            c in -3.0f64..3.0,
        ) {
            let a = emp(&xs);
            let b = emp(&ys);
            let ab = w1_empirical(&a, &b).unwrap();
            prop_assert!((ab - w1_empirical(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((ab - w1_empirical(&a.shifted(c), &b.shifted(c)).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn triangle_inequality(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..5),
            ys in proptest::collection::vec(-5.0f64..5.0, 1..5),
            zs in proptest::collection::vec(-5.0f64..5.0, 1..5),
        ) {
            let (a, b, c) = (emp(&xs), emp(&ys), emp(&zs));
            let ab = w1_empirical(&a, &b).unwrap();
            let bc = w1_empirical(&b, &c).unwrap();
            let ac = w1_empirical(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn equal_size_matches_brute_force(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..6),
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let v = w1_empirical(&emp(&xs), &emp(&ys)).unwrap();
            prop_assert!((v - brute_force_w1(&xs, &ys)).abs() < 1e-12);
        }

        #[test]
        fn gaussian_translation_invariant(m1 in -3.0f64..3.0, s1 in 0.0f64..3.0,
                                          m2 in -3.0f64..3.0, s2 in 0.0f64..3.0, c in -5.0f64..5.0) {
            let v = w1_gaussian(m1, s1, m2, s2).unwrap();
            let w = w1_gaussian(m1 + c, s1, m2 + c, s2).unwrap();
            prop_assert!((v - w).abs() < 1e-12);
        }
    }
}
