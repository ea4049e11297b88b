//! Asymptotic secret-key rates.
//!
//! Two privacy-amplification penalties are implemented for round-robin DPS:
//! the original `h(1/(L-1))` and the tighter
//! `max_{0≤x≤1} φ[(L-1)x, 1-x] / (L-1)`. The high-dimensional BB84 rate is
//! kept for comparison. All entropies are in bits with `0·log 0 = 0`.

use crate::error::{check_probability, Error, Result};

/// `x log₂ x` with the entropy convention at zero.
fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary Shannon entropy.
pub fn h2(x: f64) -> Result<f64> {
    check_probability("x", x)?;
    Ok(-xlog2x(x) - xlog2x(1.0 - x))
}

/// Entropy of a symmetric `d`-ary error channel: `h2(x) + x log₂(d-1)`.
pub fn hd(x: f64, d: u32) -> Result<f64> {
    if d < 2 {
        return Err(Error::Domain {
            name: "d",
            value: d as f64,
            domain: "d >= 2",
        });
    }
    Ok(h2(x)? + x * ((d - 1) as f64).log2())
}

/// `φ[x, y] = -x log₂ x - y log₂ y + (x+y) log₂(x+y)`.
pub fn phi(x: f64, y: f64) -> Result<f64> {
    for (name, v) in [("x", x), ("y", y)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain {
                name,
                value: v,
                domain: "[0, inf)",
            });
        }
    }
    Ok(phi_unchecked(x, y))
}

fn phi_unchecked(x: f64, y: f64) -> f64 {
    -xlog2x(x) - xlog2x(y) + xlog2x(x + y)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

fn check_qber(e_b: f64) -> Result<()> {
    if (0.0..=0.5).contains(&e_b) {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "e_b",
            value: e_b,
            domain: "[0, 0.5]",
        })
    }
}

/// Key rate with the original penalty, `1 - h2(e_b) - h2(1/(L-1))`. May be negative.
pub fn rate_original(dim: usize, e_b: f64) -> Result<f64> {
    check_dim(dim)?;
    check_qber(e_b)?;
    Ok(1.0 - h2(e_b)? - h2(1.0 / (dim - 1) as f64)?)
}

/// Grid resolution for bracketing the inner maximum.
pub const PENALTY_GRID: usize = 1000;
/// Absolute tolerance on the maximizer.
pub const PENALTY_XTOL: f64 = 1e-10;

/// Maximizer and maximum of `x ↦ φ[(L-1)x, 1-x]` on `[0, 1]`.
///
/// A coarse grid brackets the peak, then golden-section search refines it.
pub fn penalty_maximizer(dim: usize) -> Result<(f64, f64)> {
    check_dim(dim)?;
    let k = (dim - 1) as f64;
    let f = |x: f64| phi_unchecked(k * x, 1.0 - x);

    let n = PENALTY_GRID;
    let (best, _) = (0..=n)
        .map(|i| (i, f(i as f64 / n as f64)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let lo = best.saturating_sub(1) as f64 / n as f64;
    let hi = (best + 1).min(n) as f64 / n as f64;
    Ok(golden_section_max(f, lo, hi, PENALTY_XTOL))
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > xtol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    let candidates = [(x, f(x)), (x1, f1), (x2, f2)];
    candidates
        .into_iter()
        .fold((x, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc })
}

/// `max_x φ[(L-1)x, 1-x] / (L-1)`.
pub fn improved_penalty(dim: usize) -> Result<f64> {
    let (_, max) = penalty_maximizer(dim)?;
    Ok(max / (dim - 1) as f64)
}

/// Key rate with the improved penalty. May be negative.
pub fn rate_improved(dim: usize, e_b: f64) -> Result<f64> {
    check_dim(dim)?;
    check_qber(e_b)?;
    Ok(1.0 - h2(e_b)? - improved_penalty(dim)?)
}

/// High-dimensional BB84: `log₂ d - 2 h_d(e_b)`.
pub fn rate_bb84(d: u32, e_b: f64) -> Result<f64> {
    check_probability("e_b", e_b)?;
    Ok((d as f64).log2() - 2.0 * hd(e_b, d)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bound {
    Original,
    Improved,
}

impl Bound {
    pub fn rate(self, dim: usize, e_b: f64) -> Result<f64> {
        match self {
            Bound::Original => rate_original(dim, e_b),
            Bound::Improved => rate_improved(dim, e_b),
        }
    }
}

pub const THRESHOLD_TOL: f64 = 1e-9;

/// Smallest QBER in `[0, 0.5]` at which the rate reaches zero (bisection).
///
/// Returns 0 when no key is possible even without errors.
pub fn threshold(dim: usize, bound: Bound) -> Result<f64> {
    check_dim(dim)?;
    // the penalty is e_b-independent, so solve h2(e) = 1 - penalty
    let penalty = match bound {
        Bound::Original => h2(1.0 / (dim - 1) as f64)?,
        Bound::Improved => improved_penalty(dim)?,
    };
    let rate = |e: f64| 1.0 - h2(e).expect("in [0, 0.5]") - penalty;
    if rate(0.0) <= 0.0 {
        return Ok(0.0);
    }
    if rate(0.5) > 0.0 {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > THRESHOLD_TOL {
        let mid = 0.5 * (lo + hi);
        if rate(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// QBER at which `bound` yields `rate`, by bisection on `[0, 0.5]`.
///
/// Useful for asking which unrounded error rate a quoted key rate implies.
pub fn qber_for_rate(dim: usize, bound: Bound, rate: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 0.5);
    let r_lo = bound.rate(dim, lo)?;
    let r_hi = bound.rate(dim, hi)?;
    if !(r_hi <= rate && rate <= r_lo) {
        return Err(Error::Domain {
            name: "rate",
            value: rate,
            domain: "reachable rates for this L",
        });
    }
    while hi - lo > THRESHOLD_TOL {
        let mid = 0.5 * (lo + hi);
        if bound.rate(dim, mid)? > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rates and thresholds for one `(L, e_b)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateReport {
    pub dim: usize,
    pub e_b: f64,
    pub r_original_raw: f64,
    pub r_improved_raw: f64,
    pub threshold_original: f64,
    pub threshold_improved: f64,
}

impl KeyRateReport {
    pub fn compute(dim: usize, e_b: f64) -> Result<Self> {
        Ok(Self {
            dim,
            e_b,
            r_original_raw: rate_original(dim, e_b)?,
            r_improved_raw: rate_improved(dim, e_b)?,
            threshold_original: threshold(dim, Bound::Original)?,
            threshold_improved: threshold(dim, Bound::Improved)?,
        })
    }

    pub fn r_original(&self) -> f64 {
        self.r_original_raw.max(0.0)
    }

    pub fn r_improved(&self) -> f64 {
        self.r_improved_raw.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_entropy() {
        assert_eq!(h2(0.5).unwrap(), 1.0);
        assert_eq!(h2(0.0).unwrap(), 0.0);
        assert_eq!(h2(1.0).unwrap(), 0.0);
        assert!((h2(0.069).unwrap() - 0.3622).abs() < 5e-5);
        assert!(h2(-0.1).is_err());
        assert!(h2(1.1).is_err());
        assert!(h2(f64::NAN).is_err());
    }

    #[test]
    fn dary_entropy() {
        for x in [0.0, 0.1, 0.37, 0.5, 1.0] {
            assert_eq!(hd(x, 2).unwrap(), h2(x).unwrap());
        }
        for d in 2..20u32 {
            assert_eq!(hd(0.0, d).unwrap(), 0.0);
            let x = (d - 1) as f64 / d as f64;
            assert!((hd(x, d).unwrap() - (d as f64).log2()).abs() < 1e-12);
        }
        assert!(hd(0.1, 1).is_err());
    }

    #[test]
    fn phi_identities() {
        for x in [0.0, 0.3, 1.0, 7.5] {
            assert_eq!(phi(x, 0.0).unwrap(), 0.0);
            assert!((phi(x, x).unwrap() - 2.0 * x).abs() < 1e-12);
        }
        // 1.5 log2(2.4/1.5) + 0.9 log2(2.4/0.9), evaluated to 10 digits offline
        assert!((phi(1.5, 0.9).unwrap() - 2.290641607).abs() < 1e-9);
        assert!(phi(-1.0, 0.5).is_err());
        assert!(phi(0.5, -1e-3).is_err());
    }

    #[test]
    fn original_rate() {
        for dim in 2..30 {
            let want = 1.0 - h2(1.0 / (dim - 1) as f64).unwrap();
            assert!((rate_original(dim, 0.0).unwrap() - want).abs() < 1e-15);
        }
        for i in 0..=50 {
            assert!(rate_original(3, i as f64 / 100.0).unwrap() <= 0.0);
        }
        assert!(rate_original(6, 0.039).unwrap() > 0.0);
        assert_eq!(rate_original(2, 0.0).unwrap(), 1.0);
        assert!(rate_original(1, 0.0).is_err());
        assert!(rate_original(4, 0.6).is_err());
    }

    #[test]
    fn improved_rate_examples() {
        assert!((rate_improved(16, 0.069).unwrap() - 0.440).abs() <= 0.002);
        assert!((rate_improved(3, 0.016).unwrap() - 0.188).abs() <= 0.002);
        let (x, max) = penalty_maximizer(2).unwrap();
        assert!((x - 0.5).abs() < 1e-8);
        assert!((max - 1.0).abs() < 1e-15);
        assert!(rate_improved(2, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn bb84_rate() {
        assert_eq!(rate_bb84(2, 0.0).unwrap(), 1.0);
        for d in [2, 3, 4, 8, 16] {
            assert!((rate_bb84(d, 0.0).unwrap() - (d as f64).log2()).abs() < 1e-15);
        }
        // bisection on the formula puts the qubit zero crossing at 0.110028
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if rate_bb84(2, mid).unwrap() > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((lo - 0.110028).abs() < 1e-6);
        assert!(rate_bb84(2, 0.11).unwrap().abs() < 0.01);
        assert!(rate_bb84(1, 0.0).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(threshold(3, Bound::Original).unwrap(), 0.0);
        assert!(threshold(5, Bound::Original).unwrap() < 0.034);
        assert!(threshold(6, Bound::Original).unwrap() > 0.039);
        for dim in 3..70 {
            for bound in [Bound::Original, Bound::Improved] {
                let t = threshold(dim, bound).unwrap();
                if t > 0.0 {
                    assert!(bound.rate(dim, t).unwrap() <= 0.0);
                    assert!(bound.rate(dim, (t - 2.0 * THRESHOLD_TOL).max(0.0)).unwrap() > 0.0);
                }
            }
        }
        assert!(threshold(1, Bound::Improved).is_err());
    }

    #[test]
    fn rates_decrease_with_qber() {
        for dim in [2, 3, 5, 8, 16, 64] {
            for bound in [Bound::Original, Bound::Improved] {
                let rates: Vec<f64> = (0..100)
                    .map(|i| bound.rate(dim, 0.5 * i as f64 / 99.0).unwrap())
                    .collect();
                assert!(rates.windows(2).all(|w| w[1] < w[0]), "L={dim} {bound:?}");
            }
        }
    }

    #[test]
    fn improved_dominates_original() {
        for dim in 3..=64 {
            for i in 0..=30 {
                let e = 0.01 * i as f64;
                let a = rate_improved(dim, e).unwrap();
                let b = rate_original(dim, e).unwrap();
                assert!(a >= b - 1e-12, "L={dim} e={e}: {a} < {b}");
            }
        }
    }

    #[test]
    fn inner_objective_shape() {
        for dim in [3, 4, 8, 16, 64, 200] {
            let k = (dim - 1) as f64;
            assert_eq!(phi(0.0, 1.0).unwrap(), 0.0);
            assert_eq!(phi(k, 0.0).unwrap(), 0.0);
            let (x, max) = penalty_maximizer(dim).unwrap();
            assert!(x > 0.0 && x < 1.0);
            assert!(max > 0.0);
        }
    }

    #[test]
    fn golden_section_matches_brute_force_scan() {
        for dim in [3usize, 8, 16, 64] {
            let k = (dim - 1) as f64;
            let n = 1_000_000;
            let brute = (0..=n)
                .map(|i| {
                    let x = i as f64 / n as f64;
                    phi(k * x, 1.0 - x).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let (_, max) = penalty_maximizer(dim).unwrap();
            assert!((max - brute).abs() < 1e-8, "L={dim}: {max} vs {brute}");
            assert!(max >= brute - 1e-15);
        }
    }

    #[test]
    fn rate_inversion() {
        for (dim, e) in [(3, 0.016), (8, 0.2), (64, 0.3)] {
            let r = rate_improved(dim, e).unwrap();
            assert!((qber_for_rate(dim, Bound::Improved, r).unwrap() - e).abs() < 1e-8);
        }
        assert!(qber_for_rate(4, Bound::Improved, 2.0).is_err());
    }

    #[test]
    fn report_clamps() {
        let r = KeyRateReport::compute(3, 0.2).unwrap();
        assert!(r.r_original_raw < 0.0);
        assert_eq!(r.r_original(), 0.0);
        assert_eq!(r.threshold_original, 0.0);
        let r = KeyRateReport::compute(16, 0.069).unwrap();
        assert_eq!(r.r_improved(), r.r_improved_raw);
    }
}
