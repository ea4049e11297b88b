//! The L-mode OAM state space.
//!
//! Alice's states are equal-weight superpositions of L OAM eigenstates whose
//! signs carry a random bit string. Bob projects onto two-mode superpositions
//! `(|m> ± |m-r>)/√2`, which physically amounts to a single phase element with
//! transmission `exp(-imφ)(1 ± exp(irφ))/√2` followed by single-mode-fibre
//! filtering. [`azimuthal_overlap`] evaluates that optical picture on a
//! sampled azimuth and serves as a numeric cross-check of the analytic
//! inner products in [`detection_probability`].

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// The ordered OAM labels used for dimension `L`.
///
/// Even `L` skips `ℓ = 0`: `{-L/2, …, -1, 1, …, L/2}`. Odd `L` is centred:
/// `{-(L-1)/2, …, (L-1)/2}`. The position of a label in this list is its
/// *slot*.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModeIndexSet {
    labels: Vec<i32>,
}

impl ModeIndexSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 || dim > i32::MAX as usize / 4 {
            return Err(Error::InvalidDimension(dim));
        }
        let half = (dim / 2) as i32;
        let labels = if dim.is_multiple_of(2) {
            (-half..=half).filter(|&l| l != 0).collect()
        } else {
            (-half..=half).collect()
        };
        Ok(Self { labels })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn label(&self, slot: usize) -> i32 {
        self.labels[slot]
    }

    pub fn slot_of(&self, label: i32) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    pub fn contains(&self, label: i32) -> bool {
        self.slot_of(label).is_some()
    }

    pub fn max_abs_label(&self) -> i32 {
        (self.dim() / 2) as i32
    }

    /// Number of unordered label pairs, `L(L-1)/2`.
    pub fn pair_count(&self) -> usize {
        let l = self.dim();
        l * (l - 1) / 2
    }

    /// All measurement pairs, ordered lexicographically by `(slot_low, slot_high)`.
    ///
    /// The higher-slot label is reported as `m` so that `r = m - (m-r)` is positive.
    pub fn pairs(&self) -> impl Iterator<Item = ModePair> + '_ {
        let l = self.dim();
        (0..l).flat_map(move |lo| {
            (lo + 1..l).map(move |hi| ModePair {
                m: self.labels[hi],
                m_minus_r: self.labels[lo],
            })
        })
    }

    /// The pair at position `index` of [`ModeIndexSet::pairs`].
    pub fn pair_at(&self, index: usize) -> Option<ModePair> {
        let l = self.dim();
        let mut remaining = index;
        for lo in 0..l {
            let row = l - 1 - lo;
            if remaining < row {
                let hi = lo + 1 + remaining;
                return Some(ModePair {
                    m: self.labels[hi],
                    m_minus_r: self.labels[lo],
                });
            }
            remaining -= row;
        }
        None
    }

    /// Inverse of [`ModeIndexSet::pair_at`]; orientation of the pair is ignored.
    pub fn pair_index(&self, pair: &ModePair) -> Option<usize> {
        let a = self.slot_of(pair.m)?;
        let b = self.slot_of(pair.m_minus_r)?;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let l = self.dim();
        // rows 0..lo contribute (l-1) + (l-2) + … + (l-lo)
        let before = lo * (2 * l - lo - 1) / 2;
        Some(before + (hi - lo - 1))
    }
}

/// Alice's sign pattern `s`, one bit per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhasePattern {
    bits: Vec<bool>,
}

impl PhasePattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format(format!("bad bit {other:?} in pattern {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    /// Canonical pattern number `index` for dimension `dim`: `bits[0] = 0` and
    /// the remaining `dim - 1` bits spell `index` in binary, most significant first.
    pub fn from_canonical_index(dim: usize, index: u128) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let free = dim - 1;
        if free > 127 || index >= (1u128 << free) {
            return Err(Error::Domain {
                name: "canonical state index",
                value: index as f64,
                domain: "[0, 2^(L-1))",
            });
        }
        let mut bits = vec![false; dim];
        for (k, bit) in bits[1..].iter_mut().enumerate() {
            *bit = (index >> (free - 1 - k)) & 1 == 1;
        }
        Ok(Self { bits })
    }

    /// Position of the canonical representative in ascending enumeration order.
    pub fn canonical_index(&self) -> u128 {
        self.canonical().bits[1..]
            .iter()
            .fold(0u128, |acc, &b| (acc << 1) | b as u128)
    }

    /// `2^(L-1)`, the number of physically distinct states.
    pub fn canonical_count(dim: usize) -> u128 {
        1u128 << (dim - 1)
    }

    pub fn all_canonical(dim: usize) -> impl Iterator<Item = PhasePattern> {
        (0..Self::canonical_count(dim))
            .map(move |i| Self::from_canonical_index(dim, i).expect("index in range"))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bit(&self, slot: usize) -> bool {
        self.bits[slot]
    }

    pub fn flipped(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.bits.first().is_some_and(|b| !b)
    }

    /// Global-phase representative with `bits[0] = 0`.
    pub fn canonical(&self) -> Self {
        if self.bits.first().copied().unwrap_or(false) {
            self.flipped()
        } else {
            self.clone()
        }
    }

    /// `s_m ⊕ s_{m-r}` for a measurement pair.
    pub fn parity(&self, idx: &ModeIndexSet, pair: &ModePair) -> Result<bool> {
        if self.len() != idx.dim() {
            return Err(Error::DimensionMismatch {
                expected: idx.dim(),
                actual: self.len(),
            });
        }
        let a = idx.slot_of(pair.m).ok_or(Error::OutOfBand(pair.m))?;
        let b = idx
            .slot_of(pair.m_minus_r)
            .ok_or(Error::OutOfBand(pair.m_minus_r))?;
        Ok(self.bits[a] ^ self.bits[b])
    }
}

impl fmt::Display for PhasePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Complex amplitudes over integer OAM labels.
///
/// Labels outside the protocol band are allowed; channels can leak amplitude there.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector {
    amps: BTreeMap<i32, Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(amps: impl IntoIterator<Item = (i32, Complex64)>) -> Self {
        Self {
            amps: amps.into_iter().collect(),
        }
    }

    pub fn basis(label: i32) -> Self {
        Self::from_amplitudes([(label, Complex64::new(1.0, 0.0))])
    }

    pub fn amplitude(&self, label: i32) -> Complex64 {
        self.amps.get(&label).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, Complex64)> + '_ {
        self.amps.iter().map(|(&l, &a)| (l, a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&i32, &mut Complex64)> {
        self.amps.iter_mut()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= tol
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        let (small, large, conj_small) = if self.amps.len() <= other.amps.len() {
            (self, other, true)
        } else {
            (other, self, false)
        };
        small
            .amps
            .iter()
            .filter_map(|(l, a)| large.amps.get(l).map(|b| (*a, *b)))
            .map(|(a, b)| if conj_small { a.conj() * b } else { b.conj() * a })
            .sum()
    }

    pub fn max_abs_label(&self) -> i32 {
        self.amps.keys().map(|l| l.abs()).max().unwrap_or(0)
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.amps.values_mut() {
            *a *= factor;
        }
    }
}

/// Prepares `(1/√L) Σ_ℓ (-1)^{s_ℓ} |ℓ⟩`.
pub fn prepare_state(pattern: &PhasePattern, idx: &ModeIndexSet) -> Result<StateVector> {
    if pattern.len() != idx.dim() {
        return Err(Error::DimensionMismatch {
            expected: idx.dim(),
            actual: pattern.len(),
        });
    }
    let amp = 1.0 / (idx.dim() as f64).sqrt();
    Ok(StateVector::from_amplitudes(
        idx.labels().iter().zip(pattern.bits()).map(|(&l, &s)| {
            let sign = if s { -amp } else { amp };
            (l, Complex64::new(sign, 0.0))
        }),
    ))
}

/// Relative phase branch of Bob's projector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// An unordered pair of distinct in-band labels `{m, m-r}` interfered by Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModePair {
    m: i32,
    m_minus_r: i32,
}

impl ModePair {
    pub fn new(idx: &ModeIndexSet, m: i32, m_minus_r: i32) -> Result<Self> {
        if m == m_minus_r {
            return Err(Error::InvalidSetting(format!(
                "m and m-r must differ (both are {m})"
            )));
        }
        for l in [m, m_minus_r] {
            if !idx.contains(l) {
                return Err(Error::OutOfBand(l));
            }
        }
        Ok(Self { m, m_minus_r })
    }

    pub fn m(&self) -> i32 {
        self.m
    }

    pub fn m_minus_r(&self) -> i32 {
        self.m_minus_r
    }

    /// `r = m - (m-r)` in OAM units (not slots).
    pub fn shift(&self) -> i32 {
        self.m - self.m_minus_r
    }

    /// The same pair announced the other way round.
    pub fn reversed(&self) -> Self {
        Self {
            m: self.m_minus_r,
            m_minus_r: self.m,
        }
    }

    pub fn branch(&self, sign: Sign) -> ProjectorSetting {
        ProjectorSetting { pair: *self, sign }
    }
}

impl fmt::Display for ModePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.m, self.m_minus_r)
    }
}

/// One output port of Bob's measurement: `(|m⟩ ± |m-r⟩)/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProjectorSetting {
    pub pair: ModePair,
    pub sign: Sign,
}

impl ProjectorSetting {
    pub fn new(idx: &ModeIndexSet, m: i32, m_minus_r: i32, sign: Sign) -> Result<Self> {
        Ok(ModePair::new(idx, m, m_minus_r)?.branch(sign))
    }

    pub fn m(&self) -> i32 {
        self.pair.m
    }

    pub fn m_minus_r(&self) -> i32 {
        self.pair.m_minus_r
    }

    pub fn shift(&self) -> i32 {
        self.pair.shift()
    }

    /// `t(φ) = exp(-imφ)(1 ± exp(irφ))/√2`.
    pub fn transmission(&self, phi: f64) -> Complex64 {
        let m = self.m() as f64;
        let r = self.shift() as f64;
        Complex64::cis(-m * phi) * (1.0 + self.sign.value() * Complex64::cis(r * phi))
            / std::f64::consts::SQRT_2
    }
}

pub fn make_projector(setting: &ProjectorSetting) -> StateVector {
    let amp = std::f64::consts::FRAC_1_SQRT_2;
    StateVector::from_amplitudes([
        (setting.m(), Complex64::new(amp, 0.0)),
        (setting.m_minus_r(), Complex64::new(setting.sign.value() * amp, 0.0)),
    ])
}

/// `|⟨proj|psi⟩|²`.
pub fn detection_probability(psi: &StateVector, proj: &StateVector) -> f64 {
    proj.inner(psi).norm_sqr()
}

pub fn transmission_function(setting: &ProjectorSetting) -> impl Fn(f64) -> Complex64 {
    let setting = *setting;
    move |phi| setting.transmission(phi)
}

/// Uniform sampling of the azimuth `φ ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AzimuthalGrid {
    samples: usize,
}

impl Default for AzimuthalGrid {
    fn default() -> Self {
        Self { samples: 1024 }
    }
}

impl AzimuthalGrid {
    pub fn new(samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Domain {
                name: "grid samples",
                value: 0.0,
                domain: "N >= 1",
            });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn required_samples(max_abs_label: i32) -> usize {
        4 * max_abs_label.unsigned_abs() as usize + 4
    }

    pub fn check(&self, max_abs_label: i32) -> Result<()> {
        let required = Self::required_samples(max_abs_label);
        if self.samples < required {
            return Err(Error::Aliasing {
                samples: self.samples,
                max_label: max_abs_label,
                required,
            });
        }
        Ok(())
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> {
        let n = self.samples;
        (0..n).map(move |k| TAU * k as f64 / n as f64)
    }
}

/// The azimuthal field `ψ(φ) = Σ a_ℓ exp(iℓφ)` sampled on a grid.
///
/// Sampling once and overlapping with many transmission functions is much
/// cheaper than resynthesizing the field for every setting.
#[derive(Debug, Clone)]
pub struct SampledField {
    grid: AzimuthalGrid,
    max_abs_label: i32,
    values: Vec<Complex64>,
}

impl SampledField {
    pub fn new(psi: &StateVector, grid: AzimuthalGrid) -> Result<Self> {
        let max_abs_label = psi.max_abs_label();
        grid.check(max_abs_label)?;
        let values = grid
            .angles()
            .map(|phi| psi.iter().map(|(l, a)| a * Complex64::cis(l as f64 * phi)).sum())
            .collect();
        Ok(Self {
            grid,
            max_abs_label,
            values,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `|(1/2π) ∮ ψ(φ) t(φ) dφ|²`, the power coupled into the fibre behind
    /// Bob's phase element. Trapezoid quadrature, exact for the harmonics
    /// admitted by the grid check.
    pub fn overlap(&self, setting: &ProjectorSetting) -> Result<f64> {
        let max = self
            .max_abs_label
            .max(setting.m().abs())
            .max(setting.m_minus_r().abs());
        self.grid.check(max)?;
        let sum: Complex64 = self
            .grid
            .angles()
            .zip(&self.values)
            .map(|(phi, v)| v * setting.transmission(phi))
            .sum();
        Ok((sum / self.grid.samples() as f64).norm_sqr())
    }
}

pub fn azimuthal_overlap(
    psi: &StateVector,
    setting: &ProjectorSetting,
    grid: AzimuthalGrid,
) -> Result<f64> {
    let max = psi
        .max_abs_label()
        .max(setting.m().abs())
        .max(setting.m_minus_r().abs());
    grid.check(max)?;
    SampledField::new(psi, grid)?.overlap(setting)
}

/// Phase of Alice's generating hologram, `arg Σ_ℓ (-1)^{s_ℓ} exp(iℓφ_k)`, in `(-π, π]`.
///
/// Samples where the superposition vanishes (below 1e-12) report phase 0.
pub fn generation_phase_profile(
    pattern: &PhasePattern,
    idx: &ModeIndexSet,
    grid: AzimuthalGrid,
) -> Result<Vec<f64>> {
    let psi = prepare_state(pattern, idx)?;
    grid.check(idx.max_abs_label())?;
    let field = SampledField::new(&psi, grid)?;
    let norm = (idx.dim() as f64).sqrt();
    Ok(field
        .values()
        .iter()
        .map(|v| {
            let v = v * norm;
            if v.norm() < 1e-12 {
                return 0.0;
            }
            let arg = v.arg();
            // snap the branch cut so real negative sums read as +π
            if arg < -PI + 1e-12 {
                arg + TAU
            } else {
                arg
            }
        })
        .collect())
}
