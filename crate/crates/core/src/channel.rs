//! Noise models for the free-space link and detector.
//!
//! Every model has two faces: [`PreparedChannel::apply`] draws one stochastic
//! realization for Monte Carlo rounds, and [`PreparedChannel::expected_density`]
//! gives the ensemble-averaged density matrix used for analytic detection
//! probabilities. The two must agree in expectation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_probability, Error, Result};
use crate::matrix::DetectionMatrix;
use crate::modes::{ModeIndexSet, StateVector};

/// Guard labels added on each side of the band for the crosstalk generator.
pub const GUARD_SLOTS: usize = 2;

const NORM_TOL: f64 = 1e-9;

/// Deterministic per-mode phase `θ(ℓ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseProfile {
    /// `θ(ℓ) = coeff · ℓ²`, the shape of a Gouy-type propagation phase.
    Quadratic { coeff: f64 },
    /// Explicit per-label phases; missing labels get 0.
    Table(BTreeMap<i32, f64>),
}

impl PhaseProfile {
    pub fn phase(&self, label: i32) -> f64 {
        match self {
            PhaseProfile::Quadratic { coeff } => coeff * (label as f64).powi(2),
            PhaseProfile::Table(t) => t.get(&label).copied().unwrap_or(0.0),
        }
    }

    pub fn negated(&self) -> Self {
        match self {
            PhaseProfile::Quadratic { coeff } => PhaseProfile::Quadratic { coeff: -coeff },
            PhaseProfile::Table(t) => PhaseProfile::Table(t.iter().map(|(&l, &v)| (l, -v)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelModel {
    Identity,
    /// Independent Gaussian phase noise of std-dev `sigma` (radians) on each mode, per round.
    Dephasing { sigma: f64 },
    /// `U = exp(iεH)` with `H` the nearest-neighbour hopping matrix in slot order,
    /// extended by [`GUARD_SLOTS`] labels either side of the band.
    Crosstalk { epsilon: f64 },
    ModePhase(PhaseProfile),
    /// Hard cutoff at `|ℓ| > l_max` plus a uniform background click probability.
    Aperture { l_max: u32, p_bg: f64 },
    /// With probability `p`, the state is replaced by a uniformly random in-band basis state.
    WhiteNoise { p: f64 },
    /// Detection probabilities taken from a measured or previously computed matrix.
    Empirical(Box<DetectionMatrix>),
}

impl ChannelModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ChannelModel::Identity => "identity",
            ChannelModel::Dephasing { .. } => "dephasing",
            ChannelModel::Crosstalk { .. } => "crosstalk",
            ChannelModel::ModePhase(_) => "mode_phase",
            ChannelModel::Aperture { .. } => "aperture",
            ChannelModel::WhiteNoise { .. } => "white_noise",
            ChannelModel::Empirical(_) => "empirical",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelModel::Dephasing { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::Domain {
                        name: "sigma",
                        value: *sigma,
                        domain: "[0, inf)",
                    });
                }
            }
            ChannelModel::Crosstalk { epsilon } => {
                check_probability("epsilon", *epsilon)?;
            }
            ChannelModel::Aperture { p_bg, .. } => {
                check_probability("p_bg", *p_bg)?;
            }
            ChannelModel::WhiteNoise { p } => {
                check_probability("p", *p)?;
            }
            ChannelModel::ModePhase(PhaseProfile::Quadratic { coeff }) if !coeff.is_finite() => {
                return Err(Error::Domain {
                    name: "quad",
                    value: *coeff,
                    domain: "finite",
                });
            }
            _ => {}
        }
        Ok(())
    }

    /// Background click probability contributed by the model itself.
    pub fn background(&self) -> f64 {
        match self {
            ChannelModel::Aperture { p_bg, .. } => *p_bg,
            _ => 0.0,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            ChannelModel::Dephasing { .. } | ChannelModel::WhiteNoise { .. }
        )
    }

    /// Binds the model to a mode band and precomputes anything round-independent.
    pub fn prepare(&self, idx: &ModeIndexSet) -> Result<PreparedChannel<'_>> {
        self.validate()?;
        let crosstalk = match self {
            ChannelModel::Crosstalk { epsilon } => Some(CrosstalkUnitary::new(idx, *epsilon)),
            _ => None,
        };
        Ok(PreparedChannel {
            model: self,
            idx: idx.clone(),
            crosstalk,
        })
    }

    /// Parses a descriptor and, for `empirical:path=FILE`, loads the matrix file.
    pub fn from_descriptor(s: &str) -> Result<Self> {
        let (kind, params) = split_descriptor(s)?;
        if kind == "empirical" {
            let path = params
                .iter()
                .find(|(k, _)| *k == "path")
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::BadDescriptor(format!("{s}: empirical needs path=FILE")))?;
            if let Some((k, _)) = params.iter().find(|(k, _)| *k != "path") {
                return Err(Error::BadDescriptor(format!("unknown parameter {k:?}")));
            }
            let matrix = DetectionMatrix::read_file(Path::new(path))?;
            return Ok(ChannelModel::Empirical(Box::new(matrix)));
        }
        s.parse()
    }
}

fn split_descriptor(s: &str) -> Result<(&str, Vec<(&str, &str)>)> {
    let s = s.trim();
    let (kind, rest) = match s.split_once(':') {
        Some((k, r)) => (k.trim(), Some(r)),
        None => (s, None),
    };
    let mut params = Vec::new();
    if let Some(rest) = rest {
        for token in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| Error::BadDescriptor(format!("expected key=value, got {token:?}")))?;
            params.push((k.trim(), v.trim()));
        }
    }
    Ok((kind, params))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::BadDescriptor(format!("bad value {value:?} for {key:?}")))
}

impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, mut params) = split_descriptor(s)?;
        fn take<'a>(params: &mut Vec<(&str, &'a str)>, name: &str) -> Option<&'a str> {
            let pos = params.iter().position(|(k, _)| *k == name)?;
            Some(params.remove(pos).1)
        }
        let model = match kind {
            "identity" => ChannelModel::Identity,
            "dephasing" => ChannelModel::Dephasing {
                sigma: parse_num("sigma", take(&mut params, "sigma").unwrap_or("0"))?,
            },
            "crosstalk" => ChannelModel::Crosstalk {
                epsilon: parse_num("eps", take(&mut params, "eps").unwrap_or("0"))?,
            },
            "aperture" => ChannelModel::Aperture {
                l_max: parse_num(
                    "lmax",
                    take(&mut params, "lmax").ok_or_else(|| Error::BadDescriptor("aperture needs lmax".into()))?,
                )?,
                p_bg: parse_num("pbg", take(&mut params, "pbg").unwrap_or("0"))?,
            },
            "white_noise" => ChannelModel::WhiteNoise {
                p: parse_num("p", take(&mut params, "p").unwrap_or("0"))?,
            },
            "mode_phase" => {
                if let Some(q) = take(&mut params, "quad") {
                    ChannelModel::ModePhase(PhaseProfile::Quadratic {
                        coeff: parse_num("quad", q)?,
                    })
                } else {
                    let table = params
                        .drain(..)
                        .map(|(k, v)| Ok((parse_num::<i32>("label", k)?, parse_num("phase", v)?)))
                        .collect::<Result<BTreeMap<_, _>>>()?;
                    ChannelModel::ModePhase(PhaseProfile::Table(table))
                }
            }
            "empirical" => {
                return Err(Error::BadDescriptor(
                    "empirical channels must be loaded with from_descriptor".into(),
                ))
            }
            other => return Err(Error::BadDescriptor(format!("unknown channel kind {other:?}"))),
        };
        if let Some((k, _)) = params.first() {
            return Err(Error::BadDescriptor(format!("unknown parameter {k:?} for {kind}")));
        }
        model.validate()?;
        Ok(model)
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelModel::Identity => write!(f, "identity"),
            ChannelModel::Dephasing { sigma } => write!(f, "dephasing:sigma={sigma}"),
            ChannelModel::Crosstalk { epsilon } => write!(f, "crosstalk:eps={epsilon}"),
            ChannelModel::ModePhase(PhaseProfile::Quadratic { coeff }) => {
                write!(f, "mode_phase:quad={coeff}")
            }
            ChannelModel::ModePhase(PhaseProfile::Table(t)) => {
                write!(f, "mode_phase")?;
                for (i, (l, v)) in t.iter().enumerate() {
                    write!(f, "{}{l}={v}", if i == 0 { ':' } else { ',' })?;
                }
                Ok(())
            }
            ChannelModel::Aperture { l_max, p_bg } => write!(f, "aperture:lmax={l_max},pbg={p_bg}"),
            ChannelModel::WhiteNoise { p } => write!(f, "white_noise:p={p}"),
            ChannelModel::Empirical(m) => write!(f, "empirical:L={}", m.dim),
        }
    }
}

/// Returns the channel undoing `mode_phase(theta)`.
pub fn gouy_compensation(theta: &PhaseProfile) -> ChannelModel {
    ChannelModel::ModePhase(theta.negated())
}

/// One realization of the channel acting on a pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    /// Normalized output state (empty when nothing survives).
    pub state: StateVector,
    pub survival: f64,
    pub p_bg: f64,
}

/// Ensemble-averaged channel output.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedOutput {
    pub rho: DensityMatrix,
    pub survival: f64,
    pub p_bg: f64,
}

#[derive(Debug, Clone)]
pub struct PreparedChannel<'a> {
    model: &'a ChannelModel,
    idx: ModeIndexSet,
    crosstalk: Option<CrosstalkUnitary>,
}

impl PreparedChannel<'_> {
    pub fn model(&self) -> &ChannelModel {
        self.model
    }

    fn check_input(psi: &StateVector) -> Result<()> {
        let n = psi.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(())
    }

    fn pure(&self, state: StateVector) -> ChannelOutput {
        ChannelOutput {
            state,
            survival: 1.0,
            p_bg: 0.0,
        }
    }

    fn with_phases(psi: &StateVector, phase: impl Fn(i32) -> f64) -> StateVector {
        StateVector::from_amplitudes(psi.iter().map(|(l, a)| (l, a * Complex64::cis(phase(l)))))
    }

    fn aperture(psi: &StateVector, l_max: u32) -> (StateVector, f64) {
        let mut kept =
            StateVector::from_amplitudes(psi.iter().filter(|(l, _)| l.unsigned_abs() <= l_max));
        let survival = kept.norm_sqr();
        if survival > 0.0 {
            kept.scale(1.0 / survival.sqrt());
        }
        (kept, survival)
    }

    /// Draws one channel realization.
    pub fn apply<R: Rng + ?Sized>(&self, psi: &StateVector, rng: &mut R) -> Result<ChannelOutput> {
        Self::check_input(psi)?;
        Ok(match self.model {
            ChannelModel::Identity => self.pure(psi.clone()),
            ChannelModel::Dephasing { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                let state = StateVector::from_amplitudes(
                    psi.iter()
                        .map(|(l, a)| (l, a * Complex64::cis(normal.sample(rng)))),
                );
                self.pure(state)
            }
            ChannelModel::Crosstalk { .. } => {
                let u = self.crosstalk.as_ref().expect("prepared");
                self.pure(u.apply(psi))
            }
            ChannelModel::ModePhase(profile) => self.pure(Self::with_phases(psi, |l| profile.phase(l))),
            ChannelModel::Aperture { l_max, p_bg } => {
                let (state, survival) = Self::aperture(psi, *l_max);
                ChannelOutput {
                    state,
                    survival,
                    p_bg: *p_bg,
                }
            }
            ChannelModel::WhiteNoise { p } => {
                let u: f64 = rng.random();
                if u < *p {
                    let slot = rng.random_range(0..self.idx.dim());
                    self.pure(StateVector::basis(self.idx.label(slot)))
                } else {
                    self.pure(psi.clone())
                }
            }
            ChannelModel::Empirical(_) => return Err(Error::NotAStateMap("empirical")),
        })
    }

    /// Expected output density matrix over the channel's randomness.
    pub fn expected_density(&self, psi: &StateVector) -> Result<MixedOutput> {
        Self::check_input(psi)?;
        let pure = |out: ChannelOutput| MixedOutput {
            rho: DensityMatrix::pure(&out.state),
            survival: out.survival,
            p_bg: out.p_bg,
        };
        Ok(match self.model {
            ChannelModel::Identity => pure(self.pure(psi.clone())),
            ChannelModel::ModePhase(profile) => {
                pure(self.pure(Self::with_phases(psi, |l| profile.phase(l))))
            }
            ChannelModel::Crosstalk { .. } => {
                pure(self.pure(self.crosstalk.as_ref().expect("prepared").apply(psi)))
            }
            ChannelModel::Aperture { l_max, p_bg } => {
                let (state, survival) = Self::aperture(psi, *l_max);
                pure(ChannelOutput {
                    state,
                    survival,
                    p_bg: *p_bg,
                })
            }
            ChannelModel::Dephasing { sigma } => {
                // E[exp(i(δa - δb))] = exp(-σ²) for independent δ ~ N(0, σ²)
                let coherence = (-sigma * sigma).exp();
                let mut rho = DensityMatrix::pure(psi);
                rho.scale_coherences(coherence);
                MixedOutput {
                    rho,
                    survival: 1.0,
                    p_bg: 0.0,
                }
            }
            ChannelModel::WhiteNoise { p } => {
                let mut labels: Vec<i32> = psi.iter().map(|(l, _)| l).collect();
                labels.extend_from_slice(self.idx.labels());
                let mut rho = DensityMatrix::zeros(labels);
                rho.add_pure(psi, 1.0 - p);
                let w = p / self.idx.dim() as f64;
                for &l in self.idx.labels() {
                    rho.add_pure(&StateVector::basis(l), w);
                }
                MixedOutput {
                    rho,
                    survival: 1.0,
                    p_bg: 0.0,
                }
            }
            ChannelModel::Empirical(_) => return Err(Error::NotAStateMap("empirical")),
        })
    }
}

/// Applies `ch` to `psi` with a fresh preparation. For many rounds, prepare once instead.
pub fn apply_channel<R: Rng + ?Sized>(
    ch: &ChannelModel,
    psi: &StateVector,
    idx: &ModeIndexSet,
    rng: &mut R,
) -> Result<ChannelOutput> {
    ch.prepare(idx)?.apply(psi, rng)
}

/// Dense Hermitian matrix over a sorted label list.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    labels: Vec<i32>,
    data: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn zeros(mut labels: Vec<i32>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        let n = labels.len();
        Self {
            labels,
            data: vec![Complex64::default(); n * n],
        }
    }

    pub fn pure(psi: &StateVector) -> Self {
        let mut rho = Self::zeros(psi.iter().map(|(l, _)| l).collect());
        rho.add_pure(psi, 1.0);
        rho
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    fn pos(&self, label: i32) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    /// `ρ += weight · |psi⟩⟨psi|`; `psi` labels must already be present.
    fn add_pure(&mut self, psi: &StateVector, weight: f64) {
        let n = self.labels.len();
        let entries: Vec<(usize, Complex64)> = psi
            .iter()
            .map(|(l, a)| (self.pos(l).expect("label registered"), a))
            .collect();
        for &(i, a) in &entries {
            for &(j, b) in &entries {
                self.data[i * n + j] += a * b.conj() * weight;
            }
        }
    }

    fn scale_coherences(&mut self, factor: f64) {
        let n = self.labels.len();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    self.data[i * n + j] *= factor;
                }
            }
        }
    }

    pub fn element(&self, a: i32, b: i32) -> Complex64 {
        match (self.pos(a), self.pos(b)) {
            (Some(i), Some(j)) => self.data[i * self.labels.len() + j],
            _ => Complex64::default(),
        }
    }

    pub fn trace(&self) -> f64 {
        let n = self.labels.len();
        (0..n).map(|i| self.data[i * n + i].re).sum()
    }

    /// `⟨v|ρ|v⟩`.
    pub fn expectation(&self, v: &StateVector) -> f64 {
        let mut acc = Complex64::default();
        for (a, va) in v.iter() {
            for (b, vb) in v.iter() {
                acc += va.conj() * self.element(a, b) * vb;
            }
        }
        acc.re
    }
}

/// `exp(iεH)` for the open-chain hopping Hamiltonian, built from its analytic eigenbasis:
/// eigenvalues `2cos(qπ/(n+1))`, eigenvectors `√(2/(n+1)) sin(jqπ/(n+1))`.
#[derive(Debug, Clone)]
pub struct CrosstalkUnitary {
    labels: Vec<i32>,
    data: Vec<Complex64>,
}

impl CrosstalkUnitary {
    pub fn new(idx: &ModeIndexSet, epsilon: f64) -> Self {
        let labels = extended_labels(idx);
        let n = labels.len();
        let k = std::f64::consts::PI / (n + 1) as f64;
        let norm = 2.0 / (n + 1) as f64;
        let phases: Vec<Complex64> = (1..=n)
            .map(|q| Complex64::cis(epsilon * 2.0 * (q as f64 * k).cos()))
            .collect();
        let mut data = vec![Complex64::default(); n * n];
        for j in 0..n {
            for l in 0..n {
                data[j * n + l] = (1..=n)
                    .map(|q| {
                        let vj = ((j + 1) as f64 * q as f64 * k).sin();
                        let vl = ((l + 1) as f64 * q as f64 * k).sin();
                        phases[q - 1] * (norm * vj * vl)
                    })
                    .sum();
            }
        }
        Self { labels, data }
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Row-major matrix elements over [`CrosstalkUnitary::labels`].
    pub fn matrix(&self) -> &[Complex64] {
        &self.data
    }

    /// Labels outside the extended band pass through untouched.
    pub fn apply(&self, psi: &StateVector) -> StateVector {
        let n = self.labels.len();
        let input: Vec<Complex64> = self.labels.iter().map(|&l| psi.amplitude(l)).collect();
        let mut out: BTreeMap<i32, Complex64> = psi
            .iter()
            .filter(|(l, _)| self.labels.binary_search(l).is_err())
            .collect();
        for (j, &l) in self.labels.iter().enumerate() {
            let a: Complex64 = (0..n).map(|k| self.data[j * n + k] * input[k]).sum();
            out.insert(l, a);
        }
        StateVector::from_amplitudes(out)
    }
}

/// Band labels plus [`GUARD_SLOTS`] extra labels on each side, in slot order.
pub fn extended_labels(idx: &ModeIndexSet) -> Vec<i32> {
    let lo = idx.labels()[0];
    let hi = idx.labels()[idx.dim() - 1];
    let g = GUARD_SLOTS as i32;
    (lo - g..lo)
        .chain(idx.labels().iter().copied())
        .chain(hi + 1..=hi + g)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{detection_probability, make_projector, prepare_state, PhasePattern, ProjectorSetting, Sign};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(dim: usize) -> (ModeIndexSet, StateVector) {
        let idx = ModeIndexSet::new(dim).unwrap();
        let psi = prepare_state(&PhasePattern::new(vec![false; dim]), &idx).unwrap();
        (idx, psi)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn identity_is_noop() {
        let (idx, psi) = uniform(5);
        let out = apply_channel(&ChannelModel::Identity, &psi, &idx, &mut rng()).unwrap();
        assert_eq!(out.state, psi);
        assert_eq!(out.survival, 1.0);
    }

    #[test]
    fn aperture_survival_counts_labels() {
        let (idx, psi) = uniform(8);
        // brute-force count of labels with |l| <= 2
        let kept = idx.labels().iter().filter(|l| l.abs() <= 2).count();
        assert_eq!(kept, 4);
        let expected = kept as f64 / 8.0;
        let ch = ChannelModel::Aperture { l_max: 2, p_bg: 0.01 };
        let out = apply_channel(&ch, &psi, &idx, &mut rng()).unwrap();
        assert!((out.survival - 0.5).abs() < 1e-12);
        assert!((out.survival - expected).abs() < 1e-12);
        assert!(out.state.is_normalized(1e-12));
        assert_eq!(out.p_bg, 0.01);
    }

    #[test]
    fn zero_mode_phase_is_identity() {
        let (idx, psi) = uniform(4);
        let ch = ChannelModel::ModePhase(PhaseProfile::Quadratic { coeff: 0.0 });
        let out = apply_channel(&ch, &psi, &idx, &mut rng()).unwrap();
        assert_eq!(out.state, psi);
    }

    #[test]
    fn gouy_compensation_restores_state() {
        let theta = PhaseProfile::Quadratic { coeff: 0.3 };
        for dim in 2..10 {
            let (idx, psi) = uniform(dim);
            let out = apply_channel(&ChannelModel::ModePhase(theta.clone()), &psi, &idx, &mut rng())
                .unwrap();
            let back = apply_channel(&gouy_compensation(&theta), &out.state, &idx, &mut rng()).unwrap();
            let fidelity = back.state.inner(&psi).norm_sqr();
            assert!((fidelity - 1.0).abs() < 1e-12);
        }
        assert_eq!(
            gouy_compensation(&PhaseProfile::Table(BTreeMap::new())),
            ChannelModel::ModePhase(PhaseProfile::Table(BTreeMap::new()))
        );
    }

    #[test]
    fn uncompensated_gouy_phase_detection() {
        let (idx, psi) = uniform(4);
        let ch = ChannelModel::ModePhase(PhaseProfile::Quadratic { coeff: 0.3 });
        let out = apply_channel(&ch, &psi, &idx, &mut rng()).unwrap();
        let proj = make_projector(&ProjectorSetting::new(&idx, 2, 1, Sign::Plus).unwrap());
        let p = detection_probability(&out.state, &proj);
        // ⟨proj|ψ⟩ = (e^{i1.2} + e^{i0.3}) / (2√2)
        let hand = (Complex64::cis(1.2) + Complex64::cis(0.3)).norm_sqr() / 8.0;
        assert!((p - hand).abs() < 1e-12);
    }

    #[test]
    fn unitary_models_preserve_norm() {
        let (idx, psi) = uniform(6);
        let models = [
            ChannelModel::Dephasing { sigma: 0.7 },
            ChannelModel::Crosstalk { epsilon: 0.4 },
            ChannelModel::ModePhase(PhaseProfile::Quadratic { coeff: 1.1 }),
        ];
        let mut r = rng();
        for ch in &models {
            for _ in 0..20 {
                let out = apply_channel(ch, &psi, &idx, &mut r).unwrap();
                assert!(out.state.is_normalized(1e-12), "{ch}");
                assert_eq!(out.survival, 1.0);
            }
        }
    }

    #[test]
    fn zero_strength_models_are_identity() {
        let (idx, psi) = uniform(7);
        let mut r = rng();
        let out = apply_channel(&ChannelModel::WhiteNoise { p: 0.0 }, &psi, &idx, &mut r).unwrap();
        assert_eq!(out.state, psi);
        let out = apply_channel(&ChannelModel::Crosstalk { epsilon: 0.0 }, &psi, &idx, &mut r).unwrap();
        for l in extended_labels(&idx) {
            assert!((out.state.amplitude(l) - psi.amplitude(l)).norm() < 1e-12);
        }
    }

    /// Truncated Taylor series for exp(iεH), independent of the eigenbasis route.
    fn taylor_exp(labels: usize, epsilon: f64) -> Vec<Complex64> {
        let n = labels;
        let mut gen = vec![Complex64::default(); n * n];
        for j in 0..n - 1 {
            gen[j * n + j + 1] = Complex64::new(0.0, epsilon);
            gen[(j + 1) * n + j] = Complex64::new(0.0, epsilon);
        }
        let mut term: Vec<Complex64> = (0..n * n)
            .map(|k| if k % (n + 1) == 0 { Complex64::new(1.0, 0.0) } else { Complex64::default() })
            .collect();
        let mut sum = term.clone();
        for order in 1..60 {
            let mut next = vec![Complex64::default(); n * n];
            for i in 0..n {
                for k in 0..n {
                    let t = term[i * n + k];
                    if t == Complex64::default() {
                        continue;
                    }
                    for j in 0..n {
                        next[i * n + j] += t * gen[k * n + j];
                    }
                }
            }
            for v in next.iter_mut() {
                *v /= order as f64;
            }
            for (s, v) in sum.iter_mut().zip(&next) {
                *s += v;
            }
            term = next;
        }
        sum
    }

    #[test]
    fn crosstalk_unitary_matches_series_and_is_unitary() {
        for (dim, eps) in [(2, 0.1), (4, 0.5), (5, 1.0), (8, 0.3)] {
            let idx = ModeIndexSet::new(dim).unwrap();
            let u = CrosstalkUnitary::new(&idx, eps);
            let n = u.labels().len();
            assert_eq!(n, dim + 2 * GUARD_SLOTS);
            let reference = taylor_exp(n, eps);
            for (a, b) in u.matrix().iter().zip(&reference) {
                assert!((a - b).norm() < 1e-10);
            }
            let m = u.matrix();
            for i in 0..n {
                for j in 0..n {
                    let dot: Complex64 = (0..n).map(|k| m[k * n + i].conj() * m[k * n + j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn crosstalk_hops_across_the_zero_gap() {
        let idx = ModeIndexSet::new(4).unwrap();
        assert_eq!(extended_labels(&idx), vec![-4, -3, -2, -1, 1, 2, 3, 4]);
        let u = CrosstalkUnitary::new(&idx, 0.2);
        let out = u.apply(&StateVector::basis(-1));
        assert!(out.amplitude(1).norm() > 0.1);
        assert_eq!(out.amplitude(0), Complex64::default());
        assert_eq!(extended_labels(&ModeIndexSet::new(3).unwrap()), vec![-3, -2, -1, 0, 1, 2, 3]);
    }

    #[test]
    fn rejects_unnormalized_input() {
        let idx = ModeIndexSet::new(4).unwrap();
        let psi = StateVector::from_amplitudes([(1, Complex64::new(0.5, 0.0))]);
        assert_eq!(
            apply_channel(&ChannelModel::Identity, &psi, &idx, &mut rng()),
            Err(Error::NotNormalized(0.25))
        );
    }

    #[test]
    fn parameter_domains() {
        assert!(ChannelModel::WhiteNoise { p: 1.5 }.validate().is_err());
        assert!(ChannelModel::Dephasing { sigma: -0.1 }.validate().is_err());
        assert!(ChannelModel::Crosstalk { epsilon: 1.2 }.validate().is_err());
        assert!(ChannelModel::Aperture { l_max: 3, p_bg: -0.1 }.validate().is_err());
    }

    #[test]
    fn descriptors_round_trip() {
        for s in [
            "identity",
            "dephasing:sigma=0.3",
            "crosstalk:eps=0.05",
            "mode_phase:quad=0.3",
            "mode_phase:-2=0.1,1=0.5",
            "aperture:lmax=2,pbg=0.01",
            "white_noise:p=0.25",
        ] {
            let ch: ChannelModel = s.parse().unwrap();
            assert_eq!(ch.to_string(), s);
        }
        let err = "dephasing:sigma=abc".parse::<ChannelModel>().unwrap_err();
        assert!(err.to_string().contains("abc"));
        let err = "turbulence".parse::<ChannelModel>().unwrap_err();
        assert!(err.to_string().contains("turbulence"));
        let err = "white_noise:q=0.1".parse::<ChannelModel>().unwrap_err();
        assert!(err.to_string().contains("\"q\""));
        assert!("white_noise:p=2".parse::<ChannelModel>().is_err());
    }

    #[test]
    fn expected_density_matches_sample_average() {
        let idx = ModeIndexSet::new(4).unwrap();
        let psi = prepare_state(&PhasePattern::from_bitstring("0110").unwrap(), &idx).unwrap();
        let proj = make_projector(&ProjectorSetting::new(&idx, 1, -2, Sign::Minus).unwrap());
        for ch in [
            ChannelModel::Dephasing { sigma: 0.5 },
            ChannelModel::WhiteNoise { p: 0.4 },
            ChannelModel::Crosstalk { epsilon: 0.3 },
        ] {
            let prepared = ch.prepare(&idx).unwrap();
            let exact = prepared.expected_density(&psi).unwrap();
            assert!((exact.rho.trace() - 1.0).abs() < 1e-12);
            let want = exact.rho.expectation(&proj);
            let mut r = rng();
            let n = 40_000;
            let mean: f64 = (0..n)
                .map(|_| detection_probability(&prepared.apply(&psi, &mut r).unwrap().state, &proj))
                .sum::<f64>()
                / n as f64;
            assert!((mean - want).abs() < 0.01, "{ch}: mc {mean} vs exact {want}");
        }
    }
}
