//! Monte Carlo key exchange.
//!
//! Each round draws from its own ChaCha8 stream keyed by `(seed, round)`, so
//! a session's transcript does not depend on how rounds are scheduled across
//! threads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{ChannelModel, ChannelOutput, PreparedChannel};
use crate::error::{check_probability, Error, Result};
use crate::matrix::{combine_background, DetectionMatrix};
use crate::modes::{
    detection_probability, make_projector, prepare_state, ModeIndexSet, ModePair, PhasePattern, Sign,
};

pub const SIFTING_EFFICIENCY: f64 = 0.5;

const PROB_TOL: f64 = 1e-9;

/// Random stream for one round.
pub fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    ClickPlus,
    ClickMinus,
    NoClick,
    /// A setting-independent false click, reported on one port.
    BackgroundClick(Sign),
}

impl Outcome {
    /// Port that clicked, if any.
    pub fn port(&self) -> Option<Sign> {
        match self {
            Outcome::ClickPlus => Some(Sign::Plus),
            Outcome::ClickMinus => Some(Sign::Minus),
            Outcome::BackgroundClick(s) => Some(*s),
            Outcome::NoClick => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Outcome::ClickPlus => "click_plus",
            Outcome::ClickMinus => "click_minus",
            Outcome::NoClick => "no_click",
            Outcome::BackgroundClick(_) => "background_click",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round_id: u64,
    pub pattern: PhasePattern,
    pub pair: Option<ModePair>,
    pub outcome: Outcome,
    pub alice_bit: Option<bool>,
    pub bob_bit: Option<bool>,
    pub sifted: bool,
}

impl RoundRecord {
    /// One `key=value` line; absent values print as `-`.
    pub fn transcript_line(&self) -> String {
        let bit = |b: Option<bool>| match b {
            Some(true) => "1",
            Some(false) => "0",
            None => "-",
        };
        let (m, mr) = match &self.pair {
            Some(p) => (p.m().to_string(), p.m_minus_r().to_string()),
            None => ("-".into(), "-".into()),
        };
        let sign = self
            .outcome
            .port()
            .map(|s| s.symbol().to_string())
            .unwrap_or_else(|| "-".into());
        format!(
            "round={} s={} m={} m_minus_r={} outcome={} sign={} alice_bit={} bob_bit={} sifted={}",
            self.round_id,
            self.pattern,
            m,
            mr,
            self.outcome.name(),
            sign,
            bit(self.alice_bit),
            bit(self.bob_bit),
            self.sifted as u8
        )
    }
}

/// Uniform canonical pattern: `bits[0] = 0`, the rest fair coins.
pub fn alice_prepare<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> PhasePattern {
    let bits = std::iter::once(false)
        .chain((1..dim).map(|_| rng.random::<bool>()))
        .collect();
    PhasePattern::new(bits)
}

/// Uniform choice among the `L(L-1)/2` pairs; both ports are measured.
pub fn bob_choose_setting<R: Rng + ?Sized>(rng: &mut R, idx: &ModeIndexSet) -> ModePair {
    let k = rng.random_range(0..idx.pair_count());
    idx.pair_at(k).expect("index below pair count")
}

/// Samples a detector outcome from per-port click probabilities plus background.
pub fn detect_with_probs<R: Rng + ?Sized>(
    p_plus: f64,
    p_minus: f64,
    p_bg: f64,
    rng: &mut R,
) -> Result<Outcome> {
    let signal = p_plus + p_minus;
    if signal > 1.0 + PROB_TOL {
        return Err(Error::ProbabilityOverflow(signal));
    }
    check_probability("p_bg", p_bg)?;
    let u: f64 = rng.random();
    let background = p_bg * (1.0 - signal).max(0.0);
    Ok(if u < p_plus {
        Outcome::ClickPlus
    } else if u < signal {
        Outcome::ClickMinus
    } else if u < signal + background {
        let sign = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
        Outcome::BackgroundClick(sign)
    } else {
        Outcome::NoClick
    })
}

/// Bob's detection of one channel output with the two ports of `pair`.
pub fn detect<R: Rng + ?Sized>(
    output: &ChannelOutput,
    pair: &ModePair,
    p_bg: f64,
    rng: &mut R,
) -> Result<Outcome> {
    let plus = detection_probability(&output.state, &make_projector(&pair.branch(Sign::Plus)));
    let minus = detection_probability(&output.state, &make_projector(&pair.branch(Sign::Minus)));
    detect_with_probs(
        plus * output.survival,
        minus * output.survival,
        combine_background(output.p_bg, p_bg),
        rng,
    )
}

/// Public discussion for a clicked round.
///
/// Alice's bit is `s_m ⊕ s_{m-r}`; Bob records 0 on the `+` port and 1 on the
/// `-` port, so ideal rounds agree. Surviving rounds are then kept with
/// probability [`SIFTING_EFFICIENCY`].
pub fn sift<R: Rng + ?Sized>(
    mut record: RoundRecord,
    idx: &ModeIndexSet,
    rng: &mut R,
) -> Result<RoundRecord> {
    let (pair, port) = match (record.pair, record.outcome.port()) {
        (Some(pair), Some(port)) => (pair, port),
        _ => return Err(Error::NotSiftable(record.round_id)),
    };
    record.alice_bit = Some(record.pattern.parity(idx, &pair)?);
    record.bob_bit = Some(port == Sign::Minus);
    let in_band = idx.contains(pair.m()) && idx.contains(pair.m_minus_r());
    let keep = rng.random_bool(SIFTING_EFFICIENCY);
    record.sifted = in_band && keep;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiftedKeyPair {
    pub alice_key: Vec<bool>,
    pub bob_key: Vec<bool>,
}

impl SiftedKeyPair {
    pub fn len(&self) -> usize {
        self.alice_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_key.is_empty()
    }

    pub fn errors(&self) -> usize {
        self.alice_key
            .iter()
            .zip(&self.bob_key)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// `None` when no round survived sifting.
    pub fn qber(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(self.errors() as f64 / self.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub dim: usize,
    pub rounds: u64,
    pub channel: ChannelModel,
    pub p_bg: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub records: Vec<RoundRecord>,
    pub key: SiftedKeyPair,
}

impl Session {
    pub fn clicks(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.port().is_some()).count()
    }

    pub fn sifted(&self) -> usize {
        self.key.len()
    }

    pub fn transcript(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{}", r.transcript_line());
        }
        s
    }
}

enum RoundSource<'a> {
    Channel(PreparedChannel<'a>),
    Table(&'a DetectionMatrix),
}

fn play_round(
    source: &RoundSource<'_>,
    idx: &ModeIndexSet,
    p_bg: f64,
    seed: u64,
    round_id: u64,
) -> Result<RoundRecord> {
    let mut rng = round_rng(seed, round_id);
    let pattern = alice_prepare(&mut rng, idx.dim());
    let pair = bob_choose_setting(&mut rng, idx);
    let outcome = match source {
        RoundSource::Channel(ch) => {
            let psi = prepare_state(&pattern, idx)?;
            let out = ch.apply(&psi, &mut rng)?;
            detect(&out, &pair, p_bg, &mut rng)?
        }
        RoundSource::Table(m) => {
            let (plus, minus) = m
                .lookup(&pattern, &pair)
                .ok_or_else(|| Error::Format("empirical matrix lacks a cell".into()))?;
            detect_with_probs(plus, minus, p_bg, &mut rng)?
        }
    };
    let record = RoundRecord {
        round_id,
        pattern,
        pair: Some(pair),
        outcome,
        alice_bit: None,
        bob_bit: None,
        sifted: false,
    };
    if outcome.port().is_some() {
        sift(record, idx, &mut rng)
    } else {
        Ok(record)
    }
}

/// Runs `rounds` independent rounds in parallel and assembles them in round order.
pub fn run_session(cfg: &SessionConfig) -> Result<Session> {
    if cfg.rounds == 0 {
        return Err(Error::Domain {
            name: "rounds",
            value: 0.0,
            domain: "rounds >= 1",
        });
    }
    check_probability("p_bg", cfg.p_bg)?;
    let idx = ModeIndexSet::new(cfg.dim)?;
    let source = match &cfg.channel {
        ChannelModel::Empirical(m) => {
            if m.dim != cfg.dim || m.sampled {
                return Err(Error::Format(format!(
                    "empirical channel needs a full L={} matrix",
                    cfg.dim
                )));
            }
            RoundSource::Table(m)
        }
        ch => RoundSource::Channel(ch.prepare(&idx)?),
    };
    let records = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| play_round(&source, &idx, cfg.p_bg, cfg.seed, r))
        .collect::<Result<Vec<_>>>()?;
    let mut key = SiftedKeyPair::default();
    for r in records.iter().filter(|r| r.sifted) {
        key.alice_key.push(r.alice_bit.expect("sifted rounds carry bits"));
        key.bob_key.push(r.bob_bit.expect("sifted rounds carry bits"));
    }
    Ok(Session { records, key })
}
