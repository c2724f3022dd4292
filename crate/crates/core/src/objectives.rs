//! Adversarial objectives over discriminator scores, plus condition sampling
//! for the mismatched-condition terms.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::dataset::{Condition, ConditionKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Scores are kept inside `[SCORE_EPS, 1 - SCORE_EPS]` before any logarithm.
pub const SCORE_EPS: f64 = 1e-12;
/// Default minimum distance between a continuous condition and its mismatch.
pub const DEFAULT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Gan,
    Cgan,
    /// Real images paired with a resampled condition.
    CrcganA,
    /// Real images whose own condition differs from the one they are scored under.
    CrcganB,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Gan, Objective::Cgan, Objective::CrcganA, Objective::CrcganB];

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Gan => "gan",
            Objective::Cgan => "cgan",
            Objective::CrcganA => "crcgan-a",
            Objective::CrcganB => "crcgan-b",
        }
    }

    pub fn needs_mismatch(&self) -> bool {
        matches!(self, Objective::CrcganA | Objective::CrcganB)
    }

    /// Whether the networks see the condition at all.
    pub fn is_conditional(&self) -> bool {
        !matches!(self, Objective::Gan)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| ObjectiveError::Domain(format!("unknown objective {s:?} (expected gan, cgan, crcgan-a or crcgan-b)")))
    }
}

/// Discriminator scores for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    /// D(x | y) on matched real pairs.
    pub real: Vec<f64>,
    /// D(x | y2) or D(x2 | y) on mismatched real pairs.
    pub mismatched: Option<Vec<f64>>,
    /// D(G(z | y) | y).
    pub fake: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub d_loss: f64,
    pub g_loss: f64,
}

pub fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn log_s(s: f64) -> f64 {
    clamp_score(s).ln()
}

fn log_1ms(s: f64) -> f64 {
    (1.0 - clamp_score(s)).ln()
}

fn mean_of(v: &[f64], f: fn(f64) -> f64) -> f64 {
    v.iter().map(|&s| f(s)).sum::<f64>() / v.len() as f64
}

fn nonempty(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(ObjectiveError::Contract(format!("empty {what} scores")));
    }
    Ok(())
}

fn g_loss(fake: &[f64], nonsaturating: bool) -> f64 {
    if nonsaturating {
        -mean_of(fake, log_s)
    } else {
        mean_of(fake, log_1ms)
    }
}

pub fn gan_losses(s: &ScoreBatch, nonsaturating: bool) -> Result<Losses> {
    nonempty(&s.real, "real")?;
    nonempty(&s.fake, "fake")?;
    if s.mismatched.is_some() {
        return Err(ObjectiveError::Contract("mismatched scores given to a two-term objective".into()));
    }
    Ok(Losses {
        d_loss: -mean_of(&s.real, log_s) - mean_of(&s.fake, log_1ms),
        g_loss: g_loss(&s.fake, nonsaturating),
    })
}

/// Same formula as [`gan_losses`]; the scores are conditional.
pub fn cgan_losses(s: &ScoreBatch, nonsaturating: bool) -> Result<Losses> {
    gan_losses(s, nonsaturating)
}

/// Three-term loss with the mismatch term scaled by `weight`.
pub fn crcgan_a_weighted(s: &ScoreBatch, weight: f64, nonsaturating: bool) -> Result<Losses> {
    nonempty(&s.real, "real")?;
    nonempty(&s.fake, "fake")?;
    let mm = s
        .mismatched
        .as_deref()
        .ok_or_else(|| ObjectiveError::Contract("mismatched scores are required".into()))?;
    nonempty(mm, "mismatched")?;
    let mut d_loss = -mean_of(&s.real, log_s);
    if weight != 0.0 {
        d_loss -= weight * mean_of(mm, log_1ms);
    }
    d_loss -= mean_of(&s.fake, log_1ms);
    Ok(Losses { d_loss, g_loss: g_loss(&s.fake, nonsaturating) })
}

pub fn crcgan_a_losses(s: &ScoreBatch, nonsaturating: bool) -> Result<Losses> {
    crcgan_a_weighted(s, 1.0, nonsaturating)
}

/// Identical to [`crcgan_a_losses`] at the score level; the variants differ
/// in how the mismatched pairs are built.
pub fn crcgan_b_losses(s: &ScoreBatch, nonsaturating: bool) -> Result<Losses> {
    crcgan_a_weighted(s, 1.0, nonsaturating)
}

pub fn losses(objective: Objective, s: &ScoreBatch, nonsaturating: bool) -> Result<Losses> {
    match objective {
        Objective::Gan => gan_losses(s, nonsaturating),
        Objective::Cgan => cgan_losses(s, nonsaturating),
        Objective::CrcganA => crcgan_a_losses(s, nonsaturating),
        Objective::CrcganB => crcgan_b_losses(s, nonsaturating),
    }
}

fn tape_log(tape: &mut Tape, s: Var) -> Var {
    let c = tape.clamp(s, SCORE_EPS, 1.0 - SCORE_EPS);
    tape.log_clamped(c)
}

fn tape_log_1m(tape: &mut Tape, s: Var) -> Var {
    let c = tape.clamp(s, SCORE_EPS, 1.0 - SCORE_EPS);
    let one_minus = tape.affine(c, -1.0, 1.0);
    tape.log_clamped(one_minus)
}

/// Discriminator loss recorded on a tape, from score vars.
pub fn d_loss_tape(tape: &mut Tape, objective: Objective, real: Var, mismatched: Option<Var>, fake: Var) -> Result<Var> {
    if objective.needs_mismatch() != mismatched.is_some() {
        return Err(ObjectiveError::Contract(format!(
            "{objective} {} mismatched scores",
            if objective.needs_mismatch() { "requires" } else { "does not take" }
        )));
    }
    let lr = tape_log(tape, real);
    let mut loss = tape.mean(lr);
    if let Some(mm) = mismatched {
        let lm = tape_log_1m(tape, mm);
        let lm = tape.mean(lm);
        loss = tape.add(loss, lm)?;
    }
    let lf = tape_log_1m(tape, fake);
    let lf = tape.mean(lf);
    let total = tape.add(loss, lf)?;
    Ok(tape.affine(total, -1.0, 0.0))
}

/// Generator loss recorded on a tape.
pub fn g_loss_tape(tape: &mut Tape, fake: Var, nonsaturating: bool) -> Var {
    if nonsaturating {
        let l = tape_log(tape, fake);
        let m = tape.mean(l);
        tape.affine(m, -1.0, 0.0)
    } else {
        let l = tape_log_1m(tape, fake);
        tape.mean(l)
    }
}

/// Set of conditions the sampler draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionDomain {
    Classes(u32),
    Range { lo: f64, hi: f64 },
}

impl ConditionDomain {
    pub fn contains(&self, c: &Condition) -> bool {
        match (*self, *c) {
            (ConditionDomain::Classes(k), Condition::Class { index, cardinality }) => cardinality == k && index < k,
            (ConditionDomain::Range { lo, hi }, Condition::Continuous(v)) => (lo..=hi).contains(&(v as f64)),
            _ => false,
        }
    }
}

/// Uniform sampler over a condition domain.
#[derive(Debug, Clone)]
pub struct ConditionSampler {
    pub domain: ConditionDomain,
    /// Minimum |y2 - y1| for continuous mismatches.
    pub margin: f64,
    rng: ChaCha8Rng,
}

impl ConditionSampler {
    pub fn new(domain: ConditionDomain, seed: u64) -> Result<Self> {
        Self::with_rng(domain, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(domain: ConditionDomain, rng: ChaCha8Rng) -> Result<Self> {
        match domain {
            ConditionDomain::Classes(0) => return Err(ObjectiveError::Domain("no classes".into())),
            ConditionDomain::Range { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                return Err(ObjectiveError::Domain(format!("bad range [{lo}, {hi}]")))
            }
            _ => {}
        }
        Ok(Self { domain, margin: DEFAULT_MARGIN, rng })
    }

    /// Domain matching a dataset's condition kind; continuous data uses the
    /// observed range of its conditions.
    pub fn for_kind(kind: ConditionKind, observed: &[Condition], seed: u64) -> Result<Self> {
        let domain = match kind {
            ConditionKind::Class { cardinality } => ConditionDomain::Classes(cardinality),
            ConditionKind::Continuous => {
                let vals = observed.iter().filter_map(|c| match c {
                    Condition::Continuous(v) => Some(*v as f64),
                    _ => None,
                });
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                ConditionDomain::Range { lo, hi }
            }
        };
        Self::new(domain, seed)
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn sample(&mut self) -> Condition {
        match self.domain {
            ConditionDomain::Classes(k) => Condition::Class { index: self.rng.random_range(0..k), cardinality: k },
            ConditionDomain::Range { lo, hi } => Condition::Continuous(self.uniform(lo, hi) as f32),
        }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn sample_mismatched(&mut self, y1: &Condition) -> Result<Condition> {
        if !self.domain.contains(y1) {
            return Err(ObjectiveError::Domain(format!("{y1:?} is outside {:?}", self.domain)));
        }
        match (self.domain, *y1) {
            (ConditionDomain::Classes(1), _) => {
                Err(ObjectiveError::Domain("a single class admits no mismatched condition".into()))
            }
            (ConditionDomain::Classes(_), Condition::Class { index, .. }) => loop {
                let c = self.sample();
                if !matches!(c, Condition::Class { index: i, .. } if i == index) {
                    return Ok(c);
                }
            },
            (ConditionDomain::Range { lo, hi }, Condition::Continuous(v)) => {
                let v = v as f64;
                if v - self.margin <= lo && v + self.margin >= hi {
                    return Err(ObjectiveError::Domain(format!(
                        "no value in [{lo}, {hi}] is {} away from {v}",
                        self.margin
                    )));
                }
                loop {
                    let y2 = self.uniform(lo, hi) as f32;
                    if (y2 as f64 - v).abs() >= self.margin {
                        return Ok(Condition::Continuous(y2));
                    }
                }
            }
            _ => unreachable!("domain membership checked above"),
        }
    }
}

/// Draws a condition different from `y1`.
pub fn sample_mismatched_condition(y1: &Condition, sampler: &mut ConditionSampler) -> Result<Condition> {
    sampler.sample_mismatched(y1)
}
