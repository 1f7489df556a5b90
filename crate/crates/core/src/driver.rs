//! Invertible driving systems and the skew shift on time-state pairs.
//!
//! A driver realizes the base map theta on a sample space from seeds, with
//! exact integer arithmetic so the group law `theta^{n+m} = theta^n o theta^m`
//! holds bit-for-bit in both directions:
//!
//! * `cyclic(p)` - residues mod p, theta adds one.
//! * `irrational_rotation` - the angle is frozen to a dyadic rational
//!   `num/2^bits`; theta adds `num` on the residue ring, so inverses are
//!   exact where floating rotation would drift.
//! * `bernoulli_window(seed, w)` - a two-sided symbol sequence derived from
//!   the seed; theta shifts the read position. Symbols are generated by a
//!   counter hash, so shifts stay invertible over the whole tested window.
//!
//! The skew shift acts on pairs `(ell, omega)` by `(ell+1, theta omega)`;
//! `ell` never drops below zero.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Driver {
    Cyclic { period: u64 },
    Rotation { num: u64, den: u64 },
    Bernoulli { seed: u64, window: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum State {
    Cyclic(u64),
    Rotation(u64),
    Bernoulli(i64),
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn unit_from_u64(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

impl Driver {
    pub fn cyclic(period: u64) -> Result<Self> {
        if period == 0 {
            return Err(LabError::config("driver.period", "period must be >= 1"));
        }
        Ok(Driver::Cyclic { period })
    }

    /// Angle in turns (fraction of the full circle), frozen to `bits` bits.
    pub fn irrational_rotation(angle_turns: f64, bits: u32) -> Result<Self> {
        if !(0.0..1.0).contains(&angle_turns) || !(1..=62).contains(&bits) {
            return Err(LabError::config(
                "driver.angle/bits",
                "need 0 <= angle < 1 and 1 <= bits <= 62",
            ));
        }
        let den = 1u64 << bits;
        let num = ((angle_turns * den as f64).round() as u64).clamp(1, den - 1);
        Ok(Driver::Rotation { num, den })
    }

    pub fn bernoulli_window(seed: u64, window: u32) -> Result<Self> {
        if window == 0 {
            return Err(LabError::config("driver.window", "window must be >= 1"));
        }
        Ok(Driver::Bernoulli { seed, window })
    }

    pub fn initial_state(&self) -> State {
        match self {
            Driver::Cyclic { .. } => State::Cyclic(0),
            Driver::Rotation { .. } => State::Rotation(0),
            Driver::Bernoulli { .. } => State::Bernoulli(0),
        }
    }

    /// theta^n, exact for any sign of n.
    pub fn advance(&self, s: State, n: i64) -> State {
        match (self, s) {
            (Driver::Cyclic { period }, State::Cyclic(k)) => {
                State::Cyclic((k as i128 + n as i128).rem_euclid(*period as i128) as u64)
            }
            (Driver::Rotation { num, den }, State::Rotation(k)) => {
                let step = (*num as i128) * (n as i128);
                State::Rotation((k as i128 + step).rem_euclid(*den as i128) as u64)
            }
            (Driver::Bernoulli { .. }, State::Bernoulli(off)) => State::Bernoulli(off + n),
            _ => unreachable!("state kind does not match driver kind"),
        }
    }

    /// Deterministic value in [0, 1) attached to a state; generators and
    /// random-variable specs read this.
    pub fn value(&self, s: State) -> f64 {
        match (self, s) {
            (Driver::Cyclic { period }, State::Cyclic(k)) => k as f64 / *period as f64,
            (Driver::Rotation { den, .. }, State::Rotation(k)) => k as f64 / *den as f64,
            (Driver::Bernoulli { seed, .. }, State::Bernoulli(off)) => {
                unit_from_u64(splitmix64(seed ^ (off as u64).wrapping_mul(0x9e3779b97f4a7c15)))
            }
            _ => unreachable!("state kind does not match driver kind"),
        }
    }

    /// Stable opaque encoding used in CSV outputs and cache keys.
    pub fn encode(&self, s: State) -> String {
        match s {
            State::Cyclic(k) => format!("c{k}"),
            State::Rotation(k) => format!("r{k}"),
            State::Bernoulli(off) => format!("b{off}"),
        }
    }

    pub fn decode(&self, text: &str) -> Result<State> {
        let bad = || LabError::config("state", format!("cannot decode `{text}`"));
        let (tag, rest) = text.split_at(1);
        match (self, tag) {
            (Driver::Cyclic { period }, "c") => {
                let k: u64 = rest.parse().map_err(|_| bad())?;
                if k >= *period {
                    return Err(bad());
                }
                Ok(State::Cyclic(k))
            }
            (Driver::Rotation { den, .. }, "r") => {
                let k: u64 = rest.parse().map_err(|_| bad())?;
                if k >= *den {
                    return Err(bad());
                }
                Ok(State::Rotation(k))
            }
            (Driver::Bernoulli { .. }, "b") => {
                let off: i64 = rest.parse().map_err(|_| bad())?;
                Ok(State::Bernoulli(off))
            }
            _ => Err(bad()),
        }
    }

    /// Stable 64-bit digest of a state, for seeding per-point randomness.
    pub fn state_digest(&self, s: State) -> u64 {
        match s {
            State::Cyclic(k) => splitmix64(k ^ 0x11),
            State::Rotation(k) => splitmix64(k ^ 0x22),
            State::Bernoulli(off) => splitmix64((off as u64) ^ 0x33),
        }
    }

    fn sample_states(&self, count: usize, seed: u64) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        match self {
            Driver::Cyclic { period } => {
                let start = seed % period;
                for i in 0..count as u64 {
                    out.push(State::Cyclic((start + i) % period));
                }
            }
            Driver::Rotation { den, .. } => {
                while out.len() < count {
                    let k = State::Rotation(rng.random_range(0..*den));
                    if !out.contains(&k) || out.len() as u64 >= *den {
                        out.push(k);
                    }
                }
            }
            Driver::Bernoulli { window, .. } => {
                let half = (*window as i64 / 2).max(1);
                while out.len() < count {
                    let k = State::Bernoulli(rng.random_range(-half..=half));
                    if !out.contains(&k) || out.len() as i64 > 2 * half {
                        out.push(k);
                    }
                }
            }
        }
        out
    }
}

/// A point `(ell, omega)` of the skew product, carrying its driver so shifts
/// are self-contained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OrbitPoint {
    pub driver: Driver,
    pub ell: i64,
    pub state: State,
}

impl OrbitPoint {
    pub fn new(driver: Driver, ell: i64, state: State) -> Self {
        debug_assert!(ell >= 0);
        OrbitPoint { driver, ell, state }
    }

    /// The skew shift applied n times: `(ell + n, theta^n omega)`.
    /// Negative n is allowed down to `ell = 0`.
    pub fn shift(&self, n: i64) -> Result<OrbitPoint> {
        if self.ell + n < 0 {
            return Err(LabError::NegativeTime { ell: self.ell, n });
        }
        Ok(OrbitPoint {
            driver: self.driver,
            ell: self.ell + n,
            state: self.driver.advance(self.state, n),
        })
    }

    /// The base point `(0, theta^{-ell} omega)` of this orbit.
    pub fn base_point(&self) -> OrbitPoint {
        OrbitPoint {
            driver: self.driver,
            ell: 0,
            state: self.driver.advance(self.state, -self.ell),
        }
    }

    /// Key identifying the forward orbit class: the encoding of the base
    /// state. Quantities constant along forward shift-orbits are tabled by
    /// this key.
    pub fn class_key(&self) -> String {
        self.driver.encode(self.base_point().state)
    }

    /// Value in [0, 1) of the base state, for orbit-class random variables.
    pub fn class_value(&self) -> f64 {
        self.driver.value(self.base_point().state)
    }

    pub fn encode_state(&self) -> String {
        self.driver.encode(self.state)
    }
}

/// Deterministic list of base points (`ell = 0`), reproducible from the seed.
pub fn sample_orbits(driver: &Driver, count: usize, seed: u64) -> Vec<OrbitPoint> {
    driver
        .sample_states(count, seed)
        .into_iter()
        .map(|s| OrbitPoint::new(*driver, 0, s))
        .collect()
}
