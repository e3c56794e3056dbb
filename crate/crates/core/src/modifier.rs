//! Modifiers: predicates that restrict when and how an enrollment, ticket or
//! ACL entry is effective.
//!
//! Evaluation is three-valued. Composition is a conjunction in which
//! `Fail` dominates `NeedsConfirmation`, which dominates `Pass`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::{Canonical, Decode, DecodeError, Encode, Reader, Writer};
use crate::tags;

const SCALE: i64 = 10_000;
/// decimal(18,4): at most 18 significant digits.
const DECIMAL_LIMIT: i64 = 1_000_000_000_000_000_000 - 1;
pub const MINUTES_PER_DAY: u16 = 1440;
const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModifierError {
    #[error("time window start {start} is after end {end}")]
    InvertedWindow { start: u64, end: u64 },
    #[error("minute of day {0} out of range 0..=1439")]
    MinuteOutOfRange(u16),
    #[error("negative quantity")]
    NegativeQuantity,
    #[error("decimal out of range for decimal(18,4)")]
    DecimalRange,
    #[error("cannot parse quantity {0:?}")]
    Parse(String),
}

/// Fixed-point decimal with four fractional digits, stored scaled by 10^4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Decimal4(i64);

impl Decimal4 {
    pub fn from_scaled(scaled: i64) -> Result<Self, ModifierError> {
        if scaled.abs() > DECIMAL_LIMIT {
            return Err(ModifierError::DecimalRange);
        }
        Ok(Self(scaled))
    }

    pub fn from_integer(v: i64) -> Result<Self, ModifierError> {
        v.checked_mul(SCALE)
            .ok_or(ModifierError::DecimalRange)
            .and_then(Self::from_scaled)
    }

    pub fn scaled(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Decimal4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:04}", abs / SCALE as u64, abs % SCALE as u64)
    }
}

impl FromStr for Decimal4 {
    type Err = ModifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModifierError::Parse(s.to_string());
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || frac.len() > 4 || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: i64 = int.parse().map_err(|_| bad())?;
        let frac_scaled: i64 = format!("{frac:0<4}").parse().map_err(|_| bad())?;
        let scaled = int
            .checked_mul(SCALE)
            .and_then(|v| v.checked_add(frac_scaled))
            .ok_or(ModifierError::DecimalRange)?;
        Self::from_scaled(if neg { -scaled } else { scaled })
    }
}

/// A debit quantity: integer units or decimal(18,4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Integer(i64),
    Decimal(Decimal4),
}

impl Quantity {
    pub const ONE: Quantity = Quantity::Integer(1);

    fn scaled(self) -> i128 {
        match self {
            Quantity::Integer(v) => i128::from(v) * i128::from(SCALE),
            Quantity::Decimal(d) => i128::from(d.0),
        }
    }

    pub fn is_negative(self) -> bool {
        self.scaled() < 0
    }

    pub fn is_positive(self) -> bool {
        self.scaled() > 0
    }

    /// Numeric comparison across kinds.
    pub fn cmp_value(self, other: Quantity) -> std::cmp::Ordering {
        self.scaled().cmp(&other.scaled())
    }

    /// `self - amount` in the kind of `self`; `None` when the result would
    /// be negative or is not representable (fractional amount against an
    /// integer budget).
    pub fn checked_sub(self, amount: Quantity) -> Option<Quantity> {
        let diff = self.scaled() - amount.scaled();
        if diff < 0 {
            return None;
        }
        match self {
            Quantity::Integer(_) => {
                if diff % i128::from(SCALE) != 0 {
                    return None;
                }
                i64::try_from(diff / i128::from(SCALE))
                    .ok()
                    .map(Quantity::Integer)
            }
            Quantity::Decimal(_) => i64::try_from(diff)
                .ok()
                .and_then(|d| Decimal4::from_scaled(d).ok())
                .map(Quantity::Decimal),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Integer(v) => write!(f, "{v}"),
            Quantity::Decimal(d) => write!(f, "{d}"),
        }
    }
}

/// Integers parse as `Integer`; anything with a decimal point as `Decimal`.
impl FromStr for Quantity {
    type Err = ModifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains('.') {
            Ok(Quantity::Decimal(s.parse()?))
        } else {
            s.parse::<i64>()
                .map(Quantity::Integer)
                .map_err(|_| ModifierError::Parse(s.to_string()))
        }
    }
}

impl Encode for Quantity {
    fn encode(&self, w: &mut Writer) {
        match self {
            Quantity::Integer(v) => {
                w.u8(0);
                w.i64(*v);
            }
            Quantity::Decimal(d) => {
                w.u8(1);
                w.i64(d.0);
            }
        }
    }
}

impl Decode for Quantity {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Quantity::Integer(r.i64()?)),
            1 => Decimal4::from_scaled(r.i64()?)
                .map(Quantity::Decimal)
                .map_err(|_| DecodeError::Invalid("decimal out of range")),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "Quantity",
            }),
        }
    }
}

/// Depletable budget. The integer/decimal choice crossed with the
/// confirmation flag gives the four debit flavors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Debit {
    pub remaining: Quantity,
    pub unit: String,
    pub requires_confirmation: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modifier {
    /// Inclusive range of epoch seconds.
    TimeWindow { start: u64, end: u64 },
    /// Half-open range of minutes of the (UTC) day; wraps past midnight
    /// when `start_minute > end_minute`.
    TimeOfDay { start_minute: u16, end_minute: u16 },
    Debit(Debit),
    /// The request parameter `key` must be present with one of `allowed`.
    ParamConstraint { key: String, allowed: Vec<Vec<u8>> },
}

impl Modifier {
    pub fn time_window(start: u64, end: u64) -> Result<Self, ModifierError> {
        let m = Modifier::TimeWindow { start, end };
        m.validate()?;
        Ok(m)
    }

    pub fn time_of_day(start_minute: u16, end_minute: u16) -> Result<Self, ModifierError> {
        let m = Modifier::TimeOfDay {
            start_minute,
            end_minute,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn debit(
        remaining: Quantity,
        unit: impl Into<String>,
        requires_confirmation: bool,
        description: impl Into<String>,
    ) -> Result<Self, ModifierError> {
        let m = Modifier::Debit(Debit {
            remaining,
            unit: unit.into(),
            requires_confirmation,
            description: description.into(),
        });
        m.validate()?;
        Ok(m)
    }

    pub fn param(key: impl Into<String>, allowed: Vec<Vec<u8>>) -> Self {
        Modifier::ParamConstraint {
            key: key.into(),
            allowed,
        }
    }

    pub fn validate(&self) -> Result<(), ModifierError> {
        match self {
            Modifier::TimeWindow { start, end } if start > end => Err(ModifierError::InvertedWindow {
                start: *start,
                end: *end,
            }),
            Modifier::TimeOfDay {
                start_minute,
                end_minute,
            } => [*start_minute, *end_minute]
                .into_iter()
                .find(|m| *m >= MINUTES_PER_DAY)
                .map_or(Ok(()), |m| Err(ModifierError::MinuteOutOfRange(m))),
            Modifier::Debit(d) if d.remaining.is_negative() => Err(ModifierError::NegativeQuantity),
            _ => Ok(()),
        }
    }

    pub fn as_debit(&self) -> Option<&Debit> {
        match self {
            Modifier::Debit(d) => Some(d),
            _ => None,
        }
    }

    pub fn is_debit(&self) -> bool {
        matches!(self, Modifier::Debit(_))
    }
}

impl Encode for Modifier {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::MODIFIER);
        match self {
            Modifier::TimeWindow { start, end } => {
                w.u8(0);
                w.u64(*start);
                w.u64(*end);
            }
            Modifier::TimeOfDay {
                start_minute,
                end_minute,
            } => {
                w.u8(1);
                w.u16(*start_minute);
                w.u16(*end_minute);
            }
            Modifier::Debit(d) => {
                w.u8(2);
                w.put(&d.remaining);
                w.str(&d.unit);
                w.bool(d.requires_confirmation);
                w.str(&d.description);
            }
            Modifier::ParamConstraint { key, allowed } => {
                w.u8(3);
                w.str(key);
                w.list(allowed);
            }
        }
    }
}

impl Decode for Modifier {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::MODIFIER, "Modifier")?;
        let m = match r.u8()? {
            0 => Modifier::TimeWindow {
                start: r.u64()?,
                end: r.u64()?,
            },
            1 => Modifier::TimeOfDay {
                start_minute: r.u16()?,
                end_minute: r.u16()?,
            },
            2 => Modifier::Debit(Debit {
                remaining: r.get()?,
                unit: r.str()?,
                requires_confirmation: r.bool()?,
                description: r.str()?,
            }),
            3 => Modifier::ParamConstraint {
                key: r.str()?,
                allowed: r.list()?,
            },
            value => {
                return Err(DecodeError::BadDiscriminant {
                    value,
                    name: "Modifier",
                })
            }
        };
        m.validate()
            .map_err(|_| DecodeError::Invalid("modifier invariant"))?;
        Ok(m)
    }
}

impl Canonical for Modifier {
    const TAG: u8 = tags::MODIFIER;
    const NAME: &'static str = "Modifier";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Pass,
    NeedsConfirmation,
    Fail,
}

impl Outcome {
    /// Conjunction of two outcomes.
    pub fn and(self, other: Outcome) -> Outcome {
        self.max(other)
    }
}

/// Inputs available when a modifier is evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalContext {
    pub now: u64,
    pub params: BTreeMap<Vec<u8>, Vec<u8>>,
    pub confirm_granted: bool,
    /// Amount the pending request would debit.
    pub debit_amount: Quantity,
}

impl EvalContext {
    pub fn at(now: u64) -> Self {
        Self {
            now,
            params: BTreeMap::new(),
            confirm_granted: false,
            debit_amount: Quantity::ONE,
        }
    }
}

pub fn minute_of_day(now: u64) -> u16 {
    ((now % SECONDS_PER_DAY) / 60) as u16
}

fn time_of_day_contains(start: u16, end: u16, minute: u16) -> bool {
    if start <= end {
        start <= minute && minute < end
    } else {
        minute >= start || minute < end
    }
}

/// Full evaluation of one modifier.
///
/// A debit fails when it cannot cover the requested amount; otherwise it
/// asks for confirmation if it requires one that has not been granted.
pub fn eval_modifier(m: &Modifier, ctx: &EvalContext) -> Outcome {
    match m {
        Modifier::TimeWindow { start, end } => pass_if(*start <= ctx.now && ctx.now <= *end),
        Modifier::TimeOfDay {
            start_minute,
            end_minute,
        } => pass_if(time_of_day_contains(
            *start_minute,
            *end_minute,
            minute_of_day(ctx.now),
        )),
        Modifier::Debit(d) => {
            if d.remaining.checked_sub(ctx.debit_amount).is_none() || !ctx.debit_amount.is_positive() {
                Outcome::Fail
            } else if d.requires_confirmation && !ctx.confirm_granted {
                Outcome::NeedsConfirmation
            } else {
                Outcome::Pass
            }
        }
        Modifier::ParamConstraint { key, allowed } => match ctx.params.get(key.as_bytes()) {
            Some(v) => pass_if(allowed.contains(v)),
            None => Outcome::Fail,
        },
    }
}

/// Partial evaluation at the clearance center, which knows the time but
/// not the request parameters or the debit amount. Parameter constraints
/// are deferred to the server; debits only need a positive balance.
pub fn eval_at_clearance(m: &Modifier, now: u64) -> Outcome {
    match m {
        Modifier::ParamConstraint { .. } => Outcome::Pass,
        Modifier::Debit(d) => pass_if(d.remaining.is_positive()),
        _ => eval_modifier(m, &EvalContext::at(now)),
    }
}

fn pass_if(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Enrollment,
    Agreement,
    Server,
}

/// The complete modifier for one service decision.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModifierSet {
    members: Vec<(Layer, Modifier)>,
}

/// Result of evaluating a [`ModifierSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub outcome: Outcome,
    /// Some failing member was a debit.
    pub debit_failed: bool,
    /// Some failing member was not a debit.
    pub other_failed: bool,
    /// Debits asking for confirmation, in member order.
    pub confirmations: Vec<Debit>,
}

pub fn compose_modifiers(
    enrollment: &[Modifier],
    agreement: &[Modifier],
    server: &[Modifier],
) -> ModifierSet {
    let tag = |layer: Layer, ms: &[Modifier]| -> Vec<(Layer, Modifier)> {
        ms.iter().map(|m| (layer, m.clone())).collect()
    };
    let mut members = tag(Layer::Enrollment, enrollment);
    members.extend(tag(Layer::Agreement, agreement));
    members.extend(tag(Layer::Server, server));
    ModifierSet { members }
}

impl ModifierSet {
    pub fn members(&self) -> &[(Layer, Modifier)] {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn debits(&self) -> impl Iterator<Item = &Debit> {
        self.members.iter().filter_map(|(_, m)| m.as_debit())
    }

    pub fn evaluate(&self, ctx: &EvalContext) -> Evaluation {
        let mut eval = Evaluation {
            outcome: Outcome::Pass,
            debit_failed: false,
            other_failed: false,
            confirmations: Vec::new(),
        };
        for (_, m) in &self.members {
            let o = eval_modifier(m, ctx);
            match (o, m) {
                (Outcome::Fail, Modifier::Debit(_)) => eval.debit_failed = true,
                (Outcome::Fail, _) => eval.other_failed = true,
                (Outcome::NeedsConfirmation, Modifier::Debit(d)) => eval.confirmations.push(d.clone()),
                _ => {}
            }
            eval.outcome = eval.outcome.and(o);
        }
        eval
    }

    pub fn outcome(&self, ctx: &EvalContext) -> Outcome {
        self.evaluate(ctx).outcome
    }
}
