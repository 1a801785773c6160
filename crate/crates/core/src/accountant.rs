//! Privacy-loss accounting.
//!
//! Budgets are exact rationals tagged with the privacy definition they are
//! interpreted under. Composition arithmetic: sequential composition adds,
//! parallel composition over a set family of degree z multiplies by z, a
//! sensitivity-Delta count query costs Delta^2 * rho under concentrated DP
//! and Delta * epsilon under pure DP, and the bounded-neighbors figure for a
//! whole run is exactly twice the unbounded total.
//!
//! The accountant is assertion-style: the engine declares the costs it is
//! about to incur and the ledger verifies them against the per-level plan,
//! failing hard on any overspend. Stability factors are declared constants
//! audited by tests, not inferred from transformations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::rational::format_exact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrivacyDefinition {
    /// Zero-concentrated DP; budgets are rho values.
    Zcdp,
    /// Pure epsilon-DP; budgets are epsilon values.
    PureDp,
}

impl PrivacyDefinition {
    pub fn label(self) -> &'static str {
        match self {
            PrivacyDefinition::Zcdp => "zCDP",
            PrivacyDefinition::PureDp => "pureDP",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AccountantError {
    #[error("cannot combine {0} and {1} budgets")]
    MixedDefinitions(&'static str, &'static str),
    #[error("budget values must be nonnegative")]
    NegativeBudget,
    #[error("parallel composition requires equal budgets, got {0} and {1}")]
    UnequalParallelBudgets(String, String),
    #[error("parallel composition requires at least one budget")]
    EmptyComposition,
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    GammaOutOfRange(String),
    #[error("level {0:?} has nonpositive budget {1}")]
    NonpositiveLevelBudget(String, String),
    #[error("duplicate level id {0:?} in budget plan")]
    DuplicateLevel(String),
    #[error("unknown level id {0:?}")]
    UnknownLevel(String),
    #[error("overspend on level {level:?}: requested {requested}, remaining {remaining}")]
    Overspend {
        level: String,
        requested: String,
        remaining: String,
    },
    #[error("ledger is closed")]
    Closed,
}

/// A privacy-loss amount under a specific definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivacyBudget {
    value: BigRational,
    definition: PrivacyDefinition,
}

impl PrivacyBudget {
    pub fn new(
        value: BigRational,
        definition: PrivacyDefinition,
    ) -> Result<Self, AccountantError> {
        if value.is_negative() {
            return Err(AccountantError::NegativeBudget);
        }
        Ok(PrivacyBudget { value, definition })
    }

    pub fn zcdp(rho: BigRational) -> Result<Self, AccountantError> {
        PrivacyBudget::new(rho, PrivacyDefinition::Zcdp)
    }

    pub fn pure_dp(epsilon: BigRational) -> Result<Self, AccountantError> {
        PrivacyBudget::new(epsilon, PrivacyDefinition::PureDp)
    }

    pub fn zero(definition: PrivacyDefinition) -> Self {
        PrivacyBudget {
            value: BigRational::zero(),
            definition,
        }
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn definition(&self) -> PrivacyDefinition {
        self.definition
    }
}

/// Sequential composition: running both computations costs b1 + b2.
pub fn compose_sequential(
    b1: &PrivacyBudget,
    b2: &PrivacyBudget,
) -> Result<PrivacyBudget, AccountantError> {
    if b1.definition != b2.definition {
        return Err(AccountantError::MixedDefinitions(
            b1.definition.label(),
            b2.definition.label(),
        ));
    }
    Ok(PrivacyBudget {
        value: &b1.value + &b2.value,
        definition: b1.definition,
    })
}

/// Parallel composition over a set family of maximum degree z: equal
/// per-set budgets rho compose to z * rho. Unequal budgets are rejected
/// rather than silently bounded.
pub fn compose_parallel(
    budgets: &[PrivacyBudget],
    degree: u32,
) -> Result<PrivacyBudget, AccountantError> {
    let first = budgets.first().ok_or(AccountantError::EmptyComposition)?;
    for b in &budgets[1..] {
        if b.definition != first.definition {
            return Err(AccountantError::MixedDefinitions(
                first.definition.label(),
                b.definition.label(),
            ));
        }
        if b.value != first.value {
            return Err(AccountantError::UnequalParallelBudgets(
                format_exact(&first.value),
                format_exact(&b.value),
            ));
        }
    }
    Ok(PrivacyBudget {
        value: &first.value * BigRational::from_integer(degree.into()),
        definition: first.definition,
    })
}

/// Bounded-neighbors figure for a completed run: exactly twice the
/// unbounded total (replacement = one removal plus one addition).
pub fn bounded_report(total_unbounded: &PrivacyBudget) -> PrivacyBudget {
    PrivacyBudget {
        value: &total_unbounded.value * BigRational::from_integer(2.into()),
        definition: total_unbounded.definition,
    }
}

/// Cost of one noisy count at the given sensitivity: Delta^2 * rho under
/// concentrated DP (L2 sensitivity), Delta * epsilon under pure DP (L1).
pub fn mechanism_cost(sensitivity: u32, per_unit: &PrivacyBudget) -> PrivacyBudget {
    let delta = BigRational::from_integer(sensitivity.into());
    let factor = match per_unit.definition {
        PrivacyDefinition::Zcdp => &delta * &delta,
        PrivacyDefinition::PureDp => delta,
    };
    PrivacyBudget {
        value: &per_unit.value * factor,
        definition: per_unit.definition,
    }
}

/// A per-group budget envelope: the rho_i / s slice of a level budget that
/// one population group's tabulation may consume. Every mechanism
/// invocation debits its cost up front; overdraw is a hard error, never a
/// clamp, so a logic bug cannot silently exceed the stated guarantee.
#[derive(Debug, Clone)]
pub struct Reservation {
    label: String,
    definition: PrivacyDefinition,
    total: BigRational,
    spent: BigRational,
}

impl Reservation {
    pub fn new(label: impl Into<String>, total: &PrivacyBudget) -> Self {
        Reservation {
            label: label.into(),
            definition: total.definition,
            total: total.value.clone(),
            spent: BigRational::zero(),
        }
    }

    pub fn debit(&mut self, amount: &PrivacyBudget) -> Result<(), AccountantError> {
        if amount.definition != self.definition {
            return Err(AccountantError::MixedDefinitions(
                self.definition.label(),
                amount.definition.label(),
            ));
        }
        let remaining = &self.total - &self.spent;
        if amount.value > remaining {
            return Err(AccountantError::Overspend {
                level: self.label.clone(),
                requested: format_exact(&amount.value),
                remaining: format_exact(&remaining),
            });
        }
        self.spent += &amount.value;
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn definition(&self) -> PrivacyDefinition {
        self.definition
    }

    pub fn spent(&self) -> &BigRational {
        &self.spent
    }

    pub fn remaining(&self) -> BigRational {
        &self.total - &self.spent
    }
}

/// Ordered per-level budget allocation plus the adaptive split fraction.
#[derive(Debug, Clone)]
pub struct LevelBudgetPlan {
    levels: Vec<(String, BigRational)>,
    gamma: BigRational,
    definition: PrivacyDefinition,
}

impl LevelBudgetPlan {
    pub fn new(
        levels: Vec<(String, BigRational)>,
        gamma: BigRational,
        definition: PrivacyDefinition,
    ) -> Result<Self, AccountantError> {
        if !(gamma.is_positive() && gamma < BigRational::from_integer(1.into())) {
            return Err(AccountantError::GammaOutOfRange(format_exact(&gamma)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, rho) in &levels {
            if !rho.is_positive() {
                return Err(AccountantError::NonpositiveLevelBudget(
                    id.clone(),
                    format_exact(rho),
                ));
            }
            if !seen.insert(id.clone()) {
                return Err(AccountantError::DuplicateLevel(id.clone()));
            }
        }
        Ok(LevelBudgetPlan {
            levels,
            gamma,
            definition,
        })
    }

    pub fn levels(&self) -> &[(String, BigRational)] {
        &self.levels
    }

    pub fn gamma(&self) -> &BigRational {
        &self.gamma
    }

    pub fn definition(&self) -> PrivacyDefinition {
        self.definition
    }

    pub fn level_budget(&self, level_id: &str) -> Option<&BigRational> {
        self.levels
            .iter()
            .find(|(id, _)| id == level_id)
            .map(|(_, rho)| rho)
    }

    /// Exact sum of the per-level allocations.
    pub fn total(&self) -> BigRational {
        self.levels
            .iter()
            .fold(BigRational::zero(), |acc, (_, rho)| acc + rho)
    }
}

/// Maximum number of population groups one record can occupy at a level:
/// one alone-or-in-combination membership per race code plus the single
/// ethnicity iteration. A declared constant, audited by mapping tests.
pub fn stability_for_race_cap(race_cap: u32) -> u32 {
    race_cap + 1
}

#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub operation_id: String,
    pub level_id: String,
    pub amount: BigRational,
}

/// Append-only spend log with per-level remaining allocations.
///
/// Single-owner by design: concurrent tabulation pre-reserves its level
/// budget here before spawning, so no spend races exist.
#[derive(Debug)]
pub struct Ledger {
    definition: PrivacyDefinition,
    remaining: BTreeMap<String, BigRational>,
    plan_total: BigRational,
    entries: Vec<LedgerEntry>,
    closed: bool,
}

impl Ledger {
    pub fn new(plan: &LevelBudgetPlan) -> Self {
        let remaining = plan
            .levels
            .iter()
            .map(|(id, rho)| (id.clone(), rho.clone()))
            .collect();
        Ledger {
            definition: plan.definition,
            remaining,
            plan_total: plan.total(),
            entries: Vec::new(),
            closed: false,
        }
    }

    pub fn definition(&self) -> PrivacyDefinition {
        self.definition
    }

    /// Records a spend against a level. Overspending is a hard failure;
    /// the amount is never clamped.
    pub fn spend(
        &mut self,
        operation_id: &str,
        level_id: &str,
        amount: &BigRational,
    ) -> Result<(), AccountantError> {
        if self.closed {
            return Err(AccountantError::Closed);
        }
        if amount.is_negative() {
            return Err(AccountantError::NegativeBudget);
        }
        let remaining = self
            .remaining
            .get_mut(level_id)
            .ok_or_else(|| AccountantError::UnknownLevel(level_id.to_string()))?;
        if &*remaining < amount {
            return Err(AccountantError::Overspend {
                level: level_id.to_string(),
                requested: format_exact(amount),
                remaining: format_exact(remaining),
            });
        }
        *remaining -= amount;
        self.entries.push(LedgerEntry {
            operation_id: operation_id.to_string(),
            level_id: level_id.to_string(),
            amount: amount.clone(),
        });
        Ok(())
    }

    /// Records a postprocessing step: appears in the log at zero cost.
    pub fn record_postprocess(&mut self, operation_id: &str) -> Result<(), AccountantError> {
        if self.closed {
            return Err(AccountantError::Closed);
        }
        self.entries.push(LedgerEntry {
            operation_id: operation_id.to_string(),
            level_id: String::from("-"),
            amount: BigRational::zero(),
        });
        Ok(())
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn remaining(&self, level_id: &str) -> Option<&BigRational> {
        self.remaining.get(level_id)
    }

    /// Exact total spent across all entries.
    pub fn spent_total(&self) -> BigRational {
        self.entries
            .iter()
            .fold(BigRational::zero(), |acc, e| acc + &e.amount)
    }

    pub fn plan_total(&self) -> &BigRational {
        &self.plan_total
    }

    /// Bounded-neighbors figure for the spend so far.
    pub fn bounded_total(&self) -> BigRational {
        self.spent_total() * BigRational::from_integer(2.into())
    }

    /// Human-readable accounting report: one row per entry, then totals.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "privacy definition: {}", self.definition.label());
        let _ = writeln!(out, "{:<28} {:<20} {}", "operation", "level", "spent");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<28} {:<20} {}",
                e.operation_id,
                e.level_id,
                format_exact(&e.amount)
            );
        }
        let _ = writeln!(out, "----");
        let _ = writeln!(
            out,
            "total spent (unbounded): {}",
            format_exact(&self.spent_total())
        );
        let _ = writeln!(
            out,
            "total spent (bounded):   {}",
            format_exact(&self.bounded_total())
        );
        let _ = writeln!(
            out,
            "plan total (unbounded):  {}",
            format_exact(&self.plan_total)
        );
        let unspent: BigRational = self
            .remaining
            .values()
            .fold(BigRational::zero(), |acc, v| acc + v);
        let _ = writeln!(out, "unspent allocation:      {}", format_exact(&unspent));
        let _ = writeln!(
            out,
            "status: {}",
            if self.closed { "closed" } else { "open" }
        );
        out
    }
}
