//! Randomized payoffs, their prices and utility expectations, and budget
//! feasibility.
//!
//! A payoff assigns each state a finite mixture of nonnegative values,
//! realized through the state's auxiliary uniform coordinate. Deterministic
//! payoffs are mixtures with a single atom of weight 1.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::space::{expectation, Density, MeasureFamily, PricingMeasure, ScenarioSpace, SUM_TOL};
use crate::utility::Curve;

/// Absolute slack allowed on the budget constraint and on bound checks of
/// externally produced payoffs; solver outputs carry rounding.
pub const COST_TOL: f64 = 1e-9;

/// One mixture atom: payoff value and its probability.
pub type Atom = (f64, f64);

/// Per-state finite mixtures of nonnegative payoff values.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomizedPayoff {
    atoms: Vec<Vec<Atom>>,
    bounded: bool,
}

impl RandomizedPayoff {
    /// Validates values ≥ 0 and per-state weights positive summing to 1.
    /// With `bounded`, every value must also respect the space's w.
    pub fn new(space: &ScenarioSpace, atoms: Vec<Vec<Atom>>, bounded: bool) -> Result<Self> {
        if atoms.len() != space.n() {
            return Err(Error::Invalid(format!(
                "payoff covers {} states of {}",
                atoms.len(),
                space.n()
            )));
        }
        let w = if bounded {
            Some(space.w().ok_or_else(|| {
                Error::Invalid("bounded payoff needs per-state bounds on the space".into())
            })?)
        } else {
            None
        };
        for (i, mixture) in atoms.iter().enumerate() {
            if mixture.is_empty() {
                return Err(Error::Invalid(format!("state {i} has no atoms")));
            }
            let mut sum = 0.0;
            for &(value, weight) in mixture {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(Error::Invalid(format!(
                        "state {i} has negative or non-finite value {value}"
                    )));
                }
                if !(weight > 0.0) || !weight.is_finite() {
                    return Err(Error::Invalid(format!(
                        "state {i} has non-positive atom weight {weight}"
                    )));
                }
                if let Some(w) = w {
                    if value > w[i] {
                        return Err(Error::Invalid(format!(
                            "state {i} value {value} exceeds bound {}",
                            w[i]
                        )));
                    }
                }
                sum += weight;
            }
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::Invalid(format!(
                    "state {i} atom weights sum to {sum}, not 1"
                )));
            }
        }
        Ok(RandomizedPayoff { atoms, bounded })
    }

    /// Deterministic payoff: one atom of weight 1 per state.
    pub fn deterministic(space: &ScenarioSpace, values: &[f64], bounded: bool) -> Result<Self> {
        let atoms = values.iter().map(|&v| alloc::vec![(v, 1.0)]).collect();
        RandomizedPayoff::new(space, atoms, bounded)
    }

    pub fn atoms(&self) -> &[Vec<Atom>] {
        &self.atoms
    }

    pub fn state(&self, i: usize) -> &[Atom] {
        &self.atoms[i]
    }

    pub fn is_bounded(&self) -> bool {
        self.bounded
    }

    /// Per-state expected value E[X | state].
    pub fn state_means(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|m| m.iter().map(|(v, w)| v * w).sum())
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.atoms.iter().all(|m| m.len() == 1)
    }
}

/// Initial wealth plus whether the bound constraint applies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetSpec {
    pub x: f64,
    pub constrained: bool,
}

impl BudgetSpec {
    pub fn new(x: f64, constrained: bool) -> Result<Self> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Invalid(format!(
                "initial wealth {x} is not positive"
            )));
        }
        Ok(BudgetSpec { x, constrained })
    }

    /// Whether the constrained problem is non-trivial: the bound costs more
    /// than the budget, so X = W is not affordable.
    pub fn non_trivial(&self, space: &ScenarioSpace, pricing: &PricingMeasure) -> Result<bool> {
        let w = space
            .w()
            .ok_or_else(|| Error::Invalid("non-triviality check needs per-state bounds".into()))?;
        let bound_cost: f64 = space
            .p()
            .iter()
            .zip(pricing.psi())
            .zip(w)
            .map(|((p, psi), w)| p * psi * w)
            .sum();
        Ok(bound_cost > self.x)
    }
}

/// Price of the payoff under the pricing measure: Σᵢ pᵢψᵢ E[Xᵢ].
pub fn cost(payoff: &RandomizedPayoff, space: &ScenarioSpace, pricing: &PricingMeasure) -> f64 {
    space
        .p()
        .iter()
        .zip(pricing.psi())
        .zip(payoff.atoms())
        .map(|((p, psi), mixture)| p * psi * mixture.iter().map(|(v, w)| v * w).sum::<f64>())
        .sum()
}

/// E_Q of the curve applied to the payoff. With `cap_by_w`, each state
/// evaluates the curve capped at that state's bound.
pub fn expected_utility<C: Curve>(
    payoff: &RandomizedPayoff,
    space: &ScenarioSpace,
    density: &Density,
    curve: &C,
    cap_by_w: bool,
) -> Result<f64> {
    let values = state_utilities(payoff, space, curve, cap_by_w)?;
    expectation(space, density, &values)
}

/// Per-state conditional expected utility E[curve(X) | state].
pub(crate) fn state_utilities<C: Curve>(
    payoff: &RandomizedPayoff,
    space: &ScenarioSpace,
    curve: &C,
    cap_by_w: bool,
) -> Result<Vec<f64>> {
    let w =
        if cap_by_w {
            Some(space.w().ok_or_else(|| {
                Error::Invalid("cap_by_w needs per-state bounds on the space".into())
            })?)
        } else {
            None
        };
    let mut out = Vec::with_capacity(space.n());
    for (i, mixture) in payoff.atoms().iter().enumerate() {
        let capped;
        let per_state: &C = match w {
            Some(w) => {
                capped = curve.cap(w[i])?;
                &capped
            }
            None => curve,
        };
        let mut acc = 0.0;
        for &(v, wt) in mixture {
            acc += wt * per_state.evaluate(v)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Outcome of a feasibility check, with enough detail to explain failures.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    pub cost: f64,
    pub budget: f64,
    pub cost_ok: bool,
    pub nonnegative_ok: bool,
    pub bound_ok: bool,
    /// Set when the budget is constrained but the space carries no bounds.
    pub missing_bound: bool,
}

/// Checks 0 ≤ X (≤ W when constrained) and cost ≤ x + 1e-9.
pub fn is_feasible(
    payoff: &RandomizedPayoff,
    space: &ScenarioSpace,
    pricing: &PricingMeasure,
    budget: &BudgetSpec,
) -> FeasibilityVerdict {
    let c = cost(payoff, space, pricing);
    let cost_ok = c <= budget.x + COST_TOL;
    // Constructor enforces nonnegativity; re-checked for completeness.
    let nonnegative_ok = payoff
        .atoms()
        .iter()
        .all(|m| m.iter().all(|(v, _)| *v >= 0.0));
    let (bound_ok, missing_bound) = if budget.constrained {
        match space.w() {
            Some(w) => (
                payoff
                    .atoms()
                    .iter()
                    .zip(w)
                    .all(|(m, wi)| m.iter().all(|(v, _)| *v <= wi + COST_TOL)),
                false,
            ),
            None => (false, true),
        }
    } else {
        (true, false)
    };
    FeasibilityVerdict {
        feasible: cost_ok && nonnegative_ok && bound_ok,
        cost: c,
        budget: budget.x,
        cost_ok,
        nonnegative_ok,
        bound_ok,
        missing_bound,
    }
}

/// Minimum expected utility over the family's extremes and the index where
/// it is attained. Linearity in the density puts the infimum over the hull
/// at an extreme.
pub fn worst_case_utility<C: Curve>(
    payoff: &RandomizedPayoff,
    space: &ScenarioSpace,
    family: &MeasureFamily,
    curve: &C,
    cap_by_w: bool,
) -> Result<(f64, usize)> {
    let values = state_utilities(payoff, space, curve, cap_by_w)?;
    worst_case_of_values(space, family, &values)
}

pub(crate) fn worst_case_of_values(
    space: &ScenarioSpace,
    family: &MeasureFamily,
    values: &[f64],
) -> Result<(f64, usize)> {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (j, d) in family.extremes().iter().enumerate() {
        let e = expectation(space, d, values)?;
        if e < best {
            best = e;
            arg = j;
        }
    }
    Ok((best, arg))
}
