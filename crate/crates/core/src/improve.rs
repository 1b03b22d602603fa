//! The payoff-improvement operator: replaces every mixture atom lying in a
//! gap of the (capped) utility by a two-point randomization on the gap
//! endpoints, keeping the expected envelope utility and never raising the
//! price.
//!
//! Atoms are grouped into classes sharing a bound level and a gap interval.
//! Within a class the conditional mass is rearranged so that the total mass
//! on the low endpoint equals the class mean of λ (the discrete balance
//! equation), and the high endpoint is routed to the states where the
//! pricing measure is cheap relative to the conditioning measure (low
//! φ = ψ/z). Routing the high endpoint the other way can raise the price;
//! both orientations are priced on every run so the comparison stays
//! visible.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::payoff::{cost, Atom, BudgetSpec, RandomizedPayoff};
use crate::space::{
    conditional_under, expectation, group_by_w, ConditionalLaw, Density, MeasureFamily,
    PricingMeasure, ScenarioSpace,
};
use crate::utility::{concavify, gap_against_envelope, ConcaveCurve, Curve, UtilityCurve, NO_CAP};

/// The three expectations of the utility chain must agree within this.
pub const CHAIN_TOL: f64 = 1e-10;

/// Atom index to (low-endpoint weight, high-endpoint weight, a, b), one map
/// per state.
type EndpointSplit = BTreeMap<usize, (f64, f64, f64, f64)>;

/// Class balance (a-mass versus λ-mean) must hold within this.
pub const BALANCE_TOL: f64 = 1e-12;

/// One mixture atom sitting strictly inside a gap.
#[derive(Clone, Debug, PartialEq)]
pub struct GapSlot {
    pub state: usize,
    pub atom: usize,
    /// The payoff value being improved.
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    /// Conditional mass of the slot: group weight of the state times the
    /// atom weight.
    pub mass: f64,
}

/// Threshold data for one (group, gap-interval) class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPlan {
    pub group: usize,
    /// Bound level of the group ([`NO_CAP`] for the global group).
    pub level: f64,
    pub a: f64,
    pub b: f64,
    /// Total conditional mass of the class.
    pub mass: f64,
    pub lambda_mean: f64,
    /// Normalized threshold: the slice [0, sigma) of the φ-sorted scale
    /// receives the high endpoint, the rest the low endpoint.
    pub sigma: f64,
    /// Position (within `slots`) of the fractionally split slot and the
    /// fraction of its mass routed to the high endpoint, if any.
    pub boundary: Option<(usize, f64)>,
    /// |a-mass − λ-mean · mass| after assignment.
    pub balance_residual: f64,
    /// Discrete balance function sampled at the slot boundaries: placing the
    /// threshold at scale point s would leave a-mass fraction (1 − s), so
    /// f(s) = (1 − s) − λ-mean; σ is its exact root.
    pub balance_samples: Vec<(f64, f64)>,
    /// Indices into the plan's slot list, φ-ascending.
    pub slots: Vec<usize>,
}

/// The three expectations of the improvement chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainCheck {
    /// E_Q[U^v(X⋆)]
    pub e_u_star: f64,
    /// E_Q[U^v_c(X⋆)]
    pub e_uc_star: f64,
    /// E_Q[U^v_c(X)]
    pub e_uc_original: f64,
}

impl ChainCheck {
    pub fn max_deviation(&self) -> f64 {
        (self.e_u_star - self.e_uc_star)
            .abs()
            .max((self.e_uc_star - self.e_uc_original).abs())
    }
}

/// Full audit record of one improvement run.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprovementPlan {
    pub slots: Vec<GapSlot>,
    /// φ = ψ/z per state.
    pub phi: Vec<f64>,
    pub classes: Vec<ClassPlan>,
    pub chain: ChainCheck,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Price of the payoff built with the opposite endpoint orientation
    /// (high endpoint on high φ); never below `cost_after`.
    pub cost_reversed: f64,
    pub conditional: bool,
}

/// Result of splitting a class's φ-sorted mass at the balance threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSplit {
    /// Normalized threshold in [0,1].
    pub sigma: f64,
    pub lambda_mean: f64,
    /// Slot index containing the threshold and the fraction of that slot's
    /// mass on the low (high-endpoint) side; `None` when σ lands exactly on
    /// a slot boundary.
    pub boundary: Option<(usize, f64)>,
    /// Per-slot mass routed to the high endpoint, in input order.
    pub b_mass: Vec<f64>,
    pub balance_residual: f64,
    /// (scale point, balance value) samples at the slot boundaries.
    pub samples: Vec<(f64, f64)>,
}

/// Computes the balance threshold for one class. `weights` are the slot
/// masses in φ-ascending order; `lambdas` the per-slot mixing weights. Mass
/// `Σ wⱼ(1−λⱼ)` is routed to the high endpoint starting from the low end of
/// the scale, so the remaining a-mass equals `Σ wⱼλⱼ` exactly.
pub fn sigma_threshold(weights: &[f64], lambdas: &[f64]) -> Result<SigmaSplit> {
    if weights.is_empty() || weights.len() != lambdas.len() {
        return Err(Error::Invalid(
            "class needs matching, nonempty weights and lambdas".into(),
        ));
    }
    for (i, w) in weights.iter().enumerate() {
        if !(*w > 0.0) || !w.is_finite() {
            return Err(Error::Invalid(format!(
                "class weight[{i}] = {w} not positive"
            )));
        }
    }
    for (i, l) in lambdas.iter().enumerate() {
        if !(*l >= -BALANCE_TOL) || !(*l <= 1.0 + BALANCE_TOL) {
            return Err(Error::Invalid(format!("lambda[{i}] = {l} outside [0,1]")));
        }
    }
    let total: f64 = weights.iter().sum();
    let lambda_sum: f64 = weights.iter().zip(lambdas).map(|(w, l)| w * l).sum();
    let lambda_mean = lambda_sum / total;
    let target_b: f64 = weights
        .iter()
        .zip(lambdas)
        .map(|(w, l)| w * (1.0 - l))
        .sum();
    let mut b_mass = Vec::with_capacity(weights.len());
    let mut boundary = None;
    let mut remaining = target_b;
    for (j, &w) in weights.iter().enumerate() {
        let take = remaining.min(w).max(0.0);
        if take > 0.0 && take < w {
            boundary = Some((j, take / w));
        }
        b_mass.push(take);
        remaining -= take;
    }
    let a_assigned: f64 = weights.iter().zip(&b_mass).map(|(w, b)| w - b).sum();
    let balance_residual = (a_assigned - lambda_sum).abs();
    let sigma = (target_b / total).clamp(0.0, 1.0);
    let mut samples = Vec::with_capacity(weights.len() + 1);
    let mut cum = 0.0;
    samples.push((0.0, 1.0 - lambda_mean));
    for &w in weights {
        cum += w;
        let s = cum / total;
        samples.push((s, (1.0 - s) - lambda_mean));
    }
    Ok(SigmaSplit {
        sigma,
        lambda_mean,
        boundary,
        b_mass,
        balance_residual,
        samples,
    })
}

/// Per-group capped curves and envelopes for a conditioning structure.
pub(crate) struct CapSystem {
    pub law: ConditionalLaw,
    pub capped: Vec<UtilityCurve>,
    pub envelopes: Vec<ConcaveCurve>,
    /// group index per state
    pub state_group: Vec<usize>,
}

impl CapSystem {
    pub fn new(curve: &UtilityCurve, space: &ScenarioSpace, conditional: bool) -> Result<Self> {
        let law = if conditional {
            group_by_w(space)?
        } else {
            ConditionalLaw::global(space)
        };
        let mut capped = Vec::with_capacity(law.groups.len());
        let mut envelopes = Vec::with_capacity(law.groups.len());
        let mut state_group = alloc::vec![0; space.n()];
        for (gi, g) in law.groups.iter().enumerate() {
            let cg = if g.level == NO_CAP {
                curve.clone()
            } else {
                curve.cap(g.level)?
            };
            envelopes.push(concavify(&cg));
            capped.push(cg);
            for &i in &g.states {
                state_group[i] = gi;
            }
        }
        Ok(CapSystem {
            law,
            capped,
            envelopes,
            state_group,
        })
    }

    /// Per-state conditional expectation of U^v applied to the payoff.
    pub fn utility_values(&self, payoff: &RandomizedPayoff) -> Vec<f64> {
        self.state_values(payoff, false)
    }

    /// Per-state conditional expectation of U^v_c applied to the payoff.
    pub fn envelope_values(&self, payoff: &RandomizedPayoff) -> Vec<f64> {
        self.state_values(payoff, true)
    }

    fn state_values(&self, payoff: &RandomizedPayoff, envelope: bool) -> Vec<f64> {
        payoff
            .atoms()
            .iter()
            .enumerate()
            .map(|(i, mixture)| {
                let g = self.state_group[i];
                mixture
                    .iter()
                    .map(|&(v, wt)| {
                        let val = if envelope {
                            self.envelopes[g].piecewise().evaluate(v)
                        } else {
                            self.capped[g].piecewise().evaluate(v)
                        };
                        wt * val
                    })
                    .sum()
            })
            .collect()
    }
}

/// Improves a payoff under an equivalent conditioning density: every atom in
/// a gap moves onto the gap endpoints, preserving the expected envelope
/// utility and not raising the Q^e-price. Returns the improved payoff and
/// the full plan with the chain and price checks already evaluated.
pub fn improve(
    payoff: &RandomizedPayoff,
    space: &ScenarioSpace,
    density: &Density,
    pricing: &PricingMeasure,
    curve: &UtilityCurve,
    conditional: bool,
) -> Result<(RandomizedPayoff, ImprovementPlan)> {
    if !density.is_equivalent() {
        return Err(Error::NotEquivalent(
            "improvement conditions on Q, which needs all z > 0".into(),
        ));
    }
    let phi = pricing.phi(density)?;
    let caps = CapSystem::new(curve, space, conditional)?;
    let cond = conditional_under(&caps.law, density, pricing)?;

    // Collect gap slots and group them into (group, a, b) classes. Keys use
    // exact bit patterns: endpoints of one group's envelope are shared knots,
    // so equal gaps compare equal exactly.
    let mut slots: Vec<GapSlot> = Vec::new();
    let mut classes: BTreeMap<(usize, u64, u64), Vec<usize>> = BTreeMap::new();
    for (gi, g) in cond.groups.iter().enumerate() {
        let level = g.level;
        for (pos, &i) in g.states.iter().enumerate() {
            let cond_weight = g.weights[pos];
            for (j, &(y, wt)) in payoff.state(i).iter().enumerate() {
                if level != NO_CAP && y > level {
                    return Err(Error::Domain(format!(
                        "state {i} atom {j} value {y} above its bound {level}"
                    )));
                }
                if level == NO_CAP && y > curve.domain_end() {
                    return Err(Error::Domain(format!(
                        "state {i} atom {j} value {y} beyond the curve domain {}",
                        curve.domain_end()
                    )));
                }
                let gap = gap_against_envelope(&caps.capped[gi], &caps.envelopes[gi], level, y);
                if gap.is_degenerate() {
                    continue;
                }
                if !gap.b.is_finite() {
                    return Err(Error::Domain(format!(
                        "state {i} atom {j}: gap at {y} has no right endpoint \
                         (positive tail slope)"
                    )));
                }
                let slot = GapSlot {
                    state: i,
                    atom: j,
                    y,
                    a: gap.a,
                    b: gap.b,
                    lambda: gap.lambda,
                    mass: cond_weight * wt,
                };
                classes
                    .entry((gi, gap.a.to_bits(), gap.b.to_bits()))
                    .or_default()
                    .push(slots.len());
                slots.push(slot);
            }
        }
    }

    // Route endpoint mass class by class; the reversed orientation is priced
    // alongside for the audit trail.
    let mut replacements: Vec<EndpointSplit> = alloc::vec![BTreeMap::new(); space.n()];
    let mut replacements_rev: Vec<EndpointSplit> = alloc::vec![BTreeMap::new(); space.n()];
    let mut class_plans = Vec::with_capacity(classes.len());
    for ((gi, a_bits, b_bits), mut members) in classes {
        let a = f64::from_bits(a_bits);
        let b = f64::from_bits(b_bits);
        // Stable sort keeps (state, atom) order among equal φ.
        members.sort_by(|&s, &t| phi[slots[s].state].total_cmp(&phi[slots[t].state]));
        let weights: Vec<f64> = members.iter().map(|&s| slots[s].mass).collect();
        let lambdas: Vec<f64> = members.iter().map(|&s| slots[s].lambda).collect();
        let split = sigma_threshold(&weights, &lambdas)?;
        let rev = {
            let mut wr: Vec<f64> = weights.clone();
            let mut lr: Vec<f64> = lambdas.clone();
            wr.reverse();
            lr.reverse();
            sigma_threshold(&wr, &lr)?
        };
        for (pos, &s) in members.iter().enumerate() {
            let slot = &slots[s];
            let wt = payoff.state(slot.state)[slot.atom].1;
            let frac_b = split.b_mass[pos] / slot.mass;
            let wb = wt * frac_b;
            let wa = wt - wb;
            replacements[slot.state].insert(slot.atom, (wa, wb, a, b));
            let frac_b_rev = rev.b_mass[members.len() - 1 - pos] / slot.mass;
            let wb_rev = wt * frac_b_rev;
            replacements_rev[slot.state].insert(slot.atom, (wt - wb_rev, wb_rev, a, b));
        }
        class_plans.push(ClassPlan {
            group: gi,
            level: cond.groups[gi].level,
            a,
            b,
            mass: weights.iter().sum(),
            lambda_mean: split.lambda_mean,
            sigma: split.sigma,
            boundary: split.boundary,
            balance_residual: split.balance_residual,
            balance_samples: split.samples.clone(),
            slots: members,
        });
    }

    let star = rebuild(space, payoff, &replacements, conditional)?;
    let reversed = rebuild(space, payoff, &replacements_rev, conditional)?;

    let chain = ChainCheck {
        e_u_star: expectation(space, density, &caps.utility_values(&star))?,
        e_uc_star: expectation(space, density, &caps.envelope_values(&star))?,
        e_uc_original: expectation(space, density, &caps.envelope_values(payoff))?,
    };
    let plan = ImprovementPlan {
        slots,
        phi,
        classes: class_plans,
        chain,
        cost_before: cost(payoff, space, pricing),
        cost_after: cost(&star, space, pricing),
        cost_reversed: cost(&reversed, space, pricing),
        conditional,
    };
    Ok((star, plan))
}

/// Applies per-atom endpoint replacements, merging exactly equal values.
fn rebuild(
    space: &ScenarioSpace,
    payoff: &RandomizedPayoff,
    replacements: &[EndpointSplit],
    bounded: bool,
) -> Result<RandomizedPayoff> {
    let mut atoms: Vec<Vec<Atom>> = Vec::with_capacity(space.n());
    for (i, mixture) in payoff.atoms().iter().enumerate() {
        let mut out: Vec<Atom> = Vec::with_capacity(mixture.len() + 1);
        let mut push = |value: f64, weight: f64| {
            if weight <= 0.0 {
                return;
            }
            if let Some(existing) = out.iter_mut().find(|(v, _)| *v == value) {
                existing.1 += weight;
            } else {
                out.push((value, weight));
            }
        };
        for (j, &(v, wt)) in mixture.iter().enumerate() {
            match replacements[i].get(&j) {
                Some(&(wa, wb, a, b)) => {
                    push(b, wb);
                    push(a, wa);
                }
                None => push(v, wt),
            }
        }
        atoms.push(out);
    }
    RandomizedPayoff::new(space, atoms, bounded)
}

/// One (extreme, payoff) cell of the supremum check.
#[derive(Clone, Debug, PartialEq)]
pub struct SupremumEntry {
    pub extreme: usize,
    pub payoff: usize,
    /// E_Q[U^v_c(X)]
    pub e_uc_x: f64,
    /// E_Q[U^v(X⋆)] after improvement
    pub e_u_star: f64,
    pub chain_gap: f64,
    /// Exact value of sup E_Q[U^v_c] over the budget set.
    pub sup_estimate: f64,
    /// sup_estimate − e_uc_x; nonnegative up to solver rounding.
    pub sup_slack: f64,
}

/// Evidence that sup E_Q[U] = sup E_Q[U_c] measure by measure: improving any
/// feasible payoff reaches its envelope utility without leaving the budget
/// set, and the envelope utility never exceeds the concave supremum.
#[derive(Clone, Debug, PartialEq)]
pub struct SupremumReport {
    pub entries: Vec<SupremumEntry>,
    pub skipped_extremes: Vec<usize>,
    pub max_chain_gap: f64,
    pub min_sup_slack: f64,
}

pub fn improve_supremum_check(
    space: &ScenarioSpace,
    family: &MeasureFamily,
    pricing: &PricingMeasure,
    curve: &UtilityCurve,
    budget: &BudgetSpec,
    payoffs: &[RandomizedPayoff],
) -> Result<SupremumReport> {
    let objective = crate::solve::ConcaveObjective::new(curve, space, budget.constrained)?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut max_chain_gap: f64 = 0.0;
    let mut min_sup_slack = f64::INFINITY;
    let caps = CapSystem::new(curve, space, budget.constrained)?;
    for (qi, q) in family.extremes().iter().enumerate() {
        if !q.is_equivalent() {
            skipped.push(qi);
            continue;
        }
        let sup = crate::solve::maximize_concave_single(space, q, pricing, &objective, budget.x)?;
        for (xi, x) in payoffs.iter().enumerate() {
            let (star, plan) = improve(x, space, q, pricing, curve, budget.constrained)?;
            let e_uc_x = plan.chain.e_uc_original;
            let e_u_star = expectation(space, q, &caps.utility_values(&star))?;
            let chain_gap = (e_u_star - e_uc_x).abs();
            let sup_slack = sup.value - e_uc_x;
            max_chain_gap = max_chain_gap.max(chain_gap);
            min_sup_slack = min_sup_slack.min(sup_slack);
            entries.push(SupremumEntry {
                extreme: qi,
                payoff: xi,
                e_uc_x,
                e_u_star,
                chain_gap,
                sup_estimate: sup.value,
                sup_slack,
            });
        }
    }
    Ok(SupremumReport {
        entries,
        skipped_extremes: skipped,
        max_chain_gap,
        min_sup_slack,
    })
}
