//! Evaluates the two minimax diagrams: eight values (sup-inf and inf-sup,
//! raw curve and envelope, full family and its equivalent part) and the
//! eight relations between them, five equalities and three inequalities.
//!
//! Verdicts account for the certified gaps of the grid-based quantities: a
//! relation is violated only when the discrepancy exceeds tolerance plus
//! both gaps, and discrepancies inside the gap budget stay inconclusive
//! rather than pretending precision the solver does not have.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::instance::{generate_instance, GenConfig, Instance};
use crate::payoff::{BudgetSpec, RandomizedPayoff};
use crate::solve::{solve_query, Method, Order, Scope, ValueQuery};

/// Slack allowed on equality relations before gaps are considered.
pub const EQUALITY_TOL: f64 = 1e-7;

/// Slack allowed on inequality relations before gaps are considered.
pub const INEQUALITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagramConfig {
    pub equality_tolerance: f64,
    pub inequality_tolerance: f64,
}

impl Default for DiagramConfig {
    fn default() -> Self {
        DiagramConfig {
            equality_tolerance: EQUALITY_TOL,
            inequality_tolerance: INEQUALITY_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    /// The discrepancy exceeds the tolerance but not the certified gaps,
    /// so the data cannot distinguish the relation from its failure.
    InconclusiveWithinGap,
    Violated,
}

/// One corner of the diagram.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantity {
    pub name: &'static str,
    /// NaN when the solver failed; the method string then explains why.
    pub value: f64,
    pub gap: f64,
    pub method: String,
}

/// Fixed order of the eight quantities in every report.
pub const QUANTITY_NAMES: [&str; 8] = [
    "supinf_uc_qe",
    "supinf_uc_q",
    "infsup_uc_q",
    "infsup_uc_qe",
    "supinf_u_qe",
    "supinf_u_q",
    "infsup_u_q",
    "infsup_u_qe",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RelationCheck {
    pub name: &'static str,
    pub equality: bool,
    /// Indices into the quantity array; inequalities read lhs ≤ rhs.
    pub lhs: usize,
    pub rhs: usize,
    /// lhs − rhs, signed.
    pub slack: f64,
    pub tolerance: f64,
    /// Tolerance plus both certified gaps.
    pub allowance: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagramReport {
    pub constrained: bool,
    pub x: f64,
    /// Set when E_ψ[W] ≤ x: the bound itself is affordable, X⋆ = W, and
    /// every corner collapses to the worst-case value of W.
    pub trivial_regime: bool,
    pub quantities: Vec<Quantity>,
    pub relations: Vec<RelationCheck>,
    pub equality_tolerance: f64,
    pub inequality_tolerance: f64,
}

/// (name, equality?, lhs, rhs); the concave and raw halves share one layout.
const RELATIONS: [(&str, bool, usize, usize); 8] = [
    ("(1*)", true, 0, 1),
    ("(2*)", true, 1, 2),
    ("(3*)", true, 2, 3),
    ("(4*)", false, 4, 0),
    ("(5*)", true, 3, 7),
    ("(6*)", true, 4, 5),
    ("(7*)", false, 5, 6),
    ("(8*)", false, 6, 7),
];

fn judge(equality: bool, slack: f64, tolerance: f64, gaps: f64) -> Verdict {
    let excess = if equality { slack.abs() } else { slack };
    if !excess.is_finite() {
        return Verdict::InconclusiveWithinGap;
    }
    if excess <= tolerance {
        Verdict::Holds
    } else if excess <= tolerance + gaps {
        Verdict::InconclusiveWithinGap
    } else {
        Verdict::Violated
    }
}

fn build_relations(quantities: &[Quantity], config: &DiagramConfig) -> Vec<RelationCheck> {
    RELATIONS
        .iter()
        .map(|&(name, equality, lhs, rhs)| {
            let slack = quantities[lhs].value - quantities[rhs].value;
            let tolerance = if equality {
                config.equality_tolerance
            } else {
                config.inequality_tolerance
            };
            let gaps = quantities[lhs].gap + quantities[rhs].gap;
            RelationCheck {
                name,
                equality,
                lhs,
                rhs,
                slack,
                tolerance,
                allowance: tolerance + gaps,
                verdict: judge(equality, slack, tolerance, gaps),
            }
        })
        .collect()
}

impl DiagramReport {
    /// Recomputes every verdict from the stored numbers; must reproduce
    /// `relations` exactly.
    pub fn recheck(&self) -> Vec<RelationCheck> {
        build_relations(
            &self.quantities,
            &DiagramConfig {
                equality_tolerance: self.equality_tolerance,
                inequality_tolerance: self.inequality_tolerance,
            },
        )
    }

    pub fn violations(&self) -> usize {
        self.relations
            .iter()
            .filter(|r| r.verdict == Verdict::Violated)
            .count()
    }

    pub fn inconclusive(&self) -> usize {
        self.relations
            .iter()
            .filter(|r| r.verdict == Verdict::InconclusiveWithinGap)
            .count()
    }
}

/// Evaluates all eight corners of the instance's diagram and checks the
/// relations. With the budget constrained and the bound affordable
/// (E_ψ[W] ≤ x) the problem is trivial: monotonicity puts the optimum at
/// X⋆ = W for every measure, all corners coincide, and the report says so
/// instead of grinding degenerate solves.
pub fn evaluate_diagram(
    instance: &Instance,
    constrained: bool,
    config: &DiagramConfig,
) -> Result<DiagramReport> {
    let budget = BudgetSpec::new(instance.x, constrained)?;
    if constrained && instance.space.w().is_none() {
        return Err(Error::Invalid(
            "constrained diagram needs per-state bounds".into(),
        ));
    }
    if constrained && !budget.non_trivial(&instance.space, &instance.pricing)? {
        return trivial_report(instance, config);
    }
    let run = |order: Order, envelope: bool, scope: Scope, name: &'static str| -> Quantity {
        let query = ValueQuery {
            envelope,
            constrained,
            x: instance.x,
            scope,
            order,
            method: Method::Exact,
        };
        match solve_query(
            &instance.space,
            &instance.family,
            &instance.pricing,
            &instance.curve,
            &query,
        ) {
            Ok(r) => Quantity {
                name,
                value: r.value,
                gap: r.gap,
                method: r.method,
            },
            Err(e) => Quantity {
                name,
                value: f64::NAN,
                gap: f64::INFINITY,
                method: format!("failed: {e}"),
            },
        }
    };
    let quantities = alloc::vec![
        run(Order::SupInf, true, Scope::Equivalent, QUANTITY_NAMES[0]),
        run(Order::SupInf, true, Scope::Full, QUANTITY_NAMES[1]),
        run(Order::InfSup, true, Scope::Full, QUANTITY_NAMES[2]),
        run(Order::InfSup, true, Scope::Equivalent, QUANTITY_NAMES[3]),
        run(Order::SupInf, false, Scope::Equivalent, QUANTITY_NAMES[4]),
        run(Order::SupInf, false, Scope::Full, QUANTITY_NAMES[5]),
        run(Order::InfSup, false, Scope::Full, QUANTITY_NAMES[6]),
        run(Order::InfSup, false, Scope::Equivalent, QUANTITY_NAMES[7]),
    ];
    let relations = build_relations(&quantities, config);
    Ok(DiagramReport {
        constrained,
        x: instance.x,
        trivial_regime: false,
        quantities,
        relations,
        equality_tolerance: config.equality_tolerance,
        inequality_tolerance: config.inequality_tolerance,
    })
}

fn trivial_report(instance: &Instance, config: &DiagramConfig) -> Result<DiagramReport> {
    let w = instance
        .space
        .w()
        .expect("trivial regime only arises with bounds");
    let payoff = RandomizedPayoff::deterministic(&instance.space, w, true)?;
    let (value, _) = crate::payoff::worst_case_utility(
        &payoff,
        &instance.space,
        &instance.family,
        &instance.curve,
        true,
    )?;
    let quantities: Vec<Quantity> = QUANTITY_NAMES
        .iter()
        .map(|name| Quantity {
            name,
            value,
            gap: 0.0,
            method: "trivial regime, X* = W".into(),
        })
        .collect();
    let relations = build_relations(&quantities, config);
    Ok(DiagramReport {
        constrained: true,
        x: instance.x,
        trivial_regime: true,
        quantities,
        relations,
        equality_tolerance: config.equality_tolerance,
        inequality_tolerance: config.inequality_tolerance,
    })
}

/// Aggregate outcome of a seeded ensemble run.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleReport {
    pub count: usize,
    /// Diagrams actually checked (trivial-regime draws are excluded).
    pub evaluated: usize,
    pub trivial: usize,
    pub violations: usize,
    pub inconclusive: usize,
    /// Largest |slack| seen on any equality relation.
    pub max_equality_slack: f64,
    /// Largest positive slack seen on any inequality relation.
    pub max_inequality_excess: f64,
    /// (seed, relation name) of every violated relation.
    pub failures: Vec<(u64, &'static str)>,
    /// Wall-clock totals, present when timing is available.
    pub elapsed_micros: Option<u64>,
    pub max_instance_micros: Option<u64>,
}

/// Runs seeded diagrams and aggregates the verdicts. Seeds are consumed
/// consecutively from `seed`, so reports are reproducible.
pub fn ensemble_verify(
    gen: &GenConfig,
    config: &DiagramConfig,
    seed: u64,
    count: usize,
    constrained: bool,
) -> Result<EnsembleReport> {
    let mut report = EnsembleReport {
        count,
        evaluated: 0,
        trivial: 0,
        violations: 0,
        inconclusive: 0,
        max_equality_slack: 0.0,
        max_inequality_excess: 0.0,
        failures: Vec::new(),
        elapsed_micros: None,
        max_instance_micros: None,
    };
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();
    #[cfg(feature = "std")]
    let mut slowest: u64 = 0;
    for k in 0..count {
        let instance_seed = seed.wrapping_add(k as u64);
        let instance = generate_instance(gen, instance_seed)?;
        #[cfg(feature = "std")]
        let t0 = std::time::Instant::now();
        let diagram = evaluate_diagram(&instance, constrained, config)?;
        #[cfg(feature = "std")]
        {
            slowest = slowest.max(t0.elapsed().as_micros() as u64);
        }
        if diagram.trivial_regime {
            report.trivial += 1;
            continue;
        }
        report.evaluated += 1;
        for r in &diagram.relations {
            match r.verdict {
                Verdict::Violated => {
                    report.violations += 1;
                    report.failures.push((instance_seed, r.name));
                }
                Verdict::InconclusiveWithinGap => report.inconclusive += 1,
                Verdict::Holds => {}
            }
            if r.equality {
                report.max_equality_slack = report.max_equality_slack.max(r.slack.abs());
            } else {
                report.max_inequality_excess = report.max_inequality_excess.max(r.slack);
            }
        }
    }
    #[cfg(feature = "std")]
    {
        report.elapsed_micros = Some(started.elapsed().as_micros() as u64);
        report.max_instance_micros = Some(slowest);
    }
    Ok(report)
}
