//! File formats: the instance document, payoff documents, and the JSON
//! shapes of command outputs.
//!
//! Every scalar field accepts either a JSON number or an exact-fraction
//! literal "a/b"; emission always writes plain numbers, so parse(emit(x))
//! recovers x bit for bit.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use robustmax_core::improve::ImprovementPlan;
use robustmax_core::payoff::RandomizedPayoff;
use robustmax_core::solve::SolveResult;
use robustmax_core::space::{Density, MeasureFamily, PricingMeasure, ScenarioSpace};
use robustmax_core::utility::UtilityCurve;
use robustmax_core::{Instance, Result as CoreResult};

/// Scalar that deserializes from a number or a fraction string.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num(v)
    }
}

/// Parses "a/b" or a plain numeric literal. The quotient is the nearest
/// float to the intended rational, one rounding total.
pub fn parse_scalar(text: &str) -> Result<f64, String> {
    let t = text.trim();
    if let Some((a, b)) = t.split_once('/') {
        let num: f64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad numerator in {t:?}"))?;
        let den: f64 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad denominator in {t:?}"))?;
        if den == 0.0 {
            return Err(format!("zero denominator in {t:?}"));
        }
        Ok(num / den)
    } else {
        t.parse()
            .map_err(|_| format!("{t:?} is neither a number nor a fraction"))
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(Num(v)),
            Repr::Text(t) => parse_scalar(&t).map(Num).map_err(serde::de::Error::custom),
        }
    }
}

fn nums(values: &[f64]) -> Vec<Num> {
    values.iter().copied().map(Num).collect()
}

fn floats(values: &[Num]) -> Vec<f64> {
    values.iter().map(|n| n.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveDoc {
    pub knots: Vec<Num>,
    pub values: Vec<Num>,
    pub slopes: Vec<Num>,
    pub tail_slope: Num,
}

impl CurveDoc {
    pub fn from_curve(curve: &UtilityCurve) -> Self {
        CurveDoc {
            knots: nums(curve.knots()),
            values: nums(curve.values()),
            slopes: nums(curve.slopes()),
            tail_slope: Num(curve.tail_slope()),
        }
    }

    pub fn to_curve(&self) -> CoreResult<UtilityCurve> {
        UtilityCurve::new(
            floats(&self.knots),
            floats(&self.values),
            floats(&self.slopes),
            self.tail_slope.0,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDoc {
    pub p: Vec<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Num>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingDoc {
    pub psi: Vec<Num>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetDoc {
    pub x: Num,
}

/// One instance per file: utility curve, scenario space, pricing density,
/// family extremes, budget, and the generator seed when one produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub utility: CurveDoc,
    pub space: SpaceDoc,
    pub pricing: PricingDoc,
    /// Extreme densities z, one array per extreme.
    pub family: Vec<Vec<Num>>,
    pub budget: BudgetDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InstanceDoc {
    pub fn from_instance(instance: &Instance, seed: Option<u64>) -> Self {
        InstanceDoc {
            utility: CurveDoc::from_curve(&instance.curve),
            space: SpaceDoc {
                p: nums(instance.space.p()),
                w: instance.space.w().map(nums),
                labels: instance.space.labels().map(|l| l.to_vec()),
            },
            pricing: PricingDoc {
                psi: nums(instance.pricing.psi()),
            },
            family: instance
                .family
                .extremes()
                .iter()
                .map(|d| nums(d.z()))
                .collect(),
            budget: BudgetDoc { x: Num(instance.x) },
            seed,
        }
    }

    pub fn to_instance(&self) -> CoreResult<Instance> {
        let space = ScenarioSpace::new(
            floats(&self.space.p),
            self.space.w.as_ref().map(|w| floats(w)),
            self.space.labels.clone(),
        )?;
        let extremes = self
            .family
            .iter()
            .map(|z| Density::new(&space, floats(z)))
            .collect::<CoreResult<Vec<_>>>()?;
        let family = MeasureFamily::new(extremes)?;
        let pricing = PricingMeasure::new(&space, floats(&self.pricing.psi))?;
        let curve = self.utility.to_curve()?;
        Ok(Instance {
            space,
            family,
            pricing,
            curve,
            x: self.budget.x.0,
        })
    }
}

/// Per-state atom mixtures; `bounded` asks for the wᵢ checks on input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffDoc {
    /// atoms[i] lists [value, probability] pairs for state i.
    pub atoms: Vec<Vec<(Num, Num)>>,
    #[serde(default)]
    pub bounded: bool,
}

impl PayoffDoc {
    pub fn from_payoff(payoff: &RandomizedPayoff) -> Self {
        PayoffDoc {
            atoms: payoff
                .atoms()
                .iter()
                .map(|st| st.iter().map(|&(y, w)| (Num(y), Num(w))).collect())
                .collect(),
            bounded: payoff.is_bounded(),
        }
    }

    pub fn to_payoff(&self, space: &ScenarioSpace) -> CoreResult<RandomizedPayoff> {
        let atoms = self
            .atoms
            .iter()
            .map(|st| st.iter().map(|&(y, w)| (y.0, w.0)).collect())
            .collect();
        RandomizedPayoff::new(space, atoms, self.bounded)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SlotDoc {
    pub state: usize,
    pub atom: usize,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassDoc {
    pub group: usize,
    /// Bound level of the group; null for the unbounded global group.
    pub level: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub mass: f64,
    pub lambda_mean: f64,
    pub sigma: f64,
    pub boundary: Option<(usize, f64)>,
    pub balance_residual: f64,
    pub balance_samples: Vec<(f64, f64)>,
    pub slots: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainDoc {
    pub e_u_star: f64,
    pub e_uc_star: f64,
    pub e_uc_original: f64,
    pub max_deviation: f64,
}

/// Output of `improve`: the improved payoff plus the full audit.
#[derive(Clone, Debug, Serialize)]
pub struct ImproveDoc {
    pub payoff: PayoffDoc,
    pub phi: Vec<f64>,
    pub slots: Vec<SlotDoc>,
    pub classes: Vec<ClassDoc>,
    pub chain: ChainDoc,
    pub cost_before: f64,
    pub cost_after: f64,
    pub cost_reversed: f64,
    pub conditional: bool,
}

impl ImproveDoc {
    pub fn from_plan(payoff: &RandomizedPayoff, plan: &ImprovementPlan) -> Self {
        ImproveDoc {
            payoff: PayoffDoc::from_payoff(payoff),
            phi: plan.phi.clone(),
            slots: plan
                .slots
                .iter()
                .map(|s| SlotDoc {
                    state: s.state,
                    atom: s.atom,
                    y: s.y,
                    a: s.a,
                    b: s.b,
                    lambda: s.lambda,
                    mass: s.mass,
                })
                .collect(),
            classes: plan
                .classes
                .iter()
                .map(|c| ClassDoc {
                    group: c.group,
                    level: c.level.is_finite().then_some(c.level),
                    a: c.a,
                    b: c.b,
                    mass: c.mass,
                    lambda_mean: c.lambda_mean,
                    sigma: c.sigma,
                    boundary: c.boundary,
                    balance_residual: c.balance_residual,
                    balance_samples: c.balance_samples.clone(),
                    slots: c.slots.clone(),
                })
                .collect(),
            chain: ChainDoc {
                e_u_star: plan.chain.e_u_star,
                e_uc_star: plan.chain.e_uc_star,
                e_uc_original: plan.chain.e_uc_original,
                max_deviation: plan.chain.max_deviation(),
            },
            cost_before: plan.cost_before,
            cost_after: plan.cost_after,
            cost_reversed: plan.cost_reversed,
            conditional: plan.conditional,
        }
    }
}

/// Output of `solve`.
#[derive(Clone, Debug, Serialize)]
pub struct SolveDoc {
    pub value: f64,
    /// Certified bracket width; 0 for exact solvers.
    pub gap: f64,
    pub method: String,
    pub constrained: bool,
    pub x: f64,
    pub mixture: Option<Vec<f64>>,
    pub payoff: Option<PayoffDoc>,
    pub cost: Option<f64>,
}

impl SolveDoc {
    pub fn from_result(result: &SolveResult, constrained: bool, x: f64, cost: Option<f64>) -> Self {
        SolveDoc {
            value: result.value,
            gap: result.gap,
            method: result.method.clone(),
            constrained,
            x,
            mixture: result.mixture.clone(),
            payoff: result.payoff.as_ref().map(PayoffDoc::from_payoff),
            cost,
        }
    }
}

/// Finite number or null; solver failures carry NaN values that JSON
/// cannot hold.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct QuantityDoc {
    pub name: &'static str,
    /// null when the solve failed; `method` then explains why.
    pub value: Option<f64>,
    pub gap: Option<f64>,
    pub method: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelationDoc {
    pub name: &'static str,
    pub equality: bool,
    pub lhs: &'static str,
    pub rhs: &'static str,
    pub slack: Option<f64>,
    pub tolerance: f64,
    pub allowance: Option<f64>,
    pub verdict: &'static str,
}

/// Machine-readable diagram report for one instance.
#[derive(Clone, Debug, Serialize)]
pub struct ReportDoc {
    pub constrained: bool,
    pub x: f64,
    pub trivial_regime: bool,
    pub equality_tolerance: f64,
    pub inequality_tolerance: f64,
    pub violations: usize,
    pub inconclusive: usize,
    pub quantities: Vec<QuantityDoc>,
    pub relations: Vec<RelationDoc>,
}

pub fn verdict_name(v: robustmax_core::diagram::Verdict) -> &'static str {
    use robustmax_core::diagram::Verdict;
    match v {
        Verdict::Holds => "holds",
        Verdict::InconclusiveWithinGap => "inconclusive-within-gap",
        Verdict::Violated => "violated",
    }
}

impl ReportDoc {
    pub fn from_report(report: &robustmax_core::diagram::DiagramReport) -> Self {
        use robustmax_core::diagram::QUANTITY_NAMES;
        ReportDoc {
            constrained: report.constrained,
            x: report.x,
            trivial_regime: report.trivial_regime,
            equality_tolerance: report.equality_tolerance,
            inequality_tolerance: report.inequality_tolerance,
            violations: report.violations(),
            inconclusive: report.inconclusive(),
            quantities: report
                .quantities
                .iter()
                .map(|q| QuantityDoc {
                    name: q.name,
                    value: finite(q.value),
                    gap: finite(q.gap),
                    method: q.method.clone(),
                })
                .collect(),
            relations: report
                .relations
                .iter()
                .map(|r| RelationDoc {
                    name: r.name,
                    equality: r.equality,
                    lhs: QUANTITY_NAMES[r.lhs],
                    rhs: QUANTITY_NAMES[r.rhs],
                    slack: finite(r.slack),
                    tolerance: r.tolerance,
                    allowance: finite(r.allowance),
                    verdict: verdict_name(r.verdict),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureDoc {
    pub seed: u64,
    pub relation: &'static str,
}

/// Machine-readable ensemble aggregate. Timing is deliberately left out so
/// equal (flags, seed) runs emit identical bytes.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleDoc {
    pub constrained: bool,
    pub seed: u64,
    pub count: usize,
    pub evaluated: usize,
    pub trivial: usize,
    pub violations: usize,
    pub inconclusive: usize,
    pub max_equality_slack: f64,
    pub max_inequality_excess: f64,
    pub failures: Vec<FailureDoc>,
}

impl EnsembleDoc {
    pub fn from_report(
        report: &robustmax_core::diagram::EnsembleReport,
        constrained: bool,
        seed: u64,
    ) -> Self {
        EnsembleDoc {
            constrained,
            seed,
            count: report.count,
            evaluated: report.evaluated,
            trivial: report.trivial,
            violations: report.violations,
            inconclusive: report.inconclusive,
            max_equality_slack: report.max_equality_slack,
            max_inequality_excess: report.max_inequality_excess,
            failures: report
                .failures
                .iter()
                .map(|&(seed, relation)| FailureDoc { seed, relation })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_parse_numbers_and_fractions() {
        assert_eq!(parse_scalar("0.25").unwrap(), 0.25);
        assert_eq!(parse_scalar("1/4").unwrap(), 0.25);
        assert_eq!(parse_scalar(" 3 / 4 ").unwrap(), 0.75);
        assert_eq!(parse_scalar("-1/8").unwrap(), -0.125);
        // One rounding: the nearest float to 1/3, not (1.0/3.0) reparsed.
        assert_eq!(parse_scalar("1/3").unwrap(), 1.0 / 3.0);
        assert!(parse_scalar("1/0").is_err());
        assert!(parse_scalar("abc").is_err());
    }

    #[test]
    fn nums_accept_both_shapes_in_json() {
        let v: Vec<Num> = serde_json::from_str(r#"[0.5, "1/2", "0.5"]"#).unwrap();
        assert!(v.iter().all(|n| n.0 == 0.5));
        let bad: Result<Vec<Num>, _> = serde_json::from_str(r#"["1/0"]"#);
        assert!(bad.is_err());
    }

    #[test]
    fn instance_doc_round_trips_bitwise() {
        let doc = InstanceDoc {
            utility: CurveDoc {
                knots: nums(&[0.0, 1.0, 2.5]),
                values: nums(&[0.0, 0.9, 1.7]),
                slopes: nums(&[0.9, 0.1]),
                tail_slope: Num(0.0),
            },
            space: SpaceDoc {
                p: nums(&[0.4, 0.6]),
                w: Some(nums(&[1.3, 0.7])),
                labels: None,
            },
            pricing: PricingDoc {
                psi: nums(&[1.0 / 3.0, 13.0 / 9.0]),
            },
            family: vec![nums(&[1.0, 1.0]), nums(&[0.25, 1.5])],
            budget: BudgetDoc { x: Num(0.3) },
            seed: Some(9),
        };
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let back: InstanceDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad: Result<BudgetDoc, _> = serde_json::from_str(r#"{"x": 1, "y": 2}"#);
        assert!(bad.is_err());
    }
}
