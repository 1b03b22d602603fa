//! Randomized structural checks. Curve-level properties verify the envelope
//! against an exact chord-and-ray oracle; instance-level properties drive
//! the improvement operator and the solvers through the seeded generator.

use proptest::prelude::*;

use robustmax_core::improve::{improve, CHAIN_TOL};
use robustmax_core::instance::{generate_instance, GenConfig, Instance};
use robustmax_core::payoff::{cost, expected_utility, RandomizedPayoff};
use robustmax_core::solve::{
    maximize_concave_single, maximize_robust_concave, solve_query, ConcaveObjective, Method, Order,
    Scope, ValueQuery,
};
use robustmax_core::space::{expectation, quantile_coupling};
use robustmax_core::utility::{
    cap, concavify, envelope_gap_endpoints_table, gap_interval, Curve, UtilityCurve, NO_CAP,
    TOUCH_TOL,
};

// ---------------------------------------------------------------- strategies

/// Piecewise curves built with the constructor's own left-limit arithmetic,
/// so rounding can never produce a rejected draw. Jumps are optional (None
/// keeps the curve continuous at that knot) and the tail is zero half the
/// time.
fn arb_curve() -> impl Strategy<Value = UtilityCurve> {
    (
        -0.4f64..0.6,
        prop::collection::vec(
            (0.05f64..1.5, 0.0f64..1.3, prop::option::of(0.05f64..0.8)),
            1..9,
        ),
        0.0f64..0.5,
        any::<bool>(),
    )
        .prop_map(|(v0, segs, tail, zero_tail)| {
            let mut knots = vec![0.0];
            let mut values = vec![v0];
            let mut slopes = Vec::new();
            for (dx, slope, jump) in segs {
                let prev = *knots.last().unwrap();
                knots.push(prev + dx);
                slopes.push(slope);
                let i = values.len() - 1;
                let v = values[i] + slope * (knots[i + 1] - knots[i]) + jump.unwrap_or(0.0);
                values.push(v);
            }
            let tail_slope = if zero_tail { 0.0 } else { tail };
            UtilityCurve::new(knots, values, slopes, tail_slope).unwrap()
        })
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    any::<u64>().prop_map(|seed| generate_instance(&GenConfig::default(), seed).unwrap())
}

/// A feasible payoff for the instance: random atoms kept inside both the
/// per-state bounds and the curve's knot range, then scaled under the budget.
fn feasible_payoff(inst: &Instance, raw: &[(f64, f64, f64)]) -> RandomizedPayoff {
    let n = inst.space.n();
    let w = inst.space.w().unwrap();
    let p = inst.space.p();
    let psi = inst.pricing.psi();
    let mut atoms = Vec::with_capacity(n);
    for i in 0..n {
        let (v1, v2, split) = raw[i % raw.len()];
        let ceil = w[i].min(0.95 * inst.x / (p[i] * psi[i]));
        let a1 = v1 * ceil;
        let a2 = v2 * ceil;
        if (a1 - a2).abs() < 1e-12 {
            atoms.push(vec![(a1, 1.0)]);
        } else {
            atoms.push(vec![(a1, split), (a2, 1.0 - split)]);
        }
    }
    let payoff = RandomizedPayoff::new(&inst.space, atoms, true).unwrap();
    let c = cost(&payoff, &inst.space, &inst.pricing);
    if c <= inst.x {
        return payoff;
    }
    let scale = inst.x / c * 0.99;
    let scaled = payoff
        .atoms()
        .iter()
        .map(|mix| mix.iter().map(|&(v, wt)| (v * scale, wt)).collect())
        .collect();
    RandomizedPayoff::new(&inst.space, scaled, true).unwrap()
}

// ------------------------------------------------------------ exact oracles

/// Exact concave envelope of a piecewise-linear curve: the best chord
/// between knots bracketing x, or the best tail ray from a knot left of x.
/// Left limits at jumps are dominated by the jumped knot value, so knot
/// pairs plus rays cover the whole hull.
fn envelope_oracle(u: &UtilityCurve, x: f64) -> f64 {
    let k = u.knots();
    let v = u.values();
    let t = u.tail_slope();
    let mut best = f64::NEG_INFINITY;
    for i in 0..k.len() {
        if k[i] > x {
            break;
        }
        best = best.max(v[i] + t * (x - k[i]));
        for j in i..k.len() {
            if k[j] >= x {
                let c = if i == j {
                    v[i]
                } else {
                    v[i] + (v[j] - v[i]) / (k[j] - k[i]) * (x - k[i])
                };
                best = best.max(c);
            }
        }
    }
    best
}

fn grid(end: f64, points: usize) -> Vec<f64> {
    (0..=points)
        .map(|i| end * i as f64 / points as f64)
        .collect()
}

// -------------------------------------------------------- curve properties

proptest! {
    #[test]
    fn envelope_matches_chord_and_ray_oracle(u in arb_curve()) {
        let env = concavify(&u);
        for x in grid(u.domain_end() * 1.25, 64) {
            let mine = env.evaluate(x).unwrap();
            let oracle = envelope_oracle(&u, x);
            prop_assert!((mine - oracle).abs() <= 1e-10,
                "x = {x}: envelope {mine} vs oracle {oracle}");
        }
    }

    #[test]
    fn envelope_dominates_and_is_idempotent(u in arb_curve()) {
        let env = concavify(&u);
        let again = concavify(&env.as_utility());
        for x in grid(u.domain_end() * 1.25, 64) {
            let e = env.evaluate(x).unwrap();
            prop_assert!(e >= u.evaluate(x).unwrap() - 1e-12);
            prop_assert!((again.evaluate(x).unwrap() - e).abs() <= 1e-12);
        }
        // Concavity: interior slopes non-increasing, tail below the last one.
        let s = env.slopes();
        for w in s.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        if let Some(last) = s.last() {
            prop_assert!(env.tail_slope() <= last + 1e-12);
        }
    }

    #[test]
    fn cap_identity_and_monotonicity(u in arb_curve(), f1 in 0.1f64..1.0, f2 in 0.1f64..1.0) {
        let (k1, k2) = {
            let a = f1 * u.domain_end();
            let b = f2 * u.domain_end();
            (a.min(b).max(1e-3), a.max(b).max(2e-3))
        };
        let c1 = cap(&u, k1).unwrap();
        let c2 = cap(&u, k2).unwrap();
        let env1 = concavify(&c1);
        for x in grid(u.domain_end(), 48) {
            // Capped curves are ordered like their levels.
            prop_assert!(c1.evaluate(x).unwrap() <= c2.evaluate(x).unwrap() + 1e-12);
            // Past the cap the envelope and the capped curve coincide.
            if x >= k1 {
                let cv = c1.evaluate(x).unwrap();
                let ev = env1.evaluate(x).unwrap();
                prop_assert!((cv - ev).abs() <= 1e-12, "x = {x}: {cv} vs {ev}");
            }
        }
    }

    #[test]
    fn gap_reconstructs_query_and_envelope_is_linear_across_it(
        u in arb_curve(),
        yf in 0.0f64..1.0,
        vf in prop::option::of(0.15f64..1.0),
    ) {
        let v = match vf {
            Some(f) => f * u.domain_end(),
            None => NO_CAP,
        };
        let ycap = if v == NO_CAP { u.domain_end() } else { v };
        let y = yf * ycap;
        let gap = gap_interval(&u, v, y).unwrap();
        prop_assert!((0.0..=1.0).contains(&gap.lambda));
        prop_assert!(gap.a <= y + 1e-12);
        if gap.b.is_finite() {
            prop_assert!(y <= gap.b + 1e-12);
            let recon = gap.lambda * gap.a + (1.0 - gap.lambda) * gap.b;
            prop_assert!((recon - y).abs() <= 1e-10, "{recon} vs {y}");
            let capped = if v == NO_CAP { u.clone() } else { cap(&u, v).unwrap() };
            let env = concavify(&capped);
            // Touching endpoints.
            prop_assert!((gap.alpha_value - env.evaluate(gap.a).unwrap()).abs() <= 1e-10);
            prop_assert!((gap.beta_value - env.evaluate(gap.b).unwrap()).abs() <= 1e-10);
            prop_assert!(gap.alpha_value - capped.evaluate(gap.a).unwrap() <= TOUCH_TOL);
            prop_assert!(gap.beta_value - capped.evaluate(gap.b).unwrap() <= TOUCH_TOL);
            // Envelope is a single chord across the interval.
            if !gap.is_degenerate() {
                for t in [0.25, 0.5, 0.75] {
                    let xm = gap.a + t * (gap.b - gap.a);
                    let chord = gap.alpha_value + t * (gap.beta_value - gap.alpha_value);
                    prop_assert!((env.evaluate(xm).unwrap() - chord).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn gap_tables_have_no_monotonicity_defects(u in arb_curve()) {
        let end = u.domain_end();
        let v_grid: Vec<f64> = (1..=4)
            .map(|i| end * i as f64 / 4.0)
            .chain([NO_CAP])
            .collect();
        let y_grid = grid(end, 24);
        let table = envelope_gap_endpoints_table(&u, &v_grid, &y_grid).unwrap();
        let defects = table.violations(&u);
        prop_assert!(defects.is_empty(), "defects: {defects:?}");
    }
}

// -------------------------------------------------------- space properties

proptest! {
    #[test]
    fn coupling_is_exactly_uniform_on_dyadic_weights(
        parts in prop::collection::vec(1u32..16, 1..6),
        phis in prop::collection::vec(0.0f64..4.0, 6),
    ) {
        // Dyadic weights k/2^m sum to exactly 1 in floats.
        let denom: u32 = parts.iter().sum();
        let pow2 = denom.next_power_of_two();
        let mut parts = parts;
        parts[0] += pow2 - denom;
        let weights: Vec<f64> = parts.iter().map(|&k| k as f64 / pow2 as f64).collect();
        let phi = &phis[..weights.len()];
        let qc = quantile_coupling(&weights, phi).unwrap();
        // CDF is the identity at every interval endpoint, exactly.
        for i in 0..weights.len() {
            prop_assert_eq!(qc.cdf(qc.lower[i]), qc.lower[i]);
            prop_assert_eq!(qc.cdf(qc.upper[i]), qc.upper[i]);
        }
        // The step function recovers phi at interior points of each slot.
        for (i, &ph) in phi.iter().enumerate() {
            for u in [0.25, 0.5, 0.75] {
                prop_assert_eq!(qc.q_at(qc.zeta(i, u)), ph);
            }
        }
    }

    #[test]
    fn expectation_is_linear(inst in arb_instance(), alpha in -2.0f64..2.0) {
        let n = inst.space.n();
        let us: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
        let vs: Vec<f64> = (0..n).map(|i| (i as f64 * 1.7).cos()).collect();
        let mixed: Vec<f64> = us.iter().zip(&vs).map(|(u, v)| alpha * u + v).collect();
        for d in inst.family.extremes() {
            let left = expectation(&inst.space, d, &mixed).unwrap();
            let right = alpha * expectation(&inst.space, d, &us).unwrap()
                + expectation(&inst.space, d, &vs).unwrap();
            prop_assert!((left - right).abs() <= 1e-12);
        }
    }

    #[test]
    fn mixture_expectation_matches_mixed_density(
        inst in arb_instance(),
        t in 0.0f64..1.0,
    ) {
        let m = inst.family.len();
        if m < 2 {
            return Ok(());
        }
        let mut mu = vec![0.0; m];
        mu[0] = t;
        mu[1] = 1.0 - t;
        let mixed = inst.family.mix(&inst.space, &mu).unwrap();
        let n = inst.space.n();
        let vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.3).sqrt()).collect();
        let direct = expectation(&inst.space, &mixed, &vals).unwrap();
        let by_parts = t * expectation(&inst.space, &inst.family.extremes()[0], &vals).unwrap()
            + (1.0 - t) * expectation(&inst.space, &inst.family.extremes()[1], &vals).unwrap();
        prop_assert!((direct - by_parts).abs() <= 1e-12);
    }
}

// ------------------------------------------------------ improve properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn improvement_chain_cost_and_bounds(
        seed in any::<u64>(),
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.05f64..0.95), 4),
        conditional in any::<bool>(),
    ) {
        let inst = generate_instance(&GenConfig::default(), seed).unwrap();
        let payoff = feasible_payoff(&inst, &raw);
        let j = inst.family.reference_equivalent();
        let density = &inst.family.extremes()[j];
        let (star, plan) = improve(
            &payoff,
            &inst.space,
            density,
            &inst.pricing,
            &inst.curve,
            conditional,
        )
        .unwrap();
        // The two-point replacement chain: E[U(X*)] = E[U_c(X*)] = E[U_c(X)].
        prop_assert!(plan.chain.max_deviation() <= CHAIN_TOL,
            "chain deviation {}", plan.chain.max_deviation());
        // No price increase, and the chosen orientation is the cheap one.
        prop_assert!(plan.cost_after <= plan.cost_before + 1e-10);
        prop_assert!(plan.cost_after <= plan.cost_reversed + 1e-10);
        // Bounds survive.
        let w = inst.space.w().unwrap();
        for (i, mix) in star.atoms().iter().enumerate() {
            for &(v, wt) in mix {
                prop_assert!(wt > 0.0 && v >= 0.0);
                if conditional {
                    prop_assert!(v <= w[i] + 1e-12);
                }
            }
        }
        // Raw utility can only go up.
        let before = expected_utility(&payoff, &inst.space, density, &inst.curve, false).unwrap();
        let after = expected_utility(&star, &inst.space, density, &inst.curve, false).unwrap();
        prop_assert!(after >= before - 1e-10);
        // Improving again is a fixed point in value and cost.
        let (star2, plan2) = improve(
            &star,
            &inst.space,
            density,
            &inst.pricing,
            &inst.curve,
            conditional,
        )
        .unwrap();
        prop_assert!((plan2.cost_after - plan.cost_after).abs() <= 1e-10);
        let again = expected_utility(&star2, &inst.space, density, &inst.curve, false).unwrap();
        prop_assert!((again - after).abs() <= 1e-10);
    }
}

// -------------------------------------------------------- solve properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lp_agrees_with_greedy_on_single_extreme(seed in any::<u64>(), constrained in any::<bool>()) {
        let inst = generate_instance(&GenConfig {
            extremes: (1, 1),
            ..GenConfig::default()
        }, seed).unwrap();
        let objective = ConcaveObjective::new(&inst.curve, &inst.space, constrained).unwrap();
        let j = inst.family.reference_equivalent();
        let greedy = maximize_concave_single(
            &inst.space,
            &inst.family.extremes()[j],
            &inst.pricing,
            &objective,
            inst.x,
        ).unwrap();
        let lp = maximize_robust_concave(
            &inst.space,
            &inst.family,
            &inst.pricing,
            &objective,
            inst.x,
        ).unwrap();
        prop_assert!((greedy.value - lp.value).abs() <= 1e-9,
            "greedy {} vs lp {} ({})", greedy.value, lp.value, lp.method);
    }

    #[test]
    fn robust_value_is_monotone_and_concave_in_budget(seed in any::<u64>(), f in 0.3f64..0.9) {
        let inst = generate_instance(&GenConfig::default(), seed).unwrap();
        let objective = ConcaveObjective::new(&inst.curve, &inst.space, false).unwrap();
        let value = |x: f64| {
            maximize_robust_concave(&inst.space, &inst.family, &inst.pricing, &objective, x)
                .unwrap()
                .value
        };
        let x1 = f * inst.x;
        let x2 = inst.x;
        let mid = 0.5 * (x1 + x2);
        let (v1, v2, vm) = (value(x1), value(x2), value(mid));
        prop_assert!(v2 >= v1 - 1e-9, "monotone: {v1} vs {v2}");
        prop_assert!(vm >= 0.5 * (v1 + v2) - 1e-7, "concave: {vm} vs {}", 0.5 * (v1 + v2));
    }

    #[test]
    fn minimax_gap_is_certified_for_envelope(seed in any::<u64>(), constrained in any::<bool>()) {
        let inst = generate_instance(&GenConfig::default(), seed).unwrap();
        let query = |order| ValueQuery {
            envelope: true,
            constrained,
            x: inst.x,
            scope: Scope::Full,
            order,
            method: Method::Exact,
        };
        let si = solve_query(&inst.space, &inst.family, &inst.pricing, &inst.curve,
            &query(Order::SupInf)).unwrap();
        let is = solve_query(&inst.space, &inst.family, &inst.pricing, &inst.curve,
            &query(Order::InfSup)).unwrap();
        let tol = si.gap + is.gap + 1e-7;
        prop_assert!((si.value - is.value).abs() <= tol,
            "supinf {} vs infsup {} (gaps {} + {})", si.value, is.value, si.gap, is.gap);
    }

    #[test]
    fn lp_mixture_reevaluates_to_the_lp_value(seed in any::<u64>()) {
        let inst = generate_instance(&GenConfig::default(), seed).unwrap();
        let objective = ConcaveObjective::new(&inst.curve, &inst.space, false).unwrap();
        let lp = maximize_robust_concave(
            &inst.space, &inst.family, &inst.pricing, &objective, inst.x,
        ).unwrap();
        if lp.method != "epigraph lp" {
            return Ok(());
        }
        let mu = lp.mixture.unwrap();
        prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        // The dual mixture certifies the value: solving against the mixed
        // density alone reproduces it within LP tolerance.
        let mixed = inst.family.mix(&inst.space, &mu).unwrap();
        let single = maximize_concave_single(
            &inst.space, &mixed, &inst.pricing, &objective, inst.x,
        ).unwrap();
        prop_assert!(single.value >= lp.value - 1e-7,
            "mix re-eval {} below lp {}", single.value, lp.value);
        prop_assert!(single.value <= lp.value + 1e-6,
            "mix re-eval {} above lp {}", single.value, lp.value);
    }
}

// ------------------------------------------------------- diagram properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn diagram_relations_never_violate(seed in any::<u64>(), constrained in any::<bool>()) {
        use robustmax_core::diagram::{evaluate_diagram, DiagramConfig, Verdict};
        let inst = generate_instance(&GenConfig::default(), seed).unwrap();
        let report = evaluate_diagram(&inst, constrained, &DiagramConfig::default()).unwrap();
        for r in &report.relations {
            prop_assert!(r.verdict != Verdict::Violated,
                "{} slack {} allowance {}", r.name, r.slack, r.allowance);
        }
        // The chain of equalities and inequalities composes: every sup-inf
        // stays below every inf-sup within accumulated play.
        let q = &report.quantities;
        let play: f64 = q.iter().map(|qq| qq.gap).sum::<f64>() + 1e-6;
        for lo in [0, 1, 4, 5] {
            for hi in [2, 3, 6, 7] {
                if [4, 5].contains(&lo) || [6, 7].contains(&hi) {
                    // Raw-curve corners only compare within their own column.
                    continue;
                }
                prop_assert!(q[lo].value <= q[hi].value + play,
                    "{} = {} vs {} = {}", q[lo].name, q[lo].value, q[hi].name, q[hi].value);
            }
        }
    }
}
