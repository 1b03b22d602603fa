//! Instance bundle and the seeded generator behind ensemble runs.
//!
//! Generation is a pure function of the seed: every draw goes through one
//! ChaCha stream in a fixed order, so equal seeds give equal instances on
//! every platform.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::space::{MeasureFamily, PricingMeasure, ScenarioSpace};
use crate::utility::UtilityCurve;

/// Everything a diagram evaluation needs.
#[derive(Clone, Debug)]
pub struct Instance {
    pub space: ScenarioSpace,
    pub family: MeasureFamily,
    pub pricing: PricingMeasure,
    pub curve: UtilityCurve,
    /// Initial capital.
    pub x: f64,
}

/// Size bounds for generated instances; all ranges inclusive.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub states: (usize, usize),
    pub extremes: (usize, usize),
    /// Number of upward jumps in the utility, each one a non-concavity;
    /// 0 gives a concave instance.
    pub kinks: (usize, usize),
    /// Let some draws land in the trivial regime E_ψ[W] ≤ x instead of
    /// clamping the budget below it.
    pub allow_trivial: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            states: (2, 4),
            extremes: (2, 3),
            kinks: (1, 3),
            allow_trivial: false,
        }
    }
}

fn normalized(raw: Vec<f64>, weight: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().zip(weight).map(|(v, w)| v * w).sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn generate_instance(config: &GenConfig, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.states.0..=config.states.1);
    let m = rng.gen_range(config.extremes.0..=config.extremes.1);
    let kinks = rng.gen_range(config.kinks.0..=config.kinks.1);

    let p_raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let ones = alloc::vec![1.0; n];
    let p = normalized(p_raw, &ones);

    // Bounds drawn from a small pool so several states usually share one,
    // exercising the grouped conditioning.
    const LEVELS: [f64; 5] = [0.6, 0.9, 1.3, 1.8, 2.5];
    let w: Vec<f64> = (0..n)
        .map(|_| LEVELS[rng.gen_range(0..LEVELS.len())])
        .collect();

    let psi_raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.6..1.5)).collect();
    let psi = normalized(psi_raw, &p);

    let mut raws: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut z: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.7)).collect();
        if j > 0 && n >= 2 && rng.gen_bool(0.35) {
            let k = rng.gen_range(0..n);
            z[k] = 0.0;
        }
        raws.push(normalized(z, &p));
    }

    let min_price = (0..n).map(|i| p[i] * psi[i]).fold(f64::INFINITY, f64::min);
    let expected_w: f64 = (0..n).map(|i| p[i] * psi[i] * w[i]).sum();
    let mut x = rng.gen_range(0.25_f64..1.0).min(40.0 * min_price);
    let trivial_draw = config.allow_trivial && rng.gen_bool(0.25);
    if trivial_draw {
        x = expected_w * rng.gen_range(1.0..1.4);
    } else {
        x = x.min(0.8 * expected_w);
    }

    // The curve's knot range covers everything the budget can buy, so
    // optimizers stay strictly inside the represented domain.
    let reach = (x / min_price) * 1.1;
    let span = reach.max(1.5);
    let count = rng.gen_range(3..=5).max(kinks + 2);
    let mut fractions: Vec<f64> = (0..count - 2).map(|_| rng.gen_range(0.1..0.9)).collect();
    fractions.sort_by(f64::total_cmp);
    let mut knots = Vec::with_capacity(count);
    knots.push(0.0);
    for (i, f) in fractions.iter().enumerate() {
        knots.push(f * span + i as f64 * 1e-6 * span);
    }
    knots.push(span);
    let mut slopes: Vec<f64> = (0..count - 1).map(|_| rng.gen_range(0.15..1.4)).collect();
    slopes.sort_by(|a, b| b.total_cmp(a));
    let v0 = if rng.gen_bool(0.2) { 0.1 } else { 0.0 };
    // Upward jumps at distinct interior knots; each one breaks concavity.
    let mut interior: Vec<usize> = (1..count - 1).collect();
    for i in (1..interior.len()).rev() {
        let j = rng.gen_range(0..=i);
        interior.swap(i, j);
    }
    let mut jumps = alloc::vec![0.0_f64; count];
    for &idx in interior.iter().take(kinks) {
        jumps[idx] = rng.gen_range(0.15..0.6);
    }
    // One forward pass, mirroring the constructor's left-limit expression
    // term for term so rounding can never read as a downward jump.
    let mut values = Vec::with_capacity(count);
    values.push(v0);
    for i in 0..count - 1 {
        let v = values[i] + slopes[i] * (knots[i + 1] - knots[i]) + jumps[i + 1];
        values.push(v);
    }
    let curve = UtilityCurve::new(knots, values, slopes, 0.0)?;

    let space = ScenarioSpace::new(p, Some(w), None)?;
    let family = MeasureFamily::from_raw(&space, raws)?;
    let pricing = PricingMeasure::new(&space, psi)?;
    Ok(Instance {
        space,
        family,
        pricing,
        curve,
        x,
    })
}
