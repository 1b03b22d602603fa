//! Finite scenario spaces, densities, measure families, and the quantile
//! coupling that realizes one uniform randomization coordinate per state.
//!
//! Atomlessness is structural: every state carries an implicit independent
//! uniform coordinate on (0,1), so conditional laws are atomless by
//! construction and randomized payoffs are honest random variables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Probability-style sums must match 1 within this.
pub const SUM_TOL: f64 = 1e-12;

/// Group level used for the synthetic whole-space group.
pub const GLOBAL_GROUP: f64 = f64::INFINITY;

/// Finite state space with P-weights and optional per-state bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpace {
    p: Vec<f64>,
    w: Option<Vec<f64>>,
    labels: Option<Vec<String>>,
}

impl ScenarioSpace {
    pub fn new(p: Vec<f64>, w: Option<Vec<f64>>, labels: Option<Vec<String>>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Invalid("space needs at least one state".into()));
        }
        for (i, pi) in p.iter().enumerate() {
            if !(*pi > 0.0) || !pi.is_finite() {
                return Err(Error::Invalid(format!("p[{i}] = {pi} is not positive")));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Invalid(format!(
                "state probabilities sum to {sum}, not 1"
            )));
        }
        if let Some(w) = &w {
            if w.len() != p.len() {
                return Err(Error::Invalid(format!(
                    "{} states but {} bound values",
                    p.len(),
                    w.len()
                )));
            }
            for (i, wi) in w.iter().enumerate() {
                if !(*wi > 0.0) || !wi.is_finite() {
                    return Err(Error::Invalid(format!("w[{i}] = {wi} is not positive")));
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != p.len() {
                return Err(Error::Invalid(
                    "label count differs from state count".into(),
                ));
            }
        }
        Ok(ScenarioSpace { p, w, labels })
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn w(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// Radon–Nikodym values of one measure in the family against P.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    z: Vec<f64>,
    equivalent: bool,
}

impl Density {
    pub fn new(space: &ScenarioSpace, z: Vec<f64>) -> Result<Self> {
        if z.len() != space.n() {
            return Err(Error::Invalid(format!(
                "density has {} entries for {} states",
                z.len(),
                space.n()
            )));
        }
        for (i, zi) in z.iter().enumerate() {
            if !(*zi >= 0.0) || !zi.is_finite() {
                return Err(Error::Invalid(format!(
                    "z[{i}] = {zi} is negative or not finite"
                )));
            }
        }
        let sum: f64 = z.iter().zip(&space.p).map(|(zi, pi)| zi * pi).sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Invalid(format!(
                "density integrates to {sum}, not 1"
            )));
        }
        let equivalent = z.iter().all(|zi| *zi > 0.0);
        Ok(Density { z, equivalent })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn is_equivalent(&self) -> bool {
        self.equivalent
    }
}

/// The family 𝒬 as the convex hull of finitely many extreme densities.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFamily {
    extremes: Vec<Density>,
}

impl MeasureFamily {
    /// At least one extreme must be equivalent so the equivalent sub-family
    /// is nonempty.
    pub fn new(extremes: Vec<Density>) -> Result<Self> {
        if extremes.is_empty() {
            return Err(Error::Invalid("family needs at least one extreme".into()));
        }
        if !extremes.iter().any(|d| d.equivalent) {
            return Err(Error::Invalid(
                "family needs at least one equivalent (all-positive) extreme".into(),
            ));
        }
        Ok(MeasureFamily { extremes })
    }

    pub fn from_raw(space: &ScenarioSpace, raw: Vec<Vec<f64>>) -> Result<Self> {
        let extremes = raw
            .into_iter()
            .map(|z| Density::new(space, z))
            .collect::<Result<Vec<_>>>()?;
        MeasureFamily::new(extremes)
    }

    pub fn extremes(&self) -> &[Density] {
        &self.extremes
    }

    pub fn len(&self) -> usize {
        self.extremes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extremes.is_empty()
    }

    /// Index of the first equivalent extreme.
    pub fn reference_equivalent(&self) -> usize {
        self.extremes
            .iter()
            .position(|d| d.equivalent)
            .expect("family invariant: one equivalent extreme")
    }

    /// The mixture density Σ μ_j z_j. Weights must be a probability vector.
    pub fn mix(&self, space: &ScenarioSpace, mu: &[f64]) -> Result<Density> {
        if mu.len() != self.extremes.len() {
            return Err(Error::Invalid(format!(
                "{} mixture weights for {} extremes",
                mu.len(),
                self.extremes.len()
            )));
        }
        let sum: f64 = mu.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || mu.iter().any(|m| *m < 0.0) {
            return Err(Error::Invalid(
                "mixture weights not a probability vector".into(),
            ));
        }
        let n = space.n();
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            z.push(self.extremes.iter().zip(mu).map(|(d, m)| m * d.z[i]).sum());
        }
        Density::new(space, z)
    }
}

/// Pricing density ψ = dQ^e/dP; strictly positive throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct PricingMeasure {
    psi: Vec<f64>,
}

impl PricingMeasure {
    pub fn new(space: &ScenarioSpace, psi: Vec<f64>) -> Result<Self> {
        if psi.len() != space.n() {
            return Err(Error::Invalid(format!(
                "pricing has {} entries for {} states",
                psi.len(),
                space.n()
            )));
        }
        for (i, v) in psi.iter().enumerate() {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "psi[{i}] = {v} is not strictly positive"
                )));
            }
        }
        let sum: f64 = psi.iter().zip(&space.p).map(|(v, pi)| v * pi).sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Invalid(format!(
                "pricing density integrates to {sum}, not 1"
            )));
        }
        Ok(PricingMeasure { psi })
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// φ = dQ^e/dQ per state; requires the density to be equivalent.
    pub fn phi(&self, density: &Density) -> Result<Vec<f64>> {
        if !density.equivalent {
            return Err(Error::NotEquivalent("phi = psi/z needs all z > 0".into()));
        }
        Ok(self
            .psi
            .iter()
            .zip(density.z())
            .map(|(psi, z)| psi / z)
            .collect())
    }
}

/// One group of a conditional law: states sharing a level, with normalized
/// conditional weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CondGroup {
    /// Shared w value, or [`GLOBAL_GROUP`] for the synthetic whole-space group.
    pub level: f64,
    pub states: Vec<usize>,
    pub weights: Vec<f64>,
    /// Conditional expectation of ψ under the base weights, filled in by
    /// [`conditional_under`].
    pub m: Option<f64>,
}

/// Partition of the states by shared level with per-group weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalLaw {
    pub groups: Vec<CondGroup>,
}

impl ConditionalLaw {
    /// Single group holding the whole space, weighted by P.
    pub fn global(space: &ScenarioSpace) -> Self {
        let states: Vec<usize> = (0..space.n()).collect();
        let weights = space.p.clone();
        ConditionalLaw {
            groups: alloc::vec![CondGroup {
                level: GLOBAL_GROUP,
                states,
                weights,
                m: None,
            }],
        }
    }
}

/// Σᵢ pᵢ zᵢ valuesᵢ, i.e. E_Q of the given state values.
pub fn expectation(space: &ScenarioSpace, density: &Density, values: &[f64]) -> Result<f64> {
    if values.len() != space.n() {
        return Err(Error::Invalid(format!(
            "{} values for {} states",
            values.len(),
            space.n()
        )));
    }
    Ok(space
        .p
        .iter()
        .zip(density.z())
        .zip(values)
        .map(|((p, z), v)| p * z * v)
        .sum())
}

/// Per-extreme summary produced by [`validate_family`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremeReport {
    pub equivalent: bool,
    /// |Σ pᵢzᵢ − 1| as recomputed.
    pub sum_error: f64,
}

/// Family-level validation report. Convexity and closedness of the hull are
/// structural for a finite extreme list and are reported as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub extremes: Vec<ExtremeReport>,
    pub equivalent_count: usize,
    pub convex: bool,
    pub closed: bool,
}

pub fn validate_family(space: &ScenarioSpace, family: &MeasureFamily) -> FamilyReport {
    let extremes: Vec<ExtremeReport> = family
        .extremes
        .iter()
        .map(|d| {
            let sum: f64 = d.z().iter().zip(&space.p).map(|(z, p)| z * p).sum();
            ExtremeReport {
                equivalent: d.equivalent,
                sum_error: (sum - 1.0).abs(),
            }
        })
        .collect();
    let equivalent_count = extremes.iter().filter(|e| e.equivalent).count();
    FamilyReport {
        extremes,
        equivalent_count,
        convex: true,
        closed: true,
    }
}

/// Groups states by exact w value (ascending), conditional weights ∝ pᵢ.
pub fn group_by_w(space: &ScenarioSpace) -> Result<ConditionalLaw> {
    let w = space
        .w()
        .ok_or_else(|| Error::Invalid("grouping needs per-state bounds".into()))?;
    // w > 0, so the bit pattern orders like the value.
    let mut map: alloc::collections::BTreeMap<u64, Vec<usize>> =
        alloc::collections::BTreeMap::new();
    for (i, wi) in w.iter().enumerate() {
        map.entry(wi.to_bits()).or_default().push(i);
    }
    let mut groups = Vec::with_capacity(map.len());
    for (bits, states) in map {
        let mass: f64 = states.iter().map(|&i| space.p[i]).sum();
        let weights: Vec<f64> = states.iter().map(|&i| space.p[i] / mass).collect();
        groups.push(CondGroup {
            level: f64::from_bits(bits),
            states,
            weights,
            m: None,
        });
    }
    Ok(ConditionalLaw { groups })
}

/// Reweights a conditional law to represent the conditional of Q given the
/// grouping: within each group the new weights are proportional to the old
/// weights times z. Also records each group's base-weighted mean of ψ.
pub fn conditional_under(
    law: &ConditionalLaw,
    density: &Density,
    pricing: &PricingMeasure,
) -> Result<ConditionalLaw> {
    let mut groups = Vec::with_capacity(law.groups.len());
    for (gi, g) in law.groups.iter().enumerate() {
        let mut mass = 0.0;
        let mut m = 0.0;
        for (pos, &i) in g.states.iter().enumerate() {
            mass += g.weights[pos] * density.z()[i];
            m += g.weights[pos] * pricing.psi()[i];
        }
        if mass <= 0.0 {
            return Err(Error::NotEquivalent(format!(
                "density vanishes on group {gi} (level {})",
                g.level
            )));
        }
        let weights: Vec<f64> = g
            .states
            .iter()
            .zip(&g.weights)
            .map(|(&i, wt)| wt * density.z()[i] / mass)
            .collect();
        groups.push(CondGroup {
            level: g.level,
            states: g.states.clone(),
            weights,
            m: Some(m),
        });
    }
    Ok(ConditionalLaw { groups })
}

/// Interval assignment realizing the quantile transform of φ under the given
/// weights: slots sorted by φ (ties by index) receive consecutive chunks of
/// [0,1), and `q` is the resulting non-decreasing step function.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileCoupling {
    /// Slot indices in φ-ascending order.
    pub order: Vec<usize>,
    /// Per-slot interval [lower, upper), indexed like the inputs.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// φ values, indexed like the inputs.
    pub phi: Vec<f64>,
}

impl QuantileCoupling {
    /// ζ for slot `i` given its auxiliary uniform draw `u ∈ (0,1)`.
    pub fn zeta(&self, i: usize, u: f64) -> f64 {
        self.lower[i] + u * (self.upper[i] - self.lower[i])
    }

    /// Value of the step function q at `t ∈ (0,1)`.
    pub fn q_at(&self, t: f64) -> f64 {
        // Last slot in sorted order whose lower bound is ≤ t.
        let pos = self
            .order
            .partition_point(|&i| self.lower[i] <= t)
            .saturating_sub(1);
        self.phi[self.order[pos]]
    }

    /// CDF of ζ when each slot mixes its interval uniformly: used to certify
    /// exact uniformity at interval endpoints.
    pub fn cdf(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.phi.len() {
            let (l, r) = (self.lower[i], self.upper[i]);
            let frac = if t <= l {
                0.0
            } else if t >= r {
                1.0
            } else {
                (t - l) / (r - l)
            };
            acc += (r - l) * frac;
        }
        acc
    }
}

pub fn quantile_coupling(weights: &[f64], phi: &[f64]) -> Result<QuantileCoupling> {
    if weights.len() != phi.len() {
        return Err(Error::Invalid(format!(
            "{} weights for {} phi values",
            weights.len(),
            phi.len()
        )));
    }
    if weights.is_empty() {
        return Err(Error::Invalid("empty coupling".into()));
    }
    for (i, w) in weights.iter().enumerate() {
        if !(*w > 0.0) {
            return Err(Error::Invalid(format!("weight[{i}] = {w} is not positive")));
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::Invalid(format!("weights sum to {sum}, not 1")));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]).then(a.cmp(&b)));
    let mut lower = alloc::vec![0.0; weights.len()];
    let mut upper = alloc::vec![0.0; weights.len()];
    let mut acc = 0.0;
    for &i in &order {
        lower[i] = acc;
        acc += weights[i];
        upper[i] = acc;
    }
    Ok(QuantileCoupling {
        order,
        lower,
        upper,
        phi: phi.to_vec(),
    })
}
