//! Exhaustive enumeration of short Bernoulli(p) walks from the edge start.
//!
//! A realization of `n` steps has probability `q (1-p)^(n-i) p^i`, where `q`
//! is the product of the inverse degrees at each move and `i` the number of
//! vertices added. Summing over the realizations in an event therefore gives
//! a polynomial `sum_i c_i (1-p)^(n-i) p^i` with exact rational `c_i`.
//!
//! Realizations are explored layer by layer. Vertex ids follow creation
//! order and two partial realizations are merged only when they reach the
//! same labelled tree, walker position and event memory, so the measure is
//! exactly that of the labelled trajectory space. The number of added
//! vertices is a function of the tree, hence every state carries a single
//! numerator over the common denominator `L^k`, with `L = lcm(1..=n+1)`
//! bounding every degree the walker can meet.

mod dd;
mod monitor;

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitialState, LeafLaw, RngStream, Walk};

pub use dd::{ComplexDD, DoubleDouble};
pub use monitor::{Complement, EventMonitor, HitRootAt, NoRenewalBy, StepView, WholeSpace};

/// Default largest horizon that may be enumerated.
pub const DEFAULT_CAP: usize = 12;
/// Hard limit of the packed state encoding.
pub const MAX_CAP: usize = 22;

const FIELD_BITS: u32 = 5;
const FIELD_MASK: u128 = (1 << FIELD_BITS) - 1;

/// Event probability `sum_i c_i (1-p)^(n-i) p^i` with exact coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbPolynomial {
    horizon: usize,
    coeffs: Vec<BigRational>,
}

impl ProbPolynomial {
    pub fn new(coeffs: Vec<BigRational>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument(
                "polynomial needs a coefficient".into(),
            ));
        }
        if coeffs.iter().any(|c| c.is_negative()) {
            return Err(Error::InvalidArgument("negative coefficient".into()));
        }
        Ok(Self {
            horizon: coeffs.len() - 1,
            coeffs,
        })
    }

    pub fn zero(horizon: usize) -> Self {
        Self {
            horizon,
            coeffs: vec![BigRational::zero(); horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `c_i`, indexed by the number of added vertices.
    pub fn coefficients(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    /// Identically one as a function of p (every `c_i` equals `C(n, i)`).
    pub fn is_one(&self) -> bool {
        let n = self.horizon;
        self.coeffs
            .iter()
            .enumerate()
            .all(|(i, c)| *c == BigRational::from(binomial(n, i)))
    }

    /// Same function written over a longer horizon `m >= n`, using
    /// `1 = ((1-p) + p)^(m-n)`.
    pub fn elevate(&self, m: usize) -> Result<Self> {
        if m < self.horizon {
            return Err(Error::InvalidArgument(format!(
                "cannot lower horizon {} to {m}",
                self.horizon
            )));
        }
        let extra = m - self.horizon;
        let mut coeffs = vec![BigRational::zero(); m + 1];
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for j in 0..=extra {
                coeffs[i + j] += c * BigRational::from(binomial(extra, j));
            }
        }
        Ok(Self { horizon: m, coeffs })
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        let m = self.horizon.max(other.horizon);
        let a = self.elevate(m)?;
        let b = other.elevate(m)?;
        Ok(Self {
            horizon: m,
            coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect(),
        })
    }

    /// Exact value at a rational p.
    pub fn eval_rational(&self, p: &BigRational) -> BigRational {
        let q = BigRational::one() - p;
        let n = self.horizon;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| c * pow_rational(&q, n - i) * pow_rational(p, i))
            .fold(BigRational::zero(), |acc, x| acc + x)
    }

    pub fn eval_real(&self, p: f64) -> f64 {
        self.eval_dd(DoubleDouble::from_f64(p)).to_f64()
    }

    pub fn eval_dd(&self, p: DoubleDouble) -> DoubleDouble {
        let z = eval_complex(self, ComplexDD::real(p));
        z.re
    }

    /// Coefficients in the monomial basis, `sum_k a_k p^k`.
    pub fn power_basis(&self) -> Vec<BigRational> {
        let n = self.horizon;
        let mut out = vec![BigRational::zero(); n + 1];
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            // c p^i (1-p)^(n-i) = c sum_j C(n-i, j) (-1)^j p^(i+j)
            for j in 0..=(n - i) {
                let term = c * BigRational::from(binomial(n - i, j));
                if j % 2 == 0 {
                    out[i + j] += term;
                } else {
                    out[i + j] -= term;
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> PolynomialJson {
        PolynomialJson {
            horizon: self.horizon,
            numerators: self.coeffs.iter().map(|c| c.numer().to_string()).collect(),
            denominators: self.coeffs.iter().map(|c| c.denom().to_string()).collect(),
        }
    }

    pub fn from_json(doc: &PolynomialJson) -> Result<Self> {
        if doc.numerators.len() != doc.denominators.len() {
            return Err(Error::InvalidArgument(
                "coefficient lists differ in length".into(),
            ));
        }
        let parse = |s: &str| {
            s.parse::<BigInt>()
                .map_err(|_| Error::InvalidArgument(format!("bad integer `{s}`")))
        };
        let mut coeffs = Vec::with_capacity(doc.numerators.len());
        for (n, d) in doc.numerators.iter().zip(&doc.denominators) {
            let d = parse(d)?;
            if d.is_zero() {
                return Err(Error::InvalidArgument("zero denominator".into()));
            }
            coeffs.push(BigRational::new(parse(n)?, d));
        }
        let poly = Self::new(coeffs)?;
        if poly.horizon != doc.horizon {
            return Err(Error::InvalidArgument(
                "horizon does not match coefficient count".into(),
            ));
        }
        Ok(poly)
    }
}

/// Polynomial serialization: exact integers as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolynomialJson {
    pub horizon: usize,
    pub numerators: Vec<String>,
    pub denominators: Vec<String>,
}

fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for j in 0..k {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

fn pow_rational(x: &BigRational, k: usize) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..k {
        acc *= x;
    }
    acc
}

fn lcm_upto(m: u64) -> u64 {
    (1..=m).fold(1u64, |acc, d| acc.lcm(&d))
}

/// Upper bound on the number of n-step realizations: at step k the walker
/// sees at most `k + 1` neighbours without growth and `k + 2` with it.
pub fn predicted_atoms(n: usize) -> u128 {
    (0..n as u128).map(|k| 2 * k + 3).product()
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    let cap = cap.min(MAX_CAP);
    if n > cap {
        return Err(Error::Capacity {
            what: format!(
                "enumeration of {n} steps (about {} realizations)",
                predicted_atoms(n)
            ),
            needed: predicted_atoms(n),
            limit: predicted_atoms(cap),
        });
    }
    Ok(())
}

/// Labelled tree plus walker position, packed into 5-bit fields:
/// vertex count, position, then the parent of every non-root vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PackedState(u128);

#[derive(Debug, Clone)]
struct Unpacked {
    parents: Vec<u8>,
    position: u8,
}

impl Unpacked {
    fn edge() -> Self {
        Self {
            parents: vec![u8::MAX, 0],
            position: 1,
        }
    }

    fn pack(&self) -> PackedState {
        let mut bits = self.parents.len() as u128 | (self.position as u128) << FIELD_BITS;
        for (v, &p) in self.parents.iter().enumerate().skip(1) {
            bits |= (p as u128) << (FIELD_BITS * (v as u32 + 1));
        }
        PackedState(bits)
    }

    fn unpack(state: PackedState) -> Self {
        let bits = state.0;
        let len = (bits & FIELD_MASK) as usize;
        let position = ((bits >> FIELD_BITS) & FIELD_MASK) as u8;
        let mut parents = vec![u8::MAX; len];
        for (v, parent) in parents.iter_mut().enumerate().skip(1) {
            *parent = ((bits >> (FIELD_BITS * (v as u32 + 1))) & FIELD_MASK) as u8;
        }
        Self { parents, position }
    }

    fn neighbours(&self, x: u8) -> Vec<u8> {
        let mut out = Vec::new();
        if x != 0 {
            out.push(self.parents[x as usize]);
        }
        out.extend((1..self.parents.len() as u8).filter(|&v| self.parents[v as usize] == x));
        out
    }

    fn depths(&self) -> Vec<u32> {
        // parents always precede children in id order
        let mut depth = vec![0u32; self.parents.len()];
        for v in 1..self.parents.len() {
            depth[v] = depth[self.parents[v] as usize] + 1;
        }
        depth
    }

    fn view(&self, step: usize, leaf_added: bool) -> StepView {
        let depth = self.depths();
        let x = self.position;
        StepView {
            step,
            leaf_added,
            depth: depth[x as usize],
            degree: self.neighbours(x).len() as u32,
            height: depth.iter().copied().max().unwrap_or(0),
            at_root: x == 0,
        }
    }

    /// Every one-step successor with its leaf flag and move denominator.
    fn successors(&self) -> Vec<(Unpacked, bool, u64)> {
        let x = self.position;
        let mut out = Vec::new();
        let plain = self.neighbours(x);
        let d = plain.len() as u64;
        for &y in &plain {
            out.push((
                Unpacked {
                    parents: self.parents.clone(),
                    position: y,
                },
                false,
                d,
            ));
        }
        let mut grown = self.parents.clone();
        let new_vertex = grown.len() as u8;
        grown.push(x);
        let mut targets = plain;
        targets.push(new_vertex);
        let d = targets.len() as u64;
        for &y in &targets {
            out.push((
                Unpacked {
                    parents: grown.clone(),
                    position: y,
                },
                true,
                d,
            ));
        }
        out
    }
}

type Layer<M> = HashMap<(PackedState, M), BigUint>;

fn advance_layer<E: EventMonitor>(
    layer: Layer<E::Memory>,
    event: &E,
    step: usize,
    lcm: u64,
) -> Layer<E::Memory> {
    let mut next: Layer<E::Memory> = HashMap::with_capacity(layer.len() * 2);
    for ((state, memory), weight) in layer {
        let current = Unpacked::unpack(state);
        for (succ, leaf, d) in current.successors() {
            let view = succ.view(step, leaf);
            let Some(mem) = event.advance(&memory, &view) else {
                continue;
            };
            let w = &weight * BigUint::from(lcm / d);
            *next.entry((succ.pack(), mem)).or_default() += w;
        }
    }
    next
}

/// Exact polynomial of an event decided by the first `horizon` steps,
/// starting from the edge with the walker on the non-root tip.
pub fn enumerate<E: EventMonitor>(horizon: usize, event: &E) -> Result<ProbPolynomial> {
    enumerate_with_cap(horizon, event, DEFAULT_CAP)
}

pub fn enumerate_with_cap<E: EventMonitor>(
    horizon: usize,
    event: &E,
    cap: usize,
) -> Result<ProbPolynomial> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    check_cap(horizon, cap)?;
    let lcm = lcm_upto(horizon as u64 + 1);
    let start = Unpacked::edge();
    let Some(memory) = event.start(&start.view(0, false)) else {
        return Ok(ProbPolynomial::zero(horizon));
    };
    let mut first: Layer<E::Memory> = HashMap::new();
    first.insert((start.pack(), memory), BigUint::one());
    let first = advance_layer(first, event, 1, lcm);

    // Independent sub-enumerations per first-step branch, merged by addition.
    let branches: Vec<_> = first.into_iter().collect();
    let partials: Vec<Vec<BigUint>> = branches
        .into_par_iter()
        .map(|(key, weight)| {
            let mut layer: Layer<E::Memory> = HashMap::from([(key, weight)]);
            for step in 2..=horizon {
                layer = advance_layer(layer, event, step, lcm);
            }
            let mut acc = vec![BigUint::zero(); horizon + 1];
            for ((state, memory), weight) in layer {
                if event.accept(&memory, horizon) {
                    let added = Unpacked::unpack(state).parents.len() - 2;
                    acc[added] += weight;
                }
            }
            acc
        })
        .collect();

    let denominator = BigInt::from(BigUint::from(lcm).pow(horizon as u32));
    let mut coeffs = Vec::with_capacity(horizon + 1);
    for i in 0..=horizon {
        let total: BigUint = partials.iter().map(|acc| &acc[i]).sum();
        coeffs.push(BigRational::new(BigInt::from(total), denominator.clone()));
    }
    ProbPolynomial::new(coeffs)
}

/// Polynomials of `{H_o = n}` for `n = 1..=n_max` from a single pass that
/// stops every branch at its first visit to the root.
pub fn ho_series_terms(n_max: usize) -> Result<Vec<ProbPolynomial>> {
    ho_series_terms_with_cap(n_max, DEFAULT_CAP)
}

pub fn ho_series_terms_with_cap(n_max: usize, cap: usize) -> Result<Vec<ProbPolynomial>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    check_cap(n_max, cap)?;
    let lcm = lcm_upto(n_max as u64 + 1);
    let mut layer: HashMap<PackedState, BigUint> =
        HashMap::from([(Unpacked::edge().pack(), BigUint::one())]);
    let mut terms = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut next: HashMap<PackedState, BigUint> = HashMap::with_capacity(layer.len() * 2);
        let mut hits = vec![BigUint::zero(); n + 1];
        for (state, weight) in layer {
            for (succ, _, d) in Unpacked::unpack(state).successors() {
                let w = &weight * BigUint::from(lcm / d);
                if succ.position == 0 {
                    hits[succ.parents.len() - 2] += w;
                } else {
                    *next.entry(succ.pack()).or_default() += w;
                }
            }
        }
        let denominator = BigInt::from(BigUint::from(lcm).pow(n as u32));
        let coeffs = hits
            .into_iter()
            .map(|h| BigRational::new(BigInt::from(h), denominator.clone()))
            .collect();
        terms.push(ProbPolynomial::new(coeffs)?);
        layer = next;
    }
    Ok(terms)
}

/// `sum_i c_i (1-z)^(n-i) z^i` in double-double complex arithmetic.
pub fn eval_complex(poly: &ProbPolynomial, z: ComplexDD) -> ComplexDD {
    let n = poly.horizon;
    let one_minus = ComplexDD::ONE - z;
    let mut z_pow = vec![ComplexDD::ONE; n + 1];
    let mut w_pow = vec![ComplexDD::ONE; n + 1];
    for k in 1..=n {
        z_pow[k] = z_pow[k - 1] * z;
        w_pow[k] = w_pow[k - 1] * one_minus;
    }
    let mut acc = ComplexDD::default();
    for (i, c) in poly.coeffs.iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        let c = DoubleDouble::from_rational(c);
        acc = acc + (w_pow[n - i] * z_pow[i]).scale(c);
    }
    acc
}

/// Points inside the open complex ball `B(p, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexProbe {
    pub p: f64,
    pub r: f64,
    pub points: Vec<(f64, f64)>,
}

impl ComplexProbe {
    fn check(p: f64, r: f64) -> Result<()> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "center p = {p} outside (0, 1]"
            )));
        }
        if !(r > 0.0 && r < p) {
            return Err(Error::InvalidArgument(format!(
                "radius r = {r} must satisfy 0 < r < p = {p}"
            )));
        }
        Ok(())
    }

    pub fn from_points(p: f64, r: f64, points: Vec<(f64, f64)>) -> Result<Self> {
        Self::check(p, r)?;
        for &(re, im) in &points {
            if ((re - p).powi(2) + im * im).sqrt() >= r {
                return Err(Error::InvalidArgument(format!(
                    "probe point {re}+{im}i outside B({p}, {r})"
                )));
            }
        }
        Ok(Self { p, r, points })
    }

    /// `per_circle` equally spaced points on each circle of the given radii.
    pub fn circles(p: f64, r: f64, radii: &[f64], per_circle: usize) -> Result<Self> {
        Self::check(p, r)?;
        let mut points = Vec::with_capacity(radii.len() * per_circle);
        for &rho in radii {
            if !(rho >= 0.0 && rho < r) {
                return Err(Error::InvalidArgument(format!(
                    "circle radius {rho} not inside [0, {r})"
                )));
            }
            for k in 0..per_circle {
                let angle = std::f64::consts::TAU * k as f64 / per_circle as f64;
                points.push((p + rho * angle.cos(), rho * angle.sin()));
            }
        }
        Self::from_points(p, r, points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub horizon: usize,
    pub p: f64,
    pub r: f64,
    pub points: usize,
    /// Largest `|P_z| / (exp(2rn/(p-r)) P_(p-r))` over the probe.
    pub max_ratio: f64,
    pub holds: bool,
    /// Probe point with a nonzero value where the bound's right side is 0.
    pub counterexample: Option<(f64, f64)>,
}

/// Checks `|P_z(A)| <= exp(2 r n / (p - r)) P_(p-r)(A)` at every probe point.
pub fn verify_an_bound(poly: &ProbPolynomial, probe: &ComplexProbe) -> BoundReport {
    let (p, r, n) = (probe.p, probe.r, poly.horizon);
    let base = DoubleDouble::from_f64(p) - DoubleDouble::from_f64(r);
    let lower_value = poly.eval_dd(base).to_f64();
    let factor = (2.0 * r * n as f64 / (p - r)).exp();
    let rhs = factor * lower_value;

    let mut max_ratio = 0.0f64;
    let mut counterexample = None;
    for &(re, im) in &probe.points {
        let value = eval_complex(poly, ComplexDD::new(re, im)).abs().to_f64();
        if rhs == 0.0 {
            if value > 0.0 && counterexample.is_none() {
                counterexample = Some((re, im));
                max_ratio = f64::INFINITY;
            }
            continue;
        }
        max_ratio = max_ratio.max(value / rhs);
    }
    BoundReport {
        horizon: n,
        p,
        r,
        points: probe.points.len(),
        max_ratio,
        holds: counterexample.is_none() && max_ratio <= 1.0,
        counterexample,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub p: f64,
    pub replicas: u64,
    pub exact: f64,
    pub frequency: f64,
    pub sigma: f64,
    /// `|frequency - exact| <= 4 sigma` (exact equality when sigma is 0).
    pub agrees: bool,
}

/// Simulates `replicas` walks of the polynomial's horizon and compares the
/// event frequency with the exact value.
pub fn cross_validate<E: EventMonitor>(
    poly: &ProbPolynomial,
    event: &E,
    p: f64,
    replicas: u64,
    seed: u64,
) -> Result<CrossValidation> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be positive".into()));
    }
    let law = LeafLaw::bernoulli(p)?;
    let horizon = poly.horizon;
    let hits: u64 = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<u64> {
            let mut walk = Walk::new(&law, InitialState::EdgeNonRootTip, RngStream::new(seed, r))?;
            let view = |walk: &Walk, step: usize, leaf_added: bool| StepView {
                step,
                leaf_added,
                depth: walk.depth(),
                degree: walk.degree(),
                height: walk.tree().height(),
                at_root: walk.position() == walk.tree().root(),
            };
            let Some(mut memory) = event.start(&view(&walk, 0, false)) else {
                return Ok(0);
            };
            for step in 1..=horizon {
                let added = walk.advance();
                match event.advance(&memory, &view(&walk, step, added > 0)) {
                    Some(m) => memory = m,
                    None => return Ok(0),
                }
            }
            Ok(u64::from(event.accept(&memory, horizon)))
        })
        .sum::<Result<u64>>()?;
    let exact = poly.eval_real(p);
    let frequency = hits as f64 / replicas as f64;
    let sigma = (exact * (1.0 - exact) / replicas as f64).max(0.0).sqrt();
    let agrees = if sigma == 0.0 {
        (frequency - exact).abs() < 1e-12
    } else {
        (frequency - exact).abs() <= 4.0 * sigma
    };
    Ok(CrossValidation {
        p,
        replicas,
        exact,
        frequency,
        sigma,
        agrees,
    })
}

/// Exact value of an event polynomial at `p` as an `f64`, via rationals.
pub fn exact_value(poly: &ProbPolynomial, p: &BigRational) -> f64 {
    poly.eval_rational(p).to_f64().unwrap_or(f64::NAN)
}
