//! Symbolic distributions, their rendering into ambient space, and Boolean
//! Fourier analysis on the hypercube.
//!
//! Symbols are indices `0..K`. On the hypercube, symbol `0` renders to `+1`
//! and symbol `1` to `-1`, so parity and Dyck rules are stated on the signs.
//!
//! Fourier coefficients use the pmf convention
//! `p̄(I) = E_{x~Unif}[p(x) x_I] = 2^{-d} Σ_x mass(x) x_I`, which gives
//! `p̄(∅) = 2^{-d}` and `p(x) = Σ_I p̄(I) x_I`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

/// Largest dimension accepted by [`full_spectrum`].
pub const MAX_FULL_TRANSFORM_DIM: usize = 20;

const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Parity,
    Dyck,
    SumRule,
    /// Any sequence in the declared support is valid; nothing else is.
    Custom,
}

impl Rule {
    /// Rule predicate in exact integer arithmetic. `Custom` has no predicate
    /// of its own and accepts everything here; membership is checked by
    /// [`SymbolicDistribution::satisfies`].
    pub fn accepts(self, seq: &[usize], alphabet_size: usize) -> bool {
        if seq.iter().any(|&s| s >= alphabet_size) {
            return false;
        }
        match self {
            Rule::Parity => seq.iter().filter(|&&s| s == 1).count() % 2 == 0,
            Rule::Dyck => {
                let mut depth: i64 = 0;
                for &s in seq {
                    depth += if s == 0 { 1 } else { -1 };
                    if depth < 0 {
                        return false;
                    }
                }
                depth == 0
            }
            Rule::SumRule => seq.len() == 4 && seq[0] + seq[1] == seq[2] + seq[3],
            Rule::Custom => true,
        }
    }
}

/// A finite-support distribution over symbol sequences in `[K]^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicDistribution {
    alphabet_size: usize,
    length: usize,
    support: Vec<Vec<usize>>,
    weights: Vec<f64>,
    rule: Rule,
    params: BTreeMap<String, usize>,
    index: HashSet<Vec<usize>>,
}

impl SymbolicDistribution {
    pub fn new(alphabet_size: usize, length: usize, support: Vec<Vec<usize>>, weights: Vec<f64>, rule: Rule) -> Result<Self> {
        if alphabet_size == 0 || length == 0 {
            return Err(invalid("alphabet size and length must be positive"));
        }
        if support.is_empty() {
            return Err(invalid("empty support"));
        }
        if support.len() != weights.len() {
            return Err(LabError::ShapeMismatch { expected: support.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        let mut index = HashSet::with_capacity(support.len());
        for seq in &support {
            if seq.len() != length {
                return Err(LabError::ShapeMismatch { expected: length, got: seq.len() });
            }
            if !rule.accepts(seq, alphabet_size) {
                return Err(invalid(format!("sequence {seq:?} violates the {rule:?} rule")));
            }
            if !index.insert(seq.clone()) {
                return Err(invalid(format!("duplicate support sequence {seq:?}")));
            }
        }
        let mut params = BTreeMap::new();
        params.insert("alphabet_size".to_string(), alphabet_size);
        params.insert("length".to_string(), length);
        Ok(Self { alphabet_size, length, support, weights, rule, params, index })
    }

    fn uniform(alphabet_size: usize, length: usize, support: Vec<Vec<usize>>, rule: Rule) -> Result<Self> {
        let n = support.len();
        let weights = vec![1.0 / n as f64; n];
        Self::new(alphabet_size, length, support, weights, rule)
    }

    fn with_param(mut self, key: &str, value: usize) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Uniform over even-parity sign sequences of length `d`.
    pub fn parity(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(invalid("parity needs d >= 2"));
        }
        let support: Vec<Vec<usize>> =
            (0..1usize << d).filter(|v| v.count_ones() % 2 == 0).map(|v| (0..d).map(|k| (v >> k) & 1).collect()).collect();
        Ok(Self::uniform(2, d, support, Rule::Parity)?.with_param("d", d))
    }

    /// Uniform over balanced push/pop sequences of length `2 * half_length`.
    pub fn dyck(half_length: usize) -> Result<Self> {
        if half_length == 0 {
            return Err(invalid("dyck needs half_length >= 1"));
        }
        let len = 2 * half_length;
        let mut support = Vec::new();
        let mut prefix = Vec::with_capacity(len);
        dyck_rec(len, 0, &mut prefix, &mut support);
        Ok(Self::uniform(2, len, support, Rule::Dyck)?.with_param("half_length", half_length))
    }

    /// Uniform over `(s1, s2, s3, s4) ∈ [base]^4` with `s1 + s2 = s3 + s4`.
    pub fn sum_rule(base: usize) -> Result<Self> {
        if base < 2 {
            return Err(invalid("sum rule needs base >= 2"));
        }
        let mut support = Vec::new();
        for s1 in 0..base {
            for s2 in 0..base {
                for s3 in 0..base {
                    for s4 in 0..base {
                        if s1 + s2 == s3 + s4 {
                            support.push(vec![s1, s2, s3, s4]);
                        }
                    }
                }
            }
        }
        Ok(Self::uniform(base, 4, support, Rule::SumRule)?.with_param("base", base))
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn support(&self) -> &[Vec<usize>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn params(&self) -> &BTreeMap<String, usize> {
        &self.params
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        self.index.contains(seq)
    }

    /// Whether `seq` obeys the distribution's grammar rule.
    pub fn satisfies(&self, seq: &[usize]) -> bool {
        match self.rule {
            Rule::Custom => self.contains(seq),
            rule => seq.len() == self.length && rule.accepts(seq, self.alphabet_size),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DistributionFile {
            rule: self.rule,
            params: self.params.clone(),
            support: self.support.clone(),
            weights: self.weights.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DistributionFile = serde_json::from_str(text)?;
        let get = |k: &str| file.params.get(k).copied().ok_or_else(|| invalid(format!("distribution params missing `{k}`")));
        let mut dist = Self::new(get("alphabet_size")?, get("length")?, file.support, file.weights, file.rule)?;
        dist.params = file.params;
        Ok(dist)
    }
}

fn dyck_rec(len: usize, depth: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let remaining = len - prefix.len();
    if remaining == 0 {
        if depth == 0 {
            out.push(prefix.clone());
        }
        return;
    }
    if depth < remaining {
        prefix.push(0);
        dyck_rec(len, depth + 1, prefix, out);
        prefix.pop();
    }
    if depth > 0 {
        prefix.push(1);
        dyck_rec(len, depth - 1, prefix, out);
        prefix.pop();
    }
}

/// On-disk form of a [`SymbolicDistribution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionFile {
    pub rule: Rule,
    pub params: BTreeMap<String, usize>,
    pub support: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

/// Maps each symbol to an ambient template vector; a sequence renders to the
/// concatenation of its symbols' templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Renderer {
    templates: Vec<Vec<f64>>,
}

impl Renderer {
    pub fn new(templates: Vec<Vec<f64>>) -> Result<Self> {
        let dim = templates.first().map(Vec::len).ok_or_else(|| invalid("no templates"))?;
        if dim == 0 {
            return Err(invalid("templates must be non-empty vectors"));
        }
        for t in &templates {
            if t.len() != dim {
                return Err(LabError::ShapeMismatch { expected: dim, got: t.len() });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(invalid("templates must be finite"));
            }
        }
        for (i, a) in templates.iter().enumerate() {
            for b in &templates[i + 1..] {
                if sq_dist(a, b) == 0.0 {
                    return Err(invalid("templates must be pairwise distinct"));
                }
            }
        }
        Ok(Self { templates })
    }

    /// Scalar rendering `0 ↦ +1`, `1 ↦ -1`.
    pub fn hypercube() -> Self {
        Self { templates: vec![vec![1.0], vec![-1.0]] }
    }

    pub fn one_hot(alphabet_size: usize) -> Result<Self> {
        Self::new((0..alphabet_size).map(|k| (0..alphabet_size).map(|j| if j == k { 1.0 } else { 0.0 }).collect()).collect())
    }

    pub fn alphabet_size(&self) -> usize {
        self.templates.len()
    }

    pub fn symbol_dim(&self) -> usize {
        self.templates[0].len()
    }

    pub fn templates(&self) -> &[Vec<f64>] {
        &self.templates
    }

    pub fn ambient_dim(&self, length: usize) -> usize {
        self.symbol_dim() * length
    }

    pub fn render_sequence(&self, seq: &[usize]) -> Vec<f64> {
        seq.iter().flat_map(|&s| self.templates[s].iter().copied()).collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A finite-support probability distribution in `ℝ^d`. Points are stored
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientDensity {
    dim: usize,
    points: Vec<f64>,
    mass: Vec<f64>,
}

impl AmbientDensity {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, mass: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if points.is_empty() {
            return Err(invalid("empty support"));
        }
        if points.len() != mass.len() {
            return Err(LabError::ShapeMismatch { expected: points.len(), got: mass.len() });
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(invalid("masses must be finite and nonnegative"));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid(format!("masses sum to {total}, not 1")));
        }
        let mut flat = Vec::with_capacity(dim * points.len());
        for p in &points {
            if p.len() != dim {
                return Err(LabError::ShapeMismatch { expected: dim, got: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Ok(Self { dim, points: flat, mass })
    }

    /// Unit mass at a single point.
    pub fn point(x: Vec<f64>) -> Result<Self> {
        let dim = x.len();
        Self::new(dim, vec![x], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn point_at(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, m) in self.mass.iter().enumerate() {
            acc += m;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        self.mass.iter().rposition(|m| *m > 0.0).unwrap_or(0)
    }
}

/// A finite-support distribution on the vertices of `{±1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypercubeDensity {
    inner: AmbientDensity,
}

impl HypercubeDensity {
    pub fn new(d: usize, support: Vec<Vec<f64>>, point_mass: Vec<f64>) -> Result<Self> {
        Self::try_from(AmbientDensity::new(d, support, point_mass)?)
    }

    pub fn d(&self) -> usize {
        self.inner.dim
    }

    pub fn as_ambient(&self) -> &AmbientDensity {
        &self.inner
    }

    pub fn support(&self) -> impl Iterator<Item = &[f64]> {
        self.inner.points()
    }

    pub fn point_mass(&self) -> &[f64] {
        &self.inner.mass
    }

    fn vertex_mask(x: &[f64]) -> usize {
        x.iter().enumerate().fold(0, |acc, (k, v)| if *v < 0.0 { acc | (1 << k) } else { acc })
    }
}

impl TryFrom<AmbientDensity> for HypercubeDensity {
    type Error = LabError;

    fn try_from(inner: AmbientDensity) -> Result<Self> {
        if inner.points.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(invalid("hypercube support entries must be ±1"));
        }
        Ok(Self { inner })
    }
}

impl std::ops::Deref for HypercubeDensity {
    type Target = AmbientDensity;

    fn deref(&self) -> &AmbientDensity {
        &self.inner
    }
}

pub fn make_parity(d: usize) -> Result<HypercubeDensity> {
    HypercubeDensity::try_from(render(&SymbolicDistribution::parity(d)?, &Renderer::hypercube())?)
}

pub fn make_dyck(half_length: usize) -> Result<HypercubeDensity> {
    HypercubeDensity::try_from(render(&SymbolicDistribution::dyck(half_length)?, &Renderer::hypercube())?)
}

pub fn make_sum_rule(base: usize) -> Result<SymbolicDistribution> {
    SymbolicDistribution::sum_rule(base)
}

/// Pushes a symbolic distribution into ambient space; weights are unchanged.
pub fn render(dist: &SymbolicDistribution, renderer: &Renderer) -> Result<AmbientDensity> {
    if renderer.alphabet_size() != dist.alphabet_size() {
        return Err(invalid(format!(
            "renderer has {} templates but the alphabet has {} symbols",
            renderer.alphabet_size(),
            dist.alphabet_size()
        )));
    }
    let dim = renderer.ambient_dim(dist.length());
    let points = dist.support().iter().map(|s| renderer.render_sequence(s)).collect();
    AmbientDensity::new(dim, points, dist.weights().to_vec())
}

fn check_subset(d: usize, subset: &[usize]) -> Result<()> {
    if let Some(&k) = subset.iter().find(|&&k| k >= d) {
        return Err(invalid(format!("index {k} out of range for d = {d}")));
    }
    Ok(())
}

/// Fourier coefficient `p̄(I)` by exact enumeration over the support.
pub fn fourier_coeff(p: &HypercubeDensity, subset: &[usize]) -> Result<f64> {
    let d = p.d();
    check_subset(d, subset)?;
    let sum: f64 = p.support().zip(p.point_mass()).map(|(x, m)| m * subset.iter().map(|&i| x[i]).product::<f64>()).sum();
    Ok(sum * 0.5f64.powi(d as i32))
}

/// All `2^d` coefficients, indexed by subset bitmask, via the fast
/// Walsh–Hadamard transform.
pub fn full_spectrum(p: &HypercubeDensity) -> Result<Vec<f64>> {
    let d = p.d();
    if d > MAX_FULL_TRANSFORM_DIM {
        return Err(invalid(format!("full transform limited to d <= {MAX_FULL_TRANSFORM_DIM}, got {d}")));
    }
    let mut f = vec![0.0; 1 << d];
    for (x, m) in p.support().zip(p.point_mass()) {
        f[HypercubeDensity::vertex_mask(x)] += m;
    }
    walsh_hadamard_in_place(&mut f);
    let scale = 0.5f64.powi(d as i32);
    f.iter_mut().for_each(|v| *v *= scale);
    Ok(f)
}

/// Point masses on every vertex (bitmask indexed, bit k set ⇔ x_k = -1)
/// reconstructed from a full spectrum.
pub fn inverse_spectrum(spectrum: &[f64]) -> Vec<f64> {
    let mut f = spectrum.to_vec();
    walsh_hadamard_in_place(&mut f);
    f
}

fn walsh_hadamard_in_place(f: &mut [f64]) {
    let n = f.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for k in start..start + h {
                let (u, v) = (f[k], f[k + h]);
                f[k] = u + v;
                f[k + h] = u - v;
            }
        }
        h *= 2;
    }
}

/// Point mass of vertex `x` as a dense-table index helper.
pub fn vertex_index(x: &[f64]) -> usize {
    HypercubeDensity::vertex_mask(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption1Report {
    pub holds: bool,
    pub violations: Vec<(Vec<usize>, f64)>,
}

/// All first- and second-order coefficients vanish (within `tol`).
pub fn check_assumption1(p: &HypercubeDensity, tol: f64) -> Result<Assumption1Report> {
    if tol <= 0.0 {
        return Err(invalid("tolerance must be positive"));
    }
    let d = p.d();
    let mut violations = Vec::new();
    for subset in low_order_subsets(d).into_iter().skip(1) {
        let c = fourier_coeff(p, &subset)?;
        if c.abs() > tol {
            violations.push((subset, c));
        }
    }
    Ok(Assumption1Report { holds: violations.is_empty(), violations })
}

/// `∅`, then singletons, then pairs, each in lexicographic order.
pub fn low_order_subsets(d: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    out.extend((0..d).map(|i| vec![i]));
    for i in 0..d {
        for j in i + 1..d {
            out.push(vec![i, j]);
        }
    }
    out
}

/// CSV with one row per subset: `subset,coefficient`, indices `;`-joined.
pub fn fourier_csv(p: &HypercubeDensity, subsets: &[Vec<usize>]) -> Result<String> {
    let mut out = String::from("subset,coefficient\n");
    for s in subsets {
        let c = fourier_coeff(p, s)?;
        let key: Vec<String> = s.iter().map(usize::to_string).collect();
        writeln!(out, "{},{:e}", key.join(";"), c).expect("write to String");
    }
    Ok(out)
}

/// Exact marginal over `coords`, in the order given.
pub fn marginal(p: &HypercubeDensity, coords: &[usize]) -> Result<HypercubeDensity> {
    if coords.is_empty() {
        return Err(invalid("marginal needs at least one coordinate"));
    }
    check_subset(p.d(), coords)?;
    let mut acc: BTreeMap<Vec<i8>, f64> = BTreeMap::new();
    for (x, m) in p.support().zip(p.point_mass()) {
        let key: Vec<i8> = coords.iter().map(|&i| if x[i] > 0.0 { 1 } else { -1 }).collect();
        *acc.entry(key).or_insert(0.0) += m;
    }
    let (points, mass): (Vec<Vec<f64>>, Vec<f64>) =
        acc.into_iter().rev().map(|(k, m)| (k.into_iter().map(f64::from).collect(), m)).unzip();
    // re-normalize against summation drift
    let total: f64 = mass.iter().sum();
    let mass = mass.into_iter().map(|m| m / total).collect();
    HypercubeDensity::new(coords.len(), points, mass)
}

/// Draws a support point with probability equal to its mass.
pub fn sample_x0<R: Rng + ?Sized>(p: &AmbientDensity, rng: &mut R) -> Vec<f64> {
    p.point_at(p.sample_index(rng)).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_from_seed;

    fn brute_coeff(p: &HypercubeDensity, subset: &[usize]) -> f64 {
        // E over the uniform measure of p(x) x_I, enumerating all 2^d vertices
        let d = p.d();
        let mut total = 0.0;
        for v in 0..1usize << d {
            let x: Vec<f64> = (0..d).map(|k| if (v >> k) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let mass: f64 = p.support().zip(p.point_mass()).filter(|(s, _)| *s == x.as_slice()).map(|(_, m)| *m).sum();
            total += mass * subset.iter().map(|&i| x[i]).product::<f64>();
        }
        total / (1usize << d) as f64
    }

    #[test]
    fn parity_support_small_cases() {
        let p3 = make_parity(3).unwrap();
        let mut pts: Vec<Vec<f64>> = p3.support().map(<[f64]>::to_vec).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = vec![vec![1.0, 1.0, 1.0], vec![1.0, -1.0, -1.0], vec![-1.0, 1.0, -1.0], vec![-1.0, -1.0, 1.0]];
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, want);
        assert!(p3.point_mass().iter().all(|m| *m == 0.25));

        assert_eq!(make_parity(8).unwrap().len(), 128);

        let p2 = make_parity(2).unwrap();
        let pts: Vec<Vec<f64>> = p2.support().map(<[f64]>::to_vec).collect();
        assert_eq!(pts.len(), 2);
        assert!(pts.contains(&vec![1.0, 1.0]) && pts.contains(&vec![-1.0, -1.0]));
    }

    #[test]
    fn parity_rejects_small_d() {
        assert!(matches!(make_parity(1), Err(LabError::InvalidArgument(_))));
    }

    #[test]
    fn dyck_counts_are_catalan() {
        let d2 = make_dyck(2).unwrap();
        let pts: Vec<Vec<f64>> = d2.support().map(<[f64]>::to_vec).collect();
        assert_eq!(pts.len(), 2);
        assert!(pts.contains(&vec![1.0, 1.0, -1.0, -1.0]));
        assert!(pts.contains(&vec![1.0, -1.0, 1.0, -1.0]));
        assert_eq!(make_dyck(3).unwrap().len(), 5);
        let d1 = make_dyck(1).unwrap();
        assert_eq!(d1.point_at(0), &[1.0, -1.0]);
        assert_eq!(make_dyck(5).unwrap().len(), 42);
    }

    #[test]
    fn sum_rule_counts() {
        assert_eq!(make_sum_rule(10).unwrap().support().len(), 670);
        // brute force over all 4-tuples
        for (base, want) in [(2usize, 6usize), (3, 19)] {
            let mut count = 0;
            for v in 0..base.pow(4) {
                let s: Vec<usize> = (0..4).map(|k| (v / base.pow(k)) % base).collect();
                if s[0] + s[1] == s[2] + s[3] {
                    count += 1;
                }
            }
            assert_eq!(count, want);
            assert_eq!(make_sum_rule(base).unwrap().support().len(), want);
        }
    }

    #[test]
    fn constructors_satisfy_their_rules() {
        for dist in [
            SymbolicDistribution::parity(6).unwrap(),
            SymbolicDistribution::dyck(4).unwrap(),
            SymbolicDistribution::sum_rule(5).unwrap(),
        ] {
            assert!(dist.support().iter().all(|s| dist.satisfies(s)));
        }
    }

    #[test]
    fn rejects_invalid_distributions() {
        let dup = SymbolicDistribution::new(2, 2, vec![vec![0, 0], vec![0, 0]], vec![0.5, 0.5], Rule::Parity);
        assert!(dup.is_err());
        let off_rule = SymbolicDistribution::new(2, 2, vec![vec![0, 1]], vec![1.0], Rule::Parity);
        assert!(off_rule.is_err());
        let bad_mass = SymbolicDistribution::new(2, 2, vec![vec![0, 0]], vec![0.9], Rule::Parity);
        assert!(bad_mass.is_err());
    }

    #[test]
    fn render_shapes_and_identity() {
        let parity = SymbolicDistribution::parity(3).unwrap();
        let rendered = render(&parity, &Renderer::hypercube()).unwrap();
        assert_eq!(HypercubeDensity::try_from(rendered).unwrap(), make_parity(3).unwrap());

        let sum = make_sum_rule(2).unwrap();
        let rendered = render(&sum, &Renderer::one_hot(2).unwrap()).unwrap();
        assert_eq!(rendered.dim(), 8);
        assert_eq!(rendered.len(), 6);

        let dyck = render(&SymbolicDistribution::dyck(2).unwrap(), &Renderer::hypercube()).unwrap();
        assert_eq!((dyck.dim(), dyck.len()), (4, 2));

        let mismatch = render(&sum, &Renderer::one_hot(3).unwrap());
        assert!(matches!(mismatch, Err(LabError::InvalidArgument(_))));
    }

    #[test]
    fn renderer_rejects_duplicate_templates() {
        assert!(Renderer::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn fourier_coefficients_parity3() {
        let p = make_parity(3).unwrap();
        assert_eq!(fourier_coeff(&p, &[]).unwrap(), 0.125);
        assert_eq!(fourier_coeff(&p, &[0]).unwrap(), brute_coeff(&p, &[0]));
        assert_eq!(fourier_coeff(&p, &[0]).unwrap(), 0.0);
        assert_eq!(brute_coeff(&p, &[0, 1, 2]), 0.125);
        assert_eq!(fourier_coeff(&p, &[0, 1, 2]).unwrap(), 0.125);
        assert!(fourier_coeff(&p, &[3]).is_err());
    }

    #[test]
    fn full_spectrum_matches_enumeration() {
        let p = make_dyck(3).unwrap();
        let spec = full_spectrum(&p).unwrap();
        for mask in 0..1usize << 6 {
            let subset: Vec<usize> = (0..6).filter(|k| (mask >> k) & 1 == 1).collect();
            assert!((spec[mask] - brute_coeff(&p, &subset)).abs() < 1e-15);
        }
    }

    #[test]
    fn assumption1_cases() {
        assert!(check_assumption1(&make_parity(8).unwrap(), 1e-12).unwrap().holds);

        let corner = HypercubeDensity::new(4, vec![vec![1.0; 4]], vec![1.0]).unwrap();
        let rep = check_assumption1(&corner, 1e-12).unwrap();
        assert!(!rep.holds);
        assert!(rep.violations.iter().any(|(s, c)| s == &vec![0] && *c != 0.0));

        let rep = check_assumption1(&make_dyck(2).unwrap(), 1e-12).unwrap();
        assert!(!rep.holds);
        let first = rep.violations.iter().find(|(s, _)| s == &vec![0]).unwrap();
        assert!(first.1 > 0.0);
    }

    #[test]
    fn fourier_csv_rows() {
        let csv = fourier_csv(&make_parity(8).unwrap(), &low_order_subsets(8)).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 37);
        assert!(rows[0].starts_with(','));
        assert!(rows[1].starts_with("0,"));
        assert!(rows[9].starts_with("0;1,"));
    }

    #[test]
    fn marginals_of_parity() {
        let p = make_parity(3).unwrap();
        let m1 = marginal(&p, &[0]).unwrap();
        assert_eq!(m1.len(), 2);
        assert!(m1.point_mass().iter().all(|m| (*m - 0.5).abs() < 1e-15));
        let m2 = marginal(&p, &[0, 1]).unwrap();
        assert_eq!(m2.len(), 4);
        assert!(m2.point_mass().iter().all(|m| (*m - 0.25).abs() < 1e-15));
        let m3 = marginal(&p, &[0, 1, 2]).unwrap();
        assert_eq!(m3.len(), 4);
        for x in m3.support() {
            assert_eq!(x.iter().product::<f64>(), 1.0);
        }
        assert!(marginal(&p, &[]).is_err());
    }

    #[test]
    fn sampling_respects_support() {
        let p = make_parity(8).unwrap();
        let mut rng = rng_from_seed(11);
        for _ in 0..100_000 {
            let x = sample_x0(&p, &mut rng);
            assert_eq!(x.iter().product::<f64>(), 1.0);
        }
        let single = AmbientDensity::point(vec![0.3, -2.0]).unwrap();
        for _ in 0..10 {
            assert_eq!(sample_x0(&single, &mut rng), vec![0.3, -2.0]);
        }
    }

    #[test]
    fn sampling_frequencies_parity3() {
        let p = make_parity(3).unwrap();
        let mut rng = rng_from_seed(5);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[p.sample_index(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn json_round_trip() {
        let dist = SymbolicDistribution::sum_rule(3).unwrap();
        let back = SymbolicDistribution::from_json(&dist.to_json().unwrap()).unwrap();
        assert_eq!(back, dist);
        assert_eq!(back.params()["base"], 3);
    }
}
