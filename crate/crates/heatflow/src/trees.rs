// SPDX-License-Identifier: Apache-2.0

//! Tree expansion of multi-commutators of monomials in creation and
//! annihilation operators, tree-decay envelopes, and the heat series.
//!
//! Indexing: the expansion is defined recursively by adding the monomials
//! `p_1, p_2, ...` from the innermost slot of the multi-commutator outwards.
//! Public functions take operators in multi-commutator order
//! `[B_1, [B_2, [..., B_N]]]`, so vertex `v` (0-based) of a tree stands for
//! `B_{N-v}`, i.e. `monomials[N - 1 - v]`.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, HeatError, Result};
use crate::lattice::{HermitianOperator, LatticeBox, PeierlsCoupling, VectorPotentialSpec};
use crate::linalg::{commutator, trace_product, CMatrix, Eigh, I, ONE, ZERO};
use crate::onebody::{decay_weight, SymbolMatrix};
use crate::quasifree::{basis_vector, wick_expectation, Factor, Kind, Monomial};

/// Largest number of monomials accepted by [`expand_multicommutator`].
pub const MAX_ENTRIES: usize = 6;
/// Largest monomial length accepted by [`expand_multicommutator`].
pub const MAX_MONOMIAL_LEN: usize = 4;
/// Largest vertex count accepted by [`enumerate_trees`] (9! trees).
pub const MAX_TREE_VERTICES: usize = 10;

/// A tree on vertices `0..n` in which every vertex `v >= 1` is joined to
/// exactly one earlier vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tree {
    pub n: usize,
    /// Bonds `(i, j)` with `i < j`; bond `k` attaches vertex `k + 1`.
    pub bonds: Vec<(usize, usize)>,
}

impl Tree {
    pub fn is_leaf(&self, v: usize) -> bool {
        self.bonds.iter().filter(|&&(a, b)| a == v || b == v).count() == 1
    }
}

/// All trees of the recursive family on `n` vertices, in construction order.
pub fn enumerate_trees(n: usize) -> Result<Vec<Tree>> {
    if n < 2 {
        return invalid("trees need at least two vertices");
    }
    if n > MAX_TREE_VERTICES {
        return Err(HeatError::ResourceLimit(format!(
            "{n} vertices exceed the tree limit {MAX_TREE_VERTICES}"
        )));
    }
    let mut trees = vec![Tree {
        n: 2,
        bonds: vec![(0, 1)],
    }];
    for v in 2..n {
        let mut next = Vec::with_capacity(trees.len() * v);
        for t in &trees {
            for k in 0..v {
                let mut bonds = t.bonds.clone();
                bonds.push((k, v));
                next.push(Tree { n: v + 1, bonds });
            }
        }
        trees = next;
    }
    Ok(trees)
}

/// A factor slot: position `pos` inside the monomial of tree vertex `vertex`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Slot {
    pub vertex: usize,
    pub pos: usize,
}

/// One term of the expansion: `sign * prod_b {x(b), y(b)} * (reduced monomial)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeTerm {
    /// Index into `enumerate_trees(N)`.
    pub tree: usize,
    /// `(x(b), y(b))` per bond, in the tree's bond order; `x(b)` lies in the lower vertex.
    pub contraction: Vec<(Slot, Slot)>,
    pub sign: i8,
    /// Uncontracted slots in operator order.
    pub reduced: Vec<Slot>,
}

fn factor<'a>(monomials: &'a [Monomial], slot: Slot) -> &'a Factor {
    let n = monomials.len();
    &monomials[n - 1 - slot.vertex].factors[slot.pos]
}

impl TreeTerm {
    /// Product of the bond anticommutators.
    pub fn scalar(&self, monomials: &[Monomial]) -> Complex64 {
        self.contraction
            .iter()
            .map(|&(x, y)| anticommutator_scalar(factor(monomials, x), factor(monomials, y), None))
            .fold(ONE, |a, b| a * b)
    }

    pub fn reduced_monomial(&self, monomials: &[Monomial]) -> Monomial {
        Monomial {
            factors: self
                .reduced
                .iter()
                .map(|&s| factor(monomials, s).clone())
                .collect(),
        }
    }

    /// `sign * scalar * rho(reduced)` for the quasi-free state with symbol `d`.
    pub fn expectation(&self, monomials: &[Monomial], d: &CMatrix) -> Complex64 {
        let c = self.scalar(monomials);
        if c == ZERO {
            return ZERO;
        }
        c * f64::from(self.sign) * wick_expectation(d, &self.reduced_monomial(monomials))
    }
}

fn check_lengths(lengths: &[usize]) -> Result<()> {
    if lengths.len() < 2 {
        return invalid("expansion needs at least two monomials");
    }
    if let Some(l) = lengths.iter().find(|&&l| l == 0 || l % 2 == 1) {
        return invalid(format!("monomials must have even positive length, got {l}"));
    }
    if lengths.len() > MAX_ENTRIES || lengths.iter().any(|&l| l > MAX_MONOMIAL_LEN) {
        return Err(HeatError::ResourceLimit(format!(
            "expansion capped at {MAX_ENTRIES} monomials of length <= {MAX_MONOMIAL_LEN}"
        )));
    }
    Ok(())
}

/// Slots `[0, len)` of vertex `v`.
fn vertex_slots(v: usize, len: usize) -> Vec<Slot> {
    (0..len).map(|pos| Slot { vertex: v, pos }).collect()
}

/// `B[..k2] ++ R[..k1] ++ R[k1+1..] ++ B[k2+1..]`.
fn splice(outer: &[Slot], k2: usize, inner: &[Slot], k1: usize) -> Vec<Slot> {
    let mut out = Vec::with_capacity(outer.len() + inner.len() - 2);
    out.extend_from_slice(&outer[..k2]);
    out.extend_from_slice(&inner[..k1]);
    out.extend_from_slice(&inner[k1 + 1..]);
    out.extend_from_slice(&outer[k2 + 1..]);
    out
}

/// Combinatorial part of the expansion for monomials of the given lengths
/// (multi-commutator order). Only the nonzero-sign terms are returned.
pub fn expand_skeleton(lengths: &[usize]) -> Result<Vec<TreeTerm>> {
    check_lengths(lengths)?;
    let n = lengths.len();
    let plen: Vec<usize> = (0..n).map(|v| lengths[n - 1 - v]).collect();

    // [p_2, p_1]: contract slot k2 of p_2 with slot k1 of p_1, sign (-1)^(k1+1) (1-based).
    let p1 = vertex_slots(0, plen[0]);
    let p2 = vertex_slots(1, plen[1]);
    let mut terms = Vec::new();
    for k2 in 0..p2.len() {
        for k1 in 0..p1.len() {
            terms.push(TreeTerm {
                tree: 0,
                contraction: vec![(p1[k1], p2[k2])],
                sign: if k1 % 2 == 0 { 1 } else { -1 },
                reduced: splice(&p2, k2, &p1, k1),
            });
        }
    }
    // [p_{v+1}, p_T]: same rule with the reduced list in the role of p_1.
    for v in 2..n {
        let pv = vertex_slots(v, plen[v]);
        let mut next = Vec::with_capacity(terms.len() * pv.len() * 4);
        for term in &terms {
            for k2 in 0..pv.len() {
                for k1 in 0..term.reduced.len() {
                    let x = term.reduced[k1];
                    let mut contraction = term.contraction.clone();
                    contraction.push((x, pv[k2]));
                    let flip = if k1 % 2 == 0 { 1 } else { -1 };
                    next.push(TreeTerm {
                        tree: term.tree * v + x.vertex,
                        contraction,
                        sign: term.sign * flip,
                        reduced: splice(&pv, k2, &term.reduced, k1),
                    });
                }
            }
        }
        terms = next;
    }
    Ok(terms)
}

/// Expand `[B_1, [B_2, [..., B_N]]]` into tree terms.
pub fn expand_multicommutator(monomials: &[Monomial]) -> Result<Vec<TreeTerm>> {
    let lengths: Vec<usize> = monomials.iter().map(|m| m.len()).collect();
    expand_skeleton(&lengths)
}

/// `|K_T|`: number of contraction maps of a tree, `prod_{i,j} |Omega_i| |Omega_j|`.
pub fn contraction_count(tree: &Tree, lengths: &[usize]) -> usize {
    let n = lengths.len();
    tree.bonds
        .iter()
        .map(|&(i, j)| lengths[n - 1 - i] * lengths[n - 1 - j])
        .product()
}

/// Every contraction map of `tree`, distinct slots or not.
pub fn contraction_maps(tree: &Tree, lengths: &[usize]) -> Vec<Vec<(Slot, Slot)>> {
    let n = lengths.len();
    let mut maps: Vec<Vec<(Slot, Slot)>> = vec![Vec::new()];
    for &(i, j) in &tree.bonds {
        let li = lengths[n - 1 - i];
        let lj = lengths[n - 1 - j];
        let mut next = Vec::with_capacity(maps.len() * li * lj);
        for m in &maps {
            for a in 0..li {
                for b in 0..lj {
                    let mut m2 = m.clone();
                    m2.push((Slot { vertex: i, pos: a }, Slot { vertex: j, pos: b }));
                    next.push(m2);
                }
            }
        }
        maps = next;
    }
    maps
}

/// `m_T(x, y)` read off an expansion: zero when the pair was never generated.
pub fn sign_of(terms: &[TreeTerm], tree: usize, contraction: &[(Slot, Slot)]) -> i8 {
    terms
        .iter()
        .find(|t| t.tree == tree && t.contraction == contraction)
        .map_or(0, |t| t.sign)
}

/// Free evolution attached to a pair of slots.
#[derive(Clone, Copy, Debug)]
pub struct Dynamics<'a> {
    pub h: &'a Eigh,
    pub s1: f64,
    pub s2: f64,
}

/// `{a(psi), a*(phi)} = <psi, phi>`; same-kind pairs give 0. With dynamics the
/// first slot is evolved for time `s1` and the second for `s2`, so basis slots give
/// `<e_x, exp(i (s2 - s1) h) e_y>`.
pub fn anticommutator_scalar(a: &Factor, b: &Factor, dynamics: Option<Dynamics<'_>>) -> Complex64 {
    if a.kind == b.kind {
        return ZERO;
    }
    let (ann, cre, s_ann, s_cre) = match a.kind {
        Kind::Annihilation => (&a.psi, &b.psi, 0, 1),
        Kind::Creation => (&b.psi, &a.psi, 1, 0),
    };
    match dynamics {
        None => ann.dotc(cre),
        Some(dyn_) => {
            let times = [dyn_.s1, dyn_.s2];
            // tau_s(a(psi)) = a(exp(ish) psi)
            let ea = dyn_.h.exp_i(-times[s_ann]) * ann;
            let ec = dyn_.h.exp_i(-times[s_cre]) * cre;
            ea.dotc(&ec)
        }
    }
}

/// `v_N = sum_T prod_{(k,l) in T} 1 / (1 + |x_k - x_l|^(d + eps))`, positions in
/// multi-commutator order.
pub fn tree_decay_envelope(epsilon: f64, positions: &[Vec<i64>]) -> Result<f64> {
    if !(epsilon > 0.0) {
        return invalid("envelope exponent offset must be positive");
    }
    let n = positions.len();
    let trees = enumerate_trees(n)?;
    let dim = positions[0].len();
    let dist = |a: usize, b: usize| -> f64 {
        let (pa, pb) = (&positions[n - 1 - a], &positions[n - 1 - b]);
        pa.iter()
            .zip(pb)
            .map(|(x, y)| ((x - y) * (x - y)) as f64)
            .sum::<f64>()
            .sqrt()
    };
    Ok(trees
        .iter()
        .map(|t| {
            t.bonds
                .iter()
                .map(|&(a, b)| 1.0 / decay_weight(dist(a, b), dim, epsilon))
                .product::<f64>()
        })
        .sum())
}

/// Evolved bilinear `tau_s(a*_x a_{x+z})`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvolvedBilinear {
    pub s: f64,
    pub x: Vec<i64>,
    pub z: Vec<i64>,
}

/// One multi-commutator sample, entries in multi-commutator order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecaySample {
    pub entries: Vec<EvolvedBilinear>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecaySampleResult {
    pub order: usize,
    pub expectation: f64,
    pub envelope: f64,
    pub ratio: f64,
    /// `ratio^(1/(N-1))`.
    pub constant: f64,
}

#[derive(Clone, Debug)]
pub struct TreeBoundReport {
    pub epsilon: f64,
    pub samples: Vec<DecaySampleResult>,
    /// Smallest `D` with `|rho([...])| <= D^(N-1) v_N` on every sample.
    pub constant: f64,
}

impl TreeBoundReport {
    pub fn dominated_by(&self, constant: f64) -> bool {
        self.samples.iter().all(|s| {
            s.expectation <= constant.powi(s.order as i32 - 1) * s.envelope * (1.0 + 1e-12)
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bilinear monomials `a*(exp(ish) e_x) a(exp(ish) e_{x+z})`.
pub fn evolved_bilinears(
    lattice: &LatticeBox,
    eig: &Eigh,
    entries: &[EvolvedBilinear],
) -> Result<Vec<Monomial>> {
    let n = lattice.len();
    entries
        .iter()
        .map(|e| {
            let y: Vec<i64> = e.x.iter().zip(&e.z).map(|(a, b)| a + b).collect();
            let ix = lattice
                .index(&e.x)
                .ok_or_else(|| HeatError::InvalidArgument(format!("site {:?} outside box", e.x)))?;
            let iy = lattice
                .index(&y)
                .ok_or_else(|| HeatError::InvalidArgument(format!("site {y:?} outside box")))?;
            let u = eig.exp_i(-e.s);
            Ok(Monomial::bilinear(
                &u * basis_vector(n, ix),
                &u * basis_vector(n, iy),
            ))
        })
        .collect()
}

/// Expectation of the multi-commutator of `monomials` through the tree expansion.
pub fn multicommutator_expectation(monomials: &[Monomial], d: &CMatrix) -> Result<Complex64> {
    let terms = expand_multicommutator(monomials)?;
    Ok(terms
        .iter()
        .map(|t| t.expectation(monomials, d))
        .fold(ZERO, |a, b| a + b))
}

/// Ratios of sampled multi-commutator expectations to the tree envelope.
pub fn check_tree_decay_bound(
    d: &SymbolMatrix,
    h: &HermitianOperator,
    epsilon: f64,
    t0: f64,
    t: f64,
    samples: &[DecaySample],
) -> Result<TreeBoundReport> {
    if d.lattice() != h.lattice() {
        return invalid("symbol and Hamiltonian live on different boxes");
    }
    let eig = Eigh::new(h.entries());
    let lattice = h.lattice();
    let results: Vec<Result<DecaySampleResult>> = crate::par::map_collect(samples, |sample| {
        let order = sample.entries.len();
        for e in &sample.entries {
            if e.s < t0 - 1e-12 || e.s > t + 1e-12 {
                return invalid(format!("sample time {} outside [{t0}, {t}]", e.s));
            }
            let z1: i64 = e.z.iter().map(|c| c.abs()).sum();
            if z1 != 1 {
                return invalid("bilinear offsets must be unit vectors");
            }
        }
        let monos = evolved_bilinears(lattice, &eig, &sample.entries)?;
        let value = multicommutator_expectation(&monos, d.entries())?.norm();
        let positions: Vec<Vec<i64>> = sample.entries.iter().map(|e| e.x.clone()).collect();
        let envelope = tree_decay_envelope(epsilon, &positions)?;
        let ratio = value / envelope;
        Ok(DecaySampleResult {
            order,
            expectation: value,
            envelope,
            ratio,
            constant: ratio.powf(1.0 / (order as f64 - 1.0)),
        })
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let constant = samples.iter().map(|s| s.constant).fold(0.0, f64::max);
    Ok(TreeBoundReport {
        epsilon,
        samples,
        constant,
    })
}

/// Random samples with `order` entries, times uniform in `[t0, t]`.
pub fn sample_decay_tuples(
    lattice: &LatticeBox,
    order: usize,
    t0: f64,
    t: f64,
    count: usize,
    seed: u64,
) -> Vec<DecaySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = lattice.radius();
    let dim = lattice.dim();
    (0..count)
        .map(|_| DecaySample {
            entries: (0..order)
                .map(|_| loop {
                    let x: Vec<i64> = (0..dim).map(|_| rng.random_range(-r..=r)).collect();
                    let axis = rng.random_range(0..dim);
                    let mut z = vec![0i64; dim];
                    z[axis] = if rng.random_bool(0.5) { 1 } else { -1 };
                    let y: Vec<i64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
                    if lattice.index(&y).is_some() {
                        let s = if t > t0 { rng.random_range(t0..=t) } else { t0 };
                        break EvolvedBilinear { s, x, z };
                    }
                })
                .collect(),
        })
        .collect()
}

/// Which kernel closes a chain: `Tr(P D)` or `Tr(P (1 - D))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Closure {
    Particle,
    Hole,
}

/// Tree terms of a multi-commutator of `dGamma(M_1), ..., dGamma(M_N)` collected
/// into matrix chains: the expectation is `sum coef * Tr(K M_{c_1} ... M_{c_N})`.
#[derive(Clone, Debug)]
pub struct ChainExpansion {
    /// `(chain in multi-commutator indices, closure, summed sign)`.
    pub chains: Vec<(Vec<usize>, Closure, i64)>,
}

impl ChainExpansion {
    pub fn new(n: usize) -> Result<Self> {
        let lengths = vec![2usize; n];
        let terms = expand_skeleton(&lengths)?;
        let entry = |s: Slot| n - 1 - s.vertex;
        let mut grouped: BTreeMap<(Vec<usize>, Closure), i64> = BTreeMap::new();
        for term in &terms {
            // slot 0 is a*_r, slot 1 is a_c of dGamma(M) = sum M_rc a*_r a_c
            let mut succ = vec![usize::MAX; n];
            let mut has_pred = vec![false; n];
            let mut zero = false;
            for &(x, y) in &term.contraction {
                let (ann, cre) = match (x.pos, y.pos) {
                    (1, 0) => (x, y),
                    (0, 1) => (y, x),
                    _ => {
                        zero = true;
                        break;
                    }
                };
                succ[entry(ann)] = entry(cre);
                has_pred[entry(cre)] = true;
            }
            if zero {
                continue;
            }
            let head = (0..n).find(|&i| !has_pred[i]).expect("chain has a head");
            let mut chain = vec![head];
            while succ[*chain.last().unwrap()] != usize::MAX {
                chain.push(succ[*chain.last().unwrap()]);
            }
            debug_assert_eq!(chain.len(), n);
            let closure = if term.reduced[0].pos == 0 {
                Closure::Particle
            } else {
                Closure::Hole
            };
            *grouped.entry((chain, closure)).or_insert(0) += i64::from(term.sign);
        }
        Ok(ChainExpansion {
            chains: grouped
                .into_iter()
                .filter(|(_, c)| *c != 0)
                .map(|((ch, cl), c)| (ch, cl, c))
                .collect(),
        })
    }

    /// `rho([dGamma(M_1), [..., dGamma(M_N)]])` for the state with symbol `d`.
    pub fn evaluate(&self, mats: &[&CMatrix], d: &CMatrix) -> Complex64 {
        let n = d.nrows();
        let hole = CMatrix::identity(n, n) - d;
        let mut acc = ZERO;
        for (chain, closure, coef) in &self.chains {
            let mut p = mats[chain[0]].clone();
            for &c in &chain[1..] {
                p = &p * mats[c];
            }
            let k = match closure {
                Closure::Particle => d,
                Closure::Hole => &hole,
            };
            acc += trace_product(k, &p) * (*coef as f64);
        }
        acc
    }
}

/// Heisenberg-picture perturbation `M(s) = exp(i(s - t0)h) w_s exp(-i(s - t0)h)`,
/// the one-particle matrix of `W_{s - t0, s}`.
fn perturbation(eig: &Eigh, coupling: &PeierlsCoupling, t0: f64, s: f64) -> CMatrix {
    let u = eig.exp_i(-(s - t0));
    &u * coupling.field_energy(s) * u.adjoint()
}

fn check_times(times: &[f64], t0: f64, t: f64) -> Result<()> {
    let mut prev = t;
    for &s in times {
        if s > prev + 1e-12 || s < t0 - 1e-12 {
            return invalid("heat series times must satisfy t0 <= s_k <= ... <= s_1 <= t");
        }
        prev = s;
    }
    Ok(())
}

/// `u_k(s_1, ..., s_k, t)`: the tree expansion of
/// `i^k rho([W_{s_k}, ..., W_{s_1}, sum_xy h_xy tau_{t-t0}(a*_x a_y)])`,
/// evaluated with matrix-valued bilinear entries.
pub fn heat_series_coefficient(
    k: usize,
    times: &[f64],
    t: f64,
    h: &HermitianOperator,
    d_fermi: &SymbolMatrix,
    spec: &VectorPotentialSpec,
) -> Result<f64> {
    if times.len() != k || k == 0 {
        return invalid("heat series coefficient needs k >= 1 ordered times");
    }
    check_times(times, spec.t0, t)?;
    let eig = Eigh::new(h.entries());
    let coupling = PeierlsCoupling::new(h.lattice(), spec)?;
    let chains = ChainExpansion::new(k + 1)?;
    let evolved_h = {
        let u = eig.exp_i(-(t - spec.t0));
        &u * h.entries() * u.adjoint()
    };
    let mats: Vec<CMatrix> = times
        .iter()
        .rev()
        .map(|&s| perturbation(&eig, &coupling, spec.t0, s))
        .collect();
    let mut refs: Vec<&CMatrix> = mats.iter().collect();
    refs.push(&evolved_h);
    let value = I.powu(k as u32) * chains.evaluate(&refs, d_fermi.entries());
    Ok(value.re)
}

/// Same coefficient, expanding every `W` into its site bilinears and summing
/// tree terms with Wick expectations one bond choice at a time. Cost grows
/// like the product of the numbers of bilinears; meant for small boxes.
pub fn heat_series_coefficient_by_bonds(
    k: usize,
    times: &[f64],
    t: f64,
    h: &HermitianOperator,
    d_fermi: &SymbolMatrix,
    spec: &VectorPotentialSpec,
) -> Result<f64> {
    if times.len() != k || k == 0 {
        return invalid("heat series coefficient needs k >= 1 ordered times");
    }
    check_times(times, spec.t0, t)?;
    let lattice = h.lattice();
    let n = lattice.len();
    let eig = Eigh::new(h.entries());
    let coupling = PeierlsCoupling::new(lattice, spec)?;
    let terms = expand_skeleton(&vec![2usize; k + 1])?;
    let site = |x: usize| lattice.site(x);
    let bilinears = |m: &CMatrix, s: f64| -> Vec<(Complex64, EvolvedBilinear)> {
        let mut out = Vec::new();
        for x in 0..n {
            for y in 0..n {
                if m[(x, y)] != ZERO {
                    let (sx, sy) = (site(x), site(y));
                    let z = sy.iter().zip(&sx).map(|(a, b)| a - b).collect();
                    out.push((m[(x, y)], EvolvedBilinear { s, x: sx, z }));
                }
            }
        }
        out
    };
    // multi-commutator order: W(s_k), ..., W(s_1), then the energy bilinears
    let mut entry_lists: Vec<Vec<(Complex64, EvolvedBilinear)>> = times
        .iter()
        .rev()
        .map(|&s| bilinears(&coupling.field_energy(s), s - spec.t0))
        .collect();
    entry_lists.push(bilinears(h.entries(), t - spec.t0));
    let d = d_fermi.entries();
    let mut acc = ZERO;
    let mut choice = vec![0usize; k + 1];
    if entry_lists.iter().any(|l| l.is_empty()) {
        return Ok(0.0);
    }
    loop {
        let mut coef = ONE;
        let mut entries = Vec::with_capacity(k + 1);
        for (list, &c) in entry_lists.iter().zip(&choice) {
            coef *= list[c].0;
            entries.push(EvolvedBilinear {
                s: list[c].1.s,
                x: list[c].1.x.clone(),
                z: list[c].1.z.clone(),
            });
        }
        let monos = evolved_bilinears_unchecked(lattice, &eig, &entries);
        let value: Complex64 = terms
            .iter()
            .map(|term| term.expectation(&monos, d))
            .fold(ZERO, |a, b| a + b);
        acc += coef * value;
        // odometer
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return Ok((I.powu(k as u32) * acc).re);
            }
            choice[pos] += 1;
            if choice[pos] < entry_lists[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Like [`evolved_bilinears`] but allows any offset `z`, including zero.
fn evolved_bilinears_unchecked(
    lattice: &LatticeBox,
    eig: &Eigh,
    entries: &[EvolvedBilinear],
) -> Vec<Monomial> {
    let n = lattice.len();
    entries
        .iter()
        .map(|e| {
            let y: Vec<i64> = e.x.iter().zip(&e.z).map(|(a, b)| a + b).collect();
            let u = eig.exp_i(-e.s);
            Monomial::bilinear(
                &u * basis_vector(n, lattice.index(&e.x).expect("site in box")),
                &u * basis_vector(n, lattice.index(&y).expect("site in box")),
            )
        })
        .collect()
}

/// How the simplex-integrated series is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesEvaluator {
    /// Nested trapezoid folded into cumulative sums of commutators,
    /// `O(k M)` matrix products per order.
    Nested,
    /// Nested trapezoid over every ordered time tuple, each integrand from the
    /// chain-collected tree expansion. `O(M^k)`; for small grids.
    TreeTuples,
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatSeriesReport {
    pub t: f64,
    pub intervals: usize,
    /// Simplex-integrated contribution of each order `k = 1..=K`.
    pub orders: Vec<f64>,
    pub total: f64,
}

impl HeatSeriesReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            order: usize,
            term: f64,
            magnitude: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        for (k, &v) in self.orders.iter().enumerate() {
            w.serialize(Row {
                order: k + 1,
                term: v,
                magnitude: v.abs(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trapezoid weight of node `j` on `[0, m]` with spacing `dq`.
fn trap_weight(j: usize, m: usize, dq: f64) -> f64 {
    if m == 0 {
        0.0
    } else if j == 0 || j == m {
        0.5 * dq
    } else {
        dq
    }
}

/// `sum_{k <= K} int_{t0 <= s_k <= ... <= s_1 <= t} u_k`, each simplex integral by
/// nested composite trapezoid on `intervals` equal subintervals of `[t0, t]`.
pub fn heat_series_sum(
    order: usize,
    intervals: usize,
    t: f64,
    h: &HermitianOperator,
    d_fermi: &SymbolMatrix,
    spec: &VectorPotentialSpec,
    evaluator: SeriesEvaluator,
) -> Result<HeatSeriesReport> {
    if order == 0 {
        return invalid("heat series needs K >= 1");
    }
    if t <= spec.t0 {
        return Ok(HeatSeriesReport {
            t,
            intervals,
            orders: vec![0.0; order],
            total: 0.0,
        });
    }
    if intervals == 0 {
        return invalid("heat series grid needs at least one interval");
    }
    let eig = Eigh::new(h.entries());
    let coupling = PeierlsCoupling::new(h.lattice(), spec)?;
    let m = intervals;
    let dq = (t - spec.t0) / m as f64;
    let mats: Vec<CMatrix> = crate::par::map_range(m + 1, |j| {
        perturbation(&eig, &coupling, spec.t0, spec.t0 + j as f64 * dq)
    });
    let d = d_fermi.entries();
    let orders = match evaluator {
        SeriesEvaluator::Nested => (1..=order)
            .map(|k| nested_order(k, &mats, d, h.entries(), dq))
            .collect(),
        SeriesEvaluator::TreeTuples => {
            let hm = h.entries();
            (1..=order)
                .map(|k| tuple_order(k, &mats, d, hm, dq))
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let total = orders.iter().sum();
    Ok(HeatSeriesReport {
        t,
        intervals,
        orders,
        total,
    })
}

/// Uses `Tr(D [A, X]) = Tr([D, A] X)` to move the state through the
/// commutators, so each nesting level is one cumulative trapezoid.
fn nested_order(k: usize, mats: &[CMatrix], d: &CMatrix, h: &CMatrix, dq: f64) -> f64 {
    let m = mats.len() - 1;
    // level 0: the state itself at every node
    let mut level: Vec<CMatrix> = vec![d.clone(); m + 1];
    for _ in 0..k {
        let g: Vec<CMatrix> = level
            .iter()
            .zip(mats)
            .map(|(phi, mj)| commutator(phi, mj))
            .collect();
        let mut cum = CMatrix::zeros(d.nrows(), d.ncols());
        let mut next = Vec::with_capacity(m + 1);
        next.push(cum.clone());
        for j in 1..=m {
            cum += (&g[j - 1] + &g[j]) * Complex64::new(0.5 * dq, 0.0);
            next.push(cum.clone());
        }
        level = next;
    }
    (I.powu(k as u32) * trace_product(&level[m], h)).re
}

fn tuple_order(k: usize, mats: &[CMatrix], d: &CMatrix, h: &CMatrix, dq: f64) -> Result<f64> {
    let m = mats.len() - 1;
    let chains = ChainExpansion::new(k + 1)?;
    let phase = I.powu(k as u32);
    // idx[0] = i_1 >= idx[1] = i_2 >= ...; weight of i_j on [0, i_{j-1}]
    fn walk(
        depth: usize,
        upper: usize,
        weight: f64,
        idx: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize], f64),
        k: usize,
        dq: f64,
    ) {
        if depth == k {
            visit(idx, weight);
            return;
        }
        for j in 0..=upper {
            let w = trap_weight(j, upper, dq);
            if w == 0.0 {
                continue;
            }
            idx.push(j);
            walk(depth + 1, j, weight * w, idx, visit, k, dq);
            idx.pop();
        }
    }
    let mut acc = ZERO;
    let mut visit = |idx: &[usize], w: f64| {
        // multi-commutator order: M(s_k), ..., M(s_1), h
        let mut refs: Vec<&CMatrix> = idx.iter().rev().map(|&j| &mats[j]).collect();
        refs.push(h);
        acc += chains.evaluate(&refs, d) * w;
    };
    let mut idx = Vec::with_capacity(k);
    walk(0, m, 1.0, &mut idx, &mut visit, k, dq);
    Ok((phase * acc).re)
}
