//! Finite classical stochastic processes: Markovianity, regression formulas,
//! Chapman–Kolmogorov, divisibility, semigroup and distinguishability checks,
//! the block counterexample family, and Monte-Carlo SDE sampling.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::criteria::{fmt_times, CriterionReport, HierarchyReport, Verdict, DEFAULT_W_GRID};
use crate::error::{Error, Result};
use crate::unravel::fmt_f64;

pub const MAX_TABLE_ENTRIES: usize = 1 << 20;
const NORM_TOL: f64 = 1e-12;
/// Conditioning events below this probability are treated as impossible.
const EVENT_EPS: f64 = 1e-15;

/// Dense joint distribution over `(x_{t_0}, x_{t_1}, ..., x_{t_n})`, with
/// `x_{t_0}` as the slowest-varying index.
#[derive(Clone, Debug, Serialize)]
pub struct FiniteProcess {
    pub times: Vec<f64>,
    pub cards: Vec<usize>,
    /// Numeric value of each outcome, per time.
    pub labels: Vec<Vec<f64>>,
    pub table: Vec<f64>,
}

/// Marginal over a subset of time indices, in increasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Marginal {
    fn index(&self, xs: &[usize]) -> usize {
        xs.iter().zip(&self.cards).fold(0, |acc, (x, c)| acc * c + x)
    }
    pub fn get(&self, xs: &[usize]) -> f64 {
        self.probs[self.index(xs)]
    }
    fn configs(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.probs.len()).map(move |k| decode(k, &self.cards))
    }
}

fn decode(mut k: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0; cards.len()];
    for i in (0..cards.len()).rev() {
        out[i] = k % cards[i];
        k /= cards[i];
    }
    out
}

impl FiniteProcess {
    pub fn new(times: Vec<f64>, cards: Vec<usize>, labels: Vec<Vec<f64>>, table: Vec<f64>) -> Result<Self> {
        if times.len() != cards.len() || labels.len() != cards.len() || times.is_empty() {
            return Err(Error::Dimension("one cardinality and label set per time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        if labels.iter().zip(&cards).any(|(l, &c)| l.len() != c || c == 0) {
            return Err(Error::Dimension("labels must match cardinalities".into()));
        }
        let n: usize = cards.iter().try_fold(1usize, |a, &c| a.checked_mul(c)).unwrap_or(usize::MAX);
        if n > MAX_TABLE_ENTRIES {
            return Err(Error::Unsupported(format!("joint table of {n} entries exceeds {MAX_TABLE_ENTRIES}")));
        }
        if table.len() != n {
            return Err(Error::Dimension(format!("table has {} entries, expected {n}", table.len())));
        }
        if table.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument("table entries must be non-negative".into()));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!("table sums to {total}")));
        }
        Ok(FiniteProcess { times, cards, labels, table })
    }

    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        self.marginal(&[0]).probs
    }

    /// Marginal over `vars`, which must be strictly increasing.
    pub fn marginal(&self, vars: &[usize]) -> Marginal {
        assert!(vars.windows(2).all(|w| w[0] < w[1]) && vars.iter().all(|&v| v < self.cards.len()));
        let cards: Vec<usize> = vars.iter().map(|&v| self.cards[v]).collect();
        let mut probs = vec![0.0; cards.iter().product()];
        let n = self.cards.len();
        let mut x = vec![0usize; n];
        for &p in &self.table {
            if p != 0.0 {
                let k = vars.iter().fold(0, |acc, &v| acc * self.cards[v] + x[v]);
                probs[k] += p;
            }
            // odometer over the full configuration, last index fastest
            for i in (0..n).rev() {
                x[i] += 1;
                if x[i] < self.cards[i] {
                    break;
                }
                x[i] = 0;
            }
        }
        Marginal { vars: vars.to_vec(), cards, probs }
    }

    /// Same conditional law of later times given `x_{t_0}`, new initial distribution.
    pub fn with_initial_distribution(&self, q: &[f64]) -> Result<Self> {
        let q0 = self.initial_distribution();
        if q.len() != q0.len() {
            return Err(Error::Dimension("initial distribution size".into()));
        }
        if q0.iter().zip(q).any(|(&a, &b)| a <= 0.0 && b > 0.0) {
            return Err(Error::InvalidArgument("conditional law undefined where the current q vanishes".into()));
        }
        let block = self.table.len() / q0.len();
        let table = self
            .table
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let x0 = k / block;
                if q0[x0] > 0.0 {
                    p / q0[x0] * q[x0]
                } else {
                    0.0
                }
            })
            .collect();
        FiniteProcess::new(self.times.clone(), self.cards.clone(), self.labels.clone(), table)
    }

    /// `x_{t_0} ~ q`, then `x_{t_{k+1}} ~ S_k x_{t_k}` with column-stochastic `S_k`.
    pub fn markov_chain(q: &[f64], steps: &[StochasticMatrix], times: Vec<f64>) -> Result<Self> {
        let d = q.len();
        if steps.iter().any(|s| s.dim() != d) || times.len() != steps.len() + 1 {
            return Err(Error::Dimension("chain needs one square matrix per step".into()));
        }
        let n = steps.len() + 1;
        let cards = vec![d; n];
        let total = d.checked_pow(n as u32).filter(|&t| t <= MAX_TABLE_ENTRIES).ok_or_else(|| {
            Error::Unsupported("chain table too large".into())
        })?;
        let table = (0..total)
            .map(|k| {
                let x = decode(k, &cards);
                let mut p = q[x[0]];
                for (j, s) in steps.iter().enumerate() {
                    p *= s.mat[(x[j + 1], x[j])];
                }
                p
            })
            .collect();
        let labels = vec![(0..d).map(|v| v as f64).collect(); n];
        FiniteProcess::new(times, cards, labels, table)
    }

    /// Independent variables: `x_{t_0} ~ q`, `x_{t_k} ~ p`.
    pub fn iid(q: &[f64], p: &[f64], n: usize) -> Result<Self> {
        let s = StochasticMatrix::new(DMatrix::from_fn(p.len(), p.len(), |i, _| p[i]))?;
        if q.len() != p.len() {
            return Err(Error::Dimension("q and p must share the state space".into()));
        }
        Self::markov_chain(q, &vec![s; n], (0..=n).map(|k| k as f64).collect())
    }
}

/// Conditional probabilities `P(target | given)`; `None` marks a
/// zero-probability conditioning event.
#[derive(Clone, Debug)]
pub struct Conditional {
    pub given: Vec<usize>,
    pub target: Vec<usize>,
    pub given_cards: Vec<usize>,
    pub target_cards: Vec<usize>,
    /// Row per given configuration, column per target configuration.
    pub values: Vec<Option<Vec<f64>>>,
}

impl Conditional {
    pub fn get(&self, given: &[usize], target: &[usize]) -> Option<f64> {
        let g = given.iter().zip(&self.given_cards).fold(0, |a, (x, c)| a * c + x);
        let t = target.iter().zip(&self.target_cards).fold(0, |a, (x, c)| a * c + x);
        self.values[g].as_ref().map(|row| row[t])
    }
    pub fn undefined_events(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Bayes quotient from the joint table. Time index lists must be increasing and disjoint.
pub fn conditional(p: &FiniteProcess, target: &[usize], given: &[usize]) -> Result<Conditional> {
    let inc = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&i| i < p.cards.len());
    if !inc(target) || !inc(given) || target.is_empty() {
        return Err(Error::InvalidArgument("time indices must be increasing and in range".into()));
    }
    if target.iter().any(|t| given.contains(t)) {
        return Err(Error::InvalidArgument("target and given times overlap".into()));
    }
    let mut all: Vec<usize> = target.iter().chain(given).copied().collect();
    all.sort_unstable();
    let joint = p.marginal(&all);
    let gm = p.marginal(given);
    let gc: Vec<usize> = given.iter().map(|&i| p.cards[i]).collect();
    let tc: Vec<usize> = target.iter().map(|&i| p.cards[i]).collect();
    let n_t: usize = tc.iter().product();
    let values = (0..gm.probs.len())
        .map(|g| {
            let pg = gm.probs[g];
            if pg <= EVENT_EPS {
                return None;
            }
            let gx = decode(g, &gc);
            Some(
                (0..n_t)
                    .map(|t| {
                        let tx = decode(t, &tc);
                        let xs: Vec<usize> = all
                            .iter()
                            .map(|v| match given.iter().position(|q| q == v) {
                                Some(i) => gx[i],
                                None => tx[target.iter().position(|q| q == v).expect("target")],
                            })
                            .collect();
                        joint.get(&xs) / pg
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(Conditional { given: given.to_vec(), target: target.to_vec(), given_cards: gc, target_cards: tc, values })
}

fn subsets_increasing(n: usize, k: usize, from: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(n, k, from, &mut Vec::new(), f);
}

/// `P(x_n | x_{n-1}, ..., x_1) = P(x_n | x_{n-1})` over every increasing time subset.
pub fn check_cm(p: &FiniteProcess, tol: f64) -> CriterionReport {
    let n = p.cards.len();
    let mut worst = 0.0f64;
    let mut worst_at: Vec<usize> = vec![];
    for k in 3..=n {
        subsets_increasing(n, k, 0, &mut |s| {
            let full = p.marginal(s);
            let head = p.marginal(&s[..k - 1]);
            let pair = p.marginal(&s[k - 2..]);
            let last = p.marginal(&s[k - 2..k - 1]);
            for x in full.configs() {
                let ph = head.get(&x[..k - 1]);
                let pl = last.get(&x[k - 2..k - 1]);
                if ph <= EVENT_EPS || pl <= EVENT_EPS {
                    continue;
                }
                let r = (full.get(&x) / ph - pair.get(&x[k - 2..]) / pl).abs();
                if r > worst {
                    worst = r;
                    worst_at = s.to_vec();
                }
            }
        });
    }
    let mut rep = CriterionReport::new("cm", tol, format!("all increasing subsets of {} times", n)).decide(worst);
    rep.set("max_residual", worst);
    if !worst_at.is_empty() {
        rep.set("worst_subset", worst_at.iter().map(|&i| p.times[i]).collect::<Vec<f64>>());
    }
    rep
}

/// `P(x_n, ..., x_1 | x_0) = P(x_n | x_{n-1}) ... P(x_1 | x_0)` for every
/// increasing tuple after the initial time.
pub fn check_crf(p: &FiniteProcess, n: usize, tol: f64) -> Result<CriterionReport> {
    let horizon = p.horizon();
    let name = format!("crf_{n}");
    if n == 0 || n > horizon {
        return Err(Error::InvalidArgument(format!("order {n} outside 1..={horizon}")));
    }
    let mut worst = 0.0f64;
    let mut worst_at = vec![];
    let mut worst_cfg = vec![];
    subsets_increasing(horizon + 1, n, 1, &mut |s| {
        let mut vars = vec![0];
        vars.extend_from_slice(s);
        let joint = p.marginal(&vars);
        let singles: Vec<Marginal> = vars.iter().map(|&v| p.marginal(&[v])).collect();
        let pairs: Vec<Marginal> = vars.windows(2).map(|w| p.marginal(w)).collect();
        for x in joint.configs() {
            let p0 = singles[0].get(&x[..1]);
            if p0 <= EVENT_EPS {
                continue;
            }
            let lhs = joint.get(&x) / p0;
            let mut rhs = 1.0;
            for j in 0..n {
                let pj = singles[j].get(&x[j..j + 1]);
                rhs *= if pj <= EVENT_EPS { 0.0 } else { pairs[j].get(&x[j..j + 2]) / pj };
            }
            let r = (lhs - rhs).abs();
            if r > worst {
                worst = r;
                worst_at = vars.clone();
                worst_cfg = x.clone();
            }
        }
    });
    let mut rep = CriterionReport::new(&name, tol, format!("t0 fixed; all increasing {n}-tuples of {horizon} later times"))
        .decide(worst);
    rep.set("max_residual", worst);
    if !worst_at.is_empty() {
        rep.set("worst_times", worst_at.iter().map(|&i| p.times[i]).collect::<Vec<f64>>());
        rep.set(
            "worst_values",
            worst_at.iter().zip(&worst_cfg).map(|(&i, &x)| p.labels[i][x]).collect::<Vec<f64>>(),
        );
    }
    Ok(rep)
}

/// `P(x_3 | x_1) = Σ_{x_2} P(x_3 | x_2) P(x_2 | x_1)` for `t_1 < t_2 < t_3`, `t_1` possibly `t_0`.
pub fn check_cke(p: &FiniteProcess, tol: f64) -> CriterionReport {
    let n = p.cards.len();
    let mut worst = 0.0f64;
    let mut worst_at = vec![];
    let singles: Vec<Marginal> = (0..n).map(|i| p.marginal(&[i])).collect();
    let cond = |a: usize, b: usize| -> DMatrix<f64> {
        // column b-state, row a-state: P(x_a | x_b) for b < a
        let m = p.marginal(&[b, a]);
        DMatrix::from_fn(p.cards[a], p.cards[b], |xa, xb| {
            let pb = singles[b].probs[xb];
            if pb <= EVENT_EPS {
                0.0
            } else {
                m.get(&[xb, xa]) / pb
            }
        })
    };
    subsets_increasing(n, 3, 0, &mut |s| {
        let (i, j, k) = (s[0], s[1], s[2]);
        let direct = cond(k, i);
        let composed = cond(k, j) * cond(j, i);
        for xi in 0..p.cards[i] {
            if singles[i].probs[xi] <= EVENT_EPS {
                continue;
            }
            for xk in 0..p.cards[k] {
                let r = (direct[(xk, xi)] - composed[(xk, xi)]).abs();
                if r > worst {
                    worst = r;
                    worst_at = vec![p.times[i], p.times[j], p.times[k]];
                }
            }
        }
    });
    let mut rep = CriterionReport::new("cke", tol, format!("all triples of {n} times"))
        .note("checked for the table's own initial distribution")
        .decide(worst);
    rep.set("max_residual", worst);
    if !worst_at.is_empty() {
        rep.set("worst_times", worst_at);
    }
    rep
}

/// Column-stochastic matrix: `S[(to, from)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix {
    pub mat: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::Dimension("stochastic matrix must be square".into()));
        }
        let v = stochastic_violation(&mat);
        if v > NORM_TOL {
            return Err(Error::InvalidArgument(format!("not column-stochastic (violation {v:.3e})")));
        }
        Ok(StochasticMatrix { mat })
    }
    pub fn identity(d: usize) -> Self {
        StochasticMatrix { mat: DMatrix::identity(d, d) }
    }
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (&self.mat * nalgebra::DVector::from_column_slice(p)).as_slice().to_vec()
    }
}

/// Largest negative entry or column-sum defect.
pub fn stochastic_violation(m: &DMatrix<f64>) -> f64 {
    let neg = m.iter().fold(0.0f64, |a, &v| a.max(-v));
    let sums = (0..m.ncols()).map(|j| (m.column(j).sum() - 1.0).abs()).fold(0.0, f64::max);
    neg.max(sums)
}

/// Transition matrices `T(t_k, t_0)` at every time of a process.
#[derive(Clone, Debug)]
pub struct TransitionFamily {
    pub times: Vec<f64>,
    pub mats: Vec<StochasticMatrix>,
}

impl TransitionFamily {
    pub fn from_process(p: &FiniteProcess) -> Result<Self> {
        let q = p.initial_distribution();
        if q.iter().any(|&v| v <= EVENT_EPS) {
            return Err(Error::InvalidArgument("transition matrices need q(x0) > 0 for every x0".into()));
        }
        let mats = (0..p.cards.len())
            .map(|k| {
                if k == 0 {
                    return StochasticMatrix::identity(p.cards[0]);
                }
                let m = p.marginal(&[0, k]);
                StochasticMatrix { mat: DMatrix::from_fn(p.cards[k], p.cards[0], |a, b| m.get(&[b, a]) / q[b]) }
            })
            .collect();
        Ok(TransitionFamily { times: p.times.clone(), mats })
    }

    /// Semigroup family `S^k` at `t_0 + k dt`.
    pub fn powers(s: &StochasticMatrix, n: usize, dt: f64) -> Self {
        let mut mats = vec![StochasticMatrix::identity(s.dim())];
        for k in 0..n {
            mats.push(StochasticMatrix { mat: &s.mat * &mats[k].mat });
        }
        TransitionFamily { times: (0..=n).map(|k| k as f64 * dt).collect(), mats }
    }
}

fn real_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, bool, f64) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let cut = 1e-12 * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            sinv[(k, k)] = 1.0 / s;
        }
    }
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    (vt.transpose() * sinv * u.transpose(), smin > cut && cond < 1e10, cond)
}

/// Classical divisibility over all time pairs `t_1 < t_2`.
///
/// A singular `T(t_1)` is decided when possible: no linear `S` reproduces
/// `T(t_2)` (fail), or the pseudo-inverse candidate does and is stochastic
/// (pass with that witness). Otherwise the pair is inconclusive.
pub fn check_cdiv(f: &TransitionFamily, tol: f64) -> CriterionReport {
    let mut rep = CriterionReport::new("cd", tol, format!("all pairs of times {}", fmt_times(&f.times)));
    let mut worst = 0.0f64;
    let mut worst_at = vec![];
    let mut undecided = vec![];
    let mut singular_pairs = 0usize;
    for i in 0..f.mats.len() {
        for j in (i + 1)..f.mats.len() {
            let (t1, t2) = (&f.mats[i].mat, &f.mats[j].mat);
            let (pinv, invertible, _) = real_pinv(t1);
            let s = t2 * &pinv;
            let recon = (&s * t1 - t2).amax();
            let sv = stochastic_violation(&s);
            let v = if invertible {
                sv
            } else {
                singular_pairs += 1;
                if recon > tol {
                    recon
                } else if sv <= tol {
                    0.0
                } else {
                    undecided.push(format!("{}..{}", f.times[i], f.times[j]));
                    0.0
                }
            };
            if v > worst {
                worst = v;
                worst_at = vec![f.times[i], f.times[j]];
            }
        }
    }
    rep.set("singular_pairs", singular_pairs as f64);
    if !worst_at.is_empty() {
        rep.set("worst_pair", worst_at);
    }
    if singular_pairs > 0 {
        rep = rep.note("singular earlier transition matrices decided through the pseudo-inverse candidate");
    }
    if worst <= tol && !undecided.is_empty() {
        rep.set("violation", worst);
        return rep.inconclusive(format!("singular T(t1) without a stochastic candidate on {}", undecided.join(", ")));
    }
    rep.decide(worst)
}

/// `S_{r+s} = S_r S_s` for every pair whose sum is on the grid.
pub fn check_stochastic_semigroup(f: &TransitionFamily, tol: f64) -> CriterionReport {
    let t0 = f.times[0];
    let rel: Vec<f64> = f.times.iter().map(|t| t - t0).collect();
    let find = |x: f64| rel.iter().position(|&r| (r - x).abs() <= 1e-9 * (1.0 + x.abs()));
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut worst_at = vec![];
    for i in 1..rel.len() {
        for j in i..rel.len() {
            if let Some(k) = find(rel[i] + rel[j]) {
                count += 1;
                let r = (&f.mats[k].mat - &f.mats[i].mat * &f.mats[j].mat).amax();
                if r > worst {
                    worst = r;
                    worst_at = vec![rel[i], rel[j]];
                }
            }
        }
    }
    let mut rep = CriterionReport::new("semigroup", tol, format!("{count} (r, s) pairs with r + s on the grid"));
    if count == 0 {
        return rep.inconclusive("no pair of displacements sums to a grid time");
    }
    if !worst_at.is_empty() {
        rep.set("worst_pair", worst_at);
    }
    rep.decide(worst)
}

/// Seeded random distributions plus point masses.
pub fn default_distribution_pairs(d: usize, random_pairs: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let v: Vec<f64> = (0..d).map(|_| -(rng.random::<f64>().max(1e-300)).ln()).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let mut out: Vec<(Vec<f64>, Vec<f64>)> = (0..random_pairs).map(|_| (draw(), draw())).collect();
    let delta = |k: usize| (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    out.push((delta(0), delta(d - 1)));
    out
}

/// `Σ |w P(t) - (1 - w) P'(t)|` must not increase along the family.
pub fn check_classical_disting(f: &TransitionFamily, pairs: &[(Vec<f64>, Vec<f64>)], w_grid: &[f64], tol: f64) -> CriterionReport {
    let mut worst = 0.0f64;
    let mut worst_at = vec![];
    for (a, b) in pairs {
        let pa: Vec<Vec<f64>> = f.mats.iter().map(|m| m.apply(a)).collect();
        let pb: Vec<Vec<f64>> = f.mats.iter().map(|m| m.apply(b)).collect();
        for &w in w_grid {
            let norms: Vec<f64> =
                pa.iter().zip(&pb).map(|(x, y)| x.iter().zip(y).map(|(u, v)| (w * u - (1.0 - w) * v).abs()).sum()).collect();
            for k in 0..norms.len() - 1 {
                let inc = norms[k + 1] - norms[k];
                if inc > worst {
                    worst = inc;
                    worst_at = vec![w, f.times[k], f.times[k + 1]];
                }
            }
        }
    }
    let mut rep = CriterionReport::new(
        "distinguishability",
        tol,
        format!("times {}; {} distribution pairs; w grid {}", fmt_times(&f.times), pairs.len(), fmt_times(w_grid)),
    )
    .decide(worst);
    rep.set("max_increase", worst);
    if !worst_at.is_empty() {
        rep.set("worst_w_and_interval", worst_at);
    }
    rep
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Blocks of `m` binary variables with
/// `p(x) = 2^{-m} C(m,n)^{-1} Σ_{|J| = n} (1 + α_J Π_{j∈J} x_j)`,
/// independent of each other and of `x_0 ~ q`. `alphas` holds one value
/// (shared) or one per `n`-subset in lexicographic order.
pub fn blockwise_counterexample(m: usize, n: usize, alphas: &[f64], n_blocks: usize, q: &[f64]) -> Result<FiniteProcess> {
    if !(m >= n && n >= 2) {
        return Err(Error::InvalidArgument(format!("need M >= N >= 2, got M = {m}, N = {n}")));
    }
    let n_sub = binomial(m, n);
    let alphas: Vec<f64> = match alphas.len() {
        1 => vec![alphas[0]; n_sub],
        k if k == n_sub => alphas.to_vec(),
        k => return Err(Error::Dimension(format!("{k} coefficients for {n_sub} subsets"))),
    };
    if alphas.iter().any(|a| !(a.abs() > 0.0 && a.abs() <= 1.0)) {
        return Err(Error::InvalidArgument("coefficients must satisfy 0 < |α| <= 1".into()));
    }
    if n_blocks == 0 || q.is_empty() {
        return Err(Error::InvalidArgument("need at least one block and an initial distribution".into()));
    }
    let qs: f64 = q.iter().sum();
    if (qs - 1.0).abs() > NORM_TOL || q.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("q must be a distribution".into()));
    }
    let mut subsets = Vec::with_capacity(n_sub);
    subsets_increasing(m, n, 0, &mut |s| subsets.push(s.to_vec()));
    let block: Vec<f64> = (0..1usize << m)
        .map(|bits| {
            // bit j (most significant first) set means x_j = +1
            let x: Vec<f64> = (0..m).map(|j| if bits >> (m - 1 - j) & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let s: f64 = subsets.iter().zip(&alphas).map(|(js, a)| 1.0 + a * js.iter().map(|&j| x[j]).product::<f64>()).sum();
            s / (n_sub as f64 * (1u64 << m) as f64)
        })
        .collect();
    let vars = m * n_blocks;
    let mut cards = vec![q.len()];
    cards.extend(std::iter::repeat(2).take(vars));
    let total = q.len().checked_mul(1usize << vars).filter(|&t| t <= MAX_TABLE_ENTRIES).ok_or_else(|| {
        Error::Unsupported("block process table too large".into())
    })?;
    let table = (0..total)
        .map(|k| {
            let x0 = k >> vars;
            let mut p = q[x0];
            for b in 0..n_blocks {
                let bits = (k >> ((n_blocks - 1 - b) * m)) & ((1 << m) - 1);
                p *= block[bits];
            }
            p
        })
        .collect();
    let mut labels = vec![(0..q.len()).map(|v| v as f64).collect::<Vec<f64>>()];
    if q.len() == 2 {
        labels[0] = vec![-1.0, 1.0];
    }
    labels.extend(std::iter::repeat(vec![-1.0, 1.0]).take(vars));
    FiniteProcess::new((0..=vars).map(|t| t as f64).collect(), cards, labels, table)
}

pub const CLASSICAL_PRESETS: &[&str] = &["block-3-3", "block-4-2", "block-4-3", "block-5-4", "markov", "iid"];

pub fn classical_preset(name: &str) -> Result<FiniteProcess> {
    let q = [0.5, 0.5];
    match name {
        "block-3-3" => blockwise_counterexample(3, 3, &[1.0], 2, &q),
        "block-4-2" => blockwise_counterexample(4, 2, &[1.0], 2, &q),
        "block-4-3" => blockwise_counterexample(4, 3, &[1.0], 2, &q),
        "block-5-4" => blockwise_counterexample(5, 4, &[1.0], 2, &q),
        "markov" => {
            let s = StochasticMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]))?;
            FiniteProcess::markov_chain(&[0.3, 0.7], &vec![s; 6], (0..=6).map(|k| k as f64).collect())
        }
        "iid" => FiniteProcess::iid(&[0.4, 0.6], &[0.25, 0.75], 6),
        other => Err(Error::InvalidArgument(format!(
            "unknown classical preset '{other}' (known: {})",
            CLASSICAL_PRESETS.join(", ")
        ))),
    }
}

/// Implication edges of the classical hierarchy, stronger first.
pub fn classical_implications(horizon: usize) -> Vec<(String, String)> {
    let mut e = vec![("cm".to_string(), "crf_2".to_string())];
    for n in 2..horizon {
        e.push((format!("crf_{}", n + 1), format!("crf_{n}")));
    }
    e.push(("crf_2".into(), "cke".into()));
    e.push(("cke".into(), "cd".into()));
    e.push(("semigroup".into(), "cd".into()));
    e.push(("cd".into(), "distinguishability".into()));
    e.push(("distinguishability".into(), "cd".into()));
    e
}

pub fn classical_hierarchy(name: &str, p: &FiniteProcess, tol: f64) -> Result<HierarchyReport> {
    let mut reports = vec![check_cm(p, tol)];
    for n in 2..=p.horizon() {
        reports.push(check_crf(p, n, tol)?);
    }
    reports.push(check_cke(p, tol));
    let fam = TransitionFamily::from_process(p)?;
    reports.push(check_cdiv(&fam, tol));
    reports.push(check_stochastic_semigroup(&fam, tol));
    let pairs = default_distribution_pairs(p.cards[0], 25, 11);
    reports.push(check_classical_disting(&fam, &pairs, &DEFAULT_W_GRID, tol));
    let verdict = |n: &str| reports.iter().find(|r| r.criterion == n).map(|r| r.verdict);
    let implication_violations = classical_implications(p.horizon())
        .into_iter()
        .filter(|(a, b)| verdict(a) == Some(Verdict::Pass) && verdict(b) == Some(Verdict::Fail))
        .map(|(a, b)| format!("{a} passes but {b} fails"))
        .collect();
    Ok(HierarchyReport { model: name.to_string(), reports, implication_violations })
}

// ---------------------------------------------------------------------------
// Monte-Carlo SDE sampling

pub type VecField = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
pub type NoiseField = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;
pub type RateFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// `dx = A dt + B dW + Σ_j c_j dN_j` with `E[dN_j] = λ_j dt`.
#[derive(Clone)]
pub struct SdeSpec {
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: VecField,
    pub diffusion: NoiseField,
    pub jumps: Vec<(RateFn, JumpFn)>,
}

impl std::fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeSpec").field("dim", &self.dim).field("jumps", &self.jumps.len()).finish()
    }
}

impl SdeSpec {
    /// `dx = -k x dt + σ dW`.
    pub fn ornstein_uhlenbeck(k: f64, sigma: f64) -> Self {
        SdeSpec {
            dim: 1,
            noise_dim: 1,
            drift: Arc::new(move |x, _| vec![-k * x[0]]),
            diffusion: Arc::new(move |_, _| DMatrix::from_element(1, 1, sigma)),
            jumps: vec![],
        }
    }

    /// Counting process with constant rate and unit jumps.
    pub fn poisson(rate: f64) -> Self {
        SdeSpec {
            dim: 1,
            noise_dim: 0,
            drift: Arc::new(|_, _| vec![0.0]),
            diffusion: Arc::new(|_, _| DMatrix::zeros(1, 0)),
            jumps: vec![(Arc::new(move |_, _| rate), Arc::new(|_| vec![1.0]))],
        }
    }

    /// Deterministic ODE `dx = A dt`.
    pub fn deterministic(dim: usize, drift: VecField) -> Self {
        SdeSpec { dim, noise_dim: 0, drift, diffusion: Arc::new(move |_, _| DMatrix::zeros(dim, 0)), jumps: vec![] }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Moments {
    pub time: f64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub variance: Vec<f64>,
    pub variance_se: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct McsmResult {
    pub times: Vec<f64>,
    /// `paths[k][i]` is the state of path `k` at `times[i]`.
    pub paths: Vec<Vec<Vec<f64>>>,
    pub moments: Vec<Moments>,
    pub seed: u64,
}

impl McsmResult {
    /// Time, path index, then one column per component.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.paths.first().and_then(|p| p.first()).map(|x| x.len()).unwrap_or(0);
        let mut header = vec!["time".to_string(), "path".to_string()];
        header.extend((0..d).map(|i| format!("x{i}")));
        w.write_record(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (k, path) in self.paths.iter().enumerate() {
            for (t, x) in self.times.iter().zip(path) {
                let mut row = vec![fmt_f64(*t), k.to_string()];
                row.extend(x.iter().map(|v| fmt_f64(*v)));
                w.write_record(&row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }
}

/// Euler–Maruyama for drift and diffusion, Bernoulli thinning for jumps.
pub fn mcsm(spec: &SdeSpec, x0: &[f64], grid: &[f64], step: f64, m: usize, seed: u64) -> Result<McsmResult> {
    if x0.len() != spec.dim {
        return Err(Error::Dimension("initial state dimension".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble size must be positive".into()));
    }
    if grid.is_empty() || !(step > 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("grid must be non-empty and increasing, step positive".into()));
    }
    let marks: Vec<usize> = grid
        .iter()
        .map(|&t| {
            let n = (t - grid[0]) / step;
            if (n - n.round()).abs() > 1e-6 {
                Err(Error::InvalidArgument(format!("grid time {t} is not a multiple of the step {step}")))
            } else {
                Ok(n.round() as usize)
            }
        })
        .collect::<Result<_>>()?;
    let n_steps = *marks.last().expect("non-empty");
    let t0 = grid[0];
    let paths: Vec<Vec<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|k| -> Result<Vec<Vec<f64>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut x = x0.to_vec();
            let mut out = Vec::with_capacity(grid.len());
            let mut next = 0;
            while next < marks.len() && marks[next] == 0 {
                out.push(x.clone());
                next += 1;
            }
            let sq = step.sqrt();
            for s in 0..n_steps {
                let t = t0 + s as f64 * step;
                let a = (spec.drift)(&x, t);
                let b = (spec.diffusion)(&x, t);
                let dw: Vec<f64> = (0..spec.noise_dim).map(|_| sq * rng.sample::<f64, _>(StandardNormal)).collect();
                let mut nx: Vec<f64> = (0..spec.dim)
                    .map(|i| x[i] + a[i] * step + (0..spec.noise_dim).map(|j| b[(i, j)] * dw[j]).sum::<f64>())
                    .collect();
                let rates: Vec<f64> = spec.jumps.iter().map(|(r, _)| r(&x, t)).collect();
                if let Some((j, r)) = rates.iter().enumerate().find(|(_, r)| !(**r >= 0.0)) {
                    return Err(Error::NegativeRate { channel: j, rate: *r, time: t });
                }
                let total: f64 = rates.iter().sum::<f64>() * step;
                if total >= 0.1 {
                    return Err(Error::StepTooLarge(format!(
                        "total jump probability {total:.3} at t = {t} exceeds 0.1; reduce the step"
                    )));
                }
                for ((_, c), r) in spec.jumps.iter().zip(&rates) {
                    if rng.random::<f64>() < r * step {
                        let dx = c(&x);
                        for i in 0..spec.dim {
                            nx[i] += dx[i];
                        }
                    }
                }
                x = nx;
                while next < marks.len() && marks[next] == s + 1 {
                    out.push(x.clone());
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let moments = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut mo = Moments { time: t, mean: vec![], mean_se: vec![], variance: vec![], variance_se: vec![] };
            for c in 0..spec.dim {
                let xs: Vec<f64> = paths.iter().map(|p| p[i][c]).collect();
                let (mean, se, var, var_se) = sample_moments(&xs);
                mo.mean.push(mean);
                mo.mean_se.push(se);
                mo.variance.push(var);
                mo.variance_se.push(var_se);
            }
            mo
        })
        .collect();
    Ok(McsmResult { times: grid.to_vec(), paths, moments, seed })
}

/// Mean, its standard error, unbiased variance and the large-sample
/// standard error of the variance; errors are NaN below two samples.
pub fn sample_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, f64::NAN, f64::NAN, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
    let var_se = ((m4 - var * var * (m - 3.0) / (m - 1.0)) / m).max(0.0).sqrt();
    (mean, (var / m).sqrt(), var, var_se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn block_marginals() {
        let p = blockwise_counterexample(3, 3, &[1.0], 2, &[0.5, 0.5]).unwrap();
        for v in 1..=6 {
            let m = p.marginal(&[v]);
            assert_abs_diff_eq!(m.probs[0], 0.5, epsilon = 1e-15);
        }
        let m = p.marginal(&[1, 3]);
        for x in &m.probs {
            assert_abs_diff_eq!(*x, 0.25, epsilon = 1e-15);
        }
        // x1 x2 x3 = +1 has weight 1/4, -1 has weight 0
        let t = p.marginal(&[1, 2, 3]);
        assert_abs_diff_eq!(t.get(&[1, 1, 1]), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(t.get(&[0, 1, 1]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn conditional_half_and_q_independence() {
        let p = blockwise_counterexample(3, 3, &[1.0], 2, &[0.5, 0.5]).unwrap();
        let c = conditional(&p, &[4], &[2]).unwrap();
        for g in 0..2 {
            for t in 0..2 {
                assert_abs_diff_eq!(c.get(&[g], &[t]).unwrap(), 0.5, epsilon = 1e-15);
            }
        }
        let p2 = p.with_initial_distribution(&[0.9, 0.1]).unwrap();
        let c2 = conditional(&p2, &[4], &[2]).unwrap();
        assert_abs_diff_eq!(c2.get(&[0], &[1]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_probability_condition_is_flagged() {
        let s = StochasticMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0])).unwrap();
        let p = FiniteProcess::markov_chain(&[1.0, 0.0], &[s.clone(), s], vec![0.0, 1.0, 2.0]).unwrap();
        let c = conditional(&p, &[2], &[1]).unwrap();
        assert_eq!(c.undefined_events(), 1);
        assert_eq!(c.get(&[0], &[0]), Some(1.0));
    }

    #[test]
    fn markov_chain_passes_everything() {
        let p = classical_preset("markov").unwrap();
        let h = classical_hierarchy("markov", &p, 1e-12).unwrap();
        for r in &h.reports {
            assert_eq!(r.verdict, Verdict::Pass, "{}: {:?}", r.criterion, r.violation());
        }
    }

    #[test]
    fn iid_is_markov() {
        let p = classical_preset("iid").unwrap();
        assert_eq!(check_cm(&p, 1e-12).verdict, Verdict::Pass);
    }

    #[test]
    fn semigroup_fails_for_inhomogeneous_chain() {
        let a = StochasticMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8])).unwrap();
        let b = StochasticMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        let p = FiniteProcess::markov_chain(&[0.5, 0.5], &[a, b], vec![0.0, 1.0, 2.0]).unwrap();
        let f = TransitionFamily::from_process(&p).unwrap();
        assert_eq!(check_stochastic_semigroup(&f, 1e-12).verdict, Verdict::Fail);
        assert_eq!(check_cdiv(&f, 1e-12).verdict, Verdict::Pass);
    }

    #[test]
    fn non_divisible_family_fails_both_ways() {
        // T(1) contracts, T(2) restores: no stochastic S maps T(1) to T(2)
        let t1 = StochasticMatrix::new(DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75])).unwrap();
        let f = TransitionFamily { times: vec![0.0, 1.0, 2.0], mats: vec![StochasticMatrix::identity(2), t1, StochasticMatrix::identity(2)] };
        let pairs = default_distribution_pairs(2, 5, 3);
        assert_eq!(check_cdiv(&f, 1e-12).verdict, Verdict::Fail);
        assert_eq!(check_classical_disting(&f, &pairs, &DEFAULT_W_GRID, 1e-12).verdict, Verdict::Fail);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(blockwise_counterexample(3, 3, &[0.0], 1, &[1.0]).is_err());
        assert!(blockwise_counterexample(3, 3, &[1.5], 1, &[1.0]).is_err());
        assert!(blockwise_counterexample(2, 3, &[1.0], 1, &[1.0]).is_err());
    }

    #[test]
    fn deterministic_sde_is_euler_path() {
        let spec = SdeSpec::deterministic(1, Arc::new(|x, _| vec![-x[0]]));
        let r = mcsm(&spec, &[1.0], &[0.0, 1.0], 1e-3, 3, 5).unwrap();
        let euler = (1.0f64 - 1e-3).powi(1000);
        for p in &r.paths {
            assert_abs_diff_eq!(p[1][0], euler, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.moments[1].variance[0], 0.0, epsilon = 1e-20);
    }

    #[test]
    fn sde_step_guard() {
        let err = mcsm(&SdeSpec::poisson(200.0), &[0.0], &[0.0, 1.0], 1e-3, 2, 1).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge(_)));
    }
}
