//! Superoperators in the column-stacking convention `vec(A X B) = (B^T ⊗ A) vec(X)`.
//!
//! `vec(X)[i + j*d] = X[i, j]`. The Choi matrix is
//! `J = Σ_ij E(|i><j|) ⊗ |i><j|`, output factor first, so
//! `J[a*d + i, b*d + j] = S[a + b*d, i + j*d]`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantum_core::{
    eigh, max_abs, spectral_norm, CMat, CVec, DensityOperator, C64, I, ONE,
};

/// Singular values below `PINV_RCOND * sigma_max` are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperator {
    mat: CMat,
    d: usize,
}

pub fn vec_op(x: &CMat) -> CVec {
    CVec::from_column_slice(x.as_slice())
}

pub fn unvec(v: &CVec, d: usize) -> CMat {
    CMat::from_column_slice(d, d, v.as_slice())
}

impl SuperOperator {
    pub fn new(mat: CMat) -> Result<Self> {
        let n = mat.nrows();
        let d = (n as f64).sqrt().round() as usize;
        if mat.ncols() != n || d * d != n {
            return Err(Error::Dimension(format!(
                "superoperator must be d^2 x d^2, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("superoperator entries".into()));
        }
        Ok(SuperOperator { mat, d })
    }

    pub fn identity(d: usize) -> Self {
        SuperOperator { mat: CMat::identity(d * d, d * d), d }
    }

    pub fn zeros(d: usize) -> Self {
        SuperOperator { mat: CMat::zeros(d * d, d * d), d }
    }

    /// `X -> A X B`.
    pub fn sandwich(a: &CMat, b: &CMat) -> Self {
        SuperOperator { mat: b.transpose().kronecker(a), d: a.nrows() }
    }

    pub fn left(a: &CMat) -> Self {
        let d = a.nrows();
        SuperOperator::sandwich(a, &CMat::identity(d, d))
    }

    pub fn right(b: &CMat) -> Self {
        let d = b.nrows();
        SuperOperator::sandwich(&CMat::identity(d, d), b)
    }

    /// `X -> U X U^dagger`.
    pub fn unitary(u: &CMat) -> Self {
        SuperOperator::sandwich(u, &u.adjoint())
    }

    pub fn from_kraus(ks: &[CMat]) -> Result<Self> {
        let d = ks.first().map(|k| k.nrows()).ok_or_else(|| {
            Error::InvalidArgument("at least one Kraus operator is required".into())
        })?;
        let mut m = CMat::zeros(d * d, d * d);
        for k in ks {
            if k.nrows() != d || k.ncols() != d {
                return Err(Error::Dimension("Kraus operators must share a square shape".into()));
            }
            m += k.conjugate().kronecker(k);
        }
        Ok(SuperOperator { mat: m, d })
    }

    /// `X -> -i[H, X]`.
    pub fn hamiltonian(h: &CMat) -> Self {
        let d = h.nrows();
        let id = CMat::identity(d, d);
        let m = (id.kronecker(h) - h.transpose().kronecker(&id)) * (-I);
        SuperOperator { mat: m, d }
    }

    /// `X -> Tr[X] I / d`.
    pub fn depolarizing(d: usize) -> Self {
        let vi = vec_op(&CMat::identity(d, d));
        SuperOperator { mat: &vi * vi.adjoint() / C64::from(d as f64), d }
    }

    /// Qubit Pauli channel scaling the Bloch components by `(lx, ly, lz)`.
    pub fn pauli_channel(lx: f64, ly: f64, lz: f64) -> Self {
        use crate::quantum_core::pauli;
        let p = [
            (1.0 + lx + ly + lz) / 4.0,
            (1.0 + lx - ly - lz) / 4.0,
            (1.0 - lx + ly - lz) / 4.0,
            (1.0 - lx - ly + lz) / 4.0,
        ];
        let mut m = CMat::zeros(4, 4);
        for (s, w) in pauli::all().iter().zip(p) {
            m += s.conjugate().kronecker(s) * C64::from(w);
        }
        SuperOperator { mat: m, d: 2 }
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_mat(self) -> CMat {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply(&self, x: &CMat) -> CMat {
        assert_eq!(x.nrows(), self.d, "operator dimension does not match superoperator");
        unvec(&(&self.mat * vec_op(x)), self.d)
    }

    /// Applies the map and keeps the subsystem metadata; validity is not checked.
    pub fn apply_state(&self, rho: &DensityOperator) -> Result<CMat> {
        if rho.dim() != self.d {
            return Err(Error::Dimension(format!(
                "state dimension {} vs map dimension {}",
                rho.dim(),
                self.d
            )));
        }
        Ok(self.apply(rho.mat()))
    }

    /// `self ∘ first`.
    pub fn compose(&self, first: &SuperOperator) -> SuperOperator {
        assert_eq!(self.d, first.d, "compose: dimension mismatch");
        SuperOperator { mat: &self.mat * &first.mat, d: self.d }
    }

    /// Hilbert-Schmidt adjoint (Heisenberg picture).
    pub fn adjoint(&self) -> SuperOperator {
        SuperOperator { mat: self.mat.adjoint(), d: self.d }
    }

    pub fn scale(&self, z: f64) -> SuperOperator {
        SuperOperator { mat: &self.mat * C64::from(z), d: self.d }
    }

    pub fn add(&self, other: &SuperOperator) -> SuperOperator {
        assert_eq!(self.d, other.d, "add: dimension mismatch");
        SuperOperator { mat: &self.mat + &other.mat, d: self.d }
    }

    pub fn sub(&self, other: &SuperOperator) -> SuperOperator {
        assert_eq!(self.d, other.d, "sub: dimension mismatch");
        SuperOperator { mat: &self.mat - &other.mat, d: self.d }
    }

    /// Largest singular value of the Liouville matrix.
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.mat)
    }

    pub fn distance(&self, other: &SuperOperator) -> f64 {
        self.sub(other).norm()
    }

    pub fn pinv(&self) -> SuperOperator {
        self.pinv_with_diagnostics().0
    }

    pub fn pinv_with_diagnostics(&self) -> (SuperOperator, PinvDiagnostics) {
        let svd = self.mat.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested V^T");
        let sv = &svd.singular_values;
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let cutoff = PINV_RCOND * smax;
        let n = sv.len();
        let mut inv = CMat::zeros(n, n);
        let mut rank = 0;
        let mut smin_kept = f64::INFINITY;
        let mut smin = f64::INFINITY;
        for k in 0..n {
            smin = smin.min(sv[k]);
            if sv[k] > cutoff && sv[k] > 0.0 {
                inv[(k, k)] = C64::from(1.0 / sv[k]);
                rank += 1;
                smin_kept = smin_kept.min(sv[k]);
            }
        }
        let p = vt.adjoint() * inv * u.adjoint();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        (
            SuperOperator { mat: p, d: self.d },
            PinvDiagnostics {
                sigma_max: smax,
                sigma_min: if n == 0 { 0.0 } else { smin },
                cutoff,
                rank,
                full_rank: rank == n,
                condition,
            },
        )
    }

    pub fn choi(&self) -> ChoiMatrix {
        ChoiMatrix { mat: reshuffle(&self.mat, self.d), d: self.d }
    }

    /// `vec(I)^dagger S`, i.e. the functional `X -> Tr[E(X)]` as a row.
    pub fn trace_functional(&self) -> CMat {
        let vi = vec_op(&CMat::identity(self.d, self.d));
        let row = vi.adjoint() * &self.mat;
        CMat::from_row_slice(1, row.ncols(), &row.iter().cloned().collect::<Vec<_>>())
    }

    pub fn is_cptp(&self, tol: f64) -> CptpDiagnostic {
        self.choi().cptp(tol)
    }

    /// Residual of `S(X^dagger) = S(X)^dagger` over the matrix units.
    pub fn hermiticity_preservation_residual(&self) -> f64 {
        let d = self.d;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut e = CMat::zeros(d, d);
                e[(i, j)] = ONE;
                let a = self.apply(&e.adjoint());
                let b = self.apply(&e).adjoint();
                worst = worst.max(max_abs(&(a - b)));
            }
        }
        worst
    }
}

/// The index permutation between Liouville and Choi layouts; an involution.
fn reshuffle(m: &CMat, d: usize) -> CMat {
    let n = d * d;
    let mut out = CMat::zeros(n, n);
    for a in 0..d {
        for b in 0..d {
            for i in 0..d {
                for j in 0..d {
                    out[(a * d + i, b * d + j)] = m[(a + b * d, i + j * d)];
                }
            }
        }
    }
    out
}

fn unreshuffle(j: &CMat, d: usize) -> CMat {
    let n = d * d;
    let mut out = CMat::zeros(n, n);
    for a in 0..d {
        for b in 0..d {
            for i in 0..d {
                for k in 0..d {
                    out[(a + b * d, i + k * d)] = j[(a * d + i, b * d + k)];
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PinvDiagnostics {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub cutoff: f64,
    pub rank: usize,
    pub full_rank: bool,
    pub condition: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix {
    mat: CMat,
    d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CptpDiagnostic {
    pub min_choi_eig: f64,
    pub tp_residual: f64,
    pub tol: f64,
    pub completely_positive: bool,
    pub trace_preserving: bool,
    pub verdict: bool,
}

impl ChoiMatrix {
    pub fn new(mat: CMat, d: usize) -> Result<Self> {
        if mat.nrows() != d * d || mat.ncols() != d * d {
            return Err(Error::Dimension(format!("Choi matrix must be {0}x{0}", d * d)));
        }
        Ok(ChoiMatrix { mat, d })
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn superop(&self) -> SuperOperator {
        SuperOperator { mat: unreshuffle(&self.mat, self.d), d: self.d }
    }

    /// Ascending eigenvalues of the Hermitian part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(&self.mat).0
    }

    /// Trace over the output (first) factor.
    pub fn trace_out(&self) -> CMat {
        let d = self.d;
        CMat::from_fn(d, d, |i, j| (0..d).map(|a| self.mat[(a * d + i, a * d + j)]).sum())
    }

    pub fn cptp(&self, tol: f64) -> CptpDiagnostic {
        let d = self.d;
        let min = self.eigenvalues().first().copied().unwrap_or(0.0);
        let herm = max_abs(&(&self.mat - self.mat.adjoint()));
        let tp = spectral_norm(&(self.trace_out() - CMat::identity(d, d)));
        let cp = min >= -tol * d as f64 && herm <= tol * d as f64;
        let tpb = tp <= tol;
        CptpDiagnostic {
            min_choi_eig: min,
            tp_residual: tp,
            tol,
            completely_positive: cp,
            trace_preserving: tpb,
            verdict: cp && tpb,
        }
    }

    /// Kraus operators from the eigen-decomposition; eigenvalues below
    /// `-tol` are rejected, tiny ones dropped.
    pub fn kraus(&self, tol: f64) -> Result<Vec<CMat>> {
        let d = self.d;
        let (vals, vecs) = eigh(&self.mat);
        let mut out = Vec::new();
        for (k, &v) in vals.iter().enumerate() {
            if v < -tol {
                return Err(Error::InvalidArgument(format!(
                    "map is not completely positive (Choi eigenvalue {v:.3e})"
                )));
            }
            if v <= tol {
                continue;
            }
            let s = v.sqrt();
            // column k holds Σ K[a,i] |a>|i>
            let kop = CMat::from_fn(d, d, |a, i| vecs[(a * d + i, k)] * s);
            out.push(kop);
        }
        Ok(out)
    }
}

/// `D[C] X = C X C^dagger - ½{C^dagger C, X}`.
pub fn dissipator(c: &CMat) -> SuperOperator {
    let d = c.nrows();
    let id = CMat::identity(d, d);
    let cdc = c.adjoint() * c;
    let m = c.conjugate().kronecker(c)
        - id.kronecker(&cdc) * C64::from(0.5)
        - cdc.transpose().kronecker(&id) * C64::from(0.5);
    SuperOperator { mat: m, d }
}

#[derive(Clone, Debug)]
pub struct IntermediateMap {
    pub map: SuperOperator,
    /// `‖Q E_early - E_late‖`.
    pub reconstruction_residual: f64,
    pub reconstructs: bool,
    pub early: PinvDiagnostics,
}

/// `Q = E_late E_early^+`, flagged when `Q E_early` misses `E_late`.
pub fn intermediate_map(late: &SuperOperator, early: &SuperOperator, tol: f64) -> IntermediateMap {
    let (p, diag) = early.pinv_with_diagnostics();
    let q = late.compose(&p);
    let res = q.compose(early).distance(late);
    IntermediateMap { map: q, reconstruction_residual: res, reconstructs: res <= tol, early: diag }
}

pub type TimeFn<T> = Arc<dyn Fn(f64) -> T + Send + Sync>;

/// A time-indexed generator of reduced dynamics.
pub trait Generator: Send + Sync {
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> Result<SuperOperator>;
}

#[derive(Clone)]
pub struct Channel {
    pub op: CMat,
    pub rate: TimeFn<f64>,
}

/// `L(t) = -i[H(t), ·] + Σ_k γ_k(t) D[C_k]`.
#[derive(Clone)]
pub struct LindbladSpec {
    dim: usize,
    hamiltonian: TimeFn<CMat>,
    channels: Vec<Channel>,
    herm_tol: f64,
}

impl std::fmt::Debug for LindbladSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LindbladSpec")
            .field("dim", &self.dim)
            .field("channels", &self.channels.len())
            .finish()
    }
}

impl LindbladSpec {
    pub fn new(dim: usize) -> Self {
        LindbladSpec {
            dim,
            hamiltonian: Arc::new(move |_| CMat::zeros(dim, dim)),
            channels: Vec::new(),
            herm_tol: 1e-10,
        }
    }

    pub fn with_hamiltonian(self, h: CMat) -> Self {
        self.with_time_hamiltonian(move |_| h.clone())
    }

    pub fn with_time_hamiltonian(mut self, h: impl Fn(f64) -> CMat + Send + Sync + 'static) -> Self {
        self.hamiltonian = Arc::new(h);
        self
    }

    pub fn with_channel(self, c: CMat, rate: f64) -> Self {
        self.with_time_channel(c, move |_| rate)
    }

    pub fn with_time_channel(mut self, c: CMat, rate: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.channels.push(Channel { op: c, rate: Arc::new(rate) });
        self
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn hamiltonian_at(&self, t: f64) -> CMat {
        (self.hamiltonian)(t)
    }

    pub fn rates_at(&self, t: f64) -> Vec<f64> {
        self.channels.iter().map(|c| (c.rate)(t)).collect()
    }

    /// Effective non-Hermitian Hamiltonian `H - (i/2) Σ γ_k C_k^dagger C_k`.
    pub fn effective_hamiltonian(&self, t: f64) -> CMat {
        let mut h = self.hamiltonian_at(t);
        for c in &self.channels {
            h -= c.op.adjoint() * &c.op * C64::new(0.0, 0.5 * (c.rate)(t));
        }
        h
    }
}

impl Generator for LindbladSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, t: f64) -> Result<SuperOperator> {
        let h = self.hamiltonian_at(t);
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(Error::Dimension("Hamiltonian shape".into()));
        }
        if max_abs(&(&h - h.adjoint())) > self.herm_tol {
            return Err(Error::InvalidArgument(format!("H({t}) is not Hermitian")));
        }
        let mut l = SuperOperator::hamiltonian(&h);
        for c in &self.channels {
            let g = (c.rate)(t);
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("rate at t = {t}")));
            }
            l = l.add(&dissipator(&c.op).scale(g));
        }
        if l.mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!("generator at t = {t}")));
        }
        Ok(l)
    }
}

/// Wraps a closure as a [`Generator`].
pub struct FnGenerator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64) -> SuperOperator + Send + Sync> FnGenerator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnGenerator { dim, f }
    }
}

impl<F: Fn(f64) -> SuperOperator + Send + Sync> Generator for FnGenerator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn at(&self, t: f64) -> Result<SuperOperator> {
        let l = (self.f)(t);
        if l.mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!("generator at t = {t}")));
        }
        Ok(l)
    }
}

pub const DEFAULT_STEP: f64 = 1e-3;

fn steps_for(dt: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step {step} must be positive")));
    }
    if dt < 0.0 {
        return Err(Error::InvalidArgument("time grid must be non-decreasing".into()));
    }
    let n = (dt / step).round();
    if (n * step - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "step {step} does not divide the interval {dt}"
        )));
    }
    Ok(n as usize)
}

/// RK4 propagator from `t0` to `t1`, `Φ' = L(t) Φ`.
pub fn propagate(gen: &dyn Generator, t0: f64, t1: f64, step: f64) -> Result<SuperOperator> {
    let d = gen.dim();
    let n = steps_for(t1 - t0, step)?;
    let mut phi = CMat::identity(d * d, d * d);
    let h = if n == 0 { 0.0 } else { (t1 - t0) / n as f64 };
    for k in 0..n {
        phi = rk4_step(gen, t0 + k as f64 * h, h, &phi)?;
    }
    Ok(SuperOperator { mat: phi, d })
}

fn rk4_step(gen: &dyn Generator, t: f64, h: f64, phi: &CMat) -> Result<CMat> {
    let l1 = gen.at(t)?;
    let lm = gen.at(t + 0.5 * h)?;
    let l4 = gen.at(t + h)?;
    let hc = C64::from(h);
    let k1 = &l1.mat * phi;
    let k2 = &lm.mat * (phi + &k1 * (hc * 0.5));
    let k3 = &lm.mat * (phi + &k2 * (hc * 0.5));
    let k4 = &l4.mat * (phi + &k3 * hc);
    let out = phi + (k1 + k2 * C64::from(2.0) + k3 * C64::from(2.0) + k4) * (hc / 6.0);
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(format!("propagator at t = {}", t + h)));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MeSolution {
    pub times: Vec<f64>,
    pub states: Vec<CMat>,
    /// Maps from `times[0]` to `times[k]`.
    pub maps: Vec<SuperOperator>,
    /// `|Tr ρ(t_k) - 1|`.
    pub trace_drift: Vec<f64>,
}

/// Integrates the master equation on `t_grid` with fixed-step RK4.
pub fn me_integrate(
    gen: &dyn Generator,
    rho0: &DensityOperator,
    t_grid: &[f64],
    step: f64,
) -> Result<MeSolution> {
    let d = gen.dim();
    if rho0.dim() != d {
        return Err(Error::Dimension(format!("state dim {} vs generator dim {d}", rho0.dim())));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    let mut maps = vec![SuperOperator::identity(d)];
    for w in t_grid.windows(2) {
        let seg = propagate(gen, w[0], w[1], step)?;
        let last = maps.last().expect("non-empty");
        maps.push(seg.compose(last));
    }
    let states: Vec<CMat> = maps.iter().map(|m| m.apply(rho0.mat())).collect();
    let trace_drift = states.iter().map(|s| (s.trace() - ONE).norm()).collect();
    Ok(MeSolution { times: t_grid.to_vec(), states, maps, trace_drift })
}

#[derive(Clone, Debug)]
pub struct GeneratorEstimate {
    pub generator: SuperOperator,
    pub condition: f64,
    /// Set when `E(t)` is too ill-conditioned for the estimate to be trusted.
    pub inconclusive: bool,
}

pub const DEFAULT_CONDITION_LIMIT: f64 = 1e8;

/// `L_t ≈ (E(t+dt) - E(t-dt)) / (2 dt) · E(t)^+`.
pub fn generator_from_maps(
    family: &dyn Fn(f64) -> Result<SuperOperator>,
    t: f64,
    dt: f64,
    condition_limit: f64,
) -> Result<GeneratorEstimate> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt {dt} must be positive")));
    }
    let plus = family(t + dt)?;
    let minus = family(t - dt)?;
    let mid = family(t)?;
    let (p, diag) = mid.pinv_with_diagnostics();
    let deriv = plus.sub(&minus).scale(0.5 / dt);
    Ok(GeneratorEstimate {
        generator: deriv.compose(&p),
        condition: diag.condition,
        inconclusive: !(diag.condition <= condition_limit),
    })
}

/// Orthonormal traceless basis of generalized Gell-Mann matrices,
/// `Tr[F_j^dagger F_k] = δ_jk`. Order: symmetric, antisymmetric (by pair), diagonal.
pub fn gell_mann_basis(d: usize) -> Vec<CMat> {
    let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let mut out = Vec::with_capacity(d * d - 1);
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = CMat::zeros(d, d);
            m[(j, k)] = s;
            m[(k, j)] = s;
            out.push(m);
            let mut m = CMat::zeros(d, d);
            m[(j, k)] = -I * s;
            m[(k, j)] = I * s;
            out.push(m);
        }
    }
    for l in 1..d {
        let norm = ((l * (l + 1)) as f64).sqrt();
        let mut m = CMat::zeros(d, d);
        for k in 0..l {
            m[(k, k)] = C64::from(1.0 / norm);
        }
        m[(l, l)] = C64::from(-(l as f64) / norm);
        out.push(m);
    }
    out
}

#[derive(Clone, Debug)]
pub struct CanonicalGenerator {
    /// Traceless Hamiltonian part.
    pub hamiltonian: CMat,
    /// Traceless orthonormal jump operators, matched to `rates`.
    pub operators: Vec<CMat>,
    /// Canonical rates, descending.
    pub rates: Vec<f64>,
    /// Distance between the input and the rebuilt generator.
    pub residual: f64,
    /// Largest anti-Hermitian entry of the coefficient matrix.
    pub hermiticity_residual: f64,
}

impl CanonicalGenerator {
    pub fn rebuild(&self) -> SuperOperator {
        let mut l = SuperOperator::hamiltonian(&self.hamiltonian);
        for (c, &g) in self.operators.iter().zip(&self.rates) {
            l = l.add(&dissipator(c).scale(g));
        }
        l
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Canonical form of a time-local generator.
pub fn canonical_decompose(l: &SuperOperator, tol: f64) -> Result<CanonicalGenerator> {
    let d = l.dim();
    let ta = spectral_norm(&l.trace_functional());
    if ta > tol {
        return Err(Error::InvalidArgument(format!(
            "generator is not trace-annihilating (residual {ta:.3e})"
        )));
    }
    let mut basis = vec![CMat::identity(d, d) / C64::from((d as f64).sqrt())];
    basis.extend(gell_mann_basis(d));
    let n = basis.len();
    // c_jk = <conj(F_k) ⊗ F_j, L>
    let mut c = CMat::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            let b = basis[k].conjugate().kronecker(&basis[j]);
            c[(j, k)] = b.iter().zip(l.mat().iter()).map(|(x, y)| x.conj() * y).sum();
        }
    }
    let a = c.view((1, 1), (n - 1, n - 1)).into_owned();
    let herm = max_abs(&(&a - a.adjoint()));
    let sqd = C64::from((d as f64).sqrt());
    let mut f = CMat::identity(d, d) * (c[(0, 0)] / C64::from(2.0 * d as f64));
    for j in 1..n {
        f += &basis[j] * (c[(j, 0)] / sqd);
    }
    let mut h = (f.adjoint() - &f) * C64::new(0.0, -0.5);
    h = (&h + h.adjoint()) * C64::from(0.5);
    let tr = h.trace() / C64::from(d as f64);
    for k in 0..d {
        h[(k, k)] -= tr;
    }
    let (vals, vecs) = eigh(&a);
    let mut rates = Vec::with_capacity(n - 1);
    let mut ops = Vec::with_capacity(n - 1);
    for m in (0..n - 1).rev() {
        let mut op = CMat::zeros(d, d);
        for j in 0..n - 1 {
            op += &basis[j + 1] * vecs[(j, m)];
        }
        rates.push(vals[m]);
        ops.push(op);
    }
    let mut out = CanonicalGenerator {
        hamiltonian: h,
        operators: ops,
        rates,
        residual: 0.0,
        hermiticity_residual: herm,
    };
    out.residual = out.rebuild().distance(l);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_core::{pauli, unitary_from_hamiltonian};
    use approx::assert_abs_diff_eq;

    fn rho_generic() -> CMat {
        DensityOperator::from_bloch([0.3, -0.4, 0.5]).unwrap().mat().clone()
    }

    #[test]
    fn sandwich_convention() {
        let a = CMat::from_fn(3, 3, |r, c| C64::new(r as f64 + 1.0, c as f64 * 0.5));
        let b = CMat::from_fn(3, 3, |r, c| C64::new((r * c) as f64, 1.0 - r as f64));
        let x = CMat::from_fn(3, 3, |r, c| C64::new(c as f64 - r as f64, 0.25 * r as f64));
        let s = SuperOperator::sandwich(&a, &b);
        assert_abs_diff_eq!(max_abs(&(s.apply(&x) - &a * &x * &b)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dissipator_examples() {
        assert_eq!(max_abs(dissipator(&CMat::zeros(2, 2)).mat()), 0.0);
        let rho = rho_generic();
        let out = dissipator(&pauli::z()).apply(&rho);
        assert_abs_diff_eq!(out[(0, 1)].re, -2.0 * rho[(0, 1)].re, epsilon = 1e-14);
        assert_abs_diff_eq!(out[(0, 1)].im, -2.0 * rho[(0, 1)].im, epsilon = 1e-14);
        assert_abs_diff_eq!(out[(0, 0)].norm(), 0.0, epsilon = 1e-14);
        let excited = DensityOperator::basis(&[2], 1).mat().clone();
        let out = dissipator(&pauli::sigma_minus()).apply(&excited);
        assert_abs_diff_eq!(out[(1, 1)].re, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[(0, 0)].re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn choi_examples() {
        let id = SuperOperator::identity(3).choi();
        let ev = id.eigenvalues();
        assert_abs_diff_eq!(ev[8], 3.0, epsilon = 1e-12);
        assert!(ev[..8].iter().all(|v| v.abs() < 1e-12));
        let dep = SuperOperator::depolarizing(2).choi();
        assert_abs_diff_eq!(max_abs(&(dep.mat() - CMat::identity(4, 4) * C64::from(0.5))), 0.0, epsilon = 1e-14);
        let u = unitary_from_hamiltonian(&pauli::y(), 0.4);
        let ev = SuperOperator::unitary(&u).choi().eigenvalues();
        assert_eq!(ev.iter().filter(|v| v.abs() > 1e-10).count(), 1);
    }

    #[test]
    fn transpose_map_is_not_cp() {
        let t = ChoiMatrix::new(
            {
                let mut m = CMat::zeros(4, 4);
                for i in 0..2 {
                    for j in 0..2 {
                        m[(i * 2 + j, j * 2 + i)] = ONE;
                    }
                }
                m
            },
            2,
        )
        .unwrap();
        let s = t.superop();
        let x = CMat::from_row_slice(2, 2, &[ONE, ONE * 2.0, ONE * 3.0, ONE * 4.0]);
        assert_abs_diff_eq!(max_abs(&(s.apply(&x) - x.transpose())), 0.0, epsilon = 1e-14);
        let diag = s.is_cptp(1e-9);
        assert!(!diag.verdict && diag.trace_preserving);
        assert_abs_diff_eq!(diag.min_choi_eig, -1.0, epsilon = 1e-12);
        let id = SuperOperator::identity(2).is_cptp(1e-9);
        assert!(id.verdict);
    }

    #[test]
    fn pinv_examples() {
        let u = unitary_from_hamiltonian(&(pauli::x() + pauli::z() * C64::from(0.3)), 1.1);
        let s = SuperOperator::unitary(&u);
        assert_abs_diff_eq!(s.pinv().distance(&s.adjoint()), 0.0, epsilon = 1e-12);
        // completely dephasing map is a projector
        let p = SuperOperator::from_kraus(&[
            DensityOperator::basis(&[2], 0).mat().clone(),
            DensityOperator::basis(&[2], 1).mat().clone(),
        ])
        .unwrap();
        let (pi, diag) = p.pinv_with_diagnostics();
        assert_eq!(diag.rank, 2);
        assert!(!diag.full_rank);
        assert_abs_diff_eq!(pi.distance(&p), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.compose(&SuperOperator::identity(2)).distance(&s), 0.0, epsilon = 0.0);
    }

    #[test]
    fn intermediate_map_of_semigroup() {
        let l = dissipator(&pauli::sigma_minus()).scale(2.0).add(&SuperOperator::hamiltonian(&pauli::x()));
        let e = |t: f64| SuperOperator::new(crate::quantum_core::expm(&(l.mat() * C64::from(t)))).unwrap();
        let q = intermediate_map(&e(1.7), &e(0.6), 1e-9);
        assert!(q.reconstructs);
        assert_abs_diff_eq!(q.map.distance(&e(1.1)), 0.0, epsilon = 1e-9);
        let same = intermediate_map(&e(0.6), &e(0.6), 1e-9);
        assert_abs_diff_eq!(same.map.distance(&SuperOperator::identity(2)), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn amplitude_damping_integration() {
        let spec = LindbladSpec::new(2).with_channel(pauli::sigma_minus(), 2.0);
        let rho0 = DensityOperator::from_bloch([0.6, 0.0, -0.8]).unwrap();
        let sol = me_integrate(&spec, &rho0, &[0.0, 0.5, 1.25], 1e-3).unwrap();
        for (t, s) in sol.times.iter().zip(&sol.states) {
            assert_abs_diff_eq!(s[(1, 1)].re, (-2.0 * t).exp() * rho0.mat()[(1, 1)].re, epsilon = 1e-10);
            assert_abs_diff_eq!(s[(1, 0)].re, (-t).exp() * rho0.mat()[(1, 0)].re, epsilon = 1e-10);
        }
        assert!(sol.trace_drift.iter().all(|&x| x < 1e-12));
        assert!(me_integrate(&spec, &rho0, &[0.0, 0.5], 0.3).is_err());
        assert!(me_integrate(&spec, &rho0, &[0.0, 0.5], 0.0).is_err());
    }

    #[test]
    fn zero_generator_keeps_state() {
        let spec = LindbladSpec::new(2);
        let rho0 = DensityOperator::from_bloch([0.1, 0.2, 0.3]).unwrap();
        let sol = me_integrate(&spec, &rho0, &[0.0, 1.0], 0.1).unwrap();
        assert_eq!(&sol.states[1], rho0.mat());
    }

    #[test]
    fn gell_mann_is_orthonormal_and_traceless() {
        for d in 2..5 {
            let b = gell_mann_basis(d);
            assert_eq!(b.len(), d * d - 1);
            for (j, x) in b.iter().enumerate() {
                assert!(x.trace().norm() < 1e-14);
                for (k, y) in b.iter().enumerate() {
                    let ip = (x.adjoint() * y).trace();
                    let expected = if j == k { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(ip.re, expected, epsilon = 1e-14);
                    assert_abs_diff_eq!(ip.im, 0.0, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn canonical_form_of_amplitude_damping() {
        let l = dissipator(&pauli::sigma_minus()).scale(2.0);
        let c = canonical_decompose(&l, 1e-10).unwrap();
        assert_abs_diff_eq!(c.rates[0], 2.0, epsilon = 1e-12);
        assert!(c.rates[1..].iter().all(|r| r.abs() < 1e-12));
        assert!(max_abs(&c.hamiltonian) < 1e-12);
        // sigma_minus up to a phase
        let overlap = (pauli::sigma_minus().adjoint() * &c.operators[0]).trace().norm();
        assert_abs_diff_eq!(overlap, 1.0, epsilon = 1e-12);
        assert!(c.residual < 1e-12);
    }

    #[test]
    fn canonical_form_of_hamiltonian_only() {
        let h = pauli::x() * C64::from(0.3) + pauli::z() * C64::from(1.2);
        let c = canonical_decompose(&SuperOperator::hamiltonian(&h), 1e-10).unwrap();
        assert!(c.rates.iter().all(|r| r.abs() < 1e-12));
        assert_abs_diff_eq!(max_abs(&(&c.hamiltonian - &h)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn canonical_rejects_trace_increasing() {
        let l = SuperOperator::identity(2);
        assert!(canonical_decompose(&l, 1e-10).is_err());
    }

    #[test]
    fn kraus_round_trip() {
        let spec = LindbladSpec::new(2)
            .with_channel(pauli::sigma_minus(), 0.7)
            .with_hamiltonian(pauli::y());
        let e = propagate(&spec, 0.0, 0.8, 1e-3).unwrap();
        let ks = e.choi().kraus(1e-10).unwrap();
        let rebuilt = SuperOperator::from_kraus(&ks).unwrap();
        assert_abs_diff_eq!(rebuilt.distance(&e), 0.0, epsilon = 1e-10);
    }
}
