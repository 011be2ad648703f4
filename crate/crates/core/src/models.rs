//! System-environment models and map-only families.
//!
//! Joint evolution goes through [`JointOp`], which has three backends:
//! dense matrices on `s ⊗ e`, block-diagonal operators over a classical
//! register (`Σ_j M_j ⊗ |j><j|`), and finite Fourier sums over a continuous
//! position variable with a Cauchy distribution. The last two never form the
//! full joint matrix, so large or continuous environments stay cheap.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantum_core::{
    eigh, entropy, hermitian_fn, kron, max_abs, negativity, negativity_from_schmidt, partial_trace,
    pauli, trace_norm_hermitian, unitary_generator, CMat, CVec, DensityOperator, IndexSplit,
    LocalAction, Operator, PureState, C64, ONE, ZERO,
};
use crate::superop::{
    dissipator, vec_op, Generator, LindbladSpec, SuperOperator,
};

/// Environment state accepted by [`JointModel::joint_init`].
#[derive(Clone, Debug, PartialEq)]
pub enum EnvState {
    /// Full density matrix on the environment factors.
    Dense(CMat),
    /// Classical register; `amplitudes` records a pure superposition whose
    /// populations are `weights`.
    Register { weights: Vec<f64>, amplitudes: Option<CVec> },
    /// Position distribution `(width/π) / ((x - center)² + width²)`.
    Cauchy { center: f64, width: f64 },
}

impl EnvState {
    pub fn describe(&self) -> String {
        match self {
            EnvState::Dense(m) => format!("dense({}x{})", m.nrows(), m.ncols()),
            EnvState::Register { weights, .. } => format!("register{:?}", weights),
            EnvState::Cauchy { center, width } => format!("cauchy(center={center}, width={width})"),
        }
    }
}

/// The env unitary `W` used to build generalized maps.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvFrame {
    Identity,
    Unitary(CMat),
    Unavailable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Capabilities {
    pub analytic_map: bool,
    pub supports_dd: bool,
    pub supports_unravelling: bool,
}

/// Measure-and-prepare channel on the whole environment.
#[derive(Clone, Debug)]
pub struct MeasurePrepare {
    pub povm: Vec<CMat>,
    pub states: Vec<CMat>,
}

impl MeasurePrepare {
    /// Checks positivity and completeness of the POVM and validity of the
    /// re-prepared states. Such a channel is entanglement breaking by form.
    pub fn validate(&self, de: usize, tol: f64) -> Result<()> {
        if self.povm.len() != self.states.len() || self.povm.is_empty() {
            return Err(Error::InvalidArgument("POVM and prepared states must pair up".into()));
        }
        let mut sum = CMat::zeros(de, de);
        for (f, s) in self.povm.iter().zip(&self.states) {
            if f.nrows() != de || s.nrows() != de {
                return Err(Error::Dimension(format!("channel element is not {de}x{de}")));
            }
            if eigh(f).0.first().copied().unwrap_or(0.0) < -tol || max_abs(&(f - f.adjoint())) > tol {
                return Err(Error::InvalidArgument("POVM element is not positive".into()));
            }
            DensityOperator::try_from_operator(Operator::from_matrix(s.clone())?)?;
            sum += f;
        }
        if max_abs(&(sum - CMat::identity(de, de))) > tol {
            return Err(Error::InvalidArgument("POVM elements do not sum to identity".into()));
        }
        Ok(())
    }

    /// Projective measurement in the computational basis, re-preparing the outcome.
    pub fn computational(de: usize) -> Self {
        let proj: Vec<CMat> = (0..de).map(|k| Operator::ket_bra(de, k, k).into_mat()).collect();
        MeasurePrepare { povm: proj.clone(), states: proj }
    }
}

/// A decorrelating operation applied to the environment at an intermediate time.
#[derive(Clone, Debug)]
pub enum BreakingChannel {
    MeasurePrepare(MeasurePrepare),
    /// Discard the environment and re-prepare this state.
    Replacement(EnvState),
}

/// An operator on `s ⊗ e` in one of the structured representations.
#[derive(Clone, Debug)]
pub enum JointOp {
    /// `dims[0]` is the system, the rest are environment factors.
    Dense { mat: CMat, dims: Vec<usize> },
    /// `Σ_j M_j ⊗ |j><j|`.
    Blocks(Vec<CMat>),
    /// `Σ_ν M_ν e^{-iνx}` weighted by a Cauchy position distribution.
    Fourier { center: f64, width: f64, comps: Vec<(f64, CMat)> },
}

impl JointOp {
    pub fn dim_s(&self) -> usize {
        match self {
            JointOp::Dense { dims, .. } => dims[0],
            JointOp::Blocks(b) => b[0].nrows(),
            JointOp::Fourier { comps, .. } => comps.first().map(|c| c.1.nrows()).unwrap_or(0),
        }
    }

    /// `(S ⊗ id_e)` applied to the joint operator.
    pub fn apply_system(&self, s: &SuperOperator) -> JointOp {
        match self {
            JointOp::Dense { mat, dims } => JointOp::Dense {
                mat: apply_local_superop(mat, dims, &[0], s.mat()),
                dims: dims.clone(),
            },
            JointOp::Blocks(b) => JointOp::Blocks(b.iter().map(|m| s.apply(m)).collect()),
            JointOp::Fourier { center, width, comps } => JointOp::Fourier {
                center: *center,
                width: *width,
                comps: comps.iter().map(|(nu, m)| (*nu, s.apply(m))).collect(),
            },
        }
    }

    pub fn trace_env(&self) -> CMat {
        match self {
            JointOp::Dense { mat, dims } => {
                let ds = dims[0];
                let de = mat.nrows() / ds;
                CMat::from_fn(ds, ds, |a, b| (0..de).map(|e| mat[(a * de + e, b * de + e)]).sum())
            }
            JointOp::Blocks(b) => {
                let mut acc = CMat::zeros(b[0].nrows(), b[0].ncols());
                for m in b {
                    acc += m;
                }
                acc
            }
            JointOp::Fourier { center, width, comps } => {
                let d = self.dim_s();
                let mut acc = CMat::zeros(d, d);
                for (nu, m) in comps {
                    acc += m * cauchy_characteristic(*center, *width, *nu);
                }
                acc
            }
        }
    }

    pub fn trace(&self) -> C64 {
        self.trace_env().trace()
    }

    /// `(id_s ⊗ B)` for a measure-and-prepare channel on the environment.
    pub fn measure_prepare(&self, mp: &MeasurePrepare) -> Result<JointOp> {
        match self {
            JointOp::Dense { mat, dims } => {
                let ds = dims[0];
                let de = mat.nrows() / ds;
                let mut out = CMat::zeros(ds * de, ds * de);
                for (f, sigma) in mp.povm.iter().zip(&mp.states) {
                    // R = Tr_e[(I ⊗ F) op]
                    let r = CMat::from_fn(ds, ds, |a, b| {
                        let mut s = ZERO;
                        for e in 0..de {
                            for e2 in 0..de {
                                let fv = f[(e2, e)];
                                if fv != ZERO {
                                    s += fv * mat[(a * de + e, b * de + e2)];
                                }
                            }
                        }
                        s
                    });
                    out += r.kronecker(sigma);
                }
                Ok(JointOp::Dense { mat: out, dims: dims.clone() })
            }
            JointOp::Blocks(b) => {
                let n = b.len();
                let d = b[0].nrows();
                let mut out = vec![CMat::zeros(d, d); n];
                for (f, sigma) in mp.povm.iter().zip(&mp.states) {
                    let mut r = CMat::zeros(d, d);
                    for (i, m) in b.iter().enumerate() {
                        if f[(i, i)] != ZERO {
                            r += m * f[(i, i)];
                        }
                    }
                    for (j, o) in out.iter_mut().enumerate() {
                        if sigma[(j, j)] != ZERO {
                            *o += &r * sigma[(j, j)];
                        }
                    }
                }
                Ok(JointOp::Blocks(out))
            }
            JointOp::Fourier { .. } => Err(Error::Unsupported(
                "measure-and-prepare channels on a continuous environment".into(),
            )),
        }
    }
}

/// `χ(ν) = E[e^{-iνx}]` for a Cauchy variable.
pub fn cauchy_characteristic(center: f64, width: f64, nu: f64) -> C64 {
    C64::from_polar((-width * nu.abs()).exp(), -nu * center)
}

/// Applies a superoperator on the `targets` factors of a dense operator.
pub fn apply_local_superop(mat: &CMat, dims: &[usize], targets: &[usize], s: &CMat) -> CMat {
    let split = IndexSplit::new(dims, targets).expect("valid targets");
    let dt = split.sel.len();
    let mut out = CMat::zeros(mat.nrows(), mat.ncols());
    let mut block = CVec::zeros(dt * dt);
    for &r in &split.rest {
        for &c in &split.rest {
            for (j, &oj) in split.sel.iter().enumerate() {
                for (i, &oi) in split.sel.iter().enumerate() {
                    block[i + j * dt] = mat[(oi + r, oj + c)];
                }
            }
            let res = s * &block;
            for (j, &oj) in split.sel.iter().enumerate() {
                for (i, &oi) in split.sel.iter().enumerate() {
                    out[(oi + r, oj + c)] = res[i + j * dt];
                }
            }
        }
    }
    out
}

/// Witnesses of the joint-state structure used by the factorization check.
#[derive(Clone, Debug)]
pub struct FaWitness {
    pub negativity: f64,
    pub mutual_information: f64,
    pub env_marginal: EnvMarginal,
}

/// Environment marginal in a form that supports pairwise trace distances.
#[derive(Clone, Debug)]
pub enum EnvMarginal {
    Dense(CMat),
    /// `A A^dagger` with `A` tall and thin.
    Factor(CMat),
    Unavailable,
}

/// `½ Tr|a - b|`, or `None` if either marginal is unavailable.
pub fn env_marginal_distance(a: &EnvMarginal, b: &EnvMarginal) -> Option<f64> {
    match (a, b) {
        (EnvMarginal::Dense(x), EnvMarginal::Dense(y)) => Some(0.5 * trace_norm_hermitian(&(x - y))),
        (EnvMarginal::Factor(x), EnvMarginal::Factor(y)) => {
            // nonzero spectrum of X X† - Y Y† equals that of G^½ η G^½
            let k1 = x.ncols();
            let k2 = y.ncols();
            let mut z = CMat::zeros(x.nrows(), k1 + k2);
            z.view_mut((0, 0), (x.nrows(), k1)).copy_from(x);
            z.view_mut((0, k1), (y.nrows(), k2)).copy_from(y);
            let g = z.adjoint() * &z;
            let half = hermitian_fn(&g, |v| C64::from(v.max(0.0).sqrt()));
            let mut eta = CMat::identity(k1 + k2, k1 + k2);
            for k in k1..k1 + k2 {
                eta[(k, k)] = -ONE;
            }
            Some(0.5 * trace_norm_hermitian(&(&half * eta * &half)))
        }
        _ => None,
    }
}

/// A system coupled to an environment, with joint unitary dynamics.
pub trait JointModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim_s(&self) -> usize;
    /// `None` for a continuous environment.
    fn env_dim(&self) -> Option<usize>;
    fn initial_time(&self) -> f64;
    /// Last time at which the model is defined.
    fn final_time(&self) -> Option<f64> {
        None
    }
    fn env_state(&self) -> EnvState;
    fn capabilities(&self) -> Capabilities;
    fn env_frame(&self, _t0: f64, _t: f64) -> EnvFrame {
        EnvFrame::Identity
    }
    /// `X ⊗ σ_e`.
    fn joint_init(&self, x: &CMat, env: &EnvState) -> Result<JointOp>;
    /// `U(t1 → t2) op U(t1 → t2)^dagger`.
    fn evolve(&self, op: &JointOp, t1: f64, t2: f64) -> Result<JointOp>;
    /// Dense joint unitary; errors for structured environments that are too large.
    fn propagator(&self, t1: f64, t2: f64) -> Result<Operator>;
    /// Env coupling operator active at time `t` (Schrödinger picture).
    fn env_operator_at(&self, a: &CMat, _t: f64) -> Result<CMat> {
        Ok(a.clone())
    }
    /// Joint-state witnesses at `t` for the pure system input `psi`.
    fn fa_witness(&self, psi: &PureState, t: f64) -> Result<FaWitness>;
    /// A preset entanglement-breaking channel for the NQIB check.
    fn breaking_channel(&self) -> Option<BreakingChannel> {
        None
    }
    /// Env replacement candidates tried first by the NIB search.
    fn replacement_seeds(&self) -> Vec<EnvState> {
        vec![self.env_state()]
    }
    fn as_collision(&self) -> Option<&CollisionModel> {
        None
    }
    fn as_register(&self) -> Option<&RegisterModel> {
        None
    }
}

fn check_interval(t1: f64, t2: f64, start: f64, end: Option<f64>) -> Result<()> {
    if !(t1.is_finite() && t2.is_finite()) {
        return Err(Error::NonFinite("time".into()));
    }
    if t2 < t1 {
        return Err(Error::InvalidArgument(format!("times must be ordered, got {t1} > {t2}")));
    }
    let end_v = end.unwrap_or(f64::INFINITY);
    for t in [t1, t2] {
        if t < start - 1e-12 || t > end_v + 1e-12 {
            return Err(Error::TimeOutOfRange { time: t, start, end: end_v });
        }
    }
    Ok(())
}

/// The environment state after the frame unitary, `W ρ_e(t0) W^dagger`.
pub fn generalized_env_state(model: &dyn JointModel, t1: f64) -> Option<EnvState> {
    match model.env_frame(model.initial_time(), t1) {
        EnvFrame::Identity => Some(model.env_state()),
        EnvFrame::Unitary(w) => match model.env_state() {
            EnvState::Dense(r) => Some(EnvState::Dense(&w * r * w.adjoint())),
            _ => None,
        },
        EnvFrame::Unavailable => None,
    }
}

/// Map `X -> Tr_e[U(t1→t2)(X ⊗ σ_e)U^dagger]`.
pub fn replacement_map(model: &dyn JointModel, t1: f64, t2: f64, env: &EnvState) -> Result<SuperOperator> {
    let d = model.dim_s();
    let mut m = CMat::zeros(d * d, d * d);
    for j in 0..d {
        for i in 0..d {
            let e = Operator::ket_bra(d, i, j).into_mat();
            let op = model.joint_init(&e, env)?;
            let out = model.evolve(&op, t1, t2)?.trace_env();
            m.set_column(i + j * d, &vec_op(&out));
        }
    }
    SuperOperator::new(m)
}

/// `E(t0 → t)` from the initial environment state.
pub fn dynamical_map(model: &dyn JointModel, t0: f64, t: f64) -> Result<SuperOperator> {
    replacement_map(model, t0, t, &model.env_state())
}

/// `Ẽ(t1 → t2)`, built from the frame-evolved environment state.
pub fn generalized_map(model: &dyn JointModel, t1: f64, t2: f64) -> Result<SuperOperator> {
    let env = generalized_env_state(model, t1)
        .ok_or_else(|| Error::Unsupported(format!("{} exposes no environment frame", model.name())))?;
    replacement_map(model, t1, t2, &env)
}

/// Hahn map: free evolution interleaved with instantaneous system pulses,
/// environment traced out at `t_final`.
pub fn dd_apply(model: &dyn JointModel, pulses: &[(f64, CMat)], t_final: f64) -> Result<SuperOperator> {
    let d = model.dim_s();
    let t0 = model.initial_time();
    let mut last = t0;
    for (t, p) in pulses {
        if *t < last || *t > t_final {
            return Err(Error::InvalidArgument(format!("pulse time {t} out of order")));
        }
        if p.nrows() != d || !Operator::from_matrix(p.clone())?.is_unitary(1e-10) {
            return Err(Error::InvalidArgument("pulse is not a system unitary".into()));
        }
        last = *t;
    }
    let pulse_maps: Vec<SuperOperator> = pulses.iter().map(|(_, p)| SuperOperator::unitary(p)).collect();
    let env = model.env_state();
    let mut m = CMat::zeros(d * d, d * d);
    for j in 0..d {
        for i in 0..d {
            let e = Operator::ket_bra(d, i, j).into_mat();
            let mut op = model.joint_init(&e, &env)?;
            let mut now = t0;
            for ((t, _), pm) in pulses.iter().zip(&pulse_maps) {
                op = model.evolve(&op, now, *t)?;
                op = op.apply_system(pm);
                now = *t;
            }
            op = model.evolve(&op, now, t_final)?;
            m.set_column(i + j * d, &vec_op(&op.trace_env()));
        }
    }
    SuperOperator::new(m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BathCorrelation {
    pub symmetric: C64,
    pub antisymmetric: C64,
    /// Set when the model has no environment frame and the lab frame was used.
    pub lab_frame: bool,
}

/// `G^±(t, t') = Tr[ρ_e ½(A(t)B(t') ± B(t')A(t))]` in the model's frame.
pub fn bath_correlation(model: &dyn JointModel, a: &CMat, b: &CMat, t: f64, t_prime: f64) -> Result<BathCorrelation> {
    let rho = match model.env_state() {
        EnvState::Dense(r) => r,
        EnvState::Register { weights, .. } => {
            CMat::from_diagonal(&CVec::from_iterator(weights.len(), weights.iter().map(|&w| C64::from(w))))
        }
        EnvState::Cauchy { .. } => {
            return Err(Error::Unsupported("bath correlations of a continuous environment".into()))
        }
    };
    let t0 = model.initial_time();
    let frame = |op: CMat, s: f64| -> (CMat, bool) {
        match model.env_frame(t0, s) {
            EnvFrame::Identity => (op, false),
            EnvFrame::Unitary(w) => (w.adjoint() * op * w, false),
            EnvFrame::Unavailable => (op, true),
        }
    };
    let (at, f1) = frame(model.env_operator_at(a, t)?, t);
    let (bt, f2) = frame(model.env_operator_at(b, t_prime)?, t_prime);
    if at.nrows() != rho.nrows() || bt.nrows() != rho.nrows() {
        return Err(Error::Dimension("env operator does not match environment".into()));
    }
    let ab = (&rho * &at * &bt).trace();
    let ba = (&rho * &bt * &at).trace();
    Ok(BathCorrelation {
        symmetric: (ab + ba) * 0.5,
        antisymmetric: (ab - ba) * 0.5,
        lab_frame: f1 || f2,
    })
}

fn dense_fa_witness(op: &JointOp) -> Result<FaWitness> {
    let JointOp::Dense { mat, dims } = op else {
        return Err(Error::Unsupported("dense witness on a structured operator".into()));
    };
    let ds = dims[0];
    let de = mat.nrows() / ds;
    let rho = DensityOperator::new(
        Operator::new(mat.clone(), vec![ds, de])?,
        &crate::quantum_core::Tolerances { herm: 1e-8, trace: 1e-8, psd: 1e-8 },
    )?;
    let neg = negativity(&rho, &[1])?;
    let sys = partial_trace(rho.as_operator(), &[0])?;
    let env = partial_trace(rho.as_operator(), &[1])?;
    let mi = (entropy(sys.mat()) + entropy(env.mat()) - entropy(rho.mat())).max(0.0);
    Ok(FaWitness { negativity: neg, mutual_information: mi, env_marginal: EnvMarginal::Dense(env.into_mat()) })
}

/// Shared logic for a single dense joint matrix.
fn dense_init(ds: usize, env_dims: &[usize], x: &CMat, env: &EnvState) -> Result<JointOp> {
    let de: usize = env_dims.iter().product();
    let sigma = match env {
        EnvState::Dense(s) => s.clone(),
        EnvState::Register { weights, .. } if weights.len() == de => {
            CMat::from_diagonal(&CVec::from_iterator(de, weights.iter().map(|&w| C64::from(w))))
        }
        _ => return Err(Error::InvalidArgument(format!("env state {} does not fit", env.describe()))),
    };
    if sigma.nrows() != de || x.nrows() != ds {
        return Err(Error::Dimension("joint initialization".into()));
    }
    let mut dims = vec![ds];
    dims.extend_from_slice(env_dims);
    Ok(JointOp::Dense { mat: x.kronecker(&sigma), dims })
}

// ---------------------------------------------------------------------------
// TAM

/// `θ(t) = arccos(e^{-t})`, the integrated coupling of the two-qubit model.
pub fn tam_theta(t: f64) -> f64 {
    (-t).exp().clamp(-1.0, 1.0).acos()
}

/// Coupling `g(t) = 1 / sqrt(e^{2t} - 1)`.
pub fn tam_coupling(t: f64) -> f64 {
    1.0 / (2.0 * t).exp_m1().sqrt()
}

/// Post-replacement decay coefficient as printed with the model's
/// post-replacement master equation, `(g g1 - g²) / (g g1 - 1)`.
pub fn tam_post_replacement_rate(t1: f64, t: f64) -> f64 {
    let g = tam_coupling(t);
    let g1 = tam_coupling(t1);
    (g * g1 - g * g) / (g * g1 - 1.0)
}

/// Decay coefficient of the post-replacement map obtained from its
/// closed form, `g (g1 - g) / (g g1 + 1) = g tan(θ - θ1)`.
pub fn tam_post_replacement_rate_closed_form(t1: f64, t: f64) -> f64 {
    let g = tam_coupling(t);
    let g1 = tam_coupling(t1);
    g * (g1 - g) / (g * g1 + 1.0)
}

/// Two qubits with `H(t) = g(t)(σ⁻⊗σ⁺ + σ⁺⊗σ⁻)`, environment in `|0>`.
#[derive(Clone, Debug)]
pub struct TamModel {
    h_vals: Vec<f64>,
    h_vecs: CMat,
}

impl Default for TamModel {
    fn default() -> Self {
        Self::new()
    }
}

impl TamModel {
    pub fn new() -> Self {
        let h = pauli::sigma_minus().kronecker(&pauli::sigma_plus())
            + pauli::sigma_plus().kronecker(&pauli::sigma_minus());
        let (h_vals, h_vecs) = eigh(&h);
        TamModel { h_vals, h_vecs }
    }

    pub fn coupling_operator() -> CMat {
        pauli::sigma_minus().kronecker(&pauli::sigma_plus()) + pauli::sigma_plus().kronecker(&pauli::sigma_minus())
    }

    fn unitary(&self, t1: f64, t2: f64) -> CMat {
        let dth = tam_theta(t2) - tam_theta(t1);
        let mut v = self.h_vecs.clone();
        for (k, &l) in self.h_vals.iter().enumerate() {
            let ph = C64::from_polar(1.0, -l * dth);
            for r in 0..4 {
                v[(r, k)] *= ph;
            }
        }
        v * self.h_vecs.adjoint()
    }

    /// The amplitude-damping master equation the reduced dynamics obeys.
    pub fn lindblad(&self) -> LindbladSpec {
        LindbladSpec::new(2).with_channel(pauli::sigma_minus(), 2.0)
    }
}

impl JointModel for TamModel {
    fn name(&self) -> &str {
        "tam"
    }
    fn dim_s(&self) -> usize {
        2
    }
    fn env_dim(&self) -> Option<usize> {
        Some(2)
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn env_state(&self) -> EnvState {
        EnvState::Dense(DensityOperator::basis(&[2], 0).mat().clone())
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { analytic_map: true, supports_dd: true, supports_unravelling: false }
    }
    fn joint_init(&self, x: &CMat, env: &EnvState) -> Result<JointOp> {
        dense_init(2, &[2], x, env)
    }
    fn evolve(&self, op: &JointOp, t1: f64, t2: f64) -> Result<JointOp> {
        check_interval(t1, t2, 0.0, None)?;
        let JointOp::Dense { mat, dims } = op else {
            return Err(Error::Unsupported("TAM evolves dense operators only".into()));
        };
        let u = self.unitary(t1, t2);
        Ok(JointOp::Dense { mat: &u * mat * u.adjoint(), dims: dims.clone() })
    }
    fn propagator(&self, t1: f64, t2: f64) -> Result<Operator> {
        check_interval(t1, t2, 0.0, None)?;
        Operator::new(self.unitary(t1, t2), vec![2, 2])
    }
    fn fa_witness(&self, psi: &PureState, t: f64) -> Result<FaWitness> {
        let op = self.joint_init(psi.to_density().mat(), &self.env_state())?;
        dense_fa_witness(&self.evolve(&op, 0.0, t)?)
    }
}

// ---------------------------------------------------------------------------
// Collision model

/// System qubit colliding once with each of `n` fresh ancillas.
#[derive(Clone, Debug)]
pub struct CollisionModel {
    pair_unitary: CMat,
    generator_vals: Vec<f64>,
    generator_vecs: CMat,
    ancilla_state: CMat,
    slot_times: Vec<f64>,
    ds: usize,
    da: usize,
}

impl CollisionModel {
    /// `slot_times` are the `n_slots + 1` slot boundaries.
    pub fn new(pair_unitary: CMat, ancilla_state: CMat, ds: usize, slot_times: Vec<f64>) -> Result<Self> {
        let da = ancilla_state.nrows();
        if pair_unitary.nrows() != ds * da {
            return Err(Error::Dimension("pair unitary must act on system ⊗ ancilla".into()));
        }
        if !Operator::from_matrix(pair_unitary.clone())?.is_unitary(1e-10) {
            return Err(Error::InvalidArgument("pair unitary is not unitary".into()));
        }
        DensityOperator::try_from_operator(Operator::from_matrix(ancilla_state.clone())?)?;
        if slot_times.len() < 2 || slot_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("slot times must be strictly increasing".into()));
        }
        let g = unitary_generator(&pair_unitary)?;
        let (generator_vals, generator_vecs) = eigh(&g);
        let n = slot_times.len() - 1;
        if da.pow(n as u32) * ds > 4096 {
            return Err(Error::InvalidArgument("joint space too large for dense simulation".into()));
        }
        Ok(CollisionModel { pair_unitary, generator_vals, generator_vecs, ancilla_state, slot_times, ds, da })
    }

    /// Partial swap `cos(φ) I - i sin(φ) SWAP` with `|0>` ancillas on unit slots.
    pub fn partial_swap(angle: f64, n_slots: usize) -> Result<Self> {
        let mut swap = CMat::zeros(4, 4);
        for a in 0..2 {
            for b in 0..2 {
                swap[(a * 2 + b, b * 2 + a)] = ONE;
            }
        }
        let u = CMat::identity(4, 4) * C64::from(angle.cos()) - swap * C64::new(0.0, angle.sin());
        let anc = DensityOperator::basis(&[2], 0).mat().clone();
        CollisionModel::new(u, anc, 2, (0..=n_slots).map(|k| k as f64).collect())
    }

    pub fn n_slots(&self) -> usize {
        self.slot_times.len() - 1
    }

    pub fn slot_times(&self) -> &[f64] {
        &self.slot_times
    }

    pub fn pair_unitary(&self) -> &CMat {
        &self.pair_unitary
    }

    pub fn ancilla_state(&self) -> &CMat {
        &self.ancilla_state
    }

    pub fn ancilla_dim(&self) -> usize {
        self.da
    }

    /// `U^f` on the principal branch.
    pub fn fractional_unitary(&self, f: f64) -> CMat {
        if f == 1.0 {
            return self.pair_unitary.clone();
        }
        let mut v = self.generator_vecs.clone();
        for (k, &l) in self.generator_vals.iter().enumerate() {
            let ph = C64::from_polar(1.0, -l * f);
            for r in 0..v.nrows() {
                v[(r, k)] *= ph;
            }
        }
        v * self.generator_vecs.adjoint()
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.ds];
        d.extend(std::iter::repeat(self.da).take(self.n_slots()));
        d
    }

    /// Slot pieces `(slot, fraction)` covered by `[t1, t2]`.
    pub fn segments(&self, t1: f64, t2: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for k in 0..self.n_slots() {
            let (a, b) = (self.slot_times[k], self.slot_times[k + 1]);
            let lo = t1.max(a);
            let hi = t2.min(b);
            if hi - lo > 1e-14 {
                out.push((k, (hi - lo) / (b - a)));
            }
        }
        out
    }

    /// Index of the slot active at `t` (the slot whose interval contains `t`,
    /// preferring the later slot at a boundary).
    pub fn active_slot(&self, t: f64) -> Option<usize> {
        let n = self.n_slots();
        if t < self.slot_times[0] || t > self.slot_times[n] {
            return None;
        }
        (0..n).rev().find(|&k| t >= self.slot_times[k])
    }
}

impl JointModel for CollisionModel {
    fn name(&self) -> &str {
        "collision"
    }
    fn dim_s(&self) -> usize {
        self.ds
    }
    fn env_dim(&self) -> Option<usize> {
        Some(self.da.pow(self.n_slots() as u32))
    }
    fn initial_time(&self) -> f64 {
        self.slot_times[0]
    }
    fn final_time(&self) -> Option<f64> {
        self.slot_times.last().copied()
    }
    fn env_state(&self) -> EnvState {
        let mut s = CMat::identity(1, 1);
        for _ in 0..self.n_slots() {
            s = s.kronecker(&self.ancilla_state);
        }
        EnvState::Dense(s)
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { analytic_map: false, supports_dd: true, supports_unravelling: true }
    }
    fn joint_init(&self, x: &CMat, env: &EnvState) -> Result<JointOp> {
        dense_init(self.ds, &self.dims()[1..], x, env)
    }
    fn evolve(&self, op: &JointOp, t1: f64, t2: f64) -> Result<JointOp> {
        check_interval(t1, t2, self.initial_time(), self.final_time())?;
        let JointOp::Dense { mat, dims } = op else {
            return Err(Error::Unsupported("collision model evolves dense operators only".into()));
        };
        let mut m = mat.clone();
        for (k, f) in self.segments(t1, t2) {
            let u = self.fractional_unitary(f);
            m = LocalAction::new(u, dims, &[0, k + 1])?.conjugate(&m);
        }
        Ok(JointOp::Dense { mat: m, dims: dims.clone() })
    }
    fn propagator(&self, t1: f64, t2: f64) -> Result<Operator> {
        check_interval(t1, t2, self.initial_time(), self.final_time())?;
        let dims = self.dims();
        let n: usize = dims.iter().product();
        let mut m = CMat::identity(n, n);
        for (k, f) in self.segments(t1, t2) {
            m = LocalAction::new(self.fractional_unitary(f), &dims, &[0, k + 1])?.left(&m);
        }
        Operator::new(m, dims)
    }
    fn env_operator_at(&self, a: &CMat, t: f64) -> Result<CMat> {
        if a.nrows() != self.da {
            return Err(Error::Dimension("env operator must act on one ancilla".into()));
        }
        let k = self.active_slot(t).ok_or(Error::TimeOutOfRange {
            time: t,
            start: self.slot_times[0],
            end: *self.slot_times.last().expect("non-empty"),
        })?;
        let mut out = CMat::identity(1, 1);
        for j in 0..self.n_slots() {
            out = if j == k { out.kronecker(a) } else { out.kronecker(&CMat::identity(self.da, self.da)) };
        }
        Ok(out)
    }
    fn fa_witness(&self, psi: &PureState, t: f64) -> Result<FaWitness> {
        let op = self.joint_init(psi.to_density().mat(), &self.env_state())?;
        dense_fa_witness(&self.evolve(&op, self.initial_time(), t)?)
    }
    fn breaking_channel(&self) -> Option<BreakingChannel> {
        Some(BreakingChannel::MeasurePrepare(MeasurePrepare::computational(self.env_dim()?)))
    }
    fn as_collision(&self) -> Option<&CollisionModel> {
        Some(self)
    }
}

// ---------------------------------------------------------------------------
// Register models

/// System Hamiltonian conditioned on a classical register:
/// `H = Σ_j H_j ⊗ |j><j|`.
#[derive(Clone, Debug)]
pub struct RegisterModel {
    name: String,
    ds: usize,
    eig: Vec<(Vec<f64>, CMat)>,
    hamiltonians: Vec<CMat>,
    weights: Vec<f64>,
    amplitudes: Option<CVec>,
    channel: Option<BreakingChannel>,
    caps: Capabilities,
    /// Mass of the underlying distribution not represented by the levels.
    pub quadrature_error: f64,
}

impl RegisterModel {
    pub fn new(name: &str, hamiltonians: Vec<CMat>, weights: Vec<f64>) -> Result<Self> {
        if hamiltonians.is_empty() || hamiltonians.len() != weights.len() {
            return Err(Error::InvalidArgument("one weight per register level is required".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument(format!("register weights must form a distribution (sum {total})")));
        }
        let ds = hamiltonians[0].nrows();
        for h in &hamiltonians {
            if h.nrows() != ds || max_abs(&(h - h.adjoint())) > 1e-10 {
                return Err(Error::InvalidArgument("level Hamiltonians must be Hermitian and equal-sized".into()));
            }
        }
        let eig = hamiltonians.iter().map(eigh).collect();
        Ok(RegisterModel {
            name: name.to_string(),
            ds,
            eig,
            hamiltonians,
            weights,
            amplitudes: None,
            channel: None,
            caps: Capabilities { analytic_map: false, supports_dd: true, supports_unravelling: true },
            quadrature_error: 0.0,
        })
    }

    pub fn with_amplitudes(mut self, amps: CVec) -> Result<Self> {
        if amps.len() != self.weights.len()
            || amps.iter().zip(&self.weights).any(|(a, w)| (a.norm_sqr() - w).abs() > 1e-12)
        {
            return Err(Error::InvalidArgument("amplitudes must square to the weights".into()));
        }
        self.amplitudes = Some(amps);
        Ok(self)
    }

    pub fn with_breaking_channel(mut self, ch: BreakingChannel) -> Self {
        self.channel = Some(ch);
        self
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.caps = caps;
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn hamiltonians(&self) -> &[CMat] {
        &self.hamiltonians
    }

    pub fn amplitudes(&self) -> Option<&CVec> {
        self.amplitudes.as_ref()
    }

    pub fn levels(&self) -> usize {
        self.weights.len()
    }

    /// `exp(-i H_j dt)`.
    pub fn level_unitary(&self, j: usize, dt: f64) -> CMat {
        let (vals, vecs) = &self.eig[j];
        let mut v = vecs.clone();
        for (k, &l) in vals.iter().enumerate() {
            let ph = C64::from_polar(1.0, -l * dt);
            for r in 0..v.nrows() {
                v[(r, k)] *= ph;
            }
        }
        v * vecs.adjoint()
    }

    /// Static dephasing: `H_j = κ_j σz` with register weights `p_j`.
    pub fn static_dephasing(kappas: &[f64], probs: &[f64]) -> Result<Self> {
        let hs = kappas.iter().map(|&k| pauli::z() * C64::from(k)).collect();
        let n = probs.len();
        let mp = MeasurePrepare::computational(n);
        Ok(RegisterModel::new("static-dephasing", hs, probs.to_vec())?
            .with_breaking_channel(BreakingChannel::MeasurePrepare(mp)))
    }

    /// `U(t) = I ⊗ |0><0| + e^{-iσz t/2} ⊗ |1><1|` with environment `I/2`.
    pub fn nqib_qubit() -> Result<Self> {
        let hs = vec![CMat::zeros(2, 2), pauli::z() * C64::from(0.5)];
        Ok(RegisterModel::new("nqib", hs, vec![0.5, 0.5])?
            .with_breaking_channel(BreakingChannel::MeasurePrepare(MeasurePrepare::computational(2))))
    }

    /// Position grid for `H = (g/2) σz ⊗ x` with the Lorentzian field state.
    pub fn afl_grid(gamma: f64, g: f64, points: usize, cutoff: f64, max_quadrature_error: f64) -> Result<Self> {
        if !(gamma > 0.0 && g > 0.0) {
            return Err(Error::InvalidArgument("AFL needs positive width and coupling".into()));
        }
        if points < 3 || points % 2 == 0 || !(cutoff > 0.0) {
            return Err(Error::InvalidArgument("AFL grid needs an odd point count and positive cutoff".into()));
        }
        let h = 2.0 * cutoff / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|k| -cutoff + k as f64 * h).collect();
        let dens: Vec<f64> = xs.iter().map(|x| gamma / PI / (x * x + gamma * gamma)).collect();
        let raw: f64 = dens.iter().sum::<f64>() * h;
        let weights: Vec<f64> = dens.iter().map(|p| p * h / raw).collect();
        let outside = 1.0 - 2.0 / PI * (cutoff / gamma).atan();
        let quad = outside.max((raw - 1.0).abs());
        if quad > max_quadrature_error {
            return Err(Error::InvalidArgument(format!(
                "AFL grid too coarse: quadrature error {quad:.3e} exceeds {max_quadrature_error:.1e}"
            )));
        }
        let amps = CVec::from_iterator(
            points,
            xs.iter().zip(&weights).map(|(&x, &w)| {
                let ph = C64::new(x, -gamma) / (x * x + gamma * gamma).sqrt();
                ph * w.sqrt()
            }),
        );
        let hs = xs.iter().map(|&x| pauli::z() * C64::from(0.5 * g * x)).collect();
        let mut m = RegisterModel::new("afl-grid", hs, weights)?.with_amplitudes(amps)?;
        m.quadrature_error = quad;
        m.caps = Capabilities { analytic_map: false, supports_dd: true, supports_unravelling: false };
        Ok(m)
    }
}

impl JointModel for RegisterModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim_s(&self) -> usize {
        self.ds
    }
    fn env_dim(&self) -> Option<usize> {
        Some(self.weights.len())
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn env_state(&self) -> EnvState {
        EnvState::Register { weights: self.weights.clone(), amplitudes: self.amplitudes.clone() }
    }
    fn capabilities(&self) -> Capabilities {
        self.caps
    }
    fn joint_init(&self, x: &CMat, env: &EnvState) -> Result<JointOp> {
        let n = self.weights.len();
        let w: Vec<f64> = match env {
            EnvState::Register { weights, .. } if weights.len() == n => weights.clone(),
            // only register populations affect block-diagonal dynamics
            EnvState::Dense(s) if s.nrows() == n => (0..n).map(|j| s[(j, j)].re).collect(),
            _ => return Err(Error::InvalidArgument(format!("env state {} does not fit", env.describe()))),
        };
        if x.nrows() != self.ds {
            return Err(Error::Dimension("joint initialization".into()));
        }
        Ok(JointOp::Blocks(w.iter().map(|&p| x * C64::from(p)).collect()))
    }
    fn evolve(&self, op: &JointOp, t1: f64, t2: f64) -> Result<JointOp> {
        check_interval(t1, t2, 0.0, None)?;
        let JointOp::Blocks(b) = op else {
            return Err(Error::Unsupported("register model evolves block operators only".into()));
        };
        let dt = t2 - t1;
        if dt == 0.0 {
            return Ok(op.clone());
        }
        Ok(JointOp::Blocks(
            b.iter()
                .enumerate()
                .map(|(j, m)| {
                    if m.iter().all(|z| *z == ZERO) {
                        return m.clone();
                    }
                    let u = self.level_unitary(j, dt);
                    &u * m * u.adjoint()
                })
                .collect(),
        ))
    }
    fn propagator(&self, t1: f64, t2: f64) -> Result<Operator> {
        check_interval(t1, t2, 0.0, None)?;
        let n = self.weights.len();
        let d = self.ds * n;
        if d > 256 {
            return Err(Error::Unsupported(format!("dense propagator of dimension {d}")));
        }
        let mut m = CMat::zeros(d, d);
        for j in 0..n {
            let u = self.level_unitary(j, t2 - t1);
            for a in 0..self.ds {
                for b in 0..self.ds {
                    m[(a * n + j, b * n + j)] = u[(a, b)];
                }
            }
        }
        Operator::new(m, vec![self.ds, n])
    }
    fn fa_witness(&self, psi: &PureState, t: f64) -> Result<FaWitness> {
        let n = self.weights.len();
        let kets: Vec<CVec> = (0..n).map(|j| self.level_unitary(j, t) * psi.amplitudes()).collect();
        let mut rho_s = CMat::zeros(self.ds, self.ds);
        for (k, w) in kets.iter().zip(&self.weights) {
            rho_s += k * k.adjoint() * C64::from(*w);
        }
        match &self.amplitudes {
            Some(a) => {
                // pure joint state Σ_j a_j U_j|ψ> ⊗ |j>
                let (p, _) = eigh(&rho_s);
                let s = entropy(&rho_s);
                let factor = CMat::from_fn(n, self.ds, |j, k| a[j] * kets[j][k]);
                Ok(FaWitness {
                    negativity: negativity_from_schmidt(&p),
                    mutual_information: 2.0 * s,
                    env_marginal: EnvMarginal::Factor(factor),
                })
            }
            None => {
                // classical-quantum state Σ_j p_j |ψ_j><ψ_j| ⊗ |j><j|
                let env = CMat::from_diagonal(&CVec::from_iterator(n, self.weights.iter().map(|&w| C64::from(w))));
                Ok(FaWitness { negativity: 0.0, mutual_information: entropy(&rho_s), env_marginal: EnvMarginal::Dense(env) })
            }
        }
    }
    fn breaking_channel(&self) -> Option<BreakingChannel> {
        self.channel.clone()
    }
    fn as_register(&self) -> Option<&RegisterModel> {
        Some(self)
    }
}

// ---------------------------------------------------------------------------
// AFL, analytic

/// `H = (g/2) Λ ⊗ x` for a diagonal system operator `Λ`, field in the
/// Lorentzian wave packet of width `gamma`; the position variable is kept
/// symbolic so environment traces use the exact characteristic function.
#[derive(Clone, Debug)]
pub struct AflModel {
    pub gamma: f64,
    pub g: f64,
    lambdas: Vec<f64>,
}

impl AflModel {
    pub fn new(gamma: f64, g: f64) -> Result<Self> {
        if !(gamma > 0.0 && g > 0.0) {
            return Err(Error::InvalidArgument("AFL needs positive width and coupling".into()));
        }
        Ok(AflModel { gamma, g, lambdas: vec![1.0, -1.0] })
    }

    /// Dephasing rate of the reduced dynamics, `gγ/2` on `D[σz]`.
    pub fn dephasing_rate(&self) -> f64 {
        self.g * self.gamma / 2.0
    }

    pub fn lindblad(&self) -> LindbladSpec {
        LindbladSpec::new(2).with_channel(pauli::z(), self.dephasing_rate())
    }

    fn phase_rate(&self, a: usize, b: usize) -> f64 {
        0.5 * self.g * (self.lambdas[a] - self.lambdas[b])
    }

    /// Characteristic function of the field position distribution.
    pub fn chi(&self, nu: f64) -> C64 {
        cauchy_characteristic(0.0, self.gamma, nu)
    }

    /// Correlator with the phase accumulated jointly before averaging:
    /// `χ[Σ_k ν_k]` for interval phases `ν_k = (g/2)(λ_a - λ_b) Δt_k`.
    pub fn correlation_exact(&self, phases: &[f64]) -> C64 {
        self.chi(phases.iter().sum())
    }

    /// Regression prediction: product of per-interval averages.
    pub fn correlation_regression(&self, phases: &[f64]) -> C64 {
        phases.iter().map(|&p| self.chi(p)).product()
    }

    /// Interval phase for the matrix element `|a><b|` over `dt`.
    pub fn interval_phase(&self, a: usize, b: usize, dt: f64) -> f64 {
        self.phase_rate(a, b) * dt
    }
}

fn merge_fourier(comps: Vec<(f64, CMat)>) -> Vec<(f64, CMat)> {
    let mut out: Vec<(f64, CMat)> = Vec::with_capacity(comps.len());
    for (nu, m) in comps {
        if m.iter().all(|z| *z == ZERO) {
            continue;
        }
        match out.iter_mut().find(|(n2, _)| (n2 - nu).abs() <= 1e-12 * nu.abs().max(1.0)) {
            Some((_, acc)) => *acc += m,
            None => out.push((nu, m)),
        }
    }
    out
}

impl JointModel for AflModel {
    fn name(&self) -> &str {
        "afl"
    }
    fn dim_s(&self) -> usize {
        self.lambdas.len()
    }
    fn env_dim(&self) -> Option<usize> {
        None
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn env_state(&self) -> EnvState {
        EnvState::Cauchy { center: 0.0, width: self.gamma }
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { analytic_map: true, supports_dd: true, supports_unravelling: false }
    }
    fn joint_init(&self, x: &CMat, env: &EnvState) -> Result<JointOp> {
        let EnvState::Cauchy { center, width } = env else {
            return Err(Error::InvalidArgument(format!("env state {} does not fit", env.describe())));
        };
        if !(*width > 0.0) {
            return Err(Error::InvalidArgument("Cauchy width must be positive".into()));
        }
        Ok(JointOp::Fourier { center: *center, width: *width, comps: vec![(0.0, x.clone())] })
    }
    fn evolve(&self, op: &JointOp, t1: f64, t2: f64) -> Result<JointOp> {
        check_interval(t1, t2, 0.0, None)?;
        let JointOp::Fourier { center, width, comps } = op else {
            return Err(Error::Unsupported("AFL evolves Fourier operators only".into()));
        };
        let d = self.dim_s();
        let dt = t2 - t1;
        let mut next = Vec::new();
        for (nu, m) in comps {
            for a in 0..d {
                for b in 0..d {
                    if m[(a, b)] == ZERO {
                        continue;
                    }
                    let mut e = CMat::zeros(d, d);
                    e[(a, b)] = m[(a, b)];
                    next.push((nu + self.interval_phase(a, b, dt), e));
                }
            }
        }
        Ok(JointOp::Fourier { center: *center, width: *width, comps: merge_fourier(next) })
    }
    fn propagator(&self, _t1: f64, _t2: f64) -> Result<Operator> {
        Err(Error::Unsupported("the AFL environment is continuous".into()))
    }
    fn fa_witness(&self, psi: &PureState, t: f64) -> Result<FaWitness> {
        // the joint state is pure, so the reduced spectrum fixes both witnesses
        let rho = psi.to_density();
        let out = dynamical_map(self, 0.0, t)?.apply(rho.mat());
        let (p, _) = eigh(&out);
        Ok(FaWitness {
            negativity: negativity_from_schmidt(&p),
            mutual_information: 2.0 * entropy(&out),
            env_marginal: EnvMarginal::Unavailable,
        })
    }
    fn replacement_seeds(&self) -> Vec<EnvState> {
        vec![self.env_state()]
    }
}

// ---------------------------------------------------------------------------
// Map families

/// A family of maps `E(t0 → t)`.
pub trait MapFamily: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn initial_time(&self) -> f64;
    fn map(&self, t: f64) -> Result<SuperOperator>;
    /// Time-local generator, when one is known in closed form.
    fn lindblad(&self) -> Option<LindbladSpec> {
        None
    }
}

/// Map family of a joint model obtained by tomography.
pub struct JointFamily<'a>(pub &'a dyn JointModel);

impl MapFamily for JointFamily<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn dim(&self) -> usize {
        self.0.dim_s()
    }
    fn initial_time(&self) -> f64 {
        self.0.initial_time()
    }
    fn map(&self, t: f64) -> Result<SuperOperator> {
        dynamical_map(self.0, self.0.initial_time(), t)
    }
}

/// Qubit master equation with rates `(1, 1, -tanh t)` on `σ_j/√2`.
#[derive(Clone, Debug)]
pub struct EternalModel {
    spec: LindbladSpec,
}

impl Default for EternalModel {
    fn default() -> Self {
        Self::new()
    }
}

impl EternalModel {
    pub fn new() -> Self {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let spec = LindbladSpec::new(2)
            .with_channel(pauli::x() * s, 1.0)
            .with_channel(pauli::y() * s, 1.0)
            .with_time_channel(pauli::z() * s, |t: f64| -t.tanh());
        EternalModel { spec }
    }

    /// Bloch contraction factors `(λx, λy, λz)` of `E(0 → t)`.
    pub fn lambdas(t: f64) -> (f64, f64, f64) {
        let l = (1.0 + (-2.0 * t).exp()) / 2.0;
        (l, l, (-2.0 * t).exp())
    }

    /// `E(0 → t)` integrated from the master equation.
    pub fn map_integrated(&self, t: f64, step: f64) -> Result<SuperOperator> {
        crate::superop::propagate(&self.spec, 0.0, t, step)
    }

    pub fn spec(&self) -> &LindbladSpec {
        &self.spec
    }
}

impl MapFamily for EternalModel {
    fn name(&self) -> &str {
        "eternal"
    }
    fn dim(&self) -> usize {
        2
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn map(&self, t: f64) -> Result<SuperOperator> {
        if t < 0.0 {
            return Err(Error::TimeOutOfRange { time: t, start: 0.0, end: f64::INFINITY });
        }
        let (lx, ly, lz) = EternalModel::lambdas(t);
        Ok(SuperOperator::pauli_channel(lx, ly, lz))
    }
    fn lindblad(&self) -> Option<LindbladSpec> {
        Some(self.spec.clone())
    }
}

/// Semigroup family `e^{L t}` of a constant Lindblad generator.
#[derive(Clone, Debug)]
pub struct SemigroupFamily {
    name: String,
    spec: LindbladSpec,
    generator: SuperOperator,
}

impl SemigroupFamily {
    pub fn new(name: &str, spec: LindbladSpec) -> Result<Self> {
        let generator = spec.at(0.0)?;
        Ok(SemigroupFamily { name: name.into(), spec, generator })
    }
}

impl MapFamily for SemigroupFamily {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.generator.dim()
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn map(&self, t: f64) -> Result<SuperOperator> {
        SuperOperator::new(crate::quantum_core::expm(&(self.generator.mat() * C64::from(t))))
    }
    fn lindblad(&self) -> Option<LindbladSpec> {
        Some(self.spec.clone())
    }
}

// ---------------------------------------------------------------------------
// Presets

pub enum Preset {
    Joint(Box<dyn JointModel>),
    Family(Box<dyn MapFamily>),
}

impl Preset {
    pub fn name(&self) -> &str {
        match self {
            Preset::Joint(m) => m.name(),
            Preset::Family(f) => f.name(),
        }
    }
}

pub const PRESET_NAMES: &[&str] = &["afl", "afl-grid", "tam", "nqib", "collision", "static-dephasing", "eternal"];

/// Default AFL grid: 4001 points over `|x| <= 200γ`.
pub const AFL_GRID_POINTS: usize = 4001;
pub const AFL_GRID_CUTOFF: f64 = 200.0;
pub const AFL_MAX_QUADRATURE_ERROR: f64 = 1e-2;

pub fn preset(name: &str) -> Result<Preset> {
    Ok(match name {
        "afl" => Preset::Joint(Box::new(AflModel::new(1.0, 2.0)?)),
        "afl-grid" => Preset::Joint(Box::new(RegisterModel::afl_grid(
            1.0,
            2.0,
            AFL_GRID_POINTS,
            AFL_GRID_CUTOFF,
            AFL_MAX_QUADRATURE_ERROR,
        )?)),
        "tam" => Preset::Joint(Box::new(TamModel::new())),
        "nqib" => Preset::Joint(Box::new(RegisterModel::nqib_qubit()?)),
        "collision" => Preset::Joint(Box::new(CollisionModel::partial_swap(PI / 4.0, 6)?)),
        "static-dephasing" => Preset::Joint(Box::new(RegisterModel::static_dephasing(&[1.0, -1.0], &[0.5, 0.5])?)),
        "eternal" => Preset::Family(Box::new(EternalModel::new())),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown model '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

/// `2 D[σ⁻]`, the amplitude-damping generator used by several examples.
pub fn amplitude_damping_generator() -> SuperOperator {
    dissipator(&pauli::sigma_minus()).scale(2.0)
}

/// Product `|ψ><ψ| ⊗ σ` as an operator with subsystem metadata.
pub fn product_state(psi: &PureState, env: &CMat) -> Result<Operator> {
    Ok(kron(psi.to_density().as_operator(), &Operator::from_matrix(env.clone())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superop::{canonical_decompose, generator_from_maps};
    use approx::assert_abs_diff_eq;

    fn plus() -> CMat {
        PureState::plus().to_density().mat().clone()
    }

    #[test]
    fn tam_theta_matches_quadrature() {
        // g(s) = 1/sqrt(e^{2s}-1); with s = u² the integrand 2u g(u²) is smooth at 0
        let integrand = |u: f64| {
            if u == 0.0 {
                2.0 / 2f64.sqrt()
            } else {
                2.0 * u / (2.0 * u * u).exp_m1().sqrt()
            }
        };
        for t in [0.1f64, 0.5, 1.0, 2.0, 3.0] {
            let b = t.sqrt();
            let n = 2000;
            let h = b / n as f64;
            let mut s = integrand(0.0) + integrand(b);
            for k in 1..n {
                s += integrand(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = s * h / 3.0;
            assert_abs_diff_eq!(quad, tam_theta(t), epsilon = 1e-8);
        }
    }

    #[test]
    fn tam_reduced_dynamics_is_amplitude_damping() {
        let m = TamModel::new();
        let rho = DensityOperator::from_bloch([0.6, 0.0, -0.8]).unwrap();
        for t in [0.0, 0.3, 1.0, 2.5] {
            let e = dynamical_map(&m, 0.0, t).unwrap();
            let out = e.apply(rho.mat());
            assert_abs_diff_eq!(out[(1, 1)].re, (-2.0 * t).exp() * rho.mat()[(1, 1)].re, epsilon = 1e-12);
            assert_abs_diff_eq!(out[(0, 1)].re, (-t).exp() * rho.mat()[(0, 1)].re, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(dynamical_map(&m, 0.0, 0.0).unwrap().distance(&SuperOperator::identity(2)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tam_generator_is_two_sigma_minus() {
        let m = TamModel::new();
        let fam = |t: f64| dynamical_map(&m, 0.0, t);
        for t in [0.5, 1.0, 2.0] {
            let est = generator_from_maps(&fam, t, 1e-4, 1e8).unwrap();
            let c = canonical_decompose(&est.generator, 1e-6).unwrap();
            assert_abs_diff_eq!(c.rates[0], 2.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn tam_post_replacement_values() {
        assert_abs_diff_eq!(tam_post_replacement_rate(1.0, 2.0), -0.0372, epsilon = 5e-4);
        assert!(tam_post_replacement_rate_closed_form(1.0, 2.0) > 0.0);
        assert_abs_diff_eq!(tam_post_replacement_rate(1.0, 1.0 + 1e-9), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(tam_post_replacement_rate_closed_form(1.0, 1.0 + 1e-9), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn tam_rejects_negative_times() {
        assert!(TamModel::new().propagator(-1.0, 0.0).is_err());
    }

    #[test]
    fn nqib_recurrence() {
        let m = RegisterModel::nqib_qubit().unwrap();
        let half = dynamical_map(&m, 0.0, PI).unwrap().apply(&plus());
        assert_abs_diff_eq!(max_abs(&(half - CMat::identity(2, 2) * C64::from(0.5))), 0.0, epsilon = 1e-12);
        let full = dynamical_map(&m, 0.0, 2.0 * PI).unwrap().apply(&plus());
        assert_abs_diff_eq!(max_abs(&(full - plus())), 0.0, epsilon = 1e-12);
        for k in 0..10 {
            let w = m.fa_witness(&PureState::plus(), k as f64 * 0.7).unwrap();
            assert_eq!(w.negativity, 0.0);
        }
    }

    #[test]
    fn register_dense_propagator_agrees_with_blocks() {
        let m = RegisterModel::static_dephasing(&[1.0, -0.4], &[0.3, 0.7]).unwrap();
        let u = m.propagator(0.2, 1.1).unwrap();
        let rho = DensityOperator::from_bloch([0.5, 0.5, 0.1]).unwrap();
        let env = CMat::from_diagonal(&CVec::from_vec(vec![C64::from(0.3), C64::from(0.7)]));
        let joint = rho.mat().kronecker(&env);
        let evolved = u.mat() * joint * u.mat().adjoint();
        let red = partial_trace(&Operator::new(evolved, vec![2, 2]).unwrap(), &[0]).unwrap();
        let via_blocks = replacement_map(&m, 0.2, 1.1, &m.env_state()).unwrap().apply(rho.mat());
        assert_abs_diff_eq!(max_abs(&(red.mat() - via_blocks)), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn spin_echo_restores_purity() {
        let m = RegisterModel::static_dephasing(&[1.0, -1.0], &[0.5, 0.5]).unwrap();
        let t = 1.3;
        let hahn = dd_apply(&m, &[(t / 2.0, pauli::x()), (t, pauli::x())], t).unwrap();
        let out = hahn.apply(&plus());
        assert_abs_diff_eq!(crate::quantum_core::purity(&out), 1.0, epsilon = 1e-12);
        let free = dynamical_map(&m, 0.0, t).unwrap().apply(&plus());
        assert!(crate::quantum_core::purity(&free) < 0.99);
        // single level is unitary
        let one = RegisterModel::static_dephasing(&[0.8], &[1.0]).unwrap();
        let out = dynamical_map(&one, 0.0, 2.0).unwrap().apply(&plus());
        assert_abs_diff_eq!(crate::quantum_core::purity(&out), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_pulse_list_is_the_free_map() {
        let m = TamModel::new();
        let a = dd_apply(&m, &[], 1.2).unwrap();
        let b = dynamical_map(&m, 0.0, 1.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn afl_analytic_dephasing() {
        let m = AflModel::new(1.0, 2.0).unwrap();
        for t in [0.0, 0.2, 0.5, 1.0] {
            let e = dynamical_map(&m, 0.0, t).unwrap();
            let out = e.apply(&plus());
            assert_abs_diff_eq!(out[(0, 1)].re, 0.5 * (-2.0 * t).exp(), epsilon = 1e-14);
            assert_abs_diff_eq!(out[(0, 0)].re, 0.5, epsilon = 1e-14);
        }
        let spin_echo = dd_apply(&m, &[(0.4, pauli::x()), (0.8, pauli::x())], 0.8).unwrap();
        assert_abs_diff_eq!(spin_echo.distance(&SuperOperator::identity(2)), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn afl_three_time_case() {
        let m = AflModel::new(1.0, 2.0).unwrap();
        // λk = λn = 1 (index 0), λj = λl = -1 (index 1), equal intervals
        let dt = 0.5;
        let phases = [m.interval_phase(0, 1, dt), m.interval_phase(0, 0, dt), m.interval_phase(1, 0, dt)];
        assert_abs_diff_eq!(m.correlation_exact(&phases).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.correlation_regression(&phases).re, (-2f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn afl_grid_is_close_to_analytic() {
        let grid = RegisterModel::afl_grid(1.0, 2.0, 4001, 200.0, 1e-2).unwrap();
        let out = dynamical_map(&grid, 0.0, 0.5).unwrap().apply(&plus());
        assert!((out[(0, 1)].re - 0.5 * (-1f64).exp()).abs() < 2e-3);
        assert!(RegisterModel::afl_grid(1.0, 2.0, 41, 2.0, 1e-2).is_err());
    }

    #[test]
    fn afl_fa_witness_is_entangled() {
        let m = AflModel::new(1.0, 2.0).unwrap();
        let w = m.fa_witness(&PureState::plus(), 0.5).unwrap();
        assert_abs_diff_eq!(w.negativity, 0.5 * (1.0 - (-2f64).exp()).sqrt(), epsilon = 1e-12);
        let grid = RegisterModel::afl_grid(1.0, 2.0, 4001, 200.0, 1e-2).unwrap();
        let wg = grid.fa_witness(&PureState::plus(), 0.5).unwrap();
        assert!(wg.negativity > 1e-3);
        // env marginals from orthogonal inputs differ
        let w0 = grid.fa_witness(&PureState::basis(&[2], 0), 0.5).unwrap();
        let w1 = grid.fa_witness(&PureState::basis(&[2], 1), 0.5).unwrap();
        assert!(env_marginal_distance(&w0.env_marginal, &w1.env_marginal).unwrap() > 0.1);
    }

    #[test]
    fn factor_marginal_distance_matches_dense() {
        let a = CMat::from_fn(5, 2, |r, c| C64::new(0.1 * r as f64, 0.2 * c as f64 - 0.05 * r as f64));
        let b = CMat::from_fn(5, 2, |r, c| C64::new(0.3 - 0.05 * c as f64, 0.1 * (r * c) as f64));
        let dense = env_marginal_distance(
            &EnvMarginal::Dense(&a * a.adjoint()),
            &EnvMarginal::Dense(&b * b.adjoint()),
        )
        .unwrap();
        let fact = env_marginal_distance(&EnvMarginal::Factor(a), &EnvMarginal::Factor(b)).unwrap();
        assert_abs_diff_eq!(dense, fact, epsilon = 1e-12);
    }

    #[test]
    fn collision_basics() {
        let m = CollisionModel::partial_swap(PI / 4.0, 3).unwrap();
        let u = m.propagator(0.0, 3.0).unwrap();
        assert!(u.is_unitary(1e-10));
        let a = m.propagator(0.0, 1.3).unwrap();
        let b = m.propagator(1.3, 2.6).unwrap();
        let c = m.propagator(0.0, 2.6).unwrap();
        assert_abs_diff_eq!(max_abs(&(b.mat() * a.mat() - c.mat())), 0.0, epsilon = 1e-10);
        assert!(m.propagator(0.0, 3.5).is_err());
        // angle 0 is trivial
        let id = CollisionModel::partial_swap(0.0, 2).unwrap();
        assert_abs_diff_eq!(dynamical_map(&id, 0.0, 2.0).unwrap().distance(&SuperOperator::identity(2)), 0.0, epsilon = 1e-12);
        // full swap resets the system to the ancilla state
        let full = CollisionModel::partial_swap(PI / 2.0, 2).unwrap();
        let out = dynamical_map(&full, 0.0, 1.0).unwrap().apply(&plus());
        assert_abs_diff_eq!(max_abs(&(out - DensityOperator::basis(&[2], 0).mat())), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bath_correlations() {
        let m = CollisionModel::partial_swap(PI / 4.0, 3).unwrap();
        let x = pauli::x();
        let same = bath_correlation(&m, &x, &x, 0.5, 0.2).unwrap();
        assert_abs_diff_eq!(same.symmetric.re, 1.0, epsilon = 1e-14);
        let diff = bath_correlation(&m, &x, &x, 1.5, 0.2).unwrap();
        assert_abs_diff_eq!(diff.symmetric.norm(), 0.0, epsilon = 1e-14);
        let id = bath_correlation(&m, &CMat::identity(2, 2), &pauli::z(), 1.5, 0.2).unwrap();
        assert_abs_diff_eq!(id.symmetric.re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.antisymmetric.norm(), 0.0, epsilon = 1e-14);
        let s = RegisterModel::static_dephasing(&[1.0, -1.0], &[0.5, 0.5]).unwrap();
        let z = pauli::z();
        let g1 = bath_correlation(&s, &z, &z, 0.1, 0.0).unwrap();
        let g2 = bath_correlation(&s, &z, &z, 5.0, 0.0).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn eternal_analytic_matches_integration() {
        let e = EternalModel::new();
        for t in [0.5, 1.0, 2.0] {
            let a = e.map(t).unwrap();
            let b = e.map_integrated(t, 1e-3).unwrap();
            assert_abs_diff_eq!(a.distance(&b), 0.0, epsilon = 1e-10);
            assert!(a.is_cptp(1e-9).verdict);
        }
        assert_abs_diff_eq!(e.map(0.0).unwrap().distance(&SuperOperator::identity(2)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn presets_resolve() {
        for name in PRESET_NAMES {
            assert_eq!(preset(name).unwrap().name(), *name);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn measure_prepare_validation() {
        let mp = MeasurePrepare::computational(2);
        assert!(mp.validate(2, 1e-10).is_ok());
        let bad = MeasurePrepare { povm: vec![CMat::identity(2, 2) * C64::from(0.5)], states: vec![CMat::identity(2, 2) * C64::from(0.5)] };
        assert!(bad.validate(2, 1e-10).is_err());
    }
}
