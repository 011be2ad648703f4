//! Dense complex linear algebra for small composite Hilbert spaces.
//!
//! Every [`Operator`] carries the list of subsystem dimensions it acts on;
//! tensor products, partial traces and partial transposes use that metadata
//! and refuse mismatched inputs instead of reshaping silently.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Absolute tolerances for state validation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Hermiticity, max-abs entry of `A - A^dagger`.
    pub herm: f64,
    /// Trace deviation from one (or norm deviation for pure states).
    pub trace: f64,
    /// Allowed negative eigenvalue magnitude.
    pub psd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { herm: 1e-10, trace: 1e-10, psd: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: CMat,
    dims: Vec<usize>,
}

impl Operator {
    pub fn new(mat: CMat, dims: Vec<usize>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let prod: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) || prod != mat.nrows() {
            return Err(Error::Dimension(format!(
                "dims {:?} do not multiply to side length {}",
                dims,
                mat.nrows()
            )));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("operator entries".into()));
        }
        Ok(Operator { mat, dims })
    }

    /// Single-factor operator.
    pub fn from_matrix(mat: CMat) -> Result<Self> {
        let d = mat.nrows();
        Operator::new(mat, vec![d])
    }

    pub fn identity(dims: &[usize]) -> Self {
        let d = dims.iter().product();
        Operator { mat: CMat::identity(d, d), dims: dims.to_vec() }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let d = dims.iter().product();
        Operator { mat: CMat::zeros(d, d), dims: dims.to_vec() }
    }

    /// `|a><b|` on a single factor of dimension `d`.
    pub fn ket_bra(d: usize, a: usize, b: usize) -> Self {
        let mut m = CMat::zeros(d, d);
        m[(a, b)] = ONE;
        Operator { mat: m, dims: vec![d] }
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_mat(self) -> CMat {
        self.mat
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn with_dims(self, dims: Vec<usize>) -> Result<Self> {
        Operator::new(self.mat, dims)
    }

    pub fn adjoint(&self) -> Self {
        Operator { mat: self.mat.adjoint(), dims: self.dims.clone() }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn scale(&self, z: C64) -> Self {
        Operator { mat: &self.mat * z, dims: self.dims.clone() }
    }

    pub fn hermiticity_residual(&self) -> f64 {
        max_abs(&(&self.mat - self.mat.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let d = self.dim();
        max_abs(&(self.mat.adjoint() * &self.mat - CMat::identity(d, d))) <= tol
    }

    fn check_same_dims(&self, other: &Operator, what: &str) {
        assert!(
            self.dims == other.dims,
            "{what}: subsystem dims {:?} vs {:?}",
            self.dims,
            other.dims
        );
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.check_same_dims(rhs, "add");
        Operator { mat: &self.mat + &rhs.mat, dims: self.dims.clone() }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.check_same_dims(rhs, "sub");
        Operator { mat: &self.mat - &rhs.mat, dims: self.dims.clone() }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.check_same_dims(rhs, "mul");
        Operator { mat: &self.mat * &rhs.mat, dims: self.dims.clone() }
    }
}

/// A validated density operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator(Operator);

impl DensityOperator {
    pub fn new(op: Operator, tol: &Tolerances) -> Result<Self> {
        let herm = op.hermiticity_residual();
        if herm > tol.herm {
            return Err(Error::InvalidState(format!("not Hermitian (residual {herm:.3e})")));
        }
        let tr = op.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let (evals, _) = eigh(op.mat());
        let min = evals.first().copied().unwrap_or(0.0);
        if min < -tol.psd {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(DensityOperator(op))
    }

    /// Validate with default tolerances.
    pub fn try_from_operator(op: Operator) -> Result<Self> {
        DensityOperator::new(op, &Tolerances::default())
    }

    pub fn pure(psi: &PureState) -> Self {
        let v = psi.amplitudes();
        DensityOperator(Operator { mat: v * v.adjoint(), dims: psi.dims().to_vec() })
    }

    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let d: usize = dims.iter().product();
        DensityOperator(Operator {
            mat: CMat::identity(d, d) / C64::from(d as f64),
            dims: dims.to_vec(),
        })
    }

    /// Computational basis projector `|k><k|`.
    pub fn basis(dims: &[usize], k: usize) -> Self {
        DensityOperator::pure(&PureState::basis(dims, k))
    }

    /// Qubit state with Bloch vector `r` (|r| <= 1).
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let m = (pauli::identity() + pauli::x() * C64::from(r[0]) + pauli::y() * C64::from(r[1])
            + pauli::z() * C64::from(r[2]))
            / C64::from(2.0);
        DensityOperator::try_from_operator(Operator::from_matrix(m)?)
    }

    pub fn as_operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }

    pub fn mat(&self) -> &CMat {
        self.0.mat()
    }

    pub fn dims(&self) -> &[usize] {
        self.0.dims()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        purity(self.0.mat())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: CVec,
    dims: Vec<usize>,
}

impl PureState {
    pub fn new(amps: CVec, dims: Vec<usize>, tol: &Tolerances) -> Result<Self> {
        let prod: usize = dims.iter().product();
        if prod != amps.len() {
            return Err(Error::Dimension(format!(
                "dims {:?} do not match {} amplitudes",
                dims,
                amps.len()
            )));
        }
        let n = amps.norm();
        if (n - 1.0).abs() > tol.trace {
            return Err(Error::InvalidState(format!("norm {n} differs from 1")));
        }
        Ok(PureState { amps, dims })
    }

    /// Normalizes `amps` before validation.
    pub fn normalized(amps: CVec, dims: Vec<usize>) -> Result<Self> {
        let n = amps.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState("zero or non-finite vector".into()));
        }
        PureState::new(amps / C64::from(n), dims, &Tolerances::default())
    }

    pub fn basis(dims: &[usize], k: usize) -> Self {
        let d: usize = dims.iter().product();
        let mut v = CVec::zeros(d);
        v[k] = ONE;
        PureState { amps: v, dims: dims.to_vec() }
    }

    /// `(|0> + |1>)/sqrt(2)`.
    pub fn plus() -> Self {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        PureState { amps: CVec::from_vec(vec![s, s]), dims: vec![2] }
    }

    pub fn amplitudes(&self) -> &CVec {
        &self.amps
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn to_density(&self) -> DensityOperator {
        DensityOperator::pure(self)
    }
}

/// Pauli matrices and qubit ladder operators.
///
/// Convention: `sigma_z = diag(1, -1)`, `|1>` is the excited level and
/// `sigma_minus = |0><1|`.
pub mod pauli {
    use super::{CMat, C64, ONE, ZERO};

    pub fn identity() -> CMat {
        CMat::identity(2, 2)
    }
    pub fn x() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }
    pub fn y() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, -C64::i(), C64::i(), ZERO])
    }
    pub fn z() -> CMat {
        CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }
    pub fn sigma_minus() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
    }
    pub fn sigma_plus() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
    }
    /// `[I, X, Y, Z]`.
    pub fn all() -> [CMat; 4] {
        [identity(), x(), y(), z()]
    }
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigen-decomposition of the Hermitian part of `m`, eigenvalues ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let h = (m + m.adjoint()) * C64::from(0.5);
    let n = h.nrows();
    if n == 0 {
        return (vec![], CMat::zeros(0, 0));
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

/// `V diag(f(lambda)) V^dagger` for a Hermitian `m`.
pub fn hermitian_fn(m: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let (vals, vecs) = eigh(m);
    let mut scaled = vecs.clone();
    for (k, &v) in vals.iter().enumerate() {
        let fk = f(v);
        scaled.column_mut(k).scale_mut(1.0);
        for r in 0..scaled.nrows() {
            scaled[(r, k)] *= fk;
        }
    }
    scaled * vecs.adjoint()
}

pub fn purity(m: &CMat) -> f64 {
    (m * m).trace().re
}

/// Trace norm of a Hermitian matrix (sum of absolute eigenvalues).
pub fn trace_norm_hermitian(m: &CMat) -> f64 {
    eigh(m).0.iter().map(|v| v.abs()).sum()
}

/// Trace norm of a general matrix (sum of singular values).
pub fn trace_norm(m: &CMat) -> f64 {
    if (m - m.adjoint()).iter().all(|z| z.norm() <= 1e-14) {
        return trace_norm_hermitian(m);
    }
    m.clone().svd(false, false).singular_values.iter().sum()
}

pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

pub fn kron(a: &Operator, b: &Operator) -> Operator {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    Operator { mat: a.mat.kronecker(&b.mat), dims }
}

/// Index offsets splitting a composite index into a selected part and the rest.
///
/// Full index = `sel[a] + rest[b]` for `a` over the selected subsystems'
/// configurations (in their own row-major order) and `b` over the remaining.
#[derive(Clone, Debug)]
pub struct IndexSplit {
    pub sel: Vec<usize>,
    pub rest: Vec<usize>,
}

impl IndexSplit {
    pub fn new(dims: &[usize], selected: &[usize]) -> Result<Self> {
        validate_subset(dims.len(), selected)?;
        let n = dims.len();
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let rest_idx: Vec<usize> = (0..n).filter(|k| !selected.contains(k)).collect();
        Ok(IndexSplit {
            sel: offsets(dims, &strides, selected),
            rest: offsets(dims, &strides, &rest_idx),
        })
    }
}

fn offsets(dims: &[usize], strides: &[usize], which: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for &k in which {
        let mut next = Vec::with_capacity(out.len() * dims[k]);
        for &o in &out {
            for digit in 0..dims[k] {
                next.push(o + digit * strides[k]);
            }
        }
        out = next;
    }
    out
}

fn validate_subset(n: usize, sel: &[usize]) -> Result<()> {
    for w in sel.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Subsystem(format!("indices {sel:?} must be strictly increasing")));
        }
    }
    if let Some(&last) = sel.last() {
        if last >= n {
            return Err(Error::Subsystem(format!("index {last} out of range for {n} subsystems")));
        }
    }
    Ok(())
}

/// Trace out every subsystem not listed in `keep`.
pub fn partial_trace(a: &Operator, keep: &[usize]) -> Result<Operator> {
    let split = IndexSplit::new(&a.dims, keep)?;
    let dk = split.sel.len();
    let mut out = CMat::zeros(dk, dk);
    for (i, &oi) in split.sel.iter().enumerate() {
        for (j, &oj) in split.sel.iter().enumerate() {
            let mut s = ZERO;
            for &r in &split.rest {
                s += a.mat[(oi + r, oj + r)];
            }
            out[(i, j)] = s;
        }
    }
    let dims = if keep.is_empty() { vec![1] } else { keep.iter().map(|&k| a.dims[k]).collect() };
    Operator::new(out, dims)
}

/// Partial transpose on the listed subsystems.
pub fn partial_transpose(a: &Operator, sites: &[usize]) -> Result<Operator> {
    let split = IndexSplit::new(&a.dims, sites)?;
    let d = a.dim();
    let mut sel_of = vec![0usize; d];
    let mut rest_of = vec![0usize; d];
    for &s in &split.sel {
        for &r in &split.rest {
            sel_of[s + r] = s;
            rest_of[s + r] = r;
        }
    }
    let mut out = CMat::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            out[(rest_of[r] + sel_of[c], rest_of[c] + sel_of[r])] = a.mat[(r, c)];
        }
    }
    Operator::new(out, a.dims.clone())
}

/// `Tr|w rho - (1-w) sigma|`.
pub fn helstrom_norm(w: f64, rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::InvalidArgument(format!("weight {w} must lie in (0, 1)")));
    }
    if rho.dims() != sigma.dims() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", rho.dims(), sigma.dims())));
    }
    Ok(helstrom_norm_mat(w, rho.mat(), sigma.mat()))
}

pub(crate) fn helstrom_norm_mat(w: f64, rho: &CMat, sigma: &CMat) -> f64 {
    trace_norm_hermitian(&(rho * C64::from(w) - sigma * C64::from(1.0 - w)))
}

pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    Ok(helstrom_norm(0.5, rho, sigma)?)
}

/// Sum of the magnitudes of negative eigenvalues of the partial transpose
/// with respect to `part` (the subsystems of one side of the cut).
pub fn negativity(rho: &DensityOperator, part: &[usize]) -> Result<f64> {
    if part.is_empty() || part.len() >= rho.dims().len() {
        return Err(Error::Subsystem(format!(
            "bipartition {part:?} must be a proper non-empty subset of {} factors",
            rho.dims().len()
        )));
    }
    let pt = partial_transpose(rho.as_operator(), part)?;
    Ok(eigh(pt.mat()).0.iter().filter(|&&v| v < 0.0).map(|v| -v).sum())
}

/// Negativity of a pure bipartite state from the spectrum `p` of either
/// reduced state: `((sum sqrt p)^2 - 1) / 2`.
pub fn negativity_from_schmidt(p: &[f64]) -> f64 {
    let s: f64 = p.iter().map(|&v| v.max(0.0).sqrt()).sum();
    ((s * s - 1.0) / 2.0).max(0.0)
}

/// Von Neumann entropy in bits.
pub fn entropy(m: &CMat) -> f64 {
    eigh(m).0.iter().filter(|&&v| v > 1e-15).map(|&v| -v * v.log2()).sum()
}

/// `S(A) + S(B) - S(AB)` for the cut `part | rest`.
pub fn mutual_information(rho: &DensityOperator, part: &[usize]) -> Result<f64> {
    let n = rho.dims().len();
    let rest: Vec<usize> = (0..n).filter(|k| !part.contains(k)).collect();
    if part.is_empty() || rest.is_empty() {
        return Err(Error::Subsystem(format!("bipartition {part:?} is not proper")));
    }
    let a = partial_trace(rho.as_operator(), part)?;
    let b = partial_trace(rho.as_operator(), &rest)?;
    Ok((entropy(a.mat()) + entropy(b.mat()) - entropy(rho.mat())).max(0.0))
}

/// Matrix exponential.
///
/// Hermitian and anti-Hermitian inputs go through an eigendecomposition;
/// anything else uses scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exp(a: &Operator) -> Operator {
    Operator { mat: expm(&a.mat), dims: a.dims.clone() }
}

pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let scale = max_abs(a).max(1.0);
    let tol = 1e-14 * scale;
    if max_abs(&(a - a.adjoint())) <= tol {
        return hermitian_fn(a, |v| C64::from(v.exp()));
    }
    if max_abs(&(a + a.adjoint())) <= tol {
        let h = a * (-I);
        return hermitian_fn(&h, |v| C64::from_polar(1.0, v));
    }
    a.clone().exp()
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn unitary_from_hamiltonian(h: &CMat, t: f64) -> CMat {
    hermitian_fn(h, |v| C64::from_polar(1.0, -v * t))
}

/// Hermitian generator `h` with `u = exp(-i h)`, principal branch.
///
/// A unitary is normal, so a generic real combination of its Hermitian and
/// anti-Hermitian parts shares its eigenvectors.
pub fn unitary_generator(u: &CMat) -> Result<CMat> {
    let n = u.nrows();
    if max_abs(&(u.adjoint() * u - CMat::identity(n, n))) > 1e-9 {
        return Err(Error::InvalidArgument("matrix is not unitary".into()));
    }
    let a = (u + u.adjoint()) * C64::from(0.5);
    let b = (u - u.adjoint()) * C64::new(0.0, -0.5);
    let mix = &a + &b * C64::from(0.618_033_988_749_894_8);
    let (_, v) = eigh(&mix);
    let diag = v.adjoint() * u * &v;
    let mut h = CMat::zeros(n, n);
    for k in 0..n {
        h[(k, k)] = C64::from(-diag[(k, k)].arg());
    }
    let off = max_abs(&(&diag - CMat::from_diagonal(&diag.diagonal())));
    if off > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "unitary could not be diagonalized (off-diagonal {off:.2e})"
        )));
    }
    Ok(&v * h * v.adjoint())
}

/// Left-multiplication by an operator acting on a subset of the factors.
#[derive(Clone, Debug)]
pub struct LocalAction {
    split: IndexSplit,
    op: CMat,
}

impl LocalAction {
    pub fn new(op: CMat, dims: &[usize], targets: &[usize]) -> Result<Self> {
        let split = IndexSplit::new(dims, targets)?;
        if op.nrows() != split.sel.len() || op.ncols() != split.sel.len() {
            return Err(Error::Dimension(format!(
                "local operator {}x{} does not match target dimension {}",
                op.nrows(),
                op.ncols(),
                split.sel.len()
            )));
        }
        Ok(LocalAction { split, op })
    }

    /// `(op ⊗ I) x`.
    pub fn left(&self, x: &CMat) -> CMat {
        let dt = self.split.sel.len();
        let mut out = CMat::zeros(x.nrows(), x.ncols());
        let mut buf = vec![ZERO; dt];
        for c in 0..x.ncols() {
            for &r in &self.split.rest {
                for (a, &oa) in self.split.sel.iter().enumerate() {
                    buf[a] = x[(oa + r, c)];
                }
                for (a, &oa) in self.split.sel.iter().enumerate() {
                    let mut s = ZERO;
                    for (b, &v) in buf.iter().enumerate() {
                        s += self.op[(a, b)] * v;
                    }
                    out[(oa + r, c)] = s;
                }
            }
        }
        out
    }

    /// `(op ⊗ I) x (op ⊗ I)^dagger`.
    pub fn conjugate(&self, x: &CMat) -> CMat {
        let y = self.left(x);
        self.left(&y.adjoint()).adjoint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn op(m: CMat) -> Operator {
        Operator::from_matrix(m).unwrap()
    }

    #[test]
    fn kron_identities() {
        let i2 = Operator::identity(&[2]);
        assert_eq!(kron(&i2, &i2).mat(), &CMat::identity(4, 4));
        let z = Operator::zeros(&[3]);
        assert_eq!(max_abs(kron(&op(pauli::x()), &z).mat()), 0.0);
        let k = kron(&op(pauli::z()), &Operator::ket_bra(2, 1, 1));
        let expected = CMat::from_diagonal(&CVec::from_vec(vec![ZERO, ONE, ZERO, -ONE]));
        assert_eq!(k.mat(), &expected);
        assert_eq!(k.dims(), &[2, 2]);
    }

    #[test]
    fn partial_trace_cases() {
        let rho = DensityOperator::from_bloch([0.3, -0.2, 0.5]).unwrap();
        let sigma = DensityOperator::from_bloch([0.0, 0.6, -0.1]).unwrap();
        let joint = kron(rho.as_operator(), sigma.as_operator());
        let a = partial_trace(&joint, &[0]).unwrap();
        assert_abs_diff_eq!(max_abs(&(a.mat() - rho.mat())), 0.0, epsilon = 1e-14);
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let phi = PureState::new(CVec::from_vec(vec![s, ZERO, ZERO, s]), vec![2, 2], &Tolerances::default())
            .unwrap();
        let red = partial_trace(phi.to_density().as_operator(), &[0]).unwrap();
        assert_abs_diff_eq!(max_abs(&(red.mat() - CMat::identity(2, 2) * C64::from(0.5))), 0.0, epsilon = 1e-15);
        let full = partial_trace(&joint, &[]).unwrap();
        assert_eq!(full.dim(), 1);
        assert_abs_diff_eq!(full.mat()[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert!(partial_trace(&joint, &[1, 0]).is_err());
        assert!(partial_trace(&joint, &[2]).is_err());
    }

    #[test]
    fn helstrom_and_trace_distance_examples() {
        let plus = PureState::plus().to_density();
        let mixed = DensityOperator::maximally_mixed(&[2]);
        let zero = DensityOperator::basis(&[2], 0);
        let one = DensityOperator::basis(&[2], 1);
        for w in [0.1, 0.3, 0.5, 0.8] {
            assert_abs_diff_eq!(helstrom_norm(w, &plus, &plus).unwrap(), (2.0 * w - 1.0).abs(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(helstrom_norm(0.5, &zero, &one).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(helstrom_norm(0.5, &plus, &mixed).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance(&plus, &plus).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance(&zero, &one).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance(&plus, &mixed).unwrap(), 0.5, epsilon = 1e-14);
        assert!(helstrom_norm(0.0, &plus, &mixed).is_err());
        assert!(trace_distance(&plus, &DensityOperator::maximally_mixed(&[3])).is_err());
    }

    #[test]
    fn negativity_examples() {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let phi = PureState::new(CVec::from_vec(vec![s, ZERO, ZERO, s]), vec![2, 2], &Tolerances::default())
            .unwrap()
            .to_density();
        assert_abs_diff_eq!(negativity(&phi, &[1]).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(negativity(&phi, &[0]).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(negativity_from_schmidt(&[0.5, 0.5]), 0.5, epsilon = 1e-14);
        let prod = DensityOperator::try_from_operator(kron(
            PureState::plus().to_density().as_operator(),
            DensityOperator::basis(&[2], 1).as_operator(),
        ))
        .unwrap();
        assert_abs_diff_eq!(negativity(&prod, &[1]).unwrap(), 0.0, epsilon = 1e-14);
        assert!(negativity(&prod, &[]).is_err());
        assert!(negativity(&prod, &[0, 1]).is_err());
    }

    #[test]
    fn matrix_exp_examples() {
        let e0 = matrix_exp(&Operator::zeros(&[3]));
        assert_eq!(e0.mat(), &CMat::identity(3, 3));
        let a = op(pauli::x() * C64::new(0.0, -std::f64::consts::FRAC_PI_2));
        let u = matrix_exp(&a);
        assert_abs_diff_eq!(max_abs(&(u.mat() - pauli::x() * (-I))), 0.0, epsilon = 1e-14);
        // non-normal input goes through Padé
        let n = CMat::from_row_slice(2, 2, &[ONE, ONE * 2.0, ZERO, ONE * 3.0]);
        let e = expm(&n);
        let expected = CMat::from_row_slice(
            2,
            2,
            &[
                C64::from(1f64.exp()),
                C64::from(3f64.exp() - 1f64.exp()),
                ZERO,
                C64::from(3f64.exp()),
            ],
        );
        assert_abs_diff_eq!(max_abs(&(e - expected)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn density_validation() {
        let bad = op(CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE * 0.0]));
        assert!(DensityOperator::try_from_operator(bad.scale(C64::from(2.0))).is_err());
        let neg = op(CMat::from_row_slice(2, 2, &[ONE * 1.5, ZERO, ZERO, -ONE * 0.5]));
        assert!(DensityOperator::try_from_operator(neg).is_err());
        let nonherm = op(CMat::from_row_slice(2, 2, &[ONE * 0.5, ONE * 0.1, ZERO, ONE * 0.5]));
        assert!(DensityOperator::try_from_operator(nonherm).is_err());
        assert!(Operator::new(CMat::identity(4, 4), vec![2, 3]).is_err());
    }

    #[test]
    fn local_action_matches_kron() {
        let u = unitary_from_hamiltonian(&(pauli::x().kronecker(&pauli::y()) + pauli::z().kronecker(&pauli::identity())), 0.37);
        let dims = [2, 2, 2];
        let act = LocalAction::new(u.clone(), &dims, &[0, 2]).unwrap();
        let x = CMat::from_fn(8, 8, |r, c| C64::new((r * 3 + c) as f64 * 0.1, (r as f64 - c as f64) * 0.05));
        // build the full operator by permuting: U on (0,2) = P (U ⊗ I) P with P swapping factors 1 and 2
        let swap12 = {
            let mut p = CMat::zeros(8, 8);
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        p[(a * 4 + c * 2 + b, a * 4 + b * 2 + c)] = ONE;
                    }
                }
            }
            p
        };
        let full = &swap12 * u.kronecker(&CMat::identity(2, 2)) * &swap12;
        let expected = &full * &x * full.adjoint();
        assert_abs_diff_eq!(max_abs(&(act.conjugate(&x) - expected)), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn unitary_generator_round_trip() {
        let h = pauli::x().kronecker(&pauli::x()) * C64::from(0.7) + pauli::z().kronecker(&pauli::identity()) * C64::from(0.2);
        let u = unitary_from_hamiltonian(&h, 1.0);
        let g = unitary_generator(&u).unwrap();
        assert_abs_diff_eq!(max_abs(&(unitary_from_hamiltonian(&g, 1.0) - u)), 0.0, epsilon = 1e-12);
    }
}
