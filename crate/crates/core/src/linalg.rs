//! Dense kernels: Lyapunov and Sylvester solvers, eigen-decomposition,
//! kernel bases and biorthonormalization.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{MorError, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

const SCHUR_MAX_ITER: usize = 10_000;
/// Relative pivot size below which a triangular system counts as singular.
const PIVOT_TOL: f64 = 1e-12;
/// Condition number limit for eigenvector and biorthogonal bases.
pub const COND_LIMIT: f64 = 1e12;
/// Largest Kronecker system the brute-force oracle accepts.
pub const KRON_LIMIT: usize = 400;
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn real_part(m: &CMat) -> Mat {
    m.map(|z| z.re)
}

pub fn imag_part(m: &CMat) -> Mat {
    m.map(|z| z.im)
}

pub fn check_finite(name: &str, m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MorError::NonFinite(name.to_string()))
    }
}

fn check_square(name: &str, m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(MorError::DimensionMismatch(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Frobenius norm with an empty matrix counting as zero.
pub fn fro(m: &Mat) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.norm()
    }
}

pub fn cfro(m: &CMat) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.norm()
    }
}

/// Largest singular value.
pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn cnorm2(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn cond(m: &Mat) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn ccond(m: &CMat) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Complex Schur form `M = U T U^H`.
fn complex_schur(m: &CMat) -> Result<(CMat, CMat)> {
    if m.is_empty() {
        return Ok((m.clone(), m.clone()));
    }
    let s = m
        .clone()
        .try_schur(f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(MorError::NoConvergence)?;
    let (u, mut t) = s.unpack();
    // clear rounding noise below the diagonal
    for j in 0..t.ncols() {
        for i in (j + 1)..t.nrows() {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((u, t))
}

/// Solves `T1 Y + Y T2 + F = 0` for upper-triangular `T1`, `T2`.
fn triangular_sylvester(t1: &CMat, t2: &CMat, f: &CMat, scale: f64) -> Result<CMat> {
    let (k, l) = (t1.nrows(), t2.nrows());
    let mut y = CMat::zeros(k, l);
    let floor = PIVOT_TOL * scale.max(f64::MIN_POSITIVE);
    for j in 0..l {
        let mut rhs: Vec<Complex64> = (0..k).map(|i| -f[(i, j)]).collect();
        for q in 0..j {
            let t = t2[(q, j)];
            if t != Complex64::new(0.0, 0.0) {
                for i in 0..k {
                    rhs[i] -= y[(i, q)] * t;
                }
            }
        }
        let shift = t2[(j, j)];
        for i in (0..k).rev() {
            let mut acc = rhs[i];
            for q in (i + 1)..k {
                acc -= t1[(i, q)] * y[(q, j)];
            }
            let piv = t1[(i, i)] + shift;
            if piv.norm() <= floor {
                return Err(MorError::SingularOperator(format!(
                    "eigenvalues {} and {} of the coefficient pair cancel",
                    t1[(i, i)],
                    -shift
                )));
            }
            y[(i, j)] = acc / piv;
        }
    }
    Ok(y)
}

struct SylvesterFactors {
    u1: CMat,
    t1: CMat,
    u2: CMat,
    t2: CMat,
    scale: f64,
}

impl SylvesterFactors {
    fn new(m1: &Mat, m2: &Mat) -> Result<Self> {
        let (u1, t1) = complex_schur(&to_complex(m1))?;
        let (u2, t2) = complex_schur(&to_complex(m2))?;
        let scale = fro(m1) + fro(m2);
        Ok(Self { u1, t1, u2, t2, scale })
    }

    fn solve(&self, n: &Mat) -> Result<Mat> {
        let f = self.u1.adjoint() * to_complex(n) * &self.u2;
        let y = triangular_sylvester(&self.t1, &self.t2, &f, self.scale)?;
        Ok(real_part(&(&self.u1 * y * self.u2.adjoint())))
    }
}

/// Solves `M1 X + X M2 + N = 0` by complex Schur reduction of both
/// coefficients followed by triangular back-substitution.
pub fn solve_sylvester(m1: &Mat, m2: &Mat, n: &Mat) -> Result<Mat> {
    check_square("M1", m1)?;
    check_square("M2", m2)?;
    if n.nrows() != m1.nrows() || n.ncols() != m2.nrows() {
        return Err(MorError::DimensionMismatch(format!(
            "N is {}x{} but M1, M2 have orders {}, {}",
            n.nrows(),
            n.ncols(),
            m1.nrows(),
            m2.nrows()
        )));
    }
    check_finite("M1", m1)?;
    check_finite("M2", m2)?;
    check_finite("N", n)?;
    if n.is_empty() {
        return Ok(Mat::zeros(n.nrows(), n.ncols()));
    }
    let fac = SylvesterFactors::new(m1, m2)?;
    let mut x = fac.solve(n)?;
    // one step of iterative refinement
    let res = m1 * &x + &x * m2 + n;
    let size = (fro(m1) + fro(m2)) * fro(&x) + fro(n);
    if fro(&res) > 1e-14 * size {
        x += fac.solve(&res)?;
    }
    Ok(x)
}

/// Solves `A P + P A^T + Q = 0` for stable `A`; the result is symmetrized.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    check_square("A", a)?;
    check_square("Q", q)?;
    if q.nrows() != a.nrows() {
        return Err(MorError::DimensionMismatch(format!(
            "Q has order {} but A has order {}",
            q.nrows(),
            a.nrows()
        )));
    }
    check_finite("A", a)?;
    check_finite("Q", q)?;
    if a.is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    let max_real = max_real_eig(a)?;
    if max_real >= 0.0 {
        return Err(MorError::NonStableMatrix { max_real });
    }
    let p = solve_sylvester(a, &a.transpose(), q)?;
    Ok((&p + p.transpose()) * 0.5)
}

/// Largest real part of the eigenvalues; `-inf` for an empty matrix.
pub fn max_real_eig(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Eigenvalues only (diagonal of the complex Schur form), unsorted.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    check_square("A", a)?;
    check_finite("A", a)?;
    let (_, t) = complex_schur(&to_complex(a))?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Brute-force solve of `(I ⊗ M1 + M2^T ⊗ I) vec X = -vec N`.
pub fn kron_oracle_sylvester(m1: &Mat, m2: &Mat, n: &Mat) -> Result<Mat> {
    check_square("M1", m1)?;
    check_square("M2", m2)?;
    let (k, l) = (m1.nrows(), m2.nrows());
    if n.nrows() != k || n.ncols() != l {
        return Err(MorError::DimensionMismatch(format!(
            "N is {}x{} but M1, M2 have orders {k}, {l}",
            n.nrows(),
            n.ncols()
        )));
    }
    if k * l > KRON_LIMIT {
        return Err(MorError::SizeLimitExceeded {
            size: k * l,
            limit: KRON_LIMIT,
        });
    }
    if k * l == 0 {
        return Ok(Mat::zeros(k, l));
    }
    let kmat = Mat::identity(l, l).kronecker(m1) + m2.transpose().kronecker(&Mat::identity(k, k));
    let scale = fro(&kmat);
    let lu = kmat.lu();
    let u = lu.u();
    let min_piv = u.diagonal().iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if min_piv <= PIVOT_TOL * scale {
        return Err(MorError::SingularOperator(format!(
            "Kronecker operator pivot {min_piv:e}"
        )));
    }
    let rhs = -Mat::from_column_slice(k * l, 1, n.as_slice());
    let v = lu
        .solve(&rhs)
        .ok_or_else(|| MorError::SingularOperator("Kronecker operator".into()))?;
    Ok(Mat::from_column_slice(k, l, v.as_slice()))
}

/// How an entry of a conjugate-closed list relates to its partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    Real,
    /// Positive imaginary part; partner index attached.
    Upper(usize),
    /// Negative imaginary part; partner index attached.
    Lower(usize),
}

/// Matches complex values into conjugate pairs. Values with
/// `|Im| <= tol` are treated as real. Returns `None` when the list is
/// not conjugate-closed.
pub fn conjugate_pairing(values: &[Complex64], tol: f64) -> Option<Vec<Pairing>> {
    let mut out = vec![Pairing::Real; values.len()];
    let mut used = vec![false; values.len()];
    for i in 0..values.len() {
        if values[i].im.abs() <= tol || values[i].im < 0.0 {
            continue;
        }
        let target = values[i].conj();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..values.len() {
            if used[j] || j == i || values[j].im >= -tol {
                continue;
            }
            let d = (values[j] - target).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best?;
        if d > 1e-6 * (1.0 + values[i].norm()) {
            return None;
        }
        used[j] = true;
        out[i] = Pairing::Upper(j);
        out[j] = Pairing::Lower(i);
    }
    for i in 0..values.len() {
        if values[i].im < -tol && !used[i] {
            return None;
        }
    }
    Some(out)
}

/// Eigenvalues and unit-norm right eigenvectors `A R = R diag(Λ)`,
/// sorted by (real, imaginary) part.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: CMat,
    pub pairing: Vec<Pairing>,
    pub condition: f64,
}

impl SpectralDecomposition {
    /// `R^{-1} rhs`.
    pub fn solve(&self, rhs: &CMat) -> Result<CMat> {
        self.vectors
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(MorError::DefectiveMatrix {
                condition: f64::INFINITY,
            })
    }

    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Rotates `v` so its largest entry is real and positive.
fn fix_phase(v: &mut [Complex64]) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if v.is_empty() || v[best].norm() == 0.0 {
        return;
    }
    let ph = v[best].conj() / v[best].norm();
    for z in v.iter_mut() {
        *z *= ph;
    }
}

fn normalize(v: &mut [Complex64]) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
}

pub fn spectral(a: &Mat) -> Result<SpectralDecomposition> {
    check_square("A", a)?;
    check_finite("A", a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: vec![],
            vectors: CMat::zeros(0, 0),
            pairing: vec![],
            condition: 1.0,
        });
    }
    let (u, t) = complex_schur(&to_complex(a))?;
    let anorm = fro(a).max(f64::MIN_POSITIVE);
    let smin = (f64::EPSILON * anorm).max(f64::MIN_POSITIVE * 1e3);

    // eigenvectors of the triangular factor
    let mut x = CMat::zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)];
        x[(k, k)] = c(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = -t[(i, k)];
            for q in (i + 1)..k {
                acc -= t[(i, q)] * x[(q, k)];
            }
            let mut den = t[(i, i)] - lam;
            if den.norm() < smin {
                den = c(smin, 0.0);
            }
            x[(i, k)] = acc / den;
        }
    }
    let r = &u * x;

    let raw: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let real_tol = 1e-10 * anorm.max(1.0);
    let pairing = conjugate_pairing(&raw, real_tol).ok_or(MorError::DefectiveMatrix {
        condition: f64::INFINITY,
    })?;

    let mut vals = raw.clone();
    let mut cols: Vec<Vec<Complex64>> = (0..n).map(|k| r.column(k).iter().cloned().collect()).collect();
    for k in 0..n {
        match pairing[k] {
            Pairing::Real => {
                vals[k] = c(raw[k].re, 0.0);
                let v = &mut cols[k];
                normalize(v);
                fix_phase(v);
                for z in v.iter_mut() {
                    *z = c(z.re, 0.0);
                }
                normalize(v);
            }
            Pairing::Upper(j) => {
                let lam = (raw[k] + raw[j].conj()) * 0.5;
                vals[k] = lam;
                vals[j] = lam.conj();
                let mut v = cols[k].clone();
                normalize(&mut v);
                fix_phase(&mut v);
                cols[j] = v.iter().map(|z| z.conj()).collect();
                cols[k] = v;
            }
            Pairing::Lower(_) => {}
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        vals[i]
            .re
            .total_cmp(&vals[j].re)
            .then(vals[i].im.total_cmp(&vals[j].im))
    });
    let mut inv = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        inv[old] = new;
    }
    let eigenvalues: Vec<Complex64> = order.iter().map(|&i| vals[i]).collect();
    let pairing: Vec<Pairing> = order
        .iter()
        .map(|&i| match pairing[i] {
            Pairing::Real => Pairing::Real,
            Pairing::Upper(j) => Pairing::Upper(inv[j]),
            Pairing::Lower(j) => Pairing::Lower(inv[j]),
        })
        .collect();
    let mut vectors = CMat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, new)] = cols[old][i];
        }
    }
    let condition = ccond(&vectors);
    if !(condition <= COND_LIMIT) {
        return Err(MorError::DefectiveMatrix { condition });
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        vectors,
        pairing,
        condition,
    })
}

/// Orthonormal basis of the numerical kernel of `m`.
pub fn kernel_basis(m: &Mat, rank_tol: f64) -> Mat {
    let (rows, cols) = (m.nrows(), m.ncols());
    if cols == 0 {
        return Mat::zeros(0, 0);
    }
    let smax = norm2(m);
    if rows == 0 || smax == 0.0 {
        return Mat::identity(cols, cols);
    }
    let padded = if rows < cols {
        let mut p = Mat::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let thr = rank_tol * smax * rows.max(cols) as f64;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= thr {
            let mut v: Vec<f64> = vt.row(i).iter().cloned().collect();
            let big = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            basis.push(v);
        }
    }
    let mut out = Mat::zeros(cols, basis.len());
    for (j, v) in basis.iter().enumerate() {
        for i in 0..cols {
            out[(i, j)] = v[i];
        }
    }
    out
}

/// Thin QR with a nonnegative diagonal in R. Returns `(Q, cond(R))`.
fn thin_q(m: &Mat) -> (Mat, f64) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let mut hi = 0.0f64;
    let mut lo = f64::INFINITY;
    for j in 0..r.ncols().min(r.nrows()) {
        let d = r[(j, j)];
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
        hi = hi.max(d.abs());
        lo = lo.min(d.abs());
    }
    let rc = if lo == 0.0 { f64::INFINITY } else { hi / lo };
    (q, rc.max(cond(&r)))
}

/// Returns `(V_r, W_r)` spanning the same spaces as the inputs with
/// `W_r^T V_r = I`.
pub fn biorthonormalize(vraw: &Mat, wraw: &Mat) -> Result<(Mat, Mat)> {
    if vraw.shape() != wraw.shape() {
        return Err(MorError::DimensionMismatch(format!(
            "basis shapes {:?} and {:?} differ",
            vraw.shape(),
            wraw.shape()
        )));
    }
    let (n, k) = vraw.shape();
    if k > n {
        return Err(MorError::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    if k == 0 {
        return Ok((Mat::zeros(n, 0), Mat::zeros(n, 0)));
    }
    check_finite("V", vraw)?;
    check_finite("W", wraw)?;
    let (qv, cv) = thin_q(vraw);
    let (qw, cw) = thin_q(wraw);
    if !(cv <= COND_LIMIT) || !(cw <= COND_LIMIT) {
        return Err(MorError::RankDeficient {
            condition: cv.max(cw),
        });
    }
    let m = qw.transpose() * &qv;
    // singular values of M are cosines of principal angles, so 1/σ_min
    // also catches a well-conditioned but tiny product
    let smin = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let condition = cond(&m).max(1.0 / smin);
    if !(condition <= COND_LIMIT) {
        return Err(MorError::RankDeficient { condition });
    }
    let minv_t = m
        .transpose()
        .lu()
        .solve(&Mat::identity(k, k))
        .ok_or(MorError::RankDeficient {
            condition: f64::INFINITY,
        })?;
    Ok((qv, qw * minv_t))
}

/// Solves `(sI - A) X = rhs`.
pub fn shifted_solve(a: &Mat, s: Complex64, rhs: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if rhs.nrows() != n {
        return Err(MorError::DimensionMismatch(format!(
            "right-hand side has {} rows, operator order {n}",
            rhs.nrows()
        )));
    }
    if n == 0 {
        return Ok(CMat::zeros(0, rhs.ncols()));
    }
    let mut m = -to_complex(a);
    for i in 0..n {
        m[(i, i)] += s;
    }
    let scale = cfro(&m);
    let lu = m.lu();
    let min_piv = lu
        .u()
        .diagonal()
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    if min_piv <= PIVOT_TOL * scale {
        return Err(MorError::PoleHit { s });
    }
    lu.solve(rhs).ok_or(MorError::PoleHit { s })
}

/// Symmetric positive-semidefinite square-root factor `L` with `P ≈ L L^T`,
/// dropping eigenvalues below `tol · λ_max`.
pub fn psd_factor(p: &Mat, tol: f64) -> Mat {
    let n = p.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > tol * lmax && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut l = Mat::zeros(n, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..n {
            l[(r, j)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    l
}
