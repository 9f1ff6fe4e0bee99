//! Singular value decomposition and Top-k feature truncation.
//!
//! The decomposition is a one-sided Jacobi iteration: Givens rotations
//! orthogonalize column pairs until every pair is numerically orthogonal,
//! which gives `A·V = U·diag(s)` without ever forming a Gram matrix. For a
//! matrix with more columns than rows we decompose the transpose and swap
//! the factor roles, so the iteration always works on the tall orientation.
//!
//! [`truncation_backward`] is the adjoint of `X -> top_k(X)`: it maps an
//! upstream gradient on the reconstruction back to a gradient on the input,
//! with near-degenerate singular-value gaps clamped for stability.

use crate::tensor::Element;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralError {
    /// Input matrix has a zero dimension.
    EmptyMatrix { rows: usize, cols: usize },
    /// Data length does not match rows*cols.
    SizeMismatch { rows: usize, cols: usize, len: usize },
    /// Input contains NaN or infinity.
    NonFinite,
    /// Requested rank k is zero.
    ZeroRank,
    /// The Jacobi sweep failed to converge within the sweep budget.
    NoConvergence { sweeps: usize },
}

impl std::fmt::Display for SpectralError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpectralError::EmptyMatrix { rows, cols } => {
                write!(f, "matrix has empty dimension: {rows}x{cols}")
            }
            SpectralError::SizeMismatch { rows, cols, len } => {
                write!(f, "data length {len} does not match {rows}x{cols}")
            }
            SpectralError::NonFinite => write!(f, "matrix contains non-finite values"),
            SpectralError::ZeroRank => write!(f, "truncation rank k must be at least 1"),
            SpectralError::NoConvergence { sweeps } => {
                write!(f, "jacobi iteration did not converge in {sweeps} sweeps")
            }
        }
    }
}

impl std::error::Error for SpectralError {}

// ── SVD result ──────────────────────────────────────────────────────────

/// Thin SVD of a `rows x cols` matrix: `X = U * diag(s) * V^T`.
///
/// With `m = min(rows, cols)`: `u` is `rows x m` (row-major), `s` holds the
/// `m` singular values sorted descending, and `v` is `cols x m` (row-major),
/// i.e. column `i` of `v` is the right singular vector paired with `s[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult<T> {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<T>,
    pub s: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Element> SvdResult<T> {
    /// Number of singular values, `min(rows, cols)`.
    pub fn rank_dim(&self) -> usize {
        self.rows.min(self.cols)
    }
}

// ── Decomposition ───────────────────────────────────────────────────────

/// Computes the thin SVD of a dense row-major `rows x cols` matrix.
///
/// Singular values come back sorted descending and non-negative; left and
/// right singular vectors have unit norm. Columns whose singular value is
/// numerically zero get an orthonormal basis completion so `U` and `V`
/// always have orthonormal columns.
pub fn svd<T: Element>(x: &[T], rows: usize, cols: usize) -> Result<SvdResult<T>, SpectralError> {
    if rows == 0 || cols == 0 {
        return Err(SpectralError::EmptyMatrix { rows, cols });
    }
    if x.len() != rows * cols {
        return Err(SpectralError::SizeMismatch { rows, cols, len: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }

    if rows >= cols {
        let (u, s, v) = jacobi_tall(x, rows, cols)?;
        Ok(SvdResult { rows, cols, u, s, v })
    } else {
        // Decompose X^T (tall) and swap factor roles: X^T = P S Q^T gives
        // X = Q S P^T, so U of X is Q and V of X is P.
        let mut xt = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                xt[c * rows + r] = x[r * cols + c];
            }
        }
        let (p, s, q) = jacobi_tall(&xt, cols, rows)?;
        Ok(SvdResult { rows, cols, u: q, s, v: p })
    }
}

/// One-sided Jacobi on a tall matrix (`m >= n`). Returns `(u, s, v)` with
/// `u` being `m x n`, `s` length `n`, `v` being `n x n`, all row-major.
fn jacobi_tall<T: Element>(
    a: &[T],
    m: usize,
    n: usize,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), SpectralError> {
    // Work column-major so each rotation touches contiguous memory.
    let mut col = vec![T::zero(); m * n];
    for r in 0..m {
        for c in 0..n {
            col[c * m + r] = a[r * n + c];
        }
    }
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }

    // Columns are m-vectors, so a computed inner product of two
    // numerically orthogonal columns still carries O(m * eps) relative
    // round-off. The orthogonality test has to sit above that floor or
    // the sweep chases noise rotations and never settles (seen with f32
    // at m = 64).
    let tol = T::epsilon() * T::of(4.0 * m.max(4) as f64);
    // A column whose norm sits at round-off level relative to the largest
    // column is numerically null: its singular value is below what the
    // working precision can resolve, and rotating against it livelocks
    // (the 2x2 problem is singular at working precision, so the computed
    // rotation degenerates to the identity while the off-diagonal entry
    // stays above threshold). Snapping such columns to exact zero uses the
    // same scale as the post-iteration zeroing, so no singular value that
    // would have survived is lost.
    let deflate_rel = T::epsilon() * T::of(m.max(n) as f64);
    let mut col_sq = vec![T::zero(); n];
    const MAX_SWEEPS: usize = 60;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        // Deflation pass: zero numerically-null columns so every inner
        // product against them is exactly zero and the pair loop skips them.
        let mut max_sq = T::zero();
        for j in 0..n {
            let cj = &col[j * m..(j + 1) * m];
            let mut sq = T::zero();
            for &e in cj {
                sq = sq + e * e;
            }
            col_sq[j] = sq;
            if sq > max_sq {
                max_sq = sq;
            }
        }
        let deflate_sq = max_sq * (deflate_rel * deflate_rel);
        for j in 0..n {
            if col_sq[j] <= deflate_sq {
                for e in &mut col[j * m..(j + 1) * m] {
                    *e = T::zero();
                }
            }
        }

        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (app, aqq, apq) = {
                    let mut app = T::zero();
                    let mut aqq = T::zero();
                    let mut apq = T::zero();
                    let cp = &col[p * m..(p + 1) * m];
                    let cq = &col[q * m..(q + 1) * m];
                    for i in 0..m {
                        app = app + cp[i] * cp[i];
                        aqq = aqq + cq[i] * cq[i];
                        apq = apq + cp[i] * cq[i];
                    }
                    (app, aqq, apq)
                };
                // The min-positive term keeps denormal-range correlations
                // (whose scaled threshold underflows to zero) from counting
                // as work left to do.
                if apq.abs() <= tol * (app * aqq).sqrt() + T::min_positive_value() {
                    continue;
                }
                // Symmetric 2x2 eigen-rotation zeroing the (p,q) Gram entry.
                // For very lopsided pairs tau*tau overflows, so switch to the
                // asymptotic tangent 1/(2*tau) well before that point.
                let tau = (aqq - app) / (apq + apq);
                let t = if tau.abs() > T::of(1e8) {
                    T::one() / (tau + tau)
                } else if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                if s == T::zero() {
                    // Below angular resolution the rotation is an exact
                    // identity; applying it cannot make progress, and the
                    // column involved is headed for deflation anyway.
                    continue;
                }
                rotated = true;
                rotate_pair(&mut col, m, p, q, c, s);
                rotate_pair(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SpectralError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    // Column norms are the singular values.
    let mut order: Vec<usize> = (0..n).collect();
    let mut sigma = vec![T::zero(); n];
    for j in 0..n {
        let cj = &col[j * m..(j + 1) * m];
        let mut sq = T::zero();
        for &e in cj {
            sq = sq + e * e;
        }
        sigma[j] = sq.sqrt();
    }
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap_or(std::cmp::Ordering::Equal));

    let smax = sigma[order[0]];
    let tiny = smax * T::epsilon() * T::of((m.max(n)) as f64) + T::min_positive_value();

    let mut u = vec![T::zero(); m * n];
    let mut s_out = vec![T::zero(); n];
    let mut v_out = vec![T::zero(); n * n];
    let mut null_cols = Vec::new();
    for (pos, &j) in order.iter().enumerate() {
        s_out[pos] = sigma[j];
        // `v` is column-major during the iteration; emit row-major.
        for r in 0..n {
            v_out[r * n + pos] = v[j * n + r];
        }
        if sigma[j] > tiny {
            let inv = T::one() / sigma[j];
            let cj = &col[j * m..(j + 1) * m];
            for r in 0..m {
                u[r * n + pos] = cj[r] * inv;
            }
        } else {
            null_cols.push(pos);
        }
    }
    if !null_cols.is_empty() {
        complete_basis(&mut u, m, n, &null_cols);
    }
    Ok((u, s_out, v_out))
}

/// Applies a Givens rotation to columns `p`, `q` of a column-major matrix.
fn rotate_pair<T: Element>(col: &mut [T], m: usize, p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    let (head, tail) = col.split_at_mut(hi * m);
    let cp = &mut head[lo * m..(lo + 1) * m];
    let cq = &mut tail[..m];
    if p < q {
        for i in 0..m {
            let xp = cp[i];
            let xq = cq[i];
            cp[i] = c * xp - s * xq;
            cq[i] = s * xp + c * xq;
        }
    } else {
        for i in 0..m {
            let xq = cp[i];
            let xp = cq[i];
            cq[i] = c * xp - s * xq;
            cp[i] = s * xp + c * xq;
        }
    }
}

/// Fills the listed columns of `u` (an `m x n` row-major matrix whose other
/// columns are orthonormal) with unit vectors orthogonal to everything
/// already present, via Gram-Schmidt against the standard basis.
fn complete_basis<T: Element>(u: &mut [T], m: usize, n: usize, fill: &[usize]) {
    let mut next_axis = 0usize;
    for &dst in fill {
        let mut placed = false;
        while next_axis < m && !placed {
            let mut cand = vec![T::zero(); m];
            cand[next_axis] = T::one();
            next_axis += 1;
            // Remove projections onto every existing column.
            for j in 0..n {
                if fill.contains(&j) && j >= dst {
                    continue;
                }
                let mut dot = T::zero();
                for r in 0..m {
                    dot = dot + cand[r] * u[r * n + j];
                }
                for r in 0..m {
                    cand[r] = cand[r] - dot * u[r * n + j];
                }
            }
            let mut nrm = T::zero();
            for &e in &cand {
                nrm = nrm + e * e;
            }
            let nrm = nrm.sqrt();
            if nrm > T::of(1e-3) {
                let inv = T::one() / nrm;
                for r in 0..m {
                    u[r * n + dst] = cand[r] * inv;
                }
                placed = true;
            }
        }
        // A tall matrix always has enough independent axes, so `placed`
        // holds here; if it ever did not, the column stays zero and the
        // orthonormality tests would catch it.
    }
}

// ── Reconstruction ──────────────────────────────────────────────────────

/// Reconstructs the rank-k approximation `Z_k = sum_{i<k} s_i u_i v_i^T`.
///
/// `k` larger than `min(rows, cols)` is clamped, so `k = min(rows, cols)`
/// (or anything bigger) reproduces the full matrix up to round-off.
pub fn topk_reconstruct<T: Element>(
    decomp: &SvdResult<T>,
    k: usize,
) -> Result<Vec<T>, SpectralError> {
    if k == 0 {
        return Err(SpectralError::ZeroRank);
    }
    let (rows, cols) = (decomp.rows, decomp.cols);
    let m = decomp.rank_dim();
    let k = k.min(m);
    let mut z = vec![T::zero(); rows * cols];
    for i in 0..k {
        let si = decomp.s[i];
        if si == T::zero() {
            break;
        }
        for r in 0..rows {
            let ur = decomp.u[r * m + i] * si;
            let row = &mut z[r * cols..(r + 1) * cols];
            for c in 0..cols {
                row[c] = row[c] + ur * decomp.v[c * m + i];
            }
        }
    }
    Ok(z)
}

/// Convenience: decompose `x` and reconstruct its rank-k approximation.
pub fn topk_of<T: Element>(
    x: &[T],
    rows: usize,
    cols: usize,
    k: usize,
) -> Result<Vec<T>, SpectralError> {
    let d = svd(x, rows, cols)?;
    topk_reconstruct(&d, k)
}

// ── Truncation adjoint ──────────────────────────────────────────────────

/// Adjoint of `X -> top_k(X)`: given `dL/dZ_k` (`upstream`), returns
/// `dL/dX`.
///
/// `gap_eps` clamps the reciprocal singular-value gaps `1/(s_j^2 - s_i^2)`
/// and reciprocals `1/s_i` so near-degenerate spectra cannot blow up the
/// gradient. With `detached = true` the singular vectors are treated as
/// constants and only the singular values carry gradient, which reduces to
/// projecting the upstream gradient onto the kept rank-one components.
///
/// When `k >= min(rows, cols)` the truncation is the identity and the
/// upstream gradient is returned unchanged.
pub fn truncation_backward<T: Element>(
    x: &[T],
    rows: usize,
    cols: usize,
    k: usize,
    upstream: &[T],
    gap_eps: T,
    detached: bool,
) -> Result<Vec<T>, SpectralError> {
    if k == 0 {
        return Err(SpectralError::ZeroRank);
    }
    if upstream.len() != rows * cols {
        return Err(SpectralError::SizeMismatch { rows, cols, len: upstream.len() });
    }
    if k >= rows.min(cols) {
        return Ok(upstream.to_vec());
    }
    let d = svd(x, rows, cols)?;
    truncation_backward_svd(&d, k, upstream, gap_eps, detached)
}

/// Same as [`truncation_backward`] but reuses an already computed
/// decomposition of the forward input.
pub fn truncation_backward_svd<T: Element>(
    decomp: &SvdResult<T>,
    k: usize,
    upstream: &[T],
    gap_eps: T,
    detached: bool,
) -> Result<Vec<T>, SpectralError> {
    if k == 0 {
        return Err(SpectralError::ZeroRank);
    }
    let (rows, cols) = (decomp.rows, decomp.cols);
    if upstream.len() != rows * cols {
        return Err(SpectralError::SizeMismatch { rows, cols, len: upstream.len() });
    }
    let m = decomp.rank_dim();
    if k >= m {
        return Ok(upstream.to_vec());
    }

    if detached {
        // dL/dX = sum_{i<k} (u_i^T G v_i) u_i v_i^T with fixed vectors.
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..k {
            let mut coef = T::zero();
            for r in 0..rows {
                let ur = decomp.u[r * m + i];
                let grow = &upstream[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    coef = coef + ur * grow[c] * decomp.v[c * m + i];
                }
            }
            for r in 0..rows {
                let ur = decomp.u[r * m + i] * coef;
                let orow = &mut out[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    orow[c] = orow[c] + ur * decomp.v[c * m + i];
                }
            }
        }
        return Ok(out);
    }

    if rows >= cols {
        adjoint_tall(decomp.rows, decomp.cols, &decomp.u, &decomp.s, &decomp.v, k, upstream, gap_eps)
    } else {
        // Transpose trick: top_k(X^T) = top_k(X)^T, so run the tall-case
        // adjoint on the transposed problem with U and V swapped.
        let mut up_t = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                up_t[c * rows + r] = upstream[r * cols + c];
            }
        }
        let out_t =
            adjoint_tall(cols, rows, &decomp.v, &decomp.s, &decomp.u, k, &up_t, gap_eps)?;
        let mut out = vec![T::zero(); rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                out[r * cols + c] = out_t[c * rows + r];
            }
        }
        Ok(out)
    }
}

/// Full truncation adjoint for the tall case (`m_rows >= n_cols`).
///
/// Uses the standard SVD adjoint with the chain rule through the partials
/// of the rank-k map: with G the upstream gradient,
///   dS_i = u_i^T G v_i for i < k, else 0
///   dU   = G V D_k,  dV = G^T U D_k   (D_k zeroes columns >= k)
/// and then
///   dX = U dS V^T
///      + U (F o (U^T dU - dU^T U)) S V^T
///      + (dU - U U^T dU) S^{-1} V^T
///      + U S (F o (V^T dV - dV^T V)) V^T
///      + U S^{-1} (dV^T - V^T dV V^T ... expressed below)
/// where F_ij = 1 / (s_j^2 - s_i^2) with the denominator magnitude clamped
/// from below by `gap_eps`, and S^{-1} clamps s_i from below by `gap_eps`.
#[allow(clippy::too_many_arguments)]
fn adjoint_tall<T: Element>(
    mr: usize,
    nc: usize,
    u: &[T],
    s: &[T],
    v: &[T],
    k: usize,
    upstream: &[T],
    gap_eps: T,
) -> Result<Vec<T>, SpectralError> {
    let n = nc; // number of singular triplets kept by the thin SVD
    let eps = if gap_eps > T::zero() { gap_eps } else { T::min_positive_value() };

    // Z_k = U (Sigma D_k) V^T, so the partials carry a singular-value
    // factor: dU = G V Sigma D_k (mr x n), dV = G^T U Sigma D_k (nc x n).
    let mut du = vec![T::zero(); mr * n];
    let mut dv = vec![T::zero(); nc * n];
    for r in 0..mr {
        let grow = &upstream[r * nc..(r + 1) * nc];
        for i in 0..k {
            let mut acc = T::zero();
            for c in 0..nc {
                acc = acc + grow[c] * v[c * n + i];
            }
            du[r * n + i] = acc * s[i];
        }
    }
    for c in 0..nc {
        for i in 0..k {
            let mut acc = T::zero();
            for r in 0..mr {
                acc = acc + upstream[r * nc + c] * u[r * n + i];
            }
            dv[c * n + i] = acc * s[i];
        }
    }

    // dS_i = u_i^T G v_i for kept components.
    let mut ds = vec![T::zero(); n];
    for i in 0..k {
        let mut acc = T::zero();
        for r in 0..mr {
            let ur = u[r * n + i];
            let grow = &upstream[r * nc..(r + 1) * nc];
            for c in 0..nc {
                acc = acc + ur * grow[c] * v[c * n + i];
            }
        }
        ds[i] = acc;
    }

    // Small n x n intermediates.
    let utdu = mat_t_mul(u, mr, n, &du, n); // U^T dU
    let vtdv = mat_t_mul(v, nc, n, &dv, n); // V^T dV

    // J = F o (U^T dU - dU^T U), K = F o (V^T dV - dV^T V).
    let mut jm = vec![T::zero(); n * n];
    let mut km = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut denom = s[j] * s[j] - s[i] * s[i];
            if denom.abs() < eps {
                denom = if denom >= T::zero() { eps } else { -eps };
            }
            let f = T::one() / denom;
            jm[i * n + j] = f * (utdu[i * n + j] - utdu[j * n + i]);
            km[i * n + j] = f * (vtdv[i * n + j] - vtdv[j * n + i]);
        }
    }

    // Assemble the five terms of dX (mr x nc).
    let mut core = vec![T::zero(); n * n]; // diag(dS) + J*S + S*K
    for i in 0..n {
        core[i * n + i] = ds[i];
        for j in 0..n {
            core[i * n + j] = core[i * n + j] + jm[i * n + j] * s[j] + s[i] * km[i * n + j];
        }
    }

    // out = U * core * V^T
    let ucore = mat_mul(u, mr, n, &core, n);
    let mut out = mat_mul_bt(&ucore, mr, n, v, nc);

    // Orthogonal-complement term for U: (dU - U (U^T dU)) S^{-1} V^T.
    let mut sinv = vec![T::zero(); n];
    for i in 0..n {
        let si = if s[i] > eps { s[i] } else { eps };
        sinv[i] = T::one() / si;
    }
    let u_utdu = mat_mul(u, mr, n, &utdu, n);
    let mut perp = vec![T::zero(); mr * n];
    for r in 0..mr {
        for i in 0..n {
            perp[r * n + i] = (du[r * n + i] - u_utdu[r * n + i]) * sinv[i];
        }
    }
    let perp_vt = mat_mul_bt(&perp, mr, n, v, nc);
    for (o, p) in out.iter_mut().zip(perp_vt.iter()) {
        *o = *o + *p;
    }

    // Orthogonal-complement term for V: U S^{-1} (dV - V (V^T dV))^T.
    // When V is square its complement is empty, so skip the work.
    if n < nc {
        let v_vtdv = mat_mul(v, nc, n, &vtdv, n);
        let mut vperp = vec![T::zero(); nc * n];
        for r in 0..nc {
            for i in 0..n {
                vperp[r * n + i] = (dv[r * n + i] - v_vtdv[r * n + i]) * sinv[i];
            }
        }
        // add U * vperp^T  (mr x n times n x nc)
        for r in 0..mr {
            let urow = &u[r * n..(r + 1) * n];
            let orow = &mut out[r * nc..(r + 1) * nc];
            for c in 0..nc {
                let vrow = &vperp[c * n..(c + 1) * n];
                let mut acc = T::zero();
                for i in 0..n {
                    acc = acc + urow[i] * vrow[i];
                }
                orow[c] = orow[c] + acc;
            }
        }
    }

    Ok(out)
}

/// `A^T * B` for row-major `A` (`m x n`) and `B` (`m x p`); returns `n x p`.
fn mat_t_mul<T: Element>(a: &[T], m: usize, n: usize, b: &[T], p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * p];
    for r in 0..m {
        let arow = &a[r * n..(r + 1) * n];
        let brow = &b[r * p..(r + 1) * p];
        for i in 0..n {
            let ai = arow[i];
            let orow = &mut out[i * p..(i + 1) * p];
            for j in 0..p {
                orow[j] = orow[j] + ai * brow[j];
            }
        }
    }
    out
}

/// `A * B` for row-major `A` (`m x n`) and `B` (`n x p`); returns `m x p`.
fn mat_mul<T: Element>(a: &[T], m: usize, n: usize, b: &[T], p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for r in 0..m {
        let arow = &a[r * n..(r + 1) * n];
        let orow = &mut out[r * p..(r + 1) * p];
        for i in 0..n {
            let ai = arow[i];
            let brow = &b[i * p..(i + 1) * p];
            for j in 0..p {
                orow[j] = orow[j] + ai * brow[j];
            }
        }
    }
    out
}

/// `A * B^T` for row-major `A` (`m x n`) and `B` (`p x n`); returns `m x p`.
fn mat_mul_bt<T: Element>(a: &[T], m: usize, n: usize, b: &[T], p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for r in 0..m {
        let arow = &a[r * n..(r + 1) * n];
        let orow = &mut out[r * p..(r + 1) * p];
        for c in 0..p {
            let brow = &b[c * n..(c + 1) * n];
            let mut acc = T::zero();
            for i in 0..n {
                acc = acc + arow[i] * brow[i];
            }
            orow[c] = acc;
        }
    }
    out
}

// ── Saliency projection ─────────────────────────────────────────────────

/// Projects a `C x H x W` feature onto its first right singular direction
/// and min-max normalizes the result into `[0, 1]` over the `H x W` plane.
///
/// The projection is the first principal component of the channel-major
/// feature matrix: `p = s_1 * v_1` reshaped to `H x W`. Degenerate planes
/// fall back to flat maps: an all-constant positive projection becomes all
/// ones, an all-zero (or non-positive constant) projection becomes zeros.
pub fn eigencam_map<T: Element>(
    feature: &[T],
    c: usize,
    h: usize,
    w: usize,
) -> Result<Vec<T>, SpectralError> {
    let hw = h * w;
    if c == 0 || hw == 0 {
        return Err(SpectralError::EmptyMatrix { rows: c, cols: hw });
    }
    if feature.len() != c * hw {
        return Err(SpectralError::SizeMismatch { rows: c, cols: hw, len: feature.len() });
    }
    let d = svd(feature, c, hw)?;
    let m = d.rank_dim();
    let mut plane = vec![T::zero(); hw];
    for i in 0..hw {
        plane[i] = d.s[0] * d.v[i * m];
    }
    // Orient the component so its mass is non-negative; the SVD sign is
    // arbitrary and saliency should not flip with it.
    let total: T = plane.iter().fold(T::zero(), |acc, &p| acc + p);
    if total < T::zero() {
        for p in plane.iter_mut() {
            *p = -*p;
        }
    }
    let mut lo = plane[0];
    let mut hi = plane[0];
    for &p in &plane[1..] {
        if p < lo {
            lo = p;
        }
        if p > hi {
            hi = p;
        }
    }
    if hi > lo {
        let inv = T::one() / (hi - lo);
        for p in plane.iter_mut() {
            *p = (*p - lo) * inv;
        }
    } else if hi > T::zero() {
        for p in plane.iter_mut() {
            *p = T::one();
        }
    } else {
        for p in plane.iter_mut() {
            *p = T::zero();
        }
    }
    Ok(plane)
}

// ── Tests ───────────────────────────────────────────────────────────────
