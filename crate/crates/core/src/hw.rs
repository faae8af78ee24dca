//! Additive Holt-Winters smoothing and robust loss functions.
//!
//! Each column of the temporal factor matrix is tracked by its own additive
//! Holt-Winters recursion (level + trend + seasonal ring of length `m`).
//! With pre-update values `l`, `b` and `s_old` (the seasonal entry from one
//! period ago) and a new observation `y`:
//!
//! ```text
//! l' = alpha * (y - s_old) + (1 - alpha) * (l + b)
//! b' = beta  * (l' - l)    + (1 - beta)  * b
//! s' = gamma * (y - l - b) + (1 - gamma) * s_old
//! ```
//!
//! and the h-step-ahead forecast is `l + h*b + s(h)`, where `s(h)` is the
//! ring entry `(h - 1) mod m` positions from the oldest.
//!
//! `hw_fit` estimates per-column smoothing parameters by minimizing the
//! in-sample one-step-ahead squared error. For fixed `(alpha, beta, gamma)`
//! the one-step errors are *affine* in the initial state (level, trend and
//! the m seasonal values), so the inner problem is solved exactly by linear
//! least squares; the outer search over the three smoothing parameters uses
//! a coarse grid followed by Nelder-Mead refinement. The whole fit is
//! deterministic.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::{fl, fu, Scalar};
use crate::solve::solve_spd_ridge;

/// Huber influence function: identity inside `[-k, k]`, clipped outside.
#[inline]
pub fn huber_psi<T: Scalar>(x: T, k: T) -> T {
    if x.abs() <= k {
        x
    } else {
        k * x.signum()
    }
}

/// Tukey biweight rho with cutoff `k` and saturation value `c`: grows from 0
/// to `c` on `[0, k]` and stays at `c` beyond.
#[inline]
pub fn biweight_rho<T: Scalar>(x: T, k: T, c: T) -> T {
    if x.abs() <= k {
        let u = x / k;
        let w = T::one() - u * u;
        c * (T::one() - w * w * w)
    } else {
        c
    }
}

/// Parameters of the robust error model: Huber cutoff, biweight cutoff and
/// saturation, and the forgetting factor of the error-scale recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig<T> {
    /// Huber cutoff `k`.
    pub huber_k: T,
    /// Biweight saturation value.
    pub biweight_c: T,
    /// Forgetting factor of the running error scale, in `[0, 1]`.
    pub phi: T,
}

impl<T: Scalar> Default for RobustConfig<T> {
    fn default() -> Self {
        RobustConfig { huber_k: fl(2.0), biweight_c: fl(2.52), phi: fl(0.01) }
    }
}

impl<T: Scalar> RobustConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_k > T::zero()) || !self.huber_k.is_finite() {
            return Err(CoreError::InvalidArgument("huber_k must be positive".into()));
        }
        if !(self.biweight_c > T::zero()) || !self.biweight_c.is_finite() {
            return Err(CoreError::InvalidArgument("biweight_c must be positive".into()));
        }
        if !(self.phi >= T::zero() && self.phi <= T::one()) {
            return Err(CoreError::InvalidArgument("phi must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-column smoothing parameters plus the shared period.
#[derive(Debug, Clone, PartialEq)]
pub struct HwParams<T> {
    alpha: Vec<T>,
    beta: Vec<T>,
    gamma: Vec<T>,
    period: usize,
}

impl<T: Scalar> HwParams<T> {
    pub fn new(alpha: Vec<T>, beta: Vec<T>, gamma: Vec<T>, period: usize) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() || alpha.len() != gamma.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "smoothing vectors must share a nonzero length, got {}/{}/{}",
                alpha.len(),
                beta.len(),
                gamma.len()
            )));
        }
        if period < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "period must be at least 2, got {period}"
            )));
        }
        let in_unit = |v: &[T]| v.iter().all(|&x| x >= T::zero() && x <= T::one());
        if !in_unit(&alpha) || !in_unit(&beta) || !in_unit(&gamma) {
            return Err(CoreError::InvalidArgument(
                "smoothing parameters must lie in [0, 1]".into(),
            ));
        }
        Ok(HwParams { alpha, beta, gamma, period })
    }

    pub fn rank(&self) -> usize {
        self.alpha.len()
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }
}

/// Holt-Winters state for all columns: level and trend vectors plus a
/// seasonal ring of the most recent `m` seasonal values per column.
///
/// The ring is stored oldest-first: row `0` is the seasonal value from `m`
/// steps ago (consumed by the next update), row `m - 1` is the newest.
#[derive(Debug, Clone, PartialEq)]
pub struct HwState<T> {
    params: HwParams<T>,
    level: Vec<T>,
    trend: Vec<T>,
    seasonal: Vec<T>, // m x rank, row-major, oldest row first
}

impl<T: Scalar> HwState<T> {
    /// Assemble a state from raw parts. `seasonal` is `m x rank` row-major,
    /// oldest row first.
    pub fn new(params: HwParams<T>, level: Vec<T>, trend: Vec<T>, seasonal: Vec<T>) -> Result<Self> {
        let r = params.rank();
        let m = params.period();
        if level.len() != r || trend.len() != r {
            return Err(CoreError::ShapeMismatch(format!(
                "level/trend must have length {r}, got {}/{}",
                level.len(),
                trend.len()
            )));
        }
        if seasonal.len() != m * r {
            return Err(CoreError::ShapeMismatch(format!(
                "seasonal ring must have {} values ({m} x {r}), got {}",
                m * r,
                seasonal.len()
            )));
        }
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !finite(&level) || !finite(&trend) || !finite(&seasonal) {
            return Err(CoreError::NonFinite("Holt-Winters state".into()));
        }
        Ok(HwState { params, level, trend, seasonal })
    }

    pub fn params(&self) -> &HwParams<T> {
        &self.params
    }

    pub fn rank(&self) -> usize {
        self.params.rank()
    }

    pub fn period(&self) -> usize {
        self.params.period()
    }

    pub fn level(&self) -> &[T] {
        &self.level
    }

    pub fn trend(&self) -> &[T] {
        &self.trend
    }

    /// Seasonal ring, `m x rank` row-major, oldest row first.
    pub fn seasonal(&self) -> &[T] {
        &self.seasonal
    }
}

/// Advance the recursion by one observation vector (one value per column).
pub fn hw_update<T: Scalar>(state: &mut HwState<T>, y: &[T]) -> Result<()> {
    let r = state.rank();
    let m = state.period();
    if y.len() != r {
        return Err(CoreError::ShapeMismatch(format!(
            "observation length {} does not match rank {r}",
            y.len()
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("Holt-Winters observation".into()));
    }
    let mut fresh = vec![T::zero(); r];
    for c in 0..r {
        let a = state.params.alpha[c];
        let b = state.params.beta[c];
        let g = state.params.gamma[c];
        let l_old = state.level[c];
        let t_old = state.trend[c];
        let s_old = state.seasonal[c]; // oldest row
        let l_new = a * (y[c] - s_old) + (T::one() - a) * (l_old + t_old);
        let t_new = b * (l_new - l_old) + (T::one() - b) * t_old;
        let s_new = g * (y[c] - l_old - t_old) + (T::one() - g) * s_old;
        state.level[c] = l_new;
        state.trend[c] = t_new;
        fresh[c] = s_new;
    }
    state.seasonal.rotate_left(r);
    let tail = (m - 1) * r;
    state.seasonal[tail..].copy_from_slice(&fresh);
    Ok(())
}

/// `h`-step-ahead forecast (`h >= 1`), one value per column.
pub fn hw_forecast<T: Scalar>(state: &HwState<T>, h: usize) -> Result<Vec<T>> {
    if h == 0 {
        return Err(CoreError::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    let r = state.rank();
    let m = state.period();
    let srow = (h - 1) % m;
    let hh = fu::<T>(h);
    let mut out = vec![T::zero(); r];
    for c in 0..r {
        out[c] = state.level[c] + hh * state.trend[c] + state.seasonal[srow * r + c];
    }
    Ok(out)
}

/// Knobs of the fitting search. Defaults balance robustness and cost; the
/// whole procedure is deterministic.
#[derive(Debug, Clone)]
pub struct HwFitOptions {
    /// Grid levels per smoothing parameter for the coarse scan.
    pub grid: Vec<f64>,
    /// How many of the best grid points seed Nelder-Mead refinement.
    pub refine_starts: usize,
    /// Maximum Nelder-Mead iterations per start.
    pub nm_max_iter: usize,
    /// Relative spread of simplex values at which refinement stops.
    pub nm_tol: f64,
}

impl Default for HwFitOptions {
    fn default() -> Self {
        HwFitOptions {
            grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            refine_starts: 4,
            nm_max_iter: 150,
            nm_tol: 1e-12,
        }
    }
}

/// Result of [`hw_fit`]: fitted parameters, the state advanced through the
/// whole series, and the per-column in-sample one-step squared error.
#[derive(Debug, Clone)]
pub struct HwFitResult<T> {
    pub params: HwParams<T>,
    pub state: HwState<T>,
    /// Sum of squared one-step-ahead errors per column.
    pub sse: Vec<T>,
}

/// Fit per-column Holt-Winters models to a `t x rank` history matrix whose
/// rows are consecutive time steps. Requires at least three full seasons.
pub fn hw_fit<T: Scalar>(series: &Matrix<T>, period: usize) -> Result<HwFitResult<T>> {
    hw_fit_with(series, period, &HwFitOptions::default())
}

/// [`hw_fit`] with explicit search options.
pub fn hw_fit_with<T: Scalar>(
    series: &Matrix<T>,
    period: usize,
    opts: &HwFitOptions,
) -> Result<HwFitResult<T>> {
    if period < 2 {
        return Err(CoreError::InvalidArgument(format!(
            "period must be at least 2, got {period}"
        )));
    }
    let t_len = series.rows();
    let rank = series.cols();
    if t_len < 3 * period {
        return Err(CoreError::InsufficientHistory { needed: 3 * period, got: t_len });
    }
    if !series.is_finite() {
        return Err(CoreError::NonFinite("temporal history".into()));
    }
    if opts.grid.is_empty() || opts.refine_starts == 0 {
        return Err(CoreError::InvalidArgument("empty fit search options".into()));
    }

    let mut alpha = vec![T::zero(); rank];
    let mut beta = vec![T::zero(); rank];
    let mut gamma = vec![T::zero(); rank];
    let mut level = vec![T::zero(); rank];
    let mut trend = vec![T::zero(); rank];
    let mut seasonal = vec![T::zero(); period * rank];
    let mut sse = vec![T::zero(); rank];

    let mut y = vec![T::zero(); t_len];
    for c in 0..rank {
        for t in 0..t_len {
            y[t] = series.get(t, c);
        }
        let fit = fit_column(&y, period, opts);
        alpha[c] = fit.alpha;
        beta[c] = fit.beta;
        gamma[c] = fit.gamma;
        sse[c] = fit.sse;
        // advance the recursion through the series to obtain the state at t_len
        let (l, b, ring) = advance_column(&y, period, fit.alpha, fit.beta, fit.gamma, &fit.init);
        level[c] = l;
        trend[c] = b;
        for (row, &s) in ring.iter().enumerate() {
            seasonal[row * rank + c] = s;
        }
    }

    let params = HwParams::new(alpha, beta, gamma, period)?;
    let state = HwState::new(params.clone(), level, trend, seasonal)?;
    Ok(HwFitResult { params, state, sse })
}

struct ColumnFit<T> {
    alpha: T,
    beta: T,
    gamma: T,
    init: Vec<T>, // level, trend, then m seasonal values oldest first
    sse: T,
}

/// One-step residuals of the recursion started from `init`
/// (`[l, b, s_-m, ..., s_-1]`), written into `resid`.
fn residuals_from_init<T: Scalar>(
    y: &[T],
    m: usize,
    a: T,
    b: T,
    g: T,
    init: &[T],
    ring: &mut [T],
    resid: &mut [T],
) {
    let mut l = init[0];
    let mut tr = init[1];
    ring.copy_from_slice(&init[2..2 + m]);
    let mut head = 0usize;
    for (t, &yt) in y.iter().enumerate() {
        let s = ring[head];
        resid[t] = yt - (l + tr + s);
        let l_new = a * (yt - s) + (T::one() - a) * (l + tr);
        let t_new = b * (l_new - l) + (T::one() - b) * tr;
        let s_new = g * (yt - l - tr) + (T::one() - g) * s;
        ring[head] = s_new;
        head += 1;
        if head == m {
            head = 0;
        }
        l = l_new;
        tr = t_new;
    }
}

/// Exact inner solve: for fixed smoothing parameters the residual vector is
/// affine in the initial state, so the optimal initial state comes from one
/// linear least-squares problem. Returns `(sse, init)`.
fn best_init_for<T: Scalar>(y: &[T], m: usize, a: T, b: T, g: T) -> (T, Vec<T>) {
    let t_len = y.len();
    let dim = m + 2;
    let mut ring = vec![T::zero(); m];
    let mut base = vec![T::zero(); t_len];
    let zero_init = vec![T::zero(); dim];
    residuals_from_init(y, m, a, b, g, &zero_init, &mut ring, &mut base);

    // unit responses: column d of the Jacobian is resid(e_d) - resid(0)
    let mut jac = vec![T::zero(); dim * t_len]; // column-major: [d * t_len + t]
    let mut probe = vec![T::zero(); t_len];
    let mut unit = vec![T::zero(); dim];
    for d in 0..dim {
        unit[d] = T::one();
        residuals_from_init(y, m, a, b, g, &unit, &mut ring, &mut probe);
        unit[d] = T::zero();
        for t in 0..t_len {
            jac[d * t_len + t] = probe[t] - base[t];
        }
    }

    // normal equations (J^T J) z = -J^T base
    let mut gram = vec![T::zero(); dim * dim];
    let mut rhs = vec![T::zero(); dim];
    for d1 in 0..dim {
        let c1 = &jac[d1 * t_len..(d1 + 1) * t_len];
        for d2 in d1..dim {
            let c2 = &jac[d2 * t_len..(d2 + 1) * t_len];
            let mut acc = T::zero();
            for t in 0..t_len {
                acc += c1[t] * c2[t];
            }
            gram[d1 * dim + d2] = acc;
            gram[d2 * dim + d1] = acc;
        }
        let mut acc = T::zero();
        for t in 0..t_len {
            acc += c1[t] * base[t];
        }
        rhs[d1] = -acc;
    }

    let init = match solve_spd_ridge(&gram, &rhs, dim, 1e-10) {
        Some(z) => z,
        None => zero_init,
    };
    let mut sse = T::zero();
    for t in 0..t_len {
        let mut e = base[t];
        for d in 0..dim {
            e += jac[d * t_len + t] * init[d];
        }
        sse += e * e;
    }
    (sse, init)
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

fn fit_column<T: Scalar>(y: &[T], m: usize, opts: &HwFitOptions) -> ColumnFit<T> {
    let eval = |p: [T; 3]| best_init_for(y, m, clamp01(p[0]), clamp01(p[1]), clamp01(p[2])).0;

    // coarse grid scan
    let mut scored: Vec<([T; 3], T)> = Vec::new();
    for &ga in &opts.grid {
        for &gb in &opts.grid {
            for &gg in &opts.grid {
                let p = [fl::<T>(ga), fl::<T>(gb), fl::<T>(gg)];
                scored.push((p, eval(p)));
            }
        }
    }
    scored.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal));

    // Nelder-Mead refinement from the best grid points
    let mut best = scored[0];
    for &(start, _) in scored.iter().take(opts.refine_starts) {
        let (p, v) = nelder_mead(&eval, start, opts.nm_max_iter, opts.nm_tol);
        if v < best.1 {
            best = (p, v);
        }
    }

    let (a, b, g) = (clamp01(best.0[0]), clamp01(best.0[1]), clamp01(best.0[2]));
    let (sse, init) = best_init_for(y, m, a, b, g);
    ColumnFit { alpha: a, beta: b, gamma: g, init, sse }
}

/// Standard Nelder-Mead on the unit cube (arguments clamped on evaluation).
fn nelder_mead<T: Scalar, F: Fn([T; 3]) -> T>(
    f: &F,
    start: [T; 3],
    max_iter: usize,
    tol: f64,
) -> ([T; 3], T) {
    let step = fl::<T>(0.15);
    let mut simplex: Vec<([T; 3], T)> = Vec::with_capacity(4);
    simplex.push((start, f(start)));
    for d in 0..3 {
        let mut p = start;
        // step towards the interior when near the upper boundary
        p[d] = if p[d] + step <= T::one() { p[d] + step } else { p[d] - step };
        simplex.push((p, f(p)));
    }

    let half = fl::<T>(0.5);
    let two = fl::<T>(2.0);
    let tol = fl::<T>(tol);
    for _ in 0..max_iter {
        simplex.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[3].1 - simplex[0].1;
        if spread <= tol * (T::one() + simplex[0].1.abs()) {
            break;
        }
        // centroid of the best three
        let mut cen = [T::zero(); 3];
        for v in simplex.iter().take(3) {
            for d in 0..3 {
                cen[d] += v.0[d];
            }
        }
        for c in cen.iter_mut() {
            *c /= fl::<T>(3.0);
        }
        let worst = simplex[3];
        let mut refl = [T::zero(); 3];
        for d in 0..3 {
            refl[d] = cen[d] + (cen[d] - worst.0[d]);
        }
        let f_refl = f(refl);
        if f_refl < simplex[0].1 {
            // try expansion
            let mut exp = [T::zero(); 3];
            for d in 0..3 {
                exp[d] = cen[d] + two * (cen[d] - worst.0[d]);
            }
            let f_exp = f(exp);
            simplex[3] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[2].1 {
            simplex[3] = (refl, f_refl);
        } else {
            // contraction
            let mut con = [T::zero(); 3];
            for d in 0..3 {
                con[d] = cen[d] + half * (worst.0[d] - cen[d]);
            }
            let f_con = f(con);
            if f_con < worst.1 {
                simplex[3] = (con, f_con);
            } else {
                // shrink towards the best vertex
                let bestp = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..3 {
                        v.0[d] = bestp[d] + half * (v.0[d] - bestp[d]);
                    }
                    v.1 = f(v.0);
                }
            }
        }
    }
    simplex.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex[0]
}

/// Run the recursion over the whole series from `init`, returning the final
/// level, trend and seasonal ring (oldest first).
fn advance_column<T: Scalar>(
    y: &[T],
    m: usize,
    a: T,
    b: T,
    g: T,
    init: &[T],
) -> (T, T, Vec<T>) {
    let mut l = init[0];
    let mut tr = init[1];
    let mut ring = init[2..2 + m].to_vec();
    let mut head = 0usize;
    for &yt in y {
        let s = ring[head];
        let l_new = a * (yt - s) + (T::one() - a) * (l + tr);
        let t_new = b * (l_new - l) + (T::one() - b) * tr;
        let s_new = g * (yt - l - tr) + (T::one() - g) * s;
        ring[head] = s_new;
        head += 1;
        if head == m {
            head = 0;
        }
        l = l_new;
        tr = t_new;
    }
    // normalize so index 0 is the oldest entry (s_{T-m})
    ring.rotate_left(head);
    (l, tr, ring)
}
