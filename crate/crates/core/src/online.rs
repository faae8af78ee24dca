//! Streaming phase: one gradient-refinement step per arriving slice.
//!
//! For every incoming slice the model (1) forecasts the slice from the
//! Holt-Winters state, (2) subtracts Huber-clipped outliers from the
//! residual and refreshes a per-entry running error scale, (3) takes one
//! gradient step on the masked objective
//!
//! ```text
//! f_t = ||Omega o (Y - O - [U; u])||_F^2
//!     + lambda1 * ||u - u_{t-1}||^2 + lambda2 * ||u - u_{t-m}||^2
//! ```
//!
//! for all factor matrices (evaluated at the previous factors and the
//! forecast temporal row), and (4) feeds the refined temporal row back into
//! the Holt-Winters recursion. All work is linear in the number of observed
//! entries plus the slice size for the dense outputs.

use crate::batch::BatchResult;
use crate::error::{CoreError, Result};
use crate::hw::{
    biweight_rho, huber_psi, hw_forecast, hw_update, HwState, RobustConfig,
};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tensor::{advance_index, kruskal_slice, DenseTensor, ObservationMask};

/// Configuration of the streaming phase.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig<T> {
    /// Gradient step size.
    pub mu: T,
    /// Weight of the adjacent-row temporal penalty.
    pub lambda1: T,
    /// Weight of the one-period temporal penalty.
    pub lambda2: T,
    /// Robust loss parameters.
    pub robust: RobustConfig<T>,
    /// Lower bound applied to error scales before division.
    pub sigma_floor: T,
    /// When `false`, outlier estimation is skipped (outliers fixed at zero)
    /// and the error scales are frozen. Used for ablation runs.
    pub precleaning: bool,
}

impl<T: Scalar> Default for OnlineConfig<T> {
    fn default() -> Self {
        OnlineConfig {
            mu: crate::scalar::fl(0.1),
            lambda1: crate::scalar::fl(1e-3),
            lambda2: crate::scalar::fl(1e-3),
            robust: RobustConfig::default(),
            sigma_floor: crate::scalar::fl(1e-12),
            precleaning: true,
        }
    }
}

impl<T: Scalar> OnlineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > T::zero()) || !self.mu.is_finite() {
            return Err(CoreError::InvalidArgument("mu must be positive".into()));
        }
        if !(self.lambda1 >= T::zero()) || !(self.lambda2 >= T::zero()) {
            return Err(CoreError::InvalidArgument("penalty weights must be >= 0".into()));
        }
        if !(self.sigma_floor > T::zero()) {
            return Err(CoreError::InvalidArgument("sigma_floor must be positive".into()));
        }
        self.robust.validate()
    }
}

/// Everything produced by one streaming step.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    /// Denoised, fully imputed slice reconstructed from the updated model.
    pub imputed: DenseTensor<T>,
    /// Estimated outlier component (zero at unobserved entries).
    pub outliers: DenseTensor<T>,
    /// The forecast of this slice made before seeing it.
    pub one_step_forecast: DenseTensor<T>,
    /// Observed entries in the slice.
    pub n_observed: usize,
    /// Observed entries with a nonzero outlier estimate.
    pub n_outliers_flagged: usize,
}

/// Full streaming model state.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState<T> {
    factors: Vec<Matrix<T>>,
    /// Last `m` temporal rows, flat `m x rank`, oldest first.
    temporal: Vec<T>,
    hw: HwState<T>,
    sigma: DenseTensor<T>,
    config: OnlineConfig<T>,
    t: usize,
}

impl<T: Scalar> StreamState<T> {
    /// Assemble a state from raw parts (used by checkpoint restore).
    /// `temporal` is the last `m` temporal rows, oldest first.
    pub fn from_parts(
        factors: Vec<Matrix<T>>,
        temporal: Vec<T>,
        hw: HwState<T>,
        sigma: DenseTensor<T>,
        config: OnlineConfig<T>,
        t: usize,
    ) -> Result<Self> {
        config.validate()?;
        if factors.is_empty() {
            return Err(CoreError::InvalidArgument(
                "stream state needs at least one non-temporal mode".into(),
            ));
        }
        let rank = factors[0].cols();
        for (n, m) in factors.iter().enumerate() {
            if m.cols() != rank {
                return Err(CoreError::RankMismatch(format!(
                    "mode {n} has {} columns, expected {rank}",
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(CoreError::NonFinite(format!("factor matrix {n}")));
            }
        }
        if hw.rank() != rank {
            return Err(CoreError::RankMismatch(format!(
                "Holt-Winters state has rank {}, factors have {rank}",
                hw.rank()
            )));
        }
        let m = hw.period();
        if temporal.len() != m * rank {
            return Err(CoreError::ShapeMismatch(format!(
                "temporal ring needs {} values ({m} x {rank}), got {}",
                m * rank,
                temporal.len()
            )));
        }
        if !temporal.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("temporal ring".into()));
        }
        let shape: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
        if sigma.shape() != shape.as_slice() {
            return Err(CoreError::ShapeMismatch(format!(
                "error scales {:?} vs slice shape {:?}",
                sigma.shape(),
                shape
            )));
        }
        if sigma.data().iter().any(|v| !v.is_finite() || !(*v >= T::zero())) {
            return Err(CoreError::InvalidArgument(
                "error scales must be finite and non-negative".into(),
            ));
        }
        if t < m {
            return Err(CoreError::InvalidArgument(format!(
                "current time {t} cannot precede the ring length {m}"
            )));
        }
        Ok(StreamState { factors, temporal, hw, sigma, config, t })
    }

    /// Build the initial streaming state from a batch initialization: the
    /// non-temporal factors are taken over, the temporal ring is the last
    /// `m` rows of the fitted temporal matrix, and every error scale starts
    /// at `sigma_init`.
    pub fn from_initialization(
        batch: &BatchResult<T>,
        hw: HwState<T>,
        config: OnlineConfig<T>,
        sigma_init: T,
    ) -> Result<Self> {
        config.validate()?;
        if !(sigma_init > T::zero()) || !sigma_init.is_finite() {
            return Err(CoreError::InvalidArgument("sigma_init must be positive".into()));
        }
        let temporal_mode = batch.factors.temporal_mode();
        let tm = batch.factors.matrix(temporal_mode);
        let m = hw.period();
        let rank = batch.factors.rank();
        if tm.rows() < m {
            return Err(CoreError::InsufficientHistory { needed: m, got: tm.rows() });
        }
        let mut temporal = Vec::with_capacity(m * rank);
        for i in tm.rows() - m..tm.rows() {
            temporal.extend_from_slice(tm.row(i));
        }
        let factors: Vec<Matrix<T>> = (0..batch.factors.order())
            .filter(|&n| n != temporal_mode)
            .map(|n| batch.factors.matrix(n).clone())
            .collect();
        let shape: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
        let sigma = DenseTensor::full(&shape, sigma_init.max(config.sigma_floor))?;
        let t = tm.rows();
        StreamState::from_parts(factors, temporal, hw, sigma, config, t)
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    pub fn period(&self) -> usize {
        self.hw.period()
    }

    /// Shape of one slice (rows of the non-temporal factors).
    pub fn slice_shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn factors(&self) -> &[Matrix<T>] {
        &self.factors
    }

    /// Last `m` temporal rows, flat, oldest first.
    pub fn temporal_history(&self) -> &[T] {
        &self.temporal
    }

    pub fn hw(&self) -> &HwState<T> {
        &self.hw
    }

    pub fn sigma(&self) -> &DenseTensor<T> {
        &self.sigma
    }

    pub fn config(&self) -> &OnlineConfig<T> {
        &self.config
    }

    /// Index of the next expected slice.
    pub fn time(&self) -> usize {
        self.t
    }

    fn temporal_row(&self, i: usize) -> &[T] {
        let r = self.rank();
        &self.temporal[i * r..(i + 1) * r]
    }
}

/// Forecast the next slice: the Holt-Winters one-step forecast of the
/// temporal row plus its CP expansion.
pub fn forecast_next<T: Scalar>(state: &StreamState<T>) -> Result<(Vec<T>, DenseTensor<T>)> {
    let w = hw_forecast(state.hw(), 1)?;
    let y_hat = kruskal_slice(state.factors(), &w)?;
    Ok((w, y_hat))
}

/// Forecast `h` steps ahead without mutating anything.
pub fn forecast_h<T: Scalar>(state: &StreamState<T>, h: usize) -> Result<DenseTensor<T>> {
    let w = hw_forecast(state.hw(), h)?;
    kruskal_slice(state.factors(), &w)
}

fn check_slice_shapes<T: Scalar>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
    mask: &ObservationMask,
) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != mask.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "slice {:?} vs {:?} vs mask {:?}",
            a.shape(),
            b.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

/// Split each observed residual into a clipped part and an outlier part:
/// the outlier estimate is `r - psi(r / sigma) * sigma`, zero wherever the
/// residual is within the Huber band or the entry is unobserved.
pub fn estimate_outliers<T: Scalar>(
    y: &DenseTensor<T>,
    mask: &ObservationMask,
    y_hat: &DenseTensor<T>,
    sigma: &DenseTensor<T>,
    robust: &RobustConfig<T>,
    sigma_floor: T,
) -> Result<DenseTensor<T>> {
    check_slice_shapes(y, y_hat, mask)?;
    check_slice_shapes(y, sigma, mask)?;
    let mut out = DenseTensor::zeros(y.shape())?;
    for p in 0..y.len() {
        if mask.observed_flat(p) {
            let s = sigma.data()[p].max(sigma_floor);
            let r = y.data()[p] - y_hat.data()[p];
            out.data_mut()[p] = r - huber_psi(r / s, robust.huber_k) * s;
        }
    }
    Ok(out)
}

/// Exponentially-forgetting biweight update of the squared error scales at
/// observed entries; unobserved entries carry their scale forward.
pub fn update_error_scale<T: Scalar>(
    y: &DenseTensor<T>,
    mask: &ObservationMask,
    y_hat: &DenseTensor<T>,
    sigma: &DenseTensor<T>,
    robust: &RobustConfig<T>,
    sigma_floor: T,
) -> Result<DenseTensor<T>> {
    check_slice_shapes(y, y_hat, mask)?;
    check_slice_shapes(y, sigma, mask)?;
    let mut out = sigma.clone();
    let one = T::one();
    for p in 0..y.len() {
        if mask.observed_flat(p) {
            let s = sigma.data()[p].max(sigma_floor);
            let r = (y.data()[p] - y_hat.data()[p]) / s;
            let s2 = robust.phi * biweight_rho(r, robust.huber_k, robust.biweight_c) * s * s
                + (one - robust.phi) * s * s;
            out.data_mut()[p] = s2.sqrt().max(sigma_floor);
        }
    }
    Ok(out)
}

/// One gradient step on all non-temporal factor matrices, evaluated at the
/// given factors and forecast temporal row: `U(n) += 2 mu * G(n)` with
/// `G(n)[i, r] = sum over observed entries in row i of residual * u_hat_r *
/// prod_{l != n} U(l)[i_l, r]`.
pub fn grad_update_nontemporal<T: Scalar>(
    factors: &[Matrix<T>],
    residual: &DenseTensor<T>,
    mask: &ObservationMask,
    u_hat: &[T],
    mu: T,
) -> Result<Vec<Matrix<T>>> {
    let shape: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
    if residual.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(CoreError::ShapeMismatch(format!(
            "residual {:?} / mask {:?} vs factors {:?}",
            residual.shape(),
            mask.shape(),
            shape
        )));
    }
    let rank = factors[0].cols();
    if u_hat.len() != rank {
        return Err(CoreError::RankMismatch(format!(
            "temporal row length {} vs rank {rank}",
            u_hat.len()
        )));
    }
    let n_modes = factors.len();
    let mut grads: Vec<Matrix<T>> =
        factors.iter().map(|f| Matrix::zeros(f.rows(), f.cols())).collect();
    let mut idx = vec![0usize; n_modes];
    // prefix[n] = product of factor rows over modes < n, suffix over modes > n
    let mut prefix = vec![T::one(); (n_modes + 1) * rank];
    let mut suffix = vec![T::one(); (n_modes + 1) * rank];
    for p in 0..residual.len() {
        if mask.observed_flat(p) {
            let rv = residual.data()[p];
            if !rv.is_zero() {
                for r in 0..rank {
                    prefix[r] = T::one();
                    suffix[n_modes * rank + r] = T::one();
                }
                for n in 0..n_modes {
                    let row = factors[n].row(idx[n]);
                    for r in 0..rank {
                        prefix[(n + 1) * rank + r] = prefix[n * rank + r] * row[r];
                    }
                }
                for n in (0..n_modes).rev() {
                    let row = factors[n].row(idx[n]);
                    for r in 0..rank {
                        suffix[n * rank + r] = suffix[(n + 1) * rank + r] * row[r];
                    }
                }
                for n in 0..n_modes {
                    let grow = grads[n].row_mut(idx[n]);
                    for r in 0..rank {
                        grow[r] += rv
                            * u_hat[r]
                            * prefix[n * rank + r]
                            * suffix[(n + 1) * rank + r];
                    }
                }
            }
        }
        advance_index(&mut idx, &shape);
    }
    let two_mu = mu + mu;
    let mut out = factors.to_vec();
    for n in 0..n_modes {
        let g = grads[n].data();
        for (v, &gv) in out[n].data_mut().iter_mut().zip(g) {
            *v += two_mu * gv;
        }
    }
    Ok(out)
}

/// One gradient step on the temporal row, taken from the forecast `u_hat`:
/// data term through the factor chain plus pulls toward the previous row
/// and the row one period back.
pub fn grad_update_temporal<T: Scalar>(
    factors: &[Matrix<T>],
    residual: &DenseTensor<T>,
    mask: &ObservationMask,
    u_hat: &[T],
    u_prev: &[T],
    u_lag: &[T],
    lambda1: T,
    lambda2: T,
    mu: T,
) -> Result<Vec<T>> {
    let shape: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
    if residual.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(CoreError::ShapeMismatch(format!(
            "residual {:?} / mask {:?} vs factors {:?}",
            residual.shape(),
            mask.shape(),
            shape
        )));
    }
    let rank = factors[0].cols();
    if u_hat.len() != rank || u_prev.len() != rank || u_lag.len() != rank {
        return Err(CoreError::RankMismatch("temporal row length vs rank".into()));
    }
    let n_modes = factors.len();
    let mut g = vec![T::zero(); rank];
    let mut idx = vec![0usize; n_modes];
    let mut prod = vec![T::one(); rank];
    for p in 0..residual.len() {
        if mask.observed_flat(p) {
            let rv = residual.data()[p];
            if !rv.is_zero() {
                prod.iter_mut().for_each(|v| *v = T::one());
                for n in 0..n_modes {
                    let row = factors[n].row(idx[n]);
                    for r in 0..rank {
                        prod[r] *= row[r];
                    }
                }
                for r in 0..rank {
                    g[r] += rv * prod[r];
                }
            }
        }
        advance_index(&mut idx, &shape);
    }
    let two_mu = mu + mu;
    let lam_sum = lambda1 + lambda2;
    let mut out = vec![T::zero(); rank];
    for r in 0..rank {
        out[r] = u_hat[r]
            + two_mu * (g[r] + lambda1 * u_prev[r] + lambda2 * u_lag[r] - lam_sum * u_hat[r]);
    }
    Ok(out)
}

/// The per-step objective `f_t` at an arbitrary evaluation point, for
/// gradient checking and diagnostics.
pub fn step_objective<T: Scalar>(
    factors: &[Matrix<T>],
    temporal_row: &[T],
    y: &DenseTensor<T>,
    mask: &ObservationMask,
    outliers: &DenseTensor<T>,
    u_prev: &[T],
    u_lag: &[T],
    lambda1: T,
    lambda2: T,
) -> Result<T> {
    let x_hat = kruskal_slice(factors, temporal_row)?;
    check_slice_shapes(y, &x_hat, mask)?;
    check_slice_shapes(y, outliers, mask)?;
    let mut fit = T::zero();
    for p in 0..y.len() {
        if mask.observed_flat(p) {
            let d = y.data()[p] - outliers.data()[p] - x_hat.data()[p];
            fit += d * d;
        }
    }
    let mut pen = T::zero();
    for r in 0..temporal_row.len() {
        let d1 = temporal_row[r] - u_prev[r];
        let d2 = temporal_row[r] - u_lag[r];
        pen += lambda1 * d1 * d1 + lambda2 * d2 * d2;
    }
    Ok(fit + pen)
}

/// Consume one slice: forecast it, split off outliers, refresh error
/// scales, gradient-update every factor and the temporal row, advance the
/// Holt-Winters recursion, and return the imputed slice plus diagnostics.
pub fn step<T: Scalar>(
    state: &mut StreamState<T>,
    y: &DenseTensor<T>,
    mask: &ObservationMask,
) -> Result<StepOutput<T>> {
    let shape = state.slice_shape();
    if y.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(CoreError::ShapeMismatch(format!(
            "slice {:?} / mask {:?} vs model {:?}",
            y.shape(),
            mask.shape(),
            shape
        )));
    }
    for p in mask.iter_observed() {
        if !y.data()[p].is_finite() {
            return Err(CoreError::NonFinite(format!("observed entry at flat index {p}")));
        }
    }

    let cfg = state.config.clone();
    let (u_hat, y_hat) = forecast_next(state)?;

    let (outliers, sigma_new) = if cfg.precleaning {
        let o = estimate_outliers(y, mask, &y_hat, &state.sigma, &cfg.robust, cfg.sigma_floor)?;
        let s =
            update_error_scale(y, mask, &y_hat, &state.sigma, &cfg.robust, cfg.sigma_floor)?;
        (o, Some(s))
    } else {
        (DenseTensor::zeros(&shape)?, None)
    };

    // masked residual of the cleaned slice against the forecast
    let mut residual = DenseTensor::zeros(&shape)?;
    let mut n_flagged = 0usize;
    for p in mask.iter_observed() {
        let ov = outliers.data()[p];
        if !ov.is_zero() {
            n_flagged += 1;
        }
        residual.data_mut()[p] = y.data()[p] - ov - y_hat.data()[p];
    }

    let rank = state.rank();
    let m = state.period();
    let u_prev = state.temporal_row(m - 1).to_vec();
    let u_lag = state.temporal_row(0).to_vec();

    let new_factors =
        grad_update_nontemporal(&state.factors, &residual, mask, &u_hat, cfg.mu)?;
    let u_t = grad_update_temporal(
        &state.factors,
        &residual,
        mask,
        &u_hat,
        &u_prev,
        &u_lag,
        cfg.lambda1,
        cfg.lambda2,
        cfg.mu,
    )?;

    state.factors = new_factors;
    state.temporal.rotate_left(rank);
    let tail = (m - 1) * rank;
    state.temporal[tail..].copy_from_slice(&u_t);
    hw_update(&mut state.hw, &u_t)?;
    if let Some(s) = sigma_new {
        state.sigma = s;
    }
    state.t += 1;

    let imputed = kruskal_slice(&state.factors, &u_t)?;
    Ok(StepOutput {
        imputed,
        outliers,
        one_step_forecast: y_hat,
        n_observed: mask.count_observed(),
        n_outliers_flagged: n_flagged,
    })
}
