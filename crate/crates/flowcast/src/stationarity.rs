//! Unit-root testing and differencing of feature columns.
//!
//! The test regresses the first difference of a series on a constant, the
//! lagged level, and `k` lagged differences, with `k` chosen by AIC. A large
//! negative t-ratio on the lagged level rejects the unit-root null, i.e. the
//! series is treated as stationary. Columns that fail the test are replaced
//! by their first differences, and the whole table drops its first row so
//! every column keeps the same length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StationarityError {
    #[error("series too short: need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("singular regression design (constant or collinear series)")]
    SingularDesign,
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Significance level for the unit-root rejection decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    P01,
    P05,
    P10,
}

impl Significance {
    fn critical_index(self) -> usize {
        match self {
            Significance::P01 => 0,
            Significance::P05 => 1,
            Significance::P10 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PValueBracket {
    /// statistic below the 1% critical value
    Below1Pct,
    Below5Pct,
    Below10Pct,
    AtLeast10Pct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdfConfig {
    /// Largest lag considered by AIC selection. `None` uses
    /// floor(12 * (n/100)^(1/4)), capped at n/2 - 2.
    pub max_lag: Option<usize>,
    pub significance: Significance,
}

impl Default for AdfConfig {
    fn default() -> Self {
        Self { max_lag: None, significance: Significance::P05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    /// t-ratio of the lagged-level coefficient.
    pub test_statistic: f64,
    pub p_value_bracket: PValueBracket,
    /// Lagged differences included in the chosen regression.
    pub n_lags: usize,
    /// Rows in the final regression.
    pub n_obs: usize,
    /// Finite-sample critical values at 1%, 5%, 10%.
    pub critical_values: [f64; 3],
    /// True iff the statistic is below the critical value at the configured
    /// significance: the series has no unit root.
    pub reject_h0: bool,
}

/// Default lag bound: floor(12 * (n/100)^(1/4)), capped so the trimmed
/// regression keeps at least one degree of freedom.
pub fn default_max_lag(n: usize) -> Result<usize, StationarityError> {
    if n / 2 < 3 {
        return Err(StationarityError::TooShort { needed: 6, got: n });
    }
    let rule = (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    Ok(rule.min(n / 2 - 2))
}

struct OlsFit {
    beta: Vec<f64>,
    se: Vec<f64>,
    rss: f64,
    nobs: usize,
    k_params: usize,
}

impl OlsFit {
    /// Akaike information criterion of the Gaussian likelihood.
    fn aic(&self) -> f64 {
        let n = self.nobs as f64;
        n * ((2.0 * std::f64::consts::PI).ln() + (self.rss / n).ln() + 1.0)
            + 2.0 * self.k_params as f64
    }
}

/// Least squares of y on the given columns plus an intercept (appended last
/// in the coefficient vector). Columns are centered and scaled internally so
/// price-magnitude levels do not wreck the normal equations' conditioning;
/// coefficients and standard errors are reported in original units.
fn ols(y: &[f64], x_cols: &[&[f64]]) -> Result<OlsFit, StationarityError> {
    let n = y.len();
    let k = x_cols.len();
    let p = k + 1;
    if n < p + 1 {
        return Err(StationarityError::TooShort { needed: p + 1, got: n });
    }

    let mut means = vec![0.0; k];
    let mut scales = vec![0.0; k];
    let mut z = vec![vec![0.0; n]; k];
    for (j, col) in x_cols.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(StationarityError::SingularDesign);
        }
        let scale = var.sqrt();
        for i in 0..n {
            z[j][i] = (col[i] - mean) / scale;
        }
        means[j] = mean;
        scales[j] = scale;
    }

    // Normal equations G b = c over [z_1..z_k, 1].
    let mut g = vec![vec![0.0; p]; p];
    let mut c = vec![0.0; p];
    for a in 0..k {
        for b in a..k {
            let dot: f64 = z[a].iter().zip(&z[b]).map(|(u, v)| u * v).sum();
            g[a][b] = dot;
            g[b][a] = dot;
        }
        let sz: f64 = z[a].iter().sum();
        g[a][k] = sz;
        g[k][a] = sz;
        c[a] = z[a].iter().zip(y).map(|(u, v)| u * v).sum();
    }
    g[k][k] = n as f64;
    c[k] = y.iter().sum();

    let ginv = invert(&g)?;
    let beta_z: Vec<f64> =
        (0..p).map(|i| (0..p).map(|j| ginv[i][j] * c[j]).sum()).collect();

    let mut rss = 0.0;
    for i in 0..n {
        let mut fit = beta_z[k];
        for j in 0..k {
            fit += beta_z[j] * z[j][i];
        }
        let e = y[i] - fit;
        rss += e * e;
    }
    let dof = n - p;
    let s2 = rss / dof as f64;

    // Back-transform: beta_orig_j = beta_z_j / scale_j; the intercept absorbs
    // the centering. Its variance needs the full quadratic form.
    let mut beta = vec![0.0; p];
    let mut se = vec![0.0; p];
    for j in 0..k {
        beta[j] = beta_z[j] / scales[j];
        se[j] = (s2 * ginv[j][j]).sqrt() / scales[j];
    }
    beta[k] = beta_z[k] - (0..k).map(|j| beta_z[j] * means[j] / scales[j]).sum::<f64>();
    let v: Vec<f64> = (0..k).map(|j| -means[j] / scales[j]).chain(std::iter::once(1.0)).collect();
    let mut var_c = 0.0;
    for a in 0..p {
        for b in 0..p {
            var_c += v[a] * v[b] * ginv[a][b];
        }
    }
    se[k] = (s2 * var_c).sqrt();

    Ok(OlsFit { beta, se, rss, nobs: n, k_params: p })
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(g: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, StationarityError> {
    let p = g.len();
    let mut a: Vec<Vec<f64>> = g.iter().map(|row| {
        let mut r = row.clone();
        r.extend(vec![0.0; p]);
        r
    }).collect();
    for i in 0..p {
        a[i][p + i] = 1.0;
    }
    let scale = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    for col in 0..p {
        let pivot_row = (col..p).max_by(|&r1, &r2| {
            a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap()
        }).unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return Err(StationarityError::SingularDesign);
        }
        a.swap(col, pivot_row);
        let pivot = a[col][col];
        for v in &mut a[col] {
            *v /= pivot;
        }
        for row in 0..p {
            if row != col {
                let factor = a[row][col];
                if factor != 0.0 {
                    for j in 0..2 * p {
                        a[row][j] -= factor * a[col][j];
                    }
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[p..].to_vec()).collect())
}

/// Finite-sample critical values from the response-surface coefficients for
/// a constant-only regression, evaluated at the regression sample size.
fn critical_values(n_obs: usize) -> [f64; 3] {
    let t = n_obs as f64;
    [
        -3.43035 - 6.5393 / t - 16.786 / (t * t) - 79.433 / (t * t * t),
        -2.86154 - 2.8903 / t - 4.234 / (t * t) - 40.040 / (t * t * t),
        -2.56677 - 1.5384 / t - 2.809 / (t * t),
    ]
}

/// The regression at lag `k` trimmed to start at `trim`:
/// d[t] on [y[t], d[t-1], .., d[t-k], 1] for t = trim .. len(d)-1.
fn adf_fit(y: &[f64], d: &[f64], k: usize, trim: usize) -> Result<OlsFit, StationarityError> {
    let rows = d.len() - trim;
    let endog = &d[trim..];
    let level = &y[trim..trim + rows];
    let mut cols: Vec<&[f64]> = vec![level];
    let lag_cols: Vec<Vec<f64>> =
        (1..=k).map(|j| d[trim - j..trim - j + rows].to_vec()).collect();
    for c in &lag_cols {
        cols.push(c);
    }
    debug_assert_eq!(endog.len(), rows);
    ols(endog, &cols)
}

/// Unit-root test with a constant term and AIC lag selection.
///
/// Lag search fits every candidate on the sample trimmed at `max_lag` so all
/// candidates see identical rows, then refits the winner on the longest
/// sample that lag allows.
pub fn adf_test(series: &[f64], cfg: &AdfConfig) -> Result<AdfResult, StationarityError> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StationarityError::NonFinite);
    }
    let n = series.len();
    let max_lag = match cfg.max_lag {
        Some(l) => l,
        None => default_max_lag(n)?,
    };
    // Selection sample must keep at least one degree of freedom at the
    // largest candidate: rows = n - 1 - max_lag, params = max_lag + 2.
    if n < 2 * max_lag + 4 {
        return Err(StationarityError::TooShort { needed: 2 * max_lag + 4, got: n });
    }

    let d: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();

    let mut best: Option<(f64, usize)> = None;
    for k in 0..=max_lag {
        let fit = adf_fit(series, &d, k, max_lag)?;
        let aic = fit.aic();
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, k));
        }
    }
    let n_lags = best.unwrap().1;

    let fit = adf_fit(series, &d, n_lags, n_lags)?;
    let test_statistic = fit.beta[0] / fit.se[0];
    let critical = critical_values(fit.nobs);

    let p_value_bracket = if test_statistic < critical[0] {
        PValueBracket::Below1Pct
    } else if test_statistic < critical[1] {
        PValueBracket::Below5Pct
    } else if test_statistic < critical[2] {
        PValueBracket::Below10Pct
    } else {
        PValueBracket::AtLeast10Pct
    };

    Ok(AdfResult {
        test_statistic,
        p_value_bracket,
        n_lags,
        n_obs: fit.nobs,
        critical_values: critical,
        reject_h0: test_statistic < critical[cfg.significance.critical_index()],
    })
}

/// First differences: out[t] = in[t+1] - in[t], one element shorter.
pub fn difference(series: &[f64]) -> Result<Vec<f64>, StationarityError> {
    if series.len() < 2 {
        return Err(StationarityError::TooShort { needed: 2, got: series.len() });
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Per-column test outcome, serialized into the stage report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDecision {
    pub column: String,
    pub statistic: f64,
    pub lags: usize,
    /// "keep" or "difference".
    pub decision: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub significance: Significance,
    pub columns: Vec<ColumnDecision>,
    /// True when at least one column was differenced and the table dropped
    /// its first row for alignment.
    pub dropped_first_row: bool,
}

/// Tests every column and differences those that keep their unit root.
/// When any column is differenced, all columns drop their first value so the
/// table stays rectangular. Applying the function to its own output changes
/// nothing: differenced columns pass on the second run.
pub fn stationarize(
    columns: &[(String, Vec<f64>)],
    cfg: &AdfConfig,
) -> Result<(Vec<(String, Vec<f64>)>, StationarityReport), StationarityError> {
    let mut decisions = Vec::with_capacity(columns.len());
    let mut any_differenced = false;
    let mut out: Vec<(String, Vec<f64>)> = Vec::with_capacity(columns.len());

    for (name, values) in columns {
        let result = adf_test(values, cfg)?;
        let keep = result.reject_h0;
        decisions.push(ColumnDecision {
            column: name.clone(),
            statistic: result.test_statistic,
            lags: result.n_lags,
            decision: if keep { "keep".into() } else { "difference".into() },
        });
        if keep {
            out.push((name.clone(), values.clone()));
        } else {
            any_differenced = true;
            out.push((name.clone(), difference(values)?));
        }
    }

    if any_differenced {
        for (name, col) in &mut out {
            let differenced = decisions.iter().any(|d| d.column == *name && d.decision == "difference");
            if !differenced {
                col.remove(0);
            }
        }
    }

    Ok((
        out,
        StationarityReport {
            significance: cfg.significance,
            columns: decisions,
            dropped_first_row: any_differenced,
        },
    ))
}
