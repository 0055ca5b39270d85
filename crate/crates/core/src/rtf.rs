//! Relative transfer function (RTF) vector estimators.
//!
//! Three families are implemented, all working on per-bin covariance
//! matrices and all returning a vector normalised to a unit first entry:
//!
//! * covariance subtraction on the head-mounted channels,
//! * covariance whitening on either the extended (head + external) or the
//!   head-mounted channels,
//! * spatial coherence, which reads the external-microphone column of the
//!   noisy covariance and never needs a noise estimate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::{head_submatrix, CovarianceState};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, principal_eigenvector, whiten, CMatrix, EigenMethod, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RtfVariant {
    /// Head-mounted channels only, length M.
    Head,
    /// Head-mounted plus external channel, length M+1.
    Extended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtfVector {
    pub values: Vec<C64>,
    pub variant: RtfVariant,
    pub valid: bool,
}

impl RtfVector {
    pub fn invalid(len: usize, variant: RtfVariant) -> Self {
        Self {
            values: vec![C64::new(0.0, 0.0); len],
            variant,
            valid: false,
        }
    }

    /// Divides by `denominator` and pins the reference entry to exactly one.
    /// Marks the vector invalid when `|denominator| < floor`.
    fn normalized(mut values: Vec<C64>, denominator: C64, floor: f64, variant: RtfVariant) -> Self {
        let len = values.len();
        let d = denominator.norm();
        if !(d >= floor) || !d.is_finite() || d == 0.0 {
            return Self::invalid(len, variant);
        }
        values.iter_mut().for_each(|v| *v /= denominator);
        values[0] = C64::new(1.0, 0.0);
        let finite = values.iter().all(|v| v.re.is_finite() && v.im.is_finite());
        if !finite {
            return Self::invalid(len, variant);
        }
        Self {
            values,
            variant,
            valid: true,
        }
    }

    /// Drops the external entry (`E·g`).
    pub fn to_head(&self) -> RtfVector {
        match self.variant {
            RtfVariant::Head => self.clone(),
            RtfVariant::Extended => RtfVector {
                values: self.values[..self.values.len() - 1].to_vec(),
                variant: RtfVariant::Head,
                valid: self.valid,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// One-based column of the covariance difference used by the
    /// subtraction estimator.
    pub column_index: usize,
    pub diag_load_rel: f64,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub denom_floor: f64,
    #[serde(default)]
    pub eig_method: EigenMethod,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            column_index: 1,
            diag_load_rel: 1e-10,
            eig_tol: 1e-8,
            eig_max_iter: 100,
            denom_floor: 1e-12,
            eig_method: EigenMethod::Squared,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.column_index == 0 || self.column_index > dim {
            return Err(Error::config(format!(
                "column index {} outside 1..={dim}",
                self.column_index
            )));
        }
        if !(self.diag_load_rel >= 0.0 && self.eig_tol > 0.0 && self.denom_floor > 0.0) {
            return Err(Error::config("estimator tolerances must be positive"));
        }
        if self.eig_max_iter == 0 {
            return Err(Error::config("eig_max_iter must be positive"));
        }
        Ok(())
    }
}

fn check_pair(a: &CMatrix, b: &CMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::config(format!(
            "covariance matrices differ in size ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    if a.dim() == 0 {
        return Err(Error::config("empty covariance matrix"));
    }
    Ok(())
}

/// Covariance-subtraction estimate from head-mounted matrices:
/// `(Φy,h − Φn,h)·e_j / (e₁ᵀ·(Φy,h − Φn,h)·e_j)`.
pub fn estimate_cs_head(phi_y_h: &CMatrix, phi_n_h: &CMatrix, cfg: &EstimatorConfig) -> Result<RtfVector> {
    check_pair(phi_y_h, phi_n_h)?;
    cfg.validate(phi_y_h.dim())?;
    let j = cfg.column_index - 1;
    let column: Vec<C64> = (0..phi_y_h.dim())
        .map(|r| phi_y_h[(r, j)] - phi_n_h[(r, j)])
        .collect();
    let denominator = column[0];
    Ok(RtfVector::normalized(
        column,
        denominator,
        cfg.denom_floor * phi_y_h.frobenius_norm(),
        RtfVariant::Head,
    ))
}

/// Covariance-whitening estimate: the de-whitened principal eigenvector of
/// `L⁻¹·Φy·L⁻ᴴ` where `Φn = L·Lᴴ`, normalised to its first entry.
pub fn estimate_cw(
    phi_y: &CMatrix,
    phi_n: &CMatrix,
    variant: RtfVariant,
    cfg: &EstimatorConfig,
) -> Result<RtfVector> {
    check_pair(phi_y, phi_n)?;
    cfg.validate(phi_y.dim())?;
    let l = cholesky(phi_n, cfg.diag_load_rel)?;
    let whitened = whiten(&l, phi_y);
    let v = principal_eigenvector(&whitened, cfg.eig_tol, cfg.eig_max_iter, cfg.eig_method)?;
    let dewhitened = l.mul_vec(&v);
    let denominator = dewhitened[0];
    let scale = crate::linalg::norm2(&dewhitened);
    Ok(RtfVector::normalized(
        dewhitened,
        denominator,
        cfg.denom_floor * scale,
        variant,
    ))
}

/// Spatial-coherence estimate from the external-microphone (last) column
/// of the extended noisy covariance, restricted to the head channels.
pub fn estimate_sc(phi_y: &CMatrix, cfg: &EstimatorConfig) -> Result<RtfVector> {
    let p = phi_y.dim();
    if p < 2 {
        return Err(Error::config("spatial coherence needs at least one head and one external channel"));
    }
    let column: Vec<C64> = (0..p - 1).map(|r| phi_y[(r, p - 1)]).collect();
    let denominator = column[0];
    Ok(RtfVector::normalized(
        column,
        denominator,
        cfg.denom_floor * phi_y.frobenius_norm(),
        RtfVariant::Head,
    ))
}

/// The estimator menu compared by the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "cs-head")]
    CsHead,
    #[serde(rename = "cw-ext")]
    CwExt,
    #[serde(rename = "cw-head")]
    CwHead,
    #[serde(rename = "sc")]
    Sc,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::CsHead,
        Estimator::CwExt,
        Estimator::CwHead,
        Estimator::Sc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::CsHead => "cs-head",
            Estimator::CwExt => "cw-ext",
            Estimator::CwHead => "cw-head",
            Estimator::Sc => "sc",
        }
    }

    /// Whether the estimator reads the external microphone.
    pub fn needs_external(self) -> bool {
        matches!(self, Estimator::CwExt | Estimator::Sc)
    }

    pub fn needs_noise_covariance(self) -> bool {
        !matches!(self, Estimator::Sc)
    }

    /// Head-mounted RTF estimate from a covariance state. The state holds the
    /// extended matrices when `has_external` is set, head matrices otherwise.
    pub fn estimate(self, state: &CovarianceState, has_external: bool, cfg: &EstimatorConfig) -> Result<RtfVector> {
        if self.needs_external() && !has_external {
            return Err(Error::config(format!(
                "estimator {} requires the external microphone",
                self.name()
            )));
        }
        let head = |m: &CMatrix| -> Result<CMatrix> {
            if has_external {
                head_submatrix(m)
            } else {
                Ok(m.clone())
            }
        };
        match self {
            Estimator::CsHead => estimate_cs_head(&head(state.phi_y())?, &head(state.phi_n())?, cfg),
            Estimator::CwHead => estimate_cw(
                &head(state.phi_y())?,
                &head(state.phi_n())?,
                RtfVariant::Head,
                cfg,
            ),
            Estimator::CwExt => {
                Ok(estimate_cw(state.phi_y(), state.phi_n(), RtfVariant::Extended, cfg)?.to_head())
            }
            Estimator::Sc => estimate_sc(state.phi_y(), cfg),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config(format!("unknown estimator {s:?} (cs-head, cw-ext, cw-head, sc)")))
    }
}
