//! Lagrangian temperature controller for the intrinsic term.
//!
//! The multiplier `λ` rises whenever the extrinsic attack objective gets worse and decays
//! when it improves; the temperature is `τ = 1 / (1 + λ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrError {
    #[error("objective estimate {0} is not finite")]
    NonFinite(f64),
    #[error("controller is disabled; temperature is the constant {0}")]
    Disabled(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrController {
    lambda: f64,
    eta: f64,
    previous: Option<f64>,
    enabled: bool,
    constant_tau: f64,
}

impl BrController {
    /// Enabled controller with `λ₀ = 0`, so `τ₀ = 1`.
    pub fn new(eta: f64) -> Self {
        Self::with_state(eta, 0.0, None)
    }

    /// Enabled controller resumed from `λ` and a previous objective estimate.
    pub fn with_state(eta: f64, lambda: f64, previous: Option<f64>) -> Self {
        assert!(eta > 0.0 && eta.is_finite(), "step size must be positive");
        assert!(lambda >= 0.0 && lambda.is_finite(), "multiplier must be non-negative");
        Self { lambda, eta, previous, enabled: true, constant_tau: 1.0 }
    }

    /// Disabled controller that always reports `tau`.
    pub fn constant(tau: f64) -> Self {
        assert!(tau > 0.0 && tau <= 1.0, "temperature must lie in (0, 1]");
        Self { lambda: 0.0, eta: 1.0, previous: None, enabled: false, constant_tau: tau }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn previous_objective(&self) -> Option<f64> {
        self.previous
    }

    pub fn temperature(&self) -> f64 {
        if self.enabled {
            1.0 / (1.0 + self.lambda)
        } else {
            self.constant_tau
        }
    }

    /// `λ ← max(0, λ − η (J_new − J_prev))`, then stores `J_new` as the reference.
    ///
    /// The first call has no reference yet; it records `J_new` and leaves `λ` unchanged.
    pub fn update(&mut self, j_new: f64) -> Result<(f64, f64), BrError> {
        if !self.enabled {
            return Err(BrError::Disabled(self.constant_tau));
        }
        if !j_new.is_finite() {
            return Err(BrError::NonFinite(j_new));
        }
        if let Some(prev) = self.previous {
            self.lambda = (self.lambda - self.eta * (j_new - prev)).max(0.0);
        }
        self.previous = Some(j_new);
        Ok((self.lambda, self.temperature()))
    }
}
