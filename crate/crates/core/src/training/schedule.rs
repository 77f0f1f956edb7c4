use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss weight `b(t) = exp(−λ(t − t₀))`, with `λ` possibly depending on the
/// batch number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    /// `b ≡ 1`.
    Constant,
    /// Fixed `λ`.
    ExpDecay { lambda: f64 },
    /// `λ_m = 4 / (t_m − t₀ + 5)` where `t_m` is the sampling horizon.
    HorizonDecay,
    /// `λ_m = exp(−ln(100)·m/M)`, from 1 down to 0.01.
    Annealed,
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::Constant
    }
}

impl Weighting {
    pub fn validate(&self) -> Result<()> {
        if let Weighting::ExpDecay { lambda } = self {
            if !(lambda.is_finite() && *lambda >= 0.0) {
                return Err(Error::config(
                    "training.weighting.lambda",
                    "must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// Batch-number-dependent time horizon and weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub tf: f64,
    pub total_batches: u64,
    pub curriculum: bool,
    pub weighting: Weighting,
}

impl Schedule {
    /// Upper end of the sampled times at batch `m`:
    /// `t₀ + (t_f − t₀)·ln(10m/M + 1)/ln 11` with curriculum, else `t_f`.
    pub fn horizon(&self, m: u64) -> f64 {
        if !self.curriculum || m >= self.total_batches {
            return self.tf;
        }
        let frac = m as f64 / self.total_batches as f64;
        let h = self.t0 + (self.tf - self.t0) * (10.0 * frac).ln_1p() / 11f64.ln();
        h.min(self.tf)
    }

    /// Decay rate `λ_m`; zero for constant weighting.
    pub fn lambda(&self, m: u64) -> f64 {
        match self.weighting {
            Weighting::Constant => 0.0,
            Weighting::ExpDecay { lambda } => lambda,
            Weighting::HorizonDecay => 4.0 / (self.horizon(m) - self.t0 + 5.0),
            Weighting::Annealed => {
                let frac = (m as f64 / self.total_batches.max(1) as f64).min(1.0);
                (-(100f64.ln()) * frac).exp()
            }
        }
    }
}

pub fn weight(lambda: f64, t: f64, t0: f64) -> f64 {
    (-lambda * (t - t0)).exp()
}
