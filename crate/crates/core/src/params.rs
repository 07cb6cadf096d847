//! Model hyperparameters and the shipped presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelHyper, MaternNu};
use crate::lmm::VarianceComponents;

/// Full parameter set: kernel hyperparameters plus the four aleatory
/// variance components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub kernel: KernelHyper,
    pub variance_components: VarianceComponents,
}

impl HyperParams {
    /// Named presets: `ngmm1` (full training catalog) and `ngmm2`
    /// (400-scenario training catalog).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ngmm1" => Ok(Self {
                kernel: KernelHyper {
                    site_var: 0.098,
                    site_len: 9.352,
                    path_var: 0.073,
                    path_len: 8.566,
                    nu: MaternNu::ThreeHalves,
                },
                variance_components: VarianceComponents {
                    tau_ddot2: 0.0553,
                    phi_ddot2: 0.0663,
                    tau_dot2: 0.0360,
                    phi_dot2: 0.0545,
                },
            }),
            "ngmm2" => Ok(Self {
                kernel: KernelHyper {
                    site_var: 0.177,
                    site_len: 11.351,
                    path_var: 0.070,
                    path_len: 6.173,
                    nu: MaternNu::ThreeHalves,
                },
                variance_components: VarianceComponents {
                    tau_ddot2: 0.0567,
                    phi_ddot2: 0.0665,
                    tau_dot2: 0.0665,
                    phi_dot2: 0.0461,
                },
            }),
            other => Err(Error::arg(format!(
                "unknown preset `{other}` (expected `ngmm1` or `ngmm2`)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.variance_components.validate()
    }

    /// Total prior variance of a single record residual.
    pub fn total_variance(&self) -> f64 {
        let c = &self.variance_components;
        self.kernel.site_var
            + self.kernel.path_var
            + c.tau_dot2
            + c.phi_dot2
            + c.tau_ddot2
            + c.phi_ddot2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ["ngmm1", "ngmm2"] {
            HyperParams::preset(name).unwrap().validate().unwrap();
        }
        assert!(HyperParams::preset("ngmm3").is_err());
    }

    #[test]
    fn ngmm1_floors() {
        let c = HyperParams::preset("ngmm1").unwrap().variance_components;
        assert!(((c.tau_ddot2 + c.phi_ddot2).sqrt() - 0.349).abs() < 5e-4);
        assert!((c.phi_ddot2.sqrt() - 0.257).abs() < 5e-4);
    }
}
