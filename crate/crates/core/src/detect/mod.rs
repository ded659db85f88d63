//! Homogeneous change detectors for two images of identical spatial and
//! spectral resolution.

mod chi2;
mod cva;
mod mad;

pub use chi2::{chi2_sf, chi2_threshold};
pub use cva::{cva_energy, scva_energy, threshold_map, MAX_CONDITION, RIDGE_FRACTION};
pub use mad::{fit_cca, irmad, mad_energy, IrMadConfig, IrMadResult, MadModel};

use crate::error::{Error, Result};
use crate::image::{ChangeEnergyMap, ChangeMask, ImageCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cva,
    /// CVA energy averaged over an odd `window × window` neighborhood.
    Scva { window: usize },
    Mad,
    IrMad,
}

impl Method {
    pub fn requires_multiband(&self) -> bool {
        matches!(self, Method::Mad | Method::IrMad)
    }

    /// Short label used in reports, e.g. `scva7`.
    pub fn label(&self) -> String {
        match self {
            Method::Cva => "cva".into(),
            Method::Scva { window } => format!("scva{window}"),
            Method::Mad => "mad".into(),
            Method::IrMad => "irmad".into(),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// Accepts `cva`, `scva<L>` (e.g. `scva7`), `mad` and `irmad`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "cva" => Ok(Method::Cva),
            "mad" => Ok(Method::Mad),
            "irmad" | "ir-mad" => Ok(Method::IrMad),
            other => {
                if let Some(w) = other.strip_prefix("scva") {
                    let window = w.trim_start_matches(['(', '-']).trim_end_matches(')');
                    let window: usize = window
                        .parse()
                        .map_err(|_| Error::InvalidParameter(format!("bad sCVA window in `{s}`")))?;
                    if window.is_multiple_of(2) {
                        return Err(Error::InvalidParameter(format!("sCVA window {window} must be odd")));
                    }
                    Ok(Method::Scva { window })
                } else {
                    Err(Error::InvalidParameter(format!("unknown detector `{s}`")))
                }
            }
        }
    }
}

/// How energies become decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// χ² threshold for the given false-alarm probability.
    Pfa(f64),
    /// Fixed energy threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub method: Method,
    pub decision: Decision,
    pub irmad: IrMadConfig,
}

impl DetectorConfig {
    pub fn new(method: Method, decision: Decision) -> Result<Self> {
        let cfg = DetectorConfig {
            method,
            decision,
            irmad: IrMadConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Method::Scva { window } = self.method {
            if window % 2 == 0 {
                return Err(Error::InvalidParameter(format!("sCVA window {window} must be odd")));
            }
        }
        match self.decision {
            Decision::Pfa(p) if !(p > 0.0 && p < 1.0) => Err(Error::InvalidParameter(format!(
                "false-alarm probability {p} must lie in (0, 1)"
            ))),
            Decision::Threshold(t) if !(t >= 0.0) => {
                Err(Error::InvalidParameter(format!("threshold {t} must be nonnegative")))
            }
            _ => Ok(()),
        }
    }

    /// Energy map of the configured method.
    pub fn energy(&self, y1: &ImageCube, y2: &ImageCube) -> Result<ChangeEnergyMap> {
        match self.method {
            Method::Cva => cva_energy(y1, y2),
            Method::Scva { window } => scva_energy(&cva_energy(y1, y2)?, window),
            Method::Mad => mad_energy(y1, y2, &fit_cca(y1, y2)?),
            Method::IrMad => Ok(irmad(y1, y2, &self.irmad)?.energy),
        }
    }

    /// Threshold applied to an energy map with `dof` degrees of freedom.
    pub fn threshold(&self, dof: usize) -> Result<f64> {
        match self.decision {
            Decision::Pfa(p) => chi2_threshold(dof, p),
            Decision::Threshold(t) => Ok(t),
        }
    }

    pub fn detect(&self, y1: &ImageCube, y2: &ImageCube) -> Result<(ChangeEnergyMap, ChangeMask)> {
        self.validate()?;
        let energy = self.energy(y1, y2)?;
        let mask = threshold_map(&energy, self.threshold(energy.dof())?);
        Ok((energy, mask))
    }
}
