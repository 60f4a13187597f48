use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate as a function of continuous time measured in epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Schedule {
    Constant { lr: f64 },
    /// `lr/2 * (1 + cos(pi t / epochs))` on `[0, epochs]`, zero afterwards.
    Cosine { lr: f64, epochs: f64 },
    /// The cosine shape restarted every `cycle_epochs`.
    CyclicCosine { peak_lr: f64, cycle_epochs: f64 },
    /// Zero at both cycle ends, `peak_lr` at mid-cycle, linear in between.
    CyclicTriangular { peak_lr: f64, cycle_epochs: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let (rate, span) = match *self {
            Schedule::Constant { lr } => (lr, 1.0),
            Schedule::Cosine { lr, epochs } => (lr, epochs),
            Schedule::CyclicCosine {
                peak_lr,
                cycle_epochs,
            }
            | Schedule::CyclicTriangular {
                peak_lr,
                cycle_epochs,
            } => (peak_lr, cycle_epochs),
        };
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {rate}")));
        }
        if !(span > 0.0 && span.is_finite()) {
            return Err(Error::config(format!("schedule duration must be > 0, got {span}")));
        }
        Ok(())
    }

    /// Epochs after which a cyclic schedule restarts.
    pub fn period(&self) -> Option<f64> {
        match *self {
            Schedule::CyclicCosine { cycle_epochs, .. }
            | Schedule::CyclicTriangular { cycle_epochs, .. } => Some(cycle_epochs),
            _ => None,
        }
    }

    pub fn lr_at(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::Cosine { lr, epochs } => cosine(lr, t.min(epochs), epochs),
            Schedule::CyclicCosine {
                peak_lr,
                cycle_epochs,
            } => cosine(peak_lr, t % cycle_epochs, cycle_epochs),
            Schedule::CyclicTriangular {
                peak_lr,
                cycle_epochs,
            } => {
                let tau = t % cycle_epochs;
                // min(tau, C - tau) keeps lr(t) == lr(C - t) bit-for-bit
                peak_lr * (2.0 * tau.min(cycle_epochs - tau) / cycle_epochs)
            }
        }
    }
}

fn cosine(peak: f64, t: f64, span: f64) -> f64 {
    0.5 * peak * (1.0 + (std::f64::consts::PI * t / span).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let s = Schedule::Cosine { lr: 0.0025, epochs: 102.0 };
        assert_eq!(s.lr_at(0.0), 0.0025);
        assert_eq!(s.lr_at(102.0), 0.0);
        assert_eq!(s.lr_at(500.0), 0.0);
        let unit = Schedule::Cosine { lr: 1.0, epochs: 10.0 };
        assert!((unit.lr_at(5.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn triangular_values() {
        let s = Schedule::CyclicTriangular { peak_lr: 0.04, cycle_epochs: 8.0 };
        assert!((s.lr_at(2.0) - 0.02).abs() < 1e-15);
        assert_eq!(s.lr_at(4.0), 0.04);
        assert_eq!(s.lr_at(12.0), 0.04);
        assert_eq!(s.lr_at(0.0), 0.0);
        assert_eq!(s.lr_at(8.0), 0.0);
    }

    #[test]
    fn cyclic_cosine_restarts() {
        let s = Schedule::CyclicCosine { peak_lr: 0.3, cycle_epochs: 4.0 };
        assert_eq!(s.lr_at(0.0), 0.3);
        assert_eq!(s.lr_at(4.0), 0.3);
        assert_eq!(s.lr_at(1.5), s.lr_at(9.5));
        assert!(s.lr_at(3.999) < 1e-6);
    }

    #[test]
    fn validation() {
        assert!(Schedule::Constant { lr: -1.0 }.validate().is_err());
        assert!(Schedule::Cosine { lr: 0.1, epochs: 0.0 }.validate().is_err());
        assert!(Schedule::CyclicTriangular { peak_lr: f64::NAN, cycle_epochs: 1.0 }
            .validate()
            .is_err());
        assert!(Schedule::CyclicCosine { peak_lr: 0.1, cycle_epochs: 2.0 }.validate().is_ok());
    }
}
