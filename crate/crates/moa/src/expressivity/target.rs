//! Closed-form witness targets certifying the strict inclusions between
//! fixed-activation, learnable-activation, and mixture-of-activations
//! classes, plus the general adaptive ridge family.

use crate::error::{Error, Result};

fn relu(t: f64) -> f64 {
    t.max(0.0)
}

fn step(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn sech2(t: f64) -> f64 {
    let y = t.tanh();
    1.0 - y * y
}

#[derive(Debug, Clone, PartialEq)]
pub enum WitnessTarget {
    /// ReLU(x1) + ReLU^2(x1): representable with learnable coefficients
    /// at width 1, but no single fixed activation reproduces it.
    TLaI,
    /// tanh(lambda x1) * ReLU(x2): a ridge whose kink amplitude varies
    /// along the ridge, out of reach for input-independent mixing.
    TMoaI { lambda: f64 },
    /// ReLU(x2) * (ReLU(x1) + tanh(x1)) for the gated two-branch form.
    TLaII,
    /// ReLU(x2) * ReLU(x1) * tanh(lambda x1).
    TMoaII { lambda: f64 },
    /// tanh(u.x + beta) * ReLU(w.x + b): the general adaptive ridge.
    AdaptiveRidge {
        u: Vec<f64>,
        beta: f64,
        w: Vec<f64>,
        b: f64,
    },
}

/// Value and classical gradient; `on_kink` marks the measure-zero sets
/// where the classical gradient does not exist (the reported gradient is
/// then the right-hand one).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub on_kink: bool,
}

impl WitnessTarget {
    pub fn tmoa_i(lambda: f64) -> Result<WitnessTarget> {
        if lambda <= 0.0 {
            return Err(Error::Range("lambda must be positive".into()));
        }
        Ok(WitnessTarget::TMoaI { lambda })
    }

    pub fn tmoa_ii(lambda: f64) -> Result<WitnessTarget> {
        if lambda <= 0.0 {
            return Err(Error::Range("lambda must be positive".into()));
        }
        Ok(WitnessTarget::TMoaII { lambda })
    }

    pub fn name(&self) -> &'static str {
        match self {
            WitnessTarget::TLaI => "t_la_1",
            WitnessTarget::TMoaI { .. } => "t_moa_1",
            WitnessTarget::TLaII => "t_la_2",
            WitnessTarget::TMoaII { .. } => "t_moa_2",
            WitnessTarget::AdaptiveRidge { .. } => "adaptive_ridge",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            WitnessTarget::AdaptiveRidge { w, .. } => w.len(),
            _ => 2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> TargetEval {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            WitnessTarget::TLaI => {
                let x1 = x[0];
                TargetEval {
                    value: relu(x1) + relu(x1) * relu(x1),
                    gradient: vec![step(x1) * (1.0 + 2.0 * x1), 0.0],
                    on_kink: x1 == 0.0,
                }
            }
            WitnessTarget::TMoaI { lambda } => {
                let (x1, x2) = (x[0], x[1]);
                let gate = (lambda * x1).tanh();
                TargetEval {
                    value: gate * relu(x2),
                    gradient: vec![lambda * sech2(lambda * x1) * relu(x2), gate * step(x2)],
                    on_kink: x2 == 0.0,
                }
            }
            WitnessTarget::TLaII => {
                let (x1, x2) = (x[0], x[1]);
                let inner = relu(x1) + x1.tanh();
                TargetEval {
                    value: relu(x2) * inner,
                    gradient: vec![
                        relu(x2) * (step(x1) + sech2(x1)),
                        step(x2) * inner,
                    ],
                    on_kink: x1 == 0.0 || x2 == 0.0,
                }
            }
            WitnessTarget::TMoaII { lambda } => {
                let (x1, x2) = (x[0], x[1]);
                let gate = (lambda * x1).tanh();
                TargetEval {
                    value: relu(x2) * relu(x1) * gate,
                    gradient: vec![
                        relu(x2) * (step(x1) * gate + relu(x1) * lambda * sech2(lambda * x1)),
                        step(x2) * relu(x1) * gate,
                    ],
                    on_kink: x1 == 0.0 || x2 == 0.0,
                }
            }
            WitnessTarget::AdaptiveRidge { u, beta, w, b } => {
                let udot: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + beta;
                let wdot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                let gate = udot.tanh();
                let gradient = (0..x.len())
                    .map(|j| u[j] * sech2(udot) * relu(wdot) + gate * step(wdot) * w[j])
                    .collect();
                TargetEval {
                    value: gate * relu(wdot),
                    gradient,
                    on_kink: wdot == 0.0,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tla1_plug_in() {
        let e = WitnessTarget::TLaI.eval(&[0.5, 0.3]);
        assert_eq!(e.value, 0.75);
        assert_eq!(e.gradient, vec![2.0, 0.0]);
        assert!(!e.on_kink);
        assert!(WitnessTarget::TLaI.eval(&[0.0, 0.1]).on_kink);
    }

    #[test]
    fn tmoa1_at_one_one() {
        let t = WitnessTarget::tmoa_i(2.0).unwrap();
        let e = t.eval(&[1.0, 1.0]);
        assert!((e.value - 0.9640275800758169).abs() < 1e-15);
        assert!(WitnessTarget::tmoa_i(-1.0).is_err());
    }

    #[test]
    fn tmoa2_dead_quadrant() {
        let t = WitnessTarget::tmoa_ii(1.0).unwrap();
        let e = t.eval(&[-0.3, 0.7]);
        assert_eq!(e.value, 0.0);
        assert_eq!(e.gradient, vec![0.0, 0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let targets = vec![
            WitnessTarget::TLaI,
            WitnessTarget::tmoa_i(2.0).unwrap(),
            WitnessTarget::TLaII,
            WitnessTarget::tmoa_ii(3.0).unwrap(),
            WitnessTarget::AdaptiveRidge {
                u: vec![1.5, -0.5],
                beta: 0.2,
                w: vec![0.3, 1.0],
                b: 0.1,
            },
        ];
        let points = [[0.4, 0.6], [-0.7, 0.5], [0.3, -0.8], [0.9, 0.2]];
        let h = 1e-6;
        for t in &targets {
            for p in &points {
                let e = t.eval(p);
                for j in 0..2 {
                    let mut hi = *p;
                    let mut lo = *p;
                    hi[j] += h;
                    lo[j] -= h;
                    let fd = (t.eval(&hi).value - t.eval(&lo).value) / (2.0 * h);
                    assert!(
                        (fd - e.gradient[j]).abs() < 1e-6,
                        "{} at {p:?} coord {j}: fd {fd} vs {}",
                        t.name(),
                        e.gradient[j]
                    );
                }
            }
        }
    }
}
