//! The activation dictionary: the eight scalar primitives, their first and
//! second derivatives, and the compact-string codes (`g`, `s`, `r2`, `l`,
//! `t`, `r`, `i`) used in configs and CLI flags.

use crate::error::{Error, Result};

/// Default negative slope for `LeakyReLU`.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    ReLU,
    ReLUSq,
    LeakyReLU { slope: f64 },
    Gelu,
    Silu,
    Tanh,
    Identity,
    Sigmoid,
}

impl ActivationKind {
    pub fn leaky_default() -> Self {
        ActivationKind::LeakyReLU {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Compact code letter(s) used in dictionary strings.
    pub fn code(&self) -> &'static str {
        match self {
            ActivationKind::ReLU => "r",
            ActivationKind::ReLUSq => "r2",
            ActivationKind::LeakyReLU { .. } => "l",
            ActivationKind::Gelu => "g",
            ActivationKind::Silu => "s",
            ActivationKind::Tanh => "t",
            ActivationKind::Identity => "i",
            ActivationKind::Sigmoid => "?",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::ReLU => "ReLU",
            ActivationKind::ReLUSq => "ReLU2",
            ActivationKind::LeakyReLU { .. } => "LeakyReLU",
            ActivationKind::Gelu => "GELU",
            ActivationKind::Silu => "SiLU",
            ActivationKind::Tanh => "Tanh",
            ActivationKind::Identity => "Identity",
            ActivationKind::Sigmoid => "Sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<ActivationKind> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "relu" => Ok(ActivationKind::ReLU),
            "relu2" => Ok(ActivationKind::ReLUSq),
            "leakyrelu" => Ok(ActivationKind::leaky_default()),
            "gelu" => Ok(ActivationKind::Gelu),
            "silu" | "swish" => Ok(ActivationKind::Silu),
            "tanh" => Ok(ActivationKind::Tanh),
            "identity" | "id" => Ok(ActivationKind::Identity),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::ReLU => t.max(0.0),
            ActivationKind::ReLUSq => {
                let p = t.max(0.0);
                p * p
            }
            ActivationKind::LeakyReLU { slope } => {
                if t >= 0.0 {
                    t
                } else {
                    slope * t
                }
            }
            ActivationKind::Gelu => t * normal_cdf(t),
            ActivationKind::Silu => t * sigmoid(t),
            ActivationKind::Tanh => t.tanh(),
            ActivationKind::Identity => t,
            ActivationKind::Sigmoid => sigmoid(t),
        }
    }

    /// Analytic first derivative. Right-hand value at kink points.
    pub fn deriv(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::ReLU => {
                if t >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::ReLUSq => {
                if t >= 0.0 {
                    2.0 * t
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyReLU { slope } => {
                if t >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Gelu => normal_cdf(t) + t * normal_pdf(t),
            ActivationKind::Silu => {
                let s = sigmoid(t);
                s + t * s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let y = t.tanh();
                1.0 - y * y
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::Sigmoid => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
        }
    }

    /// Analytic second derivative; used by the expressivity fitter, which
    /// differentiates input gradients with respect to network parameters.
    pub fn deriv2(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::ReLU | ActivationKind::LeakyReLU { .. } | ActivationKind::Identity => {
                0.0
            }
            ActivationKind::ReLUSq => {
                if t >= 0.0 {
                    2.0
                } else {
                    0.0
                }
            }
            ActivationKind::Gelu => (2.0 - t * t) * normal_pdf(t),
            ActivationKind::Silu => {
                let s = sigmoid(t);
                let sp = s * (1.0 - s);
                2.0 * sp + t * sp * (1.0 - 2.0 * s)
            }
            ActivationKind::Tanh => {
                let y = t.tanh();
                -2.0 * y * (1.0 - y * y)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(t);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }

    /// True if the first derivative is discontinuous at some point.
    pub fn has_kink(&self) -> bool {
        matches!(
            self,
            ActivationKind::ReLU | ActivationKind::LeakyReLU { .. }
        )
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via erf; exact Gaussian form, not the tanh
/// approximation.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Which FFN form a dictionary is meant for. Identity is only legal for
/// Type-II, where it recovers the plain SwiGLU gating branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    TypeI,
    TypeII,
}

impl Flavor {
    pub fn name(&self) -> &'static str {
        match self {
            Flavor::TypeI => "type1",
            Flavor::TypeII => "type2",
        }
    }
}

/// Default dictionary codes per flavor: the five Type-I primitives and
/// the six Type-II ones (tanh joins for the gated form).
pub fn default_dictionary_code(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::TypeI => "gsr2lr",
        Flavor::TypeII => "gsr2ltr",
    }
}

/// Ordered activation dictionary parsed from a compact code string.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDictionary {
    pub entries: Vec<ActivationKind>,
    pub flavor: Flavor,
}

impl ActivationDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of (k, l) pairs with k <= l; the index space of qd variants.
    pub fn pair_count(&self) -> usize {
        let k = self.entries.len();
        k * (k + 1) / 2
    }

    /// Pairs in lexicographic (k, l) order with k <= l.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.entries.len();
        let mut out = Vec::with_capacity(self.pair_count());
        for k in 0..n {
            for l in k..n {
                out.push((k, l));
            }
        }
        out
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|k| k.code()).collect()
    }
}

/// Parse a compact dictionary code like `"gsr2lr"`.
///
/// Letters: g=GELU, s=SiLU, r2=ReLU², l=LeakyReLU, t=tanh, r=ReLU, and
/// i=Identity (Type-II only).
pub fn parse_dictionary(code: &str, flavor: Flavor) -> Result<ActivationDictionary> {
    let chars: Vec<char> = code.chars().collect();
    let mut entries = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let (kind, consumed) = match chars[pos] {
            'g' => (ActivationKind::Gelu, 1),
            's' => (ActivationKind::Silu, 1),
            'l' => (ActivationKind::leaky_default(), 1),
            't' => (ActivationKind::Tanh, 1),
            'i' => (ActivationKind::Identity, 1),
            'r' => {
                if chars.get(pos + 1) == Some(&'2') {
                    (ActivationKind::ReLUSq, 2)
                } else {
                    (ActivationKind::ReLU, 1)
                }
            }
            c => {
                return Err(Error::Parse(format!(
                    "unknown activation token '{c}' at position {}",
                    pos + 1
                )))
            }
        };
        if kind == ActivationKind::Identity && flavor == Flavor::TypeI {
            return Err(Error::Parse(
                "Identity activation is only allowed in Type-II dictionaries".into(),
            ));
        }
        if entries.contains(&kind) {
            return Err(Error::Parse(format!(
                "duplicate activation token '{}' at position {}",
                kind.code(),
                pos + 1
            )));
        }
        entries.push(kind);
        pos += consumed;
    }
    if entries.is_empty() {
        return Err(Error::Parse("empty activation dictionary".into()));
    }
    Ok(ActivationDictionary { entries, flavor })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_values() {
        assert_eq!(ActivationKind::ReLU.eval(-1.0), 0.0);
        assert_eq!(ActivationKind::ReLUSq.eval(2.0), 4.0);
        assert_eq!(ActivationKind::Silu.eval(0.0), 0.0);
        assert_eq!(ActivationKind::Sigmoid.eval(0.0), 0.5);
        assert_eq!(ActivationKind::Tanh.eval(0.0), 0.0);
        assert_eq!(ActivationKind::Gelu.eval(0.0), 0.0);
        assert_eq!(ActivationKind::leaky_default().eval(-2.0), -0.02);
    }

    #[test]
    fn gelu_silu_reference_values() {
        // Phi(1) = 0.841344746068543..., logistic(1) = 0.731058578630005...
        assert!((ActivationKind::Gelu.eval(1.0) - 0.8413447460685429).abs() < 1e-14);
        assert!((ActivationKind::Silu.eval(1.0) - 0.7310585786300049).abs() < 1e-14);
    }

    #[test]
    fn silu_is_x_times_sigmoid() {
        for i in -20..=20 {
            let t = i as f64 * 0.3;
            assert_eq!(ActivationKind::Silu.eval(t), t * sigmoid(t));
        }
    }

    #[test]
    fn deriv_trivial() {
        assert_eq!(ActivationKind::ReLU.deriv(3.0), 1.0);
        assert_eq!(ActivationKind::ReLU.deriv(-3.0), 0.0);
        assert_eq!(ActivationKind::ReLUSq.deriv(1.5), 3.0);
    }

    #[test]
    fn deriv_matches_finite_difference() {
        let kinds = [
            ActivationKind::ReLU,
            ActivationKind::ReLUSq,
            ActivationKind::leaky_default(),
            ActivationKind::Gelu,
            ActivationKind::Silu,
            ActivationKind::Tanh,
            ActivationKind::Identity,
            ActivationKind::Sigmoid,
        ];
        let h = 1e-6;
        for kind in kinds {
            for i in -30..=30 {
                let t = i as f64 * 0.11 + 0.005; // stays away from kinks
                if t.abs() < 1e-3 {
                    continue;
                }
                let fd = (kind.eval(t + h) - kind.eval(t - h)) / (2.0 * h);
                assert!(
                    (kind.deriv(t) - fd).abs() <= 1e-7,
                    "{} at {t}: {} vs {fd}",
                    kind.name(),
                    kind.deriv(t)
                );
            }
        }
    }

    #[test]
    fn deriv2_matches_finite_difference_of_deriv() {
        let kinds = [
            ActivationKind::ReLUSq,
            ActivationKind::Gelu,
            ActivationKind::Silu,
            ActivationKind::Tanh,
            ActivationKind::Sigmoid,
        ];
        let h = 1e-6;
        for kind in kinds {
            for i in -20..=20 {
                let t = i as f64 * 0.17 + 0.03;
                if t.abs() < 1e-2 {
                    continue;
                }
                let fd = (kind.deriv(t + h) - kind.deriv(t - h)) / (2.0 * h);
                assert!(
                    (kind.deriv2(t) - fd).abs() <= 1e-6,
                    "{} at {t}",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn parse_default_codes() {
        let d = parse_dictionary("gsr2lr", Flavor::TypeI).unwrap();
        assert_eq!(
            d.entries,
            vec![
                ActivationKind::Gelu,
                ActivationKind::Silu,
                ActivationKind::ReLUSq,
                ActivationKind::leaky_default(),
                ActivationKind::ReLU,
            ]
        );
        let d2 = parse_dictionary("gsr2", Flavor::TypeII).unwrap();
        assert_eq!(d2.len(), 3);
    }

    #[test]
    fn parse_errors() {
        let err = parse_dictionary("gx", Flavor::TypeI).unwrap_err();
        assert!(err.to_string().contains("position 2"), "{err}");
        assert!(parse_dictionary("i", Flavor::TypeI).is_err());
        assert!(parse_dictionary("gg", Flavor::TypeII).is_err());
        assert!(parse_dictionary("", Flavor::TypeI).is_err());
    }

    #[test]
    fn render_roundtrip() {
        for code in ["gsr2lr", "gsr2ltr", "r2", "gsr2", "igsr2ltr"] {
            let flavor = if code.contains('i') {
                Flavor::TypeII
            } else {
                Flavor::TypeI
            };
            let d = parse_dictionary(code, flavor).unwrap();
            assert_eq!(d.render(), code);
            assert_eq!(parse_dictionary(&d.render(), flavor).unwrap(), d);
        }
    }
}
