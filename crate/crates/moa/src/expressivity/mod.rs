//! Executable expressivity analysis: witness targets, theory networks,
//! Sobolev-type grid distances, jump profiles across the x2 = 0 ridge,
//! and class-fitting experiments against the theoretical lower bounds.

pub mod fit;
pub mod network;
pub mod target;

pub use fit::{
    fit_class, witness_csv, witness_suite, FitBudget, FitResult, RowCheck, WitnessRow,
    WitnessSuite,
};
pub use network::{exact_construct, theory_dictionary, Family, TheoryNetwork};
pub use target::{TargetEval, WitnessTarget};

use crate::error::{Error, Result};

/// Anything with a value and a gradient on the witness domain.
pub trait Evaluable {
    fn dim(&self) -> usize;
    /// (value, gradient); on kinks the gradient is one-sided.
    fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

impl Evaluable for WitnessTarget {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let e = self.eval(x);
        (e.value, e.gradient)
    }
}

impl Evaluable for TheoryNetwork {
    fn dim(&self) -> usize {
        self.input_dim
    }

    fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.eval(x)
    }
}

/// The constant zero function, handy as a distance reference.
pub struct ZeroFunction(pub usize);

impl Evaluable for ZeroFunction {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (0.0, vec![0.0; x.len()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
    /// Points within this distance of a coordinate hyperplane x_i = 0 are
    /// excluded, keeping one-sided kink neighborhoods out of the sup.
    pub kink_exclusion_radius: f64,
}

impl GridSpec {
    pub fn new(dim: usize, points_per_axis: usize) -> Result<GridSpec> {
        let spec = GridSpec {
            dim,
            half_width: 1.0,
            points_per_axis,
            kink_exclusion_radius: 1.5 * 2.0 / (points_per_axis.max(2) - 1) as f64,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default witness grid: 401 points per axis on [-1, 1]^dim.
    pub fn default_witness(dim: usize) -> GridSpec {
        GridSpec::new(dim, 401).expect("default grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Config("grid dim must be 1 or 2".into()));
        }
        if self.points_per_axis < 3 {
            return Err(Error::Config("points_per_axis must be >= 3".into()));
        }
        if self.half_width <= 0.0 {
            return Err(Error::Config("half_width must be positive".into()));
        }
        if self.kink_exclusion_radius >= self.spacing() * self.points_per_axis as f64 {
            return Err(Error::Config(
                "kink_exclusion_radius swallows the whole grid".into(),
            ));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points_per_axis - 1) as f64
    }

    pub fn axis(&self) -> Vec<f64> {
        let n = self.points_per_axis;
        (0..n)
            .map(|i| -self.half_width + self.spacing() * i as f64)
            .collect()
    }

    fn excluded(&self, x: &[f64]) -> bool {
        x.iter().any(|v| v.abs() < self.kink_exclusion_radius)
    }

    /// All non-excluded grid points, flattened row-major.
    pub fn points(&self) -> Vec<f64> {
        let axis = self.axis();
        let mut out = Vec::new();
        match self.dim {
            1 => {
                for &t in &axis {
                    if !self.excluded(&[t]) {
                        out.push(t);
                    }
                }
            }
            _ => {
                for &x1 in &axis {
                    for &x2 in &axis {
                        if !self.excluded(&[x1, x2]) {
                            out.push(x1);
                            out.push(x2);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SobolevEstimate {
    pub sup_value_gap: f64,
    pub sup_gradient_gap: f64,
    pub grid: GridSpec,
}

impl SobolevEstimate {
    pub fn total(&self) -> f64 {
        self.sup_value_gap + self.sup_gradient_gap
    }
}

/// Grid estimate of ||f - g|| in the W^{1,infty} sense: sup |f - g| plus
/// sup of the max-norm gradient gap, over non-excluded points. A lower
/// bound of the true sup by construction.
pub fn sobolev_distance(
    f: &dyn Evaluable,
    g: &dyn Evaluable,
    grid: &GridSpec,
) -> Result<SobolevEstimate> {
    grid.validate()?;
    if f.dim() != grid.dim || g.dim() != grid.dim {
        return Err(Error::Dim(format!(
            "sobolev_distance: dims {} and {} vs grid dim {}",
            f.dim(),
            g.dim(),
            grid.dim
        )));
    }
    let mut sup_value_gap = 0.0f64;
    let mut sup_gradient_gap = 0.0f64;
    for x in grid.points().chunks(grid.dim) {
        let (fv, fg) = f.eval_with_grad(x);
        let (gv, gg) = g.eval_with_grad(x);
        let vgap = (fv - gv).abs();
        let ggap = fg
            .iter()
            .zip(&gg)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if !vgap.is_finite() || !ggap.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation at grid point {x:?}"
            )));
        }
        sup_value_gap = sup_value_gap.max(vgap);
        sup_gradient_gap = sup_gradient_gap.max(ggap);
    }
    Ok(SobolevEstimate {
        sup_value_gap,
        sup_gradient_gap,
        grid: grid.clone(),
    })
}

/// Oscillation (max - min) of a scalar function of grid points.
pub fn oscillation(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpProfile {
    pub x1_samples: Vec<f64>,
    pub jump_values: Vec<f64>,
    pub epsilon: f64,
}

impl JumpProfile {
    pub fn oscillation(&self) -> f64 {
        oscillation(&self.jump_values)
    }
}

/// Jump of the x2-derivative across the ridge x2 = 0, probed at (x1, ±eps):
/// J(x1) = d2 f(x1, +eps) - d2 f(x1, -eps).
pub fn jump_profile(f: &dyn Evaluable, x1_samples: &[f64], epsilon: f64) -> Result<JumpProfile> {
    if f.dim() != 2 {
        return Err(Error::Contract(
            "jump_profile needs a two-dimensional function".into(),
        ));
    }
    if epsilon <= 0.0 {
        return Err(Error::Range("epsilon must be positive".into()));
    }
    let jump_values = x1_samples
        .iter()
        .map(|&x1| {
            let (_, gp) = f.eval_with_grad(&[x1, epsilon]);
            let (_, gm) = f.eval_with_grad(&[x1, -epsilon]);
            gp[1] - gm[1]
        })
        .collect();
    Ok(JumpProfile {
        x1_samples: x1_samples.to_vec(),
        jump_values,
        epsilon,
    })
}

#[derive(Debug, Clone)]
pub struct JumpCheckRow {
    pub name: String,
    pub metric: f64,
    pub bound: f64,
    pub pass: bool,
}

/// The jump-profile experiment: the MoA witnesses have input-varying jump
/// amplitudes matching their closed forms, while an LA ridge lying on
/// S = {x2 = 0} has a constant jump.
pub fn jump_checks() -> Result<Vec<JumpCheckRow>> {
    use crate::expressivity::network::Family;
    let samples: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
    let eps = 1e-3;
    let mut rows = Vec::new();

    let t = WitnessTarget::tmoa_i(2.0)?;
    let p = jump_profile(&t, &samples, eps)?;
    let err = p
        .x1_samples
        .iter()
        .zip(&p.jump_values)
        .map(|(x1, j)| (j - (2.0 * x1).tanh()).abs())
        .fold(0.0, f64::max);
    rows.push(JumpCheckRow {
        name: "tmoa1_lambda2_jump_matches_tanh".into(),
        metric: err,
        bound: 1e-6,
        pass: err <= 1e-6,
    });

    let mut net = TheoryNetwork::new(Family::LaI, 1, 2)?;
    net.a = vec![1.3];
    net.w = vec![0.0, 1.0, 0.0];
    net.alpha[0] = 0.7; // ReLU
    net.alpha[5] = 0.4; // tanh, smooth across S
    let p = jump_profile(&net, &samples, eps)?;
    let osc = p.oscillation();
    rows.push(JumpCheckRow {
        name: "la_ridge_on_s_jump_oscillation".into(),
        metric: osc,
        bound: 1e-9,
        pass: osc <= 1e-9,
    });

    for lambda in [1.0, 2.0, 3.0] {
        let t = WitnessTarget::tmoa_ii(lambda)?;
        let p = jump_profile(&t, &samples, eps)?;
        let err = p
            .x1_samples
            .iter()
            .zip(&p.jump_values)
            .map(|(x1, j)| (j - x1.max(0.0) * (lambda * x1).tanh()).abs())
            .fold(0.0, f64::max);
        rows.push(JumpCheckRow {
            name: format!("tmoa2_lambda{lambda}_jump_matches_closed_form"),
            metric: err,
            bound: 1e-6,
            pass: err <= 1e-6,
        });
    }
    Ok(rows)
}

pub fn jump_checks_csv(rows: &[JumpCheckRow]) -> String {
    let mut out = String::from("check,metric,bound,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6e},{:.1e},{}\n",
            r.name, r.metric, r.bound, r.pass
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeBound {
    pub osc: f64,
    pub quarter_osc: f64,
}

/// Lower bound for approximating an adaptive ridge with constant-amplitude
/// mixtures: a quarter of the gate's oscillation along the ridge segment
/// S = {w.x + b = 0} inside [-h, h]^2.
pub fn adaptive_ridge_bound(target: &WitnessTarget, grid: &GridSpec) -> Result<RidgeBound> {
    let (u, beta, w, b) = match target {
        WitnessTarget::AdaptiveRidge { u, beta, w, b } => (u, *beta, w, *b),
        other => {
            return Err(Error::Contract(format!(
                "adaptive_ridge_bound expects an adaptive ridge, got {}",
                other.name()
            )))
        }
    };
    let wnorm = (w[0] * w[0] + w[1] * w[1]).sqrt();
    if wnorm == 0.0 {
        return Err(Error::Geometry("w = 0: the ridge set is degenerate".into()));
    }
    // parametrize S: x(s) = x0 + s * dir with dir orthogonal to w
    let x0 = [-b * w[0] / (wnorm * wnorm), -b * w[1] / (wnorm * wnorm)];
    let dir = [-w[1] / wnorm, w[0] / wnorm];
    let h = grid.half_width;
    // clip the line to the square: intersect per coordinate
    let mut s_min = f64::NEG_INFINITY;
    let mut s_max = f64::INFINITY;
    for j in 0..2 {
        if dir[j].abs() < 1e-15 {
            if x0[j].abs() > h {
                return Err(Error::Geometry("ridge does not intersect the domain".into()));
            }
        } else {
            let a = (-h - x0[j]) / dir[j];
            let c = (h - x0[j]) / dir[j];
            s_min = s_min.max(a.min(c));
            s_max = s_max.min(a.max(c));
        }
    }
    if !(s_min.is_finite() && s_max.is_finite()) || s_min > s_max {
        return Err(Error::Geometry("ridge does not intersect the domain".into()));
    }
    let n = grid.points_per_axis;
    let gate: Vec<f64> = (0..n)
        .map(|i| {
            let s = s_min + (s_max - s_min) * i as f64 / (n - 1) as f64;
            let x = [x0[0] + s * dir[0], x0[1] + s * dir[1]];
            (u[0] * x[0] + u[1] * x[1] + beta).tanh()
        })
        .collect();
    let osc = oscillation(&gate);
    Ok(RidgeBound {
        osc,
        quarter_osc: 0.25 * osc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;

    #[test]
    fn grid_excludes_kink_neighborhoods() {
        let grid = GridSpec::new(2, 401).unwrap();
        for p in grid.points().chunks(2) {
            assert!(p[0].abs() >= grid.kink_exclusion_radius);
            assert!(p[1].abs() >= grid.kink_exclusion_radius);
        }
        assert!(GridSpec::new(2, 2).is_err());
    }

    #[test]
    fn distance_to_self_is_zero() {
        let t = WitnessTarget::tmoa_i(2.0).unwrap();
        let grid = GridSpec::new(2, 101).unwrap();
        let e = sobolev_distance(&t, &t, &grid).unwrap();
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn tla1_distance_to_zero_matches_closed_form() {
        // sup |ReLU + ReLU^2| = 2 at x1 = 1; sup |1 + 2 x1| = 3 at x1 = 1
        let grid = GridSpec::new(2, 401).unwrap();
        let e = sobolev_distance(&WitnessTarget::TLaI, &ZeroFunction(2), &grid).unwrap();
        assert!((e.sup_value_gap - 2.0).abs() <= 0.02);
        assert!((e.sup_gradient_gap - 3.0).abs() <= 0.02);
        assert!((e.total() - 5.0).abs() <= 0.04);
    }

    #[test]
    fn exactness_all_four_witnesses() {
        let grid = GridSpec::default_witness(2);
        for lambda in [1.0, 2.0, 3.0] {
            for t in [
                WitnessTarget::TLaI,
                WitnessTarget::tmoa_i(lambda).unwrap(),
                WitnessTarget::TLaII,
                WitnessTarget::tmoa_ii(lambda).unwrap(),
            ] {
                let net = exact_construct(&t).unwrap();
                let e = sobolev_distance(&net, &t, &grid).unwrap();
                assert!(e.total() <= 1e-12, "{} lambda {lambda}: {}", t.name(), e.total());
            }
        }
    }

    #[test]
    fn jump_profile_of_tmoa1_is_tanh() {
        let t = WitnessTarget::tmoa_i(2.0).unwrap();
        let samples: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        let p = jump_profile(&t, &samples, 1e-3).unwrap();
        for (x1, j) in p.x1_samples.iter().zip(&p.jump_values) {
            assert!((j - (2.0 * x1).tanh()).abs() < 1e-6, "x1 {x1}: {j}");
        }
    }

    #[test]
    fn jump_profile_rejects_one_dimensional_functions() {
        let net = TheoryNetwork::new(Family::Ridge1D(ActivationKind::ReLU), 1, 1).unwrap();
        assert!(jump_profile(&net, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn ridge_on_s_la_network_has_constant_jump() {
        // Type-I LA network with one ReLU ridge lying exactly on x2 = 0
        let mut net = TheoryNetwork::new(Family::LaI, 1, 2).unwrap();
        net.a = vec![1.3];
        net.w = vec![0.0, 1.0, 0.0];
        net.alpha[0] = 0.7; // ReLU
        net.alpha[5] = 0.4; // tanh, smooth across S
        let samples: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        let p = jump_profile(&net, &samples, 1e-3).unwrap();
        assert!(p.oscillation() <= 1e-9, "osc {}", p.oscillation());
    }

    #[test]
    fn jump_profile_of_tmoa2_matches_b_lambda() {
        for lambda in [1.0, 2.0] {
            let t = WitnessTarget::tmoa_ii(lambda).unwrap();
            let samples: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
            let p = jump_profile(&t, &samples, 1e-3).unwrap();
            for (x1, j) in p.x1_samples.iter().zip(&p.jump_values) {
                let expected = x1.max(0.0) * (lambda * x1).tanh();
                assert!((j - expected).abs() < 1e-6, "x1 {x1}: {j} vs {expected}");
            }
        }
    }

    #[test]
    fn adaptive_ridge_bound_examples() {
        let grid = GridSpec::new(2, 401).unwrap();
        let mk = |u: [f64; 2]| WitnessTarget::AdaptiveRidge {
            u: u.to_vec(),
            beta: 0.0,
            w: vec![0.0, 1.0],
            b: 0.0,
        };
        let b = adaptive_ridge_bound(&mk([1.0, 0.0]), &grid).unwrap();
        assert!((b.osc - 2.0 * 1f64.tanh()).abs() < 1e-12, "{}", b.osc);
        assert!((b.quarter_osc - 0.5 * 1f64.tanh()).abs() < 1e-12);

        assert_eq!(adaptive_ridge_bound(&mk([0.0, 0.0]), &grid).unwrap().osc, 0.0);
        // gate varying only off the ridge is constant on it
        assert!(adaptive_ridge_bound(&mk([0.0, 3.0]), &grid).unwrap().osc < 1e-12);

        let off = WitnessTarget::AdaptiveRidge {
            u: vec![1.0, 0.0],
            beta: 0.0,
            w: vec![0.0, 1.0],
            b: 5.0,
        };
        assert!(adaptive_ridge_bound(&off, &grid).is_err());
        assert!(adaptive_ridge_bound(&WitnessTarget::TLaI, &grid).is_err());
    }

    #[test]
    fn documented_grid_sensitivity() {
        // the closed-form distance check is stable across grid densities
        for n in [201, 401, 801] {
            let grid = GridSpec::new(2, n).unwrap();
            let e = sobolev_distance(&WitnessTarget::TLaI, &ZeroFunction(2), &grid).unwrap();
            assert!((e.total() - 5.0).abs() <= 8.0 / (n - 1) as f64, "n {n}");
        }
    }
}
