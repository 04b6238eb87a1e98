//! Two-layer theory networks for the expressivity experiments: the
//! fixed-activation, learnable-activation, and mixture-of-activations
//! classes in both flavors, plus the one-dimensional ridge classes used
//! for jump-profile analysis. All families take the augmented input
//! (x, 1), so biases live in the last weight coordinate.

use std::rc::Rc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::activations::{parse_dictionary, ActivationDictionary, ActivationKind, Flavor};
use crate::error::{Error, Result};
use crate::expressivity::target::WitnessTarget;
use crate::tensor::{Tape, Tensor};

/// Dictionary order used throughout the theory sections.
pub fn theory_dictionary(flavor: Flavor) -> ActivationDictionary {
    let code = match flavor {
        Flavor::TypeI => "rr2lgst",
        Flavor::TypeII => "irr2lgst",
    };
    parse_dictionary(code, flavor).expect("theory dictionary is well-formed")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// sum_k a_k sigma(w_k . x̄)
    FixedI(ActivationKind),
    /// sum_k a_k sum_c alpha_c sigma_c(w_k . x̄), alpha shared across units
    LaI,
    /// sum_k a_k sum_c tanh(u_c . x̄) sigma_c(w_k . x̄)
    MoaI,
    /// sum_k a_k sigma_p(w_k . x̄) sigma_q(u_k . x̄)
    FixedII(ActivationKind, ActivationKind),
    /// sum_k a_k sum_{p<=q} alpha_pq sigma_p(w_k . x̄) sigma_q(u_k . x̄)
    QdLaII,
    /// qd form with per-pair tanh gates tanh(v_pq . x̄)
    QdMoaII,
    /// one-dimensional ridge class: FixedI on scalar input
    Ridge1D(ActivationKind),
    /// one-dimensional dictionary ridge class: LaI on scalar input
    DictRidge1D,
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::FixedI(s) => format!("fixed1({})", s.name()),
            Family::LaI => "la1".into(),
            Family::MoaI => "moa1".into(),
            Family::FixedII(p, q) => format!("fixed2({},{})", p.name(), q.name()),
            Family::QdLaII => "qd-la2".into(),
            Family::QdMoaII => "qd-moa2".into(),
            Family::Ridge1D(s) => format!("ridge1d({})", s.name()),
            Family::DictRidge1D => "dict-ridge1d".into(),
        }
    }

    fn flavor(&self) -> Flavor {
        match self {
            Family::FixedII(..) | Family::QdLaII | Family::QdMoaII => Flavor::TypeII,
            _ => Flavor::TypeI,
        }
    }

    fn two_branch(&self) -> bool {
        matches!(self, Family::FixedII(..) | Family::QdLaII | Family::QdMoaII)
    }
}

#[derive(Debug, Clone)]
pub struct TheoryNetwork {
    pub family: Family,
    pub width: usize,
    pub input_dim: usize,
    pub dict: ActivationDictionary,
    /// output coefficients, length width
    pub a: Vec<f64>,
    /// first-branch ridge weights, width x (input_dim + 1), row-major
    pub w: Vec<f64>,
    /// second-branch ridge weights (Type-II families only)
    pub u: Vec<f64>,
    /// shared mixing coefficients (LA families)
    pub alpha: Vec<f64>,
    /// gate rows (MoA families): entries x (input_dim + 1)
    pub gates: Vec<f64>,
}

impl TheoryNetwork {
    pub fn new(family: Family, width: usize, input_dim: usize) -> Result<TheoryNetwork> {
        if width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        match family {
            Family::Ridge1D(_) | Family::DictRidge1D => {
                if input_dim != 1 {
                    return Err(Error::Config(
                        "ridge classes are one-dimensional".into(),
                    ));
                }
            }
            _ => {
                if input_dim < 2 {
                    return Err(Error::Config(
                        "witness families need input dimension >= 2".into(),
                    ));
                }
            }
        }
        let dict = theory_dictionary(family.flavor());
        let aug = input_dim + 1;
        let k = dict.len();
        let pairs = dict.pair_count();
        let (alpha_len, gate_rows) = match family {
            Family::LaI | Family::DictRidge1D => (k, 0),
            Family::MoaI => (0, k),
            Family::QdLaII => (pairs, 0),
            Family::QdMoaII => (0, pairs),
            _ => (0, 0),
        };
        Ok(TheoryNetwork {
            a: vec![0.0; width],
            w: vec![0.0; width * aug],
            u: if family.two_branch() {
                vec![0.0; width * aug]
            } else {
                Vec::new()
            },
            alpha: vec![0.0; alpha_len],
            gates: vec![0.0; gate_rows * aug],
            family,
            width,
            input_dim,
            dict,
        })
    }

    pub fn init_random(&mut self, rng: &mut ChaCha8Rng) {
        for v in self
            .a
            .iter_mut()
            .chain(&mut self.w)
            .chain(&mut self.u)
            .chain(&mut self.alpha)
            .chain(&mut self.gates)
        {
            *v = rng.gen_range(-1.0..1.0);
        }
    }

    pub fn param_specs(&self) -> Vec<(&'static str, usize)> {
        let mut out = vec![("a", self.a.len()), ("w", self.w.len())];
        if !self.u.is_empty() {
            out.push(("u", self.u.len()));
        }
        if !self.alpha.is_empty() {
            out.push(("alpha", self.alpha.len()));
        }
        if !self.gates.is_empty() {
            out.push(("gates", self.gates.len()));
        }
        out
    }

    pub fn param(&self, name: &str) -> &Vec<f64> {
        match name {
            "a" => &self.a,
            "w" => &self.w,
            "u" => &self.u,
            "alpha" => &self.alpha,
            "gates" => &self.gates,
            other => panic!("unknown theory parameter '{other}'"),
        }
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "a" => &mut self.a,
            "w" => &mut self.w,
            "u" => &mut self.u,
            "alpha" => &mut self.alpha,
            "gates" => &mut self.gates,
            other => panic!("unknown theory parameter '{other}'"),
        }
    }

    fn aug(&self) -> usize {
        self.input_dim + 1
    }

    fn ridge(&self, weights: &[f64], row: usize, x: &[f64]) -> f64 {
        let aug = self.aug();
        let r = &weights[row * aug..(row + 1) * aug];
        r[..self.input_dim]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + r[self.input_dim]
    }

    /// Analytic value and input gradient at one point.
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(x.len(), self.input_dim);
        let d = self.input_dim;
        let aug = self.aug();
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let kinds = &self.dict.entries;
        match self.family {
            Family::FixedI(sigma) | Family::Ridge1D(sigma) => {
                for k in 0..self.width {
                    let pre = self.ridge(&self.w, k, x);
                    value += self.a[k] * sigma.eval(pre);
                    let s = self.a[k] * sigma.deriv(pre);
                    for j in 0..d {
                        grad[j] += s * self.w[k * aug + j];
                    }
                }
            }
            Family::LaI | Family::DictRidge1D => {
                for k in 0..self.width {
                    let pre = self.ridge(&self.w, k, x);
                    let mix: f64 = kinds
                        .iter()
                        .zip(&self.alpha)
                        .map(|(s, al)| al * s.eval(pre))
                        .sum();
                    let dmix: f64 = kinds
                        .iter()
                        .zip(&self.alpha)
                        .map(|(s, al)| al * s.deriv(pre))
                        .sum();
                    value += self.a[k] * mix;
                    for j in 0..d {
                        grad[j] += self.a[k] * dmix * self.w[k * aug + j];
                    }
                }
            }
            Family::MoaI => {
                for (c, sigma) in kinds.iter().enumerate() {
                    let logit = self.ridge(&self.gates, c, x);
                    let gate = logit.tanh();
                    let dgate = 1.0 - gate * gate;
                    for k in 0..self.width {
                        let pre = self.ridge(&self.w, k, x);
                        value += self.a[k] * gate * sigma.eval(pre);
                        for j in 0..d {
                            grad[j] += self.a[k]
                                * (gate * sigma.deriv(pre) * self.w[k * aug + j]
                                    + dgate * self.gates[c * aug + j] * sigma.eval(pre));
                        }
                    }
                }
            }
            Family::FixedII(p, q) => {
                for k in 0..self.width {
                    let pre1 = self.ridge(&self.w, k, x);
                    let pre2 = self.ridge(&self.u, k, x);
                    value += self.a[k] * p.eval(pre1) * q.eval(pre2);
                    for j in 0..d {
                        grad[j] += self.a[k]
                            * (p.deriv(pre1) * self.w[k * aug + j] * q.eval(pre2)
                                + p.eval(pre1) * q.deriv(pre2) * self.u[k * aug + j]);
                    }
                }
            }
            Family::QdLaII => {
                let pairs = self.dict.pairs();
                for k in 0..self.width {
                    let pre1 = self.ridge(&self.w, k, x);
                    let pre2 = self.ridge(&self.u, k, x);
                    for (idx, &(p, q)) in pairs.iter().enumerate() {
                        let (sp, sq) = (kinds[p], kinds[q]);
                        let al = self.alpha[idx];
                        value += self.a[k] * al * sp.eval(pre1) * sq.eval(pre2);
                        for j in 0..d {
                            grad[j] += self.a[k]
                                * al
                                * (sp.deriv(pre1) * self.w[k * aug + j] * sq.eval(pre2)
                                    + sp.eval(pre1) * sq.deriv(pre2) * self.u[k * aug + j]);
                        }
                    }
                }
            }
            Family::QdMoaII => {
                let pairs = self.dict.pairs();
                for (idx, &(p, q)) in pairs.iter().enumerate() {
                    let logit = self.ridge(&self.gates, idx, x);
                    let gate = logit.tanh();
                    let dgate = 1.0 - gate * gate;
                    for k in 0..self.width {
                        let pre1 = self.ridge(&self.w, k, x);
                        let pre2 = self.ridge(&self.u, k, x);
                        let (sp, sq) = (kinds[p], kinds[q]);
                        let prod = sp.eval(pre1) * sq.eval(pre2);
                        value += self.a[k] * gate * prod;
                        for j in 0..d {
                            let dprod = sp.deriv(pre1) * self.w[k * aug + j] * sq.eval(pre2)
                                + sp.eval(pre1) * sq.deriv(pre2) * self.u[k * aug + j];
                            grad[j] += self.a[k]
                                * (gate * dprod + dgate * self.gates[idx * aug + j] * prod);
                        }
                    }
                }
            }
        }
        (value, grad)
    }

    /// Tape forward over a batch of points: returns the value column
    /// [N x 1], the gradient matrix [N x input_dim], and the parameter
    /// leaves, so the fit objective can be differentiated by parameters.
    pub fn forward_grid(
        &self,
        tape: &Rc<Tape>,
        points: &[f64],
    ) -> Result<(Tensor, Tensor, Vec<(&'static str, Tensor)>)> {
        let d = self.input_dim;
        let aug = self.aug();
        let n = points.len() / d;
        let mut aug_data = Vec::with_capacity(n * aug);
        for row in points.chunks(d) {
            aug_data.extend_from_slice(row);
            aug_data.push(1.0);
        }
        let xbar = tape.leaf(&[n, aug], aug_data, false);
        let mut bound = Vec::new();
        let mut bind = |name: &'static str, shape: Vec<usize>| -> Tensor {
            let leaf = tape.leaf(&shape, self.param(name).clone(), true);
            bound.push((name, leaf.clone()));
            leaf
        };
        let a = bind("a", vec![self.width, 1]);
        let w = bind("w", vec![self.width, aug]);
        // [m x 1] column j of the ridge weights scaled by a
        let aw = |w: &Tensor, j: usize| -> Result<Tensor> { a.hadamard(&w.slice_cols(j, 1)) };
        let pre1 = xbar.matmul(&w.transpose())?;
        let kinds = self.dict.entries.clone();

        let mut value: Option<Tensor> = None;
        let mut grads: Vec<Option<Tensor>> = vec![None; d];
        let push_val = |acc: &mut Option<Tensor>, t: Tensor| -> Result<()> {
            *acc = Some(match acc.take() {
                None => t,
                Some(prev) => prev.add(&t)?,
            });
            Ok(())
        };

        match self.family {
            Family::FixedI(sigma) | Family::Ridge1D(sigma) => {
                push_val(&mut value, pre1.activation(sigma).matmul(&a)?)?;
                let dsig = pre1.activation_deriv(sigma);
                for (j, g) in grads.iter_mut().enumerate() {
                    push_val(g, dsig.matmul(&aw(&w, j)?)?)?;
                }
            }
            Family::LaI | Family::DictRidge1D => {
                let alpha = bind("alpha", vec![kinds.len(), 1]);
                for (c, sigma) in kinds.iter().enumerate() {
                    let al = alpha.slice_rows(c, 1);
                    push_val(&mut value, pre1.activation(*sigma).matmul(&a)?.scalar_mul(&al))?;
                    let dsig = pre1.activation_deriv(*sigma);
                    for (j, g) in grads.iter_mut().enumerate() {
                        push_val(g, dsig.matmul(&aw(&w, j)?)?.scalar_mul(&al))?;
                    }
                }
            }
            Family::MoaI => {
                let gates = bind("gates", vec![kinds.len(), aug]);
                let logits = xbar.matmul(&gates.transpose())?;
                let p = logits.activation(ActivationKind::Tanh);
                let dp = logits.activation_deriv(ActivationKind::Tanh);
                for (c, sigma) in kinds.iter().enumerate() {
                    let pc = p.slice_cols(c, 1);
                    let dpc = dp.slice_cols(c, 1);
                    let branch = pre1.activation(*sigma).matmul(&a)?;
                    push_val(&mut value, branch.row_scale(&pc)?)?;
                    let dsig = pre1.activation_deriv(*sigma);
                    for (j, g) in grads.iter_mut().enumerate() {
                        let ucj = gates.slice_rows(c, 1).slice_cols(j, 1);
                        push_val(g, dsig.matmul(&aw(&w, j)?)?.row_scale(&pc)?)?;
                        push_val(g, branch.row_scale(&dpc)?.scalar_mul(&ucj))?;
                    }
                }
            }
            Family::FixedII(sp, sq) => {
                let u = bind("u", vec![self.width, aug]);
                let pre2 = xbar.matmul(&u.transpose())?;
                let (s1, s2) = (pre1.activation(sp), pre2.activation(sq));
                let (d1, d2) = (pre1.activation_deriv(sp), pre2.activation_deriv(sq));
                push_val(&mut value, s1.hadamard(&s2)?.matmul(&a)?)?;
                for (j, g) in grads.iter_mut().enumerate() {
                    push_val(g, d1.hadamard(&s2)?.matmul(&aw(&w, j)?)?)?;
                    push_val(g, s1.hadamard(&d2)?.matmul(&aw(&u, j)?)?)?;
                }
            }
            Family::QdLaII | Family::QdMoaII => {
                let u = bind("u", vec![self.width, aug]);
                let pre2 = xbar.matmul(&u.transpose())?;
                let pairs = self.dict.pairs();
                let vals1: Vec<Tensor> = kinds.iter().map(|s| pre1.activation(*s)).collect();
                let vals2: Vec<Tensor> = kinds.iter().map(|s| pre2.activation(*s)).collect();
                let ders1: Vec<Tensor> =
                    kinds.iter().map(|s| pre1.activation_deriv(*s)).collect();
                let ders2: Vec<Tensor> =
                    kinds.iter().map(|s| pre2.activation_deriv(*s)).collect();
                let qd_la = matches!(self.family, Family::QdLaII);
                let alpha = if qd_la {
                    Some(bind("alpha", vec![pairs.len(), 1]))
                } else {
                    None
                };
                let (pgate, dgate, gates) = if qd_la {
                    (None, None, None)
                } else {
                    let gates = bind("gates", vec![pairs.len(), aug]);
                    let logits = xbar.matmul(&gates.transpose())?;
                    (
                        Some(logits.activation(ActivationKind::Tanh)),
                        Some(logits.activation_deriv(ActivationKind::Tanh)),
                        Some(gates),
                    )
                };
                for (idx, &(p, q)) in pairs.iter().enumerate() {
                    let prod = vals1[p].hadamard(&vals2[q])?.matmul(&a)?;
                    let dterm = |j: usize| -> Result<Tensor> {
                        ders1[p]
                            .hadamard(&vals2[q])?
                            .matmul(&aw(&w, j)?)?
                            .add(&vals1[p].hadamard(&ders2[q])?.matmul(&aw(&u, j)?)?)
                    };
                    if let Some(alpha) = &alpha {
                        let al = alpha.slice_rows(idx, 1);
                        push_val(&mut value, prod.scalar_mul(&al))?;
                        for (j, g) in grads.iter_mut().enumerate() {
                            push_val(g, dterm(j)?.scalar_mul(&al))?;
                        }
                    } else {
                        let (pg, dg, gt) = (
                            pgate.as_ref().unwrap(),
                            dgate.as_ref().unwrap(),
                            gates.as_ref().unwrap(),
                        );
                        let pc = pg.slice_cols(idx, 1);
                        let dpc = dg.slice_cols(idx, 1);
                        push_val(&mut value, prod.row_scale(&pc)?)?;
                        for (j, g) in grads.iter_mut().enumerate() {
                            let vj = gt.slice_rows(idx, 1).slice_cols(j, 1);
                            push_val(g, dterm(j)?.row_scale(&pc)?)?;
                            push_val(g, prod.row_scale(&dpc)?.scalar_mul(&vj))?;
                        }
                    }
                }
            }
        }
        let value = value.expect("non-empty family");
        let grad_cols: Vec<Tensor> = grads.into_iter().map(|g| g.expect("grad term")).collect();
        Ok((value, Tensor::concat_cols(&grad_cols), bound))
    }
}

/// Width-1 network in the minimal representing family, with weights taken
/// verbatim from the inclusion proofs.
pub fn exact_construct(target: &WitnessTarget) -> Result<TheoryNetwork> {
    match target {
        WitnessTarget::TLaI => {
            let mut net = TheoryNetwork::new(Family::LaI, 1, 2)?;
            net.a = vec![1.0];
            net.w = vec![1.0, 0.0, 0.0];
            // alpha_ReLU = 1, alpha_ReLU^2 = 1, rest zero
            net.alpha[0] = 1.0;
            net.alpha[1] = 1.0;
            Ok(net)
        }
        WitnessTarget::TMoaI { lambda } => {
            let mut net = TheoryNetwork::new(Family::MoaI, 1, 2)?;
            net.a = vec![1.0];
            net.w = vec![0.0, 1.0, 0.0];
            // gate row for the ReLU branch is (lambda, 0, 0); zero rows
            // elsewhere make the other branches vanish through tanh(0)
            net.gates[0] = *lambda;
            Ok(net)
        }
        WitnessTarget::TLaII => {
            let mut net = TheoryNetwork::new(Family::QdLaII, 1, 2)?;
            net.a = vec![1.0];
            net.w = vec![0.0, 1.0, 0.0];
            net.u = vec![1.0, 0.0, 0.0];
            let pairs = net.dict.pairs();
            let relu = 1; // index in {id, ReLU, ReLU^2, LeakyReLU, GELU, SiLU, tanh}
            let tanh = 6;
            for (idx, &(p, q)) in pairs.iter().enumerate() {
                if p == relu && (q == relu || q == tanh) {
                    net.alpha[idx] = 1.0;
                }
            }
            Ok(net)
        }
        WitnessTarget::TMoaII { lambda } => {
            let mut net = TheoryNetwork::new(Family::QdMoaII, 1, 2)?;
            net.a = vec![1.0];
            net.w = vec![0.0, 1.0, 0.0];
            net.u = vec![1.0, 0.0, 0.0];
            let pairs = net.dict.pairs();
            let relu = 1;
            let aug = 3;
            for (idx, &(p, q)) in pairs.iter().enumerate() {
                if p == relu && q == relu {
                    net.gates[idx * aug] = *lambda;
                }
            }
            Ok(net)
        }
        WitnessTarget::AdaptiveRidge { u, beta, w, b } => {
            if u.len() != 2 || w.len() != 2 {
                return Err(Error::Contract(
                    "adaptive ridge construction is implemented for d = 2".into(),
                ));
            }
            let mut net = TheoryNetwork::new(Family::MoaI, 1, 2)?;
            net.a = vec![1.0];
            net.w = vec![w[0], w[1], *b];
            net.gates[0] = u[0];
            net.gates[1] = u[1];
            net.gates[2] = *beta;
            Ok(net)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn all_families() -> Vec<(Family, usize)> {
        vec![
            (Family::FixedI(ActivationKind::Gelu), 2),
            (Family::LaI, 2),
            (Family::MoaI, 2),
            (Family::FixedII(ActivationKind::Silu, ActivationKind::Tanh), 2),
            (Family::QdLaII, 2),
            (Family::QdMoaII, 2),
            (Family::Ridge1D(ActivationKind::ReLU), 1),
            (Family::DictRidge1D, 1),
        ]
    }

    #[test]
    fn analytic_eval_matches_tape_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (family, dim) in all_families() {
            let mut net = TheoryNetwork::new(family, 3, dim).unwrap();
            net.init_random(&mut rng);
            let points: Vec<f64> = (0..5 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tape = Tape::new();
            let (vals, grads, _) = net.forward_grid(&tape, &points).unwrap();
            let (vals, grads) = (vals.value(), grads.value());
            for (i, x) in points.chunks(dim).enumerate() {
                let (v, g) = net.eval(x);
                assert!((v - vals[i]).abs() < 1e-12, "{} value", net.family.name());
                for j in 0..dim {
                    assert!(
                        (g[j] - grads[i * dim + j]).abs() < 1e-12,
                        "{} grad {j}",
                        net.family.name()
                    );
                }
            }
        }
    }

    #[test]
    fn tape_gradient_matches_analytic_input_gradient() {
        // the tape-built gradient columns are d(value)/d(x_j): check them
        // against central differences of the analytic eval
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (family, dim) in all_families() {
            let mut net = TheoryNetwork::new(family, 2, dim).unwrap();
            net.init_random(&mut rng);
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.2..0.8)).collect();
            let (_, g) = net.eval(&x);
            let h = 1e-6;
            for j in 0..dim {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[j] += h;
                lo[j] -= h;
                let fd = (net.eval(&hi).0 - net.eval(&lo).0) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-5,
                    "{} coord {j}: {fd} vs {}",
                    net.family.name(),
                    g[j]
                );
            }
        }
    }

    #[test]
    fn exact_constructions_match_targets_pointwise() {
        let targets = vec![
            WitnessTarget::TLaI,
            WitnessTarget::tmoa_i(3.0).unwrap(),
            WitnessTarget::TLaII,
            WitnessTarget::tmoa_ii(2.0).unwrap(),
            WitnessTarget::AdaptiveRidge {
                u: vec![1.0, -0.4],
                beta: 0.3,
                w: vec![0.2, 1.0],
                b: 0.1,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for t in &targets {
            let net = exact_construct(t).unwrap();
            for _ in 0..200 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let e = t.eval(&x);
                let (v, g) = net.eval(&x);
                assert!((v - e.value).abs() <= 1e-12, "{} at {x:?}", t.name());
                if !e.on_kink {
                    for j in 0..2 {
                        assert!(
                            (g[j] - e.gradient[j]).abs() <= 1e-12,
                            "{} grad {j} at {x:?}",
                            t.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tmoa1_gate_row_is_lambda() {
        let net = exact_construct(&WitnessTarget::tmoa_i(3.0).unwrap()).unwrap();
        assert_eq!(net.gates[0], 3.0);
        assert!(net.gates[1..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn theory_dictionaries_have_expected_order() {
        let d1 = theory_dictionary(Flavor::TypeI);
        assert_eq!(d1.entries[0], ActivationKind::ReLU);
        assert_eq!(d1.entries[1], ActivationKind::ReLUSq);
        assert_eq!(d1.len(), 6);
        let d2 = theory_dictionary(Flavor::TypeII);
        assert_eq!(d2.entries[0], ActivationKind::Identity);
        assert_eq!(d2.len(), 7);
        assert_eq!(d2.pair_count(), 28);
    }
}
