//! Parameterized rewards `R_θ(z, a)` with exact parameter gradients.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::error::{AtigError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    Tabular,
    Linear,
    Mlp,
}

impl RewardVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardVariant::Tabular => "tabular",
            RewardVariant::Linear => "linear",
            RewardVariant::Mlp => "mlp",
        }
    }
}

impl FromStr for RewardVariant {
    type Err = AtigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(RewardVariant::Tabular),
            "linear" => Ok(RewardVariant::Linear),
            "mlp" => Ok(RewardVariant::Mlp),
            other => Err(AtigError::input(format!("unknown reward variant {other:?}"))),
        }
    }
}

/// What a reward model is evaluated on: nothing beyond the pair index for a
/// tabular model, a feature row per state-action pair otherwise.
#[derive(Debug, Clone)]
pub enum RewardInputs {
    Tabular { pairs: usize },
    Features(Array2<f64>),
}

impl RewardInputs {
    pub fn num_pairs(&self) -> usize {
        match self {
            RewardInputs::Tabular { pairs } => *pairs,
            RewardInputs::Features(m) => m.nrows(),
        }
    }

    /// Feature width; `None` for tabular inputs.
    pub fn dim(&self) -> Option<usize> {
        match self {
            RewardInputs::Tabular { .. } => None,
            RewardInputs::Features(m) => Some(m.ncols()),
        }
    }

    fn features(&self) -> Result<&Array2<f64>> {
        match self {
            RewardInputs::Features(m) => Ok(m),
            RewardInputs::Tabular { .. } => Err(AtigError::input("feature-based reward needs feature inputs")),
        }
    }
}

/// Fully connected network with rectifier hidden layers and a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `weights[l]` has shape `(out, in)`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn new(input: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(AtigError::input("layer widths must be positive"));
        }
        let mut rng = rng::seeded(seed);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp { weights, biases })
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    fn from_sizes(sizes: &[usize], params: &[f64]) -> Result<Self> {
        if sizes.len() < 2 || *sizes.last().unwrap() != 1 {
            return Err(AtigError::input("network must end in a single output"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            weights.push(Array2::zeros((pair[1], pair[0])));
            biases.push(Array1::zeros(pair[1]));
        }
        let mut m = Mlp { weights, biases };
        m.set_params(params)?;
        Ok(m)
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(AtigError::input(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = params[off];
                off += 1;
            }
            for v in b.iter_mut() {
                *v = params[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// Pre-activations and activations of every layer for a batch.
    fn forward_trace(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = act[l].dot(&w.t()) + b;
            let a = if l < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    fn forward(&self, x: &Array2<f64>) -> Vec<f64> {
        let (_, act) = self.forward_trace(x);
        act.last().expect("at least one layer").column(0).to_vec()
    }

    /// `Σ_i weights[i] · ∂f(x_i)/∂θ` by reverse-mode accumulation.
    fn weighted_gradient(&self, x: &Array2<f64>, weights: &[f64]) -> Vec<f64> {
        let (pre, act) = self.forward_trace(x);
        let nl = self.weights.len();
        let mut grads_w: Vec<Array2<f64>> = Vec::with_capacity(nl);
        let mut grads_b: Vec<Array1<f64>> = Vec::with_capacity(nl);
        let mut delta = Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column vector shape");
        for l in (0..nl).rev() {
            grads_w.push(delta.t().dot(&act[l]));
            grads_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                back.zip_mut_with(&pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads_w.reverse();
        grads_b.reverse();
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    /// One parameter per state-action pair.
    Tabular {
        theta: Vec<f64>,
    },
    /// `R = θᵀ f(z, a)` over supplied features.
    Linear {
        theta: Vec<f64>,
    },
    Mlp(Mlp),
}

impl RewardModel {
    pub fn tabular(pairs: usize) -> Self {
        RewardModel::Tabular {
            theta: vec![0.0; pairs],
        }
    }

    pub fn linear(dim: usize) -> Self {
        RewardModel::Linear { theta: vec![0.0; dim] }
    }

    pub fn mlp(input: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        Ok(RewardModel::Mlp(Mlp::new(input, hidden, seed)?))
    }

    /// Fresh model of `variant` sized for `inputs`.
    pub fn for_inputs(variant: RewardVariant, inputs: &RewardInputs, hidden: &[usize], seed: u64) -> Result<Self> {
        match (variant, inputs) {
            (RewardVariant::Tabular, _) => Ok(RewardModel::tabular(inputs.num_pairs())),
            (RewardVariant::Linear, RewardInputs::Features(m)) => Ok(RewardModel::linear(m.ncols())),
            (RewardVariant::Mlp, RewardInputs::Features(m)) => RewardModel::mlp(m.ncols(), hidden, seed),
            _ => Err(AtigError::input(format!(
                "{} reward needs feature inputs",
                variant.as_str()
            ))),
        }
    }

    pub fn variant(&self) -> RewardVariant {
        match self {
            RewardModel::Tabular { .. } => RewardVariant::Tabular,
            RewardModel::Linear { .. } => RewardVariant::Linear,
            RewardModel::Mlp(_) => RewardVariant::Mlp,
        }
    }

    /// Expected feature width; `None` for a tabular model.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            RewardModel::Tabular { .. } => None,
            RewardModel::Linear { theta } => Some(theta.len()),
            RewardModel::Mlp(m) => Some(m.sizes()[0]),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            RewardModel::Tabular { theta } | RewardModel::Linear { theta } => theta.len(),
            RewardModel::Mlp(m) => m.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            RewardModel::Tabular { theta } | RewardModel::Linear { theta } => theta.clone(),
            RewardModel::Mlp(m) => m.params(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        match self {
            RewardModel::Tabular { theta } | RewardModel::Linear { theta } => {
                if params.len() != theta.len() {
                    return Err(AtigError::input(format!(
                        "expected {} parameters, got {}",
                        theta.len(),
                        params.len()
                    )));
                }
                theta.copy_from_slice(params);
                Ok(())
            }
            RewardModel::Mlp(m) => m.set_params(params),
        }
    }

    /// `θ ← θ + step · direction`.
    pub fn ascend(&mut self, direction: &[f64], step: f64) -> Result<()> {
        let mut p = self.params();
        if direction.len() != p.len() {
            return Err(AtigError::input("gradient length does not match the model"));
        }
        for (t, g) in p.iter_mut().zip(direction) {
            *t += step * g;
        }
        self.set_params(&p)
    }

    fn check_inputs(&self, inputs: &RewardInputs) -> Result<()> {
        match (self, inputs) {
            (RewardModel::Tabular { theta }, _) => {
                if theta.len() != inputs.num_pairs() {
                    return Err(AtigError::input(format!(
                        "tabular reward has {} entries but the MDP has {} state-action pairs",
                        theta.len(),
                        inputs.num_pairs()
                    )));
                }
            }
            (RewardModel::Linear { theta }, _) => {
                let f = inputs.features()?;
                if f.ncols() != theta.len() {
                    return Err(AtigError::input("feature width does not match the linear reward"));
                }
            }
            (RewardModel::Mlp(m), _) => {
                let f = inputs.features()?;
                if f.ncols() != m.sizes()[0] {
                    return Err(AtigError::input("feature width does not match the network input"));
                }
            }
        }
        Ok(())
    }

    /// Reward of every state-action pair.
    pub fn rewards(&self, inputs: &RewardInputs) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        Ok(match self {
            RewardModel::Tabular { theta } => theta.clone(),
            RewardModel::Linear { theta } => inputs.features()?.dot(&Array1::from(theta.clone())).to_vec(),
            RewardModel::Mlp(m) => m.forward(inputs.features()?),
        })
    }

    /// `Σ_i weights[i] · ∂R_i/∂θ`.
    pub fn weighted_gradient(&self, inputs: &RewardInputs, weights: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        if weights.len() != inputs.num_pairs() {
            return Err(AtigError::input("one weight per state-action pair is required"));
        }
        Ok(match self {
            RewardModel::Tabular { .. } => weights.to_vec(),
            RewardModel::Linear { .. } => inputs.features()?.t().dot(&Array1::from(weights.to_vec())).to_vec(),
            RewardModel::Mlp(m) => m.weighted_gradient(inputs.features()?, weights),
        })
    }

    /// Dense Jacobian `∂R_i/∂θ_k`, one row per pair. Only sensible for small
    /// problems.
    pub fn jacobian(&self, inputs: &RewardInputs) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        let n = inputs.num_pairs();
        Ok(match self {
            RewardModel::Tabular { .. } => Array2::eye(n),
            RewardModel::Linear { .. } => inputs.features()?.clone(),
            RewardModel::Mlp(m) => {
                let f = inputs.features()?;
                let mut jac = Array2::zeros((n, m.num_params()));
                let mut onehot = vec![0.0; 1];
                for i in 0..n {
                    let row = f.row(i).insert_axis(Axis(0)).to_owned();
                    onehot[0] = 1.0;
                    let g = m.weighted_gradient(&row, &onehot);
                    jac.row_mut(i).assign(&Array1::from(g));
                }
                jac
            }
        })
    }

    /// Text form: variant tag, layer sizes, parameter count, then one
    /// parameter per line in exact round-trip notation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variant {}", self.variant().as_str());
        let dims: Vec<String> = match self {
            RewardModel::Mlp(m) => m.sizes().iter().map(|d| d.to_string()).collect(),
            _ => vec![self.num_params().to_string()],
        };
        let _ = writeln!(out, "dims {}", dims.join(" "));
        let _ = writeln!(out, "params {}", self.num_params());
        for p in self.params() {
            let _ = writeln!(out, "{p:e}");
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| AtigError::parse(source, 0, format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(AtigError::parse(source, no + 1, format!("expected `{key}`")));
            }
            Ok((no + 1, parts.map(str::to_string).collect()))
        };
        let (vline, vparts) = field("variant")?;
        let variant: RewardVariant = vparts
            .first()
            .ok_or_else(|| AtigError::parse(source, vline, "missing variant"))?
            .parse()
            .map_err(|e: AtigError| AtigError::parse(source, vline, e.to_string()))?;
        let (dline, dparts) = field("dims")?;
        let dims: Vec<usize> = dparts
            .iter()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| AtigError::parse(source, dline, "bad dimension"))?;
        let (pline, pparts) = field("params")?;
        let count: usize = pparts
            .first()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| AtigError::parse(source, pline, "bad parameter count"))?;
        let mut params = Vec::with_capacity(count);
        for (no, line) in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            params.push(
                t.parse::<f64>()
                    .map_err(|_| AtigError::parse(source, no + 1, format!("bad parameter {t:?}")))?,
            );
        }
        if params.len() != count {
            return Err(AtigError::parse(
                source,
                pline,
                format!("declared {count} parameters, found {}", params.len()),
            ));
        }
        let model = match variant {
            RewardVariant::Tabular => RewardModel::Tabular { theta: params },
            RewardVariant::Linear => RewardModel::Linear { theta: params },
            RewardVariant::Mlp => RewardModel::Mlp(
                Mlp::from_sizes(&dims, &params).map_err(|e| AtigError::parse(source, dline, e.to_string()))?,
            ),
        };
        if matches!(variant, RewardVariant::Tabular | RewardVariant::Linear) && dims != [count] {
            return Err(AtigError::parse(source, dline, "dims must equal the parameter count"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        RewardModel::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(n: usize, d: usize, seed: u64) -> RewardInputs {
        let mut r = rng::seeded(seed);
        RewardInputs::Features(Array2::from_shape_fn((n, d), |_| r.gen_range(-1.0..1.0)))
    }

    fn fd_jacobian(model: &RewardModel, inputs: &RewardInputs) -> Array2<f64> {
        let p = model.params();
        let n = inputs.num_pairs();
        let mut jac = Array2::zeros((n, p.len()));
        let h = 1e-6;
        for k in 0..p.len() {
            let mut m = model.clone();
            let mut q = p.clone();
            q[k] += h;
            m.set_params(&q).unwrap();
            let up = m.rewards(inputs).unwrap();
            q[k] -= 2.0 * h;
            m.set_params(&q).unwrap();
            let down = m.rewards(inputs).unwrap();
            for i in 0..n {
                jac[[i, k]] = (up[i] - down[i]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn mlp_jacobian_matches_finite_differences() {
        let inputs = features(6, 5, 1);
        let model = RewardModel::mlp(5, &[7, 4], 2).unwrap();
        let jac = model.jacobian(&inputs).unwrap();
        let fd = fd_jacobian(&model, &inputs);
        let err = (&jac - &fd).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-6, "max abs error {err}");
        let w: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let g = model.weighted_gradient(&inputs, &w).unwrap();
        let via_jac = jac.t().dot(&Array1::from(w));
        for (a, b) in g.iter().zip(via_jac.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_and_tabular() {
        let inputs = features(4, 3, 5);
        let mut lin = RewardModel::linear(3);
        lin.set_params(&[1.0, -2.0, 0.5]).unwrap();
        let r = lin.rewards(&inputs).unwrap();
        if let RewardInputs::Features(f) = &inputs {
            for i in 0..4 {
                let e = f[[i, 0]] - 2.0 * f[[i, 1]] + 0.5 * f[[i, 2]];
                assert!((r[i] - e).abs() < 1e-14);
            }
        }
        let tab = RewardModel::tabular(4);
        assert!(tab.rewards(&RewardInputs::Tabular { pairs: 5 }).is_err());
        assert!(lin.rewards(&RewardInputs::Tabular { pairs: 4 }).is_err());
        assert_eq!(tab.jacobian(&inputs).unwrap(), Array2::<f64>::eye(4));
    }

    #[test]
    fn model_file_round_trip() {
        let m = RewardModel::mlp(5, &[3], 9).unwrap();
        let text = m.to_text();
        let back = RewardModel::parse(&text, "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        let t = RewardModel::Tabular {
            theta: vec![0.1, -1e-300, 3.0],
        };
        assert_eq!(RewardModel::parse(&t.to_text(), "mem").unwrap(), t);
        assert!(RewardModel::parse("variant tabular\ndims 2\nparams 2\n1\n", "mem").is_err());
    }
}
