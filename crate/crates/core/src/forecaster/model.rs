//! TFT-lite: per-variable embeddings, variable selection, a GRU encoder over
//! past and future positions, masked multi-head attention from the horizon,
//! gated residual blocks and non-crossing quantile heads.
//!
//! With `H` hidden units, `P` past variables (target + past covariates), `F`
//! future covariates and `Q` quantile levels, the parameter count is
//!
//! ```text
//! embeddings        2H(P + F)
//! vsn_past          grn(P*H, H, P)
//! vsn_future        grn(F*H, H, F)
//! encoder.gru       6H^2 + 3H
//! encoder.gate      2H^2 + 4H
//! attention         4H^2 + 4H
//! post_attention    gate 2H^2 + 4H, grn(H, H, H) = 4H^2 + 6H
//! heads             Q(H + 1)
//!
//! grn(i, h, o) = ih + h + h^2 + h + 2(ho + o) + 2o + [i != o](io + o)
//! ```

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::{ForecastError, ForecastSample, ModelConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Component group, e.g. `vsn_past` for `vsn_past.grn.fc1.weight`.
    pub fn component(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Named parameter blocks in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    total: usize,
}

impl ParamLayout {
    fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new(), total: 0 }
    }

    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) {
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, rows, cols, offset: self.total, init });
        self.total += rows * cols;
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, out: usize) {
        self.add(format!("{prefix}.weight"), fan_in, out, Init::FanIn(fan_in));
        self.add(format!("{prefix}.bias"), 1, out, Init::FanIn(fan_in));
    }

    fn norm(&mut self, prefix: &str, width: usize) {
        self.add(format!("{prefix}.gain"), 1, width, Init::Ones);
        self.add(format!("{prefix}.bias"), 1, width, Init::Zeros);
    }

    fn glu(&mut self, prefix: &str, fan_in: usize, out: usize) {
        self.linear(&format!("{prefix}.glu_gate"), fan_in, out);
        self.linear(&format!("{prefix}.glu_value"), fan_in, out);
    }

    fn grn(&mut self, prefix: &str, input: usize, hidden: usize, out: usize) {
        self.linear(&format!("{prefix}.fc1"), input, hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, hidden);
        self.glu(prefix, hidden, out);
        if input != out {
            self.linear(&format!("{prefix}.skip"), input, out);
        }
        self.norm(&format!("{prefix}.norm"), out);
    }

    fn gate(&mut self, prefix: &str, width: usize) {
        self.glu(prefix, width, width);
        self.norm(&format!("{prefix}.norm"), width);
    }

    pub fn for_config(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        let p = config.past_variables();
        let f = config.future_variables();
        let mut l = Self::new();
        for name in past_variable_names(config) {
            l.linear(&format!("embed_past.{name}"), 1, h);
        }
        for name in future_variable_names(config) {
            l.linear(&format!("embed_future.{name}"), 1, h);
        }
        l.grn("vsn_past.grn", p * h, h, p);
        l.grn("vsn_future.grn", f * h, h, f);
        l.add("encoder.gru.input".into(), h, 3 * h, Init::FanIn(h));
        l.add("encoder.gru.recurrent".into(), h, 3 * h, Init::FanIn(h));
        l.add("encoder.gru.bias".into(), 1, 3 * h, Init::FanIn(h));
        l.gate("encoder.gate", h);
        for part in ["query", "key", "value", "output"] {
            l.linear(&format!("attention.{part}"), h, h);
        }
        l.gate("post_attention.gate", h);
        l.grn("post_attention.grn", h, h, h);
        l.linear("heads", h, config.quantiles.len());
        l
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

fn past_variable_names(config: &ModelConfig) -> Vec<String> {
    std::iter::once("target".to_string())
        .chain(config.past_covariates.iter().map(|c| format!("{c:?}")))
        .collect()
}

fn future_variable_names(config: &ModelConfig) -> Vec<String> {
    config.future_covariates.iter().map(|c| format!("{c:?}")).collect()
}

/// Parameter count from the closed-form expression in the module docs.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let h = config.hidden_size;
    let p = config.past_variables();
    let f = config.future_variables();
    let q = config.quantiles.len();
    let grn = |i: usize, hid: usize, o: usize| {
        i * hid + hid + hid * hid + hid + 2 * (hid * o + o) + 2 * o + if i != o { i * o + o } else { 0 }
    };
    2 * h * (p + f)
        + grn(p * h, h, p)
        + grn(f * h, h, f)
        + 6 * h * h
        + 3 * h
        + 2 * h * h
        + 4 * h
        + 4 * h * h
        + 4 * h
        + 2 * h * h
        + 4 * h
        + grn(h, h, h)
        + q * (h + 1)
}

/// Flat parameter vector plus the configuration that gives it meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// Seed the weights were initialised from.
    pub seed: u64,
    pub params: Vec<f64>,
    layout: ParamLayout,
}

impl ModelWeights {
    pub fn from_parts(config: ModelConfig, seed: u64, params: Vec<f64>) -> Result<Self, ForecastError> {
        config.validate()?;
        let layout = ParamLayout::for_config(&config);
        if params.len() != layout.total() {
            return Err(ForecastError::Shape { what: "parameter vector", expected: layout.total(), got: params.len() });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite(format!("parameter {i}")));
        }
        Ok(Self { config, seed, params, layout })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.params[e.offset..e.offset + e.len()])
    }

    /// Bitwise equality of parameters and configuration.
    pub fn bitwise_eq(&self, other: &ModelWeights) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Deterministic initialisation: weights and biases uniform in
/// `±1/sqrt(fan_in)` of their layer, layer-norm gains 1 and offsets 0.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights, ForecastError> {
    config.validate()?;
    let layout = ParamLayout::for_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "forecaster/init"));
    let mut params = Vec::with_capacity(layout.total());
    for e in layout.entries() {
        for _ in 0..e.len() {
            params.push(match e.init {
                Init::FanIn(fan_in) => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    rng.random_range(-b..b)
                }
                Init::Ones => 1.0,
                Init::Zeros => 0.0,
            });
        }
    }
    Ok(ModelWeights { config: config.clone(), seed, params, layout })
}

/// Per-step, per-level forecast; row-major `horizon x quantiles`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub quantiles: Vec<f64>,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl QuantileForecast {
    pub fn get(&self, step: usize, level: usize) -> f64 {
        self.values[step * self.quantiles.len() + level]
    }

    /// Forecast for one level across the horizon.
    pub fn level(&self, level: usize) -> Vec<f64> {
        (0..self.horizon).map(|t| self.get(t, level)).collect()
    }

    /// Index of the level closest to `q`.
    pub fn level_index(&self, q: f64) -> usize {
        let mut best = 0;
        for (i, l) in self.quantiles.iter().enumerate() {
            if (l - q).abs() < (self.quantiles[best] - q).abs() {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> QuantileForecast {
        QuantileForecast { values: self.values.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }
}

pub(crate) struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

struct Graph<'a, 'r> {
    tape: Tape,
    weights: &'a ModelWeights,
    dropout: Option<Dropout<'r>>,
}

impl Graph<'_, '_> {
    fn w(&mut self, name: &str) -> Var {
        let e = self.weights.layout.get(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        self.tape.param(&self.weights.params, e.offset, e.rows, e.cols)
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.w(&format!("{prefix}.weight"));
        let b = self.w(&format!("{prefix}.bias"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn drop(&mut self, x: Var) -> Var {
        let Some(d) = self.dropout.as_mut() else { return x };
        if d.rate == 0.0 {
            return x;
        }
        let (r, c) = self.tape.shape(x);
        let keep = 1.0 / (1.0 - d.rate);
        let mask = (0..r * c).map(|_| if d.rng.random::<f64>() < d.rate { 0.0 } else { keep }).collect();
        self.tape.mul_const(x, mask)
    }

    fn glu(&mut self, x: Var, prefix: &str) -> Var {
        let gate = self.linear(x, &format!("{prefix}.glu_gate"));
        let gate = self.tape.sigmoid(gate);
        let value = self.linear(x, &format!("{prefix}.glu_value"));
        self.tape.mul(gate, value)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Var {
        let n = self.tape.layer_norm_rows(x);
        let gain = self.w(&format!("{prefix}.gain"));
        let bias = self.w(&format!("{prefix}.bias"));
        let n = self.tape.mul_row(n, gain);
        self.tape.add_row(n, bias)
    }

    fn grn(&mut self, a: Var, prefix: &str) -> Var {
        let h = self.linear(a, &format!("{prefix}.fc1"));
        let h = self.tape.elu(h);
        let h = self.linear(h, &format!("{prefix}.fc2"));
        let h = self.drop(h);
        let g = self.glu(h, prefix);
        let skip_name = format!("{prefix}.skip");
        let skip = if self.weights.layout.get(&format!("{skip_name}.weight")).is_some() {
            self.linear(a, &skip_name)
        } else {
            a
        };
        let sum = self.tape.add(skip, g);
        self.norm(sum, &format!("{prefix}.norm"))
    }

    /// `norm(skip + glu(dropout(x)))`
    fn gate(&mut self, x: Var, skip: Var, prefix: &str) -> Var {
        let x = self.drop(x);
        let g = self.glu(x, prefix);
        let sum = self.tape.add(skip, g);
        self.norm(sum, &format!("{prefix}.norm"))
    }

    /// Embeds every column of `inputs` (rows×n) and combines them with
    /// softmax weights from a gated residual network.
    fn select(&mut self, inputs: &[f64], rows: usize, names: &[String], group: &str) -> Var {
        let n = names.len();
        let mut embedded = Vec::with_capacity(n);
        for (j, name) in names.iter().enumerate() {
            let col: Vec<f64> = (0..rows).map(|i| inputs[i * n + j]).collect();
            let x = self.tape.constant(rows, 1, col);
            embedded.push(self.linear(x, &format!("embed_{group}.{name}")));
        }
        let flat = self.tape.concat_cols(&embedded);
        let logits = self.grn(flat, &format!("vsn_{group}.grn"));
        let weights = self.tape.softmax_rows(logits);
        let mut combined = None;
        for (j, &e) in embedded.iter().enumerate() {
            let wj = self.tape.slice_cols(weights, j, 1);
            let term = self.tape.mul_col(e, wj);
            combined = Some(match combined {
                None => term,
                Some(acc) => self.tape.add(acc, term),
            });
        }
        combined.expect("at least one variable")
    }
}

fn check_sample(config: &ModelConfig, sample: &ForecastSample) -> Result<(), ForecastError> {
    let checks = [
        ("past_target", config.input_window, sample.past_target.len()),
        ("past_covariates", config.input_window * config.past_covariates.len(), sample.past_covariates.len()),
        ("future_covariates", config.horizon * config.future_covariates.len(), sample.future_covariates.len()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(ForecastError::Shape { what, expected, got });
        }
    }
    if let Some(t) = &sample.target {
        if t.len() != config.horizon {
            return Err(ForecastError::Shape { what: "target", expected: config.horizon, got: t.len() });
        }
    }
    Ok(())
}

/// Builds the forward graph; returns the tape and the quantile output node
/// (horizon × quantiles).
pub(crate) fn build_forward<'r>(
    weights: &ModelWeights,
    sample: &ForecastSample,
    dropout: Option<Dropout<'r>>,
) -> Result<(Tape, Var), ForecastError> {
    let config = &weights.config;
    check_sample(config, sample)?;
    let (l, t_out, h) = (config.input_window, config.horizon, config.hidden_size);
    let mut g = Graph { tape: Tape::new(), weights, dropout };

    let p = config.past_variables();
    let mut past = Vec::with_capacity(l * p);
    for i in 0..l {
        past.push(sample.past_target[i]);
        let pc = config.past_covariates.len();
        past.extend_from_slice(&sample.past_covariates[i * pc..(i + 1) * pc]);
    }
    let past_sel = g.select(&past, l, &past_variable_names(config), "past");
    let future_sel = g.select(&sample.future_covariates, t_out, &future_variable_names(config), "future");
    let selected = g.tape.concat_rows(&[past_sel, future_sel]);

    let w_in = g.w("encoder.gru.input");
    let b_in = g.w("encoder.gru.bias");
    let u = g.w("encoder.gru.recurrent");
    let xp = g.tape.matmul(selected, w_in);
    let xp = g.tape.add_row(xp, b_in);
    let encoded = g.tape.gru(xp, u);
    let phi = g.gate(encoded, selected, "encoder.gate");

    // horizon step i sees every past position and horizon steps <= i
    let n = l + t_out;
    let mut mask = vec![0.0; t_out * n];
    for i in 0..t_out {
        for j in l + i + 1..n {
            mask[i * n + j] = f64::NEG_INFINITY;
        }
    }
    let phi_future = g.tape.slice_rows(phi, l, t_out);
    let q = g.linear(phi_future, "attention.query");
    let k = g.linear(phi, "attention.key");
    let v = g.linear(phi, "attention.value");
    let heads = config.attention_heads;
    let dk = h / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = g.tape.slice_cols(q, head * dk, dk);
        let kh = g.tape.slice_cols(k, head * dk, dk);
        let vh = g.tape.slice_cols(v, head * dk, dk);
        let scores = g.tape.matmul_bt(qh, kh);
        let scores = g.tape.scale(scores, scale);
        let scores = g.tape.add_const(scores, &mask);
        let attn = g.tape.softmax_rows(scores);
        outs.push(g.tape.matmul(attn, vh));
    }
    let attended = if heads == 1 { outs[0] } else { g.tape.concat_cols(&outs) };
    let attended = g.linear(attended, "attention.output");

    let delta = g.gate(attended, phi_future, "post_attention.gate");
    let psi = g.grn(delta, "post_attention.grn");
    let raw = g.linear(psi, "heads");
    let out = g.tape.monotone_quantiles(raw, config.center_quantile());
    Ok((g.tape, out))
}

/// Inference-mode forecast (no dropout) in the scaled space of the inputs.
pub fn forward(weights: &ModelWeights, sample: &ForecastSample) -> Result<QuantileForecast, ForecastError> {
    let (tape, out) = build_forward(weights, sample, None)?;
    Ok(QuantileForecast {
        quantiles: weights.config.quantiles.clone(),
        horizon: weights.config.horizon,
        values: tape.value(out).to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_formula_for_default() {
        let c = ModelConfig::default();
        assert_eq!(ParamLayout::for_config(&c).total(), parameter_count(&c));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = ModelConfig { hidden_size: 8, attention_heads: 2, ..ModelConfig::default() };
        let a = init_model(&c, 7).unwrap();
        let b = init_model(&c, 7).unwrap();
        assert!(a.bitwise_eq(&b));
        let other = init_model(&c, 8).unwrap();
        assert!(!a.bitwise_eq(&other));
        let gain = a.tensor("encoder.gate.norm.gain").unwrap();
        assert!(gain.iter().all(|&g| g == 1.0));
        let w = a.tensor("attention.query.weight").unwrap();
        let bound = 1.0 / 8f64.sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn components_cover_all_parameters() {
        let c = ModelConfig::default();
        let layout = ParamLayout::for_config(&c);
        let groups: Vec<&str> = layout.entries().iter().map(|e| e.component()).collect();
        for g in ["embed_past", "embed_future", "vsn_past", "vsn_future", "encoder", "attention", "post_attention", "heads"] {
            assert!(groups.contains(&g), "{g}");
        }
    }
}
