//! Tabular differentiable models.
//!
//! A [`ParamTable`] maps `(example, prefix, token)` keys to scalar
//! parameters and plays both roles in training: policy logits for actors
//! and raw Q-values for critics. Unseen keys read as 0.0 and are created
//! lazily by the optimizer. Gradients come from three closed-form atoms
//! (negative log-likelihood, expectation of fixed per-token costs, and
//! entropy), which together cover every loss in the trainers, plus squared
//! errors on raw table entries handled inline by the critics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numerics::softmax;
use crate::seq::{decode_tokens, encode_tokens, Prefix, SeqError, SeqSpace, TokenId, Vocab};

pub use crate::numerics::entropy;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown parameter key in strict mode")]
    UnknownKey,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("non-finite parameter update")]
    NonFiniteUpdate,
    #[error("non-finite loss encountered")]
    NonFiniteLoss,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    PolicyLogits,
    QValues,
}

impl TableKind {
    pub fn name(&self) -> &'static str {
        match self {
            TableKind::PolicyLogits => "policy-logits",
            TableKind::QValues => "q-values",
        }
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        match text {
            "policy-logits" => Ok(TableKind::PolicyLogits),
            "q-values" => Ok(TableKind::QValues),
            other => Err(ModelError::MalformedCheckpoint(format!(
                "unknown table kind {other:?}"
            ))),
        }
    }
}

/// Key of one scalar parameter: conditioning example, prefix tokens, and
/// the token the parameter scores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamKey {
    pub example: u64,
    pub prefix: Vec<TokenId>,
    pub token: TokenId,
}

impl ParamKey {
    pub fn new(example: u64, prefix: &[TokenId], token: TokenId) -> Self {
        ParamKey {
            example,
            prefix: prefix.to_vec(),
            token,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamTable {
    kind: TableKind,
    entries: BTreeMap<ParamKey, f64>,
    default: f64,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

impl ParamTable {
    pub fn new(kind: TableKind) -> Self {
        ParamTable {
            kind,
            entries: BTreeMap::new(),
            default: 0.0,
        }
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a parameter, falling back to the default for unseen keys.
    pub fn get(&self, key: &ParamKey) -> f64 {
        self.entries.get(key).copied().unwrap_or(self.default)
    }

    /// Reads a parameter, erroring on unseen keys.
    pub fn get_strict(&self, key: &ParamKey) -> Result<f64, ModelError> {
        self.entries.get(key).copied().ok_or(ModelError::UnknownKey)
    }

    pub fn set(&mut self, key: ParamKey, value: f64) {
        self.entries.insert(key, value);
    }

    pub fn get_mut(&mut self, key: &ParamKey) -> Option<&mut f64> {
        self.entries.get_mut(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &f64)> {
        self.entries.iter()
    }

    /// Raw parameter row over `space.allowed_tokens(prefix)`.
    pub fn row(
        &self,
        space: &SeqSpace,
        example: u64,
        prefix: &Prefix,
    ) -> Result<Vec<f64>, SeqError> {
        let allowed = space.allowed_tokens(prefix)?;
        Ok(allowed
            .iter()
            .map(|&w| self.get(&ParamKey::new(example, prefix.tokens(), w)))
            .collect())
    }

    /// Softmax of the parameter row over allowed tokens. Invariant under
    /// adding a constant to all logits at a prefix.
    pub fn policy_dist(
        &self,
        space: &SeqSpace,
        example: u64,
        prefix: &Prefix,
    ) -> Result<Vec<f64>, SeqError> {
        Ok(softmax(&self.row(space, example, prefix)?))
    }

    /// Line-oriented checkpoint: a header carrying the kind and space
    /// geometry, then one `P` record per entry with 17 significant digits
    /// so values round-trip bit-exact.
    pub fn write_checkpoint(&self, space: &SeqSpace) -> String {
        let mut out = format!(
            "# seqlab-checkpoint format_version={} kind={} vocab_size={} eos={} horizon={}\n",
            CHECKPOINT_FORMAT_VERSION,
            self.kind.name(),
            space.vocab().size(),
            space.vocab().eos(),
            space.horizon()
        );
        for (key, value) in &self.entries {
            out.push_str(&format!(
                "P {} {} {} {:.16e}\n",
                key.example,
                encode_tokens(&key.prefix),
                key.token,
                value
            ));
        }
        out
    }

    pub fn read_checkpoint(text: &str) -> Result<(ParamTable, Vocab, usize), ModelError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| ModelError::MalformedCheckpoint("empty checkpoint".into()))?;
        let fields = parse_header(header, "# seqlab-checkpoint")?;
        let version: u32 = header_field(&fields, "format_version")?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::MalformedCheckpoint(format!(
                "unsupported format_version {version}"
            )));
        }
        let kind = TableKind::parse(
            fields
                .get("kind")
                .ok_or_else(|| ModelError::MalformedCheckpoint("missing kind".into()))?,
        )?;
        let vocab_size: u32 = header_field(&fields, "vocab_size")?;
        let eos: u32 = header_field(&fields, "eos")?;
        let horizon: usize = header_field(&fields, "horizon")?;
        let vocab = Vocab::new(vocab_size, eos)
            .map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))?;
        let mut table = ParamTable::new(kind);
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 || parts[0] != "P" {
                return Err(ModelError::MalformedCheckpoint(format!(
                    "bad record {line:?}"
                )));
            }
            let example: u64 = parts[1]
                .parse()
                .map_err(|_| ModelError::MalformedCheckpoint(format!("bad example {line:?}")))?;
            let prefix = decode_tokens(parts[2])
                .map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))?;
            let token: TokenId = parts[3]
                .parse()
                .map_err(|_| ModelError::MalformedCheckpoint(format!("bad token {line:?}")))?;
            let value: f64 = parts[4]
                .parse()
                .map_err(|_| ModelError::MalformedCheckpoint(format!("bad value {line:?}")))?;
            table.set(ParamKey { example, prefix, token }, value);
        }
        Ok((table, vocab, horizon))
    }
}

fn parse_header(
    line: &str,
    magic: &str,
) -> Result<std::collections::HashMap<String, String>, ModelError> {
    if !line.starts_with(magic) {
        return Err(ModelError::MalformedCheckpoint(format!(
            "bad header {line:?}"
        )));
    }
    Ok(line
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn header_field<T: std::str::FromStr>(
    fields: &std::collections::HashMap<String, String>,
    name: &str,
) -> Result<T, ModelError> {
    fields
        .get(name)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ModelError::MalformedCheckpoint(format!("missing or bad field {name}")))
}

/// Gradient accumulator over the same key space as a [`ParamTable`].
#[derive(Debug, Clone, Default)]
pub struct GradAccumulator {
    grads: BTreeMap<ParamKey, f64>,
}

impl GradAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: ParamKey, value: f64) {
        *self.grads.entry(key).or_insert(0.0) += value;
    }

    pub fn get(&self, key: &ParamKey) -> f64 {
        self.grads.get(key).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &f64)> {
        self.grads.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.grads.keys()
    }

    pub fn scale(&mut self, factor: f64) {
        for value in self.grads.values_mut() {
            *value *= factor;
        }
    }

    /// Adds `factor * other` into this accumulator.
    pub fn add_scaled(&mut self, other: &GradAccumulator, factor: f64) {
        for (key, value) in &other.grads {
            self.add(key.clone(), factor * value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|v| v.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales all gradients so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }
}

/// Loss atom (i): `weight * (-log pi(target | prefix))`. Gradients of the
/// logits are `weight * (pi - indicator)`. Returns the loss contribution.
pub fn nll_atom(
    table: &ParamTable,
    space: &SeqSpace,
    example: u64,
    prefix: &Prefix,
    target: TokenId,
    weight: f64,
    acc: &mut GradAccumulator,
) -> Result<f64, SeqError> {
    let allowed = space.allowed_tokens(prefix)?;
    let probs = table.policy_dist(space, example, prefix)?;
    let target_idx = allowed
        .iter()
        .position(|&w| w == target)
        .ok_or(SeqError::ForbiddenToken { token: target })?;
    for (i, &w) in allowed.iter().enumerate() {
        let indicator = if i == target_idx { 1.0 } else { 0.0 };
        acc.add(
            ParamKey::new(example, prefix.tokens(), w),
            weight * (probs[i] - indicator),
        );
    }
    Ok(weight * (-probs[target_idx].ln()))
}

/// Loss atom (ii): `weight * sum_w pi(w) costs[w]` for constant costs
/// aligned with the allowed-token order. The logit gradient is
/// `weight * pi_u (costs_u - expectation)`.
pub fn expectation_atom(
    table: &ParamTable,
    space: &SeqSpace,
    example: u64,
    prefix: &Prefix,
    costs: &[f64],
    weight: f64,
    acc: &mut GradAccumulator,
) -> Result<f64, SeqError> {
    let allowed = space.allowed_tokens(prefix)?;
    debug_assert_eq!(allowed.len(), costs.len());
    let probs = table.policy_dist(space, example, prefix)?;
    let expected: f64 = probs.iter().zip(costs).map(|(p, c)| p * c).sum();
    for (i, &w) in allowed.iter().enumerate() {
        acc.add(
            ParamKey::new(example, prefix.tokens(), w),
            weight * probs[i] * (costs[i] - expected),
        );
    }
    Ok(weight * expected)
}

/// Loss atom (iii): `weight * H(pi(. | prefix))`. The logit gradient is
/// `-weight * pi_u (ln pi_u + H)`, which tends to zero at a vertex.
pub fn entropy_atom(
    table: &ParamTable,
    space: &SeqSpace,
    example: u64,
    prefix: &Prefix,
    weight: f64,
    acc: &mut GradAccumulator,
) -> Result<f64, SeqError> {
    let allowed = space.allowed_tokens(prefix)?;
    let probs = table.policy_dist(space, example, prefix)?;
    let h = entropy(&probs);
    for (i, &w) in allowed.iter().enumerate() {
        let grad = if probs[i] > 0.0 {
            -probs[i] * (probs[i].ln() + h)
        } else {
            0.0
        };
        acc.add(ParamKey::new(example, prefix.tokens(), w), weight * grad);
    }
    Ok(weight * h)
}

/// Central-difference check of an analytic gradient. Probes every key in
/// the accumulator and the table, and returns the maximum relative error
/// `|a - f| / max(1e-8, |a| + |f|)` over parameters.
pub fn fd_gradcheck<F>(
    table: &mut ParamTable,
    analytic: &GradAccumulator,
    epsilon: f64,
    mut loss_fn: F,
) -> Result<f64, ModelError>
where
    F: FnMut(&ParamTable) -> f64,
{
    let mut keys: Vec<ParamKey> = analytic.keys().cloned().collect();
    for key in table.keys() {
        if analytic.get(key) == 0.0 && !keys.contains(key) {
            keys.push(key.clone());
        }
    }
    let mut max_rel = 0.0_f64;
    for key in keys {
        let original = table.get(&key);
        table.set(key.clone(), original + epsilon);
        let plus = loss_fn(table);
        table.set(key.clone(), original - epsilon);
        let minus = loss_fn(table);
        table.set(key.clone(), original);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        let fd = (plus - minus) / (2.0 * epsilon);
        let a = analytic.get(&key);
        let rel = (a - fd).abs() / f64::max(1e-8, a.abs() + fd.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Deterministic first-order optimizer over a parameter table.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step_size: f64,
    first_moment: BTreeMap<ParamKey, f64>,
    second_moment: BTreeMap<ParamKey, f64>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, step_size: f64) -> Self {
        Optimizer {
            kind,
            step_size,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn halve_step_size(&mut self) {
        self.step_size *= 0.5;
    }

    /// Applies one update. Gradients must be finite and every updated
    /// parameter must stay finite, otherwise the table is left untouched
    /// for the offending key and an error is returned.
    pub fn step(
        &mut self,
        table: &mut ParamTable,
        grads: &GradAccumulator,
    ) -> Result<(), ModelError> {
        if !grads.is_finite() {
            return Err(ModelError::NonFiniteGradient);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (key, &grad) in grads.iter() {
                    let updated = table.get(key) - self.step_size * grad;
                    if !updated.is_finite() {
                        return Err(ModelError::NonFiniteUpdate);
                    }
                    table.set(key.clone(), updated);
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for (key, &grad) in grads.iter() {
                    let m = self.first_moment.entry(key.clone()).or_insert(0.0);
                    *m = beta1 * *m + (1.0 - beta1) * grad;
                    let v = self.second_moment.entry(key.clone()).or_insert(0.0);
                    *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    let updated = table.get(key) - self.step_size * m_hat / (v_hat.sqrt() + epsilon);
                    if !updated.is_finite() {
                        return Err(ModelError::NonFiniteUpdate);
                    }
                    table.set(key.clone(), updated);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{Prefix, SeqSpace, Vocab};

    fn toy_space() -> SeqSpace {
        SeqSpace::new(Vocab::with_eos_last(3).unwrap(), 2)
    }

    #[test]
    fn policy_dist_uniform_and_shifted() {
        let space = toy_space();
        let table = ParamTable::new(TableKind::PolicyLogits);
        let root = Prefix::empty();
        let probs = table.policy_dist(&space, 0, &root).unwrap();
        for &p in &probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let mut table = ParamTable::new(TableKind::PolicyLogits);
        table.set(ParamKey::new(0, &[], 1), 1.0);
        let probs = table.policy_dist(&space, 0, &root).unwrap();
        let z = 2.0 + std::f64::consts::E;
        assert!((probs[0] - 1.0 / z).abs() < 1e-15);
        assert!((probs[1] - std::f64::consts::E / z).abs() < 1e-15);

        // shift invariance
        let mut shifted = table.clone();
        for w in 0..3 {
            let key = ParamKey::new(0, &[], w);
            let v = shifted.get(&key);
            shifted.set(key, v + 123.456);
        }
        let probs2 = shifted.policy_dist(&space, 0, &root).unwrap();
        for (a, b) in probs.iter().zip(&probs2) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_allowed_token_is_a_point_mass() {
        let space = toy_space();
        let table = ParamTable::new(TableKind::PolicyLogits);
        let a = Prefix::from_tokens(vec![0], space.vocab()).unwrap();
        assert_eq!(table.policy_dist(&space, 0, &a).unwrap(), vec![1.0]);
    }

    #[test]
    fn nll_atom_uniform_gradients() {
        let space = toy_space();
        let table = ParamTable::new(TableKind::PolicyLogits);
        let mut acc = GradAccumulator::new();
        let loss = nll_atom(&table, &space, 0, &Prefix::empty(), 1, 1.0, &mut acc).unwrap();
        assert!((loss - 3.0_f64.ln()).abs() < 1e-15);
        assert!((acc.get(&ParamKey::new(0, &[], 1)) - (1.0 / 3.0 - 1.0)).abs() < 1e-15);
        assert!((acc.get(&ParamKey::new(0, &[], 0)) - 1.0 / 3.0).abs() < 1e-15);
        assert!((acc.get(&ParamKey::new(0, &[], 2)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_atom_vanishes_at_a_vertex() {
        let space = toy_space();
        let mut table = ParamTable::new(TableKind::PolicyLogits);
        table.set(ParamKey::new(0, &[], 0), 50.0);
        let mut acc = GradAccumulator::new();
        entropy_atom(&table, &space, 0, &Prefix::empty(), 1.0, &mut acc).unwrap();
        for w in 0..3 {
            assert!(acc.get(&ParamKey::new(0, &[], w)).abs() <= 1e-6);
        }
    }

    #[test]
    fn atoms_pass_fd_gradcheck() {
        let space = toy_space();
        let mut table = ParamTable::new(TableKind::PolicyLogits);
        table.set(ParamKey::new(0, &[], 0), 0.3);
        table.set(ParamKey::new(0, &[], 1), -0.2);
        table.set(ParamKey::new(0, &[], 2), 0.1);
        let root = Prefix::empty();
        let costs = [1.5, -0.5, 0.25];

        let mut acc = GradAccumulator::new();
        nll_atom(&table, &space, 0, &root, 1, 0.7, &mut acc).unwrap();
        expectation_atom(&table, &space, 0, &root, &costs, -1.3, &mut acc).unwrap();
        entropy_atom(&table, &space, 0, &root, 0.4, &mut acc).unwrap();

        let rel = fd_gradcheck(&mut table, &acc, 1e-5, |t| {
            let mut scratch = GradAccumulator::new();
            let mut total = 0.0;
            total += nll_atom(t, &space, 0, &root, 1, 0.7, &mut scratch).unwrap();
            total += expectation_atom(t, &space, 0, &root, &costs, -1.3, &mut scratch).unwrap();
            total += entropy_atom(t, &space, 0, &root, 0.4, &mut scratch).unwrap();
            total
        })
        .unwrap();
        assert!(rel <= 1e-6, "relative error {rel}");
    }

    #[test]
    fn fd_gradcheck_is_tight_on_quadratics() {
        let mut table = ParamTable::new(TableKind::QValues);
        for w in 0..3 {
            table.set(ParamKey::new(0, &[], w), 0.5 * w as f64 - 0.3);
        }
        let mut acc = GradAccumulator::new();
        for (key, &v) in table.clone().iter() {
            acc.add(key.clone(), 2.0 * v);
        }
        let rel = fd_gradcheck(&mut table, &acc, 1e-5, |t| {
            t.iter().map(|(_, v)| v * v).sum::<f64>()
        })
        .unwrap();
        assert!(rel <= 1e-10, "relative error {rel}");
    }

    #[test]
    fn sgd_step_hand_value_and_zero_grad() {
        let mut table = ParamTable::new(TableKind::QValues);
        let key = ParamKey::new(0, &[], 0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        let mut grads = GradAccumulator::new();
        grads.add(key.clone(), 1.0);
        opt.step(&mut table, &grads).unwrap();
        assert!((table.get(&key) - (-0.1)).abs() < 1e-15);

        let before = table.get(&key);
        let zero = GradAccumulator::new();
        opt.step(&mut table, &zero).unwrap();
        assert_eq!(table.get(&key), before);
    }

    #[test]
    fn adam_first_step_hand_value() {
        let mut table = ParamTable::new(TableKind::QValues);
        let key = ParamKey::new(0, &[], 0);
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), 0.001);
        let mut grads = GradAccumulator::new();
        grads.add(key.clone(), 1.0);
        opt.step(&mut table, &grads).unwrap();
        // bias-corrected m_hat = v_hat = 1, so the update is lr / (1 + eps)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((table.get(&key) - expected).abs() < 1e-15);
    }

    #[test]
    fn optimizer_updates_are_bitwise_deterministic() {
        let mut grads = GradAccumulator::new();
        grads.add(ParamKey::new(0, &[], 0), 0.37);
        grads.add(ParamKey::new(0, &[1], 2), -1.25);
        let run = || {
            let mut table = ParamTable::new(TableKind::QValues);
            let mut opt = Optimizer::new(OptimizerKind::adam_default(), 0.01);
            for _ in 0..7 {
                opt.step(&mut table, &grads).unwrap();
            }
            table
                .iter()
                .map(|(_, &v)| v.to_bits())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut table = ParamTable::new(TableKind::QValues);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        let mut grads = GradAccumulator::new();
        grads.add(ParamKey::new(0, &[], 0), f64::INFINITY);
        assert_eq!(
            opt.step(&mut table, &grads),
            Err(ModelError::NonFiniteGradient)
        );
    }

    #[test]
    fn clip_global_norm_caps_magnitude() {
        let mut grads = GradAccumulator::new();
        grads.add(ParamKey::new(0, &[], 0), 3.0);
        grads.add(ParamKey::new(0, &[], 1), 4.0);
        grads.clip_global_norm(5.0);
        assert!((grads.global_norm() - 5.0).abs() < 1e-12);
        grads.clip_global_norm(1.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let space = SeqSpace::new(Vocab::with_eos_last(4).unwrap(), 3);
        let mut table = ParamTable::new(TableKind::PolicyLogits);
        table.set(ParamKey::new(0, &[], 0), 0.1 + 0.2);
        table.set(ParamKey::new(3, &[1, 2], 3), -1.0 / 3.0);
        table.set(ParamKey::new(7, &[0], 1), f64::MIN_POSITIVE);
        let text = table.write_checkpoint(&space);
        let (parsed, vocab, horizon) = ParamTable::read_checkpoint(&text).unwrap();
        assert_eq!(vocab, space.vocab());
        assert_eq!(horizon, 3);
        assert_eq!(parsed.kind(), TableKind::PolicyLogits);
        for (key, &value) in table.iter() {
            assert_eq!(parsed.get(key).to_bits(), value.to_bits());
        }
        assert_eq!(parsed.write_checkpoint(&space), text);
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        for text in [
            "",
            "not a checkpoint\n",
            "# seqlab-checkpoint format_version=99 kind=q-values vocab_size=3 eos=2 horizon=2\n",
            "# seqlab-checkpoint format_version=1 kind=bogus vocab_size=3 eos=2 horizon=2\n",
            "# seqlab-checkpoint format_version=1 kind=q-values vocab_size=3 eos=2 horizon=2\nP 0 - 0\n",
            "# seqlab-checkpoint format_version=1 kind=q-values vocab_size=3 eos=2 horizon=2\nP 0 - 0 zzz\n",
        ] {
            assert!(
                matches!(
                    ParamTable::read_checkpoint(text),
                    Err(ModelError::MalformedCheckpoint(_))
                ),
                "accepted {text:?}"
            );
        }
    }

    #[test]
    fn strict_get_reports_unknown_keys() {
        let table = ParamTable::new(TableKind::QValues);
        assert_eq!(
            table.get_strict(&ParamKey::new(0, &[], 0)),
            Err(ModelError::UnknownKey)
        );
        assert_eq!(table.get(&ParamKey::new(0, &[], 0)), 0.0);
    }
}
