//! Exact constructions of the sequence-level target distribution and the
//! token-level soft value tables.
//!
//! The same object is built by three independent routes so the theory can
//! be cross-checked numerically:
//! - [`solve_soft_oracle`]: one backward pass of the recursion
//!   `q(prefix, w) = r(prefix, w) + v(prefix + w)`,
//!   `v = tau * logsumexp(q / tau)`, with eos entries pinned to the
//!   incremental pay-off (exactly zero).
//! - [`oracle_from_marginals`]: brute-force sequence distribution, exact
//!   prefix conditionals, and `v` pinned by the terminal condition.
//! - [`soft_value_iteration`]: fixed-point iteration from zero, which on a
//!   finite horizon reaches the backward solution after `horizon` sweeps.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numerics::{entropy, logsumexp, softmax};
use crate::reward::{incremental_payoff, payoff, Payoff};
use crate::seq::{encode_tokens, GroundTruthPair, Prefix, SeqError, SeqSpace, TokenId};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("prefix {0} has zero probability mass")]
    ZeroProbabilityPrefix(String),
}

/// A distribution over complete sequences with explicit support.
#[derive(Debug, Clone)]
pub struct SeqDistribution {
    support: Vec<Prefix>,
    probs: Vec<f64>,
    index: BTreeMap<Vec<TokenId>, usize>,
}

impl SeqDistribution {
    fn new(support: Vec<Prefix>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(support.len(), probs.len());
        debug_assert!(support.iter().all(|y| y.is_terminated()));
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let index: BTreeMap<Vec<TokenId>, usize> = support
            .iter()
            .enumerate()
            .map(|(i, y)| (y.tokens().to_vec(), i))
            .collect();
        debug_assert_eq!(index.len(), support.len(), "support must be distinct");
        SeqDistribution {
            support,
            probs,
            index,
        }
    }

    pub fn support(&self) -> &[Prefix] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob_of(&self, y: &Prefix) -> Option<f64> {
        self.index.get(y.tokens()).map(|&i| self.probs[i])
    }

    /// Max absolute probability difference against a distribution on the
    /// same support (in the same enumeration order).
    pub fn max_abs_diff(&self, other: &SeqDistribution) -> f64 {
        assert_eq!(self.support.len(), other.support.len());
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-reference tables of soft action values `q` and state values `v`,
/// keyed by unterminated prefix. Rows are aligned with
/// `space.allowed_tokens(prefix)`.
#[derive(Debug, Clone)]
pub struct SoftOracle {
    space: SeqSpace,
    example_id: u64,
    tau: f64,
    q: BTreeMap<Vec<TokenId>, Vec<f64>>,
    v: BTreeMap<Vec<TokenId>, f64>,
}

impl SoftOracle {
    pub fn space(&self) -> &SeqSpace {
        &self.space
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn example_id(&self) -> u64 {
        self.example_id
    }

    pub fn q_map(&self) -> &BTreeMap<Vec<TokenId>, Vec<f64>> {
        &self.q
    }

    pub fn v_map(&self) -> &BTreeMap<Vec<TokenId>, f64> {
        &self.v
    }

    pub fn q(&self, prefix: &Prefix, token: TokenId) -> Option<f64> {
        let row = self.q.get(prefix.tokens())?;
        let allowed = self.space.allowed_tokens(prefix).ok()?;
        let idx = allowed.iter().position(|&w| w == token)?;
        Some(row[idx])
    }

    pub fn v(&self, prefix: &Prefix) -> Option<f64> {
        self.v.get(prefix.tokens()).copied()
    }

    /// Boltzmann token target: softmax over allowed tokens of `q / tau`,
    /// aligned with `space.allowed_tokens(prefix)`.
    pub fn token_target(&self, prefix: &Prefix) -> Result<Vec<f64>, SeqError> {
        if prefix.is_terminated() {
            return Err(SeqError::AlreadyTerminated);
        }
        let row = self
            .q
            .get(prefix.tokens())
            .ok_or(SeqError::HorizonExceeded {
                len: prefix.len(),
                horizon: self.space.horizon(),
            })?;
        let scaled: Vec<f64> = row.iter().map(|&q| q / self.tau).collect();
        Ok(softmax(&scaled))
    }

    /// Max absolute entrywise difference over both q and v tables.
    pub fn max_abs_diff(&self, other: &SoftOracle) -> f64 {
        assert_eq!(self.q.len(), other.q.len());
        let mut max = 0.0_f64;
        for (key, row) in &self.q {
            let other_row = &other.q[key];
            for (a, b) in row.iter().zip(other_row) {
                max = max.max((a - b).abs());
            }
            max = max.max((self.v[key] - other.v[key]).abs());
        }
        max
    }

    /// Max absolute difference between oracle q-values and a critic
    /// parameter table for the same example.
    pub fn max_table_diff(&self, table: &crate::models::ParamTable, example_id: u64) -> f64 {
        let mut max = 0.0_f64;
        for (key, row) in &self.q {
            let prefix_tokens = key.clone();
            let allowed = self
                .space
                .allowed_tokens(&Prefix::from_tokens(prefix_tokens, self.space.vocab()).unwrap())
                .unwrap();
            for (i, &w) in allowed.iter().enumerate() {
                let got = table.get(&crate::models::ParamKey {
                    example: example_id,
                    prefix: key.clone(),
                    token: w,
                });
                max = max.max((row[i] - got).abs());
            }
        }
        max
    }

    /// Copies q-values into a parameter table keyed by `example_id`.
    pub fn load_into_table(&self, table: &mut crate::models::ParamTable, example_id: u64) {
        for (key, row) in &self.q {
            let prefix = Prefix::from_tokens(key.clone(), self.space.vocab()).unwrap();
            let allowed = self.space.allowed_tokens(&prefix).unwrap();
            for (i, &w) in allowed.iter().enumerate() {
                table.set(
                    crate::models::ParamKey {
                        example: example_id,
                        prefix: key.clone(),
                        token: w,
                    },
                    row[i],
                );
            }
        }
    }

    /// Line-oriented text dump: a header, then one `V` record per prefix
    /// and one `Q` record per (prefix, allowed token), sorted by the
    /// canonical length-prefixed encoding. Values carry 17 significant
    /// digits so the dump is bit-exact across runs.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "# seqlab-oracle format_version=1 example={} tau={:.16e} vocab_size={} eos={} horizon={}\n",
            self.example_id,
            self.tau,
            self.space.vocab().size(),
            self.space.vocab().eos(),
            self.space.horizon()
        );
        let mut keys: Vec<&Vec<TokenId>> = self.v.keys().collect();
        keys.sort_by(|a, b| (a.len(), a.as_slice()).cmp(&(b.len(), b.as_slice())));
        for key in keys {
            let enc = encode_tokens(key);
            out.push_str(&format!("V {} {:.16e}\n", enc, self.v[key]));
            let prefix = Prefix::from_tokens(key.clone(), self.space.vocab()).unwrap();
            let allowed = self.space.allowed_tokens(&prefix).unwrap();
            for (i, &w) in allowed.iter().enumerate() {
                out.push_str(&format!("Q {} {} {:.16e}\n", enc, w, self.q[key][i]));
            }
        }
        out
    }
}

/// The exponentiated pay-off distribution over all complete sequences:
/// `P(y) = exp(R(y)/tau) / sum_y' exp(R(y')/tau)`.
pub fn exact_pr(
    space: &SeqSpace,
    pair: &GroundTruthPair,
    tau: f64,
    spec: &dyn Payoff,
) -> Result<SeqDistribution, OracleError> {
    assert!(tau > 0.0, "tau must be positive");
    let support = space.enumerate_complete()?;
    let scores: Vec<f64> = support
        .iter()
        .map(|y| payoff(spec, y, &pair.reference) / tau)
        .collect();
    let probs = softmax(&scores);
    Ok(SeqDistribution::new(support, probs))
}

/// Backward-pass construction of the soft oracle tables.
pub fn solve_soft_oracle(
    space: &SeqSpace,
    pair: &GroundTruthPair,
    tau: f64,
    spec: &dyn Payoff,
) -> Result<SoftOracle, OracleError> {
    assert!(tau > 0.0, "tau must be positive");
    let prefixes = space.enumerate_prefixes()?;
    let mut q: BTreeMap<Vec<TokenId>, Vec<f64>> = BTreeMap::new();
    let mut v: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    // enumerate_prefixes is ordered by increasing length, so the reverse
    // order visits successors before their parents
    for prefix in prefixes.iter().rev() {
        let allowed = space.allowed_tokens(prefix)?;
        let mut row = Vec::with_capacity(allowed.len());
        for &w in &allowed {
            let r = incremental_payoff(space, spec, prefix, w, &pair.reference)?;
            let next = space.transition(prefix, w)?;
            if next.is_terminated() {
                row.push(r);
            } else {
                row.push(r + v[next.tokens()]);
            }
        }
        let scaled: Vec<f64> = row.iter().map(|&x| x / tau).collect();
        v.insert(prefix.tokens().to_vec(), tau * logsumexp(&scaled));
        q.insert(prefix.tokens().to_vec(), row);
    }
    Ok(SoftOracle {
        space: *space,
        example_id: pair.example_id,
        tau,
        q,
        v,
    })
}

/// Sequence-level marginal induced by the oracle's token targets:
/// the product over positions of the per-token Boltzmann probabilities.
pub fn induced_marginal(oracle: &SoftOracle) -> Result<SeqDistribution, OracleError> {
    let space = oracle.space;
    let support = space.enumerate_complete()?;
    let mut probs = Vec::with_capacity(support.len());
    for y in &support {
        let mut p = 1.0;
        let mut prefix = Prefix::empty();
        for &t in y.tokens() {
            let allowed = space.allowed_tokens(&prefix)?;
            let target = oracle.token_target(&prefix)?;
            let idx = allowed
                .iter()
                .position(|&w| w == t)
                .expect("trajectory token must be allowed");
            p *= target[idx];
            prefix = space.transition(&prefix, t)?;
        }
        probs.push(p);
    }
    Ok(SeqDistribution::new(support, probs))
}

/// Independent construction of the soft oracle from the brute-force
/// sequence distribution: exact prefix conditionals give the token targets,
/// and `v` is pinned by the terminal condition `q(prefix, eos) = 0`, i.e.
/// `v(prefix) = -tau * ln P(eos | prefix)`.
pub fn oracle_from_marginals(
    space: &SeqSpace,
    pair: &GroundTruthPair,
    tau: f64,
    spec: &dyn Payoff,
) -> Result<SoftOracle, OracleError> {
    let pr = exact_pr(space, pair, tau, spec)?;
    // mass of each unterminated prefix under the sequence distribution
    let mut mass: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    for (y, &p) in pr.support().iter().zip(pr.probs()) {
        let content = y.content();
        for len in 0..=content.len() {
            *mass.entry(content[..len].to_vec()).or_insert(0.0) += p;
        }
    }
    let eos = space.vocab().eos();
    let mut q: BTreeMap<Vec<TokenId>, Vec<f64>> = BTreeMap::new();
    let mut v: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    for prefix in space.enumerate_prefixes()? {
        let denom = mass.get(prefix.tokens()).copied().unwrap_or(0.0);
        if denom <= 0.0 {
            return Err(OracleError::ZeroProbabilityPrefix(prefix.to_string()));
        }
        let allowed = space.allowed_tokens(&prefix)?;
        let conditionals: Vec<f64> = allowed
            .iter()
            .map(|&w| {
                let next = space.transition(&prefix, w).expect("allowed transition");
                let numer = if w == eos {
                    pr.prob_of(&next).unwrap_or(0.0)
                } else {
                    mass.get(next.tokens()).copied().unwrap_or(0.0)
                };
                numer / denom
            })
            .collect();
        let eos_idx = allowed
            .iter()
            .position(|&w| w == eos)
            .expect("eos is always allowed");
        if conditionals[eos_idx] <= 0.0 {
            return Err(OracleError::ZeroProbabilityPrefix(prefix.to_string()));
        }
        let log_eos = tau * conditionals[eos_idx].ln();
        let value = -log_eos;
        let row: Vec<f64> = conditionals
            .iter()
            .map(|&c| tau * c.ln() + value)
            .collect();
        v.insert(prefix.tokens().to_vec(), value);
        q.insert(prefix.tokens().to_vec(), row);
    }
    Ok(SoftOracle {
        space: *space,
        example_id: pair.example_id,
        tau,
        q,
        v,
    })
}

/// Fixed-point iteration of the optimal soft Bellman equations from zero
/// initialization. Each sweep recomputes every entry from the previous
/// iterate; after `>= horizon` sweeps the result equals the backward
/// solution exactly.
pub fn soft_value_iteration(
    space: &SeqSpace,
    pair: &GroundTruthPair,
    tau: f64,
    spec: &dyn Payoff,
    sweeps: usize,
) -> Result<SoftOracle, OracleError> {
    assert!(tau > 0.0, "tau must be positive");
    let prefixes = space.enumerate_prefixes()?;
    let mut q: BTreeMap<Vec<TokenId>, Vec<f64>> = BTreeMap::new();
    for prefix in &prefixes {
        let allowed = space.allowed_tokens(prefix)?;
        q.insert(prefix.tokens().to_vec(), vec![0.0; allowed.len()]);
    }
    for _ in 0..sweeps {
        let mut next_q = BTreeMap::new();
        for prefix in &prefixes {
            let allowed = space.allowed_tokens(prefix)?;
            let mut row = Vec::with_capacity(allowed.len());
            for &w in &allowed {
                let r = incremental_payoff(space, spec, prefix, w, &pair.reference)?;
                let next = space.transition(prefix, w)?;
                if next.is_terminated() {
                    row.push(r);
                } else {
                    let succ = &q[next.tokens()];
                    let scaled: Vec<f64> = succ.iter().map(|&x| x / tau).collect();
                    row.push(r + tau * logsumexp(&scaled));
                }
            }
            next_q.insert(prefix.tokens().to_vec(), row);
        }
        q = next_q;
    }
    let mut v = BTreeMap::new();
    for (key, row) in &q {
        let scaled: Vec<f64> = row.iter().map(|&x| x / tau).collect();
        v.insert(key.clone(), tau * logsumexp(&scaled));
    }
    Ok(SoftOracle {
        space: *space,
        example_id: pair.example_id,
        tau,
        q,
        v,
    })
}

/// Exact value tables of a fixed policy under entropy regularization:
/// `v(prefix) = sum_w pi(w) q(prefix, w) + tau * H(pi)`,
/// `q(prefix, w) = r(prefix, w) + v(prefix + w)`, with terminated
/// successors worth zero. The policy callback returns probabilities
/// aligned with `space.allowed_tokens(prefix)`.
#[derive(Debug, Clone)]
pub struct PolicyEvalTables {
    space: SeqSpace,
    qpi: BTreeMap<Vec<TokenId>, Vec<f64>>,
    vpi: BTreeMap<Vec<TokenId>, f64>,
}

impl PolicyEvalTables {
    pub fn q_map(&self) -> &BTreeMap<Vec<TokenId>, Vec<f64>> {
        &self.qpi
    }

    pub fn v_map(&self) -> &BTreeMap<Vec<TokenId>, f64> {
        &self.vpi
    }

    pub fn q(&self, prefix: &Prefix, token: TokenId) -> Option<f64> {
        let row = self.qpi.get(prefix.tokens())?;
        let allowed = self.space.allowed_tokens(prefix).ok()?;
        let idx = allowed.iter().position(|&w| w == token)?;
        Some(row[idx])
    }

    pub fn v(&self, prefix: &Prefix) -> Option<f64> {
        self.vpi.get(prefix.tokens()).copied()
    }

    /// Copies q-values into a parameter table keyed by `example_id`.
    pub fn load_into_table(&self, table: &mut crate::models::ParamTable, example_id: u64) {
        for (key, row) in &self.qpi {
            let prefix = Prefix::from_tokens(key.clone(), self.space.vocab()).unwrap();
            let allowed = self.space.allowed_tokens(&prefix).unwrap();
            for (i, &w) in allowed.iter().enumerate() {
                table.set(
                    crate::models::ParamKey {
                        example: example_id,
                        prefix: key.clone(),
                        token: w,
                    },
                    row[i],
                );
            }
        }
    }

    /// Max absolute q-value difference against a critic table.
    pub fn max_table_diff(&self, table: &crate::models::ParamTable, example_id: u64) -> f64 {
        let mut max = 0.0_f64;
        for (key, row) in &self.qpi {
            let prefix = Prefix::from_tokens(key.clone(), self.space.vocab()).unwrap();
            let allowed = self.space.allowed_tokens(&prefix).unwrap();
            for (i, &w) in allowed.iter().enumerate() {
                let got = table.get(&crate::models::ParamKey {
                    example: example_id,
                    prefix: key.clone(),
                    token: w,
                });
                max = max.max((row[i] - got).abs());
            }
        }
        max
    }
}

pub fn policy_evaluation<P>(
    space: &SeqSpace,
    pair: &GroundTruthPair,
    tau: f64,
    spec: &dyn Payoff,
    policy: P,
) -> Result<PolicyEvalTables, OracleError>
where
    P: Fn(&Prefix, &[TokenId]) -> Vec<f64>,
{
    let prefixes = space.enumerate_prefixes()?;
    let mut qpi: BTreeMap<Vec<TokenId>, Vec<f64>> = BTreeMap::new();
    let mut vpi: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    for prefix in prefixes.iter().rev() {
        let allowed = space.allowed_tokens(prefix)?;
        let mut row = Vec::with_capacity(allowed.len());
        for &w in &allowed {
            let r = incremental_payoff(space, spec, prefix, w, &pair.reference)?;
            let next = space.transition(prefix, w)?;
            if next.is_terminated() {
                row.push(r);
            } else {
                row.push(r + vpi[next.tokens()]);
            }
        }
        let probs = policy(prefix, &allowed);
        debug_assert_eq!(probs.len(), allowed.len());
        let expected: f64 = probs.iter().zip(&row).map(|(p, q)| p * q).sum();
        let value = expected + tau * entropy(&probs);
        vpi.insert(prefix.tokens().to_vec(), value);
        qpi.insert(prefix.tokens().to_vec(), row);
    }
    Ok(PolicyEvalTables {
        space: *space,
        qpi,
        vpi,
    })
}

/// Uniform policy over allowed tokens, for use with [`policy_evaluation`].
pub fn uniform_policy(_prefix: &Prefix, allowed: &[TokenId]) -> Vec<f64> {
    vec![1.0 / allowed.len() as f64; allowed.len()]
}
