//! Alphabets, sequences and tabular T-maxlength language models.
//!
//! A [`TabularLm`] stores one conditional distribution over `Σ ∪ {EOS}` per
//! reachable prefix, in log space, inside a prefix trie. Prefixes that the
//! model can never produce have no node. Every prefix of length `T` maps to a
//! one-hot EOS conditional.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::logspace::{neumaier_sum, safe_ln};
use crate::seeding::rng_from_seed;
use crate::{Error, Result};

pub type TokenId = u32;

/// Normalisation tolerance for stored conditionals (linear space).
pub const NORMALISATION_TOL: f64 = 1e-12;

/// Dense alphabet `0..V` plus an EOS token with id `V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter(
                "alphabet needs at least one symbol".into(),
            ));
        }
        if size >= TokenId::MAX as usize {
            return Err(Error::InvalidParameter(format!("alphabet size {size} too large")));
        }
        Ok(Self { size })
    }

    /// Number of ordinary symbols `V`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// `|Σ_eos| = V + 1`.
    pub fn size_with_eos(&self) -> usize {
        self.size + 1
    }

    pub fn eos(&self) -> TokenId {
        self.size as TokenId
    }

    pub fn is_symbol(&self, token: TokenId) -> bool {
        (token as usize) < self.size
    }

    pub fn symbols(&self) -> impl Iterator<Item = TokenId> {
        0..self.size as TokenId
    }
}

/// A string over the alphabet. EOS is never stored in `tokens`; `terminated`
/// records that EOS followed the body.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<TokenId>,
    pub terminated: bool,
}

impl Sequence {
    /// A complete string: `tokens` followed by EOS.
    pub fn terminated(tokens: impl Into<Vec<TokenId>>) -> Self {
        Self {
            tokens: tokens.into(),
            terminated: true,
        }
    }

    /// An unfinished prefix.
    pub fn prefix(tokens: impl Into<Vec<TokenId>>) -> Self {
        Self {
            tokens: tokens.into(),
            terminated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Sequence {
    /// Space-separated token ids, with `</s>` for EOS.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.tokens {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
            first = false;
        }
        if self.terminated {
            if !first {
                f.write_str(" ")?;
            }
            f.write_str("</s>")?;
        }
        Ok(())
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
struct Node {
    logprobs: Vec<f64>,
    children: Vec<Option<NodeId>>,
    parent: Option<(NodeId, TokenId)>,
    depth: usize,
}

/// An explicit T-maxlength autoregressive model. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularLm {
    alphabet: Alphabet,
    max_length: usize,
    nodes: Vec<Node>,
}

impl TabularLm {
    pub fn builder(alphabet: Alphabet, max_length: usize) -> TabularLmBuilder {
        TabularLmBuilder::new(alphabet, max_length)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn child(&self, node: NodeId, token: TokenId) -> Option<NodeId> {
        self.nodes[node]
            .children
            .get(token as usize)
            .copied()
            .flatten()
    }

    /// Stored log-probability vector (length `V + 1`, EOS last) at a node.
    pub fn logprobs_at(&self, node: NodeId) -> &[f64] {
        &self.nodes[node].logprobs
    }

    pub fn depth(&self, node: NodeId) -> usize {
        self.nodes[node].depth
    }

    /// Reconstructs the prefix leading to `node`.
    pub fn prefix_of(&self, mut node: NodeId) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.nodes[node].depth);
        while let Some((parent, token)) = self.nodes[node].parent {
            out.push(token);
            node = parent;
        }
        out.reverse();
        out
    }

    /// Node for a prefix, if the prefix is reachable.
    pub fn find(&self, prefix: &[TokenId]) -> Option<NodeId> {
        if prefix.len() > self.max_length {
            return None;
        }
        let mut node = self.root();
        for &t in prefix {
            node = self.child(node, t)?;
        }
        Some(node)
    }

    /// The conditional `log p(· | prefix)` over `Σ_eos`.
    pub fn conditional(&self, prefix: &[TokenId]) -> Result<&[f64]> {
        self.find(prefix)
            .map(|n| self.logprobs_at(n))
            .ok_or_else(|| Error::UnknownPrefix {
                prefix: prefix.to_vec(),
            })
    }

    /// `log p(w)`, including the EOS factor when `seq` is terminated.
    /// Zero-probability strings give −∞.
    pub fn sequence_logprob(&self, seq: &Sequence) -> f64 {
        if seq.len() > self.max_length {
            return f64::NEG_INFINITY;
        }
        let mut node = self.root();
        let mut total = 0.0;
        for &t in &seq.tokens {
            if !self.alphabet.is_symbol(t) {
                return f64::NEG_INFINITY;
            }
            let lp = self.nodes[node].logprobs[t as usize];
            if lp == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += lp;
            match self.child(node, t) {
                Some(c) => node = c,
                None => return f64::NEG_INFINITY,
            }
        }
        if seq.terminated {
            total += self.nodes[node].logprobs[self.alphabet.eos() as usize];
        }
        total
    }

    /// All nodes in lexicographic prefix order (depth-first preorder).
    pub fn nodes_preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(n) = stack.pop() {
            out.push(n);
            for c in self.nodes[n].children.iter().rev().flatten() {
                stack.push(*c);
            }
        }
        out
    }

    /// Writes the line-oriented text format:
    ///
    /// ```text
    /// ALPHABET V T
    /// | lp_0 ... lp_V
    /// 0 | lp_0 ... lp_V
    /// 0 1 | ...
    /// ```
    ///
    /// Floats use Rust's shortest round-trip representation, so
    /// [`TabularLm::read_text`] recovers the model bit for bit.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ALPHABET {} {}", self.alphabet.size(), self.max_length)?;
        for n in self.nodes_preorder() {
            let prefix = self.prefix_of(n);
            let mut line = String::new();
            for t in &prefix {
                line.push_str(&t.to_string());
                line.push(' ');
            }
            line.push('|');
            for lp in &self.nodes[n].logprobs {
                line.push(' ');
                line.push_str(&format!("{lp:?}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (alphabet, max_length) = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::parse(0, "empty model file"));
            };
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "ALPHABET" {
                return Err(Error::parse(i + 1, "expected header `ALPHABET V T`"));
            }
            let v: usize = parts[1]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad alphabet size"))?;
            let t: usize = parts[2]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad maximum length"))?;
            break (Alphabet::new(v)?, t);
        };
        let mut builder = TabularLmBuilder::new(alphabet, max_length);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (head, tail) = line
                .split_once('|')
                .ok_or_else(|| Error::parse(i + 1, "missing `|` separator"))?;
            let prefix = head
                .split_whitespace()
                .map(|s| s.parse::<TokenId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(i + 1, "bad token id"))?;
            let logprobs = tail
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(i + 1, "bad log-probability"))?;
            if logprobs.len() != alphabet.size_with_eos() {
                return Err(Error::parse(
                    i + 1,
                    format!("expected {} values", alphabet.size_with_eos()),
                ));
            }
            if builder.entries.contains_key(&prefix) {
                return Err(Error::parse(i + 1, "duplicate prefix"));
            }
            builder.set_logprobs(prefix, logprobs)?;
        }
        builder.build()
    }
}

/// Collects conditionals by prefix and validates them into a [`TabularLm`].
///
/// Missing conditionals for reachable length-`T` prefixes are filled with the
/// one-hot EOS distribution.
#[derive(Clone, Debug)]
pub struct TabularLmBuilder {
    alphabet: Alphabet,
    max_length: usize,
    entries: BTreeMap<Vec<TokenId>, Vec<f64>>,
}

impl TabularLmBuilder {
    pub fn new(alphabet: Alphabet, max_length: usize) -> Self {
        Self {
            alphabet,
            max_length,
            entries: BTreeMap::new(),
        }
    }

    /// Sets the conditional at `prefix` from linear probabilities.
    pub fn set_probs(&mut self, prefix: impl Into<Vec<TokenId>>, probs: &[f64]) -> Result<&mut Self> {
        let logs = probs.iter().map(|&p| safe_ln(p)).collect();
        self.set_logprobs(prefix, logs)
    }

    pub fn set_logprobs(
        &mut self,
        prefix: impl Into<Vec<TokenId>>,
        logprobs: Vec<f64>,
    ) -> Result<&mut Self> {
        let prefix = prefix.into();
        if logprobs.len() != self.alphabet.size_with_eos() {
            return Err(Error::InvalidModel(format!(
                "conditional at {prefix:?} has {} entries, expected {}",
                logprobs.len(),
                self.alphabet.size_with_eos()
            )));
        }
        if prefix.len() > self.max_length {
            return Err(Error::InvalidModel(format!(
                "prefix {prefix:?} longer than T = {}",
                self.max_length
            )));
        }
        if let Some(t) = prefix.iter().find(|&&t| !self.alphabet.is_symbol(t)) {
            return Err(Error::InvalidModel(format!(
                "prefix {prefix:?} contains non-symbol token {t}"
            )));
        }
        if logprobs.iter().any(|lp| lp.is_nan() || *lp > 1e-12) {
            return Err(Error::InvalidModel(format!(
                "conditional at {prefix:?} has an invalid log-probability"
            )));
        }
        let total = neumaier_sum(logprobs.iter().map(|lp| lp.exp()));
        if (total - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::InvalidModel(format!(
                "conditional at {prefix:?} sums to {total}"
            )));
        }
        self.entries.insert(prefix, logprobs);
        Ok(self)
    }

    pub fn build(mut self) -> Result<TabularLm> {
        if self.max_length == 0 {
            return Err(Error::InvalidParameter("maximum length must be at least 1".into()));
        }
        let v = self.alphabet.size();
        let eos = self.alphabet.eos() as usize;
        let one_hot: Vec<f64> = (0..=v)
            .map(|i| if i == eos { 0.0 } else { f64::NEG_INFINITY })
            .collect();

        let root = self
            .entries
            .remove(&Vec::new())
            .ok_or_else(|| Error::InvalidModel("no conditional for the empty prefix".into()))?;
        let mut nodes = vec![Node {
            logprobs: root,
            children: vec![None; v],
            parent: None,
            depth: 0,
        }];
        let mut queue = VecDeque::from([(0usize, Vec::<TokenId>::new())]);
        while let Some((id, prefix)) = queue.pop_front() {
            let depth = nodes[id].depth;
            if depth == self.max_length {
                let lps = &nodes[id].logprobs;
                let ok = lps[eos].abs() <= NORMALISATION_TOL
                    && lps[..v].iter().all(|&lp| lp == f64::NEG_INFINITY);
                if !ok {
                    return Err(Error::InvalidModel(format!(
                        "prefix {prefix:?} has length T but is not one-hot on EOS"
                    )));
                }
                continue;
            }
            for t in 0..v {
                if nodes[id].logprobs[t] == f64::NEG_INFINITY {
                    continue;
                }
                let mut child_prefix = prefix.clone();
                child_prefix.push(t as TokenId);
                let logprobs = match self.entries.remove(&child_prefix) {
                    Some(lps) => lps,
                    None if depth + 1 == self.max_length => one_hot.clone(),
                    None => {
                        return Err(Error::InvalidModel(format!(
                            "reachable prefix {child_prefix:?} has no conditional"
                        )))
                    }
                };
                let child = nodes.len();
                nodes.push(Node {
                    logprobs,
                    children: vec![None; v],
                    parent: Some((id, t as TokenId)),
                    depth: depth + 1,
                });
                nodes[id].children[t] = Some(child);
                queue.push_back((child, child_prefix));
            }
        }
        if let Some(prefix) = self.entries.keys().next() {
            return Err(Error::InvalidModel(format!(
                "conditional given for unreachable prefix {prefix:?}"
            )));
        }
        Ok(TabularLm {
            alphabet: self.alphabet,
            max_length: self.max_length,
            nodes,
        })
    }
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidParameter(format!("{name} = {x} must lie in (0, 1)")));
    }
    Ok(())
}

/// Model with `p(a) = x` and `p(w) = (1−x)·V^{1−T}` for every `w ∈ b∘Σ^{T−1}`,
/// where `a = 0` and `b = 1`. Used for the reverse-KL growth argument.
pub fn build_reverse_construction(x: f64, vocab_size: usize, max_length: usize) -> Result<TabularLm> {
    check_open_unit("x", x)?;
    if vocab_size < 2 {
        return Err(Error::InvalidParameter("vocab_size must be at least 2".into()));
    }
    let alphabet = Alphabet::new(vocab_size)?;
    let mut b = TabularLm::builder(alphabet, max_length);
    let mut root = vec![0.0; vocab_size + 1];
    root[0] = x;
    root[1] = 1.0 - x;
    b.set_probs(vec![], &root)?;

    let mut eos_only = vec![0.0; vocab_size + 1];
    eos_only[vocab_size] = 1.0;
    if max_length > 1 {
        b.set_probs(vec![0], &eos_only)?;
    }

    let mut uniform = vec![1.0 / vocab_size as f64; vocab_size + 1];
    uniform[vocab_size] = 0.0;
    let mut frontier = vec![vec![1 as TokenId]];
    for _ in 1..max_length {
        let mut next = Vec::with_capacity(frontier.len() * vocab_size);
        for prefix in frontier {
            b.set_probs(prefix.clone(), &uniform)?;
            for t in alphabet.symbols() {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        frontier = next;
    }
    b.build()
}

/// Model with `p(a^T) = x^T` and `p(w) = x^t(1−x)V^{−(T−t−1)}` for
/// `w ∈ a^t∘b∘Σ^{T−t−1}`. Used for the forward-KL growth argument with
/// top-k; requires `k/V < x < 1`.
pub fn build_forward_construction(
    x: f64,
    k: usize,
    vocab_size: usize,
    max_length: usize,
) -> Result<TabularLm> {
    check_open_unit("x", x)?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if vocab_size < 2 {
        return Err(Error::InvalidParameter("vocab_size must be at least 2".into()));
    }
    if x <= k as f64 / vocab_size as f64 {
        return Err(Error::InvalidParameter(format!(
            "x = {x} must exceed k/V = {}",
            k as f64 / vocab_size as f64
        )));
    }
    let alphabet = Alphabet::new(vocab_size)?;
    let mut b = TabularLm::builder(alphabet, max_length);

    let mut branch = vec![0.0; vocab_size + 1];
    branch[0] = x;
    branch[1] = 1.0 - x;
    let mut uniform = vec![1.0 / vocab_size as f64; vocab_size + 1];
    uniform[vocab_size] = 0.0;

    for t in 0..max_length {
        let spine = vec![0 as TokenId; t];
        b.set_probs(spine.clone(), &branch)?;
        // Uniform subtree under a^t b, down to depth T−1.
        let mut start = spine;
        start.push(1);
        let mut frontier = vec![start];
        for _ in (t + 1)..max_length {
            let mut next = Vec::with_capacity(frontier.len() * vocab_size);
            for prefix in frontier {
                b.set_probs(prefix.clone(), &uniform)?;
                for s in alphabet.symbols() {
                    let mut p = prefix.clone();
                    p.push(s);
                    next.push(p);
                }
            }
            frontier = next;
        }
    }
    b.build()
}

/// Smallest probability the random generator leaves on any entry.
pub const RANDOM_FLOOR: f64 = 1e-12;

/// Full-support random model: every conditional at depth `< T` is a draw from
/// a symmetric Dirichlet with the given concentration, floored at
/// [`RANDOM_FLOOR`] and renormalised. Deterministic in `seed`.
pub fn random_lm(seed: u64, vocab_size: usize, max_length: usize, concentration: f64) -> Result<TabularLm> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "concentration = {concentration} must be positive"
        )));
    }
    let alphabet = Alphabet::new(vocab_size)?;
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut b = TabularLm::builder(alphabet, max_length);
    let mut frontier = vec![Vec::<TokenId>::new()];
    for _ in 0..max_length {
        let mut next = Vec::with_capacity(frontier.len() * vocab_size);
        for prefix in frontier {
            let mut draws: Vec<f64> = (0..=vocab_size)
                .map(|_| gamma.sample(&mut rng).max(RANDOM_FLOOR))
                .collect();
            let total: f64 = draws.iter().sum();
            for d in draws.iter_mut() {
                *d = (*d / total).max(RANDOM_FLOOR);
            }
            let total: f64 = draws.iter().sum();
            let logs = draws.iter().map(|d| (d / total).ln()).collect();
            b.set_logprobs(prefix.clone(), logs)?;
            for t in alphabet.symbols() {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        frontier = next;
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent enumeration of every terminated string up to length T.
    fn all_strings(v: usize, t: usize) -> Vec<Sequence> {
        let mut out = vec![Sequence::terminated(vec![])];
        let mut frontier = vec![Vec::<TokenId>::new()];
        for _ in 0..t {
            let mut next = Vec::new();
            for p in &frontier {
                for s in 0..v as TokenId {
                    let mut q = p.clone();
                    q.push(s);
                    out.push(Sequence::terminated(q.clone()));
                    next.push(q);
                }
            }
            frontier = next;
        }
        out
    }

    fn total_mass(lm: &TabularLm) -> f64 {
        let strings = all_strings(lm.alphabet().size(), lm.max_length());
        neumaier_sum(strings.iter().map(|s| lm.sequence_logprob(s).exp()))
    }

    fn uniform_lm(v: usize, t: usize) -> TabularLm {
        let alphabet = Alphabet::new(v).unwrap();
        let mut b = TabularLm::builder(alphabet, t);
        let u = vec![1.0 / (v + 1) as f64; v + 1];
        let mut frontier = vec![vec![]];
        for _ in 0..t {
            let mut next = vec![];
            for p in frontier {
                b.set_probs(p.clone(), &u).unwrap();
                for s in alphabet.symbols() {
                    let mut q: Vec<TokenId> = p.clone();
                    q.push(s);
                    next.push(q);
                }
            }
            frontier = next;
        }
        b.build().unwrap()
    }

    #[test]
    fn uniform_root_conditional() {
        let lm = uniform_lm(2, 2);
        let c = lm.conditional(&[]).unwrap();
        for lp in c {
            assert!((lp.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_t_prefix_is_one_hot_eos() {
        let lm = uniform_lm(2, 2);
        let c = lm.conditional(&[1, 0]).unwrap();
        assert_eq!(c, &[f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]);
    }

    #[test]
    fn unknown_prefix() {
        let lm = uniform_lm(2, 2);
        assert!(matches!(lm.conditional(&[0, 0, 0]), Err(Error::UnknownPrefix { .. })));
        let r = build_reverse_construction(0.7, 4, 3).unwrap();
        assert!(matches!(r.conditional(&[2]), Err(Error::UnknownPrefix { .. })));
    }

    #[test]
    fn uniform_sequence_logprob() {
        let lm = uniform_lm(2, 1);
        let lp = lm.sequence_logprob(&Sequence::terminated(vec![0]));
        assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert_eq!(lm.sequence_logprob(&Sequence::terminated(vec![0, 0])), f64::NEG_INFINITY);
    }

    #[test]
    fn reverse_construction_values() {
        let lm = build_reverse_construction(0.7, 4, 3).unwrap();
        let root = lm.conditional(&[]).unwrap();
        assert!((root[0].exp() - 0.7).abs() < 1e-15);
        assert!((root[1].exp() - 0.3).abs() < 1e-15);
        assert!(root[2..].iter().all(|&lp| lp == f64::NEG_INFINITY));
        assert!((lm.sequence_logprob(&Sequence::terminated(vec![0])) - 0.7f64.ln()).abs() < 1e-15);
        assert!((total_mass(&lm) - 1.0).abs() < 1e-12);
        // Every b∘Σ² string has mass 0.3/16.
        for w1 in 0..4 {
            for w2 in 0..4 {
                let p = lm.sequence_logprob(&Sequence::terminated(vec![1, w1, w2])).exp();
                assert!((p / (0.3 / 16.0) - 1.0).abs() < 1e-10);
            }
        }
        let small = build_reverse_construction(0.5, 2, 2).unwrap();
        let p = small.sequence_logprob(&Sequence::terminated(vec![1, 0])).exp();
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reverse_construction_rejects_bad_x() {
        assert!(matches!(build_reverse_construction(1.0, 4, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_reverse_construction(0.0, 4, 3), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn forward_construction_values() {
        let lm = build_forward_construction(0.6, 2, 4, 2).unwrap();
        assert!((total_mass(&lm) - 1.0).abs() < 1e-12);
        // t = 1: "ab" has mass x(1−x).
        let p = lm.sequence_logprob(&Sequence::terminated(vec![0, 1])).exp();
        assert!((p - 0.24).abs() < 1e-15);
        // t = 0: "b w" has mass (1−x)/V.
        for w in 0..4 {
            let p = lm.sequence_logprob(&Sequence::terminated(vec![1, w])).exp();
            assert!((p / 0.1 - 1.0).abs() < 1e-10);
        }
        let lm3 = build_forward_construction(0.6, 2, 4, 3).unwrap();
        let p = lm3.sequence_logprob(&Sequence::terminated(vec![0, 0, 0])).exp();
        assert!((p - 0.216).abs() < 1e-15);
        assert!((total_mass(&lm3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_construction_closed_form() {
        let (x, v, t) = (0.7, 3usize, 4usize);
        let lm = build_forward_construction(x, 2, v, t).unwrap();
        for s in all_strings(v, t) {
            let got = lm.sequence_logprob(&s).exp();
            let first_b = s.tokens.iter().position(|&c| c != 0);
            let want = match first_b {
                None if s.len() == t => x.powi(t as i32),
                Some(i) if s.tokens[i] == 1 && s.len() == t => {
                    x.powi(i as i32) * (1.0 - x) * (1.0 / v as f64).powi((t - i - 1) as i32)
                }
                _ => 0.0,
            };
            if want == 0.0 {
                assert_eq!(got, 0.0, "{s}");
            } else {
                assert!((got / want - 1.0).abs() < 1e-10, "{s}");
            }
        }
    }

    #[test]
    fn forward_construction_rejects_small_x() {
        assert!(matches!(
            build_forward_construction(0.5, 2, 4, 3),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn random_lm_deterministic_and_normalised() {
        let a = random_lm(11, 3, 3, 0.5).unwrap();
        let b = random_lm(11, 3, 3, 0.5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_lm(12, 3, 3, 0.5).unwrap());
        for n in a.nodes_preorder() {
            let s = neumaier_sum(a.logprobs_at(n).iter().map(|lp| lp.exp()));
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((total_mass(&a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_lm_large_concentration_is_near_uniform() {
        for seed in 0..100 {
            let lm = random_lm(seed, 4, 1, 1e4).unwrap();
            let probs: Vec<f64> = lm.conditional(&[]).unwrap().iter().map(|l| l.exp()).collect();
            let max = probs.iter().cloned().fold(0.0, f64::max);
            let min = probs.iter().cloned().fold(1.0, f64::min);
            assert!(max - min < 0.1, "seed {seed}: {probs:?}");
        }
    }

    #[test]
    fn text_format_round_trips_bit_exactly() {
        for lm in [
            random_lm(3, 3, 3, 0.3).unwrap(),
            build_reverse_construction(0.7, 4, 3).unwrap(),
            build_forward_construction(0.6, 2, 4, 3).unwrap(),
        ] {
            let mut buf = Vec::new();
            lm.write_text(&mut buf).unwrap();
            let back = TabularLm::read_text(buf.as_slice()).unwrap();
            assert_eq!(lm.node_count(), back.node_count());
            for n in lm.nodes_preorder() {
                let prefix = lm.prefix_of(n);
                let a = lm.conditional(&prefix).unwrap();
                let b = back.conditional(&prefix).unwrap();
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            let mut again = Vec::new();
            back.write_text(&mut again).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn text_format_header() {
        let lm = build_reverse_construction(0.5, 2, 2).unwrap();
        let mut buf = Vec::new();
        lm.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("ALPHABET 2 2"));
        assert!(lines.next().unwrap().starts_with("| "));
    }

    #[test]
    fn builder_rejects_unnormalised_and_unreachable() {
        let alphabet = Alphabet::new(2).unwrap();
        let mut b = TabularLm::builder(alphabet, 1);
        assert!(b.set_probs(vec![], &[0.5, 0.5, 0.1]).is_err());

        let mut b = TabularLm::builder(alphabet, 2);
        b.set_probs(vec![], &[1.0, 0.0, 0.0]).unwrap();
        b.set_probs(vec![1], &[0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(b.build(), Err(Error::InvalidModel(_))));

        let mut b = TabularLm::builder(alphabet, 1);
        b.set_probs(vec![], &[1.0, 0.0, 0.0]).unwrap();
        b.set_probs(vec![0], &[0.5, 0.0, 0.5]).unwrap();
        assert!(matches!(b.build(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn sequence_display() {
        assert_eq!(Sequence::terminated(vec![0, 2]).to_string(), "0 2 </s>");
        assert_eq!(Sequence::terminated(vec![]).to_string(), "</s>");
        assert_eq!(Sequence::prefix(vec![1]).to_string(), "1");
    }
}
