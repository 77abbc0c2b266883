//! Pruning functions and the pruned, unnormalised conditional.
//!
//! Ties are broken by sorting on `(probability desc, token id asc)` and
//! cutting the ranked list, so every rule is deterministic.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::lm::TokenId;
use crate::logspace::neumaier_sum;
use crate::{Error, Result};

/// Slack on the top-π mass comparison, so a boundary token is not dropped by
/// rounding in the running sum.
pub const TOP_PI_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PruningRule {
    /// Keep every token.
    None,
    /// Keep the `k` most probable tokens.
    TopK(usize),
    /// Keep the smallest set whose mass reaches `π`.
    TopPi(f64),
}

impl PruningRule {
    pub fn validate(&self, size_with_eos: usize) -> Result<()> {
        match *self {
            PruningRule::None => Ok(()),
            PruningRule::TopK(k) if k >= 1 && k <= size_with_eos => Ok(()),
            PruningRule::TopK(k) => Err(Error::InvalidParameter(format!(
                "top_k:{k} needs 1 <= k <= {size_with_eos}"
            ))),
            PruningRule::TopPi(pi) if pi > 0.0 && pi <= 1.0 => Ok(()),
            PruningRule::TopPi(pi) => Err(Error::InvalidParameter(format!(
                "top_pi:{pi} needs 0 < pi <= 1"
            ))),
        }
    }

    /// Filename-safe form, e.g. `top_k_5`.
    pub fn label(&self) -> String {
        self.to_string().replace(':', "_")
    }

    /// True when the rule cannot remove any positive-probability token.
    pub fn is_identity_for(&self, size_with_eos: usize) -> bool {
        match *self {
            PruningRule::None => true,
            PruningRule::TopK(k) => k >= size_with_eos,
            PruningRule::TopPi(pi) => pi >= 1.0,
        }
    }
}

impl fmt::Display for PruningRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruningRule::None => f.write_str("none"),
            PruningRule::TopK(k) => write!(f, "top_k:{k}"),
            PruningRule::TopPi(pi) => write!(f, "top_pi:{pi}"),
        }
    }
}

impl FromStr for PruningRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(PruningRule::None);
        }
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad rule literal `{s}`")))?;
        match kind.trim() {
            "top_k" => {
                let k: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad k in `{s}`")))?;
                if k == 0 {
                    return Err(Error::Config(format!("k must be positive in `{s}`")));
                }
                Ok(PruningRule::TopK(k))
            }
            "top_pi" => {
                let pi: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad pi in `{s}`")))?;
                if !(pi > 0.0 && pi <= 1.0) {
                    return Err(Error::Config(format!("pi must lie in (0, 1] in `{s}`")));
                }
                Ok(PruningRule::TopPi(pi))
            }
            _ => Err(Error::Config(format!("unknown rule kind in `{s}`"))),
        }
    }
}

impl From<PruningRule> for String {
    fn from(r: PruningRule) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for PruningRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Token ids sorted by `(log-probability desc, id asc)`.
pub fn rank_order(dist: &[f64]) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..dist.len() as TokenId).collect();
    order.sort_by(|&a, &b| match dist[b as usize].total_cmp(&dist[a as usize]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// Tokens retained by `rule` for the conditional `dist` (log space), in rank
/// order.
pub fn keep_set(rule: PruningRule, dist: &[f64]) -> Vec<TokenId> {
    let order = rank_order(dist);
    match rule {
        PruningRule::None => order,
        PruningRule::TopK(k) => order.into_iter().take(k).collect(),
        PruningRule::TopPi(pi) => {
            let mut kept = Vec::new();
            let mut mass = 0.0;
            for t in order {
                kept.push(t);
                mass += dist[t as usize].exp();
                if mass >= pi - TOP_PI_TOL {
                    break;
                }
            }
            kept
        }
    }
}

/// `q̃(·|w_<t)` together with its keep set and local constant `Z_loc(w_<t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedConditional {
    /// Kept tokens in rank order.
    pub keep: Vec<TokenId>,
    /// Log-mass `log p(w)` on kept tokens, −∞ elsewhere.
    pub unnormalized: Vec<f64>,
    pub local_constant: f64,
    pub log_local_constant: f64,
}

impl PrunedConditional {
    pub fn is_kept(&self, token: TokenId) -> bool {
        self.unnormalized
            .get(token as usize)
            .is_some_and(|&lp| lp > f64::NEG_INFINITY)
    }
}

/// Applies `rule` to `dist`, producing the unnormalised pruned conditional.
///
/// When every positive-probability token survives, the local constant is set
/// to exactly 1 rather than the rounded sum of the stored conditional.
pub fn prune(rule: PruningRule, dist: &[f64]) -> Result<PrunedConditional> {
    let keep = keep_set(rule, dist);
    let mut unnormalized = vec![f64::NEG_INFINITY; dist.len()];
    for &t in &keep {
        unnormalized[t as usize] = dist[t as usize];
    }
    if keep.iter().all(|&t| dist[t as usize] == f64::NEG_INFINITY) {
        return Err(Error::DegenerateSupport { prefix: Vec::new() });
    }
    let drops_mass = dist
        .iter()
        .zip(&unnormalized)
        .any(|(&p, &q)| p > f64::NEG_INFINITY && q == f64::NEG_INFINITY);
    let (local_constant, log_local_constant) = if drops_mass {
        let z = neumaier_sum(keep.iter().map(|&t| dist[t as usize].exp()));
        (z, z.ln())
    } else {
        (1.0, 0.0)
    };
    if local_constant <= 0.0 || !local_constant.is_finite() {
        return Err(Error::DegenerateSupport { prefix: Vec::new() });
    }
    Ok(PrunedConditional {
        keep,
        unnormalized,
        local_constant,
        log_local_constant,
    })
}

/// `q_loc(·|w_<t) = q̃(·|w_<t) / Z_loc(w_<t)` in log space.
pub fn local_conditional(pc: &PrunedConditional) -> Vec<f64> {
    pc.unnormalized
        .iter()
        .map(|&lp| {
            if lp == f64::NEG_INFINITY {
                lp
            } else {
                lp - pc.log_local_constant
            }
        })
        .collect()
}

/// Guaranteed lower bound on `Z_loc` for any conditional: `k/|Σ_eos|` for
/// top-k, `π` for top-π, 1 with no pruning.
pub fn rule_pmin(rule: PruningRule, size_with_eos: usize) -> f64 {
    match rule {
        PruningRule::None => 1.0,
        PruningRule::TopK(k) => (k.min(size_with_eos)) as f64 / size_with_eos as f64,
        PruningRule::TopPi(pi) => pi,
    }
}
