//! JSON run configurations with defaults, validation, and a content digest.
//!
//! Every field is optional; missing fields take the defaults of the
//! simulation design. Unknown fields and type mismatches are rejected with
//! the JSON pointer of the offending value. Semantic checks report every
//! violation at once.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversarial::SearchOptions;
use crate::dgp::{DgpConfig, McConfig, OracleGrid};
use crate::error::{Error, Result};

/// Settings of the adversarial-search command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub n: usize,
    /// `p = ⌈nα⌉`.
    pub alpha: f64,
    pub pi1: f64,
    pub cov_decay: f64,
    /// Seed for the covariate rows.
    pub seed: u64,
    pub search: SearchOptions,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            n: 50,
            alpha: 0.2,
            pi1: 0.5,
            cov_decay: 0.1,
            seed: 2024,
            search: SearchOptions::default(),
        }
    }
}

impl AdversarialConfig {
    /// The equivalent population settings (outcomes are not used).
    pub fn dgp(&self) -> DgpConfig {
        DgpConfig {
            pool_size: self.n.max(2),
            n: self.n,
            alpha: self.alpha,
            pi1: self.pi1,
            cov_decay: self.cov_decay,
            seed: self.seed,
            ..DgpConfig::default()
        }
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        return String::new();
    }
    let mut out = String::new();
    for seg in s.split('.') {
        // Sequence indices render as `name[k]`.
        let mut rest = seg;
        while let Some(open) = rest.find('[') {
            let (head, tail) = rest.split_at(open);
            if !head.is_empty() {
                out.push('/');
                out.push_str(head);
            }
            let close = tail.find(']').unwrap_or(tail.len());
            out.push('/');
            out.push_str(&tail[1..close]);
            rest = &tail[(close + 1).min(tail.len())..];
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

/// Deserialize with pointer-annotated errors.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let ptr = pointer(e.path());
        Error::Config(vec![(ptr, e.into_inner().to_string())])
    })
}

/// Semantic checks beyond types.
pub trait Validate {
    fn violations(&self) -> Vec<(String, String)>;

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

fn prefixed(prefix: &str, cfg: &DgpConfig) -> Vec<(String, String)> {
    match cfg.validate() {
        Err(Error::Config(v)) => v.into_iter().map(|(p, m)| (format!("{prefix}{p}"), m)).collect(),
        _ => Vec::new(),
    }
}

impl Validate for DgpConfig {
    fn violations(&self) -> Vec<(String, String)> {
        prefixed("", self)
    }
}

impl Validate for OracleGrid {
    fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        for (name, empty) in [
            ("/n", self.n.is_empty()),
            ("/alpha", self.alpha.is_empty()),
            ("/outcome_model", self.outcome_model.is_empty()),
            ("/error_kind", self.error_kind.is_empty()),
            ("/gamma", self.gamma.is_empty()),
            ("/pi1", self.pi1.is_empty()),
        ] {
            if empty {
                v.push((name.to_string(), "must not be empty".to_string()));
            }
        }
        let base = DgpConfig {
            pool_size: self.pool_size,
            cov_decay: self.cov_decay,
            worst_case_scope: self.worst_case_scope,
            seed: self.seed,
            ..DgpConfig::default()
        };
        if !(0.0..1.0).contains(&self.cov_decay) {
            v.push(("/cov_decay".into(), format!("must lie in [0, 1), got {}", self.cov_decay)));
        }
        for (k, &n) in self.n.iter().enumerate() {
            if n < 2 || n > self.pool_size {
                v.push((format!("/n/{k}"), format!("must satisfy 2 <= n <= pool_size ({}), got {n}", self.pool_size)));
            }
        }
        for (k, &a) in self.alpha.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                v.push((format!("/alpha/{k}"), format!("must lie in (0, 1), got {a}")));
            } else {
                for &n in &self.n {
                    let c = DgpConfig { n, alpha: a, ..base.clone() };
                    if n >= 2 && c.p() >= n {
                        v.push((format!("/alpha/{k}"), format!("gives p = {} >= n = {n}", c.p())));
                    }
                }
            }
        }
        for (k, &g) in self.gamma.iter().enumerate() {
            if !(g > 0.0 && g.is_finite()) {
                v.push((format!("/gamma/{k}"), format!("must be positive, got {g}")));
            }
        }
        for (k, &p) in self.pi1.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                v.push((format!("/pi1/{k}"), format!("must lie in (0, 1), got {p}")));
            } else {
                for &n in &self.n {
                    let c = DgpConfig { n, pi1: p, ..base.clone() };
                    if n >= 2 && (c.n1() == 0 || c.n1() >= n) {
                        v.push((format!("/pi1/{k}"), format!("gives n1 = {} for n = {n}", c.n1())));
                    }
                }
            }
        }
        v
    }
}

impl Validate for McConfig {
    fn violations(&self) -> Vec<(String, String)> {
        let mut v = prefixed("/dgp", &self.dgp);
        if self.replicates < 2 {
            v.push(("/replicates".into(), format!("must be at least 2, got {}", self.replicates)));
        }
        if self.estimators.is_empty() {
            v.push(("/estimators".into(), "must not be empty".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            v.push(("/level".into(), format!("must lie in (0, 1), got {}", self.level)));
        }
        v
    }
}

impl Validate for SearchOptions {
    fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        if self.starts == 0 {
            v.push(("/starts".into(), "must be at least 1".into()));
        }
        for (k, o) in self.offsets.iter().enumerate() {
            if !(*o > 0.0 && o.is_finite()) {
                v.push((format!("/offsets/{k}"), format!("must be positive, got {o}")));
            }
        }
        if self.init_q0.is_nan() || self.init_q0 <= 0.0 {
            v.push(("/init_q0".into(), format!("must be positive, got {}", self.init_q0)));
        }
        if self.feas_tol.is_nan() || self.feas_tol < 0.0 {
            v.push(("/feas_tol".into(), format!("must be nonnegative, got {}", self.feas_tol)));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            v.push(("/max_outer".into(), "iteration limits must be positive".into()));
        }
        v
    }
}

impl Validate for AdversarialConfig {
    fn violations(&self) -> Vec<(String, String)> {
        let mut v: Vec<_> = prefixed("", &self.dgp())
            .into_iter()
            .filter(|(p, _)| p != "/gamma")
            .collect();
        if self.n >= 2 && self.alpha > 0.0 && self.alpha < 1.0 && self.dgp().p() + 2 > self.n {
            v.push(("/alpha".into(), "needs n >= p + 2".into()));
        }
        v.extend(self.search.violations().into_iter().map(|(p, m)| (format!("/search{p}"), m)));
        v
    }
}

/// Parse and validate a configuration document.
pub fn load_str<T: DeserializeOwned + Validate>(text: &str) -> Result<T> {
    let cfg: T = parse_json(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load<T: DeserializeOwned + Validate>(path: &Path) -> Result<T> {
    load_str(&std::fs::read_to_string(path)?)
}

/// Hex SHA-256 of the resolved configuration (defaults filled in).
pub fn digest<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let d = Sha256::digest(&bytes);
    Ok(d.iter().map(|b| format!("{b:02x}")).collect())
}
