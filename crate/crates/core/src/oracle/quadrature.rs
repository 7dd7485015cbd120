//! Quadrature rules for expectations over a normal distribution.

use std::f64::consts::{PI, SQRT_2};

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::OracleError;

type RuleKey = (QuadratureScheme, usize, u64);

/// Smallest node count accepted from configuration.
pub const MIN_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuadratureScheme {
    GaussHermite,
    UniformSimpson,
}

/// How the spectral integral is discretized.
///
/// For `UniformSimpson`, `node_count` is the (even) number of intervals and
/// the grid covers `±span_sigmas` standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub node_count: usize,
    pub scheme: QuadratureScheme,
    pub span_sigmas: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::gauss_hermite(128)
    }
}

impl QuadratureSpec {
    pub fn gauss_hermite(node_count: usize) -> Self {
        Self {
            node_count,
            scheme: QuadratureScheme::GaussHermite,
            span_sigmas: 6.0,
        }
    }

    pub fn simpson(node_count: usize, span_sigmas: f64) -> Self {
        Self {
            node_count,
            scheme: QuadratureScheme::UniformSimpson,
            span_sigmas,
        }
    }

    /// Same scheme with twice the nodes.
    pub fn doubled(&self) -> Self {
        Self {
            node_count: self.node_count * 2,
            ..*self
        }
    }

    /// Full check, including the minimum node count.
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.node_count < MIN_NODES {
            return Err(OracleError::InvalidQuadrature(format!(
                "node_count {} is below the minimum of {MIN_NODES}",
                self.node_count
            )));
        }
        self.check_structure()
    }

    pub(crate) fn check_structure(&self) -> Result<(), OracleError> {
        if self.node_count < 2 {
            return Err(OracleError::InvalidQuadrature(format!(
                "node_count {} is too small",
                self.node_count
            )));
        }
        if self.scheme == QuadratureScheme::UniformSimpson {
            if !self.node_count.is_multiple_of(2) {
                return Err(OracleError::InvalidQuadrature(format!(
                    "Simpson needs an even interval count, got {}",
                    self.node_count
                )));
            }
            if !(self.span_sigmas.is_finite() && self.span_sigmas > 0.0) {
                return Err(OracleError::InvalidQuadrature(format!(
                    "span_sigmas must be > 0, got {}",
                    self.span_sigmas
                )));
            }
        }
        Ok(())
    }

    /// Builds (or fetches the cached) rule for this spec.
    pub fn rule(&self) -> Result<Arc<QuadratureRule>, OracleError> {
        self.check_structure()?;
        static CACHE: OnceLock<Mutex<HashMap<RuleKey, Arc<QuadratureRule>>>> = OnceLock::new();
        let key = (self.scheme, self.node_count, self.span_sigmas.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&key) {
            return Ok(Arc::clone(rule));
        }
        let rule = Arc::new(match self.scheme {
            QuadratureScheme::GaussHermite => QuadratureRule::gauss_hermite(self.node_count),
            QuadratureScheme::UniformSimpson => {
                QuadratureRule::simpson(self.node_count, self.span_sigmas)
            }
        });
        cache
            .lock()
            .expect("quadrature cache poisoned")
            .insert(key, Arc::clone(&rule));
        Ok(rule)
    }
}

/// Nodes and weights for `E[f(Z)]`, `Z ~ Normal(0, 1)`. Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss-Hermite rule. Nodes start from the eigenvalues of the Jacobi
    /// matrix and are polished by Newton steps on the orthonormal Hermite
    /// recurrence, which also yields the weights.
    pub fn gauss_hermite(n: usize) -> Self {
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut roots: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        roots.sort_by(f64::total_cmp);

        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        // p_n(z) and p'_n(z) for the orthonormal Hermite functions without the Gaussian factor,
        // returned as (p, p', ln scale) because the recurrence overflows for large n and z.
        let eval = |z: f64| {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            let mut log_scale = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                if p1.abs() > 1e150 {
                    p1 *= 1e-150;
                    p2 *= 1e-150;
                    log_scale += 150.0 * std::f64::consts::LN_10;
                }
            }
            (p1, (2.0 * nf).sqrt() * p2, log_scale)
        };
        let half = n / 2;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for k in 0..n.div_ceil(2) {
            // polish the non-negative half and mirror it
            let mut z = roots[n - 1 - k].abs();
            if n % 2 == 1 && k == half {
                z = 0.0;
            }
            for _ in 0..8 {
                let (p, d, _) = eval(z);
                let step = p / d;
                z -= step;
                if step.abs() <= 1e-16 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, dp, log_scale) = eval(z);
            let w = (2.0f64.ln() - 2.0 * (dp.abs().ln() + log_scale)).exp() / PI.sqrt();
            nodes[n - 1 - k] = z * SQRT_2;
            nodes[k] = -z * SQRT_2;
            weights[n - 1 - k] = w;
            weights[k] = w;
        }
        Self::normalized(nodes, weights)
    }

    /// Composite Simpson rule on `[-span, span]` with `intervals` (even) panels.
    pub fn simpson(intervals: usize, span: f64) -> Self {
        let h = 2.0 * span / intervals as f64;
        let norm = 1.0 / (2.0 * PI).sqrt();
        let (nodes, weights) = (0..=intervals)
            .map(|k| {
                let z = -span + h * k as f64;
                let coeff = if k == 0 || k == intervals {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                (z, coeff * h / 3.0 * norm * (-0.5 * z * z).exp())
            })
            .unzip();
        Self::normalized(nodes, weights)
    }

    fn normalized(nodes: Vec<f64>, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Z)]` for standard normal `Z`, summed in node order.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}
