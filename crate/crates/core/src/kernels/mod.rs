//! Covariance functions over time and their additive composition.
//!
//! All kernels are evaluated in a shifted time coordinate where `0` is the
//! model epoch; this only matters for the non-stationary members
//! (Wiener, linear, piecewise constant).

mod ssm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ssm::StateSpace;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("{kernel} kernel: field `{field}` must be strictly positive and finite (got {value})")]
    InvalidParameter {
        kernel: &'static str,
        field: &'static str,
        value: f64,
    },
    #[error("{kernel} kernel requires field `{field}`")]
    MissingField { kernel: String, field: &'static str },
    #[error("{kernel} kernel does not accept field `{field}`")]
    UnexpectedField { kernel: String, field: &'static str },
    #[error("unknown kernel type `{0}`")]
    UnknownType(String),
    #[error("{0} kernel needs at least two children")]
    TooFewChildren(&'static str),
    #[error(
        "piecewise_constant kernel: field `boundaries` must be finite and strictly increasing"
    )]
    BoundariesNotIncreasing,
    #[error("product composition has no exact state-space form; use additive composition")]
    ProductUnsupported,
}

/// A covariance function `k(t, t')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum Kernel {
    Constant {
        var: f64,
    },
    /// Constant within each half-open interval `[b_i, b_{i+1})`, independent across them.
    PiecewiseConstant {
        var: f64,
        boundaries: Vec<f64>,
    },
    Wiener {
        var: f64,
    },
    /// Matérn ν = 1/2 (Ornstein–Uhlenbeck).
    Matern12 {
        var: f64,
        lscale: f64,
    },
    /// Matérn ν = 3/2.
    Matern32 {
        var: f64,
        lscale: f64,
    },
    Linear {
        var: f64,
    },
    Sum(Vec<Kernel>),
    /// Pointwise product. Evaluable, but rejected by [`Kernel::to_state_space`].
    Product(Vec<Kernel>),
}

fn positive(kernel: &'static str, field: &'static str, value: f64) -> Result<(), KernelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(KernelError::InvalidParameter {
            kernel,
            field,
            value,
        })
    }
}

impl Kernel {
    pub fn constant(var: f64) -> Result<Self, KernelError> {
        positive("constant", "var", var)?;
        Ok(Self::Constant { var })
    }

    pub fn piecewise_constant(var: f64, boundaries: Vec<f64>) -> Result<Self, KernelError> {
        let k = Self::PiecewiseConstant { var, boundaries };
        k.validate()?;
        Ok(k)
    }

    pub fn wiener(var: f64) -> Result<Self, KernelError> {
        positive("wiener", "var", var)?;
        Ok(Self::Wiener { var })
    }

    pub fn matern12(var: f64, lscale: f64) -> Result<Self, KernelError> {
        let k = Self::Matern12 { var, lscale };
        k.validate()?;
        Ok(k)
    }

    pub fn matern32(var: f64, lscale: f64) -> Result<Self, KernelError> {
        let k = Self::Matern32 { var, lscale };
        k.validate()?;
        Ok(k)
    }

    pub fn linear(var: f64) -> Result<Self, KernelError> {
        positive("linear", "var", var)?;
        Ok(Self::Linear { var })
    }

    pub fn sum(children: Vec<Kernel>) -> Result<Self, KernelError> {
        let k = Self::Sum(children);
        k.validate()?;
        Ok(k)
    }

    pub fn product(children: Vec<Kernel>) -> Result<Self, KernelError> {
        let k = Self::Product(children);
        k.validate()?;
        Ok(k)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::PiecewiseConstant { .. } => "piecewise_constant",
            Self::Wiener { .. } => "wiener",
            Self::Matern12 { .. } => "matern12",
            Self::Matern32 { .. } => "matern32",
            Self::Linear { .. } => "linear",
            Self::Sum(_) => "sum",
            Self::Product(_) => "product",
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let name = self.type_name();
        match self {
            Self::Constant { var } | Self::Wiener { var } | Self::Linear { var } => {
                positive(name, "var", *var)
            }
            Self::PiecewiseConstant { var, boundaries } => {
                positive(name, "var", *var)?;
                let finite = boundaries.iter().all(|b| b.is_finite());
                if !finite || boundaries.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(KernelError::BoundariesNotIncreasing);
                }
                Ok(())
            }
            Self::Matern12 { var, lscale } | Self::Matern32 { var, lscale } => {
                positive(name, "var", *var)?;
                positive(name, "lscale", *lscale)
            }
            Self::Sum(children) | Self::Product(children) => {
                if children.len() < 2 {
                    return Err(KernelError::TooFewChildren(name));
                }
                children.iter().try_for_each(Kernel::validate)
            }
        }
    }

    /// `k(t, t')` in the epoch-shifted time coordinate.
    pub fn evaluate(&self, t: f64, t2: f64) -> f64 {
        match self {
            Self::Constant { var } => *var,
            Self::PiecewiseConstant { var, boundaries } => {
                if interval_index(boundaries, t) == interval_index(boundaries, t2) {
                    *var
                } else {
                    0.0
                }
            }
            Self::Wiener { var } => var * t.min(t2).max(0.0),
            Self::Matern12 { var, lscale } => var * (-(t - t2).abs() / lscale).exp(),
            Self::Matern32 { var, lscale } => {
                let r = 3f64.sqrt() * (t - t2).abs() / lscale;
                var * (1.0 + r) * (-r).exp()
            }
            Self::Linear { var } => var * t * t2,
            Self::Sum(children) => children.iter().map(|k| k.evaluate(t, t2)).sum(),
            Self::Product(children) => children.iter().map(|k| k.evaluate(t, t2)).product(),
        }
    }

    /// Dense Gram matrix `[k(t_i, t_j)]`.
    pub fn gram(&self, times: &[f64]) -> DMatrix<f64> {
        let n = times.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.evaluate(times[i], times[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Equivalent Gauss–Markov representation. Times passed to the returned
    /// state space are absolute; `epoch` is subtracted internally.
    pub fn to_state_space(&self, epoch: f64) -> Result<StateSpace, KernelError> {
        self.validate()?;
        StateSpace::from_kernel(self, epoch)
    }

    /// Sum of the variance parameters of all components.
    pub fn total_variance(&self) -> f64 {
        match self {
            Self::Constant { var }
            | Self::PiecewiseConstant { var, .. }
            | Self::Wiener { var }
            | Self::Matern12 { var, .. }
            | Self::Matern32 { var, .. }
            | Self::Linear { var } => *var,
            Self::Sum(c) => c.iter().map(Kernel::total_variance).sum(),
            Self::Product(c) => c.iter().map(Kernel::total_variance).product(),
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            Self::Constant { .. } | Self::Matern12 { .. } | Self::Matern32 { .. } => true,
            Self::PiecewiseConstant { .. } | Self::Wiener { .. } | Self::Linear { .. } => false,
            Self::Sum(c) | Self::Product(c) => c.iter().all(Kernel::is_stationary),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("kernel serialization cannot fail")
    }
}

/// Number of boundaries `<= t`; intervals are half-open `[b_i, b_{i+1})`.
pub(crate) fn interval_index(boundaries: &[f64], t: f64) -> usize {
    boundaries.partition_point(|&b| b <= t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lscale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundaries: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<KernelRepr>>,
}

impl KernelRepr {
    fn leaf(kind: &str, var: f64) -> Self {
        Self {
            kind: kind.to_owned(),
            var: Some(var),
            lscale: None,
            boundaries: None,
            children: None,
        }
    }

    fn require_var(&self) -> Result<f64, KernelError> {
        self.var.ok_or_else(|| KernelError::MissingField {
            kernel: self.kind.clone(),
            field: "var",
        })
    }

    fn reject(
        &self,
        lscale: bool,
        boundaries: bool,
        children: bool,
        var: bool,
    ) -> Result<(), KernelError> {
        let unexpected = |field| {
            Err(KernelError::UnexpectedField {
                kernel: self.kind.clone(),
                field,
            })
        };
        if var && self.var.is_some() {
            return unexpected("var");
        }
        if lscale && self.lscale.is_some() {
            return unexpected("lscale");
        }
        if boundaries && self.boundaries.is_some() {
            return unexpected("boundaries");
        }
        if children && self.children.is_some() {
            return unexpected("children");
        }
        Ok(())
    }
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = KernelError;

    fn try_from(r: KernelRepr) -> Result<Self, Self::Error> {
        match r.kind.as_str() {
            "constant" | "wiener" | "linear" => {
                r.reject(true, true, true, false)?;
                let var = r.require_var()?;
                match r.kind.as_str() {
                    "constant" => Kernel::constant(var),
                    "wiener" => Kernel::wiener(var),
                    _ => Kernel::linear(var),
                }
            }
            "piecewise_constant" => {
                r.reject(true, false, true, false)?;
                let var = r.require_var()?;
                let boundaries = r.boundaries.clone().ok_or(KernelError::MissingField {
                    kernel: r.kind.clone(),
                    field: "boundaries",
                })?;
                Kernel::piecewise_constant(var, boundaries)
            }
            "matern12" | "matern32" => {
                r.reject(false, true, true, false)?;
                let var = r.require_var()?;
                let lscale = r.lscale.ok_or_else(|| KernelError::MissingField {
                    kernel: r.kind.clone(),
                    field: "lscale",
                })?;
                if r.kind == "matern12" {
                    Kernel::matern12(var, lscale)
                } else {
                    Kernel::matern32(var, lscale)
                }
            }
            "sum" | "product" => {
                r.reject(true, true, false, true)?;
                let children = r
                    .children
                    .ok_or_else(|| KernelError::MissingField {
                        kernel: r.kind.clone(),
                        field: "children",
                    })?
                    .into_iter()
                    .map(Kernel::try_from)
                    .collect::<Result<Vec<_>, _>>()?;
                if r.kind == "sum" {
                    Kernel::sum(children)
                } else {
                    Kernel::product(children)
                }
            }
            other => Err(KernelError::UnknownType(other.to_owned())),
        }
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::Constant { var } => KernelRepr::leaf("constant", var),
            Kernel::Wiener { var } => KernelRepr::leaf("wiener", var),
            Kernel::Linear { var } => KernelRepr::leaf("linear", var),
            Kernel::PiecewiseConstant { var, boundaries } => KernelRepr {
                boundaries: Some(boundaries),
                ..KernelRepr::leaf("piecewise_constant", var)
            },
            Kernel::Matern12 { var, lscale } => KernelRepr {
                lscale: Some(lscale),
                ..KernelRepr::leaf("matern12", var)
            },
            Kernel::Matern32 { var, lscale } => KernelRepr {
                lscale: Some(lscale),
                ..KernelRepr::leaf("matern32", var)
            },
            Kernel::Sum(children) => KernelRepr::node("sum", children),
            Kernel::Product(children) => KernelRepr::node("product", children),
        }
    }
}

impl KernelRepr {
    fn node(kind: &str, children: Vec<Kernel>) -> Self {
        KernelRepr {
            kind: kind.to_owned(),
            var: None,
            lscale: None,
            boundaries: None,
            children: Some(children.into_iter().map(KernelRepr::from).collect()),
        }
    }
}
