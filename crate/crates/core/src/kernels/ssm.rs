use nalgebra::{DMatrix, DVector};

use super::{interval_index, Kernel, KernelError};

#[derive(Debug, Clone, PartialEq)]
enum Component {
    Constant { var: f64 },
    Piecewise { var: f64, boundaries: Vec<f64> },
    Wiener { var: f64 },
    Matern12 { var: f64, lscale: f64 },
    Matern32 { var: f64, lscale: f64 },
    Linear { var: f64 },
}

impl Component {
    fn order(&self) -> usize {
        match self {
            Self::Matern32 { .. } | Self::Linear { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    component: Component,
    offset: usize,
}

/// Linear Gauss–Markov model whose read-out `hᵀ x(t)` has the kernel's
/// covariance. Sums map to block-diagonal stacks of their children.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    blocks: Vec<Block>,
    order: usize,
    epoch: f64,
    h: Vec<f64>,
}

fn flatten(kernel: &Kernel, out: &mut Vec<Component>) -> Result<(), KernelError> {
    let c = match kernel {
        Kernel::Constant { var } => Component::Constant { var: *var },
        Kernel::PiecewiseConstant { var, boundaries } => Component::Piecewise {
            var: *var,
            boundaries: boundaries.clone(),
        },
        Kernel::Wiener { var } => Component::Wiener { var: *var },
        Kernel::Matern12 { var, lscale } => Component::Matern12 {
            var: *var,
            lscale: *lscale,
        },
        Kernel::Matern32 { var, lscale } => Component::Matern32 {
            var: *var,
            lscale: *lscale,
        },
        Kernel::Linear { var } => Component::Linear { var: *var },
        Kernel::Sum(children) => {
            return children.iter().try_for_each(|k| flatten(k, out));
        }
        Kernel::Product(_) => return Err(KernelError::ProductUnsupported),
    };
    out.push(c);
    Ok(())
}

impl StateSpace {
    pub(super) fn from_kernel(kernel: &Kernel, epoch: f64) -> Result<Self, KernelError> {
        let mut components = Vec::new();
        flatten(kernel, &mut components)?;
        let mut blocks = Vec::with_capacity(components.len());
        let mut order = 0;
        let mut h = Vec::new();
        for component in components {
            let k = component.order();
            h.push(1.0);
            h.extend(std::iter::repeat_n(0.0, k - 1));
            blocks.push(Block {
                component,
                offset: order,
            });
            order += k;
        }
        Ok(Self {
            blocks,
            order,
            epoch,
            h,
        })
    }

    /// State dimension `K`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Measurement vector `h`.
    pub fn measurement(&self) -> &[f64] {
        &self.h
    }

    pub fn epoch(&self) -> f64 {
        self.epoch
    }

    /// Prior mean and covariance of the state at absolute time `t`.
    pub fn initial(&self, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.order;
        let mut m = vec![0.0; k];
        let mut p = vec![0.0; k * k];
        self.initial_into(t, &mut m, &mut p);
        (DVector::from_vec(m), DMatrix::from_row_slice(k, k, &p))
    }

    /// Transition matrix `A` from `t_from` to `t_to` (`t_from <= t_to`).
    pub fn transition(&self, t_from: f64, t_to: f64) -> DMatrix<f64> {
        let k = self.order;
        let mut a = vec![0.0; k * k];
        let mut q = vec![0.0; k * k];
        self.link_into(t_from, t_to, &mut a, &mut q);
        DMatrix::from_row_slice(k, k, &a)
    }

    /// Process-noise covariance `Q` accumulated from `t_from` to `t_to`.
    pub fn noise(&self, t_from: f64, t_to: f64) -> DMatrix<f64> {
        let k = self.order;
        let mut a = vec![0.0; k * k];
        let mut q = vec![0.0; k * k];
        self.link_into(t_from, t_to, &mut a, &mut q);
        DMatrix::from_row_slice(k, k, &q)
    }

    /// Writes the row-major prior mean and covariance at `t`.
    pub(crate) fn initial_into(&self, t: f64, mean: &mut [f64], cov: &mut [f64]) {
        let k = self.order;
        mean.fill(0.0);
        cov.fill(0.0);
        let tau = t - self.epoch;
        for b in &self.blocks {
            let o = b.offset;
            match &b.component {
                Component::Constant { var }
                | Component::Piecewise { var, .. }
                | Component::Matern12 { var, .. } => cov[o * k + o] = *var,
                Component::Wiener { var } => cov[o * k + o] = var * tau.max(0.0),
                Component::Matern32 { var, lscale } => {
                    let lam = 3f64.sqrt() / lscale;
                    cov[o * k + o] = *var;
                    cov[(o + 1) * k + o + 1] = lam * lam * var;
                }
                Component::Linear { var } => {
                    cov[o * k + o] = var * tau * tau;
                    cov[o * k + o + 1] = var * tau;
                    cov[(o + 1) * k + o] = var * tau;
                    cov[(o + 1) * k + o + 1] = *var;
                }
            }
        }
    }

    /// Writes the row-major `A` and `Q` for the link `t_from -> t_to`.
    pub(crate) fn link_into(&self, t_from: f64, t_to: f64, a: &mut [f64], q: &mut [f64]) {
        let k = self.order;
        a.fill(0.0);
        q.fill(0.0);
        let dt = (t_to - t_from).max(0.0);
        for b in &self.blocks {
            let o = b.offset;
            let at = |r: usize, c: usize| (o + r) * k + o + c;
            match &b.component {
                Component::Constant { .. } => a[at(0, 0)] = 1.0,
                Component::Piecewise { var, boundaries } => {
                    let t0 = t_from - self.epoch;
                    let t1 = t_to - self.epoch;
                    if interval_index(boundaries, t0) == interval_index(boundaries, t1) {
                        a[at(0, 0)] = 1.0;
                    } else {
                        q[at(0, 0)] = *var;
                    }
                }
                Component::Wiener { var } => {
                    a[at(0, 0)] = 1.0;
                    let t0 = (t_from - self.epoch).max(0.0);
                    let t1 = (t_to - self.epoch).max(0.0);
                    q[at(0, 0)] = var * (t1 - t0).max(0.0);
                }
                Component::Matern12 { var, lscale } => {
                    a[at(0, 0)] = (-dt / lscale).exp();
                    q[at(0, 0)] = -var * (-2.0 * dt / lscale).exp_m1();
                }
                Component::Matern32 { var, lscale } => {
                    let lam = 3f64.sqrt() / lscale;
                    let e = (-lam * dt).exp();
                    let a00 = e * (1.0 + lam * dt);
                    let a01 = e * dt;
                    let a10 = -e * lam * lam * dt;
                    let a11 = e * (1.0 - lam * dt);
                    a[at(0, 0)] = a00;
                    a[at(0, 1)] = a01;
                    a[at(1, 0)] = a10;
                    a[at(1, 1)] = a11;
                    // Q = P∞ − A P∞ Aᵀ with P∞ = diag(σ², λ²σ²)
                    let p0 = *var;
                    let p1 = lam * lam * var;
                    q[at(0, 0)] = p0 - (a00 * a00 * p0 + a01 * a01 * p1);
                    let off = -(a00 * a10 * p0 + a01 * a11 * p1);
                    q[at(0, 1)] = off;
                    q[at(1, 0)] = off;
                    q[at(1, 1)] = p1 - (a10 * a10 * p0 + a11 * a11 * p1);
                }
                Component::Linear { .. } => {
                    a[at(0, 0)] = 1.0;
                    a[at(0, 1)] = dt;
                    a[at(1, 1)] = 1.0;
                }
            }
        }
    }
}
