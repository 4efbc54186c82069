use rand::Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::matrix::Matrix;
use crate::nn::xavier;
use crate::Result;

/// Gated recurrent unit acting on row vectors (one state per row).
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_u: ParamId,
    pub u_u: ParamId,
    pub b_u: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
    pub dim: usize,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        let mut mat = |name: &str, rng: &mut R| store.add(alloc::format!("{prefix}.{name}"), xavier(dim, dim, rng));
        let w_r = mat("w_r", rng);
        let u_r = mat("u_r", rng);
        let w_u = mat("w_u", rng);
        let u_u = mat("u_u", rng);
        let w_n = mat("w_n", rng);
        let u_n = mat("u_n", rng);
        let mut bias = |name: &str| store.add(alloc::format!("{prefix}.{name}"), Matrix::zeros(1, dim));
        Self {
            w_r,
            u_r,
            b_r: bias("b_r"),
            w_u,
            u_u,
            b_u: bias("b_u"),
            w_n,
            u_n,
            b_n: bias("b_n"),
            dim,
        }
    }
}

fn affine(g: &mut Graph<'_>, x: Var, w: ParamId, h: Var, u: ParamId, b: ParamId) -> Result<Var> {
    let (w, u, b) = (g.param(w), g.param(u), g.param(b));
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add(s, b)
}

/// One GRU step:
/// `r = sig(x W_r + h U_r + b_r)`, `u = sig(x W_u + h U_u + b_u)`,
/// `n = tanh(x W_n + r * (h U_n) + b_n)`, `h' = (1 - u) * n + u * h`.
pub fn gru_cell(g: &mut Graph<'_>, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    let (sx, sh) = (g.shape(x), g.shape(h));
    if sx != sh || sx[1] != p.dim {
        return Err(crate::Error::ShapeMismatch {
            op: "gru_cell",
            lhs: sx,
            rhs: sh,
        });
    }
    let r_pre = affine(g, x, p.w_r, h, p.u_r, p.b_r)?;
    let r = g.sigmoid(r_pre);
    let u_pre = affine(g, x, p.w_u, h, p.u_u, p.b_u)?;
    let u = g.sigmoid(u_pre);

    let (w_n, u_n, b_n) = (g.param(p.w_n), g.param(p.u_n), g.param(p.b_n));
    let xw = g.matmul(x, w_n)?;
    let hu = g.matmul(h, u_n)?;
    let gated = g.mul(r, hu)?;
    let n_pre = g.add(xw, gated)?;
    let n_pre = g.add(n_pre, b_n)?;
    let n = g.tanh(n_pre);

    let diff = g.sub(h, n)?;
    let carry = g.mul(u, diff)?;
    g.add(n, carry)
}
