//! Reverse-mode gradient tape over small dense matrices.
//!
//! The primitive set is closed and covers exactly what the offline forward
//! pass needs: matrix add/sub/multiply/transpose, scaling, scalar division,
//! 3×3 inversion through the adjugate, softplus and sin/cos. Scalars are
//! 1×1 matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::{node_weight, node_weight_derivative};

/// Handle to a node recorded on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Scale(Var, Var),
    ScaleConst(f64, Var),
    Div(Var, Var),
    Inverse(Var),
    Softplus(Var),
    Sin(Var),
    Cos(Var),
    SquaredNorm(Var),
    /// Linear assembly of a matrix from scalar nodes:
    /// `out[(r, c)] += coef · var` for each term.
    Assemble {
        rows: usize,
        cols: usize,
        terms: Vec<(usize, usize, Var, f64)>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    ops: Vec<Op>,
    values: Vec<DMatrix<f64>>,
}

fn scalar_of(m: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(m.shape(), (1, 1));
    m[(0, 0)]
}

fn inverse3(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.shape() != (3, 3) {
        return a.clone().try_inverse();
    }
    let m = |i: usize, j: usize| a[(i, j)];
    let cof = |i0: usize, i1: usize, j0: usize, j1: usize| m(i0, j0) * m(i1, j1) - m(i0, j1) * m(i1, j0);
    // adjugate = transpose of the cofactor matrix
    let adj = DMatrix::from_row_slice(
        3,
        3,
        &[
            cof(1, 2, 1, 2),
            -cof(0, 2, 1, 2),
            cof(0, 1, 1, 2),
            -cof(1, 2, 0, 2),
            cof(0, 2, 0, 2),
            -cof(0, 1, 0, 2),
            cof(1, 2, 0, 1),
            -cof(0, 2, 0, 1),
            cof(0, 1, 0, 1),
        ],
    );
    let det = m(0, 0) * adj[(0, 0)] + m(0, 1) * adj[(1, 0)] + m(0, 2) * adj[(2, 0)];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(adj / det)
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.values[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        scalar_of(&self.values[v.0])
    }

    fn push(&mut self, op: Op, value: DMatrix<f64>) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    fn eval(&self, op: &Op) -> Result<DMatrix<f64>> {
        let v = |x: &Var| &self.values[x.0];
        Ok(match op {
            Op::Input => unreachable!("inputs carry their own value"),
            Op::Add(a, b) => v(a) + v(b),
            Op::Sub(a, b) => v(a) - v(b),
            Op::MatMul(a, b) => v(a) * v(b),
            Op::Transpose(a) => v(a).transpose(),
            Op::Scale(s, m) => v(m) * scalar_of(v(s)),
            Op::ScaleConst(k, m) => v(m) * *k,
            Op::Div(a, b) => DMatrix::from_element(1, 1, scalar_of(v(a)) / scalar_of(v(b))),
            Op::Inverse(a) => inverse3(v(a)).ok_or_else(|| {
                Error::InvalidInput("singular matrix recorded on gradient tape".into())
            })?,
            Op::Softplus(a) => DMatrix::from_element(1, 1, node_weight(scalar_of(v(a)))),
            Op::Sin(a) => DMatrix::from_element(1, 1, scalar_of(v(a)).sin()),
            Op::Cos(a) => DMatrix::from_element(1, 1, scalar_of(v(a)).cos()),
            Op::SquaredNorm(a) => DMatrix::from_element(1, 1, v(a).norm_squared()),
            Op::Assemble { rows, cols, terms } => {
                let mut out = DMatrix::zeros(*rows, *cols);
                for &(r, c, var, coef) in terms {
                    out[(r, c)] += coef * scalar_of(v(&var));
                }
                out
            }
        })
    }

    fn record(&mut self, op: Op) -> Var {
        let value = self.eval(&op).expect("primitive evaluation failed");
        self.push(op, value)
    }

    pub fn input(&mut self, value: DMatrix<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.input(DMatrix::from_element(1, 1, value))
    }

    /// Replaces the value of an input node; call [`replay`](Self::replay)
    /// afterwards to refresh dependent nodes.
    pub fn set_input(&mut self, v: Var, value: DMatrix<f64>) {
        assert!(matches!(self.ops[v.0], Op::Input), "not an input node");
        self.values[v.0] = value;
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Sub(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.record(Op::Transpose(a))
    }

    /// Scalar node times matrix node.
    pub fn scale(&mut self, s: Var, m: Var) -> Var {
        self.record(Op::Scale(s, m))
    }

    pub fn scale_const(&mut self, k: f64, m: Var) -> Var {
        self.record(Op::ScaleConst(k, m))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.scale(a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Div(a, b))
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let op = Op::Inverse(a);
        let value = self.eval(&op)?;
        Ok(self.push(op, value))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.record(Op::Softplus(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.record(Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.record(Op::Cos(a))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        self.record(Op::SquaredNorm(a))
    }

    pub fn assemble(&mut self, rows: usize, cols: usize, terms: Vec<(usize, usize, Var, f64)>) -> Var {
        self.record(Op::Assemble { rows, cols, terms })
    }

    /// Re-evaluates every recorded node from the current input values.
    pub fn replay(&mut self) -> Result<()> {
        for k in 0..self.ops.len() {
            if matches!(self.ops[k], Op::Input) {
                continue;
            }
            let value = self.eval(&self.ops[k])?;
            self.values[k] = value;
        }
        Ok(())
    }

    /// Adjoints of `output` (a scalar node) with respect to every node.
    pub fn backward(&self, output: Var) -> Adjoints {
        assert_eq!(self.values[output.0].shape(), (1, 1), "output must be scalar");
        let mut adj: Vec<Option<DMatrix<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(adj: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut adj[v.0] {
                Some(existing) => *existing += g,
                slot => *slot = Some(g),
            }
        }

        for k in (0..=output.0).rev() {
            let Some(g) = adj[k].take() else { continue };
            let val = |x: &Var| &self.values[x.0];
            match &self.ops[k] {
                Op::Input => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g.clone());
                }
                Op::MatMul(a, b) => {
                    acc(&mut adj, *a, &g * val(b).transpose());
                    acc(&mut adj, *b, val(a).transpose() * &g);
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.transpose()),
                Op::Scale(s, m) => {
                    let gs = g.dot(val(m));
                    let gm = &g * scalar_of(val(s));
                    acc(&mut adj, *s, DMatrix::from_element(1, 1, gs));
                    acc(&mut adj, *m, gm);
                }
                Op::ScaleConst(c, m) => acc(&mut adj, *m, &g * *c),
                Op::Div(a, b) => {
                    let gv = scalar_of(&g);
                    let (av, bv) = (scalar_of(val(a)), scalar_of(val(b)));
                    acc(&mut adj, *a, DMatrix::from_element(1, 1, gv / bv));
                    acc(&mut adj, *b, DMatrix::from_element(1, 1, -gv * av / (bv * bv)));
                }
                Op::Inverse(a) => {
                    // d(A⁻¹) = −A⁻¹ dA A⁻¹
                    let xt = self.values[k].transpose();
                    acc(&mut adj, *a, -(&xt * &g * &xt));
                }
                Op::Softplus(a) => {
                    let d = node_weight_derivative(scalar_of(val(a)));
                    acc(&mut adj, *a, &g * d);
                }
                Op::Sin(a) => {
                    let d = scalar_of(val(a)).cos();
                    acc(&mut adj, *a, &g * d);
                }
                Op::Cos(a) => {
                    let d = -scalar_of(val(a)).sin();
                    acc(&mut adj, *a, &g * d);
                }
                Op::SquaredNorm(a) => {
                    let gv = scalar_of(&g);
                    acc(&mut adj, *a, val(a) * (2.0 * gv));
                }
                Op::Assemble { terms, .. } => {
                    for &(r, c, var, coef) in terms {
                        acc(&mut adj, var, DMatrix::from_element(1, 1, coef * g[(r, c)]));
                    }
                }
            }
            adj[k] = Some(g);
        }
        Adjoints { adj }
    }
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<Option<DMatrix<f64>>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&DMatrix<f64>> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of a scalar node; zero if the output does not depend on it.
    pub fn scalar(&self, v: Var) -> f64 {
        self.get(v).map_or(0.0, scalar_of)
    }
}
