//! Scalar reverse-mode differentiation on a recording tape.
//!
//! Deliberately naive: every operation pushes one node holding its local
//! partial derivatives, and [`Var::gradients`] sweeps the tape backwards.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [(usize, f64); 2],
    arity: u8,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [(0, 0.0); 2], 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, parents: [(usize, f64); 2], arity: u8) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, arity });
        Var {
            tape: self,
            index: nodes.len() - 1,
            value,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        self.adjoints[v.index]
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    fn unary(&self, value: f64, d: f64) -> Var<'t> {
        self.tape.push(value, [(self.index, d), (0, 0.0)], 1)
    }

    fn binary(&self, other: &Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        self.tape
            .push(value, [(self.index, da), (other.index, db)], 2)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(e, e)
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = 1.0 / (1.0 + (-self.value).exp());
        self.unary(s, s * (1.0 - s))
    }

    pub fn softplus(self) -> Var<'t> {
        let v = self.value;
        let sp = if v > 30.0 { v } else { v.exp().ln_1p() };
        self.unary(sp, 1.0 / (1.0 + (-v).exp()))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(self.value * self.value, 2.0 * self.value)
    }

    pub fn gradients(&self) -> Gradients {
        let nodes = self.tape.nodes.borrow();
        let mut adjoints = vec![0.0; nodes.len()];
        adjoints[self.index] = 1.0;
        for i in (0..=self.index).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for &(p, d) in &node.parents[..node.arity as usize] {
                adjoints[p] += a * d;
            }
        }
        Gradients { adjoints }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(&o, self.value + o.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(&o, self.value - o.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(&o, self.value * o.value, o.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let q = self.value / o.value;
        self.binary(&o, q, 1.0 / o.value, -q / o.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(self.value + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(self.value - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(self.value * c, c)
    }
}

/// Sum of a non-empty slice of variables.
pub fn sum<'t>(vars: &[Var<'t>]) -> Var<'t> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = acc + v;
    }
    acc
}

/// Gaussian negative log-likelihood `ln det P + eᵀ P⁻¹ e` for a dense `P`
/// given row-major, via Gaussian elimination without pivoting (valid for
/// SPD inputs). Works on the raw entries so asymmetric perturbations of `P`
/// are differentiated too.
pub fn gaussian_nll<'t>(p: &[Var<'t>], e: &[Var<'t>]) -> Var<'t> {
    let m = e.len();
    assert_eq!(p.len(), m * m, "covariance must be m × m");
    let mut a: Vec<Var<'t>> = p.to_vec();
    let mut b: Vec<Var<'t>> = e.to_vec();
    let mut log_det = None;
    for k in 0..m {
        let pivot = a[k * m + k];
        log_det = Some(match log_det {
            None => pivot.ln(),
            Some(acc) => acc + pivot.ln(),
        });
        for i in k + 1..m {
            let factor = a[i * m + k] / pivot;
            for j in k..m {
                a[i * m + j] = a[i * m + j] - factor * a[k * m + j];
            }
            b[i] = b[i] - factor * b[k];
        }
    }
    let mut x: Vec<Option<Var<'t>>> = vec![None; m];
    for i in (0..m).rev() {
        let mut acc = b[i];
        for j in i + 1..m {
            acc = acc - a[i * m + j] * x[j].expect("solved");
        }
        x[i] = Some(acc / a[i * m + i]);
    }
    let quad: Vec<Var<'t>> = e
        .iter()
        .zip(&x)
        .map(|(&ei, xi)| ei * xi.expect("solved"))
        .collect();
    log_det.expect("m > 0") + sum(&quad)
}
