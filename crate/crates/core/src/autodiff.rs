//! Scalar computation graphs.
//!
//! Network code is written once against [`Graph`] and evaluated either with
//! [`Plain`] (ordinary `f64` arithmetic, no bookkeeping) or with [`Tape`]
//! (a Wengert list recording every scalar node and its local partials, from
//! which [`Tape::backward`] accumulates adjoints in reverse order).
//!
//! Nodes may have many parents: `linear` records `bias + Σ wᵢ xᵢ` as a single
//! node with one edge per operand, which keeps dense and convolution layers
//! affordable on a scalar tape.

pub trait Graph {
    type Var: Copy;

    fn constant(&mut self, x: f64) -> Self::Var;
    fn value(&self, v: Self::Var) -> f64;

    fn add(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn sub(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn mul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn div(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    /// `c * a` for a constant `c`.
    fn scale(&mut self, a: Self::Var, c: f64) -> Self::Var;
    /// `a + c` for a constant `c`.
    fn offset(&mut self, a: Self::Var, c: f64) -> Self::Var;
    fn exp(&mut self, a: Self::Var) -> Self::Var;
    fn sqrt(&mut self, a: Self::Var) -> Self::Var;
    fn square(&mut self, a: Self::Var) -> Self::Var;
    /// `ln(1 + eᵃ)`, computed without overflow.
    fn softplus(&mut self, a: Self::Var) -> Self::Var;
    /// `a · sigmoid(a)`.
    fn silu(&mut self, a: Self::Var) -> Self::Var;
    /// Smooth L1 of `a` with threshold `beta`: `½a²/β` inside, `|a| - ½β` outside.
    fn smooth_l1(&mut self, a: Self::Var, beta: f64) -> Self::Var;
    /// `bias + Σ weights[i] * inputs[i]`.
    fn linear(&mut self, bias: Self::Var, weights: &[Self::Var], inputs: &[Self::Var])
        -> Self::Var;
    /// `bias + Σ weights[i] * inputs[i]` with constant inputs.
    fn linear_const(&mut self, bias: Self::Var, weights: &[Self::Var], inputs: &[f64])
        -> Self::Var;
    fn sum(&mut self, xs: &[Self::Var]) -> Self::Var;

    /// A node with the same value and no gradient path.
    fn detach(&mut self, a: Self::Var) -> Self::Var {
        let v = self.value(a);
        self.constant(v)
    }

    fn mean(&mut self, xs: &[Self::Var]) -> Self::Var {
        let s = self.sum(xs);
        self.scale(s, 1.0 / xs.len() as f64)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

fn smooth_l1(a: f64, beta: f64) -> (f64, f64) {
    if a.abs() < beta {
        (0.5 * a * a / beta, a / beta)
    } else {
        (a.abs() - 0.5 * beta, a.signum())
    }
}

/// Direct `f64` evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Graph for Plain {
    type Var = f64;

    fn constant(&mut self, x: f64) -> f64 {
        x
    }
    fn value(&self, v: f64) -> f64 {
        v
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    fn scale(&mut self, a: f64, c: f64) -> f64 {
        c * a
    }
    fn offset(&mut self, a: f64, c: f64) -> f64 {
        a + c
    }
    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }
    fn sqrt(&mut self, a: f64) -> f64 {
        a.sqrt()
    }
    fn square(&mut self, a: f64) -> f64 {
        a * a
    }
    fn softplus(&mut self, a: f64) -> f64 {
        softplus(a)
    }
    fn silu(&mut self, a: f64) -> f64 {
        a * sigmoid(a)
    }
    fn smooth_l1(&mut self, a: f64, beta: f64) -> f64 {
        smooth_l1(a, beta).0
    }
    fn linear(&mut self, bias: f64, weights: &[f64], inputs: &[f64]) -> f64 {
        debug_assert_eq!(weights.len(), inputs.len());
        weights
            .iter()
            .zip(inputs)
            .fold(bias, |acc, (w, x)| acc + w * x)
    }
    fn linear_const(&mut self, bias: f64, weights: &[f64], inputs: &[f64]) -> f64 {
        self.linear(bias, weights, inputs)
    }
    fn sum(&mut self, xs: &[f64]) -> f64 {
        xs.iter().sum()
    }
}

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Reverse-mode tape. Node `i` owns edges `edge_start[i]..edge_start[i + 1]`.
#[derive(Debug)]
pub struct Tape {
    values: Vec<f64>,
    edge_start: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            edge_start: vec![0],
            parents: Vec::new(),
            partials: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        let mut edge_start = Vec::with_capacity(nodes + 1);
        edge_start.push(0);
        Self {
            values: Vec::with_capacity(nodes),
            edge_start,
            parents: Vec::with_capacity(edges),
            partials: Vec::with_capacity(edges),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.len()
    }

    /// An input node whose adjoint will be reported by [`Tape::backward`].
    pub fn leaf(&mut self, x: f64) -> Var {
        self.push(x, &[])
    }

    fn push(&mut self, value: f64, edges: &[(Var, f64)]) -> Var {
        for &(p, d) in edges {
            self.parents.push(p.0);
            self.partials.push(d);
        }
        self.finish(value)
    }

    fn finish(&mut self, value: f64) -> Var {
        let id = u32::try_from(self.values.len()).expect("tape exceeds u32 nodes");
        self.values.push(value);
        self.edge_start
            .push(u32::try_from(self.parents.len()).expect("tape exceeds u32 edges"));
        Var(id)
    }

    /// Adjoints of every node with respect to `root`.
    pub fn backward(&self, root: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.values.len()];
        adj[root.index()] = 1.0;
        for node in (0..=root.index()).rev() {
            let g = adj[node];
            if g == 0.0 {
                continue;
            }
            let (lo, hi) = (
                self.edge_start[node] as usize,
                self.edge_start[node + 1] as usize,
            );
            for e in lo..hi {
                adj[self.parents[e] as usize] += g * self.partials[e];
            }
        }
        adj
    }
}

impl Graph for Tape {
    type Var = Var;

    fn constant(&mut self, x: f64) -> Var {
        self.push(x, &[])
    }
    fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, &[(a, 1.0), (b, 1.0)])
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, &[(a, 1.0), (b, -1.0)])
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, &[(a, y), (b, x)])
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x / y, &[(a, 1.0 / y), (b, -x / (y * y))])
    }
    fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.push(v, &[(a, c)])
    }
    fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, &[(a, 1.0)])
    }
    fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(v, &[(a, v)])
    }
    fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).sqrt();
        self.push(v, &[(a, 0.5 / v)])
    }
    fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x * x, &[(a, 2.0 * x)])
    }
    fn softplus(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(softplus(x), &[(a, sigmoid(x))])
    }
    fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = sigmoid(x);
        self.push(x * s, &[(a, s * (1.0 + x * (1.0 - s)))])
    }
    fn smooth_l1(&mut self, a: Var, beta: f64) -> Var {
        let (v, d) = smooth_l1(self.value(a), beta);
        self.push(v, &[(a, d)])
    }
    fn linear(&mut self, bias: Var, weights: &[Var], inputs: &[Var]) -> Var {
        debug_assert_eq!(weights.len(), inputs.len());
        let mut acc = self.value(bias);
        self.parents.push(bias.0);
        self.partials.push(1.0);
        for (&w, &x) in weights.iter().zip(inputs) {
            let (wv, xv) = (self.values[w.index()], self.values[x.index()]);
            acc += wv * xv;
            self.parents.push(w.0);
            self.partials.push(xv);
            self.parents.push(x.0);
            self.partials.push(wv);
        }
        self.finish(acc)
    }
    fn linear_const(&mut self, bias: Var, weights: &[Var], inputs: &[f64]) -> Var {
        debug_assert_eq!(weights.len(), inputs.len());
        let mut acc = self.value(bias);
        self.parents.push(bias.0);
        self.partials.push(1.0);
        for (&w, &x) in weights.iter().zip(inputs) {
            acc += self.values[w.index()] * x;
            self.parents.push(w.0);
            self.partials.push(x);
        }
        self.finish(acc)
    }
    fn sum(&mut self, xs: &[Var]) -> Var {
        let mut acc = 0.0;
        for &x in xs {
            acc += self.values[x.index()];
            self.parents.push(x.0);
            self.partials.push(1.0);
        }
        self.finish(acc)
    }
}
