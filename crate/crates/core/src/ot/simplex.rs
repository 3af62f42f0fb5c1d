//! Primal network simplex on the dense bipartite transportation graph.
//!
//! The basis is a spanning tree with `m + n - 1` cells. Arcs are priced in
//! blocks. A pivot pushes flow around the cycle closed by the entering cell,
//! drops the first blocking cell, and re-hangs only the subtree that cell cut
//! off, updating potentials there. After a run of degenerate pivots the solver falls
//! back to Bland's rule, which cannot cycle.

use std::collections::VecDeque;
use std::fmt::Debug;
use std::ops::{Add, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flow amounts: exact integers for empirical weights, reals otherwise.
pub(crate) trait Flow:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Debug
{
    fn zero() -> Self;
    fn to_f64(self) -> f64;
}

impl Flow for i64 {
    fn zero() -> Self {
        0
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Real-valued flow amount.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub(crate) struct Real<S>(pub S);

impl<S: Scalar> Add for Real<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Real(self.0 + rhs.0)
    }
}

impl<S: Scalar> Sub for Real<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Real(self.0 - rhs.0)
    }
}

impl<S: Scalar> Flow for Real<S> {
    fn zero() -> Self {
        Real(S::zero())
    }
    fn to_f64(self) -> f64 {
        self.0.as_f64()
    }
}

pub(crate) struct BasicCell<F> {
    pub row: usize,
    pub col: usize,
    pub flow: F,
}

pub(crate) struct Solution<F, S> {
    pub cells: Vec<BasicCell<F>>,
    pub row_potential: Vec<S>,
    pub col_potential: Vec<S>,
    pub pivots: usize,
}

const NONE: usize = usize::MAX;

struct Tree<S> {
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<S>,
    queue: VecDeque<usize>,
}

/// Solve `min sum c_ij f_ij` subject to row sums `supply` and column sums
/// `demand`. The two totals must agree exactly for integer flows and are
/// reconciled on the last column for real flows by the caller.
pub(crate) fn solve<F: Flow, S: Scalar>(
    supply: &[F],
    demand: &[F],
    cost: &[S],
) -> Result<Solution<F, S>> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);
    if m == 0 || n == 0 {
        return Err(Error::Solver("empty transportation problem".into()));
    }

    let nodes = m + n;
    let mut cells = northwest_corner(supply, demand);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (id, c) in cells.iter().enumerate() {
        adj[c.row].push(id);
        adj[m + c.col].push(id);
    }

    let cmax = cost.iter().fold(S::zero(), |a, &c| a.max(c.abs()));
    let eps = (cmax * S::of(64.0) * S::epsilon()).max(S::min_positive_value());

    let mut tree = Tree {
        parent: vec![NONE; nodes],
        parent_cell: vec![NONE; nodes],
        depth: vec![0; nodes],
        pot: vec![S::zero(); nodes],
        queue: VecDeque::with_capacity(nodes),
    };

    let arcs = m * n;
    let block = ((arcs as f64).sqrt().ceil() as usize).clamp(1, arcs);
    let mut cursor = 0usize;
    let mut degenerate_run = 0usize;
    let bland_after = 2 * nodes + 50;
    let max_pivots = 50 * arcs + 10_000;
    let mut pivots = 0usize;
    let mut plus: Vec<usize> = Vec::new();
    let mut minus: Vec<usize> = Vec::new();

    build_tree(&mut tree, &cells, &adj, cost, m, n);
    let mut mark = vec![0u32; nodes];
    let mut epoch = 0u32;
    let mut sub: Vec<usize> = Vec::new();

    loop {
        let pot = &tree.pot;
        let reduced = |a: usize| {
            let (i, j) = (a / n, a % n);
            cost[a] - pot[i] - pot[m + j]
        };

        let bland = degenerate_run > bland_after;
        let entering = if bland {
            (0..arcs).find(|&a| reduced(a) < -eps)
        } else {
            let mut found = None;
            let mut scanned = 0usize;
            let mut best = -eps;
            let mut a = cursor;
            while scanned < arcs {
                let rc = reduced(a);
                if rc < best {
                    best = rc;
                    found = Some(a);
                }
                scanned += 1;
                a += 1;
                if a == arcs {
                    a = 0;
                }
                if found.is_some() && scanned.is_multiple_of(block) {
                    break;
                }
            }
            cursor = a;
            found
        };

        let Some(arc) = entering else {
            let row_potential = tree.pot[..m].to_vec();
            let col_potential = tree.pot[m..].to_vec();
            return Ok(Solution {
                cells,
                row_potential,
                col_potential,
                pivots,
            });
        };

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!(
                "no convergence after {max_pivots} pivots"
            )));
        }

        let (ei, ej) = (arc / n, arc % n);
        // cycle: entering (+), then alternating along the tree path; the
        // first cell leaving either endpoint is a (-) cell
        plus.clear();
        minus.clear();
        let (mut a, mut b) = (ei, m + ej);
        let (mut sa, mut sb) = (0usize, 0usize);
        while a != b {
            if tree.depth[a] >= tree.depth[b] {
                let c = tree.parent_cell[a];
                if sa % 2 == 0 {
                    minus.push(c)
                } else {
                    plus.push(c)
                }
                sa += 1;
                a = tree.parent[a];
            } else {
                let c = tree.parent_cell[b];
                if sb % 2 == 0 {
                    minus.push(c)
                } else {
                    plus.push(c)
                }
                sb += 1;
                b = tree.parent[b];
            }
        }

        let mut leave = minus[0];
        let mut theta = cells[leave].flow;
        for &c in &minus[1..] {
            let f = cells[c].flow;
            let better =
                f < theta || (bland && f == theta && key(&cells[c], n) < key(&cells[leave], n));
            if better {
                theta = f;
                leave = c;
            }
        }

        if theta > F::zero() {
            degenerate_run = 0;
            for &c in &minus {
                cells[c].flow = cells[c].flow - theta;
            }
            for &c in &plus {
                cells[c].flow = cells[c].flow + theta;
            }
        } else {
            degenerate_run += 1;
        }

        // nodes cut off from the root by removing the leaving cell
        let (lr, lc) = (cells[leave].row, m + cells[leave].col);
        let child = if tree.parent_cell[lr] == leave {
            lr
        } else {
            lc
        };
        epoch += 1;
        sub.clear();
        sub.push(child);
        mark[child] = epoch;
        let mut head = 0;
        while head < sub.len() {
            let x = sub[head];
            head += 1;
            for &id in &adj[x] {
                if id == leave {
                    continue;
                }
                let c = &cells[id];
                let y = if x == c.row { m + c.col } else { c.row };
                if mark[y] != epoch {
                    mark[y] = epoch;
                    sub.push(y);
                }
            }
        }

        remove_id(&mut adj[lr], leave);
        remove_id(&mut adj[lc], leave);
        cells[leave] = BasicCell {
            row: ei,
            col: ej,
            flow: theta,
        };
        adj[ei].push(leave);
        adj[m + ej].push(leave);

        // re-hang the cut subtree below the outside end of the entering cell
        let (inside, outside) = if mark[ei] == epoch {
            (ei, m + ej)
        } else {
            (m + ej, ei)
        };
        epoch += 1;
        tree.parent[inside] = outside;
        tree.parent_cell[inside] = leave;
        tree.depth[inside] = tree.depth[outside] + 1;
        tree.pot[inside] = cost[arc] - tree.pot[outside];
        mark[inside] = epoch;
        mark[outside] = epoch;
        tree.queue.clear();
        tree.queue.push_back(inside);
        while let Some(x) = tree.queue.pop_front() {
            for &id in &adj[x] {
                let c = &cells[id];
                let y = if x == c.row { m + c.col } else { c.row };
                if mark[y] == epoch {
                    continue;
                }
                mark[y] = epoch;
                tree.parent[y] = x;
                tree.parent_cell[y] = id;
                tree.depth[y] = tree.depth[x] + 1;
                tree.pot[y] = cost[c.row * n + c.col] - tree.pot[x];
                tree.queue.push_back(y);
            }
        }
    }
}

fn key<F>(c: &BasicCell<F>, n: usize) -> usize {
    c.row * n + c.col
}

fn remove_id(list: &mut Vec<usize>, id: usize) {
    if let Some(pos) = list.iter().position(|&x| x == id) {
        list.swap_remove(pos);
    }
}

fn build_tree<F: Flow, S: Scalar>(
    tree: &mut Tree<S>,
    cells: &[BasicCell<F>],
    adj: &[Vec<usize>],
    cost: &[S],
    m: usize,
    n: usize,
) {
    tree.parent.fill(NONE);
    tree.parent[0] = 0;
    tree.parent_cell[0] = NONE;
    tree.depth[0] = 0;
    tree.pot[0] = S::zero();
    tree.queue.clear();
    tree.queue.push_back(0);
    while let Some(x) = tree.queue.pop_front() {
        for &id in &adj[x] {
            let c = &cells[id];
            let (r, k) = (c.row, m + c.col);
            let y = if x == r { k } else { r };
            if tree.parent[y] != NONE {
                continue;
            }
            tree.parent[y] = x;
            tree.parent_cell[y] = id;
            tree.depth[y] = tree.depth[x] + 1;
            // u_r + v_k = c_rk
            tree.pot[y] = cost[c.row * n + c.col] - tree.pot[x];
            tree.queue.push_back(y);
        }
    }
}

/// Initial basis: northwest-corner rule, keeping degenerate zero cells so the
/// basis always has `m + n - 1` cells forming a spanning tree.
fn northwest_corner<F: Flow>(supply: &[F], demand: &[F]) -> Vec<BasicCell<F>> {
    let (m, n) = (supply.len(), demand.len());
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (supply[0], demand[0]);
    loop {
        if i == m - 1 && j == n - 1 {
            let f = if ra < rb { rb } else { ra };
            cells.push(BasicCell {
                row: i,
                col: j,
                flow: f,
            });
            break;
        }
        let advance_row = j == n - 1 || (i < m - 1 && ra <= rb);
        if advance_row {
            cells.push(BasicCell {
                row: i,
                col: j,
                flow: ra,
            });
            rb = if rb > ra { rb - ra } else { F::zero() };
            i += 1;
            ra = supply[i];
        } else {
            cells.push(BasicCell {
                row: i,
                col: j,
                flow: rb,
            });
            ra = if ra > rb { ra - rb } else { F::zero() };
            j += 1;
            rb = demand[j];
        }
    }
    cells
}
