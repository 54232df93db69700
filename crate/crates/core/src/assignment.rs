//! Dense linear assignment by successive shortest augmenting paths with
//! dual potentials (O(n^3) worst case).

const FREE: usize = usize::MAX;

/// Minimum-cost perfect matching on a square cost matrix.
#[derive(Debug, Clone)]
pub(crate) struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    /// Row potentials.
    pub u: Vec<f64>,
    /// Column potentials. Reduced costs `c[i][j] - u[i] - v[j]` are `>= 0`
    /// and vanish on matched pairs.
    pub v: Vec<f64>,
}

/// A column not yet reached by the current search.
struct Open {
    price: f64,
    dist: f64,
    col: u32,
    pred: u32,
    free: bool,
}

/// Solves the assignment problem for a row-major `n x n` cost matrix.
pub(crate) fn solve(n: usize, cost: &[f64]) -> Assignment {
    assert_eq!(cost.len(), n * n);
    assert!(cost.iter().all(|c| c.is_finite()), "assignment cost matrix must be finite");
    assert!(n < u32::MAX as usize, "assignment size exceeds u32 indexing");

    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut row_to_col = vec![FREE; n];
    let mut col_to_row = vec![FREE; n];
    let mut path = vec![FREE; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut row_seen = vec![false; n];
    let mut col_seen = vec![false; n];
    let mut open: Vec<Open> = Vec::with_capacity(n);

    // Column then row reduction; rows whose reduced minimum sits on a free
    // column are matched before any search.
    for (j, vj) in v.iter_mut().enumerate() {
        *vj = (0..n).map(|i| cost[i * n + j]).fold(f64::INFINITY, f64::min);
    }
    for i in 0..n {
        let row = &cost[i * n..(i + 1) * n];
        let mut best = f64::INFINITY;
        let mut best_at = FREE;
        for (j, (&c, &vj)) in row.iter().zip(&v).enumerate() {
            let r = c - vj;
            if r < best || (r == best && col_to_row[j] == FREE && col_to_row[best_at] != FREE) {
                best = r;
                best_at = j;
            }
        }
        u[i] = best;
        if col_to_row[best_at] == FREE {
            row_to_col[i] = best_at;
            col_to_row[best_at] = i;
        }
    }

    for start in 0..n {
        if row_to_col[start] != FREE {
            continue;
        }
        row_seen.iter_mut().for_each(|s| *s = false);
        col_seen.iter_mut().for_each(|s| *s = false);
        open.clear();
        open.extend((0..n).rev().map(|j| Open {
            price: v[j],
            dist: f64::INFINITY,
            col: j as u32,
            pred: u32::MAX,
            free: col_to_row[j] == FREE,
        }));

        let mut i = start;
        let mut reached = 0.0f64;
        let sink = loop {
            row_seen[i] = true;
            let row = &cost[i * n..(i + 1) * n];
            let base = reached - u[i];
            let mut best = f64::INFINITY;
            let mut best_at = 0usize;
            for (k, o) in open.iter_mut().enumerate() {
                let r = base + row[o.col as usize] - o.price;
                if r < o.dist {
                    o.dist = r;
                    o.pred = i as u32;
                }
                if o.dist < best || (o.dist == best && o.free) {
                    best = o.dist;
                    best_at = k;
                }
            }
            reached = best;
            let o = open.swap_remove(best_at);
            let j = o.col as usize;
            dist[j] = o.dist;
            path[j] = o.pred as usize;
            col_seen[j] = true;
            if o.free {
                break j;
            }
            i = col_to_row[j];
        };

        u[start] += reached;
        for r in 0..n {
            if row_seen[r] && r != start {
                u[r] += reached - dist[row_to_col[r]];
            }
        }
        for c in 0..n {
            if col_seen[c] {
                v[c] -= reached - dist[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            col_to_row[j] = r;
            let previous = std::mem::replace(&mut row_to_col[r], j);
            if r == start {
                break;
            }
            j = previous;
        }
    }

    Assignment { row_to_col, u, v }
}

/// Whether another perfect matching uses only edges with reduced cost
/// `<= slack`. Such a matching exists iff the tight-edge graph contains an
/// alternating cycle through the current matching.
pub(crate) fn has_alternative(
    n: usize,
    reduced: impl Fn(usize, usize) -> f64,
    row_to_col: &[usize],
    slack: f64,
) -> bool {
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    // Row i -> row k when i can take k's column through a tight edge.
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != row_to_col[i] && reduced(i, j) <= slack)
                .map(|j| col_to_row[j])
                .collect()
        })
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark = vec![Mark::New; n];
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        mark[start] = Mark::Open;
        while let Some(top) = stack.last_mut() {
            let (node, next) = *top;
            if let Some(&succ) = adjacency[node].get(next) {
                top.1 += 1;
                match mark[succ] {
                    Mark::Open => return true,
                    Mark::New => {
                        mark[succ] = Mark::Open;
                        stack.push((succ, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    false
}
