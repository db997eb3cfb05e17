//! Fill-reducing orderings for sparse symmetric factorization.
//!
//! Nested dissection on the adjacency graph with level-structure
//! separators: from a pseudo-peripheral vertex, a breadth-first level set
//! near the median splits the vertices into two halves that share no
//! edges. Halves are ordered recursively and the separator is eliminated
//! last. On the masked grid graphs produced by five-point stencils this
//! gives separators of roughly one grid line, which is what keeps the
//! factor sparse.

/// Symmetric adjacency structure without self loops.
#[derive(Debug, Clone)]
pub struct Graph {
    pub ptr: Vec<usize>,
    pub adj: Vec<usize>,
}

impl Graph {
    /// Builds the graph of the off-diagonal pattern of a structurally
    /// symmetric CSR matrix.
    pub fn from_csr(m: &crate::CsrMatrix) -> Self {
        let n = m.dim();
        let mut ptr = Vec::with_capacity(n + 1);
        let mut adj = Vec::with_capacity(m.nnz());
        ptr.push(0);
        for r in 0..n {
            adj.extend(m.row(r).0.iter().copied().filter(|&c| c != r));
            ptr.push(adj.len());
        }
        Self { ptr, adj }
    }

    pub fn len(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[self.ptr[v]..self.ptr[v + 1]]
    }
}

const LEAF_SIZE: usize = 64;

/// Returns a permutation `perm` with `perm[new] = old`.
pub fn nested_dissection(g: &Graph) -> Vec<usize> {
    let n = g.len();
    let mut nd = Dissector {
        g,
        owner: vec![usize::MAX; n],
        level: vec![usize::MAX; n],
        stamp: vec![0; n],
        epoch: 0,
        comp_stamp: vec![0; n],
        comp_epoch: 0,
        next_id: 0,
        order: Vec::with_capacity(n),
    };
    let all: Vec<usize> = (0..n).collect();
    let id = nd.fresh_id();
    for &v in &all {
        nd.owner[v] = id;
    }
    nd.dissect(all, id);
    debug_assert_eq!(nd.order.len(), n);
    nd.order
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

struct Dissector<'a> {
    g: &'a Graph,
    owner: Vec<usize>,
    level: Vec<usize>,
    stamp: Vec<usize>,
    epoch: usize,
    comp_stamp: Vec<usize>,
    comp_epoch: usize,
    next_id: usize,
    order: Vec<usize>,
}

impl Dissector<'_> {
    fn fresh_id(&mut self) -> usize {
        self.next_id += 1;
        self.next_id
    }

    /// BFS from `root` within vertices owned by `id`; fills `self.level`
    /// and returns the visit order.
    fn bfs(&mut self, root: usize, id: usize) -> Vec<usize> {
        self.epoch += 1;
        let epoch = self.epoch;
        let mut queue = vec![root];
        self.stamp[root] = epoch;
        self.level[root] = 0;
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            let lv = self.level[v];
            for &w in self.g.neighbors(v) {
                if self.owner[w] == id && self.stamp[w] != epoch {
                    self.stamp[w] = epoch;
                    self.level[w] = lv + 1;
                    queue.push(w);
                }
            }
        }
        queue
    }

    fn dissect(&mut self, nodes: Vec<usize>, id: usize) {
        if nodes.len() <= LEAF_SIZE {
            self.order.extend(nodes);
            return;
        }
        // split into connected components first
        self.comp_epoch += 1;
        let ce = self.comp_epoch;
        let mut components = Vec::new();
        for &start in &nodes {
            if self.comp_stamp[start] == ce {
                continue;
            }
            let comp = self.bfs(start, id);
            for &v in &comp {
                self.comp_stamp[v] = ce;
            }
            components.push(comp);
        }
        if components.len() > 1 {
            for comp in components {
                let cid = self.fresh_id();
                for &v in &comp {
                    self.owner[v] = cid;
                }
                self.dissect(comp, cid);
            }
            return;
        }
        let comp = components.pop().unwrap();
        if comp.len() <= LEAF_SIZE {
            self.order.extend(comp);
            return;
        }

        // pseudo-peripheral root: repeat BFS from the last vertex reached
        let mut root = comp[0];
        let mut order = self.bfs(root, id);
        let mut depth = self.level[*order.last().unwrap()];
        for _ in 0..4 {
            let far = *order.last().unwrap();
            let cand = self.bfs(far, id);
            let d = self.level[*cand.last().unwrap()];
            if d > depth {
                depth = d;
                root = far;
                order = cand;
            } else {
                // restore the levels of the retained structure
                order = self.bfs(root, id);
                break;
            }
        }
        if depth < 2 {
            self.order.extend(order);
            return;
        }

        let mut counts = vec![0usize; depth + 1];
        for &v in &order {
            counts[self.level[v]] += 1;
        }
        // among levels whose cumulative share is near one half, take the
        // thinnest
        let total = order.len();
        let mut cum = 0;
        let mut best: Option<(usize, usize)> = None;
        for (l, &c) in counts.iter().enumerate() {
            let before = cum;
            cum += c;
            if l == 0 || l == depth {
                continue;
            }
            let lo = before as f64 / total as f64;
            let hi = cum as f64 / total as f64;
            if hi < 0.3 || lo > 0.7 {
                continue;
            }
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((l, c));
            }
        }
        let Some((sep_level, _)) = best else {
            self.order.extend(order);
            return;
        };

        let mut below = Vec::new();
        let mut above = Vec::new();
        let mut sep = Vec::new();
        for &v in &order {
            match self.level[v].cmp(&sep_level) {
                std::cmp::Ordering::Less => below.push(v),
                std::cmp::Ordering::Greater => above.push(v),
                std::cmp::Ordering::Equal => sep.push(v),
            }
        }
        let sep_id = self.fresh_id();
        for &v in &sep {
            self.owner[v] = sep_id;
        }
        for part in [below, above] {
            let pid = self.fresh_id();
            for &v in &part {
                self.owner[v] = pid;
            }
            self.dissect(part, pid);
        }
        self.order.extend(sep);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_graph(nx: usize, ny: usize, periodic: bool) -> Graph {
        let idx = |i: usize, j: usize| j * nx + i;
        let mut ptr = vec![0];
        let mut adj = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let mut nb = Vec::new();
                if i > 0 {
                    nb.push(idx(i - 1, j));
                } else if periodic {
                    nb.push(idx(nx - 1, j));
                }
                if i + 1 < nx {
                    nb.push(idx(i + 1, j));
                } else if periodic {
                    nb.push(idx(0, j));
                }
                if j > 0 {
                    nb.push(idx(i, j - 1));
                } else if periodic {
                    nb.push(idx(i, ny - 1));
                }
                if j + 1 < ny {
                    nb.push(idx(i, j + 1));
                } else if periodic {
                    nb.push(idx(i, 0));
                }
                adj.extend(nb);
                ptr.push(adj.len());
            }
        }
        Graph { ptr, adj }
    }

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&v| v < p.len() && !std::mem::replace(&mut seen[v], true))
    }

    #[test]
    fn ordering_is_a_permutation() {
        for (nx, ny, per) in [(1, 1, false), (7, 3, false), (40, 40, false), (33, 17, true)] {
            let g = grid_graph(nx, ny, per);
            let p = nested_dissection(&g);
            assert!(is_permutation(&p), "{nx}x{ny}");
        }
    }

    #[test]
    fn disconnected_graph() {
        // two separate 10x10 grids
        let a = grid_graph(10, 10, false);
        let mut ptr = a.ptr.clone();
        let mut adj = a.adj.clone();
        let off = a.len();
        for v in 0..a.len() {
            adj.extend(a.neighbors(v).iter().map(|w| w + off));
            ptr.push(adj.len());
        }
        let g = Graph { ptr, adj };
        assert!(is_permutation(&nested_dissection(&g)));
    }

    #[test]
    fn invert_roundtrip() {
        let p = vec![2, 0, 3, 1];
        let inv = invert(&p);
        for (new, &old) in p.iter().enumerate() {
            assert_eq!(inv[old], new);
        }
    }
}
