//! Sparse symmetric linear algebra for the interior-point KKT systems:
//! triplet assembly, reverse Cuthill-McKee ordering, and an elimination-tree
//! LDL^T factorization (no pivoting; the caller regularizes the system into
//! quasi-definiteness and checks the inertia).

/// Lower-triangular sparse symmetric matrix in CSC form (diagonal included).
#[derive(Debug, Clone)]
pub struct SymCsc {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymCsc {
    /// Build from lower-triangle triplets (row >= col); duplicates add up.
    /// Returns the matrix and, for each input triplet, the slot its value
    /// landed in, so callers can refresh values without re-sorting.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> (Self, Vec<usize>) {
        // order: column-major, then row
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].1, triplets[i].0));

        let mut colptr = vec![0usize; n + 1];
        let mut rowind = vec![];
        let mut values = vec![];
        let mut slot_of = vec![0usize; triplets.len()];
        let mut last: Option<(usize, usize)> = None;
        for &i in &order {
            let (r, c, v) = triplets[i];
            debug_assert!(r >= c, "triplet above the diagonal: ({r},{c})");
            if last == Some((r, c)) {
                let slot = values.len() - 1;
                values[slot] += v;
                slot_of[i] = slot;
            } else {
                rowind.push(r);
                values.push(v);
                slot_of[i] = values.len() - 1;
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        (SymCsc { n, colptr, rowind, values }, slot_of)
    }

    /// Symmetric permutation B = P A P^T with `perm[new] = old`, keeping the
    /// lower triangle.
    pub fn permute(&self, perm: &[usize]) -> SymCsc {
        let n = self.n;
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut triplets = vec![];
        for c in 0..n {
            for idx in self.colptr[c]..self.colptr[c + 1] {
                let r = self.rowind[idx];
                let (mut nr, mut nc) = (iperm[r], iperm[c]);
                if nr < nc {
                    std::mem::swap(&mut nr, &mut nc);
                }
                triplets.push((nr, nc, self.values[idx]));
            }
        }
        SymCsc::from_triplets(n, &triplets).0
    }
}

/// Reverse Cuthill-McKee ordering of the adjacency structure of a symmetric
/// matrix; returns `perm[new] = old`.
pub fn rcm_order(a: &SymCsc) -> Vec<usize> {
    let n = a.n;
    // build full adjacency (both triangles)
    let mut adj = vec![vec![]; n];
    for c in 0..n {
        for idx in a.colptr[c]..a.colptr[c + 1] {
            let r = a.rowind[idx];
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut frontier = std::collections::VecDeque::new();
    loop {
        // lowest-degree unvisited seed
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]);
        let Some(seed) = seed else { break };
        visited[seed] = true;
        frontier.push_back(seed);
        while let Some(u) = frontier.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| degree[v]);
            for v in next {
                visited[v] = true;
                frontier.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Symbolic structure of the LDL^T factorization.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    pub n: usize,
    parent: Vec<isize>,
    l_colptr: Vec<usize>,
}

/// Numeric LDL^T factors.
#[derive(Debug, Clone)]
pub struct LdlFactors {
    pub n: usize,
    l_colptr: Vec<usize>,
    l_rowind: Vec<usize>,
    l_values: Vec<f64>,
    pub d: Vec<f64>,
}

/// Elimination tree and column counts (up-looking, Davis-style).
pub fn ldl_symbolic(a: &SymCsc) -> LdlSymbolic {
    let n = a.n;
    let mut parent = vec![-1isize; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];

    // build row access of the lower triangle: we need, for row i, the
    // entries (i, c) with c < i. CSC of lower triangle gives columns; walk
    // all and bucket by row.
    let mut row_cols: Vec<Vec<usize>> = vec![vec![]; n];
    for c in 0..n {
        for idx in a.colptr[c]..a.colptr[c + 1] {
            let r = a.rowind[idx];
            if r > c {
                row_cols[r].push(c);
            }
        }
    }

    for i in 0..n {
        flag[i] = i;
        for &c in &row_cols[i] {
            let mut j = c;
            while flag[j] != i {
                if parent[j] == -1 {
                    parent[j] = i as isize;
                }
                lnz[j] += 1;
                flag[j] = i;
                j = parent[j] as usize;
            }
        }
    }
    let mut l_colptr = vec![0usize; n + 1];
    for j in 0..n {
        l_colptr[j + 1] = l_colptr[j] + lnz[j];
    }
    LdlSymbolic { n, parent, l_colptr }
}

/// Numeric factorization A = L D L^T.
///
/// Returns `Err(col)` on a zero pivot. The caller adds regularization and
/// retries; with a quasi-definite matrix the factorization always succeeds.
pub fn ldl_numeric(a: &SymCsc, sym: &LdlSymbolic) -> Result<LdlFactors, usize> {
    let n = a.n;
    let mut l_rowind = vec![0usize; sym.l_colptr[n]];
    let mut l_values = vec![0.0f64; sym.l_colptr[n]];
    let mut d = vec![0.0f64; n];
    let mut y = vec![0.0f64; n];
    let mut pattern = vec![0usize; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];

    // row access including the diagonal
    let mut row_entries: Vec<Vec<(usize, f64)>> = vec![vec![]; n];
    for c in 0..n {
        for idx in a.colptr[c]..a.colptr[c + 1] {
            let r = a.rowind[idx];
            row_entries[r].push((c, a.values[idx]));
        }
    }

    for i in 0..n {
        // scatter row i of A
        let mut top = n;
        flag[i] = i;
        d[i] = 0.0;
        for &(c, v) in &row_entries[i] {
            if c == i {
                d[i] = v;
                continue;
            }
            y[c] = v;
            // walk up the etree recording the path
            let mut len = 0;
            let mut j = c;
            while flag[j] != i {
                pattern[len] = j;
                len += 1;
                flag[j] = i;
                j = sym.parent[j] as usize;
            }
            // push the path in reverse onto the pattern stack
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        // sparse triangular solve along the pattern
        for t in top..n {
            let j = pattern[t];
            let yj = y[j];
            y[j] = 0.0;
            let p2 = sym.l_colptr[j] + lnz[j];
            for p in sym.l_colptr[j]..p2 {
                y[l_rowind[p]] -= l_values[p] * yj;
            }
            let lji = yj / d[j];
            d[i] -= lji * yj;
            l_rowind[p2] = i;
            l_values[p2] = lji;
            lnz[j] += 1;
        }
        if d[i] == 0.0 {
            return Err(i);
        }
    }

    Ok(LdlFactors {
        n,
        l_colptr: sym.l_colptr.clone(),
        l_rowind,
        l_values,
        d,
    })
}

impl LdlFactors {
    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        // forward: L y = b
        for j in 0..n {
            let yj = b[j];
            if yj != 0.0 {
                for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                    b[self.l_rowind[p]] -= self.l_values[p] * yj;
                }
            }
        }
        // diagonal
        for j in 0..n {
            b[j] /= self.d[j];
        }
        // backward: L^T x = y
        for j in (0..n).rev() {
            let mut s = b[j];
            for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                s -= self.l_values[p] * b[self.l_rowind[p]];
            }
            b[j] = s;
        }
    }

    /// (positive, negative, zero) counts of D.
    pub fn inertia(&self) -> (usize, usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        let mut zero = 0;
        for &di in &self.d {
            if di > 0.0 {
                pos += 1;
            } else if di < 0.0 {
                neg += 1;
            } else {
                zero += 1;
            }
        }
        (pos, neg, zero)
    }
}

/// Convenience wrapper holding the permutation with its factors.
#[derive(Debug, Clone)]
pub struct OrderedLdl {
    pub perm: Vec<usize>,
    iperm: Vec<usize>,
    sym: LdlSymbolic,
    permuted_pattern: SymCsc,
    factors: Option<LdlFactors>,
}

impl OrderedLdl {
    /// Analyze the pattern once (RCM + elimination tree).
    pub fn analyze(a: &SymCsc) -> OrderedLdl {
        let perm = rcm_order(a);
        let mut iperm = vec![0usize; a.n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let permuted = a.permute(&perm);
        let sym = ldl_symbolic(&permuted);
        OrderedLdl { perm, iperm, sym, permuted_pattern: permuted, factors: None }
    }

    /// Refactor with new values on the same pattern.
    pub fn factor(&mut self, a: &SymCsc) -> Result<(), usize> {
        let permuted = a.permute(&self.perm);
        debug_assert_eq!(permuted.rowind, self.permuted_pattern.rowind);
        let f = ldl_numeric(&permuted, &self.sym)?;
        self.factors = Some(f);
        Ok(())
    }

    pub fn inertia(&self) -> (usize, usize, usize) {
        self.factors.as_ref().expect("factor() first").inertia()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let f = self.factors.as_ref().expect("factor() first");
        let mut pb: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        f.solve(&mut pb);
        let mut x = vec![0.0; b.len()];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = pb[new];
        }
        let _ = &self.iperm;
        x
    }
}
