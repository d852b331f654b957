//! Sparse LU of a square basis matrix with Markowitz pivoting, plus
//! product-form updates for column replacements.
//!
//! Rows are indexed by constraint, columns by basis position. After
//! factoring, `E B = U` where E is the product of elimination etas and U is
//! triangular in pivot order.

const DROP_TOL: f64 = 1e-14;
const ABS_PIVOT_TOL: f64 = 1e-11;
/// Threshold partial pivoting: |pivot| ≥ THRESHOLD · max |column|.
const THRESHOLD: f64 = 0.1;
/// Columns examined per general Markowitz search.
const SEARCH_COLUMNS: usize = 4;

#[derive(Debug, Clone)]
struct Step {
    row: usize,
    col: usize,
    pivot: f64,
    /// Pivot row entries outside the pivot column.
    u: Vec<(usize, f64)>,
    /// Multipliers (row, l) applied as b_row −= l · b_pivot_row.
    l: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    alpha: Vec<(usize, f64)>,
    pivot: f64,
}

#[derive(Debug, Clone)]
pub struct Factor {
    m: usize,
    steps: Vec<Step>,
    etas: Vec<Eta>,
}

/// Positions that could not be pivoted, paired with rows left without a
/// pivot. Replacing each such column by the unit column of its row gives a
/// nonsingular basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Deficiency {
    pub pairs: Vec<(usize, usize)>,
}

impl Factor {
    /// Factors the m × m matrix whose column `c` is `cols[c]`.
    pub fn new(m: usize, cols: &[Vec<(usize, f64)>]) -> Result<Factor, Deficiency> {
        assert_eq!(cols.len(), m);
        let mut colv: Vec<Vec<(usize, f64)>> = cols
            .iter()
            .map(|c| c.iter().copied().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        let mut rowp: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (c, col) in colv.iter().enumerate() {
            for &(r, _) in col {
                rowp[r].push(c);
            }
        }
        let mut row_alive = vec![true; m];
        let mut col_alive = vec![true; m];
        let mut row_count: Vec<usize> = rowp.iter().map(|r| r.len()).collect();
        let mut col_singles: Vec<usize> = (0..m).filter(|&c| colv[c].len() == 1).collect();
        let mut row_singles: Vec<usize> = (0..m).filter(|&r| row_count[r] == 1).collect();
        let mut steps = Vec::with_capacity(m);
        let mut deficient = Vec::new();
        let mut next_scan = 0usize;

        for _ in 0..m {
            // Pick (row, col).
            let mut choice: Option<(usize, usize)> = None;
            while let Some(c) = col_singles.pop() {
                if col_alive[c] && colv[c].len() == 1 && colv[c][0].1.abs() > ABS_PIVOT_TOL {
                    choice = Some((colv[c][0].0, c));
                    break;
                }
            }
            if choice.is_none() {
                while let Some(r) = row_singles.pop() {
                    if !row_alive[r] || row_count[r] != 1 {
                        continue;
                    }
                    rowp[r].retain(|&c| col_alive[c]);
                    let Some(&c) = rowp[r].first() else { continue };
                    let v = colv[c].iter().find(|e| e.0 == r).map_or(0.0, |e| e.1);
                    let cmax = colv[c].iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
                    if v.abs() > ABS_PIVOT_TOL && v.abs() >= THRESHOLD * cmax {
                        choice = Some((r, c));
                        break;
                    }
                }
            }
            if choice.is_none() {
                // Markowitz over the shortest few columns.
                let mut cands: Vec<(usize, usize)> = Vec::new();
                for off in 0..m {
                    let c = (next_scan + off) % m;
                    if !col_alive[c] {
                        continue;
                    }
                    let len = colv[c].len();
                    if cands.len() < SEARCH_COLUMNS {
                        cands.push((len, c));
                        cands.sort();
                    } else if len < cands[SEARCH_COLUMNS - 1].0 {
                        cands[SEARCH_COLUMNS - 1] = (len, c);
                        cands.sort();
                    }
                    if len <= 1 && cands.len() == SEARCH_COLUMNS && cands[SEARCH_COLUMNS - 1].0 <= 1 {
                        break;
                    }
                }
                let mut best: Option<(usize, usize, usize)> = None;
                for &(len, c) in &cands {
                    let cmax = colv[c].iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
                    if cmax <= ABS_PIVOT_TOL {
                        continue;
                    }
                    for &(r, v) in &colv[c] {
                        if v.abs() < THRESHOLD * cmax {
                            continue;
                        }
                        let cost = (row_count[r] - 1) * (len - 1);
                        if best.is_none_or(|(b, _, _)| cost < b) {
                            best = Some((cost, r, c));
                        }
                    }
                }
                if let Some((_, r, c)) = best {
                    choice = Some((r, c));
                    next_scan = (c + 1) % m;
                } else if let Some(&(_, c)) = cands.first() {
                    // Every candidate is numerically empty; give one up.
                    col_alive[c] = false;
                    for &(r, _) in &colv[c] {
                        row_count[r] -= 1;
                        if row_count[r] == 1 {
                            row_singles.push(r);
                        }
                    }
                    colv[c].clear();
                    deficient.push(c);
                    continue;
                } else {
                    break;
                }
            }
            let (p, c) = choice.unwrap();
            let pivot = colv[c].iter().find(|e| e.0 == p).unwrap().1;

            // Pivot row over live columns other than c.
            rowp[p].retain(|&j| col_alive[j]);
            let mut u = Vec::with_capacity(rowp[p].len());
            for &j in &rowp[p] {
                if j == c {
                    continue;
                }
                if let Some(e) = colv[j].iter().find(|e| e.0 == p) {
                    u.push((j, e.1));
                }
            }
            let others: Vec<(usize, f64)> = colv[c].iter().copied().filter(|e| e.0 != p).collect();
            let mut l = Vec::with_capacity(others.len());
            for &(i, a) in &others {
                let li = a / pivot;
                l.push((i, li));
                for &(j, upj) in &u {
                    let col = &mut colv[j];
                    match col.iter().position(|e| e.0 == i) {
                        Some(k) => {
                            col[k].1 -= li * upj;
                            if col[k].1.abs() < DROP_TOL {
                                col.swap_remove(k);
                                row_count[i] -= 1;
                                if row_count[i] == 1 {
                                    row_singles.push(i);
                                }
                                if col.len() == 1 {
                                    col_singles.push(j);
                                }
                            }
                        }
                        None => {
                            col.push((i, -li * upj));
                            rowp[i].push(j);
                            row_count[i] += 1;
                        }
                    }
                }
            }
            // Retire row p and column c.
            for &(j, _) in &u {
                let col = &mut colv[j];
                if let Some(k) = col.iter().position(|e| e.0 == p) {
                    col.swap_remove(k);
                }
                if col.len() == 1 {
                    col_singles.push(j);
                }
            }
            for &(i, _) in &others {
                row_count[i] -= 1;
                if row_count[i] == 1 {
                    row_singles.push(i);
                }
            }
            row_alive[p] = false;
            col_alive[c] = false;
            colv[c].clear();
            steps.push(Step { row: p, col: c, pivot, u, l });
        }
        if !deficient.is_empty() || steps.len() < m {
            let mut rows: Vec<usize> = (0..m).filter(|&r| row_alive[r]).collect();
            let mut cs = deficient;
            cs.extend((0..m).filter(|&c| col_alive[c]));
            cs.sort_unstable();
            cs.dedup();
            rows.truncate(cs.len());
            return Err(Deficiency { pairs: cs.into_iter().zip(rows).collect() });
        }
        Ok(Factor { m, steps, etas: Vec::new() })
    }

    pub fn updates(&self) -> usize {
        self.etas.len()
    }

    /// Solves B x = b. `b` is indexed by row, the result by position.
    pub fn ftran(&self, b: &mut Vec<f64>) {
        for s in &self.steps {
            let bp = b[s.row];
            if bp != 0.0 {
                for &(i, l) in &s.l {
                    b[i] -= l * bp;
                }
            }
        }
        let mut x = vec![0.0; self.m];
        for s in self.steps.iter().rev() {
            let mut v = b[s.row];
            for &(j, u) in &s.u {
                v -= u * x[j];
            }
            x[s.col] = v / s.pivot;
        }
        for e in &self.etas {
            let xr = x[e.pos];
            if xr != 0.0 {
                let t = xr / e.pivot;
                for &(i, a) in &e.alpha {
                    x[i] -= a * t;
                }
                x[e.pos] = t;
            }
        }
        *b = x;
    }

    /// Solves yᵀ B = eᵀ. `e` is indexed by position, the result by row.
    pub fn btran(&self, e: &mut Vec<f64>) {
        for et in self.etas.iter().rev() {
            let mut v = e[et.pos];
            for &(i, a) in &et.alpha {
                v -= a * e[i];
            }
            e[et.pos] = v / et.pivot;
        }
        let mut z = vec![0.0; self.m];
        for s in &self.steps {
            let zp = e[s.col] / s.pivot;
            z[s.row] = zp;
            if zp != 0.0 {
                for &(j, u) in &s.u {
                    e[j] -= u * zp;
                }
            }
        }
        for s in self.steps.iter().rev() {
            let mut v = z[s.row];
            for &(i, l) in &s.l {
                v -= l * z[i];
            }
            z[s.row] = v;
        }
        *e = z;
    }

    /// Replaces the column at `pos` given its FTRAN image `alpha` = B⁻¹ a.
    pub fn update(&mut self, pos: usize, alpha: &[f64]) {
        let pivot = alpha[pos];
        let sparse = alpha
            .iter()
            .enumerate()
            .filter(|&(i, &a)| i != pos && a.abs() > DROP_TOL)
            .map(|(i, &a)| (i, a))
            .collect();
        self.etas.push(Eta { pos, alpha: sparse, pivot });
    }
}
