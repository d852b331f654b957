use crate::error::{invalid, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

impl Variable {
    pub fn is_integral(&self) -> bool {
        self.kind != VarKind::Continuous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    /// Big-M constant used to build the row, kept for audit.
    pub big_m: Option<f64>,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }

    /// Scale used for residual tolerances.
    pub fn scale(&self, x: &[f64]) -> f64 {
        let mut s = 1.0f64.max(self.rhs.abs());
        for &(j, a) in &self.terms {
            s = s.max((a * x[j]).abs());
        }
        s
    }
}

/// Affine expression Σ a_j x_j + c.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(j: usize) -> Self {
        LinExpr { terms: vec![(j, 1.0)], constant: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn add(mut self, j: usize, a: f64) -> Self {
        self.terms.push((j, a));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn plus(mut self, other: &LinExpr, scale: f64) -> Self {
        for &(j, a) in &other.terms {
            self.terms.push((j, a * scale));
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        LinExpr::new().plus(self, s)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    /// Merges duplicate indices and drops zero coefficients.
    pub fn normalized(&self) -> Vec<(usize, f64)> {
        let mut m: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, a) in &self.terms {
            *m.entry(j).or_insert(0.0) += a;
        }
        m.into_iter().filter(|&(_, a)| a != 0.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MilpModel {
    pub name: String,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Minimized.
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowViolation {
    pub row: String,
    pub amount: f64,
}

impl MilpModel {
    pub fn new(name: impl Into<String>) -> Self {
        MilpModel { name: name.into(), ..Default::default() }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> usize {
        let (lower, upper) = if kind == VarKind::Binary {
            (lower.max(0.0), upper.min(1.0))
        } else {
            (lower, upper)
        };
        self.variables.push(Variable { name: name.into(), kind, lower, upper });
        self.variables.len() - 1
    }

    /// Adds `expr sense rhs`, moving the expression constant to the right.
    pub fn add_row(&mut self, name: impl Into<String>, expr: &LinExpr, sense: Sense, rhs: f64, big_m: Option<f64>) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms: expr.normalized(),
            sense,
            rhs: rhs - expr.constant,
            big_m,
        });
    }

    pub fn set_objective(&mut self, expr: &LinExpr) {
        self.objective = expr.normalized();
        self.objective_constant = expr.constant;
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }

    pub fn num_integer(&self) -> usize {
        self.variables.iter().filter(|v| v.is_integral()).count()
    }

    /// Rows, bounds and integrality broken by `x`, with residuals checked at
    /// `tol` relative to each row's scale.
    pub fn violations(&self, x: &[f64], tol: f64) -> Vec<RowViolation> {
        let mut out = Vec::new();
        for (j, v) in self.variables.iter().enumerate() {
            let xv = x[j];
            if xv < v.lower - tol * (1.0 + v.lower.abs()) || xv > v.upper + tol * (1.0 + v.upper.abs()) {
                out.push(RowViolation {
                    row: format!("bound {} in [{}, {}]", v.name, v.lower, v.upper),
                    amount: (v.lower - xv).max(xv - v.upper),
                });
            }
            if v.is_integral() && (xv - xv.round()).abs() > 1e-9 {
                out.push(RowViolation { row: format!("integrality {}", v.name), amount: (xv - xv.round()).abs() });
            }
        }
        for c in &self.constraints {
            let viol = c.violation(x);
            if viol > tol * c.scale(x) {
                out.push(RowViolation { row: c.name.clone(), amount: viol });
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        for c in &self.constraints {
            for &(j, _) in &c.terms {
                if j >= self.variables.len() {
                    return invalid(format!("row {} references undeclared variable {j}", c.name));
                }
            }
        }
        for v in &self.variables {
            if v.lower > v.upper {
                return invalid(format!("variable {} has empty bounds [{}, {}]", v.name, v.lower, v.upper));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_fold_constants_and_duplicates() {
        let mut m = MilpModel::new("t");
        let x = m.add_var("x", VarKind::Integer, 0.0, 5.0);
        let y = m.add_var("y", VarKind::Binary, -3.0, 4.0);
        assert_eq!((m.variables[y].lower, m.variables[y].upper), (0.0, 1.0));
        let e = LinExpr::var(x).add(y, 2.0).add(x, 1.0).plus_const(3.0);
        m.add_row("r", &e, Sense::Le, 10.0, None);
        assert_eq!(m.constraints[0].terms, vec![(0, 2.0), (1, 2.0)]);
        assert_eq!(m.constraints[0].rhs, 7.0);
        assert!(m.violations(&[3.0, 1.0], 1e-9).len() == 1);
        assert!(m.violations(&[2.0, 1.0], 1e-9).is_empty());
        assert!(!m.violations(&[2.5, 0.0], 1e-9).is_empty());
    }
}
