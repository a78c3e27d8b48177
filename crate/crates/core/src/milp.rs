//! Solver-neutral mixed-integer linear program representation.
//!
//! A [`MilpModel`] is a plain container: variables with bounds, sparse linear
//! constraints, an ordered-set list for piecewise interpolation groups, and a
//! sparse minimization objective. Variable `i` is named `x<i>` and constraint
//! `j` is named `c<j>` wherever names are needed (MPS export, solution
//! files).

pub mod mps;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("constraint {constraint} references unknown variable {variable}")]
    UnknownVariable { constraint: usize, variable: usize },
    #[error("objective references unknown variable {0}")]
    UnknownObjectiveVariable(usize),
    #[error("variable {0} has empty bound interval [{1}, {2}]")]
    EmptyBounds(usize, f64, f64),
    #[error("binary variable {0} must have bounds within [0, 1]")]
    BadBinaryBounds(usize),
    #[error("ordered group {0} member {1} must be continuous with bounds [0, 1]")]
    BadGroupMember(usize, usize),
    #[error("ordered group {0} references unknown variable {1}")]
    BadGroupVariable(usize, usize),
    #[error("constraint {0} has a non-finite coefficient or rhs")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variable {
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// Sparse row `sum(terms) sense rhs`. Term indices refer to variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Sparse minimization objective.
    pub objective: Vec<(usize, f64)>,
    /// Ordered groups of continuous [0, 1] variables of which at most two,
    /// necessarily adjacent, may be nonzero in a feasible solution.
    pub sos2_groups: Vec<Vec<usize>>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_continuous(&mut self, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable {
            kind: VarKind::Continuous,
            lower,
            upper,
        });
        self.variables.len() - 1
    }

    pub fn add_binary(&mut self) -> usize {
        self.variables.push(Variable {
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
        });
        self.variables.len() - 1
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(Constraint { terms, sense, rhs });
        self.constraints.len() - 1
    }

    /// Fix a variable to a value by collapsing its bounds.
    pub fn fix_variable(&mut self, var: usize, value: f64) {
        self.variables[var].lower = value;
        self.variables[var].upper = value;
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    /// Objective value of an assignment; does not check feasibility.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * values[j]).sum()
    }

    /// Signed residual of constraint `i`: positive values violate `Le`,
    /// negative values violate `Ge`, any nonzero value violates `Eq`.
    pub fn row_activity(&self, i: usize, values: &[f64]) -> f64 {
        self.constraints[i]
            .terms
            .iter()
            .map(|&(j, c)| c * values[j])
            .sum()
    }

    /// Largest constraint violation of an assignment, scaled by `1 + |rhs|`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.constraints.iter().enumerate() {
            let act = self.row_activity(i, values);
            let gap = match row.sense {
                Sense::Le => act - row.rhs,
                Sense::Ge => row.rhs - act,
                Sense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(gap / (1.0 + row.rhs.abs()));
        }
        for (j, v) in self.variables.iter().enumerate() {
            worst = worst.max(v.lower - values[j]).max(values[j] - v.upper);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.variables.len();
        for (j, v) in self.variables.iter().enumerate() {
            if v.lower > v.upper {
                return Err(ModelError::EmptyBounds(j, v.lower, v.upper));
            }
            if v.kind == VarKind::Binary && (v.lower < -0.0 || v.upper > 1.0) {
                return Err(ModelError::BadBinaryBounds(j));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(ModelError::NonFinite(i));
            }
            for &(j, c) in &row.terms {
                if j >= n {
                    return Err(ModelError::UnknownVariable {
                        constraint: i,
                        variable: j,
                    });
                }
                if !c.is_finite() {
                    return Err(ModelError::NonFinite(i));
                }
            }
        }
        for &(j, _) in &self.objective {
            if j >= n {
                return Err(ModelError::UnknownObjectiveVariable(j));
            }
        }
        for (g, group) in self.sos2_groups.iter().enumerate() {
            for &j in group {
                if j >= n {
                    return Err(ModelError::BadGroupVariable(g, j));
                }
                let v = &self.variables[j];
                if v.kind != VarKind::Continuous || v.lower < 0.0 || v.upper > 1.0 {
                    return Err(ModelError::BadGroupMember(g, j));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_references_and_bounds() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 1.0);
        m.add_constraint(vec![(x, 1.0)], Sense::Le, 1.0);
        assert!(m.validate().is_ok());

        m.add_constraint(vec![(7, 1.0)], Sense::Le, 1.0);
        assert!(matches!(
            m.validate(),
            Err(ModelError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn rejects_bad_group_members() {
        let mut m = MilpModel::new();
        let b = m.add_binary();
        m.sos2_groups.push(vec![b]);
        assert!(matches!(m.validate(), Err(ModelError::BadGroupMember(..))));
    }

    #[test]
    fn violation_measures_rows_and_bounds() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 2.0);
        m.add_constraint(vec![(x, 1.0)], Sense::Le, 1.0);
        assert_eq!(m.max_violation(&[0.5]), 0.0);
        assert!(m.max_violation(&[1.5]) > 0.2);
        assert!(m.max_violation(&[-0.5]) >= 0.5);
    }
}
