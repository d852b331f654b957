use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt;

/// Model symbol with its indices. Coarse times are window-local intervals,
/// fine times window-local fine steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    /// C_i(k)
    Volume { link: usize, k: usize },
    /// f_ij(k) through a signalized intersection.
    Flow { stream: usize, k: usize },
    /// θ_w(k)
    Stage { node: usize, stage: usize, k: usize },
    /// δ^p_ij(k)
    SpeedSel { stream: usize, p: usize, k: usize },
    /// l_ij(k)
    SpeedLevel { stream: usize, k: usize },
    /// Γ_ij(k), positive-flow indicator of a priority stream.
    PriorityOn { stream: usize, k: usize },
    /// Outflow of an exit link.
    Exit { link: usize, k: usize },
    /// Entry queue before the interval's demand.
    Queue { link: usize, k: usize },
    Inject { link: usize, k: usize },
    /// Selects which side of the injection minimum is active.
    InjectSide { link: usize, k: usize },
    /// C_i^j(t)
    Segment { link: usize, seg: usize, t: usize },
    /// Entry buffer of a segmented link fed by a signalized intersection.
    Buffer { link: usize, t: usize },
    /// f_i^{j,j−1}(t), indexed by the upstream segment j.
    Shift { link: usize, seg: usize, t: usize },
    /// Buffer → far segment.
    Release { link: usize, t: usize },
    /// f^0_{i,p}(t) across an all-way-stop intersection.
    Boundary { stream: usize, t: usize },
    FineQueue { link: usize, t: usize },
    FineInject { link: usize, t: usize },
    FineInjectSide { link: usize, t: usize },
    /// T^0_g(t)
    Arrival { node: usize, group: usize, t: usize },
    /// ψ¹: segment 0 occupied.
    Occupied { node: usize, group: usize, t: usize },
    /// ψ²: T(t) ≥ M_T(1−ψ¹) + ψ⁴ side of the minimum.
    KeepSide { node: usize, group: usize, t: usize },
    /// ψ³: the t side of the minimum.
    StartSide { node: usize, group: usize, t: usize },
    /// ψ⁴ = ψ¹(t)·T(t−1)
    ProdArrival { node: usize, group: usize, t: usize },
    /// ψ⁵ = ψ¹(t)·t
    ProdTime { node: usize, group: usize, t: usize },
    /// [T_g(t) ≥ T_h(t)] for σ_h < σ_g.
    Later { node: usize, group: usize, other: usize, t: usize },
    /// θ_g(t), the virtual green.
    VirtualGreen { node: usize, group: usize, t: usize },
}

pub struct Names<'a> {
    pub links: &'a [String],
    pub streams: &'a [String],
    pub nodes_sig: &'a [String],
    pub nodes_non: &'a [String],
    pub stages: &'a [Vec<String>],
}

impl Symbol {
    pub fn name(&self, n: &Names) -> String {
        use Symbol::*;
        let l = |i: usize| n.links[i].as_str();
        let s = |i: usize| n.streams[i].as_str();
        match *self {
            Volume { link, k } => format!("C({},{k})", l(link)),
            Flow { stream, k } => format!("f({},{k})", s(stream)),
            Stage { node, stage, k } => format!("theta({},{},{k})", n.nodes_sig[node], n.stages[node][stage]),
            SpeedSel { stream, p, k } => format!("delta({},{p},{k})", s(stream)),
            SpeedLevel { stream, k } => format!("l({},{k})", s(stream)),
            PriorityOn { stream, k } => format!("Gamma({},{k})", s(stream)),
            Exit { link, k } => format!("x({},{k})", l(link)),
            Queue { link, k } => format!("Q({},{k})", l(link)),
            Inject { link, k } => format!("e({},{k})", l(link)),
            InjectSide { link, k } => format!("z({},{k})", l(link)),
            Segment { link, seg, t } => format!("Cs({},{seg},{t})", l(link)),
            Buffer { link, t } => format!("B({},{t})", l(link)),
            Shift { link, seg, t } => format!("fs({},{seg},{t})", l(link)),
            Release { link, t } => format!("b({},{t})", l(link)),
            Boundary { stream, t } => format!("f0({},{t})", s(stream)),
            FineQueue { link, t } => format!("Qs({},{t})", l(link)),
            FineInject { link, t } => format!("es({},{t})", l(link)),
            FineInjectSide { link, t } => format!("zs({},{t})", l(link)),
            Arrival { node, group, t } => format!("T({},{group},{t})", n.nodes_non[node]),
            Occupied { node, group, t } => format!("psi1({},{group},{t})", n.nodes_non[node]),
            KeepSide { node, group, t } => format!("psi2({},{group},{t})", n.nodes_non[node]),
            StartSide { node, group, t } => format!("psi3({},{group},{t})", n.nodes_non[node]),
            ProdArrival { node, group, t } => format!("psi4({},{group},{t})", n.nodes_non[node]),
            ProdTime { node, group, t } => format!("psi5({},{group},{t})", n.nodes_non[node]),
            Later { node, group, other, t } => format!("psis({},{group},{other},{t})", n.nodes_non[node]),
            VirtualGreen { node, group, t } => format!("thetav({},{group},{t})", n.nodes_non[node]),
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Bijection between symbols and model variable indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableAtlas {
    index: HashMap<Symbol, usize>,
    symbols: Vec<Symbol>,
}

impl VariableAtlas {
    pub fn insert(&mut self, sym: Symbol, var: usize) -> Result<()> {
        if var != self.symbols.len() {
            return Err(Error::Internal {
                message: format!("atlas out of step: {sym} mapped to {var}, expected {}", self.symbols.len()),
                model_lp: None,
            });
        }
        if self.index.insert(sym, var).is_some() {
            return Err(Error::Internal { message: format!("symbol {sym} declared twice"), model_lp: None });
        }
        self.symbols.push(sym);
        Ok(())
    }

    pub fn get(&self, sym: &Symbol) -> Option<usize> {
        self.index.get(sym).copied()
    }

    pub fn symbol(&self, var: usize) -> Symbol {
        self.symbols[var]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Symbol)> {
        self.symbols.iter().enumerate()
    }
}
