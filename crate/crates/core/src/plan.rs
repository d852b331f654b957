use crate::error::{invalid, Result};
use crate::network::NetworkModel;

/// Active stage per signalized intersection per interval. Storing the index
/// makes every plan one-hot by construction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SignalPlan {
    pub stages: Vec<Vec<usize>>,
}

impl SignalPlan {
    pub fn new(stages: Vec<Vec<usize>>) -> Self {
        SignalPlan { stages }
    }

    /// Every intersection holds stage `w` for `n` intervals.
    pub fn constant(net: &NetworkModel, w: usize, n: usize) -> Self {
        SignalPlan {
            stages: net.signalized.iter().map(|_| vec![w; n]).collect(),
        }
    }

    /// Builds a plan from binary θ[j][w][k], rejecting anything that is not one-hot.
    pub fn from_theta(theta: &[Vec<Vec<u8>>]) -> Result<Self> {
        let mut stages = Vec::new();
        for (j, per_stage) in theta.iter().enumerate() {
            let n = per_stage.first().map(|v| v.len()).unwrap_or(0);
            let mut seq = Vec::with_capacity(n);
            for k in 0..n {
                let on: Vec<usize> = (0..per_stage.len())
                    .filter(|&w| per_stage[w].get(k).copied().unwrap_or(0) != 0)
                    .collect();
                if on.len() != 1 {
                    return invalid(format!(
                        "intersection {j} interval {k}: {} stages green, need exactly one",
                        on.len()
                    ));
                }
                seq.push(on[0]);
            }
            stages.push(seq);
        }
        Ok(SignalPlan { stages })
    }

    pub fn len(&self) -> usize {
        self.stages.iter().map(|s| s.len()).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stage at interval k. Before the plan nothing is green; past its end
    /// the last stage continues.
    pub fn stage(&self, j: usize, k: isize) -> Option<usize> {
        let seq = self.stages.get(j)?;
        if k < 0 || seq.is_empty() {
            return None;
        }
        Some(seq[(k as usize).min(seq.len() - 1)])
    }

    pub fn theta(&self, j: usize, w: usize, k: isize) -> bool {
        self.stage(j, k) == Some(w)
    }

    pub fn check(&self, net: &NetworkModel, horizon: usize) -> Result<()> {
        if self.stages.len() != net.signalized.len() {
            return invalid(format!(
                "plan covers {} intersections, network has {}",
                self.stages.len(),
                net.signalized.len()
            ));
        }
        for (j, seq) in self.stages.iter().enumerate() {
            if seq.len() < horizon {
                return invalid(format!(
                    "plan for {} has {} intervals, horizon is {horizon}",
                    net.signalized[j].id,
                    seq.len()
                ));
            }
            if let Some(&w) = seq.iter().find(|&&w| w >= net.signalized[j].stages.len()) {
                return invalid(format!("plan for {} uses unknown stage {w}", net.signalized[j].id));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, stages: &[usize]) {
        for (seq, &w) in self.stages.iter_mut().zip(stages) {
            seq.push(w);
        }
    }

    pub fn truncated(&self, n: usize) -> Self {
        SignalPlan {
            stages: self.stages.iter().map(|s| s[..n.min(s.len())].to_vec()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_theta_checks_one_hot() {
        let ok = vec![vec![vec![1, 0, 1], vec![0, 1, 0]]];
        assert_eq!(SignalPlan::from_theta(&ok).unwrap().stages, vec![vec![0, 1, 0]]);
        let two = vec![vec![vec![1, 1], vec![0, 1]]];
        assert!(SignalPlan::from_theta(&two).is_err());
        let none = vec![vec![vec![0, 1], vec![0, 0]]];
        assert!(SignalPlan::from_theta(&none).is_err());
    }

    #[test]
    fn continuation_and_prehistory() {
        let p = SignalPlan::new(vec![vec![0, 1]]);
        assert!(!p.theta(0, 0, -1));
        assert!(!p.theta(0, 1, -1));
        assert!(p.theta(0, 1, 5));
    }
}
