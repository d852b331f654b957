//! All-way-stop dynamics at the fine period λ: arrival indicators,
//! column-based first-come-first-serve greens and segment shifts.

use crate::error::{corrupt, invalid, Result};
use crate::signal::floor_count;

/// Leading fine interval of the column currently in segment 0.
/// `Empty` orders after every `Since`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Indicator {
    Since(u32),
    Empty,
}

impl Indicator {
    pub fn is_empty(&self) -> bool {
        matches!(self, Indicator::Empty)
    }

    /// Integer value with `Empty` mapped to `sentinel`.
    pub fn value(&self, sentinel: u32) -> u32 {
        match *self {
            Indicator::Since(t) => t,
            Indicator::Empty => sentinel,
        }
    }
}

pub fn update_indicator(t_prev: Indicator, c0_next: u32, t: u32) -> Indicator {
    if c0_next > 0 {
        t_prev.min(Indicator::Since(t + 1))
    } else {
        Indicator::Empty
    }
}

/// Position of the approach holding the virtual green: smallest indicator,
/// ties to the smallest σ.
pub fn assign_virtual_green(approaches: &[(Indicator, u32)]) -> Result<usize> {
    approaches
        .iter()
        .enumerate()
        .min_by_key(|(_, &(t, sigma))| (t, sigma))
        .map(|(p, _)| p)
        .ok_or_else(|| crate::error::Error::InvalidParameter("no approaches to assign".into()))
}

/// f^{j,j−1}(t) = ⌊min(C^j, Ĉ^{j−1} − C^{j−1} + s^{j−1}, v*·d*·λ)⌋.
pub fn segment_flow(
    c_up: u32,
    c_down: u32,
    chat_down: u32,
    s_down: u32,
    v_star: f64,
    d_star: f64,
    lambda_s: f64,
) -> u32 {
    let room = chat_down as i64 - c_down as i64 + s_down as i64;
    floor_count((c_up as f64).min(room as f64).min(v_star * d_star * lambda_s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Downstream {
    /// Receiver sampled at λ: room is Ĉ_p − C_p(t) + s_p(t).
    Fine { c_p: u32, chat_p: u32, s_p: u32 },
    /// Receiver sampled at Δ: room also discounts what already entered
    /// during the current coarse interval.
    Coarse { c_p: u32, chat_p: u32, s_p: u32, accumulator: u32 },
}

/// Boundary flow out of segment 0 across the intersection.
pub fn boundary_flow(
    c0: u32,
    downstream: Downstream,
    v_star: f64,
    d_star: f64,
    lambda_s: f64,
    green: bool,
) -> Result<u32> {
    if !(v_star > 0.0 && d_star > 0.0 && lambda_s > 0.0) {
        return invalid("boundary_flow needs positive speed, density and period");
    }
    let room = match downstream {
        Downstream::Fine { c_p, chat_p, s_p } => chat_p as i64 - c_p as i64 + s_p as i64,
        Downstream::Coarse { c_p, chat_p, s_p, accumulator } => {
            if accumulator > chat_p {
                return corrupt(
                    "boundary_flow",
                    format!("accumulator {accumulator} exceeds receiver capacity {chat_p}"),
                );
            }
            chat_p as i64 - c_p as i64 + s_p as i64 - accumulator as i64
        }
    };
    if !green {
        return Ok(0);
    }
    Ok(floor_count((c0 as f64).min(room as f64).min(v_star * d_star * lambda_s)))
}

/// Splits `total` across shares proportional to `weights` (largest remainder,
/// ties to the lower index). Weights summing to zero give all zeros.
pub fn apportion(total: u32, weights: &[f64]) -> Vec<u32> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<u32> = exact.iter().map(|&x| floor_count(x)).collect();
    let mut left = total.saturating_sub(out.iter().sum());
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - out[a] as f64;
        let rb = exact[b] - out[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}
