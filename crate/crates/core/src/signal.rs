//! Signalized intersection laws: speed levels, the floor-min flow law and
//! priority merging.

use crate::error::{corrupt, invalid, Result};
use crate::network::{Level, SpeedLevelTable};

pub(crate) const FLOOR_EPS: f64 = 1e-9;

pub(crate) fn floor_count(x: f64) -> u32 {
    if x <= 0.0 {
        0
    } else {
        (x + FLOOR_EPS).floor() as u32
    }
}

pub fn level_f64(l: &Level) -> f64 {
    *l.numer() as f64 / *l.denom() as f64
}

/// Length of the trailing run of greens in `history`, minus one, capped at r.
/// `None` when the last entry is red.
pub fn green_run(history: &[bool], r: usize) -> Option<usize> {
    let run = history.iter().rev().take_while(|&&g| g).count();
    if run == 0 {
        None
    } else {
        Some((run - 1).min(r))
    }
}

/// Discharge speed level l(k).
///
/// `theta_history` holds θ(k−r−1) … θ(k), oldest first.
pub fn speed_level(
    theta_history: &[bool],
    theta_next: bool,
    prev_level: Level,
    table: &SpeedLevelTable,
) -> Result<Level> {
    let r = table.memory_depth();
    if theta_history.len() != r + 2 {
        return invalid(format!(
            "speed_level needs {} history entries for r = {r}, got {}",
            r + 2,
            theta_history.len()
        ));
    }
    let Some(q) = green_run(theta_history, r) else {
        return Ok(Level::from_integer(0));
    };
    if theta_next {
        Ok(table.levels[r - q])
    } else {
        Ok(prev_level / 2)
    }
}

/// f_ij(k) = ⌊min(γ C_i, Ĉ_j − C_j + s_j, l·v*·d*·Δ)⌋.
///
/// `chat_j = None` marks a receiver with unlimited room.
#[allow(clippy::too_many_arguments)]
pub fn signalized_flow(
    c_i: u32,
    gamma: f64,
    c_j: u32,
    chat_j: Option<u32>,
    s_j: u32,
    level: Level,
    v_star: f64,
    d_star: f64,
    delta_s: f64,
) -> Result<u32> {
    let room = match chat_j {
        Some(chat) => {
            let held = c_j as i64 - s_j as i64;
            if held > chat as i64 || held < 0 {
                return corrupt(
                    "signalized_flow",
                    format!("receiver holds C_j = {c_j}, s_j = {s_j} against capacity {chat}"),
                );
            }
            (chat as i64 - held) as f64
        }
        None => f64::INFINITY,
    };
    let speed = level_f64(&level) * v_star * d_star * delta_s;
    Ok(floor_count((gamma * c_i as f64).min(room).min(speed)))
}

/// Largest give-way flow that still fits behind `f_priority`.
pub fn merge_cap(f_priority: u32, c_j: u32, chat_j: u32, s_j: u32) -> u32 {
    let used = c_j as i64 - s_j as i64 + f_priority as i64;
    (chat_j as i64 - used).max(0) as u32
}

/// Strict merging: a give-way stream may move only when the priority flow is zero.
pub fn merge_strict(f_priority: u32) -> bool {
    f_priority == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SpeedLevelTable {
        SpeedLevelTable::new(vec![Level::new(1, 1), Level::new(3, 4), Level::new(1, 2)]).unwrap()
    }

    #[test]
    fn red_is_zero() {
        let l = speed_level(&[false, false, true, false], true, Level::new(1, 2), &table()).unwrap();
        assert_eq!(l, Level::from_integer(0));
    }

    #[test]
    fn two_greens_then_green() {
        // θ(k−3..k) = 0,0,1,1 with θ(k+1) = 1: q = 1, level l^{r−q} = l^1.
        let l = speed_level(&[false, false, true, true], true, Level::from_integer(0), &table()).unwrap();
        assert_eq!(l, Level::new(3, 4));
    }

    #[test]
    fn halving_before_red() {
        let l = speed_level(&[false, false, true, true], false, Level::new(1, 2), &table()).unwrap();
        assert_eq!(l, Level::new(1, 4));
    }

    #[test]
    fn long_green_saturates() {
        let l = speed_level(&[true, true, true, true], true, Level::from_integer(1), &table()).unwrap();
        assert_eq!(l, Level::from_integer(1));
        let l = speed_level(&[false, true, true, true], true, Level::from_integer(1), &table()).unwrap();
        assert_eq!(l, Level::from_integer(1));
    }

    #[test]
    fn history_length_checked() {
        assert!(speed_level(&[true, true], true, Level::from_integer(0), &table()).is_err());
    }

    #[test]
    fn flow_law_examples() {
        let r = Level::new(3, 4);
        assert_eq!(signalized_flow(0, 1.0, 0, Some(33), 0, r, 10.0, 0.1, 10.0).unwrap(), 0);
        assert_eq!(signalized_flow(10, 1.0, 0, Some(33), 0, Level::from_integer(0), 10.0, 0.1, 10.0).unwrap(), 0);
        // l·v*·d*·Δ = 0.75·8 = 6 with v*·d*·Δ = 8.
        assert_eq!(signalized_flow(10, 0.5, 30, Some(33), 2, r, 8.0, 1.0, 1.0).unwrap(), 5);
        assert!(signalized_flow(10, 0.5, 40, Some(33), 2, r, 8.0, 1.0, 1.0).is_err());
        assert_eq!(signalized_flow(10, 1.0, 0, None, 0, Level::from_integer(1), 8.0, 1.0, 1.0).unwrap(), 8);
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_cap(0, 0, 33, 0), 33);
        assert_eq!(merge_cap(5, 30, 33, 2), 0);
        assert_eq!(merge_cap(2, 10, 33, 1), 22);
        assert!(merge_strict(0));
        assert!(!merge_strict(3));
    }
}
