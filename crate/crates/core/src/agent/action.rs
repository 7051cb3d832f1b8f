use std::fmt;

use serde::{Deserialize, Serialize};

use crate::host::{PolicyValue, RT_PRIORITY_MIN};
use crate::monitor::AppState;

/// One component of an action: a relative shift or a reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shift {
    /// Fall back to the default (SCHED_OTHER, or no dedicated cores).
    NegInf,
    Down,
    Zero,
    Up,
}

impl Shift {
    pub const ALL: [Shift; 4] = [Shift::NegInf, Shift::Down, Shift::Zero, Shift::Up];

    fn index(self) -> usize {
        match self {
            Shift::NegInf => 0,
            Shift::Down => 1,
            Shift::Zero => 2,
            Shift::Up => 3,
        }
    }

    fn label(self, step: i32) -> String {
        match self {
            Shift::NegInf => "-inf".into(),
            Shift::Down => format!("-{step}"),
            Shift::Zero => "0".into(),
            Shift::Up => format!("+{step}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchedAction {
    pub dp: Shift,
    pub da: Shift,
}

pub const NUM_ACTIONS: usize = 16;

impl SchedAction {
    pub const fn new(dp: Shift, da: Shift) -> Self {
        SchedAction { dp, da }
    }

    pub fn index(self) -> usize {
        self.dp.index() * 4 + self.da.index()
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < NUM_ACTIONS, "action index {i}");
        SchedAction::new(Shift::ALL[i / 4], Shift::ALL[i % 4])
    }

    pub fn all() -> impl Iterator<Item = SchedAction> {
        (0..NUM_ACTIONS).map(Self::from_index)
    }

    pub fn label(self, steps: Steps) -> String {
        format!("({},{})", self.dp.label(steps.p_step), self.da.label(steps.a_step))
    }
}

impl fmt::Display for SchedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label(Steps::default()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Steps {
    pub p_step: i32,
    pub a_step: i32,
}

impl Default for Steps {
    fn default() -> Self {
        Steps { p_step: 10, a_step: 2 }
    }
}

/// Allowed actions: with the lock flag set only core resets survive.
pub fn mask_actions(state: &AppState) -> [bool; NUM_ACTIONS] {
    let mut mask = [true; NUM_ACTIONS];
    if state.f_lock {
        for a in SchedAction::all() {
            mask[a.index()] = a.da == Shift::NegInf;
        }
    }
    mask
}

/// Absolute policy derived from a shift, plus the unclamped totals the
/// reward checks. `None` totals come from resets, which are never checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub priority: PolicyValue,
    pub cores: PolicyValue,
    /// `A_id + A_other + dA`.
    pub a_used: Option<i64>,
    /// `P_id + dP`.
    pub p_used: Option<i64>,
    /// The action keeps the current policy; nothing is enforced.
    pub unchanged: bool,
}

pub fn resolve(action: SchedAction, state: &AppState, steps: Steps) -> Resolved {
    let p = state.p_id as i64;
    let a = state.a_id as i64;
    let (ps, as_) = (steps.p_step as i64, steps.a_step as i64);
    let p_new = match (action.dp, p) {
        (Shift::NegInf, _) => None,
        // An app under SCHED_OTHER that keeps its priority stays there.
        (Shift::Zero, 0) => None,
        (Shift::Zero, _) => Some(p),
        // Entering the real-time class starts just above the floor.
        (Shift::Up, 0) => Some(RT_PRIORITY_MIN as i64 - 1 + ps),
        (Shift::Up, _) => Some(p + ps),
        (Shift::Down, _) => Some(p - ps),
    };
    let a_new = match action.da {
        Shift::NegInf => None,
        Shift::Zero => Some(a),
        Shift::Up => Some(a + as_),
        Shift::Down => Some(a - as_),
    };
    let to_policy = |v: Option<i64>| match v {
        Some(x) => PolicyValue::Set(x.clamp(i32::MIN as i64, i32::MAX as i64) as i32),
        None => PolicyValue::Revoke,
    };
    Resolved {
        priority: to_policy(p_new),
        cores: to_policy(a_new),
        a_used: a_new.map(|x| x + state.a_other as i64),
        p_used: p_new,
        unchanged: action.dp == Shift::Zero && action.da == Shift::Zero,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(p_id: i32, a_id: usize, a_other: usize, f_lock: bool) -> AppState {
        AppState {
            app: 0,
            f_pid: vec![],
            p_id,
            a_id,
            f_lock,
            s_cont: [0.0; 3],
            s_fair: 1.0,
            p_low: 0,
            p_high: 0,
            a_other,
        }
    }

    #[test]
    fn indices_roundtrip() {
        for i in 0..NUM_ACTIONS {
            assert_eq!(SchedAction::from_index(i).index(), i);
        }
        assert_eq!(SchedAction::all().count(), 16);
    }

    #[test]
    fn lock_mask_keeps_only_core_resets() {
        let m = mask_actions(&st(0, 0, 0, true));
        let allowed: Vec<SchedAction> = SchedAction::all().filter(|a| m[a.index()]).collect();
        assert_eq!(allowed.len(), 4);
        assert!(allowed.iter().all(|a| a.da == Shift::NegInf));
        assert_eq!(mask_actions(&st(0, 0, 0, false)), [true; 16]);
    }

    #[test]
    fn shift_arithmetic() {
        let r = resolve(SchedAction::new(Shift::Up, Shift::Up), &st(40, 0, 1, false), Steps::default());
        assert_eq!((r.priority, r.cores), (PolicyValue::Set(50), PolicyValue::Set(2)));
        assert_eq!((r.p_used, r.a_used), (Some(50), Some(3)));
        assert!(!r.unchanged);

        let r = resolve(SchedAction::new(Shift::NegInf, Shift::NegInf), &st(40, 2, 0, false), Steps::default());
        assert_eq!((r.priority, r.cores), (PolicyValue::Revoke, PolicyValue::Revoke));
        assert_eq!((r.p_used, r.a_used), (None, None));

        let r = resolve(SchedAction::new(Shift::Zero, Shift::Zero), &st(0, 0, 0, false), Steps::default());
        assert!(r.unchanged);
        assert_eq!(r.priority, PolicyValue::Revoke);

        let r = resolve(SchedAction::new(Shift::Up, Shift::Zero), &st(0, 0, 0, false), Steps::default());
        assert_eq!(r.p_used, Some(10));
        let r = resolve(SchedAction::new(Shift::Down, Shift::Down), &st(0, 0, 0, false), Steps::default());
        assert_eq!((r.p_used, r.a_used), (Some(-10), Some(-2)));
    }
}
