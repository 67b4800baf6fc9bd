//! Mixing schedules α(r,t) for boundary-by-construction kernels.
//!
//! Both kinds satisfy α(r,r) = 0 *exactly in floating point* — that, not an
//! approximation, is what makes K_{r,r} = I an architectural fact — and both
//! vanish linearly, so the kernel's time derivative at t = r is finite and
//! proportional to ∂_t α|_{t=r}.

use crate::ctmc::Generator;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaSchedule {
    /// α = 1 − e^{−c(t−r)}; ∂_t α|_{t=r} = c.
    Exponential { c: f64 },
    /// α = (t−r)/(1−r+reg); reaches ≈1 at t = 1 for any r.
    RatioToEnd { reg: f64 },
}

impl AlphaSchedule {
    /// Exponential schedule with rate c = 2·max|entry| of the reference
    /// generator — computed, never hand-set.
    pub fn exponential_for(q: &Generator) -> Self {
        AlphaSchedule::Exponential { c: 2.0 * q.max_abs_entry() }
    }

    pub fn ratio_to_end() -> Self {
        AlphaSchedule::RatioToEnd { reg: 1e-6 }
    }

    pub fn alpha(&self, r: f64, t: f64) -> f64 {
        debug_assert!(
            0.0 <= r && r <= t && t <= 1.0,
            "alpha: need 0 ≤ r ≤ t ≤ 1, got ({r}, {t})"
        );
        match *self {
            AlphaSchedule::Exponential { c } => 1.0 - (-c * (t - r)).exp(),
            AlphaSchedule::RatioToEnd { reg } => (t - r) / (1.0 - r + reg),
        }
    }

    pub fn dalpha_dt(&self, r: f64, t: f64) -> f64 {
        debug_assert!(
            0.0 <= r && r <= t && t <= 1.0,
            "dalpha_dt: need 0 ≤ r ≤ t ≤ 1, got ({r}, {t})"
        );
        match *self {
            AlphaSchedule::Exponential { c } => c * (-c * (t - r)).exp(),
            AlphaSchedule::RatioToEnd { reg } => 1.0 / (1.0 - r + reg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{build_birth_death, build_ring, build_two_state};
    use proptest::prelude::*;

    #[test]
    fn alpha_is_exactly_zero_at_equal_times() {
        let schedules =
            [AlphaSchedule::Exponential { c: 6.0 }, AlphaSchedule::ratio_to_end()];
        for sched in schedules {
            for r in [0.0, 0.3, 0.999, 1.0] {
                assert_eq!(sched.alpha(r, r), 0.0, "FAIL: α(r,r) must be 0.0 exactly");
            }
        }
    }

    #[test]
    fn exponential_closed_form_on_unit_interval() {
        let sched = AlphaSchedule::Exponential { c: 6.0 };
        let a = sched.alpha(0.0, 1.0);
        assert!((a - 0.997521).abs() < 1e-6, "FAIL: 1 − e^{{−6}} ≈ 0.997521, got {a}");
        assert!((a - (1.0 - (-6.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn exponential_derivative_at_left_boundary_equals_c() {
        for c in [0.5, 4.0, 6.0] {
            let sched = AlphaSchedule::Exponential { c };
            for r in [0.0, 0.4, 0.9] {
                assert_eq!(sched.dalpha_dt(r, r), c);
            }
        }
    }

    #[test]
    fn ratio_to_end_values() {
        let sched = AlphaSchedule::ratio_to_end();
        let a = sched.alpha(0.0, 1.0);
        assert!((a - 1.0 / (1.0 + 1e-6)).abs() < 1e-15, "FAIL: α(0,1) must be 1/(1+1e−6)");
        assert!((sched.dalpha_dt(0.3, 0.8) - 1.0 / 0.700001).abs() < 1e-12);
        // linear in t: derivative independent of t
        assert_eq!(sched.dalpha_dt(0.3, 0.31), sched.dalpha_dt(0.3, 0.99));
    }

    #[test]
    fn rate_is_twice_max_generator_entry() {
        let two = build_two_state(2.0).unwrap();
        let ring = build_ring(3, 2.0, 1.0).unwrap();
        let bd = build_birth_death(10, 1.5, 1.0).unwrap();
        assert_eq!(AlphaSchedule::exponential_for(&two), AlphaSchedule::Exponential { c: 4.0 });
        assert_eq!(AlphaSchedule::exponential_for(&ring), AlphaSchedule::Exponential { c: 6.0 });
        assert_eq!(AlphaSchedule::exponential_for(&bd), AlphaSchedule::Exponential { c: 5.0 });
    }

    #[test]
    fn serde_round_trip_uses_kebab_tags() {
        let sched = AlphaSchedule::Exponential { c: 4.0 };
        let text = serde_json::to_string(&sched).unwrap();
        assert!(text.contains("exponential"), "FAIL: tag should be kebab-case, got {text}");
        let back: AlphaSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(sched, back);
        let back: AlphaSchedule =
            serde_json::from_str(r#"{"kind":"ratio-to-end","reg":1e-6}"#).unwrap();
        assert_eq!(back, AlphaSchedule::ratio_to_end());
    }

    proptest! {
        #[test]
        fn alpha_stays_in_unit_interval_and_grows(
            r in 0.0f64..1.0,
            u1 in 0.0f64..1.0,
            u2 in 0.0f64..1.0,
            c in 0.1f64..10.0,
        ) {
            let (t1, t2) = {
                let a = r + u1 * (1.0 - r);
                let b = r + u2 * (1.0 - r);
                (a.min(b), a.max(b))
            };
            for sched in [AlphaSchedule::Exponential { c }, AlphaSchedule::ratio_to_end()] {
                let (a1, a2) = (sched.alpha(r, t1), sched.alpha(r, t2));
                prop_assert!((0.0..=1.0).contains(&a1));
                prop_assert!((0.0..=1.0).contains(&a2));
                prop_assert!(a1 <= a2, "α must be nondecreasing in t");
                prop_assert!(sched.dalpha_dt(r, t1) > 0.0);
            }
        }
    }
}
