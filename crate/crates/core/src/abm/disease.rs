//! Seven-state disease model: S, E, Ia, Is, Ic, R, D.
//!
//! Exposure (S -> E) happens on contact; everything after that is per-agent
//! progression. The default parameters are modelling assumptions, not
//! measured values, and every one of them can be overridden from the
//! experiment config.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiseaseState {
    S,
    E,
    Ia,
    Is,
    Ic,
    R,
    D,
}

impl DiseaseState {
    pub const ALL: [DiseaseState; 7] = [Self::S, Self::E, Self::Ia, Self::Is, Self::Ic, Self::R, Self::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::S => "S",
            Self::E => "E",
            Self::Ia => "Ia",
            Self::Is => "Is",
            Self::Ic => "Ic",
            Self::R => "R",
            Self::D => "D",
        }
    }

    /// Transmits on contact and tests positive.
    pub fn is_infectious(self) -> bool {
        matches!(self, Self::Ia | Self::Is | Self::Ic)
    }

    /// Still carries the disease (keeps the simulation running).
    pub fn is_infected(self) -> bool {
        matches!(self, Self::E | Self::Ia | Self::Is | Self::Ic)
    }

    pub fn is_absorbing(self) -> bool {
        matches!(self, Self::R | Self::D)
    }
}

impl std::str::FromStr for DiseaseState {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err(format!("unknown disease state {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentDisease {
    pub state: DiseaseState,
    pub days_in_state: u32,
}

impl AgentDisease {
    pub fn new(state: DiseaseState) -> Self {
        Self { state, days_in_state: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwellMode {
    /// Leave the state each day with probability `1 / mean`.
    #[default]
    Geometric,
    /// Leave after exactly `round(mean)` days.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiseaseParams {
    /// Per-contact probability that an infectious agent exposes a susceptible one.
    pub beta_contact: f64,
    pub p_i_given_e: f64,
    pub p_is_given_ia: f64,
    pub p_ic_given_is: f64,
    pub p_d_given_ic: f64,
    pub incubation_days: f64,
    pub lambda_ia: f64,
    pub lambda_is: f64,
    pub lambda_ic: f64,
    pub dwell: DwellMode,
}

impl Default for DiseaseParams {
    fn default() -> Self {
        Self {
            beta_contact: 0.05,
            p_i_given_e: 0.6,
            p_is_given_ia: 0.4,
            p_ic_given_is: 0.25,
            p_d_given_ic: 0.3,
            incubation_days: 5.0,
            lambda_ia: 7.0,
            lambda_is: 7.0,
            lambda_ic: 10.0,
            dwell: DwellMode::Geometric,
        }
    }
}

impl DiseaseParams {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("beta_contact", self.beta_contact),
            ("p_i_given_e", self.p_i_given_e),
            ("p_is_given_ia", self.p_is_given_ia),
            ("p_ic_given_is", self.p_ic_given_is),
            ("p_d_given_ic", self.p_d_given_ic),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(format!("{name} = {p} is not a probability")));
            }
        }
        let durations = [
            ("incubation_days", self.incubation_days),
            ("lambda_ia", self.lambda_ia),
            ("lambda_is", self.lambda_is),
            ("lambda_ic", self.lambda_ic),
        ];
        for (name, d) in durations {
            if !(d.is_finite() && d > 0.0) {
                return Err(config_err(format!("{name} = {d} must be a positive duration")));
            }
        }
        Ok(())
    }

    /// Mean dwell and (escalation state, probability, fallback state) for states
    /// that progress on their own.
    fn exit_rule(&self, state: DiseaseState) -> Option<(f64, DiseaseState, f64, DiseaseState)> {
        use DiseaseState::*;
        match state {
            E => Some((self.incubation_days, Ia, self.p_i_given_e, S)),
            Ia => Some((self.lambda_ia, Is, self.p_is_given_ia, R)),
            Is => Some((self.lambda_is, Ic, self.p_ic_given_is, R)),
            Ic => Some((self.lambda_ic, D, self.p_d_given_ic, R)),
            S | R | D => None,
        }
    }

    /// The state an agent moves to today given two uniforms in `[0, 1)`, or
    /// `None` if it stays put.
    pub fn next_state(&self, current: AgentDisease, u_exit: f64, u_branch: f64) -> Option<DiseaseState> {
        let (mean, escalate, p_escalate, fallback) = self.exit_rule(current.state)?;
        let exits = match self.dwell {
            DwellMode::Geometric => u_exit < (1.0 / mean).min(1.0),
            DwellMode::Fixed => current.days_in_state + 1 >= (mean.round() as u32).max(1),
        };
        if !exits {
            return None;
        }
        Some(if u_branch < p_escalate { escalate } else { fallback })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub agent: crate::AgentId,
    pub from: DiseaseState,
    pub to: DiseaseState,
}

/// Advance every agent by one day. Two uniforms are drawn per agent whatever
/// its state, so the stream stays aligned across runs that diverge.
pub fn progress_disease<R: Rng + ?Sized>(
    states: &mut [AgentDisease],
    params: &DiseaseParams,
    rng: &mut R,
) -> Vec<Transition> {
    progress_except(states, params, rng, |_| false)
}

/// As [`progress_disease`], but agents for which `frozen` holds keep their
/// state (their draws are still consumed).
pub(crate) fn progress_except<R: Rng + ?Sized>(
    states: &mut [AgentDisease],
    params: &DiseaseParams,
    rng: &mut R,
    frozen: impl Fn(usize) -> bool,
) -> Vec<Transition> {
    let mut out = Vec::new();
    for (i, s) in states.iter_mut().enumerate() {
        let u_exit: f64 = rng.random();
        let u_branch: f64 = rng.random();
        if frozen(i) {
            continue;
        }
        match params.next_state(*s, u_exit, u_branch) {
            Some(to) => {
                out.push(Transition { agent: i as crate::AgentId, from: s.state, to });
                *s = AgentDisease::new(to);
            }
            None => s.days_in_state += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use DiseaseState::*;

    #[test]
    fn no_escalation_means_recovery() {
        let p = DiseaseParams { p_is_given_ia: 0.0, lambda_ia: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut s = [AgentDisease::new(Ia)];
            let t = progress_disease(&mut s, &p, &mut rng);
            assert_eq!(t[0].to, R);
        }
    }

    #[test]
    fn certain_death_from_critical() {
        let p = DiseaseParams { p_d_given_ic: 1.0, lambda_ic: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut s = [AgentDisease::new(Ic)];
            assert_eq!(progress_disease(&mut s, &p, &mut rng)[0].to, D);
        }
    }

    #[test]
    fn escalation_share_matches_probability() {
        let p = DiseaseParams { p_is_given_ia: 0.5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut states = vec![AgentDisease::new(Ia); 100_000];
        let (mut exits, mut escalations) = (0usize, 0usize);
        // Run until every agent has left Ia.
        while states.iter().any(|s| s.state == Ia) {
            for t in progress_disease(&mut states, &p, &mut rng) {
                if t.from == Ia {
                    exits += 1;
                    escalations += usize::from(t.to == Is);
                }
            }
            for s in &mut states {
                if s.state != Ia {
                    *s = AgentDisease::new(R);
                }
            }
        }
        assert_eq!(exits, 100_000);
        assert!((escalations as f64 / exits as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn absorbing_and_susceptible_states_never_move() {
        let p = DiseaseParams::default();
        for st in [S, R, D] {
            for d in [0, 5, 100] {
                let a = AgentDisease { state: st, days_in_state: d };
                assert_eq!(p.next_state(a, 0.0, 0.0), None);
            }
        }
    }

    #[test]
    fn fixed_dwell_exits_on_schedule() {
        let p = DiseaseParams { dwell: DwellMode::Fixed, incubation_days: 3.0, p_i_given_e: 1.0, ..Default::default() };
        let mut s = [AgentDisease::new(E)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut day = 0;
        loop {
            day += 1;
            if !progress_disease(&mut s, &p, &mut rng).is_empty() {
                break;
            }
        }
        assert_eq!(day, 3);
        assert_eq!(s[0].state, Ia);
    }

    #[test]
    fn geometric_mean_dwell() {
        let p = DiseaseParams { p_i_given_e: 1.0, incubation_days: 4.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let mut total = 0u64;
        for _ in 0..n {
            let mut s = [AgentDisease::new(E)];
            let mut days = 0;
            while s[0].state == E {
                days += 1;
                progress_disease(&mut s, &p, &mut rng);
            }
            total += days;
        }
        let mean = total as f64 / n as f64;
        // sd of a geometric with p=1/4 is sqrt(12) ~ 3.46; 5 standard errors.
        assert!((mean - 4.0).abs() < 5.0 * 3.47 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn validation() {
        assert!(DiseaseParams::default().validate().is_ok());
        assert!(DiseaseParams { beta_contact: 1.5, ..Default::default() }.validate().is_err());
        assert!(DiseaseParams { lambda_ic: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!("ia".parse::<DiseaseState>().unwrap(), Ia);
        assert!("Q".parse::<DiseaseState>().is_err());
    }
}
