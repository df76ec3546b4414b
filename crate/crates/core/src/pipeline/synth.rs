use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::ingest::{unescape_action, EventRecord};
use crate::{seed, Error, Result};

/// A planted action and the mean of the intervals around it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedAction {
    pub label: String,
    pub mean_interval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub actions: Vec<PlantedAction>,
    pub actions_per_user: usize,
    pub start_time: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two actions `L` and `S` with the given interval means.
    pub fn long_short(users: usize, actions_per_user: usize, long_mean: f64, short_mean: f64, seed: u64) -> Self {
        SyntheticSpec {
            users,
            actions: vec![
                PlantedAction {
                    label: "L".into(),
                    mean_interval: long_mean,
                },
                PlantedAction {
                    label: "S".into(),
                    mean_interval: short_mean,
                },
            ],
            actions_per_user,
            start_time: 1_600_000_000.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.actions.len() < 2 {
            return Err(Error::Config("a synthetic log needs at least two planted actions".into()));
        }
        if let Some(a) = self.actions.iter().find(|a| !(a.mean_interval > 0.0) || !a.mean_interval.is_finite()) {
            return Err(Error::Config(format!(
                "action {:?} needs a positive mean interval, got {}",
                a.label, a.mean_interval
            )));
        }
        if self.users == 0 || self.actions_per_user < 2 {
            return Err(Error::Config("need at least one user with two actions".into()));
        }
        if !self.start_time.is_finite() || self.start_time < 0.0 {
            return Err(Error::Config(format!("bad start time {}", self.start_time)));
        }
        Ok(())
    }
}

/// Each user draws actions uniformly at random; the interval between two
/// consecutive actions is exponential with the larger of their two planted
/// means. An action with a long mean is therefore surrounded by long
/// intervals on both sides.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<EventRecord>> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.users * spec.actions_per_user);
    let width = spec.users.to_string().len();
    for u in 0..spec.users {
        let user = format!("u{u:0width$}");
        let mut rng = seed::rng_from(seed::derive_indexed(spec.seed, "synth-user", u as u64));
        let mut t = spec.start_time;
        let mut prev: Option<usize> = None;
        for _ in 0..spec.actions_per_user {
            let a = rng.random_range(0..spec.actions.len());
            if let Some(p) = prev {
                let mean = spec.actions[p].mean_interval.max(spec.actions[a].mean_interval);
                let exp = Exp::new(1.0 / mean).expect("positive rate");
                t += exp.sample(&mut rng);
            }
            records.push(EventRecord::new(user.clone(), &spec.actions[a].label, t));
            prev = Some(a);
        }
    }
    Ok(records)
}

/// Event-log CSV (`user_id,action,timestamp`) for the spec.
pub fn write_synthetic_csv<W: Write>(spec: &SyntheticSpec, out: W) -> Result<usize> {
    let records = generate_synthetic(spec)?;
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("synthetic CSV", e.to_string());
    w.write_record(["user_id", "action", "timestamp"]).map_err(err)?;
    for r in &records {
        w.write_record([&r.user_id, &unescape_action(&r.action), &r.timestamp.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("writing synthetic CSV", e))?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_user_streams, compute_intervals, parse_event_log, LogFormat};

    #[test]
    fn counts_and_determinism() {
        let spec = SyntheticSpec::long_short(20, 50, 1000.0, 1.0, 3);
        let mut a = Vec::new();
        let rows = write_synthetic_csv(&spec, &mut a).unwrap();
        assert_eq!(rows, 1000);
        let mut b = Vec::new();
        write_synthetic_csv(&spec, &mut b).unwrap();
        assert_eq!(a, b);
        let parsed = parse_event_log(a.as_slice(), LogFormat::Csv).unwrap();
        assert_eq!(parsed, generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn long_action_sits_between_long_intervals() {
        let spec = SyntheticSpec::long_short(50, 200, 1000.0, 1.0, 11);
        let streams = build_user_streams(&generate_synthetic(&spec).unwrap(), 2).unwrap();
        let (mut around_l, mut s_s) = (Vec::new(), Vec::new());
        for s in &streams {
            let iv = compute_intervals(s);
            for (i, w) in s.events.windows(2).enumerate() {
                match (w[0].action.as_str(), w[1].action.as_str()) {
                    ("S", "S") => s_s.push(iv.values()[i]),
                    _ => around_l.push(iv.values()[i]),
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&around_l) / 1000.0 - 1.0).abs() < 0.1);
        assert!((mean(&s_s) - 1.0).abs() < 0.1);
    }

    #[test]
    fn needs_two_actions() {
        let mut spec = SyntheticSpec::long_short(2, 10, 10.0, 1.0, 0);
        spec.actions.truncate(1);
        assert!(generate_synthetic(&spec).is_err());
        let mut zero = SyntheticSpec::long_short(2, 10, 10.0, 1.0, 0);
        zero.actions[1].mean_interval = 0.0;
        assert!(generate_synthetic(&zero).is_err());
    }
}
