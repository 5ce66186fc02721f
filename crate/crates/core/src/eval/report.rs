use std::fmt::Write as _;

/// Threshold → ratio samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioCurve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Named scalar metrics (units are part of the key, e.g. `ate_rmse_m`) plus
/// threshold curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<(String, f64)>,
    pub curves: Vec<RatioCurve>,
}

impl MetricReport {
    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        let key = key.into();
        match self.metrics.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.metrics.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn add_curve(&mut self, name: impl Into<String>, points: Vec<(f64, f64)>) {
        self.curves.push(RatioCurve { name: name.into(), points });
    }

    pub fn merge(&mut self, other: MetricReport) {
        for (k, v) in other.metrics {
            self.insert(k, v);
        }
        self.curves.extend(other.curves);
    }

    /// One `key=value` line per metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse_text(text: &str) -> Option<Self> {
        let mut r = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=')?;
            r.insert(k.trim(), v.trim().parse().ok()?);
        }
        Some(r)
    }

    /// `curve,threshold,ratio` rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("curve,threshold,ratio\n");
        for c in &self.curves {
            for (t, r) in &c.points {
                let _ = writeln!(out, "{},{t},{r}", c.name);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut r = MetricReport::default();
        r.insert("ate_rmse_m", 0.125);
        r.insert("completeness_0.1m", 0.9);
        r.insert("ate_rmse_m", 0.25);
        assert_eq!(r.metrics.len(), 2);
        let back = MetricReport::parse_text(&r.to_text()).unwrap();
        assert_eq!(back.get("ate_rmse_m"), Some(0.25));
        r.add_curve("accuracy", vec![(0.05, 0.5), (0.1, 0.75)]);
        assert_eq!(r.curves_csv(), "curve,threshold,ratio\naccuracy,0.05,0.5\naccuracy,0.1,0.75\n");
    }
}
