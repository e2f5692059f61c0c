//! Counterfactual baselines.
//!
//! The CAISO rule averages the same hour over the 10 most recent prior
//! business days, or the 4 most recent prior weekend/holiday days when the
//! event falls on one. Days whose reading at that hour is missing or
//! DR-flagged are skipped and the lookback continues further back, up to
//! [`LOOKBACK_DAYS`].

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_holidays, MeterSeries};
use crate::model::ConsumptionParams;

pub const LOOKBACK_DAYS: i64 = 90;
pub const BUSINESS_DAYS: usize = 10;
pub const WEEKEND_DAYS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Caiso10in10,
    Caiso4in4Weekend,
    SyntheticK,
}

impl BaselineMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineMethod::Caiso10in10 => "caiso_10in10",
            BaselineMethod::Caiso4in4Weekend => "caiso_4in4_weekend",
            BaselineMethod::SyntheticK => "synthetic_k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub value: f64,
    /// Hour of day for meter-based estimates; `None` for synthetic ones.
    pub hour: Option<u8>,
    pub days_used: usize,
    pub method: BaselineMethod,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Calendar {
    pub holidays: BTreeSet<NaiveDate>,
    pub weekend_days: HashSet<Weekday>,
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar {
            holidays: BTreeSet::new(),
            weekend_days: [Weekday::Sat, Weekday::Sun].into_iter().collect(),
        }
    }
}

impl Calendar {
    pub fn new(holidays: BTreeSet<NaiveDate>, weekend_days: HashSet<Weekday>) -> Result<Self> {
        if weekend_days.is_empty() {
            return Err(Error::Domain("weekend day set must not be empty".into()));
        }
        Ok(Calendar { holidays, weekend_days })
    }

    pub fn with_holidays(holidays: BTreeSet<NaiveDate>) -> Self {
        Calendar { holidays, ..Default::default() }
    }

    pub fn from_holiday_file(path: &Path) -> Result<Self> {
        Ok(Calendar::with_holidays(read_holidays(path)?))
    }

    pub fn is_business_day(&self, date: NaiveDate) -> bool {
        !self.weekend_days.contains(&date.weekday()) && !self.holidays.contains(&date)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryMode {
    /// Fail unless the full day count is found.
    #[default]
    Strict,
    /// Use whatever qualifying days exist, as long as there is at least one.
    Relaxed,
}

pub fn caiso_baseline(
    series: &MeterSeries,
    event_date: NaiveDate,
    hour: u8,
    cal: &Calendar,
    mode: HistoryMode,
) -> Result<BaselineEstimate> {
    if hour > 23 {
        return Err(Error::Domain(format!("hour must be in 0..=23, got {hour}")));
    }
    let business = cal.is_business_day(event_date);
    let (required, method) = if business {
        (BUSINESS_DAYS, BaselineMethod::Caiso10in10)
    } else {
        (WEEKEND_DAYS, BaselineMethod::Caiso4in4Weekend)
    };

    let mut values = Vec::with_capacity(required);
    for back in 1..=LOOKBACK_DAYS {
        let date = event_date - Duration::days(back);
        if cal.is_business_day(date) != business {
            continue;
        }
        match series.get(date, hour) {
            Some(r) if !r.dr_event => values.push(r.kwh),
            _ => continue,
        }
        if values.len() == required {
            break;
        }
    }

    let found = values.len();
    if found < required && (mode == HistoryMode::Strict || found == 0) {
        return Err(Error::InsufficientHistory {
            date: event_date,
            hour,
            found,
            required,
        });
    }
    Ok(BaselineEstimate {
        value: values.iter().sum::<f64>() / found as f64,
        hour: Some(hour),
        days_used: found,
        method,
    })
}

/// Mean of `k` independent draws from the user's base-consumption distribution.
pub fn synthetic_baseline<R: Rng + ?Sized>(
    params: &ConsumptionParams,
    k: usize,
    rng: &mut R,
) -> Result<BaselineEstimate> {
    if k == 0 {
        return Err(Error::Domain("synthetic baseline needs k >= 1".into()));
    }
    params.validate()?;
    let sum: f64 = (0..k).map(|_| params.sample(rng)).sum();
    Ok(BaselineEstimate {
        value: sum / k as f64,
        hour: None,
        days_used: k,
        method: BaselineMethod::SyntheticK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineErrorStats {
    /// Sample mean of the virtual reduction `baseline - base`.
    pub mean_error: f64,
    /// Sample variance of the virtual reduction.
    pub var_error: f64,
    /// Sample variance of the baseline alone.
    pub var_baseline: f64,
    pub reps: usize,
}

pub const MIN_ERROR_REPS: usize = 100;

/// Virtual-reduction statistics of a k-day synthetic baseline against an
/// independent base-consumption draw.
pub fn baseline_error_stats<R: Rng + ?Sized>(
    params: &ConsumptionParams,
    k: usize,
    reps: usize,
    rng: &mut R,
) -> Result<BaselineErrorStats> {
    if reps < MIN_ERROR_REPS {
        return Err(Error::Domain(format!("need at least {MIN_ERROR_REPS} replications, got {reps}")));
    }
    let mut errors = Vec::with_capacity(reps);
    let mut baselines = Vec::with_capacity(reps);
    for _ in 0..reps {
        let b = synthetic_baseline(params, k, rng)?.value;
        let base = params.sample(rng);
        baselines.push(b);
        errors.push(b - base);
    }
    let (mean_error, var_error) = mean_var(&errors);
    let (_, var_baseline) = mean_var(&baselines);
    Ok(BaselineErrorStats { mean_error, var_error, var_baseline, reps })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// One row of the baseline export.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRecord {
    pub user_id: String,
    pub date: NaiveDate,
    pub estimate: BaselineEstimate,
}

/// CSV with header `user_id,date,hour,method,days_used,value_kwh`.
pub fn write_baselines_csv<W: Write>(rows: &[BaselineRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "date", "hour", "method", "days_used", "value_kwh"])?;
    for r in rows {
        let hour = r.estimate.hour.map_or_else(String::new, |h| h.to_string());
        w.write_record([
            r.user_id.clone(),
            r.date.format("%Y-%m-%d").to_string(),
            hour,
            r.estimate.method.as_str().to_string(),
            r.estimate.days_used.to_string(),
            r.estimate.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<baseline output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{HourStamp, Reading};
    use crate::rng::seeded;

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    /// Hour-17 readings on each listed date.
    fn series(points: &[(NaiveDate, f64, bool)]) -> MeterSeries {
        let readings = points
            .iter()
            .map(|&(d, kwh, dr_event)| Reading {
                stamp: HourStamp::new(d, 17).unwrap(),
                kwh,
                dr_event,
            })
            .collect();
        MeterSeries::new("u", readings).unwrap()
    }

    /// The `n` weekdays before `event`, most recent first.
    fn prior_weekdays(event: NaiveDate, n: usize, cal: &Calendar) -> Vec<NaiveDate> {
        (1..)
            .map(|k| event - Duration::days(k))
            .filter(|d| cal.is_business_day(*d))
            .take(n)
            .collect()
    }

    #[test]
    fn weekday_mean_of_ten() {
        let cal = Calendar::default();
        let event = day("2016-08-17"); // Wednesday
        let days = prior_weekdays(event, 10, &cal);
        let pts: Vec<_> = days.iter().enumerate().map(|(k, &d)| (d, (k + 1) as f64, false)).collect();
        let b = caiso_baseline(&series(&pts), event, 17, &cal, HistoryMode::Strict).unwrap();
        assert_eq!(b.value, 5.5);
        assert_eq!(b.days_used, 10);
        assert_eq!(b.method, BaselineMethod::Caiso10in10);
    }

    #[test]
    fn flagged_day_is_skipped() {
        let cal = Calendar::default();
        let event = day("2016-08-17");
        let days = prior_weekdays(event, 11, &cal);
        // Day k back reads k kWh; the most recent one is a DR day.
        let pts: Vec<_> = days
            .iter()
            .enumerate()
            .map(|(k, &d)| (d, (k + 1) as f64, k == 0))
            .collect();
        let b = caiso_baseline(&series(&pts), event, 17, &cal, HistoryMode::Strict).unwrap();
        assert_eq!(b.value, 6.5);
        assert_eq!(b.days_used, 10);
    }

    #[test]
    fn weekend_mean_of_four() {
        let cal = Calendar::default();
        let event = day("2016-08-20"); // Saturday
        let pts = [
            (day("2016-08-14"), 2.0, false),
            (day("2016-08-13"), 2.0, false),
            (day("2016-08-07"), 4.0, false),
            (day("2016-08-06"), 4.0, false),
            (day("2016-07-31"), 100.0, false),
            (day("2016-08-19"), 50.0, false),
        ];
        let b = caiso_baseline(&series(&pts), event, 17, &cal, HistoryMode::Strict).unwrap();
        assert_eq!(b.value, 3.0);
        assert_eq!(b.days_used, 4);
        assert_eq!(b.method, BaselineMethod::Caiso4in4Weekend);
    }

    #[test]
    fn holidays_count_as_weekend() {
        let cal = Calendar::with_holidays([day("2016-07-04")].into_iter().collect());
        assert!(!cal.is_business_day(day("2016-07-04")));
        assert!(cal.is_business_day(day("2016-07-05")));
        assert!(!cal.is_business_day(day("2016-07-09")));
        assert!(Calendar::new(BTreeSet::new(), HashSet::new()).is_err());
    }

    #[test]
    fn strict_and_relaxed_history() {
        let cal = Calendar::default();
        let event = day("2016-08-17");
        let days = prior_weekdays(event, 9, &cal);
        let pts: Vec<_> = days.iter().map(|&d| (d, 2.0, false)).collect();
        let s = series(&pts);
        let err = caiso_baseline(&s, event, 17, &cal, HistoryMode::Strict).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { found: 9, required: 10, .. }));
        let b = caiso_baseline(&s, event, 17, &cal, HistoryMode::Relaxed).unwrap();
        assert_eq!((b.value, b.days_used), (2.0, 9));
        let empty = series(&[]);
        assert!(caiso_baseline(&empty, event, 17, &cal, HistoryMode::Relaxed).is_err());
    }

    #[test]
    fn never_looks_at_event_day_or_future() {
        let cal = Calendar::default();
        let event = day("2016-08-17");
        let mut pts: Vec<_> = prior_weekdays(event, 10, &cal).into_iter().map(|d| (d, 1.0, false)).collect();
        pts.push((event, 99.0, false));
        pts.push((event + Duration::days(1), 99.0, false));
        let b = caiso_baseline(&series(&pts), event, 17, &cal, HistoryMode::Strict).unwrap();
        assert_eq!(b.value, 1.0);
    }

    #[test]
    fn synthetic_examples() {
        let params = ConsumptionParams::new(1.0, 1.0, 0.0).unwrap();
        assert!(synthetic_baseline(&params, 0, &mut seeded(1)).is_err());

        let mut a = seeded(5);
        let mut b = seeded(5);
        let single = synthetic_baseline(&params, 1, &mut a).unwrap();
        assert_eq!(single.value, params.sample(&mut b));
        assert_eq!(single.days_used, 1);

        let big = synthetic_baseline(&params, 10_000, &mut seeded(2)).unwrap();
        assert!((big.value / params.mean() - 1.0).abs() < 0.05, "{}", big.value);

        let reps = 100_000;
        let mut rng = seeded(3);
        let vals: Vec<f64> =
            (0..reps).map(|_| synthetic_baseline(&params, 10, &mut rng).unwrap().value).collect();
        let (mean, var) = mean_var(&vals);
        let se = (var / reps as f64).sqrt();
        assert!((mean - params.mean()).abs() < 3.0 * se);
    }

    #[test]
    fn error_stats_variance_decomposition() {
        let params = ConsumptionParams::new(0.5, 1.0, 0.2).unwrap();
        let var = params.variance();
        let s = baseline_error_stats(&params, 1, 100_000, &mut seeded(4)).unwrap();
        assert!((s.var_error / (2.0 * var) - 1.0).abs() < 0.10, "{s:?}");
        let se = (s.var_error / s.reps as f64).sqrt();
        assert!(s.mean_error.abs() < 3.0 * se);

        let s = baseline_error_stats(&params, 100_000, 200, &mut seeded(5)).unwrap();
        assert!(s.var_baseline < 0.01 * var);
        assert!(baseline_error_stats(&params, 1, 99, &mut seeded(5)).is_err());
    }

    #[test]
    fn baseline_csv_layout() {
        let rows = vec![BaselineRecord {
            user_id: "u1".into(),
            date: day("2016-08-17"),
            estimate: BaselineEstimate {
                value: 5.5,
                hour: Some(17),
                days_used: 10,
                method: BaselineMethod::Caiso10in10,
            },
        }];
        let mut buf = Vec::new();
        write_baselines_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "user_id,date,hour,method,days_used,value_kwh\nu1,2016-08-17,17,caiso_10in10,10,5.5\n"
        );
    }
}
