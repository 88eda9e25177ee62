use super::*;
use crate::domain::{aksp_mini, build_domain, synthetic};

/// Exact value of a sum of doubles, compared against `8 * daily` without
/// any rounding: both sides scaled to a common binary exponent.
fn exact_sum_equals(values: &[f64], target: f64) -> bool {
    fn parts(x: f64) -> (i128, i32) {
        if x == 0.0 {
            return (0, 0);
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i32;
        let mant = (bits & ((1u64 << 52) - 1)) as i128;
        let (m, e) = if exp == 0 { (mant, -1074) } else { (mant | (1 << 52), exp - 1075) };
        (if x < 0.0 { -m } else { m }, e)
    }
    let all: Vec<(i128, i32)> = values.iter().chain([&target]).map(|&x| parts(x)).collect();
    let lo = all.iter().filter(|p| p.0 != 0).map(|p| p.1).min().unwrap_or(0);
    let scaled = |(m, e): (i128, i32)| m << (e - lo);
    let sum: i128 = all[..values.len()].iter().map(|&p| scaled(p)).sum();
    sum == scaled(all[values.len()])
}

#[test]
fn additive_example() {
    let shape = [1., 2., 3., 4., 5., 6., 7., 8.];
    let out = downscale_day(280.0, &shape, DownscaleMode::Additive).unwrap();
    assert_eq!(out, [276.5, 277.5, 278.5, 279.5, 280.5, 281.5, 282.5, 283.5]);
}

#[test]
fn multiplicative_flat() {
    let out = downscale_day(100.0, &[0.3; 8], DownscaleMode::Multiplicative).unwrap();
    assert_eq!(out, [100.0; 8]);
    assert_eq!(downscale_day(5.0, &[0.0; 8], DownscaleMode::Multiplicative).unwrap(), [5.0; 8]);
}

#[test]
fn sum_preserving_example() {
    let out = downscale_day(8.0, &[0., 0., 0., 0., 1., 1., 1., 1.], DownscaleMode::SumPreserving).unwrap();
    assert_eq!(out, [0., 0., 0., 0., 2., 2., 2., 2.]);
    assert_eq!(downscale_day(8.0, &[0.0; 8], DownscaleMode::SumPreserving).unwrap(), [1.0; 8]);
}

#[test]
fn nan_and_negative_shape_rejected() {
    assert!(downscale_day(f64::NAN, &[1.0; 8], DownscaleMode::Additive).is_err());
    let mut s = [1.0; 8];
    s[3] = f64::NAN;
    assert!(downscale_day(1.0, &s, DownscaleMode::Multiplicative).is_err());
    s[3] = -1.0;
    assert!(downscale_day(1.0, &s, DownscaleMode::SumPreserving).is_err());
}

#[test]
fn additive_exact_on_random_f32_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20_000 {
        let daily = rng.gen_range(-400.0..120_000.0f64) as f32 as f64;
        let shape: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-60.0..60.0));
        let out = downscale_day(daily, &shape, DownscaleMode::Additive).unwrap();
        assert!(exact_sum_equals(&out, 8.0 * daily), "daily {daily} shape {shape:?}");
        let mean = shape.iter().sum::<f64>() / 8.0;
        for i in 0..8 {
            let want = daily + (shape[i] - mean);
            assert!((out[i] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}

#[test]
fn ratio_modes_within_four_ulp() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20_000 {
        let daily = rng.gen_range(0.0..500.0f64);
        let shape: [f64; 8] = std::array::from_fn(|_| rng.gen_range(0.0..3.0));
        let m = downscale_day(daily, &shape, DownscaleMode::Multiplicative).unwrap();
        let mean = m.iter().sum::<f64>() / 8.0;
        assert!((mean - daily).abs() <= 4.0 * f64::EPSILON * daily, "{mean} {daily}");
        let s = downscale_day(daily, &shape, DownscaleMode::SumPreserving).unwrap();
        let sum: f64 = s.iter().sum();
        assert!((sum - daily).abs() <= 4.0 * f64::EPSILON * daily, "{sum} {daily}");
        assert!(m.iter().chain(&s).all(|&v| v >= 0.0));
    }
}

#[test]
fn month_lengths() {
    let d = aksp_mini().unwrap();
    let jan = Period::new(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), 2).unwrap();
    let months = synth_forcing(1, &d, &jan).unwrap();
    assert_eq!(months.len(), 1);
    let fm = downscale_month(&months[0], &d).unwrap();
    assert_eq!(fm.n_steps(), 248);
    assert_eq!(fm.values[0].len(), 248 * 613);
    assert_eq!(days_in_month(2001, 2) * 8, 224);
    assert_eq!(days_in_month(2004, 2) * 8, 232);
    assert_eq!(days_in_month(2001, 4) * 8, 240);
}

#[test]
fn period_months_include_closing_record() {
    let p = Period::new(NaiveDate::from_ymd_opt(2001, 1, 27).unwrap(), 5).unwrap();
    assert_eq!(p.months(), vec![(2001, 1), (2001, 2)]);
    let p = Period::new(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), 5).unwrap();
    assert_eq!(p.months(), vec![(2001, 1)]);
    let p = Period::new(NaiveDate::from_ymd_opt(2001, 12, 31).unwrap(), 1).unwrap();
    assert_eq!(p.months(), vec![(2001, 12), (2002, 1)]);
}

#[test]
fn month_daily_means_recovered() {
    let d = aksp_mini().unwrap();
    let p = Period::new(NaiveDate::from_ymd_opt(2003, 2, 1).unwrap(), 28).unwrap();
    let daily = &synth_forcing(4, &d, &p).unwrap()[0];
    let fm = downscale_month(daily, &d).unwrap();
    for day in 0..28 {
        let input = d.compact(&daily.values[ForcingVar::Tbot.index()][day]).unwrap();
        for k in 0..d.n_land() {
            let steps: Vec<f64> = (0..8).map(|s| fm.get(ForcingVar::Tbot, day * 8 + s, k)).collect();
            let mean = steps.iter().sum::<f64>() / 8.0;
            assert!((mean - input[k]).abs() <= 1e-12 * input[k].abs());
            assert!(exact_sum_equals(&steps, 8.0 * input[k]));
        }
    }
}

#[test]
fn missing_day_rejected() {
    let d = aksp_mini().unwrap();
    let p = Period::new(NaiveDate::from_ymd_opt(2003, 2, 1).unwrap(), 3).unwrap();
    let mut daily = synth_forcing(4, &d, &p).unwrap().remove(0);
    daily.values[2].pop();
    let err = downscale_month(&daily, &d).unwrap_err().to_string();
    assert!(err.contains("missing day 28"), "{err}");
}

#[test]
fn compaction_commutes_with_downscaling() {
    let d = aksp_mini().unwrap();
    let full = build_domain(d.grid().clone(), vec![1; d.n_cells()]).unwrap();
    let p = Period::new(NaiveDate::from_ymd_opt(2002, 6, 1).unwrap(), 1).unwrap();
    let mut daily = synth_forcing(8, &d, &p).unwrap().remove(0);
    for var in &mut daily.values {
        for day in var.iter_mut() {
            for v in day.iter_mut().filter(|v| v.is_nan()) {
                *v = 1.0;
            }
        }
    }
    let whole = downscale_month(&daily, &full).unwrap();
    let land = downscale_month(&daily, &d).unwrap();
    for var in ForcingVar::ALL {
        for step in 0..whole.n_steps() {
            let n = d.n_cells();
            let row = &whole.values[var.index()][step * n..(step + 1) * n];
            let compacted = d.compact(row).unwrap();
            let direct = &land.values[var.index()][step * d.n_land()..(step + 1) * d.n_land()];
            assert_eq!(compacted, direct);
        }
    }
}

#[test]
fn synth_profile_shapes() {
    for day in 1..=31 {
        let p = synth_profile(3, NaiveDate::from_ymd_opt(2001, 7, day).unwrap());
        let f = p.shapes[ForcingVar::Fsds.index()];
        assert!(f.iter().all(|&v| v >= 0.0));
        assert_eq!([f[0], f[1], f[2], f[7]], [0.0; 4]);
        let peak = (0..8).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
        assert!(peak == 4 || peak == 5, "{f:?}");
        assert!(p.shapes[ForcingVar::Prect.index()].iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn synth_ranges_over_seeds() {
    let d = synthetic(12, 12, 1000.0, 0.7, 1).unwrap();
    for seed in 0..10 {
        let mut src = SyntheticSource::new(seed, &d);
        let first = record_index(month_start(2001, 1));
        for rec in (first..first + 365 * 8).step_by(5) {
            let t = src.record(ForcingVar::Tbot, rec).unwrap();
            assert!(t.iter().all(|&v| (230.0..=310.0).contains(&v)), "seed {seed} rec {rec}");
            assert!(src.record(ForcingVar::Fsds, rec).unwrap().iter().all(|&v| v >= 0.0));
            assert!(src.record(ForcingVar::Prect, rec).unwrap().iter().all(|&v| v >= 0.0));
            assert!(src.record(ForcingVar::Qbot, rec).unwrap().iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn generated_files_are_deterministic_and_match_on_the_fly() {
    let d = aksp_mini().unwrap();
    let p = Period::new(NaiveDate::from_ymd_opt(2001, 1, 30).unwrap(), 3).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = generate_files(5, &d, &p, a.path()).unwrap();
    let pb = generate_files(5, &d, &p, b.path()).unwrap();
    assert_eq!(pa.len(), 6);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    assert!(a.path().join("forcing_TPQWL_2001-02.nc").exists());
    let mut files = FileSource::new(a.path(), &d);
    let mut synth = SyntheticSource::new(5, &d);
    let first = record_index(month_start(2001, 1)) + 29 * 8;
    for rec in first..first + 3 * 8 + 1 {
        for var in ForcingVar::ALL {
            let f = files.record(var, rec).unwrap();
            let s = synth.record(var, rec).unwrap();
            assert!(f.iter().zip(&s).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn file_source_reports_gaps_and_domain_mismatch() {
    let d = aksp_mini().unwrap();
    let p = Period::new(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    generate_files(5, &d, &p, dir.path()).unwrap();
    let mut src = ForcingStream::new(Box::new(FileSource::new(dir.path(), &d)));
    let t = NaiveDate::from_ymd_opt(2001, 3, 2).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let err = src.interpolate(t).unwrap_err().to_string();
    assert!(err.contains("coverage gap") && err.contains("2001-03"), "{err}");
    let other = synthetic(8, 8, 1000.0, 0.5, 2).unwrap();
    let mut wrong = FileSource::new(dir.path(), &other);
    let err = wrong.record(ForcingVar::Tbot, record_index(month_start(2001, 1))).unwrap_err();
    assert!(err.to_string().contains("domain mismatch"));
}

struct Ramp {
    ids: Vec<i64>,
}

impl ForcingSource for Ramp {
    fn land_ids(&self) -> &[i64] {
        &self.ids
    }

    fn record(&mut self, var: ForcingVar, rec: i64) -> Result<Vec<f32>> {
        let base = (rec % 1000) as f32;
        Ok(self.ids.iter().map(|&i| base * 4.0 + i as f32 + var.index() as f32).collect())
    }
}

fn piecewise_linear(points: &[(f64, f64)], t: f64) -> f64 {
    let k = points.iter().rposition(|p| p.0 <= t).unwrap();
    if points[k].0 == t {
        return points[k].1;
    }
    let (t0, v0) = points[k];
    let (t1, v1) = points[k + 1];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

#[test]
fn interpolation_matches_independent_evaluator() {
    let mut s = ForcingStream::new(Box::new(Ramp { ids: vec![0, 10] }));
    let day = NaiveDate::from_ymd_opt(2001, 5, 3).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let rec0 = record_index(day);
    let pts: Vec<(f64, f64)> = (0..10)
        .map(|j| ((j * 3) as f64, (((rec0 + j) % 1000) as f32 * 4.0 + 10.0) as f64))
        .collect();
    for h in 0..24 {
        let t = day + Duration::hours(h);
        let f = s.interpolate(t).unwrap();
        let want = piecewise_linear(&pts, h as f64);
        assert!((f.get(ForcingVar::Tbot)[1] - want).abs() < 1e-9, "hour {h}");
        let k = (h / 3) as usize;
        assert_eq!(f.get(ForcingVar::Prect)[1], pts[k].1 + 1.0, "nearest at hour {h}");
    }
    let on = s.interpolate(day + Duration::hours(6)).unwrap();
    assert_eq!(on.get(ForcingVar::Tbot)[0], (((rec0 + 2) % 1000) as f32 * 4.0) as f64);
}

#[test]
fn midpoint_of_two_records() {
    struct Two;
    impl ForcingSource for Two {
        fn land_ids(&self) -> &[i64] {
            &[0]
        }
        fn record(&mut self, _: ForcingVar, rec: i64) -> Result<Vec<f32>> {
            Ok(vec![if rec % 2 == 0 { 270.0 } else { 274.0 }])
        }
    }
    let mut s = ForcingStream::new(Box::new(Two));
    let t = record_time(1000) + Duration::minutes(90);
    assert_eq!(s.interpolate(t).unwrap().get(ForcingVar::Tbot)[0], 272.0);
}

#[test]
fn replicated_cells_get_identical_forcing() {
    let d = aksp_mini().unwrap();
    let r = crate::domain::replicate(&d, 3).unwrap();
    let mut a = SyntheticSource::new(2, &d);
    let mut b = SyntheticSource::new(2, &r);
    let rec = record_index(month_start(2001, 8)) + 13;
    let base = a.record(ForcingVar::Fsds, rec).unwrap();
    let rep = b.record(ForcingVar::Fsds, rec).unwrap();
    for j in 0..3 {
        assert_eq!(&rep[j * 613..(j + 1) * 613], &base[..]);
    }
}
