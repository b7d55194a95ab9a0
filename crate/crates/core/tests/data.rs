use std::fs;

use encdec_ad::data::{
    downsample, load_csv, load_intervals, make_windows, split, write_series_csv, CsvSchema, Delimiter,
    DownsampleMethod, Interval, Label, NormalizationStats, PreparedDataset, SplitRatios, TimeSeriesFrame,
};
use encdec_ad::numerics::{seeded_gaussian, Matrix};
use encdec_ad::Error;
use proptest::prelude::*;

#[test]
fn loads_three_by_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "a,b\n1,2\n3,4\n5,6\n").unwrap();
    let f = load_csv(&p, "x", &CsvSchema::default()).unwrap();
    assert_eq!((f.len(), f.dims()), (3, 2));
    assert_eq!(f.values.row(2), &[5.0, 6.0]);

    fs::write(&p, "# comment\n1 2 3\n\n4\t5 6\n").unwrap();
    let f = load_csv(&p, "x", &CsvSchema { delimiter: Delimiter::Whitespace, ..Default::default() }).unwrap();
    assert_eq!((f.len(), f.dims()), (2, 3));
    let sel = CsvSchema { channels: Some(vec![2, 0]), ..Default::default() };
    assert_eq!(load_csv(&p, "x", &sel).unwrap().values.row(1), &[6.0, 4.0]);
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "1,2\n3,4\n5\n").unwrap();
    match load_csv(&p, "x", &CsvSchema::default()) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("ragged"));
        }
        other => panic!("{other:?}"),
    }
    fs::write(&p, "1,2\n3,oops\n").unwrap();
    assert!(matches!(load_csv(&p, "x", &CsvSchema::default()), Err(Error::Parse { line: 2, .. })));
    fs::write(&p, "1,2\n3,NaN\n").unwrap();
    assert!(matches!(load_csv(&p, "x", &CsvSchema::default()), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(
        load_csv(dir.path().join("missing.csv"), "x", &CsvSchema::default()),
        Err(Error::Io { .. })
    ));
}

#[test]
fn write_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    let f = TimeSeriesFrame::new("x", Matrix::from_vec(50, 3, seeded_gaussian(4, 150, 2.0)).unwrap());
    write_series_csv(&f, &p).unwrap();
    let back = load_csv(&p, "x", &CsvSchema::default()).unwrap();
    assert_eq!(back.values, f.values);
}

#[test]
fn interval_file_with_parentheses() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("iv.csv");
    fs::write(&p, "(10,20)\n").unwrap();
    let iv = load_intervals(&p).unwrap();
    let mut f = TimeSeriesFrame::new("x", Matrix::zeros(30, 1));
    f.apply_intervals(&iv).unwrap();
    let anomalous: Vec<usize> = f.point_labels().iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i).collect();
    assert_eq!(anomalous, (10..20).collect::<Vec<_>>());
}

#[test]
fn prepared_dataset_round_trip() {
    use encdec_ad::config::Preset;
    use encdec_ad::pipeline::prepare;
    let cfg = Preset::Synthetic.config();
    let prepared = prepare(&cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    prepared.write(dir.path()).unwrap();
    let back = PreparedDataset::read(dir.path()).unwrap();
    assert_eq!(back.manifest, prepared.manifest);
    for ((_, a), (_, b)) in back.split.subsets().iter().zip(prepared.split.subsets().iter()) {
        assert_eq!(a, b);
    }
    // normalization fit on s_N gives zero mean, unit std there
    let pts: Vec<f64> = prepared.split.s_n.iter().flat_map(|w| w.values.as_slice().to_vec()).collect();
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<f64>() / n;
    let sd = (pts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
}

fn frame_with(t: usize, intervals: &[(usize, usize)]) -> TimeSeriesFrame {
    let mut f = TimeSeriesFrame::new("s", Matrix::from_vec(t, 1, (0..t).map(|i| i as f64).collect()).unwrap());
    let iv: Vec<Interval> = intervals
        .iter()
        .map(|&(start, end)| Interval { series_id: None, start, end })
        .collect();
    f.apply_intervals(&iv).unwrap();
    f
}

proptest! {
    #[test]
    fn window_label_iff_intersects(
        t in 20usize..200,
        l in 1usize..20,
        step in 1usize..20,
        raw in prop::collection::vec((0usize..1000, 1usize..10), 0..5),
    ) {
        prop_assume!(l <= t);
        let ivs: Vec<(usize, usize)> = raw.iter().map(|&(s, w)| (s % t, ((s % t) + w).min(t))).collect();
        let f = frame_with(t, &ivs);
        let ws = make_windows(&f, l, step).unwrap();
        prop_assert_eq!(ws.len(), (t - l) / step + 1);
        for w in &ws {
            let hits = ivs.iter().any(|&(s, e)| s < w.start + l && w.start < e);
            prop_assert_eq!(w.label == Label::Anomalous, hits);
            prop_assert_eq!(w.values.get(0, 0), w.start as f64);
        }
    }

    #[test]
    fn downsample_then_window_count(k in 1usize..6, l in 1usize..8, blocks in 1usize..10) {
        let t = k * l * blocks;
        let f = frame_with(t, &[]);
        let ds = downsample(&f, k, DownsampleMethod::Mean).unwrap();
        prop_assert_eq!(
            make_windows(&ds, l, l).unwrap().len(),
            make_windows(&f, k * l, k * l).unwrap().len()
        );
    }

    #[test]
    fn split_preserves_multiset(n in 0usize..60, a in 0usize..20, seed in any::<u64>()) {
        let mk = |count: usize, label: Label, offset: usize| -> Vec<encdec_ad::data::Window> {
            let f = frame_with(count.max(1), &[]);
            make_windows(&f, 1, 1).unwrap().into_iter().take(count).map(|mut w| {
                w.id += offset;
                w.label = label;
                w
            }).collect()
        };
        let sp = split(mk(n, Label::Normal, 0), mk(a, Label::Anomalous, 1000), &SplitRatios::default(), seed).unwrap();
        let mut ids: Vec<usize> = sp.subsets().iter().flat_map(|(_, s)| s.iter().map(|w| w.id)).collect();
        ids.sort_unstable();
        let mut expect: Vec<usize> = (0..n).chain(1000..1000 + a).collect();
        expect.sort_unstable();
        prop_assert_eq!(ids, expect);
        for set in [&sp.s_n, &sp.v_n1, &sp.v_n2, &sp.t_n] {
            prop_assert!(set.iter().all(|w| w.label == Label::Normal));
        }
        for set in [&sp.v_a, &sp.t_a] {
            prop_assert!(set.iter().all(|w| w.label == Label::Anomalous));
        }
    }

    #[test]
    fn normalization_inverts(vals in prop::collection::vec(-1e3f64..1e3, 4..40)) {
        let f = TimeSeriesFrame::new("s", Matrix::from_vec(vals.len(), 1, vals.clone()).unwrap());
        let ws = make_windows(&f, vals.len(), 1).unwrap();
        let stats = NormalizationStats::fit(&ws).unwrap();
        let back = stats.invert(&stats.apply(&f.values).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()) * 1e3);
        }
    }
}
