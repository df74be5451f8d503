use nlmc_harness::{Cell, PlotData, ResultTable};
use proptest::prelude::*;

#[test]
fn empty_table_writes_header_only() {
    let t = ResultTable::new(&["a", "b"]).unwrap();
    assert_eq!(t.to_csv().unwrap(), "a,b\n");
    let back = ResultTable::from_csv("a,b\n").unwrap();
    assert!(back.is_empty());
    assert_eq!(back.columns(), ["a", "b"]);
}

#[test]
fn duplicate_columns_and_short_rows_are_rejected() {
    assert!(ResultTable::new(&["a", "a"]).is_err());
    let mut t = ResultTable::new(&["a", "b"]).unwrap();
    assert!(t.push(vec![1.0.into()]).is_err());
}

#[test]
fn lookup_by_text_and_number() {
    let mut t = ResultTable::new(&["method", "step", "error"]).unwrap();
    t.push(vec!["nl".into(), 5usize.into(), 0.03.into()]).unwrap();
    t.push(vec!["up".into(), 5usize.into(), 0.07.into()]).unwrap();
    assert_eq!(t.find("method", "up"), vec![1]);
    assert_eq!(t.num(1, "error"), Some(0.07));
    assert_eq!(t.num(0, "method"), None);
    assert!(t.find("nope", "up").is_empty());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = ResultTable::new(&["x", "label"]).unwrap();
    t.push(vec![1e-12.into(), "with, comma".into()]).unwrap();
    t.push(vec![f64::NAN.into(), "b".into()]).unwrap();
    let p = dir.path().join("t.csv");
    t.write(&p).unwrap();
    let back = ResultTable::read(&p).unwrap();
    assert_eq!(back.get(0, "x"), Some(&Cell::Num(1e-12)));
    assert_eq!(back.get(0, "label"), Some(&Cell::Text("with, comma".into())));
    assert!(back.num(1, "x").unwrap().is_nan());
}

#[test]
fn plot_data_keeps_scale_flags_and_groups() {
    let mut t = ResultTable::new(&["m", "h", "e"]).unwrap();
    for (m, h, e) in [(1.0, 0.2, 0.5), (1.0, 0.1, 0.3), (2.0, 0.2, 0.2), (2.0, 0.1, f64::NAN)] {
        t.push(vec![m.into(), h.into(), e.into()]).unwrap();
    }
    let d = PlotData::from_table(&t, "h", "e", Some("m"), true).unwrap();
    assert_eq!(d.series.len(), 2);
    assert_eq!(d.series[1].points, vec![(0.2, 0.2)]);
    let back = PlotData::from_text(&d.to_text()).unwrap();
    assert_eq!(back, d);
    assert!(back.log_y && !back.log_x);
    assert!(PlotData::from_table(&t, "h", "nope", None, false).is_err());
    assert!(PlotData::from_text("series,x,y\n").is_err());
}

fn cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Cell::Num),
        "[a-z_ ]{1,8}".prop_filter("not numeric", |s| s.parse::<f64>().is_err()).prop_map(Cell::Text),
    ]
}

proptest! {
    #[test]
    fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(cell(), 3), 0..20)) {
        let mut t = ResultTable::new(&["a", "b", "c"]).unwrap();
        for r in rows {
            t.push(r).unwrap();
        }
        let back = ResultTable::from_csv(&t.to_csv().unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn plot_round_trip(points in prop::collection::vec((-1e9f64..1e9, -1e9f64..1e9), 1..30), log_y: bool) {
        let mut t = ResultTable::new(&["x", "y"]).unwrap();
        for (x, y) in &points {
            t.push(vec![(*x).into(), (*y).into()]).unwrap();
        }
        let d = PlotData::from_table(&t, "x", "y", None, log_y).unwrap();
        prop_assert_eq!(PlotData::from_text(&d.to_text()).unwrap(), d);
    }
}
