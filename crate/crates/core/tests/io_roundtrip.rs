mod common;

use common::*;
use overbook::analytics::Analytics;
use overbook::futures::negotiate;
use overbook::io::{self, RiskRow, RoundRow, SweepRow};
use overbook::model::validate_params;
use overbook::simulator::{run_campaign, Mode};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-11 * a.abs().max(b.abs()) || a == b
}

#[test]
fn rounds_csv_round_trips() {
    let p = reference();
    for mode in [Mode::EqualDiff, Mode::SpotUniform] {
        let s = run_campaign(&p, mode, 120, 3).unwrap();
        let mut buf = Vec::new();
        io::write_rounds(&mut buf, &s.records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(io::ROUNDS_LAYOUT));
        assert_eq!(text.lines().count(), 122);
        let rows = io::read_rounds(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 120);
        for (row, m) in rows.iter().zip(&s.records) {
            let want = RoundRow::from(m);
            assert_eq!(*row, want.rounded());
            assert!(close(row.tct, want.tct) && close(row.seller_utility, want.seller_utility));
        }
        // Writing the parsed rows again reproduces the file byte for byte.
        let mut again = Vec::new();
        io::write_round_rows(&mut again, rows).unwrap();
        assert_eq!(again, buf);
    }
}

#[test]
fn trace_csv_round_trips() {
    let mut raw = overbook::model::reference_config();
    let pmm = reference().p_mem_max();
    raw.insert("granularity_dp".into(), pmm / 10.0);
    raw.insert("granularity_dq".into(), pmm / 8.0);
    raw.insert("granularity_dr".into(), pmm / 8.0);
    let p: overbook::Params = validate_params(&raw).unwrap();
    let an = Analytics::new(&p).unwrap();
    let trace = negotiate(&p).unwrap();
    let mut buf = Vec::new();
    let n = io::write_trace(&mut buf, &an, &trace).unwrap();
    assert_eq!(n as usize, trace.candidates.len());
    let rows = io::read_trace(buf.as_slice()).unwrap();
    for (row, t) in rows.iter().zip(trace.expand(&an)) {
        assert_eq!(row.kappa, t.kappa);
        assert!(close(row.p, t.p) && close(row.q, t.q) && close(row.r, t.r));
        assert!(close(row.seller_eu, t.seller_eu) && close(row.srisk, t.srisk));
    }
}

#[test]
fn tables_round_trip() {
    let sweep = vec![
        SweepRow {
            g: 1e-9,
            gamma: 250.0,
            lambda: 0.95,
            utility: 0.01,
        },
        SweepRow {
            g: 0.0,
            gamma: 100.0,
            lambda: 1.0,
            utility: 0.42,
        },
    ];
    let mut buf = Vec::new();
    io::write_sweep(&mut buf, &sweep).unwrap();
    assert_eq!(io::read_sweep(buf.as_slice()).unwrap(), sweep);

    let risks = vec![RiskRow {
        p: 1.2e-9,
        q: 3e-10,
        r: 1e-9,
        kappa: 20,
        srisk: 0.25,
        mrisk: 0.24,
        vrisk: 1.0 / 3.0,
    }];
    let mut buf = Vec::new();
    io::write_risks(&mut buf, &risks).unwrap();
    let back = io::read_risks(buf.as_slice()).unwrap();
    assert_eq!(back[0].kappa, 20);
    assert!(close(back[0].vrisk, 1.0 / 3.0));
}

#[test]
fn summary_document_carries_version_and_totals() {
    let p = reference();
    let s = run_campaign(&p, Mode::SpotDiff, 50, 8).unwrap();
    let doc = io::summary_document(&s).unwrap();
    let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
    assert_eq!(v["schema_version"], io::SCHEMA_VERSION);
    assert_eq!(v["mode"], "spot-diff");
    assert_eq!(v["rounds"], 50);
    assert_eq!(v["sums"]["dmc"], s.sums.dmc);
    assert!(close(v["means"]["tur"].as_f64().unwrap(), s.means.tur));
    assert_eq!(io::campaign_stem("spot-diff", 8, 50), "spot-diff_8_50");
}
