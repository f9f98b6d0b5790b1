use patchfish::ingest::{self, TRIPS_HEADER};
use patchfish_core::panel::{build_panel, BuildOptions, CellMap, TripRecord};
use patchfish_core::simulator::{desk_scenario, run};

fn write(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulated_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = desk_scenario(6);
    let out = run(&s).unwrap();
    let trips = dir.path().join("trips.csv");
    ingest::write_trips(&trips, &out.records).unwrap();
    assert_eq!(ingest::parse_trips(&trips, true).unwrap().into_strict(&trips).unwrap(), out.records);

    let roster = dir.path().join("roster.csv");
    ingest::write_roster(&roster, &s.roster()).unwrap();
    assert_eq!(ingest::parse_roster(&roster, true).unwrap().rows, s.roster());

    let prices = dir.path().join("prices.csv");
    ingest::write_prices(&prices, &s.prices()).unwrap();
    assert_eq!(ingest::parse_prices(&prices, true).unwrap().rows, s.prices());

    let distances = dir.path().join("distances.csv");
    ingest::write_distances(&distances, s.graph.port_distances()).unwrap();
    assert_eq!(ingest::read_distances(&distances, s.n_patches()).unwrap(), s.graph.port_distances());

    let totals = dir.path().join("totals.csv");
    ingest::write_annual_totals(&totals, &out.annual_totals()).unwrap();
    assert_eq!(ingest::read_annual_totals(&totals).unwrap(), out.annual_totals());

    let truth = patchfish::commands::true_biomass(&out, s.n_patches());
    let biomass = dir.path().join("biomass.csv");
    ingest::write_biomass(&biomass, &truth).unwrap();
    assert_eq!(ingest::read_biomass(&biomass).unwrap(), truth);
}

#[test]
fn header_only_file_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "trips.csv", &(TRIPS_HEADER.join(",") + "\n"));
    let parsed = ingest::parse_trips(&p, true).unwrap();
    assert!(parsed.rows.is_empty() && parsed.issues.is_empty());
}

#[test]
fn negative_catch_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n1,1,2001,1,2,10.0\n2,1,2001,1,3,-4.0\n", TRIPS_HEADER.join(","));
    let p = write(dir.path(), "trips.csv", &text);
    let err = ingest::parse_trips(&p, true).unwrap_err();
    assert_eq!(err.class.exit_code(), 3);
    assert!(err.message.contains("line 3"), "{}", err.message);
    assert_eq!(err.file.as_deref(), Some(p.as_path()));

    let lenient = ingest::parse_trips(&p, false).unwrap();
    assert_eq!(lenient.rows.len(), 1);
    assert_eq!(lenient.issues[0].line, 3);
}

#[test]
fn missing_column_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "trips.csv", "vessel_id,port_id,year,month,patch_id\n1,1,2001,1,2\n");
    let err = ingest::parse_trips(&p, true).unwrap_err();
    assert!(err.message.contains("catch_tons"), "{}", err.message);
}

#[test]
fn panel_ignores_record_order() {
    let s = desk_scenario(12);
    let out = run(&s).unwrap();
    let build = |records: &[TripRecord]| {
        build_panel(records, &s.roster(), &s.prices(), s.cost, &s.graph, CellMap::new(), BuildOptions::default()).unwrap()
    };
    let n = out.records.len();
    let reversed: Vec<TripRecord> = out.records.iter().rev().cloned().collect();
    // 7919 is prime and does not divide n, so the stride visits every record.
    assert_ne!(n % 7919, 0);
    let strided: Vec<TripRecord> = (0..n).map(|i| out.records[i * 7919 % n].clone()).collect();
    let panel = build(&out.records);
    assert_eq!(build(&reversed), panel);
    assert_eq!(build(&strided), panel);
    // The simulator's own panel sums catch in another order.
    let direct = out.panel(&s, BuildOptions::default()).unwrap();
    for (a, b) in panel.markets().iter().zip(direct.markets()) {
        assert_eq!((a.port, a.period, a.roster, a.outside_share), (b.port, b.period, b.roster, b.outside_share));
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.patch, x.share, x.effort, x.net_price), (y.patch, y.share, y.effort, y.net_price));
            assert!((x.catch - y.catch).abs() <= 1e-12 * x.catch.max(1.0));
        }
    }
    // One market per port and month.
    assert_eq!(panel.markets().len(), s.n_ports() * 12);
}

#[test]
fn panel_catch_matches_record_catch() {
    let s = desk_scenario(6);
    let out = run(&s).unwrap();
    let panel = out.panel(&s, BuildOptions::default()).unwrap();
    for m in panel.markets() {
        let records: f64 = out
            .records
            .iter()
            .filter(|r| r.port == m.port && r.period == m.period)
            .map(|r| r.catch_tons)
            .sum();
        let rows: f64 = m.rows.iter().map(|r| r.catch).sum();
        assert!((records - rows).abs() <= 1e-9 * records.max(1.0));
    }
}
