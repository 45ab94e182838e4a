use lineprot::grid_model::FaultType;
use lineprot::harness::{
    enumerate_scenarios, run_suite, run_variants, StudyReport, SuiteConfig, SuiteKind, Variant, WindowGroup,
};

fn small(kinds: Vec<SuiteKind>) -> SuiteConfig {
    SuiteConfig {
        name: "small".into(),
        kinds,
        grid_sets: 2,
        fault_types: vec![FaultType::K2, FaultType::K1],
        resistances_ohm: vec![10.0],
        alphas: vec![0.25],
        inception_ms: vec![10.1],
        ..SuiteConfig::default()
    }
}

fn csv_bytes(r: &StudyReport) -> Vec<u8> {
    let mut out = Vec::new();
    r.write_windows_csv(&mut out).unwrap();
    r.write_summary_csv(&mut out).unwrap();
    r.write_metrics_csv(&mut out).unwrap();
    out
}

#[test]
fn paper_scale_enumerates_the_full_grid() {
    let mut cfg = SuiteConfig::default().paper_scale();
    assert_eq!(cfg.grid_sets, 100);
    cfg.grid_sets = 1;
    cfg.kinds = vec![SuiteKind::Internal];
    cfg.fault_types = vec![FaultType::K3];
    // 11 resistances, 11 locations, 41 inception times.
    assert_eq!(enumerate_scenarios(&cfg).unwrap().len(), 11 * 11 * 41);

    cfg.kinds = vec![SuiteKind::External];
    cfg.fault_types = FaultType::ALL_FAULTS.to_vec();
    // Two buses, 41 inception times; K2g varies R_a, R_b and R_g independently.
    let per_time = 11 + 11 + 11 * 11 * 11 + 11;
    let specs = enumerate_scenarios(&cfg).unwrap();
    assert_eq!(specs.len(), 2 * 41 * per_time);
    for s in specs.iter().step_by(997) {
        let f = &s.scenario.fault;
        let delay = f.t_clearing_s.unwrap() - f.t_inception_s;
        assert!((0.015..=0.030 + 1e-12).contains(&delay), "{delay}");
    }
}

#[test]
fn windows_are_grouped_around_the_inception() {
    let r = run_suite(&small(vec![SuiteKind::Normal, SuiteKind::Internal]), 1).unwrap();
    assert_eq!(r.metrics.failed_scenarios, 0);
    for s in &r.scenarios {
        match s.spec.kind {
            SuiteKind::Normal => {
                assert_eq!(s.windows.len(), 10);
                assert!(s.windows.iter().all(|w| w.group == WindowGroup::PreFault && !w.trip()));
            }
            SuiteKind::Internal => {
                assert_eq!(s.windows.len(), 16);
                for w in &s.windows {
                    let expected = match w.index {
                        0..=4 => WindowGroup::PreFault,
                        5 => WindowGroup::Inception,
                        _ => WindowGroup::PostFault,
                    };
                    assert_eq!(w.group, expected);
                    assert_eq!(w.trip(), w.group != WindowGroup::PreFault);
                    assert_eq!(w.interval_ok, (w.group == WindowGroup::Inception).then_some(true));
                    match w.group {
                        WindowGroup::PreFault => assert!(w.loc_err_m.is_none()),
                        WindowGroup::PostFault => assert!(w.loc_err_m.is_some() && w.rf_err_ohm.is_some()),
                        WindowGroup::Inception => {}
                    }
                }
            }
            SuiteKind::External => unreachable!(),
        }
    }
    let m = &r.metrics;
    assert_eq!(m.healthy_windows, 2 * 10 + 4 * 5);
    assert_eq!(m.healthy_correct, m.healthy_windows);
    assert_eq!(m.faulted_windows, 4 * 11);
    assert_eq!((m.security(), m.dependability(), m.interval_rate()), (1.0, 1.0, 1.0));
    assert!(m.location_m.max < 100.0 && m.resistance_ohm.max < 1.0);
}

#[test]
fn ratios_without_windows_are_nan() {
    let r = run_suite(&small(vec![SuiteKind::Normal]), 1).unwrap();
    assert_eq!(r.metrics.security(), 1.0);
    assert!(r.metrics.dependability().is_nan());
    assert!(r.metrics.interval_rate().is_nan());
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let mut cfg = small(vec![SuiteKind::Normal, SuiteKind::Internal, SuiteKind::External]);
    cfg.snr_db = Some(80.0);
    cfg.packet_loss = Some(0.05);
    let a = csv_bytes(&run_suite(&cfg, 1).unwrap());
    let b = csv_bytes(&run_suite(&cfg, 3).unwrap());
    assert!(a == b);
    cfg.seed = 2;
    assert!(csv_bytes(&run_suite(&cfg, 1).unwrap()) != a);
}

#[test]
fn variants_share_scenarios_window_by_window() {
    let cfg = small(vec![SuiteKind::Internal]);
    let variants = [
        Variant::default(),
        Variant { packet_loss: Some(0.05), ..Variant::default() },
        Variant { r_dev_pct: 5.0, l_dev_pct: -5.0, ..Variant::default() },
    ];
    let reports = run_variants(&cfg, &variants, 1).unwrap();
    assert_eq!(reports.len(), 3);
    let base: Vec<_> = reports[0].windows().map(|(s, w)| (s.spec.id, w.index, w.group)).collect();
    for r in &reports[1..] {
        let other: Vec<_> = r.windows().map(|(s, w)| (s.spec.id, w.index, w.group)).collect();
        assert_eq!(base, other);
    }
    assert_eq!(reports[1].variant.packet_loss, Some(0.05));
    assert_eq!(reports[1].metrics.dependability(), 1.0);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = SuiteConfig { snr_db: Some(42.0), fixed_line: None, ..SuiteConfig::default() };
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(SuiteConfig::from_toml_str(&text).unwrap(), cfg);
    assert!(SuiteConfig::from_toml_str("grid_sets = 0").is_err());
    assert!(SuiteConfig::from_toml_str("packet_loss = 1.5").is_err());
    assert!(SuiteConfig::from_toml_str("alphas = [1.2]").is_err());
}
