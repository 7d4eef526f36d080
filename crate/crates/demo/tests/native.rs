use coupled_sa_demo::{project_point, skew_comparison, strong_quadratic_run};

#[test]
fn projections() {
    assert_eq!(project_point("box", &[0.0, 0.0], &[1.0, 1.0], 0.0, &[2.0, -1.0]).unwrap(), vec![1.0, 0.0]);
    let p = project_point("ball", &[0.0, 0.0], &[], 1.0, &[3.0, 4.0]).unwrap();
    assert!((p[0] - 0.6).abs() < 1e-12 && (p[1] - 0.8).abs() < 1e-12);
    let p = project_point("box_sum", &[0.0; 3], &[1.0; 3], 1.0, &[1.0, 1.0, 1.0]).unwrap();
    assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-9));
    assert!(project_point("cone", &[], &[], 0.0, &[]).is_err());
    assert!(project_point("box", &[0.0], &[1.0], 0.0, &[0.5, 0.5]).is_err());
}

#[test]
fn quadratic_rows_sit_under_their_bounds() {
    let rows = strong_quadratic_run(1.0, 2.0, 0.0, 1.2, 1000, 0).unwrap();
    assert_eq!(rows.len(), 5 * 4);
    let ks: Vec<f64> = rows.chunks(5).map(|r| r[0]).collect();
    assert_eq!(ks, vec![1.0, 10.0, 100.0, 1000.0]);
    for r in rows.chunks(5) {
        assert!(r[1] <= r[3] && r[2] <= r[4], "{r:?}");
    }
    let rows = strong_quadratic_run(1.0, 2.0, 0.0, 0.5, 10, 0).unwrap();
    assert!(rows[3].is_nan());
    assert!(strong_quadratic_run(1.0, 2.0, 0.0, 1.2, 0, 0).is_err());
}

#[test]
fn skew_regularization_helps() {
    let rows = skew_comparison(20_000, 10, 3).unwrap();
    let last = &rows[rows.len() - 3..];
    assert_eq!(last[0], 20_000.0);
    assert!(last[2] < last[1], "{last:?}");
}
