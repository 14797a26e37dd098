use dimquant_web::{codec_report, grid_report, spectral_report};

#[test]
fn grid_report_carries_decode_table() {
    let v: serde_json::Value =
        serde_json::from_str(&grid_report(4, "gaussian", 3.0).unwrap()).unwrap();
    assert_eq!(v["decoded"].as_array().unwrap().len(), 4);
    assert_eq!(v["midpoints"].as_array().unwrap().len(), 3);
    assert!(grid_report(1, "gaussian", 3.0).is_err());
    assert!(grid_report(8, "cubic", 3.0).is_err());
}

#[test]
fn codec_report_counts_every_position() {
    let v: serde_json::Value =
        serde_json::from_str(&codec_report(16, "linear", 0.5, 1.0, 1).unwrap()).unwrap();
    let total: u64 = v["decoded_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(total, 4 * 32 * 32);
    assert_eq!(v["pairs"].as_array().unwrap().len(), 400);
    assert!(v["report"]["overall_mse"].as_f64().unwrap() > 0.0);
}

#[test]
fn spectral_report_orders_smooth_first() {
    let v: serde_json::Value = serde_json::from_str(&spectral_report(2, 0.25).unwrap()).unwrap();
    assert_eq!(v["order"]["permutation"], serde_json::json!([0, 2, 1]));
    assert_eq!(v["maps"].as_array().unwrap().len(), 3);
}
