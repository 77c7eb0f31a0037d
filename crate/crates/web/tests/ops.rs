use spoofdet_web::ops;

#[test]
fn filterbank_rows() {
    let fb = ops::filterbank("linear", 70).unwrap();
    assert_eq!(fb.weights.len(), 70 * 257);
    assert!((fb.center_freqs[0] - 8000.0 / 71.0).abs() < 1e-9);
    let mel = ops::filterbank("mel", 30).unwrap();
    assert!(mel.center_freqs.windows(2).all(|w| w[1] > w[0]));
    assert!(ops::filterbank("bark", 10).is_err());
    assert!(ops::filterbank("linear", 0).is_err());
}

#[test]
fn burst_pooling() {
    let s = ops::burst_series(100, 0, 10, 10.0);
    assert_eq!(ops::pool(s.clone(), 10, 0.05).unwrap(), (1.0, 10.0));
    assert_eq!(ops::smooth(&s, 10)[..5], [10.0; 5]);
    // a burst hanging off the end is clipped
    assert_eq!(ops::burst_series(5, 3, 10, 1.0), vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    assert!(ops::pool(vec![], 10, 0.05).is_err());
    assert!(ops::pool(vec![1.0], 10, 0.0).is_err());
}

#[test]
fn loss_curve() {
    let c0 = ops::oc_softmax_curve(0, 20.0, 0.9, 0.2, 201).unwrap();
    let c1 = ops::oc_softmax_curve(1, 20.0, 0.9, 0.2, 201).unwrap();
    assert_eq!(c0.len(), 201);
    // index 190 is s = 0.9, index 120 is s = 0.2
    assert!((c0[190] - 2f64.ln()).abs() < 1e-12);
    assert!((c1[120] - 2f64.ln()).abs() < 1e-12);
    assert!(c0.windows(2).all(|w| w[1] < w[0]));
    assert!(c1.windows(2).all(|w| w[1] > w[0]));
    assert!(ops::oc_softmax_curve(0, 20.0, 0.2, 0.9, 10).is_err());
    assert!(ops::oc_softmax_curve(2, 20.0, 0.9, 0.2, 10).is_err());
}
