use splatrecon_web::{feature_channels, fourier_channel, render_splat};

#[test]
fn exported_calls_succeed_natively() {
    assert_eq!(feature_channels(4), 27);
    let px = render_splat(300, 0.06, 0.8, 0.0, 20, false).unwrap();
    assert_eq!(px.len(), 4 * 20 * 20);
    let gray = fourier_channel(1, 3, 20).unwrap();
    assert!(gray.chunks(4).all(|p| p[0] == p[1] && p[1] == p[2]));
}
