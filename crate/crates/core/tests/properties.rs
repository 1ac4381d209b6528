mod common;

#[test]
fn bin_monotone_scale_invariant_signed() {
    common::bins(1000).unwrap();
}

#[test]
fn compass_sectors_rotate() {
    common::compass_rotation(1000).unwrap();
}

#[test]
fn scenario_codec_round_trips() {
    common::codec_round_trip(100).unwrap();
}

#[test]
fn influences_balance() {
    common::influence_balance(50).unwrap();
}
