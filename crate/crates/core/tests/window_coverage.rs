mod common;

#[test]
fn window_plans_cover_short_intervals_and_reject_bad_parameters() {
    let summary = common::checks::window_coverage(100).unwrap();
    println!("{summary}");
}
