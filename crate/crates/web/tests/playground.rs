use neb_web::playground::{layout_centers, Playground, Source, Window, POINTS};

#[test]
fn layouts_have_expected_centers() {
    assert_eq!(layout_centers("pair").unwrap().nrows(), 2);
    assert_eq!(layout_centers("ring").unwrap().nrows(), 8);
    assert_eq!(layout_centers("grid").unwrap().nrows(), 9);
    assert!(layout_centers("spiral").is_err());
    assert!("nope".parse::<Source>().is_err());
}

#[test]
fn training_lowers_the_loss_and_tracks_epochs() {
    let mut p = Playground::new("pair", 0.5, &[16, 16], 3).unwrap();
    assert_eq!(p.points().len(), 2 * POINTS);
    let first = p.train(1).unwrap();
    let later = p.train(15).unwrap();
    assert_eq!(p.epochs(), 16);
    assert!(later < first, "{later} !< {first}");
}

#[test]
fn same_seed_same_run() {
    let run = || {
        let mut p = Playground::new("ring", 0.4, &[8], 5).unwrap();
        p.train(2).unwrap();
        p.sample(Source::Learned, 3, 50, 0.01, 7).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn kde_field_is_lowest_near_the_data() {
    let p = Playground::new("pair", 0.5, &[8], 1).unwrap();
    let n = 41;
    let e = p.field(Source::Kde, Window::square(4.0), n, n).unwrap();
    assert_eq!(e.len(), n * n);
    assert_eq!(e.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
    // nodes 0.2 apart; the wells sit at x = +-2 on the middle row
    let mid = n / 2;
    let at = |i: usize| e[mid * n + i];
    assert!(at(10) < at(mid) && at(30) < at(mid));
    assert!(at(10) < at(0) && at(30) < at(n - 1));
    assert!(p.field(Source::Kde, Window::square(1.0), 1, 5).is_err());
}

#[test]
fn sample_layout_and_click_descent() {
    let p = Playground::new("pair", 0.5, &[8], 2).unwrap();
    let (walk, jumps) = p.sample(Source::Kde, 4, 100, 0.02, 1).unwrap();
    assert_eq!(walk.len(), 2 * 4 * 10);
    assert_eq!(jumps.len(), 2 * 4);
    let out = p.descend(Source::Kde, 1.6, 0.3).unwrap();
    assert_eq!(out.len(), 4);
    // the jump moves toward the right-hand mode, the flow settles on it
    assert!(out[0] > 1.6 && out[1].abs() < 0.3);
    assert!((out[2] - 2.0).abs() < 0.1 && out[3].abs() < 0.1);
}
