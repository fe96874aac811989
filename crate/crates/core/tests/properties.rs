use chrono::NaiveDate;
use proptest::prelude::*;

use dpmf::data::{self, expert_prediction, GameRecord};
use dpmf::driver::hyperfile::{format_hypers, parse_hypers};
use dpmf::kernels::{warp_time, HyperParams, KernelSpec, SeasonBoundary, SeasonCalendar, HOME_DIM, TIME_DIM};
use dpmf::likelihood::LikelihoodParams;
use dpmf::predict::{box_mass, score_game, PredictiveMixture};

fn two_season_calendar() -> SeasonCalendar {
    SeasonCalendar::new(
        vec![SeasonBoundary {
            season_end_week: 25.0,
            next_season_start_week: 53.0,
        }],
        28.0,
    )
    .unwrap()
}

fn mixture() -> impl Strategy<Value = PredictiveMixture> {
    prop::collection::vec((80.0..120.0f64, 80.0..120.0f64, 3.0..20.0f64, -0.9..0.9f64), 1..6).prop_map(|cs| {
        PredictiveMixture::new(
            cs.into_iter()
                .map(|(h, a, s, r)| ((h, a), LikelihoodParams::new(s, r).unwrap()))
                .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn expert_lines_are_reproduced(spread in -30.0..30.0f64, ou in 150.0..280.0f64) {
        let (away, home) = expert_prediction(spread, ou);
        prop_assert!((away + home - ou).abs() < 1e-9);
        prop_assert!((away - home - spread).abs() < 1e-9);
    }

    #[test]
    fn warp_is_monotone_and_bounded(w1 in 0.0..120.0f64, dw in 0.0..40.0f64, gap in 0.01..28.0f64) {
        let cal = two_season_calendar();
        let a = warp_time(w1, gap, &cal).unwrap();
        let b = warp_time(w1 + dw, gap, &cal).unwrap();
        prop_assert!(b >= a);
        prop_assert!(a <= w1 + 1e-12);
        prop_assert!(w1 - a <= 28.0 - gap + 1e-9);
    }

    #[test]
    fn hyper_files_round_trip(ls in prop::collection::vec((0.3..400.0f64, 0.02..90.0f64), 1..4), gap in 0.5..28.0f64) {
        let spec = KernelSpec::ard(&[TIME_DIM, HOME_DIM]);
        let side: Vec<HyperParams> = ls.iter().map(|&(t, h)| HyperParams::new(vec![t, h], gap).unwrap()).collect();
        let set = [side.clone(), side];
        let text = format_hypers(&set, &spec);
        let back = parse_hypers(&text, &spec, set[0].len()).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn mixture_probabilities_are_coherent(mix in mixture()) {
        let p = mix.prob_home_win();
        prop_assert!((0.0..=1.0).contains(&p));
        let inner = box_mass(&mix, (90.0, 110.0), (90.0, 110.0));
        let outer = box_mass(&mix, (0.0, 200.0), (0.0, 200.0));
        prop_assert!(inner >= -1e-9 && inner <= outer + 1e-9 && outer <= 1.0 + 1e-6);
        prop_assert!(outer > 0.999);
    }

    #[test]
    fn game_scores_are_bounded(mix in mixture(), h in 60.0..140.0f64, a in 60.0..140.0f64) {
        let s = score_game(&mix, (h, a), None);
        prop_assert!(s.log_prob.is_finite());
        let (mh, ma) = mix.mean();
        prop_assert!((s.sq_err - ((mh - h).powi(2) + (ma - a).powi(2))).abs() < 1e-9);
    }

    #[test]
    fn game_csv_round_trips(rows in prop::collection::vec((0u32..300, 0usize..5, 1usize..5, 50.0..150.0f64, 50.0..150.0f64), 1..20)) {
        let epoch = NaiveDate::from_ymd_opt(2011, 1, 3).unwrap();
        let mut games: Vec<GameRecord> = Vec::new();
        for (day, h, off, hs, as_) in rows {
            let a = (h + off) % 5;
            let date = epoch + chrono::Duration::days(day as i64);
            if games.iter().any(|g| g.date == date) {
                continue;
            }
            games.push(GameRecord {
                date,
                season: 2011,
                week: 0.0,
                home_team: format!("T{h}"),
                away_team: format!("T{a}"),
                home_score: hs,
                away_score: as_,
                home_spread: None,
                over_under: Some(200.5),
            });
        }
        games.sort_by_key(|g| g.date);
        let mut buf = Vec::new();
        data::write_games(&mut buf, &games).unwrap();
        let back = data::read_games(buf.as_slice(), None).unwrap();
        let mut again = Vec::new();
        data::write_games(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
        prop_assert_eq!(back.len(), games.len());
    }
}
