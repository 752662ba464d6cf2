mod common;

use std::path::Path;

use common::{code, snapshot, Workdir, TINY};
use proptest::prelude::*;
use trajformer::dataset::{grid_time, write_scene_metadata, write_tracks, AgentTrack, AgentType, Sample, SceneMap, SemanticLabel};
use trajformer::evaluation::parse_csv;
use trajformer_cli::config::SynthSettings;
use trajformer_cli::synth::{generate, Scenario};

fn synth_two(w: &Workdir) {
    w.ok(&["synth", "--scenario", "obstacle", "-n", "4", "--name", "a", "--seed", "1"]);
    w.ok(&["synth", "--scenario", "obstacle", "-n", "4", "--name", "b", "--seed", "2"]);
    w.ok(&["preprocess", "--dataset", "a"]);
    w.ok(&["preprocess", "--dataset", "b"]);
}

#[test]
fn synth_is_reproducible_from_the_seed() {
    let a = Workdir::new(TINY);
    let b = Workdir::new(TINY);
    for w in [&a, &b] {
        w.ok(&["synth", "--scenario", "crossing", "-n", "3", "--name", "a", "--seed", "9"]);
    }
    let (sa, sb) = (snapshot(&a.out().join("data")), snapshot(&b.out().join("data")));
    assert_eq!(sa.len(), 9);
    assert_eq!(sa, sb);
    a.ok(&["synth", "--scenario", "crossing", "-n", "3", "--name", "a", "--seed", "10"]);
    assert_ne!(snapshot(&a.out().join("data")), sb);
}

#[test]
fn linear_single_scene_is_one_constant_velocity_track() {
    let scenes = generate(Scenario::Linear, 1, 5, &SynthSettings::default()).unwrap();
    assert_eq!(scenes.len(), 1);
    let tracks = &scenes[0].tracks;
    assert_eq!(tracks.len(), 1);
    assert_eq!(tracks[0].agent_type, AgentType::Pedestrian);
    let s = &tracks[0].samples;
    for w in s.windows(3) {
        let ax = w[2].x_m - 2.0 * w[1].x_m + w[0].x_m;
        let ay = w[2].y_m - 2.0 * w[1].y_m + w[0].y_m;
        assert!(ax.abs() < 1e-9 && ay.abs() < 1e-9);
    }
    for (k, smp) in s.iter().enumerate() {
        assert_eq!(smp.t, k as f64 / 10.0);
    }
}

fn inside(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> bool {
    lo[0] <= p[0] && p[0] <= hi[0] && lo[1] <= p[1] && p[1] <= hi[1]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn obstacle_paths_never_enter_the_parked_vehicle(seed in 0u64..1_000_000, peds in 1usize..4) {
        let settings = SynthSettings { pedestrians_per_scene: peds, ..SynthSettings::default() };
        let scenes = generate(Scenario::Obstacle, 4, seed, &settings).unwrap();
        let mut blocked = 0;
        for sc in &scenes {
            // the region is whatever the map labels parked_vehicle
            let m = &sc.map;
            let cells: Vec<(usize, usize)> = (0..m.height)
                .flat_map(|r| (0..m.width).map(move |c| (c, r)))
                .filter(|&(c, r)| m.label(c, r) == SemanticLabel::ParkedVehicle)
                .collect();
            if cells.is_empty() {
                continue;
            }
            blocked += 1;
            let mpp = m.meters_per_pixel;
            let lo = [cells.iter().map(|c| c.0).min().unwrap() as f64 * mpp, cells.iter().map(|c| c.1).min().unwrap() as f64 * mpp];
            let hi = [(cells.iter().map(|c| c.0).max().unwrap() + 1) as f64 * mpp, (cells.iter().map(|c| c.1).max().unwrap() + 1) as f64 * mpp];
            for tr in sc.tracks.iter().filter(|t| t.agent_type == AgentType::Pedestrian) {
                for w in tr.samples.windows(2) {
                    for k in 0..=10 {
                        let f = k as f64 / 10.0;
                        let p = [w[0].x_m + f * (w[1].x_m - w[0].x_m), w[0].y_m + f * (w[1].y_m - w[0].y_m)];
                        prop_assert!(!inside(p, lo, hi), "{} {} at {:?}", sc.scene_id, tr.agent_id, p);
                    }
                }
                // and it actually walks past the car
                prop_assert!(tr.samples.first().unwrap().x_m < lo[0] && tr.samples.last().unwrap().x_m > hi[0]);
            }
        }
        prop_assert_eq!(blocked, 2);
    }
}

#[test]
fn unknown_scenario_fails_with_the_valid_names() {
    let w = Workdir::new(TINY);
    let o = w.run(&["synth", "--scenario", "zigzag"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("linear, turn, stop_go, obstacle, crossing"), "{err}");
}

fn single_track_root(root: &Path, len: usize) {
    std::fs::create_dir_all(root.join("tracks")).unwrap();
    std::fs::create_dir_all(root.join("scenes")).unwrap();
    let samples = (0..len).map(|k| Sample::from_meters(grid_time(k as i64, 10.0), 2.0 + 0.1 * k as f64, 5.0, 0.1)).collect();
    let track = AgentTrack {
        agent_id: "p".into(),
        agent_type: AgentType::Pedestrian,
        samples,
    };
    write_tracks(&root.join("tracks/one.csv"), "one", &[track]).unwrap();
    SceneMap::filled("one", 200, 100, SemanticLabel::Sidewalk, 0.1).unwrap().save(&root.join("scenes/one.png")).unwrap();
    write_scene_metadata(&root.join("scenes/one.scene"), "one", 0.1, "one.png").unwrap();
}

#[test]
fn single_track_of_eighty_samples_gives_one_window() {
    let w = Workdir::new("output_dir=out\ndataset.a.root=data\nwindow.delta=30\nwindow.kappa=50\nwindow.stride=1\n");
    single_track_root(&w.path().join("data"), 80);
    let out = w.ok(&["preprocess", "--dataset", "a"]);
    assert!(out.contains("one: 1 windows"), "{out}");
    assert!(out.contains("a: 1 windows in 1 scenes"), "{out}");
}

#[test]
fn empty_root_warns_and_succeeds() {
    let w = Workdir::new("output_dir=out\ndataset.a.root=data\n");
    std::fs::create_dir_all(w.path().join("data")).unwrap();
    let o = w.run(&["preprocess", "--dataset", "a"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("a: 0 windows"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn preprocess_rerun_is_byte_identical() {
    let w = Workdir::new(TINY);
    w.ok(&["synth", "--scenario", "turn", "-n", "3", "--name", "a"]);
    w.ok(&["preprocess", "--dataset", "a"]);
    let first = snapshot(&w.out().join("cache"));
    let canon = snapshot(&w.out().join("canonical"));
    w.ok(&["preprocess", "--dataset", "a"]);
    assert_eq!(first, snapshot(&w.out().join("cache")));
    assert_eq!(canon, snapshot(&w.out().join("canonical")));
}

#[test]
fn invalid_config_writes_nothing() {
    let w = Workdir::new(&format!("{TINY}model.n_heads=3\n"));
    let o = w.run(&["synth", "--scenario", "linear"]);
    assert_eq!(code(&o), 1);
    assert!(!w.out().exists());
    let w = Workdir::new(&format!("{TINY}window.delta=x\n"));
    assert_eq!(code(&w.run(&["synth", "--scenario", "linear"])), 1);
    let w = Workdir::new(TINY);
    let o = w.run(&["preprocess", "--dataset", "a"]);
    assert_eq!(code(&o), 1, "missing dataset root is a config error");
    assert!(!w.out().exists());
    assert_eq!(code(&w.run(&["train", "--bogus-flag"])), 1);
}

#[test]
fn a_held_lock_refuses_the_run() {
    let w = Workdir::new(TINY);
    std::fs::create_dir_all(w.out()).unwrap();
    std::fs::write(w.out().join(".trajformer.lock"), "").unwrap();
    let o = w.run(&["synth", "--scenario", "linear"]);
    assert_eq!(code(&o), 1);
    assert!(!w.out().join("data").exists());
}

fn log_rows(path: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), format!("{},{}", f[1], f[2]))
        })
        .collect()
}

#[test]
fn train_reports_a_summary_and_resume_splices_the_curve() {
    let full = Workdir::new(TINY);
    synth_two(&full);
    let out = full.ok(&["train", "--dataset", "a", "--set", "train.epochs=4"]);
    assert!(out.lines().last().unwrap().starts_with("trained context_tf on a: 4 epochs"), "{out}");

    let split = Workdir::new(TINY);
    synth_two(&split);
    split.ok(&["train", "--dataset", "a", "--set", "train.epochs=2", "-q"]);
    assert_eq!(log_rows(&split.out().join("logs/a_context_tf.csv")).len(), 2);
    split.ok(&["train", "--dataset", "a", "--set", "train.epochs=4", "--resume", "-q"]);

    let (a, b) = (full.out().join("logs/a_context_tf.csv"), split.out().join("logs/a_context_tf.csv"));
    assert_eq!(log_rows(&a), log_rows(&b));
    assert_eq!(log_rows(&a).len(), 4);
    let ckpt = "models/a_context_tf.ckpt";
    assert_eq!(std::fs::read(full.out().join(ckpt)).unwrap(), std::fs::read(split.out().join(ckpt)).unwrap());

    // other settings may not change under a resume
    let o = split.run(&["train", "--dataset", "a", "--set", "train.epochs=5", "--set", "train.batch_size=3", "--resume"]);
    assert_eq!(code(&o), 1);
    let fresh = Workdir::new(TINY);
    assert_eq!(code(&fresh.run(&["train", "--dataset", "a", "--resume"])), 1);
}

#[test]
fn divergence_exits_with_three() {
    let w = Workdir::new(TINY);
    w.ok(&["synth", "--scenario", "linear", "-n", "2", "--name", "a"]);
    w.ok(&["preprocess", "--dataset", "a"]);
    let o = w.run(&["train", "--dataset", "a", "--set", "train.learning_rate=1e300", "--set", "train.epochs=3"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_writes_reports_and_enforces_the_protocol() {
    let w = Workdir::new(TINY);
    synth_two(&w);
    for m in ["context_tf", "vanilla_tf"] {
        w.ok(&["train", "--dataset", "a", "--method", m, "-q"]);
    }
    w.ok(&["evaluate", "--test", "b"]);
    let table = parse_csv(&std::fs::read_to_string(w.out().join("reports/metrics.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 3 * 5);
    assert!(table.rows.iter().all(|r| r.dataset == "b" && r.ade_m > 0.0 && r.rmse_m >= r.ade_m));
    let md = std::fs::read_to_string(w.out().join("reports/metrics.md")).unwrap();
    assert!(md.starts_with("| horizon (s) | b context_tf | b vanilla_tf | b cv_kalman |"));

    w.ok(&["evaluate", "--test", "b", "--methods", "cv_kalman", "--oracle", "--dump-predictions"]);
    let table = parse_csv(&std::fs::read_to_string(w.out().join("reports/metrics.csv")).unwrap()).unwrap();
    let oracle: Vec<_> = table.rows.iter().filter(|r| r.method == "oracle").collect();
    assert_eq!(oracle.len(), 5);
    assert!(oracle.iter().all(|r| r.ade_m == 0.0 && r.rmse_m == 0.0));
    assert!(w.out().join("predictions/b_oracle.csv").is_file());

    // models trained on a may not be scored on a without the override
    assert_eq!(code(&w.run(&["evaluate", "--test", "a", "--train", "a"])), 1);
    w.ok(&["evaluate", "--test", "a", "--train", "a", "--allow-same-dataset", "--methods", "context_tf"]);

    // a cache cut with a different stride does not fit the checkpoints
    w.ok(&["preprocess", "--dataset", "b", "--set", "window.stride=5"]);
    let o = w.run(&["evaluate", "--test", "b", "--set", "window.stride=5", "--methods", "vanilla_tf"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("differ"));
}

fn parse_points(s: &str) -> Vec<[f64; 2]> {
    s.split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            [x.parse().unwrap(), y.parse().unwrap()]
        })
        .collect()
}

#[test]
fn predict_dumps_and_plots_match() {
    use quick_xml::events::Event;

    let w = Workdir::new(TINY);
    synth_two(&w);
    w.ok(&["train", "--dataset", "a", "--method", "vanilla_tf", "-q"]);
    let out = w.ok(&["predict", "--test", "b", "--train", "a", "--method", "vanilla_tf", "--limit", "3", "--plot"]);
    assert!(out.contains("for 3 windows"), "{out}");

    let dump = std::fs::read_to_string(w.out().join("predictions/b_vanilla_tf.csv")).unwrap();
    let rows: Vec<Vec<String>> = dump.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3 * 50);

    let plots: Vec<_> = std::fs::read_dir(w.out().join("plots/b_vanilla_tf")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(plots.len(), 3);
    for plot in plots {
        let text = std::fs::read_to_string(&plot).unwrap();
        let mut reader = quick_xml::Reader::from_str(&text);
        let mut lines = std::collections::BTreeMap::new();
        loop {
            match reader.read_event().expect("well-formed svg") {
                Event::Eof => break,
                Event::Empty(e) if e.name().as_ref() == b"polyline" => {
                    let get = |k: &[u8]| e.attributes().map(|a| a.unwrap()).find(|a| a.key.as_ref() == k).map(|a| String::from_utf8(a.value.to_vec()).unwrap());
                    lines.insert(get(b"id").unwrap(), (get(b"stroke").unwrap(), parse_points(&get(b"points").unwrap())));
                }
                _ => {}
            }
        }
        let name = plot.file_stem().unwrap().to_string_lossy().to_string();
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| name == format!("{}_{}_{}", r[1], r[2], r[3])).collect();
        assert_eq!(mine.len(), 50, "{name}");
        let (pred_color, pred) = &lines["prediction"];
        let (truth_color, truth) = &lines["truth"];
        assert_eq!((pred_color.as_str(), truth_color.as_str()), ("blue", "green"));
        for (k, r) in mine.iter().enumerate() {
            let v: Vec<f64> = r[5..9].iter().map(|x| x.parse().unwrap()).collect();
            for (px, m) in [(pred[k][0], v[0]), (pred[k][1], v[1]), (truth[k][0], v[2]), (truth[k][1], v[3])] {
                assert!((px - m / 0.1).abs() < 1e-9, "{px} vs {m}");
            }
        }
    }

    std::fs::remove_file(w.out().join("data/b/scenes/obstacle_2_000.scene")).unwrap();
    std::fs::remove_dir_all(w.out().join("predictions")).unwrap();
    let o = w.run(&["predict", "--test", "b", "--train", "a", "--method", "vanilla_tf", "--plot"]);
    assert_eq!(code(&o), 2);
    assert!(!w.out().join("predictions").exists());
}
