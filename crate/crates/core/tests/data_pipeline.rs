use std::fs;
use std::path::Path;

use mcgan::data::{
    build_gt_map, examples_from_records, load_fixations, order_for_training, resize_coordinate, resize_image,
    resize_map, synthesize_two_task_dataset, write_fixations, Dataset, Example, FixationRecord, GtMode,
    SIGMA_FRACTION,
};
use mcgan::metrics::{cc, Fixation, SaliencyMap};
use mcgan::Error;
use proptest::prelude::*;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn well_formed_log_loads_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "f.csv", "image_id,subject_id,task_id,x,y,ordinal\na,s1,0,3,4,0\na,s1,0,5,6,1\nb,s2,1,0,0,0\n");
    let r = load_fixations(&p).unwrap();
    assert_eq!(r.len(), 3);
    assert_eq!(r[1], FixationRecord { image_id: "a".into(), subject_id: "s1".into(), task_id: 0, x: 5, y: 6, ordinal: 1 });
}

#[test]
fn missing_column_and_bad_rows_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "a.csv", "image_id,subject_id,task_id,x,ordinal\na,s,0,1,0\n");
    assert!(matches!(load_fixations(&p), Err(Error::Parse { line: 1, .. })));
    let p = write(dir.path(), "b.csv", "image_id,subject_id,task_id,x,y,ordinal\na,s,0,1,1,0\na,s,0,one,1,1\n");
    match load_fixations(&p) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains('x'), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let p = write(dir.path(), "c.csv", "image_id,subject_id,task_id,x,y,ordinal\na,s,0,1,1,0\nb,s,1,2,2,0\n");
    assert!(matches!(load_fixations(&p), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn coordinates_outside_the_image_fail_at_map_build_time() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "f.csv", "image_id,subject_id,task_id,x,y,ordinal\na,s,0,40,3,0\n");
    let records = load_fixations(&p).unwrap();
    let err = examples_from_records(&records, 32, 32, 1.28, GtMode::PerSubject).unwrap_err();
    assert!(matches!(err, Error::OutOfBounds { x: 40, y: 3, width: 32, height: 32 }));
    assert!(matches!(build_gt_map(&[Fixation::new(32, 0)], 32, 32, 1.0), Err(Error::OutOfBounds { .. })));
}

fn argmax(m: &SaliencyMap) -> usize {
    let v = m.values();
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn single_fixation_peaks_at_one() {
    let m = build_gt_map(&[Fixation::new(16, 16)], 32, 32, 2.0).unwrap();
    assert_eq!(m.at(16, 16), 1.0);
    assert_eq!(argmax(&m), 16 * 32 + 16);
    assert_eq!(m.at(0, 0), 0.0);
}

#[test]
fn symmetric_pair_gives_a_symmetric_map() {
    let m = build_gt_map(&[Fixation::new(10, 16), Fixation::new(21, 16)], 32, 32, 2.5).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            assert!((m.at(x, y) - m.at(31 - x, y)).abs() < 1e-12);
        }
    }
}

#[test]
fn coincident_fixations_match_a_single_one() {
    let one = build_gt_map(&[Fixation::new(7, 9)], 20, 20, 1.5).unwrap();
    let two = build_gt_map(&[Fixation::new(7, 9), Fixation::new(7, 9)], 20, 20, 1.5).unwrap();
    assert_eq!(argmax(&one), argmax(&two));
    for (a, b) in one.values().iter().zip(two.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn empty_fixations_are_degenerate() {
    assert!(matches!(build_gt_map(&[], 8, 8, 1.0), Err(Error::DegenerateMap(_))));
}

fn example(subject: &str, ordinal: usize) -> Example {
    Example {
        image_id: format!("i{ordinal}"),
        subject_id: subject.into(),
        task: 0,
        ordinal,
        fixations: vec![Fixation::new(0, 0)],
        gt: SaliencyMap::new(1, 1, vec![1.0]).unwrap(),
    }
}

#[test]
fn streams_are_sorted_and_split_per_subject() {
    let input = vec![example("b", 1), example("a", 2), example("b", 0), example("a", 0), example("a", 1)];
    let streams = order_for_training(input).unwrap();
    assert_eq!(streams.len(), 2);
    assert_eq!(streams[0].subject_id, "a");
    assert_eq!(streams[0].examples.iter().map(|e| e.ordinal).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(streams[1].examples.iter().map(|e| e.ordinal).collect::<Vec<_>>(), vec![0, 1]);
}

#[test]
fn ordinal_gaps_are_rejected() {
    let err = order_for_training(vec![example("a", 0), example("a", 2)]).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn runs_of_records_become_ranked_examples() {
    let rec = |img: &str, task, x, ord| FixationRecord {
        image_id: img.into(),
        subject_id: "s".into(),
        task_id: task,
        x,
        y: 1,
        ordinal: ord,
    };
    let records = vec![rec("a", 0, 1, 10), rec("a", 0, 2, 11), rec("b", 1, 3, 12), rec("a", 1, 4, 13)];
    let ex = examples_from_records(&records, 8, 8, 1.0, GtMode::PerSubject).unwrap();
    assert_eq!(ex.len(), 3);
    assert_eq!(ex.iter().map(|e| (e.image_id.as_str(), e.task, e.ordinal)).collect::<Vec<_>>(), vec![
        ("a", 0, 0),
        ("b", 1, 1),
        ("a", 1, 2)
    ]);
    assert_eq!(ex[0].fixations.len(), 2);
}

#[test]
fn pooled_maps_merge_subjects() {
    let rec = |s: &str, x, ord| FixationRecord { image_id: "a".into(), subject_id: s.into(), task_id: 0, x, y: 4, ordinal: ord };
    let records = vec![rec("s1", 1, 0), rec("s2", 6, 0)];
    let pooled = examples_from_records(&records, 8, 8, 1.0, GtMode::Pooled).unwrap();
    assert_eq!(pooled[0].gt, pooled[1].gt);
    let own = examples_from_records(&records, 8, 8, 1.0, GtMode::PerSubject).unwrap();
    assert_ne!(own[0].gt, own[1].gt);
}

#[test]
fn synthetic_set_has_two_tasks_per_image_and_separated_maps() {
    let ds = synthesize_two_task_dataset(3, 5, 64, 11).unwrap();
    assert_eq!(ds.examples.len(), 3 * 5 * 2);
    assert_eq!(ds.n_tasks, 2);
    assert!((ds.sigma - SIGMA_FRACTION * 64.0).abs() < 1e-12);
    for s in ["s00", "s01", "s02"] {
        for img in ds.images.keys() {
            let tasks: Vec<usize> =
                ds.examples.iter().filter(|e| e.subject_id == s && &e.image_id == img).map(|e| e.task).collect();
            assert_eq!(tasks.len(), 2);
            assert!(tasks.contains(&0) && tasks.contains(&1));
            let t0 = ds.examples.iter().find(|e| e.subject_id == s && &e.image_id == img && e.task == 0).unwrap();
            let t1 = ds.examples.iter().find(|e| e.subject_id == s && &e.image_id == img && e.task == 1).unwrap();
            assert!(cc(&t0.gt, &t1.gt).unwrap() < 0.2);
            let (top, bottom) = (argmax(&t0.gt) / 64, argmax(&t1.gt) / 64);
            assert!(top < bottom);
        }
    }
    assert!(order_for_training(ds.examples.clone()).is_ok());
}

#[test]
fn small_synthetic_sizes_are_rejected() {
    assert!(matches!(synthesize_two_task_dataset(1, 1, 16, 0), Err(Error::Config(_))));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "images", "maps"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names.into_iter().filter(|p| p.is_file()) {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_dataset_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synthesize_two_task_dataset(2, 3, 32, 5).unwrap().save(&a).unwrap();
    synthesize_two_task_dataset(2, 3, 32, 5).unwrap().save(&b).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let c = tmp.path().join("c");
    synthesize_two_task_dataset(2, 3, 32, 6).unwrap().save(&c).unwrap();
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn saved_dataset_loads_back_and_reserializes_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synthesize_two_task_dataset(2, 3, 32, 8).unwrap();
    ds.save(&tmp.path().join("a")).unwrap();
    let back = Dataset::load(&tmp.path().join("a"), GtMode::PerSubject).unwrap();
    assert_eq!(back.examples.len(), ds.examples.len());
    assert_eq!(back.size, 32);
    for (a, b) in back.examples.iter().zip(order_for_training(ds.examples.clone()).unwrap().iter().flat_map(|s| s.examples.iter())) {
        assert_eq!((&a.subject_id, &a.image_id, a.task, a.ordinal), (&b.subject_id, &b.image_id, b.task, b.ordinal));
        assert_eq!(a.fixations, b.fixations);
        for (x, y) in a.gt.values().iter().zip(b.gt.values()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
    back.save(&tmp.path().join("b")).unwrap();
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    let pooled = Dataset::load(&tmp.path().join("a"), GtMode::Pooled).unwrap();
    let first = &pooled.examples[0];
    let twin = pooled.examples.iter().find(|e| e.subject_id != first.subject_id && e.image_id == first.image_id && e.task == first.task).unwrap();
    assert_eq!(first.gt, twin.gt);
}

#[test]
fn missing_dataset_directory_is_a_config_error() {
    assert!(matches!(Dataset::load(Path::new("/nonexistent/mcgan"), GtMode::PerSubject), Err(Error::Config(_))));
}

#[test]
fn loader_builder_orderer_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let records: Vec<FixationRecord> = (0..30)
        .map(|i| FixationRecord {
            image_id: format!("img{}", (i / 3) % 4),
            subject_id: format!("s{}", i % 2),
            task_id: (i / 5) % 2,
            x: (i * 7 % 32) as i64,
            y: (i * 11 % 32) as i64,
            ordinal: i as u64 / 2,
        })
        .collect();
    let p = tmp.path().join("f.csv");
    write_fixations(&p, &records).unwrap();
    let build = || {
        let r = load_fixations(&p).unwrap();
        let ex = examples_from_records(&r, 32, 32, 1.28, GtMode::PerSubject).unwrap();
        order_for_training(ex).unwrap()
    };
    assert_eq!(build(), build());
}

#[test]
fn identity_resize_is_unchanged() {
    let ds = synthesize_two_task_dataset(1, 1, 32, 2).unwrap();
    let img = ds.images.values().next().unwrap();
    assert_eq!(&resize_image(img, 3, 32, 32).unwrap(), img);
    let gt = &ds.examples[0].gt;
    assert_eq!(&resize_map(gt, 32, 32).unwrap(), gt);
    assert_eq!(ds.resized(32).unwrap(), ds);
}

#[test]
fn upsample_then_downsample_round_trips_within_two_levels() {
    let size = 32;
    let mut planes = Vec::new();
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
                planes.push(0.5 + 0.3 * (std::f64::consts::TAU * (u + 0.3 * c as f64)).sin() * (std::f64::consts::PI * v).cos());
            }
        }
    }
    let up = resize_image(&planes, 3, size, 2 * size).unwrap();
    let back = resize_image(&up, 3, 2 * size, size).unwrap();
    let worst = planes.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 2.0 / 255.0, "worst {worst}");
}

#[test]
fn corner_fixations_stay_in_bounds_after_resize() {
    for (from, to) in [(64, 32), (32, 64), (64, 17), (5, 3)] {
        assert_eq!(resize_coordinate(from - 1, from, to), to - 1);
        assert!(resize_coordinate(0, from, to) <= to / from);
    }
    let ds = synthesize_two_task_dataset(2, 2, 64, 3).unwrap();
    let small = ds.resized(32).unwrap();
    assert_eq!(small.size, 32);
    for e in &small.examples {
        assert!(e.fixations.iter().all(|f| f.x < 32 && f.y < 32));
        assert_eq!((e.gt.width(), e.gt.height()), (32, 32));
        assert_eq!(e.gt.values().iter().cloned().fold(0.0, f64::max), 1.0);
    }
}

#[test]
fn split_by_image_reranks_ordinals() {
    let ds = synthesize_two_task_dataset(2, 6, 32, 4).unwrap();
    let (train, test) = ds.split_by_image(2).unwrap();
    assert_eq!(train.images.len(), 4);
    assert_eq!(test.images.len(), 2);
    assert_eq!(train.examples.len() + test.examples.len(), ds.examples.len());
    assert!(order_for_training(train.examples).is_ok());
    assert!(order_for_training(test.examples).is_ok());
    assert!(matches!(ds.split_by_image(6), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn gt_maps_peak_at_exactly_one(points in prop::collection::vec((0usize..24, 0usize..24), 1..12), sigma in 0.5f64..6.0) {
        let fix: Vec<Fixation> = points.into_iter().map(|(x, y)| Fixation::new(x, y)).collect();
        let m = build_gt_map(&fix, 24, 24, sigma).unwrap();
        let max = m.values().iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(max, 1.0);
        prop_assert!(m.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ordering_is_a_permutation(spec in prop::collection::vec((0usize..3, 0usize..5), 1..20), seed in any::<u64>()) {
        let mut counts = [0usize; 3];
        let mut examples = Vec::new();
        for (subject, _) in &spec {
            examples.push(example(&format!("s{subject}"), counts[*subject]));
            counts[*subject] += 1;
        }
        let mut shuffled = examples.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let streams = order_for_training(shuffled).unwrap();
        let mut flat: Vec<(String, usize)> = streams.iter().flat_map(|s| s.examples.iter().map(|e| (e.subject_id.clone(), e.ordinal))).collect();
        let mut expected: Vec<(String, usize)> = examples.iter().map(|e| (e.subject_id.clone(), e.ordinal)).collect();
        flat.sort();
        expected.sort();
        prop_assert_eq!(flat, expected);
        for s in &streams {
            prop_assert!(s.examples.windows(2).all(|w| w[0].ordinal + 1 == w[1].ordinal));
        }
    }
}
