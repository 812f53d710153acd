mod common;

use std::fs;

use atmoscope::store::{Catalog, CatalogMode, ReadOnlyCatalog, StoreError, MANIFEST_FILE};
use atmoscope_core::time::{day_bounds, day_of};
use atmoscope_core::{BBox, ObservationRecord, QueryWindow, Timestamp};
use common::*;

fn ids(v: &[ObservationRecord]) -> Vec<u64> {
    v.iter().map(|r| r.record_id).collect()
}

fn linear_scan(all: &[ObservationRecord], w: &QueryWindow) -> Vec<ObservationRecord> {
    let mut v: Vec<ObservationRecord> = all.iter().filter(|r| w.matches(r.time, r.geo)).cloned().collect();
    v.sort_by_key(|r| (r.time, r.record_id));
    v
}

#[test]
fn empty_directory_opens_with_no_segments() {
    let dir = tempfile::tempdir().unwrap();
    let cat = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
    assert!(cat.segments().is_empty());
    assert!(cat.list_days(&exp("mipas"), None, None).is_empty());
}

#[test]
fn missing_root_is_an_error_for_readers() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ReadOnlyCatalog::open(dir.path().join("nope")), Err(StoreError::MissingRoot(_))));
}

#[test]
fn three_published_segments_reopen() {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(dir.path(), "mipas", 3, &model(1));
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    assert_eq!(cat.segments().len(), 3);
    let on_disk: Vec<_> = fs::read_dir(dir.path().join("segments/mipas")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(on_disk.len(), 3);
    assert!(dir.path().join("segments/mipas/2002-07-01.seg").exists());
}

#[test]
fn corrupted_segment_fails_checksum_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(dir.path(), "mipas", 3, &model(1));
    let victim = dir.path().join("segments/mipas/2002-07-02.seg");
    let mut bytes = fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&victim, &bytes).unwrap();
    match ReadOnlyCatalog::open(dir.path()) {
        Err(StoreError::Checksum { files }) => assert_eq!(files, vec![victim.clone()]),
        other => panic!("{other:?}"),
    }
    // truncation is caught the same way
    fs::write(&victim, &bytes[..bytes.len() - 10]).unwrap();
    let err = ReadOnlyCatalog::open(dir.path()).unwrap_err();
    assert!(err.to_string().contains("2002-07-02.seg"), "{err}");
}

#[test]
fn corrupt_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), "{\"format_version\":1,\"segments\":[{}]}").unwrap();
    assert!(matches!(ReadOnlyCatalog::open(dir.path()), Err(StoreError::CorruptManifest { .. })));
}

#[test]
fn publish_rules() {
    let dir = tempfile::tempdir().unwrap();
    let mut cat = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
    let e = exp("mipas");
    let d = day(2002, 7, 15);
    assert!(matches!(cat.publish_segment(&e, d, vec![], false), Err(StoreError::EmptySegment)));

    let mut recs = atmoscope_core::synth::generate_day(&model(2), &e, d);
    recs.truncate(10);
    let mut wrong = recs.clone();
    wrong[4].time = day_bounds(d.succ()).time_from();
    let bad_id = wrong[4].record_id;
    match cat.publish_segment(&e, d, wrong, false) {
        Err(StoreError::DayMismatch { record_id, .. }) => assert_eq!(record_id, bad_id),
        other => panic!("{other:?}"),
    }
    let mut dup = recs.clone();
    dup[3].record_id = dup[2].record_id;
    assert!(matches!(cat.publish_segment(&e, d, dup, false), Err(StoreError::DuplicateRecordId(_))));

    let info = cat.publish_segment(&e, d, recs.clone(), false).unwrap();
    assert_eq!(info.record_count, 10);
    assert!(matches!(cat.publish_segment(&e, d, recs.clone(), false), Err(StoreError::Conflict { .. })));
    let info2 = cat.publish_segment(&e, d, recs[..5].to_vec(), true).unwrap();
    assert_eq!(info2.record_count, 5);
    assert_eq!(cat.list_days(&e, None, None), vec![(d, 5)]);
}

#[test]
fn histogram_sums_to_record_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cat = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
    let e = exp("mipas");
    let d = day(2002, 7, 15);
    let m = atmoscope_core::synth::OrbitModel { dropout: false, ..model(4) };
    let recs = atmoscope_core::synth::generate_day(&m, &e, d);
    assert_eq!(recs.len(), 1329);
    let info = cat.publish_segment(&e, d, recs.clone(), false).unwrap();
    assert_eq!(info.record_count, 1329);
    assert_eq!(info.grid_histogram.total(), 1329);
    // independent scan: recompute each cell by the documented formula
    let mut expected = std::collections::BTreeMap::new();
    for r in &recs {
        let col = ((r.geo.lon() + 180.0) / 5.0).floor() as u16;
        let row = (((r.geo.lat() + 90.0) / 5.0).floor() as u16).min(35);
        *expected.entry(col * 36 + row).or_insert(0u64) += 1;
    }
    assert_eq!(info.grid_histogram.iter().collect::<std::collections::BTreeMap<_, _>>(), expected);
}

#[test]
fn read_only_catalog_cannot_publish_and_leaves_disk_alone() {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(dir.path(), "mipas", 1, &model(1));
    let before = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    let mut ro = Catalog::open(dir.path(), CatalogMode::ReadOnly).unwrap();
    let e = exp("mipas");
    let recs = atmoscope_core::synth::generate_day(&model(1), &e, day(2002, 7, 9));
    assert!(matches!(ro.publish_segment(&e, day(2002, 7, 9), recs, false), Err(StoreError::ReadOnly)));
    assert!(!dir.path().join("segments/mipas/2002-07-09.seg").exists());
    assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), before);
}

#[test]
fn only_one_writer_per_root() {
    let dir = tempfile::tempdir().unwrap();
    let _w = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
    assert!(matches!(Catalog::open(dir.path(), CatalogMode::ReadWrite), Err(StoreError::Locked(_))));
    assert!(ReadOnlyCatalog::open(dir.path()).is_ok());
}

#[test]
fn crash_between_segment_write_and_manifest_rename_keeps_old_manifest() {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(dir.path(), "mipas", 2, &model(1));
    let before = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    {
        let cat = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
        let e = exp("mipas");
        let d = day(2002, 7, 3);
        let recs = atmoscope_core::synth::generate_day(&model(1), &e, d);
        cat.stage_segment(&e, d, recs, false).unwrap();
        // "process dies" here: the catalog is dropped without committing
    }
    assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), before);
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    assert_eq!(cat.segments().len(), 2);
    // the orphan file is ignored and a later publish simply overwrites it
    let mut rw = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
    let e = exp("mipas");
    let d = day(2002, 7, 3);
    rw.publish_segment(&e, d, atmoscope_core::synth::generate_day(&model(1), &e, d), false).unwrap();
}

#[test]
fn crash_during_replace_keeps_old_day_readable() {
    let dir = tempfile::tempdir().unwrap();
    let e = exp("mipas");
    let d = first_day();
    let old = seed_catalog(dir.path(), "mipas", 1, &model(1));
    let w = atmoscope::api::days_window(d, d, None);
    {
        let cat = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
        cat.stage_segment(&e, d, atmoscope_core::synth::generate_day(&model(2), &e, d), true).unwrap();
    }
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    assert_eq!(ids(&cat.query(&e, &w).unwrap()), ids(&old));

    let mut rw = Catalog::open(dir.path(), CatalogMode::ReadWrite).unwrap();
    let new = atmoscope_core::synth::generate_day(&model(2), &e, d);
    let info = rw.publish_segment(&e, d, new.clone(), true).unwrap();
    drop(rw);
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    assert_eq!(ids(&cat.query(&e, &w).unwrap()), ids(&linear_scan(&new, &w)));
    // the superseded file is gone; only the orphan from the crashed attempt may remain
    let files: Vec<String> = fs::read_dir(dir.path().join("segments/mipas")).unwrap().map(|f| f.unwrap().file_name().into_string().unwrap()).collect();
    assert!(!files.contains(&"2002-07-01.seg".to_string()), "{files:?}");
    assert!(files.contains(&info.path.file_name().unwrap().to_str().unwrap().to_string()));
}

#[test]
fn manifest_is_canonical_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    seed_catalog(a.path(), "mipas", 4, &model(11));
    seed_catalog(b.path(), "mipas", 4, &model(11));
    let ma = fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(ma, fs::read_to_string(b.path().join(MANIFEST_FILE)).unwrap());
    // keys appear in sorted order
    let keys: Vec<&str> = ma.lines().filter_map(|l| l.trim().strip_prefix('"')).filter_map(|l| l.split('"').next()).filter(|k| !k.chars().all(|c| c.is_ascii_digit())).collect();
    let seg_keys: Vec<&str> = keys.iter().copied().skip_while(|k| *k != "compressed_bytes").take(9).collect();
    let mut sorted = seg_keys.clone();
    sorted.sort();
    assert_eq!(seg_keys, sorted);
}

#[test]
fn window_outside_all_days_opens_nothing() {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(dir.path(), "mipas", 3, &model(1));
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    let out = cat.query(&exp("mipas"), &day_bounds(day(2003, 1, 1))).unwrap();
    assert!(out.is_empty());
    assert_eq!(cat.segments_opened(), 0);
    assert!(cat.query(&exp("nosuch"), &day_bounds(day(2002, 7, 1))).unwrap().is_empty());
}

#[test]
fn one_day_window_returns_the_whole_segment_in_time_order() {
    let dir = tempfile::tempdir().unwrap();
    let all = seed_catalog(dir.path(), "mipas", 3, &model(1));
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    let d = day(2002, 7, 2);
    let out = cat.query(&exp("mipas"), &day_bounds(d)).unwrap();
    let expected: Vec<_> = all.iter().filter(|r| day_of(r.time) == d).cloned().collect();
    assert_eq!(out, expected);
    assert!(out.windows(2).all(|w| w[0].time < w[1].time));
    assert_eq!(cat.segments_opened(), 1);
}

#[test]
fn twenty_day_bbox_query_equals_linear_scan() {
    let dir = tempfile::tempdir().unwrap();
    let all = seed_catalog(dir.path(), "mipas", 20, &model(7));
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    let from = first_day().start().unwrap();
    let to = Timestamp::from_epoch_ms(from.epoch_ms() + 20 * 86_400_000);
    let w = QueryWindow::new(from, to, Some(BBox::new(30.0, 60.0, -10.0, 40.0).unwrap())).unwrap();
    let got = cat.query(&exp("mipas"), &w).unwrap();
    let want = linear_scan(&all, &w);
    assert!(!want.is_empty());
    assert_eq!(ids(&got), ids(&want));
    assert_eq!(got, want);
}

#[test]
fn list_days_and_stats_come_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(5);
    let all = seed_catalog(dir.path(), "mipas", 20, &m);
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    let e = exp("mipas");
    let days = cat.list_days(&e, None, None);
    assert_eq!(days.len(), 20);
    for (d, n) in &days {
        assert_eq!(*n as usize, atmoscope_core::synth::generate_day(&m, &e, *d).len());
    }
    let five = cat.list_days(&e, Some(day(2002, 7, 3)), Some(day(2002, 7, 7)));
    assert_eq!(five.iter().map(|(d, _)| *d).collect::<Vec<_>>(), day(2002, 7, 3).iter_through(day(2002, 7, 7)).collect::<Vec<_>>());
    let st = cat.stats(&e).unwrap();
    assert_eq!(st.record_count as usize, all.len());
    assert_eq!(st.segment_count, 20);
    assert_eq!((st.first_day, st.last_day), (day(2002, 7, 1), day(2002, 7, 20)));
    assert_eq!(cat.segments_opened(), 0);
}

mod oracle {
    use super::*;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    struct Fixture {
        _dir: tempfile::TempDir,
        cat: ReadOnlyCatalog,
        all: Vec<ObservationRecord>,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            // ten days without dropout: 13290 records
            let m = atmoscope_core::synth::OrbitModel { dropout: false, ..model(3) };
            let all = seed_catalog(dir.path(), "mipas", 10, &m);
            assert!(all.len() >= 10_000);
            let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
            Fixture { _dir: dir, cat, all }
        })
    }

    fn window() -> impl Strategy<Value = QueryWindow> {
        let t0 = first_day().start().unwrap().epoch_ms();
        let span = 12 * 86_400_000u64;
        (
            0..span,
            0..4 * 86_400_000u64,
            proptest::option::of((-90.0..90.0f64, 0.0..60.0f64, -180.0..180.0f64, -180.0..180.0f64)),
        )
            .prop_map(move |(start, len, bb)| {
                let from = Timestamp::from_epoch_ms(t0 - 86_400_000 + start);
                let to = Timestamp::from_epoch_ms(from.epoch_ms() + len);
                let bbox = bb.map(|(lat, h, lo1, lo2)| BBox::new(lat, (lat + h).min(90.0), lo1, lo2).unwrap());
                QueryWindow::new(from, to, bbox).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn query_equals_linear_scan(w in window()) {
            let f = fixture();
            let got = f.cat.query(&exp("mipas"), &w).unwrap();
            prop_assert_eq!(ids(&got), ids(&linear_scan(&f.all, &w)));
        }

        #[test]
        fn pruned_segments_hold_no_matches(w in window()) {
            let f = fixture();
            let plan = f.cat.plan(&exp("mipas"), &w);
            for s in &plan.pruned {
                let recs = f.cat.read_segment(s).unwrap();
                prop_assert!(recs.iter().all(|r| !w.matches(r.time, r.geo)), "pruned {} holds a match", s.day);
            }
        }
    }
}
