use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nearmem::coordinator::{lookup_payloads, PayloadStore, PayloadWriter};

#[test]
fn ten_thousand_payloads_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.cpay");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let entries: Vec<(u64, Vec<u8>)> = (0..10_000u64)
        .map(|i| {
            let len = rng.gen_range(0..300);
            (i * 2_654_435_761 % 1_000_003, (0..len).map(|_| rng.gen()).collect())
        })
        .collect();
    let mut w = PayloadWriter::create(&path).unwrap();
    for (id, p) in &entries {
        w.put(*id, p).unwrap();
    }
    w.finish().unwrap();

    let store = PayloadStore::open(&path).unwrap();
    assert_eq!(store.len(), entries.len());
    for (id, p) in &entries {
        assert_eq!(&store.get(*id).unwrap(), p);
    }
    let ids: Vec<u64> = entries.iter().rev().take(50).map(|e| e.0).collect();
    let got = lookup_payloads(&store, &ids).unwrap();
    assert_eq!(got, entries.iter().rev().take(50).map(|e| e.1.clone()).collect::<Vec<_>>());
    assert!(store.get(1_000_004).is_err());
}

#[test]
fn appended_record_replaces_earlier_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.cpay");
    let mut w = PayloadWriter::create(&path).unwrap();
    w.put(1, b"old").unwrap();
    w.put(2, b"two").unwrap();
    w.finish().unwrap();
    let mut w = PayloadWriter::append(&path).unwrap();
    w.put(1, b"new").unwrap();
    w.finish().unwrap();
    let store = PayloadStore::open(&path).unwrap();
    assert_eq!(store.get(1).unwrap(), b"new");
    assert_eq!(store.get(2).unwrap(), b"two");
    assert_eq!(store.len(), 2);
}
